//! Shared fixtures for unit tests that need built target executables.

use std::path::PathBuf;
use std::sync::OnceLock;

use crate::target_runtime::{build_targets, Flavor, TargetProgram};

fn built() -> &'static Vec<TargetProgram> {
    static BUILT: OnceLock<Vec<TargetProgram>> = OnceLock::new();
    BUILT.get_or_init(|| {
        let dir: PathBuf = std::env::temp_dir().join("ffuzz-test-targets");
        build_targets(&dir).expect("building toy targets")
    })
}

pub fn target(name: &str, flavor: Flavor) -> TargetProgram {
    built()
        .iter()
        .find(|p| p.name == name && p.flavor == Some(flavor))
        .cloned()
        .unwrap_or_else(|| panic!("no built target {}", name))
}
