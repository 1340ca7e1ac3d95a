//! Helpers shared by the integration tests.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use ffuzz::config::CampaignConfig;
use ffuzz::campaign::Engine;
use ffuzz::executor::Mode;
use ffuzz::target_runtime::{build_targets, Flavor, TargetProgram};

pub fn targets_dir() -> PathBuf {
    Path::new(env!("CARGO_TARGET_TMPDIR")).join("ffuzz-targets")
}

fn built() -> &'static Vec<TargetProgram> {
    static BUILT: OnceLock<Vec<TargetProgram>> = OnceLock::new();
    BUILT.get_or_init(|| build_targets(&targets_dir()).expect("building toy targets"))
}

pub fn target(name: &str, flavor: Flavor) -> TargetProgram {
    built()
        .iter()
        .find(|p| p.name == name && p.flavor == Some(flavor))
        .cloned()
        .unwrap_or_else(|| panic!("no built target {}", name))
}

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join("fixtures")
}

/// Runs the `ffuzz` binary against the shared targets directory.
pub fn ffuzz(args: &[&str]) -> Output {
    built();
    Command::new(env!("CARGO_BIN_EXE_ffuzz"))
        .arg("--targets-dir")
        .arg(targets_dir())
        .args(args)
        .output()
        .expect("running ffuzz")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn write_seed(path: &Path, data: &[u8]) -> PathBuf {
    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
    std::fs::write(path, data).unwrap();
    path.to_path_buf()
}

pub struct ConfigFile {
    pub target: String,
    pub mode: Mode,
    pub engine: Engine,
    pub seeds: PathBuf,
    pub duration_secs: u64,
    pub training_budget: u64,
    pub rng_seed: u64,
    pub output: PathBuf,
    pub max_execs: Option<u64>,
}

impl ConfigFile {
    pub fn new(target: &str, mode: Mode, engine: Engine, seeds: &Path, output: &Path) -> ConfigFile {
        ConfigFile {
            target: target.into(),
            mode,
            engine,
            seeds: seeds.into(),
            duration_secs: 60,
            training_budget: 500,
            rng_seed: 1,
            output: output.into(),
            max_execs: None,
        }
    }

    pub fn text(&self) -> String {
        let mut s = format!(
            "target={}\nmode={}\nengine={}\nseeds={}\nduration_secs={}\ntraining_budget={}\nrng_seed={}\noutput={}\n",
            self.target,
            self.mode,
            self.engine,
            self.seeds.display(),
            self.duration_secs,
            self.training_budget,
            self.rng_seed,
            self.output.display()
        );
        if let Some(m) = self.max_execs {
            s.push_str(&format!("max_execs={}\n", m));
        }
        s
    }

    pub fn write(&self, path: &Path) -> PathBuf {
        std::fs::write(path, self.text()).unwrap();
        path.to_path_buf()
    }

    pub fn parsed(&self) -> CampaignConfig {
        CampaignConfig::parse(&self.text(), Path::new("/")).unwrap()
    }
}
