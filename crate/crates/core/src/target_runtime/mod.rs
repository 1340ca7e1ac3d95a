//! Program side of persistent mode: the instrumented toy targets, the
//! persistent loop and the capability marker.
//!
//! Target sources live next to this file and are compiled with `rustc` into
//! standalone executables, in two flavors each: persistent-capable (carries
//! [`PERSISTENT_MARKER`]) and fork-only (does not).

pub mod chunkparse;
pub mod csvish;
pub mod magic16;
pub mod rt;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;

use sha2::{Digest, Sha256};

use crate::coverage::EdgeSite;
use crate::error::{Error, Result};

pub use rt::{persistent_loop, Channel, TargetSpec};

/// Byte string embedded in persistent-capable target builds.
pub const PERSISTENT_MARKER: &[u8] = b"##SIG_FF_PERSISTENT##";

/// File name suffix of the fork-only flavor.
pub const FORK_ONLY_SUFFIX: &str = "-forkonly";

const RT_SRC: &str = include_str!("rt.rs");
const MAIN_SRC: &str = include_str!("target_main.rs");
const PROGRAMS: [(&str, &str, &TargetSpec); 3] = [
    ("chunkparse", include_str!("chunkparse.rs"), &chunkparse::TARGET),
    ("csvish", include_str!("csvish.rs"), &csvish::TARGET),
    ("magic16", include_str!("magic16.rs"), &magic16::TARGET),
];

const STAMP_FILE: &str = ".ffbuild-stamp";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Flavor {
    Persistent,
    ForkOnly,
}

/// An executable toy target on disk.
#[derive(Clone, Debug)]
pub struct TargetProgram {
    pub name: String,
    pub path: PathBuf,
    /// Known when the program came out of [`build_targets`].
    pub flavor: Option<Flavor>,
    pub sites: Vec<EdgeSite>,
}

impl TargetProgram {
    /// Wraps an executable path. The target name is the file name with any
    /// fork-only suffix removed.
    pub fn at(path: impl Into<PathBuf>) -> TargetProgram {
        let path = path.into();
        let file = path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default();
        let name = file.strip_suffix(FORK_ONLY_SUFFIX).unwrap_or(&file).to_string();
        let sites = spec(&name).map(sites_of).unwrap_or_default();
        TargetProgram { name, path, flavor: None, sites }
    }

    pub fn spec(&self) -> Option<&'static TargetSpec> {
        spec(&self.name)
    }
}

fn sites_of(spec: &TargetSpec) -> Vec<EdgeSite> {
    (0..spec.blocks).map(|block_id| EdgeSite { block_id }).collect()
}

/// Names of the toy targets.
pub fn target_names() -> impl Iterator<Item = &'static str> {
    PROGRAMS.iter().map(|(n, _, _)| *n)
}

/// Static description of a toy target by name.
pub fn spec(name: &str) -> Option<&'static TargetSpec> {
    PROGRAMS.iter().find(|(n, _, _)| *n == name).map(|(_, _, s)| *s)
}

fn rustc() -> String {
    std::env::var("RUSTC").unwrap_or_else(|_| "rustc".to_string())
}

fn build_stamp() -> Result<String> {
    let version = Command::new(rustc())
        .arg("-vV")
        .output()
        .map_err(|e| Error::Build(format!("cannot run {}: {}", rustc(), e)))?;
    if !version.status.success() {
        return Err(Error::Build(format!("{} -vV failed", rustc())));
    }
    let mut h = Sha256::new();
    h.update(&version.stdout);
    h.update(RT_SRC);
    h.update(MAIN_SRC);
    for (name, src, _) in PROGRAMS.iter() {
        h.update(name);
        h.update(src);
    }
    Ok(format!("{:x}", h.finalize()))
}

fn file_name(name: &str, flavor: Flavor) -> String {
    match flavor {
        Flavor::Persistent => name.to_string(),
        Flavor::ForkOnly => format!("{}{}", name, FORK_ONLY_SUFFIX),
    }
}

/// Builds the three toy targets in both flavors into `out_dir`.
///
/// A stamp over the sources and the compiler version makes reruns cheap:
/// nothing is recompiled when the stamp matches and every binary exists.
pub fn build_targets(out_dir: &Path) -> Result<Vec<TargetProgram>> {
    fs::create_dir_all(out_dir)?;
    let stamp = build_stamp()?;
    let mut programs = Vec::new();
    for (name, _, spec) in PROGRAMS.iter() {
        for flavor in [Flavor::Persistent, Flavor::ForkOnly] {
            programs.push(TargetProgram {
                name: name.to_string(),
                path: out_dir.join(file_name(name, flavor)),
                flavor: Some(flavor),
                sites: sites_of(spec),
            });
        }
    }
    let stamp_path = out_dir.join(STAMP_FILE);
    let fresh = fs::read_to_string(&stamp_path).map(|s| s.trim() == stamp).unwrap_or(false)
        && programs.iter().all(|p| p.path.is_file());
    if fresh {
        return Ok(programs);
    }

    let src_root = out_dir.join(".src");
    for (name, src, _) in PROGRAMS.iter() {
        let dir = src_root.join(name);
        fs::create_dir_all(&dir)?;
        fs::write(dir.join("main.rs"), MAIN_SRC)?;
        fs::write(dir.join("rt.rs"), RT_SRC)?;
        fs::write(dir.join("program.rs"), src)?;
    }
    for p in &programs {
        compile(&src_root.join(&p.name).join("main.rs"), &p.path, p.flavor == Some(Flavor::Persistent))?;
    }
    let tmp = out_dir.join(format!("{}.{}", STAMP_FILE, std::process::id()));
    fs::File::create(&tmp)?.write_all(stamp.as_bytes())?;
    fs::rename(&tmp, &stamp_path)?;
    Ok(programs)
}

fn compile(main: &Path, out: &Path, persistent: bool) -> Result<()> {
    let tmp = out.with_extension(format!("tmp{}", std::process::id()));
    let mut cmd = Command::new(rustc());
    cmd.args(["--edition", "2021", "-C", "opt-level=2", "-C", "debuginfo=0", "-C", "strip=symbols"])
        .args(["-C", "panic=abort", "--check-cfg", "cfg(ff_persistent)", "--crate-type", "bin"])
        .arg("-o")
        .arg(&tmp)
        .arg(main);
    if persistent {
        cmd.args(["--cfg", "ff_persistent"]);
    }
    let out_put = cmd
        .output()
        .map_err(|e| Error::Build(format!("cannot run {}: {}", rustc(), e)))?;
    if !out_put.status.success() {
        let _ = fs::remove_file(&tmp);
        return Err(Error::Build(format!(
            "{} failed for {}:\n{}",
            rustc(),
            out.display(),
            String::from_utf8_lossy(&out_put.stderr)
        )));
    }
    fs::rename(&tmp, out)?;
    Ok(())
}
