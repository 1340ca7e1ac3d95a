//! Flat `key=value` campaign configuration. Unknown keys are errors.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::campaign::Engine;
use crate::error::{Error, Result};
use crate::executor::Mode;
use crate::neuzz::DEFAULT_COLLECTION_BUDGET;

pub const ENV_RNG_SEED: &str = "FF_RNG_SEED";
pub const ENV_HANG_MS: &str = "FF_HANG_MS";

const KEYS: [&str; 10] =
    ["target", "mode", "engine", "seeds", "duration_secs", "training_budget", "rng_seed", "output", "hang_ms", "max_execs"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CampaignConfig {
    /// Toy target name, e.g. `magic16` or `chunkparse-forkonly`.
    pub target: String,
    pub mode: Mode,
    pub engine: Engine,
    /// A seed file or a directory of seed files.
    pub seeds: PathBuf,
    pub duration_secs: u64,
    /// Executions spent collecting each training corpus.
    pub training_budget: u64,
    pub rng_seed: u64,
    pub output: PathBuf,
    pub hang_ms: u64,
    /// Optional cap on executions; with fork mode it makes a run
    /// independent of machine speed.
    pub max_execs: Option<u64>,
}

fn field_err(key: &str, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("{}: {}", key, msg))
}

fn parse_u64(key: &str, v: &str) -> Result<u64> {
    v.parse().map_err(|_| field_err(key, format!("expected an unsigned integer, got {:?}", v)))
}

impl CampaignConfig {
    /// Parses config text. Relative paths are resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<CampaignConfig> {
        let mut seen = std::collections::BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got {:?}", n + 1, line)))?;
            let (k, v) = (k.trim(), v.trim());
            if !KEYS.contains(&k) {
                return Err(Error::Config(format!("line {}: unknown key {:?}", n + 1, k)));
            }
            if seen.insert(k.to_string(), v.to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key {:?}", n + 1, k)));
            }
        }
        let get = |k: &str| seen.get(k).map(String::as_str);
        let need = |k: &str| get(k).ok_or_else(|| field_err(k, "missing"));
        let path = |k: &str| -> Result<PathBuf> {
            let p = PathBuf::from(need(k)?);
            Ok(if p.is_absolute() { p } else { base.join(p) })
        };
        let mode = Mode::parse(need("mode")?).ok_or_else(|| field_err("mode", "expected persistent or fork"))?;
        let engine = Engine::parse(need("engine")?).ok_or_else(|| field_err("engine", "expected random or neuzz"))?;
        let duration_secs = parse_u64("duration_secs", need("duration_secs")?)?;
        if duration_secs == 0 {
            return Err(field_err("duration_secs", "must be positive"));
        }
        let training_budget = match get("training_budget") {
            Some(v) => parse_u64("training_budget", v)?,
            None => DEFAULT_COLLECTION_BUDGET,
        };
        if training_budget == 0 {
            return Err(field_err("training_budget", "must be positive"));
        }
        let hang_ms = match get("hang_ms") {
            Some(v) => parse_u64("hang_ms", v)?,
            None => crate::executor::DEFAULT_HANG_TIMEOUT.as_millis() as u64,
        };
        if hang_ms == 0 {
            return Err(field_err("hang_ms", "must be positive"));
        }
        let target = need("target")?.to_string();
        if target.is_empty() {
            return Err(field_err("target", "empty"));
        }
        Ok(CampaignConfig {
            target,
            mode,
            engine,
            seeds: path("seeds")?,
            duration_secs,
            training_budget,
            rng_seed: parse_u64("rng_seed", need("rng_seed")?)?,
            output: path("output")?,
            hang_ms,
            max_execs: get("max_execs").map(|v| parse_u64("max_execs", v)).transpose()?,
        })
    }

    pub fn load(path: &Path) -> Result<CampaignConfig> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {}", path.display(), e)))?;
        CampaignConfig::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Applies `FF_RNG_SEED` and `FF_HANG_MS` when set.
    pub fn apply_env_overrides(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(ENV_RNG_SEED) {
            self.rng_seed = parse_u64(ENV_RNG_SEED, &v)?;
        }
        if let Ok(v) = std::env::var(ENV_HANG_MS) {
            self.hang_ms = parse_u64(ENV_HANG_MS, &v)?;
            if self.hang_ms == 0 {
                return Err(field_err(ENV_HANG_MS, "must be positive"));
            }
        }
        Ok(())
    }

    /// Canonical text form, one key per line in a fixed order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "target={}", self.target);
        let _ = writeln!(s, "mode={}", self.mode);
        let _ = writeln!(s, "engine={}", self.engine);
        let _ = writeln!(s, "seeds={}", self.seeds.display());
        let _ = writeln!(s, "duration_secs={}", self.duration_secs);
        let _ = writeln!(s, "training_budget={}", self.training_budget);
        let _ = writeln!(s, "rng_seed={}", self.rng_seed);
        let _ = writeln!(s, "output={}", self.output.display());
        let _ = writeln!(s, "hang_ms={}", self.hang_ms);
        if let Some(m) = self.max_execs {
            let _ = writeln!(s, "max_execs={}", m);
        }
        s
    }

    /// SHA-256 of the canonical text.
    pub fn hash(&self) -> String {
        format!("{:x}", Sha256::digest(self.to_text().as_bytes()))
    }
}

/// Reads a seed file, or every regular file of a seed directory in name
/// order.
pub fn read_seeds(path: &Path) -> Result<Vec<Vec<u8>>> {
    if path.is_file() {
        return Ok(vec![fs::read(path)?]);
    }
    if !path.is_dir() {
        return Err(Error::Config(format!("seeds: {} does not exist", path.display())));
    }
    let mut files: Vec<PathBuf> =
        fs::read_dir(path)?.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_file()).collect();
    files.sort();
    files.iter().map(|p| fs::read(p).map_err(Error::from)).collect()
}
