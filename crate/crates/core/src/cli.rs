//! Command-line surface. Exit codes are stable: 0 ok, 2 configuration or
//! structure error, 3 degraded but completed, 4 data-quality refusal,
//! 5 invalid comparison.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};

use crate::campaign::fuzz_campaign;
use crate::config::{read_seeds, CampaignConfig};
use crate::corpus_store::{OutputLayout, Selection};
use crate::coverage::Scheme;
use crate::error::{Error, Warning};
use crate::evaluator::{compare_campaigns, emit_report, parse_spec_file, replay_with, ReportFormat};
use crate::executor::{check_binary, init_session, measure_throughput, resolve_handshake, Mode, SessionOptions};
use crate::neuzz::{self, Hyper, Seed, TrainingCorpus};
use crate::target_runtime::{build_targets, TargetProgram, FORK_ONLY_SUFFIX};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DEGRADED: i32 = 3;
pub const EXIT_REFUSED: i32 = 4;
pub const EXIT_INVALID_COMPARISON: i32 = 5;

pub const MODEL_FILE: &str = "model.ffmlp";
pub const CORPUS_DIR: &str = "training_corpus";

#[derive(Parser, Debug)]
#[command(name = "ffuzz", version, about = "Coverage-guided fuzzing with persistent mode and gradient-guided mutation")]
pub struct Cli {
    /// Directory holding the built toy targets.
    #[arg(long, global = true, default_value = "targets")]
    pub targets_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Build every toy target in both flavors and check their markers.
    TargetsBuild,
    /// Run a fuzzing campaign.
    Fuzz { config: PathBuf },
    /// Collect a training corpus from a single seed, validate it, train.
    Train {
        config: PathBuf,
        /// Train on a saved corpus instead of collecting one.
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Replay a campaign's testcases under one coverage metric.
    Replay {
        layout: PathBuf,
        #[arg(long)]
        target: String,
        #[arg(long, value_enum, default_value_t = Dirs::All)]
        dirs: Dirs,
        #[arg(long, value_enum, default_value_t = MetricArg::Uniform)]
        scheme: MetricArg,
    },
    /// Compare campaigns listed as `<fuzzer> <layout>` lines.
    Compare {
        spec: PathBuf,
        #[arg(long)]
        target: String,
        /// Directory for report.csv and report.md.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Measure persistent and fork throughput on one target.
    BenchThroughput {
        #[arg(long)]
        target: String,
        #[arg(long, default_value_t = 10)]
        secs: u64,
        #[arg(long, default_value_t = 1)]
        reps: u32,
        /// Seed file or directory to execute round-robin.
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Dirs {
    All,
    QueueOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    Uniform,
    Xor,
}

/// Exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::CorpusRejected(_) | Error::NoSignal => EXIT_REFUSED,
        Error::ModeMismatch(_) => EXIT_INVALID_COMPARISON,
        _ => EXIT_CONFIG,
    }
}

pub fn main() -> i32 {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e);
            exit_code(&e)
        }
    }
}

pub fn run(cli: &Cli) -> Result<i32, Error> {
    match &cli.command {
        Command::TargetsBuild => cmd_targets_build(&cli.targets_dir),
        Command::Fuzz { config } => cmd_fuzz(&cli.targets_dir, config),
        Command::Train { config, corpus } => cmd_train(&cli.targets_dir, config, corpus.as_deref()),
        Command::Replay { layout, target, dirs, scheme } => cmd_replay(&cli.targets_dir, layout, target, *dirs, *scheme),
        Command::Compare { spec, target, out } => cmd_compare(&cli.targets_dir, spec, target, out),
        Command::BenchThroughput { target, secs, reps, corpus } => {
            cmd_bench(&cli.targets_dir, target, *secs, *reps, corpus.as_deref())
        }
    }
}

/// Builds the targets if needed and returns the one called `name`, where a
/// `-forkonly` suffix selects the fork-only flavor.
pub fn resolve_target(targets_dir: &Path, name: &str) -> Result<TargetProgram, Error> {
    let built = build_targets(targets_dir)?;
    let file = targets_dir.join(name);
    built.into_iter().find(|p| p.path == file).ok_or_else(|| {
        Error::Config(format!(
            "target: unknown target {:?} (known: {} and their {} flavors)",
            name,
            crate::target_runtime::target_names().collect::<Vec<_>>().join(", "),
            FORK_ONLY_SUFFIX
        ))
    })
}

fn cmd_targets_build(dir: &Path) -> Result<i32, Error> {
    let programs = build_targets(dir)?;
    println!("{:<20} {:<11} {:<7} path", "target", "flavor", "marker");
    for p in &programs {
        let marker = check_binary(p)?;
        let flavor = match p.flavor {
            Some(crate::target_runtime::Flavor::Persistent) => "persistent",
            _ => "fork-only",
        };
        println!("{:<20} {:<11} {:<7} {}", p.name, flavor, if marker { "yes" } else { "no" }, p.path.display());
    }
    Ok(EXIT_OK)
}

fn load_config(path: &Path) -> Result<CampaignConfig, Error> {
    let mut cfg = CampaignConfig::load(path)?;
    cfg.apply_env_overrides()?;
    Ok(cfg)
}

fn cmd_fuzz(targets_dir: &Path, config: &Path) -> Result<i32, Error> {
    let cfg = load_config(config)?;
    let target = resolve_target(targets_dir, &cfg.target)?;
    let handshake = resolve_handshake(cfg.mode, check_binary(&target)?);
    println!("{}", handshake);
    let stats = fuzz_campaign(&cfg, &target)?;
    for w in &stats.warnings {
        eprintln!("warning: {}", w);
    }
    println!(
        "engine={} rng={} rng_seed={} execs={} edges={} execs_per_sec={:.1} spawns={} saved: queue={} vari_seed={} crash={} hang={}",
        stats.engine,
        stats.rng,
        stats.rng_seed,
        stats.total_execs,
        stats.covered_edges,
        stats.execs_per_sec,
        stats.spawns,
        stats.saved[0],
        stats.saved[1],
        stats.saved[2],
        stats.saved[3]
    );
    Ok(if handshake.downgraded { EXIT_DEGRADED } else { EXIT_OK })
}

fn single_seed(path: &Path) -> Result<Seed, Error> {
    let seeds = read_seeds(path)?;
    if seeds.len() != 1 {
        return Err(single_seed_error(path, seeds.len()));
    }
    Seed::new(seeds.into_iter().next().unwrap())
}

fn single_seed_error(path: &Path, n: usize) -> Error {
    Error::CorpusRejected(neuzz::ValidationReport {
        samples: n,
        threshold: neuzz::DEFAULT_ALIGNMENT_THRESHOLD,
        violations: vec![neuzz::Violation {
            index: None,
            reason: neuzz::ViolationReason::MultipleSeeds { path: path.to_path_buf(), count: n },
        }],
    })
}

fn cmd_train(targets_dir: &Path, config: &Path, corpus_dir: Option<&Path>) -> Result<i32, Error> {
    let cfg = load_config(config)?;
    let corpus = match corpus_dir {
        Some(dir) => TrainingCorpus::load(dir)?,
        None => {
            let seed = single_seed(&cfg.seeds)?;
            let target = resolve_target(targets_dir, &cfg.target)?;
            let options = SessionOptions { hang_timeout: Duration::from_millis(cfg.hang_ms), ..SessionOptions::default() };
            let mut session = init_session(&target, cfg.mode, options)?;
            println!("{}", session.handshake());
            neuzz::collect_training_corpus(&mut session, &seed, cfg.training_budget)?
        }
    };
    let report = neuzz::validate_corpus(&corpus, neuzz::DEFAULT_ALIGNMENT_THRESHOLD);
    print!("{}", report);
    if !report.passed() {
        eprintln!("refusing to train on a corpus that fails validation");
        return Ok(EXIT_REFUSED);
    }
    let hyper = Hyper { rng_seed: cfg.rng_seed, ..Hyper::default() };
    let model = neuzz::train(&corpus, &hyper)?;
    fs::create_dir_all(&cfg.output)?;
    if corpus_dir.is_none() {
        let dir = cfg.output.join(CORPUS_DIR);
        if dir.exists() {
            fs::remove_dir_all(&dir)?;
        }
        corpus.save(&dir)?;
    }
    let path = cfg.output.join(MODEL_FILE);
    model.save(&path)?;
    println!(
        "model: N={} H={} E={} final_loss={:.6} -> {}",
        model.input_width(),
        model.hidden_width(),
        model.output_width(),
        model.final_loss,
        path.display()
    );
    Ok(EXIT_OK)
}

fn cmd_replay(targets_dir: &Path, layout: &Path, target: &str, dirs: Dirs, metric: MetricArg) -> Result<i32, Error> {
    let l = OutputLayout::open(layout)?;
    let target = resolve_target(targets_dir, target)?;
    let selection = match dirs {
        Dirs::All => Selection::All,
        Dirs::QueueOnly => Selection::QueueOnly,
    };
    let scheme = match metric {
        MetricArg::Uniform => Scheme::CollisionFree,
        MetricArg::Xor => Scheme::XorHash,
    };
    let out = replay_with(&l, &target, &selection, scheme)?;
    for w in &out.warnings {
        eprintln!("warning: {}", w);
    }
    println!(
        "edges={} testcases={} dirs={} scheme={}",
        out.map.count_covered(),
        out.testcases,
        if dirs == Dirs::All { "all" } else { "queue-only" },
        scheme
    );
    Ok(if out.warnings.contains(&Warning::QueueOnlyEvaluation) { EXIT_DEGRADED } else { EXIT_OK })
}

fn cmd_compare(targets_dir: &Path, spec: &Path, target: &str, out: &Path) -> Result<i32, Error> {
    let text = fs::read_to_string(spec).map_err(|e| Error::Config(format!("{}: {}", spec.display(), e)))?;
    let specs = parse_spec_file(&text, spec.parent().unwrap_or(Path::new(".")))?;
    let target = resolve_target(targets_dir, target)?;
    let rows = compare_campaigns(&specs, &target)?;
    let csv = emit_report(&rows, ReportFormat::Csv)?;
    let md = emit_report(&rows, ReportFormat::Markdown)?;
    fs::create_dir_all(out)?;
    fs::write(out.join("report.csv"), &csv)?;
    fs::write(out.join("report.md"), &md)?;
    print!("{}", md);
    Ok(EXIT_OK)
}

fn cmd_bench(targets_dir: &Path, target: &str, secs: u64, reps: u32, corpus: Option<&Path>) -> Result<i32, Error> {
    if secs == 0 || reps == 0 {
        return Err(Error::Config("secs and reps must be positive".into()));
    }
    let target = resolve_target(targets_dir, target)?;
    let inputs = match corpus {
        Some(p) => read_seeds(p)?,
        None => vec![target.name.as_bytes().to_vec()],
    };
    let mut degraded = false;
    println!("{:<4} {:>14} {:>14} {:>8}", "rep", "persistent/s", "fork/s", "ratio");
    for rep in 1..=reps {
        let mut p = init_session(&target, Mode::Persistent, SessionOptions::default())?;
        degraded |= !p.is_persistent();
        let tp = measure_throughput(&mut p, &inputs, Duration::from_secs(secs))?;
        drop(p);
        let mut f = init_session(&target, Mode::Fork, SessionOptions::default())?;
        let tf = measure_throughput(&mut f, &inputs, Duration::from_secs(secs))?;
        println!("{:<4} {:>14.1} {:>14.1} {:>8.2}", rep, tp.execs_per_sec, tf.execs_per_sec, tp.execs_per_sec / tf.execs_per_sec);
    }
    Ok(if degraded { EXIT_DEGRADED } else { EXIT_OK })
}
