//! Acceptance suite. Prints one PASS or FAIL line per criterion and exits
//! nonzero if any criterion fails. `FF_ACCEPTANCE=1,4` runs a subset.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use ffuzz::campaign::{havoc, run_campaign, Engine};
use ffuzz::cli::MODEL_FILE;
use ffuzz::config::{read_seeds, CampaignConfig};
use ffuzz::corpus_store::{OutputLayout, Selection};
use ffuzz::coverage::{CoverageMap, Scheme};
use ffuzz::evaluator::{replay, replay_with};
use ffuzz::executor::{
    init_session, measure_throughput, resolve_handshake, Execute, InProcessExecutor, Mode, SessionOptions,
};
use ffuzz::neuzz::{self, GradVariant, Hyper, Model, Seed, TrainingCorpus};
use ffuzz::target_runtime::rt::{block_label, uniform_edge_id};
use ffuzz::target_runtime::{spec, target_names, Flavor};
use ffuzz::Warning;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use common::{ffuzz, fixtures, target, write_seed, ConfigFile};

type Outcome = Result<String, String>;
type Criterion = (u32, &'static str, fn() -> Outcome);

// `!cond` rather than the inverted comparison, so NaN fails.
macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

/// Representative valid inputs per target, used as havoc bases and as
/// throughput corpora.
fn bases(name: &str) -> Vec<Vec<u8>> {
    match name {
        "chunkparse" => vec![
            b"CHNK\x01\x02\x00hi\x02\x04\x00\x05\x00\x00\x00\x03\x03\x00\x05\x01\x02".to_vec(),
            b"CHNK\x04\x03\x00\x03\x01\x02\x02\x04\x00\xef\xbe\xad\xde\x00\x00\x00".to_vec(),
        ],
        "csvish" => vec![b"a,b,c\n1,\"x\"\"y\",3\r\n".to_vec(), b"\"q\",2\n,,\n".to_vec()],
        "magic16" => vec![[b"MG16".as_slice(), &[0u8; 28]].concat(), b"MG16\xa7\x3c\x00".to_vec()],
        other => panic!("unknown target {}", other),
    }
}

fn fixture_config(name: &str, output: &Path) -> Result<CampaignConfig, String> {
    let path = fixtures().join("campaigns").join(format!("{}.cfg", name));
    let mut cfg = CampaignConfig::load(&path).map_err(err)?;
    cfg.output = output.to_path_buf();
    Ok(cfg)
}

fn saved_set(root: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let layout = OutputLayout::open(root).map_err(err)?;
    Ok(layout
        .enumerate(&Selection::All)
        .map_err(err)?
        .into_iter()
        .map(|t| (format!("{}/{}", t.disposition.dir_name(), t.path.file_name().unwrap().to_string_lossy()), t.data))
        .collect())
}

fn fixture_layouts() -> Result<Vec<(PathBuf, String)>, String> {
    let mut out = Vec::new();
    for e in fs::read_dir(fixtures().join("layouts")).map_err(err)? {
        let path = e.map_err(err)?.path();
        let layout = OutputLayout::open(&path).map_err(err)?;
        let name = layout.meta("target").ok_or("fixture layout without a target")?.to_string();
        out.push((path, name));
    }
    out.sort();
    Ok(out)
}

/// 1,000 inputs per target: persistent and fork mode report the same
/// covered-edge sets and the same statuses.
fn mode_equivalence() -> Outcome {
    let mut total = 0;
    for name in target_names() {
        let p = target(name, Flavor::Persistent);
        let options = SessionOptions { hang_timeout: Duration::from_millis(100), ..SessionOptions::default() };
        let mut pers = init_session(&p, Mode::Persistent, options.clone()).map_err(err)?;
        let mut fork = init_session(&p, Mode::Fork, options).map_err(err)?;
        ensure!(pers.is_persistent() && !fork.is_persistent(), "{}: modes not as requested", name);
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(0xacce);
        let seeds = bases(name);
        for i in 0..1000 {
            let input: Vec<u8> = match i % 4 {
                0 => (0..rng.gen_range(0..48)).map(|_| rng.gen()).collect(),
                _ => havoc(&seeds[i % seeds.len()], &mut rng),
            };
            let a = pers.execute(&input).map_err(err)?;
            let b = fork.execute(&input).map_err(err)?;
            ensure!(a.status == b.status, "{} input {}: status {:?} vs {:?}", name, i, a.status, b.status);
            ensure!(
                a.coverage.covered_edges() == b.coverage.covered_edges(),
                "{} input {}: edge sets differ ({} vs {})",
                name,
                i,
                a.coverage.count_covered(),
                b.coverage.count_covered()
            );
            total += 1;
        }
    }
    Ok(format!("{} inputs, edge sets identical (exact)", total))
}

/// Persistent throughput at least 5x fork throughput, 10 s windows,
/// 5 repetitions per target, every repetition.
fn throughput_ordering() -> Outcome {
    const FLOOR: f64 = 5.0;
    let window = Duration::from_secs(10);
    let mut worst = f64::INFINITY;
    for name in target_names() {
        let p = target(name, Flavor::Persistent);
        let corpus = bases(name);
        for rep in 1..=5 {
            let mut pers = init_session(&p, Mode::Persistent, SessionOptions::default()).map_err(err)?;
            let tp = measure_throughput(&mut pers, &corpus, window).map_err(err)?;
            drop(pers);
            let mut fork = init_session(&p, Mode::Fork, SessionOptions::default()).map_err(err)?;
            let tf = measure_throughput(&mut fork, &corpus, window).map_err(err)?;
            let ratio = tp.execs_per_sec / tf.execs_per_sec;
            println!(
                "    {} rep {}: persistent {:.0}/s fork {:.0}/s ratio {:.1}",
                name, rep, tp.execs_per_sec, tf.execs_per_sec, ratio
            );
            ensure!(ratio >= FLOOR, "{} rep {}: ratio {:.2} below {}", name, rep, ratio, FLOOR);
            worst = worst.min(ratio);
        }
    }
    Ok(format!("15/15 repetitions at or above {}x, worst {:.1}x", FLOOR, worst))
}

/// Persistent mode requested on fork-only builds falls back visibly.
fn init_bug_regression() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    for (requested, capable) in [(Mode::Persistent, true), (Mode::Persistent, false), (Mode::Fork, true), (Mode::Fork, false)] {
        let h = resolve_handshake(requested, capable);
        ensure!(
            h.is_persistent == (requested == Mode::Persistent && capable),
            "handshake {:?}/{}: is_persistent={}",
            requested,
            capable,
            h.is_persistent
        );
    }
    for name in target_names() {
        let p = target(name, Flavor::ForkOnly);
        let log = dir.path().join(format!("{}.spawns", name));
        let options = SessionOptions { spawn_log: Some(log.clone()), ..SessionOptions::default() };
        let mut s = init_session(&p, Mode::Persistent, options).map_err(err)?;
        ensure!(!s.is_persistent(), "{}: claims persistent mode", name);
        ensure!(
            s.warnings() == [Warning::ModeDowngraded { target: p.path.clone() }],
            "{}: warnings {:?}",
            name,
            s.warnings()
        );
        for input in bases(name).iter().cycle().take(8) {
            s.execute(input).map_err(err)?;
        }
        drop(s);
        let spawns = fs::read_to_string(&log).map_err(err)?.lines().filter(|l| l.ends_with(" spawn")).count();
        ensure!(spawns == 8, "{}: {} spawns for 8 executions", name, spawns);
    }
    let seed = write_seed(&dir.path().join("seed"), &bases("magic16")[0]);
    let mut cfg = ConfigFile::new("magic16-forkonly", Mode::Persistent, Engine::Random, &seed, &dir.path().join("out"));
    cfg.max_execs = Some(50);
    let o = ffuzz(&["fuzz", cfg.write(&dir.path().join("c.cfg")).to_str().unwrap()]);
    let out = String::from_utf8_lossy(&o.stdout).into_owned();
    ensure!(o.status.code() == Some(3), "cli exit {:?}, expected 3", o.status.code());
    ensure!(out.starts_with("mode=fork (requested=persistent, capable=no)"), "cli handshake line: {}", out);
    ensure!(out.contains("execs=50 ") && out.contains("spawns=50 "), "cli stats: {}", out);
    Ok("4-case handshake table, 3 fork-only targets downgraded with warning, 1 spawn per exec, cli exit 3".into())
}

/// Raw gradients against central differences on 100 random models.
fn gradient_correctness() -> Outcome {
    const REL_TOL: f64 = 1e-5;
    const STEP: f64 = 1e-4;
    // Denominator floor so that near-zero gradients compare absolutely.
    const FLOOR: f64 = 1e-6;
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(0x6ad);
    let (mut checked, mut skipped, mut worst) = (0usize, 0usize, 0.0f64);
    for m in 0..100 {
        let n = rng.gen_range(2..=16);
        let h = rng.gen_range(2..=12);
        let e = rng.gen_range(1..=4);
        let mut model = Model::init(n, h, (0..e as u32).collect(), rng.gen());
        model.b1.mapv_inplace(|_| rng.gen_range(-0.5..0.5));
        model.b2.mapv_inplace(|_| rng.gen_range(-0.5..0.5));
        let x: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
        let z1 = model.hidden_preactivations(&x);
        for k in 0..e {
            let raw = model.gradient_scaled(&x, k, GradVariant::Raw).map_err(err)?;
            let signed = model.gradient_scaled(&x, k, GradVariant::Signed).map_err(err)?;
            for i in 0..n {
                let expected = if raw.values[i] == 0.0 { 0.0 } else { raw.values[i].signum() };
                ensure!(
                    signed.values[i] == expected,
                    "model {} edge {} byte {}: signed {} raw {}",
                    m,
                    k,
                    i,
                    signed.values[i],
                    raw.values[i]
                );
                // A step that moves any hidden unit across zero straddles
                // a ReLU kink, where the derivative is undefined.
                if (0..h).any(|j| z1[j].abs() <= STEP * model.w1[[i, j]].abs() * 1.01) {
                    skipped += 1;
                    continue;
                }
                let mut hi = x.clone();
                let mut lo = x.clone();
                hi[i] += STEP;
                lo[i] -= STEP;
                let fd = (model.predict_scaled(&hi, k) - model.predict_scaled(&lo, k)) / (2.0 * STEP);
                let a = raw.values[i];
                let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(FLOOR);
                worst = worst.max(rel);
                ensure!(rel <= REL_TOL, "model {} edge {} byte {}: analytic {} fd {} rel {:.2e}", m, k, i, a, fd, rel);
                checked += 1;
            }
        }
    }
    ensure!(skipped * 10 < checked, "too many kink skips: {} of {}", skipped, checked + skipped);
    Ok(format!(
        "100 models, {} coordinates, worst relative error {:.1e} (tol {:.0e}, step {:.0e}), {} kink skips, Signed = sign(Raw) exact",
        checked, worst, REL_TOL, STEP, skipped
    ))
}

fn mixed(a: &TrainingCorpus, b: &TrainingCorpus) -> TrainingCorpus {
    let mut c = a.clone();
    c.samples.extend(b.samples.iter().cloned());
    c
}

/// Collected corpora pass validation, two-seed corpora never do, and
/// training refuses a failing corpus.
fn corpus_discipline() -> Outcome {
    const T: usize = neuzz::DEFAULT_ALIGNMENT_THRESHOLD;
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(0xc0);
    let mut passed = 0;
    for name in target_names() {
        let p = target(name, Flavor::Persistent);
        let mut s = init_session(&p, Mode::Persistent, SessionOptions::default()).map_err(err)?;
        for base in bases(name) {
            let c = neuzz::collect_training_corpus(&mut s, &Seed::new(base).map_err(err)?, 2000).map_err(err)?;
            let r = neuzz::validate_corpus(&c, T);
            ensure!(r.passed(), "{}: collected corpus rejected: {}", name, r);
            passed += 1;
        }
    }
    let mut rejected = 0;
    for trial in 0..50 {
        let name = ["chunkparse", "csvish", "magic16"][trial % 3];
        let mut ex = InProcessExecutor::new(spec(name).unwrap(), Scheme::CollisionFree);
        // Same-length pairs differ in 2T+1 bytes; a sample is at most T
        // bytes from its own seed, so it stays more than T from the other.
        let len = rng.gen_range(2 * T + 1 + T..40);
        let a: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
        let b: Vec<u8> = if trial % 2 == 0 {
            // same length, more than twice the threshold apart
            let mut b = a.clone();
            for x in b.iter_mut().take(2 * T + 1) {
                *x ^= rng.gen_range(1..=255u8);
            }
            b
        } else {
            (0..len + rng.gen_range(1..8)).map(|_| rng.gen()).collect()
        };
        let ca = neuzz::collect_training_corpus(&mut ex, &Seed::new(a).map_err(err)?, 400).map_err(err)?;
        let cb = neuzz::collect_training_corpus(&mut ex, &Seed::new(b).map_err(err)?, 400).map_err(err)?;
        ensure!(neuzz::validate_corpus(&ca, T).passed(), "trial {}: single-seed corpus rejected", trial);
        ensure!(!neuzz::validate_corpus(&mixed(&ca, &cb), T).passed(), "trial {}: mixed corpus accepted", trial);
        passed += 1;
        rejected += 1;
    }

    let dir = tempfile::tempdir().map_err(err)?;
    let seeds = dir.path().join("seeds");
    write_seed(&seeds.join("a"), &bases("chunkparse")[0]);
    write_seed(&seeds.join("b"), &bases("chunkparse")[1]);
    let cfg = ConfigFile::new("chunkparse", Mode::Persistent, Engine::Neuzz, &seeds, &dir.path().join("out"));
    let o = ffuzz(&["train", cfg.write(&dir.path().join("t.cfg")).to_str().unwrap()]);
    ensure!(o.status.code() == Some(4), "train on a two-seed directory exited {:?}", o.status.code());
    ensure!(!dir.path().join("out").join(MODEL_FILE).exists(), "model written despite refusal");

    let mut ex = InProcessExecutor::new(spec("chunkparse").unwrap(), Scheme::CollisionFree);
    let ca = neuzz::collect_training_corpus(&mut ex, &Seed::new(bases("chunkparse")[0].clone()).map_err(err)?, 500)
        .map_err(err)?;
    let cb = neuzz::collect_training_corpus(&mut ex, &Seed::new(bases("chunkparse")[1].clone()).map_err(err)?, 500)
        .map_err(err)?;
    let saved = dir.path().join("mixed");
    mixed(&ca, &cb).save(&saved).map_err(err)?;
    let o = ffuzz(&["train", cfg.write(&dir.path().join("t.cfg")).to_str().unwrap(), "--corpus", saved.to_str().unwrap()]);
    ensure!(o.status.code() == Some(4), "train on a saved mixed corpus exited {:?}", o.status.code());
    ensure!(!dir.path().join("out").join(MODEL_FILE).exists(), "model written despite refusal");
    let lib = neuzz::train(&mixed(&ca, &cb), &Hyper::default());
    ensure!(matches!(lib, Err(ffuzz::Error::CorpusRejected(_))), "library train accepted a mixed corpus");
    Ok(format!(
        "{} collected corpora pass, {} mixed corpora fail, train exits 4 on both refusals",
        passed, rejected
    ))
}

/// Replaying every result directory finds strictly more than the queue
/// alone, on the stored fixture and on a fresh run of its config.
fn complete_collection() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let cfg = fixture_config("chunkparse-neuzz", &dir.path().join("run"))?;
    let t = target("chunkparse", Flavor::Persistent);
    let seeds = read_seeds(&fixtures().join("seeds").join("chunkparse.bin")).map_err(err)?;
    run_campaign(&cfg, &t, &seeds).map_err(err)?;
    let mut details = Vec::new();
    for (label, root) in [("fixture", fixtures().join("layouts").join("chunkparse-neuzz")), ("rerun", cfg.output.clone())] {
        let l = OutputLayout::open(&root).map_err(err)?;
        let all = replay_with(&l, &t, &Selection::All, Scheme::CollisionFree).map_err(err)?;
        let queue = replay_with(&l, &t, &Selection::QueueOnly, Scheme::CollisionFree).map_err(err)?;
        let variants = l.enumerate(&Selection::Only(vec![ffuzz::corpus_store::Disposition::NewEdgeVariant])).map_err(err)?;
        ensure!(
            all.map.count_covered() > queue.map.count_covered(),
            "{}: all {} vs queue-only {}",
            label,
            all.map.count_covered(),
            queue.map.count_covered()
        );
        details.push(format!(
            "{} all={} queue-only={} ({} vari_seed)",
            label,
            all.map.count_covered(),
            queue.map.count_covered(),
            variants.len()
        ));
    }
    Ok(details.join(", "))
}

/// Uniform replay never counts fewer edges than XOR replay, and a stored
/// witness shows the XOR count can be strictly lower.
fn metric_soundness() -> Outcome {
    let mut details = Vec::new();
    for (root, name) in fixture_layouts()? {
        let l = OutputLayout::open(&root).map_err(err)?;
        let t = target(&name, Flavor::Persistent);
        let u = replay_with(&l, &t, &Selection::All, Scheme::CollisionFree).map_err(err)?.map.count_covered();
        let x = replay_with(&l, &t, &Selection::All, Scheme::XorHash).map_err(err)?.map.count_covered();
        let fname = root.file_name().unwrap().to_string_lossy().into_owned();
        ensure!(u >= x, "{}: uniform {} < xor {}", fname, u, x);
        details.push(format!("{} {}>={}", fname, u, x));
    }
    ensure!(!details.is_empty(), "no stored fixture layouts");
    let text = fs::read_to_string(fixtures().join("xor_collision_witness.txt")).map_err(err)?;
    let mut uniform = CoverageMap::new(Scheme::CollisionFree);
    let mut xor = CoverageMap::new(Scheme::XorHash);
    for line in text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty()) {
        let f: Vec<&str> = line.split_whitespace().collect();
        ensure!(f.len() == 3, "bad witness line {:?}", line);
        let sp = spec(f[0]).ok_or("unknown witness target")?;
        let prev: u32 = f[1].parse().map_err(err)?;
        let cur: u32 = f[2].parse().map_err(err)?;
        uniform.record_edge_uniform(uniform_edge_id(sp.blocks, prev, cur)).map_err(err)?;
        xor.record_edge(block_label(sp.label_salt, prev), block_label(sp.label_salt, cur)).map_err(err)?;
    }
    ensure!(
        uniform.count_covered() > xor.count_covered(),
        "witness not strict: uniform {} xor {}",
        uniform.count_covered(),
        xor.count_covered()
    );
    details.push(format!("witness {}>{}", uniform.count_covered(), xor.count_covered()));
    Ok(details.join(", "))
}

fn median(mut v: Vec<usize>) -> f64 {
    v.sort_unstable();
    v[v.len() / 2] as f64
}

/// 60 s campaigns on magic16 in persistent mode, 5 RNG seeds per engine.
fn guided_efficacy() -> Outcome {
    const MARGIN: f64 = 1.10;
    let dir = tempfile::tempdir().map_err(err)?;
    let t = target("magic16", Flavor::Persistent);
    let seeds = vec![bases("magic16")[0].clone()];
    let mut edges: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for engine in [Engine::Random, Engine::Neuzz] {
        for rng_seed in 1..=5u64 {
            let cfg = CampaignConfig {
                target: "magic16".into(),
                mode: Mode::Persistent,
                engine,
                seeds: PathBuf::new(),
                duration_secs: 60,
                training_budget: neuzz::DEFAULT_COLLECTION_BUDGET,
                rng_seed,
                output: dir.path().join(format!("{}-{}", engine, rng_seed)),
                hang_ms: 200,
                max_execs: None,
            };
            let stats = run_campaign(&cfg, &t, &seeds).map_err(err)?;
            ensure!(stats.handshake.is_persistent, "{} seed {} not persistent", engine, rng_seed);
            let l = OutputLayout::open(&cfg.output).map_err(err)?;
            let n = replay(&l, &t).map_err(err)?.count_covered();
            println!("    {} rng_seed {}: {} edges, {} execs", engine, rng_seed, n, stats.total_execs);
            edges.entry(engine.as_str()).or_default().push(n);
        }
    }
    let r = median(edges["random"].clone());
    let n = median(edges["neuzz"].clone());
    ensure!(n >= MARGIN * r, "neuzz median {} below {:.2} x random median {}", n, MARGIN, r);
    Ok(format!("median edges neuzz {} vs random {} (ratio {:.2}, floor {:.2})", n, r, n / r, MARGIN))
}

/// Same config and seed, same model bytes and same saved testcases.
fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let t = target("chunkparse", Flavor::Persistent);
    let seed = Seed::new(bases("chunkparse")[0].clone()).map_err(err)?;
    let mut models = Vec::new();
    for _ in 0..2 {
        let mut s = init_session(&t, Mode::Persistent, SessionOptions::default()).map_err(err)?;
        let corpus = neuzz::collect_training_corpus(&mut s, &seed, 2000).map_err(err)?;
        let model = neuzz::train(&corpus, &Hyper { rng_seed: 42, ..Hyper::default() }).map_err(err)?;
        models.push(model.to_bytes());
    }
    ensure!(models[0] == models[1], "model bytes differ between identical runs");

    let mut checked = Vec::new();
    for name in ["chunkparse-neuzz", "csvish-random"] {
        let mut sets = Vec::new();
        for run in ["a", "b"] {
            let cfg = fixture_config(name, &dir.path().join(format!("{}-{}", name, run)))?;
            let target_name = cfg.target.clone();
            let seeds = read_seeds(&fixtures().join("seeds").join(format!("{}.bin", target_name))).map_err(err)?;
            run_campaign(&cfg, &target(&target_name, Flavor::Persistent), &seeds).map_err(err)?;
            sets.push(saved_set(&cfg.output)?);
        }
        ensure!(sets[0] == sets[1], "{}: saved testcase sets differ", name);
        let stored = saved_set(&fixtures().join("layouts").join(name))?;
        ensure!(sets[0] == stored, "{}: rerun differs from the stored fixture layout", name);
        checked.push(format!("{} ({} testcases)", name, stored.len()));
    }
    Ok(format!(
        "model bytes identical ({} bytes); fork-mode saved sets identical and equal to stored fixtures: {}",
        models[0].len(),
        checked.join(", ")
    ))
}

fn main() {
    let criteria: [Criterion; 9] = [
        (1, "mode-semantics equivalence", mode_equivalence),
        (2, "throughput ordering", throughput_ordering),
        (3, "initialization-bug regression", init_bug_regression),
        (4, "gradient correctness", gradient_correctness),
        (5, "corpus discipline", corpus_discipline),
        (6, "complete-collection regression", complete_collection),
        (7, "metric soundness", metric_soundness),
        (8, "guided-fuzzing efficacy", guided_efficacy),
        (9, "determinism", determinism),
    ];
    let only: Option<Vec<u32>> =
        std::env::var("FF_ACCEPTANCE").ok().map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let mut failed = 0;
    for (n, name, f) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS criterion {} ({}): {} [{:.1}s]", n, name, detail, secs),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {} ({}): {} [{:.1}s]", n, name, why, secs);
            }
        }
    }
    if failed > 0 {
        println!("{} criteria failed", failed);
        std::process::exit(1);
    }
}
