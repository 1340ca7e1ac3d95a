mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ffuzz::campaign::{run_campaign, Engine, StatsRecord};
use ffuzz::config::CampaignConfig;
use ffuzz::corpus_store::{Disposition, OutputLayout, Selection, STATS_FILE};
use ffuzz::executor::Mode;
use ffuzz::target_runtime::Flavor;
use ffuzz::Error;

use common::target;

const CHUNK_SEED: &[u8] = b"CHNK\x01\x02\x00hi";

fn config(dir: &Path, name: &str, mode: Mode, engine: Engine, rng_seed: u64, max_execs: u64) -> CampaignConfig {
    CampaignConfig {
        target: "chunkparse".into(),
        mode,
        engine,
        seeds: dir.join("seeds"),
        duration_secs: 300,
        training_budget: 400,
        rng_seed,
        output: dir.join(name),
        hang_ms: 200,
        max_execs: Some(max_execs),
    }
}

/// File name to contents for every saved testcase.
fn saved_set(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let layout = OutputLayout::open(root).unwrap();
    layout
        .enumerate(&Selection::All)
        .unwrap()
        .into_iter()
        .map(|t| (format!("{}/{}", t.disposition.dir_name(), t.path.file_name().unwrap().to_string_lossy()), t.data))
        .collect()
}

#[test]
fn zero_duration_executes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path(), "out", Mode::Fork, Engine::Random, 1, 100);
    cfg.duration_secs = 0;
    let stats = run_campaign(&cfg, &target("chunkparse", Flavor::Persistent), &[CHUNK_SEED.to_vec()]).unwrap();
    assert_eq!(stats.total_execs, 0);
    let layout = OutputLayout::open(&cfg.output).unwrap();
    assert!(layout.enumerate(&Selection::All).unwrap().is_empty());
    for d in Disposition::ALL {
        assert_eq!(fs::read_dir(layout.dir(d)).unwrap().count(), 0);
    }
    assert_eq!(layout.meta("total_execs"), Some("0"));
}

#[test]
fn empty_seed_corpus_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "out", Mode::Fork, Engine::Random, 1, 10);
    let t = target("chunkparse", Flavor::Persistent);
    assert!(matches!(run_campaign(&cfg, &t, &[]), Err(Error::Config(_))));
    assert!(matches!(run_campaign(&cfg, &t, &[Vec::new()]), Err(Error::Config(_))));
}

#[test]
fn fork_campaigns_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let t = target("chunkparse", Flavor::Persistent);
    for engine in [Engine::Random, Engine::Neuzz] {
        let a = config(dir.path(), &format!("{}-a", engine), Mode::Fork, engine, 11, 900);
        let b = config(dir.path(), &format!("{}-b", engine), Mode::Fork, engine, 11, 900);
        let sa = run_campaign(&a, &t, &[CHUNK_SEED.to_vec()]).unwrap();
        let sb = run_campaign(&b, &t, &[CHUNK_SEED.to_vec()]).unwrap();
        assert_eq!(sa.total_execs, 900);
        assert_eq!(sa.saved, sb.saved, "{}", engine);
        assert_eq!(sa.covered_edges, sb.covered_edges, "{}", engine);
        let (xa, xb) = (saved_set(&a.output), saved_set(&b.output));
        assert!(xa.len() > 1, "{}", engine);
        assert_eq!(xa, xb, "{}", engine);
    }
    let c = config(dir.path(), "random-c", Mode::Fork, Engine::Random, 12, 900);
    run_campaign(&c, &t, &[CHUNK_SEED.to_vec()]).unwrap();
    assert_ne!(saved_set(&c.output), saved_set(&dir.path().join("random-a")));
}

#[test]
fn neuzz_campaign_uses_gradient_and_variant_mutations() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "out", Mode::Persistent, Engine::Neuzz, 3, 6000);
    let stats = run_campaign(&cfg, &target("chunkparse", Flavor::Persistent), &[CHUNK_SEED.to_vec()]).unwrap();
    assert!(stats.stages >= 1);
    let layout = OutputLayout::open(&cfg.output).unwrap();
    let all = layout.enumerate(&Selection::All).unwrap();
    let ops: std::collections::BTreeSet<&str> = all.iter().map(|t| t.op.as_str()).collect();
    assert!(ops.contains("seed") && ops.contains("det"), "{:?}", ops);
    assert!(ops.contains("grad") || ops.contains("vari"), "{:?}", ops);
    for t in &all {
        match t.disposition {
            Disposition::NewEdgeVariant => assert_eq!(t.op, "vari"),
            Disposition::NewEdgeFixed => assert_ne!(t.op, "vari"),
            _ => {}
        }
    }
}

#[test]
fn persistent_campaign_spawns_only_on_faults() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path(), "out", Mode::Persistent, Engine::Random, 4, 3000);
    cfg.hang_ms = 100;
    let seeds = vec![CHUNK_SEED.to_vec(), b"CHNK\xff".to_vec(), b"CHNK\xfe\x04\x00HANG".to_vec()];
    let stats = run_campaign(&cfg, &target("chunkparse", Flavor::Persistent), &seeds).unwrap();
    assert!(stats.handshake.is_persistent);
    let faults = stats.saved_in(Disposition::Crash) + stats.saved_in(Disposition::Hang);
    assert!(faults >= 2);
    assert!(stats.spawns >= 3);
    assert!(stats.spawns < stats.total_execs / 2, "spawns {} for {} execs", stats.spawns, stats.total_execs);
}

#[test]
fn stats_log_is_monotonic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "out", Mode::Persistent, Engine::Random, 5, 20_000);
    run_campaign(&cfg, &target("chunkparse", Flavor::Persistent), &[CHUNK_SEED.to_vec()]).unwrap();
    let text = fs::read_to_string(cfg.output.join(STATS_FILE)).unwrap();
    let records: Vec<StatsRecord> = text.lines().map(|l| StatsRecord::parse(l).unwrap()).collect();
    assert!(records.len() >= 2);
    assert_eq!(records.last().unwrap().total_execs, 20_000);
    for w in records.windows(2) {
        assert!(w[0].unix_millis <= w[1].unix_millis);
        assert!(w[0].total_execs <= w[1].total_execs);
        assert!(w[0].covered_edges <= w[1].covered_edges);
    }
}
