//! The mutate, execute, triage loop with a random havoc baseline engine and
//! the staged gradient-guided engine.

use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::config::{read_seeds, CampaignConfig};
use crate::corpus_store::{Disposition, LengthClass, OutputLayout, TestCase};
use crate::coverage::Scheme;
use crate::error::{Error, Result, Warning};
use crate::executor::{init_session, ExecResult, ExecSession, ExecStatus, Execute, Handshake, SessionOptions};
use crate::neuzz::{self, GradVariant, Hyper, Seed};
use crate::target_runtime::rt::MAP_SIZE;
use crate::target_runtime::TargetProgram;

/// Name of the generator behind every random choice in a campaign.
pub const RNG_NAME: &str = "xoshiro256++";

const STATS_INTERVAL: Duration = Duration::from_millis(500);
const HAVOC_PER_ENTRY: usize = 256;
const HAVOC_MAX_STACK_POW: u32 = 7;
/// Top-k bytes stepped per gradient.
const GRAD_TOP_K: usize = 8;
/// Gradient inputs taken per stage.
const GRAD_INPUTS: usize = 24;
/// Gradients computed per input.
const GRAD_ROUNDS: usize = 16;
/// Every this many gradient rounds, variant-length mutants are tried too.
const VARIANT_EVERY: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Engine {
    Random,
    Neuzz,
}

impl Engine {
    pub fn as_str(self) -> &'static str {
        match self {
            Engine::Random => "random",
            Engine::Neuzz => "neuzz",
        }
    }

    pub fn parse(s: &str) -> Option<Engine> {
        match s {
            "random" => Some(Engine::Random),
            "neuzz" => Some(Engine::Neuzz),
            _ => None,
        }
    }
}

impl fmt::Display for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One line of the stats log.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StatsRecord {
    pub unix_millis: u64,
    pub total_execs: u64,
    pub covered_edges: usize,
}

impl StatsRecord {
    pub fn to_line(&self) -> String {
        format!("{},{},{}", self.unix_millis, self.total_execs, self.covered_edges)
    }

    pub fn parse(line: &str) -> Option<StatsRecord> {
        let mut it = line.trim().split(',');
        let r = StatsRecord {
            unix_millis: it.next()?.parse().ok()?,
            total_execs: it.next()?.parse().ok()?,
            covered_edges: it.next()?.parse().ok()?,
        };
        it.next().is_none().then_some(r)
    }
}

#[derive(Clone, Debug)]
pub struct CampaignStats {
    pub handshake: Handshake,
    pub engine: Engine,
    pub rng: &'static str,
    pub rng_seed: u64,
    pub total_execs: u64,
    pub covered_edges: usize,
    pub saved: [u64; 4],
    pub spawns: u64,
    pub elapsed: Duration,
    pub execs_per_sec: f64,
    pub stages: u64,
    pub records: Vec<StatsRecord>,
    pub warnings: Vec<Warning>,
}

impl CampaignStats {
    pub fn saved_in(&self, d: Disposition) -> u64 {
        self.saved[Disposition::ALL.iter().position(|&x| x == d).unwrap()]
    }
}

struct Entry {
    id: u64,
    data: Vec<u8>,
    covered: Vec<u32>,
    stage_uses: u32,
}

/// Owns the session and the output layout; every execution goes through
/// [`Fuzzer::run`], which enforces the budget and triages.
struct Fuzzer {
    session: ExecSession,
    layout: OutputLayout,
    virgin: Vec<bool>,
    crash_virgin: Vec<bool>,
    hang_virgin: Vec<bool>,
    covered: usize,
    queue: Vec<Entry>,
    start: Instant,
    deadline: Instant,
    max_execs: Option<u64>,
    execs: u64,
    saved: [u64; 4],
    stats: BufWriter<File>,
    records: Vec<StatsRecord>,
    last_record: Instant,
    /// Context for testcases saved through the [`Execute`] impl.
    ctx_parent: u64,
    ctx_op: &'static str,
    ctx_class: LengthClass,
}

fn unix_millis() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

fn mark_new(virgin: &mut [bool], r: &ExecResult) -> usize {
    let mut n = 0;
    for (i, &c) in r.coverage.cells().iter().enumerate() {
        if c > 0 && !virgin[i] {
            virgin[i] = true;
            n += 1;
        }
    }
    n
}

impl Fuzzer {
    fn exhausted(&self) -> bool {
        self.max_execs.is_some_and(|m| self.execs >= m) || Instant::now() >= self.deadline
    }

    fn record(&mut self) -> Result<()> {
        let r = StatsRecord { unix_millis: unix_millis(), total_execs: self.execs, covered_edges: self.covered };
        writeln!(self.stats, "{}", r.to_line())?;
        self.records.push(r);
        self.last_record = Instant::now();
        Ok(())
    }

    fn save(&mut self, data: &[u8], parent: u64, op: &str, class: LengthClass, d: Disposition) -> Result<u64> {
        let tc = TestCase { data: data.to_vec(), parent, op: op.to_string(), class };
        self.layout.save_testcase(&tc, d)?;
        self.saved[Disposition::ALL.iter().position(|&x| x == d).unwrap()] += 1;
        Ok(self.layout.counter())
    }

    /// Executes and triages one input: crash, then hang, then new edges.
    /// Returns the id of the queue entry created, if any.
    fn run(&mut self, input: &[u8], parent: u64, op: &'static str, class: LengthClass) -> Result<(ExecResult, Option<u64>)> {
        if self.exhausted() {
            return Err(Error::Exhausted);
        }
        let r = match self.session.execute(input) {
            Err(Error::SessionBroken(why)) => {
                log::warn!("session broken ({}); re-initializing", why);
                self.session.reinitialize()?;
                self.session.execute(input)?
            }
            other => other?,
        };
        self.execs += 1;
        let mut queued = None;
        match r.status {
            ExecStatus::Crash => {
                if mark_new(&mut self.crash_virgin, &r) > 0 {
                    self.save(input, parent, op, class, Disposition::Crash)?;
                }
            }
            ExecStatus::Hang => {
                if mark_new(&mut self.hang_virgin, &r) > 0 {
                    self.save(input, parent, op, class, Disposition::Hang)?;
                }
            }
            ExecStatus::Ok => {
                let new = mark_new(&mut self.virgin, &r);
                if new > 0 {
                    self.covered += new;
                    let d = match class {
                        LengthClass::Fixed => Disposition::NewEdgeFixed,
                        LengthClass::Variant => Disposition::NewEdgeVariant,
                    };
                    let id = self.save(input, parent, op, class, d)?;
                    if class == LengthClass::Fixed {
                        self.queue.push(Entry {
                            id,
                            data: input.to_vec(),
                            covered: r.coverage.covered_edges(),
                            stage_uses: 0,
                        });
                        queued = Some(id);
                    }
                }
            }
        }
        if self.last_record.elapsed() >= STATS_INTERVAL {
            self.record()?;
        }
        Ok((r, queued))
    }

    /// Seeds go first; every non-faulting seed joins the queue.
    fn run_seeds(&mut self, seeds: &[Vec<u8>]) -> Result<()> {
        for s in seeds {
            let (r, queued) = self.run(s, 0, "seed", LengthClass::Fixed)?;
            if queued.is_none() && r.status == ExecStatus::Ok {
                let id = self.save(s, 0, "seed", LengthClass::Fixed, Disposition::NewEdgeFixed)?;
                self.queue.push(Entry { id, data: s.clone(), covered: r.coverage.covered_edges(), stage_uses: 0 });
            }
        }
        Ok(())
    }
}

impl Execute for Fuzzer {
    fn execute(&mut self, input: &[u8]) -> Result<ExecResult> {
        let (parent, op, class) = (self.ctx_parent, self.ctx_op, self.ctx_class);
        self.run(input, parent, op, class).map(|(r, _)| r)
    }

    fn scheme(&self) -> Scheme {
        self.session.scheme()
    }
}

/// Runs a campaign with seeds read from `cfg.seeds`.
pub fn fuzz_campaign(cfg: &CampaignConfig, target: &TargetProgram) -> Result<CampaignStats> {
    let seeds = read_seeds(&cfg.seeds)?;
    run_campaign(cfg, target, &seeds)
}

/// Runs a campaign. With fork mode and `max_execs` set below what the
/// duration allows, the saved testcases depend only on the configuration.
pub fn run_campaign(cfg: &CampaignConfig, target: &TargetProgram, seeds: &[Vec<u8>]) -> Result<CampaignStats> {
    if seeds.is_empty() {
        return Err(Error::Config("seeds: the seed corpus is empty".into()));
    }
    if seeds.iter().any(|s| s.is_empty()) {
        return Err(Error::Config("seeds: empty seed file".into()));
    }
    let options = SessionOptions { hang_timeout: Duration::from_millis(cfg.hang_ms), ..SessionOptions::default() };
    let session = init_session(target, cfg.mode, options)?;
    let handshake = session.handshake();
    let warnings = session.warnings().to_vec();
    let mut layout = OutputLayout::create_fresh(&cfg.output)?;
    layout.set_meta("config_hash", cfg.hash())?;
    layout.set_meta("target", target.name.clone())?;
    layout.set_meta("mode", handshake.effective_mode().as_str())?;
    layout.set_meta("requested_mode", cfg.mode.as_str())?;
    layout.set_meta("engine", cfg.engine.as_str())?;
    layout.set_meta("rng", RNG_NAME)?;
    layout.set_meta("rng_seed", cfg.rng_seed.to_string())?;
    layout.set_meta("duration_secs", cfg.duration_secs.to_string())?;
    let stats = BufWriter::new(OpenOptions::new().create(true).append(true).open(layout.stats_path())?);

    let start = Instant::now();
    let mut f = Fuzzer {
        session,
        layout,
        virgin: vec![false; MAP_SIZE],
        crash_virgin: vec![false; MAP_SIZE],
        hang_virgin: vec![false; MAP_SIZE],
        covered: 0,
        queue: Vec::new(),
        start,
        deadline: start + Duration::from_secs(cfg.duration_secs),
        max_execs: cfg.max_execs,
        execs: 0,
        saved: [0; 4],
        stats,
        records: Vec::new(),
        last_record: start,
        ctx_parent: 0,
        ctx_op: "det",
        ctx_class: LengthClass::Fixed,
    };
    f.record()?;
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(cfg.rng_seed);
    let mut stages = 0;
    let outcome = f.run_seeds(seeds).and_then(|_| match cfg.engine {
        Engine::Random => random_engine(&mut f, seeds, &mut rng),
        Engine::Neuzz => neuzz_engine(&mut f, seeds, cfg, &mut rng, &mut stages),
    });
    match outcome {
        Ok(()) | Err(Error::Exhausted) => {}
        Err(e) => return Err(e),
    }
    f.record()?;
    f.stats.flush()?;
    let elapsed = f.start.elapsed();
    let execs_per_sec = if elapsed.is_zero() { 0.0 } else { f.execs as f64 / elapsed.as_secs_f64() };
    f.layout.set_meta("total_execs", f.execs.to_string())?;
    f.layout.set_meta("elapsed_ms", elapsed.as_millis().to_string())?;
    f.layout.set_meta("execs_per_sec", format!("{:.3}", execs_per_sec))?;
    Ok(CampaignStats {
        handshake,
        engine: cfg.engine,
        rng: RNG_NAME,
        rng_seed: cfg.rng_seed,
        total_execs: f.execs,
        covered_edges: f.covered,
        saved: f.saved,
        spawns: f.session.stats().spawns,
        elapsed,
        execs_per_sec,
        stages,
        records: f.records.clone(),
        warnings,
    })
}

fn parents(f: &Fuzzer, seeds: &[Vec<u8>]) -> Vec<(u64, Vec<u8>)> {
    if f.queue.is_empty() {
        seeds.iter().map(|s| (0, s.clone())).collect()
    } else {
        f.queue.iter().map(|e| (e.id, e.data.clone())).collect()
    }
}

/// AFL-style havoc over a FIFO queue. Everything it finds goes to the queue.
fn random_engine(f: &mut Fuzzer, seeds: &[Vec<u8>], rng: &mut Xoshiro256PlusPlus) -> Result<()> {
    let mut cursor = 0usize;
    loop {
        let pool = parents(f, seeds);
        let (id, data) = &pool[cursor % pool.len()];
        for _ in 0..HAVOC_PER_ENTRY {
            let v = havoc(data, rng);
            f.run(&v, *id, "havoc", LengthClass::Fixed)?;
        }
        cursor += 1;
    }
}

const INTERESTING_8: [i8; 9] = [-128, -1, 0, 1, 16, 32, 64, 100, 127];
const INTERESTING_16: [i16; 10] = [-32768, -129, 128, 255, 256, 512, 1000, 1024, 4096, 32767];
const MAX_HAVOC_LEN: usize = 4096;

/// Stacked random mutations: 2 to 128 operations drawn from bit flips,
/// interesting values, arithmetic, random bytes, block deletion, block
/// insertion and block overwrite.
pub fn havoc<R: Rng>(input: &[u8], rng: &mut R) -> Vec<u8> {
    let mut v = input.to_vec();
    let stack = 1usize << rng.gen_range(1..=HAVOC_MAX_STACK_POW);
    for _ in 0..stack {
        if v.is_empty() {
            v.push(rng.gen());
            continue;
        }
        let len = v.len();
        match rng.gen_range(0..10) {
            0 => {
                let bit = rng.gen_range(0..len * 8);
                v[bit >> 3] ^= 128 >> (bit & 7);
            }
            1 => {
                let i = rng.gen_range(0..len);
                v[i] = INTERESTING_8[rng.gen_range(0..INTERESTING_8.len())] as u8;
            }
            2 if len >= 2 => {
                let i = rng.gen_range(0..len - 1);
                let val = INTERESTING_16[rng.gen_range(0..INTERESTING_16.len())] as u16;
                let bytes = if rng.gen() { val.to_le_bytes() } else { val.to_be_bytes() };
                v[i..i + 2].copy_from_slice(&bytes);
            }
            3 => {
                let i = rng.gen_range(0..len);
                v[i] = v[i].wrapping_sub(rng.gen_range(1..=35));
            }
            4 => {
                let i = rng.gen_range(0..len);
                v[i] = v[i].wrapping_add(rng.gen_range(1..=35));
            }
            5 => {
                let i = rng.gen_range(0..len);
                v[i] ^= rng.gen_range(1..=255u8);
            }
            6 if len >= 2 => {
                let n = rng.gen_range(1..=(len - 1).min(16));
                let at = rng.gen_range(0..=len - n);
                v.drain(at..at + n);
            }
            7 if len < MAX_HAVOC_LEN => {
                let n = rng.gen_range(1..=len.min(16));
                let from = rng.gen_range(0..=len - n);
                let at = rng.gen_range(0..=len);
                let block: Vec<u8> =
                    if rng.gen_ratio(3, 4) { v[from..from + n].to_vec() } else { vec![rng.gen(); n] };
                v.splice(at..at, block);
            }
            8 if len >= 2 => {
                let n = rng.gen_range(1..=(len - 1).min(16));
                let from = rng.gen_range(0..=len - n);
                let to = rng.gen_range(0..=len - n);
                if rng.gen_ratio(3, 4) {
                    v.copy_within(from..from + n, to);
                } else {
                    let b = rng.gen();
                    v[to..to + n].fill(b);
                }
            }
            _ => {
                let i = rng.gen_range(0..len);
                v[i] = rng.gen();
            }
        }
    }
    v
}

/// Queue entry for the next stage: fewest stage uses, then most edges, then
/// lowest id.
fn pick_stage_seed(f: &Fuzzer) -> Option<usize> {
    (0..f.queue.len()).min_by(|&a, &b| {
        let (x, y) = (&f.queue[a], &f.queue[b]);
        x.stage_uses
            .cmp(&y.stage_uses)
            .then(y.covered.len().cmp(&x.covered.len()))
            .then(x.id.cmp(&y.id))
    })
}

/// Staged engine. Each stage collects a training corpus around one seed
/// with the deterministic schedule, trains a model, then chases the
/// selected edges the current input misses with gradient-guided
/// fixed-length mutants, interleaved with variant-length mutants.
fn neuzz_engine(
    f: &mut Fuzzer,
    seeds: &[Vec<u8>],
    cfg: &CampaignConfig,
    rng: &mut Xoshiro256PlusPlus,
    stages: &mut u64,
) -> Result<()> {
    loop {
        let (seed_id, seed_data) = match pick_stage_seed(f) {
            Some(i) => {
                f.queue[i].stage_uses += 1;
                (f.queue[i].id, f.queue[i].data.clone())
            }
            None => (0, seeds[(*stages as usize) % seeds.len()].clone()),
        };
        *stages += 1;
        let first_new = f.queue.len();
        f.ctx_parent = seed_id;
        f.ctx_op = "det";
        f.ctx_class = LengthClass::Fixed;
        let corpus = neuzz::collect_training_corpus(f, &Seed::new(seed_data.clone())?, cfg.training_budget)?;
        let hyper = Hyper { rng_seed: rng.gen(), ..Hyper::default() };
        let model = match neuzz::train(&corpus, &hyper) {
            Ok(m) => m,
            Err(e @ (Error::NoSignal | Error::CorpusRejected(_))) => {
                log::info!("stage {}: no model ({})", stages, e);
                variant_round(f, seed_id, &seed_data, rng)?;
                continue;
            }
            Err(e) => return Err(e),
        };

        // Gradient inputs: the stage seed, then what this stage found, best
        // coverage first.
        let mut inputs: Vec<(u64, Vec<u8>, Vec<u32>)> = vec![(seed_id, seed_data.clone(), corpus_seed_cov(f, seed_id))];
        let mut found: Vec<&Entry> = f.queue[first_new..].iter().filter(|e| e.data.len() == seed_data.len()).collect();
        found.sort_by(|a, b| b.covered.len().cmp(&a.covered.len()).then(a.id.cmp(&b.id)));
        inputs.extend(found.into_iter().take(GRAD_INPUTS - 1).map(|e| (e.id, e.data.clone(), e.covered.clone())));

        let mut edge_cursor = 0usize;
        for (id, x, covered) in inputs {
            let targets: Vec<usize> =
                (0..model.edges.len()).filter(|&i| covered.binary_search(&model.edges[i]).is_err()).collect();
            if targets.is_empty() {
                continue;
            }
            for round in 0..GRAD_ROUNDS {
                let e = targets[edge_cursor % targets.len()];
                edge_cursor += 1;
                let g = model.gradient(&x, e, GradVariant::Raw)?;
                let (variants, _) = neuzz::mutate_fixed_length(&x, &g, GRAD_TOP_K)?;
                for v in &variants {
                    f.run(v, id, "grad", LengthClass::Fixed)?;
                }
                if round % VARIANT_EVERY == VARIANT_EVERY - 1 {
                    variant_round(f, id, &x, rng)?;
                }
            }
        }
    }
}

fn corpus_seed_cov(f: &Fuzzer, id: u64) -> Vec<u32> {
    f.queue.iter().find(|e| e.id == id).map(|e| e.covered.clone()).unwrap_or_default()
}

fn variant_round(f: &mut Fuzzer, parent: u64, x: &[u8], rng: &mut Xoshiro256PlusPlus) -> Result<()> {
    let (variants, _) = neuzz::mutate_variant_length(x, rng);
    for v in &variants {
        f.run(v, parent, "vari", LengthClass::Variant)?;
    }
    Ok(())
}
