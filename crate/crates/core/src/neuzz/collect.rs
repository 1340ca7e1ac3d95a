//! Single-seed training corpus collection, validation and output-edge
//! selection.

use std::fmt;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result, Warning};
use crate::executor::{ExecResult, Execute};

use super::Seed;

/// Default byte-level Hamming distance allowed between a sample and its seed.
pub const DEFAULT_ALIGNMENT_THRESHOLD: usize = 4;
/// Default execution budget for collection.
pub const DEFAULT_COLLECTION_BUDGET: u64 = 5_000;
/// Fewer samples than this cannot carry a label that varies.
pub const MIN_SAMPLES: usize = 2;
/// Recommended sample-count range.
pub const SAMPLE_GUIDELINE: (usize, usize) = (1_000, 10_000);

const ARITH_MAX: u8 = 35;
const INTERESTING_8: [i8; 9] = [-128, -1, 0, 1, 16, 32, 64, 100, 127];

/// One collected sample: an input and the uniform edge ids it covered,
/// sorted ascending.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sample {
    pub input: Vec<u8>,
    pub covered: Vec<u32>,
}

impl Sample {
    pub fn covers(&self, edge: u32) -> bool {
        self.covered.binary_search(&edge).is_ok()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainingCorpus {
    pub seed: Vec<u8>,
    pub samples: Vec<Sample>,
    /// Executions spent collecting.
    pub budget_used: u64,
    /// Position reached in the deterministic schedule.
    pub schedule_pos: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Flip1,
    Flip2,
    Flip4,
    Byte1,
    Byte2,
    Byte4,
    Arith8,
    Interest8,
}

impl Stage {
    pub const ORDER: [Stage; 8] =
        [Stage::Flip1, Stage::Flip2, Stage::Flip4, Stage::Byte1, Stage::Byte2, Stage::Byte4, Stage::Arith8, Stage::Interest8];
}

/// AFL-style deterministic stages over one seed, in fixed order: walking
/// bit flips of width 1, 2 and 4, walking byte flips of width 1, 2 and 4,
/// 8-bit arithmetic +-1..35 and interesting 8-bit values. Interesting values
/// equal to the original byte are skipped.
pub struct DeterministicSchedule<'a> {
    seed: &'a [u8],
    stage: usize,
    pos: usize,
    sub: usize,
    emitted: u64,
}

impl<'a> DeterministicSchedule<'a> {
    pub fn new(seed: &'a [u8]) -> DeterministicSchedule<'a> {
        DeterministicSchedule { seed, stage: 0, pos: 0, sub: 0, emitted: 0 }
    }

    /// Number of variants produced so far.
    pub fn position(&self) -> u64 {
        self.emitted
    }

    pub fn stage(&self) -> Option<Stage> {
        Stage::ORDER.get(self.stage).copied()
    }

    fn next_stage(&mut self) {
        self.stage += 1;
        self.pos = 0;
        self.sub = 0;
    }
}

fn flip_bit(buf: &mut [u8], bit: usize) {
    buf[bit >> 3] ^= 128 >> (bit & 7);
}

impl Iterator for DeterministicSchedule<'_> {
    type Item = Vec<u8>;

    fn next(&mut self) -> Option<Vec<u8>> {
        let len = self.seed.len();
        loop {
            let stage = self.stage()?;
            let mut v = self.seed.to_vec();
            let produced = match stage {
                Stage::Flip1 | Stage::Flip2 | Stage::Flip4 => {
                    let w = match stage {
                        Stage::Flip1 => 1,
                        Stage::Flip2 => 2,
                        _ => 4,
                    };
                    if self.pos + w <= len * 8 {
                        for b in self.pos..self.pos + w {
                            flip_bit(&mut v, b);
                        }
                        self.pos += 1;
                        true
                    } else {
                        false
                    }
                }
                Stage::Byte1 | Stage::Byte2 | Stage::Byte4 => {
                    let w = match stage {
                        Stage::Byte1 => 1,
                        Stage::Byte2 => 2,
                        _ => 4,
                    };
                    if self.pos + w <= len {
                        for b in &mut v[self.pos..self.pos + w] {
                            *b ^= 0xFF;
                        }
                        self.pos += 1;
                        true
                    } else {
                        false
                    }
                }
                Stage::Arith8 => {
                    if self.pos < len {
                        // sub walks +1, -1, +2, -2, ... +35, -35
                        let j = (self.sub / 2) as u8 + 1;
                        v[self.pos] = if self.sub.is_multiple_of(2) { v[self.pos].wrapping_add(j) } else { v[self.pos].wrapping_sub(j) };
                        self.sub += 1;
                        if self.sub == 2 * ARITH_MAX as usize {
                            self.sub = 0;
                            self.pos += 1;
                        }
                        true
                    } else {
                        false
                    }
                }
                Stage::Interest8 => {
                    let mut found = false;
                    while self.pos < len && !found {
                        let val = INTERESTING_8[self.sub] as u8;
                        if val != self.seed[self.pos] {
                            v[self.pos] = val;
                            found = true;
                        }
                        self.sub += 1;
                        if self.sub == INTERESTING_8.len() {
                            self.sub = 0;
                            self.pos += 1;
                        }
                    }
                    found
                }
            };
            if produced {
                self.emitted += 1;
                return Some(v);
            }
            self.next_stage();
        }
    }
}

/// Total number of variants the schedule yields for a seed of `len` bytes.
pub fn schedule_len(seed: &[u8]) -> u64 {
    let len = seed.len() as u64;
    let bits = len * 8;
    let walk = |n: u64, w: u64| if n >= w { n - w + 1 } else { 0 };
    let interesting: u64 =
        seed.iter().map(|&b| INTERESTING_8.iter().filter(|&&v| v as u8 != b).count() as u64).sum();
    walk(bits, 1) + walk(bits, 2) + walk(bits, 4) + walk(len, 1) + walk(len, 2) + walk(len, 4) + len * 2 * ARITH_MAX as u64
        + interesting
}

/// Warning for a sample count outside the recommended range.
pub fn sample_count_warning(count: usize) -> Option<Warning> {
    (count < SAMPLE_GUIDELINE.0 || count > SAMPLE_GUIDELINE.1).then_some(Warning::SampleCountOutsideGuideline { count })
}

/// Runs the deterministic schedule of `seed` through `exec` and records the
/// covered edges of each variant. Stops after `budget` executions or when the
/// schedule is exhausted.
pub fn collect_training_corpus<E: Execute>(exec: &mut E, seed: &Seed, budget: u64) -> Result<TrainingCorpus> {
    collect_training_corpus_with(exec, seed, budget, |_, _| Ok(()))
}

/// Like [`collect_training_corpus`], handing every execution to `observe`
/// as well (a campaign uses this to triage what collection finds).
pub fn collect_training_corpus_with<E, F>(exec: &mut E, seed: &Seed, budget: u64, mut observe: F) -> Result<TrainingCorpus>
where
    E: Execute,
    F: FnMut(&[u8], &ExecResult) -> Result<()>,
{
    if budget == 0 {
        return Err(Error::Config("collection budget must be at least 1".into()));
    }
    let mut schedule = DeterministicSchedule::new(seed.bytes());
    let mut samples = Vec::new();
    let mut used = 0u64;
    while used < budget {
        let Some(input) = schedule.next() else { break };
        let r = exec.execute(&input)?;
        used += 1;
        observe(&input, &r)?;
        samples.push(Sample { covered: r.coverage.covered_edges(), input });
    }
    if let Some(w) = sample_count_warning(samples.len()) {
        w.emit();
    }
    Ok(TrainingCorpus { seed: seed.bytes().to_vec(), samples, budget_used: used, schedule_pos: schedule.position() })
}

pub fn hamming(a: &[u8], b: &[u8]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count() + a.len().abs_diff(b.len())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ViolationReason {
    Length { expected: usize, found: usize },
    Distance { distance: usize, threshold: usize },
    TooFewSamples { count: usize, minimum: usize },
    /// Collection was pointed at more than one seed.
    MultipleSeeds { path: std::path::PathBuf, count: usize },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    /// Offending sample; `None` for corpus-wide violations.
    pub index: Option<usize>,
    pub reason: ViolationReason,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ValidationReport {
    pub samples: usize,
    pub threshold: usize,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{}: {} samples, alignment threshold {} bytes, {} violation(s)",
            if self.passed() { "PASS" } else { "FAIL" },
            self.samples,
            self.threshold,
            self.violations.len()
        )?;
        for v in &self.violations {
            match (&v.index, &v.reason) {
                (Some(i), ViolationReason::Length { expected, found }) => {
                    writeln!(f, "  sample {}: length {} differs from seed length {}", i, found, expected)?
                }
                (Some(i), ViolationReason::Distance { distance, threshold }) => {
                    writeln!(f, "  sample {}: {} bytes differ from the seed (threshold {})", i, distance, threshold)?
                }
                (_, ViolationReason::TooFewSamples { count, minimum }) => {
                    writeln!(f, "  corpus: {} samples, at least {} required", count, minimum)?
                }
                (_, ViolationReason::MultipleSeeds { path, count }) => writeln!(
                    f,
                    "  seeds: {} holds {} seeds; a training corpus must come from a single seed",
                    path.display(),
                    count
                )?,
                (None, r) => writeln!(f, "  corpus: {:?}", r)?,
            }
        }
        Ok(())
    }
}

/// Checks that every sample is aligned with the seed: same length and at
/// most `threshold` differing bytes. Never fails; the report says why not.
pub fn validate_corpus(corpus: &TrainingCorpus, threshold: usize) -> ValidationReport {
    let mut violations = Vec::new();
    if corpus.samples.len() < MIN_SAMPLES {
        violations.push(Violation {
            index: None,
            reason: ViolationReason::TooFewSamples { count: corpus.samples.len(), minimum: MIN_SAMPLES },
        });
    }
    for (i, s) in corpus.samples.iter().enumerate() {
        if s.input.len() != corpus.seed.len() {
            violations.push(Violation {
                index: Some(i),
                reason: ViolationReason::Length { expected: corpus.seed.len(), found: s.input.len() },
            });
            continue;
        }
        let d = hamming(&s.input, &corpus.seed);
        if d > threshold {
            violations.push(Violation { index: Some(i), reason: ViolationReason::Distance { distance: d, threshold } });
        }
    }
    ValidationReport { samples: corpus.samples.len(), threshold, violations }
}

/// The `max_edges` edges whose labels vary most across samples, ties by
/// ascending id. Constant edges are never selected. Also returns a warning
/// when fewer than `max_edges` edges vary.
pub fn select_output_edges(corpus: &TrainingCorpus, max_edges: usize) -> (Vec<u32>, Option<Warning>) {
    let s = corpus.samples.len() as u64;
    let mut counts = std::collections::BTreeMap::<u32, u64>::new();
    for sample in &corpus.samples {
        for &e in &sample.covered {
            *counts.entry(e).or_default() += 1;
        }
    }
    // Bernoulli variance is c/S * (1 - c/S); c * (S - c) ranks identically
    // and stays exact.
    let mut ranked: Vec<(u64, u32)> =
        counts.into_iter().filter(|&(_, c)| c < s).map(|(e, c)| (c * (s - c), e)).collect();
    ranked.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let warning = (ranked.len() < max_edges)
        .then(|| Warning::FewerVariableEdges { requested: max_edges, available: ranked.len() }.emit());
    ranked.truncate(max_edges);
    (ranked.into_iter().map(|(_, e)| e).collect(), warning)
}

const MANIFEST: &str = "manifest.tsv";

impl TrainingCorpus {
    /// Writes `seed`, `samples/`, `bitsets/` and `manifest.tsv` under `dir`.
    /// Bitsets are packed little-endian bit vectors over edge ids.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir.join("samples"))?;
        fs::create_dir_all(dir.join("bitsets"))?;
        fs::write(dir.join("seed"), &self.seed)?;
        let mut manifest = String::from("# sample\tbitset\thamming\n");
        manifest.push_str(&format!("# budget_used={} schedule_pos={}\n", self.budget_used, self.schedule_pos));
        for (i, s) in self.samples.iter().enumerate() {
            let name = format!("{:06}", i);
            fs::write(dir.join("samples").join(&name), &s.input)?;
            fs::write(dir.join("bitsets").join(&name), pack_bits(&s.covered))?;
            manifest.push_str(&format!("samples/{n}\tbitsets/{n}\t{}\n", hamming(&s.input, &self.seed), n = name));
        }
        fs::write(dir.join(MANIFEST), manifest)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<TrainingCorpus> {
        let seed = fs::read(dir.join("seed"))?;
        let text = fs::read_to_string(dir.join(MANIFEST))?;
        let mut samples = Vec::new();
        let (mut budget_used, mut schedule_pos) = (0, 0);
        for line in text.lines() {
            if let Some(meta) = line.strip_prefix("# budget_used=") {
                let (b, p) = meta
                    .split_once(" schedule_pos=")
                    .ok_or_else(|| Error::Format(format!("bad manifest metadata {:?}", line)))?;
                budget_used = b.parse().map_err(|_| Error::Format(format!("bad budget {:?}", b)))?;
                schedule_pos = p.parse().map_err(|_| Error::Format(format!("bad position {:?}", p)))?;
                continue;
            }
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(Error::Format(format!("manifest line {:?} needs 3 columns", line)));
            }
            let input = fs::read(dir.join(cols[0]))?;
            let covered = unpack_bits(&fs::read(dir.join(cols[1]))?);
            samples.push(Sample { input, covered });
        }
        Ok(TrainingCorpus { seed, samples, budget_used, schedule_pos })
    }
}

fn pack_bits(ids: &[u32]) -> Vec<u8> {
    let len = ids.iter().max().map_or(0, |&m| m as usize / 8 + 1);
    let mut out = vec![0u8; len];
    for &id in ids {
        out[id as usize / 8] |= 1 << (id % 8);
    }
    out
}

fn unpack_bits(bytes: &[u8]) -> Vec<u32> {
    let mut ids = Vec::new();
    for (i, &b) in bytes.iter().enumerate() {
        for bit in 0..8 {
            if b & (1 << bit) != 0 {
                ids.push(i as u32 * 8 + bit);
            }
        }
    }
    ids
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coverage::Scheme;
    use crate::executor::InProcessExecutor;
    use crate::target_runtime::{chunkparse, magic16};
    use proptest::prelude::*;

    fn corpus(seed: &[u8], samples: &[(&[u8], &[u32])]) -> TrainingCorpus {
        TrainingCorpus {
            seed: seed.to_vec(),
            samples: samples.iter().map(|(i, c)| Sample { input: i.to_vec(), covered: c.to_vec() }).collect(),
            budget_used: samples.len() as u64,
            schedule_pos: samples.len() as u64,
        }
    }

    #[test]
    fn budget_eight_on_one_byte_is_the_walking_bit_flips() {
        let mut ex = InProcessExecutor::new(&magic16::TARGET, Scheme::CollisionFree);
        let c = collect_training_corpus(&mut ex, &Seed::new(vec![0x00]).unwrap(), 8).unwrap();
        let inputs: Vec<u8> = c.samples.iter().map(|s| s.input[0]).collect();
        assert_eq!(inputs, vec![0x80, 0x40, 0x20, 0x10, 0x08, 0x04, 0x02, 0x01]);
        assert_eq!(c.budget_used, 8);
        assert!(c.samples.iter().all(|s| s.input[0].count_ones() == 1));
    }

    #[test]
    fn schedule_prefix_per_stage() {
        let seed = [0x10u8, 0x20];
        let all: Vec<Vec<u8>> = DeterministicSchedule::new(&seed).collect();
        assert_eq!(all.len() as u64, schedule_len(&seed));
        // 16 + 15 + 13 bit walks, 2 + 1 + 0 byte walks
        assert_eq!(all[16], vec![0xD0, 0x20], "first 2-bit flip");
        assert_eq!(all[16 + 15], vec![0xE0, 0x20], "first 4-bit flip");
        assert_eq!(all[44], vec![0xEF, 0x20], "first byte flip");
        assert_eq!(all[46], vec![0xEF, 0xDF], "two-byte flip");
        assert_eq!(all[47], vec![0x11, 0x20], "+1");
        assert_eq!(all[48], vec![0x0F, 0x20], "-1");
        assert_eq!(all[47 + 69], vec![0xED, 0x20], "-35");
        assert_eq!(all[47 + 140], vec![0x80, 0x20], "first interesting value");
        // 0x10 is itself interesting (16) and skipped for byte 0
        assert_eq!(all.len(), 47 + 140 + 8 + 8);
    }

    #[test]
    fn every_sample_keeps_seed_length_and_passes() {
        let mut ex = InProcessExecutor::new(&chunkparse::TARGET, Scheme::CollisionFree);
        let seed = Seed::new(b"CHNK\x01\x03\x00abc\x02\x04\x00\x01\x02\x03\x04".to_vec()).unwrap();
        let c = collect_training_corpus(&mut ex, &seed, 5_000).unwrap();
        assert!(c.samples.iter().all(|s| s.input.len() == seed.len()));
        assert!(c.samples.len() > 1_000);
        assert!(validate_corpus(&c, DEFAULT_ALIGNMENT_THRESHOLD).passed());
    }

    #[test]
    fn guideline_warning() {
        assert!(sample_count_warning(999).is_some());
        assert!(sample_count_warning(1_000).is_none());
        assert!(sample_count_warning(10_000).is_none());
        assert!(sample_count_warning(10_001).is_some());
    }

    #[test]
    fn injected_length_violation_is_named() {
        let c = corpus(b"abcd", &[(b"abcd", &[]), (b"abce", &[]), (b"abc", &[])]);
        let r = validate_corpus(&c, 4);
        assert!(!r.passed());
        assert_eq!(r.violations, vec![Violation { index: Some(2), reason: ViolationReason::Length { expected: 4, found: 3 } }]);
        assert!(r.to_string().contains("sample 2"));
    }

    #[test]
    fn too_few_samples_fail() {
        let r = validate_corpus(&corpus(b"ab", &[(b"ab", &[])]), 4);
        assert!(!r.passed());
    }

    #[test]
    fn hand_computed_variance_ranking() {
        // 4 samples. Counts: e1=4 (constant), e2=2, e3=1, e5=3, e7=2, e9=0.
        // c*(S-c): e2=4, e7=4, e3=3, e5=3.
        let c = corpus(
            b"xxxx",
            &[
                (b"xxxx", &[1, 2, 3, 5]),
                (b"xxxy", &[1, 2, 5, 7]),
                (b"xxyx", &[1, 5, 7]),
                (b"xyxx", &[1]),
            ],
        );
        assert_eq!(select_output_edges(&c, 10).0, vec![2, 7, 3, 5]);
        let (top2, w) = select_output_edges(&c, 2);
        assert_eq!(top2, vec![2, 7]);
        assert!(w.is_none());
        assert_eq!(
            select_output_edges(&c, 10).1,
            Some(Warning::FewerVariableEdges { requested: 10, available: 4 })
        );
    }

    #[test]
    fn half_covered_outranks_always_covered() {
        let c = corpus(b"ab", &[(b"ab", &[4, 9]), (b"ac", &[4])]);
        assert_eq!(select_output_edges(&c, 5).0, vec![9]);
    }

    #[test]
    fn disk_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let c = corpus(b"seed", &[(b"seee", &[0, 7, 8, 300]), (b"sees", &[])]);
        c.save(dir.path()).unwrap();
        assert_eq!(TrainingCorpus::load(dir.path()).unwrap(), c);
        let manifest = fs::read_to_string(dir.path().join(MANIFEST)).unwrap();
        assert!(manifest.contains("samples/000000\tbitsets/000000\t1"));
    }

    proptest! {
        #[test]
        fn schedule_preserves_length_and_alignment(seed in proptest::collection::vec(any::<u8>(), 1..24)) {
            let mut n = 0u64;
            for v in DeterministicSchedule::new(&seed) {
                prop_assert_eq!(v.len(), seed.len());
                let d = hamming(&v, &seed);
                prop_assert!((1..=DEFAULT_ALIGNMENT_THRESHOLD).contains(&d));
                n += 1;
            }
            prop_assert_eq!(n, schedule_len(&seed));
        }

        #[test]
        fn bitset_round_trip(mut ids in proptest::collection::btree_set(0u32..70_000, 0..50)) {
            let v: Vec<u32> = std::mem::take(&mut ids).into_iter().collect();
            prop_assert_eq!(unpack_bits(&pack_bits(&v)), v);
        }
    }
}
