//! Uniform-metric coverage replay and fuzzer comparison reports.
//!
//! Replay always runs in fork mode against one target build, whatever mode
//! the campaign used, so edge counts from different fuzzers are comparable.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::campaign::StatsRecord;
use crate::corpus_store::{OutputLayout, Selection, StoredTestCase, STATS_FILE};
use crate::coverage::{CoverageMap, Scheme};
use crate::error::{Error, Result, Warning};
use crate::executor::{init_session, Execute, Mode, SessionOptions};
use crate::target_runtime::TargetProgram;

/// Replays every testcase of the layout, all four directories, under the
/// collision-free metric.
pub fn replay(layout: &OutputLayout, target: &TargetProgram) -> Result<CoverageMap> {
    Ok(replay_with(layout, target, &Selection::All, Scheme::CollisionFree)?.map)
}

#[derive(Clone, Debug)]
pub struct ReplayOutcome {
    pub map: CoverageMap,
    pub testcases: usize,
    pub warnings: Vec<Warning>,
}

/// Replays the selected directories under `scheme`. Queue-only selection
/// is reported as a warning because it undercounts.
pub fn replay_with(layout: &OutputLayout, target: &TargetProgram, selection: &Selection, scheme: Scheme) -> Result<ReplayOutcome> {
    let mut warnings = Vec::new();
    if *selection == Selection::QueueOnly {
        warnings.push(Warning::QueueOnlyEvaluation);
    }
    let cases = layout.enumerate(selection)?;
    let map = replay_testcases(&cases, target, scheme)?;
    Ok(ReplayOutcome { map, testcases: cases.len(), warnings })
}

/// Fork-mode replay spread over the rayon pool: each worker owns a
/// session and a private map; maps are merged at the end.
pub fn replay_testcases(cases: &[StoredTestCase], target: &TargetProgram, scheme: Scheme) -> Result<CoverageMap> {
    let inputs: Vec<&[u8]> = cases.iter().map(|c| c.data.as_slice()).collect();
    replay_inputs(&inputs, target, scheme)
}

pub fn replay_inputs(inputs: &[&[u8]], target: &TargetProgram, scheme: Scheme) -> Result<CoverageMap> {
    if inputs.is_empty() {
        return Ok(CoverageMap::new(scheme));
    }
    let chunk = inputs.len().div_ceil(rayon::current_num_threads() * 4).max(1);
    let options = SessionOptions { scheme, ..SessionOptions::default() };
    let maps: Vec<CoverageMap> = inputs
        .par_chunks(chunk)
        .map(|part| -> Result<CoverageMap> {
            let mut session = init_session(target, Mode::Fork, options.clone())?;
            let mut map = CoverageMap::new(scheme);
            for input in part {
                // crashes and hangs still contribute the edges they reached
                let r = session.execute(input)?;
                map.merge_from(&r.coverage)?;
            }
            Ok(map)
        })
        .collect::<Result<_>>()?;
    let mut total = CoverageMap::new(scheme);
    for m in &maps {
        total.merge_from(m)?;
    }
    Ok(total)
}

/// One fuzzer's campaigns against one target.
#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonRow {
    pub fuzzer: String,
    pub target: String,
    /// Mean replayed uniform edges.
    pub edges: f64,
    /// Mean executions per second.
    pub execs_per_sec: f64,
    pub runs: Vec<RunResult>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    pub edges: usize,
    pub execs_per_sec: f64,
}

/// A campaign to compare: fuzzer name and output layout. The throughput
/// log is the layout's stats file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CampaignSpec {
    pub fuzzer: String,
    pub layout: PathBuf,
}

/// Parses `<fuzzer> <layout>` lines; `#` starts a comment. Relative layout
/// paths are resolved against `base`.
pub fn parse_spec_file(text: &str, base: &Path) -> Result<Vec<CampaignSpec>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (Some(fuzzer), Some(layout), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::Config(format!("line {}: expected `<fuzzer> <layout>`", n + 1)));
        };
        let p = PathBuf::from(layout);
        out.push(CampaignSpec { fuzzer: fuzzer.to_string(), layout: if p.is_absolute() { p } else { base.join(p) } });
    }
    if out.is_empty() {
        return Err(Error::Config("comparison spec lists no campaigns".into()));
    }
    Ok(out)
}

/// Throughput recorded by a campaign: the metadata value, else derived
/// from the first and last stats records.
pub fn campaign_throughput(layout: &OutputLayout) -> Result<f64> {
    if let Some(v) = layout.meta("execs_per_sec") {
        return v.parse().map_err(|_| Error::Structure(format!("bad execs_per_sec {:?}", v)));
    }
    let path = layout.root().join(STATS_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::Structure(format!("{}: {}", path.display(), e)))?;
    let recs: Vec<StatsRecord> = text.lines().filter_map(StatsRecord::parse).collect();
    match (recs.first(), recs.last()) {
        (Some(a), Some(b)) if b.unix_millis > a.unix_millis => {
            Ok((b.total_execs - a.total_execs) as f64 * 1000.0 / (b.unix_millis - a.unix_millis) as f64)
        }
        _ => Ok(0.0),
    }
}

/// Replays every campaign and aggregates per fuzzer. Refuses campaigns that
/// ran in different execution modes.
pub fn compare_campaigns(specs: &[CampaignSpec], target: &TargetProgram) -> Result<Vec<ComparisonRow>> {
    if specs.is_empty() {
        return Err(Error::Usage("no campaigns to compare".into()));
    }
    let layouts: Vec<OutputLayout> = specs.iter().map(|s| OutputLayout::open(&s.layout)).collect::<Result<_>>()?;
    let modes: Vec<String> = layouts.iter().map(|l| l.meta("mode").unwrap_or("unknown").to_string()).collect();
    if modes.iter().any(|m| *m != modes[0]) {
        let offenders: Vec<String> = specs
            .iter()
            .zip(&modes)
            .map(|(s, m)| format!("{} {} ran in {} mode", s.fuzzer, s.layout.display(), m))
            .collect();
        return Err(Error::ModeMismatch(offenders.join("; ")));
    }
    for (s, l) in specs.iter().zip(&layouts) {
        if let Some(t) = l.meta("target") {
            if t != target.name {
                return Err(Error::Usage(format!(
                    "{} {} ran against {}, comparing on {}",
                    s.fuzzer,
                    s.layout.display(),
                    t,
                    target.name
                )));
            }
        }
    }
    let durations: Vec<Option<&str>> = layouts.iter().map(|l| l.meta("duration_secs")).collect();
    if durations.iter().any(|d| *d != durations[0]) {
        return Err(Error::Usage("campaigns ran for different durations".into()));
    }

    let mut rows: Vec<ComparisonRow> = Vec::new();
    for (s, l) in specs.iter().zip(&layouts) {
        let edges = replay(l, target)?.count_covered();
        let run = RunResult { edges, execs_per_sec: campaign_throughput(l)? };
        match rows.iter_mut().find(|r| r.fuzzer == s.fuzzer) {
            Some(r) => r.runs.push(run),
            None => rows.push(ComparisonRow {
                fuzzer: s.fuzzer.clone(),
                target: target.name.clone(),
                edges: 0.0,
                execs_per_sec: 0.0,
                runs: vec![run],
            }),
        }
    }
    for r in &mut rows {
        let n = r.runs.len() as f64;
        r.edges = r.runs.iter().map(|x| x.edges as f64).sum::<f64>() / n;
        r.execs_per_sec = r.runs.iter().map(|x| x.execs_per_sec).sum::<f64>() / n;
    }
    Ok(rows)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Markdown,
}

/// CSV (`target,fuzzer,run,edges,execs_per_sec`, per-run rows then a
/// `mean` row per fuzzer) or a markdown table with one row per target and
/// an edges/throughput column pair per fuzzer.
pub fn emit_report(rows: &[ComparisonRow], format: ReportFormat) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::Usage("no rows to report".into()));
    }
    let mut out = String::new();
    match format {
        ReportFormat::Csv => {
            out.push_str("target,fuzzer,run,edges,execs_per_sec\n");
            for r in rows {
                for (i, run) in r.runs.iter().enumerate() {
                    let _ = writeln!(out, "{},{},{},{},{:.1}", r.target, r.fuzzer, i + 1, run.edges, run.execs_per_sec);
                }
                let _ = writeln!(out, "{},{},mean,{:.1},{:.1}", r.target, r.fuzzer, r.edges, r.execs_per_sec);
            }
        }
        ReportFormat::Markdown => {
            let mut targets: Vec<&str> = Vec::new();
            let mut fuzzers: Vec<&str> = Vec::new();
            for r in rows {
                if !targets.contains(&r.target.as_str()) {
                    targets.push(&r.target);
                }
                if !fuzzers.contains(&r.fuzzer.as_str()) {
                    fuzzers.push(&r.fuzzer);
                }
            }
            out.push_str("| Target |");
            for f in &fuzzers {
                let _ = write!(out, " {} edges | {} execs/s |", f, f);
            }
            out.push_str("\n|---|");
            for _ in &fuzzers {
                out.push_str("---:|---:|");
            }
            out.push('\n');
            for t in &targets {
                let _ = write!(out, "| {} |", t);
                for f in &fuzzers {
                    match rows.iter().find(|r| r.target == *t && r.fuzzer == *f) {
                        Some(r) => {
                            let _ = write!(out, " {:.1} | {:.1} |", r.edges, r.execs_per_sec);
                        }
                        None => out.push_str(" - | - |"),
                    }
                }
                out.push('\n');
            }
        }
    }
    Ok(out)
}
