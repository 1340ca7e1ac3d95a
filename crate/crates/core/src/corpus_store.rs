//! On-disk result layout: fixed-length queue, variant-length seeds, crashes
//! and hangs, each testcase named by its id, parent and producing operator.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result, Warning};

pub const QUEUE_DIR: &str = "NEUZZ_out";
pub const VARIANT_DIR: &str = "vari_seed";
pub const CRASH_DIR: &str = "crash";
pub const HANG_DIR: &str = "hang";
pub const META_FILE: &str = "layout.meta";
pub const STATS_FILE: &str = "stats.log";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Disposition {
    NewEdgeFixed,
    NewEdgeVariant,
    Crash,
    Hang,
}

impl Disposition {
    pub const ALL: [Disposition; 4] =
        [Disposition::NewEdgeFixed, Disposition::NewEdgeVariant, Disposition::Crash, Disposition::Hang];

    pub fn dir_name(self) -> &'static str {
        match self {
            Disposition::NewEdgeFixed => QUEUE_DIR,
            Disposition::NewEdgeVariant => VARIANT_DIR,
            Disposition::Crash => CRASH_DIR,
            Disposition::Hang => HANG_DIR,
        }
    }
}

/// Whether a testcase kept its parent's length.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LengthClass {
    Fixed,
    Variant,
}

/// A testcase and its provenance.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TestCase {
    pub data: Vec<u8>,
    /// Id of the parent testcase; 0 for initial seeds.
    pub parent: u64,
    /// Name of the producing operator, e.g. `havoc` or `grad`.
    pub op: String,
    pub class: LengthClass,
}

impl TestCase {
    pub fn seed(data: Vec<u8>) -> TestCase {
        TestCase { data, parent: 0, op: "seed".into(), class: LengthClass::Fixed }
    }
}

/// A testcase read back from a layout.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StoredTestCase {
    pub id: u64,
    pub parent: u64,
    pub op: String,
    pub disposition: Disposition,
    pub path: PathBuf,
    pub data: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Selection {
    All,
    /// Only the fixed-length queue. Undercounts; kept to reproduce the
    /// incomplete-collection mistake in tests.
    QueueOnly,
    Only(Vec<Disposition>),
}

impl Selection {
    fn dispositions(&self) -> Vec<Disposition> {
        match self {
            Selection::All => Disposition::ALL.to_vec(),
            Selection::QueueOnly => vec![Disposition::NewEdgeFixed],
            Selection::Only(d) => d.clone(),
        }
    }
}

pub fn testcase_file_name(id: u64, parent: u64, op: &str) -> String {
    let op: String = op
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' { c } else { '_' })
        .collect();
    format!("id:{:06},src:{:06},op:{}", id, parent, op)
}

/// Parses `id:NNNNNN,src:NNNNNN,op:<kind>`.
pub fn parse_file_name(name: &str) -> Option<(u64, u64, String)> {
    let rest = name.strip_prefix("id:")?;
    let (id, rest) = rest.split_once(",src:")?;
    let (src, op) = rest.split_once(",op:")?;
    Some((id.parse().ok()?, src.parse().ok()?, op.to_string()))
}

/// The four result directories under one root plus `layout.meta`.
#[derive(Debug)]
pub struct OutputLayout {
    root: PathBuf,
    counter: u64,
    meta: BTreeMap<String, String>,
}

impl OutputLayout {
    /// Creates the directories if needed and resumes the counter.
    pub fn create(root: &Path) -> Result<OutputLayout> {
        for d in Disposition::ALL {
            fs::create_dir_all(root.join(d.dir_name()))?;
        }
        let mut layout = OutputLayout { root: root.to_path_buf(), counter: 0, meta: BTreeMap::new() };
        layout.load_meta()?;
        let max_id = layout.enumerate_quiet(&Selection::All)?.iter().map(|t| t.id).max().unwrap_or(0);
        layout.counter = layout.counter.max(max_id);
        layout.write_meta()?;
        Ok(layout)
    }

    /// Like [`OutputLayout::create`] but removes testcases, stats and
    /// metadata left by an earlier run, so a rerun starts from id 1.
    pub fn create_fresh(root: &Path) -> Result<OutputLayout> {
        for d in Disposition::ALL {
            let dir = root.join(d.dir_name());
            if dir.is_dir() {
                for entry in fs::read_dir(&dir)? {
                    let entry = entry?;
                    if parse_file_name(&entry.file_name().to_string_lossy()).is_some() {
                        fs::remove_file(entry.path())?;
                    }
                }
            }
        }
        for f in [META_FILE, STATS_FILE] {
            let p = root.join(f);
            if p.exists() {
                fs::remove_file(p)?;
            }
        }
        OutputLayout::create(root)
    }

    /// Opens an existing layout; every directory must be present.
    pub fn open(root: &Path) -> Result<OutputLayout> {
        for d in Disposition::ALL {
            let dir = root.join(d.dir_name());
            if !dir.is_dir() {
                return Err(Error::Structure(format!("missing directory {}", dir.display())));
            }
        }
        let mut layout = OutputLayout { root: root.to_path_buf(), counter: 0, meta: BTreeMap::new() };
        layout.load_meta()?;
        let max_id = layout.enumerate_quiet(&Selection::All)?.iter().map(|t| t.id).max().unwrap_or(0);
        layout.counter = layout.counter.max(max_id);
        Ok(layout)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn dir(&self, d: Disposition) -> PathBuf {
        self.root.join(d.dir_name())
    }

    pub fn stats_path(&self) -> PathBuf {
        self.root.join(STATS_FILE)
    }

    /// Id of the most recently saved testcase.
    pub fn counter(&self) -> u64 {
        self.counter
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.get(key).map(String::as_str)
    }

    pub fn set_meta(&mut self, key: &str, value: impl Into<String>) -> Result<()> {
        self.meta.insert(key.to_string(), value.into());
        self.write_meta()
    }

    fn load_meta(&mut self) -> Result<()> {
        let p = self.root.join(META_FILE);
        if !p.exists() {
            return Ok(());
        }
        for line in fs::read_to_string(&p)?.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Structure(format!("{}: bad line {:?}", p.display(), line)))?;
            self.meta.insert(k.trim().to_string(), v.trim().to_string());
        }
        if let Some(c) = self.meta.get("counter") {
            self.counter = c.parse().map_err(|_| Error::Structure(format!("{}: bad counter {:?}", p.display(), c)))?;
        }
        Ok(())
    }

    fn write_meta(&mut self) -> Result<()> {
        self.meta.insert("counter".into(), self.counter.to_string());
        let mut text = String::new();
        for (k, v) in &self.meta {
            text.push_str(&format!("{}={}\n", k, v));
        }
        write_atomic(&self.root, &self.root.join(META_FILE), text.as_bytes())
    }

    /// Writes `tc` into the directory for `disposition` under the next id.
    pub fn save_testcase(&mut self, tc: &TestCase, disposition: Disposition) -> Result<PathBuf> {
        let id = self.counter + 1;
        let path = self.dir(disposition).join(testcase_file_name(id, tc.parent, &tc.op));
        write_atomic(&self.root, &path, &tc.data)?;
        self.counter = id;
        self.write_meta()?;
        Ok(path)
    }

    /// Testcases of the selected directories in id order. Queue-only
    /// selection logs a deprecation warning.
    pub fn enumerate(&self, selection: &Selection) -> Result<Vec<StoredTestCase>> {
        if *selection == Selection::QueueOnly {
            Warning::QueueOnlyEvaluation.emit();
        }
        self.enumerate_quiet(selection)
    }

    fn enumerate_quiet(&self, selection: &Selection) -> Result<Vec<StoredTestCase>> {
        let mut out = Vec::new();
        for d in selection.dispositions() {
            let dir = self.dir(d);
            if !dir.is_dir() {
                return Err(Error::Structure(format!("missing directory {}", dir.display())));
            }
            for entry in fs::read_dir(&dir)? {
                let entry = entry?;
                let name = entry.file_name().to_string_lossy().into_owned();
                let Some((id, parent, op)) = parse_file_name(&name) else {
                    log::debug!("ignoring {}", entry.path().display());
                    continue;
                };
                let data = fs::read(entry.path())?;
                out.push(StoredTestCase { id, parent, op, disposition: d, path: entry.path(), data });
            }
        }
        out.sort_by_key(|t| t.id);
        Ok(out)
    }
}

/// Writes through a temporary file in `scratch_dir` and renames into place,
/// so a failed write leaves no partial file behind.
fn write_atomic(scratch_dir: &Path, dest: &Path, data: &[u8]) -> Result<()> {
    let tmp = scratch_dir.join(format!(".tmp-{}-{}", std::process::id(), dest.file_name().unwrap().to_string_lossy()));
    let res = (|| -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(data)?;
        f.flush()?;
        fs::rename(&tmp, dest)
    })();
    if let Err(e) = res {
        let _ = fs::remove_file(&tmp);
        return Err(e.into());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tc(data: &[u8], class: LengthClass) -> TestCase {
        TestCase { data: data.to_vec(), parent: 3, op: "grad".into(), class }
    }

    #[test]
    fn routing_table() {
        let dir = tempfile::tempdir().unwrap();
        let mut l = OutputLayout::create(dir.path()).unwrap();
        let cases = [
            (Disposition::NewEdgeFixed, "NEUZZ_out"),
            (Disposition::NewEdgeVariant, "vari_seed"),
            (Disposition::Crash, "crash"),
            (Disposition::Hang, "hang"),
        ];
        for (d, name) in cases {
            let p = l.save_testcase(&tc(b"x", LengthClass::Fixed), d).unwrap();
            assert_eq!(p.parent().unwrap().file_name().unwrap(), name);
        }
    }

    #[test]
    fn counters_increase_and_names_encode_provenance() {
        let dir = tempfile::tempdir().unwrap();
        let mut l = OutputLayout::create(dir.path()).unwrap();
        let a = l.save_testcase(&tc(b"a", LengthClass::Fixed), Disposition::NewEdgeFixed).unwrap();
        let b = l.save_testcase(&tc(b"b", LengthClass::Fixed), Disposition::NewEdgeFixed).unwrap();
        let na = a.file_name().unwrap().to_string_lossy().into_owned();
        let nb = b.file_name().unwrap().to_string_lossy().into_owned();
        assert_eq!(na, "id:000001,src:000003,op:grad");
        assert_eq!(parse_file_name(&nb), Some((2, 3, "grad".to_string())));
        assert!(na < nb);
    }

    #[test]
    fn enumerate_counts_and_order() {
        let dir = tempfile::tempdir().unwrap();
        let mut l = OutputLayout::create(dir.path()).unwrap();
        assert!(l.enumerate(&Selection::All).unwrap().is_empty());
        for i in 0..5u8 {
            let d = if i % 2 == 0 { Disposition::NewEdgeFixed } else { Disposition::NewEdgeVariant };
            l.save_testcase(&tc(&[i], LengthClass::Fixed), d).unwrap();
        }
        let all = l.enumerate(&Selection::All).unwrap();
        assert_eq!(all.len(), 5);
        assert!(all.windows(2).all(|w| w[0].id < w[1].id));
        assert_eq!(l.enumerate(&Selection::QueueOnly).unwrap().len(), 3);
    }

    #[test]
    fn missing_directory_is_named() {
        let dir = tempfile::tempdir().unwrap();
        OutputLayout::create(dir.path()).unwrap();
        fs::remove_dir(dir.path().join("vari_seed")).unwrap();
        let err = OutputLayout::open(dir.path()).unwrap_err();
        assert!(matches!(&err, Error::Structure(m) if m.contains("vari_seed")), "{}", err);
    }

    #[test]
    fn reopen_resumes_counter_and_fresh_resets() {
        let dir = tempfile::tempdir().unwrap();
        let mut l = OutputLayout::create(dir.path()).unwrap();
        l.save_testcase(&tc(b"a", LengthClass::Fixed), Disposition::Crash).unwrap();
        let mut l2 = OutputLayout::create(dir.path()).unwrap();
        assert_eq!(l2.counter(), 1);
        let p = l2.save_testcase(&tc(b"b", LengthClass::Fixed), Disposition::Hang).unwrap();
        assert!(p.to_string_lossy().contains("id:000002"));
        let l3 = OutputLayout::create_fresh(dir.path()).unwrap();
        assert_eq!(l3.counter(), 0);
        assert!(l3.enumerate(&Selection::All).unwrap().is_empty());
    }

    #[test]
    fn failed_save_leaves_nothing_behind() {
        let dir = tempfile::tempdir().unwrap();
        let mut l = OutputLayout::create(dir.path()).unwrap();
        fs::remove_dir(dir.path().join("crash")).unwrap();
        assert!(l.save_testcase(&tc(b"zz", LengthClass::Fixed), Disposition::Crash).is_err());
        assert_eq!(l.counter(), 0);
        let leftovers: Vec<_> = fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
            .filter(|n| n.starts_with(".tmp"))
            .collect();
        assert!(leftovers.is_empty(), "{:?}", leftovers);
    }

    proptest! {
        #[test]
        fn saved_bytes_round_trip_and_all_is_disjoint_union(
            items in proptest::collection::vec((proptest::collection::vec(any::<u8>(), 0..64), 0usize..4), 0..12)
        ) {
            let dir = tempfile::tempdir().unwrap();
            let mut l = OutputLayout::create(dir.path()).unwrap();
            for (data, d) in &items {
                l.save_testcase(&tc(data, LengthClass::Fixed), Disposition::ALL[*d]).unwrap();
            }
            let all = l.enumerate(&Selection::All).unwrap();
            prop_assert_eq!(all.len(), items.len());
            for (stored, (data, d)) in all.iter().zip(items.iter()) {
                prop_assert_eq!(&stored.data, data);
                prop_assert_eq!(stored.disposition, Disposition::ALL[*d]);
            }
            let per_dir: usize = Disposition::ALL
                .iter()
                .map(|d| l.enumerate(&Selection::Only(vec![*d])).unwrap().len())
                .sum();
            prop_assert_eq!(per_dir, all.len());
        }
    }
}
