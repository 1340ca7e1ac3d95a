//! Fuzzer-side ownership of the shared testcase channel.
//!
//! The byte layout is defined once, in the target runtime, and shared with
//! every target build:
//!
//! | offset                | size       | field                         |
//! |-----------------------|------------|-------------------------------|
//! | 0                     | 4          | status word                   |
//! | 4                     | 4          | exec status                   |
//! | 8                     | 4          | input length                  |
//! | 16                    | 1 MiB      | input payload                 |
//! | 16 + 1 MiB            | `MAP_SIZE` | coverage snapshot             |
//!
//! All words are little-endian. The region is a file (under `/dev/shm` when
//! available) whose path is the identifier passed in `FF_SHM_ID`.

use std::fs::OpenOptions;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use memmap2::MmapMut;

use crate::error::Result;
use crate::target_runtime::rt::{self, Channel};

pub use rt::{
    CHANNEL_SIZE, OFF_COVERAGE, OFF_EXEC_STATUS, OFF_INPUT_LEN, OFF_PAYLOAD, OFF_STATUS, PAYLOAD_CAPACITY,
    STATUS_IDLE, STATUS_INPUT_READY, STATUS_RESULT_READY, STATUS_SHUTDOWN, STATUS_UNATTACHED,
};

static REGION_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Whether the status word may move from `from` to `to`. A reset to
/// UNATTACHED is the fuzzer relaunching a dead target.
pub fn valid_transition(from: u32, to: u32) -> bool {
    matches!(
        (from, to),
        (STATUS_UNATTACHED, STATUS_IDLE)
            | (STATUS_IDLE, STATUS_INPUT_READY)
            | (STATUS_INPUT_READY, STATUS_RESULT_READY)
            | (STATUS_RESULT_READY, STATUS_IDLE)
            | (STATUS_IDLE, STATUS_SHUTDOWN)
            | (STATUS_RESULT_READY, STATUS_SHUTDOWN)
            | (_, STATUS_UNATTACHED)
    )
}

/// Sequence of distinct status values observed by the fuzzer.
#[derive(Clone, Debug, Default)]
pub struct StatusLog {
    seen: Vec<u32>,
}

impl StatusLog {
    pub fn observe(&mut self, status: u32) {
        if self.seen.last() != Some(&status) {
            self.seen.push(status);
        }
    }

    pub fn sequence(&self) -> &[u32] {
        &self.seen
    }

    /// First out-of-order pair, if any.
    pub fn first_violation(&self) -> Option<(u32, u32)> {
        self.seen.windows(2).map(|w| (w[0], w[1])).find(|&(a, b)| !valid_transition(a, b))
    }
}

/// A mapped channel region. File-backed regions are removed on drop.
pub struct SharedRegion {
    map: MmapMut,
    path: Option<PathBuf>,
    view: Channel,
}

impl SharedRegion {
    /// Creates a zeroed file-backed region that a target process can map.
    pub fn create() -> Result<SharedRegion> {
        let dir = if Path::new("/dev/shm").is_dir() { PathBuf::from("/dev/shm") } else { std::env::temp_dir() };
        let n = REGION_COUNTER.fetch_add(1, Ordering::Relaxed);
        let path = dir.join(format!("ffuzz-{}-{}", std::process::id(), n));
        let file = OpenOptions::new().read(true).write(true).create(true).truncate(true).open(&path)?;
        file.set_len(CHANNEL_SIZE as u64)?;
        let mut map = unsafe { MmapMut::map_mut(&file)? };
        let view = unsafe { Channel::from_raw(map.as_mut_ptr()) };
        Ok(SharedRegion { map, path: Some(path), view })
    }

    /// Anonymous region for running both sides inside one process.
    pub fn anonymous() -> Result<SharedRegion> {
        let mut map = MmapMut::map_anon(CHANNEL_SIZE)?;
        let view = unsafe { Channel::from_raw(map.as_mut_ptr()) };
        Ok(SharedRegion { map, path: None, view })
    }

    /// Identifier exported to the target in `FF_SHM_ID`.
    pub fn id(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn channel(&self) -> &Channel {
        &self.view
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Raw little-endian word at `off`, for layout checks.
    pub fn word_at(&self, off: usize) -> u32 {
        u32::from_le_bytes(self.map[off..off + 4].try_into().unwrap())
    }
}

impl Drop for SharedRegion {
    fn drop(&mut self) {
        if let Some(p) = &self.path {
            let _ = std::fs::remove_file(p);
        }
    }
}
