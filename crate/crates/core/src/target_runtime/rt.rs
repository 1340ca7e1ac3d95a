//! Runtime linked into every toy target.
//!
//! This file is compiled twice: as a module of the fuzzer library (so the
//! loop and the instrumentation can be exercised in-process), and verbatim
//! into each standalone target executable by `build_targets`. It must stay
//! std-only and must not reference anything outside itself.

#![allow(dead_code)]

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::os::raw::{c_int, c_void};
use std::os::unix::io::AsRawFd;
use std::sync::atomic::{AtomicU32, Ordering};
use std::time::Duration;

/// Number of cells in a coverage map.
pub const MAP_SIZE: usize = 1 << 16;

/// Capacity of the input payload area of the shared channel.
pub const PAYLOAD_CAPACITY: usize = 1 << 20;

pub const OFF_STATUS: usize = 0;
pub const OFF_EXEC_STATUS: usize = 4;
pub const OFF_INPUT_LEN: usize = 8;
pub const OFF_PAYLOAD: usize = 16;
pub const OFF_COVERAGE: usize = OFF_PAYLOAD + PAYLOAD_CAPACITY;
pub const CHANNEL_SIZE: usize = OFF_COVERAGE + MAP_SIZE;

/// Status word values. Zero means no target has attached to the region yet.
pub const STATUS_UNATTACHED: u32 = 0;
pub const STATUS_IDLE: u32 = 1;
pub const STATUS_INPUT_READY: u32 = 2;
pub const STATUS_RESULT_READY: u32 = 3;
pub const STATUS_SHUTDOWN: u32 = 4;

pub const EXEC_OK: u32 = 0;
pub const EXEC_CRASH: u32 = 1;
pub const EXEC_HANG: u32 = 2;

pub const ENV_PERSISTENT: &str = "FF_PERSISTENT";
pub const ENV_SHM_ID: &str = "FF_SHM_ID";
pub const ENV_COV_FILE: &str = "FF_COV_FILE";
pub const ENV_COV_SCHEME: &str = "FF_COV_SCHEME";
pub const ENV_SPAWN_LOG: &str = "FF_SPAWN_LOG";

pub const COV_MAGIC: &[u8; 8] = b"FFCOVMAP";
pub const COV_HEADER_LEN: usize = 13;
pub const SCHEME_TAG_XOR: u8 = 0;
pub const SCHEME_TAG_UNIFORM: u8 = 1;

/// Exit code for a missing or unreadable input file.
pub const EXIT_NO_INPUT: i32 = 66;
/// Exit code for a failure to set up the coverage file or the channel.
pub const EXIT_SETUP: i32 = 70;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CovScheme {
    Xor,
    Uniform,
}

impl CovScheme {
    pub fn tag(self) -> u8 {
        match self {
            CovScheme::Xor => SCHEME_TAG_XOR,
            CovScheme::Uniform => SCHEME_TAG_UNIFORM,
        }
    }

    pub fn from_env_value(v: &str) -> Option<CovScheme> {
        match v {
            "xor" => Some(CovScheme::Xor),
            "uniform" => Some(CovScheme::Uniform),
            _ => None,
        }
    }
}

/// Static description of one toy target.
pub struct TargetSpec {
    pub name: &'static str,
    /// Number of instrumented basic blocks; ids are `0..blocks`.
    pub blocks: u32,
    /// Seed for the per-block random labels used by the XOR-hash scheme.
    pub label_salt: u64,
    pub run: fn(&[u8], &mut Cov),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    Crash,
    Hang,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum FaultMode {
    Abort,
    Record,
}

/// AFL-style compile-time label of a block: a fixed pseudo-random value in
/// `0..MAP_SIZE`.
pub fn block_label(salt: u64, id: u32) -> u32 {
    let mut z = salt ^ (id as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z as u32) & (MAP_SIZE as u32 - 1)
}

/// Collision-free edge id of the transition `prev -> cur`. The entry
/// pseudo-block is `blocks`, so ids are unique for every pair and fit the map
/// as long as `(blocks + 1)^2 <= MAP_SIZE`.
pub fn uniform_edge_id(blocks: u32, prev: u32, cur: u32) -> usize {
    prev as usize * (blocks as usize + 1) + cur as usize
}

/// Per-execution coverage recorder handed to a target's `run` function.
pub struct Cov<'a> {
    cells: &'a mut [u8],
    scheme: CovScheme,
    blocks: u32,
    salt: u64,
    prev: u32,
    prev_label: u32,
    mode: FaultMode,
    fault: Option<Fault>,
}

impl<'a> Cov<'a> {
    /// Recorder for a real target process: planted faults abort or spin.
    pub fn new(cells: &'a mut [u8], scheme: CovScheme, spec: &TargetSpec) -> Cov<'a> {
        Cov::with_mode(cells, scheme, spec, FaultMode::Abort)
    }

    /// Recorder for in-process execution: planted faults are recorded and
    /// the target returns instead of dying.
    pub fn recording(cells: &'a mut [u8], scheme: CovScheme, spec: &TargetSpec) -> Cov<'a> {
        Cov::with_mode(cells, scheme, spec, FaultMode::Record)
    }

    fn with_mode(cells: &'a mut [u8], scheme: CovScheme, spec: &TargetSpec, mode: FaultMode) -> Cov<'a> {
        assert!(cells.len() >= MAP_SIZE, "coverage area smaller than MAP_SIZE");
        assert!(
            (spec.blocks as usize + 1) * (spec.blocks as usize + 1) <= MAP_SIZE,
            "too many blocks for collision-free ids"
        );
        Cov {
            cells,
            scheme,
            blocks: spec.blocks,
            salt: spec.label_salt,
            prev: spec.blocks,
            prev_label: 0,
            mode,
            fault: None,
        }
    }

    #[inline]
    pub fn block(&mut self, id: u32) {
        debug_assert!(id < self.blocks, "block id {} out of range", id);
        let idx = match self.scheme {
            CovScheme::Xor => {
                let cur = block_label(self.salt, id);
                let idx = (cur ^ (self.prev_label >> 1)) as usize & (MAP_SIZE - 1);
                self.prev_label = cur;
                idx
            }
            CovScheme::Uniform => uniform_edge_id(self.blocks, self.prev, id),
        };
        self.prev = id;
        let cell = &mut self.cells[idx];
        *cell = cell.saturating_add(1);
    }

    /// The planted abort.
    pub fn crash(&mut self) {
        match self.mode {
            FaultMode::Abort => std::process::abort(),
            FaultMode::Record => self.fault = Some(Fault::Crash),
        }
    }

    /// The planted infinite loop. `id` is the loop body block.
    pub fn hang(&mut self, id: u32) {
        match self.mode {
            FaultMode::Abort => loop {
                self.block(id);
                std::hint::spin_loop();
            },
            FaultMode::Record => {
                // Two iterations produce every edge the endless loop ever will.
                self.block(id);
                self.block(id);
                self.fault = Some(Fault::Hang);
            }
        }
    }

    pub fn fault(&self) -> Option<Fault> {
        self.fault
    }
}

/// View over a shared channel region laid out as described by the `OFF_*`
/// constants.
pub struct Channel {
    base: *mut u8,
}

unsafe impl Send for Channel {}
unsafe impl Sync for Channel {}

impl Channel {
    /// # Safety
    /// `base` must point to at least `CHANNEL_SIZE` writable bytes, 4-byte
    /// aligned, that stay mapped for the lifetime of the view.
    pub unsafe fn from_raw(base: *mut u8) -> Channel {
        Channel { base }
    }

    fn word(&self, off: usize) -> &AtomicU32 {
        unsafe { &*(self.base.add(off) as *const AtomicU32) }
    }

    pub fn status(&self) -> u32 {
        self.word(OFF_STATUS).load(Ordering::Acquire)
    }

    pub fn set_status(&self, s: u32) {
        self.word(OFF_STATUS).store(s, Ordering::Release)
    }

    pub fn exec_status(&self) -> u32 {
        self.word(OFF_EXEC_STATUS).load(Ordering::Acquire)
    }

    pub fn set_exec_status(&self, s: u32) {
        self.word(OFF_EXEC_STATUS).store(s, Ordering::Release)
    }

    pub fn input_len(&self) -> usize {
        (self.word(OFF_INPUT_LEN).load(Ordering::Acquire) as usize).min(PAYLOAD_CAPACITY)
    }

    /// Copies `data` into the payload area and records its length.
    pub fn write_input(&self, data: &[u8]) {
        assert!(data.len() <= PAYLOAD_CAPACITY);
        unsafe {
            std::ptr::copy_nonoverlapping(data.as_ptr(), self.base.add(OFF_PAYLOAD), data.len());
        }
        self.word(OFF_INPUT_LEN).store(data.len() as u32, Ordering::Release);
    }

    pub fn input(&self) -> &[u8] {
        unsafe { std::slice::from_raw_parts(self.base.add(OFF_PAYLOAD), self.input_len()) }
    }

    pub fn coverage(&self) -> &[u8] {
        unsafe { std::slice::from_raw_parts(self.base.add(OFF_COVERAGE), MAP_SIZE) }
    }

    /// # Safety
    /// The caller must be the only party touching the coverage area, which
    /// the status protocol guarantees for the target between INPUT_READY and
    /// RESULT_READY.
    #[allow(clippy::mut_from_ref)]
    pub unsafe fn coverage_mut(&self) -> &mut [u8] {
        std::slice::from_raw_parts_mut(self.base.add(OFF_COVERAGE), MAP_SIZE)
    }

    /// Waits until the status word satisfies `pred`: a short spin, then
    /// yielding, then sleeping once the wait has clearly become idle time.
    pub fn wait_status(&self, pred: impl Fn(u32) -> bool) -> u32 {
        let mut rounds = 0u32;
        loop {
            let s = self.status();
            if pred(s) {
                return s;
            }
            backoff(&mut rounds);
        }
    }
}

#[inline]
pub fn backoff(rounds: &mut u32) {
    *rounds = rounds.saturating_add(1);
    if *rounds < 64 {
        std::hint::spin_loop();
    } else if *rounds < 20_000 {
        std::thread::yield_now();
    } else {
        std::thread::sleep(Duration::from_micros(200));
    }
}

/// Program-side persistent loop. Attaches to the channel, then serves up to
/// `max_iters` inputs, each with a freshly zeroed coverage area. Returns the
/// number of completed iterations; stops early on SHUTDOWN.
pub fn persistent_loop(channel: &Channel, max_iters: u64, mut body: impl FnMut(&[u8], &mut [u8])) -> u64 {
    if channel.status() == STATUS_UNATTACHED {
        channel.set_status(STATUS_IDLE);
    }
    let mut done = 0u64;
    while done < max_iters {
        let s = channel.wait_status(|s| s == STATUS_INPUT_READY || s == STATUS_SHUTDOWN);
        if s == STATUS_SHUTDOWN {
            break;
        }
        // SAFETY: between INPUT_READY and RESULT_READY the target owns the
        // coverage area and the fuzzer only reads the status word.
        let cells = unsafe { channel.coverage_mut() };
        cells.fill(0);
        body(channel.input(), cells);
        channel.set_exec_status(EXEC_OK);
        channel.set_status(STATUS_RESULT_READY);
        done += 1;
    }
    done
}

extern "C" {
    fn mmap(addr: *mut c_void, len: usize, prot: c_int, flags: c_int, fd: c_int, off: i64) -> *mut c_void;
}

const PROT_READ: c_int = 1;
const PROT_WRITE: c_int = 2;
const MAP_SHARED: c_int = 1;

/// Maps `len` bytes of `file` shared and writable. The mapping is never
/// unmapped; targets hold it until exit.
fn map_shared(file: &File, len: usize) -> Option<*mut u8> {
    let p = unsafe { mmap(std::ptr::null_mut(), len, PROT_READ | PROT_WRITE, MAP_SHARED, file.as_raw_fd(), 0) };
    if p as isize == -1 || p.is_null() {
        None
    } else {
        Some(p as *mut u8)
    }
}

fn spawn_log(event: &str) {
    if let Ok(path) = std::env::var(ENV_SPAWN_LOG) {
        if let Ok(mut f) = OpenOptions::new().create(true).append(true).open(path) {
            let _ = writeln!(f, "{} {}", std::process::id(), event);
        }
    }
}

/// Creates the fork-mode coverage file with its header and maps the cells
/// so that coverage survives an abort or a kill.
fn map_cov_file(path: &str, scheme: CovScheme) -> Option<&'static mut [u8]> {
    let file = OpenOptions::new().read(true).write(true).create(true).truncate(true).open(path).ok()?;
    file.set_len((COV_HEADER_LEN + MAP_SIZE) as u64).ok()?;
    let base = map_shared(&file, COV_HEADER_LEN + MAP_SIZE)?;
    let all = unsafe { std::slice::from_raw_parts_mut(base, COV_HEADER_LEN + MAP_SIZE) };
    let (header, cells) = all.split_at_mut(COV_HEADER_LEN);
    header[..8].copy_from_slice(COV_MAGIC);
    header[8] = scheme.tag();
    header[9..13].copy_from_slice(&(MAP_SIZE as u32).to_le_bytes());
    Some(cells)
}

/// Entry point of every target executable. `persistent_capable` is true only
/// in builds that carry the capability marker.
pub fn target_main(spec: &TargetSpec, persistent_capable: bool) -> i32 {
    spawn_log("spawn");
    let scheme = std::env::var(ENV_COV_SCHEME)
        .ok()
        .and_then(|v| CovScheme::from_env_value(&v))
        .unwrap_or(CovScheme::Uniform);

    if persistent_capable && std::env::var(ENV_PERSISTENT).map(|v| v == "1").unwrap_or(false) {
        if let Ok(id) = std::env::var(ENV_SHM_ID) {
            let file = match OpenOptions::new().read(true).write(true).open(&id) {
                Ok(f) => f,
                Err(_) => return EXIT_SETUP,
            };
            let base = match map_shared(&file, CHANNEL_SIZE) {
                Some(b) => b,
                None => return EXIT_SETUP,
            };
            let channel = unsafe { Channel::from_raw(base) };
            let logging = std::env::var_os(ENV_SPAWN_LOG).is_some();
            persistent_loop(&channel, u64::MAX, |input, cells| {
                if logging {
                    spawn_log("body");
                }
                let mut cov = Cov::new(cells, scheme, spec);
                (spec.run)(input, &mut cov);
            });
            return 0;
        }
    }

    // Single-shot path: one input from argv[1], one body call, exit.
    let data = match std::env::args_os().nth(1).map(std::fs::read) {
        Some(Ok(d)) => d,
        _ => return EXIT_NO_INPUT,
    };
    let mut scratch;
    let cells: &mut [u8] = match std::env::var(ENV_COV_FILE) {
        Ok(path) => match map_cov_file(&path, scheme) {
            Some(c) => c,
            None => return EXIT_SETUP,
        },
        Err(_) => {
            scratch = vec![0u8; MAP_SIZE];
            &mut scratch
        }
    };
    spawn_log("body");
    let mut cov = Cov::new(cells, scheme, spec);
    (spec.run)(&data, &mut cov);
    0
}
