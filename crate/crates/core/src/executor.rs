//! Fuzzer side of persistent mode: the handshake, both testcase transmission
//! paths, and throughput measurement.

use std::fmt;
use std::fs;
use std::io::ErrorKind;
use std::os::unix::process::ExitStatusExt;
use std::path::PathBuf;
use std::process::{Child, Command, ExitStatus, Stdio};
use std::time::{Duration, Instant};

use wait_timeout::ChildExt;

use crate::channel::{SharedRegion, StatusLog, PAYLOAD_CAPACITY, STATUS_IDLE, STATUS_INPUT_READY, STATUS_RESULT_READY};
use crate::coverage::{CoverageMap, Scheme};
use crate::error::{Error, Result, Warning};
use crate::target_runtime::rt::{self, Cov, CovScheme, TargetSpec};
use crate::target_runtime::{TargetProgram, PERSISTENT_MARKER};

/// Default wall-clock limit after which an execution counts as a hang.
pub const DEFAULT_HANG_TIMEOUT: Duration = Duration::from_millis(200);

const LAUNCH_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    Persistent,
    Fork,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Persistent => "persistent",
            Mode::Fork => "fork",
        }
    }

    pub fn parse(s: &str) -> Option<Mode> {
        match s {
            "persistent" => Some(Mode::Persistent),
            "fork" => Some(Mode::Fork),
            _ => None,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ExecStatus {
    Ok,
    Crash,
    Hang,
}

#[derive(Clone, Debug)]
pub struct ExecResult {
    pub status: ExecStatus,
    pub coverage: CoverageMap,
    pub duration: Duration,
}

/// Anything that can run one testcase and report its coverage.
pub trait Execute {
    fn execute(&mut self, input: &[u8]) -> Result<ExecResult>;
    fn scheme(&self) -> Scheme;
}

/// True iff the executable carries the persistent capability marker.
pub fn check_binary(target: &TargetProgram) -> Result<bool> {
    let bytes = fs::read(&target.path)?;
    Ok(bytes.windows(PERSISTENT_MARKER.len()).any(|w| w == PERSISTENT_MARKER))
}

/// Outcome of the persistent-mode handshake.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Handshake {
    pub requested: Mode,
    pub capable: bool,
    /// The synchronization state variable.
    pub is_persistent: bool,
    pub downgraded: bool,
}

impl Handshake {
    pub fn effective_mode(&self) -> Mode {
        if self.is_persistent {
            Mode::Persistent
        } else {
            Mode::Fork
        }
    }
}

impl fmt::Display for Handshake {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "mode={} (requested={}, capable={})",
            self.effective_mode(),
            self.requested,
            if self.capable { "yes" } else { "no" }
        )
    }
}

pub fn resolve_handshake(requested: Mode, capable: bool) -> Handshake {
    let is_persistent = requested == Mode::Persistent && capable;
    Handshake { requested, capable, is_persistent, downgraded: requested == Mode::Persistent && !capable }
}

#[derive(Clone, Debug)]
pub struct SessionOptions {
    pub scheme: Scheme,
    pub hang_timeout: Duration,
    /// Exported to targets as `FF_SPAWN_LOG`; each process appends one
    /// `spawn` line at start and one `body` line per testcase.
    pub spawn_log: Option<PathBuf>,
    /// Record the status words observed on the channel.
    pub record_status: bool,
}

impl Default for SessionOptions {
    fn default() -> Self {
        SessionOptions { scheme: Scheme::CollisionFree, hang_timeout: DEFAULT_HANG_TIMEOUT, spawn_log: None, record_status: false }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SessionStats {
    pub execs: u64,
    pub spawns: u64,
    pub crashes: u64,
    pub hangs: u64,
}

struct Resident {
    region: SharedRegion,
    child: Child,
}

struct ForkIo {
    _dir: tempfile::TempDir,
    input: PathBuf,
    coverage: PathBuf,
}

/// One target, one execution mode, one owner.
pub struct ExecSession {
    target: TargetProgram,
    requested_mode: Mode,
    handshake: Handshake,
    resident: Option<Resident>,
    fork_io: Option<ForkIo>,
    options: SessionOptions,
    warnings: Vec<Warning>,
    stats: SessionStats,
    started: Instant,
    broken: bool,
    status_log: StatusLog,
}

/// Sets up a session. The handshake assignment here is the one statement
/// persistent mode hinges on: skip it and every session silently forks.
pub fn init_session(target: &TargetProgram, requested_mode: Mode, options: SessionOptions) -> Result<ExecSession> {
    let capable = check_binary(target)?;
    let handshake = resolve_handshake(requested_mode, capable);
    let mut warnings = Vec::new();
    if handshake.downgraded {
        warnings.push(Warning::ModeDowngraded { target: target.path.clone() }.emit());
    }
    let mut session = ExecSession {
        target: target.clone(),
        requested_mode,
        handshake,
        resident: None,
        fork_io: None,
        options,
        warnings,
        stats: SessionStats::default(),
        started: Instant::now(),
        broken: false,
        status_log: StatusLog::default(),
    };
    if handshake.is_persistent {
        let region = SharedRegion::create()?;
        let child = session.launch_resident(&region)?;
        session.resident = Some(Resident { region, child });
    } else {
        let dir = tempfile::Builder::new().prefix("ffuzz-exec").tempdir()?;
        session.fork_io = Some(ForkIo { input: dir.path().join("cur_input"), coverage: dir.path().join("cur_cov"), _dir: dir });
    }
    session.started = Instant::now();
    Ok(session)
}

/// One fresh fork-mode process for one input.
pub fn run_target_once(target: &TargetProgram, input: &[u8], options: SessionOptions) -> Result<ExecResult> {
    if !target.path.is_file() {
        return Err(Error::Launch { path: target.path.clone(), reason: "no such executable".into() });
    }
    let mut s = init_session(target, Mode::Fork, options)?;
    s.execute(input)
}

fn base_command(target: &TargetProgram, options: &SessionOptions) -> Command {
    let mut cmd = Command::new(&target.path);
    cmd.stdin(Stdio::null()).stdout(Stdio::null()).stderr(Stdio::null());
    for var in [rt::ENV_PERSISTENT, rt::ENV_SHM_ID, rt::ENV_COV_FILE, rt::ENV_SPAWN_LOG] {
        cmd.env_remove(var);
    }
    cmd.env(rt::ENV_COV_SCHEME, options.scheme.env_value());
    if let Some(log) = &options.spawn_log {
        cmd.env(rt::ENV_SPAWN_LOG, log);
    }
    cmd
}

fn is_crash(status: ExitStatus) -> bool {
    status.signal().is_some()
}

impl ExecSession {
    pub fn target(&self) -> &TargetProgram {
        &self.target
    }

    pub fn requested_mode(&self) -> Mode {
        self.requested_mode
    }

    pub fn is_persistent(&self) -> bool {
        self.handshake.is_persistent
    }

    pub fn handshake(&self) -> Handshake {
        self.handshake
    }

    pub fn warnings(&self) -> &[Warning] {
        &self.warnings
    }

    pub fn stats(&self) -> SessionStats {
        self.stats
    }

    pub fn has_channel(&self) -> bool {
        self.resident.is_some()
    }

    pub fn has_temp_input(&self) -> bool {
        self.fork_io.is_some()
    }

    /// Time since the session finished initializing.
    pub fn uptime(&self) -> Duration {
        self.started.elapsed()
    }

    pub fn options(&self) -> &SessionOptions {
        &self.options
    }

    pub fn status_log(&self) -> &StatusLog {
        &self.status_log
    }

    /// Pid of the resident target process in persistent mode.
    pub fn resident_pid(&self) -> Option<u32> {
        self.resident.as_ref().map(|r| r.child.id())
    }

    fn launch_resident(&mut self, region: &SharedRegion) -> Result<Child> {
        region.channel().set_status(rt::STATUS_UNATTACHED);
        let mut cmd = base_command(&self.target, &self.options);
        cmd.env(rt::ENV_PERSISTENT, "1").env(rt::ENV_SHM_ID, region.id().expect("file-backed region"));
        let mut child = cmd
            .spawn()
            .map_err(|e| Error::Launch { path: self.target.path.clone(), reason: e.to_string() })?;
        self.stats.spawns += 1;
        let start = Instant::now();
        let mut rounds = 0u32;
        loop {
            if region.channel().status() == STATUS_IDLE {
                break;
            }
            if let Some(st) = child.try_wait()? {
                return Err(Error::Launch {
                    path: self.target.path.clone(),
                    reason: format!("exited before attaching to the channel ({})", st),
                });
            }
            if start.elapsed() > LAUNCH_TIMEOUT {
                let _ = child.kill();
                let _ = child.wait();
                return Err(Error::Launch { path: self.target.path.clone(), reason: "never attached to the channel".into() });
            }
            rt::backoff(&mut rounds);
        }
        if self.options.record_status {
            self.status_log.observe(rt::STATUS_UNATTACHED);
            self.status_log.observe(STATUS_IDLE);
        }
        Ok(child)
    }

    /// Kills any resident process and starts over.
    pub fn reinitialize(&mut self) -> Result<()> {
        if let Some(mut res) = self.resident.take() {
            let _ = res.child.kill();
            let _ = res.child.wait();
            let child = self.launch_resident(&res.region)?;
            res.child = child;
            self.resident = Some(res);
        }
        self.broken = false;
        Ok(())
    }

    fn execute_persistent(&mut self, input: &[u8]) -> Result<ExecResult> {
        let scheme = self.options.scheme;
        let hang_timeout = self.options.hang_timeout;
        let record = self.options.record_status;
        let res = self.resident.as_mut().expect("persistent session has a channel");
        if let Some(st) = res.child.try_wait()? {
            self.broken = true;
            return Err(Error::SessionBroken(format!("resident process exited ({})", st)));
        }
        let ch = res.region.channel();
        ch.write_input(input);
        ch.set_exec_status(rt::EXEC_OK);
        ch.set_status(STATUS_INPUT_READY);
        if record {
            self.status_log.observe(STATUS_INPUT_READY);
        }
        let start = Instant::now();
        let mut rounds = 0u32;
        let status = loop {
            if ch.status() == STATUS_RESULT_READY {
                break if ch.exec_status() == rt::EXEC_OK { ExecStatus::Ok } else { ExecStatus::Crash };
            }
            if rounds % 16 == 15 {
                if res.child.try_wait()?.is_some() {
                    break ExecStatus::Crash;
                }
                if start.elapsed() > hang_timeout {
                    let _ = res.child.kill();
                    let _ = res.child.wait();
                    break ExecStatus::Hang;
                }
            }
            rt::backoff(&mut rounds);
        };
        let duration = start.elapsed().max(Duration::from_micros(1));
        let coverage = CoverageMap::from_cells(scheme, ch.coverage())?;
        match status {
            ExecStatus::Ok => {
                if record {
                    self.status_log.observe(STATUS_RESULT_READY);
                }
                ch.set_status(STATUS_IDLE);
                if record {
                    self.status_log.observe(STATUS_IDLE);
                }
            }
            ExecStatus::Crash | ExecStatus::Hang => {
                let mut res = self.resident.take().expect("resident");
                match self.launch_resident(&res.region) {
                    Ok(child) => {
                        res.child = child;
                        self.resident = Some(res);
                    }
                    Err(e) => {
                        self.resident = Some(res);
                        self.broken = true;
                        return Err(Error::SessionBroken(format!("relaunch after {:?} failed: {}", status, e)));
                    }
                }
            }
        }
        Ok(ExecResult { status, coverage, duration })
    }

    fn execute_fork(&mut self, input: &[u8]) -> Result<ExecResult> {
        let io = self.fork_io.as_ref().expect("fork session has temp paths");
        fs::write(&io.input, input)?;
        match fs::remove_file(&io.coverage) {
            Err(e) if e.kind() != ErrorKind::NotFound => return Err(e.into()),
            _ => {}
        }
        let mut cmd = base_command(&self.target, &self.options);
        cmd.arg(&io.input).env(rt::ENV_COV_FILE, &io.coverage);
        let start = Instant::now();
        let mut child = cmd
            .spawn()
            .map_err(|e| Error::Launch { path: self.target.path.clone(), reason: e.to_string() })?;
        self.stats.spawns += 1;
        let status = match child.wait_timeout(self.options.hang_timeout)? {
            Some(st) if is_crash(st) => ExecStatus::Crash,
            Some(st) => match st.code() {
                Some(rt::EXIT_NO_INPUT) => {
                    return Err(Error::Launch { path: self.target.path.clone(), reason: "target could not read its input file".into() })
                }
                Some(rt::EXIT_SETUP) => {
                    return Err(Error::Launch { path: self.target.path.clone(), reason: "target could not map its coverage file".into() })
                }
                _ => ExecStatus::Ok,
            },
            None => {
                let _ = child.kill();
                let _ = child.wait();
                ExecStatus::Hang
            }
        };
        let duration = start.elapsed().max(Duration::from_micros(1));
        let coverage = match fs::read(&io.coverage) {
            Ok(bytes) => match CoverageMap::from_bytes(&bytes) {
                Ok(m) => m,
                Err(_) if status != ExecStatus::Ok => CoverageMap::new(self.options.scheme),
                Err(e) => return Err(e),
            },
            Err(_) if status != ExecStatus::Ok => CoverageMap::new(self.options.scheme),
            Err(e) => return Err(e.into()),
        };
        if coverage.scheme() != self.options.scheme {
            return Err(Error::Format(format!("target wrote a {} map, session expects {}", coverage.scheme(), self.options.scheme)));
        }
        Ok(ExecResult { status, coverage, duration })
    }
}

impl Execute for ExecSession {
    fn execute(&mut self, input: &[u8]) -> Result<ExecResult> {
        if input.len() > PAYLOAD_CAPACITY {
            return Err(Error::Size { len: input.len(), capacity: PAYLOAD_CAPACITY });
        }
        if self.broken {
            return Err(Error::SessionBroken("session was not re-initialized".into()));
        }
        let r = if self.handshake.is_persistent { self.execute_persistent(input)? } else { self.execute_fork(input)? };
        self.stats.execs += 1;
        match r.status {
            ExecStatus::Crash => self.stats.crashes += 1,
            ExecStatus::Hang => self.stats.hangs += 1,
            ExecStatus::Ok => {}
        }
        Ok(r)
    }

    fn scheme(&self) -> Scheme {
        self.options.scheme
    }
}

impl Drop for ExecSession {
    fn drop(&mut self) {
        if let Some(res) = self.resident.as_mut() {
            res.region.channel().set_status(rt::STATUS_SHUTDOWN);
            if !matches!(res.child.wait_timeout(Duration::from_millis(200)), Ok(Some(_))) {
                let _ = res.child.kill();
                let _ = res.child.wait();
            }
        }
    }
}

/// Runs a toy target's logic inside the current process. Planted faults are
/// recorded rather than executed. Used as an oracle for the process-based
/// paths and for fast tests.
pub struct InProcessExecutor {
    spec: &'static TargetSpec,
    scheme: Scheme,
    pub execs: u64,
}

impl InProcessExecutor {
    pub fn new(spec: &'static TargetSpec, scheme: Scheme) -> InProcessExecutor {
        InProcessExecutor { spec, scheme, execs: 0 }
    }
}

impl Execute for InProcessExecutor {
    fn execute(&mut self, input: &[u8]) -> Result<ExecResult> {
        let start = Instant::now();
        let mut cells = vec![0u8; rt::MAP_SIZE];
        let cov_scheme = match self.scheme {
            Scheme::XorHash => CovScheme::Xor,
            Scheme::CollisionFree => CovScheme::Uniform,
        };
        let fault = {
            let mut cov = Cov::recording(&mut cells, cov_scheme, self.spec);
            (self.spec.run)(input, &mut cov);
            cov.fault()
        };
        self.execs += 1;
        let status = match fault {
            None => ExecStatus::Ok,
            Some(rt::Fault::Crash) => ExecStatus::Crash,
            Some(rt::Fault::Hang) => ExecStatus::Hang,
        };
        Ok(ExecResult {
            status,
            coverage: CoverageMap::from_cells(self.scheme, &cells)?,
            duration: start.elapsed().max(Duration::from_micros(1)),
        })
    }

    fn scheme(&self) -> Scheme {
        self.scheme
    }
}

/// Steady-state throughput of a session.
#[derive(Clone, Debug)]
pub struct Throughput {
    pub execs: u64,
    pub elapsed: Duration,
    pub execs_per_sec: f64,
    pub p50: Duration,
    pub p90: Duration,
    pub p99: Duration,
    pub max: Duration,
}

/// Executes `corpus` round-robin until `duration` has elapsed (at least one
/// execution). Session setup is not part of the window.
pub fn measure_throughput<E: Execute>(session: &mut E, corpus: &[Vec<u8>], duration: Duration) -> Result<Throughput> {
    if corpus.is_empty() {
        return Err(Error::Usage("throughput corpus is empty".into()));
    }
    if duration.is_zero() {
        return Err(Error::Usage("throughput window must be positive".into()));
    }
    let mut latencies = Vec::new();
    let start = Instant::now();
    let mut i = 0usize;
    loop {
        let t = Instant::now();
        session.execute(&corpus[i % corpus.len()])?;
        latencies.push(t.elapsed());
        i += 1;
        if start.elapsed() >= duration {
            break;
        }
    }
    let elapsed = start.elapsed();
    latencies.sort_unstable();
    let pct = |p: f64| latencies[(((latencies.len() - 1) as f64) * p).round() as usize];
    Ok(Throughput {
        execs: latencies.len() as u64,
        elapsed,
        execs_per_sec: latencies.len() as f64 / elapsed.as_secs_f64(),
        p50: pct(0.50),
        p90: pct(0.90),
        p99: pct(0.99),
        max: *latencies.last().unwrap(),
    })
}
