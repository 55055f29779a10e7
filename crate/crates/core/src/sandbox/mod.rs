//! Controlled execution of one contestant script against one test case.
//!
//! Every execution gets a fresh scratch directory as its working directory and
//! runs in its own process group, so the whole tree can be killed on timeout or
//! when it floods stdout. Two backends share this interface:
//!
//! * `portable` needs no privileges: scratch dir, process-group kill, rlimits.
//! * `strict` additionally runs the script in a private mount namespace,
//!   chrooted into a skeleton of read-only bind mounts, as user `nobody`.
//!   When the host does not allow that, it degrades to `portable` and says so
//!   in its [`IsolationReport`].

mod limits;
mod strict;

use std::ffi::OsString;
use std::fs;
use std::io::{self, Read, Write};
use std::os::unix::process::{CommandExt, ExitStatusExt};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Arc};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

pub use limits::ResourceLimits;

use crate::pack::{FILES_PLACEHOLDER, INPUT_PLACEHOLDER};

/// Time allowed between the limit and the hard kill.
pub const GRACE: Duration = Duration::from_millis(2000);
/// SIGTERM to SIGKILL escalation delay, well inside [`GRACE`].
const TERM_GRACE: Duration = Duration::from_millis(100);
const POLL: Duration = Duration::from_millis(2);

pub const BACKEND_ENV: &str = "SHELLJUDGE_BACKEND";
const SCRIPT_NAME: &str = "script.sh";
const INPUT_NAME: &str = ".input";
const SAFE_PATH: &str = "/usr/local/bin:/usr/bin:/bin";

#[derive(Debug, thiserror::Error)]
pub enum SandboxError {
    #[error("sandbox setup failed: {0}")]
    SetupFailure(String),
}

impl SandboxError {
    fn setup(context: &str, err: impl std::fmt::Display) -> Self {
        SandboxError::SetupFailure(format!("{context}: {err}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    #[default]
    Portable,
    Strict,
}

impl Backend {
    /// Reads [`BACKEND_ENV`]; unset means portable.
    pub fn from_env() -> Result<Backend, String> {
        match std::env::var(BACKEND_ENV) {
            Ok(v) => v.parse(),
            Err(_) => Ok(Backend::Portable),
        }
    }
}

impl FromStr for Backend {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "portable" => Ok(Backend::Portable),
            "strict" => Ok(Backend::Strict),
            other => Err(format!("unknown sandbox backend `{other}` (expected portable or strict)")),
        }
    }
}

impl std::fmt::Display for Backend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Backend::Portable => "portable",
            Backend::Strict => "strict",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FsScope {
    /// Working directory is a private scratch dir; the rest of the host is visible.
    ScratchDirOnly,
    /// The script's root is a skeleton of read-only system dirs plus its scratch dir.
    RootChanged,
    /// Strict isolation was requested but could not be applied.
    Degraded,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IsolationReport {
    pub requested: Backend,
    pub effective: Backend,
    pub process_group_kill: bool,
    pub fs_scope: FsScope,
    pub rlimits: bool,
    pub privilege_drop: bool,
    pub applied_limits: Vec<(String, u64)>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KillReason {
    Timeout,
    OutputLimit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitKind {
    /// Exit code; death by signal N is reported as 128 + N, like the shell does.
    Exited(i32),
    Killed(KillReason),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecutionOutcome {
    pub status: ExitKind,
    pub stdout: Vec<u8>,
    pub stderr: Vec<u8>,
    pub wall_time_ms: u64,
    /// Set when scratch retention is on.
    pub retained_workdir: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct ExecutionSpec<'a> {
    pub script: &'a [u8],
    pub argv: &'a [String],
    pub stdin: &'a [u8],
    pub time_limit: Duration,
    pub output_limit: u64,
    /// Read-only shared data; substituted for `{FILES}` in argv.
    pub shared_files: Option<&'a Path>,
}

#[derive(Debug, Clone)]
pub struct SandboxConfig {
    pub backend: Backend,
    pub interpreter: PathBuf,
    /// Parent of the per-execution scratch directories.
    pub scratch_root: PathBuf,
    pub retain_scratch: bool,
    pub limits: ResourceLimits,
}

impl Default for SandboxConfig {
    fn default() -> Self {
        SandboxConfig {
            backend: Backend::Portable,
            interpreter: default_interpreter(),
            scratch_root: std::env::temp_dir(),
            retain_scratch: false,
            limits: ResourceLimits::default(),
        }
    }
}

fn default_interpreter() -> PathBuf {
    ["/bin/bash", "/usr/bin/bash", "/bin/sh"]
        .iter()
        .map(PathBuf::from)
        .find(|p| p.exists())
        .unwrap_or_else(|| PathBuf::from("/bin/sh"))
}

#[derive(Debug, Clone)]
pub struct Sandbox {
    config: SandboxConfig,
    strict_ok: bool,
}

impl Default for Sandbox {
    fn default() -> Self {
        Sandbox::new(SandboxConfig::default())
    }
}

impl Sandbox {
    pub fn new(config: SandboxConfig) -> Self {
        let strict_ok = config.backend == Backend::Strict && strict::available();
        if config.backend == Backend::Strict && !strict_ok {
            log::warn!("strict sandbox backend unavailable on this host; running portable");
        }
        Sandbox { config, strict_ok }
    }

    pub fn config(&self) -> &SandboxConfig {
        &self.config
    }

    pub fn effective_backend(&self) -> Backend {
        if self.strict_ok {
            Backend::Strict
        } else {
            Backend::Portable
        }
    }

    pub fn capabilities(&self) -> IsolationReport {
        let limits = self.config.limits.describe();
        match (self.config.backend, self.strict_ok) {
            (Backend::Portable, _) => IsolationReport {
                requested: Backend::Portable,
                effective: Backend::Portable,
                process_group_kill: true,
                fs_scope: FsScope::ScratchDirOnly,
                rlimits: true,
                privilege_drop: false,
                applied_limits: limits,
                warnings: portable_warnings(),
            },
            (Backend::Strict, true) => IsolationReport {
                requested: Backend::Strict,
                effective: Backend::Strict,
                process_group_kill: true,
                fs_scope: FsScope::RootChanged,
                rlimits: true,
                privilege_drop: true,
                applied_limits: limits,
                warnings: vec![
                    "no network or pid namespace; /proc is not mounted inside the root".into(),
                ],
            },
            (Backend::Strict, false) => {
                let mut warnings = vec![
                    "strict backend needs root and mount namespaces; filesystem scope degraded to the scratch directory".to_string(),
                ];
                warnings.extend(portable_warnings());
                IsolationReport {
                    requested: Backend::Strict,
                    effective: Backend::Portable,
                    process_group_kill: true,
                    fs_scope: FsScope::Degraded,
                    rlimits: true,
                    privilege_drop: false,
                    applied_limits: limits,
                    warnings,
                }
            }
        }
    }

    pub fn execute(&self, spec: &ExecutionSpec<'_>) -> Result<ExecutionOutcome, SandboxError> {
        if spec.time_limit.is_zero() {
            return Err(SandboxError::SetupFailure("time limit must be positive".into()));
        }
        let scratch = tempfile::Builder::new()
            .prefix("shelljudge-")
            .tempdir_in(&self.config.scratch_root)
            .map_err(|e| SandboxError::setup("creating scratch dir", e))?;

        let result = self.run_in(scratch.path(), spec);

        if self.config.retain_scratch {
            let kept = scratch.keep();
            return result.map(|mut o| {
                o.retained_workdir = Some(kept);
                o
            });
        }
        if self.strict_ok && strict::has_mounts_under(scratch.path()) {
            // never recurse into a live bind mount
            let kept = scratch.keep();
            log::error!("scratch {} still has mounts; leaving it in place", kept.display());
            return result;
        }
        if let Err(e) = scratch.close() {
            log::warn!("removing scratch dir: {e}");
        }
        result
    }

    fn run_in(&self, scratch: &Path, spec: &ExecutionSpec<'_>) -> Result<ExecutionOutcome, SandboxError> {
        let layout = if self.strict_ok {
            strict::prepare(scratch, spec.shared_files)?
        } else {
            Layout {
                host_workdir: scratch.to_path_buf(),
                visible_workdir: scratch.to_path_buf(),
                chroot: None,
            }
        };

        let script_host = layout.host_workdir.join(SCRIPT_NAME);
        fs::write(&script_host, spec.script).map_err(|e| SandboxError::setup("writing script", e))?;
        let uses_input = spec.argv.iter().any(|a| a.contains(INPUT_PLACEHOLDER));
        if uses_input {
            fs::write(layout.host_workdir.join(INPUT_NAME), spec.stdin)
                .map_err(|e| SandboxError::setup("writing input file", e))?;
        }
        if layout.chroot.is_some() {
            strict::hand_over(&layout.host_workdir)?;
        }

        let files = spec
            .shared_files
            .map(|p| p.to_string_lossy().into_owned())
            .unwrap_or_default();
        let input = layout.visible_workdir.join(INPUT_NAME).to_string_lossy().into_owned();
        let argv: Vec<String> = spec
            .argv
            .iter()
            .map(|a| a.replace(FILES_PLACEHOLDER, &files).replace(INPUT_PLACEHOLDER, &input))
            .collect();

        let mut cmd = Command::new(&self.config.interpreter);
        cmd.arg(layout.visible_workdir.join(SCRIPT_NAME))
            .args(&argv)
            .env_clear()
            .env("PATH", SAFE_PATH)
            .env("HOME", &layout.visible_workdir)
            .env("LC_ALL", "C")
            .env("TMPDIR", layout.visible_tmp())
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .process_group(0);

        let rlimits = self.config.limits.for_time_limit(spec.time_limit);
        match &layout.chroot {
            Some(chroot) => {
                cmd.current_dir("/");
                let plan = chroot.plan();
                // SAFETY: the closure only issues async-signal-safe syscalls on data prepared before fork.
                unsafe {
                    cmd.pre_exec(move || {
                        rlimits.apply()?;
                        plan.enter()
                    });
                }
            }
            None => {
                cmd.current_dir(&layout.host_workdir);
                // SAFETY: setrlimit is async-signal-safe.
                unsafe {
                    cmd.pre_exec(move || rlimits.apply());
                }
            }
        }

        let started = Instant::now();
        let child = cmd.spawn().map_err(|e| SandboxError::setup("spawning interpreter", e))?;
        Ok(supervise(child, started, spec))
    }
}

fn portable_warnings() -> Vec<String> {
    let mut w = vec!["host filesystem is readable outside the scratch directory".to_string()];
    // SAFETY: geteuid has no preconditions.
    if unsafe { libc::geteuid() } == 0 {
        w.push("running as root: the process-count limit is not enforced".into());
    }
    w
}

pub(crate) struct Layout {
    host_workdir: PathBuf,
    visible_workdir: PathBuf,
    chroot: Option<strict::Chroot>,
}

impl Layout {
    fn visible_tmp(&self) -> OsString {
        match &self.chroot {
            Some(_) => OsString::from("/tmp"),
            None => self.host_workdir.clone().into_os_string(),
        }
    }
}

struct Capture {
    bytes: Vec<u8>,
    overflowed: bool,
}

/// Reads `pipe` to EOF on its own thread and sends the capture tagged with `stream`.
fn spawn_reader<R: Read + Send + 'static>(
    mut pipe: R,
    stream: usize,
    limit: usize,
    overflow: Option<Arc<AtomicBool>>,
    done: mpsc::Sender<(usize, Capture)>,
) {
    thread::spawn(move || {
        let mut bytes = Vec::new();
        let mut overflowed = false;
        let mut buf = [0u8; 8192];
        loop {
            match pipe.read(&mut buf) {
                Ok(0) => break,
                Ok(n) => {
                    let room = limit.saturating_sub(bytes.len());
                    bytes.extend_from_slice(&buf[..n.min(room)]);
                    if n > room {
                        overflowed = true;
                        if let Some(flag) = &overflow {
                            flag.store(true, Ordering::SeqCst);
                            break;
                        }
                    }
                }
                Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
                Err(_) => break,
            }
        }
        let _ = done.send((stream, Capture { bytes, overflowed }));
    });
}

fn supervise(mut child: Child, started: Instant, spec: &ExecutionSpec<'_>) -> ExecutionOutcome {
    let pgid = child.id() as libc::pid_t;
    let limit = usize::try_from(spec.output_limit).unwrap_or(usize::MAX);
    let overflow = Arc::new(AtomicBool::new(false));
    let (done_tx, done_rx) = mpsc::channel();

    spawn_reader(child.stdout.take().unwrap(), 0, limit, Some(overflow.clone()), done_tx.clone());
    spawn_reader(child.stderr.take().unwrap(), 1, limit, None, done_tx);
    let mut stdin = child.stdin.take().unwrap();
    let input = spec.stdin.to_vec();
    thread::spawn(move || {
        // EPIPE just means the script did not read everything
        let _ = stdin.write_all(&input);
    });

    let deadline = started + spec.time_limit;
    let hard_deadline = deadline + GRACE;
    // the leader stays a zombie until the group is dead, so its pgid cannot be reused
    let mut status = loop {
        if leader_exited(pgid) {
            break ExitKind::Exited(-1);
        }
        if Instant::now() >= deadline {
            terminate_group(pgid);
            break ExitKind::Killed(KillReason::Timeout);
        }
        if overflow.load(Ordering::SeqCst) {
            kill_group(pgid);
            break ExitKind::Killed(KillReason::OutputLimit);
        }
        thread::sleep(POLL);
    };
    let wall = started.elapsed();

    // background jobs outlive the leader; take them down too
    kill_group(pgid);
    reap_group(pgid, hard_deadline);
    let reaped = child.wait();
    if let (ExitKind::Exited(_), Ok(st)) = (status, reaped) {
        status = ExitKind::Exited(exit_code(st));
    }

    // readers finish once every holder of the pipes is dead
    let mut captures: [Option<Capture>; 2] = [None, None];
    while captures.iter().any(Option::is_none) {
        let left = hard_deadline.saturating_duration_since(Instant::now());
        match done_rx.recv_timeout(left.max(Duration::from_millis(1))) {
            Ok((stream, capture)) => captures[stream] = Some(capture),
            Err(_) => {
                log::warn!("pipe reader still blocked after kill; abandoning it");
                break;
            }
        }
    }
    let [out, err] = captures.map(|c| {
        c.unwrap_or(Capture {
            bytes: Vec::new(),
            overflowed: false,
        })
    });

    if out.overflowed && matches!(status, ExitKind::Exited(_)) {
        status = ExitKind::Killed(KillReason::OutputLimit);
    }

    ExecutionOutcome {
        status,
        stdout: out.bytes,
        stderr: err.bytes,
        wall_time_ms: wall.as_millis() as u64,
        retained_workdir: None,
    }
}

fn exit_code(status: std::process::ExitStatus) -> i32 {
    status
        .code()
        .or_else(|| status.signal().map(|s| 128 + s))
        .unwrap_or(-1)
}

/// Whether `pid` has exited, leaving it unreaped.
fn leader_exited(pid: libc::pid_t) -> bool {
    // SAFETY: waitid only writes into the zeroed siginfo we own.
    unsafe {
        let mut info: libc::siginfo_t = std::mem::zeroed();
        let rc = libc::waitid(
            libc::P_PID,
            pid as libc::id_t,
            &mut info,
            libc::WEXITED | libc::WNOHANG | libc::WNOWAIT,
        );
        rc == -1 || info.si_pid() != 0
    }
}

fn kill_group(pgid: libc::pid_t) {
    // SAFETY: signalling a process group we created; ESRCH is harmless.
    unsafe {
        libc::killpg(pgid, libc::SIGKILL);
    }
}

fn terminate_group(pgid: libc::pid_t) {
    // SAFETY: as above.
    unsafe {
        libc::killpg(pgid, libc::SIGTERM);
    }
    let until = Instant::now() + TERM_GRACE;
    while Instant::now() < until && group_alive(pgid) {
        thread::sleep(POLL);
    }
    kill_group(pgid);
}

/// Repeats SIGKILL until no live process is left in the group.
fn reap_group(pgid: libc::pid_t, until: Instant) {
    while group_alive(pgid) && Instant::now() < until {
        kill_group(pgid);
        thread::sleep(POLL);
    }
}

/// True when some non-zombie process still belongs to process group `pgid`.
pub fn group_alive(pgid: libc::pid_t) -> bool {
    !group_members(pgid).is_empty()
}

/// Live (non-zombie) members of a process group, from `/proc`.
pub fn group_members(pgid: libc::pid_t) -> Vec<libc::pid_t> {
    let Ok(entries) = fs::read_dir("/proc") else {
        return Vec::new();
    };
    entries
        .filter_map(Result::ok)
        .filter_map(|e| e.file_name().to_str()?.parse::<libc::pid_t>().ok())
        .filter(|pid| {
            let Ok(stat) = fs::read_to_string(format!("/proc/{pid}/stat")) else {
                return false;
            };
            // fields after the parenthesised comm: state ppid pgrp ...
            let Some(rest) = stat.rsplit_once(')').map(|(_, r)| r) else {
                return false;
            };
            let mut fields = rest.split_whitespace();
            let state = fields.next();
            let group = fields.nth(1).and_then(|g| g.parse::<libc::pid_t>().ok());
            group == Some(pgid) && state != Some("Z") && state != Some("X")
        })
        .collect()
}
