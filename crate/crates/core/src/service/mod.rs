//! The contest daemon: line-delimited JSON over a local socket or TCP for the
//! CLI, and a read-only HTTP scoreboard.

pub mod http;
pub mod protocol;

use std::fs;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::os::unix::fs::PermissionsExt;
use std::os::unix::net::{UnixListener, UnixStream};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

pub use protocol::{dispatch, handle_line, Op, WireError, WireRequest, WireResponse};

use crate::judge::Judge;
use crate::pack::{load_pack, PackError};
use crate::sandbox::{Backend, Sandbox, SandboxConfig};
use crate::state::{unix_millis, Clock, Contest, ContestOptions, EventLog, StateError, SystemClock};

pub const EVENT_LOG_FILE: &str = "events.jsonl";
pub const FILES_MOUNT_DIR: &str = "contest-files";

const ACCEPT_POLL: Duration = Duration::from_millis(25);
const READ_POLL: Duration = Duration::from_millis(200);
/// Longest request line accepted; a base64 script of a few MiB fits.
const MAX_LINE: usize = 16 * 1024 * 1024;

#[derive(Clone)]
pub struct ServeConfig {
    pub pack: PathBuf,
    /// Holds the event log, workspaces, instructor logs, shared-file mount and scratch.
    pub data_dir: PathBuf,
    pub socket: Option<PathBuf>,
    pub tcp: Option<String>,
    pub http: Option<String>,
    /// Minutes.
    pub duration_override: Option<u64>,
    pub backend: Backend,
    pub event_log: Option<PathBuf>,
    pub workspaces: Option<PathBuf>,
    pub logs: Option<PathBuf>,
    /// Where scripts see the shared files; default `<data_dir>/contest-files`.
    pub files_mount: Option<PathBuf>,
    /// 0 means twice the CPU count.
    pub eval_workers: usize,
    /// Replaces the wall clock; for tests.
    pub clock: Option<Arc<dyn Clock>>,
}

impl ServeConfig {
    pub fn new(pack: impl Into<PathBuf>, data_dir: impl Into<PathBuf>) -> Self {
        ServeConfig {
            pack: pack.into(),
            data_dir: data_dir.into(),
            socket: None,
            tcp: None,
            http: None,
            duration_override: None,
            backend: Backend::Portable,
            event_log: None,
            workspaces: None,
            logs: None,
            files_mount: None,
            eval_workers: 0,
            clock: None,
        }
    }

    pub fn event_log_path(&self) -> PathBuf {
        self.event_log.clone().unwrap_or_else(|| self.data_dir.join(EVENT_LOG_FILE))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error("refusing to start: {0}")]
    PackInvalid(#[from] PackError),
    #[error("cannot bind {addr}: {source}")]
    BindFailure {
        addr: String,
        #[source]
        source: io::Error,
    },
    #[error("nothing to listen on: give a socket path or a TCP address")]
    NoListener,
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    State(#[from] StateError),
}

fn io_ctx(context: impl Into<String>) -> impl FnOnce(io::Error) -> ServeError {
    let context = context.into();
    move |source| ServeError::Io { context, source }
}

/// Copies `src` to `dst` and makes the copy read-only for everyone.
pub fn install_shared_files(src: &Path, dst: &Path) -> io::Result<()> {
    if dst.exists() {
        set_tree_mode(dst, 0o755, 0o644)?;
        fs::remove_dir_all(dst)?;
    }
    copy_tree(src, dst)?;
    set_tree_mode(dst, 0o555, 0o444)
}

fn copy_tree(src: &Path, dst: &Path) -> io::Result<()> {
    fs::create_dir_all(dst)?;
    if !src.is_dir() {
        return Ok(());
    }
    for entry in fs::read_dir(src)? {
        let entry = entry?;
        let target = dst.join(entry.file_name());
        if entry.file_type()?.is_dir() {
            copy_tree(&entry.path(), &target)?;
        } else {
            fs::copy(entry.path(), &target)?;
        }
    }
    Ok(())
}

fn set_tree_mode(root: &Path, dir_mode: u32, file_mode: u32) -> io::Result<()> {
    let meta = fs::symlink_metadata(root)?;
    if meta.is_dir() {
        // children first would fail once the dir is 0555 for non-root users
        fs::set_permissions(root, fs::Permissions::from_mode(0o755))?;
        for entry in fs::read_dir(root)? {
            set_tree_mode(&entry?.path(), dir_mode, file_mode)?;
        }
        fs::set_permissions(root, fs::Permissions::from_mode(dir_mode))
    } else if meta.is_file() {
        fs::set_permissions(root, fs::Permissions::from_mode(file_mode))
    } else {
        Ok(())
    }
}

/// A running daemon. Dropping it without [`ServerHandle::shutdown`] leaves the
/// threads running until process exit.
pub struct ServerHandle {
    contest: Arc<Contest>,
    stop: Arc<AtomicBool>,
    threads: Vec<JoinHandle<()>>,
    socket: Option<PathBuf>,
    tcp_addr: Option<SocketAddr>,
    http_addr: Option<SocketAddr>,
}

impl ServerHandle {
    pub fn contest(&self) -> &Arc<Contest> {
        &self.contest
    }

    pub fn socket_path(&self) -> Option<&Path> {
        self.socket.as_deref()
    }

    pub fn tcp_addr(&self) -> Option<SocketAddr> {
        self.tcp_addr
    }

    pub fn http_addr(&self) -> Option<SocketAddr> {
        self.http_addr
    }

    /// Blocks until SIGINT or SIGTERM, then shuts down.
    pub fn run_until_signal(self) -> Result<(), ServeError> {
        let signalled = Arc::new(AtomicBool::new(false));
        for sig in [signal_hook::consts::SIGINT, signal_hook::consts::SIGTERM] {
            signal_hook::flag::register(sig, Arc::clone(&signalled)).map_err(io_ctx("installing signal handler"))?;
        }
        while !signalled.load(Ordering::SeqCst) {
            std::thread::sleep(Duration::from_millis(100));
        }
        log::info!("shutting down");
        self.shutdown()
    }

    /// Stops accepting, flushes the log and records the end if time ran out.
    pub fn shutdown(self) -> Result<(), ServeError> {
        self.stop.store(true, Ordering::SeqCst);
        for t in self.threads {
            let _ = t.join();
        }
        if let Some(path) = &self.socket {
            let _ = fs::remove_file(path);
        }
        self.contest.end_if_expired()?;
        self.contest.flush()?;
        Ok(())
    }
}

/// Loads the pack, opens or resumes the contest and starts every listener.
pub fn serve(config: ServeConfig) -> Result<ServerHandle, ServeError> {
    let pack = Arc::new(load_pack(&config.pack)?);
    if config.socket.is_none() && config.tcp.is_none() {
        return Err(ServeError::NoListener);
    }
    fs::create_dir_all(&config.data_dir).map_err(io_ctx(format!("creating {}", config.data_dir.display())))?;
    let data_dir = config
        .data_dir
        .canonicalize()
        .map_err(io_ctx(format!("resolving {}", config.data_dir.display())))?;

    let mount = config.files_mount.clone().unwrap_or_else(|| data_dir.join(FILES_MOUNT_DIR));
    install_shared_files(&pack.shared_root(), &mount)
        .map_err(io_ctx(format!("installing shared files at {}", mount.display())))?;
    let mount = mount.canonicalize().unwrap_or(mount);

    let scratch = data_dir.join("scratch");
    fs::create_dir_all(&scratch).map_err(io_ctx("creating scratch root"))?;
    let sandbox = Sandbox::new(SandboxConfig {
        backend: config.backend,
        scratch_root: scratch,
        ..SandboxConfig::default()
    });
    for warning in &sandbox.capabilities().warnings {
        log::warn!("{warning}");
    }
    let judge = Judge::new(sandbox).with_shared_files(&mount);

    let options = ContestOptions {
        duration_override: config.duration_override,
        workspace_root: Some(config.workspaces.clone().unwrap_or_else(|| data_dir.join("workspaces"))),
        log_root: Some(config.logs.clone().unwrap_or_else(|| data_dir.join("logs"))),
        eval_workers: config.eval_workers,
    };
    let log_path = config.event_log_path();
    let contest = if log_path.exists() {
        log::info!("resuming from {}", log_path.display());
        Contest::resume(Arc::clone(&pack), judge, config.clock.clone(), &log_path, options)?
    } else {
        let started = unix_millis();
        let clock = config
            .clock
            .clone()
            .unwrap_or_else(|| Arc::new(SystemClock::starting_at(started)));
        let log = EventLog::create(&log_path).map_err(io_ctx(format!("creating {}", log_path.display())))?;
        Contest::start(Arc::clone(&pack), judge, clock, started, log, options)?
    };
    let contest = Arc::new(contest);
    let stop = Arc::new(AtomicBool::new(false));
    let mut threads = Vec::new();
    let mut handle = ServerHandle {
        contest: Arc::clone(&contest),
        stop: Arc::clone(&stop),
        threads: Vec::new(),
        socket: None,
        tcp_addr: None,
        http_addr: None,
    };

    if let Some(path) = &config.socket {
        if path.exists() {
            if UnixStream::connect(path).is_ok() {
                return Err(ServeError::BindFailure {
                    addr: path.display().to_string(),
                    source: io::Error::new(io::ErrorKind::AddrInUse, "another daemon is listening"),
                });
            }
            let _ = fs::remove_file(path);
        }
        let listener = UnixListener::bind(path).map_err(|source| ServeError::BindFailure {
            addr: path.display().to_string(),
            source,
        })?;
        let _ = fs::set_permissions(path, fs::Permissions::from_mode(0o666));
        listener.set_nonblocking(true).map_err(io_ctx("configuring socket"))?;
        let (c, s) = (Arc::clone(&contest), Arc::clone(&stop));
        threads.push(std::thread::spawn(move || {
            accept_loop(|| listener.accept().map(|(s, _)| Conn::Unix(s)), c, s)
        }));
        handle.socket = Some(path.clone());
    }
    if let Some(addr) = &config.tcp {
        let listener = TcpListener::bind(addr).map_err(|source| ServeError::BindFailure {
            addr: addr.clone(),
            source,
        })?;
        handle.tcp_addr = listener.local_addr().ok();
        listener.set_nonblocking(true).map_err(io_ctx("configuring listener"))?;
        let (c, s) = (Arc::clone(&contest), Arc::clone(&stop));
        threads.push(std::thread::spawn(move || {
            accept_loop(|| listener.accept().map(|(s, _)| Conn::Tcp(s)), c, s)
        }));
    }
    if let Some(addr) = &config.http {
        let server = tiny_http::Server::http(addr).map_err(|e| ServeError::BindFailure {
            addr: addr.clone(),
            source: io::Error::other(e.to_string()),
        })?;
        handle.http_addr = server.server_addr().to_ip();
        let (c, s) = (Arc::clone(&contest), Arc::clone(&stop));
        threads.push(std::thread::spawn(move || http::serve_http(server, c, s)));
    }
    handle.threads = threads;
    log::info!(
        "contest `{}` running: {} problems, sandbox {}",
        pack.config.name,
        pack.problems.len(),
        contest.judge().sandbox().effective_backend()
    );
    Ok(handle)
}

enum Conn {
    Unix(UnixStream),
    Tcp(TcpStream),
}

impl Conn {
    fn prepare(&self) -> io::Result<()> {
        match self {
            Conn::Unix(s) => {
                s.set_nonblocking(false)?;
                s.set_read_timeout(Some(READ_POLL))
            }
            Conn::Tcp(s) => {
                s.set_nonblocking(false)?;
                s.set_read_timeout(Some(READ_POLL))
            }
        }
    }

    fn try_clone(&self) -> io::Result<Conn> {
        Ok(match self {
            Conn::Unix(s) => Conn::Unix(s.try_clone()?),
            Conn::Tcp(s) => Conn::Tcp(s.try_clone()?),
        })
    }
}

impl Read for Conn {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        match self {
            Conn::Unix(s) => s.read(buf),
            Conn::Tcp(s) => s.read(buf),
        }
    }
}

impl Write for Conn {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        match self {
            Conn::Unix(s) => s.write(buf),
            Conn::Tcp(s) => s.write(buf),
        }
    }

    fn flush(&mut self) -> io::Result<()> {
        match self {
            Conn::Unix(s) => s.flush(),
            Conn::Tcp(s) => s.flush(),
        }
    }
}

fn accept_loop(mut accept: impl FnMut() -> io::Result<Conn>, contest: Arc<Contest>, stop: Arc<AtomicBool>) {
    let mut last_tick = Instant::now();
    while !stop.load(Ordering::SeqCst) {
        match accept() {
            Ok(conn) => {
                let (c, s) = (Arc::clone(&contest), Arc::clone(&stop));
                std::thread::spawn(move || {
                    if let Err(e) = serve_connection(conn, &c, &s) {
                        log::debug!("connection closed: {e}");
                    }
                });
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => std::thread::sleep(ACCEPT_POLL),
            Err(e) => {
                log::warn!("accept: {e}");
                std::thread::sleep(ACCEPT_POLL);
            }
        }
        if last_tick.elapsed() >= Duration::from_secs(1) {
            last_tick = Instant::now();
            if let Err(e) = contest.end_if_expired() {
                log::error!("{e}");
            }
        }
    }
}

/// Answers request lines in order until EOF or shutdown.
fn serve_connection(conn: Conn, contest: &Contest, stop: &AtomicBool) -> io::Result<()> {
    conn.prepare()?;
    let mut writer = conn.try_clone()?;
    let mut reader = BufReader::new(conn);
    let mut line = Vec::new();
    loop {
        if stop.load(Ordering::SeqCst) {
            return Ok(());
        }
        match reader.read_until(b'\n', &mut line) {
            Ok(0) if line.is_empty() => return Ok(()),
            Ok(_) => {}
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {
                if line.len() > MAX_LINE {
                    let r = WireResponse::failure(WireError::new("bad_request", "request line too long"));
                    writer.write_all(r.to_line().as_bytes())?;
                    return Ok(());
                }
                continue;
            }
            Err(e) => return Err(e),
        }
        let text = String::from_utf8_lossy(&line);
        let text = text.trim();
        if !text.is_empty() {
            let response = handle_line(contest, text);
            writer.write_all(response.to_line().as_bytes())?;
            writer.flush()?;
        }
        let eof = !line.ends_with(b"\n");
        line.clear();
        if eof {
            return Ok(());
        }
    }
}

/// Minimal blocking client used by the CLI and tests.
pub struct Client {
    reader: BufReader<Conn>,
    writer: Conn,
}

impl Client {
    pub fn connect_unix(path: &Path) -> io::Result<Client> {
        Client::from_conn(Conn::Unix(UnixStream::connect(path)?))
    }

    pub fn connect_tcp(addr: &str) -> io::Result<Client> {
        Client::from_conn(Conn::Tcp(TcpStream::connect(addr)?))
    }

    /// `tcp:host:port` or a socket path.
    pub fn connect(target: &str) -> io::Result<Client> {
        match target.strip_prefix("tcp:") {
            Some(addr) => Client::connect_tcp(addr),
            None => Client::connect_unix(Path::new(target)),
        }
    }

    fn from_conn(conn: Conn) -> io::Result<Client> {
        let writer = conn.try_clone()?;
        Ok(Client {
            reader: BufReader::new(conn),
            writer,
        })
    }

    pub fn send_line(&mut self, line: &str) -> io::Result<WireResponse> {
        self.writer.write_all(line.as_bytes())?;
        if !line.ends_with('\n') {
            self.writer.write_all(b"\n")?;
        }
        self.writer.flush()?;
        let mut reply = String::new();
        if self.reader.read_line(&mut reply)? == 0 {
            return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "daemon closed the connection"));
        }
        serde_json::from_str(&reply).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
    }

    pub fn request(&mut self, req: &WireRequest) -> io::Result<WireResponse> {
        let line = serde_json::to_string(req).map_err(io::Error::other)?;
        self.send_line(&line)
    }
}
