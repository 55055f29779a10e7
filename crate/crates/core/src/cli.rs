//! `shelljudge` command line: contestant verbs talk to the daemon, `admin`
//! verbs operate on packs and logs directly.
//!
//! Exit codes: 0 success or Accepted, 1 a rejection or failed check, 2 the
//! daemon could not be reached or refused the credentials.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::os::unix::fs::PermissionsExt;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::analytics;
use crate::judge::{Judge, Verdict};
use crate::pack::{load_pack, validate_pack};
use crate::sandbox::{Backend, Sandbox, SandboxConfig};
use crate::scoring::{render_ranking, score};
use crate::service::{self, Client, Op, ServeConfig, WireRequest, WireResponse};
use crate::state::{read_log, replay};

pub const DEFAULT_SOCKET: &str = "/tmp/shelljudge.sock";
pub const CONFIG_FILE: &str = ".shelljudge";
/// Overrides the location of the contestant config file.
pub const CONFIG_ENV: &str = "SHELLJUDGE_CONFIG";

pub const EXIT_OK: i32 = 0;
pub const EXIT_REJECTED: i32 = 1;
pub const EXIT_TRANSPORT: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "shelljudge", version, about = "Timed shell-scripting contests")]
pub struct Cli {
    /// Daemon socket path, or tcp:HOST:PORT.
    #[arg(long, global = true, env = "SHELLJUDGE_SOCKET")]
    pub socket: Option<String>,
    #[arg(long = "id", global = true, env = "SHELLJUDGE_ID")]
    pub contestant: Option<String>,
    #[arg(long, global = true, env = "SHELLJUDGE_TOKEN", hide_env_values = true)]
    pub token: Option<String>,
    /// Colored output.
    #[arg(long, global = true)]
    pub color: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Register with the daemon and save the credentials.
    Register {
        id: String,
        /// Print the token instead of writing the config file.
        #[arg(long)]
        no_save: bool,
    },
    /// Judge a script on the hidden cases of your active problem.
    Submit { file: PathBuf },
    /// Run a script on the public cases only; no penalty.
    Check { file: PathBuf },
    /// Reveal the next hint of your active problem.
    Hint,
    /// Show your progress.
    Status,
    #[command(subcommand)]
    Admin(Admin),
}

#[derive(Debug, Subcommand)]
pub enum Admin {
    /// Check a contest pack, optionally running reference solutions.
    PackValidate {
        dir: PathBuf,
        /// PROBLEM=SCRIPT, repeatable.
        #[arg(long = "reference", value_parser = parse_reference)]
        references: Vec<(String, PathBuf)>,
        #[arg(long, env = "SHELLJUDGE_BACKEND")]
        backend: Option<Backend>,
    },
    /// Run the contest daemon.
    Serve(ServeArgs),
    /// Write the results CSV from an event log.
    Export {
        csv: PathBuf,
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        pack: PathBuf,
        /// Also write per-problem statistics here.
        #[arg(long)]
        problems: Option<PathBuf>,
    },
    /// Rebuild the contest from an event log and print the ranking.
    Replay {
        log: PathBuf,
        #[arg(long)]
        pack: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub pack: PathBuf,
    /// TCP address for the CLI protocol.
    #[arg(long)]
    pub tcp: Option<String>,
    /// Scoreboard address, e.g. 127.0.0.1:8080.
    #[arg(long)]
    pub http: Option<String>,
    /// Contest length in minutes, replacing the pack's.
    #[arg(long)]
    pub duration_override: Option<u64>,
    #[arg(long, env = "SHELLJUDGE_BACKEND")]
    pub backend: Option<Backend>,
    #[arg(long, default_value = "shelljudge-data")]
    pub data_dir: PathBuf,
    /// Event log (default DATA_DIR/events.jsonl); an existing log is resumed.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long)]
    pub workspaces: Option<PathBuf>,
    /// Instructor log directory.
    #[arg(long)]
    pub logs: Option<PathBuf>,
    /// Where scripts find the shared files.
    #[arg(long)]
    pub files_mount: Option<PathBuf>,
    /// Concurrent evaluations (default twice the CPU count).
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
}

fn parse_reference(s: &str) -> Result<(String, PathBuf), String> {
    let (problem, path) = s
        .split_once('=')
        .ok_or_else(|| format!("expected PROBLEM=SCRIPT, got `{s}`"))?;
    Ok((problem.to_string(), PathBuf::from(path)))
}

/// Contents of `~/.shelljudge`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientConfig {
    pub socket: Option<String>,
    pub id: Option<String>,
    pub token: Option<String>,
}

pub fn config_path() -> Option<PathBuf> {
    if let Some(p) = std::env::var_os(CONFIG_ENV) {
        return Some(PathBuf::from(p));
    }
    std::env::var_os("HOME").map(|h| PathBuf::from(h).join(CONFIG_FILE))
}

pub fn read_config(path: &Path) -> Result<ClientConfig, String> {
    match fs::read_to_string(path) {
        Ok(text) => toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display())),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(ClientConfig::default()),
        Err(e) => Err(format!("{}: {e}", path.display())),
    }
}

pub fn write_config(path: &Path, config: &ClientConfig) -> std::io::Result<()> {
    let text = toml::to_string(config).map_err(std::io::Error::other)?;
    fs::write(path, text)?;
    fs::set_permissions(path, fs::Permissions::from_mode(0o600))
}

struct Style {
    color: bool,
}

impl Style {
    fn paint(&self, code: &str, text: &str) -> String {
        if self.color {
            format!("\x1b[{code}m{text}\x1b[0m")
        } else {
            text.to_string()
        }
    }

    fn good(&self, text: &str) -> String {
        self.paint("32", text)
    }

    fn bad(&self, text: &str) -> String {
        self.paint("31", text)
    }
}

/// Parses `args` and runs the command, writing to `out` and `err`. Returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_TRANSPORT } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                err.write_all(text.as_bytes())
            } else {
                out.write_all(text.as_bytes())
            };
            return code;
        }
    };
    let style = Style { color: cli.color };
    match &cli.command {
        Command::Admin(admin) => run_admin(admin, cli.socket.as_deref(), out, err),
        _ => run_contestant(&cli, &style, out, err),
    }
}

struct Session {
    socket: String,
    contestant: String,
    token: String,
}

fn run_contestant(cli: &Cli, style: &Style, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let path = config_path();
    let file = match path.as_deref().map(read_config).transpose() {
        Ok(c) => c.unwrap_or_default(),
        Err(e) => {
            let _ = writeln!(err, "bad config file {e}");
            return EXIT_TRANSPORT;
        }
    };
    let socket = cli
        .socket
        .clone()
        .or(file.socket.clone())
        .unwrap_or_else(|| DEFAULT_SOCKET.to_string());

    if let Command::Register { id, no_save } = &cli.command {
        let request = WireRequest::new(Op::Register, id, "");
        let data = match exchange(&socket, &request, err) {
            Ok(Ok(d)) => d,
            Ok(Err(r)) => return report_error(&r, err),
            Err(code) => return code,
        };
        let token = data["token"].as_str().unwrap_or_default().to_string();
        let _ = writeln!(out, "registered as {id}");
        let _ = writeln!(out, "active problem: {}", data["active_problem"].as_str().unwrap_or("?"));
        if let Some(ws) = data["workspace"].as_str() {
            let _ = writeln!(out, "workspace: {ws}");
        }
        match (no_save, &path) {
            (false, Some(p)) => {
                let saved = ClientConfig {
                    socket: Some(socket.clone()),
                    id: Some(id.clone()),
                    token: Some(token.clone()),
                };
                if let Err(e) = write_config(p, &saved) {
                    let _ = writeln!(err, "could not save {}: {e}", p.display());
                    let _ = writeln!(out, "token: {token}");
                } else {
                    let _ = writeln!(out, "credentials saved to {}", p.display());
                }
            }
            _ => {
                let _ = writeln!(out, "token: {token}");
            }
        }
        return EXIT_OK;
    }

    let (Some(contestant), Some(token)) = (
        cli.contestant.clone().or(file.id.clone()),
        cli.token.clone().or(file.token.clone()),
    ) else {
        let _ = writeln!(err, "no credentials: run `shelljudge register <id>` or set SHELLJUDGE_ID and SHELLJUDGE_TOKEN");
        return EXIT_TRANSPORT;
    };
    let session = Session {
        socket,
        contestant,
        token,
    };
    match &cli.command {
        Command::Submit { file } => submit(&session, file, out, err),
        Command::Check { file } => check(&session, file, style, out, err),
        Command::Hint => hint(&session, out, err),
        Command::Status => status(&session, out, err),
        Command::Register { .. } | Command::Admin(_) => unreachable!(),
    }
}

/// Outer error: exit code after a transport failure. Inner error: a refusal from the daemon.
fn exchange(socket: &str, req: &WireRequest, err: &mut dyn Write) -> Result<Result<Value, WireResponse>, i32> {
    let response = Client::connect(socket).and_then(|mut c| c.request(req));
    match response {
        Ok(r) if r.ok => Ok(Ok(r.data.unwrap_or(Value::Null))),
        Ok(r) => Ok(Err(r)),
        Err(e) => {
            let _ = writeln!(err, "cannot reach the judge daemon at {socket}: {e}");
            Err(EXIT_TRANSPORT)
        }
    }
}

fn report_error(r: &WireResponse, err: &mut dyn Write) -> i32 {
    let code = r.error.as_deref().unwrap_or("internal");
    let message = r.message.as_deref().unwrap_or("");
    match code {
        "auth" => {
            let _ = writeln!(err, "authentication failed: {message}");
            EXIT_TRANSPORT
        }
        "no_more_hints" => {
            let _ = writeln!(err, "no hints remain");
            EXIT_REJECTED
        }
        "bad_request" | "internal" => {
            let _ = writeln!(err, "daemon error: {message}");
            EXIT_TRANSPORT
        }
        _ => {
            let _ = writeln!(err, "{message}");
            EXIT_REJECTED
        }
    }
}

fn read_script(file: &Path, err: &mut dyn Write) -> Option<Vec<u8>> {
    match fs::read(file) {
        Ok(b) => Some(b),
        Err(e) => {
            let _ = writeln!(err, "cannot read {}: {e}", file.display());
            None
        }
    }
}

fn verdict_of(v: &Value) -> Verdict {
    v.as_str().and_then(|s| s.parse().ok()).unwrap_or(Verdict::JudgeError)
}

fn submit(s: &Session, file: &Path, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let Some(script) = read_script(file, err) else {
        return EXIT_REJECTED;
    };
    let req = WireRequest::new(Op::Submit, &s.contestant, &s.token).with_script(&script);
    let data = match exchange(&s.socket, &req, err) {
        Ok(Ok(d)) => d,
        Ok(Err(r)) => return report_error(&r, err),
        Err(code) => return code,
    };
    let verdict = verdict_of(&data["verdict"]);
    let code = if verdict.is_accepted() {
        if data["finished"].as_bool() == Some(true) {
            let _ = writeln!(out, "Accepted \u{2014} all problems solved");
        } else {
            let n = data["unlocked_number"].as_u64().unwrap_or(0);
            let _ = writeln!(out, "Accepted \u{2014} problem {n} unlocked");
            if let Some(ws) = data["workspace"].as_str() {
                let _ = writeln!(out, "workspace updated: {ws}");
            }
        }
        EXIT_OK
    } else if verdict == Verdict::JudgeError {
        let _ = writeln!(out, "Judge error (not counted, please resubmit)");
        EXIT_REJECTED
    } else {
        let attempts = data["failed_attempts"].as_u64().unwrap_or(0);
        let _ = writeln!(out, "{verdict} (attempt {attempts})");
        EXIT_REJECTED
    };
    let _ = writeln!(out, "penalty: {} min", data["penalty_minutes"].as_str().unwrap_or("?"));
    code
}

pub fn unified_diff(expected: &str, produced: &str) -> String {
    similar::TextDiff::from_lines(expected, produced)
        .unified_diff()
        .context_radius(3)
        .header("expected", "produced")
        .to_string()
}

fn check(s: &Session, file: &Path, style: &Style, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let Some(script) = read_script(file, err) else {
        return EXIT_REJECTED;
    };
    let req = WireRequest::new(Op::Check, &s.contestant, &s.token).with_script(&script);
    let data = match exchange(&s.socket, &req, err) {
        Ok(Ok(d)) => d,
        Ok(Err(r)) => return report_error(&r, err),
        Err(code) => return code,
    };
    let cases = data["cases"].as_array().cloned().unwrap_or_default();
    let _ = writeln!(out, "public cases of {}:", data["problem"].as_str().unwrap_or("?"));
    for case in &cases {
        let verdict = verdict_of(&case["verdict"]);
        let mark = if verdict.is_accepted() {
            style.good("\u{2713}")
        } else {
            style.bad("\u{2717}")
        };
        let _ = writeln!(
            out,
            "  {mark} {:<6} {:<22} {:>6} ms",
            case["case"].as_str().unwrap_or("?"),
            verdict.to_string(),
            case["wall_ms"].as_u64().unwrap_or(0)
        );
    }
    for case in cases.iter().filter(|c| !verdict_of(&c["verdict"]).is_accepted()) {
        let argv: Vec<&str> = case["argv"]
            .as_array()
            .map(|a| a.iter().filter_map(Value::as_str).collect())
            .unwrap_or_default();
        let _ = writeln!(out, "\ncase {} (args: {})", case["case"].as_str().unwrap_or("?"), argv.join(" "));
        let diff = unified_diff(
            case["expected"].as_str().unwrap_or(""),
            case["produced"].as_str().unwrap_or(""),
        );
        let _ = out.write_all(diff.as_bytes());
        if let Some(stderr) = case["stderr"].as_str().filter(|s| !s.is_empty()) {
            let _ = writeln!(out, "stderr:\n{}", stderr.trim_end());
        }
    }
    if data["accepted"].as_bool() == Some(true) {
        EXIT_OK
    } else {
        EXIT_REJECTED
    }
}

fn hint(s: &Session, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let req = WireRequest::new(Op::Hint, &s.contestant, &s.token);
    let data = match exchange(&s.socket, &req, err) {
        Ok(Ok(d)) => d,
        Ok(Err(r)) => return report_error(&r, err),
        Err(code) => return code,
    };
    let _ = writeln!(
        out,
        "hint {} for {}:",
        data["hint"]["index"].as_u64().unwrap_or(0),
        data["problem"].as_str().unwrap_or("?")
    );
    let _ = writeln!(out, "{}", data["hint"]["body"].as_str().unwrap_or("").trim_end());
    let _ = writeln!(
        out,
        "penalty +{} min (hints total: {} min, {} remaining)",
        data["hint_penalty_minutes"].as_u64().unwrap_or(0),
        data["total_hint_penalty_minutes"].as_u64().unwrap_or(0),
        data["remaining"].as_u64().unwrap_or(0)
    );
    EXIT_OK
}

fn status(s: &Session, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let req = WireRequest::new(Op::Status, &s.contestant, &s.token);
    let d = match exchange(&s.socket, &req, err) {
        Ok(Ok(d)) => d,
        Ok(Err(r)) => return report_error(&r, err),
        Err(code) => return code,
    };
    let _ = writeln!(out, "contestant: {}", d["contestant"].as_str().unwrap_or("?"));
    match d["active_problem"].as_object() {
        Some(p) => {
            let _ = writeln!(
                out,
                "active problem: {} ({}/{}) {}",
                p["id"].as_str().unwrap_or("?"),
                p["number"],
                d["total_problems"],
                p["title"].as_str().unwrap_or("")
            );
            let _ = writeln!(
                out,
                "failed attempts: {}  hints: {}/{}",
                d["failed_attempts"], d["hints_taken"], d["hints_available"]
            );
        }
        None => {
            let _ = writeln!(out, "all {} problems solved", d["total_problems"]);
        }
    }
    let _ = writeln!(
        out,
        "solved: {}  penalty: {} min  rank: {}",
        d["solved"],
        d["penalty_minutes"].as_str().unwrap_or("?"),
        d["rank"]
    );
    let _ = writeln!(
        out,
        "time: {} / {} min",
        d["elapsed"].as_u64().unwrap_or(0) / 60,
        d["duration"].as_u64().unwrap_or(0) / 60
    );
    if let Some(ws) = d["workspace"].as_str() {
        let _ = writeln!(out, "workspace: {ws}");
    }
    EXIT_OK
}

fn run_admin(admin: &Admin, socket: Option<&str>, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    match admin {
        Admin::PackValidate {
            dir,
            references,
            backend,
        } => {
            let pack = match load_pack(dir) {
                Ok(p) => p,
                Err(e) => {
                    let _ = writeln!(err, "{e}");
                    return EXIT_REJECTED;
                }
            };
            let mut scripts = BTreeMap::new();
            for (problem, path) in references {
                let Some(script) = read_script(path, err) else {
                    return EXIT_REJECTED;
                };
                scripts.insert(problem.clone(), script);
            }
            let judge = Judge::new(Sandbox::new(SandboxConfig {
                backend: backend.unwrap_or_default(),
                ..SandboxConfig::default()
            }));
            let report = validate_pack(&pack, &scripts, &judge);
            for f in &report.findings {
                let _ = writeln!(out, "{f}");
            }
            if report.is_clean() {
                let _ = writeln!(
                    out,
                    "pack ok: {} problems, {} reference solutions passed, digest {}",
                    pack.problems.len(),
                    scripts.len(),
                    &pack.digest[..12]
                );
                EXIT_OK
            } else {
                let _ = writeln!(out, "{} findings", report.findings.len());
                EXIT_REJECTED
            }
        }
        Admin::Serve(args) => serve(args, socket, out, err),
        Admin::Export {
            csv,
            log,
            pack,
            problems,
        } => {
            let pack = match load_pack(pack) {
                Ok(p) => p,
                Err(e) => {
                    let _ = writeln!(err, "{e}");
                    return EXIT_REJECTED;
                }
            };
            match analytics::export_results(log, &pack, csv) {
                Ok(rows) => {
                    let _ = writeln!(out, "wrote {} contestants to {}", rows.len(), csv.display());
                }
                Err(e) => {
                    let _ = writeln!(err, "{e}");
                    return EXIT_REJECTED;
                }
            }
            if let Some(path) = problems {
                match analytics::export_problem_stats(log, &pack, path) {
                    Ok(stats) => {
                        let _ = writeln!(out, "wrote {} problems to {}", stats.len(), path.display());
                    }
                    Err(e) => {
                        let _ = writeln!(err, "{e}");
                        return EXIT_REJECTED;
                    }
                }
            }
            EXIT_OK
        }
        Admin::Replay { log, pack } => {
            let pack = match load_pack(pack) {
                Ok(p) => p,
                Err(e) => {
                    let _ = writeln!(err, "{e}");
                    return EXIT_REJECTED;
                }
            };
            let state = match read_log(log).map_err(|e| e.to_string()).and_then(|events| {
                replay(&events, &pack).map_err(|e| e.to_string())
            }) {
                Ok(s) => s,
                Err(e) => {
                    let _ = writeln!(err, "{e}");
                    return EXIT_REJECTED;
                }
            };
            let _ = out.write_all(render_ranking(&score(&state, &pack.config), &pack).as_bytes());
            EXIT_OK
        }
    }
}

/// `--socket` (or `SHELLJUDGE_SOCKET`) is the path to listen on; the default
/// socket is used when neither it nor `--tcp` is given.
fn serve(args: &ServeArgs, socket: Option<&str>, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let mut config = ServeConfig::new(&args.pack, &args.data_dir);
    config.socket = socket.map(PathBuf::from);
    if config.socket.is_none() && args.tcp.is_none() {
        config.socket = Some(PathBuf::from(DEFAULT_SOCKET));
    }
    config.tcp = args.tcp.clone();
    config.http = args.http.clone();
    config.duration_override = args.duration_override;
    config.backend = args.backend.unwrap_or_default();
    config.event_log = args.log.clone();
    config.workspaces = args.workspaces.clone();
    config.logs = args.logs.clone();
    config.files_mount = args.files_mount.clone();
    config.eval_workers = args.workers;

    let handle = match service::serve(config) {
        Ok(h) => h,
        Err(e) => {
            let _ = writeln!(err, "{e}");
            return EXIT_REJECTED;
        }
    };
    if let Some(p) = handle.socket_path() {
        let _ = writeln!(out, "listening on {}", p.display());
    }
    if let Some(a) = handle.tcp_addr() {
        let _ = writeln!(out, "listening on tcp:{a}");
    }
    if let Some(a) = handle.http_addr() {
        let _ = writeln!(out, "scoreboard at http://{a}/");
    }
    let _ = out.flush();
    match handle.run_until_signal() {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "{e}");
            EXIT_REJECTED
        }
    }
}
