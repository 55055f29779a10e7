#![allow(dead_code)]

pub mod random;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde_json::Value;
use shelljudge::service::{self, Client, Op, ServeConfig, ServerHandle, WireRequest, WireResponse};
use shelljudge::state::{Clock, ManualClock};

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn fixture_pack() -> PathBuf {
    fixtures().join("contest")
}

pub fn solution(name: &str) -> Vec<u8> {
    fs::read(fixtures().join("solutions").join(name)).unwrap()
}

/// Reference solution for every fixture problem.
pub fn references() -> BTreeMap<String, Vec<u8>> {
    ["reverse-lines", "even-sum", "failed-logins"]
        .iter()
        .map(|p| (p.to_string(), solution(&format!("{p}.sh"))))
        .collect()
}

/// Copies a directory tree.
pub fn copy_dir(src: &Path, dst: &Path) {
    fs::create_dir_all(dst).unwrap();
    for entry in fs::read_dir(src).unwrap() {
        let entry = entry.unwrap();
        let target = dst.join(entry.file_name());
        if entry.file_type().unwrap().is_dir() {
            copy_dir(&entry.path(), &target);
        } else {
            fs::copy(entry.path(), &target).unwrap();
        }
    }
}

pub struct Daemon {
    pub handle: Option<ServerHandle>,
    pub clock: Arc<ManualClock>,
    pub dir: tempfile::TempDir,
    pub socket: PathBuf,
}

impl Daemon {
    pub fn start(pack: &Path) -> Daemon {
        Daemon::start_with(pack, |_| {})
    }

    pub fn start_with(pack: &Path, tweak: impl FnOnce(&mut ServeConfig)) -> Daemon {
        let dir = tempfile::Builder::new().prefix("sj").tempdir().unwrap();
        let clock = Arc::new(ManualClock::new(0));
        let socket = dir.path().join("judge.sock");
        let mut config = ServeConfig::new(pack, dir.path().join("data"));
        config.socket = Some(socket.clone());
        config.http = Some("127.0.0.1:0".into());
        config.clock = Some(clock.clone() as Arc<dyn Clock>);
        tweak(&mut config);
        let handle = service::serve(config).unwrap();
        Daemon {
            handle: Some(handle),
            clock,
            dir,
            socket,
        }
    }

    pub fn handle(&self) -> &ServerHandle {
        self.handle.as_ref().unwrap()
    }

    pub fn data_dir(&self) -> PathBuf {
        self.dir.path().join("data").canonicalize().unwrap()
    }

    pub fn event_log(&self) -> PathBuf {
        self.data_dir().join("events.jsonl")
    }

    pub fn client(&self) -> Client {
        Client::connect_unix(&self.socket).unwrap()
    }

    pub fn register(&self, id: &str) -> Session {
        let mut client = self.client();
        let r = client.request(&WireRequest::new(Op::Register, id, "")).unwrap();
        assert!(r.ok, "register {id}: {r:?}");
        let token = r.data.unwrap()["token"].as_str().unwrap().to_string();
        Session {
            client,
            id: id.to_string(),
            token,
        }
    }

    pub fn http_get(&self, path: &str) -> String {
        use std::io::{Read, Write};
        let addr = self.handle().http_addr().unwrap();
        let mut s = std::net::TcpStream::connect(addr).unwrap();
        write!(s, "GET {path} HTTP/1.0\r\nHost: localhost\r\n\r\n").unwrap();
        let mut text = String::new();
        s.read_to_string(&mut text).unwrap();
        text.split_once("\r\n\r\n").map(|(_, b)| b.to_string()).unwrap_or_default()
    }

    pub fn shutdown(&mut self) {
        if let Some(h) = self.handle.take() {
            h.shutdown().unwrap();
        }
    }
}

impl Drop for Daemon {
    fn drop(&mut self) {
        if let Some(h) = self.handle.take() {
            let _ = h.shutdown();
        }
    }
}

pub struct Session {
    pub client: Client,
    pub id: String,
    pub token: String,
}

impl Session {
    pub fn call(&mut self, op: Op, script: Option<&[u8]>) -> WireResponse {
        let mut req = WireRequest::new(op, &self.id, &self.token);
        if let Some(s) = script {
            req = req.with_script(s);
        }
        self.client.request(&req).unwrap()
    }

    pub fn submit(&mut self, script: &[u8]) -> Value {
        let r = self.call(Op::Submit, Some(script));
        assert!(r.ok, "submit by {}: {r:?}", self.id);
        r.data.unwrap()
    }

    pub fn check(&mut self, script: &[u8]) -> Value {
        let r = self.call(Op::Check, Some(script));
        assert!(r.ok, "check by {}: {r:?}", self.id);
        r.data.unwrap()
    }

    pub fn hint(&mut self) -> Value {
        let r = self.call(Op::Hint, None);
        assert!(r.ok, "hint by {}: {r:?}", self.id);
        r.data.unwrap()
    }

    pub fn status(&mut self) -> Value {
        let r = self.call(Op::Status, None);
        assert!(r.ok, "status of {}: {r:?}", self.id);
        r.data.unwrap()
    }
}

/// Expected final ranking of [`scripted_contest`]: (contestant, solved, penalty seconds).
///
/// ana: last accept 3600 s, failures 1+1+1 on solved problems, hints 1+1
///      -> 3600 + 60 * (10*3 + 15*2) = 7200
/// cam: last accept 1200 s, 2 failures, 1 hint on an unsolved problem
///      -> 1200 + 60 * (10*2 + 15*1) = 3300
/// ben: last accept 900 s, the failure on even-sum is on an unsolved problem,
///      hints 1+2 -> 900 + 60 * (15*3) = 3600
pub const EXPECTED_RANKING: [(&str, usize, u64); 3] = [("ana", 3, 7200), ("cam", 1, 3300), ("ben", 1, 3600)];

/// Expected per-problem stats: (problem, correct, failed, hints, checks, stopped_here).
pub const EXPECTED_STATS: [(&str, u32, u32, u32, u32, u32); 3] = [
    ("reverse-lines", 3, 3, 1, 1, 0),
    ("even-sum", 1, 2, 4, 1, 2),
    ("failed-logins", 1, 1, 1, 0, 0),
];

/// Three contestants through the fixture contest over the wire, with the clock
/// moved by hand between steps.
pub fn scripted_contest(d: &Daemon) {
    let at = |t: u64| d.clock.set(t);
    let verdict = |v: &Value| v["verdict"].as_str().unwrap().to_string();

    let mut ana = d.register("ana");
    let mut ben = d.register("ben");
    let mut cam = d.register("cam");

    at(300);
    assert_eq!(verdict(&ana.check(&solution("reverse-lines.wrong.sh"))), "WrongAnswer");
    at(420);
    assert_eq!(verdict(&ana.submit(&solution("reverse-lines.wrong.sh"))), "WrongAnswer");
    at(600);
    let ok = ana.submit(&solution("reverse-lines.sh"));
    assert_eq!(verdict(&ok), "Accepted");
    assert_eq!(ok["unlocked"], "even-sum");

    at(660);
    assert_eq!(ben.hint()["hint"]["index"], 1);
    at(900);
    assert_eq!(verdict(&ben.submit(&solution("reverse-lines.sh"))), "Accepted");

    at(1000);
    assert_eq!(verdict(&cam.submit(&solution("reverse-lines.wrong.sh"))), "WrongAnswer");
    at(1100);
    assert_eq!(verdict(&cam.submit(b"exit 3\n")), "RuntimeError");
    at(1200);
    assert_eq!(verdict(&cam.submit(&solution("reverse-lines.sh"))), "Accepted");

    at(1500);
    assert_eq!(verdict(&ana.check(&solution("even-sum.loops.sh"))), "Accepted");
    at(1560);
    assert_eq!(verdict(&ana.submit(&solution("even-sum.loops.sh"))), "TimeLimitExceeded");
    at(1800);
    ana.hint();
    at(2400);
    assert_eq!(verdict(&ana.submit(&solution("even-sum.sh"))), "Accepted");

    at(2500);
    assert_eq!(verdict(&ben.submit(&solution("even-sum.loops.sh"))), "TimeLimitExceeded");
    at(2600);
    ben.hint();
    at(2700);
    ben.hint();

    at(3000);
    ana.hint();
    at(3300);
    assert_eq!(verdict(&ana.submit(&solution("failed-logins.ascending.sh"))), "WrongAnswer");
    at(3600);
    let done = ana.submit(&solution("failed-logins.sh"));
    assert_eq!(verdict(&done), "Accepted");
    assert_eq!(done["finished"], true);

    at(4000);
    cam.hint();
}
