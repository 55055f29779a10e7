mod common;

use std::thread;

use common::{fixture_pack, scripted_contest, solution, Daemon, EXPECTED_RANKING, EXPECTED_STATS};
use serde_json::Value;
use shelljudge::service::Op;
use shelljudge::state::read_log;

#[test]
fn register_then_status_shows_first_problem() {
    let d = Daemon::start(&fixture_pack());
    let mut s = d.register("alice");
    let st = s.status();
    assert_eq!(st["active_problem"]["id"], "reverse-lines");
    assert_eq!(st["active_problem"]["number"], 1);
    assert_eq!(st["solved"], 0);
    assert_eq!(st["penalty_minutes"], "0.0");
    let ws = st["workspace"].as_str().unwrap();
    assert!(std::path::Path::new(ws).join("01-reverse-lines/statement.txt").is_file());
}

#[test]
fn bad_token_is_auth_error() {
    let d = Daemon::start(&fixture_pack());
    let mut s = d.register("alice");
    s.token = "0".repeat(32);
    let r = s.call(Op::Status, None);
    assert!(!r.ok);
    assert_eq!(r.error.as_deref(), Some("auth"));
    s.id = "nobody".into();
    assert_eq!(s.call(Op::Hint, None).error.as_deref(), Some("auth"));
}

#[test]
fn malformed_lines_keep_connection_open() {
    let d = Daemon::start(&fixture_pack());
    let mut c = d.client();
    for junk in ["not json", "{\"op\":\"fly\",\"contestant\":\"a\"}", "[]", "{\"op\":\"submit\"}"] {
        let r = c.send_line(junk).unwrap();
        assert!(!r.ok);
        assert_eq!(r.error.as_deref(), Some("bad_request"), "{junk}");
    }
    let r = c.send_line(r#"{"op":"register","contestant":"zoe"}"#).unwrap();
    assert!(r.ok);
    let token = r.data.unwrap()["token"].as_str().unwrap().to_string();
    let r = c
        .send_line(&format!(r#"{{"op":"submit","contestant":"zoe","token":"{token}"}}"#))
        .unwrap();
    assert_eq!(r.error.as_deref(), Some("bad_request"));
    let r = c
        .send_line(&format!(r#"{{"op":"status","contestant":"zoe","token":"{token}"}}"#))
        .unwrap();
    assert!(r.ok);
}

#[test]
fn submit_reveals_only_aggregate_and_check_shows_cases() {
    let d = Daemon::start(&fixture_pack());
    let mut s = d.register("ana");
    let sub = s.submit(&solution("reverse-lines.wrong.sh"));
    assert_eq!(sub["verdict"], "WrongAnswer");
    assert_eq!(sub["failed_attempts"], 1);
    assert!(sub.get("cases").is_none());
    let text = sub.to_string();
    assert!(!text.contains("charlie"), "hidden output leaked: {text}");

    let chk = s.check(&solution("reverse-lines.wrong.sh"));
    let cases = chk["cases"].as_array().unwrap();
    assert_eq!(cases.len(), 1);
    assert_eq!(cases[0]["expected"], "tres\ndos\nuno\n");
    assert_eq!(cases[0]["produced"], "uno\ndos\ntres\n");

    // read-your-writes on the same connection
    assert_eq!(s.status()["failed_attempts"], 1);
}

#[test]
fn concurrent_submissions_keep_log_dense() {
    let d = Daemon::start(&fixture_pack());
    let sessions: Vec<_> = (0..6).map(|i| d.register(&format!("c{i}"))).collect();
    let handles: Vec<_> = sessions
        .into_iter()
        .enumerate()
        .map(|(i, mut s)| {
            thread::spawn(move || {
                let script = if i % 2 == 0 {
                    solution("reverse-lines.sh")
                } else {
                    solution("reverse-lines.wrong.sh")
                };
                (0..3).map(|_| s.submit(&script)["verdict"].as_str().unwrap().to_string()).collect::<Vec<_>>()
            })
        })
        .collect();
    let verdicts: Vec<Vec<String>> = handles.into_iter().map(|h| h.join().unwrap()).collect();
    for (i, v) in verdicts.iter().enumerate() {
        let want = if i % 2 == 0 { "Accepted" } else { "WrongAnswer" };
        assert_eq!(v[0], want);
    }
    let events = read_log(&d.event_log()).unwrap();
    for (i, e) in events.iter().enumerate() {
        assert_eq!(e.seq, i as u64 + 1);
    }
    assert_eq!(events, d.handle().contest().events());
}

#[test]
fn second_submission_while_busy_is_rejected() {
    let d = Daemon::start(&fixture_pack());
    let mut s = d.register("ana");
    s.submit(&solution("reverse-lines.sh"));
    let mut other = d.client();
    let token = s.token.clone();
    let slow = thread::spawn(move || s.submit(&solution("even-sum.loops.sh")));
    // wait until the first evaluation is in flight
    let contest = d.handle().contest().clone();
    while contest.state().contestants["ana"].pending.is_none() {
        thread::sleep(std::time::Duration::from_millis(5));
    }
    let req = shelljudge::service::WireRequest::new(Op::Submit, "ana", &token).with_script(b"echo 1\n");
    let r = other.request(&req).unwrap();
    assert_eq!(r.error.as_deref(), Some("busy"));
    assert_eq!(slow.join().unwrap()["verdict"], "TimeLimitExceeded");
}

#[test]
fn http_ranking_and_page_follow_the_contest() {
    let d = Daemon::start(&fixture_pack());
    let fresh: Value = serde_json::from_str(&d.http_get("/api/ranking")).unwrap();
    assert_eq!(fresh["rows"], Value::Array(Vec::new()));
    assert_eq!(fresh["name"], "Fixture shell contest");
    assert_eq!(fresh["duration"], 7200);
    let page = d.http_get("/");
    assert!(page.contains("<meta http-equiv=\"refresh\" content=\"10\">"));

    scripted_contest(&d);

    let ranking: Value = serde_json::from_str(&d.http_get("/api/ranking")).unwrap();
    let rows = ranking["rows"].as_array().unwrap();
    let got: Vec<(String, u64, u64)> = rows
        .iter()
        .map(|r| {
            (
                r["contestant"].as_str().unwrap().to_string(),
                r["solved"].as_u64().unwrap(),
                r["penalty_seconds"].as_u64().unwrap(),
            )
        })
        .collect();
    let want: Vec<(String, u64, u64)> = EXPECTED_RANKING
        .iter()
        .map(|&(c, s, p)| (c.to_string(), s as u64, p))
        .collect();
    assert_eq!(got, want);
    assert_eq!(ranking["seq"].as_u64().unwrap(), d.handle().contest().events().len() as u64);

    let problems: Value = serde_json::from_str(&d.http_get("/api/problems")).unwrap();
    assert_eq!(problems["problems"], ranking["problems"]);
    for (stat, want) in problems["problems"].as_array().unwrap().iter().zip(EXPECTED_STATS) {
        assert_eq!(stat["problem"], want.0);
        assert_eq!(
            [&stat["correct"], &stat["failed"], &stat["hints"], &stat["checks"], &stat["stopped_here"]],
            [want.1, want.2, want.3, want.4, want.5]
        );
    }

    let page = d.http_get("/");
    assert_eq!(page.matches("<tr>").count(), 4);
    assert!(page.contains("<td>ana</td><td>3</td><td>120.0</td><td class=\"ac\">10 min<br><small>1 failed, 0 hints</small></td>"));
    assert!(d.http_get("/nope").contains("not found"));
}

#[test]
fn shutdown_records_end_when_time_is_up() {
    let mut d = Daemon::start(&fixture_pack());
    d.register("ana");
    d.clock.set(120 * 60 + 1);
    let log = d.event_log();
    d.shutdown();
    let events = read_log(&log).unwrap();
    assert!(matches!(events.last().unwrap().kind, shelljudge::EventKind::ContestEnded));
    assert!(!d.socket.exists());
}

#[test]
fn restart_resumes_from_log() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let token;
    {
        let mut d = Daemon::start_with(&fixture_pack(), |c| c.data_dir = data.clone());
        let mut s = d.register("ana");
        d.clock.set(60);
        s.submit(&solution("reverse-lines.sh"));
        token = s.token.clone();
        d.shutdown();
    }
    let d = Daemon::start_with(&fixture_pack(), |c| c.data_dir = data.clone());
    let mut s = common::Session {
        client: d.client(),
        id: "ana".into(),
        token,
    };
    let st = s.status();
    assert_eq!(st["solved"], 1);
    assert_eq!(st["active_problem"]["id"], "even-sum");
}
