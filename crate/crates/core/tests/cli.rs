mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use common::{copy_dir, fixture_pack, fixtures, scripted_contest, Daemon};
use shelljudge::load_pack;
use shelljudge::scoring::render_ranking;

fn shelljudge(config: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shelljudge"))
        .args(args)
        .env("SHELLJUDGE_CONFIG", config)
        .env_remove("SHELLJUDGE_SOCKET")
        .env_remove("SHELLJUDGE_ID")
        .env_remove("SHELLJUDGE_TOKEN")
        .env_remove("SHELLJUDGE_BACKEND")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn contestant_session() {
    let d = Daemon::start(&fixture_pack());
    let cfg = d.dir.path().join("client.toml");
    let socket = d.socket.to_str().unwrap();
    let sol = |n: &str| fixtures().join("solutions").join(n).to_string_lossy().into_owned();

    let o = shelljudge(&cfg, &["--socket", socket, "register", "ana"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("active problem: reverse-lines"));
    let saved = fs::read_to_string(&cfg).unwrap();
    assert!(saved.contains("id = \"ana\"") && saved.contains("token = "));

    // later calls need nothing but the config file
    let o = shelljudge(&cfg, &["check", &sol("reverse-lines.wrong.sh")]);
    assert_eq!(o.status.code(), Some(1));
    let out = stdout(&o);
    assert!(out.contains("--- expected") && out.contains("\n-uno\n") && out.contains("\n+uno\n"), "{out}");

    let o = shelljudge(&cfg, &["submit", &sol("reverse-lines.wrong.sh")]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).starts_with("Wrong answer (attempt 1)\n"), "{}", stdout(&o));

    let o = shelljudge(&cfg, &["submit", &sol("reverse-lines.wrong.sh")]);
    assert!(stdout(&o).starts_with("Wrong answer (attempt 2)\n"));

    let o = shelljudge(&cfg, &["check", &sol("reverse-lines.sh")]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("\u{2713} 01"));

    let o = shelljudge(&cfg, &["submit", &sol("reverse-lines.sh")]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).starts_with("Accepted \u{2014} problem 2 unlocked\n"), "{}", stdout(&o));

    let o = shelljudge(&cfg, &["submit", &sol("even-sum.sh")]);
    assert!(stdout(&o).starts_with("Accepted \u{2014} problem 3 unlocked\n"));

    let o = shelljudge(&cfg, &["hint"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert!(out.contains("sort -n") && out.contains("penalty +15 min"), "{out}");
    assert_eq!(shelljudge(&cfg, &["hint"]).status.code(), Some(0));
    let o = shelljudge(&cfg, &["hint"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("no hints remain"));

    let o = shelljudge(&cfg, &["status"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("active problem: failed-logins (3/3)"));

    let o = shelljudge(&cfg, &["--color", "submit", &sol("failed-logins.sh")]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).starts_with("Accepted \u{2014} all problems solved\n"));
    let o = shelljudge(&cfg, &["submit", &sol("failed-logins.sh")]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn auth_and_transport_failures_exit_two() {
    let d = Daemon::start(&fixture_pack());
    let cfg = d.dir.path().join("none.toml");
    let socket = d.socket.to_str().unwrap();
    let o = shelljudge(&cfg, &["--socket", socket, "--id", "ghost", "--token", "x", "hint"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("authentication failed"));

    let o = shelljudge(&cfg, &["--socket", "/nonexistent/x.sock", "--id", "a", "--token", "b", "submit", "/dev/null"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("cannot reach the judge daemon"));
}

#[test]
fn pack_validate_verb() {
    let cfg = Path::new("/nonexistent");
    let pack = fixture_pack();
    let refs: Vec<String> = ["reverse-lines", "even-sum", "failed-logins"]
        .iter()
        .map(|p| format!("{p}={}", fixtures().join("solutions").join(format!("{p}.sh")).display()))
        .collect();
    let mut args = vec!["admin", "pack-validate", pack.to_str().unwrap()];
    for r in &refs {
        args.extend(["--reference", r]);
    }
    let o = shelljudge(cfg, &args);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("pack ok: 3 problems, 3 reference solutions passed"));

    let dir = tempfile::tempdir().unwrap();
    copy_dir(&pack, dir.path());
    let hidden = dir.path().join("problems/failed-logins/hidden");
    fs::remove_dir_all(&hidden).unwrap();
    fs::create_dir(&hidden).unwrap();
    let o = shelljudge(cfg, &["admin", "pack-validate", dir.path().to_str().unwrap()]);
    assert_ne!(o.status.code(), Some(0));
    assert!(stderr(&o).contains("`failed-logins` has no hidden cases"), "{}", stderr(&o));
}

#[test]
fn replay_and_export_verbs() {
    let mut d = Daemon::start(&fixture_pack());
    scripted_contest(&d);
    let live = render_ranking(&d.handle().contest().snapshot().rows, &load_pack(fixture_pack()).unwrap());
    let log = d.event_log();
    d.shutdown();
    let cfg = Path::new("/nonexistent");
    let pack = fixture_pack();

    let o = shelljudge(cfg, &["admin", "replay", log.to_str().unwrap(), "--pack", pack.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o), live);
    assert!(live.lines().nth(1).unwrap().starts_with("1     ana"), "{live}");

    let out = d.dir.path().join("results.csv");
    let stats = d.dir.path().join("problems.csv");
    let o = shelljudge(
        cfg,
        &[
            "admin",
            "export",
            out.to_str().unwrap(),
            "--log",
            log.to_str().unwrap(),
            "--pack",
            pack.to_str().unwrap(),
            "--problems",
            stats.to_str().unwrap(),
        ],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(fs::read_to_string(&out).unwrap().lines().count(), 4);
    assert_eq!(fs::read_to_string(&stats).unwrap().lines().count(), 4);
}
