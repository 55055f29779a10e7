mod common;

use std::collections::{BTreeMap, HashMap};
use std::fs;

use common::{copy_dir, fixture_pack, fixtures, references, solution};
use shelljudge::pack::{Finding, PackError};
use shelljudge::{load_pack, validate_pack, CaseSet, ComparisonMode, Judge, Verdict};

const LISTING_OUTPUT: &str = "41 root\n18 pi\n9 admin\n8 NL5xUDpV2xRa\n7 craft\n";

/// Per-user line counts of a lastb-style log, computed without the judge.
fn user_counts(log: &str) -> HashMap<String, usize> {
    let mut counts = HashMap::new();
    for line in log.lines() {
        if let Some(user) = line.split_whitespace().next() {
            *counts.entry(user.to_string()).or_default() += 1;
        }
    }
    counts
}

#[test]
fn loading_is_deterministic_and_ordered() {
    let a = load_pack(fixture_pack()).unwrap();
    let b = load_pack(fixture_pack()).unwrap();
    assert_eq!(a, b);
    let ids: Vec<_> = a.problems.iter().map(|p| p.id.as_str()).collect();
    assert_eq!(ids, ["reverse-lines", "even-sum", "failed-logins"]);
}

#[test]
fn failed_logins_problem_shape() {
    let pack = load_pack(fixture_pack()).unwrap();
    let p = pack.problem("failed-logins").unwrap();
    assert_eq!(p.hints.len(), 2);
    assert_eq!(p.comparison_mode, ComparisonMode::NewlineTolerant);
    assert_eq!(p.public_cases.len(), 1);
    assert_eq!(p.public_cases[0].argv, ["7", "{FILES}/lastb/intentos_acceso.txt"]);
    assert_eq!(p.public_cases[0].expected_stdout, LISTING_OUTPUT.as_bytes());
    assert!(p.hints[0].body.contains("sort -n") && p.hints[0].body.contains("-r"));
    assert!(p.hints[1].body.contains("while read -r"));
}

#[test]
fn shared_log_has_the_listed_counts() {
    let text = fs::read_to_string(fixture_pack().join("files/lastb/intentos_acceso.txt")).unwrap();
    let counts = user_counts(&text);
    for (user, n) in [("root", 41), ("pi", 18), ("admin", 9), ("NL5xUDpV2xRa", 8), ("craft", 7)] {
        assert_eq!(counts[user], n, "{user}");
    }
    let big = counts.values().filter(|&&n| n >= 7).count();
    assert_eq!(big, 5, "only the five listed users reach 7");
}

#[test]
fn clean_pack_validates_with_references() {
    let pack = load_pack(fixture_pack()).unwrap();
    let judge = Judge::default();
    assert!(validate_pack(&pack, &BTreeMap::new(), &judge).is_clean());
    let report = validate_pack(&pack, &references(), &judge);
    assert!(report.is_clean(), "{:?}", report.findings);
}

#[test]
fn ascending_reference_flags_every_hidden_case() {
    let pack = load_pack(fixture_pack()).unwrap();
    let refs = BTreeMap::from([("failed-logins".to_string(), solution("failed-logins.ascending.sh"))]);
    let report = validate_pack(&pack, &refs, &Judge::default());
    let flagged: Vec<_> = report
        .findings
        .iter()
        .map(|f| match f {
            Finding::ReferenceMismatch { problem, case, .. } => format!("{problem}/{case}"),
            other => panic!("unexpected finding {other}"),
        })
        .collect();
    assert_eq!(flagged, ["failed-logins/01", "failed-logins/02", "failed-logins/03"]);
}

#[test]
fn broken_pack_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    copy_dir(&fixture_pack(), dir.path());
    let hidden = dir.path().join("problems/even-sum/hidden");
    fs::remove_dir_all(&hidden).unwrap();
    fs::create_dir(&hidden).unwrap();
    match load_pack(dir.path()) {
        Err(PackError::MissingHiddenCases(p)) => assert_eq!(p, "even-sum"),
        other => panic!("expected MissingHiddenCases, got {other:?}"),
    }
}

#[test]
fn reference_judging_and_aggregate_consistency() {
    let pack = load_pack(fixture_pack()).unwrap();
    let judge = Judge::default();
    for (problem, script) in references() {
        for set in [CaseSet::Public, CaseSet::Hidden] {
            let r = judge.evaluate(&pack, &problem, &script, set).unwrap();
            assert_eq!(r.aggregate, Verdict::Accepted, "{problem} {set:?}");
            assert!(r.per_test.iter().all(|t| t.verdict == Verdict::Accepted));
        }
    }
}

#[test]
fn ascending_output_is_wrong_on_first_case() {
    let pack = load_pack(fixture_pack()).unwrap();
    let r = Judge::default()
        .evaluate(&pack, "failed-logins", &solution("failed-logins.ascending.sh"), CaseSet::Hidden)
        .unwrap();
    assert_eq!(r.aggregate, Verdict::WrongAnswer);
    assert_eq!(r.per_test[0].verdict, Verdict::WrongAnswer);
    assert_eq!(r.per_test.len(), 3, "no fail-fast");
}

#[test]
fn loop_passes_public_and_times_out_hidden() {
    let pack = load_pack(fixture_pack()).unwrap();
    let judge = Judge::default();
    let script = solution("even-sum.loops.sh");
    let public = judge.evaluate(&pack, "even-sum", &script, CaseSet::Public).unwrap();
    assert_eq!(public.aggregate, Verdict::Accepted);
    let hidden = judge.evaluate(&pack, "even-sum", &script, CaseSet::Hidden).unwrap();
    assert_eq!(hidden.aggregate, Verdict::TimeLimitExceeded);
    let verdicts: Vec<_> = hidden.per_test.iter().map(|t| t.verdict).collect();
    assert_eq!(
        verdicts,
        [
            Verdict::TimeLimitExceeded,
            Verdict::Accepted,
            Verdict::TimeLimitExceeded,
            Verdict::TimeLimitExceeded
        ]
    );
}

#[test]
fn public_evaluation_never_reads_hidden_cases() {
    let pack = load_pack(fixture_pack()).unwrap();
    let judge = Judge::default();
    for p in &pack.problems {
        let before = p.hidden_reads();
        judge.evaluate(&pack, &p.id, b"cat\n", CaseSet::Public).unwrap();
        assert_eq!(p.hidden_reads(), before, "{}", p.id);
    }
    let p = pack.problem("reverse-lines").unwrap();
    judge.evaluate(&pack, "reverse-lines", b"cat\n", CaseSet::Hidden).unwrap();
    assert!(p.hidden_reads() > 0);
}

#[test]
fn instructor_logs_round_trip() {
    let pack = load_pack(fixture_pack()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut r = Judge::default()
        .evaluate(&pack, "even-sum", &solution("even-sum.sh"), CaseSet::Hidden)
        .unwrap();
    r.submission_id = 7;
    let a = shelljudge::judge::write_instructor_log(&r, "ana", b"script", dir.path(), 1024).unwrap();
    let b = shelljudge::judge::write_instructor_log(&r, "ana", b"script", dir.path(), 1024).unwrap();
    assert_ne!(a, b);
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(
        shelljudge::judge::parse_instructor_log(&text),
        Some((Verdict::Accepted, 4))
    );
    assert_eq!(fs::read(a.with_extension("script")).unwrap(), b"script");
    assert!(fixtures().is_dir());
}
