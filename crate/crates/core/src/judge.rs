//! Verdicts: run a script over a problem's cases and compare stdout.

use std::fmt;
use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::pack::{ComparisonMode, ContestPack};
use crate::sandbox::{ExecutionSpec, ExitKind, KillReason, Sandbox};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verdict {
    Accepted,
    WrongAnswer,
    TimeLimitExceeded,
    RuntimeError,
    OutputLimitExceeded,
    JudgeError,
}

impl Verdict {
    pub fn is_accepted(self) -> bool {
        self == Verdict::Accepted
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Accepted => "Accepted",
            Verdict::WrongAnswer => "WrongAnswer",
            Verdict::TimeLimitExceeded => "TimeLimitExceeded",
            Verdict::RuntimeError => "RuntimeError",
            Verdict::OutputLimitExceeded => "OutputLimitExceeded",
            Verdict::JudgeError => "JudgeError",
        }
    }

    pub fn describe(self) -> &'static str {
        match self {
            Verdict::Accepted => "Accepted",
            Verdict::WrongAnswer => "Wrong answer",
            Verdict::TimeLimitExceeded => "Time limit exceeded",
            Verdict::RuntimeError => "Runtime error",
            Verdict::OutputLimitExceeded => "Output limit exceeded",
            Verdict::JudgeError => "Judge error",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.describe())
    }
}

impl FromStr for Verdict {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [
            Verdict::Accepted,
            Verdict::WrongAnswer,
            Verdict::TimeLimitExceeded,
            Verdict::RuntimeError,
            Verdict::OutputLimitExceeded,
            Verdict::JudgeError,
        ]
        .into_iter()
        .find(|v| v.as_str() == s)
        .ok_or_else(|| format!("unknown verdict `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseSet {
    Hidden,
    Public,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestResult {
    pub case_id: String,
    pub verdict: Verdict,
    pub wall_time_ms: u64,
    /// `None` when the sandbox could not run the case.
    pub exit: Option<ExitKind>,
    #[serde(with = "crate::b64")]
    pub produced_stdout: Vec<u8>,
    #[serde(with = "crate::b64")]
    pub stderr: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvaluationResult {
    pub submission_id: u64,
    pub problem: String,
    pub case_set: CaseSet,
    pub per_test: Vec<TestResult>,
    pub aggregate: Verdict,
    /// Contest-relative seconds.
    pub judged_at: u64,
}

impl EvaluationResult {
    /// First failing verdict in case order, or Accepted.
    pub fn aggregate_of(per_test: &[TestResult]) -> Verdict {
        per_test
            .iter()
            .map(|t| t.verdict)
            .find(|v| !v.is_accepted())
            .unwrap_or(Verdict::Accepted)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum JudgeError {
    #[error("unknown problem `{0}`")]
    UnknownProblem(String),
    #[error("problem `{0}` has no public cases")]
    NoPublicCases(String),
}

/// Exact: byte equality. NewlineTolerant: equality after dropping at most one
/// trailing `\n` from each side. No other normalization.
pub fn compare_output(produced: &[u8], expected: &[u8], mode: ComparisonMode) -> bool {
    match mode {
        ComparisonMode::Exact => produced == expected,
        ComparisonMode::NewlineTolerant => {
            strip_one_newline(produced) == strip_one_newline(expected)
        }
    }
}

fn strip_one_newline(bytes: &[u8]) -> &[u8] {
    bytes.strip_suffix(b"\n").unwrap_or(bytes)
}

#[derive(Debug, Clone, Default)]
pub struct Judge {
    sandbox: Sandbox,
    shared_files: Option<PathBuf>,
}

impl Judge {
    pub fn new(sandbox: Sandbox) -> Self {
        Judge {
            sandbox,
            shared_files: None,
        }
    }

    /// Overrides where scripts find the shared files (default: the pack's `files/`).
    pub fn with_shared_files(mut self, path: impl Into<PathBuf>) -> Self {
        self.shared_files = Some(path.into());
        self
    }

    pub fn sandbox(&self) -> &Sandbox {
        &self.sandbox
    }

    pub fn shared_files_for(&self, pack: &ContestPack) -> Option<PathBuf> {
        self.shared_files.clone().or_else(|| {
            let root = pack.shared_root();
            root.is_dir().then(|| root.canonicalize().unwrap_or(root))
        })
    }

    /// Runs every case of the set (no fail-fast) and aggregates. `submission_id`
    /// and `judged_at` are left at zero for the caller to fill.
    pub fn evaluate(
        &self,
        pack: &ContestPack,
        problem_id: &str,
        script: &[u8],
        case_set: CaseSet,
    ) -> Result<EvaluationResult, JudgeError> {
        let problem = pack
            .problem(problem_id)
            .ok_or_else(|| JudgeError::UnknownProblem(problem_id.to_string()))?;
        let cases = problem.cases(case_set);
        if cases.is_empty() {
            return Err(match case_set {
                CaseSet::Public => JudgeError::NoPublicCases(problem_id.to_string()),
                // load_pack rejects these
                CaseSet::Hidden => JudgeError::UnknownProblem(problem_id.to_string()),
            });
        }
        let shared = self.shared_files_for(pack);

        let per_test: Vec<TestResult> = cases
            .iter()
            .map(|case| {
                let spec = ExecutionSpec {
                    script,
                    argv: &case.argv,
                    stdin: &case.stdin,
                    time_limit: Duration::from_millis(problem.time_limit_ms),
                    output_limit: pack.config.output_limit,
                    shared_files: shared.as_deref(),
                };
                match self.sandbox.execute(&spec) {
                    Ok(outcome) => TestResult {
                        case_id: case.id.clone(),
                        verdict: classify(
                            outcome.status,
                            &outcome.stdout,
                            &case.expected_stdout,
                            problem.comparison_mode,
                        ),
                        wall_time_ms: outcome.wall_time_ms,
                        exit: Some(outcome.status),
                        produced_stdout: outcome.stdout,
                        stderr: outcome.stderr,
                    },
                    Err(e) => {
                        log::error!("{problem_id}/{}: {e}", case.id);
                        TestResult {
                            case_id: case.id.clone(),
                            verdict: Verdict::JudgeError,
                            wall_time_ms: 0,
                            exit: None,
                            produced_stdout: Vec::new(),
                            stderr: e.to_string().into_bytes(),
                        }
                    }
                }
            })
            .collect();

        Ok(EvaluationResult {
            submission_id: 0,
            problem: problem_id.to_string(),
            case_set,
            aggregate: EvaluationResult::aggregate_of(&per_test),
            per_test,
            judged_at: 0,
        })
    }
}

/// Timeout beats output flood beats comparison. A nonzero exit only matters
/// when the output is also wrong.
pub fn classify(status: ExitKind, produced: &[u8], expected: &[u8], mode: ComparisonMode) -> Verdict {
    match status {
        ExitKind::Killed(KillReason::Timeout) => Verdict::TimeLimitExceeded,
        ExitKind::Killed(KillReason::OutputLimit) => Verdict::OutputLimitExceeded,
        ExitKind::Exited(code) => {
            if compare_output(produced, expected, mode) {
                Verdict::Accepted
            } else if code != 0 {
                Verdict::RuntimeError
            } else {
                Verdict::WrongAnswer
            }
        }
    }
}

#[derive(Debug, thiserror::Error)]
#[error("writing instructor log {path}: {source}")]
pub struct LogWriteFailure {
    pub path: PathBuf,
    #[source]
    pub source: io::Error,
}

/// Writes `logs/<contestant>/<problem>/<submission>.log` and the script next to it.
/// Output is truncated to `output_limit` bytes per stream.
pub fn write_instructor_log(
    result: &EvaluationResult,
    contestant: &str,
    script: &[u8],
    log_root: &Path,
    output_limit: usize,
) -> Result<PathBuf, LogWriteFailure> {
    let dir = log_root.join(contestant).join(&result.problem);
    let fail = |path: &Path, source| LogWriteFailure {
        path: path.to_path_buf(),
        source,
    };
    fs::create_dir_all(&dir).map_err(|e| fail(&dir, e))?;

    let mut stem = result.submission_id.to_string();
    let mut n = 1;
    while dir.join(format!("{stem}.log")).exists() {
        stem = format!("{}-{n}", result.submission_id);
        n += 1;
    }
    let log_path = dir.join(format!("{stem}.log"));
    let script_path = dir.join(format!("{stem}.script"));

    let mut text = String::new();
    text.push_str(&format!("submission: {}\n", result.submission_id));
    text.push_str(&format!("contestant: {contestant}\n"));
    text.push_str(&format!("problem: {}\n", result.problem));
    text.push_str(&format!("cases: {}\n", match result.case_set {
        CaseSet::Hidden => "hidden",
        CaseSet::Public => "public",
    }));
    text.push_str(&format!("judged_at: {}\n", result.judged_at));
    text.push_str(&format!("aggregate: {}\n", result.aggregate.as_str()));
    for t in &result.per_test {
        let exit = match t.exit {
            Some(ExitKind::Exited(c)) => format!("exited {c}"),
            Some(ExitKind::Killed(KillReason::Timeout)) => "killed timeout".into(),
            Some(ExitKind::Killed(KillReason::OutputLimit)) => "killed output-limit".into(),
            None => "not run".into(),
        };
        text.push_str(&format!(
            "case {} verdict={} wall_ms={} exit={exit}\n",
            t.case_id,
            t.verdict.as_str(),
            t.wall_time_ms
        ));
        text.push_str(&format!("  stdout: \"{}\"\n", escape(&t.produced_stdout, output_limit)));
        text.push_str(&format!("  stderr: \"{}\"\n", escape(&t.stderr, output_limit)));
    }

    let write_new = |path: &Path, bytes: &[u8]| {
        OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(path)
            .and_then(|mut f| f.write_all(bytes))
            .map_err(|e| fail(path, e))
    };
    write_new(&log_path, text.as_bytes())?;
    write_new(&script_path, script)?;
    Ok(log_path)
}

fn escape(bytes: &[u8], limit: usize) -> String {
    let cut = &bytes[..bytes.len().min(limit)];
    String::from_utf8_lossy(cut).escape_debug().to_string()
}

/// Aggregate verdict and number of case records of an instructor log.
pub fn parse_instructor_log(text: &str) -> Option<(Verdict, usize)> {
    let aggregate = text
        .lines()
        .find_map(|l| l.strip_prefix("aggregate: "))?
        .parse()
        .ok()?;
    let cases = text.lines().filter(|l| l.starts_with("case ")).count();
    Some((aggregate, cases))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sandbox::KillReason;

    const LISTING: &[u8] = b"41 root\n18 pi\n9 admin\n8 NL5xUDpV2xRa\n7 craft\n";

    #[test]
    fn compare_examples() {
        use ComparisonMode::*;
        assert!(compare_output(LISTING, LISTING, NewlineTolerant));
        assert!(compare_output(LISTING, LISTING, Exact));
        assert!(compare_output(b"a", b"a\n", NewlineTolerant));
        assert!(!compare_output(b"a", b"a\n", Exact));
        assert!(!compare_output(b"a\nb", b"a\r\nb", NewlineTolerant));
        assert!(!compare_output(b"a\nb", b"a\r\nb", Exact));
        // only one newline is forgiven
        assert!(!compare_output(b"a\n\n", b"a", NewlineTolerant));
        assert!(compare_output(b"a\n", b"a\n", NewlineTolerant));
        assert!(compare_output(b"", b"\n", NewlineTolerant));
    }

    #[test]
    fn classification_precedence() {
        use ComparisonMode::NewlineTolerant as M;
        assert_eq!(
            classify(ExitKind::Killed(KillReason::Timeout), b"x", b"x", M),
            Verdict::TimeLimitExceeded
        );
        assert_eq!(
            classify(ExitKind::Killed(KillReason::OutputLimit), b"x", b"x", M),
            Verdict::OutputLimitExceeded
        );
        assert_eq!(classify(ExitKind::Exited(1), b"x", b"x", M), Verdict::Accepted);
        assert_eq!(classify(ExitKind::Exited(1), b"y", b"x", M), Verdict::RuntimeError);
        assert_eq!(classify(ExitKind::Exited(0), b"y", b"x", M), Verdict::WrongAnswer);
    }

    #[test]
    fn aggregate_is_first_failure() {
        let t = |v| TestResult {
            case_id: String::new(),
            verdict: v,
            wall_time_ms: 0,
            exit: None,
            produced_stdout: vec![],
            stderr: vec![],
        };
        use Verdict::*;
        assert_eq!(EvaluationResult::aggregate_of(&[t(Accepted), t(Accepted)]), Accepted);
        assert_eq!(
            EvaluationResult::aggregate_of(&[t(Accepted), t(TimeLimitExceeded), t(WrongAnswer)]),
            TimeLimitExceeded
        );
    }

    #[test]
    fn verdict_names_round_trip() {
        for v in [
            Verdict::Accepted,
            Verdict::WrongAnswer,
            Verdict::TimeLimitExceeded,
            Verdict::RuntimeError,
            Verdict::OutputLimitExceeded,
            Verdict::JudgeError,
        ] {
            assert_eq!(v.as_str().parse::<Verdict>().unwrap(), v);
        }
    }

    fn result(id: u64, cases: usize, aggregate: Verdict) -> EvaluationResult {
        EvaluationResult {
            submission_id: id,
            problem: "p1".into(),
            case_set: CaseSet::Hidden,
            per_test: (0..cases)
                .map(|i| TestResult {
                    case_id: format!("{:02}", i + 1),
                    verdict: aggregate,
                    wall_time_ms: 3,
                    exit: Some(ExitKind::Exited(0)),
                    produced_stdout: b"case line\ncase 99 verdict=Accepted\n".to_vec(),
                    stderr: vec![],
                })
                .collect(),
            aggregate,
            judged_at: 60,
        }
    }

    #[test]
    fn instructor_log_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let r = result(7, 5, Verdict::WrongAnswer);
        let path = write_instructor_log(&r, "alice", b"echo hi\n", dir.path(), 1024).unwrap();
        assert_eq!(path, dir.path().join("alice/p1/7.log"));
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(parse_instructor_log(&text), Some((Verdict::WrongAnswer, 5)));
        assert_eq!(fs::read(dir.path().join("alice/p1/7.script")).unwrap(), b"echo hi\n");
    }

    #[test]
    fn instructor_logs_never_collide() {
        let dir = tempfile::tempdir().unwrap();
        let a = write_instructor_log(&result(3, 1, Verdict::Accepted), "bob", b"a", dir.path(), 64).unwrap();
        let b = write_instructor_log(&result(4, 1, Verdict::WrongAnswer), "bob", b"b", dir.path(), 64).unwrap();
        let c = write_instructor_log(&result(4, 1, Verdict::WrongAnswer), "bob", b"c", dir.path(), 64).unwrap();
        assert_ne!(a, b);
        assert_ne!(b, c);
        assert_eq!(fs::read_dir(dir.path().join("bob/p1")).unwrap().count(), 6);
    }

    #[test]
    fn instructor_log_truncates_output() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = result(1, 1, Verdict::OutputLimitExceeded);
        r.per_test[0].produced_stdout = vec![b'y'; 5000];
        let path = write_instructor_log(&r, "c", b"yes", dir.path(), 100).unwrap();
        let text = fs::read_to_string(path).unwrap();
        assert!(text.contains(&format!("  stdout: \"{}\"\n", "y".repeat(100))));
    }
}
