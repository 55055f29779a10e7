//! On-disk contest packs.
//!
//! Layout:
//!
//! ```text
//! contest.json
//! problems/<id>/statement.txt
//! problems/<id>/problem.json            (optional)
//! problems/<id>/hints/<n>.txt
//! problems/<id>/public/NN.{args,stdin,out}
//! problems/<id>/hidden/NN.{args,stdin,out}
//! files/                                (shared data)
//! ```
//!
//! A pack is read fully into memory by [`load_pack`] and is immutable afterwards.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::judge::{CaseSet, Judge};

pub const MANIFEST_FILE: &str = "contest.json";
pub const PROBLEM_FILE: &str = "problem.json";
pub const SHARED_DIR: &str = "files";

/// Placeholder in `.args` lines replaced by the shared-files mount path.
pub const FILES_PLACEHOLDER: &str = "{FILES}";
/// Placeholder in `.args` lines replaced by a private file holding the case's stdin bytes.
pub const INPUT_PLACEHOLDER: &str = "{INPUT}";

pub const DEFAULT_TIME_LIMIT_MS: u64 = 5000;
pub const DEFAULT_OUTPUT_LIMIT: u64 = 1024 * 1024;
pub const DEFAULT_WRONG_ATTEMPT_PENALTY: u64 = 10;
pub const DEFAULT_HINT_PENALTY: u64 = 15;

#[derive(Debug, thiserror::Error)]
pub enum PackError {
    #[error("no {MANIFEST_FILE} in {0}")]
    MissingManifest(PathBuf),
    #[error("malformed manifest field `{field}`: {reason}")]
    MalformedManifest { field: String, reason: String },
    #[error("problem `{0}` listed in problem_order has no directory")]
    MissingProblem(String),
    #[error("problem `{0}` has no hidden cases")]
    MissingHiddenCases(String),
    #[error("problem `{problem}` is missing hint {index}")]
    HintGap { problem: String, index: u32 },
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl PackError {
    fn malformed(field: impl Into<String>, reason: impl ToString) -> Self {
        PackError::MalformedManifest {
            field: field.into(),
            reason: reason.to_string(),
        }
    }

    fn io(path: &Path, source: io::Error) -> Self {
        PackError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComparisonMode {
    Exact,
    #[default]
    NewlineTolerant,
}

/// Contest-wide settings from `contest.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContestConfig {
    pub name: String,
    /// Contest length in minutes.
    pub duration: u64,
    #[serde(default = "default_wrong_attempt_penalty")]
    pub wrong_attempt_penalty: u64,
    #[serde(default = "default_hint_penalty")]
    pub hint_penalty: u64,
    #[serde(default = "default_output_limit")]
    pub output_limit: u64,
    pub problem_order: Vec<String>,
    /// Caps the hints served per problem below the number authored.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_hints: Option<u32>,
    /// Charge failed attempts on problems that were never solved.
    #[serde(default)]
    pub count_unsolved_failures: bool,
}

fn default_wrong_attempt_penalty() -> u64 {
    DEFAULT_WRONG_ATTEMPT_PENALTY
}
fn default_hint_penalty() -> u64 {
    DEFAULT_HINT_PENALTY
}
fn default_output_limit() -> u64 {
    DEFAULT_OUTPUT_LIMIT
}

impl ContestConfig {
    pub fn duration_secs(&self) -> u64 {
        self.duration * 60
    }

    fn validate(&self) -> Result<(), PackError> {
        if self.duration == 0 {
            return Err(PackError::malformed("duration", "must be positive"));
        }
        if self.output_limit == 0 {
            return Err(PackError::malformed("output_limit", "must be positive"));
        }
        if self.problem_order.is_empty() {
            return Err(PackError::malformed("problem_order", "must not be empty"));
        }
        let mut seen = BTreeSet::new();
        for id in &self.problem_order {
            if !is_slug(id) {
                return Err(PackError::malformed(
                    "problem_order",
                    format!("`{id}` is not a valid problem id"),
                ));
            }
            if !seen.insert(id) {
                return Err(PackError::malformed(
                    "problem_order",
                    format!("duplicate problem id `{id}`"),
                ));
            }
        }
        Ok(())
    }
}

fn is_slug(s: &str) -> bool {
    !s.is_empty()
        && s
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProblemManifest {
    title: Option<String>,
    time_limit: Option<u64>,
    comparison_mode: Option<ComparisonMode>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestCase {
    pub id: String,
    pub argv: Vec<String>,
    #[serde(with = "crate::b64")]
    pub stdin: Vec<u8>,
    #[serde(with = "crate::b64")]
    pub expected_stdout: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hint {
    pub index: u32,
    pub body: String,
}

/// Counts reads of a problem's hidden cases. Not part of the problem's identity.
#[derive(Debug, Default)]
pub struct AccessCounter(AtomicU64);

impl AccessCounter {
    fn bump(&self) {
        self.0.fetch_add(1, Ordering::Relaxed);
    }

    pub fn get(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }
}

impl Clone for AccessCounter {
    fn clone(&self) -> Self {
        AccessCounter::default()
    }
}

impl PartialEq for AccessCounter {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

impl Eq for AccessCounter {}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Problem {
    pub id: String,
    pub title: String,
    pub statement: String,
    pub hints: Vec<Hint>,
    pub public_cases: Vec<TestCase>,
    hidden_cases: Vec<TestCase>,
    pub time_limit_ms: u64,
    pub comparison_mode: ComparisonMode,
    hidden_reads: AccessCounter,
}

impl Problem {
    pub fn hidden_cases(&self) -> &[TestCase] {
        self.hidden_reads.bump();
        &self.hidden_cases
    }

    /// Number of times [`Problem::hidden_cases`] has been called on this value.
    pub fn hidden_reads(&self) -> u64 {
        self.hidden_reads.get()
    }

    pub fn cases(&self, set: CaseSet) -> &[TestCase] {
        match set {
            CaseSet::Public => &self.public_cases,
            CaseSet::Hidden => self.hidden_cases(),
        }
    }

    pub fn hidden_case_count(&self) -> usize {
        self.hidden_cases.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContestPack {
    pub root: PathBuf,
    pub config: ContestConfig,
    /// In `problem_order`.
    pub problems: Vec<Problem>,
    /// Relative paths of every file under `files/`.
    pub shared_files: Vec<PathBuf>,
    /// Hex SHA-256 over every file in the pack.
    pub digest: String,
}

impl ContestPack {
    pub fn problem(&self, id: &str) -> Option<&Problem> {
        self.problems.iter().find(|p| p.id == id)
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.problems.iter().position(|p| p.id == id)
    }

    pub fn shared_root(&self) -> PathBuf {
        self.root.join(SHARED_DIR)
    }

    /// Hints a contestant may take on `problem`, honoring `max_hints`.
    pub fn hint_limit(&self, problem: &Problem) -> u32 {
        let authored = problem.hints.len() as u32;
        self.config.max_hints.map_or(authored, |cap| cap.min(authored))
    }
}

pub fn load_pack(path: impl AsRef<Path>) -> Result<ContestPack, PackError> {
    let root = path.as_ref();
    let manifest_path = root.join(MANIFEST_FILE);
    if !manifest_path.is_file() {
        return Err(PackError::MissingManifest(root.to_path_buf()));
    }
    let raw = read_text(&manifest_path)?;
    let config: ContestConfig = serde_json::from_str(&raw).map_err(|e| {
        let field = missing_field(&e.to_string()).unwrap_or_else(|| MANIFEST_FILE.to_string());
        PackError::malformed(field, e)
    })?;
    config.validate()?;

    let problems = config
        .problem_order
        .iter()
        .map(|id| load_problem(root, id))
        .collect::<Result<Vec<_>, _>>()?;

    let shared_root = root.join(SHARED_DIR);
    let shared_files = if shared_root.is_dir() {
        list_files(&shared_root)?
            .into_iter()
            .map(|p| p.strip_prefix(&shared_root).unwrap().to_path_buf())
            .collect()
    } else {
        Vec::new()
    };

    Ok(ContestPack {
        root: root.to_path_buf(),
        config,
        problems,
        shared_files,
        digest: pack_digest(root)?,
    })
}

fn missing_field(msg: &str) -> Option<String> {
    let rest = msg.split("missing field `").nth(1)?;
    Some(rest.split('`').next()?.to_string())
}

fn load_problem(root: &Path, id: &str) -> Result<Problem, PackError> {
    let dir = root.join("problems").join(id);
    if !dir.is_dir() {
        return Err(PackError::MissingProblem(id.to_string()));
    }
    let manifest = match dir.join(PROBLEM_FILE) {
        p if p.is_file() => serde_json::from_str::<ProblemManifest>(&read_text(&p)?)
            .map_err(|e| PackError::malformed(format!("problems/{id}/{PROBLEM_FILE}"), e))?,
        _ => ProblemManifest::default(),
    };
    let time_limit_ms = manifest.time_limit.unwrap_or(DEFAULT_TIME_LIMIT_MS);
    if time_limit_ms == 0 {
        return Err(PackError::malformed(
            format!("problems/{id}/{PROBLEM_FILE}: time_limit"),
            "must be positive",
        ));
    }

    let statement_path = dir.join("statement.txt");
    if !statement_path.is_file() {
        return Err(PackError::malformed(
            format!("problems/{id}/statement.txt"),
            "missing",
        ));
    }
    let statement = read_text(&statement_path)?;
    if statement.trim().is_empty() {
        return Err(PackError::malformed(
            format!("problems/{id}/statement.txt"),
            "empty",
        ));
    }

    let hints = load_hints(&dir.join("hints"), id)?;
    let public_cases = load_cases(&dir.join("public"), id)?;
    let hidden_cases = load_cases(&dir.join("hidden"), id)?;
    if hidden_cases.is_empty() {
        return Err(PackError::MissingHiddenCases(id.to_string()));
    }

    Ok(Problem {
        id: id.to_string(),
        title: manifest.title.unwrap_or_else(|| id.to_string()),
        statement,
        hints,
        public_cases,
        hidden_cases,
        time_limit_ms,
        comparison_mode: manifest.comparison_mode.unwrap_or_default(),
        hidden_reads: AccessCounter::default(),
    })
}

fn load_hints(dir: &Path, problem: &str) -> Result<Vec<Hint>, PackError> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut by_index = BTreeMap::new();
    for path in read_dir_sorted(dir)? {
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        let index = name
            .strip_suffix(".txt")
            .and_then(|s| s.parse::<u32>().ok())
            .filter(|&n| n > 0)
            .ok_or_else(|| {
                PackError::malformed(
                    format!("problems/{problem}/hints/{name}"),
                    "hint files must be named <n>.txt with n >= 1",
                )
            })?;
        by_index.insert(index, read_text(&path)?);
    }
    let mut hints = Vec::with_capacity(by_index.len());
    for (expected, (index, body)) in (1u32..).zip(by_index) {
        if index != expected {
            return Err(PackError::HintGap {
                problem: problem.to_string(),
                index: expected,
            });
        }
        hints.push(Hint { index, body });
    }
    Ok(hints)
}

fn load_cases(dir: &Path, problem: &str) -> Result<Vec<TestCase>, PackError> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    // case id -> extensions present
    let mut stems: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for path in read_dir_sorted(dir)? {
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        let (stem, ext) = name.rsplit_once('.').ok_or_else(|| {
            PackError::malformed(
                format!("{}/{name}", dir.display()),
                "expected NN.args, NN.stdin or NN.out",
            )
        })?;
        if !matches!(ext, "args" | "stdin" | "out") {
            return Err(PackError::malformed(
                format!("{}/{name}", dir.display()),
                "unknown test case file extension",
            ));
        }
        stems
            .entry(stem.to_string())
            .or_default()
            .insert(ext.to_string());
    }

    let mut cases = Vec::with_capacity(stems.len());
    for (id, exts) in stems {
        if !exts.contains("out") {
            return Err(PackError::malformed(
                format!("problems/{problem}/{}/{id}.out", dir_name(dir)),
                "expected output missing",
            ));
        }
        let argv = if exts.contains("args") {
            read_text(&dir.join(format!("{id}.args")))?
                .lines()
                .map(str::to_string)
                .collect()
        } else {
            Vec::new()
        };
        let stdin = if exts.contains("stdin") {
            read_bytes(&dir.join(format!("{id}.stdin")))?
        } else {
            Vec::new()
        };
        let expected_stdout = read_bytes(&dir.join(format!("{id}.out")))?;
        cases.push(TestCase {
            id,
            argv,
            stdin,
            expected_stdout,
        });
    }
    Ok(cases)
}

fn dir_name(dir: &Path) -> String {
    dir.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn read_text(path: &Path) -> Result<String, PackError> {
    let bytes = read_bytes(path)?;
    String::from_utf8(bytes).map_err(|_| PackError::malformed(path.display().to_string(), "not UTF-8"))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, PackError> {
    fs::read(path).map_err(|e| PackError::io(path, e))
}

fn read_dir_sorted(dir: &Path) -> Result<Vec<PathBuf>, PackError> {
    let mut entries = fs::read_dir(dir)
        .map_err(|e| PackError::io(dir, e))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| PackError::io(dir, e))?;
    entries.retain(|p| p.is_file());
    entries.sort();
    Ok(entries)
}

fn list_files(dir: &Path) -> Result<Vec<PathBuf>, PackError> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).map_err(|e| PackError::io(&d, e))? {
            let path = entry.map_err(|e| PackError::io(&d, e))?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}

fn pack_digest(root: &Path) -> Result<String, PackError> {
    let mut hasher = Sha256::new();
    for path in list_files(root)? {
        let rel = path.strip_prefix(root).unwrap();
        hasher.update(rel.to_string_lossy().as_bytes());
        hasher.update([0]);
        let bytes = read_bytes(&path)?;
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(&bytes);
    }
    Ok(hex::encode(hasher.finalize()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "finding", rename_all = "snake_case")]
pub enum Finding {
    /// A directory under `problems/` that `problem_order` never mentions.
    UnreferencedProblem { problem: String },
    NoPublicCases { problem: String },
    MissingSharedFile {
        problem: String,
        case: String,
        path: String,
    },
    EmptyExpectedOutput { problem: String, case: String },
    ReferenceMismatch {
        problem: String,
        case: String,
        verdict: String,
    },
    ReferenceFailure { problem: String, message: String },
    UnknownReferenceProblem { problem: String },
}

impl std::fmt::Display for Finding {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Finding::UnreferencedProblem { problem } => {
                write!(f, "problems/{problem} is not listed in problem_order")
            }
            Finding::NoPublicCases { problem } => write!(f, "{problem}: no public cases"),
            Finding::MissingSharedFile {
                problem,
                case,
                path,
            } => write!(f, "{problem}/{case}: shared file {path} does not exist"),
            Finding::EmptyExpectedOutput { problem, case } => {
                write!(f, "{problem}/hidden/{case}: expected output is empty")
            }
            Finding::ReferenceMismatch {
                problem,
                case,
                verdict,
            } => write!(f, "{problem}/hidden/{case}: reference solution got {verdict}"),
            Finding::ReferenceFailure { problem, message } => {
                write!(f, "{problem}: reference solution could not be judged: {message}")
            }
            Finding::UnknownReferenceProblem { problem } => {
                write!(f, "reference solution given for unknown problem `{problem}`")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.findings.is_empty()
    }
}

/// Structural pre-flight checks, plus a hidden-case run of every supplied reference solution.
pub fn validate_pack(
    pack: &ContestPack,
    reference_solutions: &BTreeMap<String, Vec<u8>>,
    judge: &Judge,
) -> ValidationReport {
    let mut findings = Vec::new();

    let listed: BTreeSet<&str> = pack.config.problem_order.iter().map(String::as_str).collect();
    if let Ok(entries) = fs::read_dir(pack.root.join("problems")) {
        let mut extra: Vec<String> = entries
            .filter_map(Result::ok)
            .filter(|e| e.path().is_dir())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .filter(|name| !listed.contains(name.as_str()))
            .collect();
        extra.sort();
        findings.extend(
            extra
                .into_iter()
                .map(|problem| Finding::UnreferencedProblem { problem }),
        );
    }

    let shared: BTreeSet<&Path> = pack.shared_files.iter().map(PathBuf::as_path).collect();
    for problem in &pack.problems {
        if problem.public_cases.is_empty() {
            findings.push(Finding::NoPublicCases {
                problem: problem.id.clone(),
            });
        }
        for case in problem.public_cases.iter().chain(&problem.hidden_cases) {
            for arg in &case.argv {
                if let Some(rel) = arg.strip_prefix(FILES_PLACEHOLDER) {
                    let rel = rel.trim_start_matches('/');
                    if !rel.is_empty() && !shared.contains(Path::new(rel)) && !pack.shared_root().join(rel).is_dir() {
                        findings.push(Finding::MissingSharedFile {
                            problem: problem.id.clone(),
                            case: case.id.clone(),
                            path: format!("{SHARED_DIR}/{rel}"),
                        });
                    }
                }
            }
        }
        for case in &problem.hidden_cases {
            if case.expected_stdout.is_empty() {
                findings.push(Finding::EmptyExpectedOutput {
                    problem: problem.id.clone(),
                    case: case.id.clone(),
                });
            }
        }
    }

    for (problem_id, script) in reference_solutions {
        if pack.problem(problem_id).is_none() {
            findings.push(Finding::UnknownReferenceProblem {
                problem: problem_id.clone(),
            });
            continue;
        }
        match judge.evaluate(pack, problem_id, script, CaseSet::Hidden) {
            Ok(result) => findings.extend(
                result
                    .per_test
                    .iter()
                    .filter(|t| !t.verdict.is_accepted())
                    .map(|t| Finding::ReferenceMismatch {
                        problem: problem_id.clone(),
                        case: t.case_id.clone(),
                        verdict: t.verdict.to_string(),
                    }),
            ),
            Err(e) => findings.push(Finding::ReferenceFailure {
                problem: problem_id.clone(),
                message: e.to_string(),
            }),
        }
    }

    ValidationReport { findings }
}
