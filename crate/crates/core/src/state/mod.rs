//! The contest state machine.
//!
//! Every mutation is an event: built under the writer lock, validated by
//! applying it to a copy of the state, fsynced to the log, then swapped in.
//! Evaluations run outside the lock and re-enter it to commit their result.

mod clock;
mod event;
mod model;
mod workspace;

use std::path::{Path, PathBuf};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};

use rand::Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

pub use clock::{unix_millis, Clock, ManualClock, SystemClock};
pub use event::{read_log, CaseVerdict, ContestEvent, EventKind, EventLog, LogReadError};
pub use model::{replay, ContestState, ContestantState, ProblemProgress, ReplayError};
pub use workspace::{materialize, problem_dir_name};

use crate::judge::{write_instructor_log, CaseSet, EvaluationResult, Judge, Verdict};
use crate::pack::{ContestPack, Hint};
use crate::scoring::{self, PenaltyRules, ProblemStats, RankingRow};

#[derive(Debug, thiserror::Error)]
pub enum StateError {
    #[error("contestant `{0}` is not registered")]
    NotRegistered(String),
    #[error("contestant `{0}` is already registered")]
    DuplicateContestant(String),
    #[error("`{0}` is not a valid contestant id (letters, digits, '-' and '_', at most 64)")]
    InvalidContestantId(String),
    #[error("invalid token")]
    Auth,
    #[error("the contest has ended")]
    ContestEnded,
    #[error("the contest is not running")]
    ContestNotRunning,
    #[error("all problems are already solved")]
    AlreadyFinished,
    #[error("no hints remain for this problem")]
    NoMoreHints,
    #[error("problem `{0}` has no public cases")]
    NoPublicCases(String),
    #[error("an evaluation for this contestant is still running")]
    Busy,
    #[error("writing workspace {path}: {source}")]
    WorkspaceWriteFailure {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("appending to event log: {0}")]
    LogWrite(#[source] std::io::Error),
    #[error("reading event log: {0}")]
    LogRead(#[from] LogReadError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
}

impl StateError {
    /// Short machine-readable code used on the wire.
    pub fn code(&self) -> &'static str {
        match self {
            StateError::NotRegistered(_) => "not_registered",
            StateError::DuplicateContestant(_) => "duplicate_contestant",
            StateError::InvalidContestantId(_) => "invalid_contestant",
            StateError::Auth => "auth",
            StateError::ContestEnded => "contest_ended",
            StateError::ContestNotRunning => "contest_not_running",
            StateError::AlreadyFinished => "already_finished",
            StateError::NoMoreHints => "no_more_hints",
            StateError::NoPublicCases(_) => "no_public_cases",
            StateError::Busy => "busy",
            StateError::WorkspaceWriteFailure { .. } => "workspace",
            StateError::LogWrite(_) | StateError::LogRead(_) | StateError::Replay(_) => "internal",
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ContestOptions {
    /// Minutes; replaces the pack's duration.
    pub duration_override: Option<u64>,
    /// Per-contestant workspaces are kept under `<root>/<contestant>/`.
    pub workspace_root: Option<PathBuf>,
    /// Instructor logs go to `<root>/<contestant>/<problem>/<submission>.log`.
    pub log_root: Option<PathBuf>,
    /// Concurrent evaluations; 0 means twice the CPU count.
    pub eval_workers: usize,
}

pub fn default_workers() -> usize {
    2 * std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Counting semaphore bounding concurrent evaluations.
#[derive(Debug)]
struct Slots {
    free: Mutex<usize>,
    cv: Condvar,
}

struct SlotGuard<'a>(&'a Slots);

impl Slots {
    fn new(n: usize) -> Self {
        Slots {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
        SlotGuard(self)
    }
}

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

struct Inner {
    state: ContestState,
    log: EventLog,
}

#[derive(Debug, Clone, Serialize)]
pub struct Registration {
    pub contestant: String,
    /// Shown once; only its hash is stored.
    pub token: String,
    pub active_problem: String,
    pub workspace: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct SubmitOutcome {
    pub result: EvaluationResult,
    /// Problem revealed by this accept.
    pub unlocked: Option<String>,
    pub finished: bool,
    /// Failed attempts on the judged problem, including this one.
    pub failed_attempts: u32,
    pub penalty_seconds: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct HintGrant {
    pub problem: String,
    pub hint: Hint,
    pub remaining: u32,
    pub hint_penalty_minutes: u64,
    /// All hint penalty this contestant carries, in minutes.
    pub total_hint_penalty_minutes: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ActiveProblem {
    pub id: String,
    pub title: String,
    /// 1-based position in the contest.
    pub number: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ContestantStatus {
    pub contestant: String,
    pub active_problem: Option<ActiveProblem>,
    pub unlocked: Vec<String>,
    pub solved: usize,
    pub total_problems: usize,
    pub finished: bool,
    pub failed_attempts: u32,
    pub hints_taken: u32,
    pub hints_available: u32,
    pub penalty_minutes: String,
    pub rank: usize,
    pub elapsed: u64,
    pub duration: u64,
    pub workspace: Option<PathBuf>,
}

/// A consistent view of the contest at one event boundary.
#[derive(Debug, Clone, Serialize)]
pub struct Snapshot {
    pub name: String,
    pub seq: u64,
    pub elapsed: u64,
    pub duration: u64,
    pub ended: bool,
    pub rows: Vec<RankingRow>,
    pub problems: Vec<ProblemStats>,
}

pub struct Contest {
    pack: Arc<ContestPack>,
    judge: Judge,
    clock: Arc<dyn Clock>,
    options: ContestOptions,
    inner: Mutex<Inner>,
    slots: Slots,
}

fn token_hash(token: &str) -> String {
    hex::encode(Sha256::digest(token.as_bytes()))
}

fn valid_contestant_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 64
        && id
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

impl Contest {
    /// Opens a new contest and records `ContestStarted`.
    pub fn start(
        pack: Arc<ContestPack>,
        judge: Judge,
        clock: Arc<dyn Clock>,
        started_at_ms: u64,
        log: EventLog,
        options: ContestOptions,
    ) -> Result<Contest, StateError> {
        let contest = Contest::assemble(pack, judge, clock, log, ContestState::default(), options);
        {
            let mut inner = contest.lock();
            let duration = contest
                .options
                .duration_override
                .unwrap_or(contest.pack.config.duration);
            contest.commit(&mut inner, |_| EventKind::ContestStarted {
                pack_digest: contest.pack.digest.clone(),
                name: contest.pack.config.name.clone(),
                duration,
                started_at_ms,
            })?;
        }
        Ok(contest)
    }

    /// Continues a contest from its log. Evaluations that were in flight when
    /// the previous process died are closed as judge errors, and unlocks that
    /// were not yet recorded are emitted.
    pub fn resume(
        pack: Arc<ContestPack>,
        judge: Judge,
        clock: Option<Arc<dyn Clock>>,
        log_path: &Path,
        options: ContestOptions,
    ) -> Result<Contest, StateError> {
        let events = read_log(log_path)?;
        let state = replay(&events, &pack)?;
        let clock = clock.unwrap_or_else(|| Arc::new(SystemClock::starting_at(state.started_at_ms)));
        let log = EventLog::reopen(log_path, events).map_err(StateError::LogWrite)?;
        let contest = Contest::assemble(pack, judge, clock, log, state, options);
        contest.repair()?;
        Ok(contest)
    }

    fn assemble(
        pack: Arc<ContestPack>,
        judge: Judge,
        clock: Arc<dyn Clock>,
        log: EventLog,
        state: ContestState,
        options: ContestOptions,
    ) -> Contest {
        let workers = match options.eval_workers {
            0 => default_workers(),
            n => n,
        };
        Contest {
            pack,
            judge,
            clock,
            options,
            inner: Mutex::new(Inner { state, log }),
            slots: Slots::new(workers),
        }
    }

    fn repair(&self) -> Result<(), StateError> {
        let mut inner = self.lock();
        let ids: Vec<String> = inner.state.contestants.keys().cloned().collect();
        for id in ids {
            let c = inner.state.contestants[&id].clone();
            if let Some(submission) = c.pending {
                let (problem, check, submitted_at) = inner
                    .log
                    .events()
                    .iter()
                    .find_map(|e| match &e.kind {
                        EventKind::SubmissionReceived {
                            problem,
                            submission: s,
                            check,
                            ..
                        } if *s == submission => Some((problem.clone(), *check, e.at)),
                        _ => None,
                    })
                    .expect("pending submission has a SubmissionReceived event");
                log::warn!("closing interrupted submission {submission} of {id}");
                self.commit(&mut inner, |_| EventKind::EvaluationCompleted {
                    contestant: id.clone(),
                    problem,
                    submission,
                    check,
                    submitted_at,
                    aggregate: Verdict::JudgeError,
                    per_test: Vec::new(),
                })?;
            }
            self.unlock_next(&mut inner, &id)?;
        }
        Ok(())
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn commit(
        &self,
        inner: &mut Inner,
        make: impl FnOnce(u64) -> EventKind,
    ) -> Result<ContestEvent, StateError> {
        let seq = inner.log.last_seq() + 1;
        let event = ContestEvent {
            seq,
            at: self.clock.now().max(inner.state.last_at),
            kind: make(seq),
        };
        let mut next = inner.state.clone();
        next.apply(&self.pack, &event)?;
        inner.log.append(event.clone()).map_err(StateError::LogWrite)?;
        inner.state = next;
        Ok(event)
    }

    /// Emits `ProblemUnlocked` for the contestant's active problem if it is missing.
    fn unlock_next(&self, inner: &mut Inner, id: &str) -> Result<Option<String>, StateError> {
        let c = &inner.state.contestants[id];
        if c.finished || c.unlocked.len() > c.active_problem_index {
            return Ok(None);
        }
        let problem = self.pack.config.problem_order[c.active_problem_index].clone();
        self.commit(inner, |_| EventKind::ProblemUnlocked {
            contestant: id.to_string(),
            problem: problem.clone(),
        })?;
        Ok(Some(problem))
    }

    /// Ends the contest when its time is up. Returns whether it is over.
    fn check_clock(&self, inner: &mut Inner) -> Result<bool, StateError> {
        if inner.state.ended {
            return Ok(true);
        }
        if self.clock.now() >= inner.state.duration_secs() {
            self.commit(inner, |_| EventKind::ContestEnded)?;
            return Ok(true);
        }
        Ok(false)
    }

    /// Records `ContestEnded` if the clock has run out. Used at shutdown.
    pub fn end_if_expired(&self) -> Result<bool, StateError> {
        let mut inner = self.lock();
        self.check_clock(&mut inner)
    }

    /// Ends the contest now.
    pub fn end(&self) -> Result<(), StateError> {
        let mut inner = self.lock();
        if !inner.state.ended {
            self.commit(&mut inner, |_| EventKind::ContestEnded)?;
        }
        Ok(())
    }

    pub fn flush(&self) -> Result<(), StateError> {
        self.lock().log.sync().map_err(StateError::LogWrite)
    }

    pub fn pack(&self) -> &Arc<ContestPack> {
        &self.pack
    }

    pub fn judge(&self) -> &Judge {
        &self.judge
    }

    pub fn now(&self) -> u64 {
        self.clock.now()
    }

    pub fn state(&self) -> ContestState {
        self.lock().state.clone()
    }

    pub fn events(&self) -> Vec<ContestEvent> {
        self.lock().log.events().to_vec()
    }

    pub fn log_path(&self) -> Option<PathBuf> {
        self.lock().log.path().map(Path::to_path_buf)
    }

    pub fn workspace_of(&self, id: &str) -> Option<PathBuf> {
        self.options.workspace_root.as_ref().map(|r| r.join(id))
    }

    pub fn snapshot(&self) -> Snapshot {
        let inner = self.lock();
        let state = &inner.state;
        Snapshot {
            name: state.name.clone(),
            seq: state.last_seq,
            elapsed: self.clock.now().min(state.duration_secs()),
            duration: state.duration_secs(),
            ended: state.ended,
            rows: scoring::score(state, &self.pack.config),
            problems: scoring::problem_stats(state, &self.pack.config),
        }
    }

    pub fn authenticate(&self, id: &str, token: &str) -> Result<(), StateError> {
        let inner = self.lock();
        let c = inner
            .state
            .contestant(id)
            .ok_or_else(|| StateError::NotRegistered(id.to_string()))?;
        if c.token_sha256 == token_hash(token) {
            Ok(())
        } else {
            Err(StateError::Auth)
        }
    }

    pub fn register(&self, id: &str) -> Result<Registration, StateError> {
        if !valid_contestant_id(id) {
            return Err(StateError::InvalidContestantId(id.to_string()));
        }
        let token = hex::encode(rand::rng().random::<[u8; 16]>());
        let (active_problem, unlocked) = {
            let mut inner = self.lock();
            if self.check_clock(&mut inner)? {
                return Err(StateError::ContestEnded);
            }
            if inner.state.contestants.contains_key(id) {
                return Err(StateError::DuplicateContestant(id.to_string()));
            }
            self.commit(&mut inner, |_| EventKind::ContestantRegistered {
                contestant: id.to_string(),
                token_sha256: token_hash(&token),
            })?;
            self.unlock_next(&mut inner, id)?;
            let c = &inner.state.contestants[id];
            (c.unlocked[0].clone(), c.unlocked.clone())
        };
        let workspace = self.refresh_workspace(id, &unlocked)?;
        Ok(Registration {
            contestant: id.to_string(),
            token,
            active_problem,
            workspace,
        })
    }

    fn refresh_workspace(&self, id: &str, unlocked: &[String]) -> Result<Option<PathBuf>, StateError> {
        let Some(root) = self.workspace_of(id) else {
            return Ok(None);
        };
        self.write_workspace(&root, unlocked)?;
        Ok(Some(root))
    }

    fn write_workspace(&self, root: &Path, unlocked: &[String]) -> Result<Vec<PathBuf>, StateError> {
        let shared = self.judge.shared_files_for(&self.pack);
        materialize(&self.pack, unlocked, root, shared.as_deref()).map_err(|source| {
            StateError::WorkspaceWriteFailure {
                path: root.to_path_buf(),
                source,
            }
        })
    }

    /// Materializes the contestant's unlocked problems under `workspace_root`.
    pub fn sync_workspace(&self, id: &str, workspace_root: &Path) -> Result<Vec<PathBuf>, StateError> {
        let unlocked = {
            let inner = self.lock();
            inner
                .state
                .contestant(id)
                .ok_or_else(|| StateError::NotRegistered(id.to_string()))?
                .unlocked
                .clone()
        };
        self.write_workspace(workspace_root, &unlocked)
    }

    /// Judges the script on the active problem's hidden cases.
    pub fn submit(&self, id: &str, script: &[u8]) -> Result<SubmitOutcome, StateError> {
        self.run_evaluation(id, script, CaseSet::Hidden)
    }

    /// Judges the script on the active problem's public cases; no penalty.
    pub fn check(&self, id: &str, script: &[u8]) -> Result<EvaluationResult, StateError> {
        self.run_evaluation(id, script, CaseSet::Public).map(|o| o.result)
    }

    fn run_evaluation(&self, id: &str, script: &[u8], case_set: CaseSet) -> Result<SubmitOutcome, StateError> {
        let check = case_set == CaseSet::Public;
        let (problem, received) = {
            let mut inner = self.lock();
            let c = inner
                .state
                .contestant(id)
                .ok_or_else(|| StateError::NotRegistered(id.to_string()))?;
            if c.finished {
                return Err(StateError::AlreadyFinished);
            }
            let problem = self.pack.config.problem_order[c.active_problem_index].clone();
            let busy = c.pending.is_some();
            if self.check_clock(&mut inner)? {
                return Err(StateError::ContestNotRunning);
            }
            if busy {
                return Err(StateError::Busy);
            }
            if check && self.pack.problem(&problem).is_some_and(|p| p.public_cases.is_empty()) {
                return Err(StateError::NoPublicCases(problem));
            }
            let received = self.commit(&mut inner, |seq| EventKind::SubmissionReceived {
                contestant: id.to_string(),
                problem: problem.clone(),
                submission: seq,
                check,
            })?;
            (problem, received)
        };

        let evaluated = {
            let _slot = self.slots.acquire();
            self.judge.evaluate(&self.pack, &problem, script, case_set)
        };
        let mut result = evaluated.unwrap_or_else(|e| {
            log::error!("evaluation of submission {} failed: {e}", received.seq);
            EvaluationResult {
                submission_id: 0,
                problem: problem.clone(),
                case_set,
                per_test: Vec::new(),
                aggregate: Verdict::JudgeError,
                judged_at: 0,
            }
        });

        let (outcome_state, unlocked, completed) = {
            let mut inner = self.lock();
            let completed = self.commit(&mut inner, |_| EventKind::EvaluationCompleted {
                contestant: id.to_string(),
                problem: problem.clone(),
                submission: received.seq,
                check,
                submitted_at: received.at,
                aggregate: result.aggregate,
                per_test: result
                    .per_test
                    .iter()
                    .map(|t| CaseVerdict {
                        case: t.case_id.clone(),
                        verdict: t.verdict,
                        wall_ms: t.wall_time_ms,
                    })
                    .collect(),
            })?;
            let unlocked = if !check && result.aggregate.is_accepted() {
                self.unlock_next(&mut inner, id)?
            } else {
                None
            };
            (inner.state.contestants[id].clone(), unlocked, completed)
        };
        result.submission_id = received.seq;
        result.judged_at = completed.at;

        if unlocked.is_some() {
            self.refresh_workspace(id, &outcome_state.unlocked)?;
        }
        if let Some(root) = &self.options.log_root {
            let limit = usize::try_from(self.pack.config.output_limit).unwrap_or(usize::MAX);
            if let Err(e) = write_instructor_log(&result, id, script, root, limit) {
                log::error!("{e}");
            }
        }

        let row = scoring::contestant_row(
            &outcome_state,
            &self.pack.config.problem_order,
            PenaltyRules::from(&self.pack.config),
        );
        Ok(SubmitOutcome {
            failed_attempts: outcome_state.progress(&problem).failed_attempts,
            finished: outcome_state.finished,
            penalty_seconds: row.penalty_seconds,
            unlocked,
            result,
        })
    }

    /// Serves the next hint of the active problem, most helpful first.
    pub fn request_hint(&self, id: &str) -> Result<HintGrant, StateError> {
        let mut inner = self.lock();
        let c = inner
            .state
            .contestant(id)
            .ok_or_else(|| StateError::NotRegistered(id.to_string()))?;
        if c.finished {
            return Err(StateError::AlreadyFinished);
        }
        let problem_id = self.pack.config.problem_order[c.active_problem_index].clone();
        let taken = c.progress(&problem_id).hints_taken;
        if self.check_clock(&mut inner)? {
            return Err(StateError::ContestNotRunning);
        }
        let problem = self.pack.problem(&problem_id).expect("active problem is in the pack");
        let limit = self.pack.hint_limit(problem);
        if taken >= limit {
            return Err(StateError::NoMoreHints);
        }
        let index = taken + 1;
        self.commit(&mut inner, |_| EventKind::HintRequested {
            contestant: id.to_string(),
            problem: problem_id.clone(),
            index,
        })?;
        let total: u32 = inner.state.contestants[id]
            .problems
            .values()
            .map(|p| p.hints_taken)
            .sum();
        Ok(HintGrant {
            problem: problem_id,
            hint: problem.hints[(index - 1) as usize].clone(),
            remaining: limit - index,
            hint_penalty_minutes: self.pack.config.hint_penalty,
            total_hint_penalty_minutes: u64::from(total) * self.pack.config.hint_penalty,
        })
    }

    pub fn status(&self, id: &str) -> Result<ContestantStatus, StateError> {
        let inner = self.lock();
        let state = &inner.state;
        let c = state
            .contestant(id)
            .ok_or_else(|| StateError::NotRegistered(id.to_string()))?;
        let rows = scoring::score(state, &self.pack.config);
        let row = rows.iter().find(|r| r.contestant == id).expect("registered contestant has a row");
        let order = &self.pack.config.problem_order;
        let active = (!c.finished).then(|| {
            let pid = &order[c.active_problem_index];
            let p = self.pack.problem(pid).expect("active problem is in the pack");
            ActiveProblem {
                id: pid.clone(),
                title: p.title.clone(),
                number: c.active_problem_index + 1,
            }
        });
        let (failed_attempts, hints_taken, hints_available) = match &active {
            Some(a) => {
                let progress = c.progress(&a.id);
                let problem = self.pack.problem(&a.id).unwrap();
                (progress.failed_attempts, progress.hints_taken, self.pack.hint_limit(problem))
            }
            None => (0, 0, 0),
        };
        Ok(ContestantStatus {
            contestant: id.to_string(),
            active_problem: active,
            unlocked: c.unlocked.clone(),
            solved: c.solved_count(),
            total_problems: order.len(),
            finished: c.finished,
            failed_attempts,
            hints_taken,
            hints_available,
            penalty_minutes: row.penalty_display(),
            rank: row.rank,
            elapsed: self.clock.now().min(state.duration_secs()),
            duration: state.duration_secs(),
            workspace: self.workspace_of(id),
        })
    }
}
