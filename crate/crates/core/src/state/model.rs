//! Derived contest state. Both the live contest and [`replay`] build it through
//! the same [`ContestState::apply`], which is what makes replay exact.

use std::collections::BTreeMap;

use serde::Serialize;

use super::event::{ContestEvent, EventKind};
use crate::judge::Verdict;
use crate::pack::ContestPack;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ProblemProgress {
    pub failed_attempts: u32,
    pub hints_taken: u32,
    pub solved_at: Option<u64>,
    pub checks: u32,
    pub judge_errors: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ContestantState {
    pub id: String,
    #[serde(skip)]
    pub token_sha256: String,
    pub registered_at: u64,
    /// Position in `problem_order` of the problem being worked on; equals the
    /// number of solved problems.
    pub active_problem_index: usize,
    /// Problem ids in unlock order.
    pub unlocked: Vec<String>,
    pub problems: BTreeMap<String, ProblemProgress>,
    pub finished: bool,
    /// Submission id of the evaluation in flight, if any.
    pub pending: Option<u64>,
}

impl ContestantState {
    pub fn progress(&self, problem: &str) -> ProblemProgress {
        self.problems.get(problem).cloned().unwrap_or_default()
    }

    pub fn solved_count(&self) -> usize {
        self.problems.values().filter(|p| p.solved_at.is_some()).count()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ContestState {
    pub name: String,
    pub pack_digest: String,
    pub duration_minutes: u64,
    pub started_at_ms: u64,
    pub ended: bool,
    pub last_seq: u64,
    pub last_at: u64,
    pub contestants: BTreeMap<String, ContestantState>,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ReplayError {
    #[error("event log is empty")]
    Empty,
    #[error("event log skips sequence number {0}")]
    SequenceGap(u64),
    #[error("event log was recorded against pack {recorded}, loaded pack is {loaded}")]
    PackDigestMismatch { recorded: String, loaded: String },
    #[error("event {seq} is invalid: {reason}")]
    InvalidEvent { seq: u64, reason: String },
}

impl ContestState {
    pub fn duration_secs(&self) -> u64 {
        self.duration_minutes * 60
    }

    pub fn contestant(&self, id: &str) -> Option<&ContestantState> {
        self.contestants.get(id)
    }

    /// Folds one event into the state, rejecting events that could not have
    /// been produced by a live contest over `pack`.
    pub fn apply(&mut self, pack: &ContestPack, event: &ContestEvent) -> Result<(), ReplayError> {
        let invalid = |reason: String| ReplayError::InvalidEvent {
            seq: event.seq,
            reason,
        };
        if event.seq != self.last_seq + 1 {
            return Err(ReplayError::SequenceGap(self.last_seq + 1));
        }
        if event.seq > 1 && event.at < self.last_at {
            return Err(invalid(format!("time goes backwards ({} < {})", event.at, self.last_at)));
        }
        let order = &pack.config.problem_order;

        match &event.kind {
            EventKind::ContestStarted {
                pack_digest,
                name,
                duration,
                started_at_ms,
            } => {
                if event.seq != 1 {
                    return Err(invalid("contest started twice".into()));
                }
                self.pack_digest = pack_digest.clone();
                self.name = name.clone();
                self.duration_minutes = *duration;
                self.started_at_ms = *started_at_ms;
            }
            _ if event.seq == 1 => return Err(invalid("log must begin with ContestStarted".into())),
            EventKind::ContestantRegistered {
                contestant,
                token_sha256,
            } => {
                if self.contestants.contains_key(contestant) {
                    return Err(invalid(format!("`{contestant}` registered twice")));
                }
                self.contestants.insert(
                    contestant.clone(),
                    ContestantState {
                        id: contestant.clone(),
                        token_sha256: token_sha256.clone(),
                        registered_at: event.at,
                        active_problem_index: 0,
                        unlocked: Vec::new(),
                        problems: BTreeMap::new(),
                        finished: false,
                        pending: None,
                    },
                );
            }
            EventKind::ProblemUnlocked {
                contestant,
                problem,
            } => {
                let c = self.contestant_mut(contestant, event.seq)?;
                let next = order.get(c.unlocked.len());
                if next != Some(problem) {
                    return Err(invalid(format!("`{problem}` unlocked out of order")));
                }
                if c.unlocked.len() > c.active_problem_index {
                    return Err(invalid(format!("`{problem}` unlocked before its predecessor was solved")));
                }
                c.unlocked.push(problem.clone());
            }
            EventKind::SubmissionReceived {
                contestant,
                problem,
                submission,
                check,
            } => {
                let c = self.contestant_mut(contestant, event.seq)?;
                if *submission != event.seq {
                    return Err(invalid("submission id must equal its event seq".into()));
                }
                if c.pending.is_some() {
                    return Err(invalid("second submission while one is in flight".into()));
                }
                if order.get(c.active_problem_index) != Some(problem) || c.finished {
                    return Err(invalid(format!("`{problem}` is not the active problem")));
                }
                c.pending = Some(*submission);
                if *check {
                    c.problems.entry(problem.clone()).or_default().checks += 1;
                }
            }
            EventKind::EvaluationCompleted {
                contestant,
                problem,
                submission,
                check,
                submitted_at,
                aggregate,
                ..
            } => {
                let total = order.len();
                let c = self.contestant_mut(contestant, event.seq)?;
                if c.pending != Some(*submission) {
                    return Err(invalid(format!("no submission {submission} in flight")));
                }
                c.pending = None;
                if !*check {
                    let progress = c.problems.entry(problem.clone()).or_default();
                    match aggregate {
                        Verdict::Accepted => {
                            progress.solved_at = Some(*submitted_at);
                            c.active_problem_index += 1;
                            c.finished = c.active_problem_index == total;
                        }
                        Verdict::JudgeError => progress.judge_errors += 1,
                        _ => progress.failed_attempts += 1,
                    }
                }
            }
            EventKind::HintRequested {
                contestant,
                problem,
                index,
            } => {
                let limit = pack.problem(problem).map(|p| pack.hint_limit(p));
                let c = self.contestant_mut(contestant, event.seq)?;
                if order.get(c.active_problem_index) != Some(problem) {
                    return Err(invalid(format!("hint for inactive problem `{problem}`")));
                }
                let progress = c.problems.entry(problem.clone()).or_default();
                if *index != progress.hints_taken + 1 || Some(*index) > limit {
                    return Err(invalid(format!("hint {index} out of sequence")));
                }
                progress.hints_taken += 1;
            }
            EventKind::ContestEnded => self.ended = true,
        }
        self.last_seq = event.seq;
        self.last_at = self.last_at.max(event.at);
        Ok(())
    }

    fn contestant_mut(&mut self, id: &str, seq: u64) -> Result<&mut ContestantState, ReplayError> {
        self.contestants.get_mut(id).ok_or_else(|| ReplayError::InvalidEvent {
            seq,
            reason: format!("unknown contestant `{id}`"),
        })
    }
}

/// Rebuilds the state from a recorded log. Runs no scripts.
pub fn replay(events: &[ContestEvent], pack: &ContestPack) -> Result<ContestState, ReplayError> {
    let first = events.first().ok_or(ReplayError::Empty)?;
    if first.seq != 1 {
        return Err(ReplayError::SequenceGap(1));
    }
    if let EventKind::ContestStarted { pack_digest, .. } = &first.kind {
        if *pack_digest != pack.digest {
            return Err(ReplayError::PackDigestMismatch {
                recorded: pack_digest.clone(),
                loaded: pack.digest.clone(),
            });
        }
    }
    let mut state = ContestState::default();
    for event in events {
        state.apply(pack, event)?;
    }
    Ok(state)
}
