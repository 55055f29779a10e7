//! Random contest runs and random ranking states shared by the property suites.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use proptest::prelude::*;
use shelljudge::state::{
    Contest, ContestOptions, ContestState, ContestantState, EventLog, ManualClock, ProblemProgress,
};
use shelljudge::{ContestPack, Judge};

use super::{fixture_pack, solution};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Attempt {
    Correct,
    Wrong,
    Crash,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Step {
    Register(u8),
    Submit(u8, Attempt),
    Check(u8, Attempt),
    Hint(u8),
    Wait(u16),
}

pub const CONTESTANTS: u8 = 4;

fn attempt() -> impl Strategy<Value = Attempt> {
    prop_oneof![
        3 => Just(Attempt::Correct),
        2 => Just(Attempt::Wrong),
        1 => Just(Attempt::Crash),
    ]
}

pub fn step() -> impl Strategy<Value = Step> {
    let who = 0..CONTESTANTS;
    prop_oneof![
        2 => who.clone().prop_map(Step::Register),
        4 => (who.clone(), attempt()).prop_map(|(c, a)| Step::Submit(c, a)),
        2 => (who.clone(), attempt()).prop_map(|(c, a)| Step::Check(c, a)),
        2 => who.prop_map(Step::Hint),
        2 => (1u16..900).prop_map(Step::Wait),
    ]
}

/// Registrations first so most runs have somebody to act.
pub fn steps(max: usize) -> impl Strategy<Value = Vec<Step>> {
    (1..=CONTESTANTS, prop::collection::vec(step(), 1..max)).prop_map(|(n, rest)| {
        let mut all: Vec<Step> = (0..n).map(Step::Register).collect();
        all.extend(rest);
        all
    })
}

pub fn id(c: u8) -> String {
    format!("c{c}")
}

pub struct Run {
    pub contest: Contest,
    pub clock: Arc<ManualClock>,
    pub dir: tempfile::TempDir,
}

impl Run {
    pub fn new(pack: Arc<ContestPack>) -> Run {
        let dir = tempfile::tempdir().unwrap();
        let clock = Arc::new(ManualClock::new(0));
        let log = EventLog::create(&dir.path().join("events.jsonl")).unwrap();
        let contest = Contest::start(
            pack,
            Judge::default(),
            clock.clone(),
            0,
            log,
            ContestOptions {
                workspace_root: Some(dir.path().join("ws")),
                ..ContestOptions::default()
            },
        )
        .unwrap();
        Run { contest, clock, dir }
    }

    pub fn log_path(&self) -> PathBuf {
        self.dir.path().join("events.jsonl")
    }

    pub fn workspace_root(&self) -> PathBuf {
        self.dir.path().join("ws")
    }

    fn script(&self, who: &str, attempt: Attempt) -> Vec<u8> {
        match attempt {
            Attempt::Wrong => b"echo nope\n".to_vec(),
            Attempt::Crash => b"echo oops >&2; exit 2\n".to_vec(),
            Attempt::Correct => {
                let state = self.contest.state();
                let c = match state.contestant(who) {
                    Some(c) if !c.finished => c,
                    _ => return b"true\n".to_vec(),
                };
                let problem = &self.contest.pack().config.problem_order[c.active_problem_index];
                solution(&format!("{problem}.sh"))
            }
        }
    }

    /// Applies one step; refusals such as a duplicate registration are part of the game.
    pub fn apply(&self, step: &Step) {
        match *step {
            Step::Register(c) => {
                let _ = self.contest.register(&id(c));
            }
            Step::Submit(c, a) => {
                let _ = self.contest.submit(&id(c), &self.script(&id(c), a));
            }
            Step::Check(c, a) => {
                let _ = self.contest.check(&id(c), &self.script(&id(c), a));
            }
            Step::Hint(c) => {
                let _ = self.contest.request_hint(&id(c));
            }
            Step::Wait(s) => self.clock.advance(u64::from(s)),
        }
    }
}

pub fn fixture() -> Arc<ContestPack> {
    Arc::new(shelljudge::load_pack(fixture_pack()).unwrap())
}

/// Checks unlocked = solved + 1 (total once finished) for every contestant,
/// and that the workspace holds exactly the unlocked problem directories.
pub fn unlock_invariant(state: &ContestState, pack: &ContestPack, workspace_root: &Path) -> Result<(), String> {
    let total = pack.config.problem_order.len();
    for c in state.contestants.values() {
        let solved = c.solved_count();
        let want = if c.finished { total } else { solved + 1 };
        if c.unlocked.len() != want {
            return Err(format!("{}: {} unlocked, {} solved", c.id, c.unlocked.len(), solved));
        }
        let dirs = fs::read_dir(workspace_root.join(&c.id)).map(|d| d.count()).unwrap_or(0);
        if dirs != want {
            return Err(format!("{}: {dirs} workspace dirs for {want} unlocked problems", c.id));
        }
    }
    Ok(())
}

/// Material that must never reach a workspace: hidden inputs and outputs, and
/// every hint body (hints are only ever returned over the wire).
pub fn forbidden_blobs(pack: &ContestPack) -> Vec<Vec<u8>> {
    let mut blobs = Vec::new();
    for p in &pack.problems {
        for case in p.hidden_cases() {
            blobs.push(case.stdin.clone());
            blobs.push(case.expected_stdout.clone());
        }
        for h in &p.hints {
            blobs.push(h.body.clone().into_bytes());
        }
    }
    blobs.retain(|b| !b.is_empty());
    blobs
}

fn files_under(root: &Path, out: &mut Vec<PathBuf>) {
    let Ok(entries) = fs::read_dir(root) else {
        return;
    };
    for e in entries.flatten() {
        let path = e.path();
        if path.is_dir() {
            files_under(&path, out);
        } else {
            out.push(path);
        }
    }
}

/// Scans every workspace file. Long blobs must not occur anywhere; blobs shorter
/// than 8 bytes (like "0\n") must not be the whole content of a file.
pub fn confinement(workspace_root: &Path, blobs: &[Vec<u8>]) -> Result<(), String> {
    let mut files = Vec::new();
    files_under(workspace_root, &mut files);
    for f in files {
        let bytes = fs::read(&f).unwrap();
        for blob in blobs {
            let leaked = if blob.len() >= 8 {
                bytes.windows(blob.len()).any(|w| w == blob.as_slice())
            } else {
                bytes == *blob
            };
            if leaked {
                return Err(format!("{} contains hidden material {:?}", f.display(), String::from_utf8_lossy(blob)));
            }
        }
    }
    Ok(())
}

/// Per-problem progress as (failed, hints, solved_at).
pub fn penalties(state: &ContestState) -> BTreeMap<(String, String), (u32, u32, Option<u64>)> {
    state
        .contestants
        .values()
        .flat_map(|c| {
            c.problems
                .iter()
                .map(|(p, g)| ((c.id.clone(), p.clone()), (g.failed_attempts, g.hints_taken, g.solved_at)))
        })
        .collect()
}

pub const PROBLEMS: [&str; 3] = ["p1", "p2", "p3"];

fn contestant_state(i: usize) -> impl Strategy<Value = ContestantState> {
    (
        0..=3usize,
        prop::collection::vec((0u32..5, 0u32..3, 1u64..2400), 3),
    )
        .prop_map(move |(solved, per)| {
            let mut t = 0;
            let mut problems = BTreeMap::new();
            for (j, (failed, hints, gap)) in per.into_iter().enumerate() {
                let solved_at = (j < solved).then(|| {
                    t += gap;
                    t
                });
                // problems past the active one are untouched
                let reached = j <= solved;
                problems.insert(
                    PROBLEMS[j].to_string(),
                    ProblemProgress {
                        failed_attempts: if reached { failed } else { 0 },
                        hints_taken: if reached { hints } else { 0 },
                        solved_at,
                        ..ProblemProgress::default()
                    },
                );
            }
            ContestantState {
                id: format!("u{i:02}"),
                token_sha256: String::new(),
                registered_at: 0,
                active_problem_index: solved,
                unlocked: PROBLEMS[..(solved + 1).min(3)].iter().map(|s| s.to_string()).collect(),
                problems,
                finished: solved == 3,
                pending: None,
            }
        })
}

/// A contest state with 2 to 12 contestants over three problems.
pub fn ranking_state() -> impl Strategy<Value = ContestState> {
    (2..=12usize)
        .prop_flat_map(|n| (0..n).map(contestant_state).collect::<Vec<_>>())
        .prop_map(|cs| ContestState {
            name: "random".into(),
            duration_minutes: 120,
            contestants: cs.into_iter().map(|c| (c.id.clone(), c)).collect(),
            ..ContestState::default()
        })
}

pub fn ranking_config() -> shelljudge::ContestConfig {
    let mut config = fixture().config.clone();
    config.problem_order = PROBLEMS.iter().map(|s| s.to_string()).collect();
    config
}
