//! Live ranking: most problems solved first; ties broken by penalty time, which
//! is the time of the last accepted submission plus a fixed charge per failed
//! attempt and per hint taken.

use std::cmp::Ordering;
use std::fmt::Write as _;

use serde::Serialize;

use crate::pack::{ContestConfig, ContestPack};
use crate::state::{ContestState, ContestantState};

/// Penalty constants in minutes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PenaltyRules {
    pub wrong_attempt: u64,
    pub hint: u64,
    pub count_unsolved_failures: bool,
}

impl From<&ContestConfig> for PenaltyRules {
    fn from(c: &ContestConfig) -> Self {
        PenaltyRules {
            wrong_attempt: c.wrong_attempt_penalty,
            hint: c.hint_penalty,
            count_unsolved_failures: c.count_unsolved_failures,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Cell {
    Unsolved { attempts: u32, hints: u32 },
    Solved { at: u64, attempts_before: u32, hints: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankingRow {
    pub rank: usize,
    pub contestant: String,
    pub solved: usize,
    /// Exact penalty; `penalty_minutes` is this divided by 60.
    pub penalty_seconds: u64,
    pub penalty_minutes: f64,
    /// Contest-relative seconds of the last accept, 0 with nothing solved.
    pub last_accept: u64,
    pub hints_total: u32,
    pub failed_total: u32,
    pub finished: bool,
    pub cells: Vec<(String, Cell)>,
}

impl RankingRow {
    pub fn penalty_display(&self) -> String {
        format_minutes(self.penalty_seconds)
    }
}

pub fn format_minutes(seconds: u64) -> String {
    format!("{:.1}", seconds as f64 / 60.0)
}

/// Penalty and derived totals of one contestant.
pub fn contestant_row(c: &ContestantState, order: &[String], rules: PenaltyRules) -> RankingRow {
    let mut cells = Vec::with_capacity(order.len());
    let (mut solved, mut last_accept, mut hints_total, mut failed_total, mut charged) =
        (0usize, 0u64, 0u32, 0u32, 0u64);
    for id in order {
        let p = c.progress(id);
        hints_total += p.hints_taken;
        failed_total += p.failed_attempts;
        charged += rules.hint * u64::from(p.hints_taken);
        let cell = match p.solved_at {
            Some(at) => {
                solved += 1;
                last_accept = last_accept.max(at);
                charged += rules.wrong_attempt * u64::from(p.failed_attempts);
                Cell::Solved {
                    at,
                    attempts_before: p.failed_attempts,
                    hints: p.hints_taken,
                }
            }
            None => {
                if rules.count_unsolved_failures {
                    charged += rules.wrong_attempt * u64::from(p.failed_attempts);
                }
                Cell::Unsolved {
                    attempts: p.failed_attempts,
                    hints: p.hints_taken,
                }
            }
        };
        cells.push((id.clone(), cell));
    }
    let penalty_seconds = last_accept + 60 * charged;
    RankingRow {
        rank: 0,
        contestant: c.id.clone(),
        solved,
        penalty_seconds,
        penalty_minutes: (penalty_seconds as f64 / 6.0).round() / 10.0,
        last_accept,
        hints_total,
        failed_total,
        finished: c.finished,
        cells,
    }
}

/// Solved descending, then penalty ascending, then contestant id ascending.
pub fn compare_rows(a: &RankingRow, b: &RankingRow) -> Ordering {
    b.solved
        .cmp(&a.solved)
        .then(a.penalty_seconds.cmp(&b.penalty_seconds))
        .then_with(|| a.contestant.cmp(&b.contestant))
}

pub fn score(state: &ContestState, config: &ContestConfig) -> Vec<RankingRow> {
    let rules = PenaltyRules::from(config);
    let mut rows: Vec<RankingRow> = state
        .contestants
        .values()
        .map(|c| contestant_row(c, &config.problem_order, rules))
        .collect();
    rows.sort_by(compare_rows);
    for (i, row) in rows.iter_mut().enumerate() {
        row.rank = i + 1;
    }
    rows
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ProblemStats {
    pub problem: String,
    pub correct: u32,
    /// Rejected hidden-case submissions; checks and judge errors excluded.
    pub failed: u32,
    pub hints: u32,
    pub checks: u32,
    /// Contestants, not finished, whose active problem this is.
    pub stopped_here: u32,
}

pub fn problem_stats(state: &ContestState, config: &ContestConfig) -> Vec<ProblemStats> {
    config
        .problem_order
        .iter()
        .enumerate()
        .map(|(position, id)| {
            let mut s = ProblemStats {
                problem: id.clone(),
                correct: 0,
                failed: 0,
                hints: 0,
                checks: 0,
                stopped_here: 0,
            };
            for c in state.contestants.values() {
                let p = c.progress(id);
                s.correct += u32::from(p.solved_at.is_some());
                s.failed += p.failed_attempts;
                s.hints += p.hints_taken;
                s.checks += p.checks;
                s.stopped_here += u32::from(!c.finished && c.active_problem_index == position);
            }
            s
        })
        .collect()
}

fn cell_text(cell: &Cell) -> String {
    match *cell {
        Cell::Solved {
            at,
            attempts_before,
            hints,
        } => format!("AC {}m f{attempts_before} h{hints}", at / 60),
        Cell::Unsolved {
            attempts: 0,
            hints: 0,
        } => "-".to_string(),
        Cell::Unsolved { attempts, hints } => format!("f{attempts} h{hints}"),
    }
}

/// Plain-text table; identical input gives byte-identical output.
pub fn render_ranking(rows: &[RankingRow], pack: &ContestPack) -> String {
    let mut header: Vec<String> = ["rank", "contestant", "solved", "penalty"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend(pack.config.problem_order.iter().cloned());
    let mut table = vec![header];
    for row in rows {
        let mut line = vec![
            row.rank.to_string(),
            row.contestant.clone(),
            row.solved.to_string(),
            row.penalty_display(),
        ];
        line.extend(row.cells.iter().map(|(_, c)| cell_text(c)));
        table.push(line);
    }
    let widths: Vec<usize> = (0..table[0].len())
        .map(|i| table.iter().map(|r| r[i].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for line in &table {
        let cols: Vec<String> = line
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect();
        let _ = writeln!(out, "{}", cols.join("  ").trim_end());
    }
    out
}
