//! Post-contest exports. Everything is recomputed from the event log, so an
//! export of a finished contest never depends on the daemon that ran it.

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::pack::ContestPack;
use crate::scoring::{problem_stats, score, ProblemStats, RankingRow};
use crate::state::{read_log, replay, ContestState, LogReadError, ReplayError};

pub const RESULTS_HEADER: [&str; 6] = [
    "contestant",
    "solved",
    "penalty_minutes",
    "last_accept_s",
    "hints_total",
    "failed_total",
];

pub const PROBLEM_HEADER: [&str; 6] = ["problem", "correct", "failed", "hints", "checks", "stopped_here"];

#[derive(Debug, thiserror::Error)]
pub enum ExportError {
    #[error(transparent)]
    Read(#[from] LogReadError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error("writing {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Replays the log at `log` against `pack`.
pub fn load_state(log: &Path, pack: &ContestPack) -> Result<ContestState, ExportError> {
    let events = read_log(log)?;
    Ok(replay(&events, pack)?)
}

pub fn results_csv(rows: &[RankingRow]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(RESULTS_HEADER).expect("writing to memory");
    for r in rows {
        w.write_record([
            r.contestant.clone(),
            r.solved.to_string(),
            r.penalty_display(),
            r.last_accept.to_string(),
            r.hints_total.to_string(),
            r.failed_total.to_string(),
        ])
        .expect("writing to memory");
    }
    w.into_inner().expect("writing to memory")
}

pub fn problems_csv(stats: &[ProblemStats]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(PROBLEM_HEADER).expect("writing to memory");
    for s in stats {
        w.write_record([
            s.problem.clone(),
            s.correct.to_string(),
            s.failed.to_string(),
            s.hints.to_string(),
            s.checks.to_string(),
            s.stopped_here.to_string(),
        ])
        .expect("writing to memory");
    }
    w.into_inner().expect("writing to memory")
}

/// Writes `bytes` to `path` via a temporary file in the same directory, so a
/// reader sees either the old file, the complete new one, or nothing.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ExportError> {
    let fail = |source| ExportError::Write {
        path: path.to_path_buf(),
        source,
    };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(fail)?;
    tmp.write_all(bytes).map_err(fail)?;
    tmp.as_file().sync_all().map_err(fail)?;
    tmp.persist(path).map_err(|e| fail(e.error))?;
    Ok(())
}

/// One row per contestant, in rank order.
pub fn export_results(log: &Path, pack: &ContestPack, out: &Path) -> Result<Vec<RankingRow>, ExportError> {
    let state = load_state(log, pack)?;
    let rows = score(&state, &pack.config);
    write_atomic(out, &results_csv(&rows))?;
    Ok(rows)
}

/// One row per problem, in contest order.
pub fn export_problem_stats(log: &Path, pack: &ContestPack, out: &Path) -> Result<Vec<ProblemStats>, ExportError> {
    let state = load_state(log, pack)?;
    let stats = problem_stats(&state, &pack.config);
    write_atomic(out, &problems_csv(&stats))?;
    Ok(stats)
}
