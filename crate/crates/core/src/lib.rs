//! Judge, contest state machine and live scoreboard for timed shell-scripting contests.
//!
//! A contest is defined by an on-disk [`pack`]. Scripts run in the [`sandbox`],
//! the [`judge`] turns runs into verdicts, [`state`] records everything as an
//! append-only event log, [`scoring`] derives the ranking, [`service`] exposes it
//! all to contestants and browsers, and [`analytics`] exports CSV for instructors.

pub mod analytics;
pub mod cli;
pub mod judge;
pub mod pack;
pub mod sandbox;
pub mod scoring;
pub mod service;
pub mod state;

pub use judge::{CaseSet, EvaluationResult, Judge, TestResult, Verdict};
pub use pack::{load_pack, validate_pack, ComparisonMode, ContestConfig, ContestPack, Problem};
pub use scoring::{problem_stats, score, RankingRow};
pub use state::{replay, Contest, ContestEvent, ContestState, EventKind};

/// Serde adapter storing bytes as base64 text.
pub(crate) mod b64 {
    use base64::engine::general_purpose::STANDARD;
    use base64::Engine;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let text = String::deserialize(d)?;
        STANDARD.decode(text).map_err(serde::de::Error::custom)
    }
}
