//! Newline-delimited JSON frames exchanged between the CLI and the daemon.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::judge::{CaseSet, EvaluationResult, Verdict};
use crate::state::{Contest, StateError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Op {
    Register,
    Submit,
    Check,
    Hint,
    Status,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireRequest {
    pub op: Op,
    pub contestant: String,
    #[serde(default)]
    pub token: String,
    /// Submit and check: the script, base64. Either the bare string or `{"script": ...}`.
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub payload: Value,
}

impl WireRequest {
    pub fn new(op: Op, contestant: &str, token: &str) -> Self {
        WireRequest {
            op,
            contestant: contestant.to_string(),
            token: token.to_string(),
            payload: Value::Null,
        }
    }

    pub fn with_script(mut self, script: &[u8]) -> Self {
        self.payload = json!({ "script": STANDARD.encode(script) });
        self
    }

    fn script(&self) -> Result<Vec<u8>, WireError> {
        let text = match &self.payload {
            Value::String(s) => s.as_str(),
            Value::Object(m) => m.get("script").and_then(Value::as_str).unwrap_or_default(),
            _ => "",
        };
        if text.is_empty() {
            return Err(WireError::new("bad_request", "payload must carry a base64 script"));
        }
        STANDARD
            .decode(text)
            .map_err(|e| WireError::new("bad_request", format!("payload is not base64: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireResponse {
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

impl WireResponse {
    pub fn success(data: Value) -> Self {
        WireResponse {
            ok: true,
            data: Some(data),
            error: None,
            message: None,
        }
    }

    pub fn failure(e: WireError) -> Self {
        WireResponse {
            ok: false,
            data: None,
            error: Some(e.code.to_string()),
            message: Some(e.message),
        }
    }

    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("responses serialize");
        s.push('\n');
        s
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireError {
    pub code: &'static str,
    pub message: String,
}

impl WireError {
    pub fn new(code: &'static str, message: impl Into<String>) -> Self {
        WireError {
            code,
            message: message.into(),
        }
    }
}

impl From<StateError> for WireError {
    fn from(e: StateError) -> Self {
        // a contestant who is not registered fails authentication
        let code = match e {
            StateError::NotRegistered(_) => "auth",
            ref other => other.code(),
        };
        WireError::new(code, e.to_string())
    }
}

/// Answers one request line. Never panics on bad input.
pub fn handle_line(contest: &Contest, line: &str) -> WireResponse {
    let request: WireRequest = match serde_json::from_str(line) {
        Ok(r) => r,
        Err(e) => return WireResponse::failure(WireError::new("bad_request", format!("malformed request: {e}"))),
    };
    match dispatch(contest, &request) {
        Ok(data) => WireResponse::success(data),
        Err(e) => WireResponse::failure(e),
    }
}

pub fn dispatch(contest: &Contest, req: &WireRequest) -> Result<Value, WireError> {
    if req.op == Op::Register {
        let reg = contest.register(&req.contestant)?;
        return Ok(json!(reg));
    }
    contest.authenticate(&req.contestant, &req.token)?;
    match req.op {
        Op::Register => unreachable!(),
        Op::Submit => {
            let script = req.script()?;
            let out = contest.submit(&req.contestant, &script)?;
            let unlocked_number = out
                .unlocked
                .as_deref()
                .and_then(|p| contest.pack().position(p))
                .map(|i| i + 1);
            Ok(json!({
                "problem": out.result.problem,
                "submission": out.result.submission_id,
                "verdict": out.result.aggregate,
                "unlocked": out.unlocked,
                "unlocked_number": unlocked_number,
                "finished": out.finished,
                "failed_attempts": out.failed_attempts,
                "penalty_minutes": crate::scoring::format_minutes(out.penalty_seconds),
                "workspace": contest.workspace_of(&req.contestant),
            }))
        }
        Op::Check => {
            let script = req.script()?;
            let result = contest.check(&req.contestant, &script)?;
            Ok(check_view(contest, &result))
        }
        Op::Hint => Ok(json!(contest.request_hint(&req.contestant)?)),
        Op::Status => Ok(json!(contest.status(&req.contestant)?)),
    }
}

/// Public-case detail, including the expected output the contestant can see anyway.
fn check_view(contest: &Contest, result: &EvaluationResult) -> Value {
    debug_assert_eq!(result.case_set, CaseSet::Public);
    let public = contest
        .pack()
        .problem(&result.problem)
        .map(|p| p.public_cases.as_slice())
        .unwrap_or_default();
    let cases: Vec<Value> = result
        .per_test
        .iter()
        .map(|t| {
            let case = public.iter().find(|c| c.id == t.case_id);
            json!({
                "case": t.case_id,
                "verdict": t.verdict,
                "wall_ms": t.wall_time_ms,
                "argv": case.map(|c| c.argv.clone()).unwrap_or_default(),
                "expected": case.map(|c| String::from_utf8_lossy(&c.expected_stdout).into_owned()),
                "produced": String::from_utf8_lossy(&t.produced_stdout),
                "stderr": String::from_utf8_lossy(&t.stderr),
            })
        })
        .collect();
    json!({
        "problem": result.problem,
        "submission": result.submission_id,
        "verdict": result.aggregate,
        "accepted": result.aggregate == Verdict::Accepted,
        "cases": cases,
    })
}
