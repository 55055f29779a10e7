//! Read-only scoreboard: `GET /api/ranking`, `GET /api/problems`, `GET /`.

use std::fmt::Write as _;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde_json::json;
use tiny_http::{Header, Method, Request, Response, Server};

use crate::scoring::{format_minutes, Cell};
use crate::state::{Contest, Snapshot};

pub fn ranking_json(s: &Snapshot) -> String {
    json!({
        "name": s.name,
        "seq": s.seq,
        "elapsed": s.elapsed,
        "duration": s.duration,
        "ended": s.ended,
        "rows": s.rows,
        "problems": s.problems,
    })
    .to_string()
}

pub fn problems_json(s: &Snapshot) -> String {
    json!({ "seq": s.seq, "problems": s.problems }).to_string()
}

fn escape_html(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out
}

fn cell_html(cell: &Cell) -> String {
    match *cell {
        Cell::Solved {
            at,
            attempts_before,
            hints,
        } => format!(
            "<td class=\"ac\">{} min<br><small>{attempts_before} failed, {hints} hints</small></td>",
            at / 60
        ),
        Cell::Unsolved { attempts: 0, hints: 0 } => "<td></td>".to_string(),
        Cell::Unsolved { attempts, hints } => {
            format!("<td class=\"no\"><small>{attempts} failed, {hints} hints</small></td>")
        }
    }
}

pub fn scoreboard_html(s: &Snapshot, problem_titles: &[(String, String)]) -> String {
    let mut h = String::new();
    let _ = write!(
        h,
        "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\">\
         <meta http-equiv=\"refresh\" content=\"10\">\
         <title>{name}</title>\
         <style>body{{font-family:monospace}}table{{border-collapse:collapse}}\
         td,th{{border:1px solid #999;padding:4px 8px}}.ac{{background:#cfc}}.no{{background:#fdd}}</style>\
         </head><body>\n<h1>{name}</h1>\n<p>{el} / {du} min{ended} &middot; event {seq}</p>\n",
        name = escape_html(&s.name),
        el = s.elapsed / 60,
        du = s.duration / 60,
        ended = if s.ended { " &middot; finished" } else { "" },
        seq = s.seq,
    );
    h.push_str("<table>\n<tr><th>#</th><th>contestant</th><th>solved</th><th>penalty</th>");
    for (id, title) in problem_titles {
        let _ = write!(h, "<th title=\"{}\">{}</th>", escape_html(title), escape_html(id));
    }
    h.push_str("</tr>\n");
    for row in &s.rows {
        let _ = write!(
            h,
            "<tr><td>{}</td><td>{}</td><td>{}</td><td>{}</td>",
            row.rank,
            escape_html(&row.contestant),
            row.solved,
            format_minutes(row.penalty_seconds)
        );
        for (_, cell) in &row.cells {
            h.push_str(&cell_html(cell));
        }
        h.push_str("</tr>\n");
    }
    h.push_str("</table>\n</body></html>\n");
    h
}

fn header(name: &str, value: &str) -> Header {
    Header::from_bytes(name.as_bytes(), value.as_bytes()).expect("static header")
}

fn respond(contest: &Contest, request: Request) {
    let path = request.url().split('?').next().unwrap_or("").to_string();
    let response = match (request.method(), path.as_str()) {
        (Method::Get, "/api/ranking") => Response::from_string(ranking_json(&contest.snapshot()))
            .with_header(header("Content-Type", "application/json")),
        (Method::Get, "/api/problems") => Response::from_string(problems_json(&contest.snapshot()))
            .with_header(header("Content-Type", "application/json")),
        (Method::Get, "/") => {
            let titles: Vec<(String, String)> = contest
                .pack()
                .problems
                .iter()
                .map(|p| (p.id.clone(), p.title.clone()))
                .collect();
            Response::from_string(scoreboard_html(&contest.snapshot(), &titles))
                .with_header(header("Content-Type", "text/html; charset=utf-8"))
        }
        (Method::Get, _) => Response::from_string("not found\n").with_status_code(404),
        _ => Response::from_string("method not allowed\n").with_status_code(405),
    };
    if let Err(e) = request.respond(response) {
        log::debug!("http client went away: {e}");
    }
}

/// Serves until `stop` is set.
pub fn serve_http(server: Server, contest: Arc<Contest>, stop: Arc<AtomicBool>) {
    while !stop.load(Ordering::SeqCst) {
        match server.recv_timeout(Duration::from_millis(100)) {
            Ok(Some(request)) => respond(&contest, request),
            Ok(None) => {}
            Err(e) => {
                log::error!("http: {e}");
                break;
            }
        }
    }
}
