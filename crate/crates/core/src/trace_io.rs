//! Line-based text format for traces and predicted histories, and DOT output.
//!
//! ```text
//! session <sid>
//! txn <tid>
//! r <key> <pos> <writer-tid> <value>
//! w <key> <pos> <value>
//! commit | abort
//! boundary <sid> <pos|inf>
//! schedule <tid> <tid> ...
//! ```
//!
//! Blank lines and text after `#` are ignored.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;

use crate::history::{Edge, EdgeLabel, Event, EventKind, ExecutionHistory, KeyId, SessionId, TxnId};
use crate::trace::{Boundary, SessionTrace, Trace, TxnRecord, TxnStatus};

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum TraceError {
    #[error("line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("{0}")]
    Semantic(String),
}

fn perr(line: usize, column: usize, message: impl Into<String>) -> TraceError {
    TraceError::Parse {
        line,
        column,
        message: message.into(),
    }
}

struct Token<'a> {
    text: &'a str,
    column: usize,
}

fn tokens(line: &str) -> Vec<Token<'_>> {
    let body = line.split('#').next().unwrap_or("");
    let mut out = Vec::new();
    let mut start = None;
    for (i, ch) in body.char_indices() {
        if ch.is_whitespace() {
            if let Some(s) = start.take() {
                out.push(Token {
                    text: &body[s..i],
                    column: s + 1,
                });
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        out.push(Token {
            text: &body[s..],
            column: s + 1,
        });
    }
    out
}

fn num<T: std::str::FromStr>(line: usize, tok: &Token<'_>, what: &str) -> Result<T, TraceError> {
    tok.text
        .parse()
        .map_err(|_| perr(line, tok.column, format!("expected {what}, found `{}`", tok.text)))
}

fn arity(line: usize, toks: &[Token<'_>], n: usize) -> Result<(), TraceError> {
    if toks.len() != n {
        let col = toks.get(n).map_or(toks[0].column, |t| t.column);
        return Err(perr(
            line,
            col,
            format!("`{}` takes {} argument(s), found {}", toks[0].text, n - 1, toks.len() - 1),
        ));
    }
    Ok(())
}

pub fn parse_trace(text: &str) -> Result<Trace, TraceError> {
    let mut trace = Trace::default();
    let mut open: Option<TxnRecord> = None;
    let mut open_line = 0;
    let mut seen_sessions = BTreeSet::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = ln + 1;
        let toks = tokens(raw);
        if toks.is_empty() {
            continue;
        }
        let head = &toks[0];
        match head.text {
            "session" => {
                arity(line, &toks, 2)?;
                if open.is_some() {
                    return Err(perr(line, head.column, "transaction not terminated before `session`"));
                }
                let sid: u32 = num(line, &toks[1], "session id")?;
                if sid == 0 {
                    return Err(perr(line, toks[1].column, "session ids must be positive"));
                }
                if !seen_sessions.insert(sid) {
                    return Err(TraceError::Semantic(format!("session {sid} declared twice")));
                }
                trace.sessions.push(SessionTrace {
                    sid: SessionId(sid),
                    txns: Vec::new(),
                });
            }
            "txn" => {
                arity(line, &toks, 2)?;
                if trace.sessions.is_empty() {
                    return Err(perr(line, head.column, "`txn` outside of a session"));
                }
                if open.is_some() {
                    return Err(perr(line, head.column, "previous transaction not terminated"));
                }
                let tid: u32 = num(line, &toks[1], "transaction id")?;
                open = Some(TxnRecord {
                    tid: TxnId(tid),
                    ops: Vec::new(),
                    status: TxnStatus::Committed,
                });
                open_line = line;
            }
            "r" | "w" => {
                let Some(rec) = open.as_mut() else {
                    return Err(perr(line, head.column, "event outside of a transaction"));
                };
                let ev = if head.text == "r" {
                    arity(line, &toks, 5)?;
                    Event {
                        kind: EventKind::Read,
                        key: KeyId::new(toks[1].text),
                        pos: num(line, &toks[2], "position")?,
                        writer: Some(TxnId(num(line, &toks[3], "writer id")?)),
                        value: num(line, &toks[4], "integer value")?,
                    }
                } else {
                    arity(line, &toks, 4)?;
                    Event {
                        kind: EventKind::Write,
                        key: KeyId::new(toks[1].text),
                        pos: num(line, &toks[2], "position")?,
                        writer: None,
                        value: num(line, &toks[3], "integer value")?,
                    }
                };
                if ev.pos == 0 {
                    return Err(perr(line, toks[2].column, "positions must be positive"));
                }
                rec.ops.push(ev);
            }
            "commit" | "abort" => {
                arity(line, &toks, 1)?;
                let Some(mut rec) = open.take() else {
                    return Err(perr(line, head.column, "terminator outside of a transaction"));
                };
                rec.status = if head.text == "commit" {
                    TxnStatus::Committed
                } else {
                    TxnStatus::Aborted
                };
                trace.sessions.last_mut().unwrap().txns.push(rec);
            }
            "boundary" => {
                arity(line, &toks, 3)?;
                let sid: u32 = num(line, &toks[1], "session id")?;
                let b = if toks[2].text == "inf" {
                    Boundary::Infinity
                } else {
                    Boundary::At(num(line, &toks[2], "position or `inf`")?)
                };
                if trace.boundaries.insert(SessionId(sid), b).is_some() {
                    return Err(TraceError::Semantic(format!("duplicate boundary for session {sid}")));
                }
            }
            "schedule" => {
                if trace.schedule.is_some() {
                    return Err(perr(line, head.column, "duplicate `schedule` line"));
                }
                let mut order = Vec::new();
                for t in &toks[1..] {
                    order.push(TxnId(num(line, t, "transaction id")?));
                }
                trace.schedule = Some(order);
            }
            other => return Err(perr(line, head.column, format!("unknown directive `{other}`"))),
        }
    }
    if open.is_some() {
        return Err(perr(open_line, 1, "transaction not terminated at end of input"));
    }
    check_semantics(&trace)?;
    Ok(trace)
}

fn check_semantics(trace: &Trace) -> Result<(), TraceError> {
    let mut tids = BTreeSet::new();
    for s in &trace.sessions {
        let mut prev: Option<u32> = None;
        for rec in &s.txns {
            if rec.tid.is_init() {
                return Err(TraceError::Semantic("transaction id 0 is reserved".into()));
            }
            if !tids.insert(rec.tid) {
                return Err(TraceError::Semantic(format!("duplicate transaction id {}", rec.tid.0)));
            }
            for e in &rec.ops {
                if let Some(p) = prev {
                    if e.pos <= p {
                        return Err(TraceError::Semantic(format!(
                            "position regression in session {}: {} after {}",
                            s.sid.0, e.pos, p
                        )));
                    }
                }
                prev = Some(e.pos);
            }
        }
    }
    if let Some(order) = &trace.schedule {
        let listed: BTreeSet<TxnId> = order.iter().copied().collect();
        if listed.len() != order.len() || listed != tids {
            return Err(TraceError::Semantic(
                "schedule is not a permutation of the trace's transactions".into(),
            ));
        }
    }
    for sid in trace.boundaries.keys() {
        if !trace.sessions.iter().any(|s| s.sid == *sid) {
            return Err(TraceError::Semantic(format!("boundary for unknown session {}", sid.0)));
        }
    }
    Ok(())
}

/// Canonical text: sessions by id, events by position, then boundaries and
/// schedule.
pub fn emit_trace(trace: &Trace) -> String {
    let mut out = String::new();
    let mut sessions: Vec<&SessionTrace> = trace.sessions.iter().collect();
    sessions.sort_by_key(|s| s.sid);
    for s in sessions {
        writeln!(out, "session {}", s.sid.0).unwrap();
        for rec in &s.txns {
            writeln!(out, "txn {}", rec.tid.0).unwrap();
            let mut ops: Vec<&Event> = rec.ops.iter().collect();
            ops.sort_by_key(|e| e.pos);
            for e in ops {
                match e.kind {
                    EventKind::Read => writeln!(
                        out,
                        "r {} {} {} {}",
                        e.key,
                        e.pos,
                        e.writer.unwrap().0,
                        e.value
                    )
                    .unwrap(),
                    EventKind::Write => writeln!(out, "w {} {} {}", e.key, e.pos, e.value).unwrap(),
                }
            }
            out.push_str(match rec.status {
                TxnStatus::Committed => "commit\n",
                TxnStatus::Aborted => "abort\n",
            });
        }
    }
    for (sid, b) in &trace.boundaries {
        writeln!(out, "boundary {} {}", sid.0, b).unwrap();
    }
    if let Some(order) = &trace.schedule {
        out.push_str("schedule");
        for t in order {
            write!(out, " {}", t.0).unwrap();
        }
        out.push('\n');
    }
    out
}

/// Trace holding exactly the committed transactions of a history.
pub fn history_to_trace(history: &ExecutionHistory) -> Trace {
    let sessions = history
        .sessions()
        .iter()
        .map(|(sid, tids)| SessionTrace {
            sid: *sid,
            txns: tids
                .iter()
                .map(|t| {
                    let txn = history.txn(*t).unwrap();
                    TxnRecord {
                        tid: txn.tid,
                        ops: txn.events.clone(),
                        status: TxnStatus::Committed,
                    }
                })
                .collect(),
        })
        .collect();
    Trace {
        sessions,
        schedule: None,
        boundaries: BTreeMap::new(),
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct DotOptions {
    pub show_values: bool,
}

/// DOT rendering: one box per transaction listing its events, session-order
/// edges between neighbours, write-read edges per key, and the highlighted
/// edges (if any) in red.
pub fn emit_dot(history: &ExecutionHistory, highlight: Option<&[Edge]>, opts: DotOptions) -> String {
    let mut out = String::from("digraph history {\n  node [shape=box, fontname=\"monospace\"];\n");
    for t in history.txns() {
        let mut label = t.tid.to_string();
        if !t.tid.is_init() {
            write!(label, " ({})", t.sid).unwrap();
        }
        for e in &t.events {
            let kind = if e.is_read() { "R" } else { "W" };
            write!(label, "\\n{kind} {}@{}", e.key, e.pos).unwrap();
            if opts.show_values {
                write!(label, "={}", e.value).unwrap();
            }
        }
        writeln!(out, "  {} [label=\"{}\"];", t.tid, label).unwrap();
    }

    let mut edges: BTreeMap<(TxnId, TxnId, EdgeLabel), bool> = BTreeMap::new();
    for tids in history.sessions().values() {
        if let Some(first) = tids.first() {
            edges.insert((TxnId::INIT, *first, EdgeLabel::So), false);
        }
        for w in tids.windows(2) {
            edges.insert((w[0], w[1], EdgeLabel::So), false);
        }
    }
    for (k, pairs) in history.wr() {
        for (a, b) in pairs {
            edges.insert((*a, *b, EdgeLabel::Wr(k.clone())), false);
        }
    }
    for e in highlight.unwrap_or(&[]) {
        edges.insert((e.from, e.to, e.label.clone()), true);
    }
    for ((a, b, label), hot) in edges {
        let style = match (&label, hot) {
            (EdgeLabel::So, false) => "",
            (_, false) => ", color=blue",
            (EdgeLabel::So | EdgeLabel::Wr(_), true) => ", color=red, penwidth=2",
            (_, true) => ", color=red, penwidth=2, style=dashed",
        };
        writeln!(out, "  {a} -> {b} [label=\"{label}\"{style}];").unwrap();
    }
    out.push_str("}\n");
    out
}
