//! Prediction of unserializable executions from an observed history.
//!
//! The observed history is turned into a constraint program over the writer
//! each read observes (`choice`) and a per-session cut-off (`boundary`).
//! A satisfying assignment describes a history prefix that is valid under the
//! requested weak isolation level and is not serializable.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::time::{Duration, Instant};

use txpredict_solver::{
    Budget, ConstraintProgram, Formula, Model, NativeBackend, NativeSession, SatResult, SolverError, Sort, Symbol, Value,
};

use crate::checker::{self, CheckError, CommitOrder, Verdict};
pub use crate::checker::IsolationLevel;
use crate::history::{Edge, EdgeLabel, Event, ExecutionHistory, HistoryError, KeyId, SessionId, Transaction, TxnId};
use crate::trace::{Boundary, Trace};
use crate::trace_io::history_to_trace;

const INF: u64 = u32::MAX as u64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PredictionStrategy {
    ExactStrict,
    ApproxStrict,
    ApproxRelaxed,
}

impl PredictionStrategy {
    pub const ALL: [PredictionStrategy; 3] = [
        PredictionStrategy::ExactStrict,
        PredictionStrategy::ApproxStrict,
        PredictionStrategy::ApproxRelaxed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PredictionStrategy::ExactStrict => "exact-strict",
            PredictionStrategy::ApproxStrict => "approx-strict",
            PredictionStrategy::ApproxRelaxed => "approx-relaxed",
        }
    }

    pub fn boundary_mode(self) -> BoundaryMode {
        match self {
            PredictionStrategy::ApproxRelaxed => BoundaryMode::Relaxed,
            _ => BoundaryMode::Strict,
        }
    }
}

impl fmt::Display for PredictionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for PredictionStrategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PredictionStrategy::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| format!("unknown strategy `{s}` (expected exact-strict, approx-strict or approx-relaxed)"))
    }
}

/// Strict boundaries sit on a read event; relaxed boundaries cover a whole
/// transaction, whose reads may all change.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BoundaryMode {
    Strict,
    Relaxed,
}

/// One admissible value of a session's boundary variable. Reads before
/// `start` keep their observed writer; events after `cut` are dropped.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BoundaryValue {
    pub value: i64,
    pub start: u64,
    pub cut: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReadSlot {
    pub pos: u32,
    pub reader: TxnId,
    pub key: KeyId,
    pub obs: TxnId,
    /// Candidate writers: every writer of the key except the reader.
    pub writers: Vec<TxnId>,
    pub choice: Symbol,
}

#[derive(Clone, Debug)]
pub struct SessionVars {
    pub sid: SessionId,
    pub txns: Vec<TxnId>,
    pub reads: Vec<ReadSlot>,
    pub domain: Vec<BoundaryValue>,
    pub boundary: Symbol,
}

/// Symbols of a prediction program. Relations are keyed by transaction ids;
/// pairs absent from a map are constantly false.
#[derive(Clone, Debug)]
pub struct PredictionVars {
    pub mode: BoundaryMode,
    pub sessions: BTreeMap<SessionId, SessionVars>,
    pub wr_k: BTreeMap<(KeyId, TxnId, TxnId), Symbol>,
    pub wr: BTreeMap<(TxnId, TxnId), Symbol>,
    pub hb: BTreeMap<(TxnId, TxnId), Symbol>,
    pub co: BTreeMap<TxnId, Symbol>,
    pub pco: BTreeMap<(TxnId, TxnId), Symbol>,
    pub ww: BTreeMap<(TxnId, TxnId), Symbol>,
    pub rw: BTreeMap<(TxnId, TxnId), Symbol>,
    pub rank: BTreeMap<(TxnId, TxnId), Symbol>,
    tids: Vec<TxnId>,
}

fn inf_value() -> i64 {
    INF as i64
}

impl PredictionVars {
    /// Declares choice, boundary and write-read symbols.
    pub fn declare(p: &mut ConstraintProgram, obs: &ExecutionHistory, mode: BoundaryMode) -> Self {
        let mut sessions = BTreeMap::new();
        let mut wr_k = BTreeMap::new();
        let mut wr = BTreeMap::new();
        for (sid, tids) in obs.sessions() {
            let mut reads = Vec::new();
            let mut domain = Vec::new();
            for &t in tids {
                let txn = obs.txn(t).unwrap();
                for e in txn.reads() {
                    let writers: Vec<TxnId> = obs.writers_of(&e.key).into_iter().filter(|&w| w != t).collect();
                    let choice = p
                        .declare(
                            format!("choice[{}][{}]", sid.0, e.pos),
                            Sort::Enum(writers.iter().map(|w| w.0 as i64).collect()),
                        )
                        .unwrap();
                    p.annotate(choice, format!("writer observed by {t}'s read of {} at {}", e.key, e.pos));
                    if mode == BoundaryMode::Strict {
                        domain.push(BoundaryValue {
                            value: e.pos as i64,
                            start: e.pos as u64,
                            cut: e.pos as u64,
                        });
                    }
                    for &w in &writers {
                        if !wr_k.contains_key(&(e.key.clone(), w, t)) {
                            let s = p.declare_bool(format!("wr[{}][{}][{}]", e.key, w.0, t.0)).unwrap();
                            wr_k.insert((e.key.clone(), w, t), s);
                        }
                        wr.entry((w, t))
                            .or_insert_with(|| p.declare_bool(format!("wr[{}][{}]", w.0, t.0)).unwrap());
                    }
                    reads.push(ReadSlot {
                        pos: e.pos,
                        reader: t,
                        key: e.key.clone(),
                        obs: e.writer.unwrap(),
                        writers,
                        choice,
                    });
                }
                if mode == BoundaryMode::Relaxed && txn.reads().next().is_some() {
                    domain.push(BoundaryValue {
                        value: txn.last_pos().unwrap() as i64,
                        start: txn.first_pos().unwrap() as u64,
                        cut: txn.last_pos().unwrap() as u64,
                    });
                }
            }
            domain.push(BoundaryValue {
                value: inf_value(),
                start: INF,
                cut: INF,
            });
            let boundary = p
                .declare(
                    format!("boundary[{}]", sid.0),
                    Sort::Enum(domain.iter().map(|b| b.value).collect()),
                )
                .unwrap();
            p.annotate(boundary, format!("prediction boundary of {sid}"));
            sessions.insert(
                *sid,
                SessionVars {
                    sid: *sid,
                    txns: tids.clone(),
                    reads,
                    domain,
                    boundary,
                },
            );
        }
        PredictionVars {
            mode,
            sessions,
            wr_k,
            wr,
            hb: BTreeMap::new(),
            co: BTreeMap::new(),
            pco: BTreeMap::new(),
            ww: BTreeMap::new(),
            rw: BTreeMap::new(),
            rank: BTreeMap::new(),
            tids: obs.tids().collect(),
        }
    }

    /// Every choice and boundary symbol.
    pub fn assignment_symbols(&self) -> Vec<Symbol> {
        let mut out = Vec::new();
        for s in self.sessions.values() {
            out.extend(s.reads.iter().map(|r| r.choice));
            out.push(s.boundary);
        }
        out
    }

    fn when(&self, sid: SessionId, pred: impl Fn(&BoundaryValue) -> bool) -> Formula {
        let s = &self.sessions[&sid];
        let hits: Vec<&BoundaryValue> = s.domain.iter().filter(|b| pred(b)).collect();
        if hits.len() == s.domain.len() {
            return Formula::True;
        }
        Formula::or(hits.into_iter().map(|b| Formula::eq(s.boundary, b.value)))
    }

    fn choice_is(slot: &ReadSlot, t: TxnId) -> Formula {
        if slot.writers.contains(&t) {
            Formula::eq(slot.choice, t.0 as i64)
        } else {
            Formula::False
        }
    }

    fn pair_f(m: &BTreeMap<(TxnId, TxnId), Symbol>, a: TxnId, b: TxnId) -> Formula {
        m.get(&(a, b)).map_or(Formula::False, |s| Formula::var(*s))
    }

    /// `t`'s last write of `k` lies within its session's boundary.
    fn inc_w(&self, obs: &ExecutionHistory, t: TxnId, k: &KeyId) -> Formula {
        if t.is_init() {
            return Formula::True;
        }
        let txn = obs.txn(t).unwrap();
        match txn.wrpos(k) {
            None => Formula::False,
            Some(wp) => self.when(txn.sid, |b| wp as u64 <= b.cut),
        }
    }

    /// Reads within `sid` between `start` and `cut` keep their observed writer.
    fn unchanged(&self, sid: SessionId, b: &BoundaryValue) -> Formula {
        Formula::and(
            self.sessions[&sid]
                .reads
                .iter()
                .filter(|r| (r.pos as u64) >= b.start && (r.pos as u64) <= b.cut)
                .map(|r| Self::choice_is(r, r.obs)),
        )
    }

    /// A read within a boundary may observe `t`'s write of `k`.
    fn readable(&self, obs: &ExecutionHistory, t: TxnId, k: &KeyId) -> Formula {
        if t.is_init() {
            return Formula::True;
        }
        let txn = obs.txn(t).unwrap();
        let Some(wp) = txn.wrpos(k).map(u64::from) else {
            return Formula::False;
        };
        let s = &self.sessions[&txn.sid];
        Formula::or(s.domain.iter().map(|b| {
            let cond = if wp < b.start {
                Formula::True
            } else if wp <= b.cut {
                self.unchanged(txn.sid, b)
            } else {
                Formula::False
            };
            Formula::and([Formula::eq(s.boundary, b.value), cond])
        }))
    }
}

/// Choice domains, write-read definitions, boundary fidelity and readability.
pub fn gen_feasibility(p: &mut ConstraintProgram, obs: &ExecutionHistory, vars: &PredictionVars) {
    for (sid, s) in &vars.sessions {
        for r in &s.reads {
            let i = r.pos as u64;
            let before = vars.when(*sid, |b| i < b.start);
            let after = vars.when(*sid, |b| i > b.cut);
            let keep = PredictionVars::choice_is(r, r.obs);
            p.assert(Formula::implies(before, keep.clone())).unwrap();
            // reads past the boundary are irrelevant; pin them to keep models canonical
            p.assert(Formula::implies(after, keep)).unwrap();
            let within = vars.when(*sid, |b| i <= b.cut);
            for &w in &r.writers {
                p.assert(Formula::implies(
                    Formula::and([PredictionVars::choice_is(r, w), within.clone()]),
                    vars.readable(obs, w, &r.key),
                ))
                .unwrap();
            }
        }
    }
    for ((k, w, t), sym) in &vars.wr_k {
        let s = &vars.sessions[&obs.session_of(*t).unwrap()];
        let def = Formula::or(s.reads.iter().filter(|r| r.reader == *t && &r.key == k).map(|r| {
            let i = r.pos as u64;
            Formula::and([PredictionVars::choice_is(r, *w), vars.when(s.sid, |b| i <= b.cut)])
        }));
        p.assert(Formula::iff(Formula::var(*sym), def)).unwrap();
    }
    for ((w, t), sym) in &vars.wr {
        let def = Formula::or(
            vars.wr_k
                .iter()
                .filter(|((_, a, b), _)| a == w && b == t)
                .map(|(_, s)| Formula::var(*s)),
        );
        p.assert(Formula::iff(Formula::var(*sym), def)).unwrap();
    }
}

fn so_f(obs: &ExecutionHistory, a: TxnId, b: TxnId) -> Formula {
    Formula::constant(obs.so(a, b))
}

/// Happens-before, level-specific arbitration and an integer commit order
/// witnessing conformance.
pub fn gen_isolation(p: &mut ConstraintProgram, obs: &ExecutionHistory, vars: &mut PredictionVars, level: IsolationLevel) {
    let tids = vars.tids.clone();
    for &a in &tids {
        let s = p.declare(format!("co_{}[{}]", level.name(), a.0), Sort::int()).unwrap();
        vars.co.insert(a, s);
    }
    for &a in &tids {
        for &b in &tids {
            if a != b {
                let s = p.declare_bool(format!("hb[{}][{}]", a.0, b.0)).unwrap();
                vars.hb.insert((a, b), s);
            }
        }
    }
    for &a in &tids {
        for &b in &tids {
            if a == b {
                continue;
            }
            let mut parts = vec![so_f(obs, a, b), PredictionVars::pair_f(&vars.wr, a, b)];
            for &t in &tids {
                if t != a && t != b {
                    parts.push(Formula::and([
                        Formula::var(vars.hb[&(a, t)]),
                        Formula::var(vars.hb[&(t, b)]),
                    ]));
                }
            }
            p.assert(Formula::iff(Formula::var(vars.hb[&(a, b)]), Formula::or(parts)))
                .unwrap();
            p.assert(Formula::implies(
                Formula::var(vars.hb[&(a, b)]),
                Formula::lt(vars.co[&a], vars.co[&b]),
            ))
            .unwrap();
        }
    }
    match level {
        IsolationLevel::Causal => {
            for ((k, t2, t3), sym) in &vars.wr_k {
                for t1 in obs.writers_of(k) {
                    if t1 == *t2 || t1 == *t3 {
                        continue;
                    }
                    p.assert(Formula::implies(
                        Formula::and([
                            Formula::var(*sym),
                            Formula::var(vars.hb[&(t1, *t3)]),
                            vars.inc_w(obs, t1, k),
                        ]),
                        Formula::lt(vars.co[&t1], vars.co[t2]),
                    ))
                    .unwrap();
                }
            }
        }
        IsolationLevel::ReadCommitted => {
            for s in vars.sessions.values() {
                for (j, alpha) in s.reads.iter().enumerate() {
                    let jp = alpha.pos as u64;
                    let within = vars.when(s.sid, |b| jp <= b.cut);
                    for beta in s.reads[..j].iter().filter(|b| b.reader == alpha.reader) {
                        for &t1 in &beta.writers {
                            if !obs.txn(t1).unwrap().writes_key(&alpha.key) {
                                continue;
                            }
                            for &t2 in &alpha.writers {
                                if t1 == t2 {
                                    continue;
                                }
                                p.assert(Formula::implies(
                                    Formula::and([
                                        PredictionVars::choice_is(beta, t1),
                                        PredictionVars::choice_is(alpha, t2),
                                        within.clone(),
                                        vars.inc_w(obs, t1, &alpha.key),
                                    ]),
                                    Formula::lt(vars.co[&t1], vars.co[&t2]),
                                ))
                                .unwrap();
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Partial commit order with rank-justified `ww`, `rw` and transitive
/// edges, and a two-transaction cycle in it.
pub fn gen_unser_approx(p: &mut ConstraintProgram, obs: &ExecutionHistory, vars: &mut PredictionVars) {
    let tids = vars.tids.clone();
    let n = tids.len() as i64;
    for &a in &tids {
        for &b in &tids {
            if a == b {
                continue;
            }
            let s = p.declare_bool(format!("pco[{}][{}]", a.0, b.0)).unwrap();
            vars.pco.insert((a, b), s);
            let r = p
                .declare(format!("rank[{}][{}]", a.0, b.0), Sort::bounded_int(0, n * n))
                .unwrap();
            vars.rank.insert((a, b), r);
        }
    }
    let pco = |a: TxnId, b: TxnId| Formula::var(vars.pco[&(a, b)]);
    let rank_gt = |x: (TxnId, TxnId), y: (TxnId, TxnId)| Formula::lt(vars.rank[&y], vars.rank[&x]);

    // ww(t1,t2): t1 precedes a reader of t2's write, so t1 precedes t2
    let mut ww_parts: BTreeMap<(TxnId, TxnId), Vec<Formula>> = BTreeMap::new();
    // rw(t1,t2): t1 read a write that t2 overwrote
    let mut rw_parts: BTreeMap<(TxnId, TxnId), Vec<Formula>> = BTreeMap::new();
    for ((k, tw, tr), sym) in &vars.wr_k {
        for t in obs.writers_of(k) {
            if t == *tw || t == *tr {
                continue;
            }
            ww_parts.entry((t, *tw)).or_default().push(Formula::and([
                Formula::var(*sym),
                pco(t, *tr),
                rank_gt((t, *tw), (t, *tr)),
                vars.inc_w(obs, t, k),
            ]));
            rw_parts.entry((*tr, t)).or_default().push(Formula::and([
                Formula::var(*sym),
                pco(*tw, t),
                rank_gt((*tr, t), (*tw, t)),
                vars.inc_w(obs, t, k),
            ]));
        }
    }
    for (pair, parts) in ww_parts {
        let s = p.declare_bool(format!("ww[{}][{}]", pair.0 .0, pair.1 .0)).unwrap();
        p.assert(Formula::iff(Formula::var(s), Formula::or(parts))).unwrap();
        vars.ww.insert(pair, s);
    }
    for (pair, parts) in rw_parts {
        let s = p.declare_bool(format!("rw[{}][{}]", pair.0 .0, pair.1 .0)).unwrap();
        p.assert(Formula::iff(Formula::var(s), Formula::or(parts))).unwrap();
        vars.rw.insert(pair, s);
    }
    let pco = |a: TxnId, b: TxnId| Formula::var(vars.pco[&(a, b)]);
    for &a in &tids {
        for &b in &tids {
            if a == b {
                continue;
            }
            let mut parts = vec![
                so_f(obs, a, b),
                PredictionVars::pair_f(&vars.wr, a, b),
                PredictionVars::pair_f(&vars.ww, a, b),
                PredictionVars::pair_f(&vars.rw, a, b),
            ];
            for &t in &tids {
                if t != a && t != b {
                    parts.push(Formula::and([
                        pco(a, t),
                        pco(t, b),
                        rank_gt((a, b), (a, t)),
                        rank_gt((a, b), (t, b)),
                    ]));
                }
            }
            p.assert(Formula::iff(pco(a, b), Formula::or(parts))).unwrap();
        }
    }
    let mut cycle = Vec::new();
    for (i, &a) in tids.iter().enumerate() {
        for &b in &tids[i + 1..] {
            cycle.push(Formula::and([pco(a, b), pco(b, a)]));
        }
    }
    p.assert(Formula::or(cycle)).unwrap();
}

/// A read whose writer differs from the observed one.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChangedRead {
    pub reader: TxnId,
    pub key: KeyId,
    pub pos: u32,
    pub observed: TxnId,
    pub predicted: TxnId,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PredictedHistory {
    pub history: ExecutionHistory,
    pub boundaries: BTreeMap<SessionId, Boundary>,
    pub changed_reads: Vec<ChangedRead>,
    /// Cycle in the partial commit order, for approximate strategies.
    pub cycle: Option<Vec<Edge>>,
}

impl PredictedHistory {
    pub fn to_trace(&self) -> Trace {
        let mut t = history_to_trace(&self.history);
        t.boundaries = self.boundaries.clone();
        t
    }

    /// Rebuilds a prediction from a trace file with boundary lines; changed
    /// reads and the cycle are not stored in the file.
    pub fn from_trace(trace: &Trace) -> Result<Self, HistoryError> {
        Ok(PredictedHistory {
            history: crate::history::build_history(trace)?,
            boundaries: trace.boundaries.clone(),
            changed_reads: Vec::new(),
            cycle: None,
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PredictError {
    #[error("solver failure: {0}")]
    Solver(#[from] SolverError),
    #[error("model does not describe a valid prediction: {0}")]
    InconsistentModel(String),
    #[error("checker failure: {0}")]
    Check(#[from] CheckError),
}

/// Builds the history described by a model over the observed history.
pub fn extract_predicted_history(
    model: &Model,
    obs: &ExecutionHistory,
    vars: &PredictionVars,
    level: IsolationLevel,
) -> Result<PredictedHistory, PredictError> {
    let bad = |m: String| PredictError::InconsistentModel(m);
    let mut txns = Vec::new();
    let mut boundaries = BTreeMap::new();
    let mut changed = Vec::new();
    for (sid, s) in &vars.sessions {
        let bv = model.int(s.boundary);
        let b = s
            .domain
            .iter()
            .find(|b| b.value == bv)
            .ok_or_else(|| bad(format!("boundary of {sid} outside its domain")))?;
        boundaries.insert(*sid, Boundary::from_pos(b.cut.min(INF) as u32));
        let chosen: BTreeMap<u32, TxnId> = s
            .reads
            .iter()
            .map(|r| (r.pos, TxnId(model.int(r.choice) as u32)))
            .collect();
        for r in &s.reads {
            let c = chosen[&r.pos];
            if (r.pos as u64) < b.start && c != r.obs {
                return Err(bad(format!("{}'s read at {} changed before the boundary", r.reader, r.pos)));
            }
            if (r.pos as u64) <= b.cut && c != r.obs {
                changed.push(ChangedRead {
                    reader: r.reader,
                    key: r.key.clone(),
                    pos: r.pos,
                    observed: r.obs,
                    predicted: c,
                });
            }
        }
        let mut kept: Vec<Transaction> = Vec::new();
        let mut pending_empty: Vec<Transaction> = Vec::new();
        for &t in &s.txns {
            let txn = obs.txn(t).unwrap();
            let events: Vec<Event> = txn
                .events
                .iter()
                .filter(|e| (e.pos as u64) <= b.cut)
                .map(|e| {
                    let mut e = e.clone();
                    if e.is_read() {
                        let w = chosen[&e.pos];
                        e.writer = Some(w);
                        e.value = obs.txn(w).and_then(|x| x.written_value(&e.key)).unwrap_or(0);
                    }
                    e
                })
                .collect();
            let t2 = Transaction::committed(t, *sid, events);
            if !t2.events.is_empty() {
                kept.append(&mut pending_empty);
                kept.push(t2);
            } else if txn.events.is_empty() {
                pending_empty.push(t2);
            }
        }
        if b.cut == INF {
            kept.append(&mut pending_empty);
        }
        txns.extend(kept);
    }
    let history = ExecutionHistory::from_transactions(txns, obs.keys().iter().cloned())
        .map_err(|e| bad(format!("predicted history is malformed: {e}")))?;
    // every in-boundary read's writer lies within its own boundary
    for site in history.read_sites() {
        if site.writer.is_init() {
            continue;
        }
        let w = obs.txn(site.writer).unwrap();
        let wp = w.wrpos(&site.key).unwrap() as u64;
        if !boundaries[&w.sid].includes(wp as u32) {
            return Err(bad(format!("{} reads {} outside {}'s boundary", site.reader, site.key, site.writer)));
        }
    }
    if let Verdict::Violates(c) = checker::check_level(&history, level) {
        let path: Vec<String> = c.iter().map(|e| e.to_string()).collect();
        return Err(bad(format!("prediction is not {}: {}", level.name(), path.join(", "))));
    }
    let cycle = if vars.pco.is_empty() {
        None
    } else {
        Some(pco_cycle(model, obs, vars)?)
    };
    Ok(PredictedHistory {
        history,
        boundaries,
        changed_reads: changed,
        cycle,
    })
}

fn pco_cycle(model: &Model, obs: &ExecutionHistory, vars: &PredictionVars) -> Result<Vec<Edge>, PredictError> {
    let holds = |m: &BTreeMap<(TxnId, TxnId), Symbol>, a: TxnId, b: TxnId| m.get(&(a, b)).is_some_and(|s| model.bool(*s));
    let (a, b) = vars
        .tids
        .iter()
        .flat_map(|&a| vars.tids.iter().map(move |&b| (a, b)))
        .filter(|&(a, b)| a < b && holds(&vars.pco, a, b) && holds(&vars.pco, b, a))
        .min_by_key(|&(a, b)| {
            let rank = |x, y| model.int(vars.rank[&(x, y)]);
            (a.is_init(), rank(a, b).max(rank(b, a)))
        })
        .ok_or_else(|| PredictError::InconsistentModel("no cycle in the partial commit order".into()))?;
    let mut out = Vec::new();
    expand(model, obs, vars, a, b, &mut out)?;
    expand(model, obs, vars, b, a, &mut out)?;
    Ok(out)
}

/// Replaces a `pco` pair by the base edges that justify it, following ranks
/// downwards through transitive steps.
fn expand(
    model: &Model,
    obs: &ExecutionHistory,
    vars: &PredictionVars,
    a: TxnId,
    b: TxnId,
    out: &mut Vec<Edge>,
) -> Result<(), PredictError> {
    let holds = |m: &BTreeMap<(TxnId, TxnId), Symbol>, x: TxnId, y: TxnId| m.get(&(x, y)).is_some_and(|s| model.bool(*s));
    let edge = |label| Edge { from: a, to: b, label };
    if obs.so(a, b) {
        out.push(edge(EdgeLabel::So));
        return Ok(());
    }
    if holds(&vars.wr, a, b) {
        let k = vars
            .wr_k
            .iter()
            .find(|((_, x, y), s)| *x == a && *y == b && model.bool(**s))
            .map(|((k, _, _), _)| k.clone())
            .unwrap();
        out.push(edge(EdgeLabel::Wr(k)));
        return Ok(());
    }
    let rank = |x: TxnId, y: TxnId| model.int(vars.rank[&(x, y)]);
    let inc = |t: TxnId, k: &KeyId| vars.inc_w(obs, t, k).eval(model);
    let pco = |x: TxnId, y: TxnId| holds(&vars.pco, x, y);
    if holds(&vars.ww, a, b) {
        for ((k, tw, tr), s) in &vars.wr_k {
            if *tw == b && *tr != a && model.bool(*s) && pco(a, *tr) && rank(a, b) > rank(a, *tr) && inc(a, k) {
                out.push(edge(EdgeLabel::Ww(k.clone())));
                return Ok(());
            }
        }
    }
    if holds(&vars.rw, a, b) {
        for ((k, tw, tr), s) in &vars.wr_k {
            if *tr == a && *tw != b && model.bool(*s) && pco(*tw, b) && rank(a, b) > rank(*tw, b) && inc(b, k) {
                out.push(edge(EdgeLabel::Rw(k.clone())));
                return Ok(());
            }
        }
    }
    for &t in &vars.tids {
        if t != a && t != b && pco(a, t) && pco(t, b) && rank(a, b) > rank(a, t) && rank(a, b) > rank(t, b) {
            expand(model, obs, vars, a, t, out)?;
            return expand(model, obs, vars, t, b, out);
        }
    }
    Err(PredictError::InconsistentModel(format!("pco({a},{b}) has no justification")))
}

#[derive(Clone, Copy, Debug)]
pub struct PredictConfig {
    pub budget: Budget,
    pub seed: u64,
    /// Candidate limit of the exact strategy and of saturation-based
    /// approximate solving.
    pub max_iterations: usize,
    pub approx: ApproxSolving,
}

/// How approximate strategies are solved.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ApproxSolving {
    /// One call on the full rank encoding.
    Direct,
    /// Candidates from feasibility and isolation only, with pco saturated
    /// outside the solver.
    Saturation,
    /// Direct with the given conflict limit, then saturation if undecided.
    DirectThenSaturation(u64),
}

impl Default for PredictConfig {
    fn default() -> Self {
        PredictConfig {
            budget: Budget::unlimited(),
            seed: 0,
            max_iterations: 10_000,
            approx: ApproxSolving::DirectThenSaturation(2_000),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PredictOutcome {
    Prediction(Box<PredictedHistory>),
    None,
    Unknown(String),
}

impl PredictOutcome {
    pub fn label(&self) -> &'static str {
        match self {
            PredictOutcome::Prediction(_) => "sat",
            PredictOutcome::None => "unsat",
            PredictOutcome::Unknown(_) => "unknown",
        }
    }

    pub fn prediction(&self) -> Option<&PredictedHistory> {
        match self {
            PredictOutcome::Prediction(p) => Some(p),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PredictStats {
    pub literals: usize,
    pub gen_ms: f64,
    pub solve_ms: f64,
    /// Solver calls.
    pub iterations: usize,
}

#[derive(Clone, Debug)]
pub struct PredictReport {
    pub outcome: PredictOutcome,
    pub stats: PredictStats,
    pub warnings: Vec<String>,
}

/// Builds the full program for an approximate strategy, or the candidate
/// program (without unserializability) for the exact one.
pub fn build_program(
    obs: &ExecutionHistory,
    level: IsolationLevel,
    strategy: PredictionStrategy,
) -> (ConstraintProgram, PredictionVars) {
    let (mut p, mut vars) = build_candidate_program(obs, level, strategy.boundary_mode());
    if strategy != PredictionStrategy::ExactStrict {
        gen_unser_approx(&mut p, obs, &mut vars);
    }
    (p, vars)
}

/// Feasibility, boundary and isolation constraints only. Its symbols are a
/// prefix of the full program's.
pub fn build_candidate_program(
    obs: &ExecutionHistory,
    level: IsolationLevel,
    mode: BoundaryMode,
) -> (ConstraintProgram, PredictionVars) {
    let mut p = ConstraintProgram::new();
    let mut vars = PredictionVars::declare(&mut p, obs, mode);
    gen_feasibility(&mut p, obs, &vars);
    gen_isolation(&mut p, obs, &mut vars, level);
    (p, vars)
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1000.0
}

pub fn predict(
    obs: &ExecutionHistory,
    level: IsolationLevel,
    strategy: PredictionStrategy,
    config: &PredictConfig,
) -> Result<PredictReport, PredictError> {
    let mut warnings = Vec::new();
    if obs.len() < 2 {
        return Ok(PredictReport {
            outcome: PredictOutcome::None,
            stats: PredictStats::default(),
            warnings,
        });
    }
    match checker::check_serializable(obs) {
        Ok(Verdict::Serializable(_)) => {}
        Ok(_) => warnings.push("observed history is not serializable".into()),
        Err(e) => warnings.push(format!("could not check the observed history: {e}")),
    }
    let started = Instant::now();
    let (program, vars) = build_program(obs, level, strategy);
    let mut stats = PredictStats {
        literals: program.literal_count(),
        gen_ms: ms(started.elapsed()),
        ..PredictStats::default()
    };
    let deadline = config.budget.timeout.map(|t| started + t);
    let backend = NativeBackend::new(config.seed);
    let solve_started = Instant::now();
    let outcome = if strategy == PredictionStrategy::ExactStrict {
        let mut session = backend.session(&program);
        exact_loop(obs, level, &vars, &mut session, config, deadline, &mut stats)?
    } else {
        let direct_limit = match config.approx {
            ApproxSolving::Direct => Some(u64::MAX),
            ApproxSolving::Saturation => None,
            ApproxSolving::DirectThenSaturation(n) => Some(n),
        };
        let mut outcome = None;
        if let Some(limit) = direct_limit {
            let mut session = backend.session(&program);
            let mut budget = remaining(&config.budget, deadline);
            budget.max_conflicts = Some(budget.max_conflicts.map_or(limit, |m| m.min(limit)));
            stats.iterations = 1;
            outcome = match session.check(&budget)? {
                SatResult::Sat(m) => Some(PredictOutcome::Prediction(Box::new(extract_predicted_history(
                    &m, obs, &vars, level,
                )?))),
                SatResult::Unsat => Some(PredictOutcome::None),
                SatResult::Unknown(r) => {
                    let expired = deadline.is_some_and(|d| Instant::now() >= d);
                    (config.approx == ApproxSolving::Direct || expired).then_some(PredictOutcome::Unknown(r))
                }
            };
        }
        match outcome {
            Some(o) => o,
            None => {
                let (candidate, _) = build_candidate_program(obs, level, strategy.boundary_mode());
                let mut session = backend.session(&candidate);
                saturation_loop(obs, level, &program, &vars, &mut session, config, deadline, &mut stats)?
            }
        }
    };
    stats.solve_ms = ms(solve_started.elapsed());
    Ok(PredictReport {
        outcome,
        stats,
        warnings,
    })
}

/// Least pco closed under so, wr, transitivity and the ww/rw rules for the
/// choices in `model`, with each pair numbered in derivation order.
fn saturate_pco(model: &Model, obs: &ExecutionHistory, vars: &PredictionVars) -> BTreeMap<(TxnId, TxnId), i64> {
    let tids = &vars.tids;
    let mut derived: BTreeMap<(TxnId, TxnId), i64> = BTreeMap::new();
    let mut next = 0i64;
    for &a in tids {
        for &b in tids {
            if a != b && (obs.so(a, b) || vars.wr.get(&(a, b)).is_some_and(|s| model.bool(*s))) {
                derived.insert((a, b), next);
                next += 1;
            }
        }
    }
    let reads: Vec<(&KeyId, TxnId, TxnId)> = vars
        .wr_k
        .iter()
        .filter(|(_, s)| model.bool(**s))
        .map(|((k, tw, tr), _)| (k, *tw, *tr))
        .collect();
    let mut inc: BTreeMap<(TxnId, &KeyId), bool> = BTreeMap::new();
    for &(k, _, _) in &reads {
        for t in obs.writers_of(k) {
            inc.entry((t, k)).or_insert_with(|| vars.inc_w(obs, t, k).eval(model));
        }
    }
    loop {
        let mut fresh = Vec::new();
        for &(k, tw, tr) in &reads {
            for t in obs.writers_of(k) {
                if t == tw || t == tr || !inc[&(t, k)] {
                    continue;
                }
                if derived.contains_key(&(t, tr)) && !derived.contains_key(&(t, tw)) {
                    fresh.push((t, tw));
                }
                if derived.contains_key(&(tw, t)) && !derived.contains_key(&(tr, t)) {
                    fresh.push((tr, t));
                }
            }
        }
        for &a in tids {
            for &b in tids {
                if a == b || derived.contains_key(&(a, b)) {
                    continue;
                }
                if tids
                    .iter()
                    .any(|t| derived.contains_key(&(a, *t)) && derived.contains_key(&(*t, b)))
                {
                    fresh.push((a, b));
                }
            }
        }
        if fresh.is_empty() {
            return derived;
        }
        for pair in fresh {
            if !derived.contains_key(&pair) {
                derived.insert(pair, next);
                next += 1;
            }
        }
    }
}

/// Extends a model of the candidate program with pco, ww, rw and rank
/// values read off a saturation.
fn complete_model(
    model: &Model,
    obs: &ExecutionHistory,
    program: &ConstraintProgram,
    vars: &PredictionVars,
    derived: &BTreeMap<(TxnId, TxnId), i64>,
) -> Model {
    let mut values: Vec<Value> = (0..program.symbol_count())
        .map(|i| {
            if i < model.len() {
                model.values()[i]
            } else {
                Value::Bool(false)
            }
        })
        .collect();
    let rank = |a: TxnId, b: TxnId| derived.get(&(a, b)).copied().unwrap_or(0);
    let pco = |a: TxnId, b: TxnId| derived.contains_key(&(a, b));
    for (&(a, b), s) in &vars.pco {
        values[s.index()] = Value::Bool(pco(a, b));
        values[vars.rank[&(a, b)].index()] = Value::Int(rank(a, b));
    }
    let mut ww = BTreeSet::new();
    let mut rw = BTreeSet::new();
    for ((k, tw, tr), s) in &vars.wr_k {
        if !model.bool(*s) {
            continue;
        }
        for t in obs.writers_of(k) {
            if t == *tw || t == *tr || !vars.inc_w(obs, t, k).eval(model) {
                continue;
            }
            if pco(t, *tr) && rank(t, *tw) > rank(t, *tr) {
                ww.insert((t, *tw));
            }
            if pco(*tw, t) && rank(*tr, t) > rank(*tw, t) {
                rw.insert((*tr, t));
            }
        }
    }
    for (pair, s) in &vars.ww {
        values[s.index()] = Value::Bool(ww.contains(pair));
    }
    for (pair, s) in &vars.rw {
        values[s.index()] = Value::Bool(rw.contains(pair));
    }
    Model::new(values)
}

/// Approximate strategies without ranks in the solver: candidates come from
/// the feasibility and isolation constraints, and pco is saturated directly.
/// Saturation is monotone in the wr and inc_w facts, so an acyclic result
/// rules out every candidate whose facts are a subset of the current ones.
#[allow(clippy::too_many_arguments)]
fn saturation_loop(
    obs: &ExecutionHistory,
    level: IsolationLevel,
    program: &ConstraintProgram,
    vars: &PredictionVars,
    session: &mut NativeSession,
    config: &PredictConfig,
    deadline: Option<Instant>,
    stats: &mut PredictStats,
) -> Result<PredictOutcome, PredictError> {
    while stats.iterations < config.max_iterations {
        stats.iterations += 1;
        let budget = remaining(&config.budget, deadline);
        if budget.timeout == Some(Duration::ZERO) {
            return Ok(PredictOutcome::Unknown("timeout".into()));
        }
        let model = match session.check(&budget)? {
            SatResult::Sat(m) => m,
            SatResult::Unsat => return Ok(PredictOutcome::None),
            SatResult::Unknown(r) => return Ok(PredictOutcome::Unknown(r)),
        };
        let derived = saturate_pco(&model, obs, vars);
        if derived.keys().any(|&(a, b)| derived.contains_key(&(b, a))) {
            let full = complete_model(&model, obs, program, vars, &derived);
            if !program.satisfied_by(&full) {
                return Err(PredictError::InconsistentModel(
                    "saturated pco does not satisfy the rank encoding".into(),
                ));
            }
            return Ok(PredictOutcome::Prediction(Box::new(extract_predicted_history(
                &full, obs, vars, level,
            )?)));
        }
        let mut growth = Vec::new();
        for s in vars.wr_k.values() {
            if !model.bool(*s) {
                growth.push(Formula::var(*s));
            }
        }
        for k in obs.keys() {
            for t in obs.writers_of(k) {
                let f = vars.inc_w(obs, t, k);
                if !f.eval(&model) {
                    growth.push(f);
                }
            }
        }
        session.assert(Formula::or(growth))?;
    }
    Ok(PredictOutcome::Unknown(format!(
        "no decision after {} candidates",
        config.max_iterations
    )))
}

fn remaining(budget: &Budget, deadline: Option<Instant>) -> Budget {
    Budget {
        timeout: deadline.map(|d| d.saturating_duration_since(Instant::now())),
        max_conflicts: budget.max_conflicts,
    }
}

fn exact_loop(
    obs: &ExecutionHistory,
    level: IsolationLevel,
    vars: &PredictionVars,
    session: &mut NativeSession,
    config: &PredictConfig,
    deadline: Option<Instant>,
    stats: &mut PredictStats,
) -> Result<PredictOutcome, PredictError> {
    let assignment = vars.assignment_symbols();
    let checker_backend = NativeBackend::new(config.seed);
    while stats.iterations < config.max_iterations {
        stats.iterations += 1;
        let budget = remaining(&config.budget, deadline);
        if budget.timeout == Some(Duration::ZERO) {
            return Ok(PredictOutcome::Unknown("timeout".into()));
        }
        let model = match session.check(&budget)? {
            SatResult::Sat(m) => m,
            SatResult::Unsat => return Ok(PredictOutcome::None),
            SatResult::Unknown(r) => return Ok(PredictOutcome::Unknown(r)),
        };
        let candidate = extract_predicted_history(&model, obs, vars, level)?;
        let budget = remaining(&config.budget, deadline);
        match checker::check_serializable_with(&candidate.history, &checker_backend, &budget) {
            Ok(Verdict::Serializable(co)) => {
                session.assert(serial_lemma(obs, vars, &candidate.history, &co))?;
                session.block(&assignment, &model);
            }
            Ok(_) => return Ok(PredictOutcome::Prediction(Box::new(candidate))),
            Err(CheckError::SolverUnknown(r)) => return Ok(PredictOutcome::Unknown(r)),
            Err(e) => return Err(e.into()),
        }
    }
    Ok(PredictOutcome::Unknown(format!(
        "no decision after {} candidates",
        config.max_iterations
    )))
}

/// Excludes every assignment whose history `co` (extended by the excluded
/// transactions in session order) also serializes.
fn serial_lemma(obs: &ExecutionHistory, vars: &PredictionVars, candidate: &ExecutionHistory, co: &CommitOrder) -> Formula {
    let mut order = co.0.clone();
    let included: BTreeSet<TxnId> = candidate.tids().collect();
    for tids in obs.sessions().values() {
        order.extend(tids.iter().filter(|t| !included.contains(t)));
    }
    let rank: BTreeMap<TxnId, usize> = order.iter().enumerate().map(|(i, t)| (*t, i)).collect();
    let mut conflicts = Vec::new();
    for (&(a, b), s) in &vars.wr {
        if rank[&a] > rank[&b] {
            conflicts.push(Formula::var(*s));
        }
    }
    for ((k, t2, t3), s) in &vars.wr_k {
        for t1 in obs.writers_of(k) {
            if t1 == *t2 || t1 == *t3 {
                continue;
            }
            if rank[t2] < rank[&t1] && rank[&t1] < rank[t3] {
                conflicts.push(Formula::and([Formula::var(*s), vars.inc_w(obs, t1, k)]));
            }
        }
    }
    Formula::or(conflicts)
}
