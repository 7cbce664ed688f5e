//! Replaying a predicted history against the workload that produced the
//! observed one.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use super::{legal_writers, run_workload, Engine, ReadPolicy, Workload};
use crate::checker::{self, CheckError, IsolationLevel, Verdict};
use crate::history::{Event, ExecutionHistory, KeyId, SessionId, Transaction, TxnId};
use crate::predictor::PredictedHistory;
use crate::trace::{Trace, TxnRecord, TxnStatus};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DivergenceReason {
    KeyMismatch,
    WriterMissing,
    IsolationIllegal,
    AbortRewind,
    CommitFlip,
}

impl DivergenceReason {
    pub fn tag(self) -> &'static str {
        match self {
            DivergenceReason::KeyMismatch => "key-mismatch",
            DivergenceReason::WriterMissing => "writer-missing",
            DivergenceReason::IsolationIllegal => "isolation-illegal",
            DivergenceReason::AbortRewind => "abort-rewind",
            DivergenceReason::CommitFlip => "commit-flip",
        }
    }
}

impl fmt::Display for DivergenceReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Divergence {
    /// Predicted transaction for read and abort divergences; the new
    /// transaction for commit flips.
    pub tid: TxnId,
    pub reason: DivergenceReason,
    pub detail: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ValidationOutcome {
    ValidatedUnserializable,
    Serializable,
    Unknown,
}

impl ValidationOutcome {
    pub fn tag(self) -> &'static str {
        match self {
            ValidationOutcome::ValidatedUnserializable => "validated-unserializable",
            ValidationOutcome::Serializable => "serializable",
            ValidationOutcome::Unknown => "unknown",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ValidationReport {
    pub outcome: ValidationOutcome,
    pub diverged: bool,
    pub divergences: Vec<Divergence>,
    pub validating_history: ExecutionHistory,
    pub trace: Trace,
    /// Last committed value of every written key.
    pub final_values: BTreeMap<KeyId, i64>,
}

#[derive(Debug, thiserror::Error)]
pub enum ValidateError {
    #[error("prediction does not match the workload: {0}")]
    ReplayMismatch(String),
    #[error("checker failure: {0}")]
    Check(#[from] CheckError),
}

fn non_self_reads(tid: TxnId, ops: &[Event]) -> Vec<&Event> {
    ops.iter().filter(|e| e.is_read() && e.writer != Some(tid)).collect()
}

/// Checks that every predicted transaction is a committed observed one with
/// matching events, and that each predicted session is a prefix of the
/// observed session's committed transactions.
fn check_skeleton(predicted: &ExecutionHistory, observed: &Trace) -> Result<(), ValidateError> {
    let bad = |m: String| Err(ValidateError::ReplayMismatch(m));
    for (sid, tids) in predicted.sessions() {
        let Some(session) = observed.session(*sid) else {
            return bad(format!("session {sid} was not observed"));
        };
        let committed: Vec<&TxnRecord> = session.txns.iter().filter(|r| r.status == TxnStatus::Committed).collect();
        if tids.len() > committed.len() {
            return bad(format!("session {sid} has more predicted than observed transactions"));
        }
        for (t, rec) in tids.iter().zip(committed) {
            if *t != rec.tid {
                return bad(format!("{t} in {sid} does not match observed {}", rec.tid));
            }
            for e in &predicted.txn(*t).unwrap().events {
                let same = rec
                    .ops
                    .iter()
                    .any(|o| o.pos == e.pos && o.kind == e.kind && o.key == e.key);
                if !same {
                    return bad(format!("{t} has no observed event on {} at {}", e.key, e.pos));
                }
            }
        }
    }
    Ok(())
}

/// Executes the workload so that reads follow the predicted writers where
/// possible, up to the last predicted transaction of each session, and
/// checks the result for serializability.
pub fn validate(
    predicted: &PredictedHistory,
    workload: &Workload,
    sessions: u32,
    txns: u32,
    seed: u64,
    level: IsolationLevel,
) -> Result<ValidationReport, ValidateError> {
    let (observed, _) = run_workload(workload, sessions, txns, seed, ReadPolicy::LatestWriter);
    let pred = &predicted.history;
    check_skeleton(pred, &observed)?;
    let programs = workload.programs(sessions, txns, seed);
    let sched_rank: BTreeMap<TxnId, usize> = observed
        .schedule
        .iter()
        .flatten()
        .enumerate()
        .map(|(i, t)| (*t, i))
        .collect();

    struct Plan<'a> {
        sid: SessionId,
        records: &'a [TxnRecord],
        /// Bodies `0..end` run.
        end: usize,
        next: usize,
        predicted: Vec<TxnId>,
        cursor: usize,
    }
    let mut plans: Vec<Plan> = Vec::new();
    for s in &observed.sessions {
        let predicted_tids = pred.sessions().get(&s.sid).cloned().unwrap_or_default();
        let end = match predicted_tids.last() {
            Some(last) => s.txns.iter().position(|r| r.tid == *last).unwrap() + 1,
            None => 0,
        };
        plans.push(Plan {
            sid: s.sid,
            records: &s.txns,
            end,
            next: 0,
            predicted: predicted_tids,
            cursor: 0,
        });
    }

    let mut fresh = observed.records().map(|(_, r)| r.tid.0).max().unwrap_or(0) + 1;
    let mut engine = Engine::new(programs.len() as u32);
    let mut executed: BTreeSet<TxnId> = BTreeSet::new();
    let mut divergences = Vec::new();

    loop {
        let live: Vec<usize> = (0..plans.len()).filter(|&i| plans[i].next < plans[i].end).collect();
        if live.is_empty() {
            break;
        }
        let target = |p: &Plan| -> Option<TxnId> {
            let rec = &p.records[p.next];
            (rec.status == TxnStatus::Committed && p.cursor < p.predicted.len()).then(|| p.predicted[p.cursor])
        };
        let ready = |p: &Plan| -> bool {
            target(p).map_or(true, |t| {
                pred.txn(t)
                    .unwrap()
                    .reads()
                    .filter_map(|e| e.writer)
                    .all(|w| w.is_init() || executed.contains(&w) || pred.session_of(w) == Some(p.sid))
            })
        };
        let rank = |p: &Plan| sched_rank.get(&p.records[p.next].tid).copied().unwrap_or(usize::MAX);
        let pick = live
            .iter()
            .copied()
            .filter(|&i| ready(&plans[i]))
            .min_by_key(|&i| rank(&plans[i]))
            .unwrap_or_else(|| live.iter().copied().min_by_key(|&i| rank(&plans[i])).unwrap());

        let plan = &plans[pick];
        let sid = plan.sid;
        let obs_rec = &plan.records[plan.next];
        let tgt = target(plan);
        let tid = tgt.unwrap_or_else(|| {
            fresh += 1;
            TxnId(fresh - 1)
        });
        let body = &programs[sid.0 as usize - 1][plan.next];
        let predicted_reads: Vec<Event> = tgt
            .map(|t| pred.txn(t).unwrap().reads().cloned().collect())
            .unwrap_or_default();
        let observed_reads: Vec<Event> = non_self_reads(obs_rec.tid, &obs_rec.ops).into_iter().cloned().collect();
        let mut ordinal = 0usize;
        let mut local: Vec<Divergence> = Vec::new();
        let mut resolve = |e: &Engine, inflight: &Transaction, key: &KeyId| -> TxnId {
            let r = ordinal;
            ordinal += 1;
            let legal = legal_writers(&e.committed, inflight, key, level);
            if let Some(p) = predicted_reads.get(r) {
                let w = p.writer.unwrap();
                let reason = if &p.key != key {
                    Some(DivergenceReason::KeyMismatch)
                } else if !e.store.is_committed(w) || e.store.value(w, key).is_none() {
                    Some(DivergenceReason::WriterMissing)
                } else if !legal.contains(&w) {
                    Some(DivergenceReason::IsolationIllegal)
                } else {
                    None
                };
                return match reason {
                    None => w,
                    Some(reason) => {
                        local.push(Divergence {
                            tid: inflight.tid,
                            reason,
                            detail: format!("read {r} of {} ({key}) expected {w}, used {}", inflight.tid, legal[0]),
                        });
                        legal[0]
                    }
                };
            }
            let latest = e.store.writers(key).into_iter().rev().find(|w| legal.contains(w));
            match observed_reads.get(r) {
                Some(o) if &o.key == key && legal.contains(&o.writer.unwrap()) && e.store.is_committed(o.writer.unwrap()) => {
                    o.writer.unwrap()
                }
                _ => latest.unwrap_or(legal[legal.len() - 1]),
            }
        };
        let status = engine.execute(sid, tid, body, &mut resolve);
        divergences.append(&mut local);
        let plan = &mut plans[pick];
        match (tgt, status) {
            (Some(t), TxnStatus::Committed) => {
                executed.insert(t);
                plan.cursor += 1;
            }
            (Some(t), TxnStatus::Aborted) => {
                let new = TxnId(fresh);
                fresh += 1;
                engine.relabel_last_abort(sid, new);
                divergences.push(Divergence {
                    tid: t,
                    reason: DivergenceReason::AbortRewind,
                    detail: format!("{t} aborted; retried as the next transaction of {sid}"),
                });
            }
            (None, TxnStatus::Committed) if obs_rec.status == TxnStatus::Aborted => {
                divergences.push(Divergence {
                    tid,
                    reason: DivergenceReason::CommitFlip,
                    detail: format!("observed abort {} commits as {tid}", obs_rec.tid),
                });
            }
            _ => {}
        }
        plan.next += 1;
    }

    let validating_history = engine
        .history()
        .map_err(|e| ValidateError::ReplayMismatch(format!("validating run is malformed: {e}")))?;
    let outcome = match checker::check_serializable(&validating_history) {
        Ok(Verdict::Serializable(_)) => ValidationOutcome::Serializable,
        Ok(_) => ValidationOutcome::ValidatedUnserializable,
        Err(CheckError::SolverUnknown(_)) => ValidationOutcome::Unknown,
        Err(e) => return Err(e.into()),
    };
    Ok(ValidationReport {
        outcome,
        diverged: !divergences.is_empty(),
        divergences,
        validating_history,
        trace: engine.trace(),
        final_values: engine.store.final_values(),
    })
}
