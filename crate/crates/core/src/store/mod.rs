//! In-memory transactional key-value store that runs whole transactions
//! serially and lets a policy pick the writer each read observes.

mod validate;
mod workload;

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use validate::{validate, Divergence, DivergenceReason, ValidateError, ValidationOutcome, ValidationReport};
pub use workload::{Expr, Guard, Operand, Script, ScriptError, ScriptOp, TxnBody, TxnEnd, TxnOps, Workload};

use crate::checker::{self, IsolationLevel};
use crate::history::{Event, ExecutionHistory, HistoryError, KeyId, SessionId, Transaction, TxnId};
use crate::trace::{SessionTrace, Trace, TxnRecord, TxnStatus};

/// Committed versions per key, in commit order. The initial state holds 0
/// for every key and is not listed.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KVStore {
    versions: BTreeMap<KeyId, Vec<(TxnId, i64)>>,
    committed: BTreeSet<TxnId>,
}

impl KVStore {
    pub fn new() -> Self {
        KVStore::default()
    }

    /// Writers of `key`, initial state first, then in commit order.
    pub fn writers(&self, key: &KeyId) -> Vec<TxnId> {
        let mut out = vec![TxnId::INIT];
        if let Some(v) = self.versions.get(key) {
            out.extend(v.iter().map(|(t, _)| *t));
        }
        out
    }

    pub fn latest(&self, key: &KeyId) -> (TxnId, i64) {
        self.versions
            .get(key)
            .and_then(|v| v.last().copied())
            .unwrap_or((TxnId::INIT, 0))
    }

    /// Value of `writer`'s committed write to `key`.
    pub fn value(&self, writer: TxnId, key: &KeyId) -> Option<i64> {
        if writer.is_init() {
            return Some(0);
        }
        self.versions
            .get(key)?
            .iter()
            .find(|(t, _)| *t == writer)
            .map(|(_, v)| *v)
    }

    pub fn is_committed(&self, t: TxnId) -> bool {
        t.is_init() || self.committed.contains(&t)
    }

    pub fn commit(&mut self, tid: TxnId, writes: &BTreeMap<KeyId, i64>) {
        for (k, v) in writes {
            self.versions.entry(k.clone()).or_default().push((tid, *v));
        }
        self.committed.insert(tid);
    }

    pub fn final_values(&self) -> BTreeMap<KeyId, i64> {
        self.versions
            .iter()
            .filter_map(|(k, v)| v.last().map(|(_, x)| (k.clone(), *x)))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReadPolicy {
    /// Every read observes the most recent committed write.
    LatestWriter,
    /// Every read observes a uniformly chosen writer legal under `level`.
    RandomWeak { level: IsolationLevel, seed: u64 },
}

/// Writers of `key` that `inflight` may read from next while the history
/// stays valid under `level`, sorted by id. Never empty: if no writer is
/// legal, the latest committed writer is returned.
pub fn legal_writers(
    committed: &[Transaction],
    inflight: &Transaction,
    key: &KeyId,
    level: IsolationLevel,
) -> Vec<TxnId> {
    let mut candidates = vec![TxnId::INIT];
    candidates.extend(committed.iter().filter(|t| t.writes_key(key)).map(|t| t.tid));
    let pos = inflight.last_pos().unwrap_or_else(|| {
        committed
            .iter()
            .filter(|t| t.sid == inflight.sid)
            .filter_map(Transaction::last_pos)
            .max()
            .unwrap_or(0)
    }) + 1;
    let mut legal: Vec<TxnId> = candidates
        .iter()
        .copied()
        .filter(|&w| {
            let mut t = inflight.clone();
            t.events.push(Event::read(key.clone(), pos, w, 0));
            let mut all = committed.to_vec();
            all.push(t);
            match ExecutionHistory::from_transactions(all, []) {
                Ok(h) => checker::check_level(&h, level).conforms(),
                Err(_) => false,
            }
        })
        .collect();
    if legal.is_empty() {
        legal.push(*candidates.last().unwrap());
    }
    legal.sort();
    legal
}

type Resolver<'r> = dyn FnMut(&Engine, &Transaction, &KeyId) -> TxnId + 'r;

/// Serial execution state shared by observation and validation runs.
pub(crate) struct Engine {
    pub store: KVStore,
    /// Committed transactions in execution order.
    pub committed: Vec<Transaction>,
    pub sessions: BTreeMap<SessionId, Vec<TxnRecord>>,
    pub schedule: Vec<TxnId>,
    next_pos: BTreeMap<SessionId, u32>,
}

struct Ctx<'a, 'r> {
    engine: &'a Engine,
    inflight: Transaction,
    own: BTreeMap<KeyId, i64>,
    pos: u32,
    resolve: &'a mut Resolver<'r>,
}

impl TxnOps for Ctx<'_, '_> {
    fn get(&mut self, key: &KeyId) -> i64 {
        let (writer, value) = match self.own.get(key) {
            Some(v) => (self.inflight.tid, *v),
            None => {
                let w = (self.resolve)(self.engine, &self.inflight, key);
                (w, self.engine.store.value(w, key).unwrap_or(0))
            }
        };
        self.inflight.events.push(Event::read(key.clone(), self.pos, writer, value));
        self.pos += 1;
        value
    }

    fn put(&mut self, key: &KeyId, value: i64) {
        self.inflight.events.push(Event::write(key.clone(), self.pos, value));
        self.own.insert(key.clone(), value);
        self.pos += 1;
    }
}

impl Engine {
    pub fn new(sessions: u32) -> Self {
        Engine {
            store: KVStore::new(),
            committed: Vec::new(),
            sessions: (1..=sessions).map(|s| (SessionId(s), Vec::new())).collect(),
            schedule: Vec::new(),
            next_pos: BTreeMap::new(),
        }
    }

    pub fn execute(&mut self, sid: SessionId, tid: TxnId, body: &TxnBody, resolve: &mut Resolver<'_>) -> TxnStatus {
        let start = *self.next_pos.get(&sid).unwrap_or(&1);
        let mut ctx = Ctx {
            engine: self,
            inflight: Transaction::committed(tid, sid, Vec::new()),
            own: BTreeMap::new(),
            pos: start,
            resolve,
        };
        let end = body.run(&mut ctx);
        let Ctx { inflight, own, pos, .. } = ctx;
        self.next_pos.insert(sid, pos);
        self.schedule.push(tid);
        let status = match end {
            TxnEnd::Commit => {
                self.store.commit(tid, &own);
                self.committed.push(inflight.clone());
                TxnStatus::Committed
            }
            TxnEnd::Abort => TxnStatus::Aborted,
        };
        self.sessions.entry(sid).or_default().push(TxnRecord {
            tid,
            ops: inflight.events,
            status,
        });
        status
    }

    /// Gives the last (aborted) attempt of `sid` a new id.
    pub fn relabel_last_abort(&mut self, sid: SessionId, tid: TxnId) {
        let rec = self.sessions.get_mut(&sid).and_then(|v| v.last_mut()).unwrap();
        assert_eq!(rec.status, TxnStatus::Aborted);
        let old = rec.tid;
        rec.tid = tid;
        for e in rec.ops.iter_mut() {
            if e.writer == Some(old) {
                e.writer = Some(tid);
            }
        }
        *self.schedule.last_mut().unwrap() = tid;
    }

    pub fn trace(&self) -> Trace {
        Trace {
            sessions: self
                .sessions
                .iter()
                .map(|(sid, txns)| SessionTrace {
                    sid: *sid,
                    txns: txns.clone(),
                })
                .collect(),
            schedule: Some(self.schedule.clone()),
            boundaries: BTreeMap::new(),
        }
    }

    pub fn history(&self) -> Result<ExecutionHistory, HistoryError> {
        crate::history::build_history(&self.trace())
    }
}

/// Runs every session's transactions to completion, picking the next
/// session uniformly at random. Transaction ids follow execution order.
pub fn run_workload(
    workload: &Workload,
    sessions: u32,
    txns: u32,
    seed: u64,
    policy: ReadPolicy,
) -> (Trace, ExecutionHistory) {
    let programs = workload.programs(sessions, txns, seed);
    let mut engine = Engine::new(programs.len() as u32);
    let mut sched = ChaCha8Rng::seed_from_u64(seed);
    sched.set_stream(1);
    let mut choose = match policy {
        ReadPolicy::RandomWeak { seed, .. } => {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(2);
            Some(r)
        }
        ReadPolicy::LatestWriter => None,
    };
    let mut resolve = |e: &Engine, inflight: &Transaction, key: &KeyId| -> TxnId {
        match (policy, choose.as_mut()) {
            (ReadPolicy::RandomWeak { level, .. }, Some(rng)) => {
                let legal = legal_writers(&e.committed, inflight, key, level);
                legal[rng.gen_range(0..legal.len())]
            }
            _ => e.store.latest(key).0,
        }
    };
    let mut next: Vec<usize> = vec![0; programs.len()];
    let mut tid = 1;
    loop {
        let live: Vec<usize> = (0..programs.len()).filter(|&s| next[s] < programs[s].len()).collect();
        if live.is_empty() {
            break;
        }
        let s = live[sched.gen_range(0..live.len())];
        engine.execute(SessionId(s as u32 + 1), TxnId(tid), &programs[s][next[s]], &mut resolve);
        next[s] += 1;
        tid += 1;
    }
    let history = engine.history().expect("the store only records well-formed histories");
    (engine.trace(), history)
}
