//! Execution histories: committed transactions, session order, write-read
//! relation, happens-before and per-transaction position indexes.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use crate::trace::{Trace, TxnStatus};

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct KeyId(String);

impl KeyId {
    pub fn new(name: impl Into<String>) -> Self {
        let name = name.into();
        assert!(!name.is_empty(), "key names must be non-empty");
        KeyId(name)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for KeyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for KeyId {
    fn from(s: &str) -> Self {
        KeyId::new(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TxnId(pub u32);

impl TxnId {
    pub const INIT: TxnId = TxnId(0);

    pub fn is_init(self) -> bool {
        self.0 == 0
    }
}

impl fmt::Display for TxnId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t{}", self.0)
    }
}

/// Session identifier. Real sessions are positive; `SessionId(0)` is the
/// pseudo-session holding only the initial-state transaction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SessionId(pub u32);

impl SessionId {
    pub const INIT: SessionId = SessionId(0);
}

impl fmt::Display for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EventKind {
    Read,
    Write,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Event {
    pub kind: EventKind,
    pub key: KeyId,
    pub pos: u32,
    /// Transaction whose write this read observed; `None` for writes.
    pub writer: Option<TxnId>,
    pub value: i64,
}

impl Event {
    pub fn read(key: impl Into<KeyId>, pos: u32, writer: TxnId, value: i64) -> Self {
        Event {
            kind: EventKind::Read,
            key: key.into(),
            pos,
            writer: Some(writer),
            value,
        }
    }

    pub fn write(key: impl Into<KeyId>, pos: u32, value: i64) -> Self {
        Event {
            kind: EventKind::Write,
            key: key.into(),
            pos,
            writer: None,
            value,
        }
    }

    pub fn is_read(&self) -> bool {
        self.kind == EventKind::Read
    }

    pub fn is_write(&self) -> bool {
        self.kind == EventKind::Write
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Transaction {
    pub tid: TxnId,
    pub sid: SessionId,
    pub events: Vec<Event>,
    pub status: TxnStatus,
}

impl Transaction {
    pub fn committed(tid: TxnId, sid: SessionId, events: Vec<Event>) -> Self {
        Transaction {
            tid,
            sid,
            events,
            status: TxnStatus::Committed,
        }
    }

    pub fn reads(&self) -> impl Iterator<Item = &Event> {
        self.events.iter().filter(|e| e.is_read())
    }

    pub fn writes(&self) -> impl Iterator<Item = &Event> {
        self.events.iter().filter(|e| e.is_write())
    }

    pub fn writes_key(&self, key: &KeyId) -> bool {
        self.writes().any(|e| &e.key == key)
    }

    pub fn reads_key(&self, key: &KeyId) -> bool {
        self.reads().any(|e| &e.key == key)
    }

    /// Position of the last write to `key`.
    pub fn wrpos(&self, key: &KeyId) -> Option<u32> {
        self.writes().filter(|e| &e.key == key).map(|e| e.pos).last()
    }

    /// Value of the last write to `key`.
    pub fn written_value(&self, key: &KeyId) -> Option<i64> {
        self.writes().filter(|e| &e.key == key).map(|e| e.value).last()
    }

    pub fn first_pos(&self) -> Option<u32> {
        self.events.first().map(|e| e.pos)
    }

    pub fn last_pos(&self) -> Option<u32> {
        self.events.last().map(|e| e.pos)
    }

    /// Keeps only the last write per key and drops reads satisfied by the
    /// transaction's own earlier write.
    pub fn normalize(&mut self) {
        let mut written: BTreeSet<KeyId> = BTreeSet::new();
        let mut keep = vec![true; self.events.len()];
        for (i, e) in self.events.iter().enumerate() {
            match e.kind {
                EventKind::Write => {
                    written.insert(e.key.clone());
                }
                EventKind::Read => {
                    if written.contains(&e.key) || e.writer == Some(self.tid) {
                        keep[i] = false;
                    }
                }
            }
        }
        let mut last_write: HashMap<&KeyId, usize> = HashMap::new();
        for (i, e) in self.events.iter().enumerate() {
            if e.is_write() {
                last_write.insert(&e.key, i);
            }
        }
        for (i, e) in self.events.iter().enumerate() {
            if e.is_write() && last_write[&e.key] != i {
                keep[i] = false;
            }
        }
        let mut i = 0;
        self.events.retain(|_| {
            let k = keep[i];
            i += 1;
            k
        });
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum HistoryError {
    #[error("{reader} reads {key} from {writer}, which is not a committed transaction")]
    DanglingWriter { reader: TxnId, key: KeyId, writer: TxnId },
    #[error("{reader} reads {key} from {writer}, which never writes {key}")]
    WriterDidNotWrite { reader: TxnId, key: KeyId, writer: TxnId },
    #[error("position {pos} in session {sid} does not exceed previous position {prev}")]
    PositionRegression { sid: SessionId, pos: u32, prev: u32 },
    #[error("transaction id {0} appears more than once")]
    DuplicateTxn(TxnId),
    #[error("transaction id 0 is reserved for the initial state")]
    ReservedTxnId,
    #[error("session id 0 is reserved for the initial state")]
    ReservedSessionId,
}

/// A relation between transaction edges, labelled with the reason it holds.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EdgeLabel {
    So,
    Wr(KeyId),
    Ww(KeyId),
    Rw(KeyId),
    WwCausal(KeyId),
    WwRc(KeyId),
}

impl fmt::Display for EdgeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EdgeLabel::So => write!(f, "so"),
            EdgeLabel::Wr(k) => write!(f, "wr_{k}"),
            EdgeLabel::Ww(k) => write!(f, "ww_{k}"),
            EdgeLabel::Rw(k) => write!(f, "rw_{k}"),
            EdgeLabel::WwCausal(k) => write!(f, "ww_causal_{k}"),
            EdgeLabel::WwRc(k) => write!(f, "ww_rc_{k}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Edge {
    pub from: TxnId,
    pub to: TxnId,
    pub label: EdgeLabel,
}

impl fmt::Display for Edge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} -{}-> {}", self.from, self.label, self.to)
    }
}

/// One read event of a committed transaction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReadSite {
    pub sid: SessionId,
    pub pos: u32,
    pub reader: TxnId,
    pub key: KeyId,
    pub writer: TxnId,
}

/// `rdpos_k`, `rdpos_*` and `wrpos_k` for every committed transaction.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PositionIndex {
    rdpos: BTreeMap<(TxnId, KeyId), Vec<u32>>,
    rdpos_all: BTreeMap<TxnId, Vec<u32>>,
    wrpos: BTreeMap<(TxnId, KeyId), u32>,
}

impl PositionIndex {
    pub fn rdpos(&self, t: TxnId, k: &KeyId) -> &[u32] {
        self.rdpos.get(&(t, k.clone())).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn rdpos_all(&self, t: TxnId) -> &[u32] {
        self.rdpos_all.get(&t).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn wrpos(&self, t: TxnId, k: &KeyId) -> Option<u32> {
        self.wrpos.get(&(t, k.clone())).copied()
    }
}

/// Committed transactions with session order and write-read relation.
/// Transactions are stored sorted by id, so the initial-state transaction
/// has index 0.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExecutionHistory {
    txns: Vec<Transaction>,
    index: HashMap<TxnId, usize>,
    sessions: BTreeMap<SessionId, Vec<TxnId>>,
    keys: BTreeSet<KeyId>,
    wr: BTreeMap<KeyId, BTreeSet<(TxnId, TxnId)>>,
}

impl ExecutionHistory {
    /// Builds a history from committed, non-initial transactions. Each
    /// session's transactions must be listed in session order. The
    /// initial-state transaction writes every key in `extra_keys` and every
    /// key mentioned by `txns`.
    pub fn from_transactions(
        txns: Vec<Transaction>,
        extra_keys: impl IntoIterator<Item = KeyId>,
    ) -> Result<Self, HistoryError> {
        let mut keys: BTreeSet<KeyId> = extra_keys.into_iter().collect();
        let mut seen = BTreeSet::new();
        let mut last_pos: BTreeMap<SessionId, u32> = BTreeMap::new();
        for t in &txns {
            if t.tid.is_init() {
                return Err(HistoryError::ReservedTxnId);
            }
            if t.sid == SessionId::INIT {
                return Err(HistoryError::ReservedSessionId);
            }
            if !seen.insert(t.tid) {
                return Err(HistoryError::DuplicateTxn(t.tid));
            }
            for e in &t.events {
                keys.insert(e.key.clone());
                if let Some(&prev) = last_pos.get(&t.sid) {
                    if e.pos <= prev {
                        return Err(HistoryError::PositionRegression {
                            sid: t.sid,
                            pos: e.pos,
                            prev,
                        });
                    }
                }
                last_pos.insert(t.sid, e.pos);
            }
        }

        let t0 = Transaction::committed(
            TxnId::INIT,
            SessionId::INIT,
            keys.iter().map(|k| Event::write(k.clone(), 0, 0)).collect(),
        );
        let mut sessions: BTreeMap<SessionId, Vec<TxnId>> = BTreeMap::new();
        let mut all = vec![t0];
        for mut t in txns {
            sessions.entry(t.sid).or_default().push(t.tid);
            t.status = TxnStatus::Committed;
            all.push(t);
        }
        all.sort_by_key(|t| t.tid);
        let index: HashMap<TxnId, usize> = all.iter().enumerate().map(|(i, t)| (t.tid, i)).collect();

        // Resolve reads before normalization so self-reads can be validated.
        for t in &all {
            for (i, e) in t.events.iter().enumerate() {
                if !e.is_read() {
                    continue;
                }
                let w = e.writer.expect("read events carry a writer");
                if w == t.tid {
                    let earlier = t.events[..i].iter().any(|x| x.is_write() && x.key == e.key);
                    if !earlier {
                        return Err(HistoryError::WriterDidNotWrite {
                            reader: t.tid,
                            key: e.key.clone(),
                            writer: w,
                        });
                    }
                    continue;
                }
                let Some(&wi) = index.get(&w) else {
                    return Err(HistoryError::DanglingWriter {
                        reader: t.tid,
                        key: e.key.clone(),
                        writer: w,
                    });
                };
                if !all[wi].writes_key(&e.key) {
                    return Err(HistoryError::WriterDidNotWrite {
                        reader: t.tid,
                        key: e.key.clone(),
                        writer: w,
                    });
                }
            }
        }
        for t in all.iter_mut() {
            t.normalize();
        }

        let mut wr: BTreeMap<KeyId, BTreeSet<(TxnId, TxnId)>> = BTreeMap::new();
        for t in &all {
            for e in t.reads() {
                wr.entry(e.key.clone())
                    .or_default()
                    .insert((e.writer.unwrap(), t.tid));
            }
        }
        Ok(ExecutionHistory {
            txns: all,
            index,
            sessions,
            keys,
            wr,
        })
    }

    /// History containing only the initial-state transaction.
    pub fn empty() -> Self {
        ExecutionHistory::from_transactions(Vec::new(), []).unwrap()
    }

    pub fn txns(&self) -> &[Transaction] {
        &self.txns
    }

    pub fn len(&self) -> usize {
        self.txns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.txns.len() <= 1
    }

    pub fn txn(&self, tid: TxnId) -> Option<&Transaction> {
        self.index.get(&tid).map(|&i| &self.txns[i])
    }

    pub fn index_of(&self, tid: TxnId) -> Option<usize> {
        self.index.get(&tid).copied()
    }

    pub fn tids(&self) -> impl Iterator<Item = TxnId> + '_ {
        self.txns.iter().map(|t| t.tid)
    }

    pub fn sessions(&self) -> &BTreeMap<SessionId, Vec<TxnId>> {
        &self.sessions
    }

    pub fn keys(&self) -> &BTreeSet<KeyId> {
        &self.keys
    }

    pub fn session_of(&self, tid: TxnId) -> Option<SessionId> {
        self.txn(tid).map(|t| t.sid)
    }

    /// Session order: t0 precedes everything; otherwise same session, earlier.
    pub fn so(&self, a: TxnId, b: TxnId) -> bool {
        if a == b || b.is_init() {
            return false;
        }
        if a.is_init() {
            return self.index.contains_key(&b);
        }
        let (Some(ta), Some(tb)) = (self.txn(a), self.txn(b)) else {
            return false;
        };
        if ta.sid != tb.sid {
            return false;
        }
        let order = &self.sessions[&ta.sid];
        let pa = order.iter().position(|&t| t == a);
        let pb = order.iter().position(|&t| t == b);
        pa < pb
    }

    pub fn wr(&self) -> &BTreeMap<KeyId, BTreeSet<(TxnId, TxnId)>> {
        &self.wr
    }

    pub fn wr_k(&self, key: &KeyId, writer: TxnId, reader: TxnId) -> bool {
        self.wr.get(key).is_some_and(|s| s.contains(&(writer, reader)))
    }

    /// `wr` with keys forgotten.
    pub fn wr_pairs(&self) -> BTreeSet<(TxnId, TxnId)> {
        self.wr.values().flatten().copied().collect()
    }

    pub fn writers_of(&self, key: &KeyId) -> Vec<TxnId> {
        self.txns
            .iter()
            .filter(|t| t.writes_key(key))
            .map(|t| t.tid)
            .collect()
    }

    pub fn read_sites(&self) -> Vec<ReadSite> {
        let mut out = Vec::new();
        for (sid, tids) in &self.sessions {
            for &tid in tids {
                for e in self.txn(tid).unwrap().reads() {
                    out.push(ReadSite {
                        sid: *sid,
                        pos: e.pos,
                        reader: tid,
                        key: e.key.clone(),
                        writer: e.writer.unwrap(),
                    });
                }
            }
        }
        out
    }

    /// `so ∪ wr` as an adjacency matrix over transaction indexes.
    pub fn so_wr_matrix(&self) -> Vec<Vec<bool>> {
        let n = self.txns.len();
        let mut m = vec![vec![false; n]; n];
        for j in 1..n {
            m[0][j] = true;
        }
        for tids in self.sessions.values() {
            for (i, a) in tids.iter().enumerate() {
                for b in &tids[i + 1..] {
                    m[self.index[a]][self.index[b]] = true;
                }
            }
        }
        for (w, r) in self.wr.values().flatten() {
            m[self.index[w]][self.index[r]] = true;
        }
        m
    }

    /// Happens-before `(so ∪ wr)+` as a matrix over transaction indexes.
    pub fn hb_matrix(&self) -> Vec<Vec<bool>> {
        transitive_closure(self.so_wr_matrix())
    }

    /// Happens-before as a set of pairs; reflexive pairs are excluded.
    pub fn hb(&self) -> BTreeSet<(TxnId, TxnId)> {
        let m = self.hb_matrix();
        let mut out = BTreeSet::new();
        for (i, row) in m.iter().enumerate() {
            for (j, &b) in row.iter().enumerate() {
                if b && i != j {
                    out.insert((self.txns[i].tid, self.txns[j].tid));
                }
            }
        }
        out
    }

    pub fn position_indexes(&self) -> PositionIndex {
        let mut idx = PositionIndex::default();
        for t in &self.txns {
            for e in &t.events {
                match e.kind {
                    EventKind::Read => {
                        idx.rdpos.entry((t.tid, e.key.clone())).or_default().push(e.pos);
                        idx.rdpos_all.entry(t.tid).or_default().push(e.pos);
                    }
                    EventKind::Write => {
                        idx.wrpos.insert((t.tid, e.key.clone()), e.pos);
                    }
                }
            }
        }
        idx
    }
}

/// Warshall closure of a square boolean matrix.
pub fn transitive_closure(mut m: Vec<Vec<bool>>) -> Vec<Vec<bool>> {
    let n = m.len();
    for k in 0..n {
        for i in 0..n {
            if m[i][k] {
                for j in 0..n {
                    if m[k][j] {
                        m[i][j] = true;
                    }
                }
            }
        }
    }
    m
}

/// Builds the committed history of a trace. Aborted transactions are dropped
/// after their positions have been validated.
pub fn build_history(trace: &Trace) -> Result<ExecutionHistory, HistoryError> {
    let mut keys = BTreeSet::new();
    let mut committed = Vec::new();
    let mut seen = BTreeSet::new();
    for session in &trace.sessions {
        if session.sid == SessionId::INIT {
            return Err(HistoryError::ReservedSessionId);
        }
        let mut prev: Option<u32> = None;
        for rec in &session.txns {
            if rec.tid.is_init() {
                return Err(HistoryError::ReservedTxnId);
            }
            if !seen.insert(rec.tid) {
                return Err(HistoryError::DuplicateTxn(rec.tid));
            }
            for e in &rec.ops {
                keys.insert(e.key.clone());
                if let Some(p) = prev {
                    if e.pos <= p {
                        return Err(HistoryError::PositionRegression {
                            sid: session.sid,
                            pos: e.pos,
                            prev: p,
                        });
                    }
                }
                prev = Some(e.pos);
            }
            if rec.status == TxnStatus::Committed {
                committed.push(Transaction::committed(rec.tid, session.sid, rec.ops.clone()));
            }
        }
    }
    ExecutionHistory::from_transactions(committed, keys)
}
