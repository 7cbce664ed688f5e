//! Serializability, causal and read-committed checks for a fixed history.

use std::collections::{BTreeMap, VecDeque};

use txpredict_solver::{Backend, Budget, ConstraintProgram, Formula, NativeBackend, SatResult, Sort, Symbol, Term};

use crate::history::{Edge, EdgeLabel, ExecutionHistory, TxnId};

/// Total order over committed transactions, initial state first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CommitOrder(pub Vec<TxnId>);

impl CommitOrder {
    pub fn position(&self, t: TxnId) -> Option<usize> {
        self.0.iter().position(|&x| x == t)
    }

    pub fn before(&self, a: TxnId, b: TxnId) -> bool {
        match (self.position(a), self.position(b)) {
            (Some(x), Some(y)) => x < y,
            _ => false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Verdict {
    Serializable(CommitOrder),
    Unserializable,
    Conforms,
    Violates(Vec<Edge>),
}

impl Verdict {
    pub fn is_serializable(&self) -> bool {
        matches!(self, Verdict::Serializable(_))
    }

    pub fn conforms(&self) -> bool {
        matches!(self, Verdict::Conforms)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum CheckError {
    #[error("solver returned unknown: {0}")]
    SolverUnknown(String),
    #[error("solver failure: {0}")]
    Solver(#[from] txpredict_solver::SolverError),
    #[error("history has {0} transactions besides the initial state; the brute-force oracle accepts at most {1}")]
    TooLarge(usize, usize),
}

/// Weak isolation levels checked by graph acyclicity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum IsolationLevel {
    Causal,
    ReadCommitted,
}

impl IsolationLevel {
    pub fn name(self) -> &'static str {
        match self {
            IsolationLevel::Causal => "causal",
            IsolationLevel::ReadCommitted => "rc",
        }
    }
}

impl std::str::FromStr for IsolationLevel {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "causal" => Ok(IsolationLevel::Causal),
            "rc" | "read-committed" => Ok(IsolationLevel::ReadCommitted),
            other => Err(format!("unknown isolation level `{other}` (expected causal or rc)")),
        }
    }
}

pub fn check_serializable(history: &ExecutionHistory) -> Result<Verdict, CheckError> {
    check_serializable_with(history, &NativeBackend::default(), &Budget::unlimited())
}

/// Solver-based serializability: one integer commit position per
/// transaction, ordered by `so ∪ wr` and closed under the arbitration rule.
pub fn check_serializable_with(
    history: &ExecutionHistory,
    backend: &dyn Backend,
    budget: &Budget,
) -> Result<Verdict, CheckError> {
    let (program, co) = serializability_program(history);
    match backend.check_sat(&program, budget)? {
        SatResult::Sat(model) => {
            let mut order: Vec<(i64, TxnId)> = history
                .tids()
                .zip(&co)
                .map(|(t, s)| (model.int(*s), t))
                .collect();
            order.sort();
            Ok(Verdict::Serializable(CommitOrder(order.into_iter().map(|(_, t)| t).collect())))
        }
        SatResult::Unsat => Ok(Verdict::Unserializable),
        SatResult::Unknown(r) => Err(CheckError::SolverUnknown(r)),
    }
}

/// The grounded serializability program and its `co[t]` symbols (in history
/// index order).
pub fn serializability_program(history: &ExecutionHistory) -> (ConstraintProgram, Vec<Symbol>) {
    let mut p = ConstraintProgram::new();
    let co: Vec<Symbol> = history
        .txns()
        .iter()
        .map(|t| {
            let s = p.declare(format!("co[{}]", t.tid.0), Sort::int()).unwrap();
            p.annotate(s, format!("commit position of {}", t.tid));
            s
        })
        .collect();
    let idx = |t: TxnId| history.index_of(t).unwrap();
    p.assert(Formula::distinct(co.iter().map(|s| Term::Sym(*s)).collect()))
        .unwrap();
    let m = history.so_wr_matrix();
    for (i, row) in m.iter().enumerate() {
        for (j, &e) in row.iter().enumerate() {
            if e {
                p.assert(Formula::lt(co[i], co[j])).unwrap();
            }
        }
    }
    for (k, pairs) in history.wr() {
        let writers = history.writers_of(k);
        for &(t2, t3) in pairs {
            for &t1 in &writers {
                if t1 == t2 || t1 == t3 {
                    continue;
                }
                let (c1, c2, c3) = (co[idx(t1)], co[idx(t2)], co[idx(t3)]);
                p.assert(Formula::implies(Formula::lt(c1, c3), Formula::lt(c1, c2)))
                    .unwrap();
            }
        }
    }
    (p, co)
}

/// Default transaction limit of [`oracle_serializable`], initial state excluded.
pub const ORACLE_LIMIT: usize = 9;

pub fn oracle_serializable(history: &ExecutionHistory) -> Result<Verdict, CheckError> {
    oracle_serializable_bounded(history, ORACLE_LIMIT)
}

/// Brute-force search over serial orders with the initial state first. A
/// transaction may be placed once its session predecessors are placed and,
/// for each of its reads, the last placed writer of the key is the read's
/// writer.
pub fn oracle_serializable_bounded(history: &ExecutionHistory, limit: usize) -> Result<Verdict, CheckError> {
    let n = history.len();
    if n - 1 > limit {
        return Err(CheckError::TooLarge(n - 1, limit));
    }
    let txns = history.txns();
    let keys: Vec<_> = history.keys().iter().cloned().collect();
    let key_idx: BTreeMap<_, _> = keys.iter().enumerate().map(|(i, k)| (k.clone(), i)).collect();
    // predecessors in session order, reads as (key index, writer index), written keys
    let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
    for tids in history.sessions().values() {
        for (i, t) in tids.iter().enumerate() {
            preds[history.index_of(*t).unwrap()] =
                tids[..i].iter().map(|x| history.index_of(*x).unwrap()).collect();
        }
    }
    let reads: Vec<Vec<(usize, usize)>> = txns
        .iter()
        .map(|t| {
            t.reads()
                .map(|e| (key_idx[&e.key], history.index_of(e.writer.unwrap()).unwrap()))
                .collect()
        })
        .collect();
    let writes: Vec<Vec<usize>> = txns
        .iter()
        .map(|t| t.writes().map(|e| key_idx[&e.key]).collect())
        .collect();

    struct Search<'a> {
        preds: &'a [Vec<usize>],
        reads: &'a [Vec<(usize, usize)>],
        writes: &'a [Vec<usize>],
        placed: Vec<bool>,
        last_writer: Vec<usize>,
        order: Vec<usize>,
    }

    impl Search<'_> {
        fn go(&mut self) -> bool {
            let n = self.placed.len();
            if self.order.len() == n {
                return true;
            }
            for t in 0..n {
                if self.placed[t]
                    || !self.preds[t].iter().all(|&p| self.placed[p])
                    || !self.reads[t].iter().all(|&(k, w)| self.last_writer[k] == w)
                {
                    continue;
                }
                let saved: Vec<(usize, usize)> = self.writes[t].iter().map(|&k| (k, self.last_writer[k])).collect();
                for &k in &self.writes[t] {
                    self.last_writer[k] = t;
                }
                self.placed[t] = true;
                self.order.push(t);
                if self.go() {
                    return true;
                }
                self.order.pop();
                self.placed[t] = false;
                for (k, w) in saved.into_iter().rev() {
                    self.last_writer[k] = w;
                }
            }
            false
        }
    }

    let mut s = Search {
        preds: &preds,
        reads: &reads,
        writes: &writes,
        placed: vec![false; n],
        last_writer: vec![0; keys.len()],
        order: vec![0],
    };
    s.placed[0] = true;
    if s.go() {
        Ok(Verdict::Serializable(CommitOrder(
            s.order.iter().map(|&i| txns[i].tid).collect(),
        )))
    } else {
        Ok(Verdict::Unserializable)
    }
}

/// `ww_causal`: t1 and t2 write k, some t3 reads k from t2, and t1 happens
/// before t3.
pub fn ww_causal(history: &ExecutionHistory) -> Vec<Edge> {
    let hb = history.hb_matrix();
    let idx = |t: TxnId| history.index_of(t).unwrap();
    let mut out = Vec::new();
    for (k, pairs) in history.wr() {
        let writers = history.writers_of(k);
        for &(t2, t3) in pairs {
            for &t1 in &writers {
                if t1 != t2 && t1 != t3 && hb[idx(t1)][idx(t3)] {
                    out.push(Edge {
                        from: t1,
                        to: t2,
                        label: EdgeLabel::WwCausal(k.clone()),
                    });
                }
            }
        }
    }
    out.sort();
    out.dedup();
    out
}

/// `ww_rc`: t1 and t2 write k; in some t3, an earlier read observes t1 and a
/// later read of k observes t2.
pub fn ww_rc(history: &ExecutionHistory) -> Vec<Edge> {
    let mut out = Vec::new();
    for t3 in history.txns() {
        let reads: Vec<_> = t3.reads().collect();
        for (j, alpha) in reads.iter().enumerate() {
            let t2 = alpha.writer.unwrap();
            for beta in &reads[..j] {
                let t1 = beta.writer.unwrap();
                if t1 == t2 || t1 == t3.tid || t2 == t3.tid {
                    continue;
                }
                if history.txn(t1).unwrap().writes_key(&alpha.key) {
                    out.push(Edge {
                        from: t1,
                        to: t2,
                        label: EdgeLabel::WwRc(alpha.key.clone()),
                    });
                }
            }
        }
    }
    out.sort();
    out.dedup();
    out
}

/// `so` and `wr` edges with labels; `so` covers t0 and all session pairs.
pub fn base_edges(history: &ExecutionHistory) -> Vec<Edge> {
    let mut out = Vec::new();
    for a in history.tids() {
        for b in history.tids() {
            if history.so(a, b) {
                out.push(Edge {
                    from: a,
                    to: b,
                    label: EdgeLabel::So,
                });
            }
        }
    }
    for (k, pairs) in history.wr() {
        for &(a, b) in pairs {
            out.push(Edge {
                from: a,
                to: b,
                label: EdgeLabel::Wr(k.clone()),
            });
        }
    }
    out
}

pub fn check_causal(history: &ExecutionHistory) -> Verdict {
    let mut edges = base_edges(history);
    edges.extend(ww_causal(history));
    acyclic_verdict(history, edges)
}

pub fn check_rc(history: &ExecutionHistory) -> Verdict {
    let mut edges = base_edges(history);
    edges.extend(ww_rc(history));
    acyclic_verdict(history, edges)
}

pub fn check_level(history: &ExecutionHistory, level: IsolationLevel) -> Verdict {
    match level {
        IsolationLevel::Causal => check_causal(history),
        IsolationLevel::ReadCommitted => check_rc(history),
    }
}

fn acyclic_verdict(history: &ExecutionHistory, edges: Vec<Edge>) -> Verdict {
    match shortest_cycle(history, edges) {
        None => Verdict::Conforms,
        Some(c) => Verdict::Violates(c),
    }
}

/// Shortest cycle by edge count. Among shortest cycles, the one through the
/// lexicographically smallest `(from, to)` pair wins; the cycle is listed
/// starting from that edge. Parallel edges keep their smallest label.
pub fn shortest_cycle(history: &ExecutionHistory, mut edges: Vec<Edge>) -> Option<Vec<Edge>> {
    edges.sort();
    let mut label: BTreeMap<(TxnId, TxnId), EdgeLabel> = BTreeMap::new();
    for e in edges {
        label.entry((e.from, e.to)).or_insert(e.label);
    }
    let n = history.len();
    let idx = |t: TxnId| history.index_of(t).unwrap();
    let tids: Vec<TxnId> = history.tids().collect();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(a, b) in label.keys() {
        adj[idx(a)].push(idx(b));
    }
    for a in adj.iter_mut() {
        a.sort_unstable();
    }

    let mut best: Option<Vec<usize>> = None;
    for &(a, b) in label.keys() {
        let (u, v) = (idx(a), idx(b));
        // BFS from v back to u
        let mut prev = vec![usize::MAX; n];
        let mut seen = vec![false; n];
        let mut q = VecDeque::new();
        seen[v] = true;
        q.push_back(v);
        let mut found = u == v;
        while let Some(x) = q.pop_front() {
            if x == u {
                found = true;
                break;
            }
            for &y in &adj[x] {
                if !seen[y] {
                    seen[y] = true;
                    prev[y] = x;
                    q.push_back(y);
                }
            }
        }
        if !found {
            continue;
        }
        let mut path = vec![u];
        let mut cur = u;
        while cur != v {
            cur = prev[cur];
            path.push(cur);
        }
        path.reverse(); // v ... u
        let mut cycle = vec![u];
        cycle.extend(path.iter().take(path.len() - 1).copied());
        // cycle lists nodes u, v, ..., with closing edge back to u
        if best.as_ref().map_or(true, |bc| cycle.len() < bc.len()) {
            best = Some(cycle);
        }
    }
    best.map(|nodes| {
        (0..nodes.len())
            .map(|i| {
                let a = tids[nodes[i]];
                let b = tids[nodes[(i + 1) % nodes.len()]];
                Edge {
                    from: a,
                    to: b,
                    label: label[&(a, b)].clone(),
                }
            })
            .collect()
    })
}

/// Anti-dependencies induced by a commit order: t1 reads k from tw, t2 writes
/// k, and tw precedes t2.
pub fn anti_dependencies(history: &ExecutionHistory, co: &CommitOrder) -> Vec<Edge> {
    let mut out = Vec::new();
    for (k, pairs) in history.wr() {
        let writers = history.writers_of(k);
        for &(tw, t1) in pairs {
            for &t2 in &writers {
                if t2 != tw && t2 != t1 && co.before(tw, t2) {
                    out.push(Edge {
                        from: t1,
                        to: t2,
                        label: EdgeLabel::Rw(k.clone()),
                    });
                }
            }
        }
    }
    out
}

/// True iff `co` is a valid serial witness: it respects `so ∪ wr` and the
/// arbitration rule.
pub fn is_valid_commit_order(history: &ExecutionHistory, co: &CommitOrder) -> bool {
    if co.0.len() != history.len() || co.0.first() != Some(&TxnId::INIT) {
        return false;
    }
    for e in base_edges(history) {
        if !co.before(e.from, e.to) {
            return false;
        }
    }
    for (k, pairs) in history.wr() {
        let writers = history.writers_of(k);
        for &(t2, t3) in pairs {
            for &t1 in &writers {
                if t1 != t2 && t1 != t3 && co.before(t1, t3) && !co.before(t1, t2) {
                    return false;
                }
            }
        }
    }
    true
}
