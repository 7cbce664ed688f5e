#![allow(dead_code)]

use txpredict_core::checker::CommitOrder;
use txpredict_core::{Event, ExecutionHistory, KeyId, SessionId, Transaction, TxnId};

pub fn txn(tid: u32, sid: u32, events: Vec<Event>) -> Transaction {
    Transaction::committed(TxnId(tid), SessionId(sid), events)
}

pub fn history(txns: Vec<Transaction>) -> ExecutionHistory {
    ExecutionHistory::from_transactions(txns, []).unwrap()
}

/// Two deposits in separate sessions, the second observing the first.
pub fn fig2a() -> ExecutionHistory {
    history(vec![
        txn(1, 1, vec![Event::read("acc", 1, TxnId(0), 0), Event::write("acc", 2, 50)]),
        txn(2, 2, vec![Event::read("acc", 1, TxnId(1), 50), Event::write("acc", 2, 110)]),
    ])
}

/// Both deposits read the initial balance.
pub fn fig3a() -> ExecutionHistory {
    history(vec![
        txn(1, 1, vec![Event::read("acc", 1, TxnId(0), 0), Event::write("acc", 2, 50)]),
        txn(2, 2, vec![Event::read("acc", 1, TxnId(0), 0), Event::write("acc", 2, 60)]),
    ])
}

/// t1 writes x and y; t2 reads y from t1; t3, later in t2's session, reads
/// x from t0.
pub fn fig7d() -> ExecutionHistory {
    history(vec![
        txn(1, 1, vec![Event::write("x", 1, 1), Event::write("y", 2, 1)]),
        txn(2, 2, vec![Event::read("y", 1, TxnId(1), 1)]),
        txn(3, 2, vec![Event::read("x", 2, TxnId(0), 0)]),
    ])
}

/// t3 reads k from t2; t1 also writes k.
pub fn fig8() -> ExecutionHistory {
    history(vec![
        txn(1, 1, vec![Event::write("k", 1, 1)]),
        txn(2, 2, vec![Event::write("k", 1, 2)]),
        txn(3, 3, vec![Event::read("k", 1, TxnId(2), 2)]),
    ])
}

pub fn tids(pairs: &[(u32, u32)]) -> std::collections::BTreeSet<(TxnId, TxnId)> {
    pairs.iter().map(|&(a, b)| (TxnId(a), TxnId(b))).collect()
}

/// Two deposits in session 1 around a withdrawal in session 2, each reading
/// the previous transaction.
pub fn fig9b() -> ExecutionHistory {
    history(vec![
        txn(1, 1, vec![Event::read("acc", 1, TxnId(0), 0), Event::write("acc", 2, 50)]),
        txn(2, 2, vec![Event::read("acc", 1, TxnId(1), 50), Event::write("acc", 2, 20)]),
        txn(3, 1, vec![Event::read("acc", 3, TxnId(2), 20), Event::write("acc", 4, 70)]),
    ])
}

/// Every ordering of the non-initial transactions, t0 first.
pub fn orders(h: &ExecutionHistory) -> Vec<Vec<TxnId>> {
    fn perms(rest: Vec<TxnId>) -> Vec<Vec<TxnId>> {
        if rest.is_empty() {
            return vec![Vec::new()];
        }
        let mut out = Vec::new();
        for i in 0..rest.len() {
            let mut r = rest.clone();
            let x = r.remove(i);
            for mut p in perms(r) {
                p.insert(0, x);
                out.push(p);
            }
        }
        out
    }
    perms(h.tids().filter(|t| !t.is_init()).collect())
        .into_iter()
        .map(|mut p| {
            p.insert(0, TxnId::INIT);
            p
        })
        .collect()
}

fn writes(h: &ExecutionHistory, t: TxnId, k: &KeyId) -> bool {
    h.txn(t).unwrap().writes_key(k)
}

fn hb(h: &ExecutionHistory, a: TxnId, b: TxnId) -> bool {
    h.hb().contains(&(a, b))
}

/// Axiomatic serializability: co extends so and wr, and no writer of k sits
/// between a wr_k pair.
pub fn naive_serializable(h: &ExecutionHistory) -> bool {
    orders(h).into_iter().any(|o| {
        let co = CommitOrder(o);
        let base = h.tids().all(|a| h.tids().all(|b| !(h.so(a, b) || h.wr_pairs().contains(&(a, b))) || co.before(a, b)));
        base && h.wr().iter().all(|(k, pairs)| {
            pairs.iter().all(|&(t2, t3)| {
                h.tids()
                    .filter(|&t1| t1 != t2 && writes(h, t1, k))
                    .all(|t1| !co.before(t1, t3) || co.before(t1, t2))
            })
        })
    })
}

/// Causal: co extends hb, and a writer of k that happens before a reader of
/// k precedes the reader's writer.
pub fn naive_causal(h: &ExecutionHistory) -> bool {
    orders(h).into_iter().any(|o| {
        let co = CommitOrder(o);
        h.hb().iter().all(|&(a, b)| co.before(a, b))
            && h.wr().iter().all(|(k, pairs)| {
                pairs.iter().all(|&(t2, t3)| {
                    h.tids()
                        .filter(|&t1| t1 != t2 && t1 != t3 && writes(h, t1, k))
                        .all(|t1| !hb(h, t1, t3) || co.before(t1, t2))
                })
            })
    })
}

/// Read committed: co extends hb, and within a transaction, if an earlier
/// read observes t1 and a later read of k observes t2, a t1 that writes k
/// precedes t2.
pub fn naive_rc(h: &ExecutionHistory) -> bool {
    orders(h).into_iter().any(|o| {
        let co = CommitOrder(o);
        h.hb().iter().all(|&(a, b)| co.before(a, b))
            && h.txns().iter().all(|t| {
                let reads: Vec<&Event> = t.reads().collect();
                reads.iter().enumerate().all(|(j, alpha)| {
                    reads[..j].iter().all(|beta| {
                        let (t1, t2) = (beta.writer.unwrap(), alpha.writer.unwrap());
                        t1 == t2 || !writes(h, t1, &alpha.key) || co.before(t1, t2)
                    })
                })
            })
    })
}
