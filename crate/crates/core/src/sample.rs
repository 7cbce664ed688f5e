//! Seeded random histories for property checks and corpus runs.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::history::{Event, ExecutionHistory, KeyId, SessionId, Transaction, TxnId};

const KEYS: [&str; 3] = ["x", "y", "z"];

/// A well-formed history with between 1 and `max_txns` committed
/// transactions over up to three sessions and three keys. Reads may observe
/// any writer of their key, including later ones, so the result need not
/// satisfy any isolation level.
pub fn random_history(seed: u64, max_txns: usize) -> ExecutionHistory {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(1..=max_txns.max(1));
    let sessions = rng.gen_range(1..=3u32.min(n as u32));
    let keys = &KEYS[..rng.gen_range(1..=KEYS.len())];

    // (session, ops) with ops as (is_write, key)
    let mut shapes: Vec<(SessionId, Vec<(bool, &str)>)> = Vec::new();
    for i in 0..n {
        let sid = if (i as u32) < sessions {
            SessionId(i as u32 + 1)
        } else {
            SessionId(rng.gen_range(1..=sessions))
        };
        let ops = (0..rng.gen_range(1..=3))
            .map(|_| (rng.gen_bool(0.5), *keys.choose(&mut rng).unwrap()))
            .collect();
        shapes.push((sid, ops));
    }

    let writes_key = |t: usize, k: &str| shapes[t].1.iter().any(|(w, key)| *w && *key == k);
    let mut next_pos = [1u32; 4];
    let mut value = 0i64;
    let mut txns = Vec::new();
    for (i, (sid, ops)) in shapes.iter().enumerate() {
        let tid = TxnId(i as u32 + 1);
        let mut events = Vec::new();
        let mut own: Vec<&str> = Vec::new();
        for &(is_write, key) in ops {
            let pos = next_pos[sid.0 as usize];
            next_pos[sid.0 as usize] += 1;
            if is_write {
                value += 1;
                events.push(Event::write(key, pos, value));
                own.push(key);
            } else if own.contains(&key) {
                events.push(Event::read(key, pos, tid, 0));
            } else {
                let mut writers = vec![TxnId::INIT];
                writers.extend((0..n).filter(|&t| t != i && writes_key(t, key)).map(|t| TxnId(t as u32 + 1)));
                events.push(Event::read(key, pos, *writers.choose(&mut rng).unwrap(), 0));
            }
        }
        txns.push(Transaction::committed(tid, *sid, events));
    }
    fill_read_values(&mut txns);
    ExecutionHistory::from_transactions(txns, [])
        .expect("generated histories are well-formed")
}

/// Sets every read's value to the last value its writer writes to the key.
fn fill_read_values(txns: &mut [Transaction]) {
    let last_write = |txns: &[Transaction], w: TxnId, k: &KeyId| -> i64 {
        if w.is_init() {
            return 0;
        }
        txns.iter()
            .find(|t| t.tid == w)
            .and_then(|t| t.events.iter().rev().find(|e| e.is_write() && &e.key == k))
            .map_or(0, |e| e.value)
    };
    for i in 0..txns.len() {
        for j in 0..txns[i].events.len() {
            let e = &txns[i].events[j];
            if !e.is_read() {
                continue;
            }
            let (w, k) = (e.writer.unwrap(), e.key.clone());
            let v = if w == txns[i].tid {
                txns[i].events[..j]
                    .iter()
                    .rev()
                    .find(|x| x.is_write() && x.key == k)
                    .map_or(0, |x| x.value)
            } else {
                last_write(txns, w, &k)
            };
            txns[i].events[j].value = v;
        }
    }
}
