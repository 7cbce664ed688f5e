//! CDCL SAT engine with a pluggable theory hook.
//!
//! Two watched literals, first-UIP learning, VSIDS, phase saving, Luby restarts
//! and activity-based learnt clause reduction. The theory sees every assigned
//! literal in trail order once boolean propagation reaches a fixpoint and may
//! reject it with an explanation.

use std::ops::Not;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub(crate) struct Lit(u32);

impl Lit {
    pub fn new(var: u32, negated: bool) -> Lit {
        Lit(var << 1 | negated as u32)
    }

    pub fn pos(var: u32) -> Lit {
        Lit::new(var, false)
    }

    pub fn var(self) -> u32 {
        self.0 >> 1
    }

    pub fn is_neg(self) -> bool {
        self.0 & 1 == 1
    }

    fn idx(self) -> usize {
        self.0 as usize
    }
}

impl Not for Lit {
    type Output = Lit;
    fn not(self) -> Lit {
        Lit(self.0 ^ 1)
    }
}

const FALSE: u8 = 0;
const TRUE: u8 = 1;
const UNDEF: u8 = 2;
const NO_REASON: u32 = u32::MAX;

pub(crate) trait Theory {
    /// Called for each trail literal in order. On inconsistency returns a set
    /// of currently true literals (including `lit`) that cannot hold together.
    fn assign(&mut self, lit: Lit, trail_index: usize) -> Result<(), Vec<Lit>>;
    /// Forget everything asserted from trail positions `>= trail_len`.
    fn backtrack(&mut self, trail_len: usize);
    /// Preferred polarity for a decision on `var`, if the theory has one.
    fn suggest_phase(&self, _var: u32) -> Option<bool> {
        None
    }
}

#[cfg(test)]
pub(crate) struct NoTheory;

#[cfg(test)]
impl Theory for NoTheory {
    fn assign(&mut self, _: Lit, _: usize) -> Result<(), Vec<Lit>> {
        Ok(())
    }
    fn backtrack(&mut self, _: usize) {}
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) enum Outcome {
    Sat,
    Unsat,
    Unknown(String),
}

#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct Limits {
    pub deadline: Option<Instant>,
    pub max_conflicts: Option<u64>,
}

struct Clause {
    lits: Vec<Lit>,
    learnt: bool,
    deleted: bool,
    activity: f64,
}

#[derive(Clone, Copy)]
struct Watcher {
    cref: u32,
    blocker: Lit,
}

enum Search {
    Sat,
    Unsat,
    Restart,
    Stop(String),
}

pub(crate) struct Solver<T: Theory> {
    pub theory: T,
    clauses: Vec<Clause>,
    learnts: Vec<u32>,
    watches: Vec<Vec<Watcher>>,
    values: Vec<u8>,
    levels: Vec<u32>,
    reasons: Vec<u32>,
    phases: Vec<bool>,
    activity: Vec<f64>,
    heap: VarHeap,
    var_inc: f64,
    cla_inc: f64,
    trail: Vec<Lit>,
    trail_lim: Vec<usize>,
    qhead: usize,
    theory_head: usize,
    seen: Vec<bool>,
    ok: bool,
    max_learnts: f64,
    rng: ChaCha8Rng,
    pub conflicts: u64,
    pub decisions: u64,
}

impl<T: Theory> Solver<T> {
    pub fn new(theory: T, seed: u64) -> Self {
        Solver {
            theory,
            clauses: Vec::new(),
            learnts: Vec::new(),
            watches: Vec::new(),
            values: Vec::new(),
            levels: Vec::new(),
            reasons: Vec::new(),
            phases: Vec::new(),
            activity: Vec::new(),
            heap: VarHeap::default(),
            var_inc: 1.0,
            cla_inc: 1.0,
            trail: Vec::new(),
            trail_lim: Vec::new(),
            qhead: 0,
            theory_head: 0,
            seen: Vec::new(),
            ok: true,
            max_learnts: 0.0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            conflicts: 0,
            decisions: 0,
        }
    }

    pub fn new_var(&mut self) -> u32 {
        let v = self.values.len() as u32;
        self.values.push(UNDEF);
        self.levels.push(0);
        self.reasons.push(NO_REASON);
        self.phases.push(false);
        self.activity.push(self.rng.gen::<f64>() * 1e-5);
        self.seen.push(false);
        self.watches.push(Vec::new());
        self.watches.push(Vec::new());
        self.heap.insert(v, &self.activity);
        v
    }

    fn lit_value(&self, l: Lit) -> u8 {
        let v = self.values[l.var() as usize];
        if v == UNDEF {
            UNDEF
        } else {
            v ^ l.is_neg() as u8
        }
    }

    /// Value of `var` in the last satisfying assignment.
    pub fn model_value(&self, var: u32) -> bool {
        self.values[var as usize] == TRUE
    }

    fn decision_level(&self) -> usize {
        self.trail_lim.len()
    }

    /// Adds a permanent clause. Returns false once the formula is known unsat.
    pub fn add_clause(&mut self, lits: &[Lit]) -> bool {
        if !self.ok {
            return false;
        }
        self.cancel_until(0);
        let mut ls: Vec<Lit> = lits.to_vec();
        ls.sort_unstable();
        ls.dedup();
        let mut out = Vec::with_capacity(ls.len());
        for (i, &l) in ls.iter().enumerate() {
            if i + 1 < ls.len() && ls[i + 1] == !l {
                return true;
            }
            match self.lit_value(l) {
                TRUE => return true,
                FALSE => {}
                _ => out.push(l),
            }
        }
        match out.len() {
            0 => {
                self.ok = false;
                false
            }
            1 => {
                self.enqueue(out[0], NO_REASON);
                if self.propagate_all().is_some() {
                    self.ok = false;
                }
                self.ok
            }
            _ => {
                self.attach(out, false);
                true
            }
        }
    }

    fn attach(&mut self, lits: Vec<Lit>, learnt: bool) -> u32 {
        let cref = self.clauses.len() as u32;
        self.watches[lits[0].idx()].push(Watcher {
            cref,
            blocker: lits[1],
        });
        self.watches[lits[1].idx()].push(Watcher {
            cref,
            blocker: lits[0],
        });
        self.clauses.push(Clause {
            lits,
            learnt,
            deleted: false,
            activity: 0.0,
        });
        if learnt {
            self.learnts.push(cref);
        }
        cref
    }

    fn enqueue(&mut self, l: Lit, reason: u32) {
        let v = l.var() as usize;
        self.values[v] = (!l.is_neg()) as u8;
        self.levels[v] = self.decision_level() as u32;
        self.reasons[v] = reason;
        self.trail.push(l);
    }

    /// Boolean propagation; returns the conflicting clause, if any.
    fn propagate(&mut self) -> Option<u32> {
        while self.qhead < self.trail.len() {
            let p = self.trail[self.qhead];
            self.qhead += 1;
            let false_lit = !p;
            let mut ws = std::mem::take(&mut self.watches[false_lit.idx()]);
            let mut i = 0;
            let mut j = 0;
            let mut conflict = None;
            while i < ws.len() {
                let w = ws[i];
                i += 1;
                if self.lit_value(w.blocker) == TRUE {
                    ws[j] = w;
                    j += 1;
                    continue;
                }
                let cref = w.cref as usize;
                if self.clauses[cref].deleted {
                    continue;
                }
                {
                    let c = &mut self.clauses[cref].lits;
                    if c[0] == false_lit {
                        c.swap(0, 1);
                    }
                }
                let first = self.clauses[cref].lits[0];
                if first != w.blocker && self.lit_value(first) == TRUE {
                    ws[j] = Watcher {
                        cref: w.cref,
                        blocker: first,
                    };
                    j += 1;
                    continue;
                }
                let len = self.clauses[cref].lits.len();
                let mut moved = false;
                for k in 2..len {
                    let l = self.clauses[cref].lits[k];
                    if self.lit_value(l) != FALSE {
                        self.clauses[cref].lits.swap(1, k);
                        self.watches[l.idx()].push(Watcher {
                            cref: w.cref,
                            blocker: first,
                        });
                        moved = true;
                        break;
                    }
                }
                if moved {
                    continue;
                }
                ws[j] = Watcher {
                    cref: w.cref,
                    blocker: first,
                };
                j += 1;
                if self.lit_value(first) == FALSE {
                    conflict = Some(w.cref);
                    while i < ws.len() {
                        ws[j] = ws[i];
                        i += 1;
                        j += 1;
                    }
                } else {
                    self.enqueue(first, w.cref);
                }
            }
            ws.truncate(j);
            self.watches[false_lit.idx()] = ws;
            if conflict.is_some() {
                self.qhead = self.trail.len();
                return conflict;
            }
        }
        None
    }

    fn propagate_theory(&mut self) -> Option<Vec<Lit>> {
        while self.theory_head < self.trail.len() {
            let idx = self.theory_head;
            let lit = self.trail[idx];
            self.theory_head += 1;
            if let Err(expl) = self.theory.assign(lit, idx) {
                return Some(expl.into_iter().map(|l| !l).collect());
            }
        }
        None
    }

    /// Boolean then theory propagation; returns a falsified clause on conflict.
    fn propagate_all(&mut self) -> Option<Vec<Lit>> {
        if let Some(c) = self.propagate() {
            return Some(self.clauses[c as usize].lits.clone());
        }
        self.propagate_theory()
    }

    fn cancel_until(&mut self, level: usize) {
        if self.decision_level() <= level {
            return;
        }
        let lim = self.trail_lim[level];
        for k in (lim..self.trail.len()).rev() {
            let l = self.trail[k];
            let v = l.var() as usize;
            self.phases[v] = !l.is_neg();
            self.values[v] = UNDEF;
            self.reasons[v] = NO_REASON;
            self.heap.insert(v as u32, &self.activity);
        }
        self.trail.truncate(lim);
        self.trail_lim.truncate(level);
        self.qhead = self.trail.len();
        if self.theory_head > lim {
            self.theory_head = lim;
        }
        self.theory.backtrack(lim);
    }

    fn bump_var(&mut self, v: u32) {
        let a = &mut self.activity[v as usize];
        *a += self.var_inc;
        if *a > 1e100 {
            for x in self.activity.iter_mut() {
                *x *= 1e-100;
            }
            self.var_inc *= 1e-100;
        }
        self.heap.increased(v, &self.activity);
    }

    fn bump_clause(&mut self, cref: u32) {
        let c = &mut self.clauses[cref as usize];
        if !c.learnt {
            return;
        }
        c.activity += self.cla_inc;
        if c.activity > 1e20 {
            for &l in &self.learnts {
                self.clauses[l as usize].activity *= 1e-20;
            }
            self.cla_inc *= 1e-20;
        }
    }

    /// First-UIP analysis. Returns the learnt clause (asserting literal first)
    /// and the backjump level.
    fn analyze(&mut self, conflict: Vec<Lit>) -> (Vec<Lit>, usize) {
        let cur = self.decision_level() as u32;
        let mut learnt = vec![Lit(0)];
        let mut path = 0usize;
        let mut idx = self.trail.len();
        let mut clause = conflict;
        let mut p: Option<Lit> = None;
        loop {
            for &q in &clause {
                let v = q.var();
                if Some(v) == p.map(Lit::var) {
                    continue;
                }
                let vi = v as usize;
                if !self.seen[vi] && self.levels[vi] > 0 {
                    self.bump_var(v);
                    self.seen[vi] = true;
                    if self.levels[vi] >= cur {
                        path += 1;
                    } else {
                        learnt.push(q);
                    }
                }
            }
            loop {
                idx -= 1;
                if self.seen[self.trail[idx].var() as usize] {
                    break;
                }
            }
            let pl = self.trail[idx];
            self.seen[pl.var() as usize] = false;
            path -= 1;
            p = Some(pl);
            if path == 0 {
                break;
            }
            let r = self.reasons[pl.var() as usize];
            debug_assert!(r != NO_REASON);
            self.bump_clause(r);
            clause = self.clauses[r as usize].lits.clone();
        }
        learnt[0] = !p.unwrap();

        // Drop literals implied by other learnt literals through one reason step.
        let keep: Vec<bool> = learnt
            .iter()
            .enumerate()
            .map(|(i, l)| {
                if i == 0 {
                    return true;
                }
                let r = self.reasons[l.var() as usize];
                if r == NO_REASON {
                    return true;
                }
                !self.clauses[r as usize].lits.iter().all(|q| {
                    q.var() == l.var() || self.seen[q.var() as usize] || self.levels[q.var() as usize] == 0
                })
            })
            .collect();
        for l in &learnt[1..] {
            self.seen[l.var() as usize] = false;
        }
        let mut out: Vec<Lit> = learnt
            .into_iter()
            .zip(keep)
            .filter_map(|(l, k)| k.then_some(l))
            .collect();

        let mut bt = 0usize;
        if out.len() > 1 {
            let mut max_i = 1;
            for i in 2..out.len() {
                if self.levels[out[i].var() as usize] > self.levels[out[max_i].var() as usize] {
                    max_i = i;
                }
            }
            out.swap(1, max_i);
            bt = self.levels[out[1].var() as usize] as usize;
        }
        (out, bt)
    }

    fn reduce_db(&mut self) {
        let mut ls = std::mem::take(&mut self.learnts);
        ls.sort_by(|a, b| {
            self.clauses[*a as usize]
                .activity
                .partial_cmp(&self.clauses[*b as usize].activity)
                .unwrap()
        });
        let half = ls.len() / 2;
        let mut kept = Vec::with_capacity(ls.len());
        for (i, cref) in ls.into_iter().enumerate() {
            let c = &self.clauses[cref as usize];
            let first = c.lits[0];
            let locked = self.reasons[first.var() as usize] == cref && self.lit_value(first) == TRUE;
            if i < half && c.lits.len() > 2 && !locked {
                let c = &mut self.clauses[cref as usize];
                c.deleted = true;
                c.lits = Vec::new();
            } else {
                kept.push(cref);
            }
        }
        self.learnts = kept;
    }

    fn pick_branch(&mut self) -> Option<Lit> {
        while let Some(v) = self.heap.pop(&self.activity) {
            if self.values[v as usize] == UNDEF {
                let phase = self.theory.suggest_phase(v).unwrap_or(self.phases[v as usize]);
                return Some(Lit::new(v, !phase));
            }
        }
        None
    }

    fn search(&mut self, conflict_budget: u64, limits: &Limits) -> Search {
        let mut local_conflicts = 0u64;
        loop {
            if let Some(conflict) = self.propagate_all() {
                self.conflicts += 1;
                local_conflicts += 1;
                let max_level = conflict
                    .iter()
                    .map(|l| self.levels[l.var() as usize] as usize)
                    .max()
                    .unwrap_or(0);
                if max_level == 0 {
                    return Search::Unsat;
                }
                if max_level < self.decision_level() {
                    self.cancel_until(max_level);
                }
                let (learnt, bt) = self.analyze(conflict);
                self.cancel_until(bt);
                if learnt.len() == 1 {
                    self.enqueue(learnt[0], NO_REASON);
                } else {
                    let first = learnt[0];
                    let cref = self.attach(learnt, true);
                    self.bump_clause(cref);
                    self.enqueue(first, cref);
                }
                self.var_inc /= 0.95;
                self.cla_inc /= 0.999;

                if let Some(max) = limits.max_conflicts {
                    if self.conflicts >= max {
                        return Search::Stop(format!("conflict limit {max} reached"));
                    }
                }
                if let Some(d) = limits.deadline {
                    if Instant::now() >= d {
                        return Search::Stop("timeout".into());
                    }
                }
            } else {
                if local_conflicts >= conflict_budget {
                    self.cancel_until(0);
                    return Search::Restart;
                }
                if self.learnts.len() as f64 - self.trail.len() as f64 >= self.max_learnts {
                    self.reduce_db();
                }
                self.decisions += 1;
                if self.decisions % 1024 == 0 {
                    if let Some(d) = limits.deadline {
                        if Instant::now() >= d {
                            return Search::Stop("timeout".into());
                        }
                    }
                }
                match self.pick_branch() {
                    None => return Search::Sat,
                    Some(l) => {
                        self.trail_lim.push(self.trail.len());
                        self.enqueue(l, NO_REASON);
                    }
                }
            }
        }
    }

    pub fn solve(&mut self, limits: &Limits) -> Outcome {
        if !self.ok {
            return Outcome::Unsat;
        }
        self.cancel_until(0);
        self.max_learnts = (self.clauses.len() as f64 / 3.0).max(2000.0);
        let mut restart = 0u32;
        loop {
            let budget = (luby(2.0, restart) * 100.0) as u64;
            match self.search(budget, limits) {
                Search::Sat => return Outcome::Sat,
                Search::Unsat => {
                    self.ok = false;
                    return Outcome::Unsat;
                }
                Search::Stop(reason) => {
                    self.cancel_until(0);
                    return Outcome::Unknown(reason);
                }
                Search::Restart => {
                    restart += 1;
                    self.max_learnts *= 1.05;
                }
            }
        }
    }
}

fn luby(y: f64, mut x: u32) -> f64 {
    let mut size = 1u32;
    let mut seq = 0i32;
    while size < x + 1 {
        seq += 1;
        size = 2 * size + 1;
    }
    while size - 1 != x {
        size = (size - 1) >> 1;
        seq -= 1;
        x %= size;
    }
    y.powi(seq)
}

/// Max-heap of variables ordered by activity.
#[derive(Default)]
struct VarHeap {
    heap: Vec<u32>,
    index: Vec<Option<usize>>,
}

impl VarHeap {
    fn contains(&self, v: u32) -> bool {
        self.index.get(v as usize).copied().flatten().is_some()
    }

    fn insert(&mut self, v: u32, act: &[f64]) {
        if self.index.len() <= v as usize {
            self.index.resize(v as usize + 1, None);
        }
        if self.contains(v) {
            return;
        }
        self.heap.push(v);
        let i = self.heap.len() - 1;
        self.index[v as usize] = Some(i);
        self.up(i, act);
    }

    fn increased(&mut self, v: u32, act: &[f64]) {
        if let Some(Some(i)) = self.index.get(v as usize) {
            self.up(*i, act);
        }
    }

    fn pop(&mut self, act: &[f64]) -> Option<u32> {
        if self.heap.is_empty() {
            return None;
        }
        let top = self.heap[0];
        let last = self.heap.pop().unwrap();
        self.index[top as usize] = None;
        if !self.heap.is_empty() {
            self.heap[0] = last;
            self.index[last as usize] = Some(0);
            self.down(0, act);
        }
        Some(top)
    }

    fn up(&mut self, mut i: usize, act: &[f64]) {
        let v = self.heap[i];
        while i > 0 {
            let parent = (i - 1) / 2;
            let pv = self.heap[parent];
            if act[pv as usize] >= act[v as usize] {
                break;
            }
            self.heap[i] = pv;
            self.index[pv as usize] = Some(i);
            i = parent;
        }
        self.heap[i] = v;
        self.index[v as usize] = Some(i);
    }

    fn down(&mut self, mut i: usize, act: &[f64]) {
        let v = self.heap[i];
        let n = self.heap.len();
        loop {
            let l = 2 * i + 1;
            if l >= n {
                break;
            }
            let r = l + 1;
            let c = if r < n && act[self.heap[r] as usize] > act[self.heap[l] as usize] {
                r
            } else {
                l
            };
            if act[self.heap[c] as usize] <= act[v as usize] {
                break;
            }
            self.heap[i] = self.heap[c];
            self.index[self.heap[i] as usize] = Some(i);
            i = c;
        }
        self.heap[i] = v;
        self.index[v as usize] = Some(i);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solver(n: u32) -> Solver<NoTheory> {
        let mut s = Solver::new(NoTheory, 0);
        for _ in 0..n {
            s.new_var();
        }
        s
    }

    fn lit(v: i32) -> Lit {
        Lit::new(v.unsigned_abs() - 1, v < 0)
    }

    fn add(s: &mut Solver<NoTheory>, c: &[i32]) -> bool {
        s.add_clause(&c.iter().map(|&v| lit(v)).collect::<Vec<_>>())
    }

    #[test]
    fn luby_sequence() {
        let seq: Vec<f64> = (0..7).map(|i| luby(2.0, i)).collect();
        assert_eq!(seq, vec![1.0, 1.0, 2.0, 1.0, 1.0, 2.0, 4.0]);
    }

    #[test]
    fn simple_sat() {
        let mut s = solver(3);
        add(&mut s, &[1, 2]);
        add(&mut s, &[-1, 3]);
        add(&mut s, &[-2, 3]);
        add(&mut s, &[-3, -1]);
        assert_eq!(s.solve(&Limits::default()), Outcome::Sat);
        assert!(!s.model_value(0) && s.model_value(1) && s.model_value(2));
    }

    #[test]
    fn pigeonhole_unsat() {
        // 4 pigeons, 3 holes
        let (p, h) = (4, 3);
        let mut s = solver(p * h);
        let x = |i: u32, j: u32| (i * h + j + 1) as i32;
        for i in 0..p {
            add(&mut s, &(0..h).map(|j| x(i, j)).collect::<Vec<_>>());
        }
        for j in 0..h {
            for a in 0..p {
                for b in a + 1..p {
                    add(&mut s, &[-x(a, j), -x(b, j)]);
                }
            }
        }
        assert_eq!(s.solve(&Limits::default()), Outcome::Unsat);
    }

    #[test]
    fn conflict_limit_yields_unknown() {
        let (p, h) = (9, 8);
        let mut s = solver(p * h);
        let x = |i: u32, j: u32| (i * h + j + 1) as i32;
        for i in 0..p {
            add(&mut s, &(0..h).map(|j| x(i, j)).collect::<Vec<_>>());
        }
        for j in 0..h {
            for a in 0..p {
                for b in a + 1..p {
                    add(&mut s, &[-x(a, j), -x(b, j)]);
                }
            }
        }
        let limits = Limits {
            deadline: None,
            max_conflicts: Some(10),
        };
        assert!(matches!(s.solve(&limits), Outcome::Unknown(_)));
    }

    #[test]
    fn incremental_clauses_after_sat() {
        let mut s = solver(2);
        add(&mut s, &[1, 2]);
        assert_eq!(s.solve(&Limits::default()), Outcome::Sat);
        add(&mut s, &[-1]);
        assert_eq!(s.solve(&Limits::default()), Outcome::Sat);
        assert!(s.model_value(1));
        add(&mut s, &[-2]);
        assert_eq!(s.solve(&Limits::default()), Outcome::Unsat);
    }
}
