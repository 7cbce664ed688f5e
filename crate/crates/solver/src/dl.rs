//! Incremental difference-logic theory: constraints `x - y <= c` as weighted
//! edges `y -> x`, kept consistent with a feasible potential function.
//! Negative cycles are detected on edge insertion with a Dijkstra pass over
//! reduced costs.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::sat::{Lit, Theory};

#[derive(Clone, Copy, Debug)]
pub(crate) struct DlAtom {
    pub x: u32,
    pub y: u32,
    pub c: i64,
}

#[derive(Clone, Copy, Debug)]
struct Edge {
    from: u32,
    to: u32,
    w: i64,
    lit: Option<Lit>,
    trail_index: usize,
}

#[derive(Default)]
pub(crate) struct DiffLogic {
    pi: Vec<i64>,
    out: Vec<Vec<u32>>,
    edges: Vec<Edge>,
    permanent: usize,
    atoms: Vec<Option<DlAtom>>,
    // scratch
    gamma: Vec<i64>,
    done: Vec<bool>,
    pred: Vec<u32>,
    touched: Vec<u32>,
}

impl DiffLogic {
    pub fn new_node(&mut self) -> u32 {
        let n = self.pi.len() as u32;
        self.pi.push(0);
        self.out.push(Vec::new());
        self.gamma.push(0);
        self.done.push(false);
        self.pred.push(u32::MAX);
        n
    }

    pub fn register_atom(&mut self, var: u32, atom: DlAtom) {
        if self.atoms.len() <= var as usize {
            self.atoms.resize(var as usize + 1, None);
        }
        self.atoms[var as usize] = Some(atom);
    }

    /// Adds `x - y <= c` unconditionally. Only valid before search starts.
    pub fn add_permanent(&mut self, x: u32, y: u32, c: i64) -> bool {
        debug_assert_eq!(self.permanent, self.edges.len());
        let ok = self
            .insert(Edge {
                from: y,
                to: x,
                w: c,
                lit: None,
                trail_index: 0,
            })
            .is_ok();
        self.permanent = self.edges.len();
        ok
    }

    pub fn value(&self, node: u32, zero: u32) -> i64 {
        self.pi[node as usize] - self.pi[zero as usize]
    }

    fn insert(&mut self, e: Edge) -> Result<(), Vec<Lit>> {
        let (u, v, d) = (e.from, e.to, e.w);
        if u == v {
            if d < 0 {
                return Err(e.lit.into_iter().collect());
            }
            return Ok(());
        }
        let g0 = self.pi[u as usize] + d - self.pi[v as usize];
        if g0 >= 0 {
            self.push_edge(e);
            return Ok(());
        }
        let edge_id = self.edges.len() as u32;
        let mut heap = BinaryHeap::new();
        self.gamma[v as usize] = g0;
        self.pred[v as usize] = edge_id;
        self.touched.push(v);
        heap.push((Reverse(g0), v));
        let mut updates: Vec<(u32, i64)> = Vec::new();
        let mut conflict: Option<(u32, u32)> = None;
        while let Some((Reverse(g), s)) = heap.pop() {
            if self.done[s as usize] || g != self.gamma[s as usize] {
                continue;
            }
            self.done[s as usize] = true;
            let new_pi = self.pi[s as usize] + g;
            updates.push((s, new_pi));
            for &eid in &self.out[s as usize] {
                let ed = self.edges[eid as usize];
                let t = ed.to;
                if self.done[t as usize] {
                    continue;
                }
                let gt = new_pi + ed.w - self.pi[t as usize];
                if gt < self.gamma[t as usize] {
                    if t == u {
                        conflict = Some((s, eid));
                        break;
                    }
                    if self.gamma[t as usize] == 0 {
                        self.touched.push(t);
                    }
                    self.gamma[t as usize] = gt;
                    self.pred[t as usize] = eid;
                    heap.push((Reverse(gt), t));
                }
            }
            if conflict.is_some() {
                break;
            }
        }
        let result = match conflict {
            Some((s, closing)) => {
                let mut expl = Vec::new();
                expl.extend(e.lit);
                expl.extend(self.edges[closing as usize].lit);
                let mut cur = s;
                while cur != v {
                    let pe = self.edges[self.pred[cur as usize] as usize];
                    expl.extend(pe.lit);
                    cur = pe.from;
                }
                Err(expl)
            }
            None => {
                for (s, p) in updates {
                    self.pi[s as usize] = p;
                }
                Ok(())
            }
        };
        for &t in &self.touched {
            self.gamma[t as usize] = 0;
            self.done[t as usize] = false;
            self.pred[t as usize] = u32::MAX;
        }
        self.touched.clear();
        if result.is_ok() {
            self.push_edge(e);
        }
        result
    }

    fn push_edge(&mut self, e: Edge) {
        let id = self.edges.len() as u32;
        self.out[e.from as usize].push(id);
        self.edges.push(e);
    }
}

impl Theory for DiffLogic {
    fn assign(&mut self, lit: Lit, trail_index: usize) -> Result<(), Vec<Lit>> {
        let Some(Some(atom)) = self.atoms.get(lit.var() as usize).copied() else {
            return Ok(());
        };
        let e = if lit.is_neg() {
            // x - y > c  <=>  y - x <= -c - 1
            Edge {
                from: atom.x,
                to: atom.y,
                w: -atom.c - 1,
                lit: Some(lit),
                trail_index,
            }
        } else {
            Edge {
                from: atom.y,
                to: atom.x,
                w: atom.c,
                lit: Some(lit),
                trail_index,
            }
        };
        self.insert(e)
    }

    fn suggest_phase(&self, var: u32) -> Option<bool> {
        let atom = self.atoms.get(var as usize).copied().flatten()?;
        Some(self.pi[atom.x as usize] - self.pi[atom.y as usize] <= atom.c)
    }

    fn backtrack(&mut self, trail_len: usize) {
        while self.edges.len() > self.permanent {
            let e = *self.edges.last().unwrap();
            if e.trail_index < trail_len {
                break;
            }
            self.edges.pop();
            self.out[e.from as usize].pop();
        }
    }
}
