//! Grounding of constraint programs to clauses plus difference-logic atoms.

use std::collections::HashMap;

use crate::dl::{DiffLogic, DlAtom};
use crate::program::{ConstraintProgram, Formula, Model, Sort, Term, Value};
use crate::sat::{Limits, Lit, Outcome, Solver};

#[derive(Clone, Copy)]
enum Cmp {
    Eq,
    Lt,
    Le,
}

impl Cmp {
    fn holds(self, a: i64, b: i64) -> bool {
        match self {
            Cmp::Eq => a == b,
            Cmp::Lt => a < b,
            Cmp::Le => a <= b,
        }
    }
}

enum Ground {
    Bool(u32),
    Enum(Vec<(i64, u32)>),
    Int(u32),
}

enum Operand<'a> {
    Const(i64),
    Enum(&'a [(i64, u32)]),
    Node(u32),
}

pub(crate) struct Grounding {
    pub solver: Solver<DiffLogic>,
    symbols: Vec<Ground>,
    zero: u32,
    tt: Lit,
    atoms: HashMap<(u32, u32, i64), u32>,
}

impl Grounding {
    pub fn new(program: &ConstraintProgram, seed: u64) -> Self {
        let mut solver = Solver::new(DiffLogic::default(), seed);
        let zero = solver.theory.new_node();
        let t = solver.new_var();
        let tt = Lit::pos(t);
        solver.add_clause(&[tt]);
        let mut g = Grounding {
            solver,
            symbols: Vec::with_capacity(program.symbol_count()),
            zero,
            tt,
            atoms: HashMap::new(),
        };
        for (_, decl) in program.declarations() {
            let ground = match &decl.sort {
                Sort::Bool => Ground::Bool(g.solver.new_var()),
                Sort::Enum(dom) => {
                    let mut dom = dom.clone();
                    dom.sort_unstable();
                    dom.dedup();
                    let vars: Vec<(i64, u32)> = dom.iter().map(|&v| (v, g.solver.new_var())).collect();
                    let alo: Vec<Lit> = vars.iter().map(|&(_, x)| Lit::pos(x)).collect();
                    g.solver.add_clause(&alo);
                    for i in 0..vars.len() {
                        for j in i + 1..vars.len() {
                            g.solver
                                .add_clause(&[Lit::new(vars[i].1, true), Lit::new(vars[j].1, true)]);
                        }
                    }
                    Ground::Enum(vars)
                }
                Sort::Int { min, max } => {
                    let n = g.solver.theory.new_node();
                    if let Some(hi) = max {
                        g.solver.theory.add_permanent(n, zero, *hi);
                    }
                    if let Some(lo) = min {
                        g.solver.theory.add_permanent(zero, n, -*lo);
                    }
                    Ground::Int(n)
                }
            };
            g.symbols.push(ground);
        }
        for f in program.assertions() {
            g.assert(f);
        }
        g
    }

    pub fn solve(&mut self, limits: &Limits) -> Outcome {
        self.solver.solve(limits)
    }

    pub fn model(&self) -> Model {
        let values = self
            .symbols
            .iter()
            .map(|g| match g {
                Ground::Bool(v) => Value::Bool(self.solver.model_value(*v)),
                Ground::Enum(vars) => Value::Int(
                    vars.iter()
                        .find(|(_, x)| self.solver.model_value(*x))
                        .map(|(v, _)| *v)
                        .expect("one-hot encoding violated"),
                ),
                Ground::Int(n) => Value::Int(self.solver.theory.value(*n, self.zero)),
            })
            .collect();
        Model::new(values)
    }

    /// Adds `f` as a top-level constraint, splitting conjunctions and
    /// emitting disjunctions directly as clauses.
    pub fn assert(&mut self, f: &Formula) {
        match f {
            Formula::True => {}
            Formula::And(fs) => fs.iter().for_each(|g| self.assert(g)),
            Formula::Or(fs) => {
                let c: Vec<Lit> = fs.iter().map(|g| self.lit(g)).collect();
                self.solver.add_clause(&c);
            }
            Formula::Implies(a, b) => {
                let mut c = Vec::new();
                match a.as_ref() {
                    Formula::And(xs) => c.extend(xs.iter().map(|x| !self.lit(x))),
                    other => c.push(!self.lit(other)),
                }
                match b.as_ref() {
                    Formula::Or(xs) => c.extend(xs.iter().map(|x| self.lit(x))),
                    other => c.push(self.lit(other)),
                }
                self.solver.add_clause(&c);
            }
            Formula::Iff(a, b) => {
                let (la, lb) = (self.lit(a), self.lit(b));
                self.solver.add_clause(&[!la, lb]);
                self.solver.add_clause(&[la, !lb]);
            }
            Formula::Not(inner) => match inner.as_ref() {
                Formula::And(xs) => {
                    let c: Vec<Lit> = xs.iter().map(|x| !self.lit(x)).collect();
                    self.solver.add_clause(&c);
                }
                other => {
                    let l = self.lit(other);
                    self.solver.add_clause(&[!l]);
                }
            },
            other => {
                let l = self.lit(other);
                self.solver.add_clause(&[l]);
            }
        }
    }

    fn fresh(&mut self) -> Lit {
        Lit::pos(self.solver.new_var())
    }

    fn and_lits(&mut self, ls: Vec<Lit>) -> Lit {
        if ls.is_empty() {
            return self.tt;
        }
        if ls.len() == 1 {
            return ls[0];
        }
        let v = self.fresh();
        let mut back = vec![v];
        for &l in &ls {
            self.solver.add_clause(&[!v, l]);
            back.push(!l);
        }
        self.solver.add_clause(&back);
        v
    }

    fn or_lits(&mut self, ls: Vec<Lit>) -> Lit {
        let neg: Vec<Lit> = ls.into_iter().map(|l| !l).collect();
        !self.and_lits(neg)
    }

    fn lit(&mut self, f: &Formula) -> Lit {
        match f {
            Formula::True => self.tt,
            Formula::False => !self.tt,
            Formula::Var(s) => match self.symbols[s.index()] {
                Ground::Bool(v) => Lit::pos(v),
                _ => unreachable!("sort-checked"),
            },
            Formula::Not(g) => !self.lit(g),
            Formula::And(fs) => {
                let ls = fs.iter().map(|g| self.lit(g)).collect();
                self.and_lits(ls)
            }
            Formula::Or(fs) => {
                let ls = fs.iter().map(|g| self.lit(g)).collect();
                self.or_lits(ls)
            }
            Formula::Implies(a, b) => {
                let ls = vec![!self.lit(a), self.lit(b)];
                self.or_lits(ls)
            }
            Formula::Iff(a, b) => {
                let (la, lb) = (self.lit(a), self.lit(b));
                let v = self.fresh();
                self.solver.add_clause(&[!v, !la, lb]);
                self.solver.add_clause(&[!v, la, !lb]);
                self.solver.add_clause(&[v, la, lb]);
                self.solver.add_clause(&[v, !la, !lb]);
                v
            }
            Formula::Eq(a, b) => self.compare(Cmp::Eq, *a, *b),
            Formula::Lt(a, b) => self.compare(Cmp::Lt, *a, *b),
            Formula::Le(a, b) => self.compare(Cmp::Le, *a, *b),
            Formula::Distinct(ts) => {
                let mut ls = Vec::new();
                for i in 0..ts.len() {
                    for j in i + 1..ts.len() {
                        ls.push(!self.compare(Cmp::Eq, ts[i], ts[j]));
                    }
                }
                self.and_lits(ls)
            }
        }
    }

    fn operand(&self, t: Term) -> Operand<'_> {
        match t {
            Term::Lit(v) => Operand::Const(v),
            Term::Sym(s) => match &self.symbols[s.index()] {
                Ground::Enum(vars) => Operand::Enum(vars),
                Ground::Int(n) => Operand::Node(*n),
                Ground::Bool(_) => unreachable!("sort-checked"),
            },
        }
    }

    fn compare(&mut self, cmp: Cmp, a: Term, b: Term) -> Lit {
        enum Plan {
            Const(bool),
            OneHot(Vec<u32>),
            Pairs(Vec<(u32, u32)>),
            Diff(u32, u32, i64, i64),
        }
        let plan = match (self.operand(a), self.operand(b)) {
            (Operand::Const(x), Operand::Const(y)) => Plan::Const(cmp.holds(x, y)),
            (Operand::Enum(d), Operand::Const(y)) => {
                Plan::OneHot(d.iter().filter(|(v, _)| cmp.holds(*v, y)).map(|(_, x)| *x).collect())
            }
            (Operand::Const(x), Operand::Enum(d)) => {
                Plan::OneHot(d.iter().filter(|(v, _)| cmp.holds(x, *v)).map(|(_, y)| *y).collect())
            }
            (Operand::Enum(da), Operand::Enum(db)) => {
                if a == b {
                    Plan::OneHot(da.iter().filter(|(v, _)| cmp.holds(*v, *v)).map(|(_, x)| *x).collect())
                } else {
                    let mut pairs = Vec::new();
                    for &(va, xa) in da {
                        for &(vb, xb) in db {
                            if cmp.holds(va, vb) {
                                pairs.push((xa, xb));
                            }
                        }
                    }
                    Plan::Pairs(pairs)
                }
            }
            (oa, ob) => {
                let (na, ca) = match oa {
                    Operand::Const(v) => (self.zero, v),
                    Operand::Node(n) => (n, 0),
                    Operand::Enum(_) => unreachable!("sort-checked"),
                };
                let (nb, cb) = match ob {
                    Operand::Const(v) => (self.zero, v),
                    Operand::Node(n) => (n, 0),
                    Operand::Enum(_) => unreachable!("sort-checked"),
                };
                Plan::Diff(na, nb, ca, cb)
            }
        };
        match plan {
            Plan::Const(b) => {
                if b {
                    self.tt
                } else {
                    !self.tt
                }
            }
            Plan::OneHot(xs) => {
                let ls = xs.into_iter().map(Lit::pos).collect();
                self.or_lits(ls)
            }
            Plan::Pairs(ps) => {
                let mut ls = Vec::with_capacity(ps.len());
                for (x, y) in ps {
                    let l = self.and_lits(vec![Lit::pos(x), Lit::pos(y)]);
                    ls.push(l);
                }
                self.or_lits(ls)
            }
            Plan::Diff(na, nb, ca, cb) => {
                // na + ca (cmp) nb + cb  <=>  na - nb (cmp) cb - ca
                let k = cb - ca;
                match cmp {
                    Cmp::Le => self.diff_le(na, nb, k),
                    Cmp::Lt => self.diff_le(na, nb, k - 1),
                    Cmp::Eq => {
                        let le = self.diff_le(na, nb, k);
                        let ge = self.diff_le(nb, na, -k);
                        self.and_lits(vec![le, ge])
                    }
                }
            }
        }
    }

    /// Literal for `x - y <= c`.
    fn diff_le(&mut self, x: u32, y: u32, c: i64) -> Lit {
        if x == y {
            return if 0 <= c { self.tt } else { !self.tt };
        }
        if x > y {
            // x - y <= c  <=>  not (y - x <= -c - 1)
            return !self.diff_le(y, x, -c - 1);
        }
        if let Some(&v) = self.atoms.get(&(x, y, c)) {
            return Lit::pos(v);
        }
        let v = self.solver.new_var();
        self.solver.theory.register_atom(v, DlAtom { x, y, c });
        self.atoms.insert((x, y, c), v);
        Lit::pos(v)
    }
}
