//! Constraint programs: declarations, formulas, models and an evaluator that
//! re-checks models independently of the search engine.

use std::collections::HashMap;
use std::fmt;

use crate::SolverError;

/// Handle to a declared symbol inside one [`ConstraintProgram`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Symbol(pub(crate) u32);

impl Symbol {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Sort {
    Bool,
    /// Unbounded-by-default integer, compared through difference constraints.
    Int { min: Option<i64>, max: Option<i64> },
    /// Finite domain of integer labels (transaction ids, session ids, positions).
    Enum(Vec<i64>),
}

impl Sort {
    pub fn int() -> Self {
        Sort::Int { min: None, max: None }
    }

    pub fn bounded_int(min: i64, max: i64) -> Self {
        Sort::Int {
            min: Some(min),
            max: Some(max),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Declaration {
    pub name: String,
    pub sort: Sort,
}

/// Integer-valued term: a declared `Int`/`Enum` symbol or a literal.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Term {
    Sym(Symbol),
    Lit(i64),
}

impl From<Symbol> for Term {
    fn from(s: Symbol) -> Self {
        Term::Sym(s)
    }
}

impl From<i64> for Term {
    fn from(v: i64) -> Self {
        Term::Lit(v)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Formula {
    True,
    False,
    Var(Symbol),
    Not(Box<Formula>),
    And(Vec<Formula>),
    Or(Vec<Formula>),
    Implies(Box<Formula>, Box<Formula>),
    Iff(Box<Formula>, Box<Formula>),
    Eq(Term, Term),
    Lt(Term, Term),
    Le(Term, Term),
    Distinct(Vec<Term>),
}

impl Formula {
    pub fn var(s: Symbol) -> Self {
        Formula::Var(s)
    }

    pub fn constant(b: bool) -> Self {
        if b {
            Formula::True
        } else {
            Formula::False
        }
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(f: Formula) -> Self {
        match f {
            Formula::True => Formula::False,
            Formula::False => Formula::True,
            Formula::Not(inner) => *inner,
            other => Formula::Not(Box::new(other)),
        }
    }

    /// Conjunction with constant folding and flattening.
    pub fn and<I: IntoIterator<Item = Formula>>(parts: I) -> Self {
        let mut out = Vec::new();
        for p in parts {
            match p {
                Formula::True => {}
                Formula::False => return Formula::False,
                Formula::And(inner) => out.extend(inner),
                other => out.push(other),
            }
        }
        match out.len() {
            0 => Formula::True,
            1 => out.pop().unwrap(),
            _ => Formula::And(out),
        }
    }

    /// Disjunction with constant folding and flattening.
    pub fn or<I: IntoIterator<Item = Formula>>(parts: I) -> Self {
        let mut out = Vec::new();
        for p in parts {
            match p {
                Formula::False => {}
                Formula::True => return Formula::True,
                Formula::Or(inner) => out.extend(inner),
                other => out.push(other),
            }
        }
        match out.len() {
            0 => Formula::False,
            1 => out.pop().unwrap(),
            _ => Formula::Or(out),
        }
    }

    pub fn implies(a: Formula, b: Formula) -> Self {
        match (&a, &b) {
            (Formula::False, _) | (_, Formula::True) => Formula::True,
            (Formula::True, _) => b,
            (_, Formula::False) => Formula::not(a),
            _ => Formula::Implies(Box::new(a), Box::new(b)),
        }
    }

    pub fn iff(a: Formula, b: Formula) -> Self {
        match (&a, &b) {
            (Formula::True, _) => b,
            (_, Formula::True) => a,
            (Formula::False, _) => Formula::not(b),
            (_, Formula::False) => Formula::not(a),
            _ => Formula::Iff(Box::new(a), Box::new(b)),
        }
    }

    pub fn eq(a: impl Into<Term>, b: impl Into<Term>) -> Self {
        match (a.into(), b.into()) {
            (Term::Lit(x), Term::Lit(y)) => Formula::constant(x == y),
            (a, b) => Formula::Eq(a, b),
        }
    }

    pub fn lt(a: impl Into<Term>, b: impl Into<Term>) -> Self {
        match (a.into(), b.into()) {
            (Term::Lit(x), Term::Lit(y)) => Formula::constant(x < y),
            (a, b) => Formula::Lt(a, b),
        }
    }

    pub fn le(a: impl Into<Term>, b: impl Into<Term>) -> Self {
        match (a.into(), b.into()) {
            (Term::Lit(x), Term::Lit(y)) => Formula::constant(x <= y),
            (a, b) => Formula::Le(a, b),
        }
    }

    pub fn distinct(terms: Vec<Term>) -> Self {
        if terms.len() < 2 {
            Formula::True
        } else {
            Formula::Distinct(terms)
        }
    }

    /// Number of atom occurrences (boolean variables and comparisons).
    pub fn literal_count(&self) -> usize {
        match self {
            Formula::True | Formula::False => 0,
            Formula::Var(_) | Formula::Eq(..) | Formula::Lt(..) | Formula::Le(..) => 1,
            Formula::Distinct(ts) => ts.len() * ts.len().saturating_sub(1) / 2,
            Formula::Not(f) => f.literal_count(),
            Formula::And(fs) | Formula::Or(fs) => fs.iter().map(Formula::literal_count).sum(),
            Formula::Implies(a, b) | Formula::Iff(a, b) => a.literal_count() + b.literal_count(),
        }
    }

    /// Evaluates the formula under a total model.
    pub fn eval(&self, model: &Model) -> bool {
        let term = |t: &Term| match *t {
            Term::Lit(v) => v,
            Term::Sym(s) => model.int(s),
        };
        match self {
            Formula::True => true,
            Formula::False => false,
            Formula::Var(s) => model.bool(*s),
            Formula::Not(f) => !f.eval(model),
            Formula::And(fs) => fs.iter().all(|f| f.eval(model)),
            Formula::Or(fs) => fs.iter().any(|f| f.eval(model)),
            Formula::Implies(a, b) => !a.eval(model) || b.eval(model),
            Formula::Iff(a, b) => a.eval(model) == b.eval(model),
            Formula::Eq(a, b) => term(a) == term(b),
            Formula::Lt(a, b) => term(a) < term(b),
            Formula::Le(a, b) => term(a) <= term(b),
            Formula::Distinct(ts) => {
                let vals: Vec<i64> = ts.iter().map(term).collect();
                vals.iter()
                    .enumerate()
                    .all(|(i, a)| vals[i + 1..].iter().all(|b| a != b))
            }
        }
    }

    fn visit_symbols(&self, f: &mut impl FnMut(Symbol, SymbolUse)) {
        let term = |t: &Term, f: &mut dyn FnMut(Symbol, SymbolUse)| {
            if let Term::Sym(s) = t {
                f(*s, SymbolUse::Numeric)
            }
        };
        match self {
            Formula::True | Formula::False => {}
            Formula::Var(s) => f(*s, SymbolUse::Boolean),
            Formula::Not(x) => x.visit_symbols(f),
            Formula::And(xs) | Formula::Or(xs) => xs.iter().for_each(|x| x.visit_symbols(f)),
            Formula::Implies(a, b) | Formula::Iff(a, b) => {
                a.visit_symbols(f);
                b.visit_symbols(f);
            }
            Formula::Eq(a, b) | Formula::Lt(a, b) | Formula::Le(a, b) => {
                term(a, f);
                term(b, f);
            }
            Formula::Distinct(ts) => ts.iter().for_each(|t| term(t, f)),
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum SymbolUse {
    Boolean,
    Numeric,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Value {
    Bool(bool),
    Int(i64),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Bool(b) => write!(f, "{b}"),
            Value::Int(v) => write!(f, "{v}"),
        }
    }
}

/// Total assignment to every symbol of the program it was produced for.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Model {
    pub(crate) values: Vec<Value>,
}

impl Model {
    pub fn new(values: Vec<Value>) -> Self {
        Model { values }
    }

    pub fn value(&self, s: Symbol) -> Value {
        self.values[s.index()]
    }

    pub fn bool(&self, s: Symbol) -> bool {
        match self.values[s.index()] {
            Value::Bool(b) => b,
            Value::Int(_) => panic!("symbol {s:?} is not boolean"),
        }
    }

    pub fn int(&self, s: Symbol) -> i64 {
        match self.values[s.index()] {
            Value::Int(v) => v,
            Value::Bool(_) => panic!("symbol {s:?} is not numeric"),
        }
    }

    pub fn values(&self) -> &[Value] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Declarations plus asserted formulas.
///
/// Every asserted formula is sort-checked on entry, so a program is always
/// well-sorted.
#[derive(Clone, Debug, Default)]
pub struct ConstraintProgram {
    decls: Vec<Declaration>,
    by_name: HashMap<String, Symbol>,
    assertions: Vec<Formula>,
    notes: HashMap<Symbol, String>,
}

impl ConstraintProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn declare(&mut self, name: impl Into<String>, sort: Sort) -> Result<Symbol, SolverError> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(SolverError::DuplicateSymbol(name));
        }
        match &sort {
            Sort::Enum(dom) if dom.is_empty() => return Err(SolverError::EmptyDomain(name)),
            Sort::Int {
                min: Some(lo),
                max: Some(hi),
            } if lo > hi => return Err(SolverError::EmptyDomain(name)),
            _ => {}
        }
        let sym = Symbol(self.decls.len() as u32);
        self.by_name.insert(name.clone(), sym);
        self.decls.push(Declaration { name, sort });
        Ok(sym)
    }

    pub fn declare_bool(&mut self, name: impl Into<String>) -> Result<Symbol, SolverError> {
        self.declare(name, Sort::Bool)
    }

    pub fn lookup(&self, name: &str) -> Option<Symbol> {
        self.by_name.get(name).copied()
    }

    pub fn declaration(&self, s: Symbol) -> &Declaration {
        &self.decls[s.index()]
    }

    pub fn declarations(&self) -> impl Iterator<Item = (Symbol, &Declaration)> {
        self.decls
            .iter()
            .enumerate()
            .map(|(i, d)| (Symbol(i as u32), d))
    }

    pub fn symbol_count(&self) -> usize {
        self.decls.len()
    }

    pub fn name(&self, s: Symbol) -> &str {
        &self.decls[s.index()].name
    }

    pub fn sort(&self, s: Symbol) -> &Sort {
        &self.decls[s.index()].sort
    }

    /// Attaches a free-form note mapping a symbol back to the object it models.
    pub fn annotate(&mut self, s: Symbol, note: impl Into<String>) {
        self.notes.insert(s, note.into());
    }

    pub fn note(&self, s: Symbol) -> Option<&str> {
        self.notes.get(&s).map(String::as_str)
    }

    pub fn assertions(&self) -> &[Formula] {
        &self.assertions
    }

    pub fn assert(&mut self, f: Formula) -> Result<(), SolverError> {
        self.check_sorts(&f)?;
        match f {
            Formula::True => {}
            Formula::And(parts) => self.assertions.extend(parts),
            other => self.assertions.push(other),
        }
        Ok(())
    }

    pub fn literal_count(&self) -> usize {
        self.assertions.iter().map(Formula::literal_count).sum()
    }

    fn check_sorts(&self, f: &Formula) -> Result<(), SolverError> {
        let mut err = None;
        f.visit_symbols(&mut |s, usage| {
            if err.is_some() {
                return;
            }
            let Some(decl) = self.decls.get(s.index()) else {
                err = Some(SolverError::UndeclaredSymbol(s.0));
                return;
            };
            let ok = match usage {
                SymbolUse::Boolean => decl.sort == Sort::Bool,
                SymbolUse::Numeric => decl.sort != Sort::Bool,
            };
            if !ok {
                err = Some(SolverError::IllSorted(decl.name.clone()));
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        self.check_comparisons(f)
    }

    // Enum symbols may be compared with literals and other enum symbols, never
    // with difference-logic integers.
    fn check_comparisons(&self, f: &Formula) -> Result<(), SolverError> {
        let is_enum = |t: &Term| matches!(t, Term::Sym(s) if matches!(self.sort(*s), Sort::Enum(_)));
        let is_int = |t: &Term| matches!(t, Term::Sym(s) if matches!(self.sort(*s), Sort::Int { .. }));
        let mixed = |a: &Term, b: &Term| (is_enum(a) && is_int(b)) || (is_int(a) && is_enum(b));
        match f {
            Formula::Eq(a, b) | Formula::Lt(a, b) | Formula::Le(a, b) => {
                if mixed(a, b) {
                    return Err(SolverError::IllSorted(format!("{a:?} vs {b:?}")));
                }
            }
            Formula::Distinct(ts) => {
                if ts.iter().any(is_enum) && ts.iter().any(is_int) {
                    return Err(SolverError::IllSorted("distinct over mixed sorts".into()));
                }
            }
            Formula::Not(x) => self.check_comparisons(x)?,
            Formula::And(xs) | Formula::Or(xs) => {
                for x in xs {
                    self.check_comparisons(x)?;
                }
            }
            Formula::Implies(a, b) | Formula::Iff(a, b) => {
                self.check_comparisons(a)?;
                self.check_comparisons(b)?;
            }
            Formula::True | Formula::False | Formula::Var(_) => {}
        }
        Ok(())
    }

    /// True iff `model` assigns every symbol in range and satisfies every assertion.
    pub fn satisfied_by(&self, model: &Model) -> bool {
        if model.len() != self.decls.len() {
            return false;
        }
        let in_range = self.declarations().all(|(s, d)| match (&d.sort, model.value(s)) {
            (Sort::Bool, Value::Bool(_)) => true,
            (Sort::Int { min, max }, Value::Int(v)) => {
                min.map_or(true, |lo| v >= lo) && max.map_or(true, |hi| v <= hi)
            }
            (Sort::Enum(dom), Value::Int(v)) => dom.contains(&v),
            _ => false,
        });
        in_range && self.assertions.iter().all(|f| f.eval(model))
    }
}

/// Returns `program` extended with a clause excluding the joint assignment of
/// `symbols` found in `model`.
pub fn block_assignment(program: &ConstraintProgram, symbols: &[Symbol], model: &Model) -> ConstraintProgram {
    let mut out = program.clone();
    out.assertions.push(blocking_clause(symbols, model));
    out
}

pub(crate) fn blocking_clause(symbols: &[Symbol], model: &Model) -> Formula {
    Formula::not(Formula::and(symbols.iter().map(|&s| match model.value(s) {
        Value::Bool(true) => Formula::Var(s),
        Value::Bool(false) => Formula::not(Formula::Var(s)),
        Value::Int(v) => Formula::eq(s, v),
    })))
}

impl ConstraintProgram {
    /// In-place variant of [`block_assignment`].
    pub fn block(&mut self, symbols: &[Symbol], model: &Model) {
        self.assertions.push(blocking_clause(symbols, model));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constructors_fold_constants() {
        assert_eq!(Formula::and([Formula::True, Formula::True]), Formula::True);
        assert_eq!(Formula::or([Formula::False]), Formula::False);
        assert_eq!(Formula::and([Formula::True, Formula::False]), Formula::False);
        assert_eq!(Formula::lt(1, 2), Formula::True);
        assert_eq!(Formula::not(Formula::not(Formula::True)), Formula::True);
    }

    #[test]
    fn duplicate_and_empty_declarations_rejected() {
        let mut p = ConstraintProgram::new();
        p.declare_bool("x").unwrap();
        assert!(matches!(p.declare_bool("x"), Err(SolverError::DuplicateSymbol(_))));
        assert!(matches!(p.declare("e", Sort::Enum(vec![])), Err(SolverError::EmptyDomain(_))));
    }

    #[test]
    fn ill_sorted_assertions_rejected() {
        let mut p = ConstraintProgram::new();
        let b = p.declare_bool("b").unwrap();
        let i = p.declare("i", Sort::int()).unwrap();
        let e = p.declare("e", Sort::Enum(vec![1, 2])).unwrap();
        assert!(p.assert(Formula::eq(b, 1)).is_err());
        assert!(p.assert(Formula::Var(i)).is_err());
        assert!(p.assert(Formula::lt(i, e)).is_err());
        assert!(p.assert(Formula::Var(Symbol(99))).is_err());
        assert!(p.assert(Formula::lt(e, 2)).is_ok());
    }

    #[test]
    fn evaluator_handles_distinct() {
        let mut p = ConstraintProgram::new();
        let a = p.declare("a", Sort::int()).unwrap();
        let b = p.declare("b", Sort::int()).unwrap();
        let f = Formula::distinct(vec![a.into(), b.into(), Term::Lit(3)]);
        assert!(f.eval(&Model::new(vec![Value::Int(1), Value::Int(2)])));
        assert!(!f.eval(&Model::new(vec![Value::Int(3), Value::Int(2)])));
    }
}
