//! SMT-LIB2 rendering of a constraint program, for cross-checking with
//! external solvers. Enum symbols become `Int` constants restricted to their
//! domain.

use std::fmt::Write;

use crate::program::{ConstraintProgram, Formula, Sort, Term};

fn quote(name: &str) -> String {
    format!("|{}|", name.replace('|', "_"))
}

fn int(v: i64) -> String {
    if v < 0 {
        format!("(- {})", v.unsigned_abs())
    } else {
        v.to_string()
    }
}

fn term(p: &ConstraintProgram, t: &Term) -> String {
    match t {
        Term::Lit(v) => int(*v),
        Term::Sym(s) => quote(p.name(*s)),
    }
}

fn nary(out: &mut String, p: &ConstraintProgram, op: &str, fs: &[Formula]) {
    out.push('(');
    out.push_str(op);
    for f in fs {
        out.push(' ');
        formula(out, p, f);
    }
    out.push(')');
}

fn formula(out: &mut String, p: &ConstraintProgram, f: &Formula) {
    match f {
        Formula::True => out.push_str("true"),
        Formula::False => out.push_str("false"),
        Formula::Var(s) => out.push_str(&quote(p.name(*s))),
        Formula::Not(g) => nary(out, p, "not", std::slice::from_ref(g)),
        Formula::And(fs) => nary(out, p, "and", fs),
        Formula::Or(fs) => nary(out, p, "or", fs),
        Formula::Implies(a, b) => nary(out, p, "=>", &[(**a).clone(), (**b).clone()]),
        Formula::Iff(a, b) => nary(out, p, "=", &[(**a).clone(), (**b).clone()]),
        Formula::Eq(a, b) => write!(out, "(= {} {})", term(p, a), term(p, b)).unwrap(),
        Formula::Lt(a, b) => write!(out, "(< {} {})", term(p, a), term(p, b)).unwrap(),
        Formula::Le(a, b) => write!(out, "(<= {} {})", term(p, a), term(p, b)).unwrap(),
        Formula::Distinct(ts) => {
            out.push_str("(distinct");
            for t in ts {
                out.push(' ');
                out.push_str(&term(p, t));
            }
            out.push(')');
        }
    }
}

pub fn to_smtlib(program: &ConstraintProgram) -> String {
    let mut out = String::from("(set-logic QF_LIA)\n");
    for (s, decl) in program.declarations() {
        let name = quote(&decl.name);
        match &decl.sort {
            Sort::Bool => writeln!(out, "(declare-const {name} Bool)").unwrap(),
            Sort::Int { min, max } => {
                writeln!(out, "(declare-const {name} Int)").unwrap();
                if let Some(lo) = min {
                    writeln!(out, "(assert (<= {} {name}))", int(*lo)).unwrap();
                }
                if let Some(hi) = max {
                    writeln!(out, "(assert (<= {name} {}))", int(*hi)).unwrap();
                }
            }
            Sort::Enum(dom) => {
                writeln!(out, "(declare-const {name} Int)").unwrap();
                let alts: Vec<String> = dom.iter().map(|v| format!("(= {name} {})", int(*v))).collect();
                if alts.len() == 1 {
                    writeln!(out, "(assert {})", alts[0]).unwrap();
                } else {
                    writeln!(out, "(assert (or {}))", alts.join(" ")).unwrap();
                }
            }
        }
        if let Some(note) = program.note(s) {
            writeln!(out, "; {} = {}", decl.name, note.replace('\n', " ")).unwrap();
        }
    }
    for f in program.assertions() {
        out.push_str("(assert ");
        formula(&mut out, program, f);
        out.push_str(")\n");
    }
    out.push_str("(check-sat)\n");
    out
}
