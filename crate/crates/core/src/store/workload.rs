//! Transaction bodies and built-in workloads.
//!
//! Scripted workloads use a line-based format. `#` starts a comment.
//!
//! ```text
//! session                      start a new session
//! txn                          start a transaction in the current session
//! get <key> -> <var>           read a key into a variable
//! put <key> <expr>             write an expression (`a + 3 - b`) to a key
//! put <key> <expr> if <var> < <int>
//!                              write only when the guard holds
//! abort_if <var> < <int>       abort the transaction when the guard holds
//! commit                       end the transaction
//! ```

use std::collections::BTreeMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::history::KeyId;

/// Store interface seen by a running transaction.
pub trait TxnOps {
    fn get(&mut self, key: &KeyId) -> i64;
    fn put(&mut self, key: &KeyId, value: i64);
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TxnEnd {
    Commit,
    Abort,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Operand {
    Var(String),
    Lit(i64),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Expr {
    pub first: Operand,
    /// `(sign, operand)` pairs; sign is +1 or -1.
    pub rest: Vec<(i64, Operand)>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Guard {
    pub var: String,
    pub bound: i64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ScriptOp {
    Get { key: KeyId, var: String },
    Put { key: KeyId, expr: Expr, guard: Option<Guard> },
    AbortIf(Guard),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TxnBody {
    Deposit { key: KeyId, amount: i64 },
    /// Aborts when the balance is below the amount.
    Withdraw { key: KeyId, amount: i64 },
    /// Adds a vote only while no vote has been recorded.
    Vote,
    Balance { acct: u32 },
    DepositChecking { acct: u32, amount: i64 },
    TransactSavings { acct: u32, amount: i64 },
    /// Moves all funds of `from` into `to`'s checking account.
    Amalgamate { from: u32, to: u32 },
    WriteCheck { acct: u32, amount: i64 },
    Script(Vec<ScriptOp>),
}

fn checking(a: u32) -> KeyId {
    KeyId::new(format!("checking{a}"))
}

fn savings(a: u32) -> KeyId {
    KeyId::new(format!("savings{a}"))
}

impl TxnBody {
    pub fn run(&self, ops: &mut dyn TxnOps) -> TxnEnd {
        match self {
            TxnBody::Deposit { key, amount } => {
                let b = ops.get(key);
                ops.put(key, b + amount);
            }
            TxnBody::Withdraw { key, amount } => {
                let b = ops.get(key);
                if b < *amount {
                    return TxnEnd::Abort;
                }
                ops.put(key, b - amount);
            }
            TxnBody::Vote => {
                let key = KeyId::new("votes");
                let v = ops.get(&key);
                if v < 1 {
                    ops.put(&key, v + 1);
                }
            }
            TxnBody::Balance { acct } => {
                ops.get(&checking(*acct));
                ops.get(&savings(*acct));
            }
            TxnBody::DepositChecking { acct, amount } => {
                let c = ops.get(&checking(*acct));
                ops.put(&checking(*acct), c + amount);
            }
            TxnBody::TransactSavings { acct, amount } => {
                let s = ops.get(&savings(*acct));
                if s + amount < 0 {
                    return TxnEnd::Abort;
                }
                ops.put(&savings(*acct), s + amount);
            }
            TxnBody::Amalgamate { from, to } => {
                let c = ops.get(&checking(*from));
                let s = ops.get(&savings(*from));
                let d = ops.get(&checking(*to));
                ops.put(&checking(*from), 0);
                ops.put(&savings(*from), 0);
                ops.put(&checking(*to), d + c + s);
            }
            TxnBody::WriteCheck { acct, amount } => {
                let c = ops.get(&checking(*acct));
                let s = ops.get(&savings(*acct));
                let penalty = if c + s < *amount { 1 } else { 0 };
                ops.put(&checking(*acct), c - amount - penalty);
            }
            TxnBody::Script(script) => {
                let mut env: BTreeMap<&str, i64> = BTreeMap::new();
                let holds = |env: &BTreeMap<&str, i64>, g: &Guard| env.get(g.var.as_str()).copied().unwrap_or(0) < g.bound;
                for op in script {
                    match op {
                        ScriptOp::Get { key, var } => {
                            let v = ops.get(key);
                            env.insert(var, v);
                        }
                        ScriptOp::Put { key, expr, guard } => {
                            if guard.as_ref().map_or(true, |g| holds(&env, g)) {
                                ops.put(key, eval(expr, &env));
                            }
                        }
                        ScriptOp::AbortIf(g) => {
                            if holds(&env, g) {
                                return TxnEnd::Abort;
                            }
                        }
                    }
                }
            }
        }
        TxnEnd::Commit
    }
}

fn eval(e: &Expr, env: &BTreeMap<&str, i64>) -> i64 {
    let val = |o: &Operand| match o {
        Operand::Lit(v) => *v,
        Operand::Var(n) => env.get(n.as_str()).copied().unwrap_or(0),
    };
    e.rest.iter().fold(val(&e.first), |acc, (s, o)| acc + s * val(o))
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("script line {line}: {message}")]
pub struct ScriptError {
    pub line: usize,
    pub message: String,
}

/// Session scripts: one list of transaction bodies per session.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Script {
    pub sessions: Vec<Vec<Vec<ScriptOp>>>,
}

fn operand(tok: &str) -> Operand {
    match tok.parse::<i64>() {
        Ok(v) => Operand::Lit(v),
        Err(_) => Operand::Var(tok.to_string()),
    }
}

fn parse_expr(toks: &[&str]) -> Result<Expr, String> {
    let Some((first, rest)) = toks.split_first() else {
        return Err("empty expression".into());
    };
    if rest.len() % 2 != 0 {
        return Err("dangling operator".into());
    }
    let rest = rest
        .chunks(2)
        .map(|c| match c[0] {
            "+" => Ok((1, operand(c[1]))),
            "-" => Ok((-1, operand(c[1]))),
            other => Err(format!("expected + or -, found `{other}`")),
        })
        .collect::<Result<_, _>>()?;
    Ok(Expr {
        first: operand(first),
        rest,
    })
}

fn parse_guard(toks: &[&str]) -> Result<Guard, String> {
    match toks {
        [var, "<", bound] => Ok(Guard {
            var: var.to_string(),
            bound: bound.parse().map_err(|_| format!("bad integer `{bound}`"))?,
        }),
        _ => Err("guard must read `<var> < <int>`".into()),
    }
}

impl Script {
    pub fn parse(text: &str) -> Result<Script, ScriptError> {
        let mut sessions: Vec<Vec<Vec<ScriptOp>>> = Vec::new();
        let mut current: Option<Vec<ScriptOp>> = None;
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let err = |message: String| ScriptError { line, message };
            let toks: Vec<&str> = raw.split('#').next().unwrap().split_whitespace().collect();
            let Some(&head) = toks.first() else { continue };
            match head {
                "session" => {
                    if current.is_some() {
                        return Err(err("previous transaction lacks `commit`".into()));
                    }
                    sessions.push(Vec::new());
                }
                "txn" => {
                    if sessions.is_empty() {
                        return Err(err("`txn` before any `session`".into()));
                    }
                    if current.is_some() {
                        return Err(err("previous transaction lacks `commit`".into()));
                    }
                    current = Some(Vec::new());
                }
                "commit" => {
                    let t = current.take().ok_or_else(|| err("`commit` outside a transaction".into()))?;
                    sessions.last_mut().unwrap().push(t);
                }
                _ => {
                    let body = current.as_mut().ok_or_else(|| err(format!("`{head}` outside a transaction")))?;
                    let op = match (head, &toks[1..]) {
                        ("get", [key, "->", var]) => ScriptOp::Get {
                            key: KeyId::new(*key),
                            var: var.to_string(),
                        },
                        ("put", [key, rest @ ..]) => {
                            let (expr, guard) = match rest.iter().position(|t| *t == "if") {
                                Some(i) => (&rest[..i], Some(parse_guard(&rest[i + 1..]).map_err(err)?)),
                                None => (rest, None),
                            };
                            ScriptOp::Put {
                                key: KeyId::new(*key),
                                expr: parse_expr(expr).map_err(err)?,
                                guard,
                            }
                        }
                        ("abort_if", rest) => ScriptOp::AbortIf(parse_guard(rest).map_err(err)?),
                        _ => return Err(err(format!("cannot parse `{}`", raw.trim()))),
                    };
                    body.push(op);
                }
            }
        }
        if current.is_some() {
            return Err(ScriptError {
                line: text.lines().count(),
                message: "last transaction lacks `commit`".into(),
            });
        }
        Ok(Script { sessions })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Workload {
    DepositDeposit,
    DepositWithdraw,
    Voter,
    SmallbankLite,
    Scripted(Script),
}

impl Workload {
    pub const BUILTIN: [&'static str; 4] = ["deposit-deposit", "deposit-withdraw", "voter", "smallbank-lite"];

    pub fn builtin(name: &str) -> Option<Workload> {
        match name {
            "deposit-deposit" => Some(Workload::DepositDeposit),
            "deposit-withdraw" => Some(Workload::DepositWithdraw),
            "voter" => Some(Workload::Voter),
            "smallbank-lite" => Some(Workload::SmallbankLite),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Workload::DepositDeposit => "deposit-deposit",
            Workload::DepositWithdraw => "deposit-withdraw",
            Workload::Voter => "voter",
            Workload::SmallbankLite => "smallbank-lite",
            Workload::Scripted(_) => "scripted",
        }
    }

    /// Transaction bodies per session, in session order. Sessions are
    /// numbered from 1. Scripted workloads ignore `sessions` and `txns`.
    pub fn programs(&self, sessions: u32, txns: u32, seed: u64) -> Vec<Vec<TxnBody>> {
        if let Workload::Scripted(s) = self {
            return s
                .sessions
                .iter()
                .map(|txns| txns.iter().map(|ops| TxnBody::Script(ops.clone())).collect())
                .collect();
        }
        let acc = KeyId::new("acc");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (1..=sessions)
            .map(|sid| {
                let deposit = TxnBody::Deposit {
                    key: acc.clone(),
                    amount: 50 + 10 * (sid as i64 - 1),
                };
                match self {
                    Workload::DepositDeposit => vec![deposit; txns as usize],
                    Workload::DepositWithdraw if sid % 2 == 1 => vec![deposit; txns as usize],
                    Workload::DepositWithdraw => vec![
                        TxnBody::Withdraw {
                            key: acc.clone(),
                            amount: 30,
                        };
                        (txns / 2).max(1) as usize
                    ],
                    Workload::Voter => vec![TxnBody::Vote; txns as usize],
                    Workload::SmallbankLite => (0..txns).map(|_| smallbank_txn(&mut rng)).collect(),
                    Workload::Scripted(_) => unreachable!(),
                }
            })
            .collect()
    }
}

fn smallbank_txn(rng: &mut ChaCha8Rng) -> TxnBody {
    let a = rng.gen_range(0..2u32);
    let amount = 10 * rng.gen_range(1..=5i64);
    match rng.gen_range(0..5) {
        0 => TxnBody::Balance { acct: a },
        1 => TxnBody::DepositChecking { acct: a, amount },
        2 => TxnBody::TransactSavings { acct: a, amount },
        3 => TxnBody::Amalgamate { from: a, to: 1 - a },
        _ => TxnBody::WriteCheck { acct: a, amount },
    }
}

impl fmt::Display for Workload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}
