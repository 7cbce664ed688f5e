use std::time::{Duration, Instant};

use crate::encode::Grounding;
use crate::program::{ConstraintProgram, Formula, Model, Symbol};
use crate::sat::{Limits, Outcome};
use crate::SolverError;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SatResult {
    Sat(Model),
    Unsat,
    Unknown(String),
}

impl SatResult {
    pub fn is_sat(&self) -> bool {
        matches!(self, SatResult::Sat(_))
    }

    pub fn label(&self) -> &'static str {
        match self {
            SatResult::Sat(_) => "sat",
            SatResult::Unsat => "unsat",
            SatResult::Unknown(_) => "unknown",
        }
    }
}

/// Resource limits for one solver call.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Budget {
    pub timeout: Option<Duration>,
    pub max_conflicts: Option<u64>,
}

impl Budget {
    pub fn unlimited() -> Self {
        Budget::default()
    }

    pub fn with_timeout(timeout: Duration) -> Self {
        Budget {
            timeout: Some(timeout),
            max_conflicts: None,
        }
    }

    fn limits(&self) -> Limits {
        Limits {
            deadline: self.timeout.map(|t| Instant::now() + t),
            max_conflicts: self.max_conflicts,
        }
    }
}

pub trait Backend: Send + Sync {
    fn name(&self) -> &str;
    fn check_sat(&self, program: &ConstraintProgram, budget: &Budget) -> Result<SatResult, SolverError>;
}

/// In-process CDCL solver with a difference-logic theory for `Int` symbols.
#[derive(Clone, Copy, Debug, Default)]
pub struct NativeBackend {
    pub seed: u64,
}

impl NativeBackend {
    pub fn new(seed: u64) -> Self {
        NativeBackend { seed }
    }

    /// Opens an incremental session: assertions may be added between checks.
    pub fn session(&self, program: &ConstraintProgram) -> NativeSession {
        NativeSession {
            grounding: Grounding::new(program, self.seed),
            program: program.clone(),
        }
    }
}

impl Backend for NativeBackend {
    fn name(&self) -> &str {
        "native"
    }

    fn check_sat(&self, program: &ConstraintProgram, budget: &Budget) -> Result<SatResult, SolverError> {
        self.session(program).check(budget)
    }
}

pub struct NativeSession {
    grounding: Grounding,
    program: ConstraintProgram,
}

impl NativeSession {
    pub fn program(&self) -> &ConstraintProgram {
        &self.program
    }

    pub fn assert(&mut self, f: Formula) -> Result<(), SolverError> {
        self.program.assert(f.clone())?;
        self.grounding.assert(&f);
        Ok(())
    }

    pub fn block(&mut self, symbols: &[Symbol], model: &Model) {
        let clause = crate::program::blocking_clause(symbols, model);
        self.program.block(symbols, model);
        self.grounding.assert(&clause);
    }

    pub fn check(&mut self, budget: &Budget) -> Result<SatResult, SolverError> {
        match self.grounding.solve(&budget.limits()) {
            Outcome::Sat => {
                let model = self.grounding.model();
                if !self.program.satisfied_by(&model) {
                    return Err(SolverError::InvalidModel);
                }
                Ok(SatResult::Sat(model))
            }
            Outcome::Unsat => Ok(SatResult::Unsat),
            Outcome::Unknown(reason) => Ok(SatResult::Unknown(reason)),
        }
    }
}

/// Names accepted by [`backend_by_name`].
pub const BACKENDS: &[&str] = &["native"];

pub fn backend_by_name(name: &str, seed: u64) -> Result<Box<dyn Backend>, SolverError> {
    match name {
        "native" => Ok(Box::new(NativeBackend::new(seed))),
        other => Err(SolverError::BackendUnavailable(other.to_string())),
    }
}

/// Solves with the default backend and no resource limits.
pub fn check_sat(program: &ConstraintProgram) -> Result<SatResult, SolverError> {
    NativeBackend::default().check_sat(program, &Budget::unlimited())
}
