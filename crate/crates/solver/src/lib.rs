//! Solver-agnostic constraint programs over booleans, bounded integers and
//! finite enumerations, plus a native CDCL backend with difference logic.
//!
//! ```
//! use txpredict_solver::{check_sat, ConstraintProgram, Formula, SatResult};
//!
//! let mut p = ConstraintProgram::new();
//! let x = p.declare_bool("x").unwrap();
//! p.assert(Formula::var(x)).unwrap();
//! match check_sat(&p).unwrap() {
//!     SatResult::Sat(m) => assert!(m.bool(x)),
//!     other => panic!("{other:?}"),
//! }
//! ```

mod backend;
mod dl;
mod encode;
mod program;
mod sat;
mod smtlib;

pub use backend::{backend_by_name, check_sat, Backend, Budget, NativeBackend, NativeSession, SatResult, BACKENDS};
pub use program::{block_assignment, ConstraintProgram, Declaration, Formula, Model, Sort, Symbol, Term, Value};
pub use smtlib::to_smtlib;

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum SolverError {
    #[error("solver backend `{0}` is not available")]
    BackendUnavailable(String),
    #[error("ill-sorted use of {0}")]
    IllSorted(String),
    #[error("reference to undeclared symbol #{0}")]
    UndeclaredSymbol(u32),
    #[error("symbol `{0}` declared twice")]
    DuplicateSymbol(String),
    #[error("symbol `{0}` has an empty domain")]
    EmptyDomain(String),
    #[error("backend produced a model that violates the program")]
    InvalidModel,
}
