//! Execution histories, trace files, serializability checking, prediction of
//! unserializable histories and a simulated key-value store.

pub mod checker;
pub mod history;
pub mod predictor;
pub mod sample;
pub mod store;
pub mod trace;
pub mod trace_io;

pub use history::{build_history, Edge, EdgeLabel, Event, EventKind, ExecutionHistory, HistoryError, KeyId, SessionId, Transaction, TxnId};
pub use trace::{Boundary, SessionTrace, Trace, TxnRecord, TxnStatus};
