//! Recorded event streams, including aborted transactions.

use std::collections::BTreeMap;
use std::fmt;

use crate::history::{Event, SessionId, TxnId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TxnStatus {
    Committed,
    Aborted,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TxnRecord {
    pub tid: TxnId,
    pub ops: Vec<Event>,
    pub status: TxnStatus,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SessionTrace {
    pub sid: SessionId,
    pub txns: Vec<TxnRecord>,
}

/// Per-session cut position of a predicted history.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Boundary {
    At(u32),
    Infinity,
}

impl Boundary {
    /// Numeric form; infinity maps to `u32::MAX`, above every real position.
    pub fn as_pos(self) -> u32 {
        match self {
            Boundary::At(p) => p,
            Boundary::Infinity => u32::MAX,
        }
    }

    pub fn from_pos(p: u32) -> Self {
        if p == u32::MAX {
            Boundary::Infinity
        } else {
            Boundary::At(p)
        }
    }

    pub fn includes(self, pos: u32) -> bool {
        pos <= self.as_pos()
    }
}

impl fmt::Display for Boundary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Boundary::At(p) => write!(f, "{p}"),
            Boundary::Infinity => write!(f, "inf"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Trace {
    pub sessions: Vec<SessionTrace>,
    /// Global execution order of transaction attempts, if recorded.
    pub schedule: Option<Vec<TxnId>>,
    /// Present only in predicted-history files.
    pub boundaries: BTreeMap<SessionId, Boundary>,
}

impl Trace {
    pub fn records(&self) -> impl Iterator<Item = (SessionId, &TxnRecord)> {
        self.sessions
            .iter()
            .flat_map(|s| s.txns.iter().map(move |t| (s.sid, t)))
    }

    pub fn record(&self, tid: TxnId) -> Option<(SessionId, &TxnRecord)> {
        self.records().find(|(_, r)| r.tid == tid)
    }

    pub fn session(&self, sid: SessionId) -> Option<&SessionTrace> {
        self.sessions.iter().find(|s| s.sid == sid)
    }
}
