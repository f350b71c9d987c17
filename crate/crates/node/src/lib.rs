//! A networked ingest node: one PBFT replica behind an HTTP API, talking to
//! its peers over authenticated TCP links.
//!
//! The replica logic lives in the `blockaudit` crate; this crate adds keys,
//! the peer master list, transport, persistence and the command-line tool.

pub mod cli;
mod http;
pub mod keys;
pub mod master;
mod node;
mod service;
pub mod transport;

use std::path::PathBuf;

pub use http::ApiState;
pub use keys::{NodeKey, PeerKeys};
pub use master::{PeerMasterList, PeerRecord};
pub use node::{bootstrap, NodeOptions, RunningNode};
pub use service::{IngestReceipt, ReceiptStatus, Shared};

#[derive(Debug, thiserror::Error)]
pub enum NodeError {
    #[error("peer master list: {0}")]
    MasterList(String),
    #[error("key: {0}")]
    Key(String),
    #[error("replica {0} is not in the peer master list")]
    SelfNotInList(u32),
    #[error("local key does not match the master list entry for replica {0}")]
    KeyMismatch(u32),
    #[error("cannot bind {0}")]
    BindFailure(String),
    #[error("{0} already holds a ledger; start from an empty data directory")]
    ExistingLedger(PathBuf),
    #[error(transparent)]
    Ledger(#[from] blockaudit::ledger::LedgerError),
    #[error(transparent)]
    Pbft(#[from] blockaudit::pbft::PbftError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
