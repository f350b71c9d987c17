//! Hash-chained block storage in two kinds (recovery and detection), with
//! verification, tamper detection, state restoration and queries.

mod block;
mod chain;
mod merkle;
mod query;
mod restore;
mod sizing;
pub mod store;

use uuid::Uuid;

pub use block::{Block, BlockHeader, ChainKind, CommittedTx, HEADER_LEN};
pub use chain::{cross_check, detect_tamper, verify_chain, Chain, VerificationReport, Violation};
pub use merkle::merkle_root;
pub use query::{query, QueryFilter, QueryHit};
pub use restore::{restore_state, RestoredState};
pub use sizing::{check_sizing, DeploymentSizing, SizingViolation};

#[derive(Debug, thiserror::Error)]
pub enum LedgerError {
    #[error("merkle root of an empty leaf set")]
    EmptyLeafSet,
    #[error("a block needs at least one transaction")]
    EmptyBlock,
    #[error("operation requires a {expected:?} chain or matching payload presence")]
    KindMismatch { expected: ChainKind },
    #[error("transaction {0}: {1}")]
    InvalidTx(Uuid, &'static str),
    #[error("no committed entry for {class_name} #{entity_id}")]
    UnknownEntity { class_name: String, entity_id: String },
    #[error("filter on `{0}` needs payloads, which a detection chain does not keep")]
    UnsupportedFilter(&'static str),
    #[error("payload of {0} cannot be decoded: {1}")]
    UndecodablePayload(Uuid, String),
    #[error("corrupt chain file: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
