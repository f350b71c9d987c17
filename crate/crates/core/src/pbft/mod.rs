//! Byzantine agreement over batches of audit transactions.
//!
//! [`Replica`] is a sans-IO state machine; the simulator and the network node
//! both drive it. Timing checks live in [`ordering`], the approval window in
//! [`window`].

pub mod crypto;
pub mod ordering;
mod replica;
pub mod types;
pub mod viewchange;
pub mod window;

pub use crypto::{MacKeyring, MacSigner, Signer, Verifier};
pub use ordering::{admit_request, replica_recheck, Admission, Recheck};
pub use replica::{
    AbortReason, AuditorNotification, Event, ExecutedTx, Execution, FlagReason, Output, Replica, ReplicaConfig,
    ViewChangeConfig,
};
pub use types::{
    primary_for_view, Batch, ConsensusMsg, MsgBody, MsgKind, PreparedEntry, QuorumConfig, ReplicaId, Request,
};
pub use window::{
    choose_phase_count, compute_window, detect_split_adversary, ApprovalRounds, VerificationWindow, WindowConfig,
    WindowVerdict,
};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum PbftError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("phase range [{0}, {1}] is empty or below 2")]
    InvalidPhaseRange(u32, u32),
    #[error("split detection needs at least two phases, got {0}")]
    InsufficientPhases(usize),
    #[error("bad signature from {0}")]
    BadSignature(ReplicaId),
    #[error("message for view {got} while in view {current}")]
    StaleView { got: u64, current: u64 },
    #[error("{0} proposed but is not primary")]
    NotPrimary(ReplicaId),
    #[error("batch does not match its digest")]
    BadDigest,
    #[error("unknown replica {0}")]
    UnknownReplica(ReplicaId),
    #[error("invalid new-view: {0}")]
    InvalidNewView(String),
    #[error("unexpected {0:?} message")]
    UnexpectedKind(MsgKind),
}
