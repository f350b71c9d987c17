//! Audit-log entries: building them from object snapshots, the JSON packet
//! format, and the three transaction encoding schemes.

mod builder;
mod codec;
mod model;
mod scheme;

pub use builder::{
    build_delete_audit, build_insert_audit, build_update_audit, AuditContext, IdSource,
    RandomIds, SeededIds,
};
pub use codec::{canonical_encode, decode_payload, parse_packet};
pub use model::{
    is_audit_class, AuditDetail, AuditEntry, EntityKey, EventType, ObjectSnapshot,
    AUDIT_CLASS_NAMES,
};
pub use scheme::{encode_transaction, TransactionPayload, TransactionScheme};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AuditError {
    #[error("refusing to audit audit-log class `{0}`")]
    AuditOfAuditRejected(String),
    #[error("snapshot has no auditable properties")]
    EmptySnapshot,
    #[error("old and new snapshots refer to different entities")]
    MismatchedEntity,
    #[error("malformed packet: {0}")]
    MalformedPacket(String),
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("entries span more than one session")]
    MixedSession,
    #[error("a transaction needs at least one entry")]
    EmptyTransaction,
}
