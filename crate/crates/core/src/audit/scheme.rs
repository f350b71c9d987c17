//! Transaction schemes: how audit entries are grouped into ledger payloads.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use uuid::Uuid;

use super::codec::{canonical_encode, canonical_encode_many};
use super::model::AuditEntry;
use super::AuditError;
use crate::digest::digest;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TransactionScheme {
    /// All entries of one application transaction in a single payload.
    #[serde(rename = "per-tx")]
    #[default]
    PerTransaction,
    /// One payload per entry.
    PerRecord,
    /// The 32-byte digest of the per-transaction encoding.
    #[serde(rename = "fixed")]
    FixedLength,
}

impl TransactionScheme {
    pub fn as_str(self) -> &'static str {
        match self {
            TransactionScheme::PerTransaction => "per-tx",
            TransactionScheme::PerRecord => "per-record",
            TransactionScheme::FixedLength => "fixed",
        }
    }
}

impl fmt::Display for TransactionScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TransactionScheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "per-tx" | "per-transaction" => Ok(TransactionScheme::PerTransaction),
            "per-record" => Ok(TransactionScheme::PerRecord),
            "fixed" | "fixed-length" => Ok(TransactionScheme::FixedLength),
            other => Err(format!("unknown scheme `{other}` (per-tx|per-record|fixed)")),
        }
    }
}

/// One unit submitted to consensus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransactionPayload {
    /// Id of the (first) entry the payload carries.
    pub tx_id: Uuid,
    pub bytes: Vec<u8>,
}

pub fn encode_transaction(
    entries: &[AuditEntry],
    scheme: TransactionScheme,
) -> Result<Vec<TransactionPayload>, AuditError> {
    let first = entries.first().ok_or(AuditError::EmptyTransaction)?;
    match scheme {
        TransactionScheme::PerRecord => Ok(entries
            .iter()
            .map(|e| TransactionPayload {
                tx_id: e.id,
                bytes: canonical_encode(e),
            })
            .collect()),
        TransactionScheme::PerTransaction | TransactionScheme::FixedLength => {
            if entries.iter().any(|e| e.session_id != first.session_id) {
                return Err(AuditError::MixedSession);
            }
            let combined = canonical_encode_many(entries);
            let bytes = if scheme == TransactionScheme::FixedLength {
                digest(&combined).as_bytes().to_vec()
            } else {
                combined
            };
            Ok(vec![TransactionPayload {
                tx_id: first.id,
                bytes,
            }])
        }
    }
}
