use std::collections::BTreeMap;

use serde::Serialize;

use super::{Chain, ChainKind, CommittedTx, LedgerError};
use crate::audit::{decode_payload, AuditEntry, EntityKey, EventType};
use crate::digest::Digest32;
use crate::time::CanonicalTimestamp;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "state", content = "properties", rename_all = "lowercase")]
pub enum RestoredState {
    Live(BTreeMap<String, Option<String>>),
    Deleted,
}

/// Decoded entries of a recovery-chain transaction. Fixed-length payloads
/// carry only a digest and decode to nothing.
pub(crate) fn entries_of(tx: &CommittedTx) -> Result<Vec<AuditEntry>, LedgerError> {
    let Some(bytes) = &tx.payload else {
        return Ok(Vec::new());
    };
    match decode_payload(bytes) {
        Ok(entries) => Ok(entries),
        Err(_) if bytes.len() == Digest32::LEN => Ok(Vec::new()),
        Err(e) => Err(LedgerError::UndecodablePayload(tx.tx_id, e.to_string())),
    }
}

/// Replays every committed entry for one entity whose confirmation time is
/// at or before `as_of`, in commit order.
pub fn restore_state(
    recovery: &Chain,
    class_name: &str,
    entity_id: &EntityKey,
    as_of: CanonicalTimestamp,
) -> Result<RestoredState, LedgerError> {
    if recovery.kind() != ChainKind::Recovery {
        return Err(LedgerError::KindMismatch {
            expected: ChainKind::Recovery,
        });
    }
    let mut state: Option<RestoredState> = None;
    for (_, tx) in recovery.txs() {
        if tx.t_c.epoch_millis > as_of.epoch_millis {
            continue;
        }
        for entry in entries_of(tx)? {
            if entry.class_name != class_name || &entry.entity_id != entity_id {
                continue;
            }
            state = Some(apply(state, &entry));
        }
    }
    state.ok_or_else(|| LedgerError::UnknownEntity {
        class_name: class_name.to_string(),
        entity_id: entity_id.to_string(),
    })
}

fn apply(state: Option<RestoredState>, entry: &AuditEntry) -> RestoredState {
    let new_values = entry
        .details
        .iter()
        .map(|d| (d.property_name.clone(), d.new_value.clone()));
    match entry.event_type {
        EventType::Delete => RestoredState::Deleted,
        EventType::Insert => RestoredState::Live(new_values.collect()),
        EventType::Update => {
            let mut props = match state {
                Some(RestoredState::Live(p)) => p,
                _ => BTreeMap::new(),
            };
            props.extend(new_values);
            RestoredState::Live(props)
        }
    }
}
