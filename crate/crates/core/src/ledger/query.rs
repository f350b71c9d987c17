use serde::{Deserialize, Serialize};
use uuid::Uuid;

use super::restore::entries_of;
use super::{Chain, ChainKind, CommittedTx, LedgerError};
use crate::audit::{AuditEntry, EntityKey};
use crate::time::CanonicalTimestamp;

/// Conjunctive filter. A transaction matches when one of its entries
/// satisfies every content field that is set.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryFilter {
    pub tx_id: Option<Uuid>,
    pub user_id: Option<i64>,
    pub session_id: Option<Uuid>,
    pub class_name: Option<String>,
    pub entity_id: Option<EntityKey>,
    /// Inclusive bounds on the confirmation time.
    pub time_range: Option<(CanonicalTimestamp, CanonicalTimestamp)>,
}

impl QueryFilter {
    fn content_field(&self) -> Option<&'static str> {
        if self.user_id.is_some() {
            Some("user_id")
        } else if self.session_id.is_some() {
            Some("session_id")
        } else if self.class_name.is_some() {
            Some("class_name")
        } else if self.entity_id.is_some() {
            Some("entity_id")
        } else {
            None
        }
    }

    fn entry_matches(&self, e: &AuditEntry) -> bool {
        self.user_id.is_none_or(|u| e.user_id == u)
            && self.session_id.is_none_or(|s| e.session_id == s)
            && self.class_name.as_ref().is_none_or(|c| &e.class_name == c)
            && self.entity_id.as_ref().is_none_or(|k| &e.entity_id == k)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueryHit<'a> {
    pub height: u64,
    pub tx: &'a CommittedTx,
}

/// Matching transactions in commit order.
pub fn query<'a>(chain: &'a Chain, filter: &QueryFilter) -> Result<Vec<QueryHit<'a>>, LedgerError> {
    let content = filter.content_field();
    if let (ChainKind::Detection, Some(field)) = (chain.kind(), content) {
        return Err(LedgerError::UnsupportedFilter(field));
    }
    let candidates: Vec<(u64, &CommittedTx)> = match filter.tx_id {
        Some(id) => chain.locate(&id).into_iter().collect(),
        None => chain.txs().collect(),
    };
    let mut hits = Vec::new();
    for (height, tx) in candidates {
        if let Some((from, to)) = filter.time_range {
            let t = tx.t_c.epoch_millis;
            if t < from.epoch_millis || t > to.epoch_millis {
                continue;
            }
        }
        if content.is_some() && !entries_of(tx)?.iter().any(|e| filter.entry_matches(e)) {
            continue;
        }
        hits.push(QueryHit { height, tx });
    }
    Ok(hits)
}
