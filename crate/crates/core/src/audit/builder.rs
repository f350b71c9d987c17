//! Audit generation for the ORM insert/update/delete hooks.

use std::collections::BTreeSet;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uuid::Uuid;

use super::model::{AuditDetail, AuditEntry, EventType, ObjectSnapshot};
use super::AuditError;
use crate::time::CanonicalTimestamp;

/// Source of fresh record ids.
pub trait IdSource {
    fn next_id(&mut self) -> Uuid;
}

/// Random v4 ids from the OS generator.
#[derive(Debug, Default)]
pub struct RandomIds;

impl IdSource for RandomIds {
    fn next_id(&mut self) -> Uuid {
        Uuid::new_v4()
    }
}

/// Reproducible v4-shaped ids from a seeded stream.
#[derive(Debug, Clone)]
pub struct SeededIds(ChaCha8Rng);

impl SeededIds {
    pub fn new(seed: u64) -> Self {
        SeededIds(ChaCha8Rng::seed_from_u64(seed))
    }
}

impl IdSource for SeededIds {
    fn next_id(&mut self) -> Uuid {
        let mut bytes = [0u8; 16];
        self.0.fill_bytes(&mut bytes);
        uuid::Builder::from_random_bytes(bytes).into_uuid()
    }
}

/// Request-scoped values copied into every entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditContext {
    pub app_id: String,
    pub session_id: Uuid,
    pub user_id: i64,
    pub url: String,
    pub now: CanonicalTimestamp,
}

fn entry_for(
    snapshot: &ObjectSnapshot,
    event_type: EventType,
    ctx: &AuditContext,
    ids: &mut dyn IdSource,
    details: Vec<AuditDetail>,
) -> AuditEntry {
    let mut entry = AuditEntry {
        app_id: ctx.app_id.clone(),
        class_name: snapshot.class_name.clone(),
        created_date: ctx.now,
        entity_id: snapshot.entity_key(),
        event_type,
        id: ids.next_id(),
        session_id: ctx.session_id,
        url: ctx.url.clone(),
        user_id: ctx.user_id,
        details,
    };
    entry.canonicalize();
    entry
}

fn guard(snapshot: &ObjectSnapshot) -> Result<(), AuditError> {
    if snapshot.is_audit_type() {
        return Err(AuditError::AuditOfAuditRejected(snapshot.class_name.clone()));
    }
    Ok(())
}

pub fn build_insert_audit(
    snapshot: &ObjectSnapshot,
    ctx: &AuditContext,
    ids: &mut dyn IdSource,
) -> Result<AuditEntry, AuditError> {
    guard(snapshot)?;
    let details: Vec<AuditDetail> = snapshot
        .auditable()
        .map(|(name, value)| AuditDetail {
            id: ids.next_id(),
            property_name: name.clone(),
            old_value: None,
            new_value: value.clone(),
        })
        .collect();
    if details.is_empty() {
        return Err(AuditError::EmptySnapshot);
    }
    Ok(entry_for(snapshot, EventType::Insert, ctx, ids, details))
}

/// Returns `Ok(None)` when no auditable property changed.
///
/// A property missing from one side is compared as null, and null differs
/// from the empty string.
pub fn build_update_audit(
    old: &ObjectSnapshot,
    new: &ObjectSnapshot,
    ctx: &AuditContext,
    ids: &mut dyn IdSource,
) -> Result<Option<AuditEntry>, AuditError> {
    guard(old)?;
    guard(new)?;
    if old.class_name != new.class_name || old.entity_key() != new.entity_key() {
        return Err(AuditError::MismatchedEntity);
    }
    let names: BTreeSet<&String> = old.properties.keys().chain(new.properties.keys()).collect();
    let mut details = Vec::new();
    for name in names {
        if old.suppressed.contains(name) || new.suppressed.contains(name) {
            continue;
        }
        let before = old.properties.get(name).cloned().flatten();
        let after = new.properties.get(name).cloned().flatten();
        if before != after {
            details.push(AuditDetail {
                id: ids.next_id(),
                property_name: name.clone(),
                old_value: before,
                new_value: after,
            });
        }
    }
    if details.is_empty() {
        return Ok(None);
    }
    Ok(Some(entry_for(new, EventType::Update, ctx, ids, details)))
}

pub fn build_delete_audit(
    snapshot: &ObjectSnapshot,
    ctx: &AuditContext,
    ids: &mut dyn IdSource,
) -> Result<AuditEntry, AuditError> {
    guard(snapshot)?;
    let details: Vec<AuditDetail> = snapshot
        .auditable()
        .map(|(name, value)| AuditDetail {
            id: ids.next_id(),
            property_name: name.clone(),
            old_value: value.clone(),
            new_value: None,
        })
        .collect();
    if details.is_empty() {
        return Err(AuditError::EmptySnapshot);
    }
    Ok(entry_for(snapshot, EventType::Delete, ctx, ids, details))
}
