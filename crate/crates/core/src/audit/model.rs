use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use uuid::Uuid;

use crate::time::CanonicalTimestamp;

/// Class names that hold audit records themselves. Auditing them would make
/// every audit write produce another audit write.
pub const AUDIT_CLASS_NAMES: &[&str] = &["AuditLog", "AuditLogDetail", "AuditEntry", "AuditDetail"];

/// True when `class_name` (optionally namespace-qualified) names an audit type.
pub fn is_audit_class(class_name: &str) -> bool {
    let simple = class_name.rsplit(['.', '+']).next().unwrap_or(class_name);
    AUDIT_CLASS_NAMES.contains(&simple)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventType {
    Insert,
    Update,
    Delete,
}

impl EventType {
    pub fn wire_name(self) -> &'static str {
        match self {
            EventType::Insert => "INSERT",
            EventType::Update => "UPDATE",
            EventType::Delete => "DELETE",
        }
    }
}

impl FromStr for EventType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "INSERT" => Ok(EventType::Insert),
            "UPDATE" => Ok(EventType::Update),
            "DELETE" => Ok(EventType::Delete),
            _ => Err(format!("unknown event type `{s}`")),
        }
    }
}

impl fmt::Display for EventType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.wire_name())
    }
}

/// Business-object key. Integer keys stay integers on the wire.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EntityKey {
    Int(i64),
    Str(String),
}

impl fmt::Display for EntityKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EntityKey::Int(v) => write!(f, "{v}"),
            EntityKey::Str(s) => f.write_str(s),
        }
    }
}

impl From<i64> for EntityKey {
    fn from(v: i64) -> Self {
        EntityKey::Int(v)
    }
}

impl From<&str> for EntityKey {
    fn from(v: &str) -> Self {
        EntityKey::Str(v.to_string())
    }
}

impl EntityKey {
    /// Integer when `s` is a plain decimal integer, string otherwise.
    pub fn parse_loose(s: &str) -> Self {
        match s.parse::<i64>() {
            Ok(v) if v.to_string() == s => EntityKey::Int(v),
            _ => EntityKey::Str(s.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditDetail {
    pub id: Uuid,
    pub property_name: String,
    pub old_value: Option<String>,
    pub new_value: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub app_id: String,
    pub class_name: String,
    pub created_date: CanonicalTimestamp,
    pub entity_id: EntityKey,
    pub event_type: EventType,
    pub id: Uuid,
    pub session_id: Uuid,
    pub url: String,
    pub user_id: i64,
    pub details: Vec<AuditDetail>,
}

impl AuditEntry {
    /// Puts details into canonical order: by property name, then detail id.
    pub fn canonicalize(&mut self) {
        self.details
            .sort_by(|a, b| (&a.property_name, a.id).cmp(&(&b.property_name, b.id)));
    }

    pub fn is_canonical(&self) -> bool {
        self.details
            .windows(2)
            .all(|w| (&w[0].property_name, w[0].id) <= (&w[1].property_name, w[1].id))
    }

    /// Checks the per-event-type rules on details.
    pub fn check_invariants(&self) -> Result<(), String> {
        if is_audit_class(&self.class_name) {
            return Err(format!("class `{}` is an audit type", self.class_name));
        }
        for d in &self.details {
            match self.event_type {
                EventType::Insert if d.old_value.is_some() => {
                    return Err(format!("insert detail `{}` carries an old value", d.property_name))
                }
                EventType::Delete if d.new_value.is_some() => {
                    return Err(format!("delete detail `{}` carries a new value", d.property_name))
                }
                EventType::Update if d.old_value == d.new_value => {
                    return Err(format!("update detail `{}` records no change", d.property_name))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// The state of one business object as seen by the ORM event hook.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ObjectSnapshot {
    pub class_name: String,
    pub entity_id: Option<EntityKey>,
    pub properties: BTreeMap<String, Option<String>>,
    /// Properties carrying the suppress-audit marker.
    pub suppressed: BTreeSet<String>,
    /// Set by the hook for classes that store audit records.
    pub audit_type: bool,
}

impl ObjectSnapshot {
    pub fn new(class_name: impl Into<String>, entity_id: impl Into<EntityKey>) -> Self {
        ObjectSnapshot {
            class_name: class_name.into(),
            entity_id: Some(entity_id.into()),
            ..Default::default()
        }
    }

    pub fn with(mut self, name: impl Into<String>, value: impl Into<String>) -> Self {
        self.properties.insert(name.into(), Some(value.into()));
        self
    }

    pub fn with_null(mut self, name: impl Into<String>) -> Self {
        self.properties.insert(name.into(), None);
        self
    }

    pub fn suppress(mut self, name: impl Into<String>) -> Self {
        self.suppressed.insert(name.into());
        self
    }

    pub fn is_audit_type(&self) -> bool {
        self.audit_type || is_audit_class(&self.class_name)
    }

    pub(crate) fn entity_key(&self) -> EntityKey {
        self.entity_id
            .clone()
            .unwrap_or_else(|| EntityKey::Str(String::new()))
    }

    /// Non-suppressed properties in name order.
    pub fn auditable(&self) -> impl Iterator<Item = (&String, &Option<String>)> {
        self.properties
            .iter()
            .filter(|(name, _)| !self.suppressed.contains(*name))
    }
}
