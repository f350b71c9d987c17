//! The audit packet JSON format.
//!
//! Canonical form: fields in the fixed order below, details ordered by
//! property name then id, no insignificant whitespace, `/` escaped as `\/`
//! and dates in the Microsoft `\/Date(<millis>±hhmm)\/` form.
//!
//! ```text
//! {"AppId":..,"ClassName":..,"CreatedDate":..,"EntityId":..,"EventType":..,
//!  "Id":..,"SessionId":..,"Url":..,"UserId":..,
//!  "Details":[{"Id":..,"NewValue":..,"OldValue":..,"PropertyName":..}]}
//! ```

use std::borrow::Cow;
use std::sync::OnceLock;

use regex::Regex;
use serde_json::{Map, Value};
use uuid::Uuid;

use super::model::{AuditDetail, AuditEntry, EntityKey, EventType};
use super::AuditError;
use crate::time::CanonicalTimestamp;

const ENTRY_FIELDS: &[&str] = &[
    "AppId",
    "ClassName",
    "CreatedDate",
    "EntityId",
    "EventType",
    "Id",
    "SessionId",
    "Url",
    "UserId",
    "Details",
];

fn push_json_str(out: &mut String, s: &str) {
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '/' => out.push_str("\\/"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            '\u{8}' => out.push_str("\\b"),
            '\u{c}' => out.push_str("\\f"),
            c if (c as u32) < 0x20 => out.push_str(&format!("\\u{:04x}", c as u32)),
            c => out.push(c),
        }
    }
    out.push('"');
}

fn push_opt_str(out: &mut String, s: Option<&str>) {
    match s {
        Some(s) => push_json_str(out, s),
        None => out.push_str("null"),
    }
}

fn push_entry(out: &mut String, entry: &AuditEntry) {
    let sorted;
    let entry = if entry.is_canonical() {
        entry
    } else {
        let mut e = entry.clone();
        e.canonicalize();
        sorted = e;
        &sorted
    };
    out.push_str("{\"AppId\":");
    push_json_str(out, &entry.app_id);
    out.push_str(",\"ClassName\":");
    push_json_str(out, &entry.class_name);
    out.push_str(",\"CreatedDate\":");
    push_json_str(out, &entry.created_date.to_ms_wire());
    out.push_str(",\"EntityId\":");
    match &entry.entity_id {
        EntityKey::Int(v) => out.push_str(&v.to_string()),
        EntityKey::Str(s) => push_json_str(out, s),
    }
    out.push_str(",\"EventType\":");
    push_json_str(out, entry.event_type.wire_name());
    out.push_str(",\"Id\":");
    push_json_str(out, &entry.id.hyphenated().to_string());
    out.push_str(",\"SessionId\":");
    push_json_str(out, &entry.session_id.hyphenated().to_string());
    out.push_str(",\"Url\":");
    push_json_str(out, &entry.url);
    out.push_str(",\"UserId\":");
    out.push_str(&entry.user_id.to_string());
    out.push_str(",\"Details\":[");
    for (i, d) in entry.details.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str("{\"Id\":");
        push_json_str(out, &d.id.hyphenated().to_string());
        out.push_str(",\"NewValue\":");
        push_opt_str(out, d.new_value.as_deref());
        out.push_str(",\"OldValue\":");
        push_opt_str(out, d.old_value.as_deref());
        out.push_str(",\"PropertyName\":");
        push_json_str(out, &d.property_name);
        out.push('}');
    }
    out.push_str("]}");
}

/// Deterministic byte encoding of one entry.
pub fn canonical_encode(entry: &AuditEntry) -> Vec<u8> {
    let mut out = String::with_capacity(256 + entry.details.len() * 128);
    push_entry(&mut out, entry);
    out.into_bytes()
}

/// Canonical JSON array of entries, in the given order.
pub(crate) fn canonical_encode_many(entries: &[AuditEntry]) -> Vec<u8> {
    let mut out = String::from("[");
    for (i, e) in entries.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        push_entry(&mut out, e);
    }
    out.push(']');
    out.into_bytes()
}

fn bare_event_type() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r#"("EventType"\s*:\s*)(?i:(INSERT|UPDATE|DELETE))\b"#).unwrap()
    })
}

/// Older emitters wrote the event type as a bare token (`"EventType":UPDATE`).
fn quote_bare_event_type(text: &str) -> Cow<'_, str> {
    bare_event_type().replace_all(text, "$1\"$2\"")
}

fn schema(msg: impl Into<String>) -> AuditError {
    AuditError::SchemaViolation(msg.into())
}

fn take_str(obj: &Map<String, Value>, key: &str) -> Result<String, AuditError> {
    match obj.get(key) {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(_) => Err(schema(format!("`{key}` must be a string"))),
        None => Err(schema(format!("missing `{key}`"))),
    }
}

fn take_uuid(obj: &Map<String, Value>, key: &str) -> Result<Uuid, AuditError> {
    let s = take_str(obj, key)?;
    Uuid::try_parse(&s).map_err(|_| schema(format!("`{key}` is not a UUID: `{s}`")))
}

fn take_opt_str(obj: &Map<String, Value>, key: &str) -> Result<Option<String>, AuditError> {
    match obj.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(s.clone())),
        Some(_) => Err(schema(format!("`{key}` must be a string or null"))),
    }
}

fn detail_from_value(value: &Value) -> Result<AuditDetail, AuditError> {
    let obj = value
        .as_object()
        .ok_or_else(|| schema("detail must be an object"))?;
    for key in obj.keys() {
        if !matches!(
            key.as_str(),
            "Id" | "NewValue" | "OldValue" | "PropertyName" | "Name"
        ) {
            return Err(schema(format!("unexpected detail field `{key}`")));
        }
    }
    let property_name = match (obj.contains_key("PropertyName"), obj.contains_key("Name")) {
        (true, true) => return Err(schema("detail has both `PropertyName` and `Name`")),
        (true, false) => take_str(obj, "PropertyName")?,
        (false, true) => take_str(obj, "Name")?,
        (false, false) => return Err(schema("missing `PropertyName`")),
    };
    Ok(AuditDetail {
        id: take_uuid(obj, "Id")?,
        property_name,
        old_value: take_opt_str(obj, "OldValue")?,
        new_value: take_opt_str(obj, "NewValue")?,
    })
}

pub(crate) fn entry_from_value(value: &Value) -> Result<AuditEntry, AuditError> {
    let obj = value
        .as_object()
        .ok_or_else(|| schema("packet must be a JSON object"))?;
    for key in obj.keys() {
        if !ENTRY_FIELDS.contains(&key.as_str()) {
            return Err(schema(format!("unexpected field `{key}`")));
        }
    }
    let created_raw = take_str(obj, "CreatedDate")?;
    let created_date = CanonicalTimestamp::parse_wire(&created_raw)
        .map_err(|_| schema(format!("bad `CreatedDate`: `{created_raw}`")))?;
    let entity_id = match obj.get("EntityId") {
        Some(Value::Number(n)) => EntityKey::Int(
            n.as_i64()
                .ok_or_else(|| schema("`EntityId` must be an integer or string"))?,
        ),
        Some(Value::String(s)) => EntityKey::Str(s.clone()),
        Some(_) => return Err(schema("`EntityId` must be an integer or string")),
        None => return Err(schema("missing `EntityId`")),
    };
    let event_type: EventType = take_str(obj, "EventType")?.parse().map_err(schema)?;
    let user_id = match obj.get("UserId") {
        Some(Value::Number(n)) => n
            .as_i64()
            .ok_or_else(|| schema("`UserId` must be an integer"))?,
        Some(_) => return Err(schema("`UserId` must be an integer")),
        None => return Err(schema("missing `UserId`")),
    };
    let details = match obj.get("Details") {
        Some(Value::Array(items)) => items
            .iter()
            .map(detail_from_value)
            .collect::<Result<Vec<_>, _>>()?,
        Some(_) => return Err(schema("`Details` must be an array")),
        None => return Err(schema("missing `Details`")),
    };
    let mut entry = AuditEntry {
        app_id: take_str(obj, "AppId")?,
        class_name: take_str(obj, "ClassName")?,
        created_date,
        entity_id,
        event_type,
        id: take_uuid(obj, "Id")?,
        session_id: take_uuid(obj, "SessionId")?,
        url: take_str(obj, "Url")?,
        user_id,
        details,
    };
    entry.check_invariants().map_err(schema)?;
    entry.canonicalize();
    Ok(entry)
}

fn parse_value(bytes: &[u8]) -> Result<Value, AuditError> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| AuditError::MalformedPacket(format!("not UTF-8: {e}")))?;
    let text = quote_bare_event_type(text);
    serde_json::from_str(&text).map_err(|e| AuditError::MalformedPacket(e.to_string()))
}

/// Parses and validates one audit packet.
pub fn parse_packet(bytes: &[u8]) -> Result<AuditEntry, AuditError> {
    entry_from_value(&parse_value(bytes)?)
}

/// Decodes a ledger payload written by the per-record (single object) or
/// per-transaction (array) scheme.
pub fn decode_payload(bytes: &[u8]) -> Result<Vec<AuditEntry>, AuditError> {
    match parse_value(bytes)? {
        Value::Array(items) => items.iter().map(entry_from_value).collect(),
        v @ Value::Object(_) => Ok(vec![entry_from_value(&v)?]),
        _ => Err(schema("payload is neither an entry nor a list of entries")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const LISTING: &str = include_str!("../../tests/data/listing1.json");
    const GOLDEN: &str = include_str!("../../tests/data/listing1.canonical.json");

    #[test]
    fn listing_parses() {
        let e = parse_packet(LISTING.as_bytes()).unwrap();
        assert_eq!(e.event_type, EventType::Update);
        assert_eq!(e.user_id, 666);
        assert_eq!(e.entity_id, EntityKey::Int(161031));
        assert_eq!(e.details.len(), 2);
        assert_eq!(e.details[0].property_name, "DBVersion");
        assert_eq!(
            e.url,
            "/SAGE/Building/Inspection/InspectionReport.aspx?srcTp=309&srcId=17552018&InspectionTypeId=61663"
        );
    }

    #[test]
    fn listing_encodes_to_golden() {
        let e = parse_packet(LISTING.as_bytes()).unwrap();
        assert_eq!(
            String::from_utf8(canonical_encode(&e)).unwrap(),
            GOLDEN.trim_end()
        );
    }

    #[test]
    fn empty_details_encoded() {
        let mut e = parse_packet(LISTING.as_bytes()).unwrap();
        e.details.clear();
        let bytes = canonical_encode(&e);
        assert!(String::from_utf8(bytes.clone()).unwrap().ends_with("\"Details\":[]}"));
        assert_eq!(parse_packet(&bytes).unwrap(), e);
    }

    #[test]
    fn detail_construction_order_is_irrelevant() {
        let a = parse_packet(LISTING.as_bytes()).unwrap();
        let mut b = a.clone();
        b.details.reverse();
        assert_eq!(canonical_encode(&a), canonical_encode(&b));
    }

    #[test]
    fn truncated_is_malformed() {
        let cut = &LISTING.as_bytes()[..LISTING.len() / 2];
        assert!(matches!(parse_packet(cut), Err(AuditError::MalformedPacket(_))));
        assert!(matches!(parse_packet(&[0xff, 0xfe]), Err(AuditError::MalformedPacket(_))));
    }

    #[test]
    fn closed_enum_and_schema_rules() {
        let merge = GOLDEN.replace("\"UPDATE\"", "\"MERGE\"");
        assert!(matches!(
            parse_packet(merge.as_bytes()),
            Err(AuditError::SchemaViolation(_))
        ));
        let extra = GOLDEN.replacen("{\"AppId\"", "{\"Extra\":1,\"AppId\"", 1);
        assert!(matches!(
            parse_packet(extra.as_bytes()),
            Err(AuditError::SchemaViolation(_))
        ));
        let missing = GOLDEN.replacen("\"UserId\":666,", "", 1);
        assert!(matches!(
            parse_packet(missing.as_bytes()),
            Err(AuditError::SchemaViolation(_))
        ));
        let bad_uuid = GOLDEN.replacen("9ceb8c2c-154a", "9ceb8c2c-XXXX", 1);
        assert!(matches!(
            parse_packet(bad_uuid.as_bytes()),
            Err(AuditError::SchemaViolation(_))
        ));
        let no_change = GOLDEN.replacen("\"NewValue\":\"10\"", "\"NewValue\":\"9\"", 1);
        assert!(matches!(
            parse_packet(no_change.as_bytes()),
            Err(AuditError::SchemaViolation(_))
        ));
    }

    #[test]
    fn name_alias_and_iso_dates_accepted() {
        let aliased = GOLDEN
            .replace("\"PropertyName\"", "\"Name\"")
            .replace("\\/Date(1532366360155-0400)\\/", "2018-07-23T13:19:20.155-04:00");
        let e = parse_packet(aliased.as_bytes()).unwrap();
        assert_eq!(canonical_encode(&e), GOLDEN.trim_end().as_bytes());
    }

    #[test]
    fn string_entity_ids_preserved() {
        let s = GOLDEN.replace("\"EntityId\":161031", "\"EntityId\":\"161031\"");
        let e = parse_packet(s.as_bytes()).unwrap();
        assert_eq!(e.entity_id, EntityKey::Str("161031".into()));
        assert_eq!(canonical_encode(&e), s.trim_end().as_bytes());
    }

    #[test]
    fn escaping_round_trips() {
        let mut e = parse_packet(LISTING.as_bytes()).unwrap();
        e.url = "a\"b\\c/d\n\u{1}é".into();
        let bytes = canonical_encode(&e);
        assert_eq!(parse_packet(&bytes).unwrap(), e);
    }

    #[test]
    fn payload_decoding() {
        let e = parse_packet(LISTING.as_bytes()).unwrap();
        let many = canonical_encode_many(&[e.clone(), e.clone()]);
        assert_eq!(decode_payload(&many).unwrap(), vec![e.clone(), e.clone()]);
        assert_eq!(decode_payload(&canonical_encode(&e)).unwrap(), vec![e]);
        assert!(decode_payload(&[7u8; 32]).is_err());
    }
}
