//! Build insert, update and delete entries for one entity and print their
//! canonical encodings under each transaction scheme.

use blockaudit::audit::{
    build_delete_audit, build_insert_audit, build_update_audit, canonical_encode, encode_transaction, AuditContext,
    ObjectSnapshot, RandomIds, TransactionScheme,
};
use blockaudit::CanonicalTimestamp;
use uuid::Uuid;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut ids = RandomIds;
    let ctx = AuditContext {
        app_id: "USA-FL-0000005".into(),
        session_id: Uuid::new_v4(),
        user_id: 666,
        url: "/permits/161031".into(),
        now: CanonicalTimestamp::now(),
    };

    let before = ObjectSnapshot::new("PermitInspection", 161031)
        .with("DBVersion", "9")
        .with("RequestComments", "available after 2:00 pm")
        .suppress("LastViewed");
    let after = before
        .clone()
        .with("DBVersion", "10")
        .with("RequestComments", "available after 1:00 pm");

    let insert = build_insert_audit(&before, &ctx, &mut ids)?;
    let update = build_update_audit(&before, &after, &ctx, &mut ids)?.expect("two properties changed");
    let delete = build_delete_audit(&after, &ctx, &mut ids)?;

    for e in [&insert, &update, &delete] {
        println!("{}", String::from_utf8(canonical_encode(e))?);
    }
    let entries = [insert, update, delete];
    for scheme in [TransactionScheme::PerTransaction, TransactionScheme::PerRecord, TransactionScheme::FixedLength] {
        let payloads = encode_transaction(&entries, scheme)?;
        let sizes: Vec<usize> = payloads.iter().map(|p| p.bytes.len()).collect();
        println!("{scheme}: {} payload(s), sizes {sizes:?}", payloads.len());
    }

    // Audit-log classes are never audited themselves.
    let own = ObjectSnapshot::new("AuditLog", 1).with("x", "y");
    println!("auditing the audit log: {:?}", build_insert_audit(&own, &ctx, &mut ids).unwrap_err());
    Ok(())
}
