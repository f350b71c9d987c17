//! Commit a short history for one entity and replay it as of several
//! points in time.

use blockaudit::audit::{
    build_delete_audit, build_insert_audit, build_update_audit, canonical_encode, AuditContext, EntityKey,
    ObjectSnapshot, SeededIds,
};
use blockaudit::ledger::{restore_state, Chain, ChainKind, CommittedTx};
use blockaudit::CanonicalTimestamp;
use uuid::Uuid;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut ids = SeededIds::new(3);
    let mut chain = Chain::new(ChainKind::Recovery);
    let ctx = |t: i64| AuditContext {
        app_id: "inventory".into(),
        session_id: Uuid::nil(),
        user_id: 12,
        url: "/stock".into(),
        now: CanonicalTimestamp::utc(t),
    };

    let v1 = ObjectSnapshot::new("StockItem", 77).with("Qty", "10").with("Bin", "A1");
    let v2 = v1.clone().with("Qty", "4");
    let v3 = v2.clone().with("Bin", "C9");
    let history = [
        build_insert_audit(&v1, &ctx(1_000), &mut ids)?,
        build_update_audit(&v1, &v2, &ctx(2_000), &mut ids)?.expect("changed"),
        build_update_audit(&v2, &v3, &ctx(3_000), &mut ids)?.expect("changed"),
        build_delete_audit(&v3, &ctx(4_000), &mut ids)?,
    ];
    for e in &history {
        let t_c = CanonicalTimestamp::utc(e.created_date.epoch_millis + 5);
        let tx = CommittedTx::with_payload(e.id, canonical_encode(e), e.created_date, t_c);
        chain.append_block(vec![tx], t_c)?;
    }

    for as_of in [1_500, 2_500, 3_500, 4_500] {
        let state = restore_state(&chain, "StockItem", &EntityKey::Int(77), CanonicalTimestamp::utc(as_of))?;
        println!("as of {as_of}: {}", serde_json::to_string(&state)?);
    }
    Ok(())
}
