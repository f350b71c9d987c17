//! Append blocks to a recovery chain and its detection twin, verify both,
//! then alter a stored record and watch the checks fail.

use std::collections::HashMap;

use blockaudit::ledger::{cross_check, detect_tamper, verify_chain, Chain, ChainKind, CommittedTx};
use blockaudit::CanonicalTimestamp;
use uuid::Uuid;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut recovery = Chain::new(ChainKind::Recovery);
    let mut detection = Chain::new(ChainKind::Detection);
    let mut store = HashMap::new();

    for block in 0..4i64 {
        let created = CanonicalTimestamp::utc(1_700_000_000_000 + block * 1000);
        let now = CanonicalTimestamp::utc(created.epoch_millis + 40);
        let txs: Vec<CommittedTx> = (0..3)
            .map(|i| {
                let body = format!(r#"{{"order":{block},"line":{i}}}"#).into_bytes();
                let tx = CommittedTx::with_payload(Uuid::new_v4(), body.clone(), created, now);
                store.insert(tx.tx_id, body);
                tx
            })
            .collect();
        detection.append_block(txs.iter().map(CommittedTx::digest_only).collect(), now)?;
        recovery.append_block(txs, now)?;
    }

    println!("recovery: {} blocks, clean = {}", recovery.len(), verify_chain(&recovery).is_clean());
    println!("detection: {} blocks, clean = {}", detection.len(), verify_chain(&detection).is_clean());
    println!("cross-check problems: {:?}", cross_check(&recovery, &detection));

    let victim = *store.keys().next().expect("store is not empty");
    store.insert(victim, br#"{"order":0,"line":0,"refund":true}"#.to_vec());
    println!("tampered records found through the detection chain: {:?}", detect_tamper(&store, &detection)?);

    let mut blocks: Vec<_> = recovery.blocks().iter().map(|b| (**b).clone()).collect();
    blocks[1].txs[0].payload = Some(b"rewritten".to_vec());
    let forged = Chain::from_blocks_unchecked(ChainKind::Recovery, blocks);
    for v in verify_chain(&forged).violations {
        println!("violation: {v}");
    }
    Ok(())
}
