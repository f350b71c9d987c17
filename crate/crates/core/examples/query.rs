//! Look up committed entries by user, class and time range.

use blockaudit::ledger::{query, ChainKind, QueryFilter};
use blockaudit::netsim::{ScenarioConfig, Simulation};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut sim = Simulation::new(ScenarioConfig {
        max_transactions: Some(12),
        ..ScenarioConfig::default()
    })?;
    sim.run();
    let chain = sim.replicas()[0].recovery();
    assert_eq!(chain.kind(), ChainKind::Recovery);

    let orders = QueryFilter {
        class_name: Some("Order".into()),
        ..QueryFilter::default()
    };
    let hits = query(chain, &orders)?;
    println!("{} Order entries in {} blocks", hits.len(), chain.len());
    for h in hits.iter().take(3) {
        println!("height {} tx {} committed {}", h.height, h.tx.tx_id, h.tx.t_c.to_iso8601());
    }
    Ok(())
}
