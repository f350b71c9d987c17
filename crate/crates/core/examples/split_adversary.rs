//! Two faulty replicas take turns answering the primary. Three approval
//! rounds are enough to name both.

use std::collections::BTreeSet;

use blockaudit::netsim::{run_scenario, FaultProfile, ScenarioConfig};
use blockaudit::pbft::{detect_split_adversary, ApprovalRounds, ReplicaId};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = ScenarioConfig {
        n: 7,
        max_transactions: Some(5),
        faults: vec![FaultProfile::split([5], [6])],
        ..ScenarioConfig::default()
    };
    cfg.window.rounds = ApprovalRounds::Fixed { rounds: 3 };
    let m = run_scenario(cfg)?;
    for n in &m.notifications {
        println!(
            "seq {} after {} rounds: suspects {:?}",
            n.notification.seq, n.notification.iterations, n.notification.suspects
        );
    }

    // The detector on its own: responders per phase.
    let honest: BTreeSet<ReplicaId> = (0..5).map(ReplicaId).collect();
    let phases: Vec<BTreeSet<ReplicaId>> = (1..=3)
        .map(|i| {
            let mut s = honest.clone();
            s.insert(ReplicaId(if i % 2 == 1 { 5 } else { 6 }));
            s
        })
        .collect();
    println!("detector: {:?}", detect_split_adversary(&phases)?);
    Ok(())
}
