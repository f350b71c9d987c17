//! The same workload under each fault profile at n = 4.

use blockaudit::netsim::{run_scenario, FaultKind, FaultProfile, ScenarioConfig};
use blockaudit::pbft::ViewChangeConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let profiles = [
        ("none", vec![]),
        ("silent backup", vec![FaultProfile::new(FaultKind::Silent, [2])]),
        ("equivocating backup", vec![FaultProfile::new(FaultKind::Equivocator, [3])]),
        ("slow link", vec![FaultProfile::new(FaultKind::DelayInjector { extra_ms: 400 }, [1])]),
        ("forging client", vec![FaultProfile::new(FaultKind::TimestampForger { ahead_ms: 60_000 }, [2])]),
        ("silent primary", vec![FaultProfile::new(FaultKind::Silent, [0])]),
        ("two silent", vec![FaultProfile::new(FaultKind::Silent, [2, 3])]),
    ];
    println!("{:<20} {:>9} {:>6} {:>8} {:>6} {:>5}", "profile", "committed", "txs", "mean_ms", "aborts", "views");
    for (name, faults) in profiles {
        let cfg = ScenarioConfig {
            name: name.into(),
            lambda: 40.0,
            duration_virtual_seconds: 0.5,
            view_change: Some(ViewChangeConfig::default()),
            faults,
            ..ScenarioConfig::default()
        };
        let m = run_scenario(cfg)?;
        println!(
            "{:<20} {:>9} {:>6} {:>8.1} {:>6} {:>5}",
            name,
            m.committed,
            m.txs.len(),
            m.mean_latency_ms().unwrap_or(f64::NAN),
            m.notifications.len(),
            m.view_changes
        );
    }
    Ok(())
}
