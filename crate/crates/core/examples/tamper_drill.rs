//! Fill a data directory from a short simulated run, then flip every stored
//! byte in turn and count how many flips verification catches.

use blockaudit::netsim::ScenarioConfig;
use blockaudit::ops::{populate_data_dir, tamper_drill, verify};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let cfg = ScenarioConfig {
        lambda: 2.0,
        duration_virtual_seconds: 100.0,
        max_transactions: Some(3),
        ..ScenarioConfig::default()
    };
    let blocks = populate_data_dir(dir.path(), cfg, 0)?;
    println!("{blocks} blocks written to {}", dir.path().display());
    println!("baseline clean: {}", verify(dir.path())?.is_clean());

    let report = tamper_drill(dir.path(), 42)?;
    println!(
        "{} mutations, {} detected, {} missed",
        report.mutations_tried, report.detected, report.missed
    );
    Ok(())
}
