//! One fault-free scenario on the simulated network, with per-transaction
//! latencies written as CSV.

use blockaudit::netsim::{run_scenario, write_tx_csv, LinkModel, ScenarioConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ScenarioConfig {
        name: "lan".into(),
        n: 7,
        lambda: 50.0,
        duration_virtual_seconds: 0.5,
        link: LinkModel::constant(50.0),
        ..ScenarioConfig::default()
    };
    let m = run_scenario(cfg)?;
    println!(
        "{} of {} committed, mean l_t {:.1} ms, {} messages, heights {:?}",
        m.committed,
        m.txs.len(),
        m.mean_latency_ms().unwrap_or(f64::NAN),
        m.total_messages(),
        m.heights
    );
    write_tx_csv(std::io::stdout(), [&m])?;
    Ok(())
}
