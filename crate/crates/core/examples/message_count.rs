//! Messages needed to order one request, measured and in closed form.

use blockaudit::netsim::{count_messages, expected_messages, run_scenario, ScenarioConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    println!("n,measured,expected_backup_client,expected_primary_client");
    for n in [4, 7, 10, 13, 16] {
        let m = run_scenario(ScenarioConfig {
            n,
            max_transactions: Some(1),
            ..ScenarioConfig::default()
        })?;
        let seq = m.txs[0].seq.expect("ordered");
        println!(
            "{n},{},{},{}",
            count_messages(&m, seq)?,
            expected_messages(n, false),
            expected_messages(n, true)
        );
    }
    Ok(())
}
