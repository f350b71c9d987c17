//! A small experiment matrix with its monotonicity summary.

use blockaudit::netsim::ScenarioConfig;
use blockaudit::ops::{run_bench, ExperimentMatrix};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let matrix = ExperimentMatrix {
        n_values: vec![4, 7, 10],
        payload_values: vec![100_000, 1_000_000],
        lambda_values: vec![100.0, 1000.0],
        seeds: vec![1, 2],
        base: ScenarioConfig {
            duration_virtual_seconds: 0.1,
            ..ScenarioConfig::default()
        },
        ..ExperimentMatrix::default()
    };
    let out = tempfile::tempdir()?;
    let report = run_bench(&matrix, Some(out.path()))?;
    for row in &report.sweep.rows {
        println!(
            "n={:<3} payload={:<8} lambda={:<6} mean={:.1} ms p99={:.1} ms",
            row.n, row.payload_bytes, row.lambda, row.mean_l_t_ms, row.p99_l_t_ms
        );
    }
    for c in &report.curves {
        println!("{c}");
    }
    println!("csv written to {}", out.path().display());
    Ok(())
}
