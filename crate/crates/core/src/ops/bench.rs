use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::OpsError;
use crate::audit::TransactionScheme;
use crate::netsim::{monotonicity, sweep, write_aggregate_csv, write_tx_csv, Curve, ScenarioConfig, SweepResult};

/// The (n, payload, λ, seed) grid of a benchmark. Every point shares `base`
/// for everything else.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct ExperimentMatrix {
    pub n_values: Vec<usize>,
    pub payload_values: Vec<u64>,
    pub lambda_values: Vec<f64>,
    pub seeds: Vec<u64>,
    pub scheme: TransactionScheme,
    pub base: ScenarioConfig,
}

impl Default for ExperimentMatrix {
    fn default() -> Self {
        ExperimentMatrix {
            n_values: vec![10, 20, 30, 40, 50],
            payload_values: [1, 5, 10, 15, 20].iter().map(|mb| mb * 1_000_000).collect(),
            lambda_values: vec![200.0, 3000.0, 6000.0],
            seeds: (1..=5).collect(),
            scheme: TransactionScheme::PerTransaction,
            base: ScenarioConfig {
                duration_virtual_seconds: 0.1,
                ..ScenarioConfig::default()
            },
        }
    }
}

impl ExperimentMatrix {
    pub fn from_json(s: &str) -> Result<Self, OpsError> {
        let m: ExperimentMatrix = serde_json::from_str(s)?;
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), OpsError> {
        if self.n_values.is_empty()
            || self.payload_values.is_empty()
            || self.lambda_values.is_empty()
            || self.seeds.is_empty()
        {
            return Err(OpsError::InvalidArgument("every matrix axis needs at least one value".into()));
        }
        for cfg in self.scenarios() {
            cfg.validate()?;
        }
        Ok(())
    }

    pub fn scenarios(&self) -> Vec<ScenarioConfig> {
        let mut out = Vec::new();
        for &n in &self.n_values {
            for &payload_bytes in &self.payload_values {
                for &lambda in &self.lambda_values {
                    for &seed in &self.seeds {
                        out.push(ScenarioConfig {
                            name: format!("n{n}-p{payload_bytes}-l{lambda}-s{seed}"),
                            n,
                            payload_bytes,
                            lambda,
                            seed,
                            scheme: self.scheme,
                            quorum: None,
                            ..self.base.clone()
                        });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub sweep: SweepResult,
    pub curves: Vec<Curve>,
}

impl BenchReport {
    /// Rows with a non-positive latency; always empty for a sound run.
    pub fn non_positive_latencies(&self) -> usize {
        self.sweep.runs.iter().flat_map(|m| m.latencies()).filter(|l| *l <= 0.0).count()
    }

    pub fn inversions(&self) -> usize {
        self.curves.iter().map(|c| c.inversions).sum()
    }
}

/// Runs the matrix. With `out_dir`, writes `runs.csv` (one row per committed
/// transaction) and `aggregate.csv` there.
pub fn run_bench(matrix: &ExperimentMatrix, out_dir: Option<&Path>) -> Result<BenchReport, OpsError> {
    matrix.validate()?;
    let result = sweep(&matrix.scenarios())?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        write_tx_csv(BufWriter::new(File::create(dir.join("runs.csv"))?), &result.runs)?;
        write_aggregate_csv(BufWriter::new(File::create(dir.join("aggregate.csv"))?), &result.rows)?;
    }
    let curves = monotonicity(&result.rows);
    Ok(BenchReport { sweep: result, curves })
}
