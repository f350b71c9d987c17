use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use super::config::ScenarioConfig;
use super::metrics::{mean, percentile, SimMetrics};
use super::sim::run_scenario;
use super::SimError;

/// Aggregate over every seed of one (n, payload, λ) point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub n: usize,
    pub payload_bytes: u64,
    pub lambda: f64,
    pub runs: usize,
    pub committed: usize,
    pub mean_l_t_ms: f64,
    pub p99_l_t_ms: f64,
    pub throughput: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepResult {
    pub runs: Vec<SimMetrics>,
    pub rows: Vec<SweepRow>,
}

/// Runs every scenario (in parallel) and aggregates by (n, payload, λ).
pub fn sweep(cfgs: &[ScenarioConfig]) -> Result<SweepResult, SimError> {
    let runs = cfgs
        .par_iter()
        .map(|c| run_scenario(c.clone()))
        .collect::<Result<Vec<_>, _>>()?;
    let rows = aggregate(&runs);
    Ok(SweepResult { runs, rows })
}

pub fn aggregate(runs: &[SimMetrics]) -> Vec<SweepRow> {
    let mut groups: BTreeMap<(usize, u64, u64), Vec<&SimMetrics>> = BTreeMap::new();
    for m in runs {
        groups
            .entry((m.n, m.payload_bytes, m.lambda.to_bits()))
            .or_default()
            .push(m);
    }
    groups
        .into_iter()
        .map(|((n, payload_bytes, lambda), ms)| {
            let mut lats: Vec<f64> = ms.iter().flat_map(|m| m.latencies()).collect();
            SweepRow {
                n,
                payload_bytes,
                lambda: f64::from_bits(lambda),
                runs: ms.len(),
                committed: lats.len(),
                mean_l_t_ms: mean(lats.iter().copied()).unwrap_or(f64::NAN),
                p99_l_t_ms: percentile(&mut lats, 99.0).unwrap_or(f64::NAN),
                throughput: mean(ms.iter().map(|m| m.throughput)).unwrap_or(0.0),
            }
        })
        .collect()
}

pub const AGGREGATE_CSV_HEADER: [&str; 8] = [
    "n",
    "payload_bytes",
    "lambda",
    "runs",
    "committed",
    "mean_l_t_ms",
    "p99_l_t_ms",
    "throughput_tps",
];

pub fn write_aggregate_csv<W: Write>(out: W, rows: &[SweepRow]) -> Result<(), SimError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(AGGREGATE_CSV_HEADER)?;
    for r in rows {
        w.write_record([
            r.n.to_string(),
            r.payload_bytes.to_string(),
            r.lambda.to_string(),
            r.runs.to_string(),
            r.committed.to_string(),
            format!("{:.3}", r.mean_l_t_ms),
            format!("{:.3}", r.p99_l_t_ms),
            format!("{:.3}", r.throughput),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    N,
    Payload,
    Lambda,
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::N => "n",
            Axis::Payload => "payload_bytes",
            Axis::Lambda => "lambda",
        })
    }
}

/// Mean latency along one axis with the other two held fixed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Curve {
    pub axis: Axis,
    pub fixed: String,
    pub points: Vec<(f64, f64)>,
    /// Adjacent pairs where latency decreases.
    pub inversions: usize,
}

impl fmt::Display for Curve {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "l_t vs {} at {}:", self.axis, self.fixed)?;
        for (x, y) in &self.points {
            write!(f, " {x}→{y:.1}ms")?;
        }
        write!(f, " ({} inversions)", self.inversions)
    }
}

pub fn monotonicity(rows: &[SweepRow]) -> Vec<Curve> {
    let mut out = Vec::new();
    for axis in [Axis::N, Axis::Payload, Axis::Lambda] {
        let mut curves: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
        for r in rows {
            let (x, fixed) = match axis {
                Axis::N => (r.n as f64, format!("payload_bytes={} lambda={}", r.payload_bytes, r.lambda)),
                Axis::Payload => (r.payload_bytes as f64, format!("n={} lambda={}", r.n, r.lambda)),
                Axis::Lambda => (r.lambda, format!("n={} payload_bytes={}", r.n, r.payload_bytes)),
            };
            curves.entry(fixed).or_default().push((x, r.mean_l_t_ms));
        }
        for (fixed, mut points) in curves {
            if points.len() < 2 {
                continue;
            }
            points.sort_by(|a, b| a.0.total_cmp(&b.0));
            let inversions = points.windows(2).filter(|w| !matches!(w[1].1.partial_cmp(&w[0].1), Some(std::cmp::Ordering::Greater | std::cmp::Ordering::Equal))).count();
            out.push(Curve {
                axis,
                fixed,
                points,
                inversions,
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(n: usize, payload_bytes: u64, lambda: f64, mean_l_t_ms: f64) -> SweepRow {
        SweepRow {
            n,
            payload_bytes,
            lambda,
            runs: 1,
            committed: 1,
            mean_l_t_ms,
            p99_l_t_ms: mean_l_t_ms,
            throughput: 1.0,
        }
    }

    #[test]
    fn curves_count_inversions() {
        let rows = vec![row(4, 1, 200.0, 10.0), row(7, 1, 200.0, 9.0), row(10, 1, 200.0, 12.0)];
        let curves = monotonicity(&rows);
        assert_eq!(curves.len(), 1);
        assert_eq!(curves[0].axis, Axis::N);
        assert_eq!(curves[0].inversions, 1);
    }
}
