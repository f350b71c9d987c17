//! Deterministic discrete-event simulation of a replica group.
//!
//! Every replica runs the real [`crate::pbft::Replica`] state machine. The
//! simulator models link delay, per-message CPU cost, Poisson client load
//! and Byzantine behavior, and reports per-transaction latency and message
//! counts.

mod config;
mod metrics;
mod sim;
mod sweep;

pub use config::{CostModel, DelayDist, FaultKind, FaultProfile, LinkModel, LinkOverride, ScenarioConfig};
pub use metrics::{
    count_messages, expected_messages, mean, percentile, write_tx_csv, FlagRecord, NotificationRecord, SimMetrics,
    TxRecord, TX_CSV_HEADER,
};
pub use sim::{run_scenario, Simulation, SIM_EPOCH};
pub use sweep::{aggregate, monotonicity, sweep, write_aggregate_csv, Axis, Curve, SweepResult, SweepRow, AGGREGATE_CSV_HEADER};

use crate::pbft::ReplicaId;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    ConfigInvalid(String),
    #[error("unknown replica {0}")]
    UnknownReplica(ReplicaId),
    #[error("no messages recorded for sequence number {0}")]
    UnknownSeq(u64),
    #[error("fault starts at {active_from_ms} ms but the run is already at {now_ms} ms")]
    FaultTooLate { active_from_ms: i64, now_ms: f64 },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl PartialEq for SimError {
    fn eq(&self, other: &Self) -> bool {
        self.to_string() == other.to_string()
    }
}
