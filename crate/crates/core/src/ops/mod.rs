//! Operator drivers behind the command-line tool: ledger verification, the
//! tamper drill, point-in-time restore and the benchmark matrix.

mod bench;
mod integrity;

pub use bench::{run_bench, BenchReport, ExperimentMatrix};
pub use integrity::{tamper_drill, verify, verify_images, IntegrityReport, TamperDrillReport, DRILL_CAP_BYTES};

use std::path::{Path, PathBuf};

use crate::audit::EntityKey;
use crate::ledger::store::DataDir;
use crate::ledger::{restore_state, ChainKind, LedgerError, RestoredState};
use crate::netsim::{ScenarioConfig, SimError, Simulation};
use crate::time::CanonicalTimestamp;

#[derive(Debug, thiserror::Error)]
pub enum OpsError {
    #[error("no chain files under {0}")]
    NoChains(PathBuf),
    #[error("drill covers {bytes} payload bytes, above the {cap}-byte cap")]
    DrillTooLarge { bytes: usize, cap: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Integer ids stay integers; anything else is a string key.
pub fn parse_entity_key(s: &str) -> EntityKey {
    s.parse::<i64>().map_or_else(|_| EntityKey::Str(s.to_string()), EntityKey::Int)
}

/// State of one entity as of `as_of`, replayed from the recovery chain in
/// `dir`.
pub fn restore(dir: &Path, class_name: &str, entity_id: &str, as_of: &str) -> Result<RestoredState, OpsError> {
    let data = DataDir::new(dir);
    if !data.has_chains() {
        return Err(OpsError::NoChains(dir.to_path_buf()));
    }
    let as_of = CanonicalTimestamp::parse_wire(as_of).map_err(|e| OpsError::InvalidArgument(e.to_string()))?;
    let chain = data.load(ChainKind::Recovery)?;
    Ok(restore_state(&chain, class_name, &parse_entity_key(entity_id), as_of)?)
}

/// Runs `cfg` and writes replica `replica`'s chains to `dir`. Returns the
/// number of blocks written.
pub fn populate_data_dir(dir: &Path, cfg: ScenarioConfig, replica: usize) -> Result<usize, OpsError> {
    let mut sim = Simulation::new(cfg)?;
    sim.run();
    let r = sim
        .replicas()
        .get(replica)
        .ok_or_else(|| OpsError::InvalidArgument(format!("no replica {replica}")))?;
    let data = DataDir::new(dir);
    data.save(r.recovery())?;
    data.save(r.detection())?;
    data.export(r.recovery())?;
    Ok(r.recovery().len())
}
