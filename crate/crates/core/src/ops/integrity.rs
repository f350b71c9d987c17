use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::OpsError;
use crate::ledger::store::{decode_chain, DataDir};
use crate::ledger::{cross_check, verify_chain, Chain, ChainKind, VerificationReport};

/// Largest total payload the drill will flip byte by byte.
pub const DRILL_CAP_BYTES: usize = 64 * 1024;

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct IntegrityReport {
    pub recovery: Option<VerificationReport>,
    pub detection: Option<VerificationReport>,
    /// Files that could not be parsed at all.
    pub load_errors: Vec<String>,
    pub cross_check: Vec<String>,
}

impl IntegrityReport {
    pub fn is_clean(&self) -> bool {
        self.load_errors.is_empty()
            && self.cross_check.is_empty()
            && self.recovery.as_ref().is_some_and(VerificationReport::is_clean)
            && self.detection.as_ref().is_some_and(VerificationReport::is_clean)
    }

    pub fn problems(&self) -> Vec<String> {
        let mut out = self.load_errors.clone();
        for (name, r) in [("recovery", &self.recovery), ("detection", &self.detection)] {
            if let Some(r) = r {
                out.extend(r.violations.iter().map(|v| format!("{name}: {v}")));
            }
        }
        out.extend(self.cross_check.iter().map(|c| format!("cross-check: {c}")));
        out
    }
}

fn load_image(bytes: &[u8], kind: ChainKind, errors: &mut Vec<String>) -> Option<Chain> {
    match decode_chain(bytes) {
        Ok(c) if c.kind() == kind => Some(c),
        Ok(c) => {
            errors.push(format!("{kind:?} file holds a {:?} chain", c.kind()));
            None
        }
        Err(e) => {
            errors.push(format!("{kind:?} file: {e}"));
            None
        }
    }
}

/// Verifies two chain file images as [`verify`] would.
pub fn verify_images(recovery: &[u8], detection: &[u8]) -> IntegrityReport {
    let mut report = IntegrityReport::default();
    let r = load_image(recovery, ChainKind::Recovery, &mut report.load_errors);
    let d = load_image(detection, ChainKind::Detection, &mut report.load_errors);
    report.recovery = r.as_ref().map(verify_chain);
    report.detection = d.as_ref().map(verify_chain);
    if let (Some(r), Some(d)) = (&r, &d) {
        report.cross_check = cross_check(r, d);
    }
    report
}

/// Verifies both chains under `dir` and checks them against each other.
pub fn verify(dir: &Path) -> Result<IntegrityReport, OpsError> {
    let data = DataDir::new(dir);
    let rp = data.chain_path(ChainKind::Recovery);
    let dp = data.chain_path(ChainKind::Detection);
    if !rp.exists() || !dp.exists() {
        return Err(OpsError::NoChains(dir.to_path_buf()));
    }
    Ok(verify_images(&std::fs::read(rp)?, &std::fs::read(dp)?))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct TamperDrillReport {
    pub seed: u64,
    pub mutations_tried: usize,
    pub detected: usize,
    pub missed: usize,
    /// `(file, offset)` of every undetected mutation.
    pub missed_at: Vec<(String, usize)>,
}

/// Flips every byte of both chain files in turn (XOR with a nonzero mask drawn
/// from `seed`) and checks that verification notices each change. Mutations
/// are applied to in-memory copies; the files are left as found.
pub fn tamper_drill(dir: &Path, seed: u64) -> Result<TamperDrillReport, OpsError> {
    let data = DataDir::new(dir);
    let rp = data.chain_path(ChainKind::Recovery);
    let dp = data.chain_path(ChainKind::Detection);
    if !rp.exists() || !dp.exists() {
        return Err(OpsError::NoChains(dir.to_path_buf()));
    }
    let images = [std::fs::read(&rp)?, std::fs::read(&dp)?];
    let baseline = verify_images(&images[0], &images[1]);
    if !baseline.is_clean() {
        return Err(OpsError::InvalidArgument(format!(
            "chains already fail verification: {}",
            baseline.problems().join("; ")
        )));
    }
    let recovery = decode_chain(&images[0])?;
    let payload_bytes: usize = recovery
        .txs()
        .map(|(_, tx)| tx.payload.as_ref().map_or(0, Vec::len))
        .sum();
    if payload_bytes > DRILL_CAP_BYTES {
        return Err(OpsError::DrillTooLarge {
            bytes: payload_bytes,
            cap: DRILL_CAP_BYTES,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = TamperDrillReport {
        seed,
        ..TamperDrillReport::default()
    };
    let names = ["recovery", "detection"];
    let mut work = images.clone();
    for file in 0..2 {
        for offset in 0..images[file].len() {
            let mask: u8 = rng.gen_range(1..=255);
            work[file][offset] ^= mask;
            let caught = !verify_images(&work[0], &work[1]).is_clean();
            work[file][offset] = images[file][offset];
            report.mutations_tried += 1;
            if caught {
                report.detected += 1;
            } else {
                report.missed += 1;
                report.missed_at.push((names[file].to_string(), offset));
            }
        }
    }
    Ok(report)
}
