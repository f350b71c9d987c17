use serde::{Deserialize, Serialize};

/// Replica counts for the two chains of one deployment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeploymentSizing {
    pub k_recovery: u32,
    pub k_detection: u32,
}

pub const MIN_RECOVERY_REPLICAS: u32 = 4;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SizingViolation {
    #[error("recovery chain needs at least {MIN_RECOVERY_REPLICAS} replicas, got {0}")]
    RecoveryTooSmall(u32),
    #[error("detection chain needs more than {} replicas (twice the recovery chain), got {k_detection}", 2 * .k_recovery)]
    DetectionTooSmall { k_recovery: u32, k_detection: u32 },
}

/// Every sizing rule `s` breaks; empty when the deployment is acceptable.
pub fn check_sizing(s: &DeploymentSizing) -> Result<(), Vec<SizingViolation>> {
    let mut out = Vec::new();
    if s.k_recovery < MIN_RECOVERY_REPLICAS {
        out.push(SizingViolation::RecoveryTooSmall(s.k_recovery));
    }
    if u64::from(s.k_detection) <= 2 * u64::from(s.k_recovery) {
        out.push(SizingViolation::DetectionTooSmall {
            k_recovery: s.k_recovery,
            k_detection: s.k_detection,
        });
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}
