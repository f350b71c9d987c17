//! Which recovery/detection replica counts a deployment may use.

use blockaudit::ledger::{check_sizing, DeploymentSizing};
use blockaudit::pbft::QuorumConfig;

fn main() {
    for (k_recovery, k_detection) in [(3, 9), (4, 8), (4, 9), (7, 15), (10, 20)] {
        let s = DeploymentSizing { k_recovery, k_detection };
        match check_sizing(&s) {
            Ok(()) => {
                let q = QuorumConfig::for_n(k_recovery as usize);
                println!("({k_recovery}, {k_detection}) ok: tolerates f={} with commit quorum {}", q.f, q.commit);
            }
            Err(v) => {
                let why: Vec<String> = v.iter().map(ToString::to_string).collect();
                println!("({k_recovery}, {k_detection}) rejected: {}", why.join("; "));
            }
        }
    }
}
