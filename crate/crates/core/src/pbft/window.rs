//! Verification windows, responder sets and split-adversary exposure.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::crypto::{verify_msg, Verifier};
use super::types::{ConsensusMsg, MsgBody, ReplicaId};
use super::PbftError;
use crate::digest::Digest32;
use crate::time::Micros;

/// Messages exchanged to confirm one transaction among `n` replicas,
/// the default scaling constant for a window.
pub fn message_factor(n: usize) -> u64 {
    let n = n as u64;
    n * n - n
}

/// `c · t_b`, with `c` defaulting to [`message_factor`].
pub fn compute_window(c: Option<f64>, t_b: Micros, n: usize) -> Micros {
    let c = c.unwrap_or(message_factor(n) as f64);
    Micros((c * t_b.0 as f64).round() as i64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ApprovalRounds {
    /// At most this many iterations (the first attempt plus retries).
    Fixed { rounds: u32 },
    /// Draw the number of iterations per window, uniformly in `min..=max`.
    Random { min: u32, max: u32 },
}

impl Default for ApprovalRounds {
    fn default() -> Self {
        ApprovalRounds::Fixed { rounds: 2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WindowConfig {
    /// Scaling constant; `None` uses n² − n.
    pub c: Option<f64>,
    /// Base confirmation unit used before any delay has been observed.
    pub t_b_fallback_us: i64,
    /// Each retry multiplies the window by this factor (at least 1).
    pub retry_factor: u32,
    pub rounds: ApprovalRounds,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            c: None,
            t_b_fallback_us: 50_000,
            retry_factor: 2,
            rounds: ApprovalRounds::default(),
        }
    }
}

/// Uniform draw of the number of approval phases.
pub fn choose_phase_count(rng: &mut impl Rng, v_min: u32, v_max: u32) -> Result<u32, PbftError> {
    if v_min < 2 || v_min > v_max {
        return Err(PbftError::InvalidPhaseRange(v_min, v_max));
    }
    Ok(rng.gen_range(v_min..=v_max))
}

/// Replicas that sent signed approvals, by iteration.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ResponderSet {
    phases: BTreeMap<u32, BTreeSet<ReplicaId>>,
}

impl ResponderSet {
    pub fn record(&mut self, iteration: u32, id: ReplicaId) {
        self.phases.entry(iteration).or_default().insert(id);
    }

    /// Every replica that responded in any iteration, without duplicates.
    pub fn ids(&self) -> BTreeSet<ReplicaId> {
        self.phases.values().flatten().copied().collect()
    }

    pub fn phase(&self, iteration: u32) -> usize {
        self.phases.get(&iteration).map_or(0, BTreeSet::len)
    }

    /// Responder sets for iterations `1..=through`, empty where nobody replied.
    pub fn per_phase(&self, through: u32) -> Vec<BTreeSet<ReplicaId>> {
        (1..=through)
            .map(|i| self.phases.get(&i).cloned().unwrap_or_default())
            .collect()
    }
}

/// Adds the senders of correctly signed approvals for `iteration` and
/// returns the senders whose signature failed.
pub fn update_responders(
    h: &mut ResponderSet,
    iteration: u32,
    replies: &[ConsensusMsg],
    verifier: &dyn Verifier,
) -> Vec<ReplicaId> {
    let mut rejected = Vec::new();
    for msg in replies {
        if !matches!(msg.body, MsgBody::Commit { .. }) || !verify_msg(verifier, msg) {
            rejected.push(msg.sender);
            continue;
        }
        h.record(iteration, msg.sender);
    }
    rejected
}

/// Replicas that never responded.
pub fn suspects(h: &ResponderSet, all: impl IntoIterator<Item = ReplicaId>) -> BTreeSet<ReplicaId> {
    let seen = h.ids();
    all.into_iter().filter(|r| !seen.contains(r)).collect()
}

/// Replicas whose responses come and go across phases. A replica that
/// answered every phase up to some point and then went quiet looks like a
/// crash and is not reported.
pub fn detect_split_adversary(phases: &[BTreeSet<ReplicaId>]) -> Result<BTreeSet<ReplicaId>, PbftError> {
    if phases.len() < 3 {
        return Err(PbftError::InsufficientPhases(phases.len()));
    }
    let everyone: BTreeSet<ReplicaId> = phases.iter().flatten().copied().collect();
    Ok(everyone
        .into_iter()
        .filter(|r| {
            let pattern: Vec<bool> = phases.iter().map(|p| p.contains(r)).collect();
            let all = pattern.iter().all(|&x| x);
            let crash_like = pattern.iter().skip_while(|&&x| x).all(|&x| !x);
            !all && !crash_like
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum WindowVerdict {
    Continue,
    Approved { iteration: u32 },
    Retry { iteration: u32, window_us: i64 },
    Abort { suspects: BTreeSet<ReplicaId> },
}

/// The primary's deadline for collecting approvals on one sequence number.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerificationWindow {
    pub seq: u64,
    pub digest: Digest32,
    pub iteration: u32,
    pub started: Micros,
    pub window: Micros,
    pub rounds: u32,
    pub responders: ResponderSet,
}

impl VerificationWindow {
    pub fn open(seq: u64, digest: Digest32, now: Micros, window: Micros, rounds: u32) -> Self {
        VerificationWindow {
            seq,
            digest,
            iteration: 1,
            started: now,
            window,
            rounds: rounds.max(1),
            responders: ResponderSet::default(),
        }
    }

    pub fn deadline(&self) -> Micros {
        self.started + self.window
    }

    pub fn is_approved(&self, reply_quorum: usize) -> bool {
        self.responders.phase(self.iteration) >= reply_quorum
    }

    /// Evaluates the window at `now`.
    pub fn tick(
        &mut self,
        now: Micros,
        reply_quorum: usize,
        retry_factor: u32,
        all: impl IntoIterator<Item = ReplicaId>,
    ) -> WindowVerdict {
        if self.is_approved(reply_quorum) {
            return WindowVerdict::Approved {
                iteration: self.iteration,
            };
        }
        if now < self.deadline() {
            return WindowVerdict::Continue;
        }
        if self.iteration < self.rounds {
            self.iteration += 1;
            self.window = Micros(self.window.0.max(1) * i64::from(retry_factor.max(1)));
            self.started = now;
            return WindowVerdict::Retry {
                iteration: self.iteration,
                window_us: self.window.0,
            };
        }
        let mut out = suspects(&self.responders, all);
        if let Ok(split) = detect_split_adversary(&self.responders.per_phase(self.iteration)) {
            out.extend(split);
        }
        WindowVerdict::Abort { suspects: out }
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn set(ids: &[u32]) -> BTreeSet<ReplicaId> {
        ids.iter().map(|&i| ReplicaId(i)).collect()
    }

    fn all(n: u32) -> impl Iterator<Item = ReplicaId> {
        (0..n).map(ReplicaId)
    }

    #[test]
    fn window_factor() {
        assert_eq!(message_factor(4), 12);
        assert_eq!(message_factor(1), 0);
        assert_eq!(message_factor(10), 90);
        assert_eq!(compute_window(None, Micros(50_000), 4), Micros(600_000));
        assert_eq!(compute_window(Some(3.0), Micros(10), 4), Micros(30));
    }

    #[test]
    fn approval_closes_window() {
        let mut w = VerificationWindow::open(1, Digest32::ZERO, Micros(0), Micros(100), 2);
        for i in 0..4 {
            w.responders.record(1, ReplicaId(i));
        }
        assert_eq!(w.tick(Micros(50), 4, 2, all(4)), WindowVerdict::Approved { iteration: 1 });
    }

    #[test]
    fn expiry_retries_then_aborts() {
        let mut w = VerificationWindow::open(1, Digest32::ZERO, Micros(0), Micros(100), 2);
        for i in 0..3 {
            w.responders.record(1, ReplicaId(i));
        }
        assert_eq!(w.tick(Micros(99), 4, 2, all(4)), WindowVerdict::Continue);
        assert_eq!(
            w.tick(Micros(100), 4, 2, all(4)),
            WindowVerdict::Retry {
                iteration: 2,
                window_us: 200
            }
        );
        assert_eq!(w.deadline(), Micros(300));
        for i in 0..3 {
            w.responders.record(2, ReplicaId(i));
        }
        assert_eq!(
            w.tick(Micros(300), 4, 2, all(4)),
            WindowVerdict::Abort { suspects: set(&[3]) }
        );
    }

    #[test]
    fn responder_set_and_suspects() {
        let mut h = ResponderSet::default();
        for i in 0..4 {
            h.record(1, ReplicaId(i));
        }
        assert!(suspects(&h, all(4)).is_empty());

        let mut h = ResponderSet::default();
        for it in 1..=2 {
            for i in 0..3 {
                h.record(it, ReplicaId(i));
            }
        }
        assert_eq!(suspects(&h, all(4)), set(&[3]));

        // Alternating halves: every replica shows up somewhere.
        let mut h = ResponderSet::default();
        for i in [0, 1, 2, 3, 4, 5] {
            h.record(1, ReplicaId(i));
        }
        for i in [0, 1, 2, 3, 4, 6] {
            h.record(2, ReplicaId(i));
        }
        assert!(suspects(&h, all(7)).is_empty());
        assert_eq!(h.ids().len(), 7);
    }

    #[test]
    fn responder_updates_check_signatures() {
        use crate::pbft::crypto::{sign_msg, MacKeyring, Signer};
        let ring = MacKeyring::new(4, 0);
        let commit = |i: u32| {
            let mut m = ConsensusMsg {
                sender: ReplicaId(i),
                sent_at: Micros(0),
                body: MsgBody::Commit {
                    view: 0,
                    seq: 1,
                    iteration: 1,
                    digest: Digest32::ZERO,
                },
                signature: vec![],
            };
            sign_msg(&ring.signer(ReplicaId(i)), &mut m);
            m
        };
        let mut forged = commit(2);
        forged.signature = ring.signer(ReplicaId(1)).sign(&forged.signing_bytes());
        let mut h = ResponderSet::default();
        let rejected = update_responders(&mut h, 1, &[commit(0), commit(1), forged], &ring);
        assert_eq!(rejected, vec![ReplicaId(2)]);
        assert_eq!(h.ids(), set(&[0, 1]));
    }

    #[test]
    fn split_adversary_needs_three_phases() {
        let honest = [0, 1, 2, 3, 4];
        let with = |extra: u32| {
            let mut s = set(&honest);
            s.insert(ReplicaId(extra));
            s
        };
        assert!(matches!(
            detect_split_adversary(&[with(5), with(6)]),
            Err(PbftError::InsufficientPhases(2))
        ));
        assert_eq!(detect_split_adversary(&[with(5), with(6), with(5)]).unwrap(), set(&[5, 6]));
        assert!(detect_split_adversary(&[set(&honest), set(&honest), set(&honest)])
            .unwrap()
            .is_empty());
        // Answered the first two phases, then stopped: crash-like.
        assert!(detect_split_adversary(&[with(5), with(5), set(&honest)])
            .unwrap()
            .is_empty());
    }

    #[test]
    fn phase_count_is_uniform_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut seen = BTreeSet::new();
        for _ in 0..200 {
            let v = choose_phase_count(&mut rng, 2, 5).unwrap();
            assert!((2..=5).contains(&v));
            seen.insert(v);
        }
        assert_eq!(seen.len(), 4);
        assert!(choose_phase_count(&mut rng, 1, 3).is_err());
        assert!(choose_phase_count(&mut rng, 4, 3).is_err());
        assert_eq!(choose_phase_count(&mut rng, 3, 3).unwrap(), 3);
    }
}
