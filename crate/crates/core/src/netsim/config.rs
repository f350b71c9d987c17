use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::audit::TransactionScheme;
use crate::pbft::{QuorumConfig, ReplicaId, ViewChangeConfig, WindowConfig};
use crate::time::Micros;

/// A one-way delay distribution, in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum DelayDist {
    Constant {
        ms: f64,
    },
    #[serde(rename_all = "camelCase")]
    Uniform {
        min_ms: f64,
        max_ms: f64,
    },
}

impl DelayDist {
    pub fn sample(&self, rng: &mut impl Rng) -> Micros {
        let ms = match *self {
            DelayDist::Constant { ms } => ms,
            DelayDist::Uniform { min_ms, max_ms } if max_ms > min_ms => rng.gen_range(min_ms..max_ms),
            DelayDist::Uniform { min_ms, .. } => min_ms,
        };
        Micros((ms * 1000.0).round() as i64)
    }

    fn validate(&self) -> Result<(), String> {
        match *self {
            DelayDist::Constant { ms } if ms.is_finite() && ms >= 0.0 => Ok(()),
            DelayDist::Uniform { min_ms, max_ms } if min_ms.is_finite() && max_ms.is_finite() && 0.0 <= min_ms && min_ms <= max_ms => Ok(()),
            other => Err(format!("invalid delay {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkOverride {
    pub src: ReplicaId,
    pub dst: ReplicaId,
    pub delay: DelayDist,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct LinkModel {
    pub one_way_delay: DelayDist,
    pub per_link: Vec<LinkOverride>,
}

impl Default for LinkModel {
    fn default() -> Self {
        LinkModel {
            one_way_delay: DelayDist::Constant { ms: 50.0 },
            per_link: Vec::new(),
        }
    }
}

impl LinkModel {
    pub fn constant(ms: f64) -> Self {
        LinkModel {
            one_way_delay: DelayDist::Constant { ms },
            per_link: Vec::new(),
        }
    }

    pub fn delay(&self, src: ReplicaId, dst: ReplicaId) -> &DelayDist {
        self.per_link
            .iter()
            .find(|l| l.src == src && l.dst == dst)
            .map_or(&self.one_way_delay, |l| &l.delay)
    }
}

/// CPU time charged per message: `base + bytes × per_byte`, on receipt and on
/// every copy sent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct CostModel {
    pub base_us: f64,
    pub per_byte_ns: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            base_us: 100.0,
            per_byte_ns: 50.0,
        }
    }
}

impl CostModel {
    pub fn free() -> Self {
        CostModel {
            base_us: 0.0,
            per_byte_ns: 0.0,
        }
    }

    pub fn cost(&self, bytes: u64) -> Micros {
        Micros((self.base_us + bytes as f64 * self.per_byte_ns / 1000.0).round() as i64)
    }

    pub fn base(&self) -> Micros {
        Micros(self.base_us.round() as i64)
    }
}

fn default_ahead_ms() -> i64 {
    3_600_000
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum FaultKind {
    /// Drops everything the target sends.
    Silent,
    /// Precedes every proposal and vote with a conflicting, validly signed one.
    Equivocator,
    /// Withholds approvals from the primary: `f1` answers only odd iterations
    /// of a verification window, `f2` only even ones.
    SplitSet { f1: BTreeSet<ReplicaId>, f2: BTreeSet<ReplicaId> },
    /// Stamps its own requests in the future and, as primary, rewrites the
    /// generation times of the requests it proposes.
    #[serde(rename_all = "camelCase")]
    TimestampForger {
        #[serde(default = "default_ahead_ms")]
        ahead_ms: i64,
    },
    #[serde(rename_all = "camelCase")]
    DelayInjector { extra_ms: i64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FaultProfile {
    #[serde(flatten)]
    pub kind: FaultKind,
    #[serde(default)]
    pub targets: BTreeSet<ReplicaId>,
    /// Virtual milliseconds since the start of the run.
    #[serde(default)]
    pub active_from_ms: i64,
    #[serde(default)]
    pub active_until_ms: Option<i64>,
}

impl FaultProfile {
    pub fn new(kind: FaultKind, targets: impl IntoIterator<Item = u32>) -> Self {
        FaultProfile {
            kind,
            targets: targets.into_iter().map(ReplicaId).collect(),
            active_from_ms: 0,
            active_until_ms: None,
        }
    }

    pub fn split(f1: impl IntoIterator<Item = u32>, f2: impl IntoIterator<Item = u32>) -> Self {
        let f1: BTreeSet<ReplicaId> = f1.into_iter().map(ReplicaId).collect();
        let f2: BTreeSet<ReplicaId> = f2.into_iter().map(ReplicaId).collect();
        FaultProfile {
            targets: f1.union(&f2).copied().collect(),
            kind: FaultKind::SplitSet { f1, f2 },
            active_from_ms: 0,
            active_until_ms: None,
        }
    }

    /// Targets, including split-set members not listed explicitly.
    pub fn all_targets(&self) -> BTreeSet<ReplicaId> {
        let mut t = self.targets.clone();
        if let FaultKind::SplitSet { f1, f2 } = &self.kind {
            t.extend(f1.iter().chain(f2));
        }
        t
    }

    pub fn is_active(&self, since_start: Micros) -> bool {
        let from = Micros::from_millis(self.active_from_ms);
        since_start >= from && self.active_until_ms.is_none_or(|u| since_start < Micros::from_millis(u))
    }

    pub(crate) fn validate(&self, n: usize) -> Result<(), SimError> {
        if let Some(r) = self.all_targets().into_iter().find(|r| r.index() >= n) {
            return Err(SimError::UnknownReplica(r));
        }
        if let FaultKind::SplitSet { f1, f2 } = &self.kind {
            if !f1.is_disjoint(f2) {
                return Err(SimError::ConfigInvalid("split sets overlap".into()));
            }
        }
        if matches!(self.kind, FaultKind::DelayInjector { extra_ms } if extra_ms < 0) {
            return Err(SimError::ConfigInvalid("negative injected delay".into()));
        }
        if self.active_until_ms.is_some_and(|u| u < self.active_from_ms) {
            return Err(SimError::ConfigInvalid("fault window ends before it starts".into()));
        }
        Ok(())
    }
}

/// One simulated run. Field names follow the JSON scenario files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct ScenarioConfig {
    pub name: String,
    pub n: usize,
    /// Modeled size of each transaction payload.
    pub payload_bytes: u64,
    /// Offered load, transactions per virtual second.
    pub lambda: f64,
    /// Length of the arrival period.
    pub duration_virtual_seconds: f64,
    pub seed: u64,
    /// Defaults to the 3f+1 thresholds for `n`.
    pub quorum: Option<QuorumConfig>,
    pub faults: Vec<FaultProfile>,
    pub scheme: TransactionScheme,
    pub link: LinkModel,
    pub cost: CostModel,
    pub window: WindowConfig,
    /// `None` disables view changes.
    pub view_change: Option<ViewChangeConfig>,
    pub max_transactions: Option<usize>,
    pub max_batch: usize,
    pub max_in_flight: usize,
    /// Stop this long after the last arrival even if work is outstanding.
    /// `None` runs until every transaction is resolved or nothing is left to do.
    pub drain_virtual_seconds: Option<f64>,
    /// Hard bound on processed events.
    pub max_events: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            name: "scenario".into(),
            n: 4,
            payload_bytes: 1024,
            lambda: 200.0,
            duration_virtual_seconds: 1.0,
            seed: 1,
            quorum: None,
            faults: Vec::new(),
            scheme: TransactionScheme::default(),
            link: LinkModel::default(),
            cost: CostModel::default(),
            window: WindowConfig::default(),
            view_change: None,
            max_transactions: None,
            max_batch: 64,
            max_in_flight: 2,
            drain_virtual_seconds: None,
            max_events: 50_000_000,
        }
    }
}

impl ScenarioConfig {
    pub fn quorum(&self) -> QuorumConfig {
        self.quorum.unwrap_or_else(|| QuorumConfig::for_n(self.n))
    }

    pub fn from_json(s: &str) -> Result<Self, SimError> {
        let cfg: ScenarioConfig = serde_json::from_str(s).map_err(|e| SimError::ConfigInvalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::ConfigInvalid(m));
        if self.n == 0 {
            return bad("n must be at least 1".into());
        }
        let q = self.quorum();
        if q.n != self.n {
            return bad(format!("quorum is for {} replicas, scenario has {}", q.n, self.n));
        }
        q.validate().map_err(SimError::ConfigInvalid)?;
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return bad(format!("lambda must be positive, got {}", self.lambda));
        }
        if !(self.duration_virtual_seconds.is_finite() && self.duration_virtual_seconds >= 0.0) {
            return bad("duration must be non-negative".into());
        }
        if self.drain_virtual_seconds.is_some_and(|d| !(d.is_finite() && d >= 0.0)) {
            return bad("drain must be non-negative".into());
        }
        if self.max_batch == 0 || self.max_in_flight == 0 {
            return bad("batch size and in-flight limit must be positive".into());
        }
        if !(self.cost.base_us >= 0.0 && self.cost.per_byte_ns >= 0.0) {
            return bad("costs must be non-negative".into());
        }
        self.link.one_way_delay.validate().map_err(SimError::ConfigInvalid)?;
        for l in &self.link.per_link {
            if l.src.index() >= self.n {
                return Err(SimError::UnknownReplica(l.src));
            }
            if l.dst.index() >= self.n {
                return Err(SimError::UnknownReplica(l.dst));
            }
            l.delay.validate().map_err(SimError::ConfigInvalid)?;
        }
        let mut faulty = BTreeSet::new();
        for f in &self.faults {
            f.validate(self.n)?;
            faulty.extend(f.all_targets());
        }
        if faulty.len() > q.f {
            log::warn!(
                "{}: {} faulty replicas exceed the tolerance f = {} for n = {}",
                self.name,
                faulty.len(),
                q.f,
                self.n
            );
        }
        Ok(())
    }

    /// Replicas named by any fault profile.
    pub fn faulty(&self) -> BTreeSet<ReplicaId> {
        self.faults.iter().flat_map(FaultProfile::all_targets).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenario_json_round_trip() {
        let json = r#"{
            "name": "split",
            "n": 7,
            "payloadBytes": 1048576,
            "lambda": 200,
            "durationVirtualSeconds": 0.5,
            "seed": 3,
            "faults": [
                {"kind": "splitSet", "f1": [5], "f2": [6]},
                {"kind": "timestampForger", "targets": [1], "activeFromMs": 10},
                {"kind": "delayInjector", "extraMs": 5, "targets": [2]}
            ],
            "link": {"oneWayDelay": {"kind": "uniform", "minMs": 40, "maxMs": 60}},
            "scheme": "fixed"
        }"#;
        let cfg = ScenarioConfig::from_json(json).unwrap();
        assert_eq!(cfg.n, 7);
        assert_eq!(cfg.scheme, TransactionScheme::FixedLength);
        assert_eq!(cfg.faulty(), [1, 2, 5, 6].into_iter().map(ReplicaId).collect());
        assert_eq!(cfg.faults[1].kind, FaultKind::TimestampForger { ahead_ms: 3_600_000 });
        assert!(!cfg.faults[1].is_active(Micros(9_999)));
        assert!(cfg.faults[1].is_active(Micros(10_000)));
        let back: ScenarioConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn invalid_scenarios_rejected() {
        let base = ScenarioConfig::default();
        let mut c = base.clone();
        c.n = 0;
        assert!(matches!(c.validate(), Err(SimError::ConfigInvalid(_))));
        let mut c = base.clone();
        c.faults.push(FaultProfile::new(FaultKind::Silent, [4]));
        assert_eq!(c.validate(), Err(SimError::UnknownReplica(ReplicaId(4))));
        let mut c = base.clone();
        c.lambda = 0.0;
        assert!(c.validate().is_err());
        let mut c = base;
        c.link = LinkModel {
            one_way_delay: DelayDist::Uniform { min_ms: 5.0, max_ms: 1.0 },
            per_link: vec![],
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn delays_are_non_negative_and_in_range() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let d = DelayDist::Uniform { min_ms: 1.0, max_ms: 2.0 };
        for _ in 0..1000 {
            let s = d.sample(&mut rng);
            assert!(Micros(1000) <= s && s <= Micros(2000));
        }
        assert_eq!(DelayDist::Constant { ms: 50.0 }.sample(&mut rng), Micros(50_000));
    }

    use rand::SeedableRng;
}
