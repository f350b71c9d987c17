use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use uuid::Uuid;

use super::config::{FaultKind, FaultProfile, ScenarioConfig};
use super::metrics::{ms, FlagRecord, NotificationRecord, SimMetrics, TxRecord};
use super::SimError;
use crate::audit::{build_insert_audit, encode_transaction, AuditContext, IdSource, ObjectSnapshot, SeededIds, TransactionScheme};
use crate::digest::digest_parts;
use crate::pbft::crypto::sign_msg;
use crate::pbft::{
    primary_for_view, ConsensusMsg, Event, MacKeyring, MsgBody, Output, Replica, ReplicaConfig, ReplicaId, Request,
    Verifier,
};
use crate::time::{CanonicalTimestamp, Micros};

/// Virtual time zero: 2020-01-01T00:00:00Z.
pub const SIM_EPOCH: Micros = Micros(1_577_836_800_000_000);

/// No run goes past this much virtual time.
const HORIZON: Micros = Micros(1_000_000 * 1_000_000);

#[derive(Debug)]
enum Ev {
    Deliver { to: ReplicaId, msgs: Vec<ConsensusMsg> },
    Arrival(usize),
    Timer(ReplicaId),
}

#[derive(Debug)]
struct Scheduled {
    at: Micros,
    order: u64,
    ev: Ev,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.order) == (other.at, other.order)
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.at, self.order).cmp(&(other.at, other.order))
    }
}

enum Work {
    Deliver(Vec<ConsensusMsg>),
    Submit(Request),
    Tick,
}

#[derive(Default)]
struct Cpu {
    busy_until: Micros,
    armed: BTreeSet<Micros>,
}

struct Arrival {
    at: Micros,
    request: Request,
}

#[derive(Default)]
struct TxState {
    client_exec: Option<Micros>,
    honest_exec: Option<Micros>,
    seq: Option<u64>,
    forged: bool,
    discarded: bool,
    /// Issued by a silent client, so it never leaves that replica.
    withheld: bool,
    request_msgs: u64,
}

/// A deterministic run of `n` replicas and one workload generator.
pub struct Simulation {
    cfg: ScenarioConfig,
    keyring: MacKeyring,
    replicas: Vec<Replica>,
    cpus: Vec<Cpu>,
    link_rngs: Vec<ChaCha8Rng>,
    faults: Vec<FaultProfile>,
    queue: BinaryHeap<Reverse<Scheduled>>,
    order: u64,
    now: Micros,
    arrivals: Vec<Arrival>,
    arrivals_done: usize,
    txs: BTreeMap<Uuid, TxState>,
    unresolved: usize,
    deliveries: usize,
    metrics: SimMetrics,
    started: bool,
}

impl std::fmt::Debug for Simulation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Simulation")
            .field("scenario", &self.cfg.name)
            .field("now", &self.now)
            .field("pending_events", &self.queue.len())
            .finish_non_exhaustive()
    }
}

fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

impl Simulation {
    pub fn new(cfg: ScenarioConfig) -> Result<Self, SimError> {
        cfg.validate()?;
        let n = cfg.n;
        let quorum = cfg.quorum();
        let keyring = MacKeyring::new(n, cfg.seed);
        let verifier: Arc<dyn Verifier> = Arc::new(keyring.clone());
        let mut replicas = Vec::with_capacity(n);
        for i in 0..n as u32 {
            let id = ReplicaId(i);
            let rc = ReplicaConfig {
                id,
                quorum,
                window: cfg.window,
                max_batch: cfg.max_batch,
                max_in_flight: cfg.max_in_flight,
                view_change: cfg.view_change,
                seed: cfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(u64::from(i)),
            };
            let r = Replica::new(rc, Box::new(keyring.signer(id)), verifier.clone())
                .map_err(|e| SimError::ConfigInvalid(e.to_string()))?;
            replicas.push(r);
        }
        let arrivals = generate_workload(&cfg)?;
        let metrics = SimMetrics {
            scenario: cfg.name.clone(),
            n,
            payload_bytes: cfg.payload_bytes,
            lambda: cfg.lambda,
            seed: cfg.seed,
            txs: Vec::new(),
            msg_count: BTreeMap::new(),
            msg_by_seq: BTreeMap::new(),
            dropped: 0,
            rejected: 0,
            notifications: Vec::new(),
            flags: Vec::new(),
            view_changes: 0,
            heights: Vec::new(),
            ledgers_consistent: true,
            committed: 0,
            throughput: 0.0,
            end_ms: 0.0,
            events: 0,
            truncated: false,
        };
        let mut sim = Simulation {
            keyring,
            replicas,
            cpus: (0..n).map(|_| Cpu::default()).collect(),
            link_rngs: (0..n as u64).map(|i| stream(cfg.seed, i)).collect(),
            faults: Vec::new(),
            queue: BinaryHeap::new(),
            order: 0,
            now: SIM_EPOCH,
            unresolved: arrivals.len(),
            deliveries: 0,
            txs: arrivals.iter().map(|a| (a.request.tx_id, TxState::default())).collect(),
            arrivals,
            arrivals_done: 0,
            metrics,
            started: false,
            cfg,
        };
        for f in sim.cfg.faults.clone() {
            sim.inject_fault(f)?;
        }
        for i in 0..sim.arrivals.len() {
            let at = sim.arrivals[i].at;
            sim.schedule(at, Ev::Arrival(i));
        }
        Ok(sim)
    }

    /// Adds a fault profile. It must not start before the current virtual time.
    pub fn inject_fault(&mut self, profile: FaultProfile) -> Result<(), SimError> {
        profile.validate(self.cfg.n)?;
        let from = SIM_EPOCH + Micros::from_millis(profile.active_from_ms);
        if self.started && from < self.now {
            return Err(SimError::FaultTooLate {
                active_from_ms: profile.active_from_ms,
                now_ms: ms(self.now - SIM_EPOCH),
            });
        }
        self.faults.push(profile);
        Ok(())
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn replicas(&self) -> &[Replica] {
        &self.replicas
    }

    /// Virtual time since the start of the run.
    pub fn elapsed(&self) -> Micros {
        self.now - SIM_EPOCH
    }

    /// Replicas named by any fault profile.
    pub fn faulty(&self) -> BTreeSet<ReplicaId> {
        self.faults.iter().flat_map(FaultProfile::all_targets).collect()
    }

    /// Runs to quiescence, the drain limit or the event cap.
    pub fn run(&mut self) -> SimMetrics {
        self.started = true;
        let faulty = self.faulty();
        let arrivals_end = self.arrivals.last().map_or(SIM_EPOCH, |a| a.at);
        let drain_end = self
            .cfg
            .drain_virtual_seconds
            .map(|d| arrivals_end + Micros((d * 1e6).round() as i64));
        let mut truncated = false;
        while let Some(Reverse(next)) = self.queue.pop() {
            if drain_end.is_some_and(|d| next.at > d) || next.at - SIM_EPOCH > HORIZON {
                truncated = true;
                break;
            }
            if self.metrics.events >= self.cfg.max_events {
                truncated = true;
                break;
            }
            self.metrics.events += 1;
            self.now = self.now.max(next.at);
            match next.ev {
                Ev::Arrival(i) => {
                    self.arrivals_done += 1;
                    let mut req = self.arrivals[i].request.clone();
                    if let Some(ahead) = self.forger_ahead(req.client) {
                        req.t_g = req.t_g + Micros::from_millis(ahead);
                        self.txs.get_mut(&req.tx_id).expect("generated").forged = true;
                    }
                    let client = req.client;
                    if self.active(client, self.now).any(|f| matches!(f.kind, FaultKind::Silent)) {
                        let state = self.txs.get_mut(&req.tx_id).expect("generated");
                        if !resolved(state, client, &faulty) {
                            self.unresolved -= 1;
                        }
                        state.withheld = true;
                    }
                    self.run_work(client, Work::Submit(req), &faulty);
                }
                Ev::Deliver { to, msgs } => {
                    self.deliveries -= 1;
                    self.run_work(to, Work::Deliver(msgs), &faulty);
                }
                Ev::Timer(r) => {
                    self.cpus[r.index()].armed.remove(&next.at);
                    self.run_work(r, Work::Tick, &faulty);
                }
            }
            if self.quiescent() {
                break;
            }
        }
        self.metrics.truncated = truncated;
        self.finish(&faulty)
    }

    fn quiescent(&self) -> bool {
        self.arrivals_done == self.arrivals.len()
            && self.unresolved == 0
            && self.deliveries == 0
            && self.replicas.iter().all(|r| r.open_windows() == 0)
    }

    fn schedule(&mut self, at: Micros, ev: Ev) {
        self.order += 1;
        self.queue.push(Reverse(Scheduled {
            at,
            order: self.order,
            ev,
        }));
    }

    fn active(&self, r: ReplicaId, at: Micros) -> impl Iterator<Item = &FaultProfile> {
        let since = at - SIM_EPOCH;
        self.faults
            .iter()
            .filter(move |f| f.all_targets().contains(&r) && f.is_active(since))
    }

    fn forger_ahead(&self, r: ReplicaId) -> Option<i64> {
        self.active(r, self.now).find_map(|f| match f.kind {
            FaultKind::TimestampForger { ahead_ms } => Some(ahead_ms),
            _ => None,
        })
    }

    fn run_work(&mut self, r: ReplicaId, work: Work, faulty: &BTreeSet<ReplicaId>) {
        let cost = self.cfg.cost;
        let start = self.now.max(self.cpus[r.index()].busy_until);
        let (t, outputs) = match work {
            Work::Deliver(msgs) => {
                let recv: Micros = msgs
                    .iter()
                    .map(|m| cost.cost(m.modeled_size()))
                    .fold(Micros::ZERO, |a, b| a + b);
                let t = start + recv;
                let mut outs = Vec::new();
                for m in &msgs {
                    match self.replicas[r.index()].handle(m, t) {
                        Ok(o) => outs.extend(o),
                        Err(e) => {
                            self.metrics.rejected += 1;
                            log::debug!("{r} rejected {} from {}: {e}", m.kind(), m.sender);
                        }
                    }
                }
                (t, outs)
            }
            Work::Submit(req) => {
                let t = start + cost.base().max(Micros(1));
                (t, self.replicas[r.index()].submit(req, t))
            }
            Work::Tick => (start, self.replicas[r.index()].tick(start)),
        };
        let mut departure = t;
        for out in outputs {
            match out {
                Output::Event(e) => self.record(r, t, e, faulty),
                Output::Send { to, msg } => {
                    let msgs = self.apply_faults(r, to, msg, t);
                    if msgs.is_empty() {
                        self.metrics.dropped += 1;
                        continue;
                    }
                    for m in &msgs {
                        departure = departure + cost.cost(m.modeled_size());
                        self.count(m);
                    }
                    let delay = self.cfg.link.delay(r, to).sample(&mut self.link_rngs[r.index()]);
                    let extra: i64 = self
                        .active(r, t)
                        .filter_map(|f| match f.kind {
                            FaultKind::DelayInjector { extra_ms } => Some(extra_ms),
                            _ => None,
                        })
                        .sum();
                    let arrive = departure + delay + Micros::from_millis(extra);
                    self.deliveries += 1;
                    self.schedule(arrive, Ev::Deliver { to, msgs });
                }
            }
        }
        self.cpus[r.index()].busy_until = departure;
        if let Some(d) = self.replicas[r.index()].next_deadline() {
            let d = d.max(departure);
            let cpu = &mut self.cpus[r.index()];
            if cpu.armed.first().is_none_or(|first| d < *first) {
                cpu.armed.insert(d);
                self.schedule(d, Ev::Timer(r));
            }
        }
    }

    fn count(&mut self, m: &ConsensusMsg) {
        *self.metrics.msg_count.entry(m.kind()).or_default() += 1;
        match &m.body {
            MsgBody::Request(req) => {
                if let Some(tx) = self.txs.get_mut(&req.tx_id) {
                    tx.request_msgs += 1;
                }
            }
            body => {
                if let Some(seq) = body.seq() {
                    *self.metrics.msg_by_seq.entry(seq).or_default() += 1;
                }
            }
        }
    }

    /// What a possibly faulty sender actually puts on the wire.
    fn apply_faults(&self, r: ReplicaId, to: ReplicaId, msg: ConsensusMsg, at: Micros) -> Vec<ConsensusMsg> {
        let mut msgs = vec![msg];
        for f in self.active(r, at) {
            match &f.kind {
                FaultKind::Silent => return Vec::new(),
                FaultKind::Equivocator => {
                    if let Some(fake) = self.equivocate(&msgs[0]) {
                        msgs.insert(0, fake);
                    }
                }
                FaultKind::SplitSet { f1, f2 } => {
                    if let MsgBody::Commit { view, iteration, .. } = msgs[0].body {
                        let to_primary = to == primary_for_view(view, self.cfg.n);
                        let odd = iteration % 2 == 1;
                        if to_primary && ((f1.contains(&r) && !odd) || (f2.contains(&r) && odd)) {
                            return Vec::new();
                        }
                    }
                }
                FaultKind::TimestampForger { ahead_ms } => {
                    for m in &mut msgs {
                        self.forge_proposal(m, *ahead_ms);
                    }
                }
                FaultKind::DelayInjector { .. } => {}
            }
        }
        msgs
    }

    fn resign(&self, msg: &mut ConsensusMsg) {
        sign_msg(&self.keyring.signer(msg.sender), msg);
    }

    fn equivocate(&self, msg: &ConsensusMsg) -> Option<ConsensusMsg> {
        let mut fake = msg.clone();
        match &mut fake.body {
            MsgBody::PrePrepare {
                digest,
                batch: Some(batch),
                ..
            } => {
                batch.proposed_at = batch.proposed_at + Micros(1);
                *digest = batch.digest();
            }
            MsgBody::Prepare { digest, .. } | MsgBody::Commit { digest, .. } => {
                *digest = digest_parts(&[b"conflicting", digest.as_bytes()]);
            }
            _ => return None,
        }
        self.resign(&mut fake);
        Some(fake)
    }

    fn forge_proposal(&self, msg: &mut ConsensusMsg, ahead_ms: i64) {
        if let MsgBody::PrePrepare {
            digest,
            batch: Some(batch),
            ..
        } = &mut msg.body
        {
            for req in &mut batch.requests {
                req.t_g = req.t_g + Micros::from_millis(ahead_ms);
            }
            *digest = batch.digest();
            self.resign(msg);
        }
    }

    fn record(&mut self, r: ReplicaId, at: Micros, event: Event, faulty: &BTreeSet<ReplicaId>) {
        match event {
            Event::Executed(exec) => {
                for tx in &exec.txs {
                    let Some(state) = self.txs.get_mut(&tx.tx_id) else { continue };
                    let was = resolved(state, tx.client, faulty);
                    state.seq.get_or_insert(exec.seq);
                    if r == tx.client {
                        state.client_exec.get_or_insert(exec.at);
                    }
                    if !faulty.contains(&r) {
                        state.honest_exec = Some(state.honest_exec.map_or(exec.at, |h| h.min(exec.at)));
                    }
                    if !was && resolved(state, tx.client, faulty) {
                        self.unresolved -= 1;
                    }
                }
            }
            Event::Discarded { tx_id, client } => {
                if let Some(state) = self.txs.get_mut(&tx_id) {
                    let was = resolved(state, client, faulty);
                    state.discarded = true;
                    if !was {
                        self.unresolved -= 1;
                    }
                }
            }
            Event::Flagged { replica, reason } => self.metrics.flags.push(FlagRecord {
                observer: r,
                replica,
                reason,
            }),
            Event::Notification(notification) => self.metrics.notifications.push(NotificationRecord {
                at_ms: ms(at - SIM_EPOCH),
                primary: r,
                notification,
            }),
            Event::ViewChanged { view } => {
                self.metrics.view_changes = self.metrics.view_changes.max(view);
            }
            Event::WindowRetried { .. }
            | Event::WindowClosed { .. }
            | Event::ClientAccepted { .. }
            | Event::ViewChangeStarted { .. } => {}
        }
    }

    fn finish(&mut self, faulty: &BTreeSet<ReplicaId>) -> SimMetrics {
        let mut m = self.metrics.clone();
        m.end_ms = ms(self.now - SIM_EPOCH);
        for a in &self.arrivals[..] {
            let state = &self.txs[&a.request.tx_id];
            let t_c = if faulty.contains(&a.request.client) {
                state.client_exec.or(state.honest_exec)
            } else {
                state.client_exec
            };
            if let Some(seq) = state.seq {
                *m.msg_by_seq.entry(seq).or_default() += state.request_msgs;
            }
            m.txs.push(TxRecord {
                tx_id: a.request.tx_id,
                client: a.request.client,
                t_g_ms: ms(a.at - SIM_EPOCH),
                t_c_ms: t_c.map(|t| ms(t - SIM_EPOCH)),
                seq: state.seq,
                forged: state.forged,
                discarded: state.discarded,
            });
        }
        m.committed = m.txs.iter().filter(|t| t.t_c_ms.is_some()).count();
        let first = m.txs.iter().map(|t| t.t_g_ms).reduce(f64::min);
        let last = m.txs.iter().filter_map(|t| t.t_c_ms).reduce(f64::max);
        m.throughput = match (first, last) {
            (Some(f), Some(l)) if l > f => m.committed as f64 / ((l - f) / 1000.0),
            _ => 0.0,
        };
        m.heights = self.replicas.iter().map(|r| r.recovery().len()).collect();
        m.ledgers_consistent = self.ledgers_consistent(faulty);
        m
    }

    /// Honest replicas agree on every block they both hold.
    pub fn ledgers_consistent(&self, faulty: &BTreeSet<ReplicaId>) -> bool {
        let honest: Vec<&Replica> = self.replicas.iter().filter(|r| !faulty.contains(&r.id())).collect();
        let Some(longest) = honest.iter().max_by_key(|r| r.recovery().len()) else {
            return true;
        };
        let reference = longest.recovery().blocks();
        honest.iter().all(|r| {
            r.recovery()
                .blocks()
                .iter()
                .zip(reference)
                .all(|(a, b)| a.hash == b.hash)
                && r.detection()
                    .blocks()
                    .iter()
                    .zip(longest.detection().blocks())
                    .all(|(a, b)| a.hash == b.hash)
        })
    }
}

fn resolved(state: &TxState, client: ReplicaId, faulty: &BTreeSet<ReplicaId>) -> bool {
    state.discarded
        || state.withheld
        || state.client_exec.is_some()
        || (faulty.contains(&client) && state.honest_exec.is_some())
}

/// Poisson arrivals over the configured duration. Transaction `i` is issued
/// by replica `(i + 1) mod n`.
fn generate_workload(cfg: &ScenarioConfig) -> Result<Vec<Arrival>, SimError> {
    let mut rng = stream(cfg.seed, cfg.n as u64);
    let mut ids = SeededIds::new(cfg.seed ^ 0x05ee_d1d5);
    let exp = Exp::new(cfg.lambda).map_err(|e| SimError::ConfigInvalid(e.to_string()))?;
    let end = cfg.duration_virtual_seconds;
    let cap = cfg.max_transactions.unwrap_or(usize::MAX);
    let mut out = Vec::new();
    let mut t = 0.0;
    while out.len() < cap {
        t += exp.sample(&mut rng);
        if t >= end {
            break;
        }
        let i = out.len();
        let at = SIM_EPOCH + Micros((t * 1e6).round() as i64).max(Micros(1));
        let client = ReplicaId(((i + 1) % cfg.n) as u32);
        let (tx_id, bytes) = synthetic_payload(i, at, cfg.scheme, &mut ids)?;
        let mut request = Request::new(tx_id, client, at, bytes);
        request.wire_size = match cfg.scheme {
            TransactionScheme::FixedLength => request.payload.len() as u64,
            _ => cfg.payload_bytes.max(request.payload.len() as u64),
        };
        out.push(Arrival { at, request });
    }
    Ok(out)
}

fn synthetic_payload(
    i: usize,
    at: Micros,
    scheme: TransactionScheme,
    ids: &mut SeededIds,
) -> Result<(Uuid, Vec<u8>), SimError> {
    let ctx = AuditContext {
        app_id: "netsim".into(),
        session_id: ids.next_id(),
        user_id: (i % 997) as i64,
        url: "/orders".into(),
        now: CanonicalTimestamp::utc(at.floor_millis()),
    };
    let snapshot = ObjectSnapshot::new("Order", i as i64)
        .with("Status", "Created")
        .with("Quantity", (i % 50).to_string());
    let entry = build_insert_audit(&snapshot, &ctx, ids).map_err(|e| SimError::ConfigInvalid(e.to_string()))?;
    let payload = encode_transaction(&[entry], scheme)
        .map_err(|e| SimError::ConfigInvalid(e.to_string()))?
        .into_iter()
        .next()
        .expect("one entry yields one payload");
    Ok((payload.tx_id, payload.bytes))
}

/// Runs one scenario to completion.
pub fn run_scenario(cfg: ScenarioConfig) -> Result<SimMetrics, SimError> {
    Ok(Simulation::new(cfg)?.run())
}
