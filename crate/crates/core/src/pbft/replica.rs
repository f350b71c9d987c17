//! The replica state machine.
//!
//! A [`Replica`] performs no I/O. Callers feed it messages, client
//! submissions and clock ticks, and carry out the [`Output`]s it returns.

use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use uuid::Uuid;

use super::crypto::{sign_msg, sign_request, verify_msg, verify_request, Signer, Verifier};
use super::ordering::{admit_request, replica_recheck, Admission, Recheck};
use super::types::{
    primary_for_view, Batch, ConsensusMsg, MsgBody, PreparedEntry, QuorumConfig, ReplicaId, Request,
};
use super::viewchange::{compute_proposals, VIEW_CHANGE_LOG};
use super::window::{
    choose_phase_count, compute_window, ApprovalRounds, VerificationWindow, WindowConfig, WindowVerdict,
};
use super::PbftError;
use crate::digest::Digest32;
use crate::ledger::{Chain, ChainKind, CommittedTx};
use crate::time::{CanonicalTimestamp, Micros};

const DELAY_SAMPLES: usize = 64;
const FUTURE_BUFFER: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ViewChangeConfig {
    /// How long a backup waits for progress on known work before suspecting
    /// the primary. Doubles with each consecutive view change.
    pub timeout_us: i64,
    /// How long a client waits for its own request to execute before
    /// broadcasting it to every replica.
    pub client_retry_us: i64,
}

impl Default for ViewChangeConfig {
    fn default() -> Self {
        ViewChangeConfig {
            timeout_us: 2_000_000,
            client_retry_us: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplicaConfig {
    pub id: ReplicaId,
    pub quorum: QuorumConfig,
    pub window: WindowConfig,
    /// Requests per batch.
    pub max_batch: usize,
    /// Batches the primary keeps outstanding before it waits.
    pub max_in_flight: usize,
    /// `None` disables view changes and client retransmission.
    pub view_change: Option<ViewChangeConfig>,
    pub seed: u64,
}

impl ReplicaConfig {
    pub fn new(id: ReplicaId, n: usize) -> Self {
        ReplicaConfig {
            id,
            quorum: QuorumConfig::for_n(n),
            window: WindowConfig::default(),
            max_batch: 64,
            max_in_flight: 2,
            view_change: Some(ViewChangeConfig::default()),
            seed: u64::from(id.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FlagReason {
    /// Two conflicting messages for the same slot.
    Equivocation,
    /// A generation time not strictly before its receipt or proposal.
    ForgedTimestamp,
    BadSignature,
    /// A proposal whose contents do not match its digest.
    BadDigest,
    /// A proposal from a replica that is not the primary.
    NotPrimary,
    InvalidNewView,
    /// Reported by an aborted verification window.
    WindowSuspect,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AbortReason {
    ApprovalWindowExpired,
}

/// Structured record for auditors when a verification window gives up.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AuditorNotification {
    pub seq: u64,
    pub digest: Digest32,
    pub reason: AbortReason,
    pub iterations: u32,
    pub suspects: BTreeSet<ReplicaId>,
    /// Transactions in the batch whose approval timed out.
    pub tx_ids: Vec<Uuid>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ExecutedTx {
    pub tx_id: Uuid,
    pub client: ReplicaId,
    pub t_g: Micros,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Execution {
    pub seq: u64,
    pub view: u64,
    pub digest: Digest32,
    pub at: Micros,
    /// Height of the block appended for this batch, if any transaction in it
    /// was new.
    pub block_height: Option<u64>,
    pub txs: Vec<ExecutedTx>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Executed(Execution),
    Discarded { tx_id: Uuid, client: ReplicaId },
    Flagged { replica: ReplicaId, reason: FlagReason },
    WindowRetried { seq: u64, iteration: u32, window_us: i64 },
    WindowClosed { seq: u64, iteration: u32 },
    Notification(AuditorNotification),
    ClientAccepted { tx_id: Uuid, seq: u64 },
    ViewChangeStarted { view: u64 },
    ViewChanged { view: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Output {
    Send { to: ReplicaId, msg: ConsensusMsg },
    Event(Event),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    Normal,
    ViewChanging { target: u64, deadline: Micros },
}

#[derive(Debug, Clone, Default)]
struct Slot {
    view: u64,
    digest: Option<Digest32>,
    batch: Option<Batch>,
    iteration: u32,
    prepares: BTreeMap<ReplicaId, Digest32>,
    /// Commit votes by (sender, view); counted across views by digest.
    commits: BTreeMap<(ReplicaId, u64), Digest32>,
    equivocators: BTreeSet<ReplicaId>,
    refused: bool,
    sent_commit: bool,
    committed: bool,
}

#[derive(Debug, Clone)]
struct ClientPending {
    submitted: Micros,
    request: Request,
    retry_at: Option<Micros>,
    retry_gap: Micros,
    executed: bool,
    accepted: bool,
    replies: BTreeMap<Digest32, BTreeSet<ReplicaId>>,
}

pub struct Replica {
    cfg: ReplicaConfig,
    signer: Box<dyn Signer>,
    verifier: Arc<dyn Verifier>,
    rng: ChaCha8Rng,

    view: u64,
    mode: Mode,
    vc_timeout: Micros,
    progress_deadline: Option<Micros>,
    view_changes: BTreeMap<u64, BTreeMap<ReplicaId, ConsensusMsg>>,
    future: VecDeque<ConsensusMsg>,

    next_seq: u64,
    last_exec: u64,
    slots: BTreeMap<u64, Slot>,
    exec_log: BTreeMap<u64, (u64, Batch)>,
    pending: VecDeque<Request>,
    in_flight_tx: HashSet<Uuid>,
    known: BTreeMap<Uuid, Request>,
    executed_tx: HashSet<Uuid>,
    discarded: HashSet<Uuid>,
    windows: BTreeMap<u64, VerificationWindow>,
    clients: BTreeMap<Uuid, ClientPending>,

    flagged: BTreeSet<ReplicaId>,
    flag_log: BTreeSet<(ReplicaId, FlagReason)>,
    delays: VecDeque<Micros>,

    recovery: Chain,
    detection: Chain,
    out: Vec<Output>,
}

impl std::fmt::Debug for Replica {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Replica")
            .field("id", &self.cfg.id)
            .field("view", &self.view)
            .field("last_exec", &self.last_exec)
            .field("blocks", &self.recovery.len())
            .finish_non_exhaustive()
    }
}

impl Replica {
    pub fn new(cfg: ReplicaConfig, signer: Box<dyn Signer>, verifier: Arc<dyn Verifier>) -> Result<Self, PbftError> {
        cfg.quorum.validate().map_err(PbftError::Config)?;
        if cfg.id.index() >= cfg.quorum.n {
            return Err(PbftError::Config(format!("{} outside a group of {}", cfg.id, cfg.quorum.n)));
        }
        if signer.id() != cfg.id {
            return Err(PbftError::Config(format!("signer is {} but replica is {}", signer.id(), cfg.id)));
        }
        if cfg.max_batch == 0 || cfg.max_in_flight == 0 {
            return Err(PbftError::Config("batch size and in-flight limit must be positive".into()));
        }
        if let ApprovalRounds::Random { min, max } = cfg.window.rounds {
            if min < 2 || min > max {
                return Err(PbftError::InvalidPhaseRange(min, max));
            }
        }
        Ok(Replica {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            vc_timeout: Micros(cfg.view_change.map_or(0, |v| v.timeout_us)),
            cfg,
            signer,
            verifier,
            view: 0,
            mode: Mode::Normal,
            progress_deadline: None,
            view_changes: BTreeMap::new(),
            future: VecDeque::new(),
            next_seq: 1,
            last_exec: 0,
            slots: BTreeMap::new(),
            exec_log: BTreeMap::new(),
            pending: VecDeque::new(),
            in_flight_tx: HashSet::new(),
            known: BTreeMap::new(),
            executed_tx: HashSet::new(),
            discarded: HashSet::new(),
            windows: BTreeMap::new(),
            clients: BTreeMap::new(),
            flagged: BTreeSet::new(),
            flag_log: BTreeSet::new(),
            delays: VecDeque::new(),
            recovery: Chain::new(ChainKind::Recovery),
            detection: Chain::new(ChainKind::Detection),
            out: Vec::new(),
        })
    }

    pub fn id(&self) -> ReplicaId {
        self.cfg.id
    }

    pub fn config(&self) -> &ReplicaConfig {
        &self.cfg
    }

    pub fn view(&self) -> u64 {
        self.view
    }

    pub fn primary(&self) -> ReplicaId {
        primary_for_view(self.view, self.cfg.quorum.n)
    }

    pub fn is_primary(&self) -> bool {
        self.primary() == self.cfg.id
    }

    pub fn is_view_changing(&self) -> bool {
        matches!(self.mode, Mode::ViewChanging { .. })
    }

    pub fn last_executed(&self) -> u64 {
        self.last_exec
    }

    pub fn recovery(&self) -> &Chain {
        &self.recovery
    }

    pub fn detection(&self) -> &Chain {
        &self.detection
    }

    pub fn flagged(&self) -> &BTreeSet<ReplicaId> {
        &self.flagged
    }

    pub fn open_windows(&self) -> usize {
        self.windows.len()
    }

    /// Requests this replica knows about that have not executed yet.
    pub fn outstanding(&self) -> usize {
        self.known.len()
    }

    /// Median of recently observed one-way delays, or the configured fallback.
    pub fn t_b(&self) -> Micros {
        if self.delays.is_empty() {
            return Micros(self.cfg.window.t_b_fallback_us);
        }
        let mut v: Vec<Micros> = self.delays.iter().copied().collect();
        v.sort();
        v[v.len() / 2]
    }

    /// Earliest time at which [`Replica::tick`] has work to do.
    pub fn next_deadline(&self) -> Option<Micros> {
        let windows = self.windows.values().map(VerificationWindow::deadline);
        let clients = self.clients.values().filter_map(|c| c.retry_at);
        let vc = match self.mode {
            Mode::ViewChanging { deadline, .. } => Some(deadline),
            Mode::Normal => self.progress_deadline,
        };
        windows.chain(clients).chain(vc).min()
    }

    // ----- entry points --------------------------------------------------

    /// Submits a request this replica originates as a client. The request is
    /// signed here.
    pub fn submit(&mut self, mut req: Request, now: Micros) -> Vec<Output> {
        req.client = self.cfg.id;
        sign_request(self.signer.as_ref(), &mut req);
        let retry_gap = Micros(self.cfg.view_change.map_or(0, |v| v.client_retry_us));
        self.clients.insert(
            req.tx_id,
            ClientPending {
                submitted: now,
                request: req.clone(),
                retry_at: self.cfg.view_change.map(|_| now + retry_gap),
                retry_gap,
                executed: false,
                accepted: false,
                replies: BTreeMap::new(),
            },
        );
        if self.is_primary() && !self.is_view_changing() {
            self.primary_admit(req, now);
        } else {
            let primary = self.primary();
            self.send(primary, MsgBody::Request(req), now);
        }
        self.take()
    }

    /// Dispatches one message from a peer.
    pub fn handle(&mut self, msg: &ConsensusMsg, now: Micros) -> Result<Vec<Output>, PbftError> {
        match &msg.body {
            MsgBody::Request(_) => self.on_request(msg, now),
            MsgBody::PrePrepare { .. } => self.on_preprepare(msg, now),
            MsgBody::Prepare { .. } => self.on_prepare(msg, now),
            MsgBody::Commit { .. } => self.on_commit(msg, now),
            MsgBody::Reply { .. } => self.on_reply(msg, now),
            MsgBody::ViewChange { .. } => self.on_view_change(msg, now),
            MsgBody::NewView { .. } => self.on_new_view(msg, now),
        }
    }

    /// Fires every timer due at `now`.
    pub fn tick(&mut self, now: Micros) -> Vec<Output> {
        let due: Vec<u64> = self
            .windows
            .values()
            .filter(|w| w.deadline() <= now)
            .map(|w| w.seq)
            .collect();
        for seq in due {
            self.window_tick_inner(seq, now);
        }
        match self.mode {
            Mode::ViewChanging { target, deadline } if deadline <= now => {
                self.start_view_change(target + 1, now);
            }
            Mode::Normal if self.progress_deadline.is_some_and(|d| d <= now) => {
                self.progress_deadline = None;
                self.start_view_change(self.view + 1, now);
            }
            _ => {}
        }
        self.client_timers(now);
        self.take()
    }

    pub fn on_request(&mut self, msg: &ConsensusMsg, now: Micros) -> Result<Vec<Output>, PbftError> {
        self.admit(msg, now)?;
        let MsgBody::Request(req) = &msg.body else {
            return Err(PbftError::UnexpectedKind(msg.kind()));
        };
        if !verify_request(self.verifier.as_ref(), req) {
            self.flag(msg.sender, FlagReason::BadSignature);
            return Err(PbftError::BadSignature(req.client));
        }
        if !req.payload_ok() {
            self.flag(msg.sender, FlagReason::BadDigest);
            return Err(PbftError::BadDigest);
        }
        if self.executed_tx.contains(&req.tx_id) || self.discarded.contains(&req.tx_id) {
            return Ok(self.take());
        }
        if self.is_primary() && !self.is_view_changing() {
            self.primary_admit(req.clone(), now);
        } else if replica_recheck(req.t_g, now) == Recheck::Flag {
            self.discarded.insert(req.tx_id);
            self.emit(Event::Discarded {
                tx_id: req.tx_id,
                client: req.client,
            });
            self.flag(req.client, FlagReason::ForgedTimestamp);
        } else {
            if let std::collections::btree_map::Entry::Vacant(slot) = self.known.entry(req.tx_id) {
                slot.insert(req.clone());
                if msg.sender == req.client && !self.is_view_changing() {
                    let primary = self.primary();
                    self.send(primary, MsgBody::Request(req.clone()), now);
                }
            }
            self.arm_progress(now);
        }
        Ok(self.take())
    }

    pub fn on_preprepare(&mut self, msg: &ConsensusMsg, now: Micros) -> Result<Vec<Output>, PbftError> {
        self.admit(msg, now)?;
        let MsgBody::PrePrepare {
            view,
            seq,
            iteration,
            digest,
            batch,
        } = &msg.body
        else {
            return Err(PbftError::UnexpectedKind(msg.kind()));
        };
        let (view, seq, iteration, digest) = (*view, *seq, *iteration, *digest);
        if self.stale_or_future(msg, view)? {
            return Ok(self.take());
        }
        if msg.sender != primary_for_view(view, self.cfg.quorum.n) {
            self.flag(msg.sender, FlagReason::NotPrimary);
            return Err(PbftError::NotPrimary(msg.sender));
        }
        if self.is_primary() || self.is_view_changing() {
            return Ok(self.take());
        }
        let Some(batch) = batch else {
            // Verification-window retry: re-send the approval if we have one.
            let resend = match self.slots.get_mut(&seq) {
                Some(slot) if slot.digest == Some(digest) => {
                    slot.iteration = slot.iteration.max(iteration);
                    slot.sent_commit
                }
                _ => false,
            };
            if resend {
                let body = MsgBody::Commit {
                    view: self.view,
                    seq,
                    iteration,
                    digest,
                };
                self.send(msg.sender, body, now);
            }
            return Ok(self.take());
        };
        if batch.digest() != digest {
            self.flag(msg.sender, FlagReason::BadDigest);
            return Err(PbftError::BadDigest);
        }
        let existing = self
            .slots
            .get(&seq)
            .filter(|s| s.view == view)
            .and_then(|s| s.digest);
        match existing {
            Some(d) if d == digest => return Ok(self.take()),
            Some(_) => {
                self.flag(msg.sender, FlagReason::Equivocation);
                self.slots.entry(seq).or_default().refused = true;
                self.start_view_change(view + 1, now);
                return Ok(self.take());
            }
            None => {}
        }
        if let Some(reason) = self.check_batch(batch, now) {
            self.flag(msg.sender, reason);
            let slot = self.slot(seq);
            slot.refused = true;
            self.start_view_change(view + 1, now);
            return Ok(self.take());
        }
        for r in &batch.requests {
            if !self.executed_tx.contains(&r.tx_id) {
                self.known.entry(r.tx_id).or_insert_with(|| r.clone());
            }
        }
        let me = self.cfg.id;
        let slot = self.slot(seq);
        if slot.refused {
            return Ok(self.take());
        }
        slot.digest = Some(digest);
        slot.batch = Some(batch.clone());
        slot.iteration = iteration.max(1);
        slot.prepares.insert(me, digest);
        self.broadcast(MsgBody::Prepare { view, seq, digest }, now);
        self.arm_progress(now);
        self.advance(seq, now);
        Ok(self.take())
    }

    pub fn on_prepare(&mut self, msg: &ConsensusMsg, now: Micros) -> Result<Vec<Output>, PbftError> {
        self.admit(msg, now)?;
        let MsgBody::Prepare { view, seq, digest } = &msg.body else {
            return Err(PbftError::UnexpectedKind(msg.kind()));
        };
        let (view, seq, digest) = (*view, *seq, *digest);
        if self.stale_or_future(msg, view)? || self.is_view_changing() {
            return Ok(self.take());
        }
        if msg.sender == primary_for_view(view, self.cfg.quorum.n) {
            return Ok(self.take());
        }
        let slot = self.slot(seq);
        if slot.equivocators.contains(&msg.sender) {
            return Ok(self.take());
        }
        match slot.prepares.get(&msg.sender) {
            Some(d) if *d != digest => {
                slot.equivocators.insert(msg.sender);
                self.flag(msg.sender, FlagReason::Equivocation);
                return Ok(self.take());
            }
            Some(_) => return Ok(self.take()),
            None => {
                slot.prepares.insert(msg.sender, digest);
            }
        }
        self.advance(seq, now);
        Ok(self.take())
    }

    pub fn on_commit(&mut self, msg: &ConsensusMsg, now: Micros) -> Result<Vec<Output>, PbftError> {
        self.admit(msg, now)?;
        let MsgBody::Commit {
            view,
            seq,
            iteration,
            digest,
        } = &msg.body
        else {
            return Err(PbftError::UnexpectedKind(msg.kind()));
        };
        let (view, seq, iteration, digest) = (*view, *seq, *iteration, *digest);
        let slot = self.slot(seq);
        if slot.equivocators.contains(&msg.sender) {
            return Ok(self.take());
        }
        match slot.commits.get(&(msg.sender, view)) {
            Some(d) if *d != digest => {
                slot.equivocators.insert(msg.sender);
                self.flag(msg.sender, FlagReason::Equivocation);
                return Ok(self.take());
            }
            _ => {
                slot.commits.insert((msg.sender, view), digest);
            }
        }
        let approved = match self.windows.get_mut(&seq) {
            Some(w) if w.digest == digest => {
                w.responders.record(iteration, msg.sender);
                w.is_approved(self.cfg.quorum.reply).then_some(w.iteration)
            }
            _ => None,
        };
        if let Some(iteration) = approved {
            self.windows.remove(&seq);
            self.emit(Event::WindowClosed { seq, iteration });
        }
        self.advance(seq, now);
        Ok(self.take())
    }

    pub fn on_reply(&mut self, msg: &ConsensusMsg, now: Micros) -> Result<Vec<Output>, PbftError> {
        self.admit(msg, now)?;
        let MsgBody::Reply { seq, tx_id, digest, .. } = &msg.body else {
            return Err(PbftError::UnexpectedKind(msg.kind()));
        };
        self.client_reply(*tx_id, *seq, *digest, msg.sender);
        Ok(self.take())
    }

    pub fn on_view_change(&mut self, msg: &ConsensusMsg, now: Micros) -> Result<Vec<Output>, PbftError> {
        self.admit(msg, now)?;
        let MsgBody::ViewChange { new_view, .. } = &msg.body else {
            return Err(PbftError::UnexpectedKind(msg.kind()));
        };
        let new_view = *new_view;
        if new_view <= self.view {
            return Ok(self.take());
        }
        self.view_changes
            .entry(new_view)
            .or_default()
            .insert(msg.sender, msg.clone());
        // Join once f+1 replicas want a view beyond the one we aim for.
        let floor = match self.mode {
            Mode::ViewChanging { target, .. } => target,
            Mode::Normal => self.view,
        };
        let join = self
            .view_changes
            .range(floor + 1..)
            .find(|(_, vcs)| vcs.len() > self.cfg.quorum.f)
            .map(|(v, _)| *v);
        if let Some(v) = join {
            self.start_view_change(v, now);
        }
        self.try_new_view(now);
        Ok(self.take())
    }

    pub fn on_new_view(&mut self, msg: &ConsensusMsg, now: Micros) -> Result<Vec<Output>, PbftError> {
        self.admit(msg, now)?;
        let MsgBody::NewView {
            view,
            view_changes,
            proposals,
        } = &msg.body
        else {
            return Err(PbftError::UnexpectedKind(msg.kind()));
        };
        let view = *view;
        if view < self.view || (view == self.view && !self.is_view_changing()) {
            return Ok(self.take());
        }
        if msg.sender != primary_for_view(view, self.cfg.quorum.n) {
            self.flag(msg.sender, FlagReason::NotPrimary);
            return Err(PbftError::NotPrimary(msg.sender));
        }
        let mut senders = BTreeSet::new();
        for vc in view_changes {
            let ok = matches!(vc.body, MsgBody::ViewChange { new_view, .. } if new_view == view)
                && vc.sender.index() < self.cfg.quorum.n
                && verify_msg(self.verifier.as_ref(), vc);
            if !ok || !senders.insert(vc.sender) {
                self.flag(msg.sender, FlagReason::InvalidNewView);
                return Err(PbftError::InvalidNewView("bad view-change certificate".into()));
            }
        }
        if senders.len() < 2 * self.cfg.quorum.f + 1 {
            self.flag(msg.sender, FlagReason::InvalidNewView);
            return Err(PbftError::InvalidNewView(format!("{} view changes", senders.len())));
        }
        if &compute_proposals(view_changes) != proposals {
            self.flag(msg.sender, FlagReason::InvalidNewView);
            return Err(PbftError::InvalidNewView("proposals do not follow from certificate".into()));
        }
        self.enter_view(view, proposals.clone(), now);
        Ok(self.take())
    }

    /// Evaluates the verification window for `seq` at `now`.
    pub fn window_tick(&mut self, seq: u64, now: Micros) -> (WindowVerdict, Vec<Output>) {
        let verdict = self.window_tick_inner(seq, now);
        (verdict, self.take())
    }

    // ----- primary -------------------------------------------------------

    fn primary_admit(&mut self, req: Request, now: Micros) {
        if admit_request(req.t_g, now) == Admission::Discard {
            self.discarded.insert(req.tx_id);
            self.emit(Event::Discarded {
                tx_id: req.tx_id,
                client: req.client,
            });
            self.flag(req.client, FlagReason::ForgedTimestamp);
            return;
        }
        if self.in_flight_tx.contains(&req.tx_id) || self.pending.iter().any(|r| r.tx_id == req.tx_id) {
            return;
        }
        self.known.entry(req.tx_id).or_insert_with(|| req.clone());
        self.pending.push_back(req);
        self.try_propose(now);
    }

    fn in_flight(&self) -> usize {
        (self.next_seq - 1).saturating_sub(self.last_exec) as usize
    }

    fn try_propose(&mut self, now: Micros) {
        while self.is_primary() && !self.is_view_changing() && self.in_flight() < self.cfg.max_in_flight {
            let mut requests = Vec::new();
            while requests.len() < self.cfg.max_batch {
                let Some(r) = self.pending.pop_front() else { break };
                if self.executed_tx.contains(&r.tx_id) || self.in_flight_tx.contains(&r.tx_id) || r.t_g >= now {
                    continue;
                }
                self.in_flight_tx.insert(r.tx_id);
                requests.push(r);
            }
            if requests.is_empty() {
                return;
            }
            let batch = Batch {
                proposed_at: now,
                requests,
            };
            let digest = batch.digest();
            let seq = self.next_seq;
            self.next_seq += 1;
            let view = self.view;
            let slot = self.slot(seq);
            *slot = Slot {
                view,
                digest: Some(digest),
                batch: Some(batch.clone()),
                iteration: 1,
                ..Slot::default()
            };
            self.broadcast(
                MsgBody::PrePrepare {
                    view,
                    seq,
                    iteration: 1,
                    digest,
                    batch: Some(batch),
                },
                now,
            );
            self.open_window(seq, digest, now);
            self.advance(seq, now);
        }
    }

    fn open_window(&mut self, seq: u64, digest: Digest32, now: Micros) {
        let n = self.cfg.quorum.n;
        let w = compute_window(self.cfg.window.c, self.t_b(), n);
        let rounds = match self.cfg.window.rounds {
            ApprovalRounds::Fixed { rounds } => rounds,
            ApprovalRounds::Random { min, max } => {
                choose_phase_count(&mut self.rng, min, max).expect("range validated at construction")
            }
        };
        let mut window = VerificationWindow::open(seq, digest, now, w, rounds);
        window.responders.record(1, self.cfg.id);
        if window.is_approved(self.cfg.quorum.reply) {
            self.emit(Event::WindowClosed { seq, iteration: 1 });
        } else {
            self.windows.insert(seq, window);
        }
    }

    fn window_tick_inner(&mut self, seq: u64, now: Micros) -> WindowVerdict {
        let q = self.cfg.quorum;
        let Some(w) = self.windows.get_mut(&seq) else {
            return WindowVerdict::Continue;
        };
        let verdict = w.tick(now, q.reply, self.cfg.window.retry_factor, q.replicas());
        let (digest, iterations) = (w.digest, w.iteration);
        match &verdict {
            WindowVerdict::Continue => {}
            WindowVerdict::Approved { iteration } => {
                self.windows.remove(&seq);
                self.emit(Event::WindowClosed {
                    seq,
                    iteration: *iteration,
                });
            }
            WindowVerdict::Retry { iteration, window_us } => {
                w.responders.record(*iteration, self.cfg.id);
                let (iteration, window_us) = (*iteration, *window_us);
                self.emit(Event::WindowRetried {
                    seq,
                    iteration,
                    window_us,
                });
                let body = MsgBody::PrePrepare {
                    view: self.view,
                    seq,
                    iteration,
                    digest,
                    batch: None,
                };
                self.broadcast(body, now);
            }
            WindowVerdict::Abort { suspects } => {
                self.windows.remove(&seq);
                for s in suspects {
                    self.flag(*s, FlagReason::WindowSuspect);
                }
                let tx_ids = self
                    .slots
                    .get(&seq)
                    .and_then(|s| s.batch.as_ref())
                    .map(|b| b.requests.iter().map(|r| r.tx_id).collect())
                    .unwrap_or_default();
                self.emit(Event::Notification(AuditorNotification {
                    seq,
                    digest,
                    reason: AbortReason::ApprovalWindowExpired,
                    iterations,
                    suspects: suspects.clone(),
                    tx_ids,
                }));
            }
        }
        verdict
    }

    // ----- agreement -----------------------------------------------------

    fn slot(&mut self, seq: u64) -> &mut Slot {
        let view = self.view;
        self.slots.entry(seq).or_insert_with(|| Slot {
            view,
            ..Slot::default()
        })
    }

    fn excluded(&self, r: &ReplicaId) -> bool {
        self.cfg.quorum.exclude_suspects && self.flagged.contains(r)
    }

    fn advance(&mut self, seq: u64, now: Micros) {
        let q = self.cfg.quorum;
        let primary = self.primary();
        let normal = !self.is_view_changing();
        let Some(slot) = self.slots.get(&seq) else { return };
        let Some(digest) = slot.digest else { return };
        if slot.batch.is_none() {
            return;
        }
        let mut send_commit = false;
        if normal && slot.view == self.view && !slot.sent_commit && !slot.refused {
            let mut votes: BTreeSet<ReplicaId> = slot
                .prepares
                .iter()
                .filter(|(r, d)| **d == digest && !slot.equivocators.contains(r))
                .map(|(r, _)| *r)
                .collect();
            votes.insert(primary);
            votes.retain(|r| !self.excluded(r));
            send_commit = votes.len() >= q.prepare;
        }
        if send_commit {
            let me = self.cfg.id;
            let view = self.view;
            let slot = self.slots.get_mut(&seq).expect("present");
            slot.sent_commit = true;
            slot.commits.insert((me, view), digest);
            let iteration = slot.iteration.max(1);
            self.broadcast(
                MsgBody::Commit {
                    view,
                    seq,
                    iteration,
                    digest,
                },
                now,
            );
        }
        let slot = &self.slots[&seq];
        if !slot.committed {
            let voters: BTreeSet<ReplicaId> = slot
                .commits
                .iter()
                .filter(|((r, _), d)| **d == digest && !slot.equivocators.contains(r) && !self.excluded(r))
                .map(|((r, _), _)| *r)
                .collect();
            if voters.len() >= q.commit {
                self.slots.get_mut(&seq).expect("present").committed = true;
            }
        }
        self.execute_ready(now);
    }

    fn execute_ready(&mut self, now: Micros) {
        let mut progressed = false;
        while let Some(slot) = self.slots.get(&(self.last_exec + 1)) {
            if !slot.committed {
                break;
            }
            let seq = self.last_exec + 1;
            let (view, digest) = (slot.view, slot.digest.expect("committed slot has digest"));
            let batch = slot.batch.clone().expect("committed slot has batch");
            self.execute(seq, view, digest, batch, now);
            progressed = true;
        }
        if progressed {
            self.progress_deadline = None;
            self.arm_progress(now);
            self.try_propose(now);
        }
    }

    fn execute(&mut self, seq: u64, view: u64, digest: Digest32, batch: Batch, now: Micros) {
        let t_c = CanonicalTimestamp::utc(batch.proposed_at.ceil_millis());
        let mut txs = Vec::new();
        let mut committed = Vec::new();
        for r in &batch.requests {
            self.known.remove(&r.tx_id);
            self.in_flight_tx.remove(&r.tx_id);
            if !self.executed_tx.insert(r.tx_id) {
                continue;
            }
            txs.push(ExecutedTx {
                tx_id: r.tx_id,
                client: r.client,
                t_g: r.t_g,
            });
            committed.push(CommittedTx::with_payload(
                r.tx_id,
                r.payload.clone(),
                CanonicalTimestamp::with_offset(r.t_g.floor_millis(), r.t_g_offset_minutes),
                t_c,
            ));
        }
        let mut block_height = None;
        if !committed.is_empty() {
            let detection: Vec<CommittedTx> = committed.iter().map(CommittedTx::digest_only).collect();
            match self.recovery.append_block(committed, t_c) {
                Ok(b) => {
                    block_height = Some(b.header.height);
                    if let Err(e) = self.detection.append_block(detection, t_c) {
                        log::error!("{}: detection append failed at seq {seq}: {e}", self.cfg.id);
                    }
                }
                Err(e) => log::error!("{}: recovery append failed at seq {seq}: {e}", self.cfg.id),
            }
        }
        self.last_exec = seq;
        self.exec_log.insert(seq, (view, batch.clone()));
        while self.exec_log.len() as u64 > VIEW_CHANGE_LOG {
            self.exec_log.pop_first();
        }
        let floor = seq.saturating_sub(VIEW_CHANGE_LOG);
        while self.slots.first_key_value().is_some_and(|(s, _)| *s < floor) {
            self.slots.pop_first();
        }
        self.emit(Event::Executed(Execution {
            seq,
            view,
            digest,
            at: now,
            block_height,
            txs: txs.clone(),
        }));
        for tx in &txs {
            if tx.client == self.cfg.id {
                if let Some(c) = self.clients.get_mut(&tx.tx_id) {
                    c.executed = true;
                    c.retry_at = None;
                }
                self.client_reply(tx.tx_id, seq, digest, self.cfg.id);
            } else if tx.client.index() < self.cfg.quorum.n {
                let body = MsgBody::Reply {
                    view: self.view,
                    seq,
                    tx_id: tx.tx_id,
                    digest,
                };
                self.send(tx.client, body, now);
            }
        }
    }

    /// Reason to refuse a proposal, if any.
    fn check_batch(&self, batch: &Batch, now: Micros) -> Option<FlagReason> {
        for r in &batch.requests {
            if !verify_request(self.verifier.as_ref(), r) || !r.payload_ok() {
                return Some(FlagReason::BadSignature);
            }
            if replica_recheck(r.t_g, now) == Recheck::Flag || r.t_g >= batch.proposed_at {
                return Some(FlagReason::ForgedTimestamp);
            }
        }
        None
    }

    // ----- clients -------------------------------------------------------

    fn client_reply(&mut self, tx_id: Uuid, seq: u64, digest: Digest32, from: ReplicaId) {
        let quorum = self.cfg.quorum.reply;
        let Some(c) = self.clients.get_mut(&tx_id) else { return };
        let voters = c.replies.entry(digest).or_default();
        voters.insert(from);
        let newly = !c.accepted && voters.len() >= quorum;
        c.accepted |= newly;
        let done = c.accepted && c.executed;
        if newly {
            self.emit(Event::ClientAccepted { tx_id, seq });
        }
        if done {
            self.clients.remove(&tx_id);
        }
    }

    fn client_timers(&mut self, now: Micros) {
        let due: Vec<Uuid> = self
            .clients
            .iter()
            .filter(|(_, c)| c.retry_at.is_some_and(|t| t <= now))
            .map(|(id, _)| *id)
            .collect();
        for id in due {
            let c = self.clients.get_mut(&id).expect("listed");
            c.retry_gap = Micros(c.retry_gap.0.saturating_mul(2));
            c.retry_at = Some(now + c.retry_gap);
            let req = c.request.clone();
            if self.is_primary() && !self.is_view_changing() {
                if !self.known.contains_key(&id) && !self.executed_tx.contains(&id) {
                    self.primary_admit(req, now);
                }
            } else {
                self.broadcast(MsgBody::Request(req), now);
            }
        }
        // Forget executed requests whose replies will never all arrive.
        let horizon = Micros(now.0.saturating_sub(600_000_000));
        self.clients.retain(|_, c| !(c.executed && c.submitted < horizon));
    }

    // ----- view change ---------------------------------------------------

    fn arm_progress(&mut self, now: Micros) {
        if self.cfg.view_change.is_none() || self.is_view_changing() || self.is_primary() {
            return;
        }
        if self.known.is_empty() {
            self.progress_deadline = None;
        } else if self.progress_deadline.is_none() {
            self.progress_deadline = Some(now + self.vc_timeout);
        }
    }

    fn start_view_change(&mut self, target: u64, now: Micros) {
        if self.cfg.view_change.is_none() {
            return;
        }
        if let Mode::ViewChanging { target: t, .. } = self.mode {
            if t >= target {
                return;
            }
        }
        if target <= self.view {
            return;
        }
        let deadline = now + self.vc_timeout;
        self.vc_timeout = Micros(self.vc_timeout.0.saturating_mul(2));
        self.mode = Mode::ViewChanging { target, deadline };
        self.progress_deadline = None;
        self.windows.clear();

        let mut prepared: Vec<PreparedEntry> = self
            .exec_log
            .iter()
            .map(|(seq, (view, batch))| PreparedEntry {
                seq: *seq,
                view: *view,
                batch: batch.clone(),
            })
            .collect();
        for (seq, slot) in self.slots.range(self.last_exec + 1..) {
            if let (true, Some(batch)) = (slot.sent_commit, &slot.batch) {
                prepared.push(PreparedEntry {
                    seq: *seq,
                    view: slot.view,
                    batch: batch.clone(),
                });
            }
        }
        let body = MsgBody::ViewChange {
            new_view: target,
            last_exec: self.last_exec,
            prepared,
        };
        let msg = self.signed(body, now);
        self.view_changes
            .entry(target)
            .or_default()
            .insert(self.cfg.id, msg.clone());
        self.broadcast_signed(msg);
        self.emit(Event::ViewChangeStarted { view: target });
        self.try_new_view(now);
    }

    fn try_new_view(&mut self, now: Micros) {
        let Mode::ViewChanging { target, .. } = self.mode else { return };
        if primary_for_view(target, self.cfg.quorum.n) != self.cfg.id {
            return;
        }
        let Some(vcs) = self.view_changes.get(&target) else { return };
        if vcs.len() < 2 * self.cfg.quorum.f + 1 {
            return;
        }
        let view_changes: Vec<ConsensusMsg> = vcs.values().cloned().collect();
        let proposals = compute_proposals(&view_changes);
        self.broadcast(
            MsgBody::NewView {
                view: target,
                view_changes,
                proposals: proposals.clone(),
            },
            now,
        );
        self.enter_view(target, proposals, now);
    }

    fn enter_view(&mut self, view: u64, proposals: Vec<(u64, Batch)>, now: Micros) {
        self.view = view;
        self.mode = Mode::Normal;
        self.vc_timeout = Micros(self.cfg.view_change.map_or(0, |v| v.timeout_us));
        self.progress_deadline = None;
        self.view_changes = self.view_changes.split_off(&(view + 1));
        self.windows.clear();
        self.in_flight_tx.clear();
        self.pending.clear();
        let last_exec = self.last_exec;
        self.slots.retain(|s, _| *s <= last_exec);
        self.emit(Event::ViewChanged { view });

        let me = self.cfg.id;
        let primary = self.is_primary();
        let mut proposed = HashSet::new();
        let mut max_seq = self.last_exec;
        for (seq, batch) in &proposals {
            let digest = batch.digest();
            max_seq = max_seq.max(*seq);
            for r in &batch.requests {
                proposed.insert(r.tx_id);
                if !self.executed_tx.contains(&r.tx_id) {
                    self.known.entry(r.tx_id).or_insert_with(|| r.clone());
                    if primary {
                        self.in_flight_tx.insert(r.tx_id);
                    }
                }
            }
            let mut slot = Slot {
                view,
                digest: Some(digest),
                batch: Some(batch.clone()),
                iteration: 1,
                ..Slot::default()
            };
            if let Some(old) = self.slots.get(seq) {
                slot.commits = old.commits.clone();
                slot.committed = old.committed && old.digest == Some(digest);
            }
            if !primary {
                slot.prepares.insert(me, digest);
            }
            self.slots.insert(*seq, slot);
            if !primary {
                self.broadcast(
                    MsgBody::Prepare {
                        view,
                        seq: *seq,
                        digest,
                    },
                    now,
                );
            }
        }
        self.next_seq = max_seq + 1;

        let buffered: Vec<ConsensusMsg> = std::mem::take(&mut self.future).into_iter().collect();
        for msg in buffered {
            match msg.body.view() {
                Some(v) if v > view => self.future.push_back(msg),
                Some(v) if v == view => {
                    let saved = std::mem::take(&mut self.out);
                    let result = self.handle(&msg, now);
                    let mut produced = std::mem::replace(&mut self.out, saved);
                    if let Ok(outs) = result {
                        produced.extend(outs);
                    }
                    self.out.extend(produced);
                }
                _ => {}
            }
        }
        for (seq, _) in &proposals {
            self.advance(*seq, now);
        }
        if primary {
            let mut queue: Vec<Request> = self
                .known
                .values()
                .filter(|r| !proposed.contains(&r.tx_id))
                .cloned()
                .collect();
            queue.sort_by_key(|r| (r.t_g, r.tx_id));
            self.pending.extend(queue);
            self.try_propose(now);
        } else {
            self.arm_progress(now);
        }
    }

    // ----- plumbing ------------------------------------------------------

    /// Common checks for every inbound message.
    fn admit(&mut self, msg: &ConsensusMsg, now: Micros) -> Result<(), PbftError> {
        if msg.sender.index() >= self.cfg.quorum.n {
            return Err(PbftError::UnknownReplica(msg.sender));
        }
        if !verify_msg(self.verifier.as_ref(), msg) {
            self.flag(msg.sender, FlagReason::BadSignature);
            self.out.clear();
            return Err(PbftError::BadSignature(msg.sender));
        }
        let delay = now - msg.sent_at;
        if delay.0 > 0 && msg.sender != self.cfg.id {
            if self.delays.len() == DELAY_SAMPLES {
                self.delays.pop_front();
            }
            self.delays.push_back(delay);
        }
        Ok(())
    }

    /// `Ok(true)` when the message was buffered for a later view.
    fn stale_or_future(&mut self, msg: &ConsensusMsg, view: u64) -> Result<bool, PbftError> {
        if view < self.view {
            return Err(PbftError::StaleView {
                got: view,
                current: self.view,
            });
        }
        if view > self.view {
            if self.future.len() == FUTURE_BUFFER {
                self.future.pop_front();
            }
            self.future.push_back(msg.clone());
            return Ok(true);
        }
        Ok(false)
    }

    fn flag(&mut self, replica: ReplicaId, reason: FlagReason) {
        if replica == self.cfg.id {
            return;
        }
        self.flagged.insert(replica);
        if self.flag_log.insert((replica, reason)) {
            self.emit(Event::Flagged { replica, reason });
        }
    }

    fn emit(&mut self, event: Event) {
        self.out.push(Output::Event(event));
    }

    fn signed(&self, body: MsgBody, now: Micros) -> ConsensusMsg {
        let mut msg = ConsensusMsg {
            sender: self.cfg.id,
            sent_at: now,
            body,
            signature: Vec::new(),
        };
        sign_msg(self.signer.as_ref(), &mut msg);
        msg
    }

    fn send(&mut self, to: ReplicaId, body: MsgBody, now: Micros) {
        let msg = self.signed(body, now);
        self.out.push(Output::Send { to, msg });
    }

    fn broadcast(&mut self, body: MsgBody, now: Micros) {
        let msg = self.signed(body, now);
        self.broadcast_signed(msg);
    }

    fn broadcast_signed(&mut self, msg: ConsensusMsg) {
        for to in self.cfg.quorum.replicas() {
            if to != self.cfg.id {
                self.out.push(Output::Send { to, msg: msg.clone() });
            }
        }
    }

    fn take(&mut self) -> Vec<Output> {
        std::mem::take(&mut self.out)
    }
}
