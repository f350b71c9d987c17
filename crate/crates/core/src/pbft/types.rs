//! Replica identities, quorum arithmetic, requests, batches and the signed
//! consensus message with its byte layout.
//!
//! Message layout (big-endian):
//!
//! ```text
//! kind u8 | sender u32 | sent_at µs i64 | body | sig_len u32 | signature
//! ```
//!
//! The signature covers every byte before `sig_len`. Bodies:
//!
//! ```text
//! Request     request
//! PrePrepare  view u64 | seq u64 | iteration u32 | digest [32] | has_batch u8 | batch?
//! Prepare     view u64 | seq u64 | digest [32]
//! Commit      view u64 | seq u64 | iteration u32 | digest [32]
//! Reply       view u64 | seq u64 | tx_id [16] | digest [32]
//! ViewChange  new_view u64 | last_exec u64 | count u32 | (seq u64 | view u64 | batch)*
//! NewView     view u64 | count u32 | (len u32 | message)* | count u32 | (seq u64 | batch)*
//!
//! request     tx_id [16] | client u32 | t_g µs i64 | t_g offset i32 | wire_size u64
//!             | payload_digest [32] | payload_len u32 | payload | sig_len u32 | client_sig
//! batch       proposed_at µs i64 | count u32 | request*
//! ```

use std::fmt;

use serde::{Deserialize, Serialize};
use uuid::Uuid;

use crate::digest::{digest, Digest32};
use crate::time::Micros;
use crate::wire::{Reader, WireError, Writer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ReplicaId(pub u32);

impl fmt::Display for ReplicaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

impl ReplicaId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Round-robin primary selection.
pub fn primary_for_view(view: u64, n: usize) -> ReplicaId {
    assert!(n >= 1, "a replica group needs at least one member");
    ReplicaId((view % n as u64) as u32)
}

/// Quorum sizes. Every threshold is explicit so alternative readings can be
/// configured and tested.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuorumConfig {
    pub n: usize,
    pub f: usize,
    pub prepare: usize,
    pub commit: usize,
    /// Approvals the primary needs inside a verification window, and
    /// replies a client needs before it considers a request accepted.
    pub reply: usize,
    /// Ignore votes from replicas this replica has flagged.
    #[serde(default)]
    pub exclude_suspects: bool,
}

impl QuorumConfig {
    pub fn for_n(n: usize) -> Self {
        let f = n.saturating_sub(1) / 3;
        QuorumConfig {
            n,
            f,
            prepare: 2 * f + 1,
            commit: 2 * f + 1,
            reply: 3 * f + 1,
            exclude_suspects: false,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.n == 0 {
            return Err("n must be at least 1".into());
        }
        if self.n < 3 * self.f + 1 {
            return Err(format!("n = {} cannot tolerate f = {} (needs 3f+1)", self.n, self.f));
        }
        for (name, q) in [("prepare", self.prepare), ("commit", self.commit), ("reply", self.reply)] {
            if q == 0 || q > self.n {
                return Err(format!("{name} quorum {q} outside 1..={}", self.n));
            }
        }
        Ok(())
    }

    pub fn replicas(&self) -> impl Iterator<Item = ReplicaId> {
        (0..self.n as u32).map(ReplicaId)
    }
}

/// A client request: one ledger transaction awaiting ordering.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Request {
    pub tx_id: Uuid,
    pub client: ReplicaId,
    /// Generation time.
    pub t_g: Micros,
    /// UTC offset of the generating application, kept for the ledger.
    pub t_g_offset_minutes: i32,
    /// Size used by cost models; at least `payload.len()`.
    pub wire_size: u64,
    pub payload_digest: Digest32,
    pub payload: Vec<u8>,
    pub client_signature: Vec<u8>,
}

impl Request {
    pub fn new(tx_id: Uuid, client: ReplicaId, t_g: Micros, payload: Vec<u8>) -> Self {
        Request {
            tx_id,
            client,
            t_g,
            t_g_offset_minutes: 0,
            wire_size: payload.len() as u64,
            payload_digest: digest(&payload),
            payload,
            client_signature: Vec::new(),
        }
    }

    /// Bytes covered by the client signature and by batch digests.
    pub fn signing_bytes(&self) -> Vec<u8> {
        let mut w = Writer::with_capacity(72);
        self.write_core(&mut w);
        w.into_vec()
    }

    fn write_core(&self, w: &mut Writer) {
        w.uuid(&self.tx_id)
            .u32(self.client.0)
            .i64(self.t_g.0)
            .i32(self.t_g_offset_minutes)
            .u64(self.wire_size)
            .digest(&self.payload_digest);
    }

    fn write(&self, w: &mut Writer) {
        self.write_core(w);
        w.bytes(&self.payload).bytes(&self.client_signature);
    }

    fn read(r: &mut Reader<'_>) -> Result<Self, WireError> {
        Ok(Request {
            tx_id: r.uuid()?,
            client: ReplicaId(r.u32()?),
            t_g: Micros(r.i64()?),
            t_g_offset_minutes: r.i32()?,
            wire_size: r.u64()?,
            payload_digest: r.digest()?,
            payload: r.bytes()?.to_vec(),
            client_signature: r.bytes()?.to_vec(),
        })
    }

    /// Payload consistent with its digest and declared size.
    pub fn payload_ok(&self) -> bool {
        self.wire_size >= self.payload.len() as u64 && digest(&self.payload) == self.payload_digest
    }
}

/// The unit of agreement: requests proposed together at one sequence number.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub proposed_at: Micros,
    pub requests: Vec<Request>,
}

impl Batch {
    /// A batch with no requests, used to fill sequence gaps after a view change.
    pub fn null() -> Self {
        Batch {
            proposed_at: Micros::ZERO,
            requests: Vec::new(),
        }
    }

    pub fn is_null(&self) -> bool {
        self.requests.is_empty()
    }

    pub fn digest(&self) -> Digest32 {
        let mut w = Writer::with_capacity(12 + self.requests.len() * 72);
        w.i64(self.proposed_at.0).u32(self.requests.len() as u32);
        for r in &self.requests {
            r.write_core(&mut w);
        }
        digest(&w.into_vec())
    }

    fn write(&self, w: &mut Writer) {
        w.i64(self.proposed_at.0).u32(self.requests.len() as u32);
        for r in &self.requests {
            r.write(w);
        }
    }

    fn read(r: &mut Reader<'_>) -> Result<Self, WireError> {
        let proposed_at = Micros(r.i64()?);
        let count = r.u32()? as usize;
        let mut requests = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            requests.push(Request::read(r)?);
        }
        Ok(Batch {
            proposed_at,
            requests,
        })
    }

    /// Modeled bytes beyond what is physically carried.
    fn modeled_extra(&self) -> u64 {
        self.requests
            .iter()
            .map(|r| r.wire_size.saturating_sub(r.payload.len() as u64))
            .sum()
    }
}

/// A batch a replica reports as prepared (or executed) in a view change.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreparedEntry {
    pub seq: u64,
    pub view: u64,
    pub batch: Batch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MsgKind {
    Request,
    PrePrepare,
    Prepare,
    Commit,
    Reply,
    ViewChange,
    NewView,
}

impl MsgKind {
    pub const ALL: [MsgKind; 7] = [
        MsgKind::Request,
        MsgKind::PrePrepare,
        MsgKind::Prepare,
        MsgKind::Commit,
        MsgKind::Reply,
        MsgKind::ViewChange,
        MsgKind::NewView,
    ];

    fn tag(self) -> u8 {
        self as u8
    }

    fn from_tag(t: u8) -> Option<Self> {
        MsgKind::ALL.get(t as usize).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MsgKind::Request => "request",
            MsgKind::PrePrepare => "pre-prepare",
            MsgKind::Prepare => "prepare",
            MsgKind::Commit => "commit",
            MsgKind::Reply => "reply",
            MsgKind::ViewChange => "view-change",
            MsgKind::NewView => "new-view",
        }
    }

    /// Kinds that belong to ordering one sequence number.
    pub fn is_ordering(self) -> bool {
        !matches!(self, MsgKind::ViewChange | MsgKind::NewView)
    }
}

impl fmt::Display for MsgKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MsgBody {
    Request(Request),
    PrePrepare {
        view: u64,
        seq: u64,
        /// Verification-window iteration; retries carry no batch.
        iteration: u32,
        digest: Digest32,
        batch: Option<Batch>,
    },
    Prepare {
        view: u64,
        seq: u64,
        digest: Digest32,
    },
    Commit {
        view: u64,
        seq: u64,
        iteration: u32,
        digest: Digest32,
    },
    Reply {
        view: u64,
        seq: u64,
        tx_id: Uuid,
        digest: Digest32,
    },
    ViewChange {
        new_view: u64,
        last_exec: u64,
        prepared: Vec<PreparedEntry>,
    },
    NewView {
        view: u64,
        view_changes: Vec<ConsensusMsg>,
        proposals: Vec<(u64, Batch)>,
    },
}

impl MsgBody {
    pub fn kind(&self) -> MsgKind {
        match self {
            MsgBody::Request(_) => MsgKind::Request,
            MsgBody::PrePrepare { .. } => MsgKind::PrePrepare,
            MsgBody::Prepare { .. } => MsgKind::Prepare,
            MsgBody::Commit { .. } => MsgKind::Commit,
            MsgBody::Reply { .. } => MsgKind::Reply,
            MsgBody::ViewChange { .. } => MsgKind::ViewChange,
            MsgBody::NewView { .. } => MsgKind::NewView,
        }
    }

    pub fn view(&self) -> Option<u64> {
        match self {
            MsgBody::Request(_) => None,
            MsgBody::PrePrepare { view, .. }
            | MsgBody::Prepare { view, .. }
            | MsgBody::Commit { view, .. }
            | MsgBody::Reply { view, .. }
            | MsgBody::NewView { view, .. } => Some(*view),
            MsgBody::ViewChange { new_view, .. } => Some(*new_view),
        }
    }

    pub fn seq(&self) -> Option<u64> {
        match self {
            MsgBody::PrePrepare { seq, .. }
            | MsgBody::Prepare { seq, .. }
            | MsgBody::Commit { seq, .. }
            | MsgBody::Reply { seq, .. } => Some(*seq),
            _ => None,
        }
    }

    fn write(&self, w: &mut Writer) {
        match self {
            MsgBody::Request(r) => r.write(w),
            MsgBody::PrePrepare {
                view,
                seq,
                iteration,
                digest,
                batch,
            } => {
                w.u64(*view).u64(*seq).u32(*iteration).digest(digest);
                match batch {
                    Some(b) => {
                        w.u8(1);
                        b.write(w);
                    }
                    None => {
                        w.u8(0);
                    }
                }
            }
            MsgBody::Prepare { view, seq, digest } => {
                w.u64(*view).u64(*seq).digest(digest);
            }
            MsgBody::Commit {
                view,
                seq,
                iteration,
                digest,
            } => {
                w.u64(*view).u64(*seq).u32(*iteration).digest(digest);
            }
            MsgBody::Reply {
                view,
                seq,
                tx_id,
                digest,
            } => {
                w.u64(*view).u64(*seq).uuid(tx_id).digest(digest);
            }
            MsgBody::ViewChange {
                new_view,
                last_exec,
                prepared,
            } => {
                w.u64(*new_view).u64(*last_exec).u32(prepared.len() as u32);
                for e in prepared {
                    w.u64(e.seq).u64(e.view);
                    e.batch.write(w);
                }
            }
            MsgBody::NewView {
                view,
                view_changes,
                proposals,
            } => {
                w.u64(*view).u32(view_changes.len() as u32);
                for vc in view_changes {
                    w.bytes(&vc.to_bytes());
                }
                w.u32(proposals.len() as u32);
                for (seq, b) in proposals {
                    w.u64(*seq);
                    b.write(w);
                }
            }
        }
    }

    fn read(kind: MsgKind, r: &mut Reader<'_>) -> Result<Self, WireError> {
        Ok(match kind {
            MsgKind::Request => MsgBody::Request(Request::read(r)?),
            MsgKind::PrePrepare => {
                let (view, seq, iteration, digest) = (r.u64()?, r.u64()?, r.u32()?, r.digest()?);
                let batch = if r.bool("batch flag")? {
                    Some(Batch::read(r)?)
                } else {
                    None
                };
                MsgBody::PrePrepare {
                    view,
                    seq,
                    iteration,
                    digest,
                    batch,
                }
            }
            MsgKind::Prepare => MsgBody::Prepare {
                view: r.u64()?,
                seq: r.u64()?,
                digest: r.digest()?,
            },
            MsgKind::Commit => MsgBody::Commit {
                view: r.u64()?,
                seq: r.u64()?,
                iteration: r.u32()?,
                digest: r.digest()?,
            },
            MsgKind::Reply => MsgBody::Reply {
                view: r.u64()?,
                seq: r.u64()?,
                tx_id: r.uuid()?,
                digest: r.digest()?,
            },
            MsgKind::ViewChange => {
                let (new_view, last_exec) = (r.u64()?, r.u64()?);
                let count = r.u32()? as usize;
                let mut prepared = Vec::with_capacity(count.min(1024));
                for _ in 0..count {
                    prepared.push(PreparedEntry {
                        seq: r.u64()?,
                        view: r.u64()?,
                        batch: Batch::read(r)?,
                    });
                }
                MsgBody::ViewChange {
                    new_view,
                    last_exec,
                    prepared,
                }
            }
            MsgKind::NewView => {
                let view = r.u64()?;
                let count = r.u32()? as usize;
                let mut view_changes = Vec::with_capacity(count.min(1024));
                for _ in 0..count {
                    view_changes.push(ConsensusMsg::from_bytes(r.bytes()?)?);
                }
                let count = r.u32()? as usize;
                let mut proposals = Vec::with_capacity(count.min(1024));
                for _ in 0..count {
                    proposals.push((r.u64()?, Batch::read(r)?));
                }
                MsgBody::NewView {
                    view,
                    view_changes,
                    proposals,
                }
            }
        })
    }

    fn modeled_extra(&self) -> u64 {
        match self {
            MsgBody::Request(r) => r.wire_size.saturating_sub(r.payload.len() as u64),
            MsgBody::PrePrepare { batch, .. } => batch.as_ref().map_or(0, Batch::modeled_extra),
            MsgBody::ViewChange { prepared, .. } => {
                prepared.iter().map(|e| e.batch.modeled_extra()).sum()
            }
            MsgBody::NewView {
                view_changes,
                proposals,
                ..
            } => {
                view_changes.iter().map(|m| m.body.modeled_extra()).sum::<u64>()
                    + proposals.iter().map(|(_, b)| b.modeled_extra()).sum::<u64>()
            }
            _ => 0,
        }
    }
}

/// A signed protocol message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConsensusMsg {
    pub sender: ReplicaId,
    pub sent_at: Micros,
    pub body: MsgBody,
    pub signature: Vec<u8>,
}

impl ConsensusMsg {
    pub fn kind(&self) -> MsgKind {
        self.body.kind()
    }

    pub fn signing_bytes(&self) -> Vec<u8> {
        let mut w = Writer::with_capacity(128);
        w.u8(self.kind().tag()).u32(self.sender.0).i64(self.sent_at.0);
        self.body.write(&mut w);
        w.into_vec()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.signing_bytes();
        out.extend_from_slice(&(self.signature.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.signature);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(bytes);
        let at = r.position();
        let kind = MsgKind::from_tag(r.u8()?).ok_or(WireError::Invalid {
            what: "message kind",
            at,
        })?;
        let sender = ReplicaId(r.u32()?);
        let sent_at = Micros(r.i64()?);
        let body = MsgBody::read(kind, &mut r)?;
        let signature = r.bytes()?.to_vec();
        r.finish()?;
        Ok(ConsensusMsg {
            sender,
            sent_at,
            body,
            signature,
        })
    }

    /// Size charged by cost models: the encoded length plus the modeled
    /// payload bytes that are not physically present.
    pub fn modeled_size(&self) -> u64 {
        self.to_bytes().len() as u64 + self.body.modeled_extra()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(i: u128) -> Request {
        let mut r = Request::new(Uuid::from_u128(i), ReplicaId(1), Micros(1_000), b"{}".to_vec());
        r.wire_size = 1 << 20;
        r.t_g_offset_minutes = -240;
        r.client_signature = vec![9; 32];
        r
    }

    fn all_bodies() -> Vec<MsgBody> {
        let batch = Batch {
            proposed_at: Micros(5_000),
            requests: vec![req(1), req(2)],
        };
        let vc = ConsensusMsg {
            sender: ReplicaId(2),
            sent_at: Micros(7),
            body: MsgBody::ViewChange {
                new_view: 1,
                last_exec: 3,
                prepared: vec![PreparedEntry {
                    seq: 4,
                    view: 0,
                    batch: batch.clone(),
                }],
            },
            signature: vec![1, 2, 3],
        };
        vec![
            MsgBody::Request(req(3)),
            MsgBody::PrePrepare {
                view: 0,
                seq: 1,
                iteration: 1,
                digest: batch.digest(),
                batch: Some(batch.clone()),
            },
            MsgBody::PrePrepare {
                view: 0,
                seq: 1,
                iteration: 2,
                digest: batch.digest(),
                batch: None,
            },
            MsgBody::Prepare {
                view: 0,
                seq: 1,
                digest: batch.digest(),
            },
            MsgBody::Commit {
                view: 0,
                seq: 1,
                iteration: 2,
                digest: batch.digest(),
            },
            MsgBody::Reply {
                view: 0,
                seq: 1,
                tx_id: Uuid::from_u128(1),
                digest: batch.digest(),
            },
            vc.body.clone(),
            MsgBody::NewView {
                view: 1,
                view_changes: vec![vc],
                proposals: vec![(4, batch), (5, Batch::null())],
            },
        ]
    }

    #[test]
    fn every_kind_round_trips() {
        for body in all_bodies() {
            let msg = ConsensusMsg {
                sender: ReplicaId(3),
                sent_at: Micros(-12),
                body,
                signature: vec![0xAB; 32],
            };
            let bytes = msg.to_bytes();
            assert_eq!(ConsensusMsg::from_bytes(&bytes).unwrap(), msg);
            assert!(ConsensusMsg::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        }
    }

    #[test]
    fn modeled_size_counts_virtual_payload() {
        let bodies = all_bodies();
        let msg = ConsensusMsg {
            sender: ReplicaId(0),
            sent_at: Micros(0),
            body: bodies[1].clone(),
            signature: vec![],
        };
        let physical = msg.to_bytes().len() as u64;
        assert_eq!(msg.modeled_size(), physical + 2 * ((1 << 20) - 2));
    }

    #[test]
    fn batch_digest_binds_fields() {
        let b = Batch {
            proposed_at: Micros(1),
            requests: vec![req(1)],
        };
        let mut later = b.clone();
        later.proposed_at = Micros(2);
        assert_ne!(b.digest(), later.digest());
        let mut other = b.clone();
        other.requests[0].t_g = Micros(2);
        assert_ne!(b.digest(), other.digest());
        // Client signatures and payload bodies are bound elsewhere.
        let mut resigned = b.clone();
        resigned.requests[0].client_signature = vec![];
        assert_eq!(b.digest(), resigned.digest());
    }

    #[test]
    fn round_robin_primary() {
        assert_eq!(primary_for_view(0, 4), ReplicaId(0));
        assert_eq!(primary_for_view(5, 4), ReplicaId(1));
        let mut hits = [0; 4];
        for v in 0..8 {
            hits[primary_for_view(v, 4).index()] += 1;
        }
        assert_eq!(hits, [2; 4]);
    }

    #[test]
    fn default_quorums() {
        let q = QuorumConfig::for_n(4);
        assert_eq!((q.f, q.prepare, q.commit, q.reply), (1, 3, 3, 4));
        let q = QuorumConfig::for_n(1);
        assert_eq!((q.f, q.prepare, q.reply), (0, 1, 1));
        assert!(q.validate().is_ok());
        let bad = QuorumConfig {
            f: 2,
            ..QuorumConfig::for_n(4)
        };
        assert!(bad.validate().is_err());
    }
}
