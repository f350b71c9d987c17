use std::collections::BTreeSet;
use std::net::{IpAddr, SocketAddr};
use std::path::Path;

use blockaudit::pbft::ReplicaId;
use serde::{Deserialize, Serialize};

use crate::NodeError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PeerRecord {
    pub replica_index: u32,
    /// Consensus endpoint, `host:port`.
    pub address: SocketAddr,
    /// Hex-encoded Ed25519 public key.
    pub public_identity: String,
}

/// Every replica of the group, in index order. On disk it is a JSON array of
/// [`PeerRecord`]s.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PeerMasterList {
    peers: Vec<PeerRecord>,
}

impl PeerMasterList {
    pub fn new(mut peers: Vec<PeerRecord>) -> Result<Self, NodeError> {
        peers.sort_by_key(|p| p.replica_index);
        for (i, p) in peers.iter().enumerate() {
            if p.replica_index as usize != i {
                return Err(NodeError::MasterList(format!(
                    "replica indices must be 0..{} with no gaps or repeats",
                    peers.len()
                )));
            }
            crate::keys::decode_public(&p.public_identity)
                .map_err(|e| NodeError::MasterList(format!("replica {i}: {e}")))?;
        }
        let addrs: BTreeSet<SocketAddr> = peers.iter().map(|p| p.address).collect();
        if addrs.len() != peers.len() {
            return Err(NodeError::MasterList("duplicate peer address".into()));
        }
        if peers.is_empty() {
            return Err(NodeError::MasterList("no peers".into()));
        }
        Ok(PeerMasterList { peers })
    }

    pub fn from_json(s: &str) -> Result<Self, NodeError> {
        let peers: Vec<PeerRecord> = serde_json::from_str(s).map_err(|e| NodeError::MasterList(e.to_string()))?;
        Self::new(peers)
    }

    pub fn load(path: &Path) -> Result<Self, NodeError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| NodeError::MasterList(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.peers).expect("peer records serialize")
    }

    pub fn len(&self) -> usize {
        self.peers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.peers.is_empty()
    }

    pub fn peers(&self) -> &[PeerRecord] {
        &self.peers
    }

    pub fn get(&self, id: ReplicaId) -> Option<&PeerRecord> {
        self.peers.get(id.index())
    }

    /// Source addresses allowed to submit packets or open consensus
    /// connections.
    pub fn allowlist(&self) -> BTreeSet<IpAddr> {
        self.peers.iter().map(|p| p.address.ip()).collect()
    }
}
