//! Ed25519 identities for replicas.

use std::path::Path;

use blockaudit::pbft::{ReplicaId, Signer, Verifier};
use ed25519_dalek::{Signature, SigningKey, VerifyingKey};

use crate::master::PeerMasterList;
use crate::NodeError;

/// A replica's secret key. The key file holds the 32-byte seed in hex.
#[derive(Clone)]
pub struct NodeKey(SigningKey);

impl std::fmt::Debug for NodeKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "NodeKey({})", self.public_hex())
    }
}

impl NodeKey {
    pub fn generate() -> Self {
        NodeKey(SigningKey::generate(&mut rand::rngs::OsRng))
    }

    pub fn from_hex(s: &str) -> Result<Self, NodeError> {
        let bytes = hex::decode(s.trim()).map_err(|e| NodeError::Key(e.to_string()))?;
        let seed: [u8; 32] = bytes
            .try_into()
            .map_err(|_| NodeError::Key("expected 32 bytes".into()))?;
        Ok(NodeKey(SigningKey::from_bytes(&seed)))
    }

    pub fn load(path: &Path) -> Result<Self, NodeError> {
        let text = std::fs::read_to_string(path).map_err(|e| NodeError::Key(format!("{}: {e}", path.display())))?;
        Self::from_hex(&text)
    }

    pub fn save(&self, path: &Path) -> Result<(), NodeError> {
        std::fs::write(path, hex::encode(self.0.to_bytes()) + "\n")
            .map_err(|e| NodeError::Key(format!("{}: {e}", path.display())))
    }

    pub fn public_hex(&self) -> String {
        hex::encode(self.0.verifying_key().to_bytes())
    }

    pub fn signer(&self, id: ReplicaId) -> Ed25519Signer {
        Ed25519Signer {
            id,
            key: self.0.clone(),
        }
    }
}

pub(crate) fn decode_public(s: &str) -> Result<VerifyingKey, NodeError> {
    let bytes = hex::decode(s.trim()).map_err(|e| NodeError::Key(e.to_string()))?;
    let raw: [u8; 32] = bytes
        .try_into()
        .map_err(|_| NodeError::Key("public identity must be 32 bytes".into()))?;
    VerifyingKey::from_bytes(&raw).map_err(|e| NodeError::Key(e.to_string()))
}

pub struct Ed25519Signer {
    id: ReplicaId,
    key: SigningKey,
}

impl Signer for Ed25519Signer {
    fn id(&self) -> ReplicaId {
        self.id
    }

    fn sign(&self, bytes: &[u8]) -> Vec<u8> {
        use ed25519_dalek::Signer as _;
        self.key.sign(bytes).to_bytes().to_vec()
    }
}

/// Public keys of every replica in the master list.
#[derive(Debug, Clone)]
pub struct PeerKeys(Vec<VerifyingKey>);

impl PeerKeys {
    pub fn from_master_list(list: &PeerMasterList) -> Result<Self, NodeError> {
        list.peers()
            .iter()
            .map(|p| decode_public(&p.public_identity))
            .collect::<Result<Vec<_>, _>>()
            .map(PeerKeys)
    }
}

impl Verifier for PeerKeys {
    fn verify(&self, signer: ReplicaId, bytes: &[u8], signature: &[u8]) -> bool {
        let Some(key) = self.0.get(signer.index()) else {
            return false;
        };
        let Ok(sig) = Signature::from_slice(signature) else {
            return false;
        };
        key.verify_strict(bytes, &sig).is_ok()
    }
}
