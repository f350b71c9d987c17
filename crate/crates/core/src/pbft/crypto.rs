//! Message authentication. Replicas sign through [`Signer`] and check peers
//! through [`Verifier`], so the simulator and the network service can plug in
//! different schemes.

use std::sync::Arc;

use hmac::{Hmac, Mac};
use sha2::Sha256;

use super::types::{ConsensusMsg, ReplicaId, Request};
use crate::digest::digest_parts;

pub trait Signer: Send + Sync {
    fn id(&self) -> ReplicaId;
    fn sign(&self, bytes: &[u8]) -> Vec<u8>;
}

pub trait Verifier: Send + Sync {
    fn verify(&self, signer: ReplicaId, bytes: &[u8], signature: &[u8]) -> bool;
}

pub fn sign_msg(signer: &dyn Signer, msg: &mut ConsensusMsg) {
    msg.signature = signer.sign(&msg.signing_bytes());
}

pub fn verify_msg(verifier: &dyn Verifier, msg: &ConsensusMsg) -> bool {
    verifier.verify(msg.sender, &msg.signing_bytes(), &msg.signature)
}

pub fn sign_request(signer: &dyn Signer, req: &mut Request) {
    req.client_signature = signer.sign(&req.signing_bytes());
}

pub fn verify_request(verifier: &dyn Verifier, req: &Request) -> bool {
    verifier.verify(req.client, &req.signing_bytes(), &req.client_signature)
}

type HmacSha256 = Hmac<Sha256>;

/// Keyed-MAC identities for a closed group: one secret per replica, all held
/// by the keyring. Fast and deterministic, suitable for simulation only.
#[derive(Debug, Clone)]
pub struct MacKeyring {
    keys: Arc<Vec<[u8; 32]>>,
}

impl MacKeyring {
    pub fn new(n: usize, seed: u64) -> Self {
        let keys = (0..n as u32)
            .map(|i| *digest_parts(&[b"mac-key", &seed.to_be_bytes(), &i.to_be_bytes()]).as_bytes())
            .collect();
        MacKeyring {
            keys: Arc::new(keys),
        }
    }

    pub fn signer(&self, id: ReplicaId) -> MacSigner {
        assert!(id.index() < self.keys.len(), "{id} outside keyring");
        MacSigner {
            id,
            keyring: self.clone(),
        }
    }

    fn mac(&self, id: ReplicaId) -> Option<HmacSha256> {
        let key = self.keys.get(id.index())?;
        Some(HmacSha256::new_from_slice(key).expect("hmac accepts any key length"))
    }
}

impl Verifier for MacKeyring {
    fn verify(&self, signer: ReplicaId, bytes: &[u8], signature: &[u8]) -> bool {
        match self.mac(signer) {
            Some(mut mac) => {
                mac.update(bytes);
                mac.verify_slice(signature).is_ok()
            }
            None => false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MacSigner {
    id: ReplicaId,
    keyring: MacKeyring,
}

impl Signer for MacSigner {
    fn id(&self) -> ReplicaId {
        self.id
    }

    fn sign(&self, bytes: &[u8]) -> Vec<u8> {
        let mut mac = self.keyring.mac(self.id).expect("signer id checked at construction");
        mac.update(bytes);
        mac.finalize().into_bytes().to_vec()
    }
}
