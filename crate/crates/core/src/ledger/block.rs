//! Blocks and their byte layout.
//!
//! Header (84 bytes, hashed to link blocks):
//!
//! ```text
//! height u64 | prev_hash [32] | merkle_root [32] | timestamp epoch-ms i64 | tx_count u32
//! ```
//!
//! Block record: `header | block_hash [32] | tx_count × tx`, where each tx is
//!
//! ```text
//! tx_id [16] | has_payload u8 | (payload_len u32 | payload)? | payload_digest [32]
//!   | t_g ms i64 | t_g offset i32 | t_c ms i64 | t_c offset i32
//! ```
//!
//! Every integer is big-endian.

use serde::{Deserialize, Serialize};
use uuid::Uuid;

use crate::digest::{digest, Digest32};
use crate::time::CanonicalTimestamp;
use crate::wire::{Reader, WireError, Writer};

pub const HEADER_LEN: usize = 8 + 32 + 32 + 8 + 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChainKind {
    /// Stores full audit payloads.
    Recovery,
    /// Stores payload digests and transaction ids only.
    Detection,
}

impl ChainKind {
    pub fn tag(self) -> u8 {
        match self {
            ChainKind::Recovery => 0,
            ChainKind::Detection => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(ChainKind::Recovery),
            1 => Some(ChainKind::Detection),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockHeader {
    pub height: u64,
    pub prev_hash: Digest32,
    pub merkle_root: Digest32,
    pub timestamp: CanonicalTimestamp,
    pub tx_count: u32,
}

impl BlockHeader {
    pub fn to_bytes(&self) -> [u8; HEADER_LEN] {
        let mut w = Writer::with_capacity(HEADER_LEN);
        w.u64(self.height)
            .digest(&self.prev_hash)
            .digest(&self.merkle_root)
            .i64(self.timestamp.epoch_millis)
            .u32(self.tx_count);
        w.into_vec().try_into().expect("fixed header length")
    }

    pub fn hash(&self) -> Digest32 {
        digest(&self.to_bytes())
    }

    pub(crate) fn read(r: &mut Reader<'_>) -> Result<Self, WireError> {
        Ok(BlockHeader {
            height: r.u64()?,
            prev_hash: r.digest()?,
            merkle_root: r.digest()?,
            timestamp: CanonicalTimestamp::utc(r.i64()?),
            tx_count: r.u32()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommittedTx {
    pub tx_id: Uuid,
    /// Present on recovery chains only.
    pub payload: Option<Vec<u8>>,
    pub payload_digest: Digest32,
    /// Generation time.
    pub t_g: CanonicalTimestamp,
    /// Confirmation time.
    pub t_c: CanonicalTimestamp,
}

impl CommittedTx {
    pub fn with_payload(
        tx_id: Uuid,
        payload: Vec<u8>,
        t_g: CanonicalTimestamp,
        t_c: CanonicalTimestamp,
    ) -> Self {
        CommittedTx {
            tx_id,
            payload_digest: digest(&payload),
            payload: Some(payload),
            t_g,
            t_c,
        }
    }

    /// The detection-chain form of this transaction.
    pub fn digest_only(&self) -> Self {
        CommittedTx {
            payload: None,
            ..self.clone()
        }
    }

    /// The Merkle leaf committing to every stored field except the payload
    /// body, which is bound through `payload_digest`.
    pub fn leaf(&self) -> Digest32 {
        let mut w = Writer::with_capacity(16 + 32 + 24);
        w.uuid(&self.tx_id)
            .digest(&self.payload_digest)
            .i64(self.t_g.epoch_millis)
            .i32(self.t_g.utc_offset_minutes)
            .i64(self.t_c.epoch_millis)
            .i32(self.t_c.utc_offset_minutes);
        digest(&w.into_vec())
    }

    fn write(&self, w: &mut Writer) {
        w.uuid(&self.tx_id);
        match &self.payload {
            Some(p) => {
                w.u8(1).bytes(p);
            }
            None => {
                w.u8(0);
            }
        }
        w.digest(&self.payload_digest)
            .i64(self.t_g.epoch_millis)
            .i32(self.t_g.utc_offset_minutes)
            .i64(self.t_c.epoch_millis)
            .i32(self.t_c.utc_offset_minutes);
    }

    fn read(r: &mut Reader<'_>) -> Result<Self, WireError> {
        let tx_id = r.uuid()?;
        let payload = if r.bool("payload flag")? {
            Some(r.bytes()?.to_vec())
        } else {
            None
        };
        Ok(CommittedTx {
            tx_id,
            payload,
            payload_digest: r.digest()?,
            t_g: CanonicalTimestamp::with_offset(r.i64()?, r.i32()?),
            t_c: CanonicalTimestamp::with_offset(r.i64()?, r.i32()?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub header: BlockHeader,
    /// Digest of the serialized header as recorded at append time.
    pub hash: Digest32,
    pub txs: Vec<CommittedTx>,
}

impl Block {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::with_capacity(HEADER_LEN + 32 + self.txs.len() * 128);
        w.raw(&self.header.to_bytes()).digest(&self.hash);
        for tx in &self.txs {
            tx.write(&mut w);
        }
        w.into_vec()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(bytes);
        let header = BlockHeader::read(&mut r)?;
        let hash = r.digest()?;
        let mut txs = Vec::new();
        for _ in 0..header.tx_count {
            txs.push(CommittedTx::read(&mut r)?);
        }
        r.finish()?;
        Ok(Block { header, hash, txs })
    }

    pub fn leaves(&self) -> Vec<Digest32> {
        self.txs.iter().map(CommittedTx::leaf).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Block {
        let tx = CommittedTx::with_payload(
            Uuid::from_u128(7),
            b"payload".to_vec(),
            CanonicalTimestamp::with_offset(10, -240),
            CanonicalTimestamp::utc(20),
        );
        Block {
            header: BlockHeader {
                height: 3,
                prev_hash: digest(b"prev"),
                merkle_root: tx.leaf(),
                timestamp: CanonicalTimestamp::utc(20),
                tx_count: 1,
            },
            hash: Digest32::ZERO,
            txs: vec![tx.clone(), tx.digest_only()],
        }
    }

    #[test]
    fn header_layout_is_fixed() {
        let b = sample();
        let bytes = b.header.to_bytes();
        assert_eq!(bytes.len(), HEADER_LEN);
        assert_eq!(&bytes[..8], &3u64.to_be_bytes());
        assert_eq!(&bytes[8..40], digest(b"prev").as_bytes());
        assert_eq!(&bytes[72..80], &20i64.to_be_bytes());
        assert_eq!(&bytes[80..84], &1u32.to_be_bytes());
    }

    #[test]
    fn block_bytes_round_trip() {
        let mut b = sample();
        b.header.tx_count = 2;
        let bytes = b.to_bytes();
        assert_eq!(Block::from_bytes(&bytes).unwrap(), b);
        assert!(Block::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(Block::from_bytes(&longer).is_err());
    }

    #[test]
    fn leaf_covers_ids_and_times() {
        let tx = sample().txs[0].clone();
        let mut other = tx.clone();
        other.t_c.utc_offset_minutes = 60;
        assert_ne!(tx.leaf(), other.leaf());
        let mut other = tx.clone();
        other.tx_id = Uuid::from_u128(8);
        assert_ne!(tx.leaf(), other.leaf());
        assert_eq!(tx.leaf(), tx.digest_only().leaf());
    }
}
