use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::Arc;

use serde::Serialize;
use uuid::Uuid;

use super::block::{Block, BlockHeader, ChainKind, CommittedTx};
use super::merkle::merkle_root;
use super::LedgerError;
use crate::digest::{digest, Digest32};
use crate::time::CanonicalTimestamp;

/// An append-only sequence of hash-linked blocks.
///
/// Blocks are reference counted so [`Chain::snapshot`] is cheap; a snapshot
/// is an independent chain that never observes later appends.
#[derive(Debug, Clone)]
pub struct Chain {
    kind: ChainKind,
    blocks: Vec<Arc<Block>>,
    index: HashMap<Uuid, (u64, usize)>,
}

impl Chain {
    pub fn new(kind: ChainKind) -> Self {
        Chain {
            kind,
            blocks: Vec::new(),
            index: HashMap::new(),
        }
    }

    /// Rebuilds a chain from stored blocks without validating them; run
    /// [`verify_chain`] to find out whether they are intact.
    pub fn from_blocks_unchecked(kind: ChainKind, blocks: Vec<Block>) -> Self {
        let mut chain = Chain::new(kind);
        for block in blocks {
            chain.push_indexed(block);
        }
        chain
    }

    fn push_indexed(&mut self, block: Block) {
        let height = self.blocks.len() as u64;
        for (i, tx) in block.txs.iter().enumerate() {
            self.index.entry(tx.tx_id).or_insert((height, i));
        }
        self.blocks.push(Arc::new(block));
    }

    pub fn kind(&self) -> ChainKind {
        self.kind
    }

    pub fn blocks(&self) -> &[Arc<Block>] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn tx_count(&self) -> usize {
        self.index.len()
    }

    pub fn head_hash(&self) -> Digest32 {
        self.blocks
            .last()
            .map(|b| b.header.hash())
            .unwrap_or(Digest32::ZERO)
    }

    pub fn snapshot(&self) -> Chain {
        self.clone()
    }

    pub fn contains(&self, tx_id: &Uuid) -> bool {
        self.index.contains_key(tx_id)
    }

    /// Height and record of a committed transaction.
    pub fn locate(&self, tx_id: &Uuid) -> Option<(u64, &CommittedTx)> {
        let (h, i) = *self.index.get(tx_id)?;
        Some((h, &self.blocks[h as usize].txs[i]))
    }

    /// All transactions in commit order with their block height.
    pub fn txs(&self) -> impl Iterator<Item = (u64, &CommittedTx)> {
        self.blocks
            .iter()
            .enumerate()
            .flat_map(|(h, b)| b.txs.iter().map(move |tx| (h as u64, tx)))
    }

    fn check_tx(&self, tx: &CommittedTx) -> Result<(), LedgerError> {
        match (self.kind, &tx.payload) {
            (ChainKind::Recovery, None) | (ChainKind::Detection, Some(_)) => {
                return Err(LedgerError::KindMismatch {
                    expected: self.kind,
                })
            }
            (ChainKind::Recovery, Some(p)) if digest(p) != tx.payload_digest => {
                return Err(LedgerError::InvalidTx(tx.tx_id, "payload digest mismatch"))
            }
            _ => {}
        }
        if tx.t_c.epoch_millis <= tx.t_g.epoch_millis {
            return Err(LedgerError::InvalidTx(tx.tx_id, "t_c must be after t_g"));
        }
        if self.index.contains_key(&tx.tx_id) {
            return Err(LedgerError::InvalidTx(tx.tx_id, "already committed"));
        }
        Ok(())
    }

    /// Appends one block. The header timestamp is stored in UTC.
    pub fn append_block(
        &mut self,
        txs: Vec<CommittedTx>,
        now: CanonicalTimestamp,
    ) -> Result<&Block, LedgerError> {
        if txs.is_empty() {
            return Err(LedgerError::EmptyBlock);
        }
        let mut seen = HashSet::new();
        for tx in &txs {
            self.check_tx(tx)?;
            if !seen.insert(tx.tx_id) {
                return Err(LedgerError::InvalidTx(tx.tx_id, "duplicated within block"));
            }
        }
        let leaves: Vec<Digest32> = txs.iter().map(CommittedTx::leaf).collect();
        let header = BlockHeader {
            height: self.blocks.len() as u64,
            prev_hash: self.head_hash(),
            merkle_root: merkle_root(&leaves)?,
            timestamp: CanonicalTimestamp::utc(now.epoch_millis),
            tx_count: txs.len() as u32,
        };
        let hash = header.hash();
        self.push_indexed(Block { header, hash, txs });
        Ok(self.blocks.last().expect("just pushed"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    HeightGap { position: u64, found: u64 },
    PrevHashMismatch { height: u64 },
    BlockHashMismatch { height: u64 },
    MerkleRootMismatch { height: u64 },
    TxCountMismatch { height: u64, header: u32, actual: usize },
    EmptyBlock { height: u64 },
    PayloadDigestMismatch { height: u64, tx_id: Uuid },
    PayloadPresence { height: u64, tx_id: Uuid },
    NonPositiveLatency { height: u64, tx_id: Uuid },
    DuplicateTx { height: u64, tx_id: Uuid },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::HeightGap { position, found } => {
                write!(f, "block at position {position} claims height {found}")
            }
            Violation::PrevHashMismatch { height } => {
                write!(f, "block {height}: prev_hash does not match block {}", height.wrapping_sub(1))
            }
            Violation::BlockHashMismatch { height } => {
                write!(f, "block {height}: header digest differs from recorded hash")
            }
            Violation::MerkleRootMismatch { height } => {
                write!(f, "block {height}: merkle root does not match transactions")
            }
            Violation::TxCountMismatch { height, header, actual } => {
                write!(f, "block {height}: header says {header} txs, found {actual}")
            }
            Violation::EmptyBlock { height } => write!(f, "block {height}: no transactions"),
            Violation::PayloadDigestMismatch { height, tx_id } => {
                write!(f, "block {height}: payload of {tx_id} does not match its digest")
            }
            Violation::PayloadPresence { height, tx_id } => {
                write!(f, "block {height}: payload presence of {tx_id} wrong for chain kind")
            }
            Violation::NonPositiveLatency { height, tx_id } => {
                write!(f, "block {height}: {tx_id} confirmed no later than generated")
            }
            Violation::DuplicateTx { height, tx_id } => {
                write!(f, "block {height}: {tx_id} committed more than once")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct VerificationReport {
    pub blocks_checked: usize,
    pub violations: Vec<Violation>,
}

impl VerificationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Re-derives every link of `chain` and reports each one that fails.
pub fn verify_chain(chain: &Chain) -> VerificationReport {
    let mut report = VerificationReport {
        blocks_checked: chain.blocks.len(),
        violations: Vec::new(),
    };
    let v = &mut report.violations;
    let mut prev = Digest32::ZERO;
    let mut seen = HashSet::new();
    for (pos, block) in chain.blocks.iter().enumerate() {
        let h = block.header.height;
        if h != pos as u64 {
            v.push(Violation::HeightGap {
                position: pos as u64,
                found: h,
            });
        }
        if block.header.prev_hash != prev {
            v.push(Violation::PrevHashMismatch { height: h });
        }
        let recomputed = block.header.hash();
        if recomputed != block.hash {
            v.push(Violation::BlockHashMismatch { height: h });
        }
        prev = recomputed;

        if block.txs.is_empty() {
            v.push(Violation::EmptyBlock { height: h });
        } else if merkle_root(&block.leaves()).ok() != Some(block.header.merkle_root) {
            v.push(Violation::MerkleRootMismatch { height: h });
        }
        if block.header.tx_count as usize != block.txs.len() {
            v.push(Violation::TxCountMismatch {
                height: h,
                header: block.header.tx_count,
                actual: block.txs.len(),
            });
        }
        for tx in &block.txs {
            match (chain.kind, &tx.payload) {
                (ChainKind::Recovery, Some(p)) => {
                    if digest(p) != tx.payload_digest {
                        v.push(Violation::PayloadDigestMismatch {
                            height: h,
                            tx_id: tx.tx_id,
                        });
                    }
                }
                (ChainKind::Detection, None) => {}
                _ => v.push(Violation::PayloadPresence {
                    height: h,
                    tx_id: tx.tx_id,
                }),
            }
            if tx.t_c.epoch_millis <= tx.t_g.epoch_millis {
                v.push(Violation::NonPositiveLatency {
                    height: h,
                    tx_id: tx.tx_id,
                });
            }
            if !seen.insert(tx.tx_id) {
                v.push(Violation::DuplicateTx {
                    height: h,
                    tx_id: tx.tx_id,
                });
            }
        }
    }
    report
}

/// Transactions whose externally stored record no longer hashes to the
/// digest on the detection chain, or which are missing from the store.
pub fn detect_tamper(
    external_store: &HashMap<Uuid, Vec<u8>>,
    detection: &Chain,
) -> Result<Vec<Uuid>, LedgerError> {
    if detection.kind != ChainKind::Detection {
        return Err(LedgerError::KindMismatch {
            expected: ChainKind::Detection,
        });
    }
    Ok(detection
        .txs()
        .filter(|(_, tx)| match external_store.get(&tx.tx_id) {
            Some(bytes) => digest(bytes) != tx.payload_digest,
            None => true,
        })
        .map(|(_, tx)| tx.tx_id)
        .collect())
}

/// Checks that `detection` commits to exactly the payloads held by
/// `recovery`: same headers block by block and matching digests.
pub fn cross_check(recovery: &Chain, detection: &Chain) -> Vec<String> {
    let mut problems = Vec::new();
    if recovery.len() != detection.len() {
        problems.push(format!(
            "recovery has {} blocks, detection has {}",
            recovery.len(),
            detection.len()
        ));
    }
    for (r, d) in recovery.blocks.iter().zip(detection.blocks.iter()) {
        let h = r.header.height;
        if r.header != d.header {
            problems.push(format!("block {h}: headers differ"));
        }
        if r.txs.len() != d.txs.len() {
            problems.push(format!("block {h}: transaction counts differ"));
            continue;
        }
        for (rt, dt) in r.txs.iter().zip(d.txs.iter()) {
            let payload_digest = rt.payload.as_deref().map(digest);
            if rt.tx_id != dt.tx_id || payload_digest != Some(dt.payload_digest) {
                problems.push(format!("block {h}: {} differs between chains", rt.tx_id));
            }
        }
    }
    problems
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tx(i: u128, body: &str, t: i64) -> CommittedTx {
        CommittedTx::with_payload(
            Uuid::from_u128(i),
            body.as_bytes().to_vec(),
            CanonicalTimestamp::utc(t),
            CanonicalTimestamp::utc(t + 5),
        )
    }

    pub(crate) fn three_block_chain() -> Chain {
        let mut c = Chain::new(ChainKind::Recovery);
        c.append_block(vec![tx(1, "alpha", 100)], CanonicalTimestamp::utc(105))
            .unwrap();
        c.append_block(
            vec![tx(2, "beta", 200), tx(3, "gamma", 201)],
            CanonicalTimestamp::utc(206),
        )
        .unwrap();
        c.append_block(vec![tx(4, "delta", 300)], CanonicalTimestamp::utc(305))
            .unwrap();
        c
    }

    fn raw_blocks(c: &Chain) -> Vec<Block> {
        c.blocks().iter().map(|b| (**b).clone()).collect()
    }

    #[test]
    fn genesis_block() {
        let mut c = Chain::new(ChainKind::Recovery);
        let b = c.append_block(vec![tx(1, "a", 1)], CanonicalTimestamp::utc(6)).unwrap();
        assert_eq!(b.header.height, 0);
        assert!(b.header.prev_hash.is_zero());
    }

    #[test]
    fn sequential_appends_link_headers() {
        let c = three_block_chain();
        // Recompute the header digest from the documented layout.
        let h0 = &c.blocks()[0].header;
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&h0.height.to_be_bytes());
        bytes.extend_from_slice(h0.prev_hash.as_bytes());
        bytes.extend_from_slice(h0.merkle_root.as_bytes());
        bytes.extend_from_slice(&h0.timestamp.epoch_millis.to_be_bytes());
        bytes.extend_from_slice(&h0.tx_count.to_be_bytes());
        assert_eq!(c.blocks()[1].header.prev_hash, digest(&bytes));
    }

    #[test]
    fn kind_and_emptiness_checked() {
        let mut d = Chain::new(ChainKind::Detection);
        assert!(matches!(
            d.append_block(vec![tx(1, "a", 1)], CanonicalTimestamp::utc(9)),
            Err(LedgerError::KindMismatch { .. })
        ));
        assert!(matches!(
            d.append_block(vec![], CanonicalTimestamp::utc(9)),
            Err(LedgerError::EmptyBlock)
        ));
        d.append_block(vec![tx(1, "a", 1).digest_only()], CanonicalTimestamp::utc(9))
            .unwrap();
        let mut r = Chain::new(ChainKind::Recovery);
        assert!(matches!(
            r.append_block(vec![tx(1, "a", 1).digest_only()], CanonicalTimestamp::utc(9)),
            Err(LedgerError::KindMismatch { .. })
        ));
    }

    #[test]
    fn append_rejects_bad_txs() {
        let mut r = Chain::new(ChainKind::Recovery);
        let mut bad = tx(1, "a", 1);
        bad.t_c = bad.t_g;
        assert!(r.append_block(vec![bad], CanonicalTimestamp::utc(9)).is_err());
        let mut bad = tx(1, "a", 1);
        bad.payload = Some(b"b".to_vec());
        assert!(r.append_block(vec![bad], CanonicalTimestamp::utc(9)).is_err());
        r.append_block(vec![tx(1, "a", 1)], CanonicalTimestamp::utc(9)).unwrap();
        assert!(r.append_block(vec![tx(1, "a", 1)], CanonicalTimestamp::utc(9)).is_err());
        assert!(r
            .append_block(vec![tx(2, "a", 1), tx(2, "a", 1)], CanonicalTimestamp::utc(9))
            .is_err());
        assert_eq!(r.len(), 1);
    }

    #[test]
    fn untampered_chain_is_clean() {
        assert!(verify_chain(&three_block_chain()).is_clean());
        assert!(verify_chain(&Chain::new(ChainKind::Detection)).is_clean());
    }

    #[test]
    fn every_payload_byte_flip_is_reported_exactly_once() {
        let c = three_block_chain();
        let blocks = raw_blocks(&c);
        for (bi, block) in blocks.iter().enumerate() {
            for (ti, t) in block.txs.iter().enumerate() {
                let len = t.payload.as_ref().unwrap().len();
                for byte in 0..len {
                    let mut mutated = blocks.clone();
                    mutated[bi].txs[ti].payload.as_mut().unwrap()[byte] ^= 0x01;
                    let report = verify_chain(&Chain::from_blocks_unchecked(
                        ChainKind::Recovery,
                        mutated,
                    ));
                    assert_eq!(
                        report.violations,
                        vec![Violation::PayloadDigestMismatch {
                            height: bi as u64,
                            tx_id: t.tx_id
                        }]
                    );
                }
            }
        }
    }

    #[test]
    fn spliced_chain_breaks_successor_link() {
        let mut blocks = raw_blocks(&three_block_chain());
        blocks.remove(1);
        let report = verify_chain(&Chain::from_blocks_unchecked(ChainKind::Recovery, blocks));
        assert!(report
            .violations
            .contains(&Violation::PrevHashMismatch { height: 2 }));
        assert!(report.violations.contains(&Violation::HeightGap {
            position: 1,
            found: 2
        }));
    }

    type Mutation = Box<dyn Fn(&mut Block)>;

    #[test]
    fn header_field_mutations_are_reported() {
        let blocks = raw_blocks(&three_block_chain());
        let last = blocks.len() - 1;
        let mutations: Vec<Mutation> = vec![
            Box::new(|b| b.header.timestamp.epoch_millis += 1),
            Box::new(|b| b.header.height += 1),
            Box::new(|b| b.header.tx_count += 1),
            Box::new(|b| b.header.merkle_root = digest(b"x")),
            Box::new(|b| b.header.prev_hash = digest(b"x")),
            Box::new(|b| b.txs[0].t_c.epoch_millis += 1),
            Box::new(|b| b.txs[0].tx_id = Uuid::from_u128(99)),
        ];
        for target in [0, last] {
            for m in &mutations {
                let mut mutated = blocks.clone();
                m(&mut mutated[target]);
                let c = Chain::from_blocks_unchecked(ChainKind::Recovery, mutated);
                assert!(!verify_chain(&c).is_clean());
            }
        }
    }

    #[test]
    fn tamper_detection_against_external_store() {
        let rec = three_block_chain();
        let mut det = Chain::new(ChainKind::Detection);
        for b in rec.blocks() {
            det.append_block(
                b.txs.iter().map(CommittedTx::digest_only).collect(),
                b.header.timestamp,
            )
            .unwrap();
        }
        assert!(cross_check(&rec, &det).is_empty());
        let mut store: HashMap<Uuid, Vec<u8>> = rec
            .txs()
            .map(|(_, t)| (t.tx_id, t.payload.clone().unwrap()))
            .collect();
        assert!(detect_tamper(&store, &det).unwrap().is_empty());

        store.insert(Uuid::from_u128(3), b"GAMMA".to_vec());
        assert_eq!(detect_tamper(&store, &det).unwrap(), vec![Uuid::from_u128(3)]);

        store.insert(Uuid::from_u128(3), b"gamma".to_vec());
        store.remove(&Uuid::from_u128(4));
        assert_eq!(detect_tamper(&store, &det).unwrap(), vec![Uuid::from_u128(4)]);

        assert!(matches!(
            detect_tamper(&store, &rec),
            Err(LedgerError::KindMismatch { .. })
        ));
    }

    #[test]
    fn snapshots_are_prefixes() {
        let mut c = three_block_chain();
        let snap = c.snapshot();
        c.append_block(vec![tx(9, "z", 400)], CanonicalTimestamp::utc(406))
            .unwrap();
        assert_eq!(snap.len(), 3);
        for (a, b) in snap.blocks().iter().zip(c.blocks()) {
            assert_eq!(a.header.hash(), b.header.hash());
        }
        assert_eq!(c.locate(&Uuid::from_u128(3)).unwrap().0, 1);
        assert!(snap.locate(&Uuid::from_u128(9)).is_none());
    }
}
