//! On-disk chains: one append-only file per chain.
//!
//! File layout: `"BACHAIN1" | kind u8 | (len u32 | block record)*`, with the
//! block record layout described in [`super::Block`].

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use super::{Block, Chain, ChainKind, LedgerError};
use crate::wire::Reader;

pub const MAGIC: &[u8; 8] = b"BACHAIN1";

pub fn encode_chain(chain: &Chain) -> Vec<u8> {
    let mut out = Vec::with_capacity(9);
    out.extend_from_slice(MAGIC);
    out.push(chain.kind().tag());
    for block in chain.blocks() {
        append_record(&mut out, block);
    }
    out
}

fn append_record(out: &mut Vec<u8>, block: &Block) {
    let bytes = block.to_bytes();
    out.extend_from_slice(&(bytes.len() as u32).to_be_bytes());
    out.extend_from_slice(&bytes);
}

/// Parses a chain file image. Blocks are not validated; see
/// [`super::verify_chain`].
pub fn decode_chain(bytes: &[u8]) -> Result<Chain, LedgerError> {
    let corrupt = |e: crate::wire::WireError| LedgerError::Corrupt(e.to_string());
    let mut r = Reader::new(bytes);
    if r.take(MAGIC.len()).map_err(corrupt)? != MAGIC {
        return Err(LedgerError::Corrupt("bad magic".into()));
    }
    let tag = r.u8().map_err(corrupt)?;
    let kind = ChainKind::from_tag(tag)
        .ok_or_else(|| LedgerError::Corrupt(format!("unknown chain kind {tag}")))?;
    let mut blocks = Vec::new();
    while r.remaining() > 0 {
        let at = r.position();
        let record = r.bytes().map_err(corrupt)?;
        let block = Block::from_bytes(record)
            .map_err(|e| LedgerError::Corrupt(format!("block record at byte {at}: {e}")))?;
        blocks.push(block);
    }
    Ok(Chain::from_blocks_unchecked(kind, blocks))
}

pub fn read_chain(path: &Path) -> Result<Chain, LedgerError> {
    decode_chain(&fs::read(path)?)
}

pub fn write_chain(path: &Path, chain: &Chain) -> Result<(), LedgerError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, encode_chain(chain))?;
    fs::rename(tmp, path)?;
    Ok(())
}

/// Appends block records to an existing chain file.
pub struct ChainWriter {
    file: BufWriter<File>,
}

impl ChainWriter {
    /// Creates the file with its preamble, or opens it for appending.
    pub fn open(path: &Path, kind: ChainKind) -> Result<Self, LedgerError> {
        let fresh = !path.exists();
        let mut file = BufWriter::new(OpenOptions::new().create(true).append(true).open(path)?);
        if fresh {
            file.write_all(MAGIC)?;
            file.write_all(&[kind.tag()])?;
            file.flush()?;
        }
        Ok(ChainWriter { file })
    }

    pub fn append(&mut self, block: &Block) -> Result<(), LedgerError> {
        let mut buf = Vec::new();
        append_record(&mut buf, block);
        self.file.write_all(&buf)?;
        self.file.flush()?;
        self.file.get_ref().sync_data()?;
        Ok(())
    }
}

/// One node's storage directory.
#[derive(Debug, Clone)]
pub struct DataDir {
    root: PathBuf,
}

impl DataDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        DataDir { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn chain_path(&self, kind: ChainKind) -> PathBuf {
        self.root.join(match kind {
            ChainKind::Recovery => "recovery.chain",
            ChainKind::Detection => "detection.chain",
        })
    }

    pub fn export_path(&self) -> PathBuf {
        self.root.join("entries.ndjson")
    }

    pub fn has_chains(&self) -> bool {
        self.chain_path(ChainKind::Recovery).exists()
            || self.chain_path(ChainKind::Detection).exists()
    }

    pub fn load(&self, kind: ChainKind) -> Result<Chain, LedgerError> {
        let chain = read_chain(&self.chain_path(kind))?;
        if chain.kind() != kind {
            return Err(LedgerError::KindMismatch { expected: kind });
        }
        Ok(chain)
    }

    pub fn save(&self, chain: &Chain) -> Result<(), LedgerError> {
        fs::create_dir_all(&self.root)?;
        write_chain(&self.chain_path(chain.kind()), chain)
    }

    pub fn writer(&self, kind: ChainKind) -> Result<ChainWriter, LedgerError> {
        fs::create_dir_all(&self.root)?;
        ChainWriter::open(&self.chain_path(kind), kind)
    }

    /// Writes the auditor export next to the chains and returns its path.
    pub fn export(&self, chain: &Chain) -> Result<PathBuf, LedgerError> {
        let path = self.export_path();
        let mut out = BufWriter::new(File::create(&path)?);
        write_ndjson(chain, &mut out)?;
        out.flush()?;
        Ok(path)
    }
}

/// One JSON object per committed transaction, in commit order.
pub fn write_ndjson(chain: &Chain, out: &mut impl Write) -> Result<(), LedgerError> {
    for (height, tx) in chain.txs() {
        let mut line = json!({
            "height": height,
            "txId": tx.tx_id,
            "payloadDigest": tx.payload_digest,
            "tG": tx.t_g.to_ms_wire(),
            "tC": tx.t_c.to_ms_wire(),
        });
        if let Some(p) = &tx.payload {
            line["payload"] = serde_json::from_slice::<Value>(p)
                .unwrap_or_else(|_| Value::String(hex::encode(p)));
        }
        serde_json::to_writer(&mut *out, &line).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
