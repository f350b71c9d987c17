//! The single task that owns the replica. HTTP handlers and peer links reach
//! it only through its mailbox.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};
use std::time::Duration;

use blockaudit::ledger::store::{ChainWriter, DataDir};
use blockaudit::ledger::{Chain, ChainKind};
use blockaudit::pbft::{ConsensusMsg, Event, Output, Replica, ReplicaId, Request};
use blockaudit::Micros;
use serde::Serialize;
use tokio::sync::{mpsc, watch};
use uuid::Uuid;

use crate::transport::Transport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ReceiptStatus {
    Accepted,
    Committed,
    Rejected,
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct IngestReceipt {
    pub tx_id: Uuid,
    pub status: ReceiptStatus,
    pub detail: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub block_height: Option<u64>,
}

impl IngestReceipt {
    pub fn new(tx_id: Uuid, status: ReceiptStatus, detail: impl Into<String>) -> Self {
        IngestReceipt {
            tx_id,
            status,
            detail: detail.into(),
            block_height: None,
        }
    }
}

/// State readable from request handlers.
#[derive(Debug)]
pub struct Shared {
    pub id: ReplicaId,
    pub receipts: RwLock<HashMap<Uuid, IngestReceipt>>,
    pub recovery: RwLock<Chain>,
    pub detection: RwLock<Chain>,
}

impl Shared {
    pub fn new(id: ReplicaId) -> Self {
        Shared {
            id,
            receipts: RwLock::new(HashMap::new()),
            recovery: RwLock::new(Chain::new(ChainKind::Recovery)),
            detection: RwLock::new(Chain::new(ChainKind::Detection)),
        }
    }

    pub fn recovery_snapshot(&self) -> Chain {
        self.recovery.read().expect("ledger lock").snapshot()
    }

    pub fn receipt(&self, tx_id: &Uuid) -> Option<IngestReceipt> {
        self.receipts.read().expect("receipt lock").get(tx_id).cloned()
    }

    fn set_status(&self, tx_id: Uuid, status: ReceiptStatus, detail: &str, height: Option<u64>) {
        let mut receipts = self.receipts.write().expect("receipt lock");
        let r = receipts
            .entry(tx_id)
            .or_insert_with(|| IngestReceipt::new(tx_id, status, detail));
        if r.status == ReceiptStatus::Committed && status != ReceiptStatus::Committed {
            return;
        }
        r.status = status;
        r.detail = detail.to_string();
        r.block_height = height.or(r.block_height);
    }
}

pub enum Command {
    Submit(Vec<Request>),
}

pub(crate) struct NodeLoop {
    pub replica: Replica,
    pub transport: Transport,
    pub shared: Arc<Shared>,
    pub writers: Option<(ChainWriter, ChainWriter)>,
    pub inbound: mpsc::Receiver<ConsensusMsg>,
    pub commands: mpsc::Receiver<Command>,
    pub shutdown: watch::Receiver<bool>,
}

pub(crate) fn open_writers(data: &DataDir) -> Result<(ChainWriter, ChainWriter), blockaudit::ledger::LedgerError> {
    Ok((data.writer(ChainKind::Recovery)?, data.writer(ChainKind::Detection)?))
}

impl NodeLoop {
    pub async fn run(mut self) {
        loop {
            let sleep = match self.replica.next_deadline() {
                Some(d) => Duration::from_micros((d - Micros::now()).0.max(0) as u64),
                None => Duration::from_secs(3600),
            };
            let outputs = tokio::select! {
                Some(msg) = self.inbound.recv() => {
                    match self.replica.handle(&msg, Micros::now()) {
                        Ok(o) => o,
                        Err(e) => {
                            log::debug!("{}: rejected {} from {}: {e}", self.shared.id, msg.kind(), msg.sender);
                            Vec::new()
                        }
                    }
                }
                Some(cmd) = self.commands.recv() => match cmd {
                    Command::Submit(reqs) => {
                        let mut out = Vec::new();
                        for r in reqs {
                            out.extend(self.replica.submit(r, Micros::now()));
                        }
                        out
                    }
                },
                _ = tokio::time::sleep(sleep) => self.replica.tick(Micros::now()),
                _ = self.shutdown.changed() => return,
            };
            self.dispatch(outputs);
        }
    }

    fn dispatch(&mut self, outputs: Vec<Output>) {
        for out in outputs {
            match out {
                Output::Send { to, msg } => self.transport.send(to, &msg),
                Output::Event(e) => self.on_event(e),
            }
        }
    }

    fn on_event(&mut self, event: Event) {
        let shared = &self.shared;
        match event {
            Event::Executed(exec) => {
                if let Some(h) = exec.block_height {
                    let rec = self.replica.recovery();
                    let det = self.replica.detection();
                    if let Some((rw, dw)) = &mut self.writers {
                        let res = rw
                            .append(&rec.blocks()[h as usize])
                            .and_then(|_| dw.append(&det.blocks()[h as usize]));
                        if let Err(e) = res {
                            log::error!("{}: persisting block {h} failed: {e}", shared.id);
                        }
                    }
                    *shared.recovery.write().expect("ledger lock") = rec.snapshot();
                    *shared.detection.write().expect("ledger lock") = det.snapshot();
                }
                for tx in &exec.txs {
                    if tx.client == shared.id {
                        shared.set_status(tx.tx_id, ReceiptStatus::Committed, "committed", exec.block_height);
                    }
                }
            }
            Event::Discarded { tx_id, client } if client == shared.id => {
                shared.set_status(tx_id, ReceiptStatus::Rejected, "generation time not before receipt", None);
            }
            Event::Notification(n) => {
                log::warn!(
                    "{}: approval window for seq {} expired after {} iterations; suspects {:?}",
                    shared.id,
                    n.seq,
                    n.iterations,
                    n.suspects
                );
                for tx in &n.tx_ids {
                    if shared.receipt(tx).is_some() {
                        shared.set_status(*tx, ReceiptStatus::Aborted, "approval window expired", None);
                    }
                }
            }
            Event::Flagged { replica, reason } => log::warn!("{}: flagged {replica} for {reason:?}", shared.id),
            Event::ViewChanged { view } => log::info!("{}: entered view {view}", shared.id),
            _ => {}
        }
    }
}
