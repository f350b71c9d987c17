//! Persistent TCP links between replicas.
//!
//! Every frame is a big-endian `u32` length followed by that many bytes. A
//! connection opens with a hello frame, `"BAHELLO1" | index u32 | micros i64 |
//! signature`, and then carries encoded [`ConsensusMsg`]s from that replica
//! only.

use std::collections::BTreeSet;
use std::net::{IpAddr, SocketAddr};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use blockaudit::pbft::{ConsensusMsg, ReplicaId, Signer, Verifier};
use blockaudit::Micros;
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{mpsc, watch};

use crate::master::PeerMasterList;

const HELLO: &[u8; 8] = b"BAHELLO1";
/// Largest frame accepted from a peer.
pub const MAX_FRAME: usize = 256 << 20;
const HELLO_SKEW_US: i64 = 300_000_000;

pub async fn write_frame(stream: &mut TcpStream, bytes: &[u8]) -> std::io::Result<()> {
    let len = u32::try_from(bytes.len()).map_err(|_| std::io::Error::other("frame too large"))?;
    stream.write_all(&len.to_be_bytes()).await?;
    stream.write_all(bytes).await
}

pub async fn read_frame(stream: &mut TcpStream) -> std::io::Result<Vec<u8>> {
    let mut len = [0u8; 4];
    stream.read_exact(&mut len).await?;
    let len = u32::from_be_bytes(len) as usize;
    if len > MAX_FRAME {
        return Err(std::io::Error::new(std::io::ErrorKind::InvalidData, "oversized frame"));
    }
    let mut buf = vec![0u8; len];
    stream.read_exact(&mut buf).await?;
    Ok(buf)
}

fn hello_body(index: u32, at: Micros) -> Vec<u8> {
    let mut b = HELLO.to_vec();
    b.extend_from_slice(&index.to_be_bytes());
    b.extend_from_slice(&at.0.to_be_bytes());
    b
}

pub(crate) fn make_hello(signer: &dyn Signer) -> Vec<u8> {
    let mut b = hello_body(signer.id().0, Micros::now());
    let sig = signer.sign(&b);
    b.extend_from_slice(&sig);
    b
}

/// The replica a hello frame authenticates, if it is valid and recent.
pub(crate) fn check_hello(frame: &[u8], verifier: &dyn Verifier, now: Micros) -> Option<ReplicaId> {
    if frame.len() < 20 || &frame[..8] != HELLO {
        return None;
    }
    let index = u32::from_be_bytes(frame[8..12].try_into().ok()?);
    let at = Micros(i64::from_be_bytes(frame[12..20].try_into().ok()?));
    if (now.0 - at.0).abs() > HELLO_SKEW_US {
        return None;
    }
    let id = ReplicaId(index);
    verifier.verify(id, &frame[..20], &frame[20..]).then_some(id)
}

/// Outbound queues to every peer plus the accept loop.
pub struct Transport {
    me: ReplicaId,
    queues: Vec<Option<mpsc::UnboundedSender<Arc<Vec<u8>>>>>,
    connected: Arc<AtomicUsize>,
}

impl Transport {
    pub fn start(
        listener: TcpListener,
        master: &PeerMasterList,
        signer: Arc<dyn Signer>,
        verifier: Arc<dyn Verifier>,
        inbound: mpsc::Sender<ConsensusMsg>,
        shutdown: watch::Receiver<bool>,
    ) -> Transport {
        let me = signer.id();
        let connected = Arc::new(AtomicUsize::new(0));
        let allow = master.allowlist();
        tokio::spawn(accept_loop(
            listener,
            master.clone(),
            allow,
            verifier,
            inbound,
            shutdown.clone(),
        ));
        let queues = master
            .peers()
            .iter()
            .map(|p| {
                if p.replica_index == me.0 {
                    return None;
                }
                let (tx, rx) = mpsc::unbounded_channel();
                tokio::spawn(dial_loop(
                    p.address,
                    signer.clone(),
                    rx,
                    connected.clone(),
                    shutdown.clone(),
                ));
                Some(tx)
            })
            .collect();
        Transport { me, queues, connected }
    }

    pub fn send(&self, to: ReplicaId, msg: &ConsensusMsg) {
        self.send_bytes(to, Arc::new(msg.to_bytes()));
    }

    pub fn send_bytes(&self, to: ReplicaId, bytes: Arc<Vec<u8>>) {
        if to == self.me {
            return;
        }
        if let Some(Some(q)) = self.queues.get(to.index()) {
            let _ = q.send(bytes);
        }
    }

    /// Peers with an open outbound connection.
    pub fn connected(&self) -> usize {
        self.connected.load(Ordering::Relaxed)
    }

    pub fn connected_handle(&self) -> Arc<AtomicUsize> {
        self.connected.clone()
    }
}

async fn dial_loop(
    addr: SocketAddr,
    signer: Arc<dyn Signer>,
    mut rx: mpsc::UnboundedReceiver<Arc<Vec<u8>>>,
    connected: Arc<AtomicUsize>,
    mut shutdown: watch::Receiver<bool>,
) {
    let mut backoff = Duration::from_millis(50);
    let mut pending: Option<Arc<Vec<u8>>> = None;
    loop {
        if *shutdown.borrow() {
            return;
        }
        let mut stream = match TcpStream::connect(addr).await {
            Ok(s) => s,
            Err(e) => {
                log::debug!("{}: connect to {addr} failed: {e}", signer.id());
                tokio::select! {
                    _ = tokio::time::sleep(backoff) => {}
                    _ = shutdown.changed() => return,
                }
                backoff = (backoff * 2).min(Duration::from_secs(2));
                continue;
            }
        };
        let _ = stream.set_nodelay(true);
        if write_frame(&mut stream, &make_hello(signer.as_ref())).await.is_err() {
            continue;
        }
        backoff = Duration::from_millis(50);
        connected.fetch_add(1, Ordering::Relaxed);
        log::info!("{}: connected to {addr}", signer.id());
        loop {
            let frame = match pending.take() {
                Some(f) => f,
                None => tokio::select! {
                    f = rx.recv() => match f {
                        Some(f) => f,
                        None => {
                            connected.fetch_sub(1, Ordering::Relaxed);
                            return;
                        }
                    },
                    _ = shutdown.changed() => {
                        connected.fetch_sub(1, Ordering::Relaxed);
                        return;
                    }
                },
            };
            if let Err(e) = write_frame(&mut stream, &frame).await {
                log::warn!("{}: link to {addr} dropped: {e}", signer.id());
                pending = Some(frame);
                break;
            }
        }
        connected.fetch_sub(1, Ordering::Relaxed);
    }
}

async fn accept_loop(
    listener: TcpListener,
    master: PeerMasterList,
    allow: BTreeSet<IpAddr>,
    verifier: Arc<dyn Verifier>,
    inbound: mpsc::Sender<ConsensusMsg>,
    mut shutdown: watch::Receiver<bool>,
) {
    loop {
        let (stream, peer) = tokio::select! {
            r = listener.accept() => match r {
                Ok(x) => x,
                Err(e) => {
                    log::warn!("accept failed: {e}");
                    continue;
                }
            },
            _ = shutdown.changed() => return,
        };
        if !allow.contains(&peer.ip()) {
            log::warn!("refused consensus connection from off-list {peer}");
            continue;
        }
        tokio::spawn(serve_peer(
            stream,
            peer,
            master.clone(),
            verifier.clone(),
            inbound.clone(),
            shutdown.clone(),
        ));
    }
}

async fn serve_peer(
    mut stream: TcpStream,
    peer: SocketAddr,
    master: PeerMasterList,
    verifier: Arc<dyn Verifier>,
    inbound: mpsc::Sender<ConsensusMsg>,
    mut shutdown: watch::Receiver<bool>,
) {
    let hello = match tokio::time::timeout(Duration::from_secs(5), read_frame(&mut stream)).await {
        Ok(Ok(f)) => f,
        _ => return,
    };
    let Some(id) = check_hello(&hello, verifier.as_ref(), Micros::now()) else {
        log::warn!("bad hello from {peer}");
        return;
    };
    if master.get(id).is_none_or(|p| p.address.ip() != peer.ip()) {
        log::warn!("{peer} claimed to be {id} from the wrong address");
        return;
    }
    loop {
        let frame = tokio::select! {
            f = read_frame(&mut stream) => match f {
                Ok(f) => f,
                Err(_) => return,
            },
            _ = shutdown.changed() => return,
        };
        match ConsensusMsg::from_bytes(&frame) {
            Ok(msg) if msg.sender == id => {
                if inbound.send(msg).await.is_err() {
                    return;
                }
            }
            Ok(msg) => log::warn!("{id} relayed a message signed as {}", msg.sender),
            Err(e) => {
                log::warn!("undecodable frame from {id}: {e}");
                return;
            }
        }
    }
}
