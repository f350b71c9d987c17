use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use blockaudit::audit::TransactionScheme;
use blockaudit::ledger::store::DataDir;
use blockaudit::pbft::{Replica, ReplicaConfig, ReplicaId, ViewChangeConfig, WindowConfig};
use tokio::net::TcpListener;
use tokio::sync::{mpsc, watch};
use tokio::task::JoinHandle;

use crate::http::{router, ApiState};
use crate::keys::{NodeKey, PeerKeys};
use crate::master::PeerMasterList;
use crate::service::{open_writers, NodeLoop, Shared};
use crate::NodeError;

const MAILBOX: usize = 4096;

#[derive(Debug)]
pub struct NodeOptions {
    pub master: PeerMasterList,
    pub index: u32,
    pub key: NodeKey,
    pub scheme: TransactionScheme,
    /// `None` keeps the ledger in memory only.
    pub data_dir: Option<PathBuf>,
    pub http_addr: SocketAddr,
    /// Listeners bound by the caller, used instead of binding
    /// `http_addr` and the master-list address.
    pub http_listener: Option<std::net::TcpListener>,
    pub consensus_listener: Option<std::net::TcpListener>,
    pub view_change: Option<ViewChangeConfig>,
    pub window: WindowConfig,
    pub max_batch: usize,
}

impl NodeOptions {
    pub fn new(master: PeerMasterList, index: u32, key: NodeKey, http_addr: SocketAddr) -> Self {
        NodeOptions {
            master,
            index,
            key,
            scheme: TransactionScheme::default(),
            data_dir: None,
            http_addr,
            http_listener: None,
            consensus_listener: None,
            view_change: Some(ViewChangeConfig::default()),
            window: WindowConfig::default(),
            max_batch: 64,
        }
    }
}

pub struct RunningNode {
    pub http_addr: SocketAddr,
    pub consensus_addr: SocketAddr,
    pub shared: Arc<Shared>,
    shutdown: watch::Sender<bool>,
    tasks: Vec<JoinHandle<()>>,
}

impl RunningNode {
    pub async fn shutdown(self) {
        let _ = self.shutdown.send(true);
        for t in self.tasks {
            let _ = t.await;
        }
    }

    /// Resolves when the node stops on its own.
    pub async fn wait(&mut self) {
        for t in &mut self.tasks {
            let _ = t.await;
        }
    }
}

async fn listener(pre: Option<std::net::TcpListener>, addr: SocketAddr) -> Result<TcpListener, NodeError> {
    match pre {
        Some(l) => {
            l.set_nonblocking(true)?;
            Ok(TcpListener::from_std(l)?)
        }
        None => TcpListener::bind(addr)
            .await
            .map_err(|e| NodeError::BindFailure(format!("{addr}: {e}"))),
    }
}

/// Starts the replica, its peer links and the HTTP API.
pub async fn bootstrap(opts: NodeOptions) -> Result<RunningNode, NodeError> {
    let id = ReplicaId(opts.index);
    let me = opts.master.get(id).ok_or(NodeError::SelfNotInList(opts.index))?;
    if me.public_identity != opts.key.public_hex() {
        return Err(NodeError::KeyMismatch(opts.index));
    }
    let writers = match &opts.data_dir {
        Some(dir) => {
            let data = DataDir::new(dir);
            if data.has_chains() {
                return Err(NodeError::ExistingLedger(dir.clone()));
            }
            std::fs::create_dir_all(dir)?;
            Some(open_writers(&data)?)
        }
        None => None,
    };
    let verifier = Arc::new(PeerKeys::from_master_list(&opts.master)?);
    let n = opts.master.len();
    let mut cfg = ReplicaConfig::new(id, n);
    cfg.window = opts.window;
    cfg.view_change = opts.view_change;
    cfg.max_batch = opts.max_batch;
    let needed = cfg.quorum.commit;
    let replica = Replica::new(cfg, Box::new(opts.key.signer(id)), verifier.clone())?;

    let consensus = listener(opts.consensus_listener, me.address).await?;
    let consensus_addr = consensus.local_addr()?;
    let http = listener(opts.http_listener, opts.http_addr).await?;
    let http_addr = http.local_addr()?;

    let (shutdown_tx, shutdown_rx) = watch::channel(false);
    let (inbound_tx, inbound_rx) = mpsc::channel(MAILBOX);
    let (cmd_tx, cmd_rx) = mpsc::channel(MAILBOX);
    let transport = crate::transport::Transport::start(
        consensus,
        &opts.master,
        Arc::new(opts.key.signer(id)),
        verifier,
        inbound_tx,
        shutdown_rx.clone(),
    );
    let shared = Arc::new(Shared::new(id));
    let state = ApiState {
        shared: shared.clone(),
        commands: cmd_tx,
        allow: Arc::new(opts.master.allowlist()),
        scheme: opts.scheme,
        connected: transport.connected_handle(),
        needed,
    };
    let node_loop = NodeLoop {
        replica,
        transport,
        shared: shared.clone(),
        writers,
        inbound: inbound_rx,
        commands: cmd_rx,
        shutdown: shutdown_rx.clone(),
    };
    let mut tasks = vec![tokio::spawn(node_loop.run())];
    let app = router(state).into_make_service_with_connect_info::<SocketAddr>();
    let mut stop = shutdown_rx;
    tasks.push(tokio::spawn(async move {
        let res = axum::serve(http, app)
            .with_graceful_shutdown(async move {
                let _ = stop.changed().await;
            })
            .await;
        if let Err(e) = res {
            log::error!("http server stopped: {e}");
        }
    }));
    log::info!("{id}: http on {http_addr}, consensus on {consensus_addr}, {n} replicas");
    Ok(RunningNode {
        http_addr,
        consensus_addr,
        shared,
        shutdown: shutdown_tx,
        tasks,
    })
}
