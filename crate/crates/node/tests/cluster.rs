use std::net::{IpAddr, Ipv4Addr, SocketAddr, TcpListener};
use std::time::Duration;

use blockaudit_node::{bootstrap, NodeError, NodeKey, NodeOptions, PeerMasterList, PeerRecord, RunningNode};
use serde_json::Value;
use tokio::io::{AsyncReadExt, AsyncWriteExt};

const LISTING: &str = include_str!("../../core/tests/data/listing1.json");
const GOLDEN: &str = include_str!("../../core/tests/data/listing1.canonical.json");
const LISTING_ID: &str = "9ceb8c2c-154a-49d5-9441-a92600db997b";

struct Cluster {
    nodes: Vec<RunningNode>,
    dirs: Vec<tempfile::TempDir>,
}

fn bind() -> TcpListener {
    TcpListener::bind("127.0.0.1:0").unwrap()
}

fn group(n: usize) -> (PeerMasterList, Vec<NodeKey>, Vec<TcpListener>) {
    let keys: Vec<NodeKey> = (0..n).map(|_| NodeKey::generate()).collect();
    let listeners: Vec<TcpListener> = (0..n).map(|_| bind()).collect();
    let master = PeerMasterList::new(
        keys.iter()
            .zip(&listeners)
            .enumerate()
            .map(|(i, (k, l))| PeerRecord {
                replica_index: i as u32,
                address: l.local_addr().unwrap(),
                public_identity: k.public_hex(),
            })
            .collect(),
    )
    .unwrap();
    (master, keys, listeners)
}

async fn start(n: usize) -> Cluster {
    let (master, keys, listeners) = group(n);
    let mut nodes = Vec::new();
    let mut dirs = Vec::new();
    for (i, (key, consensus)) in keys.into_iter().zip(listeners).enumerate() {
        let dir = tempfile::tempdir().unwrap();
        let http = bind();
        let mut opts = NodeOptions::new(master.clone(), i as u32, key, http.local_addr().unwrap());
        opts.http_listener = Some(http);
        opts.consensus_listener = Some(consensus);
        opts.data_dir = Some(dir.path().join("ledger"));
        nodes.push(bootstrap(opts).await.unwrap());
        dirs.push(dir);
    }
    Cluster { nodes, dirs }
}

fn client() -> reqwest::Client {
    reqwest::Client::builder()
        .local_address(IpAddr::V4(Ipv4Addr::LOCALHOST))
        .build()
        .unwrap()
}

async fn post(c: &reqwest::Client, node: &RunningNode, body: &str) -> (u16, Value) {
    let r = c
        .post(format!("http://{}/createAudit", node.http_addr))
        .header("content-type", "application/json")
        .body(body.to_string())
        .send()
        .await
        .unwrap();
    let status = r.status().as_u16();
    (status, r.json().await.unwrap_or(Value::Null))
}

/// Retries while the node still reports too few peers.
async fn post_when_ready(c: &reqwest::Client, node: &RunningNode, body: &str) -> (u16, Value) {
    for _ in 0..100 {
        let r = post(c, node, body).await;
        if r.0 != 503 {
            return r;
        }
        tokio::time::sleep(Duration::from_millis(50)).await;
    }
    panic!("node never reached its peers");
}

async fn get(c: &reqwest::Client, node: &RunningNode, path: &str) -> (u16, Value) {
    let r = c.get(format!("http://{}{path}", node.http_addr)).send().await.unwrap();
    let status = r.status().as_u16();
    (status, r.json().await.unwrap_or(Value::Null))
}

async fn await_committed(c: &reqwest::Client, node: &RunningNode, tx: &str) -> Value {
    for _ in 0..200 {
        let (code, body) = get(c, node, &format!("/audit/{tx}")).await;
        if code == 200 && body["receipt"]["status"] == "Committed" {
            return body;
        }
        tokio::time::sleep(Duration::from_millis(50)).await;
    }
    panic!("{tx} never committed");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn listing_packet_commits_on_every_replica() {
    let cluster = start(4).await;
    let c = client();
    let (code, receipt) = post_when_ready(&c, &cluster.nodes[1], LISTING).await;
    assert_eq!(code, 200, "{receipt}");
    assert_eq!(receipt["status"], "Accepted");
    assert_eq!(receipt["txId"], LISTING_ID);

    let body = await_committed(&c, &cluster.nodes[1], LISTING_ID).await;
    let height = body["entry"]["blockHeight"].as_u64().unwrap();
    assert_eq!(body["receipt"]["blockHeight"].as_u64(), Some(height));
    assert_eq!(body["entry"]["packet"]["UserId"], 666);
    assert_eq!(body["entry"]["packet"]["Details"].as_array().unwrap().len(), 2);
    assert_eq!(body["entry"]["payloadDigest"].as_str().unwrap().len(), 64);

    let raw = c
        .get(format!("http://{}/audit/{LISTING_ID}", cluster.nodes[1].http_addr))
        .send()
        .await
        .unwrap()
        .text()
        .await
        .unwrap();
    assert!(raw.contains(&format!("\"packet\":{}", GOLDEN.trim_end())), "{raw}");

    let id = LISTING_ID.parse().unwrap();
    for _ in 0..100 {
        if cluster.nodes.iter().all(|n| n.shared.recovery_snapshot().contains(&id)) {
            break;
        }
        tokio::time::sleep(Duration::from_millis(50)).await;
    }
    for n in &cluster.nodes {
        let chain = n.shared.recovery_snapshot();
        assert_eq!(chain.locate(&id).map(|(h, _)| h), Some(height));
    }

    let before = cluster.nodes[1].shared.recovery_snapshot().tx_count();
    let (code, again) = post(&c, &cluster.nodes[1], LISTING).await;
    assert_eq!(code, 200);
    assert_eq!(again["status"], "Committed");
    assert_eq!(again["blockHeight"].as_u64(), Some(height));
    tokio::time::sleep(Duration::from_millis(300)).await;
    assert_eq!(cluster.nodes[1].shared.recovery_snapshot().tx_count(), before);

    let (code, list) = get(&c, &cluster.nodes[2], "/audit?userId=666&className=SAGE.BL.InspSystem.PermitInspection").await;
    assert_eq!(code, 200);
    assert_eq!(list["total"], 1);
    assert_eq!(list["items"][0]["txId"], LISTING_ID);
    let (code, _) = get(&c, &cluster.nodes[2], "/audit?userId=666&page=2&pageSize=1").await;
    assert_eq!(code, 200);
    assert_eq!(get(&c, &cluster.nodes[2], "/audit?userId=abc").await.0, 400);
    assert_eq!(get(&c, &cluster.nodes[2], "/audit?from=yesterday").await.0, 400);
    assert_eq!(get(&c, &cluster.nodes[0], &format!("/audit/{}", uuid::Uuid::new_v4())).await.0, 404);
    assert_eq!(get(&c, &cluster.nodes[0], "/audit/not-a-uuid").await.0, 400);

    let dirs: Vec<_> = cluster.dirs.iter().map(|d| d.path().join("ledger")).collect();
    for n in cluster.nodes {
        n.shutdown().await;
    }
    for d in &dirs {
        let report = blockaudit::ops::verify(d).unwrap();
        assert!(report.is_clean(), "{:?}", report.problems());
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn ingress_rejections() {
    let cluster = start(4).await;
    let c = client();
    let node = &cluster.nodes[0];

    let future_ms = now_ms() + 3_600_000;
    let future = LISTING
        .replace("1532366360155", &future_ms.to_string())
        .replace(LISTING_ID, "0b0c8e4e-3f1e-4b57-8d6a-2a1e6f0d9a11");
    let (code, body) = post_when_ready(&c, node, &future).await;
    assert_eq!(code, 409, "{body}");
    assert_eq!(body["error"], "OrderingViolation");

    let (code, body) = post(&c, node, "{ not json").await;
    assert_eq!(code, 400);
    assert_eq!(body["error"], "MalformedPacket");
    let no_details = LISTING.replace("\"Details\"", "\"Detailz\"");
    assert_eq!(post(&c, node, &no_details).await.0, 400);

    let outsider = reqwest::Client::builder()
        .local_address(IpAddr::V4(Ipv4Addr::new(127, 0, 0, 2)))
        .build()
        .unwrap();
    let (code, body) = post(&outsider, node, LISTING).await;
    assert_eq!(code, 403);
    assert_eq!(body["error"], "NotAllowlisted");
    assert!(node.shared.receipt(&LISTING_ID.parse().unwrap()).is_none());

    for n in cluster.nodes {
        n.shutdown().await;
    }
}

fn now_ms() -> i64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .unwrap()
        .as_millis() as i64
}

#[tokio::test]
async fn off_list_consensus_connection_is_dropped() {
    let cluster = start(1).await;
    let target: SocketAddr = cluster.nodes[0].consensus_addr;
    let socket = tokio::net::TcpSocket::new_v4().unwrap();
    socket.bind("127.0.0.2:0".parse().unwrap()).unwrap();
    let mut stream = socket.connect(target).await.unwrap();
    let _ = stream.write_all(&[0, 0, 0, 4, 1, 2, 3, 4]).await;
    let mut buf = [0u8; 1];
    let read = tokio::time::timeout(Duration::from_secs(5), stream.read(&mut buf)).await;
    assert!(matches!(read, Ok(Ok(0)) | Ok(Err(_))), "connection stayed open");

    let mut garbage = tokio::net::TcpStream::connect(target).await.unwrap();
    garbage.write_all(&[0, 0, 0, 20]).await.unwrap();
    garbage.write_all(&[7u8; 20]).await.unwrap();
    let read = tokio::time::timeout(Duration::from_secs(5), garbage.read(&mut buf)).await;
    assert!(matches!(read, Ok(Ok(0)) | Ok(Err(_))), "bad hello accepted");

    for n in cluster.nodes {
        n.shutdown().await;
    }
}

#[tokio::test]
async fn bootstrap_refuses_bad_identity_or_existing_ledger() {
    let (master, keys, mut listeners) = group(2);
    let addr: SocketAddr = "127.0.0.1:0".parse().unwrap();

    let opts = NodeOptions::new(master.clone(), 5, keys[0].clone(), addr);
    assert!(matches!(bootstrap(opts).await, Err(NodeError::SelfNotInList(5))));

    let opts = NodeOptions::new(master.clone(), 1, keys[0].clone(), addr);
    assert!(matches!(bootstrap(opts).await, Err(NodeError::KeyMismatch(1))));

    let dir = tempfile::tempdir().unwrap();
    let cfg = blockaudit::netsim::ScenarioConfig {
        max_transactions: Some(3),
        ..Default::default()
    };
    blockaudit::ops::populate_data_dir(dir.path(), cfg, 0).unwrap();
    let mut opts = NodeOptions::new(master.clone(), 0, keys[0].clone(), addr);
    opts.data_dir = Some(dir.path().to_path_buf());
    assert!(matches!(bootstrap(opts).await, Err(NodeError::ExistingLedger(_))));

    let taken = listeners.remove(0);
    let mut opts = NodeOptions::new(master, 0, keys[0].clone(), taken.local_addr().unwrap());
    opts.consensus_listener = Some(bind());
    assert!(matches!(bootstrap(opts).await, Err(NodeError::BindFailure(_))));
}
