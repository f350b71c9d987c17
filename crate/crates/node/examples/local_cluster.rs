//! Four ingest nodes on localhost. Posts one audit packet to node 1 and
//! polls until every replica has committed it.

use std::net::TcpListener;
use std::time::Duration;

use blockaudit_node::{bootstrap, NodeKey, NodeOptions, PeerMasterList, PeerRecord};

const PACKET: &str = r#"{"AppId":"USA-FL-0000005","ClassName":"PermitInspection","CreatedDate":"\/Date(1532366360155-0400)\/",
"EntityId":161031,"EventType":"UPDATE","Id":"9ceb8c2c-154a-49d5-9441-a92600db997b",
"SessionId":"c66207c8-63be-4703-b858-cbfae98a988e","Url":"\/inspection","UserId":666,
"Details":[{"Id":"fa268eaf-7993-48e3-ae6a-a92600db997b","NewValue":"10","OldValue":"9","PropertyName":"DBVersion"}]}"#;

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let keys: Vec<NodeKey> = (0..4).map(|_| NodeKey::generate()).collect();
    let consensus: Vec<TcpListener> = (0..4).map(|_| TcpListener::bind("127.0.0.1:0")).collect::<Result<_, _>>()?;
    let master = PeerMasterList::new(
        keys.iter()
            .zip(&consensus)
            .enumerate()
            .map(|(i, (k, l))| {
                Ok(PeerRecord {
                    replica_index: i as u32,
                    address: l.local_addr()?,
                    public_identity: k.public_hex(),
                })
            })
            .collect::<Result<_, std::io::Error>>()?,
    )?;
    println!("master list:\n{}", master.to_json());

    let mut nodes = Vec::new();
    for (i, (key, listener)) in keys.into_iter().zip(consensus).enumerate() {
        let http = TcpListener::bind("127.0.0.1:0")?;
        let mut opts = NodeOptions::new(master.clone(), i as u32, key, http.local_addr()?);
        opts.http_listener = Some(http);
        opts.consensus_listener = Some(listener);
        nodes.push(bootstrap(opts).await?);
    }

    let client = reqwest::Client::new();
    let url = format!("http://{}/createAudit", nodes[1].http_addr);
    let receipt = loop {
        let r = client.post(&url).body(PACKET).send().await?;
        if r.status() != 503 {
            break r.text().await?;
        }
        tokio::time::sleep(Duration::from_millis(50)).await;
    };
    println!("POST /createAudit -> {receipt}");

    let id = "9ceb8c2c-154a-49d5-9441-a92600db997b".parse()?;
    while !nodes.iter().all(|n| n.shared.recovery_snapshot().contains(&id)) {
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
    let status = client
        .get(format!("http://{}/audit/{id}", nodes[3].http_addr))
        .send()
        .await?
        .text()
        .await?;
    println!("GET /audit/{id} on node 3 -> {status}");
    for n in nodes {
        n.shutdown().await;
    }
    Ok(())
}
