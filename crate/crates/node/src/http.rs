use std::collections::BTreeSet;
use std::net::{IpAddr, SocketAddr};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::QueryRejection;
use axum::extract::{ConnectInfo, Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use blockaudit::audit::{canonical_encode, decode_payload, encode_transaction, parse_packet, AuditError, TransactionScheme};
use blockaudit::ledger::{query, CommittedTx, QueryFilter};
use blockaudit::pbft::{admit_request, Admission, Request};
use blockaudit::{CanonicalTimestamp, Digest32, Micros};
use serde::{Deserialize, Serialize};
use serde_json::json;
use serde_json::value::RawValue;
use tokio::sync::mpsc;
use uuid::Uuid;

use crate::service::{Command, IngestReceipt, ReceiptStatus, Shared};

const MAX_PAGE_SIZE: usize = 1000;

#[derive(Clone)]
pub struct ApiState {
    pub shared: Arc<Shared>,
    pub commands: mpsc::Sender<Command>,
    pub allow: Arc<BTreeSet<IpAddr>>,
    pub scheme: TransactionScheme,
    /// Peers this node currently reaches, itself excluded.
    pub connected: Arc<AtomicUsize>,
    /// Replicas that must be reachable (self included) to accept work.
    pub needed: usize,
}

pub fn router(state: ApiState) -> Router {
    Router::new()
        .route("/createAudit", post(create_audit))
        .route("/audit/{tx_id}", get(get_audit))
        .route("/audit", get(list_audit))
        .with_state(state)
}

fn error(status: StatusCode, code: &str, detail: impl std::fmt::Display) -> Response {
    (status, Json(json!({ "error": code, "detail": detail.to_string() }))).into_response()
}

async fn create_audit(
    State(st): State<ApiState>,
    ConnectInfo(peer): ConnectInfo<SocketAddr>,
    body: Bytes,
) -> Response {
    if !st.allow.contains(&peer.ip()) {
        return error(StatusCode::FORBIDDEN, "NotAllowlisted", peer.ip());
    }
    let entry = match parse_packet(&body) {
        Ok(e) => e,
        Err(e @ AuditError::SchemaViolation(_)) => return error(StatusCode::BAD_REQUEST, "SchemaViolation", e),
        Err(e) => return error(StatusCode::BAD_REQUEST, "MalformedPacket", e),
    };
    if let Some(existing) = st.shared.receipt(&entry.id) {
        return (StatusCode::OK, Json(existing)).into_response();
    }
    if let Some((height, _)) = st.shared.recovery.read().expect("ledger lock").locate(&entry.id) {
        let mut r = IngestReceipt::new(entry.id, ReceiptStatus::Committed, "committed");
        r.block_height = Some(height);
        return (StatusCode::OK, Json(r)).into_response();
    }
    let t_g = entry.created_date;
    if admit_request(t_g.to_micros(), Micros::now()) == Admission::Discard {
        return error(
            StatusCode::CONFLICT,
            "OrderingViolation",
            format!("CreatedDate {} is not in the past", t_g.to_iso8601()),
        );
    }
    if st.connected.load(Ordering::Relaxed) + 1 < st.needed {
        return error(StatusCode::SERVICE_UNAVAILABLE, "ConsensusUnavailable", "too few peers reachable");
    }
    let payloads = match encode_transaction(std::slice::from_ref(&entry), st.scheme) {
        Ok(p) => p,
        Err(e) => return error(StatusCode::BAD_REQUEST, "SchemaViolation", e),
    };
    let requests: Vec<Request> = payloads
        .into_iter()
        .map(|p| {
            let mut r = Request::new(p.tx_id, st.shared.id, t_g.to_micros(), p.bytes);
            r.t_g_offset_minutes = t_g.utc_offset_minutes;
            r
        })
        .collect();
    let receipt = IngestReceipt::new(entry.id, ReceiptStatus::Accepted, "submitted to consensus");
    {
        let mut receipts = st.shared.receipts.write().expect("receipt lock");
        for r in &requests {
            receipts.insert(r.tx_id, IngestReceipt::new(r.tx_id, ReceiptStatus::Accepted, "submitted to consensus"));
        }
    }
    if st.commands.try_send(Command::Submit(requests)).is_err() {
        st.shared.receipts.write().expect("receipt lock").remove(&entry.id);
        return error(StatusCode::SERVICE_UNAVAILABLE, "ConsensusUnavailable", "replica mailbox full");
    }
    (StatusCode::OK, Json(receipt)).into_response()
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct EntryView {
    block_height: u64,
    tx_id: Uuid,
    payload_digest: Digest32,
    t_g: String,
    t_c: String,
    /// Canonical bytes of the entry this transaction is named after.
    packet: Option<Box<RawValue>>,
    entries: Vec<Box<RawValue>>,
}

fn entry_view(height: u64, tx: &CommittedTx) -> EntryView {
    let entries: Vec<Box<RawValue>> = tx
        .payload
        .as_deref()
        .and_then(|p| decode_payload(p).ok())
        .unwrap_or_default()
        .iter()
        .filter_map(|e| String::from_utf8(canonical_encode(e)).ok())
        .filter_map(|s| RawValue::from_string(s).ok())
        .collect();
    EntryView {
        block_height: height,
        tx_id: tx.tx_id,
        payload_digest: tx.payload_digest,
        t_g: tx.t_g.to_ms_wire(),
        t_c: tx.t_c.to_ms_wire(),
        packet: entries.first().cloned(),
        entries,
    }
}

#[derive(Serialize)]
struct AuditView {
    receipt: IngestReceipt,
    #[serde(skip_serializing_if = "Option::is_none")]
    entry: Option<EntryView>,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct PageView {
    items: Vec<EntryView>,
    page: usize,
    page_size: usize,
    total: usize,
}

async fn get_audit(State(st): State<ApiState>, Path(tx_id): Path<String>) -> Response {
    let Ok(tx_id) = Uuid::parse_str(&tx_id) else {
        return error(StatusCode::BAD_REQUEST, "MalformedTxId", tx_id);
    };
    let chain = st.shared.recovery_snapshot();
    if let Some((height, tx)) = chain.locate(&tx_id) {
        let mut receipt = IngestReceipt::new(tx_id, ReceiptStatus::Committed, "committed");
        receipt.block_height = Some(height);
        let view = AuditView {
            receipt,
            entry: Some(entry_view(height, tx)),
        };
        return Json(view).into_response();
    }
    match st.shared.receipt(&tx_id) {
        Some(receipt) => Json(AuditView { receipt, entry: None }).into_response(),
        None => error(StatusCode::NOT_FOUND, "UnknownTx", tx_id),
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(rename_all = "camelCase")]
struct ListParams {
    user_id: Option<String>,
    session_id: Option<String>,
    class_name: Option<String>,
    entity_id: Option<String>,
    from: Option<String>,
    to: Option<String>,
    page: Option<usize>,
    page_size: Option<usize>,
}

fn filter_from(p: &ListParams) -> Result<QueryFilter, String> {
    let user_id = p
        .user_id
        .as_deref()
        .map(|u| u.parse::<i64>().map_err(|_| format!("userId `{u}` is not an integer")))
        .transpose()?;
    let session_id = p
        .session_id
        .as_deref()
        .map(|s| Uuid::parse_str(s).map_err(|_| format!("sessionId `{s}` is not a UUID")))
        .transpose()?;
    let time = |s: &Option<String>| {
        s.as_deref()
            .map(|t| CanonicalTimestamp::parse_wire(t).map_err(|e| e.to_string()))
            .transpose()
    };
    let (from, to) = (time(&p.from)?, time(&p.to)?);
    let time_range = match (from, to) {
        (None, None) => None,
        (f, t) => Some((
            f.unwrap_or(CanonicalTimestamp::utc(i64::MIN)),
            t.unwrap_or(CanonicalTimestamp::utc(i64::MAX)),
        )),
    };
    Ok(QueryFilter {
        tx_id: None,
        user_id,
        session_id,
        class_name: p.class_name.clone(),
        entity_id: p.entity_id.as_deref().map(blockaudit::ops::parse_entity_key),
        time_range,
    })
}

async fn list_audit(State(st): State<ApiState>, params: Result<Query<ListParams>, QueryRejection>) -> Response {
    let params = match params {
        Ok(Query(p)) => p,
        Err(e) => return error(StatusCode::BAD_REQUEST, "MalformedFilter", e.body_text()),
    };
    let filter = match filter_from(&params) {
        Ok(f) => f,
        Err(e) => return error(StatusCode::BAD_REQUEST, "MalformedFilter", e),
    };
    let page = params.page.unwrap_or(1).max(1);
    let page_size = params.page_size.unwrap_or(50).clamp(1, MAX_PAGE_SIZE);
    let chain = st.shared.recovery_snapshot();
    let hits = match query(&chain, &filter) {
        Ok(h) => h,
        Err(e) => return error(StatusCode::BAD_REQUEST, "MalformedFilter", e),
    };
    let items: Vec<EntryView> = hits
        .iter()
        .skip((page - 1) * page_size)
        .take(page_size)
        .map(|h| entry_view(h.height, h.tx))
        .collect();
    Json(PageView {
        items,
        page,
        page_size,
        total: hits.len(),
    })
    .into_response()
}
