use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;
use uuid::Uuid;

use super::SimError;
use crate::pbft::{AuditorNotification, FlagReason, MsgKind, ReplicaId};
use crate::time::Micros;

/// One generated transaction. Times are virtual milliseconds since the start
/// of the run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TxRecord {
    pub tx_id: Uuid,
    pub client: ReplicaId,
    pub t_g_ms: f64,
    /// When the issuing client executed it (or the earliest honest replica,
    /// if the client is faulty).
    pub t_c_ms: Option<f64>,
    pub seq: Option<u64>,
    /// Generated with a forged timestamp.
    pub forged: bool,
    pub discarded: bool,
}

impl TxRecord {
    pub fn l_t_ms(&self) -> Option<f64> {
        self.t_c_ms.map(|c| c - self.t_g_ms)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlagRecord {
    pub observer: ReplicaId,
    pub replica: ReplicaId,
    pub reason: FlagReason,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NotificationRecord {
    pub at_ms: f64,
    pub primary: ReplicaId,
    pub notification: AuditorNotification,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimMetrics {
    pub scenario: String,
    pub n: usize,
    pub payload_bytes: u64,
    pub lambda: f64,
    pub seed: u64,
    pub txs: Vec<TxRecord>,
    /// Messages put on the wire, by kind.
    pub msg_count: BTreeMap<MsgKind, u64>,
    /// Messages attributable to a sequence number.
    pub msg_by_seq: BTreeMap<u64, u64>,
    /// Messages withheld by fault profiles.
    pub dropped: u64,
    /// Messages a replica refused (bad signature, stale view and so on).
    pub rejected: u64,
    pub notifications: Vec<NotificationRecord>,
    pub flags: Vec<FlagRecord>,
    pub view_changes: u64,
    /// Chain heights of every replica at the end of the run.
    pub heights: Vec<usize>,
    /// Every pair of honest ledgers agrees on their common prefix.
    pub ledgers_consistent: bool,
    pub committed: usize,
    /// Committed transactions per virtual second.
    pub throughput: f64,
    pub end_ms: f64,
    pub events: u64,
    /// Stopped by the drain or event cap rather than by quiescence.
    pub truncated: bool,
}

impl SimMetrics {
    pub fn latencies(&self) -> impl Iterator<Item = f64> + '_ {
        self.txs.iter().filter_map(TxRecord::l_t_ms)
    }

    pub fn mean_latency_ms(&self) -> Option<f64> {
        mean(self.latencies())
    }

    pub fn total_messages(&self) -> u64 {
        self.msg_count.values().sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("metrics serialize")
    }
}

/// Consensus messages attributed to `seq`.
pub fn count_messages(metrics: &SimMetrics, seq: u64) -> Result<u64, SimError> {
    metrics.msg_by_seq.get(&seq).copied().ok_or(SimError::UnknownSeq(seq))
}

/// Messages per committed sequence number for the implemented schedule when
/// nothing fails: request, pre-prepare, prepares, commits and replies.
pub fn expected_messages(n: usize, client_is_primary: bool) -> u64 {
    let n = n as u64;
    if client_is_primary {
        (n - 1) * (2 * n + 1)
    } else {
        2 * n * n - n
    }
}

pub fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, count) = xs.fold((0.0, 0usize), |(s, c), x| (s + x, c + 1));
    (count > 0).then(|| sum / count as f64)
}

/// Nearest-rank percentile.
pub fn percentile(xs: &mut [f64], p: f64) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * xs.len() as f64).ceil().max(1.0) as usize;
    Some(xs[rank.min(xs.len()) - 1])
}

pub(crate) fn ms(t: Micros) -> f64 {
    t.as_millis_f64()
}

pub const TX_CSV_HEADER: [&str; 8] = ["scenario", "n", "payload_bytes", "lambda", "tx_id", "t_g_ms", "t_c_ms", "l_t_ms"];

/// Per-transaction rows for every committed transaction.
pub fn write_tx_csv<'a, W: Write>(out: W, runs: impl IntoIterator<Item = &'a SimMetrics>) -> Result<(), SimError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TX_CSV_HEADER)?;
    for m in runs {
        for tx in &m.txs {
            let (Some(t_c), Some(l_t)) = (tx.t_c_ms, tx.l_t_ms()) else { continue };
            w.write_record([
                m.scenario.clone(),
                m.n.to_string(),
                m.payload_bytes.to_string(),
                m.lambda.to_string(),
                tx.tx_id.to_string(),
                format!("{:.3}", tx.t_g_ms),
                format!("{t_c:.3}"),
                format!("{l_t:.3}"),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_forms() {
        assert_eq!(expected_messages(4, false), 28);
        assert_eq!(expected_messages(4, true), 27);
        assert_eq!(expected_messages(1, true), 0);
    }

    #[test]
    fn percentile_nearest_rank() {
        let mut v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&mut v, 99.0), Some(99.0));
        assert_eq!(percentile(&mut v, 50.0), Some(50.0));
        assert_eq!(percentile(&mut [7.0], 99.0), Some(7.0));
        assert_eq!(percentile(&mut [], 99.0), None);
        assert_eq!(mean([1.0, 2.0, 6.0].into_iter()), Some(3.0));
    }
}
