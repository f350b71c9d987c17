//! Temporal-ordering checks on generation timestamps.

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Admission {
    Accept,
    /// The request claims to have been generated no earlier than it arrived.
    Discard,
}

/// The primary's check: a request is admitted only when it was received
/// strictly after it was generated.
pub fn admit_request<T: Ord>(t_g: T, t_recv: T) -> Admission {
    if t_recv > t_g {
        Admission::Accept
    } else {
        Admission::Discard
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Recheck {
    Ok,
    /// Refuse to prepare and flag the proposer.
    Flag,
}

/// The same predicate, applied by each backup on its own receive time.
pub fn replica_recheck<T: Ord>(t_g: T, t_recv_local: T) -> Recheck {
    match admit_request(t_g, t_recv_local) {
        Admission::Accept => Recheck::Ok,
        Admission::Discard => Recheck::Flag,
    }
}
