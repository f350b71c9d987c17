//! Tamper-evident audit logging on a PBFT-replicated, hash-chained ledger.
//!
//! * [`audit`] builds and encodes audit-log entries.
//! * [`ledger`] stores committed transactions in recovery and detection chains.
//! * [`pbft`] is the replica state machine, free of I/O.
//! * [`netsim`] drives replicas over a simulated network with fault injection.
//! * [`ops`] holds the verify, tamper-drill, restore and benchmark drivers.

pub mod audit;
pub mod digest;
pub mod ledger;
pub mod netsim;
pub mod ops;
pub mod pbft;
pub mod time;
pub mod wire;

pub use digest::{digest, Digest32};
pub use time::{CanonicalTimestamp, Micros};
