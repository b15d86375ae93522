//! Desk-scale simulator of hierarchical blockchain-based federated learning
//! for collaborative IoT intrusion detection.
//!
//! Endpoints train a binary NetFlow attack classifier locally, combiners and
//! a smart-contract-driven reducer aggregate the weights hierarchically over
//! a tamper-evident permissioned ledger, and the experiment harness runs the
//! three evaluation scenarios end to end.

pub mod config;
pub mod contract;
pub mod data;
pub mod error;
pub mod federation;
pub mod ledger;
pub mod matrix;
pub mod metrics;
pub mod nn;
pub mod report;
pub mod scenario;

pub use error::{Error, Result};
