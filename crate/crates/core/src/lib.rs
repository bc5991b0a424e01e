//! Transactional key-value store with leased client caches, sharded
//! optimistic validation and a deterministic discrete-event simulator.

pub mod cache;
pub mod checker;
pub mod client;
pub mod clock;
pub mod config;
pub mod error;
pub mod experiments;
pub mod lease;
pub mod message;
pub mod par;
pub mod sim;
pub mod storage;
pub mod types;
pub mod validator;
pub mod watermark;
pub mod workload;

pub use error::{Error, Result};
pub use types::{shard_of, ts_compare, KeyId, NodeId, Timestamp, TxnContext, TxnId, TxnKind};
