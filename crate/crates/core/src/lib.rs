//! Streaming temporal-graph embeddings with asynchronous mail propagation.
//!
//! Inference reads per-node mailboxes and runs a small attention encoder;
//! interaction summaries are delivered to neighbor mailboxes afterwards, off
//! the latency-critical path.

pub mod bench;
pub mod error;
pub mod events;
pub mod kv;
pub mod mailbox;
pub mod model;
pub mod propagator;
pub mod synthetic;
pub mod tensor;
pub mod train;
pub mod worker;

pub use error::{ApanError, Result};
