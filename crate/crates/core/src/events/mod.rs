//! Interaction logs, chronological splits and the temporal adjacency index.

mod adjacency;
mod csv;
mod split;

pub use adjacency::{AdjEntry, TemporalAdjacency};
pub use csv::{parse_jodie_csv, parse_metadata, write_jodie_csv, write_metadata, DatasetMeta};
pub use split::{batches, split_chronological, DataSplit};

use crate::error::{ApanError, Result};

pub type NodeId = usize;

/// One interaction `src -> dst` at `timestamp` carrying an edge feature.
#[derive(Clone, Debug, PartialEq)]
pub struct TemporalEvent {
    pub src: NodeId,
    pub dst: NodeId,
    pub edge_feat: Vec<f64>,
    pub timestamp: f64,
    pub label: Option<bool>,
}

/// Timestamp-ordered interaction stream.
#[derive(Clone, Debug, PartialEq)]
pub struct EventLog {
    events: Vec<TemporalEvent>,
    num_nodes: usize,
    d_e: usize,
    /// Size of the source partition for bipartite logs (ids `< num_users`
    /// are sources, the rest destinations).
    num_users: Option<usize>,
}

impl EventLog {
    pub fn new(
        events: Vec<TemporalEvent>,
        num_nodes: usize,
        d_e: usize,
        num_users: Option<usize>,
    ) -> Result<Self> {
        for (k, ev) in events.iter().enumerate() {
            if ev.src >= num_nodes || ev.dst >= num_nodes {
                return Err(ApanError::InvalidArgument(format!(
                    "event {k}: node id out of range ({} -> {}, num_nodes {num_nodes})",
                    ev.src, ev.dst
                )));
            }
            if ev.edge_feat.len() != d_e {
                return Err(ApanError::InvalidArgument(format!(
                    "event {k}: edge feature length {} != {d_e}",
                    ev.edge_feat.len()
                )));
            }
            if !ev.timestamp.is_finite() {
                return Err(ApanError::InvalidArgument(format!(
                    "event {k}: non-finite timestamp"
                )));
            }
            if k > 0 && events[k - 1].timestamp > ev.timestamp {
                return Err(ApanError::InvalidArgument(format!(
                    "event {k}: timestamp {} precedes {}",
                    ev.timestamp,
                    events[k - 1].timestamp
                )));
            }
        }
        if let Some(u) = num_users {
            if u > num_nodes {
                return Err(ApanError::InvalidArgument(format!(
                    "num_users {u} exceeds num_nodes {num_nodes}"
                )));
            }
        }
        Ok(Self {
            events,
            num_nodes,
            d_e,
            num_users,
        })
    }

    pub fn events(&self) -> &[TemporalEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn d_e(&self) -> usize {
        self.d_e
    }

    pub fn num_users(&self) -> Option<usize> {
        self.num_users
    }

    pub fn is_bipartite(&self) -> bool {
        self.num_users.is_some()
    }

    /// All-zero node features, one row per node.
    pub fn node_features(&self) -> Vec<Vec<f64>> {
        vec![vec![0.0; self.d_e]; self.num_nodes]
    }
}
