use super::NodeId;
use crate::error::{ApanError, Result};

/// One side of a recorded interaction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdjEntry {
    pub neighbor: NodeId,
    pub timestamp: f64,
    /// Position of the interaction in its event log.
    pub event: usize,
}

/// Per-node append-only interaction history, each list timestamp-sorted.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TemporalAdjacency {
    lists: Vec<Vec<AdjEntry>>,
}

impl TemporalAdjacency {
    pub fn new(num_nodes: usize) -> Self {
        Self {
            lists: vec![Vec::new(); num_nodes],
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.lists.len()
    }

    /// Records `src -- dst` at `timestamp` on both endpoints' lists.
    pub fn record(&mut self, src: NodeId, dst: NodeId, timestamp: f64, event: usize) -> Result<()> {
        for node in [src, dst] {
            if let Some(last) = self.lists.get(node).and_then(|l| l.last()) {
                if last.timestamp > timestamp {
                    return Err(ApanError::InvalidArgument(format!(
                        "node {node}: recording t={timestamp} after t={}",
                        last.timestamp
                    )));
                }
            }
        }
        let need = src.max(dst) + 1;
        if self.lists.len() < need {
            self.lists.resize(need, Vec::new());
        }
        self.lists[src].push(AdjEntry {
            neighbor: dst,
            timestamp,
            event,
        });
        self.lists[dst].push(AdjEntry {
            neighbor: src,
            timestamp,
            event,
        });
        Ok(())
    }

    pub fn history(&self, node: NodeId) -> &[AdjEntry] {
        self.lists.get(node).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Up to `n` entries with timestamp strictly before `t`, most recent first.
    pub fn recent_entries(&self, node: NodeId, n: usize, t: f64) -> impl Iterator<Item = &AdjEntry> {
        let list = self.history(node);
        let end = list.partition_point(|e| e.timestamp < t);
        list[..end].iter().rev().take(n)
    }

    /// Most-recent temporal neighbors of `node` before `t`, newest first.
    pub fn recent_neighbors(&self, node: NodeId, n: usize, t: f64) -> Vec<(NodeId, f64)> {
        self.recent_entries(node, n, t)
            .map(|e| (e.neighbor, e.timestamp))
            .collect()
    }

    pub fn total_entries(&self) -> usize {
        self.lists.iter().map(Vec::len).sum()
    }
}
