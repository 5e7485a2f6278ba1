use std::collections::BTreeSet;
use std::ops::Range;

use super::{EventLog, NodeId};
use crate::error::{ApanError, Result};

/// Contiguous chronological train/val/test ranges over an [`EventLog`].
#[derive(Clone, Debug, PartialEq)]
pub struct DataSplit {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
    /// Nodes touched by at least one training event.
    pub seen_nodes: BTreeSet<NodeId>,
}

impl DataSplit {
    /// Nodes appearing in `range` that never appear in training.
    pub fn unseen_in(&self, log: &EventLog, range: Range<usize>) -> BTreeSet<NodeId> {
        log.events()[range]
            .iter()
            .flat_map(|e| [e.src, e.dst])
            .filter(|n| !self.seen_nodes.contains(n))
            .collect()
    }
}

pub fn split_chronological(log: &EventLog, train_frac: f64, val_frac: f64) -> Result<DataSplit> {
    if !(train_frac > 0.0 && val_frac > 0.0 && train_frac + val_frac < 1.0) {
        return Err(ApanError::InvalidArgument(format!(
            "split fractions {train_frac}/{val_frac} must be positive with sum < 1"
        )));
    }
    let m = log.len();
    let train_end = (train_frac * m as f64).floor() as usize;
    let val_end = ((train_frac + val_frac) * m as f64).floor() as usize;
    let seen_nodes = log.events()[..train_end]
        .iter()
        .flat_map(|e| [e.src, e.dst])
        .collect();
    Ok(DataSplit {
        train: 0..train_end,
        val: train_end..val_end,
        test: val_end..m,
        seen_nodes,
    })
}

/// Consecutive `batch_size` sub-ranges of `range`; the last may be short.
pub fn batches(range: Range<usize>, batch_size: usize) -> Result<impl Iterator<Item = Range<usize>>> {
    if batch_size == 0 {
        return Err(ApanError::InvalidArgument("batch size must be >= 1".into()));
    }
    let end = range.end;
    Ok(range
        .step_by(batch_size)
        .map(move |start| start..(start + batch_size).min(end)))
}
