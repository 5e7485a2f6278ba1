use crate::error::{ApanError, Result};
use crate::events::NodeId;

/// Last embedding `z(t-)` and its update time, per node.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeStateStore {
    d: usize,
    z: Vec<f64>,
    updated: Vec<f64>,
}

impl NodeStateStore {
    pub fn new(num_nodes: usize, d: usize) -> Self {
        Self {
            d,
            z: vec![0.0; num_nodes * d],
            updated: vec![0.0; num_nodes],
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.updated.len()
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn get(&self, node: NodeId) -> Result<&[f64]> {
        if node >= self.num_nodes() {
            return Err(ApanError::UnknownNode(node));
        }
        Ok(&self.z[node * self.d..(node + 1) * self.d])
    }

    pub fn last_update(&self, node: NodeId) -> Result<f64> {
        self.updated.get(node).copied().ok_or(ApanError::UnknownNode(node))
    }

    pub fn set(&mut self, node: NodeId, z: &[f64], t: f64) -> Result<()> {
        if node >= self.num_nodes() {
            return Err(ApanError::UnknownNode(node));
        }
        if z.len() != self.d {
            return Err(ApanError::Dimension {
                expected: self.d,
                actual: z.len(),
            });
        }
        self.z[node * self.d..(node + 1) * self.d].copy_from_slice(z);
        self.updated[node] = t;
        Ok(())
    }
}
