use rand::Rng;

use crate::events::NodeId;

/// Nodes eligible as negatives: only ids already observed in the stream.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NegativePool {
    members: Vec<NodeId>,
    /// `slot[node]` is the node's index in `members`, if present.
    slot: Vec<Option<usize>>,
}

impl NegativePool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, node: NodeId) -> bool {
        self.slot.get(node).is_some_and(Option::is_some)
    }

    pub fn insert(&mut self, node: NodeId) {
        if node >= self.slot.len() {
            self.slot.resize(node + 1, None);
        }
        if self.slot[node].is_none() {
            self.slot[node] = Some(self.members.len());
            self.members.push(node);
        }
    }

    /// Members in insertion order.
    pub fn members(&self) -> &[NodeId] {
        &self.members
    }

    pub fn clear(&mut self) {
        self.members.clear();
        self.slot.clear();
    }

    /// Uniform draw from the pool without `exclude`; `None` when nothing is
    /// left to draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, exclude: NodeId) -> Option<NodeId> {
        match self.slot.get(exclude).copied().flatten() {
            Some(skip) => {
                if self.members.len() < 2 {
                    return None;
                }
                let k = rng.random_range(0..self.members.len() - 1);
                Some(self.members[if k >= skip { k + 1 } else { k }])
            }
            None => {
                if self.members.is_empty() {
                    return None;
                }
                Some(self.members[rng.random_range(0..self.members.len())])
            }
        }
    }
}
