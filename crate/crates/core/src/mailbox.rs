//! Per-node fixed-capacity mail FIFOs.
//!
//! Every mailbox starts with `m` zero mails at timestamp 0, so a readout is
//! always an `m x d` matrix. Eviction follows push order; sorting by
//! timestamp only happens at readout.

use std::io::{Read, Write};

use crate::error::{ApanError, Result};
use crate::events::NodeId;
use crate::tensor::Tensor;

/// A `d`-dimensional interaction summary stamped with its event time.
#[derive(Clone, Debug, PartialEq)]
pub struct Mail {
    pub vector: Vec<f64>,
    pub timestamp: f64,
}

impl Mail {
    pub fn new(vector: Vec<f64>, timestamp: f64) -> Self {
        Self { vector, timestamp }
    }

    pub fn zeros(d: usize) -> Self {
        Self {
            vector: vec![0.0; d],
            timestamp: 0.0,
        }
    }
}

/// Ring buffer of exactly `m` slots. `head` is the oldest-pushed slot.
#[derive(Clone, Debug)]
pub struct Mailbox {
    m: usize,
    d: usize,
    head: usize,
    vectors: Vec<f64>,
    timestamps: Vec<f64>,
}

impl Mailbox {
    pub fn new(m: usize, d: usize) -> Self {
        Self {
            m,
            d,
            head: 0,
            vectors: vec![0.0; m * d],
            timestamps: vec![0.0; m],
        }
    }

    pub fn capacity(&self) -> usize {
        self.m
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// Evicts the oldest-pushed mail and appends `mail`.
    pub fn push(&mut self, mail: &Mail) -> Result<()> {
        if mail.vector.len() != self.d {
            return Err(ApanError::Dimension {
                expected: self.d,
                actual: mail.vector.len(),
            });
        }
        let slot = self.head;
        self.vectors[slot * self.d..(slot + 1) * self.d].copy_from_slice(&mail.vector);
        self.timestamps[slot] = mail.timestamp;
        self.head = (self.head + 1) % self.m;
        Ok(())
    }

    /// Slot indices from oldest to newest push.
    fn push_order(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.m).map(move |k| (self.head + k) % self.m)
    }

    /// Contents in push order.
    pub fn mails(&self) -> Vec<Mail> {
        self.push_order()
            .map(|s| Mail {
                vector: self.vectors[s * self.d..(s + 1) * self.d].to_vec(),
                timestamp: self.timestamps[s],
            })
            .collect()
    }

    /// `m x d` matrix whose rows are sorted ascending by timestamp (ties keep
    /// push order), plus the per-row timestamps. Row 0 is the oldest mail.
    pub fn read_matrix(&self) -> (Tensor, Vec<f64>) {
        let mut order: Vec<usize> = self.push_order().collect();
        order.sort_by(|&a, &b| self.timestamps[a].total_cmp(&self.timestamps[b]));
        let mut data = Vec::with_capacity(self.m * self.d);
        let mut times = Vec::with_capacity(self.m);
        for s in order {
            data.extend_from_slice(&self.vectors[s * self.d..(s + 1) * self.d]);
            times.push(self.timestamps[s]);
        }
        let matrix = Tensor::from_rows(self.m, self.d, data).expect("mailbox shape");
        (matrix, times)
    }
}

impl PartialEq for Mailbox {
    fn eq(&self, other: &Self) -> bool {
        self.m == other.m && self.d == other.d && self.mails() == other.mails()
    }
}

/// One [`Mailbox`] per node, all sharing `(m, d)`.
#[derive(Clone, Debug, PartialEq)]
pub struct MailboxStore {
    m: usize,
    d: usize,
    boxes: Vec<Mailbox>,
}

const SNAPSHOT_COUNT_LIMIT: u64 = 1 << 40;

impl MailboxStore {
    pub fn new(num_nodes: usize, m: usize, d: usize) -> Result<Self> {
        if m == 0 || d == 0 {
            return Err(ApanError::InvalidArgument(format!(
                "mailbox needs m >= 1 and d >= 1 (got m={m}, d={d})"
            )));
        }
        Ok(Self {
            m,
            d,
            boxes: vec![Mailbox::new(m, d); num_nodes],
        })
    }

    pub fn capacity(&self) -> usize {
        self.m
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn num_nodes(&self) -> usize {
        self.boxes.len()
    }

    pub fn get(&self, node: NodeId) -> Result<&Mailbox> {
        self.boxes.get(node).ok_or(ApanError::UnknownNode(node))
    }

    pub fn push(&mut self, node: NodeId, mail: &Mail) -> Result<()> {
        self.boxes
            .get_mut(node)
            .ok_or(ApanError::UnknownNode(node))?
            .push(mail)
    }

    pub fn read_matrix(&self, node: NodeId) -> Result<(Tensor, Vec<f64>)> {
        Ok(self.get(node)?.read_matrix())
    }

    /// Flat little-endian snapshot: `num_nodes, m, d` as u64, then per node a
    /// u64 slot count followed by `(timestamp, d values)` per mail in push
    /// order.
    pub fn write_snapshot<W: Write>(&self, mut w: W) -> Result<()> {
        for v in [self.boxes.len(), self.m, self.d] {
            w.write_all(&(v as u64).to_le_bytes())?;
        }
        for b in &self.boxes {
            w.write_all(&(self.m as u64).to_le_bytes())?;
            for mail in b.mails() {
                w.write_all(&mail.timestamp.to_le_bytes())?;
                for x in &mail.vector {
                    w.write_all(&x.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    /// Inverse of [`MailboxStore::write_snapshot`]. A node with fewer than
    /// `m` stored mails gets zero mails in its oldest slots.
    pub fn read_snapshot<R: Read>(mut r: R) -> Result<Self> {
        let num_nodes = read_u64(&mut r)?;
        let m = read_u64(&mut r)?;
        let d = read_u64(&mut r)?;
        if num_nodes > SNAPSHOT_COUNT_LIMIT || m > SNAPSHOT_COUNT_LIMIT || d > SNAPSHOT_COUNT_LIMIT {
            return Err(ApanError::Format("implausible snapshot header".into()));
        }
        let mut store = Self::new(num_nodes as usize, m as usize, d as usize)?;
        for node in 0..num_nodes as usize {
            let count = read_u64(&mut r)?;
            if count > m {
                return Err(ApanError::Format(format!(
                    "node {node} has {count} mails, capacity {m}"
                )));
            }
            for _ in 0..count {
                let timestamp = read_f64(&mut r)?;
                let vector = (0..d).map(|_| read_f64(&mut r)).collect::<Result<Vec<_>>>()?;
                store.push(node, &Mail { vector, timestamp })?;
            }
        }
        Ok(store)
    }
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(f64::from_le_bytes(buf))
}
