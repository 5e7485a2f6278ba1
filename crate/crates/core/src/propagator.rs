//! Mail generation, recipient sampling, reduction and mailbox updates.
//!
//! This is the deferred half of the pipeline: after the inference path has
//! produced embeddings for a batch, each event becomes a mail
//! `z_src + e + z_dst` delivered to the endpoints and their most recent
//! temporal neighbors. Every recipient receives at most one (mean-reduced)
//! mail per batch.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{ApanError, Result};
use crate::events::{NodeId, TemporalAdjacency, TemporalEvent};
use crate::mailbox::{Mail, MailboxStore};

/// How `hops` is interpreted when expanding the recipient frontier.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum RecipientRule {
    /// Union of frontiers `0..hops`: `hops = 2` reaches endpoints plus their
    /// 1-hop neighbors.
    #[default]
    Layers,
    /// Union of frontiers `0..=hops`: every node within distance `hops`.
    Distance,
}

impl std::str::FromStr for RecipientRule {
    type Err = ApanError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "layers" => Ok(Self::Layers),
            "distance" => Ok(Self::Distance),
            other => Err(ApanError::InvalidArgument(format!(
                "unknown recipient rule `{other}` (expected layers|distance)"
            ))),
        }
    }
}

impl std::fmt::Display for RecipientRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Layers => "layers",
            Self::Distance => "distance",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PropagationConfig {
    /// Frontier expansions. `0` disables delivery entirely (ablation only).
    pub hops: usize,
    /// Most-recent neighbors sampled per frontier node.
    pub fanout: usize,
    pub rule: RecipientRule,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        Self {
            hops: 2,
            fanout: 10,
            rule: RecipientRule::Layers,
        }
    }
}

impl PropagationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.fanout == 0 {
            return Err(ApanError::InvalidArgument("fanout must be >= 1".into()));
        }
        Ok(())
    }

    /// Number of neighbor expansions performed per event.
    pub fn expansions(&self) -> usize {
        match (self.hops, self.rule) {
            (0, _) => 0,
            (h, RecipientRule::Layers) => h - 1,
            (h, RecipientRule::Distance) => h,
        }
    }
}

/// One event of a [`PropagationJob`] with detached endpoint embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct JobEvent {
    /// Position of the event in its log.
    pub index: usize,
    /// `edge_feat` must already live in mail space (length `d`).
    pub event: TemporalEvent,
    pub z_src: Vec<f64>,
    pub z_dst: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PropagationJob {
    pub seq: u64,
    pub events: Vec<JobEvent>,
}

/// `z_i + e_ij + z_j`, stamped with `t`.
pub fn generate_mail(z_i: &[f64], e_ij: &[f64], z_j: &[f64], t: f64) -> Result<Mail> {
    let d = z_i.len();
    for v in [e_ij, z_j] {
        if v.len() != d {
            return Err(ApanError::Dimension {
                expected: d,
                actual: v.len(),
            });
        }
    }
    let vector = z_i
        .iter()
        .zip(e_ij)
        .zip(z_j)
        .map(|((a, b), c)| a + b + c)
        .collect();
    Ok(Mail::new(vector, t))
}

/// Mail passing along a sampled edge: identity.
pub fn pass(mail: Mail) -> Mail {
    mail
}

/// Elementwise mean of the vectors; timestamp is the latest input timestamp.
pub fn reduce<'a, I>(mails: I) -> Result<Mail>
where
    I: IntoIterator<Item = &'a Mail>,
{
    let mut iter = mails.into_iter();
    let first = iter.next().ok_or(ApanError::Empty("reduce"))?;
    let mut sum = first.vector.clone();
    let mut timestamp = first.timestamp;
    let mut count = 1usize;
    for mail in iter {
        if mail.vector.len() != sum.len() {
            return Err(ApanError::Dimension {
                expected: sum.len(),
                actual: mail.vector.len(),
            });
        }
        for (s, v) in sum.iter_mut().zip(&mail.vector) {
            *s += v;
        }
        timestamp = timestamp.max(mail.timestamp);
        count += 1;
    }
    if count > 1 {
        for s in &mut sum {
            *s /= count as f64;
        }
    }
    Ok(Mail::new(sum, timestamp))
}

/// Recipient set of `event` plus the number of neighbor-list queries issued.
pub fn recipients_counted(
    adj: &TemporalAdjacency,
    event: &TemporalEvent,
    cfg: &PropagationConfig,
) -> (BTreeSet<NodeId>, usize) {
    let mut out = BTreeSet::new();
    if cfg.hops == 0 {
        return (out, 0);
    }
    let mut frontier: BTreeSet<NodeId> = [event.src, event.dst].into_iter().collect();
    out.extend(frontier.iter().copied());
    let mut queries = 0;
    for _ in 0..cfg.expansions() {
        let mut next = BTreeSet::new();
        for &v in &frontier {
            queries += 1;
            next.extend(
                adj.recent_entries(v, cfg.fanout, event.timestamp)
                    .map(|e| e.neighbor),
            );
        }
        out.extend(next.iter().copied());
        frontier = next;
    }
    (out, queries)
}

/// Nodes whose mailbox receives the mail of `event`.
pub fn recipients(
    adj: &TemporalAdjacency,
    event: &TemporalEvent,
    cfg: &PropagationConfig,
) -> BTreeSet<NodeId> {
    recipients_counted(adj, event, cfg).0
}

/// Outcome of one [`GraphState::apply_batch`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BatchReport {
    /// Nodes that received a mail, ascending. Each appears once.
    pub delivered: Vec<NodeId>,
    /// Neighbor-list queries issued while sampling recipients.
    pub queries: usize,
}

/// Everything the propagation path mutates.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphState {
    pub mailboxes: MailboxStore,
    pub adjacency: TemporalAdjacency,
    next_seq: u64,
}

impl GraphState {
    pub fn new(num_nodes: usize, m: usize, d: usize) -> Result<Self> {
        Ok(Self {
            mailboxes: MailboxStore::new(num_nodes, m, d)?,
            adjacency: TemporalAdjacency::new(num_nodes),
            next_seq: 0,
        })
    }

    /// Sequence number the next job must carry.
    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    fn validate(&self, job: &PropagationJob) -> Result<()> {
        if job.seq != self.next_seq {
            return Err(ApanError::Ordering {
                expected: self.next_seq,
                actual: job.seq,
            });
        }
        let n = self.mailboxes.num_nodes();
        let d = self.mailboxes.dim();
        let mut last_seen: BTreeMap<NodeId, f64> = BTreeMap::new();
        for je in &job.events {
            let ev = &je.event;
            for node in [ev.src, ev.dst] {
                if node >= n {
                    return Err(ApanError::UnknownNode(node));
                }
                let prior = last_seen.get(&node).copied().or_else(|| {
                    self.adjacency.history(node).last().map(|e| e.timestamp)
                });
                if prior.is_some_and(|p| p > ev.timestamp) {
                    return Err(ApanError::InvalidArgument(format!(
                        "event {} at t={} is older than node {node}'s history",
                        je.index, ev.timestamp
                    )));
                }
                last_seen.insert(node, ev.timestamp);
            }
            for v in [&je.z_src, &ev.edge_feat, &je.z_dst] {
                if v.len() != d {
                    return Err(ApanError::Dimension {
                        expected: d,
                        actual: v.len(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Neighbor-list queries [`apply_batch`](Self::apply_batch) would issue
    /// for `job` against the current adjacency.
    pub fn count_queries(&self, job: &PropagationJob, cfg: &PropagationConfig) -> usize {
        job.events
            .iter()
            .map(|je| recipients_counted(&self.adjacency, &je.event, cfg).1)
            .sum()
    }

    /// Applies one batch: mails for every event, one reduced mail per
    /// recipient, then the batch's events enter the adjacency index. Nothing
    /// is mutated if the job is rejected.
    pub fn apply_batch(&mut self, job: &PropagationJob, cfg: &PropagationConfig) -> Result<BatchReport> {
        self.validate(job)?;
        let mut mails = Vec::with_capacity(job.events.len());
        let mut inbox: BTreeMap<NodeId, Vec<usize>> = BTreeMap::new();
        let mut queries = 0;
        for je in &job.events {
            let ev = &je.event;
            let mail = pass(generate_mail(&je.z_src, &ev.edge_feat, &je.z_dst, ev.timestamp)?);
            let (to, q) = recipients_counted(&self.adjacency, ev, cfg);
            queries += q;
            for r in to {
                inbox.entry(r).or_default().push(mails.len());
            }
            mails.push(mail);
        }
        let mut delivered = Vec::with_capacity(inbox.len());
        for (node, idx) in inbox {
            let merged = reduce(idx.iter().map(|&i| &mails[i]))?;
            self.mailboxes.push(node, &merged)?;
            delivered.push(node);
        }
        for je in &job.events {
            let ev = &je.event;
            self.adjacency.record(ev.src, ev.dst, ev.timestamp, je.index)?;
        }
        self.next_seq += 1;
        Ok(BatchReport { delivered, queries })
    }
}
