use std::collections::HashMap;
use std::ops::Range;
use std::sync::{Arc, RwLock};
use std::time::Duration;

use rand::SeedableRng;

use super::{link_loss, LossKind, NegativePool};
use crate::error::{ApanError, Result};
use crate::events::{EventLog, NodeId, TemporalEvent};
use crate::model::{
    decode_link, encode_node, AttentionTrace, EngineRng, ForwardCtx, Head, Model, NodeStateStore,
};
use crate::propagator::{GraphState, JobEvent, PropagationConfig, PropagationJob};
use crate::tensor::{Adam, AdamConfig, ParamId, Tape, Tensor, Var};
use crate::worker::{PropagationWorker, SharedGraph, WorkerMode};

/// Where propagation jobs go once a batch has been scored.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Propagation {
    /// Applied on the calling thread before `process_batch` returns.
    Inline,
    Worker(WorkerMode),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    /// Score, backpropagate and take an optimizer step.
    Train,
    /// Score with dropout off; parameters untouched.
    Score,
    /// Encode endpoints and propagate only; no negatives, no scores.
    Replay,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoredPair {
    pub event: usize,
    pub src: NodeId,
    pub dst: NodeId,
    pub negative: NodeId,
    pub pos: f64,
    pub neg: f64,
}

#[derive(Clone, Debug, Default)]
pub struct BatchOutcome {
    pub loss: Option<f64>,
    pub pairs: Vec<ScoredPair>,
    /// Events without a usable negative.
    pub skipped: usize,
    pub encoder_evals: usize,
    /// Forward-pass operation count of the inference path.
    pub flops: u64,
    /// Time the producer waited on a full propagation queue.
    pub blocked: Duration,
    /// Every node encoded in the batch with its new embedding.
    pub embeddings: Vec<(NodeId, Vec<f64>)>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EngineConfig {
    pub prop: PropagationConfig,
    pub loss: LossKind,
    pub lr: f64,
    pub seed: u64,
}

/// Inference path plus propagation state for one event log.
pub struct Engine {
    pub model: Model,
    cfg: EngineConfig,
    num_nodes: usize,
    bipartite: bool,
    graph: SharedGraph,
    worker: Option<PropagationWorker>,
    states: NodeStateStore,
    pool: NegativePool,
    adam: Adam,
    trainable: Vec<ParamId>,
    rng: EngineRng,
    traces: HashMap<NodeId, AttentionTrace>,
    seq: u64,
    encoder_evals: u64,
}

impl Engine {
    pub fn new(model: Model, log: &EventLog, cfg: EngineConfig, propagation: Propagation) -> Result<Self> {
        cfg.prop.validate()?;
        if model.config.d_e != log.d_e() {
            return Err(ApanError::Dimension {
                expected: model.config.d_e,
                actual: log.d_e(),
            });
        }
        let num_nodes = log.num_nodes();
        let graph = Arc::new(RwLock::new(GraphState::new(
            num_nodes,
            model.config.slots,
            model.config.d,
        )?));
        let worker = match propagation {
            Propagation::Inline => None,
            Propagation::Worker(mode) => Some(PropagationWorker::spawn(Arc::clone(&graph), cfg.prop, mode)),
        };
        let trainable = match cfg.loss {
            LossKind::Mlp => model.trainable(Some(Head::Link)),
            LossKind::Dot => model.trainable(None),
        };
        let mut rng = EngineRng::seed_from_u64(cfg.seed);
        rng.set_stream(1);
        Ok(Self {
            states: NodeStateStore::new(num_nodes, model.config.d),
            adam: Adam::new(AdamConfig {
                lr: cfg.lr,
                ..AdamConfig::default()
            }),
            model,
            cfg,
            num_nodes,
            bipartite: log.is_bipartite(),
            graph,
            worker,
            pool: NegativePool::new(),
            trainable,
            rng,
            traces: HashMap::new(),
            seq: 0,
            encoder_evals: 0,
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn graph(&self) -> &SharedGraph {
        &self.graph
    }

    pub fn states(&self) -> &NodeStateStore {
        &self.states
    }

    pub fn pool(&self) -> &NegativePool {
        &self.pool
    }

    pub fn worker(&self) -> Option<&PropagationWorker> {
        self.worker.as_ref()
    }

    pub fn encoder_evals(&self) -> u64 {
        self.encoder_evals
    }

    pub fn rng_mut(&mut self) -> &mut EngineRng {
        &mut self.rng
    }

    pub fn set_rng(&mut self, rng: EngineRng) -> EngineRng {
        std::mem::replace(&mut self.rng, rng)
    }

    /// Empties mailboxes, adjacency, node states, the negative pool and the
    /// attention cache. Parameters and optimizer moments are kept.
    pub fn reset(&mut self) -> Result<()> {
        self.drain()?;
        *self.graph.write().unwrap() =
            GraphState::new(self.num_nodes, self.model.config.slots, self.model.config.d)?;
        self.states = NodeStateStore::new(self.num_nodes, self.model.config.d);
        self.pool.clear();
        self.traces.clear();
        self.seq = 0;
        Ok(())
    }

    /// Waits for every submitted propagation job.
    pub fn drain(&self) -> Result<()> {
        match &self.worker {
            Some(w) => w.drain(),
            None => Ok(()),
        }
    }

    /// Runs the inference path for `range` and hands the resulting job to the
    /// propagation path.
    pub fn process_batch(&mut self, log: &EventLog, range: Range<usize>, phase: Phase) -> Result<BatchOutcome> {
        let (mut outcome, job) = self.infer(log, range, phase)?;
        outcome.blocked = self.submit(job)?;
        Ok(outcome)
    }

    pub fn submit(&mut self, job: PropagationJob) -> Result<Duration> {
        match &self.worker {
            Some(w) => w.submit(job),
            None => {
                self.graph.write().unwrap().apply_batch(&job, &self.cfg.prop)?;
                Ok(Duration::ZERO)
            }
        }
    }

    /// Everything but propagation: returns the job the caller must submit or
    /// apply in sequence order.
    pub fn infer(&mut self, log: &EventLog, range: Range<usize>, phase: Phase) -> Result<(BatchOutcome, PropagationJob)> {
        if log.num_nodes() != self.num_nodes {
            return Err(ApanError::InvalidArgument(format!(
                "log has {} nodes, engine was built for {}",
                log.num_nodes(),
                self.num_nodes
            )));
        }
        let events = log
            .events()
            .get(range.clone())
            .ok_or_else(|| ApanError::InvalidArgument(format!("range {range:?} outside the log")))?;
        let training = phase == Phase::Train;
        let scoring = phase != Phase::Replay;

        let negatives: Vec<Option<NodeId>> = events
            .iter()
            .map(|ev| if scoring { self.pool.sample(&mut self.rng, ev.dst) } else { None })
            .collect();

        let mut index: HashMap<NodeId, usize> = HashMap::new();
        let mut nodes: Vec<(NodeId, f64)> = Vec::new();
        for (ev, neg) in events.iter().zip(&negatives) {
            for n in [Some(ev.src), Some(ev.dst), *neg].into_iter().flatten() {
                index.entry(n).or_insert_with(|| {
                    nodes.push((n, ev.timestamp));
                    nodes.len() - 1
                });
            }
        }
        let inputs: Vec<(Tensor, Vec<f64>)> = {
            let g = self.graph.read().unwrap();
            nodes
                .iter()
                .map(|&(n, _)| g.mailboxes.read_matrix(n))
                .collect::<Result<_>>()?
        };

        let mut tape = Tape::new();
        let bound = self.model.bind(&mut tape);
        let mut ctx = ForwardCtx {
            training,
            dropout: self.model.config.dropout,
            rng: &mut self.rng,
        };
        let mut z_vars = Vec::with_capacity(nodes.len());
        for (&(n, t), (mailbox, stamps)) in nodes.iter().zip(inputs) {
            let enc = encode_node(&mut tape, &bound, &self.model.config, self.states.get(n)?, mailbox, &mut ctx)?;
            let per_head = enc.weights.iter().map(|&w| tape.value(w).data().to_vec()).collect();
            self.traces.insert(
                n,
                AttentionTrace {
                    node: n,
                    t,
                    per_head,
                    mail_timestamps: stamps,
                },
            );
            z_vars.push(enc.z);
        }
        self.encoder_evals += nodes.len() as u64;

        let mut outcome = BatchOutcome {
            encoder_evals: nodes.len(),
            skipped: negatives.iter().filter(|n| n.is_none()).count(),
            ..BatchOutcome::default()
        };
        if !scoring {
            outcome.skipped = 0;
        }

        let scored: Vec<(usize, &TemporalEvent, NodeId)> = events
            .iter()
            .zip(&negatives)
            .enumerate()
            .filter_map(|(k, (ev, neg))| neg.map(|n| (range.start + k, ev, n)))
            .collect();
        if !scored.is_empty() {
            let zmat = tape.concat_rows(&z_vars)?;
            let rows = |f: &dyn Fn(&(usize, &TemporalEvent, NodeId)) -> NodeId| -> Vec<usize> {
                scored.iter().map(|p| index[&f(p)]).collect()
            };
            let zs = tape.gather_rows(zmat, &rows(&|p| p.1.src))?;
            let zd = tape.gather_rows(zmat, &rows(&|p| p.1.dst))?;
            let zn = tape.gather_rows(zmat, &rows(&|p| p.2))?;
            let (pos, neg) = match self.cfg.loss {
                LossKind::Mlp => (
                    decode_link(&mut tape, zs, zd, &bound.link, &mut ctx)?,
                    decode_link(&mut tape, zs, zn, &bound.link, &mut ctx)?,
                ),
                LossKind::Dot => (dot_rows(&mut tape, zs, zd)?, dot_rows(&mut tape, zs, zn)?),
            };
            outcome.flops = tape.flops();
            let loss = link_loss(&mut tape, pos, neg)?;
            outcome.loss = tape.value(loss).item();
            let (pv, nv) = (tape.value(pos).data(), tape.value(neg).data());
            outcome.pairs = scored
                .iter()
                .enumerate()
                .map(|(k, &(event, ev, negative))| ScoredPair {
                    event,
                    src: ev.src,
                    dst: ev.dst,
                    negative,
                    pos: pv[k],
                    neg: nv[k],
                })
                .collect();
            if training {
                tape.backward(loss, &mut self.model.params)?;
                self.adam.step(&mut self.model.params, &self.trainable)?;
            }
        } else {
            outcome.flops = tape.flops();
        }

        let z_vals: Vec<Vec<f64>> = z_vars.iter().map(|&v| tape.value(v).data().to_vec()).collect();
        let job = PropagationJob {
            seq: self.seq,
            events: events
                .iter()
                .enumerate()
                .map(|(k, ev)| JobEvent {
                    index: range.start + k,
                    event: TemporalEvent {
                        src: ev.src,
                        dst: ev.dst,
                        edge_feat: self.model.mail_edge(&ev.edge_feat),
                        timestamp: ev.timestamp,
                        label: ev.label,
                    },
                    z_src: z_vals[index[&ev.src]].clone(),
                    z_dst: z_vals[index[&ev.dst]].clone(),
                })
                .collect(),
        };
        self.seq += 1;

        for ev in events {
            self.states.set(ev.src, &z_vals[index[&ev.src]], ev.timestamp)?;
            self.states.set(ev.dst, &z_vals[index[&ev.dst]], ev.timestamp)?;
            if !self.bipartite {
                self.pool.insert(ev.src);
            }
            self.pool.insert(ev.dst);
        }
        outcome.embeddings = nodes.iter().map(|&(n, _)| n).zip(z_vals).collect();
        Ok((outcome, job))
    }

    /// Encodes `node` from the current state without touching it and caches
    /// the attention weights.
    pub fn probe(&mut self, node: NodeId, t: f64) -> Result<Vec<f64>> {
        let (mailbox, stamps) = self.graph.read().unwrap().mailboxes.read_matrix(node)?;
        let mut tape = Tape::new();
        let bound = self.model.bind(&mut tape);
        let mut ctx = ForwardCtx {
            training: false,
            dropout: self.model.config.dropout,
            rng: &mut self.rng,
        };
        let enc = encode_node(&mut tape, &bound, &self.model.config, self.states.get(node)?, mailbox, &mut ctx)?;
        self.traces.insert(
            node,
            AttentionTrace {
                node,
                t,
                per_head: enc.weights.iter().map(|&w| tape.value(w).data().to_vec()).collect(),
                mail_timestamps: stamps,
            },
        );
        Ok(tape.value(enc.z).data().to_vec())
    }

    pub fn trace(&self, node: NodeId) -> Result<&AttentionTrace> {
        self.traces.get(&node).ok_or(ApanError::NoCachedEncoding(node))
    }

    /// `(mail timestamp, head-averaged weight)` from the latest encoding of
    /// `node`, largest weight first.
    pub fn explain(&self, node: NodeId) -> Result<Vec<(f64, f64)>> {
        Ok(self.trace(node)?.ranked())
    }

    /// Replays `range` in batches without scoring.
    pub fn replay(&mut self, log: &EventLog, range: Range<usize>, batch_size: usize) -> Result<()> {
        for b in crate::events::batches(range, batch_size)? {
            self.process_batch(log, b, Phase::Replay)?;
        }
        Ok(())
    }
}

/// Row-wise inner products `r x d, r x d -> r x 1`.
pub fn dot_rows(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let p = tape.mul(a, b)?;
    Ok(tape.sum_last(p))
}

/// Forward pass of the link objective for explicit `(src, dst, negative)`
/// triples against a read-only state, dropout off.
pub struct PairForward {
    pub tape: Tape,
    pub loss: Var,
    pub pos: Var,
    pub neg: Var,
}

pub fn forward_pairs(
    model: &Model,
    graph: &GraphState,
    states: &NodeStateStore,
    triples: &[(NodeId, NodeId, NodeId)],
    loss: LossKind,
) -> Result<PairForward> {
    if triples.is_empty() {
        return Err(ApanError::Empty("forward_pairs"));
    }
    let mut index: HashMap<NodeId, usize> = HashMap::new();
    let mut nodes = Vec::new();
    for &(s, d, n) in triples {
        for v in [s, d, n] {
            index.entry(v).or_insert_with(|| {
                nodes.push(v);
                nodes.len() - 1
            });
        }
    }
    let mut rng = EngineRng::seed_from_u64(0);
    let mut ctx = ForwardCtx {
        training: false,
        dropout: model.config.dropout,
        rng: &mut rng,
    };
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let mut zs = Vec::with_capacity(nodes.len());
    for &v in &nodes {
        let (mailbox, _) = graph.mailboxes.read_matrix(v)?;
        zs.push(encode_node(&mut tape, &bound, &model.config, states.get(v)?, mailbox, &mut ctx)?.z);
    }
    let zmat = tape.concat_rows(&zs)?;
    let pick = |f: fn(&(NodeId, NodeId, NodeId)) -> NodeId| -> Vec<usize> {
        triples.iter().map(|t| index[&f(t)]).collect()
    };
    let a = tape.gather_rows(zmat, &pick(|t| t.0))?;
    let b = tape.gather_rows(zmat, &pick(|t| t.1))?;
    let c = tape.gather_rows(zmat, &pick(|t| t.2))?;
    let (pos, neg) = match loss {
        LossKind::Mlp => (
            decode_link(&mut tape, a, b, &bound.link, &mut ctx)?,
            decode_link(&mut tape, a, c, &bound.link, &mut ctx)?,
        ),
        LossKind::Dot => (dot_rows(&mut tape, a, b)?, dot_rows(&mut tape, a, c)?),
    };
    let loss = link_loss(&mut tape, pos, neg)?;
    Ok(PairForward { tape, loss, pos, neg })
}
