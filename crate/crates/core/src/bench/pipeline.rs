use std::collections::{HashMap, HashSet, VecDeque};
use std::sync::{Arc, RwLock};
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Clock, MockGraphDB, PipelineStats, Scenario, WorkerKind};
use crate::error::Result;
use crate::events::{batches, AdjEntry, EventLog, NodeId, TemporalEvent};
use crate::model::{decode_link, encode_node, EngineRng, ForwardCtx, Model, ModelConfig, NodeStateStore};
use crate::propagator::{GraphState, JobEvent, PropagationConfig, PropagationJob};
use crate::synthetic::{periodic_log, SyntheticConfig};
use crate::tensor::{Tape, Tensor};
use crate::worker::{PropagationWorker, WorkerMode};

/// The scenario's generated interaction log.
pub fn bench_log(sc: &Scenario) -> Result<EventLog> {
    periodic_log(&SyntheticConfig {
        users: sc.users,
        items: sc.items,
        events: sc.events,
        d_e: sc.d_e,
        seed: sc.seed,
        ..SyntheticConfig::default()
    })
}

/// Randomly initialized parameters sized for the scenario.
pub fn bench_model(sc: &Scenario) -> Result<Model> {
    let cfg = ModelConfig {
        slots: sc.slots,
        heads: sc.heads,
        ..ModelConfig::for_edge_dim(sc.d_e)
    };
    Model::new(cfg, &mut EngineRng::seed_from_u64(sc.seed))
}

/// Output of one inference pass over a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct Served {
    /// Distinct endpoints in order of first appearance.
    pub embeddings: Vec<(NodeId, Vec<f64>)>,
    /// Link logit of every event.
    pub logits: Vec<f64>,
    /// Arithmetic cost, including reading each `m x d` input matrix.
    pub flops: u64,
}

/// Encodes every distinct endpoint of `events` once (dropout off) and scores
/// each event with the link decoder. `input(node)` yields the node's previous
/// embedding and its `m x d` mail matrix.
pub fn serve_batch<F>(model: &Model, events: &[TemporalEvent], mut input: F) -> Result<Served>
where
    F: FnMut(NodeId) -> Result<(Vec<f64>, Tensor)>,
{
    let mut index: HashMap<NodeId, usize> = HashMap::new();
    let mut nodes = Vec::new();
    for ev in events {
        for n in [ev.src, ev.dst] {
            index.entry(n).or_insert_with(|| {
                nodes.push(n);
                nodes.len() - 1
            });
        }
    }
    let mut rng = EngineRng::seed_from_u64(0);
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let mut ctx = ForwardCtx {
        training: false,
        dropout: model.config.dropout,
        rng: &mut rng,
    };
    let read_cost = (model.config.slots * model.config.d) as u64;
    let mut z_vars = Vec::with_capacity(nodes.len());
    for &n in &nodes {
        let (z_prev, mailbox) = input(n)?;
        z_vars.push(encode_node(&mut tape, &bound, &model.config, &z_prev, mailbox, &mut ctx)?.z);
    }
    let zmat = tape.concat_rows(&z_vars)?;
    let zs = tape.gather_rows(zmat, &events.iter().map(|e| index[&e.src]).collect::<Vec<_>>())?;
    let zd = tape.gather_rows(zmat, &events.iter().map(|e| index[&e.dst]).collect::<Vec<_>>())?;
    let logits = decode_link(&mut tape, zs, zd, &bound.link, &mut ctx)?;
    Ok(Served {
        logits: tape.value(logits).data().to_vec(),
        flops: tape.flops() + read_cost * nodes.len() as u64,
        embeddings: nodes
            .iter()
            .zip(&z_vars)
            .map(|(&n, &v)| (n, tape.value(v).data().to_vec()))
            .collect(),
    })
}

fn update_states(states: &mut NodeStateStore, events: &[TemporalEvent], served: &Served) -> Result<()> {
    let z: HashMap<NodeId, &Vec<f64>> = served.embeddings.iter().map(|(n, z)| (*n, z)).collect();
    for ev in events {
        states.set(ev.src, z[&ev.src], ev.timestamp)?;
        states.set(ev.dst, z[&ev.dst], ev.timestamp)?;
    }
    Ok(())
}

fn build_job(model: &Model, seq: u64, start: usize, events: &[TemporalEvent], served: &Served) -> PropagationJob {
    let z: HashMap<NodeId, &Vec<f64>> = served.embeddings.iter().map(|(n, z)| (*n, z)).collect();
    PropagationJob {
        seq,
        events: events
            .iter()
            .enumerate()
            .map(|(k, ev)| JobEvent {
                index: start + k,
                event: TemporalEvent {
                    edge_feat: model.mail_edge(&ev.edge_feat),
                    ..ev.clone()
                },
                z_src: z[&ev.src].clone(),
                z_dst: z[&ev.dst].clone(),
            })
            .collect(),
    }
}

fn stats_for(name: &str, sc: &Scenario) -> PipelineStats {
    PipelineStats {
        pipeline: name.into(),
        hops: sc.hops,
        fanout: sc.fanout,
        batch: sc.batch,
        ..PipelineStats::default()
    }
}

fn compute_ms(flops: u64, sc: &Scenario) -> f64 {
    flops as f64 * sc.ns_per_flop / 1e6
}

/// Breadth-first neighbor-list requests of one batch: level 0 is the
/// batch's distinct endpoints, level `h + 1` the distinct neighbors fetched
/// for level `h`. One request per node per level, `hops` levels queried.
pub fn sync_frontiers(db: &mut MockGraphDB, roots: &[NodeId], hops: usize, fanout: usize) -> SyncFetch {
    let mut levels = vec![roots.to_vec()];
    let mut fetched = Vec::with_capacity(hops);
    let mut wait_ms = 0.0;
    for h in 0..hops {
        let mut got: HashMap<NodeId, Vec<AdjEntry>> = HashMap::new();
        let mut next = Vec::new();
        let mut seen = HashSet::new();
        for &u in &levels[h] {
            let (entries, ms) = db.query(u, fanout, f64::INFINITY);
            wait_ms += ms;
            for e in &entries {
                if seen.insert(e.neighbor) {
                    next.push(e.neighbor);
                }
            }
            got.insert(u, entries);
        }
        fetched.push(got);
        levels.push(next);
    }
    SyncFetch {
        levels,
        fetched,
        wait_ms,
    }
}

/// Result of [`sync_frontiers`].
#[derive(Clone, Debug)]
pub struct SyncFetch {
    /// `hops + 1` node levels; the last is fetched by nobody.
    pub levels: Vec<Vec<NodeId>>,
    /// Per queried level, each node's neighbor entries.
    pub fetched: Vec<HashMap<NodeId, Vec<AdjEntry>>>,
    pub wait_ms: f64,
}

impl SyncFetch {
    pub fn queries(&self) -> usize {
        self.fetched.iter().map(HashMap::len).sum()
    }
}

/// Mails `z_w + e + r(u)` for each fetched entry `(u, e)` of `w`, where `r`
/// is the neighbor's representation one level down.
fn neighbor_mails(
    log: &EventLog,
    model: &Model,
    states: &NodeStateStore,
    z_w: &[f64],
    entries: &[AdjEntry],
    below: &HashMap<NodeId, Vec<f64>>,
    flops: &mut u64,
) -> Result<Vec<(f64, Vec<f64>)>> {
    let d = model.config.d;
    entries
        .iter()
        .map(|e| {
            let feat = model.mail_edge(&log.events()[e.event].edge_feat);
            let r = match below.get(&e.neighbor) {
                Some(r) => r.as_slice(),
                None => states.get(e.neighbor)?,
            };
            *flops += 2 * d as u64;
            let v = (0..d).map(|k| z_w[k] + feat[k] + r[k]).collect();
            Ok((e.timestamp, v))
        })
        .collect()
}

/// Query-then-infer baseline: every batch first fetches its endpoints'
/// temporal neighborhoods level by level, folds deeper levels into their
/// parents by mean aggregation, and encodes each endpoint over its most
/// recent `m` assembled neighbor mails.
pub fn run_sync(log: &EventLog, model: &Model, sc: &Scenario, capture: bool) -> Result<PipelineStats> {
    sc.validate()?;
    let (m, d) = (model.config.slots, model.config.d);
    let mut db = MockGraphDB::new(log.num_nodes(), sc.latency(), sc.seed)?;
    let mut states = NodeStateStore::new(log.num_nodes(), d);
    let mut stats = stats_for("sync", sc);
    for (k, range) in batches(0..log.len(), sc.batch)?.enumerate() {
        let started = Instant::now();
        let events = &log.events()[range.clone()];
        let mut roots = Vec::new();
        let mut seen = HashSet::new();
        for ev in events {
            for n in [ev.src, ev.dst] {
                if seen.insert(n) {
                    roots.push(n);
                }
            }
        }
        let fetch = sync_frontiers(&mut db, &roots, sc.hops, sc.fanout);
        if sc.clock == Clock::Wall {
            std::thread::sleep(Duration::from_secs_f64(fetch.wait_ms / 1000.0));
        }
        let mut assembly = 0u64;
        let mut below: HashMap<NodeId, Vec<f64>> = HashMap::new();
        for h in (1..fetch.fetched.len()).rev() {
            let mut reps = HashMap::new();
            for &u in &fetch.levels[h] {
                let z_u = states.get(u)?;
                let entries = &fetch.fetched[h][&u];
                let rep = if entries.is_empty() {
                    z_u.to_vec()
                } else {
                    let mails = neighbor_mails(log, model, &states, z_u, entries, &below, &mut assembly)?;
                    assembly += (mails.len() * d) as u64;
                    let mut mean = vec![0.0; d];
                    for (_, v) in &mails {
                        for (a, b) in mean.iter_mut().zip(v) {
                            *a += b;
                        }
                    }
                    mean.iter_mut().for_each(|a| *a /= mails.len() as f64);
                    mean
                };
                reps.insert(u, rep);
            }
            below = reps;
        }
        let mut matrices: HashMap<NodeId, Tensor> = HashMap::new();
        for &v in &roots {
            let z_v = states.get(v)?;
            let mut mails = match fetch.fetched.first() {
                Some(level) => neighbor_mails(log, model, &states, z_v, &level[&v], &below, &mut assembly)?,
                None => Vec::new(),
            };
            mails.sort_by(|a, b| a.0.total_cmp(&b.0));
            let keep = mails.len().saturating_sub(m);
            let mut data = vec![0.0; (m - (mails.len() - keep)) * d];
            for (_, v) in mails.drain(keep..) {
                data.extend(v);
            }
            matrices.insert(v, Tensor::from_rows(m, d, data)?);
        }
        let served = serve_batch(model, events, |n| {
            Ok((states.get(n)?.to_vec(), matrices.remove(&n).expect("root assembled")))
        })?;
        let latency = match sc.clock {
            Clock::Virtual => fetch.wait_ms + compute_ms(served.flops + assembly, sc),
            Clock::Wall => started.elapsed().as_secs_f64() * 1000.0,
        };
        update_states(&mut states, events, &served)?;
        for (i, ev) in events.iter().enumerate() {
            db.record(ev.src, ev.dst, ev.timestamp, range.start + i)?;
        }
        if k >= sc.warmup {
            stats.latencies_ms.push(latency);
            stats.path_db_ms += fetch.wait_ms;
            stats.events += events.len();
            stats.elapsed_ms += latency;
            stats.queries += fetch.queries() as u64;
            stats.batch_queries.push(fetch.queries() as u64);
            if capture {
                stats.embeddings.push(served.embeddings);
            }
        }
        stats.jobs_applied += 1;
    }
    Ok(stats)
}

struct Pending {
    job: PropagationJob,
    submitted: f64,
    done: Option<f64>,
}

/// Virtual-time model of the background worker: jobs run back to back in
/// sequence order, each taking the sampled latency of the neighbor-list
/// queries it issues plus its mail arithmetic. A job's mailbox updates become
/// visible at its completion time.
struct VirtualWorker {
    graph: GraphState,
    prop: PropagationConfig,
    queue: VecDeque<Pending>,
    free_at: f64,
    latency: super::LatencyModel,
    rng: ChaCha8Rng,
    ns_per_flop: f64,
    applied: u64,
    delivered: u64,
    queries: u64,
}

impl VirtualWorker {
    fn head_done(&mut self) -> Option<f64> {
        let d = self.graph.mailboxes.dim() as f64;
        let free_at = self.free_at;
        let head = self.queue.front_mut()?;
        if head.done.is_none() {
            let queries = self.graph.count_queries(&head.job, &self.prop);
            let wait: f64 = (0..queries).map(|_| self.latency.sample(&mut self.rng)).sum();
            let arithmetic = head.job.events.len() as f64 * 2.0 * d * self.ns_per_flop / 1e6;
            head.done = Some(free_at.max(head.submitted) + wait + arithmetic);
        }
        head.done
    }

    fn apply_head(&mut self) -> Result<f64> {
        let done = self.head_done().expect("non-empty queue");
        let head = self.queue.pop_front().expect("non-empty queue");
        let report = self.graph.apply_batch(&head.job, &self.prop)?;
        self.free_at = done;
        self.applied += 1;
        self.delivered += report.delivered.len() as u64;
        self.queries += report.queries as u64;
        Ok(done)
    }

    /// Applies every job finished by `now`.
    fn catch_up(&mut self, now: f64) -> Result<()> {
        while self.head_done().is_some_and(|t| t <= now) {
            self.apply_head()?;
        }
        Ok(())
    }
}

/// Mailbox pipeline: inference reads mailboxes only; propagation (including
/// every store query) runs behind it.
pub fn run_async(log: &EventLog, model: &Model, sc: &Scenario, capture: bool) -> Result<PipelineStats> {
    sc.validate()?;
    let prop = PropagationConfig {
        hops: sc.hops,
        fanout: sc.fanout,
        ..PropagationConfig::default()
    };
    prop.validate()?;
    match sc.clock {
        Clock::Virtual => run_async_virtual(log, model, sc, prop, capture),
        Clock::Wall => run_async_wall(log, model, sc, prop, capture),
    }
}

fn run_async_virtual(
    log: &EventLog,
    model: &Model,
    sc: &Scenario,
    prop: PropagationConfig,
    capture: bool,
) -> Result<PipelineStats> {
    let (m, d) = (model.config.slots, model.config.d);
    let mut worker = VirtualWorker {
        graph: GraphState::new(log.num_nodes(), m, d)?,
        prop,
        queue: VecDeque::new(),
        free_at: 0.0,
        latency: sc.latency(),
        rng: ChaCha8Rng::seed_from_u64(sc.seed),
        ns_per_flop: sc.ns_per_flop,
        applied: 0,
        delivered: 0,
        queries: 0,
    };
    let limit = match sc.worker {
        WorkerKind::Deterministic => 1,
        WorkerKind::Async => sc.capacity,
    };
    let mut states = NodeStateStore::new(log.num_nodes(), d);
    let mut stats = stats_for("async", sc);
    let mut now = 0.0;
    for (k, range) in batches(0..log.len(), sc.batch)?.enumerate() {
        let events = &log.events()[range.clone()];
        worker.catch_up(now)?;
        let lag = worker.queue.len() as u64;
        let batch_start = now;
        let served = serve_batch(model, events, |n| {
            Ok((states.get(n)?.to_vec(), worker.graph.mailboxes.read_matrix(n)?.0))
        })?;
        let latency = compute_ms(served.flops, sc);
        now += latency;
        let job = build_job(model, k as u64, range.start, events, &served);
        update_states(&mut states, events, &served)?;
        let mut blocked = 0.0;
        while worker.queue.len() >= limit {
            let done = worker.apply_head()?;
            blocked += (done - now).max(0.0);
            now = now.max(done);
        }
        worker.queue.push_back(Pending {
            job,
            submitted: now,
            done: None,
        });
        if sc.worker == WorkerKind::Deterministic {
            let done = worker.apply_head()?;
            blocked += (done - now).max(0.0);
            now = now.max(done);
        }
        if k >= sc.warmup {
            stats.latencies_ms.push(latency);
            stats.events += events.len();
            stats.elapsed_ms += now - batch_start;
            stats.blocked_ms += blocked;
            stats.max_lag = stats.max_lag.max(lag);
            if capture {
                stats.embeddings.push(served.embeddings);
            }
        }
    }
    while !worker.queue.is_empty() {
        worker.apply_head()?;
    }
    stats.jobs_applied = worker.applied;
    stats.mails_delivered = worker.delivered;
    stats.queries = worker.queries;
    Ok(stats)
}

fn run_async_wall(
    log: &EventLog,
    model: &Model,
    sc: &Scenario,
    prop: PropagationConfig,
    capture: bool,
) -> Result<PipelineStats> {
    let graph = Arc::new(RwLock::new(GraphState::new(log.num_nodes(), model.config.slots, model.config.d)?));
    let mode = match sc.worker {
        WorkerKind::Deterministic => WorkerMode::Deterministic,
        WorkerKind::Async => WorkerMode::Async { capacity: sc.capacity },
    };
    let delay = Duration::from_secs_f64(sc.mu_ms / 1000.0);
    let worker = PropagationWorker::spawn_with_delay(Arc::clone(&graph), prop, mode, delay);
    let mut states = NodeStateStore::new(log.num_nodes(), model.config.d);
    let mut stats = stats_for("async", sc);
    for (k, range) in batches(0..log.len(), sc.batch)?.enumerate() {
        let events = &log.events()[range.clone()];
        let lag = worker.lag();
        let started = Instant::now();
        let served = {
            let g = graph.read().unwrap();
            serve_batch(model, events, |n| Ok((states.get(n)?.to_vec(), g.mailboxes.read_matrix(n)?.0)))?
        };
        let latency = started.elapsed().as_secs_f64() * 1000.0;
        let job = build_job(model, k as u64, range.start, events, &served);
        update_states(&mut states, events, &served)?;
        let blocked = worker.submit(job)?;
        if k >= sc.warmup {
            stats.latencies_ms.push(latency);
            stats.events += events.len();
            stats.elapsed_ms += started.elapsed().as_secs_f64() * 1000.0;
            stats.blocked_ms += blocked.as_secs_f64() * 1000.0;
            stats.max_lag = stats.max_lag.max(lag);
            if capture {
                stats.embeddings.push(served.embeddings);
            }
        }
    }
    let counters = worker.shutdown()?;
    stats.jobs_applied = counters.jobs_applied;
    stats.mails_delivered = counters.mails_delivered;
    stats.queries = counters.queries;
    Ok(stats)
}
