//! Brute-force reference models shared by the integration suites.
#![allow(dead_code)]

use apan::events::{EventLog, TemporalEvent};
use apan::propagator::{GraphState, JobEvent, PropagationConfig, PropagationJob, RecipientRule};
use apan::model::{EngineRng, Model, ModelConfig};
use apan::synthetic::{periodic_log, SyntheticConfig};
use apan::tensor::gradcheck;
use apan::train::{forward_pairs, Engine, EngineConfig, LossKind, Propagation};
use rand::{Rng, SeedableRng};

/// Random multigraph log: up to `max_events` events over up to `max_nodes`
/// nodes, non-decreasing timestamps with frequent ties.
pub fn random_log<R: Rng>(rng: &mut R, max_events: usize, max_nodes: usize, d: usize) -> EventLog {
    let n = rng.random_range(2..=max_nodes);
    let len = rng.random_range(1..=max_events);
    let mut t = 0.0;
    let events = (0..len)
        .map(|_| {
            if rng.random_bool(0.7) {
                t += rng.random_range(0..3) as f64;
            }
            TemporalEvent {
                src: rng.random_range(0..n),
                dst: rng.random_range(0..n),
                edge_feat: (0..d).map(|_| rng.random_range(-1.0..1.0)).collect(),
                timestamp: t,
                label: None,
            }
        })
        .collect();
    EventLog::new(events, n, d, None).unwrap()
}

/// Propagation jobs for `log` in batches of `batch`, with random endpoint
/// embeddings standing in for encoder output.
pub fn random_jobs<R: Rng>(rng: &mut R, log: &EventLog, batch: usize) -> Vec<PropagationJob> {
    let d = log.d_e();
    log.events()
        .chunks(batch)
        .enumerate()
        .map(|(seq, chunk)| PropagationJob {
            seq: seq as u64,
            events: chunk
                .iter()
                .enumerate()
                .map(|(k, ev)| JobEvent {
                    index: seq * batch + k,
                    event: ev.clone(),
                    z_src: (0..d).map(|_| rng.random_range(-1.0..1.0)).collect(),
                    z_dst: (0..d).map(|_| rng.random_range(-1.0..1.0)).collect(),
                })
                .collect(),
        })
        .collect()
}

/// Mailboxes as full push histories and adjacency as the raw list of
/// recorded events; every query is answered by scanning.
#[derive(Clone, Debug)]
pub struct Oracle {
    pub m: usize,
    pub d: usize,
    pub pushes: Vec<Vec<(Vec<f64>, f64)>>,
    pub recorded: Vec<(usize, usize, f64)>,
}

impl Oracle {
    pub fn new(num_nodes: usize, m: usize, d: usize) -> Self {
        Self {
            m,
            d,
            pushes: vec![Vec::new(); num_nodes],
            recorded: Vec::new(),
        }
    }

    /// Last `m` pushes (zero mails at time 0 fill the front), stably sorted
    /// by timestamp.
    pub fn readout(&self, node: usize) -> Vec<(Vec<f64>, f64)> {
        let mut all: Vec<(Vec<f64>, f64)> = vec![(vec![0.0; self.d], 0.0); self.m];
        all.extend(self.pushes[node].iter().cloned());
        let mut last = all.split_off(all.len() - self.m);
        last.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        last
    }

    /// Every `(neighbor, time)` of `node` with time `< t`, most recent first;
    /// a self-loop lists the node twice.
    pub fn history_before(&self, node: usize, t: f64) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        for &(s, d, time) in &self.recorded {
            if time >= t {
                continue;
            }
            if s == node {
                out.push((d, time));
            }
            if d == node {
                out.push((s, time));
            }
        }
        out.reverse();
        out
    }

    pub fn recent(&self, node: usize, n: usize, t: f64) -> Vec<(usize, f64)> {
        let mut h = self.history_before(node, t);
        h.truncate(n);
        h
    }

    pub fn recipients(&self, ev: &TemporalEvent, cfg: &PropagationConfig) -> Vec<usize> {
        if cfg.hops == 0 {
            return Vec::new();
        }
        let expansions = match cfg.rule {
            RecipientRule::Layers => cfg.hops - 1,
            RecipientRule::Distance => cfg.hops,
        };
        let mut all = vec![ev.src, ev.dst];
        let mut frontier = all.clone();
        for _ in 0..expansions {
            let mut next = Vec::new();
            for &v in &frontier {
                for (u, _) in self.recent(v, cfg.fanout, ev.timestamp) {
                    next.push(u);
                }
            }
            next.sort_unstable();
            next.dedup();
            all.extend(&next);
            frontier = next;
        }
        all.sort_unstable();
        all.dedup();
        all
    }

    pub fn apply(&mut self, job: &PropagationJob, cfg: &PropagationConfig) {
        let mut inbox: Vec<Vec<usize>> = vec![Vec::new(); self.pushes.len()];
        let mut mails = Vec::new();
        for je in &job.events {
            let ev = &je.event;
            let v: Vec<f64> = (0..self.d).map(|k| je.z_src[k] + ev.edge_feat[k] + je.z_dst[k]).collect();
            for r in self.recipients(ev, cfg) {
                inbox[r].push(mails.len());
            }
            mails.push((v, ev.timestamp));
        }
        for (node, idx) in inbox.into_iter().enumerate() {
            if idx.is_empty() {
                continue;
            }
            let mut sum = vec![0.0; self.d];
            let mut t = f64::NEG_INFINITY;
            for &i in &idx {
                for (s, x) in sum.iter_mut().zip(&mails[i].0) {
                    *s += x;
                }
                t = t.max(mails[i].1);
            }
            if idx.len() > 1 {
                sum.iter_mut().for_each(|s| *s /= idx.len() as f64);
            }
            self.pushes[node].push((sum, t));
        }
        for je in &job.events {
            self.recorded.push((je.event.src, je.event.dst, je.event.timestamp));
        }
    }

    /// First difference from `state`, if any.
    pub fn diff(&self, state: &GraphState) -> Option<String> {
        for node in 0..self.pushes.len() {
            let (mat, stamps) = state.mailboxes.read_matrix(node).unwrap();
            let want = self.readout(node);
            for (r, (v, t)) in want.iter().enumerate() {
                if mat.row(r) != v.as_slice() || stamps[r] != *t {
                    return Some(format!(
                        "node {node} row {r}: engine {:?}@{} vs oracle {v:?}@{t}",
                        mat.row(r),
                        stamps[r]
                    ));
                }
            }
            let got = state.adjacency.recent_neighbors(node, usize::MAX, f64::INFINITY);
            let want = self.recent(node, usize::MAX, f64::INFINITY);
            if got != want {
                return Some(format!("node {node} adjacency: engine {got:?} vs oracle {want:?}"));
            }
        }
        None
    }
}

/// Runs `jobs` through both the engine state and the oracle, comparing after
/// every batch.
pub fn check_against_oracle(log: &EventLog, jobs: &[PropagationJob], m: usize, cfg: &PropagationConfig) -> Result<(), String> {
    let mut state = GraphState::new(log.num_nodes(), m, log.d_e()).unwrap();
    let mut oracle = Oracle::new(log.num_nodes(), m, log.d_e());
    for job in jobs {
        let report = state.apply_batch(job, cfg).map_err(|e| e.to_string())?;
        let mut seen = report.delivered.clone();
        seen.dedup();
        if seen.len() != report.delivered.len() {
            return Err(format!("batch {} pushed twice to one node", job.seq));
        }
        oracle.apply(job, cfg);
        if let Some(d) = oracle.diff(&state) {
            return Err(format!("batch {}: {d}", job.seq));
        }
    }
    Ok(())
}

/// Average precision as the mean, over positives, of the precision among all
/// items scoring at least as high.
pub fn brute_ap(scores: &[f64], labels: &[bool]) -> f64 {
    let pos = labels.iter().filter(|&&l| l).count() as f64;
    let mut total = 0.0;
    for (i, &s) in scores.iter().enumerate() {
        if !labels[i] {
            continue;
        }
        let (mut hit, mut all) = (0.0, 0.0);
        for (j, &o) in scores.iter().enumerate() {
            if o >= s {
                all += 1.0;
                if labels[j] {
                    hit += 1.0;
                }
            }
        }
        total += hit / all;
    }
    total / pos
}

/// Fraction of (positive, negative) pairs ranked correctly, ties counting half.
pub fn brute_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &a) in scores.iter().enumerate() {
        for (j, &b) in scores.iter().enumerate() {
            if labels[i] && !labels[j] {
                pairs += 1.0;
                if a > b {
                    wins += 1.0;
                } else if a == b {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

pub fn gradcheck_config() -> ModelConfig {
    ModelConfig {
        d: 8,
        d_e: 8,
        slots: 4,
        heads: 2,
        hidden: 16,
        ..ModelConfig::for_edge_dim(8)
    }
}

/// Max relative error over every parameter entry of the full link loss
/// after warming mailboxes with a few batches.
pub fn link_gradient_error(loss: LossKind, seed: u64) -> f64 {
    let log = periodic_log(&SyntheticConfig {
        d_e: 8,
        events: 120,
        seed,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let mut rng = EngineRng::seed_from_u64(seed);
    let mut model = Model::new(gradcheck_config(), &mut rng).unwrap();
    for id in model.params.ids().collect::<Vec<_>>() {
        for x in model.params.value_mut(id).data_mut() {
            *x += rng.random_range(-0.1..0.1);
        }
    }
    let cfg = EngineConfig { prop: Default::default(), loss, lr: 1e-4, seed };
    let mut engine = Engine::new(model, &log, cfg, Propagation::Inline).unwrap();
    engine.replay(&log, 0..100, 25).unwrap();
    let triples: Vec<_> = log.events()[100..110]
        .iter()
        .map(|e| (e.src, e.dst, 20 + (e.dst - 20 + 3) % 10))
        .collect();
    let graph = engine.graph().read().unwrap().clone();
    let states = engine.states().clone();
    let mut model = engine.model.clone();
    let fwd = forward_pairs(&model, &graph, &states, &triples, loss).unwrap();
    model.params.zero_grads();
    fwd.tape.backward(fwd.loss, &mut model.params).unwrap();
    let ids: Vec<_> = model.params.ids().collect();
    let probe = model.clone();
    let entries = gradcheck::compare(&mut model.params, &ids, 1e-5, |store| {
        let m = Model { params: store.clone(), ..probe.clone() };
        let f = forward_pairs(&m, &graph, &states, &triples, loss).unwrap();
        f.tape.value(f.loss).item().unwrap()
    });
    entries.iter().map(|e| e.relative_error(1e-6)).fold(0.0, f64::max)
}
