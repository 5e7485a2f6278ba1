//! Inference-latency comparison between a query-then-infer pipeline and the
//! mailbox pipeline, over a graph store with modeled per-query latency.

mod pipeline;
mod scenario;

pub use pipeline::{bench_log, bench_model, run_async, run_sync, serve_batch, sync_frontiers, Served, SyncFetch};
pub use scenario::{Clock, Scenario, WorkerKind};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};

use crate::error::{ApanError, Result};
use crate::events::{AdjEntry, NodeId, TemporalAdjacency};

/// Per-query latency of the mock store, in milliseconds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LatencyModel {
    Fixed { mu_ms: f64 },
    /// `mu_ms * exp(s * N(0, 1))`: median `mu_ms`, log-scale spread `s`.
    LogNormal { mu_ms: f64, s: f64 },
}

impl LatencyModel {
    pub fn validate(&self) -> Result<()> {
        let (mu, s) = match *self {
            LatencyModel::Fixed { mu_ms } => (mu_ms, 0.0),
            LatencyModel::LogNormal { mu_ms, s } => (mu_ms, s),
        };
        if !(mu >= 0.0 && mu.is_finite() && s >= 0.0 && s.is_finite()) {
            return Err(ApanError::InvalidArgument(format!("bad latency model {self:?}")));
        }
        Ok(())
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            LatencyModel::Fixed { mu_ms } => mu_ms,
            LatencyModel::LogNormal { mu_ms: 0.0, .. } => 0.0,
            LatencyModel::LogNormal { mu_ms, s } => LogNormal::new(mu_ms.ln(), s)
                .expect("validated parameters")
                .sample(rng),
        }
    }
}

/// Temporal adjacency behind a latency model. Answers are exactly those of
/// the wrapped index; every neighbor-list query is charged a latency sample.
#[derive(Clone, Debug)]
pub struct MockGraphDB {
    adjacency: TemporalAdjacency,
    latency: LatencyModel,
    rng: ChaCha8Rng,
    queries: u64,
    charged_ms: f64,
}

impl MockGraphDB {
    pub fn new(num_nodes: usize, latency: LatencyModel, seed: u64) -> Result<Self> {
        latency.validate()?;
        Ok(Self {
            adjacency: TemporalAdjacency::new(num_nodes),
            latency,
            rng: ChaCha8Rng::seed_from_u64(seed),
            queries: 0,
            charged_ms: 0.0,
        })
    }

    /// Up to `n` most recent entries of `node` before `t`, most recent first,
    /// plus the simulated latency of the round trip.
    pub fn query(&mut self, node: NodeId, n: usize, t: f64) -> (Vec<AdjEntry>, f64) {
        let out = self.adjacency.recent_entries(node, n, t).cloned().collect();
        let ms = self.charge();
        (out, ms)
    }

    /// Draws and accounts one query latency.
    pub fn charge(&mut self) -> f64 {
        let ms = self.latency.sample(&mut self.rng);
        self.queries += 1;
        self.charged_ms += ms;
        ms
    }

    pub fn record(&mut self, src: NodeId, dst: NodeId, t: f64, event: usize) -> Result<()> {
        self.adjacency.record(src, dst, t, event)
    }

    pub fn adjacency(&self) -> &TemporalAdjacency {
        &self.adjacency
    }

    pub fn queries(&self) -> u64 {
        self.queries
    }

    pub fn charged_ms(&self) -> f64 {
        self.charged_ms
    }
}

/// Nearest-rank percentile: the smallest sample with at least `p`% of the
/// samples at or below it. `NaN` on an empty sample.
pub fn percentile(samples: &[f64], p: f64) -> f64 {
    if samples.is_empty() {
        return f64::NAN;
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = (p * sorted.len() as f64 / 100.0).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PipelineStats {
    pub pipeline: String,
    pub hops: usize,
    pub fanout: usize,
    pub batch: usize,
    /// Inference-path latency per measured batch.
    pub latencies_ms: Vec<f64>,
    /// Simulated store waits that landed on the inference path.
    pub path_db_ms: f64,
    pub events: usize,
    /// Producer time for the measured batches, including blocking.
    pub elapsed_ms: f64,
    pub max_lag: u64,
    pub mails_delivered: u64,
    pub queries: u64,
    /// Store queries issued by each measured batch.
    pub batch_queries: Vec<u64>,
    pub jobs_applied: u64,
    pub blocked_ms: f64,
    /// Per batch, `(node, embedding)` for every encoded node when capture
    /// was requested.
    pub embeddings: Vec<Vec<(NodeId, Vec<f64>)>>,
}

impl PipelineStats {
    pub fn p50(&self) -> f64 {
        percentile(&self.latencies_ms, 50.0)
    }

    pub fn p95(&self) -> f64 {
        percentile(&self.latencies_ms, 95.0)
    }

    pub fn p99(&self) -> f64 {
        percentile(&self.latencies_ms, 99.0)
    }

    pub fn events_per_s(&self) -> f64 {
        if self.elapsed_ms > 0.0 {
            self.events as f64 / (self.elapsed_ms / 1000.0)
        } else {
            f64::NAN
        }
    }
}

pub const REPORT_HEADER: &str = "pipeline,hops,fanout,batch,p50_ms,p95_ms,p99_ms,events_per_s,lag_batches";
pub const WORKER_HEADER: &str = "pipeline,hops,jobs_applied,lag_batches,mails_delivered,queries,blocked_ms";

/// Latency table, one row per run in the given order.
pub fn report_csv(runs: &[PipelineStats]) -> String {
    let mut out = format!("{REPORT_HEADER}\n");
    for r in runs {
        out.push_str(&format!(
            "{},{},{},{},{:.6},{:.6},{:.6},{:.3},{}\n",
            r.pipeline,
            r.hops,
            r.fanout,
            r.batch,
            r.p50(),
            r.p95(),
            r.p99(),
            r.events_per_s(),
            r.max_lag
        ));
    }
    out
}

/// Propagation counters, one row per run.
pub fn worker_csv(runs: &[PipelineStats]) -> String {
    let mut out = format!("{WORKER_HEADER}\n");
    for r in runs {
        out.push_str(&format!(
            "{},{},{},{},{},{},{:.6}\n",
            r.pipeline, r.hops, r.jobs_applied, r.max_lag, r.mails_delivered, r.queries, r.blocked_ms
        ));
    }
    out
}

/// Fixed-width rendering of [`report_csv`] for terminals.
pub fn text_table(runs: &[PipelineStats]) -> String {
    let mut out = format!(
        "{:<8} {:>4} {:>6} {:>6} {:>12} {:>12} {:>12} {:>12} {:>4}\n",
        "pipeline", "hops", "fanout", "batch", "p50_ms", "p95_ms", "p99_ms", "events/s", "lag"
    );
    for r in runs {
        out.push_str(&format!(
            "{:<8} {:>4} {:>6} {:>6} {:>12.3} {:>12.3} {:>12.3} {:>12.1} {:>4}\n",
            r.pipeline,
            r.hops,
            r.fanout,
            r.batch,
            r.p50(),
            r.p95(),
            r.p99(),
            r.events_per_s(),
            r.max_lag
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank_examples() {
        let s = [15.0, 20.0, 35.0, 40.0, 50.0];
        assert_eq!(percentile(&s, 30.0), 20.0);
        assert_eq!(percentile(&s, 40.0), 20.0);
        assert_eq!(percentile(&s, 50.0), 35.0);
        assert_eq!(percentile(&s, 100.0), 50.0);
        assert_eq!(percentile(&s, 0.0), 15.0);
        assert!(percentile(&[], 50.0).is_nan());
    }

    #[test]
    fn empty_report_is_header_only() {
        assert_eq!(report_csv(&[]), format!("{REPORT_HEADER}\n"));
        assert_eq!(worker_csv(&[]).lines().count(), 1);
    }

    #[test]
    fn report_rows_keep_order() {
        let a = PipelineStats {
            pipeline: "sync".into(),
            hops: 2,
            latencies_ms: vec![1.0, 2.0],
            ..Default::default()
        };
        let b = PipelineStats {
            pipeline: "async".into(),
            ..a.clone()
        };
        let csv = report_csv(&[a, b]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("sync,2,"));
        assert!(lines[2].starts_with("async,2,"));
        assert_eq!(lines[1].split(',').count(), 9);
    }

    #[test]
    fn store_answers_match_index() {
        let mut db = MockGraphDB::new(4, LatencyModel::Fixed { mu_ms: 2.0 }, 0).unwrap();
        db.record(0, 1, 1.0, 0).unwrap();
        db.record(0, 2, 2.0, 1).unwrap();
        let (got, ms) = db.query(0, 10, 3.0);
        let want: Vec<AdjEntry> = db.adjacency().recent_entries(0, 10, 3.0).cloned().collect();
        assert_eq!(got, want);
        assert_eq!(ms, 2.0);
        assert_eq!(db.queries(), 1);
    }

    #[test]
    fn lognormal_median_is_mu() {
        let mut db = MockGraphDB::new(1, LatencyModel::LogNormal { mu_ms: 2.0, s: 0.5 }, 3).unwrap();
        let samples: Vec<f64> = (0..20_001).map(|_| db.charge()).collect();
        assert!((percentile(&samples, 50.0) - 2.0).abs() < 0.05);
        assert!(samples.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn negative_latency_is_rejected() {
        assert!(MockGraphDB::new(1, LatencyModel::Fixed { mu_ms: -1.0 }, 0).is_err());
    }
}
