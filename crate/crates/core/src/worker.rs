//! Background propagation worker.
//!
//! A single consumer thread applies [`PropagationJob`]s to a shared
//! [`GraphState`] in sequence order. The producer (inference path) submits
//! jobs and is throttled by the number of in-flight jobs: in deterministic
//! mode it waits for each job to be applied, in async mode it blocks only
//! once `capacity` jobs are pending, which bounds mailbox staleness to
//! `capacity` batches.

use std::collections::VecDeque;
use std::sync::{Arc, Condvar, Mutex, RwLock};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crate::error::{ApanError, Result};
use crate::propagator::{GraphState, PropagationConfig, PropagationJob};

pub type SharedGraph = Arc<RwLock<GraphState>>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WorkerMode {
    /// Producer blocks until its job is applied (lag 0).
    Deterministic,
    /// Producer blocks only while `capacity` jobs are in flight.
    Async { capacity: usize },
}

impl WorkerMode {
    fn in_flight_limit(self) -> u64 {
        match self {
            WorkerMode::Deterministic => 1,
            WorkerMode::Async { capacity } => capacity.max(1) as u64,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct WorkerStats {
    pub jobs_submitted: u64,
    pub jobs_applied: u64,
    pub mails_delivered: u64,
    pub queries: u64,
    /// Largest `submitted - applied` observed right after a submit.
    pub max_lag: u64,
    pub producer_blocked: Duration,
}

#[derive(Default)]
struct Queue {
    jobs: VecDeque<PropagationJob>,
    closed: bool,
    failed: Option<String>,
    stats: WorkerStats,
}

struct Shared {
    queue: Mutex<Queue>,
    changed: Condvar,
}

pub struct PropagationWorker {
    shared: Arc<Shared>,
    graph: SharedGraph,
    mode: WorkerMode,
    handle: Option<JoinHandle<()>>,
}

impl PropagationWorker {
    pub fn spawn(graph: SharedGraph, cfg: PropagationConfig, mode: WorkerMode) -> Self {
        Self::spawn_with_delay(graph, cfg, mode, Duration::ZERO)
    }

    /// Like [`spawn`](Self::spawn), but the worker sleeps `query_delay` per
    /// neighbor-list query before applying each job, emulating a remote
    /// graph store.
    pub fn spawn_with_delay(graph: SharedGraph, cfg: PropagationConfig, mode: WorkerMode, query_delay: Duration) -> Self {
        let shared = Arc::new(Shared {
            queue: Mutex::new(Queue::default()),
            changed: Condvar::new(),
        });
        let handle = {
            let shared = Arc::clone(&shared);
            let graph = Arc::clone(&graph);
            std::thread::Builder::new()
                .name("apan-propagation".into())
                .spawn(move || run_worker(&shared, &graph, &cfg, query_delay))
                .expect("spawn propagation worker")
        };
        Self {
            shared,
            graph,
            mode,
            handle: Some(handle),
        }
    }

    pub fn graph(&self) -> &SharedGraph {
        &self.graph
    }

    pub fn mode(&self) -> WorkerMode {
        self.mode
    }

    /// Enqueues `job`; returns how long the producer was blocked.
    pub fn submit(&self, job: PropagationJob) -> Result<Duration> {
        let limit = self.mode.in_flight_limit();
        let mut q = self.shared.queue.lock().unwrap();
        if let Some(msg) = &q.failed {
            return Err(ApanError::Worker(msg.clone()));
        }
        let started = Instant::now();
        let mut blocked = Duration::ZERO;
        while q.stats.jobs_submitted - q.stats.jobs_applied >= limit && q.failed.is_none() {
            q = self.shared.changed.wait(q).unwrap();
            blocked = started.elapsed();
        }
        if let Some(msg) = &q.failed {
            return Err(ApanError::Worker(msg.clone()));
        }
        q.jobs.push_back(job);
        q.stats.jobs_submitted += 1;
        let lag = q.stats.jobs_submitted - q.stats.jobs_applied;
        q.stats.max_lag = q.stats.max_lag.max(lag);
        q.stats.producer_blocked += blocked;
        self.shared.changed.notify_all();
        if self.mode == WorkerMode::Deterministic {
            drop(q);
            self.drain()?;
        }
        Ok(blocked)
    }

    /// Batches submitted but not yet applied.
    pub fn lag(&self) -> u64 {
        let q = self.shared.queue.lock().unwrap();
        q.stats.jobs_submitted - q.stats.jobs_applied
    }

    pub fn stats(&self) -> WorkerStats {
        self.shared.queue.lock().unwrap().stats.clone()
    }

    /// Blocks until every submitted job has been applied.
    pub fn drain(&self) -> Result<()> {
        let mut q = self.shared.queue.lock().unwrap();
        while q.stats.jobs_applied < q.stats.jobs_submitted && q.failed.is_none() {
            q = self.shared.changed.wait(q).unwrap();
        }
        match &q.failed {
            Some(msg) => Err(ApanError::Worker(msg.clone())),
            None => Ok(()),
        }
    }

    /// Closes the queue, lets the worker drain pending jobs and joins it.
    pub fn shutdown(mut self) -> Result<WorkerStats> {
        self.close_and_join();
        let q = self.shared.queue.lock().unwrap();
        match &q.failed {
            Some(msg) => Err(ApanError::Worker(msg.clone())),
            None => Ok(q.stats.clone()),
        }
    }

    fn close_and_join(&mut self) {
        {
            let mut q = self.shared.queue.lock().unwrap();
            q.closed = true;
            self.shared.changed.notify_all();
        }
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

impl Drop for PropagationWorker {
    fn drop(&mut self) {
        self.close_and_join();
    }
}

fn run_worker(shared: &Shared, graph: &RwLock<GraphState>, cfg: &PropagationConfig, query_delay: Duration) {
    loop {
        let job = {
            let mut q = shared.queue.lock().unwrap();
            loop {
                if let Some(job) = q.jobs.pop_front() {
                    break job;
                }
                if q.closed {
                    return;
                }
                q = shared.changed.wait(q).unwrap();
            }
        };
        if !query_delay.is_zero() {
            let queries = graph.read().unwrap().count_queries(&job, cfg);
            std::thread::sleep(query_delay * queries as u32);
        }
        let outcome = graph.write().unwrap().apply_batch(&job, cfg);
        let mut q = shared.queue.lock().unwrap();
        match outcome {
            Ok(report) => {
                q.stats.jobs_applied += 1;
                q.stats.mails_delivered += report.delivered.len() as u64;
                q.stats.queries += report.queries as u64;
            }
            Err(e) => {
                q.failed = Some(e.to_string());
                q.jobs.clear();
                shared.changed.notify_all();
                return;
            }
        }
        shared.changed.notify_all();
    }
}
