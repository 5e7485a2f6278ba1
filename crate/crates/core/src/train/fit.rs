use std::fmt::Write as _;
use std::ops::Range;
use std::time::Instant;

use rand::SeedableRng;

use super::{pair_loss, Engine, Metrics, Phase, Propagation, ScoredPair, TrainConfig};
use crate::error::Result;
use crate::events::{batches, split_chronological, DataSplit, EventLog};
use crate::model::{EngineRng, Model};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl SplitName {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::Val => "val",
            Self::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    /// Pair-weighted mean loss.
    pub loss: f64,
    pub metrics: Option<Metrics>,
    pub pairs: usize,
    pub skipped: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub loss: f64,
    pub metrics: Metrics,
    pub pairs: usize,
    pub skipped: usize,
    /// Pairs whose event touches a node never seen in training.
    pub inductive: Option<Metrics>,
    pub inductive_pairs: usize,
}

fn summarize(pairs: &[ScoredPair]) -> Result<(f64, Metrics)> {
    let pos: Vec<f64> = pairs.iter().map(|p| p.pos).collect();
    let neg: Vec<f64> = pairs.iter().map(|p| p.neg).collect();
    let loss = pairs.iter().map(|p| pair_loss(p.pos, p.neg)).sum::<f64>() / pairs.len() as f64;
    Ok((loss, Metrics::of_pairs(&pos, &neg)?))
}

/// One chronological pass over `range` with parameter updates. The caller
/// resets the engine beforehand.
pub fn train_epoch(engine: &mut Engine, log: &EventLog, range: Range<usize>, batch_size: usize) -> Result<EpochStats> {
    let mut pairs = Vec::new();
    let mut skipped = 0;
    for b in batches(range, batch_size)? {
        let out = engine.process_batch(log, b, Phase::Train)?;
        skipped += out.skipped;
        pairs.extend(out.pairs);
    }
    if pairs.is_empty() {
        return Ok(EpochStats {
            loss: f64::NAN,
            metrics: None,
            pairs: 0,
            skipped,
        });
    }
    let (loss, metrics) = summarize(&pairs)?;
    Ok(EpochStats {
        loss,
        metrics: Some(metrics),
        pairs: pairs.len(),
        skipped,
    })
}

fn eval_rng(seed: u64) -> EngineRng {
    let mut rng = EngineRng::seed_from_u64(seed);
    rng.set_stream(2);
    rng
}

/// Resets the engine, replays everything before `target` without updates,
/// then scores `target` with dropout off. Negatives come from a fixed
/// per-seed stream so repeated evaluations see the same pairs.
pub fn evaluate(
    engine: &mut Engine,
    log: &EventLog,
    split: &DataSplit,
    target: SplitName,
    batch_size: usize,
) -> Result<EvalReport> {
    let (warm, range) = match target {
        SplitName::Train => (0..0, split.train.clone()),
        SplitName::Val => (split.train.clone(), split.val.clone()),
        SplitName::Test => (split.train.start..split.val.end, split.test.clone()),
    };
    engine.reset()?;
    let saved = engine.set_rng(eval_rng(engine.config().seed));
    let result = (|| {
        engine.replay(log, warm, batch_size)?;
        let mut pairs = Vec::new();
        let mut skipped = 0;
        for b in batches(range, batch_size)? {
            let out = engine.process_batch(log, b, Phase::Score)?;
            skipped += out.skipped;
            pairs.extend(out.pairs);
        }
        engine.drain()?;
        Ok::<_, crate::error::ApanError>((pairs, skipped))
    })();
    engine.set_rng(saved);
    let (pairs, skipped) = result?;
    if pairs.is_empty() {
        return Err(crate::error::ApanError::Empty("evaluation pairs"));
    }
    let (loss, metrics) = summarize(&pairs)?;
    let unseen: Vec<ScoredPair> = pairs
        .iter()
        .filter(|p| !split.seen_nodes.contains(&p.src) || !split.seen_nodes.contains(&p.dst))
        .cloned()
        .collect();
    let inductive = if unseen.is_empty() {
        None
    } else {
        Some(summarize(&unseen)?.1)
    };
    Ok(EvalReport {
        loss,
        metrics,
        pairs: pairs.len(),
        skipped,
        inductive,
        inductive_pairs: unseen.len(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Stops once `patience` consecutive epochs fail to improve the best metric
/// (a patience of zero stops at the first such epoch).
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<f64>,
    best_epoch: usize,
    since: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            best_epoch: 0,
            since: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, metric: f64) -> StopDecision {
        if self.best.is_none_or(|b| metric > b) {
            self.best = Some(metric);
            self.best_epoch = epoch;
            self.since = 0;
            return StopDecision::Improved;
        }
        self.since += 1;
        if self.since >= self.patience.max(1) {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    pub split: SplitName,
    pub loss: f64,
    pub metrics: Option<Metrics>,
    pub seconds: f64,
}

pub const METRICS_HEADER: &str = "epoch,split,loss,ap,accuracy,auc,seconds";

pub fn write_metrics_csv(rows: &[EpochRow]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in rows {
        let (ap, acc, auc) = match r.metrics {
            Some(m) => (m.ap, m.accuracy, m.auc),
            None => (f64::NAN, f64::NAN, f64::NAN),
        };
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{:.3}",
            r.epoch,
            r.split.as_str(),
            r.loss,
            ap,
            acc,
            auc,
            r.seconds
        );
    }
    s
}

pub struct FitReport {
    /// Model with the best validation AP.
    pub model: Model,
    pub best_epoch: usize,
    pub best_val: EvalReport,
    pub test: EvalReport,
    pub rows: Vec<EpochRow>,
    pub epochs_run: usize,
    pub split: DataSplit,
}

/// Trains with per-epoch state reset and early stopping on validation AP,
/// then scores the test range with the best parameters.
pub fn fit(log: &EventLog, cfg: &TrainConfig) -> Result<FitReport> {
    cfg.validate()?;
    let split = split_chronological(log, cfg.train_frac, cfg.val_frac)?;
    let mut init_rng = EngineRng::seed_from_u64(cfg.seed);
    let model = Model::new(cfg.model_config(log.d_e()), &mut init_rng)?;
    fit_model(log, cfg, model, split)
}

/// [`fit`] starting from given parameters and split.
pub fn fit_model(log: &EventLog, cfg: &TrainConfig, model: Model, split: DataSplit) -> Result<FitReport> {
    let mut engine = Engine::new(model, log, cfg.engine_config(), Propagation::Inline)?;
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut rows = Vec::new();
    let mut best: Option<(Model, EvalReport)> = None;
    let mut epochs_run = 0;
    for epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        engine.reset()?;
        let stats = train_epoch(&mut engine, log, split.train.clone(), cfg.batch_size)?;
        rows.push(EpochRow {
            epoch,
            split: SplitName::Train,
            loss: stats.loss,
            metrics: stats.metrics,
            seconds: started.elapsed().as_secs_f64(),
        });
        let started = Instant::now();
        let val = evaluate(&mut engine, log, &split, SplitName::Val, cfg.batch_size)?;
        rows.push(EpochRow {
            epoch,
            split: SplitName::Val,
            loss: val.loss,
            metrics: Some(val.metrics),
            seconds: started.elapsed().as_secs_f64(),
        });
        epochs_run = epoch;
        match stopper.observe(epoch, val.metrics.ap) {
            StopDecision::Improved => best = Some((engine.model.clone(), val)),
            StopDecision::Continue => {}
            StopDecision::Stop => break,
        }
    }
    let (best_model, best_val) = best.expect("at least one epoch ran");
    engine.model = best_model.clone();
    let started = Instant::now();
    let test = evaluate(&mut engine, log, &split, SplitName::Test, cfg.batch_size)?;
    rows.push(EpochRow {
        epoch: stopper.best_epoch(),
        split: SplitName::Test,
        loss: test.loss,
        metrics: Some(test.metrics),
        seconds: started.elapsed().as_secs_f64(),
    });
    Ok(FitReport {
        model: best_model,
        best_epoch: stopper.best_epoch(),
        best_val,
        test,
        rows,
        epochs_run,
        split,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patience_zero_stops_at_first_plateau() {
        let mut s = EarlyStopping::new(0);
        assert_eq!(s.observe(1, 0.5), StopDecision::Improved);
        assert_eq!(s.observe(2, 0.6), StopDecision::Improved);
        assert_eq!(s.observe(3, 0.6), StopDecision::Stop);
        assert_eq!(s.best_epoch(), 2);
    }

    #[test]
    fn improving_metric_never_stops() {
        let mut s = EarlyStopping::new(5);
        for e in 1..=100 {
            assert_eq!(s.observe(e, e as f64), StopDecision::Improved);
        }
    }

    #[test]
    fn patience_five() {
        let mut s = EarlyStopping::new(5);
        s.observe(1, 0.9);
        for e in 2..6 {
            assert_eq!(s.observe(e, 0.8), StopDecision::Continue);
        }
        assert_eq!(s.observe(6, 0.8), StopDecision::Stop);
    }

    #[test]
    fn metrics_csv_layout() {
        assert_eq!(write_metrics_csv(&[]), format!("{METRICS_HEADER}\n"));
        let row = EpochRow {
            epoch: 1,
            split: SplitName::Val,
            loss: 0.5,
            metrics: Some(Metrics { ap: 0.9, auc: 0.8, accuracy: 0.7 }),
            seconds: 1.25,
        };
        let csv = write_metrics_csv(&[row]);
        assert_eq!(csv.lines().nth(1).unwrap(), "1,val,0.5,0.9,0.7,0.8,1.250");
    }
}
