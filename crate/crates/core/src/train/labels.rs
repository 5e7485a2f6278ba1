use rand::SeedableRng;

use super::{roc_auc, Engine, Phase, TrainConfig};
use crate::error::{ApanError, Result};
use crate::events::{batches, DataSplit, EventLog};
use crate::model::{decode_edge, decode_node, EngineRng, ForwardCtx, Head, Model};
use crate::tensor::{Adam, AdamConfig, Tape, Tensor};

/// Frozen-encoder input for a node or edge head.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSample {
    pub event: usize,
    /// `z_src` for the node head; `z_src || e || z_dst` for the edge head.
    pub x: Vec<f64>,
    pub label: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadReport {
    pub train_auc: f64,
    /// `None` when the test range lacks one of the classes.
    pub test_auc: Option<f64>,
    pub train_samples: usize,
    pub test_samples: usize,
}

/// Replays the whole log with frozen parameters and records the embedding
/// input of every labeled event.
pub fn collect_label_samples(engine: &mut Engine, log: &EventLog, head: Head, batch_size: usize) -> Result<Vec<LabeledSample>> {
    if head == Head::Link {
        return Err(ApanError::InvalidArgument("the link head is trained by fit".into()));
    }
    if !log.events().iter().any(|e| e.label.is_some()) {
        return Err(ApanError::Degenerate("no labeled events".into()));
    }
    engine.reset()?;
    let mut out = Vec::new();
    for b in batches(0..log.len(), batch_size)? {
        let start = b.start;
        let outcome = engine.process_batch(log, b.clone(), Phase::Replay)?;
        let z = |n| {
            outcome
                .embeddings
                .iter()
                .find(|(id, _)| *id == n)
                .map(|(_, z)| z.as_slice())
                .expect("endpoint encoded in its batch")
        };
        for (k, ev) in log.events()[b].iter().enumerate() {
            let Some(label) = ev.label else { continue };
            let x = match head {
                Head::Node => z(ev.src).to_vec(),
                _ => [z(ev.src), &ev.edge_feat, z(ev.dst)].concat(),
            };
            out.push(LabeledSample {
                event: start + k,
                x,
                label,
            });
        }
    }
    engine.drain()?;
    Ok(out)
}

/// Trains only `head` by binary cross-entropy on fixed inputs.
#[allow(clippy::too_many_arguments)]
pub fn fit_label_head(
    model: &mut Model,
    head: Head,
    train: &[LabeledSample],
    test: &[LabeledSample],
    epochs: usize,
    batch_size: usize,
    lr: f64,
    seed: u64,
) -> Result<HeadReport> {
    let labels: Vec<bool> = train.iter().map(|s| s.label).collect();
    if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
        return Err(ApanError::Degenerate(
            "training labels are all one class; AUC is undefined".into(),
        ));
    }
    let ids = model.head_ids(head);
    let mut adam = Adam::new(AdamConfig {
        lr,
        ..AdamConfig::default()
    });
    let mut rng = EngineRng::seed_from_u64(seed);
    rng.set_stream(3);
    for _ in 0..epochs {
        for chunk in train.chunks(batch_size.max(1)) {
            let mut tape = Tape::new();
            let bound = model.bind(&mut tape);
            let mut ctx = ForwardCtx {
                training: true,
                dropout: model.config.dropout,
                rng: &mut rng,
            };
            let logits = head_logits(&mut tape, model, head, &bound, chunk, &mut ctx)?;
            let y: Vec<f64> = chunk.iter().map(|s| if s.label { 1.0 } else { 0.0 }).collect();
            let y_not: Vec<f64> = y.iter().map(|v| 1.0 - v).collect();
            let n = chunk.len();
            let yv = tape.leaf(Tensor::from_rows(n, 1, y)?);
            let nv = tape.leaf(Tensor::from_rows(n, 1, y_not)?);
            let lp = tape.log_sigmoid(logits);
            let flipped = tape.scale(logits, -1.0);
            let ln = tape.log_sigmoid(flipped);
            let a = tape.mul(lp, yv)?;
            let b = tape.mul(ln, nv)?;
            let s = tape.add(a, b)?;
            let m = tape.mean(s);
            let loss = tape.scale(m, -1.0);
            tape.backward(loss, &mut model.params)?;
            adam.step(&mut model.params, &ids)?;
            model.params.zero_grads();
        }
    }
    let train_auc = roc_auc(&score_samples(model, head, train)?, &labels)?;
    let test_labels: Vec<bool> = test.iter().map(|s| s.label).collect();
    let test_auc = roc_auc(&score_samples(model, head, test)?, &test_labels).ok();
    Ok(HeadReport {
        train_auc,
        test_auc,
        train_samples: train.len(),
        test_samples: test.len(),
    })
}

fn head_logits(
    tape: &mut Tape,
    model: &Model,
    head: Head,
    bound: &crate::model::BoundModel,
    samples: &[LabeledSample],
    ctx: &mut ForwardCtx<'_>,
) -> Result<crate::tensor::Var> {
    let c = &model.config;
    let n = samples.len();
    let width = match head {
        Head::Node => c.d,
        _ => 2 * c.d + c.d_e,
    };
    let mut data = Vec::with_capacity(n * width);
    for s in samples {
        if s.x.len() != width {
            return Err(ApanError::Dimension {
                expected: width,
                actual: s.x.len(),
            });
        }
        data.extend_from_slice(&s.x);
    }
    let x = Tensor::from_rows(n, width, data)?;
    match head {
        Head::Node => {
            let xv = tape.leaf(x);
            decode_node(tape, xv, &bound.node, ctx)
        }
        _ => {
            let cols = |lo: usize, hi: usize| {
                let d: Vec<f64> = (0..n).flat_map(|r| x.row(r)[lo..hi].to_vec()).collect();
                Tensor::from_rows(n, hi - lo, d)
            };
            let zi = tape.leaf(cols(0, c.d)?);
            let e = tape.leaf(cols(c.d, c.d + c.d_e)?);
            let zj = tape.leaf(cols(c.d + c.d_e, width)?);
            decode_edge(tape, zi, e, zj, &bound.edge, c, ctx)
        }
    }
}

/// AUC of `head` on `samples`; errors when one class is missing.
pub fn label_auc(model: &Model, head: Head, samples: &[LabeledSample]) -> Result<f64> {
    let labels: Vec<bool> = samples.iter().map(|s| s.label).collect();
    roc_auc(&score_samples(model, head, samples)?, &labels)
}

fn score_samples(model: &Model, head: Head, samples: &[LabeledSample]) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Ok(Vec::new());
    }
    let mut rng = EngineRng::seed_from_u64(0);
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let mut ctx = ForwardCtx {
        training: false,
        dropout: model.config.dropout,
        rng: &mut rng,
    };
    let logits = head_logits(&mut tape, model, head, &bound, samples, &mut ctx)?;
    Ok(tape.value(logits).data().to_vec())
}

/// Collects samples with the engine's frozen encoder, trains `head` on the
/// training range and reports AUC on the test range.
pub fn train_label_head(
    engine: &mut Engine,
    log: &EventLog,
    split: &DataSplit,
    head: Head,
    cfg: &TrainConfig,
) -> Result<HeadReport> {
    let samples = collect_label_samples(engine, log, head, cfg.batch_size)?;
    let train: Vec<LabeledSample> = samples.iter().filter(|s| split.train.contains(&s.event)).cloned().collect();
    let test: Vec<LabeledSample> = samples.iter().filter(|s| split.test.contains(&s.event)).cloned().collect();
    fit_label_head(
        &mut engine.model,
        head,
        &train,
        &test,
        cfg.max_epochs,
        cfg.batch_size,
        cfg.lr,
        cfg.seed,
    )
}
