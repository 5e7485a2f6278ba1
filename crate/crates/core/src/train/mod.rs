//! Chronological training, negative sampling, evaluation and metrics.

mod engine;
mod fit;
mod labels;
mod metrics;
mod negative;

pub use engine::{
    dot_rows, forward_pairs, BatchOutcome, Engine, EngineConfig, PairForward, Phase, Propagation,
    ScoredPair,
};
pub use fit::{
    evaluate, fit, fit_model, train_epoch, write_metrics_csv, EarlyStopping, EpochRow, EpochStats, EvalReport,
    FitReport, SplitName, StopDecision, METRICS_HEADER,
};
pub use labels::{collect_label_samples, fit_label_head, label_auc, train_label_head, HeadReport, LabeledSample};
pub use metrics::{accuracy, average_precision, roc_auc, Metrics};
pub use negative::NegativePool;

use crate::error::{shape_err, ApanError, Result};
use crate::model::{AttentionScale, ModelConfig};
use crate::propagator::PropagationConfig;
use crate::tensor::{log_sigmoid, Tape, Var};

/// How pair scores are produced for the link objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum LossKind {
    /// Link decoder MLP on `(z_i || z_j)`.
    #[default]
    Mlp,
    /// Plain inner product `z_i . z_j`.
    Dot,
}

impl std::str::FromStr for LossKind {
    type Err = ApanError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlp" => Ok(Self::Mlp),
            "dot" => Ok(Self::Dot),
            other => Err(ApanError::InvalidArgument(format!(
                "unknown loss `{other}` (expected mlp|dot)"
            ))),
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Mlp => "mlp",
            Self::Dot => "dot",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub prop: PropagationConfig,
    pub loss: LossKind,
    pub slots: usize,
    pub heads: usize,
    pub hidden: usize,
    pub dropout: f64,
    pub attention_scale: AttentionScale,
    pub train_frac: f64,
    pub val_frac: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 200,
            lr: 1e-4,
            patience: 5,
            max_epochs: 50,
            seed: 0,
            prop: PropagationConfig::default(),
            loss: LossKind::Mlp,
            slots: 10,
            heads: 2,
            hidden: 80,
            dropout: 0.1,
            attention_scale: AttentionScale::PerHead,
            train_frac: 0.7,
            val_frac: 0.15,
        }
    }
}

impl TrainConfig {
    pub fn model_config(&self, d_e: usize) -> ModelConfig {
        ModelConfig {
            slots: self.slots,
            heads: self.heads,
            hidden: self.hidden,
            dropout: self.dropout,
            attention_scale: self.attention_scale,
            ..ModelConfig::for_edge_dim(d_e)
        }
    }

    pub fn engine_config(&self) -> EngineConfig {
        EngineConfig {
            prop: self.prop,
            loss: self.loss,
            lr: self.lr,
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(ApanError::InvalidArgument(m.into()));
        if self.batch_size == 0 {
            return bad("batch size must be >= 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("learning rate must be positive");
        }
        if self.max_epochs == 0 {
            return bad("max epochs must be >= 1");
        }
        self.prop.validate()
    }
}

/// Mean over pairs of `-log sigmoid(pos) - log sigmoid(-neg)`.
pub fn link_loss(tape: &mut Tape, pos: Var, neg: Var) -> Result<Var> {
    let (a, b) = (tape.value(pos).dims2(), tape.value(neg).dims2());
    if a != b || a.1 != 1 {
        return Err(shape_err(
            "link_loss",
            format!("positive logits {a:?} vs negative logits {b:?}"),
        ));
    }
    let lp = tape.log_sigmoid(pos);
    let flipped = tape.scale(neg, -1.0);
    let ln = tape.log_sigmoid(flipped);
    let both = tape.add(lp, ln)?;
    let m = tape.mean(both);
    Ok(tape.scale(m, -1.0))
}

/// Scalar form of one term of [`link_loss`].
pub fn pair_loss(pos: f64, neg: f64) -> f64 {
    -log_sigmoid(pos) - log_sigmoid(-neg)
}
