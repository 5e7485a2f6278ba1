use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use apan::bench::WorkerKind;
use apan::kv::{parse_kv, parse_value, write_kv};
use apan::model::AttentionScale;
use apan::propagator::{PropagationConfig, RecipientRule};
use apan::train::{LossKind, TrainConfig};
use apan::{ApanError, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Task {
    #[default]
    Link,
    Edge,
    Node,
}

impl FromStr for Task {
    type Err = ApanError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "link" => Ok(Task::Link),
            "edge" => Ok(Task::Edge),
            "node" => Ok(Task::Node),
            other => Err(ApanError::InvalidArgument(format!(
                "unknown task `{other}` (expected link|edge|node)"
            ))),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Link => "link",
            Task::Edge => "edge",
            Task::Node => "node",
        })
    }
}

/// Every effective parameter of a run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// CSV path, or `synthetic` for the generated periodic log.
    pub dataset: Option<String>,
    pub out: PathBuf,
    pub seed: u64,
    pub batch: usize,
    pub lr: f64,
    pub epochs: usize,
    pub patience: usize,
    pub heads: usize,
    pub mailbox_slots: usize,
    pub fanout: usize,
    pub hops: usize,
    pub rule: RecipientRule,
    pub task: Task,
    pub loss: LossKind,
    pub mode: WorkerKind,
    pub dropout: f64,
    pub hidden: usize,
    pub attention_scale: AttentionScale,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            dataset: None,
            out: PathBuf::from("runs"),
            seed: t.seed,
            batch: t.batch_size,
            lr: t.lr,
            epochs: t.max_epochs,
            patience: t.patience,
            heads: t.heads,
            mailbox_slots: t.slots,
            fanout: t.prop.fanout,
            hops: t.prop.hops,
            rule: t.prop.rule,
            task: Task::Link,
            loss: t.loss,
            mode: WorkerKind::Deterministic,
            dropout: t.dropout,
            hidden: t.hidden,
            attention_scale: t.attention_scale,
        }
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let k = key;
        match key {
            "dataset" => self.dataset = Some(value.to_string()),
            "out" => self.out = PathBuf::from(value),
            "seed" => self.seed = parse_value(k, value)?,
            "batch" => self.batch = parse_value(k, value)?,
            "lr" => self.lr = parse_value(k, value)?,
            "epochs" => self.epochs = parse_value(k, value)?,
            "patience" => self.patience = parse_value(k, value)?,
            "heads" => self.heads = parse_value(k, value)?,
            "mailbox_slots" => self.mailbox_slots = parse_value(k, value)?,
            "fanout" => self.fanout = parse_value(k, value)?,
            "hops" => self.hops = parse_value(k, value)?,
            "rule" => self.rule = parse_value(k, value)?,
            "task" => self.task = parse_value(k, value)?,
            "loss" => self.loss = parse_value(k, value)?,
            "mode" => self.mode = parse_value(k, value)?,
            "dropout" => self.dropout = parse_value(k, value)?,
            "hidden" => self.hidden = parse_value(k, value)?,
            "attention_scale" => self.attention_scale = parse_value(k, value)?,
            _ => {
                return Err(ApanError::Config {
                    key: key.to_string(),
                    message: "unknown config key".into(),
                })
            }
        }
        Ok(())
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (key, value) in parse_kv(text)? {
            self.set(&key, &value)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, message: &str| {
            Err(ApanError::Config {
                key: key.into(),
                message: message.into(),
            })
        };
        for (key, v) in [
            ("batch", self.batch),
            ("epochs", self.epochs),
            ("heads", self.heads),
            ("mailbox_slots", self.mailbox_slots),
            ("fanout", self.fanout),
            ("hidden", self.hidden),
        ] {
            if v == 0 {
                return bad(key, "must be >= 1");
            }
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr", "must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout", "must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch,
            lr: self.lr,
            patience: self.patience,
            max_epochs: self.epochs,
            seed: self.seed,
            prop: PropagationConfig {
                hops: self.hops,
                fanout: self.fanout,
                rule: self.rule,
            },
            loss: self.loss,
            slots: self.mailbox_slots,
            heads: self.heads,
            hidden: self.hidden,
            dropout: self.dropout,
            attention_scale: self.attention_scale,
            ..TrainConfig::default()
        }
    }

    /// Contents of `config.resolved`; loading it with `--config` reproduces
    /// the run.
    pub fn to_text(&self) -> String {
        let mut pairs = Vec::new();
        if let Some(d) = &self.dataset {
            pairs.push(("dataset", d.clone()));
        }
        pairs.extend([
            ("out", self.out.display().to_string()),
            ("seed", self.seed.to_string()),
            ("batch", self.batch.to_string()),
            ("lr", self.lr.to_string()),
            ("epochs", self.epochs.to_string()),
            ("patience", self.patience.to_string()),
            ("heads", self.heads.to_string()),
            ("mailbox_slots", self.mailbox_slots.to_string()),
            ("fanout", self.fanout.to_string()),
            ("hops", self.hops.to_string()),
            ("rule", self.rule.to_string()),
            ("task", self.task.to_string()),
            ("loss", self.loss.to_string()),
            ("mode", self.mode.to_string()),
            ("dropout", self.dropout.to_string()),
            ("hidden", self.hidden.to_string()),
            ("attention_scale", self.attention_scale.to_string()),
        ]);
        write_kv(pairs)
    }
}
