use std::fmt;
use std::str::FromStr;

use super::LatencyModel;
use crate::error::{ApanError, Result};
use crate::kv::{parse_kv, parse_value, write_kv};

/// How latency is measured.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Clock {
    /// Compute time is `flops * ns_per_flop`; store waits are added, never slept.
    Virtual,
    /// Real elapsed time; store waits are slept.
    Wall,
}

/// Propagation discipline of the mailbox pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WorkerKind {
    /// Inference waits until the previous batch is fully propagated.
    Deterministic,
    /// Up to `capacity` batches may be in flight.
    Async,
}

macro_rules! keyword_enum {
    ($ty:ident { $($word:literal => $var:ident),+ }) => {
        impl FromStr for $ty {
            type Err = ApanError;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($word => Ok(Self::$var),)+
                    other => Err(ApanError::InvalidArgument(format!(
                        "unknown value `{other}` (expected {})",
                        [$($word),+].join("|")
                    ))),
                }
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $(Self::$var => $word,)+ })
            }
        }
    };
}

keyword_enum!(Clock { "virtual" => Virtual, "wall" => Wall });
keyword_enum!(WorkerKind { "deterministic" => Deterministic, "async" => Async });

/// Everything a benchmark run depends on.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    /// Median store latency per neighbor-list query.
    pub mu_ms: f64,
    /// Log-scale spread; `0` means every query costs exactly `mu_ms`.
    pub s: f64,
    pub hops: usize,
    pub fanout: usize,
    pub batch: usize,
    pub seed: u64,
    pub ns_per_flop: f64,
    pub clock: Clock,
    pub worker: WorkerKind,
    pub capacity: usize,
    pub slots: usize,
    pub heads: usize,
    pub users: usize,
    pub items: usize,
    pub events: usize,
    pub d_e: usize,
    /// Leading batches replayed but left out of the latency sample.
    pub warmup: usize,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            mu_ms: 2.0,
            s: 0.0,
            hops: 2,
            fanout: 10,
            batch: 200,
            seed: 0,
            ns_per_flop: 1.0,
            clock: Clock::Virtual,
            worker: WorkerKind::Async,
            capacity: 4,
            slots: 10,
            heads: 2,
            users: 1000,
            items: 500,
            events: 20_000,
            d_e: 16,
            warmup: 10,
        }
    }
}

impl Scenario {
    pub fn latency(&self) -> LatencyModel {
        if self.s == 0.0 {
            LatencyModel::Fixed { mu_ms: self.mu_ms }
        } else {
            LatencyModel::LogNormal {
                mu_ms: self.mu_ms,
                s: self.s,
            }
        }
    }

    /// Overrides fields from `key = value` text; unknown keys are rejected.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (key, value) in parse_kv(text)? {
            self.set(&key, &value)?;
        }
        self.validate()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut s = Self::default();
        s.apply_text(text)?;
        Ok(s)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let k = key;
        match key {
            "mu_ms" => self.mu_ms = parse_value(k, value)?,
            "s" => self.s = parse_value(k, value)?,
            "hops" => self.hops = parse_value(k, value)?,
            "fanout" => self.fanout = parse_value(k, value)?,
            "batch" => self.batch = parse_value(k, value)?,
            "seed" => self.seed = parse_value(k, value)?,
            "ns_per_flop" => self.ns_per_flop = parse_value(k, value)?,
            "clock" => self.clock = parse_value(k, value)?,
            "worker" => self.worker = parse_value(k, value)?,
            "capacity" => self.capacity = parse_value(k, value)?,
            "slots" => self.slots = parse_value(k, value)?,
            "heads" => self.heads = parse_value(k, value)?,
            "users" => self.users = parse_value(k, value)?,
            "items" => self.items = parse_value(k, value)?,
            "events" => self.events = parse_value(k, value)?,
            "d_e" => self.d_e = parse_value(k, value)?,
            "warmup" => self.warmup = parse_value(k, value)?,
            _ => {
                return Err(ApanError::Config {
                    key: key.to_string(),
                    message: "unknown scenario key".into(),
                })
            }
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
        if !(self.mu_ms >= 0.0 && self.mu_ms.is_finite()) {
            return bad("mu_ms", "must be a finite non-negative number");
        }
        if !(self.s >= 0.0 && self.s.is_finite()) {
            return bad("s", "must be a finite non-negative number");
        }
        if !(self.ns_per_flop >= 0.0 && self.ns_per_flop.is_finite()) {
            return bad("ns_per_flop", "must be a finite non-negative number");
        }
        for (key, v) in [
            ("fanout", self.fanout),
            ("batch", self.batch),
            ("capacity", self.capacity),
            ("slots", self.slots),
            ("heads", self.heads),
            ("users", self.users),
            ("events", self.events),
            ("d_e", self.d_e),
        ] {
            if v == 0 {
                return bad(key, "must be >= 1");
            }
        }
        if self.items < 2 {
            return bad("items", "must be >= 2");
        }
        if !self.d_e.is_multiple_of(self.heads) {
            return bad("heads", "must divide d_e");
        }
        Ok(())
    }

    /// Every field as `key = value`, readable by [`Scenario::from_text`].
    pub fn to_text(&self) -> String {
        write_kv([
            ("mu_ms", self.mu_ms.to_string()),
            ("s", self.s.to_string()),
            ("hops", self.hops.to_string()),
            ("fanout", self.fanout.to_string()),
            ("batch", self.batch.to_string()),
            ("seed", self.seed.to_string()),
            ("ns_per_flop", self.ns_per_flop.to_string()),
            ("clock", self.clock.to_string()),
            ("worker", self.worker.to_string()),
            ("capacity", self.capacity.to_string()),
            ("slots", self.slots.to_string()),
            ("heads", self.heads.to_string()),
            ("users", self.users.to_string()),
            ("items", self.items.to_string()),
            ("events", self.events.to_string()),
            ("d_e", self.d_e.to_string()),
            ("warmup", self.warmup.to_string()),
        ])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let s = Scenario {
            mu_ms: 0.5,
            s: 0.25,
            clock: Clock::Wall,
            worker: WorkerKind::Deterministic,
            ..Scenario::default()
        };
        assert_eq!(Scenario::from_text(&s.to_text()).unwrap(), s);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = Scenario::from_text("mu_ms = 1\nlatency = 3\n").unwrap_err();
        assert!(matches!(err, ApanError::Config { ref key, .. } if key == "latency"));
    }

    #[test]
    fn zero_fanout_is_rejected() {
        let err = Scenario::from_text("fanout = 0").unwrap_err();
        assert!(matches!(err, ApanError::Config { ref key, .. } if key == "fanout"));
    }

    #[test]
    fn spread_selects_lognormal() {
        assert_eq!(Scenario::default().latency(), LatencyModel::Fixed { mu_ms: 2.0 });
        let s = Scenario::from_text("s = 0.3").unwrap();
        assert!(matches!(s.latency(), LatencyModel::LogNormal { .. }));
    }
}
