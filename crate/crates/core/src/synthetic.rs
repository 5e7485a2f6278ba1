//! Generated bipartite logs with planted periodic preferences.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{ApanError, Result};
use crate::events::{EventLog, TemporalEvent};

/// How edge features encode an interaction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Features {
    /// Fixed Gaussian vectors for the item and the user, summed, plus noise.
    Random,
    /// One-hot item id (padded to `d_e`) plus noise.
    OneHotItem,
}

/// Which user acts at each step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Schedule {
    /// Uniformly random user per event.
    Random,
    /// Users take turns in id order.
    RoundRobin,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub users: usize,
    pub items: usize,
    /// Length of each user's preference cycle.
    pub prefs: usize,
    pub events: usize,
    pub d_e: usize,
    /// Consecutive interactions a user spends on one item before moving on.
    pub run: usize,
    pub schedule: Schedule,
    pub features: Features,
    /// Standard deviation of per-event feature noise.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            users: 20,
            items: 10,
            prefs: 3,
            events: 5000,
            d_e: 16,
            run: 1,
            schedule: Schedule::Random,
            features: Features::Random,
            noise: 0.1,
            seed: 0,
        }
    }
}

/// Preference list of `user`: offsets chosen so every item is liked by the
/// same number of users when `users = 2 * items`.
pub fn preferences(user: usize, items: usize, prefs: usize) -> Vec<usize> {
    let offsets: &[usize] = if (user / items).is_multiple_of(2) { &[0, 3, 7] } else { &[0, 1, 5] };
    (0..prefs)
        .map(|k| {
            let off = offsets.get(k).copied().unwrap_or(k * 2 + 1);
            (user + off) % items
        })
        .collect()
}

/// Each user cycles through its preference list; the edge feature is a fixed
/// random vector of the item plus a fixed vector of the user plus noise.
pub fn periodic_log(cfg: &SyntheticConfig) -> Result<EventLog> {
    if cfg.users == 0 || cfg.items < 2 || cfg.prefs == 0 || cfg.prefs > cfg.items || cfg.run == 0 {
        return Err(ApanError::InvalidArgument(format!("bad synthetic config {cfg:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut vectors = |n: usize, scale: f64| -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| {
                (0..cfg.d_e)
                    .map(|_| scale * Distribution::<f64>::sample(&StandardNormal, &mut rng))
                    .collect()
            })
            .collect()
    };
    let (item_vec, user_vec) = match cfg.features {
        Features::Random => (vectors(cfg.items, 1.0), vectors(cfg.users, 0.5)),
        Features::OneHotItem => {
            if cfg.d_e < cfg.items {
                return Err(ApanError::InvalidArgument(format!(
                    "one-hot features need d_e >= items ({} < {})",
                    cfg.d_e, cfg.items
                )));
            }
            let onehot = (0..cfg.items)
                .map(|i| (0..cfg.d_e).map(|k| if k == i { 1.0 } else { 0.0 }).collect())
                .collect();
            (onehot, vec![vec![0.0; cfg.d_e]; cfg.users])
        }
    };
    let prefs: Vec<Vec<usize>> = (0..cfg.users)
        .map(|u| preferences(u, cfg.items, cfg.prefs))
        .collect();
    let mut count = vec![0usize; cfg.users];
    let mut events = Vec::with_capacity(cfg.events);
    for k in 0..cfg.events {
        let u = match cfg.schedule {
            Schedule::Random => rng.random_range(0..cfg.users),
            Schedule::RoundRobin => k % cfg.users,
        };
        let item = prefs[u][(count[u] / cfg.run) % cfg.prefs];
        count[u] += 1;
        let edge_feat = item_vec[item]
            .iter()
            .zip(&user_vec[u])
            .map(|(a, b)| {
                let n: f64 = StandardNormal.sample(&mut rng);
                a + b + cfg.noise * n
            })
            .collect();
        events.push(TemporalEvent {
            src: u,
            dst: cfg.users + item,
            edge_feat,
            timestamp: (k + 1) as f64,
            label: None,
        });
    }
    EventLog::new(events, cfg.users + cfg.items, cfg.d_e, Some(cfg.users))
}

/// Destroys the user/item association: destinations and features are
/// permuted together across events while sources and times stay put.
pub fn shuffled_control(log: &EventLog, seed: u64) -> Result<EventLog> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut payload: Vec<(usize, Vec<f64>)> = log
        .events()
        .iter()
        .map(|e| (e.dst, e.edge_feat.clone()))
        .collect();
    payload.shuffle(&mut rng);
    let events = log
        .events()
        .iter()
        .zip(payload)
        .map(|(e, (dst, edge_feat))| TemporalEvent {
            dst,
            edge_feat,
            ..e.clone()
        })
        .collect();
    EventLog::new(events, log.num_nodes(), log.d_e(), log.num_users())
}
