//! Synthetic long-tailed interaction logs.
//!
//! Items get Zipf popularity over a random rank order and are dealt
//! round-robin (by rank) into latent clusters, so every cluster holds a mix
//! of popular and rare items. Each user has a home cluster; an event comes
//! from it with probability `cluster_affinity` (by within-cluster
//! popularity) and otherwise from the global popularity distribution.
//! Sequence lengths follow a shifted power law (Lomax) with the requested
//! mean. Finally every item is topped up to `MIN_ITEM_COUNT` events so the
//! log is a fixed point of 5-core filtering.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{DataError, InteractionLog};
use crate::rng::{keyed, Purpose};

const MIN_ITEM_COUNT: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub zipf_exponent: f64,
    /// Tail exponent of the sequence-length distribution.
    pub user_activity_exponent: f64,
    pub min_seq_len: usize,
    pub mean_seq_len: f64,
    pub n_clusters: usize,
    pub cluster_affinity: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_users: 2000,
            n_items: 500,
            zipf_exponent: 1.2,
            user_activity_exponent: 2.0,
            min_seq_len: 5,
            mean_seq_len: 15.0,
            n_clusters: 10,
            cluster_affinity: 0.6,
            seed: 42,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let fail = |msg: String| Err(DataError::Config(msg));
        if self.n_users == 0 || self.n_items < 2 || self.n_clusters == 0 {
            return fail("n_users, n_clusters must be positive and n_items at least 2".into());
        }
        if self.min_seq_len < MIN_ITEM_COUNT {
            return fail(format!("min_seq_len must be at least {MIN_ITEM_COUNT}"));
        }
        if self.min_seq_len > self.n_items {
            return fail(format!(
                "min_seq_len {} exceeds n_items {}",
                self.min_seq_len, self.n_items
            ));
        }
        if self.zipf_exponent.is_nan()
            || self.zipf_exponent <= 0.0
            || self.user_activity_exponent.is_nan()
            || self.user_activity_exponent <= 0.0
        {
            return fail("zipf_exponent and user_activity_exponent must be positive".into());
        }
        if !self.mean_seq_len.is_finite() || self.mean_seq_len < self.min_seq_len as f64 {
            return fail("mean_seq_len must be finite and at least min_seq_len".into());
        }
        if !(0.0..=1.0).contains(&self.cluster_affinity) {
            return fail("cluster_affinity must lie in [0, 1]".into());
        }
        if self.n_clusters > self.n_items {
            return fail("n_clusters exceeds n_items".into());
        }
        if self.n_users * self.min_seq_len < MIN_ITEM_COUNT * self.n_items {
            return fail(format!(
                "{} users of at least {} events cannot give every one of {} items {} events",
                self.n_users, self.min_seq_len, self.n_items, MIN_ITEM_COUNT
            ));
        }
        Ok(())
    }
}

struct Catalog {
    cluster_of: Vec<usize>,
    members: Vec<Vec<usize>>,
    samplers: Vec<WeightedIndex<f64>>,
    global: WeightedIndex<f64>,
}

impl Catalog {
    fn new<R: Rng>(cfg: &SyntheticConfig, rng: &mut R) -> Self {
        let mut by_rank: Vec<usize> = (0..cfg.n_items).collect();
        by_rank.shuffle(rng);
        let mut cluster_of = vec![0; cfg.n_items];
        let mut members = vec![Vec::new(); cfg.n_clusters];
        let mut weights = vec![Vec::new(); cfg.n_clusters];
        let mut global = vec![0.0; cfg.n_items];
        for (rank, &item) in by_rank.iter().enumerate() {
            let c = rank % cfg.n_clusters;
            let w = ((rank + 1) as f64).powf(-cfg.zipf_exponent);
            cluster_of[item] = c;
            members[c].push(item);
            weights[c].push(w);
            global[item] = w;
        }
        let samplers = weights
            .iter()
            .map(|w| WeightedIndex::new(w).expect("positive weights"))
            .collect();
        Self {
            cluster_of,
            members,
            samplers,
            global: WeightedIndex::new(&global).expect("positive weights"),
        }
    }

    fn draw_global<R: Rng>(&self, previous: Option<usize>, rng: &mut R) -> usize {
        loop {
            let item = self.global.sample(rng);
            if Some(item) != previous {
                return item;
            }
        }
    }

    fn draw<R: Rng>(&self, cluster: usize, previous: Option<usize>, rng: &mut R) -> usize {
        loop {
            let item = self.members[cluster][self.samplers[cluster].sample(rng)];
            if Some(item) != previous {
                return item;
            }
            if self.members[cluster].len() == 1 {
                // Singleton cluster: fall back to any other item.
                let other = rng.random_range(0..self.cluster_of.len() - 1);
                return if other >= item { other + 1 } else { other };
            }
        }
    }
}

fn draw_length<R: Rng>(cfg: &SyntheticConfig, rng: &mut R) -> usize {
    let shape = cfg.user_activity_exponent;
    let excess = cfg.mean_seq_len - cfg.min_seq_len as f64 + 0.5;
    let scale = if shape > 1.0 {
        excess * (shape - 1.0)
    } else {
        excess
    };
    let u: f64 = 1.0 - rng.random::<f64>();
    let extra = scale * (u.powf(-1.0 / shape) - 1.0);
    let len = cfg.min_seq_len as f64 + extra.floor();
    (len.min(cfg.n_items as f64) as usize).max(cfg.min_seq_len)
}

/// Raises every item to at least `MIN_ITEM_COUNT` events by rewriting events
/// of over-represented items, preferring events from the same cluster.
fn top_up<R: Rng>(sequences: &mut [Vec<usize>], catalog: &Catalog, rng: &mut R) {
    let n_items = catalog.cluster_of.len();
    let mut counts = vec![0usize; n_items];
    for seq in sequences.iter() {
        for &item in seq {
            counts[item] += 1;
        }
    }
    let mut slots: Vec<(usize, usize)> = sequences
        .iter()
        .enumerate()
        .flat_map(|(u, seq)| (0..seq.len()).map(move |t| (u, t)))
        .collect();
    for item in 0..n_items {
        if counts[item] >= MIN_ITEM_COUNT {
            continue;
        }
        slots.shuffle(rng);
        for same_cluster in [true, false] {
            for &(u, t) in &slots {
                if counts[item] >= MIN_ITEM_COUNT {
                    break;
                }
                let seq = &sequences[u];
                let current = seq[t];
                if counts[current] <= MIN_ITEM_COUNT || current == item {
                    continue;
                }
                if same_cluster && catalog.cluster_of[current] != catalog.cluster_of[item] {
                    continue;
                }
                let clashes = (t > 0 && seq[t - 1] == item) || seq.get(t + 1) == Some(&item);
                if clashes {
                    continue;
                }
                sequences[u][t] = item;
                counts[current] -= 1;
                counts[item] += 1;
            }
        }
    }
}

/// Generates a log with user keys `u<n>`, item keys `i<n>` and timestamps
/// equal to sequence positions.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<InteractionLog, DataError> {
    cfg.validate()?;
    let mut rng = keyed(cfg.seed, Purpose::Synthetic, &[]);
    let catalog = Catalog::new(cfg, &mut rng);

    let mut sequences = Vec::with_capacity(cfg.n_users);
    for _ in 0..cfg.n_users {
        let len = draw_length(cfg, &mut rng);
        let home = rng.random_range(0..cfg.n_clusters);
        let mut seq: Vec<usize> = Vec::with_capacity(len);
        for _ in 0..len {
            let previous = seq.last().copied();
            let item = if rng.random_bool(cfg.cluster_affinity) {
                catalog.draw(home, previous, &mut rng)
            } else {
                catalog.draw_global(previous, &mut rng)
            };
            seq.push(item);
        }
        sequences.push(seq);
    }
    top_up(&mut sequences, &catalog, &mut rng);

    let mut log = InteractionLog::new();
    for (u, seq) in sequences.iter().enumerate() {
        let user = format!("u{u}");
        for (t, item) in seq.iter().enumerate() {
            log.push(&user, &format!("i{item}"), t as u64);
        }
    }
    Ok(log)
}
