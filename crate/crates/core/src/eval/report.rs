use std::collections::HashSet;
use std::fmt::Write as _;

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{hit_at_k, ndcg_at_k, rank_of, EvalConfig, EvalError, InferenceModel, Target};
use crate::data::{Group, HeadTailPartition, ItemId, SplitDataset, UserId};
use crate::rng::{keyed, Purpose};

/// `n` distinct items drawn uniformly from those the user never consumed.
pub fn sample_negatives<R: Rng + ?Sized>(
    user: UserId,
    n_items: usize,
    consumed: &HashSet<ItemId>,
    n: usize,
    rng: &mut R,
) -> Result<Vec<ItemId>, EvalError> {
    let pool: Vec<ItemId> = (0..n_items).filter(|i| !consumed.contains(i)).collect();
    if pool.len() < n {
        return Err(EvalError::InsufficientCandidates {
            user,
            available: pool.len(),
            requested: n,
        });
    }
    Ok(sample(rng, pool.len(), n)
        .into_iter()
        .map(|i| pool[i])
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserRecord {
    pub user: UserId,
    pub item: ItemId,
    pub rank: usize,
    pub hit: f64,
    pub ndcg: f64,
    pub user_group: Group,
    pub item_group: Group,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub users: usize,
    pub hr: f64,
    pub ndcg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanMetrics {
    pub hr: f64,
    pub ndcg: f64,
}

/// Aggregates over all users and over each head/tail group. Groups with no
/// users are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub k: usize,
    pub target: Target,
    pub overall: GroupMetrics,
    pub head_user: Option<GroupMetrics>,
    pub tail_user: Option<GroupMetrics>,
    pub head_item: Option<GroupMetrics>,
    pub tail_item: Option<GroupMetrics>,
    pub mean: Option<MeanMetrics>,
    /// Users split by (user group, ground-truth item group).
    pub head_user_head_item: Option<GroupMetrics>,
    pub head_user_tail_item: Option<GroupMetrics>,
    pub tail_user_head_item: Option<GroupMetrics>,
    pub tail_user_tail_item: Option<GroupMetrics>,
    pub records: Vec<UserRecord>,
}

fn aggregate<'a>(records: impl Iterator<Item = &'a UserRecord>) -> Option<GroupMetrics> {
    let (mut n, mut hr, mut ndcg) = (0usize, 0.0, 0.0);
    for r in records {
        n += 1;
        hr += r.hit;
        ndcg += r.ndcg;
    }
    (n > 0).then(|| GroupMetrics {
        users: n,
        hr: hr / n as f64,
        ndcg: ndcg / n as f64,
    })
}

impl MetricsReport {
    pub fn from_records(k: usize, target: Target, records: Vec<UserRecord>) -> Self {
        let by = |u: Option<Group>, i: Option<Group>| {
            aggregate(records.iter().filter(|r| {
                u.is_none_or(|g| r.user_group == g) && i.is_none_or(|g| r.item_group == g)
            }))
        };
        let overall = by(None, None).unwrap_or(GroupMetrics {
            users: 0,
            hr: 0.0,
            ndcg: 0.0,
        });
        let head_user = by(Some(Group::Head), None);
        let tail_user = by(Some(Group::Tail), None);
        let head_item = by(None, Some(Group::Head));
        let tail_item = by(None, Some(Group::Tail));
        let mean = match (head_user, tail_user, head_item, tail_item) {
            (Some(a), Some(b), Some(c), Some(d)) => Some(MeanMetrics {
                hr: (a.hr + b.hr + c.hr + d.hr) / 4.0,
                ndcg: (a.ndcg + b.ndcg + c.ndcg + d.ndcg) / 4.0,
            }),
            _ => None,
        };
        Self {
            k,
            target,
            overall,
            head_user,
            tail_user,
            head_item,
            tail_item,
            mean,
            head_user_head_item: by(Some(Group::Head), Some(Group::Head)),
            head_user_tail_item: by(Some(Group::Head), Some(Group::Tail)),
            tail_user_head_item: by(Some(Group::Tail), Some(Group::Head)),
            tail_user_tail_item: by(Some(Group::Tail), Some(Group::Tail)),
            records,
        }
    }

    /// Header and one row: Overall, head/tail user, head/tail item and Mean,
    /// each as HR and NDCG at `k`.
    pub fn summary_csv(&self) -> String {
        let k = self.k;
        let mut out = String::new();
        let cols = [
            "overall",
            "head_user",
            "tail_user",
            "head_item",
            "tail_item",
            "mean",
        ];
        let header: Vec<String> = cols
            .iter()
            .flat_map(|c| [format!("{c}_hr@{k}"), format!("{c}_ndcg@{k}")])
            .collect();
        let _ = writeln!(out, "{}", header.join(","));
        let groups = [
            Some(self.overall),
            self.head_user,
            self.tail_user,
            self.head_item,
            self.tail_item,
        ];
        let mut cells: Vec<String> = groups
            .iter()
            .flat_map(|g| match g {
                Some(g) => [fmt(g.hr), fmt(g.ndcg)],
                None => [String::new(), String::new()],
            })
            .collect();
        match self.mean {
            Some(m) => cells.extend([fmt(m.hr), fmt(m.ndcg)]),
            None => cells.extend([String::new(), String::new()]),
        }
        let _ = writeln!(out, "{}", cells.join(","));
        out
    }

    /// HR at `k` for the four (user group, item group) cells.
    pub fn cells_csv(&self) -> String {
        let mut out = format!("user_group,item_group,users,hr@{}\n", self.k);
        let cells = [
            ("head", "head", self.head_user_head_item),
            ("head", "tail", self.head_user_tail_item),
            ("tail", "head", self.tail_user_head_item),
            ("tail", "tail", self.tail_user_tail_item),
        ];
        for (u, i, g) in cells {
            let (n, hr) = g.map_or((0, String::new()), |g| (g.users, fmt(g.hr)));
            let _ = writeln!(out, "{u},{i},{n},{hr}");
        }
        out
    }
}

fn fmt(v: f64) -> String {
    format!("{v:.6}")
}

/// Ranks every user's held-out item against sampled negatives.
pub fn evaluate(
    model: &InferenceModel<'_>,
    split: &SplitDataset,
    partition: &HeadTailPartition,
    cfg: &EvalConfig,
) -> Result<MetricsReport, EvalError> {
    cfg.validate()?;
    let records = (0..split.n_users())
        .into_par_iter()
        .map(|user| {
            let (seq, item) = match cfg.target {
                Target::Validation => (split.train[user].clone(), split.valid[user]),
                Target::Test => {
                    let mut seq = split.train[user].clone();
                    if cfg.append_validation {
                        seq.push(split.valid[user]);
                    }
                    (seq, split.test[user])
                }
            };
            let mut rng = keyed(cfg.seed, Purpose::EvalNegatives, &[user as u64]);
            let negatives = sample_negatives(
                user,
                split.n_items,
                &split.consumed(user),
                cfg.n_negatives,
                &mut rng,
            )?;
            let mut candidates = Vec::with_capacity(negatives.len() + 1);
            candidates.push(item);
            candidates.extend(negatives);
            let scores = model.scores(user, &seq, &candidates)?;
            let rank = rank_of(&candidates, &scores, 0);
            Ok(UserRecord {
                user,
                item,
                rank,
                hit: hit_at_k(rank, cfg.k)?,
                ndcg: ndcg_at_k(rank, cfg.k)?,
                user_group: partition.user_group(user),
                item_group: partition.item_group(item),
            })
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    Ok(MetricsReport::from_records(cfg.k, cfg.target, records))
}
