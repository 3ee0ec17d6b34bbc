use serde::{Deserialize, Serialize};

use super::{DataError, ItemId, SplitDataset, UserId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Head,
    Tail,
}

/// Head/tail membership for users (by training length) and items (by
/// training popularity), with the derived thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadTailPartition {
    pub alpha: f64,
    pub user_groups: Vec<Group>,
    pub item_groups: Vec<Group>,
    pub head_users: Vec<UserId>,
    pub tail_users: Vec<UserId>,
    pub head_items: Vec<ItemId>,
    pub tail_items: Vec<ItemId>,
    /// Shortest training sequence among head users.
    pub kappa_u: usize,
    /// Smallest training popularity among head items.
    pub kappa_i: usize,
    pub min_user_len: usize,
    pub max_user_len: usize,
    /// Popularity bounds over head items, i.e. forward-only `|C_i|` bounds.
    pub min_item_count: usize,
    pub max_item_count: usize,
}

impl HeadTailPartition {
    pub fn user_group(&self, user: UserId) -> Group {
        self.user_groups[user]
    }

    pub fn item_group(&self, item: ItemId) -> Group {
        self.item_groups[item]
    }

    pub fn is_tail_item(&self, item: ItemId) -> bool {
        self.item_groups[item] == Group::Tail
    }

    pub fn is_tail_user(&self, user: UserId) -> bool {
        self.user_groups[user] == Group::Tail
    }
}

/// `⌈alpha · n⌉`, robust to the representation error of `alpha`.
fn head_count(alpha: f64, n: usize) -> usize {
    ((alpha * n as f64) - 1e-9).ceil().max(0.0) as usize
}

/// Sorts `values` descending with ties by ascending id and cuts off the top
/// `⌈alpha · n⌉` ids.
fn cut(values: &[usize], alpha: f64) -> (Vec<usize>, Vec<usize>, Vec<Group>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].cmp(&values[a]).then(a.cmp(&b)));
    let n_head = head_count(alpha, values.len()).min(values.len());
    let mut groups = vec![Group::Tail; values.len()];
    let mut head: Vec<usize> = order[..n_head].to_vec();
    let mut tail: Vec<usize> = order[n_head..].to_vec();
    for &id in &head {
        groups[id] = Group::Head;
    }
    head.sort_unstable();
    tail.sort_unstable();
    (head, tail, groups)
}

fn bounds(values: &[usize], ids: &[usize]) -> (usize, usize) {
    let min = ids.iter().map(|&id| values[id]).min().unwrap_or(0);
    let max = ids.iter().map(|&id| values[id]).max().unwrap_or(0);
    (min, max)
}

/// Splits users and items into head and tail using training data only.
pub fn partition_head_tail(
    split: &SplitDataset,
    alpha: f64,
) -> Result<HeadTailPartition, DataError> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(DataError::Config(format!(
            "alpha must lie in (0, 1], got {alpha}"
        )));
    }
    let lengths: Vec<usize> = split.train.iter().map(Vec::len).collect();
    let popularity = split.train_popularity();

    let (head_users, tail_users, user_groups) = cut(&lengths, alpha);
    let (head_items, tail_items, item_groups) = cut(&popularity, alpha);
    let (min_user_len, max_user_len) = bounds(&lengths, &head_users);
    let (min_item_count, max_item_count) = bounds(&popularity, &head_items);

    Ok(HeadTailPartition {
        alpha,
        user_groups,
        item_groups,
        head_users,
        tail_users,
        head_items,
        tail_items,
        kappa_u: min_user_len,
        kappa_i: min_item_count,
        min_user_len,
        max_user_len,
        min_item_count,
        max_item_count,
    })
}
