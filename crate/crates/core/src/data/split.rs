use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::{DataError, InteractionLog, ItemId, UserId};

/// A user's items ordered by `(timestamp, item id)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserSequence {
    pub user: UserId,
    pub items: Vec<ItemId>,
}

impl UserSequence {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Groups the log per user and sorts each history chronologically. Equal
/// timestamps are ordered by dense item id.
pub fn build_sequences(log: &InteractionLog) -> Vec<UserSequence> {
    let mut events: Vec<Vec<(u64, ItemId)>> = vec![Vec::new(); log.n_users()];
    for it in log.interactions() {
        events[it.user].push((it.timestamp, it.item));
    }
    events
        .into_iter()
        .enumerate()
        .map(|(user, mut ev)| {
            ev.sort_unstable();
            UserSequence {
                user,
                items: ev.into_iter().map(|(_, item)| item).collect(),
            }
        })
        .collect()
}

/// Leave-one-out split: the last item is the test target, the one before it
/// the validation target, the rest is training history.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitDataset {
    pub n_items: usize,
    pub train: Vec<Vec<ItemId>>,
    pub valid: Vec<ItemId>,
    pub test: Vec<ItemId>,
}

impl SplitDataset {
    pub fn n_users(&self) -> usize {
        self.train.len()
    }

    /// Number of training events per item.
    pub fn train_popularity(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_items];
        for seq in &self.train {
            for &item in seq {
                counts[item] += 1;
            }
        }
        counts
    }

    pub fn train_interactions(&self) -> usize {
        self.train.iter().map(Vec::len).sum()
    }

    /// The original, unsplit sequence of `user`.
    pub fn full_sequence(&self, user: UserId) -> Vec<ItemId> {
        let mut seq = self.train[user].clone();
        seq.push(self.valid[user]);
        seq.push(self.test[user]);
        seq
    }

    /// Every item the user touched in train, validation or test.
    pub fn consumed(&self, user: UserId) -> HashSet<ItemId> {
        let mut set: HashSet<ItemId> = self.train[user].iter().copied().collect();
        set.insert(self.valid[user]);
        set.insert(self.test[user]);
        set
    }
}

pub fn leave_one_out_split(
    sequences: &[UserSequence],
    n_items: usize,
) -> Result<SplitDataset, DataError> {
    let mut split = SplitDataset {
        n_items,
        train: Vec::with_capacity(sequences.len()),
        valid: Vec::with_capacity(sequences.len()),
        test: Vec::with_capacity(sequences.len()),
    };
    for seq in sequences {
        let n = seq.items.len();
        if n < 3 {
            return Err(DataError::Split {
                user: seq.user,
                len: n,
            });
        }
        split.train.push(seq.items[..n - 2].to_vec());
        split.valid.push(seq.items[n - 2]);
        split.test.push(seq.items[n - 1]);
    }
    Ok(split)
}

/// The `r` most recent items of `items`.
pub fn truncate_recent(items: &[ItemId], r: usize) -> Result<&[ItemId], DataError> {
    if r < 1 || r > items.len() {
        return Err(DataError::Truncation {
            requested: r,
            len: items.len(),
        });
    }
    Ok(&items[items.len() - r..])
}
