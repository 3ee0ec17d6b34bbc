use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{DataError, ItemId, SplitDataset, UserId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Prefix `[i_1, .., i_t]` of the training sequence.
    Forward,
    /// Reversed suffix `[i_n, i_{n-1}, .., i_t]`.
    Reversed,
}

/// A training subsequence whose last element is the key item.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Subsequence {
    pub owner: UserId,
    pub direction: Direction,
    /// Position of the key item in the owner's training sequence.
    pub position: usize,
    pub items: Vec<ItemId>,
}

/// Item → subsequences ending at that item, built from training sequences.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsequenceIndex {
    pub include_reversed: bool,
    pub max_len: usize,
    entries: Vec<Vec<Subsequence>>,
}

impl SubsequenceIndex {
    pub fn n_items(&self) -> usize {
        self.entries.len()
    }

    pub fn get(&self, item: ItemId) -> &[Subsequence] {
        &self.entries[item]
    }

    /// `|C_i|`.
    pub fn count(&self, item: ItemId) -> usize {
        self.entries[item].len()
    }

    pub fn counts(&self) -> Vec<usize> {
        self.entries.iter().map(Vec::len).collect()
    }

    pub fn total(&self) -> usize {
        self.entries.iter().map(Vec::len).sum()
    }
}

/// Builds `C_i` for every item. Users are scanned in id order and positions
/// in sequence order, so each list is ordered by `(owner, position)` with the
/// forward prefix before the reversed suffix. Subsequences longer than
/// `max_len` keep the `max_len` elements closest to the key item.
pub fn build_subsequence_index(
    split: &SplitDataset,
    include_reversed: bool,
    max_len: usize,
) -> SubsequenceIndex {
    assert!(max_len >= 1, "max_len must be positive");
    let mut entries: Vec<Vec<Subsequence>> = vec![Vec::new(); split.n_items];
    for (owner, seq) in split.train.iter().enumerate() {
        for (position, &key) in seq.iter().enumerate() {
            let start = (position + 1).saturating_sub(max_len);
            entries[key].push(Subsequence {
                owner,
                direction: Direction::Forward,
                position,
                items: seq[start..=position].to_vec(),
            });
            if include_reversed {
                let end = (position + max_len).min(seq.len());
                entries[key].push(Subsequence {
                    owner,
                    direction: Direction::Reversed,
                    position,
                    items: seq[position..end].iter().rev().copied().collect(),
                });
            }
        }
    }
    SubsequenceIndex {
        include_reversed,
        max_len,
        entries,
    }
}

/// Draws `k` distinct subsequences of `C_item` uniformly without replacement.
pub fn sample_subsequences<'a, R: Rng + ?Sized>(
    index: &'a SubsequenceIndex,
    item: ItemId,
    k: usize,
    rng: &mut R,
) -> Result<Vec<&'a Subsequence>, DataError> {
    let pool = index.get(item);
    if k < 1 || k > pool.len() {
        return Err(DataError::Sampling {
            item,
            requested: k,
            available: pool.len(),
        });
    }
    Ok(rand::seq::index::sample(rng, pool.len(), k)
        .into_iter()
        .map(|i| &pool[i])
        .collect())
}
