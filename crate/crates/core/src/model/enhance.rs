//! Generator-based enhancement of tail users, tail items and subsequence
//! representations.

use ndarray::{Array1, Array2};
use rayon::prelude::*;

use super::{encode_sequence, EncoderConfig, ModelError, ModelParams};
use crate::data::{HeadTailPartition, ItemId, Subsequence, SubsequenceIndex};
use crate::rng::{keyed, Purpose};

/// `p⁺ = G_U(r_u) + β · p_u`.
pub fn enhance_tail_user_rep(
    params: &ModelParams,
    r_u: &Array1<f64>,
    p_u: &Array1<f64>,
    beta: f64,
) -> Array1<f64> {
    params.user_generator.apply(r_u) + &(p_u * beta)
}

/// `q⁺ = G_I(r_i) + γ · q_i` for tail items; head items keep `q_i`.
pub fn enhance_item_embedding(
    params: &ModelParams,
    item: ItemId,
    r_i: &Array1<f64>,
    gamma: f64,
    partition: &HeadTailPartition,
) -> Array1<f64> {
    let q = params.item_embeddings.row(item);
    if partition.is_tail_item(item) {
        params.item_generator.apply(r_i) + &(&q * gamma)
    } else {
        q.to_owned()
    }
}

/// Mean encoder representation over `subset` (or all of `C_item`).
///
/// With `owner_enhancement = Some((beta, user_reps))` each subsequence
/// representation `r̂` is replaced by `G_U(r̂) + β · p_owner`. Encodings use
/// plain item embeddings.
pub fn contextualized_item_rep(
    params: &ModelParams,
    cfg: &EncoderConfig,
    index: &SubsequenceIndex,
    item: ItemId,
    subset: Option<&[&Subsequence]>,
    owner_enhancement: Option<(f64, &[Array1<f64>])>,
) -> Result<Array1<f64>, ModelError> {
    let all: Vec<&Subsequence>;
    let chosen = match subset {
        Some(s) => s,
        None => {
            all = index.get(item).iter().collect();
            &all
        }
    };
    if chosen.is_empty() {
        return Err(ModelError::EmptyContext(item));
    }
    let plain = InputEmbeddings::plain();
    let mut sum = Array1::<f64>::zeros(params.dim());
    for sub in chosen {
        let r = encode_sequence(params, cfg, &sub.items, &plain, None)?;
        match owner_enhancement {
            Some((beta, reps)) => sum += &enhance_tail_user_rep(params, &r, &reps[sub.owner], beta),
            None => sum += &r,
        }
    }
    Ok(sum / chosen.len() as f64)
}

/// `f_θ(S_u)` for every sequence, over plain embeddings.
pub fn user_representations(
    params: &ModelParams,
    cfg: &EncoderConfig,
    sequences: &[Vec<ItemId>],
) -> Result<Vec<Array1<f64>>, ModelError> {
    let plain = InputEmbeddings::plain();
    sequences
        .par_iter()
        .map(|seq| encode_sequence(params, cfg, seq, &plain, None))
        .collect()
}

/// How tail-item contextual representations are assembled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContextOptions {
    pub beta: f64,
    /// Apply owner enhancement to each subsequence representation.
    pub enhance_subsequences: bool,
    /// At most this many subsequences per item; larger sets are subsampled.
    pub cap: usize,
    pub seed: u64,
}

/// Full-set contextual representations `r_i`, present for tail items with a
/// non-empty subsequence set.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TailContexts {
    reps: Vec<Option<Array1<f64>>>,
}

impl TailContexts {
    pub fn empty(n_items: usize) -> Self {
        Self {
            reps: vec![None; n_items],
        }
    }

    pub fn get(&self, item: ItemId) -> Option<&Array1<f64>> {
        self.reps.get(item).and_then(Option::as_ref)
    }

    pub fn insert(&mut self, item: ItemId, rep: Array1<f64>) {
        self.reps[item] = Some(rep);
    }

    pub fn n_present(&self) -> usize {
        self.reps.iter().filter(|r| r.is_some()).count()
    }

    /// The subsequences used for `item`: all of them, or a fixed seeded
    /// sample of `cap` when there are more.
    pub fn selection(
        index: &SubsequenceIndex,
        item: ItemId,
        cap: usize,
        seed: u64,
    ) -> Vec<&Subsequence> {
        let pool = index.get(item);
        if pool.len() <= cap {
            return pool.iter().collect();
        }
        let mut rng = keyed(seed, Purpose::ContextCap, &[item as u64]);
        let mut picked = rand::seq::index::sample(&mut rng, pool.len(), cap).into_vec();
        picked.sort_unstable();
        picked.into_iter().map(|i| &pool[i]).collect()
    }

    /// Computes `r_i` for every tail item from the current parameters.
    pub fn build(
        params: &ModelParams,
        cfg: &EncoderConfig,
        partition: &HeadTailPartition,
        index: &SubsequenceIndex,
        user_reps: &[Array1<f64>],
        opts: ContextOptions,
    ) -> Result<Self, ModelError> {
        let computed: Vec<(ItemId, Array1<f64>)> = partition
            .tail_items
            .par_iter()
            .filter(|&&item| index.count(item) > 0)
            .map(|&item| {
                let chosen = Self::selection(index, item, opts.cap, opts.seed);
                let owners = opts.enhance_subsequences.then_some((opts.beta, user_reps));
                contextualized_item_rep(params, cfg, index, item, Some(&chosen), owners)
                    .map(|r| (item, r))
            })
            .collect::<Result<_, _>>()?;
        let mut out = Self::empty(params.n_items());
        for (item, rep) in computed {
            out.insert(item, rep);
        }
        Ok(out)
    }
}

/// Resolves item ids to encoder input embeddings.
///
/// Plain mode uses `q_i`. Enhanced mode substitutes `q⁺ = G_I(r_i) + γ q_i`
/// for every item that has a tail context. The generated term is computed
/// once at construction and treated as a constant by the backward pass, so
/// only `γ · q_i` passes gradient to the embedding table.
#[derive(Debug, Clone)]
pub struct InputEmbeddings {
    generated: Vec<Option<Array1<f64>>>,
    gamma: f64,
}

impl InputEmbeddings {
    pub fn plain() -> Self {
        Self {
            generated: Vec::new(),
            gamma: 1.0,
        }
    }

    pub fn enhanced(params: &ModelParams, contexts: &TailContexts, gamma: f64) -> Self {
        let generated = contexts
            .reps
            .iter()
            .map(|r| r.as_ref().map(|r| params.item_generator.apply(r)))
            .collect();
        Self { generated, gamma }
    }

    pub fn is_plain(&self) -> bool {
        self.generated.iter().all(Option::is_none)
    }

    fn generated(&self, item: ItemId) -> Option<&Array1<f64>> {
        self.generated.get(item).and_then(Option::as_ref)
    }

    /// The input embedding of a single item.
    pub fn embedding(&self, params: &ModelParams, item: ItemId) -> Array1<f64> {
        let q = params.item_embeddings.row(item);
        match self.generated(item) {
            Some(g) => g + &(&q * self.gamma),
            None => q.to_owned(),
        }
    }

    pub(crate) fn resolve(&self, params: &ModelParams, items: &[ItemId]) -> Array2<f64> {
        let mut out = Array2::zeros((items.len(), params.dim()));
        for (mut row, &item) in out.rows_mut().into_iter().zip(items) {
            row.assign(&self.embedding(params, item));
        }
        out
    }

    /// `∂ embedding / ∂ q_item`: `γ` for generated rows, otherwise 1.
    pub(crate) fn q_scale(&self, item: ItemId) -> f64 {
        if self.generated(item).is_some() {
            self.gamma
        } else {
            1.0
        }
    }

    pub(crate) fn route_gradients(
        &self,
        items: &[ItemId],
        d_inputs: &Array2<f64>,
        grads: &mut ModelParams,
    ) {
        for (row, &item) in d_inputs.rows().into_iter().zip(items) {
            grads
                .item_embeddings
                .row_mut(item)
                .scaled_add(self.q_scale(item), &row);
        }
    }
}
