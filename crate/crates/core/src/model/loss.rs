//! Recommendation loss, generator distillation losses and their exact
//! gradients.
//!
//! Distillation targets and inner encoder passes feeding the item branch are
//! captured as constants when a target is prepared.

use ndarray::{s, Array1, Array2};
use rand::seq::index::sample;
use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    encode_hidden, encode_sequence, EncoderConfig, InputEmbeddings, ModelError, ModelParams,
    TailContexts,
};
use crate::data::{truncate_recent, ItemId, SubsequenceIndex, UserId};

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Outer product `a ⊗ b` accumulated into `dst`.
fn add_outer(dst: &mut Array2<f64>, a: &Array1<f64>, b: &Array1<f64>) {
    for (mut row, &ai) in dst.rows_mut().into_iter().zip(a) {
        row.scaled_add(ai, b);
    }
}

/// One training sequence with a sampled negative for every next-item target.
#[derive(Debug, Clone, PartialEq)]
pub struct RecExample {
    pub user: UserId,
    pub items: Vec<ItemId>,
    /// `negatives[t]` is paired with the positive `items[t + 1]`.
    pub negatives: Vec<ItemId>,
}

impl RecExample {
    pub fn new(
        user: UserId,
        items: Vec<ItemId>,
        negatives: Vec<ItemId>,
    ) -> Result<Self, ModelError> {
        if items.len() < 2 {
            return Err(ModelError::OutOfRange(format!(
                "user {user}: a sequence of length {} has no next-item pair",
                items.len()
            )));
        }
        if negatives.len() != items.len() - 1 {
            return Err(ModelError::OutOfRange(format!(
                "user {user}: expected {} negatives, got {}",
                items.len() - 1,
                negatives.len()
            )));
        }
        Ok(Self {
            user,
            items,
            negatives,
        })
    }

    /// Inputs, positives and negatives restricted to the last `max_len` pairs.
    fn window(&self, max_len: usize) -> (&[ItemId], &[ItemId], &[ItemId]) {
        let n = self.items.len() - 1;
        let start = n.saturating_sub(max_len);
        (
            &self.items[start..n],
            &self.items[start + 1..],
            &self.negatives[start..],
        )
    }

    /// Number of scored positions.
    pub fn n_positions(&self, max_len: usize) -> usize {
        self.window(max_len).0.len()
    }

    /// Summed loss over positions; with `grads`, accumulates `scale · ∂/∂θ`.
    fn accumulate(
        &self,
        params: &ModelParams,
        cfg: &EncoderConfig,
        embeddings: &InputEmbeddings,
        dropout: Option<&mut dyn RngCore>,
        grads: Option<(&mut ModelParams, f64)>,
    ) -> Result<f64, ModelError> {
        let (inputs, pos, neg) = self.window(cfg.max_len);
        if let Some(&item) = pos.iter().chain(neg).find(|&&i| i >= params.n_items()) {
            return Err(ModelError::UnknownItem {
                item,
                n_items: params.n_items(),
            });
        }
        let trace = encode_hidden(params, cfg, inputs, embeddings, dropout)?;
        let h = trace.output();
        let out_items: Vec<ItemId> = pos.iter().chain(neg).copied().collect();
        let q = embeddings.resolve(params, &out_items);
        let (q_pos, q_neg) = (q.slice(s![..pos.len(), ..]), q.slice(s![pos.len().., ..]));
        let mut total = 0.0;
        let mut d_out = grads.as_ref().map(|_| Array2::zeros(h.dim()));
        let mut d_items: Vec<(ItemId, f64, usize)> = Vec::new();
        for t in 0..inputs.len() {
            let ht = h.row(t);
            let s_pos = ht.dot(&q_pos.row(t));
            let s_neg = ht.dot(&q_neg.row(t));
            total += softplus(-s_pos) + softplus(s_neg);
            if let Some(d) = d_out.as_mut() {
                let g_pos = sigmoid(s_pos) - 1.0;
                let g_neg = sigmoid(s_neg);
                let mut row = d.row_mut(t);
                row.scaled_add(g_pos, &q_pos.row(t));
                row.scaled_add(g_neg, &q_neg.row(t));
                d_items.push((pos[t], g_pos, t));
                d_items.push((neg[t], g_neg, t));
            }
        }
        if let (Some((grad, scale)), Some(mut d)) = (grads, d_out) {
            for (item, g, t) in d_items {
                grad.item_embeddings
                    .row_mut(item)
                    .scaled_add(scale * g * embeddings.q_scale(item), &h.row(t));
            }
            d.mapv_inplace(|v| v * scale);
            trace.backward(params, embeddings, &d, grad);
        }
        Ok(total)
    }
}

/// Mean next-item binary cross-entropy of a single sequence. Positives and
/// negatives are scored against the same (possibly enhanced) embeddings as
/// the inputs.
pub fn rec_loss(
    params: &ModelParams,
    cfg: &EncoderConfig,
    example: &RecExample,
    embeddings: &InputEmbeddings,
    dropout: Option<&mut dyn RngCore>,
) -> Result<f64, ModelError> {
    let sum = example.accumulate(params, cfg, embeddings, dropout, None)?;
    Ok(sum / example.n_positions(cfg.max_len) as f64)
}

/// A head user's distillation target: `p_u` from the full sequence and the
/// constant encoding `r̄_u` of its `R` most recent items.
#[derive(Debug, Clone, PartialEq)]
pub struct UserBranchTarget {
    pub user: UserId,
    pub weight: f64,
    pub target: Array1<f64>,
    pub recent: Array1<f64>,
}

impl UserBranchTarget {
    pub fn prepare(
        params: &ModelParams,
        cfg: &EncoderConfig,
        user: UserId,
        train_seq: &[ItemId],
        r: usize,
        weight: f64,
        embeddings: &InputEmbeddings,
    ) -> Result<Self, ModelError> {
        let recent = truncate_recent(train_seq, r)
            .map_err(|e| ModelError::OutOfRange(format!("user {user}: {e}")))?;
        let target = encode_sequence(params, cfg, train_seq, embeddings, None)?;
        let recent = encode_sequence(params, cfg, recent, embeddings, None)?;
        Ok(Self {
            user,
            weight,
            target,
            recent,
        })
    }

    fn accumulate(&self, params: &ModelParams, grads: Option<(&mut ModelParams, f64)>) -> f64 {
        if self.weight == 0.0 {
            return 0.0;
        }
        let err = params.user_generator.apply(&self.recent) - &self.target;
        let loss = self.weight * err.dot(&err);
        if let Some((grad, scale)) = grads {
            let g = err * (2.0 * self.weight * scale);
            add_outer(&mut grad.user_generator.weight, &g, &self.recent);
            grad.user_generator.bias += &g;
        }
        loss
    }
}

/// `w_u · ‖p_u − G_U(r̄_u)‖²`.
pub fn user_branch_loss(params: &ModelParams, target: &UserBranchTarget) -> f64 {
    target.accumulate(params, None)
}

/// A head item's distillation target: `q_i` and the constant mean encodings
/// of `K` sampled subsequences.
///
/// With `owner_sequences`, each subsequence encoding is enhanced by its
/// owner's representation, encoded from the owner's training sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemBranchTarget {
    pub item: ItemId,
    pub weight: f64,
    pub target: Array1<f64>,
    /// Mean of `f_θ(Ŝ)` over the sampled subsequences.
    pub mean_subsequence: Array1<f64>,
    /// `β ·` mean owner representation when subsequences are enhanced.
    pub owner_term: Option<Array1<f64>>,
}

impl ItemBranchTarget {
    #[allow(clippy::too_many_arguments)]
    pub fn prepare(
        params: &ModelParams,
        cfg: &EncoderConfig,
        index: &SubsequenceIndex,
        item: ItemId,
        k: usize,
        weight: f64,
        owner_sequences: Option<(f64, &[Vec<ItemId>])>,
        rng: &mut dyn RngCore,
    ) -> Result<Self, ModelError> {
        let pool = index.get(item);
        if k == 0 || k > pool.len() {
            return Err(ModelError::OutOfRange(format!(
                "item {item}: K = {k} outside 1..={}",
                pool.len()
            )));
        }
        let picked = sample(rng, pool.len(), k);
        let plain = InputEmbeddings::plain();
        let mut mean = Array1::zeros(params.dim());
        let mut owners = Array1::zeros(params.dim());
        for i in picked.iter() {
            let sub = &pool[i];
            mean += &encode_sequence(params, cfg, &sub.items, &plain, None)?;
            if let Some((_, seqs)) = owner_sequences {
                owners += &encode_sequence(params, cfg, &seqs[sub.owner], &plain, None)?;
            }
        }
        mean /= k as f64;
        let owner_term = owner_sequences.map(|(beta, _)| owners * (beta / k as f64));
        Ok(Self {
            item,
            weight,
            target: params.item_embeddings.row(item).to_owned(),
            mean_subsequence: mean,
            owner_term,
        })
    }

    /// `r̂_i`, with the user generator applied when enhancement is on.
    pub fn contextual_rep(&self, params: &ModelParams) -> Array1<f64> {
        match &self.owner_term {
            Some(owners) => params.user_generator.apply(&self.mean_subsequence) + owners,
            None => self.mean_subsequence.clone(),
        }
    }

    fn accumulate(&self, params: &ModelParams, grads: Option<(&mut ModelParams, f64)>) -> f64 {
        if self.weight == 0.0 {
            return 0.0;
        }
        let r_hat = self.contextual_rep(params);
        let err = params.item_generator.apply(&r_hat) - &self.target;
        let loss = self.weight * err.dot(&err);
        if let Some((grad, scale)) = grads {
            let g = err * (2.0 * self.weight * scale);
            add_outer(&mut grad.item_generator.weight, &g, &r_hat);
            grad.item_generator.bias += &g;
            if self.owner_term.is_some() {
                let d_r = params.item_generator.weight.t().dot(&g);
                add_outer(
                    &mut grad.user_generator.weight,
                    &d_r,
                    &self.mean_subsequence,
                );
                grad.user_generator.bias += &d_r;
            }
        }
        loss
    }
}

/// `w_i · ‖q_i − G_I(r̂_i)‖²`.
pub fn item_branch_loss(params: &ModelParams, target: &ItemBranchTarget) -> f64 {
    target.accumulate(params, None)
}

/// The four reported loss components.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub rec: f64,
    pub user_branch: f64,
    pub item_branch: f64,
    pub total: f64,
}

/// `λ_U · Σ L_u + λ_I · Σ L_i + L_rec`.
pub fn total_loss(
    rec: f64,
    user_branch: f64,
    item_branch: f64,
    lambda_u: f64,
    lambda_i: f64,
) -> LossBreakdown {
    LossBreakdown {
        rec,
        user_branch,
        item_branch,
        total: lambda_u * user_branch + lambda_i * item_branch + rec,
    }
}

/// Seed material for per-sequence dropout streams within one batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DropoutKey {
    pub seed: u64,
    pub stage: u64,
    pub epoch: u64,
    pub batch: u64,
}

/// Everything one optimiser step differentiates: the mean recommendation loss
/// over `rec` plus the weighted branch sums.
#[derive(Debug, Clone)]
pub struct BatchObjective {
    pub rec: Vec<RecExample>,
    pub users: Vec<UserBranchTarget>,
    pub items: Vec<ItemBranchTarget>,
    pub lambda_u: f64,
    pub lambda_i: f64,
    pub embeddings: InputEmbeddings,
    pub dropout: Option<DropoutKey>,
}

impl BatchObjective {
    /// A recommendation-only objective over plain embeddings.
    pub fn backbone(rec: Vec<RecExample>) -> Self {
        Self {
            rec,
            users: Vec::new(),
            items: Vec::new(),
            lambda_u: 0.0,
            lambda_i: 0.0,
            embeddings: InputEmbeddings::plain(),
            dropout: None,
        }
    }

    /// Input embeddings enhanced with `contexts` at scale `gamma`.
    pub fn with_contexts(
        mut self,
        params: &ModelParams,
        contexts: &TailContexts,
        gamma: f64,
    ) -> Self {
        self.embeddings = InputEmbeddings::enhanced(params, contexts, gamma);
        self
    }

    fn dropout_rng(&self, user: UserId) -> Option<crate::rng::StreamRng> {
        self.dropout.map(|k| {
            crate::rng::keyed(
                k.seed,
                crate::rng::Purpose::Dropout,
                &[k.stage, k.epoch, k.batch, user as u64],
            )
        })
    }

    fn n_positions(&self, cfg: &EncoderConfig) -> usize {
        self.rec.iter().map(|e| e.n_positions(cfg.max_len)).sum()
    }

    fn run(
        &self,
        params: &ModelParams,
        cfg: &EncoderConfig,
        with_grads: bool,
    ) -> Result<(LossBreakdown, Option<ModelParams>), ModelError> {
        enum Term<'a> {
            Rec(&'a RecExample),
            User(&'a UserBranchTarget),
            Item(&'a ItemBranchTarget),
        }
        let n_pos = self.n_positions(cfg).max(1) as f64;
        let terms: Vec<Term<'_>> = self
            .rec
            .iter()
            .map(Term::Rec)
            .chain(self.users.iter().map(Term::User))
            .chain(self.items.iter().map(Term::Item))
            .collect();
        let parts: Vec<(usize, f64, Option<ModelParams>)> = terms
            .par_iter()
            .map(|term| {
                let mut grad = with_grads.then(|| params.zeros_like());
                let (kind, value) = match term {
                    Term::Rec(ex) => {
                        let mut rng = self.dropout_rng(ex.user);
                        let drop = rng.as_mut().map(|r| r as &mut dyn RngCore);
                        let g = grad.as_mut().map(|g| (g, 1.0 / n_pos));
                        (0, ex.accumulate(params, cfg, &self.embeddings, drop, g)?)
                    }
                    Term::User(t) => {
                        let g = grad.as_mut().map(|g| (g, self.lambda_u));
                        (1, t.accumulate(params, g))
                    }
                    Term::Item(t) => {
                        let g = grad.as_mut().map(|g| (g, self.lambda_i));
                        (2, t.accumulate(params, g))
                    }
                };
                Ok((kind, value, grad))
            })
            .collect::<Result<_, ModelError>>()?;

        let mut sums = [0.0; 3];
        let mut total_grad = with_grads.then(|| params.zeros_like());
        for (kind, value, grad) in parts {
            sums[kind] += value;
            if let (Some(acc), Some(g)) = (total_grad.as_mut(), grad) {
                acc.add_scaled(1.0, &g);
            }
        }
        let breakdown = total_loss(
            sums[0] / n_pos,
            sums[1],
            sums[2],
            self.lambda_u,
            self.lambda_i,
        );
        Ok((breakdown, total_grad))
    }

    pub fn evaluate(
        &self,
        params: &ModelParams,
        cfg: &EncoderConfig,
    ) -> Result<LossBreakdown, ModelError> {
        Ok(self.run(params, cfg, false)?.0)
    }

    /// The loss and its exact gradient with respect to every parameter block.
    pub fn gradients(
        &self,
        params: &ModelParams,
        cfg: &EncoderConfig,
    ) -> Result<(LossBreakdown, ModelParams), ModelError> {
        let (loss, grad) = self.run(params, cfg, true)?;
        let grad = grad.expect("gradients requested");
        grad.check_finite()?;
        Ok((loss, grad))
    }
}
