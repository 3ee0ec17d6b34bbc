use ndarray::{Array1, Array2};

use super::EvalError;
use crate::data::{HeadTailPartition, ItemId, UserId};
use crate::model::{
    encode_sequence, enhance_tail_user_rep, EncoderConfig, InputEmbeddings, ModelParams,
    TailContexts,
};

/// Frozen parameters plus the per-item embeddings used for scoring.
///
/// The backbone variant scores with plain `q_i` and plain user
/// representations. The enhanced variant embeds tail items with
/// `G_I(r_i) + γ q_i` on both the input and the candidate side and lifts tail
/// users to `G_U(p_u) + β p_u`.
pub struct InferenceModel<'a> {
    params: &'a ModelParams,
    cfg: &'a EncoderConfig,
    tail_users: Option<(&'a HeadTailPartition, f64)>,
    inputs: InputEmbeddings,
    scoring: Array2<f64>,
}

impl<'a> InferenceModel<'a> {
    pub fn backbone(params: &'a ModelParams, cfg: &'a EncoderConfig) -> Self {
        let scoring = params
            .item_embeddings
            .slice(ndarray::s![..params.n_items(), ..])
            .to_owned();
        Self {
            params,
            cfg,
            tail_users: None,
            inputs: InputEmbeddings::plain(),
            scoring,
        }
    }

    pub fn enhanced(
        params: &'a ModelParams,
        cfg: &'a EncoderConfig,
        partition: &'a HeadTailPartition,
        contexts: &TailContexts,
        beta: f64,
        gamma: f64,
    ) -> Self {
        let inputs = InputEmbeddings::enhanced(params, contexts, gamma);
        let mut scoring = Array2::zeros((params.n_items(), params.dim()));
        for (item, mut row) in scoring.rows_mut().into_iter().enumerate() {
            if partition.is_tail_item(item) && contexts.get(item).is_none() {
                log::debug!(
                    "tail item {item} has no subsequences; scoring with its plain embedding"
                );
            }
            row.assign(&inputs.embedding(params, item));
        }
        Self {
            params,
            cfg,
            tail_users: Some((partition, beta)),
            inputs,
            scoring,
        }
    }

    /// The representation a user's candidates are scored against.
    pub fn user_rep(&self, user: UserId, seq: &[ItemId]) -> Result<Array1<f64>, EvalError> {
        let p = encode_sequence(self.params, self.cfg, seq, &self.inputs, None)?;
        Ok(match self.tail_users {
            Some((partition, beta)) if partition.is_tail_user(user) => {
                enhance_tail_user_rep(self.params, &p, &p, beta)
            }
            _ => p,
        })
    }

    /// Scores in candidate order.
    pub fn scores(
        &self,
        user: UserId,
        seq: &[ItemId],
        candidates: &[ItemId],
    ) -> Result<Vec<f64>, EvalError> {
        if candidates.is_empty() {
            return Err(EvalError::EmptyCandidates);
        }
        let rep = self.user_rep(user, seq)?;
        candidates
            .iter()
            .map(|&item| {
                if item >= self.params.n_items() {
                    return Err(EvalError::Model(crate::model::ModelError::UnknownItem {
                        item,
                        n_items: self.params.n_items(),
                    }));
                }
                Ok(self.scoring.row(item).dot(&rep))
            })
            .collect()
    }

    /// Candidates by descending score, ties by ascending item id.
    pub fn score_candidates(
        &self,
        user: UserId,
        seq: &[ItemId],
        candidates: &[ItemId],
    ) -> Result<Vec<(ItemId, f64)>, EvalError> {
        let scores = self.scores(user, seq, candidates)?;
        let mut ranked: Vec<(ItemId, f64)> = candidates.iter().copied().zip(scores).collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        Ok(ranked)
    }
}

/// 1-based rank of `candidates[target]` under the descending-score,
/// ascending-id order.
pub fn rank_of(candidates: &[ItemId], scores: &[f64], target: usize) -> usize {
    let (t_item, t_score) = (candidates[target], scores[target]);
    1 + candidates
        .iter()
        .zip(scores)
        .filter(|&(&item, &s)| s > t_score || (s == t_score && item < t_item))
        .count()
}
