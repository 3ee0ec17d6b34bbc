use std::collections::HashSet;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    optimizer_step, AdamState, BestModel, Checkpoint, CurriculumState, Stage, TrainConfig,
    TrainError,
};
use crate::data::{HeadTailPartition, ItemId, SplitDataset, SubsequenceIndex, UserId};
use crate::eval::{evaluate, EvalConfig, InferenceModel, MetricsReport, Target};
use crate::model::{
    user_representations, BatchObjective, ContextOptions, DropoutKey, EncoderConfig,
    InputEmbeddings, ItemBranchTarget, LossBreakdown, ModelParams, RecExample, TailContexts,
    UserBranchTarget,
};
use crate::rng::{keyed, Purpose};

/// Training inputs, all derived from the training portion of the split.
#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    pub split: &'a SplitDataset,
    pub partition: &'a HeadTailPartition,
    pub index: &'a SubsequenceIndex,
}

/// What an epoch optimises.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    /// Recommendation loss over plain embeddings.
    Backbone,
    /// Recommendation loss over enhanced inputs plus both branch losses.
    Melt,
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub stage: Stage,
    pub epoch: usize,
    /// Mean over the epoch's batches.
    pub loss: LossBreakdown,
    pub valid_hr: f64,
    pub valid_ndcg: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub records: Vec<EpochRecord>,
    /// Loss of every optimiser step, in order.
    pub step_losses: Vec<LossBreakdown>,
}

impl TrainOutcome {
    pub fn best_params(&self) -> &ModelParams {
        self.checkpoint.best_params()
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.checkpoint.best.as_ref().map(|b| b.epoch)
    }
}

pub struct Trainer<'a> {
    data: TrainData<'a>,
    encoder: EncoderConfig,
    cfg: TrainConfig,
    train_sets: Vec<HashSet<ItemId>>,
}

fn stage_key(stage: Stage) -> u64 {
    match stage {
        Stage::Pretrain => 0,
        Stage::Melt => 1,
    }
}

impl<'a> Trainer<'a> {
    pub fn new(
        data: TrainData<'a>,
        encoder: EncoderConfig,
        cfg: TrainConfig,
    ) -> Result<Self, TrainError> {
        encoder.validate()?;
        cfg.validate()?;
        let train_sets = data
            .split
            .train
            .iter()
            .map(|s| s.iter().copied().collect())
            .collect();
        Ok(Self {
            data,
            encoder,
            cfg,
            train_sets,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn encoder(&self) -> &EncoderConfig {
        &self.encoder
    }

    /// Freshly initialised parameters at the start of pretraining.
    pub fn start_pretrain(&self) -> Checkpoint {
        let mut rng = keyed(self.cfg.seed, Purpose::Init, &[]);
        let params = ModelParams::init(&self.encoder, self.data.split.n_items, &mut rng);
        self.fresh(Stage::Pretrain, params)
    }

    /// Fine-tuning state starting from `pretrained`, with a fresh optimiser.
    pub fn start_melt(&self, pretrained: &ModelParams) -> Result<Checkpoint, TrainError> {
        if !pretrained.compatible_with(&self.encoder, self.data.split.n_items) {
            return Err(TrainError::Config(
                "pretrained parameters do not match the encoder configuration".into(),
            ));
        }
        Ok(self.fresh(Stage::Melt, pretrained.clone()))
    }

    fn fresh(&self, stage: Stage, params: ModelParams) -> Checkpoint {
        Checkpoint {
            stage,
            epochs_done: 0,
            seed: self.cfg.seed,
            encoder: self.encoder.clone(),
            optimizer: AdamState::new(&params),
            params,
            best: None,
        }
    }

    pub fn pretrain(&self) -> Result<TrainOutcome, TrainError> {
        self.run(self.start_pretrain(), Objective::Backbone, &mut |_, _| true)
    }

    pub fn train_melt(&self, pretrained: &ModelParams) -> Result<TrainOutcome, TrainError> {
        self.run(
            self.start_melt(pretrained)?,
            Objective::Melt,
            &mut |_, _| true,
        )
    }

    fn stage_epochs(&self, stage: Stage) -> usize {
        match stage {
            Stage::Pretrain => self.cfg.pretrain_epochs,
            Stage::Melt => self.cfg.e_max,
        }
    }

    /// Runs the remaining epochs of `ckpt`'s stage. After each epoch
    /// `on_epoch` sees the log line and the new state; returning `false`
    /// stops early.
    pub fn run(
        &self,
        mut ckpt: Checkpoint,
        objective: Objective,
        on_epoch: &mut dyn FnMut(&EpochRecord, &Checkpoint) -> bool,
    ) -> Result<TrainOutcome, TrainError> {
        if ckpt.seed != self.cfg.seed || ckpt.encoder != self.encoder {
            return Err(TrainError::Config(
                "checkpoint seed or encoder differs from the configuration".into(),
            ));
        }
        if objective == Objective::Melt && self.data.partition.head_users.is_empty() {
            return Err(TrainError::Partition("users"));
        }
        if objective == Objective::Melt
            && (self.data.partition.kappa_u == 0 || self.data.partition.kappa_i == 0)
        {
            return Err(TrainError::Partition("items"));
        }
        let mut records = Vec::new();
        let mut step_losses = Vec::new();
        while ckpt.epochs_done < self.stage_epochs(ckpt.stage) {
            let started = Instant::now();
            let loss = self.epoch(&mut ckpt, objective, &mut step_losses)?;
            let report = self.validate(&ckpt.params, objective)?;
            let epoch = ckpt.epochs_done;
            ckpt.epochs_done += 1;
            let (hr, ndcg) = (report.overall.hr, report.overall.ndcg);
            if ckpt.best.as_ref().is_none_or(|b| hr > b.valid_hr) {
                ckpt.best = Some(BestModel {
                    epoch,
                    valid_hr: hr,
                    valid_ndcg: ndcg,
                    params: ckpt.params.clone(),
                });
            }
            let record = EpochRecord {
                stage: ckpt.stage,
                epoch,
                loss,
                valid_hr: hr,
                valid_ndcg: ndcg,
                seconds: started.elapsed().as_secs_f64(),
            };
            log::info!(
                "{} epoch {epoch}: loss {:.5} (rec {:.5}, user {:.5}, item {:.5}), valid HR@10 {hr:.4}",
                ckpt.stage,
                loss.total,
                loss.rec,
                loss.user_branch,
                loss.item_branch
            );
            let go_on = on_epoch(&record, &ckpt);
            records.push(record);
            if !go_on {
                break;
            }
        }
        Ok(TrainOutcome {
            checkpoint: ckpt,
            records,
            step_losses,
        })
    }

    /// Tail-item contextual representations under `params`.
    pub fn contexts(&self, params: &ModelParams) -> Result<TailContexts, TrainError> {
        let reps = user_representations(params, &self.encoder, &self.data.split.train)?;
        Ok(TailContexts::build(
            params,
            &self.encoder,
            self.data.partition,
            self.data.index,
            &reps,
            ContextOptions {
                beta: self.cfg.beta,
                enhance_subsequences: self.cfg.enhance_subsequences,
                cap: self.cfg.context_cap,
                seed: self.cfg.seed,
            },
        )?)
    }

    /// Evaluates `params` under `objective`'s inference path.
    pub fn evaluate(
        &self,
        params: &ModelParams,
        objective: Objective,
        eval: &EvalConfig,
    ) -> Result<MetricsReport, TrainError> {
        let report = match objective {
            Objective::Backbone => {
                let model = InferenceModel::backbone(params, &self.encoder);
                evaluate(&model, self.data.split, self.data.partition, eval)?
            }
            Objective::Melt => {
                let contexts = self.contexts(params)?;
                let model = InferenceModel::enhanced(
                    params,
                    &self.encoder,
                    self.data.partition,
                    &contexts,
                    self.cfg.beta,
                    self.cfg.gamma,
                );
                evaluate(&model, self.data.split, self.data.partition, eval)?
            }
        };
        Ok(report)
    }

    fn validate(
        &self,
        params: &ModelParams,
        objective: Objective,
    ) -> Result<MetricsReport, TrainError> {
        let eval = EvalConfig {
            k: 10,
            n_negatives: self.cfg.valid_negatives,
            seed: self.cfg.valid_seed,
            target: Target::Validation,
            append_validation: false,
        };
        self.evaluate(params, objective, &eval)
    }

    fn negatives(&self, user: UserId, n: usize, keys: &[u64]) -> Result<Vec<ItemId>, TrainError> {
        let seen = &self.train_sets[user];
        let n_items = self.data.split.n_items;
        if seen.len() >= n_items {
            return Err(TrainError::Config(format!(
                "user {user} consumed every item; no negatives exist"
            )));
        }
        let mut rng = keyed(self.cfg.seed, Purpose::Negatives, keys);
        Ok((0..n)
            .map(|_| loop {
                let item = rng.random_range(0..n_items);
                if !seen.contains(&item) {
                    break item;
                }
            })
            .collect())
    }

    fn epoch(
        &self,
        ckpt: &mut Checkpoint,
        objective: Objective,
        step_losses: &mut Vec<LossBreakdown>,
    ) -> Result<LossBreakdown, TrainError> {
        let split = self.data.split;
        let partition = self.data.partition;
        let seed = self.cfg.seed;
        let stage = stage_key(ckpt.stage);
        let e = ckpt.epochs_done;
        let ek = e as u64;
        let melt = objective == Objective::Melt;

        let mut users: Vec<UserId> = (0..split.n_users()).collect();
        users.shuffle(&mut keyed(seed, Purpose::UserShuffle, &[stage, ek]));
        let n_batches = users.len().div_ceil(self.cfg.batch_size).max(1);

        let mut head_items = partition.head_items.clone();
        head_items.shuffle(&mut keyed(seed, Purpose::ItemShuffle, &[stage, ek]));
        let item_batch = head_items.len().div_ceil(n_batches);

        let item_count_bounds = {
            let counts = partition
                .head_items
                .iter()
                .map(|&i| self.data.index.count(i));
            let min = counts.clone().min().unwrap_or(0);
            (min, counts.max().unwrap_or(0))
        };
        let curriculum = CurriculumState {
            epoch: e,
            e_max: self.cfg.e_max,
            user_bounds: (partition.min_user_len, partition.max_user_len),
            item_bounds: item_count_bounds,
        };
        let contexts = if melt {
            Some(self.contexts(&ckpt.params)?)
        } else {
            None
        };
        let owners = self
            .cfg
            .enhance_subsequences
            .then_some((self.cfg.beta, split.train.as_slice()));

        let mut sum = LossBreakdown::default();
        for (b, batch) in users.chunks(self.cfg.batch_size).enumerate() {
            let bk = b as u64;
            let params = &ckpt.params;
            let mut rec = Vec::with_capacity(batch.len());
            for &user in batch {
                let seq = &split.train[user];
                if seq.len() < 2 {
                    continue;
                }
                let negatives = self.negatives(user, seq.len() - 1, &[stage, ek, user as u64])?;
                rec.push(RecExample::new(user, seq.clone(), negatives)?);
            }
            let mut objective_b = BatchObjective::backbone(rec);
            objective_b.dropout = Some(DropoutKey {
                seed,
                stage,
                epoch: ek,
                batch: bk,
            });
            if let Some(contexts) = &contexts {
                objective_b.embeddings =
                    InputEmbeddings::enhanced(params, contexts, self.cfg.gamma);
                objective_b.lambda_u = self.cfg.lambda_u;
                objective_b.lambda_i = self.cfg.lambda_i;
                for &user in batch.iter().filter(|&&u| !partition.is_tail_user(u)) {
                    let seq = &split.train[user];
                    let mut rng =
                        keyed(seed, Purpose::UserTruncation, &[stage, ek, bk, user as u64]);
                    let r = rng.random_range(1..=partition.kappa_u);
                    let w = curriculum.user_weight(seq.len())?;
                    objective_b.users.push(UserBranchTarget::prepare(
                        params,
                        &self.encoder,
                        user,
                        seq,
                        r,
                        w,
                        &objective_b.embeddings,
                    )?);
                }
                for j in 0..item_batch {
                    let item = head_items[(b * item_batch + j) % head_items.len()];
                    let mut rng =
                        keyed(seed, Purpose::ItemSubsample, &[stage, ek, bk, item as u64]);
                    let k = rng.random_range(1..=partition.kappa_i);
                    let w = curriculum.item_weight(self.data.index.count(item))?;
                    objective_b.items.push(ItemBranchTarget::prepare(
                        params,
                        &self.encoder,
                        self.data.index,
                        item,
                        k,
                        w,
                        owners,
                        &mut rng,
                    )?);
                }
            }
            let (loss, grads) = objective_b
                .gradients(params, &self.encoder)
                .map_err(|err| match err {
                    crate::model::ModelError::NonFinite { .. } => TrainError::Divergence {
                        stage: ckpt.stage,
                        epoch: e,
                    },
                    other => other.into(),
                })?;
            if !loss.total.is_finite() {
                return Err(TrainError::Divergence {
                    stage: ckpt.stage,
                    epoch: e,
                });
            }
            optimizer_step(
                &mut ckpt.params,
                &grads,
                &mut ckpt.optimizer,
                &self.cfg.adam(),
            )?;
            sum.rec += loss.rec;
            sum.user_branch += loss.user_branch;
            sum.item_branch += loss.item_branch;
            sum.total += loss.total;
            step_losses.push(loss);
        }
        let n = n_batches as f64;
        Ok(LossBreakdown {
            rec: sum.rec / n,
            user_branch: sum.user_branch / n,
            item_branch: sum.item_branch / n,
            total: sum.total / n,
        })
    }
}
