//! Shared oracles and fixtures for the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use melt::data::{
    build_subsequence_index, partition_head_tail, HeadTailPartition, SplitDataset, SubsequenceIndex,
};
use melt::model::{
    BatchObjective, EncoderConfig, InputEmbeddings, ItemBranchTarget, ModelParams, RecExample,
    TailContexts, UserBranchTarget,
};
use melt::rng::{keyed, Purpose};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-4;

/// 8 users over 12 items with hand-picked overlapping histories.
pub fn toy_split() -> SplitDataset {
    let train: Vec<Vec<usize>> = vec![
        vec![0, 1, 2, 3, 4, 5, 6, 7],
        vec![1, 2, 0, 3, 5, 4, 8],
        vec![0, 2, 4, 6, 8, 10, 1],
        vec![3, 1, 0, 2, 9],
        vec![5, 0, 1, 11],
        vec![2, 0, 7],
        vec![0, 1, 3],
        vec![4, 0, 2],
    ];
    SplitDataset {
        n_items: 12,
        valid: vec![8, 9, 3, 4, 2, 1, 10, 11],
        test: vec![9, 10, 11, 5, 6, 3, 2, 1],
        train,
    }
}

pub fn toy_encoder() -> EncoderConfig {
    EncoderConfig {
        dim: 8,
        max_len: 6,
        n_blocks: 1,
        n_heads: 2,
        dropout: 0.0,
    }
}

pub struct Toy {
    pub split: SplitDataset,
    pub partition: HeadTailPartition,
    pub index: SubsequenceIndex,
    pub cfg: EncoderConfig,
    pub params: ModelParams,
}

/// The toy instance with random non-zero generators and layer-norm
/// parameters, so every block carries gradient.
pub fn toy(seed: u64) -> Toy {
    let split = toy_split();
    let partition = partition_head_tail(&split, 0.5).unwrap();
    let cfg = toy_encoder();
    let index = build_subsequence_index(&split, true, cfg.max_len);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ModelParams::init(&cfg, split.n_items, &mut rng);
    let pad = params.pad_id();
    for (name, t) in params.tensors_mut() {
        if name.contains("generator") || name.contains("norm") || name.ends_with("bias") {
            for v in t.iter_mut() {
                *v += rng.random_range(-0.3..0.3);
            }
        }
    }
    params.item_embeddings.row_mut(pad).fill(0.0);
    Toy {
        split,
        partition,
        index,
        cfg,
        params,
    }
}

pub fn rec_examples(toy: &Toy, seed: u64) -> Vec<RecExample> {
    (0..toy.split.n_users())
        .map(|u| {
            let items = toy.split.train[u].clone();
            let mut rng = keyed(seed, Purpose::Negatives, &[u as u64]);
            let negatives = (1..items.len())
                .map(|_| loop {
                    let i = rng.random_range(0..toy.split.n_items);
                    if !items.contains(&i) {
                        break i;
                    }
                })
                .collect();
            RecExample::new(u, items, negatives).unwrap()
        })
        .collect()
}

/// Contexts for every tail item, from the current parameters.
pub fn toy_contexts(toy: &Toy) -> TailContexts {
    let reps = melt::model::user_representations(&toy.params, &toy.cfg, &toy.split.train).unwrap();
    TailContexts::build(
        &toy.params,
        &toy.cfg,
        &toy.partition,
        &toy.index,
        &reps,
        melt::model::ContextOptions {
            beta: 0.7,
            enhance_subsequences: true,
            cap: 64,
            seed: 3,
        },
    )
    .unwrap()
}

pub fn user_targets(toy: &Toy, embeddings: &InputEmbeddings, weight: f64) -> Vec<UserBranchTarget> {
    toy.partition
        .head_users
        .iter()
        .map(|&u| {
            let seq = &toy.split.train[u];
            let r = 1 + u % toy.partition.kappa_u;
            UserBranchTarget::prepare(&toy.params, &toy.cfg, u, seq, r, weight, embeddings).unwrap()
        })
        .collect()
}

pub fn item_targets(toy: &Toy, weight: f64, beta: f64) -> Vec<ItemBranchTarget> {
    toy.partition
        .head_items
        .iter()
        .map(|&i| {
            let mut rng = keyed(5, Purpose::ItemSubsample, &[i as u64]);
            let k = rng.random_range(1..=toy.partition.kappa_i);
            ItemBranchTarget::prepare(
                &toy.params,
                &toy.cfg,
                &toy.index,
                i,
                k,
                weight,
                Some((beta, toy.split.train.as_slice())),
                &mut rng,
            )
            .unwrap()
        })
        .collect()
}

/// Denominator floor for blocks whose gradient is analytically zero (the
/// key bias shifts every attention logit of a row equally).
pub const FD_FLOOR: f64 = 1e-3;

/// Per-block relative error `‖a − n‖₂ / max(‖a‖₂, ‖n‖₂, FD_FLOOR)` between
/// the analytic gradient and central finite differences of
/// `objective.evaluate().total`, paired with `‖a‖₂`.
pub fn fd_block_errors(
    objective: &BatchObjective,
    params: &ModelParams,
    cfg: &EncoderConfig,
) -> BTreeMap<String, (f64, f64)> {
    let (_, analytic) = objective.gradients(params, cfg).unwrap();
    let mut probe = params.clone();
    let names: Vec<String> = params.tensors().into_iter().map(|(n, _)| n).collect();
    let mut out = BTreeMap::new();
    for (b, name) in names.iter().enumerate() {
        let a = analytic.tensors()[b].1.to_vec();
        let mut diff2 = 0.0;
        let mut a2 = 0.0;
        let mut n2 = 0.0;
        for (i, &ai) in a.iter().enumerate() {
            let orig = params.tensors()[b].1[i];
            probe.tensors_mut()[b].1[i] = orig + FD_STEP;
            let up = objective.evaluate(&probe, cfg).unwrap().total;
            probe.tensors_mut()[b].1[i] = orig - FD_STEP;
            let down = objective.evaluate(&probe, cfg).unwrap().total;
            probe.tensors_mut()[b].1[i] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            diff2 += (ai - numeric).powi(2);
            a2 += ai * ai;
            n2 += numeric * numeric;
        }
        let scale = a2.sqrt().max(n2.sqrt()).max(FD_FLOOR);
        let rel = diff2.sqrt() / scale;
        out.insert(name.clone(), (rel, a2.sqrt()));
    }
    out
}

/// The objectives of the gradient check: `L_rec` over plain and enhanced
/// inputs, each branch alone, and the full weighted total.
pub fn gradient_cases() -> Vec<(&'static str, Toy, BatchObjective)> {
    let mut cases = Vec::new();

    let t = toy(1);
    let obj = BatchObjective::backbone(rec_examples(&t, 2));
    cases.push(("rec", t, obj));

    let t = toy(2);
    let obj = BatchObjective::backbone(rec_examples(&t, 3)).with_contexts(
        &t.params,
        &toy_contexts(&t),
        0.6,
    );
    cases.push(("rec_enhanced", t, obj));

    let t = toy(3);
    let mut obj = BatchObjective::backbone(Vec::new());
    obj.embeddings = InputEmbeddings::enhanced(&t.params, &toy_contexts(&t), 0.4);
    obj.users = user_targets(&t, &obj.embeddings, 0.8);
    obj.lambda_u = 1.0;
    cases.push(("user_branch", t, obj));

    let t = toy(4);
    let mut obj = BatchObjective::backbone(Vec::new());
    obj.items = item_targets(&t, 0.9, 0.7);
    obj.lambda_i = 1.0;
    cases.push(("item_branch", t, obj));

    let t = toy(5);
    let mut obj = BatchObjective::backbone(rec_examples(&t, 6)).with_contexts(
        &t.params,
        &toy_contexts(&t),
        0.5,
    );
    obj.users = user_targets(&t, &obj.embeddings, 0.6);
    obj.items = item_targets(&t, 0.7, 1.0);
    obj.lambda_u = 0.3;
    obj.lambda_i = 0.2;
    cases.push(("total", t, obj));

    cases
}

/// Random split with at most `max_users` users over at most `max_items`
/// items; every training sequence has at least one event.
pub fn random_split<R: Rng>(rng: &mut R, max_users: usize, max_items: usize) -> SplitDataset {
    let n_items = rng.random_range(2..=max_items);
    let n_users = rng.random_range(1..=max_users);
    let mut split = SplitDataset {
        n_items,
        train: Vec::new(),
        valid: Vec::new(),
        test: Vec::new(),
    };
    for _ in 0..n_users {
        let len = rng.random_range(1..=12);
        split
            .train
            .push((0..len).map(|_| rng.random_range(0..n_items)).collect());
        split.valid.push(rng.random_range(0..n_items));
        split.test.push(rng.random_range(0..n_items));
    }
    split
}

/// `(owner, reversed, position, items)` for every subsequence, by a direct
/// double loop: forward prefixes and reversed suffixes cut to the `max_len`
/// elements nearest the key.
pub type OracleEntry = (usize, bool, usize, Vec<usize>);

pub fn brute_force_index(
    split: &SplitDataset,
    include_reversed: bool,
    max_len: usize,
) -> Vec<Vec<OracleEntry>> {
    let mut out = vec![Vec::new(); split.n_items];
    for (u, seq) in split.train.iter().enumerate() {
        for t in 0..seq.len() {
            let prefix: Vec<usize> = seq[..=t].to_vec();
            let keep = prefix.len().min(max_len);
            out[seq[t]].push((u, false, t, prefix[prefix.len() - keep..].to_vec()));
            if include_reversed {
                let mut suffix: Vec<usize> = seq[t..].to_vec();
                suffix.reverse();
                let keep = suffix.len().min(max_len);
                out[seq[t]].push((u, true, t, suffix[suffix.len() - keep..].to_vec()));
            }
        }
    }
    for list in &mut out {
        list.sort();
    }
    out
}

pub fn index_entries(index: &SubsequenceIndex) -> Vec<Vec<OracleEntry>> {
    (0..index.n_items())
        .map(|i| {
            let mut list: Vec<OracleEntry> = index
                .get(i)
                .iter()
                .map(|s| {
                    (
                        s.owner,
                        s.direction == melt::data::Direction::Reversed,
                        s.position,
                        s.items.clone(),
                    )
                })
                .collect();
            list.sort();
            list
        })
        .collect()
}

/// Rank of `target` by a full sort on (score descending, id ascending).
pub fn exhaustive_rank(candidates: &[usize], scores: &[f64], target: usize) -> usize {
    let mut order: Vec<(usize, f64)> = candidates
        .iter()
        .copied()
        .zip(scores.iter().copied())
        .collect();
    order.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    1 + order.iter().position(|&(i, _)| i == target).unwrap()
}

pub fn toy_train_config() -> melt::train::TrainConfig {
    melt::train::TrainConfig {
        alpha: 0.5,
        beta: 1.0,
        gamma: 1.0,
        lambda_u: 0.0,
        lambda_i: 0.0,
        pretrain_epochs: 2,
        e_max: 3,
        batch_size: 3,
        seed: 11,
        valid_negatives: 2,
        ..melt::train::TrainConfig::default()
    }
}

pub fn toy_eval() -> melt::eval::EvalConfig {
    melt::eval::EvalConfig {
        k: 2,
        n_negatives: 2,
        seed: 4,
        ..melt::eval::EvalConfig::default()
    }
}

/// Outcome of fine-tuning the toy instance through the enhanced path with
/// neutral settings, compared against plain continued training.
pub struct Equivalence {
    pub steps: usize,
    pub branch_loss: f64,
    pub losses_equal: bool,
    pub params_equal: bool,
    pub rankings_equal: bool,
}

pub fn backbone_equivalence() -> Equivalence {
    use melt::eval::InferenceModel;
    use melt::train::{Objective, TrainData, Trainer};

    let split = toy_split();
    let partition = partition_head_tail(&split, 0.5).unwrap();
    let encoder = EncoderConfig {
        dropout: 0.2,
        ..toy_encoder()
    };
    let index = build_subsequence_index(&split, true, encoder.max_len);
    let data = TrainData {
        split: &split,
        partition: &partition,
        index: &index,
    };
    let trainer = Trainer::new(data, encoder.clone(), toy_train_config()).unwrap();
    let pretrained = trainer.pretrain().unwrap();
    let params = pretrained.best_params();

    let melt = trainer.train_melt(params).unwrap();
    let plain = trainer
        .run(
            trainer.start_melt(params).unwrap(),
            Objective::Backbone,
            &mut |_, _| true,
        )
        .unwrap();
    let losses_equal = melt.step_losses.len() == plain.step_losses.len()
        && melt
            .step_losses
            .iter()
            .zip(&plain.step_losses)
            .all(|(m, p)| {
                m.rec.to_bits() == p.rec.to_bits() && m.total.to_bits() == p.total.to_bits()
            });
    let params_equal = melt.checkpoint.params == plain.checkpoint.params;

    let tuned = &melt.checkpoint.params;
    let contexts = trainer.contexts(tuned).unwrap();
    let enhanced = InferenceModel::enhanced(tuned, &encoder, &partition, &contexts, 1.0, 1.0);
    let backbone = InferenceModel::backbone(tuned, &encoder);
    let all: Vec<usize> = (0..split.n_items).collect();
    let mut rankings_equal = contexts.n_present() > 0;
    for u in 0..split.n_users() {
        let a = enhanced.score_candidates(u, &split.train[u], &all).unwrap();
        let b = backbone.score_candidates(u, &split.train[u], &all).unwrap();
        rankings_equal &= a
            .iter()
            .zip(&b)
            .all(|(x, y)| x.0 == y.0 && x.1.to_bits() == y.1.to_bits());
    }
    let ra = trainer
        .evaluate(tuned, Objective::Melt, &toy_eval())
        .unwrap();
    let rb = trainer
        .evaluate(tuned, Objective::Backbone, &toy_eval())
        .unwrap();
    rankings_equal &= ra.records == rb.records;

    Equivalence {
        steps: melt.step_losses.len(),
        branch_loss: melt
            .step_losses
            .iter()
            .map(|l| l.user_branch + l.item_branch)
            .sum(),
        losses_equal,
        params_equal,
        rankings_equal,
    }
}

/// Replaces every validation and test item with a random one.
pub fn mutate_held_out<R: Rng>(split: &SplitDataset, rng: &mut R) -> SplitDataset {
    let mut out = split.clone();
    for u in 0..out.n_users() {
        out.valid[u] = rng.random_range(0..out.n_items);
        out.test[u] = rng.random_range(0..out.n_items);
    }
    out
}

/// Audits that held-out items never reach popularity, the index, the
/// partition or the training losses. Returns the first violation.
pub fn split_hygiene_audit(trials: usize) -> Result<usize, String> {
    use melt::train::{TrainData, Trainer};

    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for trial in 0..trials {
        let split = random_split(&mut rng, 20, 15);
        let other = mutate_held_out(&split, &mut rng);
        if split.train_popularity() != other.train_popularity() {
            return Err(format!("trial {trial}: popularity moved"));
        }
        for rev in [false, true] {
            if build_subsequence_index(&split, rev, 50) != build_subsequence_index(&other, rev, 50)
            {
                return Err(format!("trial {trial}: index moved"));
            }
        }
        for alpha in [0.2, 0.5] {
            if partition_head_tail(&split, alpha).unwrap()
                != partition_head_tail(&other, alpha).unwrap()
            {
                return Err(format!("trial {trial}: partition moved at alpha {alpha}"));
            }
        }
    }

    let split = toy_split();
    let other = mutate_held_out(&split, &mut rng);
    let losses = |split: &SplitDataset| {
        let partition = partition_head_tail(split, 0.5).unwrap();
        let index = build_subsequence_index(split, true, 6);
        let data = TrainData {
            split,
            partition: &partition,
            index: &index,
        };
        let cfg = melt::train::TrainConfig {
            lambda_u: 0.1,
            lambda_i: 0.1,
            ..toy_train_config()
        };
        let trainer = Trainer::new(data, toy_encoder(), cfg).unwrap();
        let pre = trainer.pretrain().unwrap();
        let tuned = trainer.train_melt(&pre.checkpoint.params).unwrap();
        (pre.step_losses, tuned.step_losses)
    };
    if losses(&split) != losses(&other) {
        return Err("training losses depend on held-out items".into());
    }
    Ok(trials)
}

/// Small end-to-end configuration for driving the binary.
pub fn pipeline_config() -> serde_json::Value {
    serde_json::json!({
        "schema_version": 1,
        "encoder": { "dim": 8, "max_len": 20, "n_blocks": 1, "n_heads": 2, "dropout": 0.2 },
        "train": {
            "pretrain_epochs": 2, "e_max": 2, "batch_size": 32, "gamma": 1.0,
            "seed": 5, "valid_negatives": 20
        },
        "eval": { "n_negatives": 20, "seed": 3 },
        "synthetic": { "n_users": 120, "n_items": 80, "mean_seq_len": 10.0, "seed": 8 }
    })
}

pub fn melt_bin() -> std::process::Command {
    std::process::Command::new(env!("CARGO_BIN_EXE_melt"))
}

/// Runs `melt` with `args`, returning the exit code and combined output.
pub fn melt(args: &[&str]) -> (i32, String) {
    let out = melt_bin()
        .args(args)
        .env_remove("MELT_WORKDIR")
        .output()
        .expect("binary runs");
    let text =
        String::from_utf8_lossy(&out.stdout).to_string() + &String::from_utf8_lossy(&out.stderr);
    (out.status.code().unwrap_or(-1), text)
}

pub fn must(args: &[&str]) -> String {
    let (code, text) = melt(args);
    assert_eq!(code, 0, "melt {args:?} failed: {text}");
    text
}

/// Writes the config and a synthetic log under `root` and prepares `root/wd`.
pub fn prepared_workdir(root: &std::path::Path) -> std::path::PathBuf {
    let config = root.join("config.json");
    std::fs::write(
        &config,
        serde_json::to_string_pretty(&pipeline_config()).unwrap(),
    )
    .unwrap();
    let log = root.join("log.tsv");
    let wd = root.join("wd");
    must(&[
        "synth",
        "--config",
        config.to_str().unwrap(),
        "--out",
        log.to_str().unwrap(),
    ]);
    must(&[
        "prepare",
        "--data",
        log.to_str().unwrap(),
        "--workdir",
        wd.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
    ]);
    wd
}

/// prepare → pretrain → train → evaluate under `root`; returns the workdir.
pub fn full_pipeline(root: &std::path::Path) -> std::path::PathBuf {
    let wd = prepared_workdir(root);
    let w = wd.to_str().unwrap();
    must(&["pretrain", "--workdir", w]);
    must(&["train", "--workdir", w]);
    must(&["evaluate", "--workdir", w]);
    must(&["evaluate", "--workdir", w, "--checkpoint", "pretrain"]);
    wd
}

/// Every file below `dir`, keyed by relative path.
pub fn snapshot(dir: &std::path::Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_file() {
            out.insert(
                path.file_name().unwrap().to_string_lossy().to_string(),
                std::fs::read(&path).unwrap(),
            );
        }
    }
    out
}

/// Two identical pipelines, then a pipeline whose fine-tuning is split
/// across two invocations. Returns a description of the first mismatch.
pub fn determinism_check() -> Result<usize, String> {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b, c) = (
        tmp.path().join("a"),
        tmp.path().join("b"),
        tmp.path().join("c"),
    );
    for d in [&a, &b, &c] {
        std::fs::create_dir_all(d).unwrap();
    }
    let wa = full_pipeline(&a);
    let wb = full_pipeline(&b);
    let reports = snapshot(&wa.join("reports"));
    if reports.len() != 6 {
        return Err(format!("expected 6 report files, found {}", reports.len()));
    }
    if reports != snapshot(&wb.join("reports")) {
        return Err("reports differ between identical runs".into());
    }
    for ckpt in ["pretrain.ckpt", "melt.ckpt"] {
        if std::fs::read(wa.join("checkpoints").join(ckpt)).unwrap()
            != std::fs::read(wb.join("checkpoints").join(ckpt)).unwrap()
        {
            return Err(format!("{ckpt} differs between identical runs"));
        }
    }

    let wc = prepared_workdir(&c);
    let w = wc.to_str().unwrap();
    must(&["pretrain", "--workdir", w, "--max-epochs", "1"]);
    let latest = wc.join("checkpoints/pretrain-latest.ckpt");
    must(&[
        "pretrain",
        "--workdir",
        w,
        "--from-checkpoint",
        latest.to_str().unwrap(),
    ]);
    must(&["train", "--workdir", w, "--max-epochs", "1"]);
    if wc.join("checkpoints/melt.ckpt").exists() {
        return Err("an interrupted run wrote the final checkpoint".into());
    }
    let latest = wc.join("checkpoints/melt-latest.ckpt");
    must(&[
        "train",
        "--workdir",
        w,
        "--from-checkpoint",
        latest.to_str().unwrap(),
    ]);
    must(&["evaluate", "--workdir", w]);
    must(&["evaluate", "--workdir", w, "--checkpoint", "pretrain"]);
    for ckpt in ["pretrain.ckpt", "melt.ckpt"] {
        if std::fs::read(wa.join("checkpoints").join(ckpt)).unwrap()
            != std::fs::read(wc.join("checkpoints").join(ckpt)).unwrap()
        {
            return Err(format!("resumed {ckpt} differs from the uninterrupted one"));
        }
    }
    if reports != snapshot(&wc.join("reports")) {
        return Err("resumed reports differ".into());
    }
    Ok(reports.len())
}

/// A split where every user's unconsumed pool has exactly `n_neg` items, so
/// the candidate set is fixed and the oracle can rebuild it.
pub fn metric_instance(rng: &mut ChaCha8Rng) -> (SplitDataset, usize) {
    let n_items = rng.random_range(6..=12);
    let n_neg = rng.random_range(1..=n_items - 4);
    let n_users = rng.random_range(2..=6);
    let mut split = SplitDataset {
        n_items,
        train: Vec::new(),
        valid: Vec::new(),
        test: Vec::new(),
    };
    for _ in 0..n_users {
        let mut items: Vec<usize> = (0..n_items).collect();
        for i in (1..items.len()).rev() {
            items.swap(i, rng.random_range(0..=i));
        }
        let consumed = n_items - n_neg;
        split.test.push(items[0]);
        split.valid.push(items[1]);
        split.train.push(items[2..consumed].to_vec());
    }
    (split, n_neg)
}

/// Runs `evaluate` on `trials` random instances with at most 12 candidates
/// and checks every rank, hit and NDCG against `exhaustive_rank`.
pub fn metric_oracle(trials: u64) -> Result<u64, String> {
    use melt::eval::{evaluate, EvalConfig, InferenceModel, Target};
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let cfg = EncoderConfig {
        dim: 4,
        max_len: 10,
        n_blocks: 1,
        n_heads: 1,
        dropout: 0.0,
    };
    for trial in 0..trials {
        let (split, n_neg) = metric_instance(&mut rng);
        let mut params = ModelParams::init(&cfg, split.n_items, &mut rng);
        if trial % 3 == 0 {
            let copy = params.item_embeddings.row(0).to_owned();
            for i in 1..split.n_items / 2 {
                params.item_embeddings.row_mut(i).assign(&copy);
            }
        }
        let partition = partition_head_tail(&split, 0.5).unwrap();
        let model = InferenceModel::backbone(&params, &cfg);
        for target in [Target::Test, Target::Validation] {
            let eval = EvalConfig {
                k: 3,
                n_negatives: n_neg,
                seed: trial,
                target,
                ..EvalConfig::default()
            };
            let report = evaluate(&model, &split, &partition, &eval).unwrap();
            for (u, record) in report.records.iter().enumerate() {
                let (history, item) = match target {
                    Target::Test => (
                        [split.train[u].as_slice(), &[split.valid[u]]].concat(),
                        split.test[u],
                    ),
                    Target::Validation => (split.train[u].clone(), split.valid[u]),
                };
                let consumed: std::collections::HashSet<usize> = split.train[u]
                    .iter()
                    .copied()
                    .chain([split.valid[u], split.test[u]])
                    .collect();
                let mut candidates: Vec<usize> = (0..split.n_items)
                    .filter(|i| !consumed.contains(i))
                    .collect();
                candidates.push(item);
                let rep = melt::model::encode_sequence(
                    &params,
                    &cfg,
                    &history,
                    &melt::model::InputEmbeddings::plain(),
                    None,
                )
                .unwrap();
                let scores: Vec<f64> = candidates
                    .iter()
                    .map(|&i| rep.dot(&params.item_embeddings.row(i)))
                    .collect();
                let rank = exhaustive_rank(&candidates, &scores, item);
                let hit = if rank <= 3 { 1.0 } else { 0.0 };
                let ndcg = if rank <= 3 {
                    1.0 / ((rank + 1) as f64).log2()
                } else {
                    0.0
                };
                if record.rank != rank || record.hit != hit || (record.ndcg - ndcg).abs() > 1e-15 {
                    return Err(format!(
                        "trial {trial} user {u}: rank {} vs oracle {rank}",
                        record.rank
                    ));
                }
            }
            let n = report.records.len() as f64;
            let hr: f64 = report.records.iter().map(|r| r.hit).sum::<f64>() / n;
            if (report.overall.hr - hr).abs() > 1e-12 {
                return Err(format!(
                    "trial {trial}: overall HR {} vs {hr}",
                    report.overall.hr
                ));
            }
        }
    }
    Ok(trials)
}
