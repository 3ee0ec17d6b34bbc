use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, File, OpenOptions};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{RunConfig, Workdir};
use crate::data::{
    build_sequences, build_subsequence_index, core_filter, generate_synthetic, leave_one_out_split,
    parse_interactions, partition_head_tail, write_json,
};
use crate::eval::{EvalConfig, Target};
use crate::train::{
    load_checkpoint, save_checkpoint, Checkpoint, EpochRecord, Objective, Stage, Trainer,
};
use crate::{Error, Result};

/// Dataset statistics printed by `prepare`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub users: usize,
    pub items: usize,
    pub interactions: usize,
    pub avg_seq_len: f64,
    pub head_users: usize,
    pub head_items: usize,
}

impl DatasetStats {
    pub fn table(&self) -> String {
        format!(
            "users\titems\tinteractions\tavg_len\n{}\t{}\t{}\t{:.2}",
            self.users, self.items, self.interactions, self.avg_seq_len
        )
    }
}

/// Writes a synthetic log as tab-separated `user item timestamp` lines.
pub fn cmd_synth(config: Option<&Path>, out: &Path) -> Result<PathBuf> {
    let cfg = match config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let log = generate_synthetic(&cfg.synthetic)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent.display().to_string(), e))?;
    }
    let file = File::create(out).map_err(|e| Error::io(out.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    log.write_tsv(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(out.display().to_string(), e))?;
    Ok(out.to_path_buf())
}

#[derive(Debug, Clone)]
pub struct PrepareArgs {
    pub data: PathBuf,
    pub workdir: PathBuf,
    pub alpha: Option<f64>,
    pub include_reversed: Option<bool>,
    pub config: Option<PathBuf>,
    pub force: bool,
}

pub fn cmd_prepare(args: &PrepareArgs) -> Result<DatasetStats> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(alpha) = args.alpha {
        cfg.train.alpha = alpha;
    }
    if let Some(rev) = args.include_reversed {
        cfg.train.include_reversed = rev;
    }
    cfg.data_in = Some(args.data.clone());
    cfg.workdir = Some(args.workdir.clone());
    cfg.validate()?;

    let wd = Workdir::new(&args.workdir);
    let _lock = wd.lock()?;
    if wd.data().join("split.json").exists() && !args.force {
        return Err(Error::Config(format!(
            "{} is already prepared; pass --force to overwrite",
            args.workdir.display()
        )));
    }
    let file = File::open(&args.data).map_err(|e| Error::io(args.data.display().to_string(), e))?;
    let raw = parse_interactions(BufReader::new(file))?;
    let log = core_filter(&raw, cfg.min_count);
    let sequences = build_sequences(&log);
    let split = leave_one_out_split(&sequences, log.n_items())?;
    let partition = partition_head_tail(&split, cfg.train.alpha)?;
    let index = build_subsequence_index(&split, cfg.train.include_reversed, cfg.encoder.max_len);

    wd.create_dirs()?;
    let data = wd.data();
    let log_path = data.join("log.tsv");
    let mut w = BufWriter::new(
        File::create(&log_path).map_err(|e| Error::io(log_path.display().to_string(), e))?,
    );
    log.write_tsv(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(log_path.display().to_string(), e))?;
    write_json(&data.join("split.json"), &split)?;
    write_json(&data.join("partition.json"), &partition)?;
    write_json(&data.join("index.json"), &index)?;
    let stats = DatasetStats {
        users: log.n_users(),
        items: log.n_items(),
        interactions: log.len(),
        avg_seq_len: log.len() as f64 / log.n_users().max(1) as f64,
        head_users: partition.head_users.len(),
        head_items: partition.head_items.len(),
    };
    write_json(&data.join("stats.json"), &stats)?;
    write_json(&wd.config(), &cfg)?;
    Ok(stats)
}

#[derive(Debug, Clone)]
pub struct TrainArgs {
    pub workdir: PathBuf,
    pub config: Option<PathBuf>,
    pub from_checkpoint: Option<PathBuf>,
    /// Epochs to run in this invocation before stopping.
    pub max_epochs: Option<usize>,
}

fn stage_name(stage: Stage) -> &'static str {
    match stage {
        Stage::Pretrain => "pretrain",
        Stage::Melt => "melt",
    }
}

fn run_stage(args: &TrainArgs, stage: Stage) -> Result<Option<usize>> {
    let wd = Workdir::new(&args.workdir);
    let _lock = wd.lock()?;
    let prepared = wd.load_prepared(args.config.as_deref())?;
    let cfg = &prepared.config;
    let trainer = Trainer::new(
        prepared.train_data(),
        cfg.encoder.clone(),
        cfg.train.clone(),
    )?;
    let name = stage_name(stage);

    let (start, resumed) = match &args.from_checkpoint {
        Some(path) => {
            let ckpt = load_checkpoint(path)?;
            if ckpt.stage != stage {
                return Err(Error::Config(format!(
                    "{} holds a {} checkpoint, expected {name}",
                    path.display(),
                    ckpt.stage
                )));
            }
            (ckpt, true)
        }
        None => match stage {
            Stage::Pretrain => (trainer.start_pretrain(), false),
            Stage::Melt => {
                let path = wd.checkpoints().join("pretrain.ckpt");
                if !path.exists() {
                    return Err(Error::Config(format!(
                        "{} not found; run `melt pretrain` before `melt train`",
                        path.display()
                    )));
                }
                let pretrained = load_checkpoint(&path)?;
                (trainer.start_melt(pretrained.best_params())?, false)
            }
        },
    };

    let log_path = wd.logs().join(format!("{name}.jsonl"));
    let mut log_file = OpenOptions::new()
        .create(true)
        .write(true)
        .append(resumed)
        .truncate(!resumed)
        .open(&log_path)
        .map_err(|e| Error::io(log_path.display().to_string(), e))?;
    let latest = wd.checkpoints().join(format!("{name}-latest.ckpt"));
    let mut failure: Option<Error> = None;
    let mut remaining = args.max_epochs;
    let objective = match stage {
        Stage::Pretrain => Objective::Backbone,
        Stage::Melt => Objective::Melt,
    };
    let mut on_epoch = |record: &EpochRecord, ckpt: &Checkpoint| {
        let line = serde_json::to_string(record).expect("record serialises");
        if let Err(e) = writeln!(log_file, "{line}") {
            failure = Some(Error::io(log_path.display().to_string(), e));
            return false;
        }
        if let Err(e) = save_checkpoint(ckpt, &latest) {
            failure = Some(e.into());
            return false;
        }
        match remaining.as_mut() {
            Some(n) => {
                *n = n.saturating_sub(1);
                *n > 0
            }
            None => true,
        }
    };
    let outcome = trainer.run(start, objective, &mut on_epoch)?;
    if let Some(err) = failure {
        return Err(err);
    }
    if outcome.checkpoint.epochs_done >= stage_epochs(cfg, stage) {
        save_checkpoint(
            &outcome.checkpoint,
            &wd.checkpoints().join(format!("{name}.ckpt")),
        )?;
    }
    Ok(outcome.best_epoch())
}

fn stage_epochs(cfg: &RunConfig, stage: Stage) -> usize {
    match stage {
        Stage::Pretrain => cfg.train.pretrain_epochs,
        Stage::Melt => cfg.train.e_max,
    }
}

pub fn cmd_pretrain(args: &TrainArgs) -> Result<Option<usize>> {
    run_stage(args, Stage::Pretrain)
}

pub fn cmd_train(args: &TrainArgs) -> Result<Option<usize>> {
    run_stage(args, Stage::Melt)
}

#[derive(Debug, Clone)]
pub struct EvaluateArgs {
    pub workdir: PathBuf,
    /// A path, or `pretrain` / `melt` for the workdir's final checkpoints.
    pub checkpoint: String,
    pub target: Target,
    pub seed: Option<u64>,
    pub backbone: bool,
}

/// Evaluates a checkpoint's best parameters; returns the JSON report path.
pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<PathBuf> {
    let wd = Workdir::new(&args.workdir);
    let _lock = wd.lock()?;
    let prepared = wd.load_prepared(None)?;
    let cfg = &prepared.config;
    let path = match args.checkpoint.as_str() {
        "pretrain" | "melt" => wd.checkpoints().join(format!("{}.ckpt", args.checkpoint)),
        other => PathBuf::from(other),
    };
    if !path.exists() {
        return Err(Error::Config(format!(
            "checkpoint {} not found",
            path.display()
        )));
    }
    let ckpt = load_checkpoint(&path)?;
    let trainer = Trainer::new(
        prepared.train_data(),
        cfg.encoder.clone(),
        cfg.train.clone(),
    )?;
    let objective = if args.backbone || ckpt.stage == Stage::Pretrain {
        Objective::Backbone
    } else {
        Objective::Melt
    };
    let eval = EvalConfig {
        target: args.target,
        seed: args.seed.unwrap_or(cfg.eval.seed),
        ..cfg.eval.clone()
    };
    let report = trainer.evaluate(ckpt.best_params(), objective, &eval)?;

    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
    let variant = if args.backbone && ckpt.stage == Stage::Melt {
        "-backbone"
    } else {
        ""
    };
    let target = match args.target {
        Target::Validation => "validation",
        Target::Test => "test",
    };
    let base = format!("{stem}{variant}-{target}-seed{}", eval.seed);
    let reports = wd.reports();
    fs::create_dir_all(&reports).map_err(|e| Error::io(reports.display().to_string(), e))?;
    let json = reports.join(format!("{base}.json"));
    write_json(&json, &report)?;
    for (suffix, body) in [
        ("summary.csv", report.summary_csv()),
        ("cells.csv", report.cells_csv()),
    ] {
        let p = reports.join(format!("{base}.{suffix}"));
        fs::write(&p, body).map_err(|e| Error::io(p.display().to_string(), e))?;
    }
    Ok(json)
}

fn parse_summary(text: &str) -> Option<(Vec<String>, Vec<Option<f64>>)> {
    let mut lines = text.lines();
    let header = lines.next()?.split(',').map(str::to_string).collect();
    let values = lines.next()?.split(',').map(|v| v.parse().ok()).collect();
    Some((header, values))
}

type SummaryRow = (String, Vec<Option<f64>>);

/// Summary tables of every report, plus per-column means over seeds for
/// each checkpoint and target.
pub fn cmd_report(workdir: &Path) -> Result<String> {
    let reports = Workdir::new(workdir).reports();
    let mut files: Vec<PathBuf> = fs::read_dir(&reports)
        .map_err(|e| Error::io(reports.display().to_string(), e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_str().is_some_and(|s| s.ends_with(".summary.csv")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Config(format!(
            "no reports in {}",
            reports.display()
        )));
    }
    let mut groups: BTreeMap<String, Vec<SummaryRow>> = BTreeMap::new();
    let mut header = Vec::new();
    for path in &files {
        let text =
            fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let (h, values) = parse_summary(&text)
            .ok_or_else(|| Error::Config(format!("{} is not a summary table", path.display())))?;
        header = h;
        let name = path
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default();
        let run = name.trim_end_matches(".summary.csv").to_string();
        let group = match run.rfind("-seed") {
            Some(i) => run[..i].to_string(),
            None => run.clone(),
        };
        groups.entry(group).or_default().push((run, values));
    }
    let cell = |v: &Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
    let mut out = String::new();
    let _ = writeln!(out, "run\t{}", header.join("\t"));
    for (group, runs) in &groups {
        for (run, values) in runs {
            let _ = writeln!(
                out,
                "{run}\t{}",
                values.iter().map(cell).collect::<Vec<_>>().join("\t")
            );
        }
        let means: Vec<Option<f64>> = (0..header.len())
            .map(|c| {
                let col: Option<Vec<f64>> = runs
                    .iter()
                    .map(|(_, v)| v.get(c).copied().flatten())
                    .collect();
                col.map(|xs| xs.iter().sum::<f64>() / xs.len() as f64)
            })
            .collect();
        let _ = writeln!(
            out,
            "{group}-mean({})\t{}",
            runs.len(),
            means.iter().map(cell).collect::<Vec<_>>().join("\t")
        );
    }
    Ok(out)
}
