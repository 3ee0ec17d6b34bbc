use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};

use super::RunConfig;
use crate::data::{read_json, HeadTailPartition, SplitDataset, SubsequenceIndex};
use crate::train::TrainData;
use crate::{Error, Result};

const LOCK_FILE: &str = ".melt.lock";

/// Fixed artifact layout under one root directory.
#[derive(Debug, Clone)]
pub struct Workdir {
    root: PathBuf,
}

impl Workdir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.json")
    }

    pub fn data(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn logs(&self) -> PathBuf {
        self.root.join("logs")
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn create_dirs(&self) -> Result<()> {
        for dir in [self.data(), self.checkpoints(), self.logs(), self.reports()] {
            fs::create_dir_all(&dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        }
        Ok(())
    }

    /// Takes the workdir lock; fails if another command holds it.
    pub fn lock(&self) -> Result<WorkdirLock> {
        fs::create_dir_all(&self.root)
            .map_err(|e| Error::io(self.root.display().to_string(), e))?;
        let path = self.root.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(WorkdirLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Config(format!(
                "{} is locked by another command (remove {} if it is stale)",
                self.root.display(),
                path.display()
            ))),
            Err(e) => Err(Error::io(path.display().to_string(), e)),
        }
    }

    /// The explicit config if given, else the workdir's effective config.
    pub fn load_config(&self, explicit: Option<&Path>) -> Result<RunConfig> {
        let path = explicit
            .map(Path::to_path_buf)
            .unwrap_or_else(|| self.config());
        if !path.exists() {
            return Err(Error::Config(format!(
                "{} not found; run `melt prepare` first or pass --config",
                path.display()
            )));
        }
        RunConfig::load(&path)
    }

    pub fn load_prepared(&self, explicit_config: Option<&Path>) -> Result<Prepared> {
        let config = self.load_config(explicit_config)?;
        let data = self.data();
        let split_path = data.join("split.json");
        if !split_path.exists() {
            return Err(Error::Config(format!(
                "{} is not prepared; run `melt prepare` first",
                self.root.display()
            )));
        }
        Ok(Prepared {
            config,
            split: read_json(&split_path)?,
            partition: read_json(&data.join("partition.json"))?,
            index: read_json(&data.join("index.json"))?,
        })
    }
}

/// Removes the lock file when dropped.
#[derive(Debug)]
pub struct WorkdirLock {
    path: PathBuf,
}

impl Drop for WorkdirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Artifacts written by `prepare`.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub config: RunConfig,
    pub split: SplitDataset,
    pub partition: HeadTailPartition,
    pub index: SubsequenceIndex,
}

impl Prepared {
    pub fn train_data(&self) -> TrainData<'_> {
        TrainData {
            split: &self.split,
            partition: &self.partition,
            index: &self.index,
        }
    }
}
