//! Experiment configuration documents.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use nfqs::trainer::{default_subspace_size, InferConfig, TrainConfig};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Problem {
    pub n: usize,
    pub l: usize,
    pub v: f64,
}

impl Default for Problem {
    fn default() -> Self {
        Self { n: 10, l: 1, v: 1.0 }
    }
}

/// Training block; `subspace_size` falls back to the size-dependent default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainBlock {
    pub subspace_size: Option<usize>,
    pub batch_subspaces: usize,
    pub n_mc: usize,
    pub flow_lr: f64,
    pub nqs_lr: f64,
    pub uniqueness_threshold: f64,
    pub max_updates: usize,
    pub grad_clip: f64,
    pub flow_layers: usize,
    pub flow_hidden: Vec<usize>,
    pub nqs_hidden: Vec<usize>,
}

impl Default for TrainBlock {
    fn default() -> Self {
        let t = TrainConfig::new(0, 1, 1.0);
        Self {
            subspace_size: None,
            batch_subspaces: t.batch_subspaces,
            n_mc: t.n_mc,
            flow_lr: t.flow_lr,
            nqs_lr: t.nqs_lr,
            uniqueness_threshold: t.uniqueness_threshold,
            max_updates: t.max_updates,
            grad_clip: t.grad_clip,
            flow_layers: t.flow_layers,
            flow_hidden: t.flow_hidden,
            nqs_hidden: t.nqs_hidden,
        }
    }
}

/// Inference block; `subspace_size` falls back to the training value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferBlock {
    pub iterations: usize,
    pub nqs_lr: f64,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub n_repeats: usize,
    pub subspace_size: Option<usize>,
    pub nqs_hidden: Vec<usize>,
}

impl Default for InferBlock {
    fn default() -> Self {
        let i = InferConfig::new(0);
        Self {
            iterations: i.iterations,
            nqs_lr: i.nqs_lr,
            plateau_factor: i.plateau_factor,
            plateau_patience: i.plateau_patience,
            n_repeats: i.n_repeats,
            subspace_size: None,
            nqs_hidden: i.nqs_hidden,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Mode {
    /// Compute an exact reference during `infer` when none is on disk.
    pub ed_reference: bool,
}

impl Default for Mode {
    fn default() -> Self {
        Self { ed_reference: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub problem: Problem,
    pub train: TrainBlock,
    pub infer: InferBlock,
    pub out: PathBuf,
    pub seed: u64,
    pub mode: Mode,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            problem: Problem::default(),
            train: TrainBlock::default(),
            infer: InferBlock::default(),
            out: PathBuf::from("results"),
            seed: 0,
            mode: Mode::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> anyhow::Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        Ok(cfg.resolved())
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Fills every optional field so the document is fully explicit.
    pub fn resolved(mut self) -> Self {
        let s = *self.train.subspace_size.get_or_insert(default_subspace_size(self.problem.n));
        self.infer.subspace_size.get_or_insert(s);
        self
    }

    pub fn train_config(&self) -> anyhow::Result<TrainConfig> {
        let (p, t) = (&self.problem, &self.train);
        let cfg = TrainConfig {
            n: p.n,
            l: p.l,
            v: p.v,
            subspace_size: t.subspace_size.unwrap_or(default_subspace_size(p.n)),
            batch_subspaces: t.batch_subspaces,
            n_mc: t.n_mc,
            flow_lr: t.flow_lr,
            nqs_lr: t.nqs_lr,
            uniqueness_threshold: t.uniqueness_threshold,
            seed: self.seed,
            max_updates: t.max_updates,
            grad_clip: t.grad_clip,
            flow_layers: t.flow_layers,
            flow_hidden: t.flow_hidden.clone(),
            nqs_hidden: t.nqs_hidden.clone(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn infer_config(&self) -> anyhow::Result<InferConfig> {
        let i = &self.infer;
        let size = i.subspace_size.or(self.train.subspace_size).unwrap_or(default_subspace_size(self.problem.n));
        let cfg = InferConfig {
            iterations: i.iterations,
            nqs_lr: i.nqs_lr,
            plateau_factor: i.plateau_factor,
            plateau_patience: i.plateau_patience,
            n_repeats: i.n_repeats,
            subspace_size: size,
            nqs_hidden: i.nqs_hidden.clone(),
            seed: self.seed,
        };
        cfg.validate()?;
        if self.problem.n < 2 {
            bail!("problem.n must be at least 2");
        }
        Ok(cfg)
    }
}
