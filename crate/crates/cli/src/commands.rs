//! The four subcommands as library functions.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context};
use nfqs::checkpoint;
use nfqs::ed::{self, LANCZOS_LIMIT};
use nfqs::spin::InteractionGraph;
use nfqs::trainer::{self, write_history};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::record::{self, ReportRow, ResultRecord, VERSION_STAMP};

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const HISTORY_FILE: &str = "history.csv";
pub const SUMMARY_FILE: &str = "train_summary.json";
pub const REPORT_FILE: &str = "report.csv";

fn graph(cfg: &ExperimentConfig) -> anyhow::Result<InteractionGraph> {
    let p = &cfg.problem;
    Ok(InteractionGraph::ring(p.n, p.l, p.v)?)
}

fn base_record(cfg: &ExperimentConfig, method: &str, mean: f64, std: f64, started: Instant) -> ResultRecord {
    ResultRecord {
        n: cfg.problem.n,
        l: cfg.problem.l,
        v: cfg.problem.v,
        method: method.into(),
        energy_mean: mean,
        energy_std: std,
        e_true: None,
        percent_error: None,
        wall_time_s: started.elapsed().as_secs_f64(),
        seed: cfg.seed,
        version: VERSION_STAMP.into(),
        converged: None,
        config: cfg.clone(),
    }
}

/// Exact ground energy. Solver non-convergence is recorded, not raised.
pub fn cmd_ed(cfg: &ExperimentConfig) -> anyhow::Result<ResultRecord> {
    let n = cfg.problem.n;
    if n > LANCZOS_LIMIT {
        bail!("exact diagonalisation supports at most {LANCZOS_LIMIT} spins, got n = {n}");
    }
    let g = graph(cfg)?;
    let started = Instant::now();
    let (energy, converged) = match ed::ground_state(&g, cfg.seed) {
        Ok(r) => (r.energy, true),
        Err(nfqs::Error::NotConverged { energy, .. }) => (energy, false),
        Err(e) => return Err(e.into()),
    };
    let mut rec = base_record(cfg, "ed", energy, 0.0, started).with_reference(Some(energy))?;
    rec.converged = Some(converged);
    rec.write(&cfg.out)?;
    Ok(rec)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSummary {
    pub converged: bool,
    pub updates: usize,
    pub nqs_reinits: usize,
    pub final_mean_energy: Option<f64>,
    pub final_unique_fraction: Option<f64>,
    pub wall_time_s: f64,
    pub checkpoint: PathBuf,
    pub history: PathBuf,
    pub version: String,
    pub config: ExperimentConfig,
}

/// Trains flow and amplitude network; writes checkpoint, history and a
/// summary into the output directory.
pub fn cmd_train(cfg: &ExperimentConfig) -> anyhow::Result<TrainSummary> {
    let tc = cfg.train_config()?;
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    let started = Instant::now();
    let out = trainer::train(&tc)?;
    let ckpt = cfg.out.join(CHECKPOINT_FILE);
    checkpoint::save(&ckpt, &out.flow, Some(&out.nqs))?;
    let history = cfg.out.join(HISTORY_FILE);
    let file = fs::File::create(&history).with_context(|| format!("writing {}", history.display()))?;
    write_history(&out.history, BufWriter::new(file))?;
    let last = out.history.last();
    let summary = TrainSummary {
        converged: out.converged,
        updates: out.updates,
        nqs_reinits: out.nqs_reinits,
        final_mean_energy: last.map(|r| r.mean_energy),
        final_unique_fraction: last.map(|r| r.mean_unique_fraction),
        wall_time_s: started.elapsed().as_secs_f64(),
        checkpoint: ckpt,
        history,
        version: VERSION_STAMP.into(),
        config: cfg.clone(),
    };
    fs::write(cfg.out.join(SUMMARY_FILE), serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}

/// An exact energy for the configured problem already on disk.
fn stored_reference(cfg: &ExperimentConfig) -> Option<f64> {
    let p = &cfg.problem;
    let prefix = format!("result_ed_n{}_l{}_v{}_", p.n, p.l, p.v);
    let mut names: Vec<PathBuf> = fs::read_dir(&cfg.out)
        .ok()?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_name().and_then(|f| f.to_str()).is_some_and(|f| f.starts_with(&prefix)))
        .collect();
    names.sort();
    names.iter().filter_map(|f| ResultRecord::read(f).ok()).find(|r| r.converged != Some(false)).map(|r| r.energy_mean)
}

fn training_converged(checkpoint: &Path) -> Option<bool> {
    let summary = checkpoint.with_file_name(SUMMARY_FILE);
    let text = fs::read_to_string(summary).ok()?;
    serde_json::from_str::<TrainSummary>(&text).ok().map(|s| s.converged)
}

/// Repeated-subspace inference from a trained flow.
pub fn cmd_infer(cfg: &ExperimentConfig, checkpoint_path: &Path) -> anyhow::Result<ResultRecord> {
    let ic = cfg.infer_config()?;
    let g = graph(cfg)?;
    let ckpt = checkpoint::load(checkpoint_path).with_context(|| format!("loading checkpoint {}", checkpoint_path.display()))?;
    if ckpt.flow.dim() != cfg.problem.n {
        bail!(
            "checkpoint {} holds a flow over {} spins but the problem has n = {}",
            checkpoint_path.display(),
            ckpt.flow.dim(),
            cfg.problem.n
        );
    }
    let started = Instant::now();
    let out = trainer::infer(&ckpt.flow, &g, &ic)?;
    let mut rec = base_record(cfg, "nfqs", out.mean, out.std, started);
    rec.converged = training_converged(checkpoint_path);
    let reference = match stored_reference(cfg) {
        Some(e) => Some(e),
        None if cfg.mode.ed_reference && cfg.problem.n <= LANCZOS_LIMIT => match ed::ground_state(&g, cfg.seed) {
            Ok(r) => Some(r.energy),
            Err(nfqs::Error::NotConverged { .. }) => None,
            Err(e) => return Err(e.into()),
        },
        None => None,
    };
    rec = rec.with_reference(reference)?;
    fs::create_dir_all(&cfg.out)?;
    let repeats = cfg.out.join(format!("repeats_seed{}.csv", cfg.seed));
    let mut text = String::from("repeat,energy,subspace_size,degenerate,lr_decays\n");
    for (i, r) in out.repeats.iter().enumerate() {
        text += &format!("{i},{:e},{},{},{}\n", r.energy, r.subspace_size, r.degenerate, r.lr_decays);
    }
    fs::write(&repeats, text)?;
    rec.write(&cfg.out)?;
    Ok(rec)
}

/// Merges result files (or directories of them) into one table, written
/// to `out` when given.
pub fn cmd_report(inputs: &[PathBuf], out: Option<&Path>) -> anyhow::Result<Vec<ReportRow>> {
    let rows = record::merge(record::collect(inputs)?);
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        let path = dir.join(REPORT_FILE);
        let file = fs::File::create(&path).with_context(|| format!("writing {}", path.display()))?;
        record::write_report(&rows, BufWriter::new(file))?;
    }
    Ok(rows)
}
