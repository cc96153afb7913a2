use std::path::PathBuf;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use nfqs_cli::commands::CHECKPOINT_FILE;
use nfqs_cli::{cmd_ed, cmd_infer, cmd_report, cmd_train, ExperimentConfig};

#[derive(Parser)]
#[command(name = "nfqs", version, about = "Flow-sampled neural quantum states for transverse-field Ising rings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (JSON). Built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (defaults to all cores).
    #[arg(long)]
    threads: Option<usize>,
}

impl Common {
    fn resolve(&self) -> anyhow::Result<ExperimentConfig> {
        if let Some(t) = self.threads {
            rayon::ThreadPoolBuilder::new().num_threads(t).build_global().context("configuring worker threads")?;
        }
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default().resolved(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Exact ground-state energy (n ≤ 20).
    Ed(Common),
    /// Train the flow sampler and amplitude network.
    Train(Common),
    /// Repeated-subspace energy estimate from a trained flow.
    Infer {
        #[command(flatten)]
        common: Common,
        /// Checkpoint manifest; defaults to checkpoint.json in the output directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Merge result files or directories into report.csv.
    Report {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Directory for report.csv; the table goes to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Ed(c) => {
            let rec = cmd_ed(&c.resolve()?)?;
            println!("{}", serde_json::to_string_pretty(&rec)?);
        }
        Command::Train(c) => {
            let s = cmd_train(&c.resolve()?)?;
            if !s.converged {
                eprintln!("warning: stopped after {} updates without meeting the uniqueness criterion", s.updates);
            }
            println!("{}", serde_json::to_string_pretty(&s)?);
        }
        Command::Infer { common, checkpoint } => {
            let cfg = common.resolve()?;
            let ckpt = checkpoint.unwrap_or_else(|| cfg.out.join(CHECKPOINT_FILE));
            let rec = cmd_infer(&cfg, &ckpt)?;
            println!("{}", serde_json::to_string_pretty(&rec)?);
        }
        Command::Report { inputs, out } => {
            let rows = cmd_report(&inputs, out.as_deref())?;
            if out.is_none() {
                nfqs_cli::record::write_report(&rows, std::io::stdout().lock())?;
            }
        }
    }
    Ok(())
}
