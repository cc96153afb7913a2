//! Configuration, result records and subcommands behind the `nfqs` binary.

pub mod commands;
pub mod config;
pub mod record;

pub use commands::{cmd_ed, cmd_infer, cmd_report, cmd_train, TrainSummary};
pub use config::ExperimentConfig;
pub use record::ResultRecord;
