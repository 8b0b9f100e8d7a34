//! Configuration, persistence and the experiment commands behind the CLI.

pub mod commands;
pub mod config;
pub mod report;
pub mod weights;

pub use commands::{
    cmd_baseline, cmd_diag, cmd_eval, cmd_table1, greedy_cost, median, train_run, BaselineRow, EvalRow, Table1,
    Table1Row, TrainedRun,
};
pub use config::{OutputPaths, PlantConfig, RunConfig};
pub use report::{fmt_f64, write_table, write_trace};
pub use weights::{Provenance, WeightsFile, FORMAT_VERSION};
