use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use convex_q::harness::{
    cmd_baseline, cmd_diag, cmd_eval, cmd_table1, fmt_f64, train_run, write_table, write_trace, RunConfig,
    WeightsFile,
};
use convex_q::{Error, Result};

#[derive(Parser)]
#[command(name = "convex-q", version, about = "Episodic Q-learning with convex network refits")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network and write its weights and per-episode trace.
    Train(Common),
    /// Evaluate the greedy policy of a weights file.
    Eval(Common),
    /// Dynamic-programming lower bound per initial state.
    Baseline(Common),
    /// Learned cost against the lower bound, median over seeds.
    Table1(Common),
    /// Theorem diagnostics for a weights file, as JSON.
    Diag(Common),
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Output path; tables go to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the configured seed (and seed list).
    #[arg(long)]
    seed: Option<u64>,
    /// Initial state to evaluate; repeatable. Overrides `eval_x0`.
    #[arg(long, allow_negative_numbers = true)]
    x0: Vec<f64>,
}

impl Common {
    fn config(&self) -> Result<RunConfig> {
        let cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        Ok(match self.seed {
            Some(s) => cfg.with_seed(s),
            None => cfg,
        })
    }

    fn x0s(&self, cfg: &RunConfig) -> Vec<f64> {
        if self.x0.is_empty() {
            cfg.eval_x0.clone()
        } else {
            self.x0.clone()
        }
    }

    fn weights(&self) -> Result<WeightsFile> {
        let path = self.weights.as_ref().ok_or_else(|| Error::Config {
            field: "--weights".into(),
            message: "this command needs a weights file".into(),
        })?;
        WeightsFile::load(path)
    }

    fn table_out(&self, cfg: &RunConfig) -> Option<PathBuf> {
        self.out.clone().or_else(|| cfg.outputs.table.clone())
    }
}

fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(File::create(p)?),
        None => Box::new(io::stdout().lock()),
    })
}

fn trace_path(weights: &Path) -> PathBuf {
    let stem = weights.file_stem().and_then(|s| s.to_str()).unwrap_or("weights");
    weights.with_file_name(format!("{stem}.trace.csv"))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => {
            let cfg = args.config()?;
            let weights_out = args
                .out
                .clone()
                .or_else(|| cfg.outputs.weights.clone())
                .unwrap_or_else(|| PathBuf::from("weights.json"));
            let trace_out = cfg.outputs.trace.clone().unwrap_or_else(|| trace_path(&weights_out));
            let run = train_run(&cfg)?;
            run.file.save(&weights_out)?;
            write_trace(File::create(&trace_out)?, &run.output.trace)?;
        }
        Command::Eval(args) => {
            let cfg = args.config()?;
            let weights = args.weights()?;
            let rows = cmd_eval(&cfg, &weights, &args.x0s(&cfg))?;
            let header = ["x0".to_string(), "cost".to_string()];
            let records: Vec<Vec<String>> = rows.iter().map(|r| vec![fmt_f64(r.x0), fmt_f64(r.cost)]).collect();
            write_table(sink(args.table_out(&cfg).as_deref())?, &header, &records)?;
        }
        Command::Baseline(args) => {
            let cfg = args.config()?;
            let rows = cmd_baseline(&cfg, &args.x0s(&cfg))?;
            let header: Vec<String> = ["x0", "lower_bound", "dp_value", "extrapolated"]
                .iter()
                .map(|s| s.to_string())
                .collect();
            let records: Vec<Vec<String>> = rows
                .iter()
                .map(|r| {
                    vec![
                        fmt_f64(r.x0),
                        fmt_f64(r.lower_bound),
                        fmt_f64(r.dp_value),
                        r.extrapolated.to_string(),
                    ]
                })
                .collect();
            write_table(sink(args.table_out(&cfg).as_deref())?, &header, &records)?;
        }
        Command::Table1(args) => {
            let mut cfg = args.config()?;
            cfg.eval_x0 = args.x0s(&cfg);
            let weights = args.weights.as_ref().map(|p| WeightsFile::load(p)).transpose()?;
            let table = cmd_table1(&cfg, weights.as_ref())?;
            write_table(sink(args.table_out(&cfg).as_deref())?, &table.header(), &table.records())?;
        }
        Command::Diag(args) => {
            let cfg = args.config()?;
            let report = cmd_diag(&cfg, &args.weights()?)?;
            let json = serde_json::to_string_pretty(&report).expect("report serializes");
            let mut out = sink(args.out.as_deref())?;
            writeln!(out, "{json}")?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.category(), e.to_string().replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
