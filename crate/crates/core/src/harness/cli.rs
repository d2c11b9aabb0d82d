use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use log::info;

use super::experiment::{prepare, run_audit, run_experiment, run_sweep, seeds, SweepParam};
use super::output::{aggregate_csv, audit_aggregate_csv, audit_csv, probes_csv, runs_csv, sweep_csv, write_csv};
use super::plot::emit_plots;
use super::{build_dataset, ExperimentConfig, HarnessError};
use crate::datagen::write_dataset;
use crate::diffcore::RngStream;

#[derive(Debug, Parser)]
#[command(name = "fairconf", about = "Fair conformal prediction with learned groups")]
pub struct Cli {
    /// TOML experiment configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Base seed, overriding the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory, overriding the configuration.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Repeat count, overriding the configuration.
    #[arg(long, global = true)]
    pub repeats: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the generated or loaded dataset of every repeat as CSV.
    GenData,
    /// Train the base classifier of every repeat and report accuracies.
    TrainClassifier,
    /// Compare the configured methods.
    Run,
    /// Repeat the comparison over a parameter grid.
    Sweep {
        /// One of delta, T, beta, n.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
    },
    /// Worst-slab audits of marginal sets over the configured mass floors.
    Audit,
    /// Render SVG charts from output CSVs.
    Plot {
        #[arg(long = "input", required = true, num_args = 1..)]
        inputs: Vec<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    if let Some(r) = cli.repeats {
        cfg.repeats = r;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn execute(cli: &Cli) -> Result<Vec<PathBuf>, HarnessError> {
    let cfg = load_config(cli)?;
    let out = cfg.out_dir.clone();
    let mut written = Vec::new();
    match &cli.command {
        Command::GenData => {
            std::fs::create_dir_all(&out).map_err(|e| HarnessError::Io(e.to_string()))?;
            for seed in seeds(&cfg) {
                let data = build_dataset(&cfg, &RngStream::new(seed))?;
                let p = out.join(format!("data_seed{seed}.csv"));
                write_dataset(&data, &p, cfg.dataset.encoding)?;
                written.push(p);
            }
        }
        Command::TrainClassifier => {
            let mut text = String::from("# fairconf classifier v1\nseed,train_accuracy,test_accuracy\n");
            for seed in seeds(&cfg) {
                let p = prepare(&cfg, seed)?;
                let train_x = p.splits.train.encode(cfg.dataset.encoding);
                let tr = p.classifier.accuracy(&train_x, &p.splits.train.labels)?;
                let te = p.classifier.accuracy(&p.test_x, &p.splits.test.labels)?;
                text.push_str(&format!("{seed},{tr},{te}\n"));
            }
            written.push(write_csv(&out, "classifier.csv", &text)?);
        }
        Command::Run => {
            let o = run_experiment(&cfg)?;
            written.push(write_csv(&out, "runs.csv", &runs_csv(&o.records))?);
            written.push(write_csv(&out, "aggregate.csv", &aggregate_csv(&o.aggregates))?);
            written.push(write_csv(&out, "probes.csv", &probes_csv(&o.probes))?);
            if !o.failures.is_empty() {
                let mut text = String::from("# fairconf failures v1\nseed,error\n");
                for (s, e) in &o.failures {
                    text.push_str(&format!("{s},\"{}\"\n", e.replace('"', "'")));
                }
                written.push(write_csv(&out, "failures.csv", &text)?);
            }
        }
        Command::Sweep { param, values } => {
            let param = SweepParam::parse(param)?;
            let s = run_sweep(&cfg, param, values)?;
            written.push(write_csv(&out, &format!("sweep_{}.csv", param.name()), &sweep_csv(&s))?);
        }
        Command::Audit => {
            let (records, aggs) = run_audit(&cfg)?;
            written.push(write_csv(&out, "audit.csv", &audit_csv(&records))?);
            written.push(write_csv(&out, "audit_aggregate.csv", &audit_aggregate_csv(&aggs))?);
        }
        Command::Plot { inputs } => {
            written.extend(emit_plots(inputs, &out)?);
        }
    }
    for p in &written {
        info!("wrote {}", p.display());
    }
    Ok(written)
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit status.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(_) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
