//! Command-line front end. Exit codes: 0 success, 1 run failure, 2 usage error.

use std::ffi::OsString;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{resolve, Overrides, Preset};
use crate::data::write_csv;
use crate::error::Error;
use crate::experiment::{
    export_results, prepare, sweep_prepared, trace_file_name, write_trace_csv, RunSummary, SweepConfig,
};
use crate::gradcheck::{self, GradcheckConfig};
use crate::network::NetworkShape;
use crate::problems::{sample_grid, AnalyticProblem};
use crate::trainer::train;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "sobolev", version, about = "Sobolev training with adaptive residual weighting")]
struct Cli {
    /// TOML settings file; command-line flags take precedence over it.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Named protocol preset applied before the settings file: paper500, paper500-seeded.
    #[arg(long, global = true, value_name = "NAME")]
    preset: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample an analytic problem on a grid and write it as a CSV dataset.
    Generate {
        #[arg(long, default_value = "trig")]
        problem: AnalyticProblem,
        /// Points per axis.
        #[arg(long, default_value_t = 25)]
        grid: usize,
        /// Output directory; the file is named `<problem>.csv`.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Train one network and write its per-iteration trace.
    Train {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=13))]
        mode: Option<u8>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train seeds 0..runs for each mode and write aggregate statistics.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// One or more modes, comma separated or repeated.
        #[arg(long, value_delimiter = ',', value_parser = clap::value_parser!(u8).range(1..=13))]
        mode: Vec<u8>,
        #[arg(long)]
        runs: Option<usize>,
        /// Also write one trace file per run.
        #[arg(long)]
        traces: bool,
    },
    /// Finite-difference check of Jacobians and loss gradients on random networks.
    Gradcheck {
        #[arg(long, default_value = "2,5,3,3,1")]
        layers: String,
        #[arg(long, default_value_t = 20)]
        networks: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-6)]
        tolerance: f64,
    },
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Built-in problem: trig, peaks, ridge.
    #[arg(long, conflicts_with = "data")]
    problem: Option<String>,
    /// CSV dataset instead of a built-in problem.
    #[arg(long, value_name = "CSV")]
    data: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Layer widths including input and output, e.g. 2,5,3,3,1.
    #[arg(long)]
    layers: Option<String>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long, default_value = "results")]
    out: PathBuf,
}

impl RunArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            problem: self.problem.clone(),
            data: self.data.clone(),
            epochs: self.epochs,
            layers: self.layers.clone(),
            batch_size: self.batch_size,
            ..Overrides::default()
        }
    }
}

enum Failure {
    Usage(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

fn usage(e: Error) -> Failure {
    Failure::Usage(e.to_string())
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            EXIT_FAILURE
        }
    }
}

fn settings(cli_config: Option<&Path>, preset: Option<&str>, cli: Overrides) -> std::result::Result<SweepConfig, Failure> {
    let mut o = match preset {
        Some(name) => Preset::parse(name).map_err(usage)?.overrides(),
        None => Overrides::default(),
    };
    if let Some(path) = cli_config {
        o = o.merge(Overrides::read(path).map_err(usage)?);
    }
    resolve(&o.merge(cli)).map_err(usage)
}

fn execute(cli: Cli) -> std::result::Result<(), Failure> {
    let config = cli.config.as_deref();
    let preset = cli.preset.as_deref();
    match cli.command {
        Command::Generate { problem, grid, out } => {
            let data = sample_grid(problem, grid).map_err(usage)?;
            fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            let path = out.join(format!("{}.csv", problem.name()));
            write_csv(&data, &path)?;
            println!("wrote {} samples to {}", data.len(), path.display());
        }
        Command::Train { run, mode, seed } => {
            let o = Overrides { mode, seed, ..run.overrides() };
            let cfg = settings(config, preset, o)?;
            if cfg.modes.len() != 1 {
                return Err(Failure::Usage("train takes a single mode".into()));
            }
            let data = prepare(&cfg.source, &cfg.split)?;
            let run_cfg = crate::trainer::TrainConfig { mode: cfg.modes[0], ..cfg.base.clone() };
            let (_, trace) = train(&run_cfg, &data.train, &data.val)?;
            fs::create_dir_all(&run.out).map_err(|e| Error::io(&run.out, e))?;
            let path = run.out.join(trace_file_name(run_cfg.mode, run_cfg.seed));
            let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            write_trace_csv(&trace, BufWriter::new(file)).map_err(|e| Error::io(&path, e))?;
            let summary = RunSummary {
                mode: run_cfg.mode,
                seed: run_cfg.seed,
                final_l2: trace.final_val_l2().unwrap_or(f64::NAN),
                lowest_l2: trace.lowest_val_l2().unwrap_or(f64::NAN),
                duration_secs: trace.duration.as_secs_f64(),
                final_lambda: trace.final_lambda().map(<[f64]>::to_vec).unwrap_or_default(),
            };
            let json_path = run.out.join("run.json");
            let json = serde_json::to_string_pretty(&summary).expect("run summary serializes");
            fs::write(&json_path, json + "\n").map_err(|e| Error::io(&json_path, e))?;
            println!(
                "mode {} seed {}: final l2 {:.6}, lowest l2 {:.6}, {} iterations in {:.2}s -> {}",
                summary.mode.index(),
                summary.seed,
                summary.final_l2,
                summary.lowest_l2,
                trace.rows.len(),
                summary.duration_secs,
                path.display()
            );
        }
        Command::Sweep { run, mode, runs, traces } => {
            let modes = if mode.is_empty() { None } else { Some(mode) };
            let o = Overrides { modes, runs, ..run.overrides() };
            let mut cfg = settings(config, preset, o)?;
            cfg.keep_traces = traces;
            let data = prepare(&cfg.source, &cfg.split)?;
            let result = sweep_prepared(&cfg, &data)?;
            export_results(&result, &run.out)?;
            for s in &result.stats {
                match s.final_l2 {
                    Some(d) => println!(
                        "mode {:>2} {:<32} n={:<4} diverged={:<3} mean={:.6} median={:.6} q1={:.6} q3={:.6} min={:.6} max={:.6} t={:.2}s",
                        s.mode.index(),
                        s.label,
                        s.n_runs,
                        s.n_diverged,
                        d.mean,
                        d.median,
                        d.q1,
                        d.q3,
                        d.min,
                        d.max,
                        s.mean_duration_secs
                    ),
                    None => println!("mode {:>2} {:<32} all {} runs diverged", s.mode.index(), s.label, s.n_diverged),
                }
            }
            println!("results written to {}", run.out.display());
        }
        Command::Gradcheck { layers, networks, seed, tolerance } => {
            let shape = NetworkShape::parse(&layers).map_err(usage)?;
            let gc = GradcheckConfig { n_networks: networks, seed, tolerance, ..GradcheckConfig::default() };
            let report = gradcheck::run(&shape, &gc)?;
            println!(
                "{} networks ({shape}): max jacobian rel err {:.3e}, max gradient rel err {:.3e}, tolerance {:.1e}: {}",
                report.n_networks,
                report.max_jacobian_error,
                report.max_gradient_error,
                report.tolerance,
                if report.passed() { "PASS" } else { "FAIL" }
            );
            if !report.passed() {
                return Err(Failure::Run(Error::Config("gradient check failed".into())));
            }
        }
    }
    Ok(())
}
