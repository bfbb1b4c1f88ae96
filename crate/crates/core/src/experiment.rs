//! Multi-seed sweeps over weighting modes, aggregate statistics and result files.
//!
//! A sweep writes three files plus optional traces:
//!
//! * `summary.json`: protocol metadata and per-mode statistics of the final
//!   and lowest validation error. No wall-clock values go in here, so
//!   identical invocations produce identical bytes.
//! * `timing.json`: per-mode mean and total run durations.
//! * `runs.csv`: one line per completed run.
//! * `trace_<mode>_<seed>.csv`: per-iteration trace of one run.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{apply_standardize, float_text, fit_standardize, grid_split, read_csv, Dataset, SplitPattern};
use crate::error::{Error, Result};
use crate::problems::{sample_grid, AnalyticProblem};
use crate::trainer::{train, RunTrace, TrainConfig};
use crate::weighting::Mode;

pub const SUMMARY_FORMAT: &str = "sobolev-sweep-summary";
pub const SUMMARY_VERSION: u32 = 1;
pub const QUARTILE_CONVENTION: &str =
    "midpoint: value at position p*(n-1) of the sorted sample, averaging the two neighbours when it falls between them";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum DataSource {
    Problem { problem: AnalyticProblem, points_per_axis: usize },
    Csv { path: PathBuf },
}

impl DataSource {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DataSource::Problem { problem, points_per_axis } => sample_grid(*problem, *points_per_axis),
            DataSource::Csv { path } => read_csv(path),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub n_train: usize,
    pub n_val: usize,
    pub pattern: SplitPattern,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            n_train: 313,
            n_val: 312,
            pattern: SplitPattern::Stride2,
        }
    }
}

/// Standardized training and validation sets sharing the training statistics.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: Dataset,
    pub val: Dataset,
}

/// A split of `0/0` means: halve the loaded data (larger half trains).
pub fn prepare(source: &DataSource, split: &SplitSpec) -> Result<PreparedData> {
    let all = source.load()?;
    let (n_train, n_val) = match (split.n_train, split.n_val) {
        (0, 0) => (all.len() - all.len() / 2, all.len() / 2),
        sizes => sizes,
    };
    let (train, val) = grid_split(&all, n_train, n_val, split.pattern)?;
    let (train, stats) = fit_standardize(&train)?;
    let val = apply_standardize(&val, &stats)?;
    Ok(PreparedData { train, val })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub source: DataSource,
    pub split: SplitSpec,
    /// Mode and seed are overridden per run.
    pub base: TrainConfig,
    pub modes: Vec<Mode>,
    pub n_runs: usize,
    pub keep_traces: bool,
}

impl SweepConfig {
    /// 625-point trig grid, 313/312 split, 2-5-3-3-1 net, 500 epochs, 100 runs per mode.
    pub fn paper500(modes: Vec<Mode>) -> Self {
        SweepConfig {
            source: DataSource::Problem {
                problem: AnalyticProblem::Trig,
                points_per_axis: 25,
            },
            split: SplitSpec::default(),
            base: TrainConfig::default(),
            modes,
            n_runs: 100,
            keep_traces: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mode: Mode,
    pub seed: u64,
    pub final_l2: f64,
    pub lowest_l2: f64,
    pub duration_secs: f64,
    pub final_lambda: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diverged {
    pub mode: Mode,
    pub seed: u64,
    pub iteration: usize,
}

/// Mean, median, quartiles and range of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub min: f64,
    pub max: f64,
}

impl Distribution {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Some(Distribution {
            mean: values.iter().sum::<f64>() / values.len() as f64,
            median: quantile_sorted(&sorted, 0.5),
            q1: quantile_sorted(&sorted, 0.25),
            q3: quantile_sorted(&sorted, 0.75),
            min: sorted[0],
            max: sorted[sorted.len() - 1],
        })
    }

    pub fn iqr(&self) -> f64 {
        self.q3 - self.q1
    }
}

/// Midpoint quantile of a sorted, non-empty slice.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        0.5 * (sorted[lo] + sorted[hi])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeStatistics {
    pub mode: Mode,
    pub label: String,
    /// Completed runs that enter the statistics.
    pub n_runs: usize,
    pub n_diverged: usize,
    pub diverged_seeds: Vec<u64>,
    pub final_l2: Option<Distribution>,
    pub lowest_l2: Option<Distribution>,
    /// Kept out of `summary.json`; see `timing.json`.
    #[serde(skip)]
    pub mean_duration_secs: f64,
    #[serde(skip)]
    pub total_duration_secs: f64,
}

impl ModeStatistics {
    pub fn from_runs(mode: Mode, runs: &[RunSummary], diverged: &[Diverged]) -> Self {
        let mine: Vec<&RunSummary> = runs.iter().filter(|r| r.mode == mode).collect();
        let finals: Vec<f64> = mine.iter().map(|r| r.final_l2).collect();
        let lowest: Vec<f64> = mine.iter().map(|r| r.lowest_l2).collect();
        let total: f64 = mine.iter().map(|r| r.duration_secs).sum();
        let diverged_seeds: Vec<u64> = diverged.iter().filter(|d| d.mode == mode).map(|d| d.seed).collect();
        ModeStatistics {
            mode,
            label: mode.label().to_owned(),
            n_runs: mine.len(),
            n_diverged: diverged_seeds.len(),
            diverged_seeds,
            final_l2: Distribution::of(&finals),
            lowest_l2: Distribution::of(&lowest),
            mean_duration_secs: if mine.is_empty() { 0.0 } else { total / mine.len() as f64 },
            total_duration_secs: total,
        }
    }

    pub fn mean(&self) -> Option<f64> {
        self.final_l2.map(|d| d.mean)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Protocol {
    pub source: DataSource,
    pub split: SplitSpec,
    pub layers: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam_theta: crate::optim::AdamConfig,
    pub adam_lambda: crate::optim::AdamConfig,
    pub schedule_rate: f64,
    pub epsilon0: f64,
    pub val_stride: usize,
    pub n_runs: usize,
    pub seeds: Vec<u64>,
    pub quartile_convention: String,
}

impl Protocol {
    fn of(cfg: &SweepConfig) -> Self {
        Protocol {
            source: cfg.source.clone(),
            split: cfg.split,
            layers: cfg.base.shape.layer_sizes.clone(),
            epochs: cfg.base.epochs,
            batch_size: cfg.base.batch_size,
            adam_theta: cfg.base.adam_theta,
            adam_lambda: cfg.base.adam_lambda,
            schedule_rate: cfg.base.schedule_rate,
            epsilon0: cfg.base.epsilon0,
            val_stride: cfg.base.val_stride,
            n_runs: cfg.n_runs,
            seeds: (0..cfg.n_runs as u64).collect(),
            quartile_convention: QUARTILE_CONVENTION.to_owned(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub protocol: Protocol,
    pub stats: Vec<ModeStatistics>,
    pub runs: Vec<RunSummary>,
    pub diverged: Vec<Diverged>,
    /// `(mode, seed, trace)` when traces were kept.
    pub traces: Vec<(Mode, u64, RunTrace)>,
}

impl SweepResult {
    pub fn stats_for(&self, mode: Mode) -> Option<&ModeStatistics> {
        self.stats.iter().find(|s| s.mode == mode)
    }

    /// Final errors of `mode` ordered by seed; diverged seeds are absent.
    pub fn finals(&self, mode: Mode) -> Vec<(u64, f64)> {
        self.runs.iter().filter(|r| r.mode == mode).map(|r| (r.seed, r.final_l2)).collect()
    }
}

enum Outcome {
    Done(RunSummary, Option<RunTrace>),
    Diverged(Diverged),
}

/// Runs seeds `0..n_runs` for each mode on shared prepared data.
///
/// Runs execute in parallel; results are collected in (mode, seed) order so
/// the output does not depend on scheduling.
pub fn sweep_prepared(cfg: &SweepConfig, data: &PreparedData) -> Result<SweepResult> {
    if cfg.n_runs == 0 {
        return Err(Error::Config("n_runs must be at least 1".into()));
    }
    if cfg.modes.is_empty() {
        return Err(Error::Config("at least one mode is required".into()));
    }
    cfg.base.validate()?;
    let jobs: Vec<(Mode, u64)> = cfg
        .modes
        .iter()
        .flat_map(|&m| (0..cfg.n_runs as u64).map(move |s| (m, s)))
        .collect();
    let outcomes: Vec<Outcome> = jobs
        .par_iter()
        .map(|&(mode, seed)| {
            let run_cfg = TrainConfig {
                mode,
                seed,
                ..cfg.base.clone()
            };
            match train(&run_cfg, &data.train, &data.val) {
                Ok((_, trace)) => {
                    let summary = RunSummary {
                        mode,
                        seed,
                        final_l2: trace.final_val_l2().unwrap_or(f64::NAN),
                        lowest_l2: trace.lowest_val_l2().unwrap_or(f64::NAN),
                        duration_secs: trace.duration.as_secs_f64(),
                        final_lambda: trace.final_lambda().map(<[f64]>::to_vec).unwrap_or_default(),
                    };
                    Ok(Outcome::Done(summary, cfg.keep_traces.then_some(trace)))
                }
                Err(Error::Divergence { iteration }) => Ok(Outcome::Diverged(Diverged { mode, seed, iteration })),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;

    let mut runs = Vec::new();
    let mut diverged = Vec::new();
    let mut traces = Vec::new();
    for o in outcomes {
        match o {
            Outcome::Done(s, t) => {
                if let Some(t) = t {
                    traces.push((s.mode, s.seed, t));
                }
                runs.push(s);
            }
            Outcome::Diverged(d) => diverged.push(d),
        }
    }
    let stats = cfg
        .modes
        .iter()
        .map(|&m| ModeStatistics::from_runs(m, &runs, &diverged))
        .collect();
    Ok(SweepResult {
        protocol: Protocol::of(cfg),
        stats,
        runs,
        diverged,
        traces,
    })
}

pub fn sweep(cfg: &SweepConfig) -> Result<SweepResult> {
    let data = prepare(&cfg.source, &cfg.split)?;
    sweep_prepared(cfg, &data)
}

/// One-sided exact sign test: probability of at least `wins` successes out of
/// the non-tied pairs under a fair coin. Pairs are `(a, b)` and a win is `a < b`.
pub fn paired_sign_test(pairs: &[(f64, f64)]) -> (usize, usize, f64) {
    let wins = pairs.iter().filter(|(a, b)| a < b).count();
    let n = pairs.iter().filter(|(a, b)| a != b).count();
    let mut p = 0.0;
    for k in wins..=n {
        p += binomial(n, k) * 0.5f64.powi(n as i32);
    }
    (wins, n, p)
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryFile {
    pub format: String,
    pub version: u32,
    pub protocol: Protocol,
    pub modes: BTreeMap<u8, ModeStatistics>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeTiming {
    pub mean_duration_secs: f64,
    pub total_duration_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingFile {
    pub modes: BTreeMap<u8, ModeTiming>,
}

pub fn summary_json(result: &SweepResult) -> String {
    let file = SummaryFile {
        format: SUMMARY_FORMAT.to_owned(),
        version: SUMMARY_VERSION,
        protocol: result.protocol.clone(),
        modes: result.stats.iter().map(|s| (s.mode.index(), s.clone())).collect(),
    };
    let mut s = serde_json::to_string_pretty(&file).expect("summary serializes");
    s.push('\n');
    s
}

pub fn parse_summary(bytes: &[u8]) -> std::result::Result<SummaryFile, serde_json::Error> {
    serde_json::from_slice(bytes)
}

pub const RUNS_HEADER: [&str; 6] = ["mode", "seed", "final_l2", "lowest_l2", "duration_s", "final_lambda"];

pub fn write_runs_csv<W: Write>(runs: &[RunSummary], out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RUNS_HEADER)?;
    for r in runs {
        let lambda: Vec<String> = r.final_lambda.iter().map(|&v| float_text(v)).collect();
        w.write_record([
            r.mode.index().to_string(),
            r.seed.to_string(),
            float_text(r.final_l2),
            float_text(r.lowest_l2),
            float_text(r.duration_secs),
            lambda.join(";"),
        ])?;
    }
    w.flush()
}

/// Parses `runs.csv`; `final_lambda` is a `;`-separated list.
pub fn parse_runs_csv<R: Read>(input: R) -> Result<Vec<RunSummary>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = reader.headers().map_err(|e| Error::Parse { line: 1, message: e.to_string() })?;
    if header.iter().ne(RUNS_HEADER) {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header `{}`", RUNS_HEADER.join(",")),
        });
    }
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |what: &str| Error::Parse { line, message: format!("invalid {what}") };
        let float = |k: usize, what: &str| rec[k].parse::<f64>().map_err(|_| bad(what));
        let mode: u8 = rec[0].parse().map_err(|_| bad("mode"))?;
        let final_lambda = if rec[5].is_empty() {
            Vec::new()
        } else {
            rec[5]
                .split(';')
                .map(|v| v.parse::<f64>().map_err(|_| bad("final_lambda")))
                .collect::<Result<_>>()?
        };
        out.push(RunSummary {
            mode: Mode::from_index(mode).map_err(|_| bad("mode"))?,
            seed: rec[1].parse().map_err(|_| bad("seed"))?,
            final_l2: float(2, "final_l2")?,
            lowest_l2: float(3, "lowest_l2")?,
            duration_secs: float(4, "duration_s")?,
            final_lambda,
        });
    }
    Ok(out)
}

pub fn write_trace_csv<W: Write>(trace: &RunTrace, out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let Some(first) = trace.rows.first() else {
        return w.flush();
    };
    let n_sens = first.sensitivity_loss.len();
    let mut header = vec!["iteration".to_owned(), "epoch".into(), "weighted_loss".into(), "response_loss".into()];
    header.extend((1..=n_sens).map(|j| format!("sensitivity_loss_{j}")));
    header.push("lambda_r".into());
    header.extend((1..=n_sens).map(|j| format!("lambda_{j}")));
    header.push("val_l2".into());
    header.push("train_loss".into());
    w.write_record(&header)?;
    let opt = |v: Option<f64>| v.map(float_text).unwrap_or_default();
    for r in &trace.rows {
        let mut rec = vec![
            r.iteration.to_string(),
            r.epoch.to_string(),
            float_text(r.weighted_loss),
            float_text(r.response_loss),
        ];
        rec.extend(r.sensitivity_loss.iter().map(|&v| float_text(v)));
        rec.extend(r.lambda.iter().map(|&v| float_text(v)));
        rec.push(opt(r.val_l2));
        rec.push(opt(r.train_loss));
        w.write_record(&rec)?;
    }
    w.flush()
}

fn write_file(path: &Path, f: impl FnOnce(BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    f(BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

pub fn trace_file_name(mode: Mode, seed: u64) -> String {
    format!("trace_{}_{}.csv", mode.index(), seed)
}

/// Writes `summary.json`, `timing.json`, `runs.csv` and any kept traces into `dir`.
pub fn export_results(result: &SweepResult, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let summary = summary_json(result);
    write_file(&dir.join("summary.json"), |mut w| w.write_all(summary.as_bytes()))?;
    let timing = TimingFile {
        modes: result
            .stats
            .iter()
            .map(|s| {
                (
                    s.mode.index(),
                    ModeTiming {
                        mean_duration_secs: s.mean_duration_secs,
                        total_duration_secs: s.total_duration_secs,
                    },
                )
            })
            .collect(),
    };
    write_file(&dir.join("timing.json"), |mut w| {
        serde_json::to_writer_pretty(&mut w, &timing)?;
        w.write_all(b"\n")
    })?;
    write_file(&dir.join("runs.csv"), |w| write_runs_csv(&result.runs, w))?;
    for (mode, seed, trace) in &result.traces {
        write_file(&dir.join(trace_file_name(*mode, *seed)), |w| write_trace_csv(trace, w))?;
    }
    Ok(())
}

/// Reads back `summary.json`, filling durations from `timing.json` when present.
pub fn import_results(dir: impl AsRef<Path>) -> Result<SummaryFile> {
    let dir = dir.as_ref();
    let path = dir.join("summary.json");
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let mut summary = parse_summary(&bytes).map_err(|source| Error::Json { path: path.clone(), source })?;
    let timing_path = dir.join("timing.json");
    if let Ok(bytes) = fs::read(&timing_path) {
        let timing: TimingFile =
            serde_json::from_slice(&bytes).map_err(|source| Error::Json { path: timing_path, source })?;
        for (mode, t) in timing.modes {
            if let Some(s) = summary.modes.get_mut(&mode) {
                s.mean_duration_secs = t.mean_duration_secs;
                s.total_duration_secs = t.total_duration_secs;
            }
        }
    }
    Ok(summary)
}

pub fn read_runs_csv(path: impl AsRef<Path>) -> Result<Vec<RunSummary>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_runs_csv(std::io::BufReader::new(file))
}
