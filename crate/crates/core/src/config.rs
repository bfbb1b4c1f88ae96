//! Run settings file (TOML key-value pairs) and named presets.
//!
//! Resolution order: built-in defaults, then preset, then file, then
//! command-line overrides. Every key is optional; unknown keys are errors.
//!
//! ```toml
//! problem = "trig"
//! grid = 25
//! layers = "2,5,3,3,1"
//! epochs = 500
//! mode = 10
//! runs = 100
//! learn_rate = 0.001
//! ```

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::data::SplitPattern;
use crate::error::{Error, Result};
use crate::experiment::{DataSource, SplitSpec, SweepConfig};
use crate::network::NetworkShape;
use crate::optim::AdamConfig;
use crate::problems::AnalyticProblem;
use crate::trainer::TrainConfig;
use crate::weighting::Mode;

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    pub problem: Option<String>,
    pub data: Option<PathBuf>,
    pub grid: Option<usize>,
    pub layers: Option<String>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub mode: Option<u8>,
    pub modes: Option<Vec<u8>>,
    pub runs: Option<usize>,
    pub seed: Option<u64>,
    pub learn_rate: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub epsilon: Option<f64>,
    pub lambda_learn_rate: Option<f64>,
    pub n_train: Option<usize>,
    pub n_val: Option<usize>,
    /// `"stride2"` or `"seeded"`.
    pub split: Option<String>,
    pub split_seed: Option<u64>,
    pub schedule_rate: Option<f64>,
    pub epsilon0: Option<f64>,
    pub val_stride: Option<usize>,
}

impl Overrides {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Fields set in `other` replace those in `self`.
    pub fn merge(mut self, other: Overrides) -> Self {
        let (has_data, has_problem) = (other.data.is_some(), other.problem.is_some());
        let (has_mode, has_modes) = (other.mode.is_some(), other.modes.is_some());
        macro_rules! take {
            ($($f:ident),*) => { $( if other.$f.is_some() { self.$f = other.$f; } )* };
        }
        take!(
            problem, data, grid, layers, epochs, batch_size, mode, modes, runs, seed, learn_rate, beta1, beta2,
            epsilon, lambda_learn_rate, n_train, n_val, split, split_seed, schedule_rate, epsilon0, val_stride
        );
        if has_data && !has_problem {
            self.problem = None;
        } else if has_problem && !has_data {
            self.data = None;
        }
        if has_mode && !has_modes {
            self.modes = None;
        }
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// 625-point trig grid, stride-2 313/312 split, 2-5-3-3-1, 500 epochs, 100 runs.
    Paper500,
    /// As `Paper500` with a seeded 320/305 split.
    Paper500Seeded,
}

impl Preset {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "paper500" => Ok(Preset::Paper500),
            "paper500-seeded" => Ok(Preset::Paper500Seeded),
            _ => Err(Error::Config(format!("unknown preset `{name}` (expected paper500 or paper500-seeded)"))),
        }
    }

    pub fn overrides(self) -> Overrides {
        let mut o = Overrides {
            problem: Some("trig".into()),
            grid: Some(25),
            layers: Some("2,5,3,3,1".into()),
            epochs: Some(500),
            runs: Some(100),
            n_train: Some(313),
            n_val: Some(312),
            split: Some("stride2".into()),
            ..Overrides::default()
        };
        if self == Preset::Paper500Seeded {
            o.n_train = Some(320);
            o.n_val = Some(305);
            o.split = Some("seeded".into());
            o.split_seed = Some(0);
        }
        o
    }
}

/// Builds a sweep configuration from defaults plus `o`.
pub fn resolve(o: &Overrides) -> Result<SweepConfig> {
    let mut cfg = SweepConfig::paper500(vec![Mode::Sobolev]);
    cfg.source = match (&o.data, &o.problem) {
        (Some(_), Some(_)) => return Err(Error::Config("`problem` and `data` are mutually exclusive".into())),
        (Some(path), None) => DataSource::Csv { path: path.clone() },
        (None, problem) => {
            let problem: AnalyticProblem = problem.as_deref().unwrap_or("trig").parse()?;
            let points_per_axis = o.grid.unwrap_or(25);
            if points_per_axis < 2 {
                return Err(Error::Config("grid must be at least 2".into()));
            }
            DataSource::Problem { problem, points_per_axis }
        }
    };

    let split_seed = o.split_seed.unwrap_or(0);
    let pattern = match o.split.as_deref() {
        None | Some("stride2") if o.split_seed.is_none() => SplitPattern::Stride2,
        None | Some("seeded") => SplitPattern::Seeded(split_seed),
        Some("stride2") => return Err(Error::Config("split_seed only applies to split = \"seeded\"".into())),
        Some(other) => return Err(Error::Config(format!("unknown split `{other}`"))),
    };
    let default_split = default_split_for(&cfg.source);
    cfg.split = SplitSpec {
        n_train: o.n_train.unwrap_or(default_split.0),
        n_val: o.n_val.unwrap_or(default_split.1),
        pattern,
    };

    let mut t = TrainConfig::default();
    if let Some(layers) = &o.layers {
        t.shape = NetworkShape::parse(layers)?;
    }
    set(&mut t.epochs, o.epochs);
    set(&mut t.batch_size, o.batch_size);
    set(&mut t.seed, o.seed);
    set(&mut t.schedule_rate, o.schedule_rate);
    set(&mut t.epsilon0, o.epsilon0);
    set(&mut t.val_stride, o.val_stride);
    t.adam_theta = adam(o, o.learn_rate);
    t.adam_lambda = adam(o, o.lambda_learn_rate.or(o.learn_rate));
    t.validate()?;
    cfg.base = t;

    let modes = match (&o.modes, o.mode) {
        (Some(list), _) => list.clone(),
        (None, Some(m)) => vec![m],
        (None, None) => vec![Mode::Sobolev.index()],
    };
    cfg.modes = modes.into_iter().map(Mode::from_index).collect::<Result<_>>()?;
    cfg.n_runs = o.runs.unwrap_or(cfg.n_runs);
    if cfg.n_runs == 0 {
        return Err(Error::Config("runs must be at least 1".into()));
    }
    Ok(cfg)
}

fn default_split_for(source: &DataSource) -> (usize, usize) {
    match source {
        DataSource::Problem { points_per_axis, .. } => {
            let n = points_per_axis * points_per_axis;
            (n - n / 2, n / 2)
        }
        // resolved against the file size when the data is loaded
        DataSource::Csv { .. } => (0, 0),
    }
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn adam(o: &Overrides, learn_rate: Option<f64>) -> AdamConfig {
    let d = AdamConfig::default();
    AdamConfig {
        learn_rate: learn_rate.unwrap_or(d.learn_rate),
        beta1: o.beta1.unwrap_or(d.beta1),
        beta2: o.beta2.unwrap_or(d.beta2),
        epsilon: o.epsilon.unwrap_or(d.epsilon),
    }
}
