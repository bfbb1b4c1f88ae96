//! Analytic benchmark fields over two design parameters, each with an exact gradient.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, SamplePoint};
use crate::error::{Error, Result};
use crate::mathcore::Matrix;

/// `(amplitude, center, width)` of each bump in [`AnalyticProblem::Peaks`].
const PEAKS: [(f64, [f64; 2], f64); 3] = [
    (1.0, [-0.4, -0.3], 0.35),
    (-0.7, [0.45, 0.35], 0.25),
    (0.5, [0.1, -0.6], 0.5),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnalyticProblem {
    /// `sin(πx₁)·cos(πx₂)`
    Trig,
    /// Three Gaussian bumps with distinct centers and widths.
    Peaks,
    /// `x₁² + tanh(3x₂)`
    Ridge,
}

impl AnalyticProblem {
    pub const ALL: [AnalyticProblem; 3] = [Self::Trig, Self::Peaks, Self::Ridge];

    pub fn name(self) -> &'static str {
        match self {
            Self::Trig => "trig",
            Self::Peaks => "peaks",
            Self::Ridge => "ridge",
        }
    }

    pub fn n_in(self) -> usize {
        2
    }

    pub fn domain(self) -> [(f64, f64); 2] {
        [(-1.0, 1.0), (-1.0, 1.0)]
    }

    /// Response and gradient at `x`.
    pub fn eval(self, x: [f64; 2]) -> (f64, [f64; 2]) {
        let [a, b] = x;
        match self {
            Self::Trig => {
                let (sa, ca) = (PI * a).sin_cos();
                let (sb, cb) = (PI * b).sin_cos();
                (sa * cb, [PI * ca * cb, -PI * sa * sb])
            }
            Self::Peaks => {
                let mut y = 0.0;
                let mut g = [0.0; 2];
                for (amp, c, w) in PEAKS {
                    let (da, db) = (a - c[0], b - c[1]);
                    let e = amp * (-(da * da + db * db) / (2.0 * w * w)).exp();
                    y += e;
                    g[0] -= e * da / (w * w);
                    g[1] -= e * db / (w * w);
                }
                (y, g)
            }
            Self::Ridge => {
                let t = (3.0 * b).tanh();
                (a * a + t, [2.0 * a, 3.0 * (1.0 - t * t)])
            }
        }
    }

    pub fn sample(self, x: [f64; 2]) -> SamplePoint {
        let (y, g) = self.eval(x);
        SamplePoint::new(
            x.to_vec(),
            vec![y],
            Matrix::from_vec(1, 2, g.to_vec()).expect("1x2"),
        )
        .expect("consistent dims")
    }
}

impl fmt::Display for AnalyticProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AnalyticProblem {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        builtin(s)
    }
}

pub fn builtin(name: &str) -> Result<AnalyticProblem> {
    AnalyticProblem::ALL
        .into_iter()
        .find(|p| p.name() == name)
        .ok_or_else(|| Error::UnknownProblem(name.to_owned()))
}

/// Tensor-product grid with endpoints, row-major: the second input varies fastest.
pub fn sample_grid(p: AnalyticProblem, points_per_axis: usize) -> Result<Dataset> {
    if points_per_axis < 2 {
        return Err(Error::Config(format!(
            "points_per_axis must be at least 2, got {points_per_axis}"
        )));
    }
    let axis = |(lo, hi): (f64, f64)| -> Vec<f64> {
        let step = (hi - lo) / (points_per_axis - 1) as f64;
        (0..points_per_axis)
            .map(|k| if k + 1 == points_per_axis { hi } else { lo + k as f64 * step })
            .collect()
    };
    let [d0, d1] = p.domain();
    let (a0, a1) = (axis(d0), axis(d1));
    let samples = a0
        .iter()
        .flat_map(|&u| a1.iter().map(move |&v| [u, v]))
        .map(|x| p.sample(x))
        .collect();
    Dataset::new(samples)
}
