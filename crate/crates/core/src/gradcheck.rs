//! Finite-difference verification of the input Jacobian and of the weighted
//! loss gradient on random networks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::mathcore::Matrix;
use crate::network::{backprop, forward, init_params, input_jacobian, NetworkParams, NetworkShape};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckConfig {
    pub n_networks: usize,
    pub step: f64,
    pub tolerance: f64,
    /// Denominator floor for the relative error.
    pub floor: f64,
    /// Points whose hidden pre-activations come closer than this to a kink are redrawn.
    pub kink_margin: f64,
    pub seed: u64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            n_networks: 20,
            step: 1e-6,
            tolerance: 1e-6,
            floor: 1e-3,
            kink_margin: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub n_networks: usize,
    pub n_points_redrawn: usize,
    pub max_jacobian_error: f64,
    pub max_gradient_error: f64,
    pub tolerance: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.max_jacobian_error <= self.tolerance && self.max_gradient_error <= self.tolerance
    }
}

pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

fn weighted_loss(p: &NetworkParams, x: &[f64], y: &[f64], target_jac: &Matrix, lambda: &[f64]) -> Result<f64> {
    let (yh, cache) = forward(p, x)?;
    let j = input_jacobian(p, &cache);
    let mut loss = 0.0;
    for (a, b) in yh.iter().zip(y) {
        loss += 0.5 * lambda[0] * (a - b) * (a - b);
    }
    for r in 0..j.rows() {
        for c in 0..j.cols() {
            let d = j.get(r, c) - target_jac.get(r, c);
            loss += 0.5 * lambda[1 + c] * d * d;
        }
    }
    Ok(loss)
}

/// Checks `cfg.n_networks` randomly initialized networks of `shape`.
pub fn run(shape: &NetworkShape, cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (n_in, n_out) = (shape.n_in(), shape.n_out());
    let mut report = GradcheckReport {
        n_networks: cfg.n_networks,
        n_points_redrawn: 0,
        max_jacobian_error: 0.0,
        max_gradient_error: 0.0,
        tolerance: cfg.tolerance,
    };
    for _ in 0..cfg.n_networks {
        let mut p = init_params(shape, rng.gen());
        // nonzero biases so kinks do not all pass through the origin
        for b in &mut p.biases {
            b.iter_mut().for_each(|v| *v = rng.gen_range(-0.5..0.5));
        }
        let (x, yh, cache) = loop {
            let x: Vec<f64> = (0..n_in).map(|_| rng.gen_range(-1.5..1.5)).collect();
            let (yh, cache) = forward(&p, &x)?;
            if cache.min_abs_hidden_preactivation() > cfg.kink_margin {
                break (x, yh, cache);
            }
            report.n_points_redrawn += 1;
        };

        let jac = input_jacobian(&p, &cache);
        for c in 0..n_in {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[c] += cfg.step;
            xm[c] -= cfg.step;
            let (fp, _) = forward(&p, &xp)?;
            let (fm, _) = forward(&p, &xm)?;
            for r in 0..n_out {
                let fd = (fp[r] - fm[r]) / (2.0 * cfg.step);
                report.max_jacobian_error = report.max_jacobian_error.max(relative_error(jac.get(r, c), fd, cfg.floor));
            }
        }

        let y: Vec<f64> = (0..n_out).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let target = Matrix::from_vec(n_out, n_in, (0..n_out * n_in).map(|_| rng.gen_range(-2.0..2.0)).collect())?;
        let lambda: Vec<f64> = (0..=n_in).map(|_| rng.gen_range(0.1..2.0)).collect();
        let resid_y: Vec<f64> = yh.iter().zip(&y).map(|(a, b)| a - b).collect();
        let resid_jac = Matrix::from_vec(
            n_out,
            n_in,
            jac.as_slice().iter().zip(target.as_slice()).map(|(a, b)| a - b).collect(),
        )?;
        let grad = backprop(&p, &cache, &resid_y, &resid_jac, &lambda)?;
        let theta = p.to_flat();
        let mut q = p.clone();
        let mut t = theta.clone();
        for k in 0..theta.len() {
            t[k] = theta[k] + cfg.step;
            q.set_flat(&t)?;
            let lp = weighted_loss(&q, &x, &y, &target, &lambda)?;
            t[k] = theta[k] - cfg.step;
            q.set_flat(&t)?;
            let lm = weighted_loss(&q, &x, &y, &target, &lambda)?;
            t[k] = theta[k];
            let fd = (lp - lm) / (2.0 * cfg.step);
            report.max_gradient_error = report.max_gradient_error.max(relative_error(grad.flat[k], fd, cfg.floor));
        }
    }
    Ok(report)
}
