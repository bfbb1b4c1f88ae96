//! One seeded training run.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::data::{minibatches, Dataset, MinibatchPlan, StandardizationStats};
use crate::error::{Error, Result};
use crate::loss::{relative_l2_error, response_loss, sensitivity_loss_per_input, weighted_total};
use crate::mathcore::{Matrix, Vector};
use crate::network::{backprop, forward, init_params, input_jacobian, per_loss_gradients, NetworkParams, NetworkShape};
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::weighting::{Mode, ModeKind, ResidualWeightState, WeightingContext, DEFAULT_EPSILON0, DEFAULT_SCHEDULE_RATE};

/// Offsets the minibatch shuffle stream from the initialization stream of the same seed.
const SHUFFLE_SEED_OFFSET: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub shape: NetworkShape,
    pub mode: Mode,
    pub epochs: usize,
    pub adam_theta: AdamConfig,
    pub adam_lambda: AdamConfig,
    pub batch_size: usize,
    pub seed: u64,
    /// `μ` of modes 12 and 13.
    pub schedule_rate: f64,
    pub epsilon0: f64,
    /// Validation error is computed every `val_stride` iterations (and always on the last).
    pub val_stride: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            shape: NetworkShape::new(vec![2, 5, 3, 3, 1]).expect("valid"),
            mode: Mode::Sobolev,
            epochs: 500,
            adam_theta: AdamConfig::default(),
            adam_lambda: AdamConfig::default(),
            batch_size: 64,
            seed: 0,
            schedule_rate: DEFAULT_SCHEDULE_RATE,
            epsilon0: DEFAULT_EPSILON0,
            val_stride: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.val_stride == 0 {
            return Err(Error::Config("val_stride must be at least 1".into()));
        }
        if !(self.epsilon0 > 0.0) {
            return Err(Error::Config("epsilon0 must be positive".into()));
        }
        if !(self.schedule_rate >= 0.0) {
            return Err(Error::Config("schedule_rate must be non-negative".into()));
        }
        self.adam_theta.validate()?;
        self.adam_lambda.validate()
    }
}

/// One logged training iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub epoch: usize,
    /// Minibatch weighted loss before the parameter step.
    pub weighted_loss: f64,
    pub response_loss: f64,
    pub sensitivity_loss: Vec<f64>,
    /// Weights used for this iteration's loss.
    pub lambda: Vec<f64>,
    /// Validation relative l2 error after the parameter step.
    pub val_l2: Option<f64>,
    /// Weighted loss over the full training set, logged on the last iteration of each epoch.
    pub train_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub rows: Vec<TraceRow>,
    pub duration: Duration,
}

impl RunTrace {
    pub fn final_val_l2(&self) -> Option<f64> {
        self.rows.iter().rev().find_map(|r| r.val_l2)
    }

    pub fn lowest_val_l2(&self) -> Option<f64> {
        self.rows.iter().filter_map(|r| r.val_l2).reduce(f64::min)
    }

    pub fn final_lambda(&self) -> Option<&[f64]> {
        self.rows.last().map(|r| r.lambda.as_slice())
    }
}

pub fn count_iterations(epochs: usize, n_train: usize, batch_size: usize) -> usize {
    epochs * n_train.div_ceil(batch_size.max(1))
}

struct BatchResult {
    response: f64,
    sensitivity: Vec<f64>,
    /// Either `[ḡ_R, ḡ_1, …]` (adaptive) or a single weighted gradient.
    grads: Vec<Vector>,
}

fn residuals(params: &NetworkParams, x: &[f64], y: &[f64], dy_dx: &Matrix) -> Result<(Vec<f64>, Matrix, f64, Vec<f64>, crate::network::ForwardCache)> {
    let (y_hat, cache) = forward(params, x)?;
    let jac = input_jacobian(params, &cache);
    let e_r = response_loss(&y_hat, y)?;
    let e_s = sensitivity_loss_per_input(&jac, dy_dx)?;
    let ry: Vec<f64> = y_hat.iter().zip(y).map(|(a, b)| a - b).collect();
    let rj = Matrix::from_vec(
        jac.rows(),
        jac.cols(),
        jac.as_slice().iter().zip(dy_dx.as_slice()).map(|(a, b)| a - b).collect(),
    )?;
    Ok((ry, rj, e_r, e_s, cache))
}

fn evaluate_batch(
    params: &NetworkParams,
    data: &Dataset,
    batch: &[usize],
    lambda: &[f64],
    per_term: bool,
) -> Result<BatchResult> {
    let n_in = data.n_in();
    let n_params = params.n_params();
    let n_grads = if per_term { n_in + 1 } else { 1 };
    let mut grads = vec![Vector::zeros(n_params); n_grads];
    let mut response = 0.0;
    let mut sensitivity = vec![0.0; n_in];
    for &idx in batch {
        let s = &data.samples[idx];
        let (ry, rj, e_r, e_s, cache) = residuals(params, &s.x, &s.y, &s.dy_dx)?;
        response += e_r;
        for (acc, e) in sensitivity.iter_mut().zip(&e_s) {
            *acc += e;
        }
        if per_term {
            for (acc, g) in grads.iter_mut().zip(per_loss_gradients(params, &cache, &ry, &rj)?) {
                acc.axpy(1.0, &g);
            }
        } else {
            let g = backprop(params, &cache, &ry, &rj, lambda)?;
            grads[0].axpy(1.0, &g.flat);
        }
    }
    let n = batch.len() as f64;
    for g in &mut grads {
        for v in g.iter_mut() {
            *v /= n;
        }
    }
    Ok(BatchResult {
        response: response / n,
        sensitivity: sensitivity.into_iter().map(|e| e / n).collect(),
        grads,
    })
}

fn full_weighted_loss(params: &NetworkParams, data: &Dataset, lambda: &[f64]) -> Result<f64> {
    let n = data.len() as f64;
    let mut e_r = 0.0;
    let mut e_s = vec![0.0; data.n_in()];
    for s in &data.samples {
        let (_, _, r, sens, _) = residuals(params, &s.x, &s.y, &s.dy_dx)?;
        e_r += r / n;
        for (acc, e) in e_s.iter_mut().zip(sens) {
            *acc += e / n;
        }
    }
    Ok(weighted_total(e_r, &e_s, lambda)?.total_weighted)
}

fn stats_of(d: &Dataset) -> Result<&StandardizationStats> {
    d.stats
        .as_ref()
        .filter(|_| d.standardized)
        .ok_or_else(|| Error::Config("training data must be standardized".into()))
}

/// Trains one network. Both datasets must be standardized with the same statistics.
///
/// Per iteration: minibatch losses and gradients are computed once, the network
/// takes an ADAM step with the current weights, then adaptive residual weights
/// are updated from the same cached gradients. Scheduled weights change at
/// the end of each epoch.
pub fn train(cfg: &TrainConfig, train_set: &Dataset, val_set: &Dataset) -> Result<(NetworkParams, RunTrace)> {
    cfg.validate()?;
    let started = Instant::now();
    let stats = stats_of(train_set)?;
    if !val_set.is_empty() && val_set.stats.as_ref() != Some(stats) {
        return Err(Error::Config("validation data must share the training statistics".into()));
    }
    if train_set.is_empty() {
        return Err(Error::Size { requested: 1, available: 0 });
    }
    if train_set.n_in() != cfg.shape.n_in() || train_set.n_out() != cfg.shape.n_out() {
        return Err(Error::shape(
            "train",
            format!("{} inputs, {} outputs", cfg.shape.n_in(), cfg.shape.n_out()),
            format!("{} inputs, {} outputs", train_set.n_in(), train_set.n_out()),
        ));
    }

    let mut params = init_params(&cfg.shape, cfg.seed);
    let mut theta_moments = AdamState::new(params.n_params());
    let mut weights = ResidualWeightState::new(cfg.mode, cfg.shape.n_in(), cfg.epsilon0, cfg.schedule_rate);
    let plan = MinibatchPlan::new(train_set.len(), cfg.batch_size, cfg.seed.wrapping_add(SHUFFLE_SEED_OFFSET))?;
    let total = count_iterations(cfg.epochs, train_set.len(), cfg.batch_size);
    let adaptive = cfg.mode.kind() == ModeKind::Adaptive;

    let mut rows = Vec::with_capacity(total);
    let mut iteration = 0;
    for epoch in 0..cfg.epochs {
        let batches = minibatches(&plan, epoch);
        let n_batches = batches.len();
        for (b, batch) in batches.iter().enumerate() {
            let lambda = weights.clamped.clone();
            let res = evaluate_batch(&params, train_set, batch, &lambda, adaptive)?;
            let breakdown = weighted_total(res.response, &res.sensitivity, &lambda)?;
            if !breakdown.total_weighted.is_finite() {
                return Err(Error::Divergence { iteration });
            }

            let (step, ctx) = if adaptive {
                let ctx = WeightingContext::new(breakdown.components(), res.grads, &lambda)?;
                (adam_step(&mut theta_moments, &ctx.total_grad, &cfg.adam_theta)?, Some(ctx))
            } else {
                (adam_step(&mut theta_moments, &res.grads[0], &cfg.adam_theta)?, None)
            };
            params.add_flat(&step)?;
            if !params.is_finite() {
                return Err(Error::Divergence { iteration });
            }
            if let Some(c) = &ctx {
                weights.update_adaptive(c, &cfg.adam_lambda)?;
            }

            let val_l2 = if !val_set.is_empty() && (iteration % cfg.val_stride == 0 || iteration + 1 == total) {
                Some(relative_l2_error(&params, val_set, stats)?)
            } else {
                None
            };
            let train_loss = if b + 1 == n_batches {
                Some(full_weighted_loss(&params, train_set, &lambda)?)
            } else {
                None
            };
            rows.push(TraceRow {
                iteration,
                epoch,
                weighted_loss: breakdown.total_weighted,
                response_loss: breakdown.response,
                sensitivity_loss: breakdown.sensitivity,
                lambda: lambda.into_inner(),
                val_l2,
                train_loss,
            });
            iteration += 1;
        }
        if weights.mode.kind() == ModeKind::Scheduled {
            weights.update_scheduled(epoch + 1)?;
        }
    }
    Ok((
        params,
        RunTrace {
            rows,
            duration: started.elapsed(),
        },
    ))
}
