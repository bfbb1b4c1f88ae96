//! Residual weights on the response and sensitivity loss terms.
//!
//! Thirteen strategies are supported, selected by an integer mode:
//!
//! | mode | strategy |
//! |------|----------|
//! | 1 / 2 | minimize / maximize the weighted loss `L` |
//! | 3 / 4 | minimize / maximize `‖∇L‖` |
//! | 5 | minimize the population variance of the weighted loss terms |
//! | 6 / 7 | minimize `Σ (1 − cos(∇L, λᵢgᵢ))` / `Σ cos²(∇L, λᵢgᵢ)` |
//! | 8 / 9 | as 6 / 7 but against the response gradient `λ_R g_R`, over sensitivity terms |
//! | 10 | fixed `(1, 1, …)` |
//! | 11 | fixed `(1, 0, …)`: response only |
//! | 12 | sensitivity weights divided by `1 + μ·epoch` after every epoch |
//! | 13 | sensitivity weights multiplied by `1 + μ·epoch` after every epoch |
//!
//! Adaptive modes (1–9) keep an unbounded raw weight per term and map it to
//! the weight actually used through
//! `λ = 1 − erf((1.2 − raw)/√3) + ε₀`, which lies in `(ε₀, 2 + ε₀)`.
//! The raw weights are stepped with ADAM on the mode's objective. Objective
//! gradients are taken by central differences in the mapped weights, using
//! the per-term parameter gradients cached for the current minibatch, then
//! chained through the derivative of the map.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mathcore::{cosine_similarity, erfc, l2_norm, Vector};
use crate::optim::{adam_step, AdamConfig, AdamState};

pub const DEFAULT_EPSILON0: f64 = 0.01;
pub const DEFAULT_SCHEDULE_RATE: f64 = 0.01;
/// Raw value of every adaptive weight at initialization; maps to `1 + ε₀`.
pub const INITIAL_RAW: f64 = 1.2;
/// Step in mapped-weight space for the objective's central differences.
pub const LAMBDA_FD_STEP: f64 = 1e-6;

const CLAMP_CENTER: f64 = 1.2;
const CLAMP_SCALE_SQ: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mode {
    MinLoss = 1,
    MaxLoss = 2,
    MinGradNorm = 3,
    MaxGradNorm = 4,
    MinVariance = 5,
    MinCosineDistanceTotal = 6,
    MinSquaredCosineTotal = 7,
    MinCosineDistanceResponse = 8,
    MinSquaredCosineResponse = 9,
    Sobolev = 10,
    ResponseOnly = 11,
    ExpDecay = 12,
    ExpIncrease = 13,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeKind {
    Adaptive,
    Fixed,
    Scheduled,
}

impl Mode {
    pub const ALL: [Mode; 13] = [
        Mode::MinLoss,
        Mode::MaxLoss,
        Mode::MinGradNorm,
        Mode::MaxGradNorm,
        Mode::MinVariance,
        Mode::MinCosineDistanceTotal,
        Mode::MinSquaredCosineTotal,
        Mode::MinCosineDistanceResponse,
        Mode::MinSquaredCosineResponse,
        Mode::Sobolev,
        Mode::ResponseOnly,
        Mode::ExpDecay,
        Mode::ExpIncrease,
    ];

    pub fn from_index(i: u8) -> Result<Self> {
        Mode::ALL
            .get((i as usize).wrapping_sub(1))
            .copied()
            .ok_or(Error::InvalidMode(i))
    }

    pub fn index(self) -> u8 {
        self as u8
    }

    pub fn kind(self) -> ModeKind {
        match self.index() {
            1..=9 => ModeKind::Adaptive,
            10 | 11 => ModeKind::Fixed,
            _ => ModeKind::Scheduled,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Mode::MinLoss => "min L",
            Mode::MaxLoss => "max L",
            Mode::MinGradNorm => "min |grad L|",
            Mode::MaxGradNorm => "max |grad L|",
            Mode::MinVariance => "min Var(L)",
            Mode::MinCosineDistanceTotal => "min CD(total)",
            Mode::MinSquaredCosineTotal => "min CS^2(total)",
            Mode::MinCosineDistanceResponse => "min CD(response)",
            Mode::MinSquaredCosineResponse => "min CS^2(response)",
            Mode::Sobolev => "SNN",
            Mode::ResponseOnly => "basic ANN",
            Mode::ExpDecay => "SNN exp. decay",
            Mode::ExpIncrease => "SNN exp. increase",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.index())
    }
}

impl TryFrom<u8> for Mode {
    type Error = Error;

    fn try_from(i: u8) -> Result<Self> {
        Mode::from_index(i)
    }
}

impl Serialize for Mode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_u8(self.index())
    }
}

impl<'de> Deserialize<'de> for Mode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let i = u8::deserialize(d)?;
        Mode::from_index(i).map_err(serde::de::Error::custom)
    }
}

/// `1 − erf((1.2 − raw)/√3) + ε₀`, evaluated through `erfc` so the lower tail keeps precision.
///
/// The result is strictly inside `(ε₀, 2 + ε₀)` for `raw ∈ [−9, 9]`; beyond that
/// the tail falls below one ulp of the bound and rounds onto it.
pub fn clamp(raw: f64, eps0: f64) -> f64 {
    erfc((CLAMP_CENTER - raw) / CLAMP_SCALE_SQ.sqrt()) + eps0
}

/// `dλ/draw = 2/√(3π) · exp(−(1.2 − raw)²/3)`
pub fn clamp_derivative(raw: f64) -> f64 {
    let d = CLAMP_CENTER - raw;
    2.0 / (CLAMP_SCALE_SQ * std::f64::consts::PI).sqrt() * (-d * d / CLAMP_SCALE_SQ).exp()
}

pub fn clamp_map(raw: &[f64], eps0: f64) -> Vector {
    raw.iter().map(|&r| clamp(r, eps0)).collect()
}

/// Loss components and per-term parameter gradients of one minibatch.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightingContext {
    /// `[E_R, E_1, …, E_n]`
    pub loss_components: Vec<f64>,
    /// `[g_R, g_1, …, g_n]`, unweighted.
    pub per_loss_grads: Vec<Vector>,
    /// `Σ λᵢ gᵢ` at the weights the context was built with.
    pub total_grad: Vector,
}

impl WeightingContext {
    pub fn new(loss_components: Vec<f64>, per_loss_grads: Vec<Vector>, lambda: &[f64]) -> Result<Self> {
        if loss_components.len() != per_loss_grads.len() || lambda.len() != per_loss_grads.len() {
            return Err(Error::shape(
                "WeightingContext::new",
                format!("{} terms", lambda.len()),
                format!("{} losses, {} gradients", loss_components.len(), per_loss_grads.len()),
            ));
        }
        let n = per_loss_grads.first().map_or(0, |g| g.len());
        if per_loss_grads.iter().any(|g| g.len() != n) {
            return Err(Error::shape("WeightingContext::new", n, "ragged gradients"));
        }
        let total_grad = combine(&per_loss_grads, lambda);
        Ok(WeightingContext {
            loss_components,
            per_loss_grads,
            total_grad,
        })
    }

    pub fn n_terms(&self) -> usize {
        self.per_loss_grads.len()
    }
}

fn combine(grads: &[Vector], lambda: &[f64]) -> Vector {
    let mut total = Vector::zeros(grads.first().map_or(0, |g| g.len()));
    for (l, g) in lambda.iter().zip(grads) {
        total.axpy(*l, g);
    }
    total
}

fn scaled(g: &[f64], s: f64) -> Vector {
    g.iter().map(|v| s * v).collect()
}

/// Objective of an adaptive mode at weights `lambda`; every mode is posed as a minimization.
pub fn objective(mode: Mode, ctx: &WeightingContext, lambda: &[f64]) -> Result<f64> {
    if lambda.len() != ctx.n_terms() {
        return Err(Error::shape("objective", ctx.n_terms(), lambda.len()));
    }
    let weighted_loss = || {
        lambda
            .iter()
            .zip(&ctx.loss_components)
            .map(|(l, e)| l * e)
            .sum::<f64>()
    };
    let value = match mode {
        Mode::MinLoss => weighted_loss(),
        Mode::MaxLoss => -weighted_loss(),
        Mode::MinGradNorm => l2_norm(&combine(&ctx.per_loss_grads, lambda)),
        Mode::MaxGradNorm => -l2_norm(&combine(&ctx.per_loss_grads, lambda)),
        Mode::MinVariance => {
            let terms: Vec<f64> = lambda
                .iter()
                .zip(&ctx.loss_components)
                .map(|(l, e)| l * e)
                .collect();
            let n = terms.len() as f64;
            let mean = terms.iter().sum::<f64>() / n;
            terms.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / n
        }
        Mode::MinCosineDistanceTotal | Mode::MinSquaredCosineTotal => {
            let total = combine(&ctx.per_loss_grads, lambda);
            let mut acc = 0.0;
            for (l, g) in lambda.iter().zip(&ctx.per_loss_grads) {
                let c = cosine_similarity(&total, &scaled(g, *l))?;
                acc += if mode == Mode::MinCosineDistanceTotal { 1.0 - c } else { c * c };
            }
            acc
        }
        Mode::MinCosineDistanceResponse | Mode::MinSquaredCosineResponse => {
            let response = scaled(&ctx.per_loss_grads[0], lambda[0]);
            let mut acc = 0.0;
            for (l, g) in lambda.iter().zip(&ctx.per_loss_grads).skip(1) {
                let c = cosine_similarity(&response, &scaled(g, *l))?;
                acc += if mode == Mode::MinCosineDistanceResponse { 1.0 - c } else { c * c };
            }
            acc
        }
        other => return Err(Error::NotAdaptive(other.index())),
    };
    Ok(value)
}

/// Residual weights of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualWeightState {
    pub mode: Mode,
    /// Unmapped weights: the ADAM variable for adaptive modes, equal to `clamped` otherwise.
    pub raw: Vector,
    /// Weights used in the loss, `[λ_R, λ_1, …, λ_n]`.
    pub clamped: Vector,
    pub epsilon0: f64,
    pub schedule_rate: f64,
    pub moments: AdamState,
}

impl ResidualWeightState {
    pub fn new(mode: Mode, n_in: usize, epsilon0: f64, schedule_rate: f64) -> Self {
        let n = n_in + 1;
        let (raw, clamped): (Vector, Vector) = match mode.kind() {
            ModeKind::Adaptive => {
                let raw = Vector::from(vec![INITIAL_RAW; n]);
                let clamped = clamp_map(&raw, epsilon0);
                (raw, clamped)
            }
            _ => {
                let mut w = vec![1.0; n];
                match mode {
                    Mode::ResponseOnly => w[1..].fill(0.0),
                    // Zero would stay zero under multiplicative growth.
                    Mode::ExpIncrease => w[1..].fill(epsilon0),
                    _ => {}
                }
                (w.clone().into(), w.into())
            }
        };
        ResidualWeightState {
            mode,
            raw,
            clamped,
            epsilon0,
            schedule_rate,
            moments: AdamState::new(n),
        }
    }

    pub fn n_terms(&self) -> usize {
        self.clamped.len()
    }

    /// One ADAM step on the raw weights, then re-map.
    pub fn update_adaptive(&mut self, ctx: &WeightingContext, adam: &AdamConfig) -> Result<()> {
        let grad = lambda_gradient(self.mode, ctx, self)?;
        let step = adam_step(&mut self.moments, &grad, adam)?;
        self.raw.axpy(1.0, &step);
        self.clamped = clamp_map(&self.raw, self.epsilon0);
        Ok(())
    }

    /// Applies the per-epoch schedule of modes 12 and 13 with `epoch` counted from 1.
    pub fn update_scheduled(&mut self, epoch: usize) -> Result<()> {
        let factor = 1.0 + self.schedule_rate * epoch as f64;
        match self.mode {
            Mode::ExpDecay => self.clamped[1..].iter_mut().for_each(|w| *w /= factor),
            Mode::ExpIncrease => self.clamped[1..].iter_mut().for_each(|w| *w *= factor),
            other => return Err(Error::NotScheduled(other.index())),
        }
        self.raw = self.clamped.clone();
        Ok(())
    }
}

/// Constant weights of modes 10 and 11.
pub fn fixed_state(mode: Mode, n_in: usize) -> Result<ResidualWeightState> {
    if mode.kind() != ModeKind::Fixed {
        return Err(Error::InvalidMode(mode.index()));
    }
    Ok(ResidualWeightState::new(mode, n_in, DEFAULT_EPSILON0, 0.0))
}

/// `dG/d(raw)`: central differences of the objective in the mapped weights
/// times the derivative of the map.
pub fn lambda_gradient(mode: Mode, ctx: &WeightingContext, state: &ResidualWeightState) -> Result<Vector> {
    if mode.kind() != ModeKind::Adaptive {
        return Err(Error::NotAdaptive(mode.index()));
    }
    let h = LAMBDA_FD_STEP;
    let mut probe = state.clamped.to_vec();
    let mut out = Vector::zeros(probe.len());
    for i in 0..probe.len() {
        let base = probe[i];
        probe[i] = base + h;
        let up = objective(mode, ctx, &probe)?;
        probe[i] = base - h;
        let down = objective(mode, ctx, &probe)?;
        probe[i] = base;
        out[i] = (up - down) / (2.0 * h) * clamp_derivative(state.raw[i]);
    }
    Ok(out)
}

/// Closed form for modes 1 and 2: `±Eᵢ · dλᵢ/draw`.
pub fn lambda_gradient_analytic(mode: Mode, ctx: &WeightingContext, state: &ResidualWeightState) -> Result<Vector> {
    let sign = match mode {
        Mode::MinLoss => 1.0,
        Mode::MaxLoss => -1.0,
        other => return Err(Error::NotAdaptive(other.index())),
    };
    Ok(ctx
        .loss_components
        .iter()
        .zip(state.raw.iter())
        .map(|(e, r)| sign * e * clamp_derivative(*r))
        .collect())
}
