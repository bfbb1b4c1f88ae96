//! Fully connected network with ReLU hidden layers and an identity output layer.
//!
//! Besides the usual response backpropagation this module differentiates the
//! input Jacobian `∂ŷ/∂x` with respect to the weights. For ReLU the second
//! derivative of the activation vanishes almost everywhere, so with the
//! activation pattern frozen the Jacobian is the product
//!
//! ```text
//! J = W[L] · D[L-1] · W[L-1] · … · D[1] · W[1]
//! ```
//!
//! where `D[l]` is the diagonal 0/1 mask of layer `l`. The Jacobian does not
//! depend on the biases. Writing `J = A[l] · W[l] · B[l]`, the gradient of a
//! loss with `∂L/∂J = G` is `A[l]ᵀ · G · B[l]ᵀ`: the `B[l]` are accumulated
//! front to back and `A[l]ᵀ G` back to front, analogous to the response
//! deltas.
//!
//! Flat parameter and gradient vectors use the block order
//! `W[1], b[1], …, W[L], b[L]` with row-major weights.

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mathcore::{dot, matmul, Matrix, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HiddenActivation {
    #[default]
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputActivation {
    #[default]
    Identity,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkShape {
    /// Inputs, hidden sizes, outputs.
    pub layer_sizes: Vec<usize>,
    #[serde(default)]
    pub hidden_activation: HiddenActivation,
    #[serde(default)]
    pub output_activation: OutputActivation,
}

impl NetworkShape {
    pub fn new(layer_sizes: Vec<usize>) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::Config(format!(
                "network needs at least an input and an output layer, got {layer_sizes:?}"
            )));
        }
        if layer_sizes.iter().any(|&n| n == 0) {
            return Err(Error::Config(format!(
                "layer sizes must be positive, got {layer_sizes:?}"
            )));
        }
        Ok(NetworkShape {
            layer_sizes,
            hidden_activation: HiddenActivation::Relu,
            output_activation: OutputActivation::Identity,
        })
    }

    /// Parses `2,5,3,3,1`.
    pub fn parse(spec: &str) -> Result<Self> {
        let sizes = spec
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Config(format!("invalid layer size `{s}` in `{spec}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(sizes)
    }

    pub fn n_in(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn n_out(&self) -> usize {
        *self.layer_sizes.last().expect("validated shape")
    }

    /// Number of weight layers `L`.
    pub fn depth(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn n_params(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|w| w[1] * w[0] + w[1])
            .sum()
    }
}

impl std::fmt::Display for NetworkShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.layer_sizes.iter().map(usize::to_string).collect();
        f.write_str(&parts.join(","))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    /// `W[l]` is `n[l] × n[l-1]`.
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vector>,
}

impl NetworkParams {
    pub fn zeros(shape: &NetworkShape) -> Self {
        let weights = shape
            .layer_sizes
            .windows(2)
            .map(|w| Matrix::zeros(w[1], w[0]))
            .collect();
        let biases = shape.layer_sizes[1..].iter().map(|&n| Vector::zeros(n)).collect();
        NetworkParams { weights, biases }
    }

    pub fn shape(&self) -> NetworkShape {
        let mut sizes = vec![self.weights[0].cols()];
        sizes.extend(self.weights.iter().map(Matrix::rows));
        NetworkShape::new(sizes).expect("params always have a valid shape")
    }

    pub fn depth(&self) -> usize {
        self.weights.len()
    }

    pub fn n_params(&self) -> usize {
        self.weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| w.as_slice().len() + b.len())
            .sum()
    }

    pub fn to_flat(&self) -> Vector {
        let mut out = Vec::with_capacity(self.n_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.as_slice());
            out.extend_from_slice(b);
        }
        out.into()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::shape("set_flat", self.n_params(), flat.len()));
        }
        let mut off = 0;
        for (w, b) in self.weights.iter_mut().zip(&mut self.biases) {
            let n = w.as_slice().len();
            w.as_mut_slice().copy_from_slice(&flat[off..off + n]);
            off += n;
            let nb = b.len();
            b.copy_from_slice(&flat[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    /// `θ += delta` in flat layout.
    pub fn add_flat(&mut self, delta: &[f64]) -> Result<()> {
        if delta.len() != self.n_params() {
            return Err(Error::shape("add_flat", self.n_params(), delta.len()));
        }
        let mut off = 0;
        for (w, b) in self.weights.iter_mut().zip(&mut self.biases) {
            for v in w.as_mut_slice().iter_mut().chain(b.iter_mut()) {
                *v += delta[off];
                off += 1;
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(Matrix::is_finite) && self.biases.iter().all(Vector::is_finite)
    }
}

/// He-uniform weights (`±√(6/fan_in)`) and zero biases, deterministic per seed.
pub fn init_params(shape: &NetworkShape, seed: u64) -> NetworkParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = NetworkParams::zeros(shape);
    for w in &mut params.weights {
        let bound = (6.0 / w.cols() as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound);
        for v in w.as_mut_slice() {
            *v = dist.sample(&mut rng);
        }
    }
    params
}

/// Pre-activations `z[1..=L]` and activations `o[0..=L]` of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache {
    pub z: Vec<Vector>,
    /// `o[0]` is the input.
    pub o: Vec<Vector>,
}

impl ForwardCache {
    pub fn output(&self) -> &Vector {
        self.o.last().expect("at least the input")
    }

    /// Smallest `|z|` over the hidden layers; used to keep FD checks away from ReLU kinks.
    pub fn min_abs_hidden_preactivation(&self) -> f64 {
        let hidden = self.z.len().saturating_sub(1);
        self.z[..hidden]
            .iter()
            .flat_map(|z| z.iter())
            .fold(f64::INFINITY, |m, v| m.min(v.abs()))
    }

    fn mask(&self, layer: usize) -> impl Iterator<Item = f64> + '_ {
        self.z[layer - 1].iter().map(|&v| relu_prime(v))
    }
}

#[inline]
fn relu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

/// Subgradient choice: 0 at exactly 0.
#[inline]
fn relu_prime(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else {
        0.0
    }
}

pub fn forward(params: &NetworkParams, x: &[f64]) -> Result<(Vector, ForwardCache)> {
    let n_in = params.weights[0].cols();
    if x.len() != n_in {
        return Err(Error::shape("forward", n_in, x.len()));
    }
    let depth = params.depth();
    let mut z = Vec::with_capacity(depth);
    let mut o = Vec::with_capacity(depth + 1);
    o.push(Vector::from(x));
    for (l, (w, b)) in params.weights.iter().zip(&params.biases).enumerate() {
        let mut zl = w.matvec(&o[l])?;
        zl.axpy(1.0, b);
        let ol = if l + 1 == depth {
            zl.clone()
        } else {
            zl.iter().map(|&v| relu(v)).collect()
        };
        z.push(zl);
        o.push(ol);
    }
    let y = o[depth].clone();
    Ok((y, ForwardCache { z, o }))
}

/// Output only, reusing two scratch buffers; no cache is built.
pub fn predict_into(params: &NetworkParams, x: &[f64], buf: &mut Vec<f64>, tmp: &mut Vec<f64>) {
    buf.clear();
    buf.extend_from_slice(x);
    let depth = params.depth();
    for (l, (w, b)) in params.weights.iter().zip(&params.biases).enumerate() {
        tmp.clear();
        for (r, &br) in b.iter().enumerate() {
            let v = dot(w.row(r), buf) + br;
            tmp.push(if l + 1 == depth { v } else { relu(v) });
        }
        std::mem::swap(buf, tmp);
    }
}

/// `B[l]` for `l = 1..=L`: the Jacobian of `o[l-1]` with respect to the input.
fn input_products(params: &NetworkParams, cache: &ForwardCache) -> Vec<Matrix> {
    let n_in = params.weights[0].cols();
    let mut out = Vec::with_capacity(params.depth());
    out.push(Matrix::identity(n_in));
    for l in 1..params.depth() {
        let mut next = matmul(&params.weights[l - 1], &out[l - 1]).expect("shapes checked");
        for (r, m) in cache.mask(l).enumerate() {
            if m == 0.0 {
                next.as_mut_slice()[r * n_in..(r + 1) * n_in].fill(0.0);
            }
        }
        out.push(next);
    }
    out
}

/// `∂ŷ/∂x` (`n_out × n_in`) for the activation pattern stored in `cache`.
pub fn input_jacobian(params: &NetworkParams, cache: &ForwardCache) -> Matrix {
    let b = input_products(params, cache);
    matmul(params.weights.last().expect("depth >= 1"), b.last().expect("depth >= 1"))
        .expect("shapes checked")
}

/// Per-layer gradients of one sample's loss.
#[derive(Debug, Clone, PartialEq)]
pub struct BackpropState {
    /// Response-path deltas `δ[1..=L]` (already scaled by the response weight).
    pub delta: Vec<Vector>,
    pub grad_w: Vec<Matrix>,
    pub grad_b: Vec<Vector>,
    /// `grad_w`/`grad_b` concatenated in flat parameter order.
    pub flat: Vector,
}

fn check_residuals(params: &NetworkParams, resid_y: &[f64], resid_jac: &Matrix) -> Result<()> {
    let shape = params.shape();
    if resid_y.len() != shape.n_out() {
        return Err(Error::shape("backprop: resid_y", shape.n_out(), resid_y.len()));
    }
    if resid_jac.rows() != shape.n_out() || resid_jac.cols() != shape.n_in() {
        return Err(Error::shape(
            "backprop: resid_jac",
            format!("{}x{}", shape.n_out(), shape.n_in()),
            format!("{}x{}", resid_jac.rows(), resid_jac.cols()),
        ));
    }
    Ok(())
}

fn accumulate(
    params: &NetworkParams,
    cache: &ForwardCache,
    resid_y: &[f64],
    resid_jac: &Matrix,
    response_weight: f64,
    sensitivity_weights: &[f64],
) -> BackpropState {
    let depth = params.depth();
    let zeros = NetworkParams::zeros(&params.shape());
    let mut grad_w = zeros.weights;
    let mut grad_b = zeros.biases;
    let mut delta: Vec<Vector> = params.biases.iter().map(|b| Vector::zeros(b.len())).collect();

    if response_weight != 0.0 {
        let mut d: Vector = resid_y.iter().map(|r| response_weight * r).collect();
        for l in (1..=depth).rev() {
            grad_w[l - 1].add_outer(1.0, &d, &cache.o[l - 1]);
            grad_b[l - 1].axpy(1.0, &d);
            delta[l - 1] = d.clone();
            if l > 1 {
                let back = params.weights[l - 1].transpose_matvec(&d).expect("shapes checked");
                d = back
                    .iter()
                    .zip(cache.mask(l - 1))
                    .map(|(v, m)| v * m)
                    .collect();
            }
        }
    }

    if sensitivity_weights.iter().any(|&w| w != 0.0) {
        let n_in = resid_jac.cols();
        // G = resid_jac · diag(sensitivity weights)
        let mut p = resid_jac.clone();
        for r in 0..p.rows() {
            for (c, &w) in sensitivity_weights.iter().enumerate() {
                p.set(r, c, p.get(r, c) * w);
            }
        }
        let inputs = input_products(params, cache);
        for l in (1..=depth).rev() {
            let g = matmul(&p, &inputs[l - 1].transpose()).expect("shapes checked");
            for (acc, v) in grad_w[l - 1].as_mut_slice().iter_mut().zip(g.as_slice()) {
                *acc += v;
            }
            if l > 1 {
                let w = &params.weights[l - 1];
                let mut next = matmul(&w.transpose(), &p).expect("shapes checked");
                for (r, m) in cache.mask(l - 1).enumerate() {
                    if m == 0.0 {
                        next.as_mut_slice()[r * n_in..(r + 1) * n_in].fill(0.0);
                    }
                }
                p = next;
            }
        }
    }

    let mut flat = Vec::with_capacity(params.n_params());
    for (w, b) in grad_w.iter().zip(&grad_b) {
        flat.extend_from_slice(w.as_slice());
        flat.extend_from_slice(b);
    }
    BackpropState {
        delta,
        grad_w,
        grad_b,
        flat: flat.into(),
    }
}

/// Gradient of `λ_R·½‖r‖² + Σ_j λ_j·½‖R[:, j]‖²` for one sample, where
/// `r = ŷ − y` and `R = ∂ŷ/∂x − ∂y/∂x`.
///
/// `lambda` is `[λ_R, λ_1, …, λ_n_in]`. A term with weight exactly zero is
/// skipped, so `λ = (1, 0, …, 0)` runs only the plain response path.
pub fn backprop(
    params: &NetworkParams,
    cache: &ForwardCache,
    resid_y: &[f64],
    resid_jac: &Matrix,
    lambda: &[f64],
) -> Result<BackpropState> {
    check_residuals(params, resid_y, resid_jac)?;
    if lambda.len() != resid_jac.cols() + 1 {
        return Err(Error::shape("backprop: lambda", resid_jac.cols() + 1, lambda.len()));
    }
    Ok(accumulate(params, cache, resid_y, resid_jac, lambda[0], &lambda[1..]))
}

/// Unweighted gradients `[g_R, g_1, …, g_n_in]` of each loss term.
pub fn per_loss_gradients(
    params: &NetworkParams,
    cache: &ForwardCache,
    resid_y: &[f64],
    resid_jac: &Matrix,
) -> Result<Vec<Vector>> {
    check_residuals(params, resid_y, resid_jac)?;
    let n_in = resid_jac.cols();
    let mut out = Vec::with_capacity(n_in + 1);
    out.push(accumulate(params, cache, resid_y, resid_jac, 1.0, &vec![0.0; n_in]).flat);
    for j in 0..n_in {
        let mut w = vec![0.0; n_in];
        w[j] = 1.0;
        out.push(accumulate(params, cache, resid_y, resid_jac, 0.0, &w).flat);
    }
    Ok(out)
}
