//! Acceptance suite. Each test prints one `criterion N: PASS|FAIL` line
//! (written straight to stdout so it shows without `--nocapture`) and then
//! asserts at the pinned tolerance.

use std::io::Write;
use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sobolev::data::{apply_standardize, fit_standardize, grid_split, minibatches, Dataset, MinibatchPlan, SplitPattern};
use sobolev::experiment::{export_results, sweep_prepared, prepare, PreparedData, SweepConfig, SweepResult};
use sobolev::mathcore::{Matrix, Vector};
use sobolev::network::{backprop, forward, init_params, input_jacobian, per_loss_gradients, NetworkParams, NetworkShape};
use sobolev::optim::{adam_step, AdamConfig, AdamState};
use sobolev::problems::{sample_grid, AnalyticProblem};
use sobolev::trainer::{train, TrainConfig};
use sobolev::weighting::{clamp, Mode, ResidualWeightState, WeightingContext, DEFAULT_EPSILON0};

fn report(criterion: u32, title: &str, pass: bool, detail: &str) {
    let mut out = std::io::stdout().lock();
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(out, "criterion {criterion:>2}: {verdict} {title} ({detail})");
}

fn trig_data() -> &'static PreparedData {
    static DATA: OnceLock<PreparedData> = OnceLock::new();
    DATA.get_or_init(|| prepare(&SweepConfig::paper500(vec![]).source, &SweepConfig::paper500(vec![]).split).unwrap())
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

// ---------------------------------------------------------------- 1

/// Half squared residuals of the response and of each Jacobian column.
fn sobolev_loss(p: &NetworkParams, x: &[f64], y: f64, target: &[f64; 2], lambda: &[f64; 3]) -> f64 {
    let (yh, cache) = forward(p, x).unwrap();
    let j = input_jacobian(p, &cache);
    let mut l = 0.5 * lambda[0] * (yh[0] - y).powi(2);
    for c in 0..2 {
        l += 0.5 * lambda[1 + c] * (j.get(0, c) - target[c]).powi(2);
    }
    l
}

#[test]
fn c01_gradients_match_finite_differences() {
    let started = Instant::now();
    let shape = NetworkShape::parse("2,5,3,3,1").unwrap();
    let data = &trig_data().train;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let h = 1e-6;
    let (mut worst_jac, mut worst_grad, mut nets) = (0.0f64, 0.0f64, 0);
    while nets < 20 {
        let mut p = init_params(&shape, rng.gen());
        for b in &mut p.biases {
            b.iter_mut().for_each(|v| *v = rng.gen_range(-0.5..0.5));
        }
        let s = &data.samples[rng.gen_range(0..data.len())];
        let (yh, cache) = forward(&p, &s.x).unwrap();
        if cache.min_abs_hidden_preactivation() <= 1e-4 {
            continue;
        }
        // Jacobian against input differences
        let jac = input_jacobian(&p, &cache);
        for c in 0..2 {
            let (mut xp, mut xm) = (s.x.to_vec(), s.x.to_vec());
            xp[c] += h;
            xm[c] -= h;
            let fd = (forward(&p, &xp).unwrap().0[0] - forward(&p, &xm).unwrap().0[0]) / (2.0 * h);
            worst_jac = worst_jac.max(rel_err(jac.get(0, c), fd));
        }
        // full weighted gradient against parameter differences
        let lambda = [rng.gen_range(0.1..2.0), rng.gen_range(0.1..2.0), rng.gen_range(0.1..2.0)];
        let target = [s.dy_dx.get(0, 0), s.dy_dx.get(0, 1)];
        let ry = [yh[0] - s.y[0]];
        let rj = Matrix::from_vec(1, 2, vec![jac.get(0, 0) - target[0], jac.get(0, 1) - target[1]]).unwrap();
        let g = backprop(&p, &cache, &ry, &rj, &lambda).unwrap();
        let theta = p.to_flat();
        let mut q = p.clone();
        for k in 0..theta.len() {
            let mut t = theta.clone();
            t[k] += h;
            q.set_flat(&t).unwrap();
            let lp = sobolev_loss(&q, &s.x, s.y[0], &target, &lambda);
            t[k] -= 2.0 * h;
            q.set_flat(&t).unwrap();
            let lm = sobolev_loss(&q, &s.x, s.y[0], &target, &lambda);
            worst_grad = worst_grad.max(rel_err(g.flat[k], (lp - lm) / (2.0 * h)));
        }
        nets += 1;
    }
    let secs = started.elapsed().as_secs_f64();
    let pass = worst_jac <= 1e-6 && worst_grad <= 1e-6 && secs < 30.0;
    report(
        1,
        "gradient correctness",
        pass,
        &format!("{nets} nets, max jacobian rel err {worst_jac:.2e}, max gradient rel err {worst_grad:.2e}, {secs:.2}s"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 2

#[test]
fn c02_weighted_gradient_decomposes() {
    let shape = NetworkShape::parse("2,5,3,3,1").unwrap();
    let data = &trig_data().train;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let p = init_params(&shape, 11);
    let s = &data.samples[17];
    let (yh, cache) = forward(&p, &s.x).unwrap();
    let jac = input_jacobian(&p, &cache);
    let ry = [yh[0] - s.y[0]];
    let rj = Matrix::from_vec(
        1,
        2,
        jac.as_slice().iter().zip(s.dy_dx.as_slice()).map(|(a, b)| a - b).collect(),
    )
    .unwrap();
    let per = per_loss_gradients(&p, &cache, &ry, &rj).unwrap();
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let lambda: Vec<f64> = (0..3).map(|_| rng.gen_range(0.0..2.5)).collect();
        let g = backprop(&p, &cache, &ry, &rj, &lambda).unwrap();
        for k in 0..g.flat.len() {
            let sum: f64 = (0..3).map(|i| lambda[i] * per[i][k]).sum();
            worst = worst.max((g.flat[k] - sum).abs() / sum.abs().max(1.0));
        }
    }
    let pass = worst <= 1e-12;
    report(2, "decomposition identity", pass, &format!("100 draws, max deviation {worst:.2e}"));
    assert!(pass);
}

// ---------------------------------------------------------------- 3

/// Plain response-only minibatch training with hand-written backprop.
fn response_only_reference(cfg: &TrainConfig, train_set: &Dataset) -> Vec<f64> {
    let mut p = init_params(&cfg.shape, cfg.seed);
    let mut moments = AdamState::new(p.n_params());
    let plan = MinibatchPlan::new(train_set.len(), cfg.batch_size, cfg.seed.wrapping_add(0x9E37_79B9_7F4A_7C15)).unwrap();
    let depth = p.depth();
    let mut trace = Vec::new();
    for epoch in 0..cfg.epochs {
        for batch in minibatches(&plan, epoch) {
            let mut grad = vec![0.0; p.n_params()];
            let mut e_r = 0.0;
            for &i in &batch {
                let s = &train_set.samples[i];
                let (yh, cache) = forward(&p, &s.x).unwrap();
                let r: Vec<f64> = yh.iter().zip(s.y.iter()).map(|(a, b)| a - b).collect();
                e_r += 0.5 * r.iter().map(|v| v * v).sum::<f64>();
                // per-layer gradients, then flattened W1, b1, ..., WL, bL
                let mut gw: Vec<Vec<f64>> = Vec::new();
                let mut gb: Vec<Vec<f64>> = Vec::new();
                let mut d = r;
                for l in (0..depth).rev() {
                    let o = &cache.o[l];
                    let mut w = vec![0.0; d.len() * o.len()];
                    for (row, &dr) in d.iter().enumerate() {
                        if dr == 0.0 {
                            continue;
                        }
                        for (col, &oc) in o.iter().enumerate() {
                            w[row * o.len() + col] = dr * oc;
                        }
                    }
                    gw.push(w);
                    gb.push(d.clone());
                    if l > 0 {
                        let wl = &p.weights[l];
                        let mut back = vec![0.0; wl.cols()];
                        for (row, &dr) in d.iter().enumerate() {
                            for (col, b) in back.iter_mut().enumerate() {
                                *b += dr * wl.get(row, col);
                            }
                        }
                        d = back
                            .iter()
                            .zip(cache.z[l - 1].iter())
                            .map(|(&v, &z)| if z > 0.0 { v } else { 0.0 })
                            .collect();
                    }
                }
                gw.reverse();
                gb.reverse();
                let flat: Vec<f64> = gw.iter().zip(&gb).flat_map(|(w, b)| w.iter().chain(b.iter()).copied()).collect();
                for (a, g) in grad.iter_mut().zip(&flat) {
                    *a += g;
                }
            }
            let n = batch.len() as f64;
            grad.iter_mut().for_each(|g| *g /= n);
            trace.push(e_r / n);
            let step = adam_step(&mut moments, &grad, &cfg.adam_theta).unwrap();
            p.add_flat(&step).unwrap();
        }
    }
    trace
}

#[test]
fn c03_response_only_mode_matches_reference() {
    let data = trig_data();
    let cfg = TrainConfig { mode: Mode::ResponseOnly, epochs: 30, seed: 5, ..TrainConfig::default() };
    let (_, trace) = train(&cfg, &data.train, &data.val).unwrap();
    let reference = response_only_reference(&cfg, &data.train);
    let ours: Vec<u64> = trace.rows.iter().map(|r| r.response_loss.to_bits()).collect();
    let theirs: Vec<u64> = reference.iter().map(|v| v.to_bits()).collect();
    let identical = ours == theirs;

    let mut corrupted = data.train.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for s in &mut corrupted.samples {
        for v in s.dy_dx.as_mut_slice() {
            *v = rng.gen_range(-1e3..1e3);
        }
    }
    let (_, trace_c) = train(&cfg, &corrupted, &data.val).unwrap();
    let unchanged = trace_c
        .rows
        .iter()
        .zip(&trace.rows)
        .all(|(a, b)| a.response_loss.to_bits() == b.response_loss.to_bits() && a.val_l2.map(f64::to_bits) == b.val_l2.map(f64::to_bits));
    let pass = identical && unchanged && trace.rows.len() == reference.len();
    report(
        3,
        "mode 11 oracle",
        pass,
        &format!("{} iterations, bitwise equal to reference: {identical}, invariant to corrupted sensitivities: {unchanged}", ours.len()),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 4

#[test]
fn c04_lambda_stays_in_bounds() {
    let data = trig_data();
    let adaptive: Vec<Mode> = (1..=9).map(|i| Mode::from_index(i).unwrap()).collect();
    let cfg = SweepConfig {
        base: TrainConfig { epochs: 100, val_stride: 100, ..TrainConfig::default() },
        modes: adaptive,
        n_runs: 5,
        keep_traces: true,
        ..SweepConfig::paper500(vec![])
    };
    let result = sweep_prepared(&cfg, data).unwrap();
    let (lo, hi) = (DEFAULT_EPSILON0, 2.0 + DEFAULT_EPSILON0);
    let mut checked = 0usize;
    let mut violations = 0usize;
    for (_, _, trace) in &result.traces {
        for row in &trace.rows {
            for &l in &row.lambda {
                checked += 1;
                if !(l > lo && l < hi) {
                    violations += 1;
                }
            }
        }
    }
    let pass = violations == 0 && result.traces.len() == 45 && result.diverged.is_empty();
    report(
        4,
        "lambda bound invariant",
        pass,
        &format!("{} runs, {checked} logged weights, {violations} violations", result.traces.len()),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 5

#[test]
fn c05_clamp_fixed_values() {
    let at_init = (clamp(1.2, 0.01) - 1.01).abs();
    let low = (clamp(-10.0, 0.01) - 0.01).abs();
    let high = (clamp(10.0, 0.01) - 2.01).abs();
    let pass = at_init <= 1e-15 && low <= 1e-9 && high <= 1e-9;
    report(
        5,
        "clamp fixed values",
        pass,
        &format!("|f(1.2)-1.01|={at_init:.1e}, |f(-10)-0.01|={low:.1e}, |f(10)-2.01|={high:.1e}"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 6

fn steps_to_limit(mode: Mode, ctx: &WeightingContext, target: f64) -> Option<usize> {
    let mut state = ResidualWeightState::new(mode, 2, DEFAULT_EPSILON0, 0.0);
    for step in 1..=10_000 {
        state.update_adaptive(ctx, &AdamConfig::default()).unwrap();
        if state.clamped.iter().all(|l| (l - target).abs() < 1e-3) {
            return Some(step);
        }
    }
    None
}

#[test]
fn c06_min_and_max_loss_reach_the_bounds() {
    let data = trig_data();
    let p = init_params(&NetworkShape::parse("2,5,3,3,1").unwrap(), 3);
    let mut comps = [0.0; 3];
    let mut grads = vec![Vector::zeros(p.n_params()); 3];
    for s in &data.train.samples[..64] {
        let (yh, cache) = forward(&p, &s.x).unwrap();
        let jac = input_jacobian(&p, &cache);
        let ry = [yh[0] - s.y[0]];
        let rj = Matrix::from_vec(1, 2, jac.as_slice().iter().zip(s.dy_dx.as_slice()).map(|(a, b)| a - b).collect()).unwrap();
        comps[0] += 0.5 * ry[0] * ry[0] / 64.0;
        for c in 0..2 {
            comps[1 + c] += 0.5 * rj.get(0, c).powi(2) / 64.0;
        }
        for (acc, g) in grads.iter_mut().zip(per_loss_gradients(&p, &cache, &ry, &rj).unwrap()) {
            acc.axpy(1.0 / 64.0, &g);
        }
    }
    let ctx = WeightingContext::new(comps.to_vec(), grads, &[1.01; 3]).unwrap();
    let min_steps = steps_to_limit(Mode::MinLoss, &ctx, DEFAULT_EPSILON0);
    let max_steps = steps_to_limit(Mode::MaxLoss, &ctx, 2.0 + DEFAULT_EPSILON0);
    let pass = min_steps.is_some() && max_steps.is_some();
    report(
        6,
        "mode 1/2 limit behavior",
        pass,
        &format!("mode 1 reached eps0 after {min_steps:?} steps, mode 2 reached 2+eps0 after {max_steps:?} steps"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 7-10

const TREND_SEEDS: usize = 20;

fn trend_sweep(modes: &[u8], epochs: usize, layers: &str) -> SweepResult {
    let cfg = SweepConfig {
        base: TrainConfig { epochs, shape: NetworkShape::parse(layers).unwrap(), ..TrainConfig::default() },
        modes: modes.iter().map(|&m| Mode::from_index(m).unwrap()).collect(),
        n_runs: TREND_SEEDS,
        keep_traces: false,
        ..SweepConfig::paper500(vec![])
    };
    sweep_prepared(&cfg, trig_data()).unwrap()
}

fn base_sweep() -> &'static SweepResult {
    static R: OnceLock<SweepResult> = OnceLock::new();
    R.get_or_init(|| trend_sweep(&[2, 6, 10, 11], 500, "2,5,3,3,1"))
}

fn mean_of(r: &SweepResult, mode: u8) -> f64 {
    r.stats_for(Mode::from_index(mode).unwrap()).and_then(|s| s.mean()).unwrap_or(f64::INFINITY)
}

/// One-sided exact sign test, computed from scratch: P(X ≥ wins), X ~ Bin(n, 1/2).
fn sign_test_p(wins: usize, n: usize) -> f64 {
    let mut row = vec![1.0f64];
    for _ in 0..n {
        let mut next = vec![1.0; row.len() + 1];
        for k in 1..row.len() {
            next[k] = row[k - 1] + row[k];
        }
        row = next;
    }
    row[wins..].iter().sum::<f64>() / 2f64.powi(n as i32)
}

#[test]
fn c07_sobolev_beats_response_only() {
    let r = base_sweep();
    let (m10, m11) = (mean_of(r, 10), mean_of(r, 11));
    let a = r.finals(Mode::Sobolev);
    let b = r.finals(Mode::ResponseOnly);
    let mut wins = 0;
    let mut n = 0;
    for (seed, e10) in &a {
        if let Some((_, e11)) = b.iter().find(|(s, _)| s == seed) {
            if e10 != e11 {
                n += 1;
                if e10 < e11 {
                    wins += 1;
                }
            }
        }
    }
    let p = sign_test_p(wins, n);
    let pass = m10 < m11 && p <= 0.05;
    report(
        7,
        "Sobolev vs basic trend",
        pass,
        &format!("mean l2 mode 10 = {m10:.4}, mode 11 = {m11:.4}; mode 10 better on {wins}/{n} seeds, sign test p = {p:.4}"),
    );
    assert!(pass);
}

#[test]
fn c08_gradient_alignment_tightens_spread() {
    let r = base_sweep();
    let s6 = r.stats_for(Mode::MinCosineDistanceTotal).unwrap().final_l2.unwrap();
    let s10 = r.stats_for(Mode::Sobolev).unwrap().final_l2.unwrap();
    let pass = s6.iqr() <= 1.1 * s10.iqr() && s6.mean <= 1.05 * s10.mean;
    report(
        8,
        "mode 6 precision trend",
        pass,
        &format!("IQR mode 6 = {:.4} vs 1.1 x mode 10 = {:.4}; mean mode 6 = {:.4} vs 1.05 x mode 10 = {:.4}", s6.iqr(), 1.1 * s10.iqr(), s6.mean, 1.05 * s10.mean),
    );
    assert!(pass);
}

#[test]
fn c09_more_epochs_help() {
    let short = base_sweep();
    let long = trend_sweep(&[2, 6, 10], 1000, "2,5,3,3,1");
    let mut detail = Vec::new();
    let mut pass = true;
    for m in [2, 6, 10] {
        let (a, b) = (mean_of(&long, m), mean_of(short, m));
        pass &= a < b;
        detail.push(format!("mode {m}: 1000 ep {a:.4} vs 500 ep {b:.4}"));
    }
    report(9, "epoch scaling trend", pass, &detail.join("; "));
    assert!(pass);
}

#[test]
fn c10_wider_network_helps() {
    let small = base_sweep();
    let big = trend_sweep(&[2, 6], 500, "2,10,5,5,3,1");
    let mut detail = Vec::new();
    let mut pass = true;
    for m in [2, 6] {
        let (a, b) = (mean_of(&big, m), mean_of(small, m));
        pass &= a < b;
        detail.push(format!("mode {m}: 10-5-5-3 {a:.4} vs 5-3-3 {b:.4}"));
    }
    report(10, "layer scaling trend", pass, &detail.join("; "));
    assert!(pass);
}

// ---------------------------------------------------------------- 11

#[test]
fn c11_summary_is_byte_identical() {
    let cfg = SweepConfig {
        base: TrainConfig { epochs: 20, ..TrainConfig::default() },
        modes: vec![Mode::MinLoss, Mode::MinCosineDistanceTotal, Mode::Sobolev, Mode::ExpIncrease],
        n_runs: 4,
        ..SweepConfig::paper500(vec![])
    };
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let r = sobolev::experiment::sweep(&cfg).unwrap();
        export_results(&r, d.path()).unwrap();
    }
    let a = std::fs::read(dirs[0].path().join("summary.json")).unwrap();
    let b = std::fs::read(dirs[1].path().join("summary.json")).unwrap();
    let pass = a == b && !a.is_empty();
    report(11, "sweep determinism", pass, &format!("summary.json {} bytes, identical: {}", a.len(), a == b));
    assert!(pass);
}

// ---------------------------------------------------------------- 12

#[test]
fn c12_schedules_follow_recursions() {
    let d = sample_grid(AnalyticProblem::Trig, 25).unwrap();
    let (tr, va) = grid_split(&d, 313, 312, SplitPattern::Stride2).unwrap();
    let (tr, stats) = fit_standardize(&tr).unwrap();
    let va = apply_standardize(&va, &stats).unwrap();
    let mut worst = 0.0f64;
    let mut epochs_checked = 0;
    for (mode, start, mu) in [(Mode::ExpDecay, 1.0, 0.01), (Mode::ExpIncrease, DEFAULT_EPSILON0, 0.01), (Mode::ExpDecay, 1.0, 0.3), (Mode::ExpIncrease, DEFAULT_EPSILON0, 0.3)] {
        let cfg = TrainConfig { mode, epochs: 40, schedule_rate: mu, val_stride: 1000, ..TrainConfig::default() };
        let (_, trace) = train(&cfg, &tr, &va).unwrap();
        let mut expected = start;
        for epoch in 0..cfg.epochs {
            if epoch > 0 {
                let factor = 1.0 + mu * epoch as f64;
                expected = if mode == Mode::ExpDecay { expected / factor } else { expected * factor };
            }
            for row in trace.rows.iter().filter(|r| r.epoch == epoch) {
                worst = worst.max((row.lambda[0] - 1.0).abs());
                for &l in &row.lambda[1..] {
                    worst = worst.max((l - expected).abs() / expected);
                }
            }
            epochs_checked += 1;
        }
    }
    let pass = worst <= 1e-12;
    report(12, "scheduled modes", pass, &format!("{epochs_checked} epochs, max relative deviation {worst:.1e}"));
    assert!(pass);
}
