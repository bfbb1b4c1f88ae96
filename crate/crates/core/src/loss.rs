//! Response and sensitivity loss terms and the validation metric.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::mathcore::{Matrix, Vector};
use crate::network::{predict_into, NetworkParams};

/// Loss components for one sample or one minibatch (sample mean).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub response: f64,
    /// One term per input.
    pub sensitivity: Vec<f64>,
    pub total_weighted: f64,
    /// `[λ_R, λ_1, …]` used for `total_weighted`.
    pub lambda_used: Vec<f64>,
}

impl LossBreakdown {
    /// `[E_R, E_1, …, E_n]`
    pub fn components(&self) -> Vec<f64> {
        std::iter::once(self.response)
            .chain(self.sensitivity.iter().copied())
            .collect()
    }
}

/// `½‖ŷ − y‖²`
pub fn response_loss(y_hat: &[f64], y: &[f64]) -> Result<f64> {
    if y_hat.len() != y.len() {
        return Err(Error::shape("response_loss", y.len(), y_hat.len()));
    }
    Ok(0.5 * y_hat.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
}

/// `½‖∂ŷ/∂x_j − ∂y/∂x_j‖²` for every input `j` (column-wise).
pub fn sensitivity_loss_per_input(jac_hat: &Matrix, jac_true: &Matrix) -> Result<Vec<f64>> {
    if jac_hat.rows() != jac_true.rows() || jac_hat.cols() != jac_true.cols() {
        return Err(Error::shape(
            "sensitivity_loss_per_input",
            format!("{}x{}", jac_true.rows(), jac_true.cols()),
            format!("{}x{}", jac_hat.rows(), jac_hat.cols()),
        ));
    }
    Ok((0..jac_hat.cols())
        .map(|j| {
            0.5 * (0..jac_hat.rows())
                .map(|i| (jac_hat.get(i, j) - jac_true.get(i, j)).powi(2))
                .sum::<f64>()
        })
        .collect())
}

/// `λ_R·E_R + Σ_j λ_j·E_j`.
pub fn weighted_total(response: f64, sensitivity: &[f64], lambda: &[f64]) -> Result<LossBreakdown> {
    if lambda.len() != sensitivity.len() + 1 {
        return Err(Error::shape("weighted_total", sensitivity.len() + 1, lambda.len()));
    }
    let total = lambda[0] * response
        + lambda[1..]
            .iter()
            .zip(sensitivity)
            .map(|(l, e)| l * e)
            .sum::<f64>();
    Ok(LossBreakdown {
        response,
        sensitivity: sensitivity.to_vec(),
        total_weighted: total,
        lambda_used: lambda.to_vec(),
    })
}

/// `‖ŷ − y‖ / ‖y‖` over all validation responses, in original units.
///
/// `val` must be standardized with `stats`, the statistics the model was trained with.
pub fn relative_l2_error(
    params: &NetworkParams,
    val: &Dataset,
    stats: &crate::data::StandardizationStats,
) -> Result<f64> {
    let (mut buf, mut tmp) = (Vec::new(), Vec::new());
    let mut num = 0.0;
    let mut den = 0.0;
    for s in &val.samples {
        predict_into(params, &s.x, &mut buf, &mut tmp);
        if buf.len() != s.y.len() {
            return Err(Error::shape("relative_l2_error", s.y.len(), buf.len()));
        }
        for (i, (p, t)) in buf.iter().zip(s.y.iter()).enumerate() {
            let p = p * stats.y_std[i] + stats.y_mean[i];
            let t = t * stats.y_std[i] + stats.y_mean[i];
            num += (p - t) * (p - t);
            den += t * t;
        }
    }
    if den == 0.0 {
        return Err(Error::DegenerateTarget);
    }
    Ok((num / den).sqrt())
}

/// Same metric for raw predictions, both in original units.
pub fn relative_l2(pred: &[Vector], truth: &[Vector]) -> Result<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for (p, t) in pred.iter().zip(truth) {
        for (a, b) in p.iter().zip(t.iter()) {
            num += (a - b) * (a - b);
            den += b * b;
        }
    }
    if den == 0.0 {
        return Err(Error::DegenerateTarget);
    }
    Ok((num / den).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{apply_standardize, fit_standardize, SamplePoint, StandardizationStats};
    use crate::network::{forward, init_params, NetworkShape};
    use proptest::prelude::*;

    #[test]
    fn response_loss_cases() {
        assert_eq!(response_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(response_loss(&[3.0], &[1.0]).unwrap(), 2.0);
        assert!(response_loss(&[3.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn sensitivity_loss_cases() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
        assert_eq!(sensitivity_loss_per_input(&a, &a).unwrap(), vec![0.0; 3]);
        let b = Matrix::from_rows(&[vec![1.0, 3.0, 3.0]]).unwrap();
        assert_eq!(sensitivity_loss_per_input(&a, &b).unwrap(), vec![0.0, 0.5, 0.0]);
        assert!(sensitivity_loss_per_input(&a, &Matrix::zeros(1, 2)).is_err());
    }

    #[test]
    fn sensitivity_total_is_double_sum() {
        let a = Matrix::from_rows(&[vec![0.3, -1.2], vec![2.0, 0.1], vec![0.0, 5.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![1.3, 0.2], vec![-2.0, 0.4], vec![0.5, 4.0]]).unwrap();
        let per = sensitivity_loss_per_input(&a, &b).unwrap();
        let mut direct = 0.0;
        for i in 0..3 {
            for j in 0..2 {
                direct += 0.5 * (a.get(i, j) - b.get(i, j)).powi(2);
            }
        }
        assert!((per.iter().sum::<f64>() - direct).abs() < 1e-14);
    }

    #[test]
    fn weighted_total_cases() {
        let b = weighted_total(0.2, &[0.3, 0.5], &[1.0, 1.0, 1.0]).unwrap();
        assert!((b.total_weighted - 1.0).abs() < 1e-15);
        assert_eq!(b.components(), vec![0.2, 0.3, 0.5]);
        let b = weighted_total(0.2, &[0.3, 0.5], &[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(b.total_weighted, 0.2);
        let b = weighted_total(0.2, &[0.3, 0.5], &[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(b.total_weighted, 0.0);
        assert!(weighted_total(0.2, &[0.3], &[1.0]).is_err());
    }

    fn toy_validation() -> (Dataset, StandardizationStats) {
        let pts: Vec<SamplePoint> = [(0.0, 1.0), (1.0, -2.0), (2.0, 4.0)]
            .iter()
            .map(|&(x, y)| SamplePoint::new(vec![x], vec![y], Matrix::zeros(1, 1)).unwrap())
            .collect();
        let d = Dataset::new(pts).unwrap();
        let (s, stats) = fit_standardize(&d).unwrap();
        (s, stats)
    }

    #[test]
    fn relative_error_hand_case() {
        let (val, stats) = toy_validation();
        // Linear net ŷ_s = w·x_s + b; choose zero output so ŷ = ȳ in original units.
        let mut p = init_params(&NetworkShape::new(vec![1, 1]).unwrap(), 0);
        p.weights[0].set(0, 0, 0.0);
        let ybar: f64 = 1.0;
        let num = (1.0 - ybar).powi(2) + (-2.0 - ybar).powi(2) + (4.0 - ybar).powi(2);
        let den = 1.0 + 4.0 + 16.0;
        let e = relative_l2_error(&p, &val, &stats).unwrap();
        assert!((e - (num / den).sqrt()).abs() < 1e-14);
    }

    #[test]
    fn relative_error_perfect_and_doubled() {
        let y = vec![Vector::from(vec![1.0]), Vector::from(vec![-3.0])];
        assert_eq!(relative_l2(&y, &y).unwrap(), 0.0);
        let doubled: Vec<Vector> = y.iter().map(|v| v.iter().map(|a| 2.0 * a).collect()).collect();
        assert!((relative_l2(&doubled, &y).unwrap() - 1.0).abs() < 1e-15);
        let zero = vec![Vector::from(vec![0.0])];
        assert!(matches!(relative_l2(&zero, &zero), Err(Error::DegenerateTarget)));
    }

    #[test]
    fn relative_error_zero_target_errors() {
        let pts = vec![SamplePoint::new(vec![0.0], vec![0.0], Matrix::zeros(1, 1)).unwrap()];
        let d = Dataset::new(pts).unwrap();
        let s = apply_standardize(&d, &StandardizationStats::identity(1, 1)).unwrap();
        let p = init_params(&NetworkShape::new(vec![1, 1]).unwrap(), 0);
        assert!(matches!(
            relative_l2_error(&p, &s, &StandardizationStats::identity(1, 1)),
            Err(Error::DegenerateTarget)
        ));
    }

    #[test]
    fn relative_error_independent_of_standardization() {
        // Same function in original units under two different standardizations.
        let raw = Dataset::new(
            (0..9)
                .map(|i| {
                    let x = i as f64 * 0.25 - 1.0;
                    SamplePoint::new(vec![x], vec![3.0 * x + 2.0], Matrix::zeros(1, 1)).unwrap()
                })
                .collect(),
        )
        .unwrap();
        let f = |x: f64| 2.5 * x + 1.0; // model in original units
        let mut errs = Vec::new();
        for stats in [
            StandardizationStats { x_mean: vec![0.1], x_std: vec![0.7], y_mean: vec![2.0], y_std: vec![1.9] },
            StandardizationStats { x_mean: vec![-0.3], x_std: vec![2.0], y_mean: vec![-1.0], y_std: vec![0.4] },
        ] {
            // Linear model in standardized space matching f.
            let w = 2.5 * stats.x_std[0] / stats.y_std[0];
            let b = (f(stats.x_mean[0]) - stats.y_mean[0]) / stats.y_std[0];
            let mut p = init_params(&NetworkShape::new(vec![1, 1]).unwrap(), 0);
            p.weights[0].set(0, 0, w);
            p.biases[0][0] = b;
            let val = apply_standardize(&raw, &stats).unwrap();
            errs.push(relative_l2_error(&p, &val, &stats).unwrap());
        }
        assert!((errs[0] - errs[1]).abs() < 1e-10);
        // and forward agrees with the hand model
        let p = init_params(&NetworkShape::new(vec![1, 1]).unwrap(), 0);
        assert_eq!(forward(&p, &[0.0]).unwrap().0.len(), 1);
    }

    proptest! {
        #[test]
        fn response_loss_matches_elementwise(a in prop::collection::vec(-10f64..10.0, 1..8), shift in -3f64..3.0) {
            let b: Vec<f64> = a.iter().map(|v| v + shift * v.sin()).collect();
            let oracle: f64 = a.iter().zip(&b).map(|(x, y)| 0.5 * (x - y) * (x - y)).sum();
            prop_assert!((response_loss(&a, &b).unwrap() - oracle).abs() <= 1e-14 * oracle.max(1.0));
            prop_assert!(response_loss(&a, &b).unwrap() >= 0.0);
        }

        #[test]
        fn weighted_total_is_linear(
            e in prop::collection::vec(0f64..5.0, 3),
            l1 in prop::collection::vec(0f64..2.0, 3),
            l2 in prop::collection::vec(0f64..2.0, 3),
            a in -2f64..2.0,
        ) {
            let mix: Vec<f64> = l1.iter().zip(&l2).map(|(x, y)| x + a * y).collect();
            let t = |l: &[f64]| weighted_total(e[0], &e[1..], l).unwrap().total_weighted;
            prop_assert!((t(&mix) - (t(&l1) + a * t(&l2))).abs() <= 1e-12 * (1.0 + t(&l1).abs() + t(&l2).abs()));
        }
    }
}
