//! Regression of decay series against `(1 + t^b) e^{−rt}`-type models.

use hypodecay::{DMatrix, DVector};
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::CliError;

/// Fewest window points a fit accepts.
pub const MIN_FIT_POINTS: usize = 10;
/// Values at or below this are dropped before taking logs.
pub const TRIM_BELOW: f64 = 1e-300;

/// A point estimate with a 95% interval widened by window sensitivity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl Estimate {
    pub fn contains(&self, v: f64) -> bool {
        self.ci_low <= v && v <= self.ci_high
    }

    pub fn half_width(&self) -> f64 {
        0.5 * (self.ci_high - self.ci_low)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayFit {
    pub window: [f64; 2],
    pub points: usize,
    /// Rate removed before the fixed-rate fit.
    pub fixed_rate: f64,
    /// `r` in `log v ≈ a − r t + b log t`.
    pub rate_hat: Estimate,
    /// `b` in `log v + fixed_rate · t ≈ a + b log t`.
    pub poly_order_hat: Estimate,
    /// `b` of the free-rate model.
    pub free_poly_order: Estimate,
}

/// Upper half of the grid, starting no earlier than `5/μ`.
pub fn default_window(grid: &[f64], mu: f64) -> (f64, f64) {
    let (first, last) = (grid.first().copied().unwrap_or(0.0), grid.last().copied().unwrap_or(0.0));
    let lo = (0.5 * (first + last)).max(5.0 / mu);
    (lo.min(last), last)
}

struct Ols {
    beta: DVector<f64>,
    stderr: DVector<f64>,
    dof: usize,
}

fn ols(design: &DMatrix<f64>, y: &DVector<f64>) -> Option<Ols> {
    let (n, k) = design.shape();
    if n <= k {
        return None;
    }
    let gram = design.transpose() * design;
    let chol = gram.cholesky()?;
    let beta = chol.solve(&(design.transpose() * y));
    let resid = y - design * &beta;
    let sigma2 = resid.norm_squared() / (n - k) as f64;
    let inv = chol.inverse();
    let stderr = DVector::from_fn(k, |i, _| (sigma2 * inv[(i, i)]).max(0.0).sqrt());
    Some(Ols { beta, stderr, dof: n - k })
}

fn t_quantile(dof: usize) -> f64 {
    StudentsT::new(0.0, 1.0, dof as f64)
        .map(|d| d.inverse_cdf(0.975))
        .unwrap_or(f64::INFINITY)
}

/// Fits one linear model on the window and on its leading and trailing
/// three-quarter sub-windows; returns coefficient estimates.
fn fit_with_sensitivity(rows: &[(f64, f64)], build: impl Fn(f64, f64) -> (Vec<f64>, f64), coeffs: &[(usize, f64)]) -> Option<Vec<Estimate>> {
    let assemble = |rows: &[(f64, f64)]| {
        let k = build(rows[0].0, rows[0].1).0.len();
        let mut x = DMatrix::zeros(rows.len(), k);
        let mut y = DVector::zeros(rows.len());
        for (i, &(t, lv)) in rows.iter().enumerate() {
            let (r, target) = build(t, lv);
            for (j, v) in r.into_iter().enumerate() {
                x[(i, j)] = v;
            }
            y[i] = target;
        }
        ols(&x, &y)
    };
    let full = assemble(rows)?;
    let q = t_quantile(full.dof);
    let sub = rows.len() * 3 / 4;
    let subs: Vec<Ols> = if sub >= MIN_FIT_POINTS {
        [&rows[..sub], &rows[rows.len() - sub..]].into_iter().filter_map(assemble).collect()
    } else {
        Vec::new()
    };
    Some(
        coeffs
            .iter()
            .map(|&(j, sign)| {
                let value = sign * full.beta[j];
                let spread = subs.iter().map(|s| (s.beta[j] - full.beta[j]).abs()).fold(0.0, f64::max);
                let half = q * full.stderr[j] + spread;
                Estimate {
                    value,
                    ci_low: value - half,
                    ci_high: value + half,
                }
            })
            .collect(),
    )
}

/// Fixed-rate and free-rate log-linear fits of `values` on `window`.
pub fn fit_decay(grid: &[f64], values: &[f64], fixed_rate: f64, window: (f64, f64)) -> Result<DecayFit, CliError> {
    let rows: Vec<(f64, f64)> = grid
        .iter()
        .zip(values)
        .filter(|(t, v)| **t >= window.0 && **t <= window.1 && **t > 0.0 && v.is_finite() && **v > TRIM_BELOW)
        .map(|(&t, &v)| (t, v.ln()))
        .collect();
    if rows.len() < MIN_FIT_POINTS {
        return Err(CliError::InsufficientData {
            usable: rows.len(),
            required: MIN_FIT_POINTS,
        });
    }
    let insufficient = || CliError::InsufficientData {
        usable: rows.len(),
        required: MIN_FIT_POINTS,
    };
    let fixed = fit_with_sensitivity(&rows, |t, lv| (vec![1.0, t.ln()], lv + fixed_rate * t), &[(1, 1.0)]).ok_or_else(insufficient)?;
    let free = fit_with_sensitivity(&rows, |t, lv| (vec![1.0, t, t.ln()], lv), &[(1, -1.0), (2, 1.0)]).ok_or_else(insufficient)?;
    Ok(DecayFit {
        window: [window.0, window.1],
        points: rows.len(),
        fixed_rate,
        rate_hat: free[0],
        poly_order_hat: fixed[0],
        free_poly_order: free[1],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect()
    }

    #[test]
    fn recovers_polynomial_envelope() {
        let t = grid(0.0, 15.0, 300);
        let v: Vec<f64> = t.iter().map(|t| (1.0 + t * t) * (-2.0 * t).exp()).collect();
        let fit = fit_decay(&t, &v, 2.0, (5.0, 15.0)).unwrap();
        assert!((fit.rate_hat.value - 2.0).abs() < 0.05, "{:?}", fit.rate_hat);
        assert!((fit.poly_order_hat.value - 2.0).abs() < 0.1, "{:?}", fit.poly_order_hat);
        assert_eq!(fit.points, 201);
    }

    #[test]
    fn exact_model_is_inside_interval() {
        let t = grid(0.0, 15.0, 300);
        let v: Vec<f64> = t.iter().map(|t| 0.3 * t * t * (-2.0 * t).exp()).collect();
        let fit = fit_decay(&t, &v, 2.0, (5.0, 15.0)).unwrap();
        for e in [fit.poly_order_hat, fit.rate_hat, fit.free_poly_order] {
            assert!(e.ci_low - 1e-10 <= 2.0 && 2.0 <= e.ci_high + 1e-10, "{e:?}");
        }
    }

    #[test]
    fn pure_exponential_has_zero_order() {
        let t = grid(0.0, 15.0, 300);
        let v: Vec<f64> = t.iter().map(|t| (-2.0 * t).exp()).collect();
        let fit = fit_decay(&t, &v, 2.0, default_window(&t, 1.0)).unwrap();
        assert!(fit.poly_order_hat.value.abs() < 1e-8);
        assert!((fit.rate_hat.value - 2.0).abs() < 1e-8);
    }

    #[test]
    fn trims_and_counts() {
        let t = grid(0.0, 15.0, 30);
        let v = vec![0.0; t.len()];
        assert!(matches!(fit_decay(&t, &v, 2.0, (5.0, 15.0)), Err(CliError::InsufficientData { usable: 0, .. })));
        let v: Vec<f64> = t.iter().map(|t| (-2.0 * t).exp()).collect();
        assert!(matches!(fit_decay(&t, &v, 2.0, (13.0, 15.0)), Err(CliError::InsufficientData { usable: 5, .. })));
    }

    #[test]
    fn default_window_policy() {
        let t = grid(0.0, 15.0, 300);
        assert_eq!(default_window(&t, 1.0), (7.5, 15.0));
        assert_eq!(default_window(&t, 0.5), (10.0, 15.0));
    }

    proptest! {
        #[test]
        fn noisy_model_is_covered(a in -2.0f64..2.0, r in 0.5f64..3.0, b in 0.0f64..4.0, seed in 0u64..1000) {
            let t = grid(1.0, 10.0, 200);
            let v: Vec<f64> = t.iter().enumerate().map(|(i, t)| {
                let noise = 1e-3 * (((i as u64 * 2654435761 + seed) % 1000) as f64 / 500.0 - 1.0);
                (a - r * t + b * t.ln() + noise).exp()
            }).collect();
            let fit = fit_decay(&t, &v, r, (1.0, 10.0)).unwrap();
            prop_assert!((fit.rate_hat.value - r).abs() < 0.05);
            prop_assert!((fit.poly_order_hat.value - b).abs() < 0.05);
            prop_assert!(fit.poly_order_hat.half_width() >= 0.0);
        }
    }
}
