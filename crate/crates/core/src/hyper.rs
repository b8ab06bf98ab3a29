//! Explicit waiting times and bounds for non-symmetric hypercontractivity,
//! and their end-to-end verification on Gaussian mixtures.

use std::f64::consts::{E, PI};

use rayon::prelude::*;
use serde::Serialize;

use crate::entropy::{e2_mixture, ep_quadrature, EntropyGenerator, EntropyValue};
use crate::error::{Error, Result};
use crate::propagation::{evolve_mixture, fit_drift_decay, fit_w_convergence, GaussianMixture};
use crate::quadrature::QuadratureSpec;
use crate::system::NormalizedSystem;

/// Geometric constants consumed by the waiting-time formulas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HyperParams {
    pub mu: f64,
    pub n: usize,
    /// Constant in `‖W(t) − I‖ ≤ c(1 + t^{2n}) e^{−2μt}`.
    pub c: f64,
    /// Constant in `‖e^{−Ct}‖ ≤ c2(1 + t^n) e^{−μt}`.
    pub c2: f64,
    pub alpha: f64,
}

impl HyperParams {
    pub fn new(mu: f64, n: usize, c: f64, c2: f64, alpha: f64) -> Result<Self> {
        if !(mu > 0.0) || !mu.is_finite() {
            return Err(Error::InvalidParameter(format!("rate must be positive, got {mu}")));
        }
        if !(alpha > 0.0 && alpha < mu) {
            return Err(Error::InvalidParameter(format!("alpha must lie in (0, {mu}), got {alpha}")));
        }
        if !(c >= 1.0 && c2 >= 1.0) || !c.is_finite() || !c2.is_finite() {
            return Err(Error::InvalidParameter(format!("constants must be finite and at least 1, got c = {c}, c2 = {c2}")));
        }
        Ok(HyperParams { mu, n, c, c2, alpha })
    }

    /// `alpha = μ/2`.
    pub fn with_half_alpha(mu: f64, n: usize, c: f64, c2: f64) -> Result<Self> {
        Self::new(mu, n, c, c2, 0.5 * mu)
    }

    /// Constants fitted on `grid`, floored at 1, with `alpha = μ/2`.
    pub fn from_fits(sys: &NormalizedSystem, grid: &[f64]) -> Result<Self> {
        let c = fit_w_convergence(sys.system(), grid)?.c_fit.max(1.0);
        let c2 = fit_drift_decay(sys.drift(), grid)?.c_fit.max(1.0);
        Self::with_half_alpha(sys.mu(), sys.defect(), c, c2)
    }
}

/// `(1 + (n/(s e))^{2n})`, equal to 1 when `n = 0`.
fn poly_factor(n: usize, s: f64) -> f64 {
    if n == 0 {
        1.0
    } else {
        1.0 + (n as f64 / (s * E)).powi(2 * n as i32)
    }
}

fn check_open_unit(name: &str, value: f64, lo: f64, hi: f64) -> Result<()> {
    if value > lo && value < hi {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must lie in ({lo}, {hi}), got {value}")))
    }
}

/// `∫ e^{ε|x|²} f(x) dx` in closed form; infinite unless `2εΣ_i ≺ I` for
/// every component.
pub fn weighted_mass(mix: &GaussianMixture, eps: f64) -> Result<EntropyValue> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::InvalidParameter(format!("eps must be positive, got {eps}")));
    }
    let dim = mix.dim();
    let eye = nalgebra::DMatrix::<f64>::identity(dim, dim);
    let mut total = 0.0;
    for comp in mix.components() {
        // w det(I − 2εΣ)^{−1/2} exp(ε mᵀ(I − 2εΣ)^{−1} m)
        let a = &eye - &comp.cov * (2.0 * eps);
        let a = (&a + a.transpose()) * 0.5;
        let Some(chol) = a.cholesky() else {
            return Ok(EntropyValue::Infinite);
        };
        let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let quad = comp.mean.dot(&chol.solve(&comp.mean));
        total += comp.weight * (eps * quad - 0.5 * log_det).exp();
    }
    Ok(if total.is_finite() {
        EntropyValue::Finite(total)
    } else {
        EntropyValue::Infinite
    })
}

/// `t_1(ε) = log(c(1+ε)(1 + (n/(αe))^{2n})/ε) / (2(μ−α))`, after which
/// `‖W^{−1}(t) − I‖ ≤ ε`.
pub fn waiting_time_t1(eps: f64, params: &HyperParams) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!("eps must be positive, got {eps}")));
    }
    let HyperParams { mu, n, c, alpha, .. } = *params;
    Ok((c * (1.0 + eps) * poly_factor(n, alpha) / eps).ln() / (2.0 * (mu - alpha)))
}

/// Time after which the drift contribution to the Gaussian tail is
/// controlled, for `ε_1 < (q−1)/q`.
fn waiting_time_t2(q: f64, eps1: f64, params: &HyperParams) -> f64 {
    let HyperParams { mu, n, c2, alpha, .. } = *params;
    let num = c2 * c2 * (1.0 - eps1) * poly_factor(n, alpha);
    let den = (q * (1.0 - eps1) - 1.0) * eps1;
    (num / den).ln() / (2.0 * (mu - alpha))
}

/// Waiting time for the `L^q(f_∞^{−1})` bound under `∫ e^{ε|x|²} f_0 < ∞`:
/// `max(t_1(ε_1), t_2(ε_1))` with `ε_1 = min(ε, (q−1)/(2q))`.
pub fn waiting_time_t0(q: f64, eps: f64, params: &HyperParams) -> Result<f64> {
    if !(q > 1.0) || !q.is_finite() {
        return Err(Error::InvalidParameter(format!("q must exceed 1, got {q}")));
    }
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!("eps must be positive, got {eps}")));
    }
    let eps1 = eps.min((q - 1.0) / (2.0 * q));
    Ok(waiting_time_t1(eps1, params)?.max(waiting_time_t2(q, eps1, params)))
}

/// `t̄_0(q) = log(max(c(3q−1), 2c2²(q+1)/(q−1)) (1 + (2n/(μe))^{2n})/(q−1)) / μ`.
pub fn waiting_time_t0bar(q: f64, params: &HyperParams) -> Result<f64> {
    if !(q > 1.0) || !q.is_finite() {
        return Err(Error::InvalidParameter(format!("q must exceed 1, got {q}")));
    }
    let HyperParams { mu, n, c, c2, .. } = *params;
    let lead = (c * (3.0 * q - 1.0)).max(2.0 * c2 * c2 * (q + 1.0) / (q - 1.0));
    Ok((lead * poly_factor(n, 0.5 * mu) / (q - 1.0)).ln() / mu)
}

/// `T_0(p) = log(max(c(5p−1), 2c2²(3p²+p)/(p+1)) (1 + (2n/(μe))^{2n})/(p−1)) / μ`.
#[allow(non_snake_case)]
pub fn waiting_time_T0(p: f64, params: &HyperParams) -> Result<f64> {
    check_open_unit("p", p, 1.0, 2.0)?;
    let HyperParams { mu, n, c, c2, .. } = *params;
    let lead = (c * (5.0 * p - 1.0)).max(2.0 * c2 * c2 * (3.0 * p * p + p) / (p + 1.0));
    Ok((lead * poly_factor(n, 0.5 * mu) / (p - 1.0)).ln() / mu)
}

/// `(q/(π(q+1)))^{qd/2} (8π²/(q−1))^{d/2} mass^q`.
pub fn hyper_rhs(q: f64, dim: usize, mass: f64) -> Result<f64> {
    if !(q > 1.0) || !q.is_finite() {
        return Err(Error::InvalidParameter(format!("q must exceed 1, got {q}")));
    }
    if !(mass >= 0.0) || !mass.is_finite() {
        return Err(Error::InvalidParameter(format!("weighted mass must be finite and non-negative, got {mass}")));
    }
    let d = dim as f64;
    Ok((q / (PI * (q + 1.0))).powf(0.5 * q * d) * (8.0 * PI * PI / (q - 1.0)).powf(0.5 * d) * mass.powf(q))
}

/// `(8√2/(3·2^{1/p}))^d`.
pub fn entropic_prefactor(p: f64, dim: usize) -> Result<f64> {
    if !(p > 1.0 && p <= 2.0) {
        return Err(Error::InvalidParameter(format!("p must lie in (1, 2], got {p}")));
    }
    Ok((8.0 * 2f64.sqrt() / (3.0 * 2f64.powf(1.0 / p))).powi(dim as i32))
}

/// `½(prefactor · (p(p−1)e_p(f_0) + 1)^{2/p} − 1)`, the bound on `e_2`
/// after the waiting time.
pub fn entropic_hyper_rhs(p: f64, dim: usize, ep0: f64) -> Result<f64> {
    if !(ep0 >= 0.0) || !ep0.is_finite() {
        return Err(Error::InvalidParameter(format!("initial entropy must be finite and non-negative, got {ep0}")));
    }
    let pre = entropic_prefactor(p, dim)?;
    Ok(0.5 * (pre * (p * (p - 1.0) * ep0 + 1.0).powf(2.0 / p) - 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HyperRow {
    pub t: f64,
    pub e2: EntropyValue,
    /// Whether `t ≥ T_0(p)`, so the bound applies.
    pub checked: bool,
    /// `e_2(f(t)) ≤ bound`; vacuously true before the waiting time.
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HyperReport {
    pub p: f64,
    pub dim: usize,
    pub ep_initial: EntropyValue,
    pub e2_initial: EntropyValue,
    /// `ε = (p−1)/(4p)` and `∫ e^{ε|x|²} f_0`.
    pub eps: f64,
    pub weighted_mass: f64,
    pub params: HyperParams,
    pub waiting_time: f64,
    pub bound: f64,
    pub first_finite_e2: Option<f64>,
    /// `e_2` is non-increasing, and stays finite, from its first finite value.
    pub e2_monotone: bool,
    pub rows: Vec<HyperRow>,
    /// At least one grid time reaches the waiting time and the bound holds
    /// at all of them.
    pub pass: bool,
}

/// Checks `e_2(f(t)) ≤ entropic_hyper_rhs(p, d, e_p(f_0))` for every grid
/// time past `T_0(p)`, with constants fitted on `fit_grid`. The mixture is
/// given in normalized coordinates.
pub fn verify_hypercontractivity(
    sys: &NormalizedSystem,
    mix: &GaussianMixture,
    p: f64,
    grid: &[f64],
    fit_grid: &[f64],
    quad: &QuadratureSpec,
) -> Result<HyperReport> {
    check_open_unit("p", p, 1.0, 2.0)?;
    if mix.dim() != sys.dim() {
        return Err(Error::Dimension {
            expected: sys.dim(),
            found: mix.dim(),
        });
    }
    let eps = (p - 1.0) / (4.0 * p);
    let weighted = weighted_mass(mix, eps)?
        .finite()
        .ok_or_else(|| Error::InvalidParameter(format!("initial data lacks a finite exp(eps|x|^2) moment at eps = {eps}")))?;
    let gen = EntropyGenerator::power(p)?;
    let ep_initial = ep_quadrature(sys, mix, &gen, quad)?.value;
    let ep0 = ep_initial.finite().ok_or(Error::InfiniteEntropy)?;
    let e2_initial = e2_mixture(sys, mix)?;

    let params = HyperParams::from_fits(sys, fit_grid)?;
    let waiting_time = waiting_time_T0(p, &params)?;
    let bound = entropic_hyper_rhs(p, sys.dim(), ep0)?;

    let rows = grid
        .par_iter()
        .map(|&t| {
            let e2 = e2_mixture(sys, &evolve_mixture(sys.system(), mix, t)?)?;
            let checked = t >= waiting_time;
            let holds = !checked || e2.finite().is_some_and(|v| v <= bound);
            Ok(HyperRow { t, e2, checked, holds })
        })
        .collect::<Result<Vec<_>>>()?;

    let first = rows.iter().position(|r| r.e2.is_finite());
    let e2_monotone = first.is_none_or(|i| {
        rows[i..]
            .windows(2)
            .all(|w| match (w[0].e2, w[1].e2) {
                (EntropyValue::Finite(a), EntropyValue::Finite(b)) => b <= a + 1e-12 * a.max(1.0),
                _ => false,
            })
    });
    let pass = rows.iter().any(|r| r.checked) && rows.iter().all(|r| r.holds);
    Ok(HyperReport {
        p,
        dim: sys.dim(),
        ep_initial,
        e2_initial,
        eps,
        weighted_mass: weighted,
        params,
        waiting_time,
        bound,
        first_finite_e2: first.map(|i| rows[i].t),
        e2_monotone,
        rows,
        pass,
    })
}
