//! Relative entropies `e_ψ(f) = ∫ ψ(f/f_∞) f_∞`, Fisher information and the
//! dissipation identity, for data in normalized coordinates (`f_∞` standard
//! Gaussian).

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::linalg;
use crate::propagation::{evolve_mixture, GaussianMixture};
use crate::quadrature::{NodeSet, QuadratureSpec};
use crate::spectral::{HermiteFlow, HermiteState};
use crate::system::NormalizedSystem;

/// A user-supplied generating function with its first four derivatives.
pub trait PsiFunction: Send + Sync + fmt::Debug {
    fn value(&self, y: f64) -> f64;
    /// `order` in `1..=4`.
    fn derivative(&self, order: usize, y: f64) -> f64;
    /// Whether negative arguments are admitted.
    fn signed_domain(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone)]
pub enum EntropyGenerator {
    /// `ψ_p(y) = (y^p − p(y−1) − 1) / (p(p−1))`, `1 < p ≤ 2`.
    Power { p: f64 },
    /// `ψ_1(y) = y log y − y + 1`.
    Boltzmann,
    Custom(Arc<dyn PsiFunction>),
}

impl EntropyGenerator {
    pub fn power(p: f64) -> Result<Self> {
        if !(p > 1.0 && p <= 2.0) {
            return Err(Error::InvalidParameter(format!("entropy exponent must lie in (1, 2], got {p}")));
        }
        Ok(EntropyGenerator::Power { p })
    }

    /// Exponent of the family, `1` for Boltzmann, `None` for custom ψ.
    pub fn exponent(&self) -> Option<f64> {
        match *self {
            EntropyGenerator::Power { p } => Some(p),
            EntropyGenerator::Boltzmann => Some(1.0),
            EntropyGenerator::Custom(_) => None,
        }
    }

    fn signed_domain(&self) -> bool {
        match self {
            EntropyGenerator::Power { p } => *p == 2.0,
            EntropyGenerator::Boltzmann => false,
            EntropyGenerator::Custom(f) => f.signed_domain(),
        }
    }

    pub fn psi(&self, y: f64) -> Result<f64> {
        self.eval(0, y)
    }

    /// `ψ^{(order)}(y)` for `order ∈ 0..=4`.
    pub fn eval(&self, order: usize, y: f64) -> Result<f64> {
        if order > 4 {
            return Err(Error::InvalidParameter(format!("derivative order {order} not available")));
        }
        if y.is_nan() || y < 0.0 && !self.signed_domain() {
            return Err(Error::Domain { value: y });
        }
        if let EntropyGenerator::Custom(f) = self {
            return Ok(if order == 0 { f.value(y) } else { f.derivative(order, y) });
        }
        let p = self.exponent().expect("power family");
        if p == 2.0 {
            return Ok(match order {
                0 => 0.5 * (y - 1.0) * (y - 1.0),
                1 => y - 1.0,
                2 => 1.0,
                _ => 0.0,
            });
        }
        if y == 0.0 && (order >= 2 || order == 1 && p == 1.0) {
            return Err(Error::Domain { value: y });
        }
        Ok(match order {
            0 => power_psi(p, y),
            1 if p == 1.0 => y.ln(),
            1 => (p - 1.0).recip() * ((p - 1.0) * y.ln()).exp_m1(),
            2 => y.powf(p - 2.0),
            3 => (p - 2.0) * y.powf(p - 3.0),
            _ => (p - 2.0) * (p - 3.0) * y.powf(p - 4.0),
        })
    }
}

/// `ψ_p(y)`, with `p = 1` the Boltzmann limit; series near `y = 1`.
fn power_psi(p: f64, y: f64) -> f64 {
    let h = y - 1.0;
    if h.abs() < 0.1 {
        // Σ_{k≥2} c_k h^k, c_2 = ½, c_{k+1} = c_k (p − k)/(k + 1)
        let mut coeff = 0.5;
        let mut hk = h * h;
        let mut sum = 0.0;
        for k in 2..40 {
            sum += coeff * hk;
            coeff *= (p - k as f64) / (k + 1) as f64;
            hk *= h;
            if hk.abs() < 1e-18 * sum.abs() {
                break;
            }
        }
        return sum;
    }
    if p == 1.0 {
        if y == 0.0 {
            return 1.0;
        }
        return y * y.ln() - y + 1.0;
    }
    (y.powf(p) - p * h - 1.0) / (p * (p - 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Admissibility {
    pub admissible: bool,
    /// Smallest normalized margin of `½ψ''ψ'''' − (ψ''')²`.
    pub worst_margin: f64,
    pub worst_at: f64,
}

/// 401 log-spaced points on `[1e−4, 1e4]`.
pub fn default_admissibility_grid() -> Vec<f64> {
    (0..=400).map(|i| 10f64.powf(-4.0 + 8.0 * i as f64 / 400.0)).collect()
}

/// Checks `ψ(1) = ψ'(1) = 0`, `ψ'' > 0` and `(ψ''')² ≤ ½ψ''ψ''''` on the grid.
pub fn check_admissible(gen: &EntropyGenerator, grid: &[f64]) -> Result<Admissibility> {
    const SLACK: f64 = 1e-12;
    let mut ok = gen.psi(1.0)?.abs() <= SLACK && gen.eval(1, 1.0)?.abs() <= SLACK;
    let mut worst = (f64::INFINITY, f64::NAN);
    for &y in grid {
        if !(y > 0.0) {
            return Err(Error::Domain { value: y });
        }
        let d2 = gen.eval(2, y)?;
        let d3 = gen.eval(3, y)?;
        let d4 = gen.eval(4, y)?;
        if !(d2 > 0.0) {
            ok = false;
        }
        let lhs = d3 * d3;
        let rhs = 0.5 * d2 * d4;
        let scale = lhs.abs().max(rhs.abs()).max(f64::MIN_POSITIVE);
        let margin = (rhs - lhs) / scale;
        if margin < -SLACK {
            ok = false;
        }
        let margin = if d2 > 0.0 { margin } else { margin.min(-1.0) };
        if margin < worst.0 {
            worst = (margin, y);
        }
    }
    Ok(Admissibility {
        admissible: ok,
        worst_margin: worst.0,
        worst_at: worst.1,
    })
}

/// An entropy value; integrability failures map to `Infinite`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EntropyValue {
    Finite(f64),
    Infinite,
}

impl EntropyValue {
    pub fn is_finite(&self) -> bool {
        matches!(self, EntropyValue::Finite(_))
    }

    pub fn finite(&self) -> Option<f64> {
        match *self {
            EntropyValue::Finite(v) => Some(v),
            EntropyValue::Infinite => None,
        }
    }

    /// `f64::INFINITY` for the infinite value.
    pub fn as_f64(&self) -> f64 {
        self.finite().unwrap_or(f64::INFINITY)
    }
}

impl Serialize for EntropyValue {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match *self {
            EntropyValue::Finite(v) => s.serialize_f64(v),
            EntropyValue::Infinite => s.serialize_str("infinite"),
        }
    }
}

fn log_std_normal(x: &DVector<f64>) -> f64 {
    -0.5 * x.norm_squared() - 0.5 * x.len() as f64 * (2.0 * std::f64::consts::PI).ln()
}

fn check_dim(sys: &NormalizedSystem, dim: usize) -> Result<()> {
    if sys.dim() != dim {
        return Err(Error::Dimension {
            expected: sys.dim(),
            found: dim,
        });
    }
    Ok(())
}

/// Closed-form `e_2 = ½(Σ_{ij} w_i w_j G_ij − 2Σ_i w_i + 1)` with
/// `G_ij = ∫ N_i N_j / f_∞`.
pub fn e2_mixture(sys: &NormalizedSystem, mix: &GaussianMixture) -> Result<EntropyValue> {
    check_dim(sys, mix.dim())?;
    let dim = mix.dim();
    let eye = DMatrix::<f64>::identity(dim, dim);
    let prepared: Vec<(f64, DMatrix<f64>, DVector<f64>, f64)> = mix
        .components()
        .iter()
        .map(|c| {
            let chol = c.cov.clone().cholesky().expect("validated covariance");
            let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            (c.weight, chol.inverse(), c.mean.clone(), log_det)
        })
        .collect();
    let mut total = 0.0;
    for (wi, pi, mi, ldi) in &prepared {
        for (wj, pj, mj, ldj) in &prepared {
            let a = pi + pj - &eye;
            let Some(chol) = a.clone().cholesky() else {
                return Ok(EntropyValue::Infinite);
            };
            let b = pi * mi + pj * mj;
            let c = (mi.transpose() * pi * mi)[(0, 0)] + (mj.transpose() * pj * mj)[(0, 0)];
            let log_det_a: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            let quad = b.dot(&chol.solve(&b));
            let log_g = 0.5 * quad - 0.5 * c - 0.5 * (ldi + ldj + log_det_a);
            total += wi * wj * log_g.exp();
        }
    }
    let mass = mix.total_mass();
    if !total.is_finite() {
        return Ok(EntropyValue::Infinite);
    }
    Ok(EntropyValue::Finite((0.5 * (total - 2.0 * mass + 1.0)).max(0.0)))
}

/// Values of `g = f/f_∞` (and its gradient) at quadrature nodes.
#[derive(Debug, Clone)]
pub enum RatioSample {
    /// Strictly positive data: `log g` and `∇g / g`.
    Positive { log_g: f64, grad_log: DVector<f64> },
    /// Possibly signed data: `g` and `∇g`.
    Signed { g: f64, grad: DVector<f64> },
}

/// Data that entropies and Fisher information can be evaluated on.
pub trait RelativeDensity: Sized {
    fn dim(&self) -> usize;

    /// Samples of `f/f_∞` at `points`; gradients are zero unless requested.
    fn ratio_samples(&self, points: &[DVector<f64>], with_grad: bool) -> Vec<RatioSample>;

    /// Gaussian reference `(center, cov)` for integrands shaped like
    /// `f^p f_∞^{1−p}` (or like `f` and `f_∞` together when `None`);
    /// `None` when such integrals diverge.
    fn reference(&self, exponent: Option<f64>) -> Option<(DVector<f64>, DMatrix<f64>)>;

    /// Whether `f/f_∞` is strictly positive.
    fn is_positive(&self) -> bool;

    fn mass(&self) -> f64;

    fn evolve(&self, sys: &NormalizedSystem, t: f64) -> Result<Self>;
}

/// Smallest matrix found by successive Loewner-upper updates that dominates
/// every input.
fn loewner_upper(mats: &[DMatrix<f64>]) -> DMatrix<f64> {
    let mut m = mats[0].clone();
    for s in &mats[1..] {
        let eig = SymmetricEigen::new((&m + m.transpose()) * 0.5);
        let half = &eig.eigenvectors * DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt)) * eig.eigenvectors.transpose();
        let inv_half = &eig.eigenvectors * DMatrix::from_diagonal(&eig.eigenvalues.map(|v| 1.0 / v.sqrt())) * eig.eigenvectors.transpose();
        let rel = &inv_half * s * &inv_half;
        let re = SymmetricEigen::new((&rel + rel.transpose()) * 0.5);
        let clamped = &re.eigenvectors * DMatrix::from_diagonal(&re.eigenvalues.map(|v| v.max(1.0))) * re.eigenvectors.transpose();
        m = &half * clamped * &half;
        m = (&m + m.transpose()) * 0.5;
    }
    m
}

impl RelativeDensity for GaussianMixture {
    fn dim(&self) -> usize {
        GaussianMixture::dim(self)
    }

    fn is_positive(&self) -> bool {
        true
    }

    fn mass(&self) -> f64 {
        self.total_mass()
    }

    fn ratio_samples(&self, points: &[DVector<f64>], with_grad: bool) -> Vec<RatioSample> {
        let parts: Vec<(f64, DMatrix<f64>, DMatrix<f64>, &DVector<f64>, f64)> = self
            .components()
            .iter()
            .map(|c| {
                let chol = c.cov.clone().cholesky().expect("validated covariance");
                let log_det_half: f64 = chol.l().diagonal().iter().map(|v| v.ln()).sum();
                let lw = c.weight.ln() - log_det_half;
                (lw, chol.l(), chol.inverse(), &c.mean, 0.0)
            })
            .collect();
        points
            .iter()
            .map(|x| {
                // log(w_i N_i / φ) = log w_i − ½ log det Σ_i − ½ rᵀ P r + ½|x|²
                let logs: Vec<f64> = parts
                    .iter()
                    .map(|(lw, l, _, m, _)| {
                        let r = x - *m;
                        let z = l.solve_lower_triangular(&r).expect("non-singular factor");
                        lw - 0.5 * z.norm_squared() + 0.5 * x.norm_squared()
                    })
                    .collect();
                let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let scaled: Vec<f64> = logs.iter().map(|v| (v - top).exp()).collect();
                let sum: f64 = scaled.iter().sum();
                let log_g = top + sum.ln();
                let grad_log = if with_grad {
                    parts.iter().zip(&scaled).fold(DVector::zeros(x.len()), |acc, ((_, _, prec, m, _), s)| {
                        acc + (x - prec * (x - *m)) * (s / sum)
                    })
                } else {
                    DVector::zeros(x.len())
                };
                RatioSample::Positive { log_g, grad_log }
            })
            .collect()
    }

    fn reference(&self, exponent: Option<f64>) -> Option<(DVector<f64>, DMatrix<f64>)> {
        let dim = GaussianMixture::dim(self);
        let eye = DMatrix::<f64>::identity(dim, dim);
        let mut mats = Vec::new();
        match exponent {
            None => {
                mats.push(eye.clone());
                for c in self.components() {
                    mats.push(&c.cov + &c.mean * c.mean.transpose());
                }
            }
            Some(p) => {
                for c in self.components() {
                    // f_i^p φ^{1−p} is Gaussian with precision p Σ⁻¹ − (p − 1) I.
                    let prec = c.cov.clone().try_inverse()?;
                    let tilted = &prec * p - &eye * (p - 1.0);
                    let tilted_cov = tilted.cholesky()?.inverse();
                    let tilted_mean = &tilted_cov * (&prec * &c.mean) * p;
                    mats.push(&tilted_cov + &tilted_mean * tilted_mean.transpose());
                }
            }
        }
        Some((DVector::zeros(dim), loewner_upper(&mats)))
    }

    fn evolve(&self, sys: &NormalizedSystem, t: f64) -> Result<Self> {
        evolve_mixture(sys.system(), self, t)
    }
}

impl RelativeDensity for HermiteState {
    fn dim(&self) -> usize {
        HermiteState::dim(self)
    }

    fn ratio_samples(&self, points: &[DVector<f64>], with_grad: bool) -> Vec<RatioSample> {
        points
            .iter()
            .map(|x| {
                if with_grad {
                    let (g, grad) = self.ratio_and_gradient(x);
                    RatioSample::Signed { g, grad }
                } else {
                    RatioSample::Signed {
                        g: self.ratio(x),
                        grad: DVector::zeros(x.len()),
                    }
                }
            })
            .collect()
    }

    fn is_positive(&self) -> bool {
        false
    }

    fn mass(&self) -> f64 {
        HermiteState::mass(self)
    }

    fn reference(&self, _exponent: Option<f64>) -> Option<(DVector<f64>, DMatrix<f64>)> {
        let dim = HermiteState::dim(self);
        Some((DVector::zeros(dim), DMatrix::identity(dim, dim)))
    }

    fn evolve(&self, sys: &NormalizedSystem, t: f64) -> Result<Self> {
        HermiteFlow::new(sys.drift(), self.m_max())?.evolve(self, t)
    }
}

/// A quadrature estimate with the number of nodes used.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuadratureValue {
    pub value: EntropyValue,
    pub nodes: usize,
}

/// Exponent whose tilted density shapes the integrand, when the data are
/// positive and ψ belongs to the power family.
fn tilt_exponent<F: RelativeDensity>(f: &F, gen: &EntropyGenerator) -> Option<f64> {
    if f.is_positive() {
        gen.exponent()
    } else {
        None
    }
}

fn nodes_for<F: RelativeDensity>(f: &F, gen: &EntropyGenerator, quad: &QuadratureSpec) -> Result<Option<NodeSet>> {
    let exponent = tilt_exponent(f, gen);
    match f.reference(exponent) {
        None => Ok(None),
        Some((center, cov)) => NodeSet::gaussian(quad, &center, &cov).map(Some),
    }
}

/// `exp(lw) · ψ(g)`.
fn weighted_psi(gen: &EntropyGenerator, lw: f64, sample: &RatioSample) -> Result<f64> {
    match sample {
        RatioSample::Positive { log_g, .. } => Ok(lw.exp() * gen.psi(log_g.exp())?),
        RatioSample::Signed { g, .. } => {
            if *g < 0.0 && !gen.signed_domain() {
                return Err(Error::NegativeDensity { ratio: *g });
            }
            Ok(lw.exp() * gen.psi(*g)?)
        }
    }
}

/// `exp(lw) · ψ''(g) ∇gᵀ P ∇g`.
fn weighted_fisher(gen: &EntropyGenerator, lw: f64, sample: &RatioSample, weight: &DMatrix<f64>) -> Result<f64> {
    match sample {
        RatioSample::Positive { log_g, grad_log } => {
            let q = grad_log.dot(&(weight * grad_log));
            if q == 0.0 {
                return Ok(0.0);
            }
            match gen.exponent() {
                // ψ''(g) g² = g^p
                Some(p) => Ok((lw + p * log_g).exp() * q),
                None => {
                    let g = log_g.exp();
                    Ok(lw.exp() * gen.eval(2, g)? * g * g * q)
                }
            }
        }
        RatioSample::Signed { g, grad } => {
            if *g < 0.0 && !gen.signed_domain() {
                return Err(Error::NegativeDensity { ratio: *g });
            }
            let q = grad.dot(&(weight * grad));
            if q == 0.0 {
                return Ok(0.0);
            }
            if *g == 0.0 && !gen.signed_domain() {
                return Err(Error::NegativeDensity { ratio: *g });
            }
            Ok(lw.exp() * gen.eval(2, *g)? * q)
        }
    }
}

/// `e_ψ(f) = ∫ ψ(f/f_∞) f_∞ dx` by quadrature.
pub fn ep_quadrature<F: RelativeDensity>(
    sys: &NormalizedSystem,
    f: &F,
    gen: &EntropyGenerator,
    quad: &QuadratureSpec,
) -> Result<QuadratureValue> {
    check_dim(sys, f.dim())?;
    let Some(nodes) = nodes_for(f, gen, quad)? else {
        return Ok(QuadratureValue {
            value: EntropyValue::Infinite,
            nodes: 0,
        });
    };
    let samples = f.ratio_samples(&nodes.points, false);
    let mut total = 0.0;
    match tilt_exponent(f, gen) {
        Some(p) => {
            // e_p = (∫ f^p f_∞^{1−p} − p·mass + p − 1) / (p(p−1)), and the
            // Boltzmann analogue ∫ f log g − mass + 1.
            let mass = f.mass();
            let mut integral = 0.0;
            for ((x, lw), s) in nodes.points.iter().zip(&nodes.log_weights).zip(&samples) {
                let RatioSample::Positive { log_g, .. } = s else { unreachable!() };
                let base = lw + log_std_normal(x);
                integral += if p == 1.0 { (base + log_g).exp() * log_g } else { (base + p * log_g).exp() };
            }
            total = if p == 1.0 {
                integral - mass + 1.0
            } else {
                (integral - p * mass + p - 1.0) / (p * (p - 1.0))
            };
        }
        None => {
            for ((x, lw), s) in nodes.points.iter().zip(&nodes.log_weights).zip(&samples) {
                total += weighted_psi(gen, lw + log_std_normal(x), s)?;
            }
        }
    }
    let value = if total.is_finite() {
        EntropyValue::Finite(total.max(0.0))
    } else {
        EntropyValue::Infinite
    };
    Ok(QuadratureValue {
        value,
        nodes: nodes.len(),
    })
}

/// `I_ψ^P(f) = ∫ ψ''(g) ∇gᵀ P ∇g f_∞ dx`, `g = f/f_∞`.
pub fn fisher_info<F: RelativeDensity>(
    sys: &NormalizedSystem,
    f: &F,
    gen: &EntropyGenerator,
    weight: &DMatrix<f64>,
    quad: &QuadratureSpec,
) -> Result<QuadratureValue> {
    check_dim(sys, f.dim())?;
    let psd = linalg::psd_check(weight, linalg::RANK_RTOL)?;
    if weight.nrows() != f.dim() {
        return Err(Error::Dimension {
            expected: f.dim(),
            found: weight.nrows(),
        });
    }
    if !psd.is_symmetric_psd {
        return Err(Error::InvalidParameter("Fisher weight matrix must be symmetric positive semidefinite".into()));
    }
    let Some(nodes) = nodes_for(f, gen, quad)? else {
        return Ok(QuadratureValue {
            value: EntropyValue::Infinite,
            nodes: 0,
        });
    };
    let samples = f.ratio_samples(&nodes.points, true);
    let mut total = 0.0;
    for ((x, lw), s) in nodes.points.iter().zip(&nodes.log_weights).zip(&samples) {
        total += weighted_fisher(gen, lw + log_std_normal(x), s, weight)?;
    }
    let value = if total.is_finite() {
        EntropyValue::Finite(total.max(0.0))
    } else {
        EntropyValue::Infinite
    };
    Ok(QuadratureValue {
        value,
        nodes: nodes.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DissipationCheck {
    /// Centered difference of `e_ψ` at `t = dt`.
    pub lhs: f64,
    /// `−I_ψ^{C_s}(f(dt))`, with `C_s = D` in normalized coordinates.
    pub rhs: f64,
    pub gap: f64,
}

/// Compares `d/dt e_ψ(f(t))` with `−I_ψ^{D}(f(t))` at `t = dt`.
pub fn dissipation_check<F: RelativeDensity>(
    sys: &NormalizedSystem,
    f: &F,
    gen: &EntropyGenerator,
    dt: f64,
    quad: &QuadratureSpec,
) -> Result<DissipationCheck> {
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!("step must be positive, got {dt}")));
    }
    let finite = |v: QuadratureValue| v.value.finite().ok_or(Error::InfiniteEntropy);
    let mid = f.evolve(sys, dt)?;
    let late = f.evolve(sys, 2.0 * dt)?;
    let e0 = finite(ep_quadrature(sys, f, gen, quad)?)?;
    let e2 = finite(ep_quadrature(sys, &late, gen, quad)?)?;
    let lhs = (e2 - e0) / (2.0 * dt);
    let rhs = -finite(fisher_info(sys, &mid, gen, sys.diffusion(), quad)?)?;
    Ok(DissipationCheck {
        lhs,
        rhs,
        gap: (lhs - rhs).abs(),
    })
}

/// `g(y) = ψ_{p1}(y) / ψ_{p2}(y)`, continuous at `y = 1` with value 1.
pub fn dominance_ratio(p1: f64, p2: f64, y: f64) -> f64 {
    if y == 1.0 {
        return 1.0;
    }
    power_psi(p1, y) / power_psi(p2, y)
}

/// `C_{p1,p2} = sup_{y ≥ 0} ψ_{p1}(y) / ψ_{p2}(y)` over a log grid on
/// `[1e−8, 1e8]` plus the limits at `0`, `1` and `∞`.
pub fn dominance_constants(p1: f64, p2: f64) -> Result<f64> {
    if !(p1 > 1.0 && p1 < p2 && p2 <= 2.0) {
        return Err(Error::InvalidParameter(format!("need 1 < p1 < p2 ≤ 2, got p1 = {p1}, p2 = {p2}")));
    }
    let at_zero = p2 / p1;
    let sup = (0..=4000)
        .map(|i| 10f64.powf(-8.0 + 16.0 * i as f64 / 4000.0))
        .map(|y| dominance_ratio(p1, p2, y))
        .fold(at_zero.max(1.0), f64::max);
    Ok(sup)
}

/// `2ψ''(1)`, the constant in `e_ψ ≤ 2ψ''(1) e_2`.
pub fn psi_vs_e2_bound(gen: &EntropyGenerator) -> Result<f64> {
    Ok(2.0 * gen.eval(2, 1.0)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::propagation::GaussianComponent;
    use crate::quadrature::gauss_hermite;
    use crate::spectral::{project_gaussian, MultiIndex};
    use crate::system::{normalize, FpSystem};
    use proptest::prelude::*;

    fn scalar_sys() -> NormalizedSystem {
        normalize(&FpSystem::new(DMatrix::identity(1, 1), DMatrix::identity(1, 1)).unwrap()).unwrap()
    }

    fn kinetic_sys() -> NormalizedSystem {
        normalize(
            &FpSystem::new(
                DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 2.0])),
                DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 2.0]),
            )
            .unwrap(),
        )
        .unwrap()
    }

    fn gauss1(mean: f64, var: f64) -> GaussianMixture {
        GaussianMixture::single(DVector::from_vec(vec![mean]), DMatrix::from_element(1, 1, var)).unwrap()
    }

    const GH: QuadratureSpec = QuadratureSpec::GaussHermite { order: 60 };

    #[test]
    fn psi_examples() {
        for p in [1.2, 1.5, 2.0] {
            let g = EntropyGenerator::power(p).unwrap();
            assert_eq!(g.psi(1.0).unwrap(), 0.0);
            assert!((g.psi(0.0).unwrap() - 1.0 / p).abs() < 1e-15);
            assert_eq!(g.eval(1, 1.0).unwrap(), 0.0);
            assert!((g.eval(2, 1.0).unwrap() - 1.0).abs() < 1e-15);
        }
        let two = EntropyGenerator::power(2.0).unwrap();
        for y in [-1.5, 0.0, 0.3, 4.0] {
            assert_eq!(two.psi(y).unwrap(), 0.5 * (y - 1.0) * (y - 1.0));
        }
        let b = EntropyGenerator::Boltzmann;
        assert!((b.psi(2.0).unwrap() - (2.0 * 2f64.ln() - 1.0)).abs() < 1e-15);
        assert_eq!(b.psi(0.0).unwrap(), 1.0);
        assert!(matches!(EntropyGenerator::power(1.5).unwrap().psi(-0.1), Err(Error::Domain { .. })));
        assert!(matches!(b.eval(2, 0.0), Err(Error::Domain { .. })));
        assert!(EntropyGenerator::power(2.5).is_err());
        assert!(EntropyGenerator::power(1.0).is_err());
    }

    #[test]
    fn psi_series_matches_direct_formula() {
        for p in [1.0, 1.3, 1.5, 1.9] {
            for h in [0.09, -0.09, 0.05, 0.11, -0.11] {
                let y: f64 = 1.0 + h;
                let direct = if p == 1.0 { y * y.ln() - y + 1.0 } else { (y.powf(p) - p * h - 1.0) / (p * (p - 1.0)) };
                assert!((power_psi(p, y) - direct).abs() < 1e-15, "p={p} h={h}");
            }
            // ψ ≈ h²/2 for tiny h, where the direct formula loses all digits.
            let y = 1.0 + 1e-9;
            let h = y - 1.0;
            assert!((power_psi(p, y) / (0.5 * h * h) - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let g = EntropyGenerator::power(1.5).unwrap();
        let h = 1e-5;
        for y in [0.3, 1.0, 2.7] {
            for order in 0..4 {
                let fd = (g.eval(order, y + h).unwrap() - g.eval(order, y - h).unwrap()) / (2.0 * h);
                let exact = g.eval(order + 1, y).unwrap();
                assert!((fd - exact).abs() < 1e-8 * exact.abs().max(1.0), "order {order} at {y}");
            }
        }
    }

    #[derive(Debug)]
    struct Quartic;

    impl PsiFunction for Quartic {
        fn value(&self, y: f64) -> f64 {
            (y - 1.0).powi(4)
        }
        fn derivative(&self, order: usize, y: f64) -> f64 {
            match order {
                1 => 4.0 * (y - 1.0).powi(3),
                2 => 12.0 * (y - 1.0).powi(2),
                3 => 24.0 * (y - 1.0),
                _ => 24.0,
            }
        }
    }

    #[test]
    fn admissibility_examples() {
        let grid = default_admissibility_grid();
        assert!(check_admissible(&EntropyGenerator::power(2.0).unwrap(), &grid).unwrap().admissible);
        let r = check_admissible(&EntropyGenerator::power(1.5).unwrap(), &grid).unwrap();
        assert!(r.admissible);
        // margin (½(2−p)(p−1)) / max(lhs, rhs) at any y for ψ_p
        let expect = (0.375 - 0.25) / 0.375;
        assert!((r.worst_margin - expect).abs() < 1e-12);
        assert!(check_admissible(&EntropyGenerator::Boltzmann, &grid).unwrap().admissible);
        let mut with_one = grid.clone();
        with_one.push(1.0);
        assert!(!check_admissible(&EntropyGenerator::Custom(Arc::new(Quartic)), &with_one).unwrap().admissible);
    }

    #[test]
    fn e2_examples() {
        let sys = scalar_sys();
        assert_eq!(e2_mixture(&sys, &gauss1(0.0, 1.0)).unwrap(), EntropyValue::Finite(0.0));
        let v = e2_mixture(&sys, &gauss1(0.0, 0.5)).unwrap().finite().unwrap();
        // 200-point oracle: ½∫ (N(x; 0, ½)/φ − 1)² φ
        let (x, w) = gauss_hermite(200);
        let oracle: f64 = 0.5
            * x.iter()
                .zip(&w)
                .map(|(x, w)| {
                    let ratio = (1.0 / 0.5f64.sqrt()) * (-x * x + 0.5 * x * x).exp();
                    w * (ratio - 1.0).powi(2)
                })
                .sum::<f64>();
        assert!((v - oracle).abs() < 1e-10, "{v} vs {oracle}");
        assert!((v - 0.5 * (1.0 / 0.75f64.sqrt() - 1.0)).abs() < 1e-14);
        assert_eq!(e2_mixture(&sys, &gauss1(0.0, 2.5)).unwrap(), EntropyValue::Infinite);
        assert_eq!(e2_mixture(&sys, &gauss1(0.0, 2.0)).unwrap(), EntropyValue::Infinite);
    }

    #[test]
    fn ep_examples() {
        let sys = scalar_sys();
        for gen in [EntropyGenerator::power(1.5).unwrap(), EntropyGenerator::power(2.0).unwrap(), EntropyGenerator::Boltzmann] {
            let v = ep_quadrature(&sys, &gauss1(0.0, 1.0), &gen, &GH).unwrap();
            assert!(v.value.finite().unwrap().abs() < 1e-14);
            assert_eq!(v.nodes, 60);
        }
        let two = EntropyGenerator::power(2.0).unwrap();
        let q = ep_quadrature(&sys, &gauss1(0.0, 0.5), &two, &GH).unwrap().value.finite().unwrap();
        let c = e2_mixture(&sys, &gauss1(0.0, 0.5)).unwrap().finite().unwrap();
        assert!((q - c).abs() < 1e-8);

        let wide = gauss1(0.0, 2.5);
        let p15 = EntropyGenerator::power(1.5).unwrap();
        let v = ep_quadrature(&sys, &wide, &p15, &GH).unwrap().value;
        // (∫ f^p φ^{1−p} − 1)/(p(p−1)); for N(0, s) that integral is
        // s^{−p/2} (p/s − (p − 1))^{−1/2}.
        let s: f64 = 2.5;
        let p: f64 = 1.5;
        let closed = (s.powf(-p / 2.0) * (p / s - (p - 1.0)).powf(-0.5) - 1.0) / (p * (p - 1.0));
        assert!((v.finite().unwrap() - closed).abs() < 1e-10, "{v:?} vs {closed}");
        assert_eq!(ep_quadrature(&sys, &wide, &two, &GH).unwrap().value, EntropyValue::Infinite);
        assert_eq!(ep_quadrature(&sys, &gauss1(0.0, 3.5), &p15, &GH).unwrap().value, EntropyValue::Infinite);
    }

    #[test]
    fn boltzmann_matches_kl_closed_form() {
        let sys = scalar_sys();
        let (m, s): (f64, f64) = (0.7, 0.6);
        let v = ep_quadrature(&sys, &gauss1(m, s), &EntropyGenerator::Boltzmann, &GH).unwrap().value.finite().unwrap();
        let kl = 0.5 * (s + m * m - 1.0 - s.ln());
        assert!((v - kl).abs() < 1e-10);
    }

    #[test]
    fn signed_hermite_data() {
        let sys = scalar_sys();
        let s = HermiteState::from_coeffs(1, 2, &[(MultiIndex(vec![1]), 2.0)]).unwrap();
        let two = EntropyGenerator::power(2.0).unwrap();
        let v = ep_quadrature(&sys, &s, &two, &GH).unwrap().value.finite().unwrap();
        assert!((v - s.e2()).abs() < 1e-12);
        let p15 = EntropyGenerator::power(1.5).unwrap();
        assert!(matches!(ep_quadrature(&sys, &s, &p15, &GH), Err(Error::NegativeDensity { .. })));
    }

    /// Finite-difference-gradient oracle for the 1D Fisher information.
    fn fisher_fd_oracle(mean: f64, var: f64, p: f64) -> f64 {
        let ratio = |x: f64| var.powf(-0.5) * (-(x - mean).powi(2) / (2.0 * var) + 0.5 * x * x).exp();
        let (x, w) = gauss_hermite(200);
        let h = 1e-5;
        x.iter()
            .zip(&w)
            .map(|(x, w)| {
                let g = ratio(*x);
                let dg = (ratio(x + h) - ratio(x - h)) / (2.0 * h);
                w * g.powf(p - 2.0) * dg * dg
            })
            .sum()
    }

    #[test]
    fn fisher_examples() {
        let sys = scalar_sys();
        let one = DMatrix::identity(1, 1);
        let two = EntropyGenerator::power(2.0).unwrap();
        assert_eq!(fisher_info(&sys, &gauss1(0.0, 1.0), &two, &one, &GH).unwrap().value, EntropyValue::Finite(0.0));
        assert_eq!(fisher_info(&sys, &gauss1(0.3, 0.8), &two, &DMatrix::zeros(1, 1), &GH).unwrap().value, EntropyValue::Finite(0.0));
        let v = fisher_info(&sys, &gauss1(0.0, 0.8), &two, &one, &GH).unwrap().value.finite().unwrap();
        let oracle = fisher_fd_oracle(0.0, 0.8, 2.0);
        assert!((v - oracle).abs() <= 1e-6 * oracle, "{v} vs {oracle}");
        let p15 = EntropyGenerator::power(1.5).unwrap();
        let v = fisher_info(&sys, &gauss1(0.4, 1.3), &p15, &one, &GH).unwrap().value.finite().unwrap();
        let oracle = fisher_fd_oracle(0.4, 1.3, 1.5);
        assert!((v - oracle).abs() <= 1e-6 * oracle, "{v} vs {oracle}");
        assert!(fisher_info(&sys, &gauss1(0.0, 0.8), &two, &(-one), &GH).is_err());
    }

    #[test]
    fn dissipation_examples() {
        let sys = kinetic_sys();
        let two = EntropyGenerator::power(2.0).unwrap();
        let eq = GaussianMixture::standard(2);
        let r = dissipation_check(&sys, &eq, &two, 1e-3, &GH).unwrap();
        assert!(r.lhs.abs() < 1e-12 && r.rhs.abs() < 1e-12);

        let f0 = GaussianMixture::single(DVector::from_vec(vec![0.5, -0.3]), DMatrix::from_row_slice(2, 2, &[0.8, 0.1, 0.1, 1.2])).unwrap();
        for gen in [two, EntropyGenerator::power(1.5).unwrap()] {
            let r = dissipation_check(&sys, &f0, &gen, 1e-3, &GH).unwrap();
            assert!(r.rhs <= 0.0);
            assert!(r.gap <= 1e-5, "{r:?}");
        }

        let h = HermiteState::from_coeffs(2, 3, &[(MultiIndex(vec![1, 0]), 0.2), (MultiIndex(vec![1, 1]), -0.1)]).unwrap();
        let r = dissipation_check(&sys, &h, &EntropyGenerator::power(2.0).unwrap(), 1e-3, &GH).unwrap();
        assert!(r.gap <= 1e-6, "{r:?}");
    }

    #[test]
    fn dominance_examples() {
        assert_eq!(psi_vs_e2_bound(&EntropyGenerator::power(1.5).unwrap()).unwrap(), 2.0);
        assert_eq!(dominance_ratio(1.3, 1.8, 1.0), 1.0);
        assert!((dominance_ratio(1.3, 1.8, 1.0 + 1e-7) - 1.0).abs() < 1e-6);
        assert!(dominance_ratio(1.3, 1.8, 1e12) < 1e-2);
        let c = dominance_constants(1.5, 2.0).unwrap();
        assert!(c >= 2.0 / 1.5 && c.is_finite());
        assert!(dominance_constants(2.0, 1.5).is_err());
    }

    #[test]
    fn projection_bridges_closed_form_e2() {
        let sys = normalize(&FpSystem::new(DMatrix::identity(2, 2), DMatrix::identity(2, 2)).unwrap()).unwrap();
        let mix = GaussianMixture::new(vec![
            GaussianComponent::new(0.5, DVector::from_vec(vec![0.05, -0.05]), DMatrix::from_row_slice(2, 2, &[1.1, 0.05, 0.05, 0.95])).unwrap(),
            GaussianComponent::new(0.5, DVector::from_vec(vec![-0.1, 0.0]), DMatrix::from_row_slice(2, 2, &[0.9, 0.0, 0.0, 1.15])).unwrap(),
        ])
        .unwrap();
        let closed = e2_mixture(&sys, &mix).unwrap().finite().unwrap();
        let h = project_gaussian(&mix, 8, &GH).unwrap();
        assert!((h.e2() - closed).abs() <= 1e-4 * closed, "{} vs {closed}", h.e2());
    }

    fn arb_near_equilibrium() -> impl Strategy<Value = GaussianMixture> {
        proptest::collection::vec((0.2f64..1.0, -0.3f64..0.3, -0.3f64..0.3, 0.8f64..1.2, -0.1f64..0.1, 0.8f64..1.2), 1..3)
            .prop_map(|parts| {
                let total: f64 = parts.iter().map(|p| p.0).sum();
                GaussianMixture::new(
                    parts
                        .into_iter()
                        .map(|(w, m0, m1, a, b, c)| {
                            GaussianComponent::new(w / total, DVector::from_vec(vec![m0, m1]), DMatrix::from_row_slice(2, 2, &[a, b, b, c])).unwrap()
                        })
                        .collect(),
                )
                .unwrap()
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn ep_two_matches_closed_form(mix in arb_near_equilibrium()) {
            let sys = kinetic_sys();
            let q = ep_quadrature(&sys, &mix, &EntropyGenerator::power(2.0).unwrap(), &GH).unwrap().value.finite().unwrap();
            let c = e2_mixture(&sys, &mix).unwrap().finite().unwrap();
            prop_assert!((q - c).abs() <= 1e-8);
        }

        #[test]
        fn dominance_on_samples(mix in arb_near_equilibrium()) {
            let sys = kinetic_sys();
            let e2 = e2_mixture(&sys, &mix).unwrap().finite().unwrap();
            let e15 = ep_quadrature(&sys, &mix, &EntropyGenerator::power(1.5).unwrap(), &GH).unwrap().value.finite().unwrap();
            let e12 = ep_quadrature(&sys, &mix, &EntropyGenerator::power(1.2).unwrap(), &GH).unwrap().value.finite().unwrap();
            prop_assert!(e15 <= 2.0 * e2 + 1e-8);
            prop_assert!(e12 <= dominance_constants(1.2, 1.5).unwrap() * e15 + 1e-8);
            let i = fisher_info(&sys, &mix, &EntropyGenerator::power(1.5).unwrap(), &DMatrix::identity(2, 2), &GH).unwrap().value.finite().unwrap();
            prop_assert!(i > 0.0);
        }

        #[test]
        fn entropy_is_non_increasing(mix in arb_near_equilibrium()) {
            let sys = kinetic_sys();
            let gen = EntropyGenerator::power(1.5).unwrap();
            let mut prev = f64::INFINITY;
            for i in 0..=20 {
                let f = mix.evolve(&sys, i as f64 * 0.5).unwrap();
                let e = ep_quadrature(&sys, &f, &gen, &GH).unwrap().value.finite().unwrap();
                prop_assert!(e <= prev + 1e-8);
                prev = e;
            }
        }
    }
}
