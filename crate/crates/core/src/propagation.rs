//! Exact solution flow for Gaussian data, envelope fitting for the
//! covariance and drift semigroup, and an Euler–Maruyama cross-check.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;
use crate::system::{equilibrium, FpSystem};

/// Relative tolerance for symmetry of component covariances.
const SYMMETRY_RTOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianComponent {
    pub weight: f64,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianComponent {
    pub fn new(weight: f64, mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if !(weight.is_finite() && weight > 0.0) {
            return Err(Error::InvalidParameter(format!("component weight must be positive, got {weight}")));
        }
        let dim = linalg::ensure_square(&cov)?;
        if mean.len() != dim {
            return Err(Error::Dimension {
                expected: dim,
                found: mean.len(),
            });
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        let asym = (&cov - cov.transpose()).amax();
        if asym > SYMMETRY_RTOL * cov.amax().max(1.0) {
            return Err(Error::InvalidParameter("component covariance is not symmetric".into()));
        }
        let cov = (&cov + cov.transpose()) * 0.5;
        if cov.clone().cholesky().is_none() {
            return Err(Error::InvalidParameter("component covariance is not positive definite".into()));
        }
        Ok(GaussianComponent { weight, mean, cov })
    }

    /// Density of the weighted component at `x`.
    pub fn density(&self, x: &DVector<f64>) -> f64 {
        self.log_density(x).exp() * self.weight
    }

    /// `log N(x; mean, cov)` without the weight.
    pub fn log_density(&self, x: &DVector<f64>) -> f64 {
        let chol = self.cov.clone().cholesky().expect("validated covariance");
        let r = x - &self.mean;
        let z = chol.l().solve_lower_triangular(&r).expect("non-singular factor");
        let log_det_half: f64 = chol.l().diagonal().iter().map(|v| v.ln()).sum();
        -0.5 * z.norm_squared() - log_det_half - 0.5 * x.len() as f64 * (2.0 * std::f64::consts::PI).ln()
    }
}

/// `Σ_i w_i N(m_i, Σ_i)`; closed under the exact flow.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    components: Vec<GaussianComponent>,
}

impl GaussianMixture {
    pub fn new(components: Vec<GaussianComponent>) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| Error::InvalidParameter("mixture needs at least one component".into()))?;
        let dim = first.mean.len();
        if let Some(bad) = components.iter().find(|c| c.mean.len() != dim) {
            return Err(Error::Dimension {
                expected: dim,
                found: bad.mean.len(),
            });
        }
        Ok(GaussianMixture { components })
    }

    /// The standard Gaussian, equilibrium of a normalized system.
    pub fn standard(dim: usize) -> Self {
        GaussianMixture {
            components: vec![GaussianComponent {
                weight: 1.0,
                mean: DVector::zeros(dim),
                cov: DMatrix::identity(dim, dim),
            }],
        }
    }

    pub fn single(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        GaussianMixture::new(vec![GaussianComponent::new(1.0, mean, cov)?])
    }

    pub fn dim(&self) -> usize {
        self.components[0].mean.len()
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    pub fn total_mass(&self) -> f64 {
        self.components.iter().map(|c| c.weight).sum()
    }

    /// Mean of the normalized mixture.
    pub fn mean(&self) -> DVector<f64> {
        let mass = self.total_mass();
        self.components
            .iter()
            .fold(DVector::zeros(self.dim()), |acc, c| acc + &c.mean * (c.weight / mass))
    }

    /// Covariance of the normalized mixture.
    pub fn covariance(&self) -> DMatrix<f64> {
        let mass = self.total_mass();
        let mean = self.mean();
        let second = self.components.iter().fold(DMatrix::zeros(self.dim(), self.dim()), |acc, c| {
            acc + (&c.cov + &c.mean * c.mean.transpose()) * (c.weight / mass)
        });
        second - &mean * mean.transpose()
    }

    pub fn density(&self, x: &DVector<f64>) -> f64 {
        self.components.iter().map(|c| c.density(x)).sum()
    }

    /// Image under `x ↦ A x`: means `A m`, covariances `A Σ Aᵀ`.
    pub fn transform(&self, a: &DMatrix<f64>) -> Result<Self> {
        if a.ncols() != self.dim() || a.nrows() != a.ncols() {
            return Err(Error::Dimension {
                expected: self.dim(),
                found: a.ncols(),
            });
        }
        let components = self
            .components
            .iter()
            .map(|c| {
                let cov = a * &c.cov * a.transpose();
                GaussianComponent {
                    weight: c.weight,
                    mean: a * &c.mean,
                    cov: (&cov + cov.transpose()) * 0.5,
                }
            })
            .collect();
        Ok(GaussianMixture { components })
    }

    /// Largest 2-norm condition number among component covariances.
    pub fn max_condition_number(&self) -> f64 {
        self.components
            .iter()
            .map(|c| {
                let ev = SymmetricEigen::new(c.cov.clone()).eigenvalues;
                ev.max() / ev.min()
            })
            .fold(0.0, f64::max)
    }
}

/// `W(t) = 2∫_0^t e^{−Cs} D e^{−Cᵀs} ds`, from
/// `C W + W Cᵀ = 2D − e^{−Ct} 2D e^{−Cᵀt}`.
pub fn gram_w(sys: &FpSystem, t: f64) -> Result<DMatrix<f64>> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::InvalidParameter(format!("time must be finite and non-negative, got {t}")));
    }
    let q = sys.diffusion() * 2.0;
    let e = linalg::matrix_exp(sys.drift(), -t)?;
    let rhs = &q - &e * &q * e.transpose();
    let w = linalg::kron_sum_solve(sys.drift(), &rhs)?;
    Ok((&w + w.transpose()) * 0.5)
}

/// `K − W(t) = e^{−Ct} K e^{−Cᵀt}`, free of the cancellation in `K − W(t)`
/// once `W(t)` is close to `K`.
pub fn gram_w_deficit(sys: &FpSystem, t: f64) -> Result<DMatrix<f64>> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::InvalidParameter(format!("time must be finite and non-negative, got {t}")));
    }
    let k = equilibrium(sys)?.covariance;
    let e = linalg::matrix_exp(sys.drift(), -t)?;
    let r = &e * k * e.transpose();
    Ok((&r + r.transpose()) * 0.5)
}

/// Pushes each component `N(y, Σ)` to `N(e^{−Ct} y, W(t) + e^{−Ct} Σ e^{−Cᵀt})`.
pub fn evolve_mixture(sys: &FpSystem, mix: &GaussianMixture, t: f64) -> Result<GaussianMixture> {
    if mix.dim() != sys.dim() {
        return Err(Error::Dimension {
            expected: sys.dim(),
            found: mix.dim(),
        });
    }
    let w = gram_w(sys, t)?;
    let e = linalg::matrix_exp(sys.drift(), -t)?;
    let components = mix
        .components
        .iter()
        .map(|c| {
            let cov = &w + &e * &c.cov * e.transpose();
            GaussianComponent {
                weight: c.weight,
                mean: &e * &c.mean,
                cov: (&cov + cov.transpose()) * 0.5,
            }
        })
        .collect();
    Ok(GaussianMixture { components })
}

/// Relative growth of the ratio series over the last tenth of the grid
/// beyond which the envelope is declared violated.
pub const TAIL_GROWTH_LIMIT: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnvelopeFit {
    /// `max_t quantity(t) / envelope(t)` over the grid.
    pub c_fit: f64,
    pub grid: Vec<f64>,
    pub ratios: Vec<f64>,
    pub max_ratio_location: f64,
    /// `max(last 10%) / max(first 90%) − 1`; zero for grids under 10 points.
    pub tail_growth: f64,
}

impl EnvelopeFit {
    /// Fits `c` in `quantity ≤ c · envelope`, rejecting ratio series that
    /// keep growing at the end of the grid.
    pub fn from_series(grid: &[f64], quantity: &[f64], envelope: &[f64]) -> Result<Self> {
        if grid.is_empty() || grid.len() != quantity.len() || grid.len() != envelope.len() {
            return Err(Error::InsufficientData {
                usable: grid.len().min(quantity.len()).min(envelope.len()),
                required: 1,
            });
        }
        let ratios: Vec<f64> = quantity.iter().zip(envelope).map(|(q, e)| q / e).collect();
        if ratios.iter().any(|r| !r.is_finite()) {
            return Err(Error::NonFinite);
        }
        let (arg, c_fit) = ratios
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &r)| if r > acc.1 { (i, r) } else { acc });
        let tail_growth = tail_growth(&ratios);
        if tail_growth > TAIL_GROWTH_LIMIT {
            return Err(Error::EnvelopeViolation { growth: tail_growth });
        }
        Ok(EnvelopeFit {
            c_fit,
            grid: grid.to_vec(),
            ratios,
            max_ratio_location: grid[arg],
            tail_growth,
        })
    }
}

fn tail_growth(ratios: &[f64]) -> f64 {
    let len = ratios.len();
    if len < 10 {
        return 0.0;
    }
    let tail = len.div_ceil(10);
    let head_max = ratios[..len - tail].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tail_max = ratios[len - tail..].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if head_max <= 0.0 {
        return if tail_max > 0.0 { f64::INFINITY } else { 0.0 };
    }
    tail_max / head_max - 1.0
}

/// `(1 + t^k) e^{−r t}`, or `e^{−r t}` when `k = 0`.
fn unit_envelope(rate: f64, power: usize, t: f64) -> f64 {
    let poly = if power == 0 { 1.0 } else { 1.0 + t.powi(power as i32) };
    poly * (-rate * t).exp()
}

/// Fits `c` in `‖W(t) − K‖ ≤ c(1 + t^{2n}) e^{−2μt}`.
pub fn fit_w_convergence(sys: &FpSystem, grid: &[f64]) -> Result<EnvelopeFit> {
    let (mu, n) = (sys.mu(), sys.defect());
    let quantity = grid
        .iter()
        .map(|&t| gram_w_deficit(sys, t).map(|r| linalg::spectral_norm(&r)))
        .collect::<Result<Vec<_>>>()?;
    let envelope: Vec<f64> = grid.iter().map(|&t| unit_envelope(2.0 * mu, 2 * n, t)).collect();
    EnvelopeFit::from_series(grid, &quantity, &envelope)
}

/// Fits `c_2` in `‖e^{−Ct}‖ ≤ c_2(1 + t^n) e^{−μt}`.
pub fn fit_drift_decay(c: &DMatrix<f64>, grid: &[f64]) -> Result<EnvelopeFit> {
    let rd = linalg::mu_and_defect(c)?;
    let quantity = grid
        .iter()
        .map(|&t| linalg::matrix_exp(c, -t).map(|e| linalg::spectral_norm(&e)))
        .collect::<Result<Vec<_>>>()?;
    let envelope: Vec<f64> = grid.iter().map(|&t| unit_envelope(rd.mu, rd.n, t)).collect();
    EnvelopeFit::from_series(grid, &quantity, &envelope)
}

/// Sample moments from simulated paths, with standard errors.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SdeMoments {
    pub time: f64,
    pub n_paths: usize,
    pub steps: usize,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub mean_stderr: DVector<f64>,
    pub cov_stderr: DMatrix<f64>,
}

const PATHS_PER_STREAM: usize = 4096;

/// Euler–Maruyama for `dX = −C X dt + √(2D) dW` from mixture samples,
/// at a single time.
pub fn sde_oracle(
    sys: &FpSystem,
    mix: &GaussianMixture,
    t: f64,
    n_paths: usize,
    dt: f64,
    seed: u64,
) -> Result<SdeMoments> {
    Ok(sde_oracle_at(sys, mix, &[t], n_paths, dt, seed)?.remove(0))
}

/// Euler–Maruyama moments at several times along the same paths.
///
/// Paths are split into fixed blocks, each drawing from its own stream of a
/// seeded ChaCha generator, so results do not depend on the thread count.
/// Each time in `times` is reached with `ceil(t/dt)` steps of equal size.
pub fn sde_oracle_at(
    sys: &FpSystem,
    mix: &GaussianMixture,
    times: &[f64],
    n_paths: usize,
    dt: f64,
    seed: u64,
) -> Result<Vec<SdeMoments>> {
    let dim = sys.dim();
    if mix.dim() != dim {
        return Err(Error::Dimension {
            expected: dim,
            found: mix.dim(),
        });
    }
    if n_paths < 2 || !(dt > 0.0) {
        return Err(Error::InvalidParameter("need at least two paths and a positive step".into()));
    }
    let mut sorted = times.to_vec();
    if sorted.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) {
        return Err(Error::InvalidParameter("times must be finite and non-negative".into()));
    }
    sorted.sort_by(f64::total_cmp);
    // Step counts are cumulative along one path; each segment uses its own
    // uniform sub-step so every target time is hit exactly.
    let mut segments: Vec<(usize, f64)> = Vec::with_capacity(sorted.len());
    let mut prev = 0.0;
    for &t in &sorted {
        let span = t - prev;
        let steps = if span > 0.0 { (span / dt).ceil() as usize } else { 0 };
        segments.push((steps, if steps > 0 { span / steps as f64 } else { 0.0 }));
        prev = t;
    }

    // Noise factor G with G Gᵀ = 2D, keeping only non-zero directions.
    let eig = SymmetricEigen::new(sys.diffusion() * 2.0);
    let lmax = eig.eigenvalues.amax();
    let cols: Vec<usize> = (0..dim).filter(|&k| eig.eigenvalues[k] > linalg::RANK_RTOL * lmax).collect();
    let noise: Vec<Vec<f64>> = cols
        .iter()
        .map(|&k| (0..dim).map(|i| eig.eigenvectors[(i, k)] * eig.eigenvalues[k].sqrt()).collect())
        .collect();
    let drift: Vec<f64> = (0..dim).flat_map(|i| (0..dim).map(move |j| (i, j))).map(|(i, j)| sys.drift()[(i, j)]).collect();

    let chol: Vec<DMatrix<f64>> = mix
        .components()
        .iter()
        .map(|c| c.cov.clone().cholesky().expect("validated covariance").l())
        .collect();
    let mass = mix.total_mass();
    let cumulative: Vec<f64> = mix
        .components()
        .iter()
        .scan(0.0, |acc, c| {
            *acc += c.weight / mass;
            Some(*acc)
        })
        .collect();

    let blocks = n_paths.div_ceil(PATHS_PER_STREAM);
    let per_block: Vec<Vec<Vec<f64>>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            let count = PATHS_PER_STREAM.min(n_paths - b * PATHS_PER_STREAM);
            let mut snapshots = vec![Vec::with_capacity(count * dim); segments.len()];
            let mut x = vec![0.0; dim];
            let mut next = vec![0.0; dim];
            let mut z = vec![0.0; dim];
            let mut dw = vec![0.0; noise.len()];
            for _ in 0..count {
                let u: f64 = rng.random();
                let k = cumulative.iter().position(|&c| u < c).unwrap_or(cumulative.len() - 1);
                let comp = &mix.components()[k];
                for zi in z.iter_mut() {
                    *zi = rng.sample(StandardNormal);
                }
                for i in 0..dim {
                    x[i] = comp.mean[i] + (0..=i).map(|j| chol[k][(i, j)] * z[j]).sum::<f64>();
                }
                for (seg, &(steps, h)) in segments.iter().enumerate() {
                    let sqrt_h = h.sqrt();
                    for _ in 0..steps {
                        for w in dw.iter_mut() {
                            *w = rng.sample::<f64, _>(StandardNormal) * sqrt_h;
                        }
                        for i in 0..dim {
                            let mut acc = 0.0;
                            for j in 0..dim {
                                acc += drift[i * dim + j] * x[j];
                            }
                            next[i] = x[i] - acc * h;
                        }
                        for (g, w) in noise.iter().zip(&dw) {
                            for i in 0..dim {
                                next[i] += g[i] * w;
                            }
                        }
                        std::mem::swap(&mut x, &mut next);
                    }
                    snapshots[seg].extend_from_slice(&x);
                }
            }
            snapshots
        })
        .collect();

    let mut out: Vec<SdeMoments> = Vec::with_capacity(sorted.len());
    for (seg, &t) in sorted.iter().enumerate() {
        let samples: Vec<&[f64]> = per_block.iter().flat_map(|b| b[seg].chunks_exact(dim)).collect();
        out.push(sample_moments(t, segments[..=seg].iter().map(|s| s.0).sum(), &samples));
    }
    // Restore the caller's order.
    let mut result = Vec::with_capacity(times.len());
    for &t in times {
        result.push(out.iter().find(|m| m.time == t).expect("time present").clone());
    }
    Ok(result)
}

fn sample_moments(time: f64, steps: usize, samples: &[&[f64]]) -> SdeMoments {
    let n = samples.len();
    let dim = samples[0].len();
    let nf = n as f64;
    let mut mean = DVector::zeros(dim);
    for s in samples {
        for i in 0..dim {
            mean[i] += s[i];
        }
    }
    mean /= nf;
    let mut cov = DMatrix::zeros(dim, dim);
    let mut second = DMatrix::zeros(dim, dim);
    for s in samples {
        for i in 0..dim {
            for j in 0..dim {
                let y = (s[i] - mean[i]) * (s[j] - mean[j]);
                cov[(i, j)] += y;
                second[(i, j)] += y * y;
            }
        }
    }
    let products_mean = &cov / nf;
    let cov_stderr = DMatrix::from_fn(dim, dim, |i, j| {
        let m: f64 = products_mean[(i, j)];
        let s: f64 = second[(i, j)];
        ((s / nf - m * m).max(0.0) * nf / (nf - 1.0) / nf).sqrt()
    });
    let cov = cov / (nf - 1.0);
    let mean_stderr = DVector::from_fn(dim, |i, _| (cov[(i, i)] / nf).sqrt());
    SdeMoments {
        time,
        n_paths: n,
        steps,
        mean,
        cov,
        mean_stderr,
        cov_stderr,
    }
}
