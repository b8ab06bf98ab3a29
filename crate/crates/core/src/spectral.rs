//! The invariant subspaces `V_m` spanned by `m`-th derivatives of the
//! standard Gaussian, the matrix of the generator on each of them, and
//! coefficient states evolved exactly level by level.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, CLUSTER_TOL};
use crate::propagation::GaussianMixture;
use crate::quadrature::{gauss_hermite, QuadratureSpec};

/// A multi-index `α ∈ N_0^d`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct MultiIndex(pub Vec<usize>);

impl MultiIndex {
    pub fn order(&self) -> usize {
        self.0.iter().sum()
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// `α! = Π α_i!`
    pub fn factorial(&self) -> f64 {
        self.0.iter().map(|&a| (1..=a).map(|k| k as f64).product::<f64>()).product()
    }

    /// All multi-indices of order `m` in dimension `dim`, graded
    /// lexicographic with the first component descending.
    pub fn level(dim: usize, m: usize) -> Vec<MultiIndex> {
        fn fill(prefix: &mut Vec<usize>, slots: usize, rest: usize, out: &mut Vec<MultiIndex>) {
            if slots == 1 {
                prefix.push(rest);
                out.push(MultiIndex(prefix.clone()));
                prefix.pop();
                return;
            }
            for a in (0..=rest).rev() {
                prefix.push(a);
                fill(prefix, slots - 1, rest - a, out);
                prefix.pop();
            }
        }
        let mut out = Vec::with_capacity(level_size(dim, m));
        if dim == 0 {
            return out;
        }
        fill(&mut Vec::with_capacity(dim), dim, m, &mut out);
        out
    }
}

/// `dim V_m = C(m + d − 1, d − 1)`.
pub fn level_size(dim: usize, m: usize) -> usize {
    if dim == 0 {
        return 0;
    }
    let k = (dim - 1).min(m);
    let mut r: usize = 1;
    for i in 0..k {
        r = r * (m + dim - 1 - i) / (i + 1);
    }
    r
}

/// Matrix of the generator restricted to `V_m`: `L h_α = Σ_β Lm[α, β] h_β`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceRep {
    pub level: usize,
    pub basis: Vec<MultiIndex>,
    pub matrix: DMatrix<f64>,
}

/// Builds `[L]_m` on the orthonormal basis `h_α = ∂^α f_∞ / √(α!)` from
/// `L ∂^α f_∞ = −Σ_{i,j} C_{ji} α_i ∂^{α−e_i+e_j} f_∞`.
pub fn vm_matrix(c: &DMatrix<f64>, m: usize) -> Result<SubspaceRep> {
    let dim = linalg::ensure_square(c)?;
    let basis = MultiIndex::level(dim, m);
    let size = basis.len();
    let mut matrix = DMatrix::zeros(size, size);
    if m > 0 {
        let position: HashMap<&MultiIndex, usize> = basis.iter().enumerate().map(|(k, a)| (a, k)).collect();
        let mut beta = vec![0usize; dim];
        for (row, alpha) in basis.iter().enumerate() {
            for i in 0..dim {
                let ai = alpha.0[i];
                if ai == 0 {
                    continue;
                }
                for j in 0..dim {
                    let entry = if i == j {
                        -c[(i, i)] * ai as f64
                    } else {
                        -c[(j, i)] * ((ai * (alpha.0[j] + 1)) as f64).sqrt()
                    };
                    if entry == 0.0 {
                        continue;
                    }
                    beta.copy_from_slice(&alpha.0);
                    beta[i] -= 1;
                    beta[j] += 1;
                    let col = position[&MultiIndex(beta.clone())];
                    matrix[(row, col)] += entry;
                }
            }
        }
    }
    Ok(SubspaceRep {
        level: m,
        basis,
        matrix,
    })
}

/// The multiset `{−Σ α_i λ_i : |α| = m}` over the eigenvalues of `C`.
pub fn vm_spectrum_reference(c: &DMatrix<f64>, m: usize) -> Result<Vec<Complex64>> {
    let lambda = linalg::eigen_structure(c, CLUSTER_TOL)?.multiset();
    Ok(MultiIndex::level(lambda.len(), m)
        .iter()
        .map(|alpha| -alpha.0.iter().zip(&lambda).map(|(&a, &l)| l * a as f64).sum::<Complex64>())
        .collect())
}

/// Largest distance in a greedy nearest-neighbour matching of two multisets;
/// infinite when the sizes differ.
pub fn multiset_distance(a: &[Complex64], b: &[Complex64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    let mut used = vec![false; b.len()];
    let mut worst: f64 = 0.0;
    for x in a {
        let (k, dist) = b
            .iter()
            .enumerate()
            .filter(|(k, _)| !used[*k])
            .map(|(k, y)| (k, (x - y).norm()))
            .fold((usize::MAX, f64::INFINITY), |acc, v| if v.1 < acc.1 { v } else { acc });
        used[k] = true;
        worst = worst.max(dist);
    }
    worst
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SubspaceDecay {
    /// `2kμ`
    pub rate: f64,
    /// Maximal defect of `[L]_k` on the line `Re λ = −kμ`.
    pub defect: usize,
}

pub fn subspace_decay_exponent(c: &DMatrix<f64>, k: usize) -> Result<SubspaceDecay> {
    if k == 0 {
        return Err(Error::InvalidParameter("subspace level must be at least 1".into()));
    }
    let mu = linalg::mu_and_defect(c)?.mu;
    let line = -(k as f64) * mu;
    let rep = vm_matrix(c, k)?;
    let es = linalg::eigen_structure(&rep.matrix, CLUSTER_TOL)?;
    let defect = es
        .clusters
        .iter()
        .filter(|cl| (cl.value.re - line).abs() <= linalg::real_part_tol(line))
        .map(|cl| cl.defect)
        .max()
        .unwrap_or(0);
    Ok(SubspaceDecay {
        rate: 2.0 * k as f64 * mu,
        defect,
    })
}

/// Probabilists' Hermite polynomials `He_0(x), …, He_n(x)`.
pub fn hermite_values(x: f64, n: usize) -> Vec<f64> {
    let mut he = Vec::with_capacity(n + 1);
    he.push(1.0);
    if n >= 1 {
        he.push(x);
    }
    for k in 2..=n {
        let v = x * he[k - 1] - (k - 1) as f64 * he[k - 2];
        he.push(v);
    }
    he
}

/// Coefficients `a_α`, `|α| ≤ m_max`, of `f = Σ a_α h_α` in the orthonormal
/// basis of `L²(f_∞^{−1})` with `f_∞` the standard Gaussian. Level 0 holds
/// the mass.
#[derive(Debug, Clone, PartialEq)]
pub struct HermiteState {
    dim: usize,
    levels: Vec<DVector<f64>>,
}

impl HermiteState {
    pub fn zeros(dim: usize, m_max: usize) -> Self {
        let levels = (0..=m_max).map(|m| DVector::zeros(level_size(dim, m))).collect();
        HermiteState { dim, levels }
    }

    /// The equilibrium itself: unit mass, nothing else.
    pub fn equilibrium(dim: usize, m_max: usize) -> Self {
        let mut s = HermiteState::zeros(dim, m_max);
        s.levels[0][0] = 1.0;
        s
    }

    /// Unit mass plus the given coefficients.
    pub fn from_coeffs(dim: usize, m_max: usize, coeffs: &[(MultiIndex, f64)]) -> Result<Self> {
        let mut s = HermiteState::equilibrium(dim, m_max);
        for (alpha, value) in coeffs {
            s.set_coeff(alpha, *value)?;
        }
        Ok(s)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn m_max(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn mass(&self) -> f64 {
        self.levels[0][0]
    }

    pub fn level(&self, m: usize) -> &DVector<f64> {
        &self.levels[m]
    }

    fn position(&self, alpha: &MultiIndex) -> Result<(usize, usize)> {
        if alpha.dim() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                found: alpha.dim(),
            });
        }
        let m = alpha.order();
        if m > self.m_max() {
            return Err(Error::InvalidParameter(format!(
                "multi-index of order {m} exceeds truncation level {}",
                self.m_max()
            )));
        }
        let k = MultiIndex::level(self.dim, m).iter().position(|b| b == alpha).unwrap();
        Ok((m, k))
    }

    pub fn coeff(&self, alpha: &MultiIndex) -> Result<f64> {
        let (m, k) = self.position(alpha)?;
        Ok(self.levels[m][k])
    }

    pub fn set_coeff(&mut self, alpha: &MultiIndex, value: f64) -> Result<()> {
        let (m, k) = self.position(alpha)?;
        self.levels[m][k] = value;
        Ok(())
    }

    /// `Σ_{|α|=m} a_α²`
    pub fn shell_norm_sq(&self, m: usize) -> f64 {
        self.levels.get(m).map_or(0.0, |v| v.norm_squared())
    }

    /// `e_2 = ½‖f − f_∞‖²`, i.e. `½((a_0 − 1)² + Σ_{|α|≥1} a_α²)`.
    pub fn e2(&self) -> f64 {
        let deviation = self.mass() - 1.0;
        0.5 * (deviation * deviation + (1..self.levels.len()).map(|m| self.shell_norm_sq(m)).sum::<f64>())
    }

    /// Lowest level `m ≥ 1` carrying a non-zero coefficient.
    pub fn lowest_active_level(&self) -> Option<usize> {
        (1..self.levels.len()).find(|&m| self.levels[m].iter().any(|&v| v != 0.0))
    }

    /// `f / f_∞` at `x`, a polynomial of degree `m_max`.
    pub fn ratio(&self, x: &DVector<f64>) -> f64 {
        self.ratio_with_gradient(x, false).0
    }

    /// `f / f_∞` and its gradient.
    pub fn ratio_and_gradient(&self, x: &DVector<f64>) -> (f64, DVector<f64>) {
        self.ratio_with_gradient(x, true)
    }

    fn ratio_with_gradient(&self, x: &DVector<f64>, want_grad: bool) -> (f64, DVector<f64>) {
        let m_max = self.m_max();
        let he: Vec<Vec<f64>> = x.iter().map(|&xi| hermite_values(xi, m_max)).collect();
        let mut value = 0.0;
        let mut grad = DVector::zeros(if want_grad { self.dim } else { 0 });
        for (m, coeffs) in self.levels.iter().enumerate() {
            for (alpha, &a) in MultiIndex::level(self.dim, m).iter().zip(coeffs.iter()) {
                if a == 0.0 {
                    continue;
                }
                let scale = a / alpha.factorial().sqrt();
                let term: f64 = alpha.0.iter().enumerate().map(|(i, &ai)| he[i][ai]).product();
                value += scale * term;
                if want_grad {
                    for i in 0..self.dim {
                        let ai = alpha.0[i];
                        if ai == 0 {
                            continue;
                        }
                        let partial: f64 = alpha
                            .0
                            .iter()
                            .enumerate()
                            .map(|(j, &aj)| if j == i { ai as f64 * he[j][aj - 1] } else { he[j][aj] })
                            .product();
                        grad[i] += scale * partial;
                    }
                }
            }
        }
        (value, grad)
    }
}

/// Per-level generators `[L]_mᵀ` of the coefficient flow `ȧ = [L]ᵀ a`.
#[derive(Debug, Clone)]
pub struct HermiteFlow {
    generators: Vec<DMatrix<f64>>,
}

impl HermiteFlow {
    pub fn new(c: &DMatrix<f64>, m_max: usize) -> Result<Self> {
        let generators = (0..=m_max)
            .map(|m| vm_matrix(c, m).map(|rep| rep.matrix.transpose()))
            .collect::<Result<_>>()?;
        Ok(HermiteFlow { generators })
    }

    pub fn evolve(&self, state: &HermiteState, t: f64) -> Result<HermiteState> {
        if !(t >= 0.0) {
            return Err(Error::InvalidParameter(format!("time must be non-negative, got {t}")));
        }
        if state.m_max() + 1 > self.generators.len() || self.generators[0].nrows() != 1 {
            return Err(Error::InvalidParameter("flow truncation below state truncation".into()));
        }
        if self.generators.get(1).is_some_and(|g| g.nrows() != state.dim) {
            return Err(Error::Dimension {
                expected: self.generators[1].nrows(),
                found: state.dim,
            });
        }
        let mut out = state.clone();
        for m in 1..=state.m_max() {
            if state.levels[m].iter().all(|&v| v == 0.0) {
                continue;
            }
            out.levels[m] = linalg::matrix_exp(&self.generators[m], t)? * &state.levels[m];
        }
        Ok(out)
    }
}

/// `a^{(m)}(t) = exp([L]_mᵀ t) a^{(m)}(0)` for every level; mass unchanged.
pub fn evolve_hermite(state: &HermiteState, c: &DMatrix<f64>, t: f64) -> Result<HermiteState> {
    HermiteFlow::new(c, state.m_max())?.evolve(state, t)
}

/// Hermite moments `a_α = E[He_α(X)] / √(α!)` of a mixture, `|α| ≤ m_max`.
///
/// Each component is integrated on its own affine image of a tensor
/// Gauss–Hermite grid, which is exact for these polynomial moments.
pub fn project_gaussian(mix: &GaussianMixture, m_max: usize, quad: &QuadratureSpec) -> Result<HermiteState> {
    let dim = mix.dim();
    let order = match *quad {
        QuadratureSpec::GaussHermite { order } => {
            if 2 * order < m_max + 1 {
                return Err(Error::QuadratureTooLow { order, level: m_max });
            }
            order.min(m_max / 2 + 1)
        }
        QuadratureSpec::MonteCarlo { .. } => m_max / 2 + 1,
    };
    let (nodes, weights) = gauss_hermite(order);
    let total = order.pow(dim as u32);
    let bases: Vec<Vec<MultiIndex>> = (0..=m_max).map(|m| MultiIndex::level(dim, m)).collect();
    let mut state = HermiteState::zeros(dim, m_max);

    for comp in mix.components() {
        let l = comp
            .cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::InvalidParameter("component covariance not positive definite".into()))?
            .l();
        let mut idx = vec![0usize; dim];
        for _ in 0..total {
            let z = DVector::from_fn(dim, |i, _| nodes[idx[i]]);
            let w: f64 = comp.weight * idx.iter().map(|&k| weights[k]).product::<f64>();
            let x = &comp.mean + &l * z;
            let he: Vec<Vec<f64>> = x.iter().map(|&xi| hermite_values(xi, m_max)).collect();
            for (m, basis) in bases.iter().enumerate() {
                for (k, alpha) in basis.iter().enumerate() {
                    let v: f64 = alpha.0.iter().enumerate().map(|(i, &ai)| he[i][ai]).product();
                    state.levels[m][k] += w * v;
                }
            }
            for slot in idx.iter_mut() {
                *slot += 1;
                if *slot < order {
                    break;
                }
                *slot = 0;
            }
        }
    }
    for (m, basis) in bases.iter().enumerate() {
        for (k, alpha) in basis.iter().enumerate() {
            state.levels[m][k] /= alpha.factorial().sqrt();
        }
    }
    Ok(state)
}

/// Membership in the region `Γ_κ`: `Re z ≤ ½(1 − tr B)` and
/// `|Re z − (1 − ½ tr B)| ≤ c |z − (1 − ½ tr B)|^{1/(2κ+1)}`.
pub fn gamma_kappa_contains(b: &DMatrix<f64>, kappa: usize, c: f64, z: Complex64) -> bool {
    let tr = b.trace();
    let vertex = 1.0 - 0.5 * tr;
    if z.re > 0.5 * (1.0 - tr) {
        return false;
    }
    let exponent = 1.0 / (2 * kappa + 1) as f64;
    (z.re - vertex).abs() <= c * (z - vertex).norm().powf(exponent)
}

/// `c(1 + t^{2n}) e^{−2μt}`, and `c e^{−2μt}` when `n = 0`.
pub fn decay_envelope(mu: f64, n: usize, c: f64, t: f64) -> f64 {
    let poly = if n == 0 { 1.0 } else { 1.0 + t.powi(2 * n as i32) };
    c * poly * (-2.0 * mu * t).exp()
}
