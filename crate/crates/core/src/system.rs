//! Problem setup: validation of the diffusion/drift pair, the Gaussian
//! equilibrium, and the change of variables to `K = I`, `C_s = D` diagonal.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, RANK_RTOL};

const EIGENSPACE_RTOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionA {
    pub holds: bool,
    pub rank: usize,
    pub min_eigenvalue: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionB {
    pub holds: bool,
    /// `(re, im)` pairs.
    pub spectrum: Vec<(f64, f64)>,
    pub min_real_part: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionC {
    pub holds: bool,
    pub kappa: Option<usize>,
    pub ranks: Vec<usize>,
}

/// Independent verdicts on conditions (A), (B), (C).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub dim: usize,
    pub condition_a: ConditionA,
    pub condition_b: ConditionB,
    pub condition_c: ConditionC,
    pub overall: bool,
}

impl ValidationReport {
    fn failure_summary(&self) -> String {
        let mut parts = Vec::new();
        if !self.condition_a.holds {
            parts.push("(A) D is not symmetric positive semidefinite with rank >= 1");
        }
        if !self.condition_b.holds {
            parts.push("(B) C is not positively stable");
        }
        if !self.condition_c.holds {
            parts.push("(C) Ker D contains a non-trivial C^T-invariant subspace");
        }
        parts.join("; ")
    }
}

/// Checks (A) `D` symmetric PSD with rank ≥ 1, (B) `C` positively stable and
/// (C) the Kalman rank condition `rank[Q½, CQ½, …, C^{d−1}Q½] = d`, `Q = 2D`.
pub fn validate(d: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<ValidationReport> {
    let dim = linalg::ensure_same_dim(d, c)?;

    let psd = linalg::psd_check(d, RANK_RTOL)?;
    let condition_a = ConditionA {
        holds: psd.is_symmetric_psd && psd.rank >= 1,
        rank: psd.rank,
        min_eigenvalue: psd.min_eigenvalue,
    };

    let eig = linalg::eigenvalues(c)?;
    let min_real_part = eig.iter().map(|l| l.re).fold(f64::INFINITY, f64::min);
    let condition_b = ConditionB {
        holds: min_real_part > 0.0,
        spectrum: eig.iter().map(|l| (l.re, l.im)).collect(),
        min_real_part,
    };

    // A C^T-invariant subspace of Ker D contains an eigenvector w of C^T with
    // D w = 0, i.e. a left eigenvector of C annihilating Q½. That is exactly
    // a rank drop of the Krylov matrix generated by C (sign irrelevant).
    let qhalf = linalg::psd_sqrt(&(d * 2.0))?;
    let kalman = linalg::kalman_kappa(&qhalf, &(-c))?;
    let condition_c = ConditionC {
        holds: kalman.kappa.is_some(),
        kappa: kalman.kappa,
        ranks: kalman.ranks,
    };

    let overall = condition_a.holds && condition_b.holds && condition_c.holds;
    Ok(ValidationReport {
        dim,
        condition_a,
        condition_b,
        condition_c,
        overall,
    })
}

/// A validated pair `(D, C)`. Only constructible through [`FpSystem::new`].
#[derive(Debug, Clone, PartialEq)]
pub struct FpSystem {
    diffusion: DMatrix<f64>,
    drift: DMatrix<f64>,
    rank: usize,
    kappa: usize,
    mu: f64,
    defect: usize,
}

impl FpSystem {
    pub fn new(diffusion: DMatrix<f64>, drift: DMatrix<f64>) -> Result<Self> {
        let report = validate(&diffusion, &drift)?;
        if !report.overall {
            return Err(Error::Validation(report.failure_summary()));
        }
        let rd = linalg::mu_and_defect(&drift)?;
        Ok(FpSystem {
            rank: report.condition_a.rank,
            kappa: report.condition_c.kappa.unwrap_or_default(),
            diffusion,
            drift,
            mu: rd.mu,
            defect: rd.n,
        })
    }

    pub fn from_rows(diffusion: &[Vec<f64>], drift: &[Vec<f64>]) -> Result<Self> {
        FpSystem::new(matrix_from_rows(diffusion)?, matrix_from_rows(drift)?)
    }

    pub fn dim(&self) -> usize {
        self.drift.nrows()
    }

    pub fn diffusion(&self) -> &DMatrix<f64> {
        &self.diffusion
    }

    pub fn drift(&self) -> &DMatrix<f64> {
        &self.drift
    }

    /// Rank of the diffusion matrix.
    pub fn rank(&self) -> usize {
        self.rank
    }

    /// Smallest Krylov index reaching full rank.
    pub fn kappa(&self) -> usize {
        self.kappa
    }

    /// `μ = min Re λ(C)`.
    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// Maximal defect among eigenvalues of `C` with real part `μ`.
    pub fn defect(&self) -> usize {
        self.defect
    }
}

/// Builds a matrix from row-major nested vectors.
pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if nrows == 0 || ncols == 0 {
        return Err(Error::NotSquare {
            rows: nrows,
            cols: ncols,
        });
    }
    if let Some(bad) = rows.iter().find(|r| r.len() != ncols) {
        return Err(Error::Dimension {
            expected: ncols,
            found: bad.len(),
        });
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Equilibrium {
    /// Covariance, the solution of `2D = CK + KCᵀ`.
    pub covariance: DMatrix<f64>,
    /// `(2π)^{−d/2} det(K)^{−1/2}`.
    pub normalization: f64,
}

impl Equilibrium {
    pub fn density(&self, x: &DVector<f64>) -> f64 {
        let kinv = self
            .covariance
            .clone()
            .try_inverse()
            .expect("equilibrium covariance is positive definite");
        self.normalization * (-0.5 * (x.transpose() * kinv * x)[(0, 0)]).exp()
    }
}

pub fn equilibrium(sys: &FpSystem) -> Result<Equilibrium> {
    let k = linalg::solve_lyapunov(sys.drift(), sys.diffusion())?;
    let det = k.determinant();
    if det <= 0.0 {
        return Err(Error::Validation("equilibrium covariance is not positive definite".into()));
    }
    let dim = sys.dim() as f64;
    let normalization = (2.0 * std::f64::consts::PI).powf(-0.5 * dim) / det.sqrt();
    Ok(Equilibrium {
        covariance: k,
        normalization,
    })
}

/// A system in coordinates `x' = A x` where `K = I` and `C_s = D` is
/// diagonal with positive entries first, in descending order.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedSystem {
    base: FpSystem,
    transform: DMatrix<f64>,
    inverse_transform: DMatrix<f64>,
}

impl NormalizedSystem {
    pub fn system(&self) -> &FpSystem {
        &self.base
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    pub fn diffusion(&self) -> &DMatrix<f64> {
        self.base.diffusion()
    }

    pub fn drift(&self) -> &DMatrix<f64> {
        self.base.drift()
    }

    pub fn mu(&self) -> f64 {
        self.base.mu()
    }

    pub fn defect(&self) -> usize {
        self.base.defect()
    }

    /// The applied change of variables `A` (new = A · old).
    pub fn transform(&self) -> &DMatrix<f64> {
        &self.transform
    }

    pub fn inverse_transform(&self) -> &DMatrix<f64> {
        &self.inverse_transform
    }
}

/// Moves `sys` to coordinates with standard Gaussian equilibrium.
///
/// `A = Uᵀ K^{−1/2}` where the columns of `U` are eigenvectors of
/// `K^{−1/2} D K^{−1/2}`; `D' = A D Aᵀ` (congruence), `C' = A C A^{−1}`
/// (similarity).
pub fn normalize(sys: &FpSystem) -> Result<NormalizedSystem> {
    let eq = equilibrium(sys)?;
    let k_inv_sqrt = linalg::spd_inv_sqrt(&eq.covariance)?;
    let m = &k_inv_sqrt * sys.diffusion() * &k_inv_sqrt;
    let m = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(m);
    let dim = sys.dim();

    let lmax = eig.eigenvalues.amax();
    let cleaned: Vec<f64> = eig
        .eigenvalues
        .iter()
        .map(|&l| if l <= RANK_RTOL * lmax { 0.0 } else { l })
        .collect();
    let mut by_value: Vec<usize> = (0..dim).collect();
    by_value.sort_by(|&a, &b| cleaned[b].total_cmp(&cleaned[a]));

    // Repeated eigenvalues leave the eigenbasis free up to rotation; fix it
    // from the eigenspace projector so the result depends on the subspace only.
    let group_tol = EIGENSPACE_RTOL * lmax.max(f64::MIN_POSITIVE);
    let mut columns: Vec<(f64, DVector<f64>)> = Vec::with_capacity(dim);
    let mut start = 0;
    while start < dim {
        let mut end = start + 1;
        while end < dim && cleaned[by_value[end - 1]] - cleaned[by_value[end]] <= group_tol {
            end += 1;
        }
        let mut proj = DMatrix::<f64>::zeros(dim, dim);
        for &k in &by_value[start..end] {
            let v = eig.eigenvectors.column(k);
            proj += &v * v.transpose();
        }
        let mut picked: Vec<(usize, f64, DVector<f64>)> = Vec::new();
        for &k in &by_value[start..end] {
            let (j, _) = (0..dim).fold((0, -1.0), |acc, j| {
                let n = proj.column(j).norm();
                if n > acc.1 + 1e-12 { (j, n) } else { acc }
            });
            let mut v = proj.column(j).into_owned();
            v /= v.norm();
            proj -= &v * v.transpose();
            let (imax, _) = v
                .iter()
                .enumerate()
                .fold((0, 0.0), |acc, (i, &x)| if x.abs() > acc.1 + 1e-12 { (i, x.abs()) } else { acc });
            if v[imax] < 0.0 {
                v.neg_mut();
            }
            picked.push((j, cleaned[k], v));
        }
        picked.sort_by_key(|p| p.0);
        columns.extend(picked.into_iter().map(|(_, l, v)| (l, v)));
        start = end;
    }

    let u = DMatrix::from_fn(dim, dim, |i, j| columns[j].1[i]);
    let a = u.transpose() * &k_inv_sqrt;
    let a_inv = a
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Validation("normalizing transform is singular".into()))?;

    let d_new = DMatrix::from_diagonal(&DVector::from_fn(dim, |i, _| columns[i].0));
    let mut c_new = &a * sys.drift() * &a_inv;
    // Project so that the symmetric part equals D' exactly.
    let sym_err = (&c_new + c_new.transpose()) * 0.5 - &d_new;
    c_new -= sym_err;

    let base = FpSystem::new(d_new, c_new)?;
    Ok(NormalizedSystem {
        base,
        transform: a,
        inverse_transform: a_inv,
    })
}

/// The system with drift `Cᵀ`, generator of the adjoint in `L²(f_∞^{-1})`.
pub fn adjoint_system(sys: &NormalizedSystem) -> Result<NormalizedSystem> {
    let base = FpSystem::new(sys.diffusion().clone(), sys.drift().transpose())?;
    Ok(NormalizedSystem {
        base,
        transform: sys.transform.clone(),
        inverse_transform: sys.inverse_transform.clone(),
    })
}
