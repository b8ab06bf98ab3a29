//! Dense matrix kernel: definiteness and rank tests, the matrix exponential,
//! eigenstructure with defects, controllability ranks and Lyapunov solvers.
//!
//! Every rank decision uses a singular-value threshold of
//! [`RANK_RTOL`] times the largest singular value of the matrix in question.

use nalgebra::{Complex, DMatrix, DVector, Schur, SymmetricEigen, SVD};
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};

/// Relative singular-value threshold for numerical rank and nullity.
pub const RANK_RTOL: f64 = 1e-8;

/// Base absolute tolerance for grouping eigenvalues into clusters.
pub const CLUSTER_TOL: f64 = 1e-7;

pub(crate) fn ensure_square(m: &DMatrix<f64>) -> Result<usize> {
    if m.nrows() != m.ncols() || m.nrows() == 0 {
        return Err(Error::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    Ok(m.nrows())
}

pub(crate) fn ensure_same_dim(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<usize> {
    let d = ensure_square(a)?;
    let e = ensure_square(b)?;
    if d != e {
        return Err(Error::Dimension {
            expected: d,
            found: e,
        });
    }
    Ok(d)
}

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .fold(0.0, |acc: f64, &s| acc.max(s))
}

/// Numerical rank using the relative threshold `rtol * σ_max`.
pub fn numerical_rank(m: &DMatrix<f64>, rtol: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let smax = sv.iter().fold(0.0, |acc: f64, &s| acc.max(s));
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rtol * smax).count()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PsdCheck {
    pub is_symmetric_psd: bool,
    pub rank: usize,
    pub min_eigenvalue: f64,
}

/// Symmetry, positive semidefiniteness and rank of `m`, all relative to
/// `tol * max|eigenvalue|`.
pub fn psd_check(m: &DMatrix<f64>, tol: f64) -> Result<PsdCheck> {
    ensure_square(m)?;
    let sym = (m + m.transpose()) * 0.5;
    let asym = (m - m.transpose()).amax();
    let eig = SymmetricEigen::new(sym).eigenvalues;
    let scale = eig.amax();
    let min_eigenvalue = eig.min();
    let rank = if scale == 0.0 {
        0
    } else {
        eig.iter().filter(|&&l| l > tol * scale).count()
    };
    let symmetric = asym <= tol * scale.max(m.amax());
    Ok(PsdCheck {
        is_symmetric_psd: symmetric && min_eigenvalue >= -tol * scale,
        rank,
        min_eigenvalue,
    })
}

/// `e^{M t}`.
///
/// Backed by nalgebra's Padé scaling-and-squaring implementation.
pub fn matrix_exp(m: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>> {
    let d = ensure_square(m)?;
    if !t.is_finite() {
        return Err(Error::NonFinite);
    }
    if t == 0.0 {
        return Ok(DMatrix::identity(d, d));
    }
    Ok((m * t).exp())
}

/// Symmetric PSD square root; eigenvalues below `RANK_RTOL * λ_max` are
/// clamped to zero.
pub fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    ensure_square(m)?;
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let lmax = eig.eigenvalues.amax();
    let roots = eig.eigenvalues.map(|l| {
        if l <= RANK_RTOL * lmax {
            0.0
        } else {
            l.sqrt()
        }
    });
    let v = &eig.eigenvectors;
    Ok(v * DMatrix::from_diagonal(&roots) * v.transpose())
}

/// Inverse symmetric square root of a symmetric positive definite matrix.
pub fn spd_inv_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    ensure_square(m)?;
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    if eig.eigenvalues.iter().any(|&l| l <= 0.0) {
        return Err(Error::InvalidParameter(
            "matrix is not positive definite".into(),
        ));
    }
    let inv_roots = eig.eigenvalues.map(|l| 1.0 / l.sqrt());
    let v = &eig.eigenvectors;
    Ok(v * DMatrix::from_diagonal(&inv_roots) * v.transpose())
}

pub fn eigenvalues(m: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    ensure_square(m)?;
    Ok(m.complex_eigenvalues().iter().copied().collect())
}

fn check_positively_stable(c: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    let eig = eigenvalues(c)?;
    let min_re = eig.iter().map(|l| l.re).fold(f64::INFINITY, f64::min);
    if min_re <= 0.0 {
        return Err(Error::NotPositivelyStable {
            min_real_part: min_re,
        });
    }
    Ok(eig)
}

/// Solves `C K + K Cᵀ = 2 D` by a real Schur (Bartels–Stewart) sweep.
pub fn solve_lyapunov(c: &DMatrix<f64>, d: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = ensure_same_dim(c, d)?;
    check_positively_stable(c)?;

    let (q, t) = Schur::new(c.clone()).unpack();
    let f = q.transpose() * (d * 2.0) * &q;

    // Diagonal block boundaries of the quasi-triangular factor.
    let mut blocks = Vec::new();
    let mut j = 0;
    while j < n {
        let two = j + 1 < n
            && t[(j + 1, j)].abs() > f64::EPSILON * (t[(j, j)].abs() + t[(j + 1, j + 1)].abs());
        let size = if two { 2 } else { 1 };
        blocks.push((j, size));
        j += size;
    }

    let mut y = DMatrix::<f64>::zeros(n, n);
    for &(j0, s) in blocks.iter().rev() {
        // Right-hand side with contributions of already solved columns removed.
        let mut r = f.columns(j0, s).into_owned();
        for jj in 0..s {
            for k in (j0 + s)..n {
                let coeff = t[(j0 + jj, k)];
                if coeff != 0.0 {
                    let col = y.column(k) * coeff;
                    let mut target = r.column_mut(jj);
                    target -= col;
                }
            }
        }
        // T Y_J + Y_J S = R with S = T[J,J]ᵀ, as an (n s)-dimensional system.
        let tjj = t.view((j0, j0), (s, s)).transpose();
        let eye_s = DMatrix::<f64>::identity(s, s);
        let eye_n = DMatrix::<f64>::identity(n, n);
        let sys = eye_s.kronecker(&t) + tjj.transpose().kronecker(&eye_n);
        let rhs = DVector::from_column_slice(r.as_slice());
        let sol = sys
            .lu()
            .solve(&rhs)
            .ok_or(Error::SingularKroneckerSum { min_pair_sum: 0.0 })?;
        for jj in 0..s {
            y.column_mut(j0 + jj)
                .copy_from(&sol.rows(jj * n, n).into_owned());
        }
    }
    let k = &q * y * q.transpose();
    Ok((&k + k.transpose()) * 0.5)
}

/// Solves `C X + X Cᵀ = RHS` through the `d²×d²` Kronecker-sum system.
pub fn kron_sum_solve(c: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = ensure_same_dim(c, rhs)?;
    let eig = eigenvalues(c)?;
    let mut min_pair_sum = f64::INFINITY;
    for a in &eig {
        for b in &eig {
            min_pair_sum = min_pair_sum.min((a + b).norm());
        }
    }
    let scale = c.amax().max(f64::MIN_POSITIVE);
    if min_pair_sum <= 1e3 * f64::EPSILON * scale {
        return Err(Error::SingularKroneckerSum { min_pair_sum });
    }
    let eye = DMatrix::<f64>::identity(n, n);
    let ksum = eye.kronecker(c) + c.kronecker(&eye);
    let b = DVector::from_column_slice(rhs.as_slice());
    let x = ksum
        .lu()
        .solve(&b)
        .ok_or(Error::SingularKroneckerSum { min_pair_sum })?;
    Ok(DMatrix::from_column_slice(n, n, x.as_slice()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EigenCluster {
    /// Cluster centroid.
    #[serde(serialize_with = "serialize_complex")]
    pub value: Complex64,
    pub algebraic: usize,
    pub geometric: usize,
    pub defect: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EigenStructure {
    pub dim: usize,
    pub clusters: Vec<EigenCluster>,
    /// Non-fatal diagnostics (near-coincident clusters, clamped multiplicities).
    pub warnings: Vec<String>,
}

fn serialize_complex<S: serde::Serializer>(
    z: &Complex64,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeTuple;
    let mut t = s.serialize_tuple(2)?;
    t.serialize_element(&z.re)?;
    t.serialize_element(&z.im)?;
    t.end()
}

impl EigenStructure {
    pub fn max_defect(&self) -> usize {
        self.clusters.iter().map(|c| c.defect).max().unwrap_or(0)
    }

    /// Eigenvalues with algebraic multiplicity, as a flat list.
    pub fn multiset(&self) -> Vec<Complex64> {
        self.clusters
            .iter()
            .flat_map(|c| std::iter::repeat_n(c.value, c.algebraic))
            .collect()
    }
}

/// Radius within which `k` computed eigenvalues of a `k`-fold Jordan block
/// scatter under backward-stable rounding, `O((u‖M‖)^{1/k})`.
fn jordan_spread(k: usize, scale: f64) -> f64 {
    if k <= 1 {
        0.0
    } else {
        2.0 * (64.0 * f64::EPSILON * scale).powf(1.0 / k as f64)
    }
}

/// Eigenvalues grouped into clusters with algebraic, geometric multiplicity
/// and defect.
///
/// A group of `k` computed eigenvalues is merged when its radius around the
/// centroid is at most `tol` plus the rounding spread of a `k`-fold Jordan
/// block. Geometric multiplicity is the nullity of `M − λI`.
pub fn eigen_structure(m: &DMatrix<f64>, tol: f64) -> Result<EigenStructure> {
    let d = ensure_square(m)?;
    let vals = eigenvalues(m)?;
    let scale = m.norm().max(1.0);

    let mut remaining: Vec<usize> = (0..d).collect();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    while let Some(&seed) = remaining.first() {
        let anchor = vals[seed];
        remaining.sort_by(|&a, &b| {
            (vals[a] - anchor)
                .norm()
                .total_cmp(&(vals[b] - anchor).norm())
                .then(a.cmp(&b))
        });
        let mut take = 1;
        for k in (2..=remaining.len()).rev() {
            let centroid = remaining[..k].iter().map(|&i| vals[i]).sum::<Complex64>() / k as f64;
            let radius = remaining[..k]
                .iter()
                .map(|&i| (vals[i] - centroid).norm())
                .fold(0.0, f64::max);
            if radius <= tol + jordan_spread(k, scale) {
                take = k;
                break;
            }
        }
        groups.push(remaining.drain(..take).collect());
    }

    let mut warnings = Vec::new();
    let mut clusters = Vec::with_capacity(groups.len());
    let mc = m.map(|v| Complex::new(v, 0.0));
    let norm_m = spectral_norm(m);
    for g in &groups {
        let k = g.len();
        let mut value = g.iter().map(|&i| vals[i]).sum::<Complex64>() / k as f64;
        if value.im.abs() <= tol + jordan_spread(k, scale) {
            value.im = 0.0;
        }
        let shifted = &mc - DMatrix::<Complex64>::identity(d, d) * value;
        let sv = SVD::new(shifted, false, false).singular_values;
        let smax = sv.iter().fold(0.0, |a: f64, &s| a.max(s)).max(norm_m);
        let nullity = sv.iter().filter(|&&s| s <= RANK_RTOL * smax).count();
        let geometric = nullity.clamp(1, k);
        if nullity != geometric {
            warnings.push(format!(
                "nullity {nullity} at λ = {:.6}{:+.6}i clamped to {geometric}",
                value.re, value.im
            ));
        }
        clusters.push(EigenCluster {
            value,
            algebraic: k,
            geometric,
            defect: k - geometric,
        });
    }
    clusters.sort_by(|a, b| {
        a.value
            .re
            .total_cmp(&b.value.re)
            .then(a.value.im.total_cmp(&b.value.im))
    });
    for i in 0..clusters.len() {
        for j in (i + 1)..clusters.len() {
            let (a, b) = (&clusters[i], &clusters[j]);
            let gap = (a.value - b.value).norm();
            let limit = 10.0 * (tol + jordan_spread(a.algebraic + b.algebraic, scale));
            if gap <= limit {
                warnings.push(format!(
                    "ill-conditioned spectrum: clusters at {:.6}{:+.6}i and {:.6}{:+.6}i are {gap:.2e} apart",
                    a.value.re, a.value.im, b.value.re, b.value.im
                ));
            }
        }
    }
    Ok(EigenStructure {
        dim: d,
        clusters,
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateAndDefect {
    /// Smallest real part of the spectrum.
    pub mu: f64,
    /// Largest defect among eigenvalues with real part `mu`.
    pub n: usize,
}

/// Tolerance on real parts when selecting the eigenvalues that attain `mu`.
pub(crate) fn real_part_tol(mu: f64) -> f64 {
    100.0 * CLUSTER_TOL * mu.abs().max(1.0)
}

/// Spectral gap `μ = min Re λ(C)` and the maximal defect `n` on that line.
pub fn mu_and_defect(c: &DMatrix<f64>) -> Result<RateAndDefect> {
    let es = eigen_structure(c, CLUSTER_TOL)?;
    let mu = es
        .clusters
        .iter()
        .map(|cl| cl.value.re)
        .fold(f64::INFINITY, f64::min);
    if mu <= 0.0 {
        return Err(Error::NotPositivelyStable { min_real_part: mu });
    }
    let n = es
        .clusters
        .iter()
        .filter(|cl| (cl.value.re - mu).abs() <= real_part_tol(mu))
        .map(|cl| cl.defect)
        .max()
        .unwrap_or(0);
    Ok(RateAndDefect { mu, n })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KalmanRank {
    /// Smallest `κ` with `rank[Q½, BQ½, …, B^κ Q½] = d`.
    pub kappa: Option<usize>,
    /// Rank after each augmentation, `κ = 0, …, d−1`.
    pub ranks: Vec<usize>,
}

pub fn kalman_kappa(qhalf: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<KalmanRank> {
    let d = ensure_same_dim(qhalf, b)?;
    let mut block = qhalf.clone();
    let mut stacked = qhalf.clone();
    let mut ranks = Vec::with_capacity(d);
    let mut kappa = None;
    for k in 0..d {
        if k > 0 {
            block = b * &block;
            let cols = stacked.ncols();
            stacked = stacked.insert_columns(cols, d, 0.0);
            stacked.columns_mut(cols, d).copy_from(&block);
        }
        let r = numerical_rank(&stacked, RANK_RTOL);
        ranks.push(r);
        if r == d && kappa.is_none() {
            kappa = Some(k);
        }
    }
    Ok(KalmanRank { kappa, ranks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn m(rows: &[&[f64]]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j])
    }

    fn kinetic_c() -> DMatrix<f64> {
        m(&[&[0.0, -1.0], &[1.0, 2.0]])
    }

    #[test]
    fn psd_check_examples() {
        let a = psd_check(&DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0])), 1e-8).unwrap();
        assert!(a.is_symmetric_psd);
        assert_eq!(a.rank, 1);
        let b = psd_check(&DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 2.0])), 1e-8).unwrap();
        assert!(b.is_symmetric_psd);
        assert_eq!(b.rank, 1);
        let c = psd_check(&m(&[&[1.0, 2.0], &[2.0, 1.0]]), 1e-8).unwrap();
        assert!(!c.is_symmetric_psd);
        let asym = psd_check(&m(&[&[1.0, 1.0], &[0.0, 1.0]]), 1e-8).unwrap();
        assert!(!asym.is_symmetric_psd);
    }

    #[test]
    fn psd_check_rejects_non_square() {
        let err = psd_check(&DMatrix::zeros(2, 3), 1e-8).unwrap_err();
        assert_eq!(err, Error::NotSquare { rows: 2, cols: 3 });
    }

    #[test]
    fn exp_at_zero_is_identity() {
        let e = matrix_exp(&kinetic_c(), 0.0).unwrap();
        assert_eq!(e, DMatrix::identity(2, 2));
    }

    #[test]
    fn exp_of_diagonal() {
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, -2.0]));
        let e = matrix_exp(&d, 1.0).unwrap();
        assert_relative_eq!(e[(0, 0)], (-1.0f64).exp(), max_relative = 1e-14);
        assert_relative_eq!(e[(1, 1)], (-2.0f64).exp(), max_relative = 1e-14);
        assert_eq!(e[(0, 1)], 0.0);
    }

    #[test]
    fn exp_of_jordan_block_matches_closed_form() {
        let j = m(&[&[1.0, 1.0], &[0.0, 1.0]]);
        for &t in &[0.1, 0.7, 1.0, 2.5, 4.0] {
            let e = matrix_exp(&j, t).unwrap();
            let et = f64::exp(t);
            let expect = m(&[&[et, t * et], &[0.0, et]]);
            assert!((&e - &expect).norm() <= 1e-12 * expect.norm(), "t={t}");
        }
    }

    #[test]
    fn exp_rejects_non_finite_time() {
        assert_eq!(matrix_exp(&kinetic_c(), f64::NAN).unwrap_err(), Error::NonFinite);
    }

    #[test]
    fn lyapunov_examples() {
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 2.0]));
        let k = solve_lyapunov(&kinetic_c(), &d).unwrap();
        assert!((k - DMatrix::<f64>::identity(2, 2)).norm() < 1e-12);

        let eye = DMatrix::<f64>::identity(2, 2);
        let k = solve_lyapunov(&eye, &eye).unwrap();
        assert!((k - &eye).norm() < 1e-14);

        let c = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0]));
        let k = solve_lyapunov(&c, &c).unwrap();
        assert!((k - eye).norm() < 1e-14);
    }

    #[test]
    fn lyapunov_rejects_unstable_drift() {
        let c = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -0.5]));
        let err = solve_lyapunov(&c, &DMatrix::identity(2, 2)).unwrap_err();
        assert!(matches!(err, Error::NotPositivelyStable { .. }));
    }

    #[test]
    fn kron_sum_examples() {
        let eye = DMatrix::<f64>::identity(3, 3);
        let x = kron_sum_solve(&eye, &(&eye * 2.0)).unwrap();
        assert!((x - &eye).norm() < 1e-14);

        let rhs = DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 4.0]));
        let x = kron_sum_solve(&kinetic_c(), &rhs).unwrap();
        assert!((x - DMatrix::<f64>::identity(2, 2)).norm() < 1e-12);

        let x = kron_sum_solve(&kinetic_c(), &DMatrix::zeros(2, 2)).unwrap();
        assert_eq!(x.norm(), 0.0);
    }

    #[test]
    fn kron_sum_detects_singularity() {
        // Eigenvalues ±1 give λ1 + λ2 = 0.
        let c = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0]));
        let err = kron_sum_solve(&c, &DMatrix::identity(2, 2)).unwrap_err();
        assert!(matches!(err, Error::SingularKroneckerSum { .. }));
    }

    fn random_stable(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
        let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-2.0..2.0));
        let min_re = eigenvalues(&a)
            .unwrap()
            .iter()
            .map(|l| l.re)
            .fold(f64::INFINITY, f64::min);
        let shift = if min_re < 0.2 { 0.2 - min_re } else { 0.0 };
        a + DMatrix::identity(d, d) * shift
    }

    #[test]
    fn lyapunov_and_kron_sum_agree_on_random_stable_drifts() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for case in 0..100 {
            let d = 2 + case % 3;
            let c = random_stable(&mut rng, d);
            let cs = (&c + c.transpose()) * 0.5;
            let k1 = solve_lyapunov(&c, &cs).unwrap();
            let k2 = kron_sum_solve(&c, &(&cs * 2.0)).unwrap();
            assert!((&k1 - &k2).norm() <= 1e-9 * k2.norm().max(1.0), "case {case}");
            let resid = &c * &k1 + &k1 * c.transpose() - &cs * 2.0;
            assert!(resid.norm() <= 1e-10 * (c.norm() * k1.norm() + cs.norm()));
        }
    }

    #[test]
    fn lyapunov_handles_complex_pairs() {
        let c = m(&[&[1.0, 3.5], &[-3.5, 1.0]]);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![0.3, 2.0]));
        let k = solve_lyapunov(&c, &d).unwrap();
        let resid = &c * &k + &k * c.transpose() - &d * 2.0;
        assert!(resid.norm() < 1e-12);
    }

    #[test]
    fn eigen_structure_examples() {
        let es = eigen_structure(&kinetic_c(), CLUSTER_TOL).unwrap();
        assert_eq!(es.clusters.len(), 1);
        let cl = &es.clusters[0];
        assert!((cl.value.re - 1.0).abs() < 1e-9 && cl.value.im == 0.0);
        assert_eq!((cl.algebraic, cl.geometric, cl.defect), (2, 1, 1));

        let es = eigen_structure(&DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 5.0])), CLUSTER_TOL).unwrap();
        assert_eq!(es.clusters.len(), 2);
        assert!(es.clusters.iter().all(|c| c.defect == 0));

        // -1 ± 7/2 i
        let b = m(&[&[-1.0, 3.5], &[-3.5, -1.0]]);
        let es = eigen_structure(&b, CLUSTER_TOL).unwrap();
        assert_eq!(es.clusters.len(), 2);
        for cl in &es.clusters {
            assert!((cl.value.re + 1.0).abs() < 1e-12);
            assert!((cl.value.im.abs() - 3.5).abs() < 1e-12);
            assert_eq!(cl.defect, 0);
        }
    }

    #[test]
    fn eigen_structure_detects_larger_jordan_blocks() {
        // Similarity transform of a 4x4 Jordan block at 2 plus a simple 5.
        let mut j = DMatrix::<f64>::zeros(5, 5);
        for i in 0..4 {
            j[(i, i)] = 2.0;
            if i < 3 {
                j[(i, i + 1)] = 1.0;
            }
        }
        j[(4, 4)] = 5.0;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = DMatrix::from_fn(5, 5, |i, k| if i == k { 2.0 } else { rng.random_range(-0.5..0.5) });
        let a = &s * j * s.clone().try_inverse().unwrap();
        let es = eigen_structure(&a, CLUSTER_TOL).unwrap();
        assert_eq!(es.clusters.len(), 2);
        assert_eq!((es.clusters[0].algebraic, es.clusters[0].defect), (4, 3));
        assert_eq!((es.clusters[1].algebraic, es.clusters[1].defect), (1, 0));
    }

    #[test]
    fn semisimple_repeated_eigenvalue_has_no_defect() {
        let es = eigen_structure(&(DMatrix::<f64>::identity(3, 3) * 2.0), CLUSTER_TOL).unwrap();
        assert_eq!(es.clusters.len(), 1);
        assert_eq!((es.clusters[0].algebraic, es.clusters[0].geometric), (3, 3));
    }

    #[test]
    fn close_clusters_raise_a_warning() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1.0 + 2e-6]));
        let es = eigen_structure(&a, CLUSTER_TOL).unwrap();
        assert_eq!(es.clusters.len(), 2);
        assert!(es.warnings.iter().any(|w| w.contains("ill-conditioned")));
    }

    #[test]
    fn mu_and_defect_examples() {
        let r = mu_and_defect(&kinetic_c()).unwrap();
        assert!((r.mu - 1.0).abs() < 1e-9);
        assert_eq!(r.n, 1);
        let r = mu_and_defect(&DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0]))).unwrap();
        assert_eq!((r.mu, r.n), (1.0, 0));
        let r = mu_and_defect(&m(&[&[1.0, 3.5], &[-3.5, 1.0]])).unwrap();
        assert!((r.mu - 1.0).abs() < 1e-12);
        assert_eq!(r.n, 0);
        let err = mu_and_defect(&DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -2.0]))).unwrap_err();
        assert!(matches!(err, Error::NotPositivelyStable { .. }));
    }

    #[test]
    fn kalman_examples() {
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 2.0]));
        let qhalf = psd_sqrt(&(d * 2.0)).unwrap();
        let b = -kinetic_c().transpose();
        let k = kalman_kappa(&qhalf, &b).unwrap();
        assert_eq!(k.kappa, Some(1));
        assert_eq!(k.ranks, vec![1, 2]);

        let k = kalman_kappa(&DMatrix::identity(3, 3), &DMatrix::from_element(3, 3, 0.7)).unwrap();
        assert_eq!(k.kappa, Some(0));
        assert_eq!(k.ranks, vec![3, 3, 3]);

        let k = kalman_kappa(&DMatrix::zeros(2, 2), &kinetic_c()).unwrap();
        assert_eq!(k.kappa, None);
        assert_eq!(k.ranks, vec![0, 0]);
    }

    #[test]
    fn psd_sqrt_squares_back() {
        let a = m(&[&[2.0, 1.0], &[1.0, 2.0]]);
        let r = psd_sqrt(&a).unwrap();
        assert!((&r * &r - a).norm() < 1e-14);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn exp_semigroup(entries in proptest::collection::vec(-1.5f64..1.5, 9), s in 0.0f64..5.0, t in 0.0f64..5.0) {
                let a = DMatrix::from_vec(3, 3, entries);
                // Shift so the product stays O(1).
                let min_re = eigenvalues(&a).unwrap().iter().map(|l| l.re).fold(f64::INFINITY, f64::min);
                let a = a - DMatrix::identity(3, 3) * min_re.max(0.0);
                let lhs = matrix_exp(&a, s + t).unwrap();
                let rhs = matrix_exp(&a, s).unwrap() * matrix_exp(&a, t).unwrap();
                prop_assert!((&lhs - &rhs).norm() <= 1e-10 * lhs.norm().max(1.0));
            }

            #[test]
            fn multiplicities_sum_to_dimension(entries in proptest::collection::vec(-3.0f64..3.0, 16)) {
                let a = DMatrix::from_vec(4, 4, entries);
                let es = eigen_structure(&a, CLUSTER_TOL).unwrap();
                let total: usize = es.clusters.iter().map(|c| c.algebraic).sum();
                prop_assert_eq!(total, 4);
                for c in &es.clusters {
                    prop_assert!(c.geometric >= 1 && c.geometric <= c.algebraic);
                    prop_assert_eq!(c.defect, c.algebraic - c.geometric);
                }
            }

            #[test]
            fn kalman_ranks_non_decreasing(q in proptest::collection::vec(-1.0f64..1.0, 9), b in proptest::collection::vec(-1.0f64..1.0, 9), zero_col in 0usize..3) {
                let mut qm = DMatrix::from_vec(3, 3, q);
                qm.column_mut(zero_col).fill(0.0);
                let k = kalman_kappa(&qm, &DMatrix::from_vec(3, 3, b)).unwrap();
                prop_assert!(k.ranks.windows(2).all(|w| w[0] <= w[1]));
                if let Some(kap) = k.kappa {
                    prop_assert!(k.ranks[kap..].iter().all(|&r| r == 3));
                }
            }
        }
    }
}
