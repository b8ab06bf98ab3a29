//! Gauss–Hermite and Monte Carlo rules for integrals against Gaussian weights.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum QuadratureSpec {
    /// Tensor Gauss–Hermite rule with `order` nodes per axis.
    GaussHermite { order: usize },
    /// Seeded Monte Carlo with `samples` standard normal draws.
    MonteCarlo { samples: usize, seed: u64 },
}

impl QuadratureSpec {
    /// Order 60 per axis up to d = 2, 30 for d = 3, Monte Carlo beyond.
    pub fn default_for(dim: usize) -> Self {
        match dim {
            0..=2 => QuadratureSpec::GaussHermite { order: 60 },
            3 => QuadratureSpec::GaussHermite { order: 30 },
            _ => QuadratureSpec::MonteCarlo {
                samples: 200_000,
                seed: 0x5eed,
            },
        }
    }

    pub fn node_count(&self, dim: usize) -> usize {
        match *self {
            QuadratureSpec::GaussHermite { order } => order.pow(dim as u32),
            QuadratureSpec::MonteCarlo { samples, .. } => samples,
        }
    }
}

/// Nodes and weights of the `order`-point rule for the standard normal
/// measure; weights sum to one.
pub fn gauss_hermite(order: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(order >= 1, "Gauss–Hermite order must be positive");
    // Golub–Welsch on the Jacobi matrix of the probabilists' polynomials.
    let jacobi = DMatrix::from_fn(order, order, |i, j| {
        if i + 1 == j || j + 1 == i {
            (i.max(j) as f64).sqrt()
        } else {
            0.0
        }
    });
    let mut nodes: Vec<f64> = SymmetricEigen::new(jacobi).eigenvalues.iter().copied().collect();
    nodes.sort_by(f64::total_cmp);

    // Newton polish on the orthonormal recurrence, then Christoffel weights.
    let eval = |x: f64| {
        let (mut p_prev, mut p) = (0.0, 1.0);
        let mut sum_sq = 1.0;
        for k in 0..order {
            let next = (x * p - (k as f64).sqrt() * p_prev) / ((k + 1) as f64).sqrt();
            p_prev = p;
            p = next;
            if k + 1 < order {
                sum_sq += p * p;
            }
        }
        // p = p_n(x), p_prev = p_{n-1}(x), p_n' = sqrt(n) p_{n-1}
        (p, (order as f64).sqrt() * p_prev, sum_sq)
    };
    let mut weights = Vec::with_capacity(order);
    for x in nodes.iter_mut() {
        for _ in 0..3 {
            let (p, dp, _) = eval(*x);
            if dp != 0.0 {
                *x -= p / dp;
            }
        }
        weights.push(1.0 / eval(*x).2);
    }
    (nodes, weights)
}

/// Quadrature nodes in `R^d` with Lebesgue-measure weights, built from a
/// Gaussian reference `N(center, cov)`.
#[derive(Debug, Clone)]
pub struct NodeSet {
    pub dim: usize,
    pub points: Vec<DVector<f64>>,
    /// `log` of the weight turning `Σ w_i F(x_i)` into `∫ F dx`.
    pub log_weights: Vec<f64>,
}

impl NodeSet {
    pub fn gaussian(spec: &QuadratureSpec, center: &DVector<f64>, cov: &DMatrix<f64>) -> Result<Self> {
        let dim = center.len();
        let chol = cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::InvalidParameter("reference covariance not positive definite".into()))?;
        let l = chol.l();
        let log_det_half: f64 = l.diagonal().iter().map(|v| v.ln()).sum();
        let log_norm = 0.5 * dim as f64 * (2.0 * std::f64::consts::PI).ln() + log_det_half;

        let (zs, log_w): (Vec<DVector<f64>>, Vec<f64>) = match *spec {
            QuadratureSpec::GaussHermite { order } => {
                if order == 0 {
                    return Err(Error::InvalidParameter("quadrature order must be positive".into()));
                }
                let (x, w) = gauss_hermite(order);
                let total = order.pow(dim as u32);
                let mut zs = Vec::with_capacity(total);
                let mut lw = Vec::with_capacity(total);
                let mut idx = vec![0usize; dim];
                for _ in 0..total {
                    zs.push(DVector::from_fn(dim, |i, _| x[idx[i]]));
                    lw.push(idx.iter().map(|&k| w[k].ln()).sum());
                    for slot in idx.iter_mut() {
                        *slot += 1;
                        if *slot < order {
                            break;
                        }
                        *slot = 0;
                    }
                }
                (zs, lw)
            }
            QuadratureSpec::MonteCarlo { samples, seed } => {
                if samples == 0 {
                    return Err(Error::InvalidParameter("Monte Carlo sample count must be positive".into()));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let zs = (0..samples)
                    .map(|_| DVector::from_fn(dim, |_, _| StandardNormal.sample(&mut rng)))
                    .collect();
                (zs, vec![-(samples as f64).ln(); samples])
            }
        };

        let points = zs.iter().map(|z| center + &l * z).collect();
        let log_weights = zs
            .iter()
            .zip(log_w)
            .map(|(z, lw)| lw + 0.5 * z.norm_squared() + log_norm)
            .collect();
        Ok(NodeSet {
            dim,
            points,
            log_weights,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}
