//! Analysis toolkit for linear Fokker-Planck equations
//! `∂t f = div(D∇f + Cxf)` with degenerate diffusion and defective drift.
//!
//! The crate validates a pair `(D, C)`, moves it to coordinates where the
//! equilibrium is the standard Gaussian, and then provides exact solution
//! flows (Gaussian mixtures and Hermite coefficient states), entropy and
//! Fisher information functionals, and the explicit hypercontractivity
//! waiting times and bounds.

pub mod entropy;
pub mod error;
pub mod hyper;
pub mod linalg;
pub mod propagation;
pub mod quadrature;
pub mod spectral;
pub mod system;

pub use error::{Error, Result};
pub use nalgebra::{DMatrix, DVector};
