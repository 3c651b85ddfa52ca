//! Time- and parameter-dependent norm families.
//!
//! Norms are represented as weighted inner products ||x||_{t,w} = sqrt(x' W x)
//! with W symmetric positive definite. This subclass is closed under every
//! operation we need and makes operator norms exactly computable as largest
//! generalized singular values.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::omega::Omega;

type WeightFn = dyn Fn(i64, &Omega) -> DMatrix<f64> + Send + Sync;
type EllFn = dyn Fn(i64, &Omega) -> f64 + Send + Sync;

#[derive(Clone)]
pub struct NormFamily {
    dim: usize,
    weight: Arc<WeightFn>,
    ell: Arc<EllFn>,
}

impl NormFamily {
    pub fn new(
        dim: usize,
        weight: impl Fn(i64, &Omega) -> DMatrix<f64> + Send + Sync + 'static,
        ell: impl Fn(i64, &Omega) -> f64 + Send + Sync + 'static,
    ) -> Self {
        NormFamily {
            dim,
            weight: Arc::new(weight),
            ell: Arc::new(ell),
        }
    }

    /// Constant Euclidean norm at every (t, omega).
    pub fn euclidean(dim: usize) -> Self {
        NormFamily::new(dim, move |_, _| DMatrix::identity(dim, dim), |_, _| 1.0)
    }

    /// Constant diagonal weight matrix.
    pub fn diagonal(entries: Vec<f64>) -> Self {
        let dim = entries.len();
        // equivalence constant: sqrt of extreme eigenvalues of W
        let ell = entries
            .iter()
            .fold(1.0f64, |acc, &w| acc.max(w.sqrt()).max(1.0 / w.sqrt()));
        let diag = DMatrix::from_diagonal(&DVector::from_vec(entries));
        NormFamily::new(dim, move |_, _| diag.clone(), move |_, _| ell)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weight(&self, t: i64, omega: &Omega) -> DMatrix<f64> {
        (self.weight)(t, omega)
    }

    pub fn ell(&self, t: i64, omega: &Omega) -> f64 {
        (self.ell)(t, omega)
    }

    /// ||x||_{t,omega}
    pub fn norm(&self, t: i64, omega: &Omega, x: &DVector<f64>) -> f64 {
        let w = self.weight(t, omega);
        (x.dot(&(&w * x))).max(0.0).sqrt()
    }

    /// Cholesky factor L with W = L L'.
    pub fn chol(&self, t: i64, omega: &Omega) -> Result<Cholesky<f64, nalgebra::Dyn>> {
        Cholesky::new(self.weight(t, omega)).ok_or(Error::NotSpd { t })
    }
}

/// Operator norm of M as a map from (X, ||.||_{s,omega}) to (X, ||.||_{t,omega}).
///
/// With W_s = Ls Ls' and W_t = Lt Lt' this is the largest singular value of
/// Lt' M Ls^{-T}: for y = Ls' x we have ||M x||_t = ||Lt' M Ls^{-T} y||_2 and
/// ||x||_s = ||y||_2.
pub fn operator_norm(
    m: &DMatrix<f64>,
    s: i64,
    t: i64,
    omega: &Omega,
    norms: &NormFamily,
) -> Result<f64> {
    let ls = norms.chol(s, omega)?;
    let lt = norms.chol(t, omega)?;
    // Z = M Ls^{-T}  <=>  Ls Z' = M'
    let zt = ls
        .l()
        .solve_lower_triangular(&m.transpose())
        .ok_or(Error::NotSpd { t: s })?;
    let core = lt.l().transpose() * zt.transpose();
    let svd = core.svd(false, false);
    Ok(svd.singular_values.max())
}
