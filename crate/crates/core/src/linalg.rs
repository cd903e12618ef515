//! Small dense linear-algebra helpers shared by the estimators.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Systems with a reciprocal condition number below this are rejected.
pub const SINGULAR_RCOND: f64 = 1e-12;

/// Largest eigenvalue modulus of a square matrix.
///
/// Uses the real Schur decomposition, so complex-conjugate pairs are
/// handled without any iteration-count tuning.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    assert!(m.is_square(), "spectral radius of a non-square matrix");
    if m.nrows() == 0 {
        return 0.0;
    }
    m.complex_eigenvalues()
        .iter()
        .map(|ev| ev.norm())
        .fold(0.0, f64::max)
}

/// Operator 2-norm (largest singular value).
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

/// Reciprocal condition number of a symmetric positive semi-definite
/// matrix together with the eigenvector of its smallest eigenvalue.
pub fn symmetric_rcond(a: &DMatrix<f64>) -> (f64, DVector<f64>) {
    let eig = SymmetricEigen::new(a.clone());
    let (mut imin, mut imax) = (0, 0);
    for (i, &v) in eig.eigenvalues.iter().enumerate() {
        if v < eig.eigenvalues[imin] {
            imin = i;
        }
        if v.abs() > eig.eigenvalues[imax].abs() {
            imax = i;
        }
    }
    let lmax = eig.eigenvalues[imax].abs();
    let lmin = eig.eigenvalues[imin].max(0.0);
    let rcond = if lmax == 0.0 { 0.0 } else { lmin / lmax };
    (rcond, eig.eigenvectors.column(imin).into_owned())
}

/// Solves `a x = b` for symmetric positive definite `a` after checking its
/// conditioning. `what` and `hint` name the system in the error.
pub fn solve_spd_checked(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    what: &str,
    hint: &str,
) -> Result<DMatrix<f64>> {
    let (rcond, dir) = symmetric_rcond(a);
    let singular = || Error::Singular {
        what: what.to_string(),
        rcond,
        hint: hint.to_string(),
        direction: Some(dir.iter().copied().collect()),
    };
    if !(rcond >= SINGULAR_RCOND) {
        return Err(singular());
    }
    let chol = a.clone().cholesky().ok_or_else(singular)?;
    Ok(chol.solve(b))
}

/// `theta' (I - gamma M)^{-1} start`, refusing when `rho(gamma M) >= 1`.
///
/// Solves the transposed system `(I - gamma M)' x = theta` by LU with
/// partial pivoting and returns `x' start`.
pub fn discounted_value(
    m: &DMatrix<f64>,
    gamma: f64,
    theta: &DVector<f64>,
    start: &DVector<f64>,
    policy: usize,
) -> Result<f64> {
    let x = discounted_weights(m, gamma, theta, policy)?;
    Ok(x.dot(start))
}

/// `(I - gamma M)^{-T} theta`: the sensitivity of the discounted value to
/// the starting state.
pub fn discounted_weights(
    m: &DMatrix<f64>,
    gamma: f64,
    theta: &DVector<f64>,
    policy: usize,
) -> Result<DVector<f64>> {
    let d = m.nrows();
    let scaled_radius = gamma * spectral_radius(m);
    if !(scaled_radius < 1.0) {
        return Err(Error::Divergent {
            policy,
            scaled_radius,
            fitted: None,
        });
    }
    let system = (DMatrix::identity(d, d) - m * gamma).transpose();
    system.lu().solve(theta).ok_or(Error::Divergent {
        policy,
        scaled_radius,
        fitted: None,
    })
}

/// Compensated (Neumaier) summation.
#[derive(Debug, Default, Clone, Copy)]
pub(crate) struct KahanSum {
    sum: f64,
    carry: f64,
}

impl KahanSum {
    pub(crate) fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub(crate) fn value(&self) -> f64 {
        self.sum + self.carry
    }
}
