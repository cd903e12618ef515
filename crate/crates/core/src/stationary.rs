//! Baseline estimator assuming stationary linear dynamics `o_{t+1} = M_i o_t + noise`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::dataset::{mean_initial_observation, ExperimentDataset, RewardModel};
use crate::error::{Error, Result};
use crate::linalg::{discounted_value, symmetric_rcond, KahanSum, SINGULAR_RCOND};

pub use crate::linalg::{spectral_norm, spectral_radius};

/// Per-policy transition matrices and the discount factor.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionModel {
    matrices: Vec<DMatrix<f64>>,
    gamma: f64,
}

impl TransitionModel {
    pub fn new(matrices: Vec<DMatrix<f64>>, gamma: f64) -> Result<Self> {
        check_gamma(gamma)?;
        let d = matrices.first().map_or(0, |m| m.nrows());
        if d == 0 {
            return Err(Error::Validation("transition model needs at least one nonempty matrix".into()));
        }
        for (i, m) in matrices.iter().enumerate() {
            if m.nrows() != d || m.ncols() != d {
                return Err(Error::Validation(format!(
                    "matrix {i} is {}x{}, expected {d}x{d}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            if m.iter().any(|x| !x.is_finite()) {
                return Err(Error::Validation(format!("matrix {i} has non-finite entries")));
            }
        }
        Ok(Self { matrices, gamma })
    }

    pub fn matrices(&self) -> &[DMatrix<f64>] {
        &self.matrices
    }

    pub fn matrix(&self, policy: usize) -> &DMatrix<f64> {
        &self.matrices[policy]
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn dim(&self) -> usize {
        self.matrices[0].nrows()
    }

    pub fn num_policies(&self) -> usize {
        self.matrices.len()
    }
}

pub(crate) fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::Config(format!("gamma must lie in (0, 1), got {gamma}")));
    }
    Ok(())
}

/// OLS transition fit with its conditioning and residual diagnostics.
#[derive(Debug, Clone)]
pub struct StationaryFit {
    pub model: TransitionModel,
    /// Condition number of each policy's (ridged) Gram matrix.
    pub condition_numbers: Vec<f64>,
    /// Per-coordinate RMS of the one-step prediction residuals.
    pub residual_rms: Vec<f64>,
}

/// Solves `M (lambda_m I + ridge I + gram) = lambda_m I + cross` for `M`.
///
/// `lambda_m` shrinks toward the identity and `ridge` toward zero. Returns
/// the matrix and the condition number of the regularized Gram.
pub(crate) fn solve_normal_equations(
    gram: &DMatrix<f64>,
    cross: &DMatrix<f64>,
    lambda_m: f64,
    ridge: f64,
    policy: usize,
) -> Result<(DMatrix<f64>, f64)> {
    let d = gram.nrows();
    let eye = DMatrix::<f64>::identity(d, d);
    let lhs = gram + &eye * (lambda_m + ridge);
    let rhs = cross + &eye * lambda_m;
    let (rcond, dir) = symmetric_rcond(&lhs);
    let singular = || Error::Singular {
        what: format!("transition Gram matrix of policy {policy}"),
        rcond,
        hint: "too few independent transitions; use ridge > 0".into(),
        direction: Some(dir.iter().copied().collect()),
    };
    if !(rcond >= SINGULAR_RCOND) {
        return Err(singular());
    }
    let chol = lhs.cholesky().ok_or_else(singular)?;
    // lhs is symmetric, so M' = lhs^{-1} rhs'
    let m = chol.solve(&rhs.transpose()).transpose();
    Ok((m, 1.0 / rcond))
}

/// Least-squares transition matrices from every observed transition
/// `t = 0..T-1`, one matrix per policy.
pub fn fit_stationary(dataset: &ExperimentDataset, gamma: f64, ridge: f64) -> Result<StationaryFit> {
    check_gamma(gamma)?;
    if !(ridge >= 0.0) {
        return Err(Error::Config(format!("ridge must be nonnegative, got {ridge}")));
    }
    let d = dataset.dim();
    let per_policy: Vec<(DMatrix<f64>, f64, f64)> = (0..dataset.num_policies())
        .into_par_iter()
        .map(|policy| {
            let mut gram = DMatrix::zeros(d, d);
            let mut cross = DMatrix::zeros(d, d);
            for tr in dataset.group(policy) {
                for pair in tr.observations.windows(2) {
                    gram.ger(1.0, &pair[0], &pair[0], 1.0);
                    cross.ger(1.0, &pair[1], &pair[0], 1.0);
                }
            }
            let (m, cond) = solve_normal_equations(&gram, &cross, 0.0, ridge, policy)?;
            let rms = residual_rms(dataset, policy, &m, None);
            Ok((m, cond, rms))
        })
        .collect::<Result<_>>()?;

    let mut matrices = Vec::with_capacity(per_policy.len());
    let mut condition_numbers = Vec::with_capacity(per_policy.len());
    let mut residuals = Vec::with_capacity(per_policy.len());
    for (m, c, r) in per_policy {
        matrices.push(m);
        condition_numbers.push(c);
        residuals.push(r);
    }
    Ok(StationaryFit {
        model: TransitionModel::new(matrices, gamma)?,
        condition_numbers,
        residual_rms: residuals,
    })
}

/// RMS of `(o_{t+1} - z_{t+1}) - M (o_t - z_t)` over one group.
pub(crate) fn residual_rms(
    dataset: &ExperimentDataset,
    policy: usize,
    m: &DMatrix<f64>,
    z: Option<&[DVector<f64>]>,
) -> f64 {
    let mut sse = KahanSum::default();
    let mut count = 0usize;
    for tr in dataset.group(policy) {
        for (t, pair) in tr.observations.windows(2).enumerate() {
            let r = match z {
                Some(z) => (&pair[1] - &z[t + 1]) - m * (&pair[0] - &z[t]),
                None => &pair[1] - m * &pair[0],
            };
            sse.add(r.norm_squared());
            count += r.len();
        }
    }
    (sse.value() / count.max(1) as f64).sqrt()
}

/// `theta' (I - gamma M_i)^{-1} o0_mean`.
pub fn value_stationary(
    model: &TransitionModel,
    policy: usize,
    theta: &RewardModel,
    o0_mean: &DVector<f64>,
) -> Result<f64> {
    if policy >= model.num_policies() {
        return Err(Error::Config(format!("policy {policy} out of range")));
    }
    theta.check_dim(model.dim())?;
    discounted_value(model.matrix(policy), model.gamma(), theta.theta(), o0_mean, policy)
}

/// `v_i - v_0` for every treatment `i = 1..k-1` under the stationary model.
pub fn estimate_effects_stationary(
    dataset: &ExperimentDataset,
    theta: &RewardModel,
    gamma: f64,
    ridge: f64,
) -> Result<Vec<f64>> {
    theta.check_dim(dataset.dim())?;
    let fit = fit_stationary(dataset, gamma, ridge)?;
    let values = (0..dataset.num_policies())
        .map(|i| {
            let o0 = mean_initial_observation(dataset, i)?;
            value_stationary(&fit.model, i, theta, &o0)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(values[1..].iter().map(|v| v - values[0]).collect())
}
