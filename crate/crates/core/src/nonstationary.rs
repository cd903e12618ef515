//! Linear dynamics with an additive exogenous series shared by every
//! individual: `o_{j,t} = s_{j,t} + z_t`, `s_{j,t+1} = M_i s_{j,t} + noise`.
//!
//! The transition matrices and the series are fit jointly by alternating
//! exact minimization of
//!
//! ```text
//! L = sum_i sum_{j in I_i} sum_t |o_{j,t+1} - z_{t+1} - M_i (o_{j,t} - z_t)|^2
//!     + lambda_z |z|^2 + lambda_m sum_i |M_i - I|_F^2 + ridge sum_i |M_i|_F^2
//! ```
//!
//! Given the matrices, `z` solves a block-tridiagonal SPD system; given `z`,
//! each `M_i` is a regularized least-squares fit on `o - z`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{mean_initial_observation, ExperimentDataset, RewardModel};
use crate::error::{Error, Result};
use crate::linalg::{discounted_value, discounted_weights, spectral_norm, spectral_radius, KahanSum, SINGULAR_RCOND};
use crate::stationary::{check_gamma, solve_normal_equations, TransitionModel};

/// Dense systems larger than this switch to the block-tridiagonal solver.
pub const DENSE_SOLVE_LIMIT: usize = 2000;

/// The shared exogenous sequence `z_0..z_T`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExogenousSeries {
    z: Vec<DVector<f64>>,
}

impl ExogenousSeries {
    pub fn new(z: Vec<DVector<f64>>) -> Result<Self> {
        let d = z.first().map_or(0, |v| v.len());
        if z.len() < 2 || d == 0 {
            return Err(Error::Validation("exogenous series needs T >= 1 and d >= 1".into()));
        }
        if z.iter().any(|v| v.len() != d || v.iter().any(|x| !x.is_finite())) {
            return Err(Error::Validation("exogenous series must be finite with uniform dimension".into()));
        }
        Ok(Self { z })
    }

    pub fn zeros(dim: usize, horizon: usize) -> Self {
        Self { z: vec![DVector::zeros(dim); horizon + 1] }
    }

    pub fn steps(&self) -> &[DVector<f64>] {
        &self.z
    }

    pub fn step(&self, t: usize) -> &DVector<f64> {
        &self.z[t]
    }

    pub fn dim(&self) -> usize {
        self.z[0].len()
    }

    pub fn horizon(&self) -> usize {
        self.z.len() - 1
    }

    /// Column vector `(z_0; z_1; ...; z_T)`.
    pub fn stacked(&self) -> DVector<f64> {
        stack(&self.z)
    }

    pub fn from_stacked(v: &DVector<f64>, dim: usize) -> Result<Self> {
        if dim == 0 || v.len() % dim != 0 {
            return Err(Error::Validation(format!("length {} is not a multiple of d={dim}", v.len())));
        }
        Self::new(unstack(v, dim))
    }

    pub fn norm_squared(&self) -> f64 {
        self.z.iter().map(|v| v.norm_squared()).sum()
    }
}

fn stack(blocks: &[DVector<f64>]) -> DVector<f64> {
    let d = blocks.first().map_or(0, |b| b.len());
    DVector::from_iterator(blocks.len() * d, blocks.iter().flat_map(|b| b.iter().copied()))
}

fn unstack(v: &DVector<f64>, dim: usize) -> Vec<DVector<f64>> {
    v.as_slice().chunks(dim).map(DVector::from_column_slice).collect()
}

/// Settings for [`alternate_minimize`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NonstationaryConfig {
    pub gamma: f64,
    /// Weight of `|z|^2`. `None` selects `1e-8 * n * T`.
    pub lambda_z: Option<f64>,
    /// Weight of `|M_i - I|_F^2`, shared by every policy.
    pub lambda_m: f64,
    /// Stop once an iteration lowers the loss by less than this fraction of it.
    pub tol: f64,
    pub max_iters: usize,
    /// Weight of `|M_i|_F^2`; a fallback for rank-deficient Gram matrices.
    pub ridge: f64,
    /// Anderson acceleration depth on the `z` iterate. 0 gives plain alternation.
    /// Extrapolated steps are kept only when they lower the loss.
    pub acceleration: usize,
    /// First transition included in the loss. 0 uses every transition.
    #[doc(hidden)]
    pub t_start: usize,
}

impl Default for NonstationaryConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lambda_z: None,
            lambda_m: 0.0,
            tol: 1e-9,
            max_iters: 200,
            ridge: 0.0,
            acceleration: 5,
            t_start: 0,
        }
    }
}

impl NonstationaryConfig {
    pub fn with_gamma(gamma: f64) -> Self {
        Self { gamma, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        check_gamma(self.gamma)?;
        if !(self.tol > 0.0) {
            return Err(Error::Config(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        for (name, v) in [
            ("lambda_z", self.lambda_z.unwrap_or(0.0)),
            ("lambda_m", self.lambda_m),
            ("ridge", self.ridge),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and nonnegative, got {v}")));
            }
        }
        Ok(())
    }

    /// The default `lambda_z` for this dataset.
    ///
    /// Both `lambda_z |z|^2` and the data term are quadratic in the
    /// observation units, so the weight carries no observation scale.
    pub fn default_lambda_z(dataset: &ExperimentDataset) -> f64 {
        1e-8 * (dataset.len() * dataset.horizon()) as f64
    }

    /// Resolves the regularization weights against `dataset`.
    pub fn objective(&self, dataset: &ExperimentDataset) -> Result<Objective> {
        self.validate()?;
        let objective = Objective {
            lambda_z: self.lambda_z.unwrap_or_else(|| Self::default_lambda_z(dataset)),
            lambda_m: self.lambda_m,
            ridge: self.ridge,
            t_start: self.t_start,
        };
        objective.check(dataset)?;
        Ok(objective)
    }
}

/// Resolved penalty weights of the loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub lambda_z: f64,
    pub lambda_m: f64,
    pub ridge: f64,
    pub t_start: usize,
}

impl Objective {
    /// Pure reconstruction loss over every transition.
    pub fn unregularized() -> Self {
        Self { lambda_z: 0.0, lambda_m: 0.0, ridge: 0.0, t_start: 0 }
    }

    pub fn with_lambda_z(lambda_z: f64) -> Self {
        Self { lambda_z, ..Self::unregularized() }
    }

    fn check(&self, dataset: &ExperimentDataset) -> Result<()> {
        if self.t_start >= dataset.horizon() {
            return Err(Error::Config(format!(
                "t_start {} leaves no transitions for T={}",
                self.t_start,
                dataset.horizon()
            )));
        }
        Ok(())
    }
}

/// Dense `dT x d(T+1)` operator whose block row `t` maps a stacked sequence
/// `x` to `x_{t+1} - M x_t`.
pub fn build_transition_operator(m: &DMatrix<f64>, horizon: usize) -> DMatrix<f64> {
    assert!(m.is_square(), "transition matrix must be square");
    let d = m.nrows();
    let mut a = DMatrix::zeros(d * horizon, d * (horizon + 1));
    for t in 0..horizon {
        a.view_mut((t * d, t * d), (d, d)).copy_from(&(-m));
        a.view_mut((t * d, (t + 1) * d), (d, d)).fill_with_identity();
    }
    a
}

/// Matrix-free application of the transition operator.
pub fn apply_transition_operator(m: &DMatrix<f64>, x: &[DVector<f64>]) -> Vec<DVector<f64>> {
    x.windows(2).map(|w| &w[1] - m * &w[0]).collect()
}

fn check_shapes(matrices: &[DMatrix<f64>], z: &ExogenousSeries, dataset: &ExperimentDataset) -> Result<()> {
    let d = dataset.dim();
    if matrices.len() != dataset.num_policies() {
        return Err(Error::Config(format!(
            "{} transition matrices for {} policies",
            matrices.len(),
            dataset.num_policies()
        )));
    }
    if matrices.iter().any(|m| m.nrows() != d || m.ncols() != d) {
        return Err(Error::Config(format!("transition matrices must be {d}x{d}")));
    }
    if z.dim() != d || z.horizon() != dataset.horizon() {
        return Err(Error::Config(format!(
            "exogenous series is {} steps of dimension {}, data has {} steps of dimension {d}",
            z.horizon() + 1,
            z.dim(),
            dataset.horizon() + 1
        )));
    }
    Ok(())
}

fn penalty(matrices: &[DMatrix<f64>], z: &ExogenousSeries, objective: &Objective) -> f64 {
    let mut acc = KahanSum::default();
    acc.add(objective.lambda_z * z.norm_squared());
    for m in matrices {
        if objective.lambda_m > 0.0 {
            let eye = DMatrix::<f64>::identity(m.nrows(), m.ncols());
            acc.add(objective.lambda_m * (m - eye).norm_squared());
        }
        if objective.ridge > 0.0 {
            acc.add(objective.ridge * m.norm_squared());
        }
    }
    acc.value()
}

/// Reconstruction term of the loss (no penalties).
pub fn data_loss(
    matrices: &[DMatrix<f64>],
    z: &ExogenousSeries,
    dataset: &ExperimentDataset,
    t_start: usize,
) -> Result<f64> {
    check_shapes(matrices, z, dataset)?;
    let zs = z.steps();
    let partial: Vec<f64> = dataset
        .trajectories()
        .par_iter()
        .map(|tr| {
            let m = &matrices[tr.policy_id];
            let mut acc = KahanSum::default();
            for t in t_start..dataset.horizon() {
                let r = (&tr.observations[t + 1] - &zs[t + 1]) - m * (&tr.observations[t] - &zs[t]);
                acc.add(r.norm_squared());
            }
            acc.value()
        })
        .collect();
    let mut acc = KahanSum::default();
    partial.into_iter().for_each(|x| acc.add(x));
    Ok(acc.value())
}

/// Regularized loss, summed transition by transition.
pub fn loss(
    matrices: &[DMatrix<f64>],
    z: &ExogenousSeries,
    dataset: &ExperimentDataset,
    objective: &Objective,
) -> Result<f64> {
    Ok(data_loss(matrices, z, dataset, objective.t_start)? + penalty(matrices, z, objective))
}

/// Regularized loss in operator form, `sum_j |A_i (o_j - z)|^2 + penalties`,
/// built from the dense [`build_transition_operator`].
pub fn loss_operator_form(
    matrices: &[DMatrix<f64>],
    z: &ExogenousSeries,
    dataset: &ExperimentDataset,
    objective: &Objective,
) -> Result<f64> {
    check_shapes(matrices, z, dataset)?;
    let d = dataset.dim();
    let horizon = dataset.horizon();
    let skip = objective.t_start * d;
    let operators: Vec<DMatrix<f64>> = matrices
        .iter()
        .map(|m| build_transition_operator(m, horizon))
        .collect();
    let zs = z.stacked();
    let mut acc = KahanSum::default();
    for tr in dataset.trajectories() {
        let centered = stack(&tr.observations) - &zs;
        let r = &operators[tr.policy_id] * centered;
        acc.add(r.rows(skip, r.len() - skip).norm_squared());
    }
    acc.add(penalty(matrices, z, objective));
    Ok(acc.value())
}

/// Symmetric block-tridiagonal matrix; `upper[t]` is block `(t, t+1)`.
#[derive(Debug, Clone)]
pub struct BlockTridiagonal {
    pub diag: Vec<DMatrix<f64>>,
    pub upper: Vec<DMatrix<f64>>,
}

impl BlockTridiagonal {
    fn zeros(dim: usize, blocks: usize) -> Self {
        Self {
            diag: vec![DMatrix::zeros(dim, dim); blocks],
            upper: vec![DMatrix::zeros(dim, dim); blocks.saturating_sub(1)],
        }
    }

    fn block_dim(&self) -> usize {
        self.diag[0].nrows()
    }

    pub fn size(&self) -> usize {
        self.block_dim() * self.diag.len()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let d = self.block_dim();
        let mut out = DMatrix::zeros(self.size(), self.size());
        for (t, b) in self.diag.iter().enumerate() {
            out.view_mut((t * d, t * d), (d, d)).copy_from(b);
        }
        for (t, u) in self.upper.iter().enumerate() {
            out.view_mut((t * d, (t + 1) * d), (d, d)).copy_from(u);
            out.view_mut(((t + 1) * d, t * d), (d, d)).copy_from(&u.transpose());
        }
        out
    }

    pub fn matvec(&self, x: &DVector<f64>) -> DVector<f64> {
        let d = self.block_dim();
        let mut y = DVector::zeros(x.len());
        for (t, b) in self.diag.iter().enumerate() {
            let xt = x.rows(t * d, d);
            let mut yt = y.rows_mut(t * d, d);
            yt.gemv(1.0, b, &xt, 1.0);
        }
        for (t, u) in self.upper.iter().enumerate() {
            let (xt, xn) = (x.rows(t * d, d), x.rows((t + 1) * d, d));
            y.rows_mut(t * d, d).gemv(1.0, u, &xn, 1.0);
            y.rows_mut((t + 1) * d, d).gemv_tr(1.0, u, &xt, 1.0);
        }
        y
    }

    /// Block Cholesky `H = L L'` with `L` block lower-bidiagonal.
    pub fn cholesky(&self) -> Option<BlockCholesky> {
        let mut chol = Vec::with_capacity(self.diag.len());
        let mut coupling = Vec::with_capacity(self.upper.len());
        let mut pivot = self.diag[0].clone();
        for t in 0..self.diag.len() {
            let l = std::mem::replace(&mut pivot, DMatrix::zeros(0, 0)).cholesky()?.l();
            if t + 1 < self.diag.len() {
                // W_t = L_t^{-1} U_t
                let w = l.solve_lower_triangular(&self.upper[t])?;
                pivot = &self.diag[t + 1] - w.transpose() * &w;
                coupling.push(w);
            }
            chol.push(l);
        }
        Some(BlockCholesky { chol, coupling })
    }
}

#[derive(Debug, Clone)]
pub struct BlockCholesky {
    chol: Vec<DMatrix<f64>>,
    coupling: Vec<DMatrix<f64>>,
}

impl BlockCholesky {
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let d = self.chol[0].nrows();
        let n = self.chol.len();
        let mut y: Vec<DVector<f64>> = Vec::with_capacity(n);
        for t in 0..n {
            let mut rhs = b.rows(t * d, d).into_owned();
            if t > 0 {
                rhs -= self.coupling[t - 1].transpose() * &y[t - 1];
            }
            y.push(self.chol[t].solve_lower_triangular(&rhs).expect("nonsingular factor"));
        }
        let mut x = vec![DVector::zeros(d); n];
        for t in (0..n).rev() {
            let mut rhs = y[t].clone();
            if t + 1 < n {
                rhs -= &self.coupling[t] * &x[t + 1];
            }
            x[t] = self.chol[t].tr_solve_lower_triangular(&rhs).expect("nonsingular factor");
        }
        stack(&x)
    }
}

/// How the exogenous normal system is factorized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExogenousSolver {
    /// Dense Cholesky up to [`DENSE_SOLVE_LIMIT`] unknowns, block otherwise.
    Auto,
    Dense,
    BlockTridiagonal,
}

/// Per-policy group sizes and per-step observation sums.
pub(crate) struct GroupSums {
    sizes: Vec<f64>,
    sums: Vec<Vec<DVector<f64>>>,
}

impl GroupSums {
    pub(crate) fn new(dataset: &ExperimentDataset) -> Self {
        Self {
            sizes: dataset.group_sizes().iter().map(|&n| n as f64).collect(),
            sums: (0..dataset.num_policies()).map(|i| dataset.group_step_sums(i)).collect(),
        }
    }
}

/// `lambda_z I + sum_i n_i A_i' A_i` and `sum_i A_i' A_i sum_{j in I_i} o_j`.
pub(crate) fn exogenous_system(
    matrices: &[DMatrix<f64>],
    groups: &GroupSums,
    lambda_z: f64,
    t_start: usize,
) -> (BlockTridiagonal, DVector<f64>) {
    let d = matrices[0].nrows();
    let steps = groups.sums[0].len();
    let mut h = BlockTridiagonal::zeros(d, steps);
    let mut rhs = vec![DVector::zeros(d); steps];
    let eye = DMatrix::<f64>::identity(d, d);
    for b in &mut h.diag {
        *b += &eye * lambda_z;
    }
    for ((m, &n), sums) in matrices.iter().zip(&groups.sizes).zip(&groups.sums) {
        let mt = m.transpose();
        let mtm = &mt * m;
        for t in t_start..steps - 1 {
            h.diag[t] += &mtm * n;
            h.diag[t + 1] += &eye * n;
            h.upper[t] -= &mt * n;
            let r = &sums[t + 1] - m * &sums[t];
            rhs[t] -= &mt * &r;
            rhs[t + 1] += r;
        }
    }
    (h, stack(&rhs))
}

/// Deterministic, non-degenerate start vector for the condition estimate.
fn probe_vector(n: usize) -> DVector<f64> {
    let v = DVector::from_fn(n, |i, _| ((i as f64 + 1.0) * 0.618_033_988_749_895).fract() - 0.5 + 1e-3);
    v.normalize()
}

/// Estimates `lambda_min / lambda_max` of an SPD operator from its matvec
/// and a factorized solve (power and inverse iteration).
fn estimate_rcond(
    n: usize,
    matvec: impl Fn(&DVector<f64>) -> DVector<f64>,
    solve: impl Fn(&DVector<f64>) -> DVector<f64>,
) -> f64 {
    const ITERS: usize = 60;
    let mut x = probe_vector(n);
    let mut lmax = 0.0;
    for _ in 0..ITERS {
        let y = matvec(&x);
        lmax = x.dot(&y);
        let norm = y.norm();
        if norm == 0.0 {
            return 0.0;
        }
        x = y / norm;
    }
    let mut x = probe_vector(n);
    for _ in 0..ITERS {
        let y = solve(&x);
        let norm = y.norm();
        if !norm.is_finite() || norm == 0.0 {
            return 0.0;
        }
        x = y / norm;
    }
    let lmin = x.dot(&matvec(&x)).max(0.0);
    if lmax > 0.0 {
        lmin / lmax
    } else {
        0.0
    }
}

fn exogenous_singular(rcond: f64) -> Error {
    Error::Singular {
        what: "exogenous normal system".into(),
        rcond,
        hint: "directions shared by every policy's dynamics leave z unidentified; use lambda_z > 0".into(),
        direction: None,
    }
}

/// Solves the exogenous block and also returns the estimated reciprocal
/// condition number of the system.
pub(crate) fn solve_exogenous_system(
    matrices: &[DMatrix<f64>],
    groups: &GroupSums,
    lambda_z: f64,
    t_start: usize,
    solver: ExogenousSolver,
) -> Result<(DVector<f64>, f64)> {
    let (h, rhs) = exogenous_system(matrices, groups, lambda_z, t_start);
    let n = h.size();
    let use_dense = match solver {
        ExogenousSolver::Auto => n <= DENSE_SOLVE_LIMIT,
        ExogenousSolver::Dense => true,
        ExogenousSolver::BlockTridiagonal => false,
    };
    let (z, rcond) = if use_dense {
        let dense = h.to_dense();
        let chol = dense.clone().cholesky().ok_or_else(|| exogenous_singular(0.0))?;
        let rcond = estimate_rcond(n, |x| &dense * x, |x| chol.solve(x));
        (chol.solve(&rhs), rcond)
    } else {
        let chol = h.cholesky().ok_or_else(|| exogenous_singular(0.0))?;
        let rcond = estimate_rcond(n, |x| h.matvec(x), |x| chol.solve(x));
        (chol.solve(&rhs), rcond)
    };
    if !(rcond >= SINGULAR_RCOND) || z.iter().any(|x| !x.is_finite()) {
        return Err(exogenous_singular(rcond));
    }
    Ok((z, rcond))
}

/// Exact minimizer of the loss over `z` with every `M_i` held fixed.
pub fn solve_exogenous(
    matrices: &[DMatrix<f64>],
    dataset: &ExperimentDataset,
    lambda_z: f64,
) -> Result<ExogenousSeries> {
    solve_exogenous_with(matrices, dataset, &Objective::with_lambda_z(lambda_z), ExogenousSolver::Auto)
}

pub fn solve_exogenous_with(
    matrices: &[DMatrix<f64>],
    dataset: &ExperimentDataset,
    objective: &Objective,
    solver: ExogenousSolver,
) -> Result<ExogenousSeries> {
    check_shapes(matrices, &ExogenousSeries::zeros(dataset.dim(), dataset.horizon()), dataset)?;
    if !(objective.lambda_z >= 0.0) {
        return Err(Error::Config("lambda_z must be nonnegative".into()));
    }
    objective.check(dataset)?;
    let groups = GroupSums::new(dataset);
    let (z, _) = solve_exogenous_system(matrices, &groups, objective.lambda_z, objective.t_start, solver)?;
    ExogenousSeries::from_stacked(&z, dataset.dim())
}

/// Gradient of the regularized loss with respect to the stacked `z`.
pub fn exogenous_gradient(
    matrices: &[DMatrix<f64>],
    z: &ExogenousSeries,
    dataset: &ExperimentDataset,
    objective: &Objective,
) -> Result<DVector<f64>> {
    check_shapes(matrices, z, dataset)?;
    let groups = GroupSums::new(dataset);
    let (h, rhs) = exogenous_system(matrices, &groups, objective.lambda_z, objective.t_start);
    Ok((h.matvec(&z.stacked()) - rhs) * 2.0)
}

/// Per-policy Gram and cross moments of `o - z` over the loss's transitions.
fn centered_moments(
    dataset: &ExperimentDataset,
    policy: usize,
    z: &[DVector<f64>],
    t_start: usize,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let d = dataset.dim();
    let mut gram = DMatrix::zeros(d, d);
    let mut cross = DMatrix::zeros(d, d);
    let mut prev = DVector::zeros(d);
    let mut next = DVector::zeros(d);
    for tr in dataset.group(policy) {
        for t in t_start..dataset.horizon() {
            prev.copy_from(&tr.observations[t]);
            prev -= &z[t];
            next.copy_from(&tr.observations[t + 1]);
            next -= &z[t + 1];
            gram.ger(1.0, &prev, &prev, 1.0);
            cross.ger(1.0, &next, &prev, 1.0);
        }
    }
    (gram, cross)
}

/// Exact minimizer of the loss over each `M_i` with `z` held fixed:
/// `M_i = (lambda_m I + C_i)(lambda_m I + ridge I + G_i)^{-1}`.
pub fn solve_transitions(
    z: &ExogenousSeries,
    dataset: &ExperimentDataset,
    lambda_m: f64,
    ridge: f64,
) -> Result<Vec<DMatrix<f64>>> {
    let objective = Objective { lambda_m, ridge, ..Objective::unregularized() };
    Ok(solve_transitions_with(z, dataset, &objective)?.0)
}

/// As [`solve_transitions`], also returning each Gram condition number.
pub fn solve_transitions_with(
    z: &ExogenousSeries,
    dataset: &ExperimentDataset,
    objective: &Objective,
) -> Result<(Vec<DMatrix<f64>>, Vec<f64>)> {
    if z.dim() != dataset.dim() || z.horizon() != dataset.horizon() {
        return Err(Error::Config("exogenous series does not match the dataset shape".into()));
    }
    if !(objective.lambda_m >= 0.0 && objective.ridge >= 0.0) {
        return Err(Error::Config("lambda_m and ridge must be nonnegative".into()));
    }
    objective.check(dataset)?;
    let fits: Vec<(DMatrix<f64>, f64)> = (0..dataset.num_policies())
        .into_par_iter()
        .map(|policy| {
            let (gram, cross) = centered_moments(dataset, policy, z.steps(), objective.t_start);
            solve_normal_equations(&gram, &cross, objective.lambda_m, objective.ridge, policy)
        })
        .collect::<Result<_>>()?;
    Ok(fits.into_iter().unzip())
}

/// Extra numbers reported with a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub lambda_z: f64,
    pub lambda_m: f64,
    pub ridge: f64,
    pub t_start: usize,
    /// Condition number of each policy's final (regularized) Gram matrix.
    pub gram_condition_numbers: Vec<f64>,
    /// Spectral radius of each fitted `M_i` (the convergence check uses `gamma` times this).
    pub spectral_radii: Vec<f64>,
    /// Operator 2-norm of each fitted `M_i`.
    pub spectral_norms: Vec<f64>,
    /// Estimated reciprocal condition number of the final exogenous system.
    pub exogenous_rcond: f64,
    /// `|(I - gamma M_i)^{-T} theta|`: how strongly `v_i` reacts to an error in `z_0`.
    pub z0_sensitivity: Vec<f64>,
    /// Reconstruction loss without penalties at the final iterate.
    pub data_loss: f64,
    /// Size of a loss increase that stopped the iteration, if one occurred.
    /// The offending step is discarded.
    pub rejected_increase: Option<f64>,
    /// `z` is only identified up to sequences every `A_i` annihilates; its
    /// reported value depends on `lambda_z`. The effects do not.
    pub exogenous_regularization_dependent: bool,
}

/// Output of [`alternate_minimize`].
#[derive(Debug, Clone)]
pub struct FitReport {
    pub model: TransitionModel,
    pub exogenous: ExogenousSeries,
    /// Objective after the first transition fit, then after every accepted iteration.
    pub loss_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub values: Vec<f64>,
    /// `v_i - v_0` for `i = 1..k-1`.
    pub effects: Vec<f64>,
    pub diagnostics: FitDiagnostics,
}

/// Increases larger than this fraction of the loss are reported as a stall
/// rather than convergence.
const ROUNDING_SLACK: f64 = 1e-10;

struct Step {
    matrices: Vec<DMatrix<f64>>,
    conds: Vec<f64>,
    stacked: DVector<f64>,
    z: ExogenousSeries,
    rcond: f64,
    value: f64,
}

/// Type-II Anderson extrapolation from `(x_j, g(x_j))` pairs, oldest first.
fn anderson_point(history: &[(DVector<f64>, DVector<f64>)]) -> Option<DVector<f64>> {
    let m = history.len() - 1;
    let n = history[0].0.len();
    let resid = |j: usize| &history[j].1 - &history[j].0;
    let mut df = DMatrix::zeros(n, m);
    let mut dg = DMatrix::zeros(n, m);
    for j in 0..m {
        df.set_column(j, &(resid(j + 1) - resid(j)));
        dg.set_column(j, &(&history[j + 1].1 - &history[j].1));
    }
    let f = resid(m);
    let svd = df.svd(true, true);
    let tol = svd.singular_values.max() * 1e-10;
    let coef = svd.solve(&f, tol).ok()?;
    let x = &history[m].1 - dg * coef;
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Alternates exact transition and exogenous updates from `z = 0`, then
/// evaluates each policy's value and the effects against policy 0.
pub fn alternate_minimize(
    dataset: &ExperimentDataset,
    theta: &RewardModel,
    config: &NonstationaryConfig,
) -> Result<FitReport> {
    theta.check_dim(dataset.dim())?;
    let objective = config.objective(dataset)?;
    let groups = GroupSums::new(dataset);
    let at = |iteration: usize| move |e: Error| Error::AtIteration { iteration, source: Box::new(e) };

    let dim = dataset.dim();
    let zero = ExogenousSeries::zeros(dim, dataset.horizon());
    let (m1, c1) = solve_transitions_with(&zero, dataset, &objective).map_err(at(0))?;
    let mut loss_trace = vec![loss(&m1, &zero, dataset, &objective)?];

    // One alternation from the iterate `x`: M <- argmin L(., x), z <- argmin L(M, .).
    let step = |x: &DVector<f64>, iteration: usize, first: Option<(Vec<DMatrix<f64>>, Vec<f64>)>| -> Result<Step> {
        let (matrices, conds) = match first {
            Some(mc) => mc,
            None => {
                let xz = ExogenousSeries::from_stacked(x, dim)?;
                solve_transitions_with(&xz, dataset, &objective).map_err(at(iteration))?
            }
        };
        let (stacked, rcond) =
            solve_exogenous_system(&matrices, &groups, objective.lambda_z, objective.t_start, ExogenousSolver::Auto)
                .map_err(at(iteration))?;
        let z = ExogenousSeries::from_stacked(&stacked, dim)?;
        let value = loss(&matrices, &z, dataset, &objective)?;
        Ok(Step { matrices, conds, stacked, z, rcond, value })
    };

    let mut current = Step {
        matrices: m1.clone(),
        conds: c1.clone(),
        stacked: zero.stacked(),
        z: zero,
        rcond: f64::NAN,
        value: loss_trace[0],
    };
    let mut history: Vec<(DVector<f64>, DVector<f64>)> = Vec::new();
    let mut converged = false;
    let mut rejected_increase = None;
    let mut iterations = 0;

    for iteration in 1..=config.max_iters {
        let prev = current.value;
        let mut next = None;
        if iteration > 1 && config.acceleration > 0 && history.len() >= 2 {
            if let Some(xa) = anderson_point(&history) {
                let cand = step(&xa, iteration, None)?;
                if cand.value < prev {
                    next = Some((xa, cand));
                } else {
                    history.drain(..history.len() - 1);
                }
            }
        }
        let (new_x, cand) = match next {
            Some(n) => n,
            None => {
                let plain_x = current.stacked.clone();
                let first = (iteration == 1).then(|| (m1.clone(), c1.clone()));
                let cand = step(&plain_x, iteration, first)?;
                (plain_x, cand)
            }
        };
        if cand.value > prev {
            rejected_increase = Some(cand.value - prev);
            converged = cand.value - prev <= ROUNDING_SLACK * prev;
            break;
        }
        history.push((new_x, cand.stacked.clone()));
        if history.len() > config.acceleration + 1 {
            history.remove(0);
        }
        current = cand;
        loss_trace.push(current.value);
        iterations = iteration;
        if prev - current.value <= config.tol * prev {
            converged = true;
            break;
        }
    }
    let Step { matrices, conds, z, rcond: exogenous_rcond, .. } = current;

    let model = TransitionModel::new(matrices, config.gamma)?;
    let mut values = Vec::with_capacity(dataset.num_policies());
    let mut z0_sensitivity = Vec::with_capacity(dataset.num_policies());
    for policy in 0..dataset.num_policies() {
        let attach = |e: Error| match e {
            Error::Divergent { policy, scaled_radius, .. } => Error::Divergent {
                policy,
                scaled_radius,
                fitted: Some(Box::new(model.clone())),
            },
            other => other,
        };
        values.push(value_nonstationary(&model, &z, dataset, theta, policy).map_err(attach)?);
        z0_sensitivity.push(
            discounted_weights(model.matrix(policy), config.gamma, theta.theta(), policy)
                .map_err(attach)?
                .norm(),
        );
    }
    let effects = values[1..].iter().map(|v| v - values[0]).collect();
    let diagnostics = FitDiagnostics {
        lambda_z: objective.lambda_z,
        lambda_m: objective.lambda_m,
        ridge: objective.ridge,
        t_start: objective.t_start,
        gram_condition_numbers: conds,
        spectral_radii: model.matrices().iter().map(spectral_radius).collect(),
        spectral_norms: model.matrices().iter().map(spectral_norm).collect(),
        exogenous_rcond,
        z0_sensitivity,
        data_loss: data_loss(model.matrices(), &z, dataset, objective.t_start)?,
        rejected_increase,
        exogenous_regularization_dependent: true,
    };
    Ok(FitReport {
        model,
        exogenous: z,
        loss_trace,
        iterations,
        converged,
        values,
        effects,
        diagnostics,
    })
}

/// `theta' (I - gamma M_i)^{-1} (mean o_0 of group i - z_0)`.
pub fn value_nonstationary(
    model: &TransitionModel,
    exogenous: &ExogenousSeries,
    dataset: &ExperimentDataset,
    theta: &RewardModel,
    policy: usize,
) -> Result<f64> {
    theta.check_dim(dataset.dim())?;
    if exogenous.dim() != dataset.dim() || model.dim() != dataset.dim() {
        return Err(Error::Config("model, exogenous series and data dimensions differ".into()));
    }
    if policy >= model.num_policies() {
        return Err(Error::Config(format!("policy {policy} out of range")));
    }
    let start = mean_initial_observation(dataset, policy)? - exogenous.step(0);
    discounted_value(model.matrix(policy), model.gamma(), theta.theta(), &start, policy)
}
