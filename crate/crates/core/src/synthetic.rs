//! Synthetic A/B experiments with known long-term effects.
//!
//! Each policy gets `M_i = 0.5 I + 0.5 R_i`, where `R_i` has `U(0, 1)`
//! entries normalized to unit row sums. The exogenous series is a Gaussian
//! random walk (`z_{t+1} = z_t + eta_t`, `eta_t ~ N(0, 1.5 I)`) rescaled
//! per coordinate by `exp(beta_t)`, `beta_t ~ N(0, 0.5 I)`. Individuals
//! follow `s_{t+1} = M_i s_t + eps_t` and are observed as
//! `o_t = s_t + alpha * z_t`.
//!
//! # Random streams
//!
//! Every draw comes from ChaCha8 seeded with the truth's `seed`:
//! stream 0 draws the transition matrices, stream 1 the exogenous series,
//! and stream `2 + idx` the individual with global index `idx`
//! (`idx = policy * n_per_policy + j`). Simulation is therefore independent
//! of thread scheduling.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{ExperimentDataset, ObservationTrajectory, RewardModel};
use crate::error::{Error, Result};
use crate::linalg::discounted_value;
use crate::stationary::check_gamma;

/// Variance of the exogenous walk increments.
pub const WALK_VARIANCE: f64 = 1.5;
/// Variance of the log of the per-coordinate exogenous scales.
pub const LOG_SCALE_VARIANCE: f64 = 0.5;

const TRANSITION_STREAM: u64 = 0;
const EXOGENOUS_STREAM: u64 = 1;
const INDIVIDUAL_STREAM_BASE: u64 = 2;

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Whether observations add the rescaled walk `exp(beta_t) * z_t` or the raw walk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExogenousScaling {
    #[default]
    Scaled,
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub dim: usize,
    pub num_policies: usize,
    /// Longest horizon that can be simulated from this truth.
    pub max_horizon: usize,
    pub alpha: f64,
    /// Initial endogenous mean; defaults to [`default_s0_mean`].
    pub s0_mean: Option<Vec<f64>>,
    /// Standard deviation of the initial endogenous state around its mean.
    pub init_std: f64,
    /// Standard deviation of the transition noise.
    pub noise_std: f64,
    /// Recenter each group's initial states so their sample mean is exactly
    /// `s0_mean`, keeping the spread.
    pub centered_init: bool,
    pub scaling: ExogenousScaling,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            dim: 8,
            num_policies: 2,
            max_horizon: 10,
            alpha: 1.0,
            s0_mean: None,
            init_std: 1.0,
            noise_std: 1.0,
            centered_init: false,
            scaling: ExogenousScaling::Scaled,
            seed: 0,
        }
    }
}

/// Evenly spaced values from 0 to 2 (a single 1 when `d = 1`).
///
/// The all-ones vector is a fixed point of every row-stochastic matrix, so
/// a mean proportional to it would make every policy's value identical.
pub fn default_s0_mean(dim: usize) -> DVector<f64> {
    if dim == 1 {
        return DVector::from_element(1, 1.0);
    }
    DVector::from_fn(dim, |c, _| 2.0 * c as f64 / (dim - 1) as f64)
}

/// Exogenous draws: the raw walk, the log-scales and their product.
#[derive(Debug, Clone, PartialEq)]
pub struct ExogenousDraw {
    pub raw: Vec<DVector<f64>>,
    pub log_scales: Vec<DVector<f64>>,
    pub scaled: Vec<DVector<f64>>,
}

/// Ground truth of a synthetic experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTruth {
    pub matrices: Vec<DMatrix<f64>>,
    pub exogenous: ExogenousDraw,
    pub alpha: f64,
    pub s0_mean: DVector<f64>,
    pub init_std: f64,
    pub noise_std: f64,
    pub centered_init: bool,
    pub scaling: ExogenousScaling,
    pub seed: u64,
}

impl SyntheticTruth {
    pub fn generate(config: &SyntheticConfig) -> Result<Self> {
        if config.dim == 0 || config.num_policies < 2 || config.max_horizon == 0 {
            return Err(Error::Config("synthetic truth needs d >= 1, k >= 2 and T >= 1".into()));
        }
        for (name, v) in [
            ("alpha", config.alpha),
            ("init_std", config.init_std),
            ("noise_std", config.noise_std),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and nonnegative, got {v}")));
            }
        }
        let s0_mean = match &config.s0_mean {
            Some(m) if m.len() != config.dim => {
                return Err(Error::Config(format!(
                    "s0_mean has {} entries, expected {}",
                    m.len(),
                    config.dim
                )))
            }
            Some(m) => DVector::from_column_slice(m),
            None => default_s0_mean(config.dim),
        };
        let matrices = generate_transitions(
            config.dim,
            config.num_policies,
            &mut stream_rng(config.seed, TRANSITION_STREAM),
        );
        let exogenous = generate_exogenous(
            config.max_horizon,
            config.dim,
            &mut stream_rng(config.seed, EXOGENOUS_STREAM),
        );
        Ok(Self {
            matrices,
            exogenous,
            alpha: config.alpha,
            s0_mean,
            init_std: config.init_std,
            centered_init: config.centered_init,
            noise_std: config.noise_std,
            scaling: config.scaling,
            seed: config.seed,
        })
    }

    pub fn dim(&self) -> usize {
        self.s0_mean.len()
    }

    pub fn num_policies(&self) -> usize {
        self.matrices.len()
    }

    pub fn max_horizon(&self) -> usize {
        self.exogenous.raw.len() - 1
    }

    /// The series added to every observation at step `t`, including `alpha`.
    pub fn exogenous_offset(&self, t: usize) -> DVector<f64> {
        let base = match self.scaling {
            ExogenousScaling::Scaled => &self.exogenous.scaled[t],
            ExogenousScaling::Raw => &self.exogenous.raw[t],
        };
        base * self.alpha
    }

    /// Truth with a different exogenous scale and everything else kept.
    pub fn with_alpha(&self, alpha: f64) -> Self {
        Self { alpha, ..self.clone() }
    }
}

/// `k` matrices `0.5 I + 0.5 R`, `R` row-normalized with `U(0, 1)` entries.
pub fn generate_transitions<R: Rng + ?Sized>(dim: usize, num_policies: usize, rng: &mut R) -> Vec<DMatrix<f64>> {
    (0..num_policies)
        .map(|_| {
            let mut m = DMatrix::from_fn(dim, dim, |_, _| rng.random::<f64>());
            for mut row in m.row_iter_mut() {
                let s = row.sum();
                row /= s;
            }
            m * 0.5 + DMatrix::identity(dim, dim) * 0.5
        })
        .collect()
}

/// Random walk of `horizon + 1` steps with lognormal per-coordinate scales.
pub fn generate_exogenous<R: Rng + ?Sized>(horizon: usize, dim: usize, rng: &mut R) -> ExogenousDraw {
    generate_exogenous_with(horizon, dim, WALK_VARIANCE, LOG_SCALE_VARIANCE, rng)
}

/// [`generate_exogenous`] with explicit variances; `z_0` is drawn like an increment.
pub fn generate_exogenous_with<R: Rng + ?Sized>(
    horizon: usize,
    dim: usize,
    walk_variance: f64,
    log_scale_variance: f64,
    rng: &mut R,
) -> ExogenousDraw {
    let step = Normal::new(0.0, walk_variance.sqrt()).expect("finite variance");
    let log_scale = Normal::new(0.0, log_scale_variance.sqrt()).expect("finite variance");
    let mut raw = Vec::with_capacity(horizon + 1);
    let mut z = DVector::from_fn(dim, |_, _| step.sample(rng));
    for _ in 0..=horizon {
        let next = &z + DVector::from_fn(dim, |_, _| step.sample(rng));
        raw.push(std::mem::replace(&mut z, next));
    }
    let log_scales: Vec<DVector<f64>> = (0..=horizon)
        .map(|_| DVector::from_fn(dim, |_, _| log_scale.sample(rng)))
        .collect();
    let scaled = raw
        .iter()
        .zip(&log_scales)
        .map(|(z, b)| z.component_mul(&b.map(f64::exp)))
        .collect();
    ExogenousDraw { raw, log_scales, scaled }
}

/// A simulated dataset together with its latent endogenous states and the
/// transition noise that produced them.
#[derive(Debug, Clone)]
pub struct SimulatedData {
    pub dataset: ExperimentDataset,
    /// `s_{j,0..T}` per individual, in dataset order.
    pub states: Vec<Vec<DVector<f64>>>,
    /// `eps_{j,0..T-1}` per individual, in dataset order.
    pub noise: Vec<Vec<DVector<f64>>>,
}

/// Balanced experiment with `n_per_policy` individuals per policy over `horizon` steps.
pub fn simulate_dataset(truth: &SyntheticTruth, n_per_policy: usize, horizon: usize) -> Result<ExperimentDataset> {
    Ok(simulate_with_latents(truth, n_per_policy, horizon)?.dataset)
}

pub fn simulate_with_latents(truth: &SyntheticTruth, n_per_policy: usize, horizon: usize) -> Result<SimulatedData> {
    if horizon == 0 || horizon > truth.max_horizon() {
        return Err(Error::Config(format!(
            "horizon {horizon} must lie in [1, {}]",
            truth.max_horizon()
        )));
    }
    if n_per_policy == 0 {
        return Err(Error::Config("need at least one individual per policy".into()));
    }
    let d = truth.dim();
    let offsets: Vec<DVector<f64>> = (0..=horizon).map(|t| truth.exogenous_offset(t)).collect();
    let total = n_per_policy * truth.num_policies();

    let individuals: Vec<_> = (0..total)
        .into_par_iter()
        .map(|idx| {
            let policy = idx / n_per_policy;
            let m = &truth.matrices[policy];
            let mut rng = stream_rng(truth.seed, INDIVIDUAL_STREAM_BASE + idx as u64);
            let mut gauss = |scale: f64| -> DVector<f64> {
                DVector::from_fn(d, |_, _| {
                    let x: f64 = StandardNormal.sample(&mut rng);
                    scale * x
                })
            };
            let mut states = Vec::with_capacity(horizon + 1);
            let mut noise = Vec::with_capacity(horizon);
            states.push(&truth.s0_mean + gauss(truth.init_std));
            for t in 0..horizon {
                let eps = gauss(truth.noise_std);
                let next = m * &states[t] + &eps;
                states.push(next);
                noise.push(eps);
            }
            let observations = states.iter().zip(&offsets).map(|(s, z)| s + z).collect();
            (ObservationTrajectory::new(idx.to_string(), policy, observations), states, noise)
        })
        .collect();

    let mut trajectories = Vec::with_capacity(total);
    let mut states = Vec::with_capacity(total);
    let mut noise = Vec::with_capacity(total);
    for (tr, s, e) in individuals {
        trajectories.push(tr);
        states.push(s);
        noise.push(e);
    }
    if truth.centered_init {
        for policy in 0..truth.num_policies() {
            let range = policy * n_per_policy..(policy + 1) * n_per_policy;
            let mut shift = states[range.clone()]
                .iter()
                .fold(DVector::zeros(d), |acc, s: &Vec<DVector<f64>>| acc + &s[0])
                / n_per_policy as f64
                - &truth.s0_mean;
            // the dynamics are linear, so the shift propagates as M^t shift
            for t in 0..=horizon {
                for idx in range.clone() {
                    states[idx][t] -= &shift;
                    trajectories[idx].observations[t] -= &shift;
                }
                shift = &truth.matrices[policy] * shift;
            }
        }
    }
    Ok(SimulatedData {
        dataset: ExperimentDataset::new(trajectories, Some(truth.num_policies()))?,
        states,
        noise,
    })
}

/// `theta' (I - gamma M_i)^{-1} mu` for every policy.
pub fn ground_truth_values(truth: &SyntheticTruth, theta: &RewardModel, gamma: f64) -> Result<Vec<f64>> {
    check_gamma(gamma)?;
    theta.check_dim(truth.dim())?;
    truth
        .matrices
        .iter()
        .enumerate()
        .map(|(i, m)| discounted_value(m, gamma, theta.theta(), &truth.s0_mean, i))
        .collect()
}

/// True long-term effects `v_i - v_0`, `i = 1..k-1`. The exogenous series
/// never enters: it is shared by all policies and cancels.
pub fn ground_truth_delta(truth: &SyntheticTruth, theta: &RewardModel, gamma: f64) -> Result<Vec<f64>> {
    let values = ground_truth_values(truth, theta, gamma)?;
    Ok(values[1..].iter().map(|v| v - values[0]).collect())
}
