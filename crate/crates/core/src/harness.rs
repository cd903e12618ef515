//! Baselines, error metrics and synthetic parameter sweeps.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{ExperimentDataset, RewardModel};
use crate::error::{Error, Result};
use crate::linalg::{discounted_value, KahanSum};
use crate::nonstationary::{alternate_minimize, solve_exogenous, NonstationaryConfig};
use crate::stationary::{check_gamma, estimate_effects_stationary};
use crate::synthetic::{ground_truth_delta, simulate_dataset, ExogenousScaling, SyntheticConfig, SyntheticTruth};
use crate::dataset::mean_initial_observation;

/// Absolute percentage errors divide by at least this.
pub const APE_DENOM_FLOOR: f64 = 1e-12;

/// The three effect estimators compared by the harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Naive,
    Stationary,
    Nonstationary,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Naive, Method::Stationary, Method::Nonstationary];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Naive => "naive",
            Method::Stationary => "stationary",
            Method::Nonstationary => "nonstationary",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "naive" => Ok(Method::Naive),
            "stationary" => Ok(Method::Stationary),
            "nonstationary" => Ok(Method::Nonstationary),
            other => Err(Error::Config(format!(
                "unknown method {other:?} (expected naive, stationary or nonstationary)"
            ))),
        }
    }
}

/// Shared estimator settings. `gamma` and `ridge` come from `nonstationary`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodConfig {
    pub nonstationary: NonstationaryConfig,
    /// Put the naive in-experiment reward difference on the discounted
    /// scale by dividing by `1 - gamma`.
    pub naive_scaled: bool,
}

impl Default for MethodConfig {
    fn default() -> Self {
        Self { nonstationary: NonstationaryConfig::default(), naive_scaled: true }
    }
}

impl MethodConfig {
    pub fn with_gamma(gamma: f64) -> Self {
        Self { nonstationary: NonstationaryConfig::with_gamma(gamma), ..Self::default() }
    }

    pub fn gamma(&self) -> f64 {
        self.nonstationary.gamma
    }
}

/// In-experiment average reward difference against the control group,
/// divided by `1 - gamma` when `scaled`.
pub fn naive_average_estimate(
    dataset: &ExperimentDataset,
    theta: &RewardModel,
    gamma: f64,
    scaled: bool,
) -> Result<Vec<f64>> {
    check_gamma(gamma)?;
    theta.check_dim(dataset.dim())?;
    let means: Vec<f64> = (0..dataset.num_policies())
        .map(|i| {
            let mut acc = KahanSum::default();
            for tr in dataset.group(i) {
                for o in &tr.observations {
                    acc.add(theta.reward(o));
                }
            }
            acc.value() / (dataset.group_size(i) * (dataset.horizon() + 1)) as f64
        })
        .collect();
    let factor = if scaled { 1.0 / (1.0 - gamma) } else { 1.0 };
    Ok(means[1..].iter().map(|m| (m - means[0]) * factor).collect())
}

/// Effects `v_i - v_0` from the chosen estimator.
pub fn run_method(
    dataset: &ExperimentDataset,
    method: Method,
    theta: &RewardModel,
    config: &MethodConfig,
) -> Result<Vec<f64>> {
    match method {
        Method::Naive => naive_average_estimate(dataset, theta, config.gamma(), config.naive_scaled),
        Method::Stationary => {
            estimate_effects_stationary(dataset, theta, config.gamma(), config.nonstationary.ridge)
        }
        Method::Nonstationary => Ok(alternate_minimize(dataset, theta, &config.nonstationary)?.effects),
    }
}

/// Swept generator parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepParam {
    #[serde(rename = "n")]
    N,
    #[serde(rename = "T")]
    T,
    #[serde(rename = "d")]
    D,
    #[serde(rename = "alpha")]
    Alpha,
}

impl SweepParam {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepParam::N => "n",
            SweepParam::T => "T",
            SweepParam::D => "d",
            SweepParam::Alpha => "alpha",
        }
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SweepParam {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "n" => Ok(SweepParam::N),
            "T" | "t" => Ok(SweepParam::T),
            "d" => Ok(SweepParam::D),
            "alpha" => Ok(SweepParam::Alpha),
            other => Err(Error::Config(format!("unknown sweep parameter {other:?} (n, T, d, alpha)"))),
        }
    }
}

/// Synthetic experiment shape used by sweeps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    /// Individuals per policy.
    pub n: usize,
    pub horizon: usize,
    pub dim: usize,
    pub num_policies: usize,
    pub alpha: f64,
    pub init_std: f64,
    pub noise_std: f64,
    pub scaling: ExogenousScaling,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            n: 500,
            horizon: 10,
            dim: 8,
            num_policies: 2,
            alpha: 1.0,
            init_std: 1.0,
            noise_std: 1.0,
            scaling: ExogenousScaling::Scaled,
        }
    }
}

impl Scenario {
    pub fn with_param(&self, param: SweepParam, value: f64) -> Result<Self> {
        let count = |v: f64| -> Result<usize> {
            if v >= 1.0 && v.fract() == 0.0 && v.is_finite() {
                Ok(v as usize)
            } else {
                Err(Error::Config(format!("{param} must be a positive integer, got {v}")))
            }
        };
        let mut s = self.clone();
        match param {
            SweepParam::N => s.n = count(value)?,
            SweepParam::T => s.horizon = count(value)?,
            SweepParam::D => s.dim = count(value)?,
            SweepParam::Alpha => {
                if !(value >= 0.0 && value.is_finite()) {
                    return Err(Error::Config(format!("alpha must be nonnegative, got {value}")));
                }
                s.alpha = value
            }
        }
        Ok(s)
    }

    pub fn synthetic_config(&self, seed: u64) -> SyntheticConfig {
        SyntheticConfig {
            dim: self.dim,
            num_policies: self.num_policies,
            max_horizon: self.horizon,
            alpha: self.alpha,
            s0_mean: None,
            init_std: self.init_std,
            noise_std: self.noise_std,
            centered_init: false,
            scaling: self.scaling,
            seed,
        }
    }
}

/// Everything a sweep needs besides the swept parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub scenario: Scenario,
    pub methods: MethodConfig,
    /// Reward coefficients; `None` uses `1/d` in every coordinate.
    pub theta: Option<Vec<f64>>,
    /// Worker threads; 0 uses the global pool.
    pub workers: usize,
    /// Record wall-clock time per estimate. Timed output is not reproducible.
    pub timing: bool,
    /// Reuse the same seed for every value at a given replication, so
    /// values are compared on common random numbers.
    pub common_random_numbers: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::default(),
            methods: MethodConfig::default(),
            theta: None,
            workers: 0,
            timing: false,
            common_random_numbers: false,
        }
    }
}

/// SplitMix64 finalizer.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed of sweep cell `(value_index, rep)`:
/// `splitmix64(splitmix64(master) ^ (value_index << 32 | rep))`.
pub fn cell_seed(master_seed: u64, value_index: usize, rep: usize) -> u64 {
    splitmix64(splitmix64(master_seed) ^ (((value_index as u64) << 32) | rep as u64))
}

/// One estimate of one treatment effect.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub param: SweepParam,
    pub value: f64,
    pub rep: usize,
    pub method: Method,
    pub policy: usize,
    pub delta_hat: f64,
    pub delta_true: f64,
    pub sq_err: f64,
    pub ape: f64,
    pub wall_ms: Option<f64>,
    pub seed: u64,
    pub error: Option<String>,
}

impl SweepRow {
    fn scored(mut self) -> Self {
        let e = self.delta_hat - self.delta_true;
        self.sq_err = e * e;
        self.ape = e.abs() / self.delta_true.abs().max(APE_DENOM_FLOOR);
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

pub const RESULTS_HEADER: [&str; 12] = [
    "param", "value", "rep", "method", "policy", "delta_hat", "delta_true", "sq_err", "ape", "wall_ms", "seed",
    "error",
];

fn run_cell(
    param: SweepParam,
    value: f64,
    rep: usize,
    seed: u64,
    config: &SweepConfig,
) -> Vec<SweepRow> {
    let k = config.scenario.num_policies;
    let failed = |method: Method, policy: usize, delta_true: f64, msg: String| SweepRow {
        param,
        value,
        rep,
        method,
        policy,
        delta_hat: f64::NAN,
        delta_true,
        sq_err: f64::NAN,
        ape: f64::NAN,
        wall_ms: None,
        seed,
        error: Some(msg),
    };
    let setup = || -> Result<(ExperimentDataset, RewardModel, Vec<f64>)> {
        let scenario = config.scenario.with_param(param, value)?;
        let theta = match &config.theta {
            Some(t) => RewardModel::new(DVector::from_column_slice(t))?,
            None => RewardModel::uniform(scenario.dim),
        };
        let truth = SyntheticTruth::generate(&scenario.synthetic_config(seed))?;
        let dataset = simulate_dataset(&truth, scenario.n, scenario.horizon)?;
        let delta = ground_truth_delta(&truth, &theta, config.methods.gamma())?;
        Ok((dataset, theta, delta))
    };
    let (dataset, theta, delta) = match setup() {
        Ok(x) => x,
        Err(e) => {
            return Method::ALL
                .iter()
                .flat_map(|&m| (1..k).map(move |p| (m, p)))
                .map(|(m, p)| failed(m, p, f64::NAN, e.to_string()))
                .collect()
        }
    };
    let mut rows = Vec::with_capacity(3 * (k - 1));
    for method in Method::ALL {
        let start = Instant::now();
        let outcome = run_method(&dataset, method, &theta, &config.methods);
        let wall_ms = config.timing.then(|| start.elapsed().as_secs_f64() * 1e3);
        match outcome {
            Ok(effects) => rows.extend(effects.iter().zip(&delta).enumerate().map(|(p, (&hat, &truth))| {
                SweepRow {
                    param,
                    value,
                    rep,
                    method,
                    policy: p + 1,
                    delta_hat: hat,
                    delta_true: truth,
                    sq_err: 0.0,
                    ape: 0.0,
                    wall_ms,
                    seed,
                    error: None,
                }
                .scored()
            })),
            Err(e) => rows.extend((1..k).map(|p| failed(method, p, delta[p - 1], e.to_string()))),
        }
    }
    rows
}

fn in_pool<T: Send>(workers: usize, job: impl FnOnce() -> T + Send) -> Result<T> {
    if workers == 0 {
        return Ok(job());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))?;
    Ok(pool.install(job))
}

/// Evaluates every method on `reps` fresh synthetic experiments per value.
/// Rows come out ordered by value, replication, method and policy; a
/// failing estimate is recorded in its row instead of aborting the sweep.
pub fn sweep(
    param: SweepParam,
    values: &[f64],
    reps: usize,
    config: &SweepConfig,
    master_seed: u64,
) -> Result<SweepResult> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    if reps == 0 {
        return Err(Error::Config("sweep needs at least one replication".into()));
    }
    if config.scenario.num_policies < 2 {
        return Err(Error::Config("sweep needs at least two policies".into()));
    }
    config.methods.nonstationary.validate()?;
    for &v in values {
        config.scenario.with_param(param, v)?;
    }
    let cells: Vec<(usize, usize)> = (0..values.len())
        .flat_map(|vi| (0..reps).map(move |r| (vi, r)))
        .collect();
    let rows = in_pool(config.workers, || {
        cells
            .par_iter()
            .map(|&(vi, rep)| {
                let seed = cell_seed(master_seed, if config.common_random_numbers { 0 } else { vi }, rep);
                run_cell(param, values[vi], rep, seed, config)
            })
            .collect::<Vec<_>>()
    })?;
    Ok(SweepResult { rows: rows.into_iter().flatten().collect() })
}

fn fmt_float(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else {
        x.to_string()
    }
}

impl SweepResult {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(RESULTS_HEADER)?;
        for r in &self.rows {
            out.write_record([
                r.param.to_string(),
                fmt_float(r.value),
                r.rep.to_string(),
                r.method.to_string(),
                r.policy.to_string(),
                fmt_float(r.delta_hat),
                fmt_float(r.delta_true),
                fmt_float(r.sq_err),
                fmt_float(r.ape),
                r.wall_ms.map(fmt_float).unwrap_or_default(),
                r.seed.to_string(),
                r.error.clone().unwrap_or_default(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut input = csv::Reader::from_reader(reader);
        if input.headers()?.iter().collect::<Vec<_>>() != RESULTS_HEADER {
            return Err(Error::Parse { row: 1, message: format!("expected header {}", RESULTS_HEADER.join(",")) });
        }
        let mut rows = Vec::new();
        for record in input.records() {
            let record = record?;
            let row = record.position().map_or(0, |p| p.line() as usize);
            let bad = |c: usize| Error::Parse { row, message: format!("bad {} value {:?}", RESULTS_HEADER[c], &record[c]) };
            let float = |c: usize| -> Result<f64> {
                if record[c].is_empty() {
                    Ok(f64::NAN)
                } else {
                    record[c].parse().map_err(|_| bad(c))
                }
            };
            rows.push(SweepRow {
                param: record[0].parse()?,
                value: float(1)?,
                rep: record[2].parse().map_err(|_| bad(2))?,
                method: record[3].parse()?,
                policy: record[4].parse().map_err(|_| bad(4))?,
                delta_hat: float(5)?,
                delta_true: float(6)?,
                sq_err: float(7)?,
                ape: float(8)?,
                wall_ms: Some(float(9)?).filter(|x| !x.is_nan()),
                seed: record[10].parse().map_err(|_| bad(10))?,
                error: Some(record[11].to_string()).filter(|s| !s.is_empty()),
            });
        }
        Ok(Self { rows })
    }
}

/// Aggregate over every successful row of one (value, method) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub param: SweepParam,
    pub value: f64,
    pub method: Method,
    pub count: usize,
    pub errors: usize,
    /// `log10` of the mean squared error.
    pub log10_mse: f64,
    pub median_sq_err: f64,
    pub median_ape: f64,
    /// Inter-quartile range of the absolute percentage error.
    pub ape_iqr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub rows: Vec<SummaryRow>,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    v.sort_by(f64::total_cmp);
    quantile(&v, 0.5)
}

/// Per (value, method): log10 MSE, median squared error, median and IQR of
/// the absolute percentage error. Cells keep their first-appearance order.
pub fn summarize(results: &SweepResult) -> Result<Summary> {
    if results.rows.is_empty() {
        return Err(Error::Config("nothing to summarize".into()));
    }
    let mut keys: Vec<(SweepParam, f64, Method)> = Vec::new();
    for r in &results.rows {
        let key = (r.param, r.value, r.method);
        if !keys.iter().any(|k| k.0 == key.0 && k.1.total_cmp(&key.1).is_eq() && k.2 == key.2) {
            keys.push(key);
        }
    }
    let rows = keys
        .into_iter()
        .map(|(param, value, method)| {
            let cell: Vec<&SweepRow> = results
                .rows
                .iter()
                .filter(|r| r.param == param && r.value.total_cmp(&value).is_eq() && r.method == method)
                .collect();
            let ok: Vec<&&SweepRow> = cell.iter().filter(|r| r.error.is_none()).collect();
            let mut sq: Vec<f64> = ok.iter().map(|r| r.sq_err).collect();
            let mut ape: Vec<f64> = ok.iter().map(|r| r.ape).collect();
            sq.sort_by(f64::total_cmp);
            ape.sort_by(f64::total_cmp);
            let mut mse = KahanSum::default();
            sq.iter().for_each(|&x| mse.add(x));
            SummaryRow {
                param,
                value,
                method,
                count: ok.len(),
                errors: cell.len() - ok.len(),
                log10_mse: if ok.is_empty() { f64::NAN } else { (mse.value() / ok.len() as f64).log10() },
                median_sq_err: quantile(&sq, 0.5),
                median_ape: quantile(&ape, 0.5),
                ape_iqr: quantile(&ape, 0.75) - quantile(&ape, 0.25),
            }
        })
        .collect();
    Ok(Summary { rows })
}

pub const SUMMARY_HEADER: [&str; 9] =
    ["param", "value", "method", "count", "errors", "log10_mse", "median_sq_err", "median_ape", "ape_iqr"];

impl Summary {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(SUMMARY_HEADER)?;
        for r in &self.rows {
            out.write_record([
                r.param.to_string(),
                fmt_float(r.value),
                r.method.to_string(),
                r.count.to_string(),
                r.errors.to_string(),
                fmt_float(r.log10_mse),
                fmt_float(r.median_sq_err),
                fmt_float(r.median_ape),
                fmt_float(r.ape_iqr),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    /// Fixed-width text table.
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{:>6} {:>10} {:>14} {:>6} {:>6} {:>10} {:>13} {:>11} {:>10}\n",
            "param", "value", "method", "count", "errors", "log10_mse", "median_sqerr", "median_ape", "ape_iqr"
        );
        for r in &self.rows {
            s.push_str(&format!(
                "{:>6} {:>10} {:>14} {:>6} {:>6} {:>10.4} {:>13.4e} {:>11.4} {:>10.4}\n",
                r.param.as_str(),
                r.value,
                r.method.as_str(),
                r.count,
                r.errors,
                r.log10_mse,
                r.median_sq_err,
                r.median_ape,
                r.ape_iqr
            ));
        }
        s
    }

    pub fn get(&self, value: f64, method: Method) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.value == value && r.method == method)
    }
}

/// Error of the plug-in effect when the true transition matrices are
/// supplied and only the exogenous series is estimated.
#[derive(Debug, Clone, PartialEq)]
pub struct RateStudy {
    pub ns: Vec<usize>,
    /// RMSE of the estimated effects at each `n`.
    pub rmse: Vec<f64>,
    /// Least-squares slope of `ln rmse` against `ln n`.
    pub slope: f64,
}

/// Least-squares slope of `y` on `x`.
pub fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Oracle-dynamics convergence study. `ns` are individuals per policy.
///
/// Individual values are only identified up to shifts of `z` that every
/// policy's dynamics preserve, so the error is measured on the effects,
/// which are invariant to those shifts.
pub fn oracle_rate_study(
    scenario: &Scenario,
    ns: &[usize],
    reps: usize,
    gamma: f64,
    master_seed: u64,
    workers: usize,
) -> Result<RateStudy> {
    if ns.len() < 2 || reps == 0 {
        return Err(Error::Config("rate study needs at least two sizes and one replication".into()));
    }
    let cells: Vec<(usize, usize)> = (0..ns.len()).flat_map(|i| (0..reps).map(move |r| (i, r))).collect();
    let sq_errors: Vec<Result<f64>> = in_pool(workers, || {
        cells
            .par_iter()
            .map(|&(i, rep)| -> Result<f64> {
                let scenario = Scenario { n: ns[i], ..scenario.clone() };
                let theta = RewardModel::uniform(scenario.dim);
                let truth = SyntheticTruth::generate(&scenario.synthetic_config(cell_seed(master_seed, i, rep)))?;
                let dataset = simulate_dataset(&truth, scenario.n, scenario.horizon)?;
                let delta = ground_truth_delta(&truth, &theta, gamma)?;
                let lambda_z = NonstationaryConfig::default_lambda_z(&dataset);
                let z = solve_exogenous(&truth.matrices, &dataset, lambda_z)?;
                let values = (0..dataset.num_policies())
                    .map(|p| {
                        let start = mean_initial_observation(&dataset, p)? - z.step(0);
                        discounted_value(&truth.matrices[p], gamma, theta.theta(), &start, p)
                    })
                    .collect::<Result<Vec<f64>>>()?;
                Ok(values[1..]
                    .iter()
                    .zip(&delta)
                    .map(|(v, d)| (v - values[0] - d).powi(2))
                    .sum::<f64>()
                    / delta.len() as f64)
            })
            .collect()
    })?;
    let sq_errors = sq_errors.into_iter().collect::<Result<Vec<f64>>>()?;
    let rmse: Vec<f64> = sq_errors
        .chunks(reps)
        .map(|c| (c.iter().sum::<f64>() / reps as f64).sqrt())
        .collect();
    let log_n: Vec<f64> = ns.iter().map(|&n| (n as f64).ln()).collect();
    let log_rmse: Vec<f64> = rmse.iter().map(|r| r.ln()).collect();
    Ok(RateStudy { ns: ns.to_vec(), slope: ols_slope(&log_n, &log_rmse), rmse })
}
