//! Experiment data: trajectories, CSV ingestion, reward coefficients.
//!
//! The CSV layout is one row per (individual, step):
//!
//! ```text
//! individual_id,policy_id,t,f0,f1,...,f{d-1}[,r]
//! ```
//!
//! `t` runs over `0..=T` contiguously for every individual. The optional
//! trailing `r` column carries the observed reward at that step.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{solve_spd_checked, KahanSum};

/// One individual's in-experiment observations `o_0..o_T`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationTrajectory {
    pub individual_id: String,
    pub policy_id: usize,
    pub observations: Vec<DVector<f64>>,
    pub rewards: Option<Vec<f64>>,
}

impl ObservationTrajectory {
    pub fn new(
        individual_id: impl Into<String>,
        policy_id: usize,
        observations: Vec<DVector<f64>>,
    ) -> Self {
        Self {
            individual_id: individual_id.into(),
            policy_id,
            observations,
            rewards: None,
        }
    }

    pub fn with_rewards(mut self, rewards: Vec<f64>) -> Self {
        self.rewards = Some(rewards);
        self
    }

    /// Number of observed transitions.
    pub fn horizon(&self) -> usize {
        self.observations.len().saturating_sub(1)
    }
}

/// A validated collection of trajectories sharing dimension and horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentDataset {
    dim: usize,
    horizon: usize,
    num_policies: usize,
    group_sizes: Vec<usize>,
    trajectories: Vec<ObservationTrajectory>,
}

impl ExperimentDataset {
    /// Validates `trajectories`. When `num_policies` is `None` it is
    /// inferred as one past the largest policy id.
    pub fn new(
        trajectories: Vec<ObservationTrajectory>,
        num_policies: Option<usize>,
    ) -> Result<Self> {
        let first = trajectories
            .first()
            .ok_or_else(|| Error::Validation("no trajectories".into()))?;
        let dim = first.observations.first().map_or(0, |o| o.len());
        let horizon = first.horizon();
        if dim == 0 {
            return Err(Error::Validation("observation dimension must be at least 1".into()));
        }
        if horizon == 0 {
            return Err(Error::Validation("horizon T must be at least 1".into()));
        }
        let inferred = trajectories.iter().map(|tr| tr.policy_id).max().unwrap_or(0) + 1;
        let num_policies = num_policies.unwrap_or(inferred);
        if num_policies < 2 {
            return Err(Error::Validation(format!(
                "need at least 2 policy groups (control plus a treatment), found {num_policies}"
            )));
        }

        let with_rewards = first.rewards.is_some();
        let mut group_sizes = vec![0usize; num_policies];
        let mut seen = HashSet::with_capacity(trajectories.len());
        for tr in &trajectories {
            let id = &tr.individual_id;
            if !seen.insert(id.as_str()) {
                return Err(Error::Validation(format!("duplicate individual_id {id:?}")));
            }
            if tr.policy_id >= num_policies {
                return Err(Error::Validation(format!(
                    "individual {id:?}: policy_id {} out of range [0, {num_policies})",
                    tr.policy_id
                )));
            }
            if tr.horizon() != horizon {
                return Err(Error::Validation(format!(
                    "individual {id:?} has {} steps, expected {}",
                    tr.observations.len(),
                    horizon + 1
                )));
            }
            if let Some((t, o)) = tr
                .observations
                .iter()
                .enumerate()
                .find(|(_, o)| o.len() != dim)
            {
                return Err(Error::Validation(format!(
                    "individual {id:?} t={t}: dimension {} differs from {dim}",
                    o.len()
                )));
            }
            if tr.observations.iter().any(|o| o.iter().any(|x| !x.is_finite())) {
                return Err(Error::Validation(format!("individual {id:?}: non-finite observation")));
            }
            match &tr.rewards {
                Some(_) if !with_rewards => {
                    return Err(Error::Validation(format!(
                        "individual {id:?} has rewards but others do not"
                    )));
                }
                None if with_rewards => {
                    return Err(Error::Validation(format!("individual {id:?} lacks rewards")));
                }
                Some(r) if r.len() != horizon + 1 => {
                    return Err(Error::Validation(format!(
                        "individual {id:?}: {} rewards for {} steps",
                        r.len(),
                        horizon + 1
                    )));
                }
                Some(r) if r.iter().any(|x| !x.is_finite()) => {
                    return Err(Error::Validation(format!("individual {id:?}: non-finite reward")));
                }
                _ => {}
            }
            group_sizes[tr.policy_id] += 1;
        }
        if let Some(empty) = group_sizes.iter().position(|&n| n == 0) {
            return Err(Error::Validation(format!("policy group {empty} has no individuals")));
        }
        Ok(Self {
            dim,
            horizon,
            num_policies,
            group_sizes,
            trajectories,
        })
    }

    /// Observation dimension `d`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// In-experiment horizon `T` (each trajectory holds `T + 1` steps).
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn num_policies(&self) -> usize {
        self.num_policies
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn group_size(&self, policy: usize) -> usize {
        self.group_sizes[policy]
    }

    pub fn group_sizes(&self) -> &[usize] {
        &self.group_sizes
    }

    pub fn has_rewards(&self) -> bool {
        self.trajectories[0].rewards.is_some()
    }

    pub fn trajectories(&self) -> &[ObservationTrajectory] {
        &self.trajectories
    }

    pub fn into_trajectories(self) -> Vec<ObservationTrajectory> {
        self.trajectories
    }

    pub fn group(&self, policy: usize) -> impl Iterator<Item = &ObservationTrajectory> + '_ {
        self.trajectories.iter().filter(move |tr| tr.policy_id == policy)
    }

    /// Per-step sums of observations within one policy group.
    pub(crate) fn group_step_sums(&self, policy: usize) -> Vec<DVector<f64>> {
        let mut sums = vec![DVector::zeros(self.dim); self.horizon + 1];
        for tr in self.group(policy) {
            for (s, o) in sums.iter_mut().zip(&tr.observations) {
                *s += o;
            }
        }
        sums
    }

    /// Mean squared observation norm over every individual and step.
    pub fn mean_squared_norm(&self) -> f64 {
        let mut acc = KahanSum::default();
        for tr in &self.trajectories {
            for o in &tr.observations {
                acc.add(o.norm_squared());
            }
        }
        acc.value() / (self.trajectories.len() * (self.horizon + 1)) as f64
    }

    /// Applies `f(t, o)` to every observation, keeping everything else.
    pub fn map_observations<F>(&self, mut f: F) -> Result<Self>
    where
        F: FnMut(usize, &DVector<f64>) -> DVector<f64>,
    {
        let trajectories = self
            .trajectories
            .iter()
            .map(|tr| ObservationTrajectory {
                observations: tr
                    .observations
                    .iter()
                    .enumerate()
                    .map(|(t, o)| f(t, o))
                    .collect(),
                ..tr.clone()
            })
            .collect();
        Self::new(trajectories, Some(self.num_policies))
    }
}

/// Parses a dataset from CSV.
pub fn read_dataset<R: Read>(reader: R, num_policies: Option<usize>) -> Result<ExperimentDataset> {
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let header = csv.headers()?.clone();
    let names: Vec<&str> = header.iter().collect();
    let header_err = |message: String| Error::Parse { row: 1, message };
    if names.len() < 4 || names[..3] != ["individual_id", "policy_id", "t"] {
        return Err(header_err(
            "header must start with individual_id,policy_id,t followed by f0..f{d-1}".into(),
        ));
    }
    let with_rewards = names.last() == Some(&"r");
    let dim = names.len() - 3 - usize::from(with_rewards);
    for (c, name) in names[3..3 + dim].iter().enumerate() {
        if *name != format!("f{c}") {
            return Err(header_err(format!("expected column f{c}, found {name:?}")));
        }
    }
    if dim == 0 {
        return Err(header_err("no feature columns".into()));
    }

    struct Pending {
        policy_id: usize,
        first_row: usize,
        steps: Vec<(usize, usize, DVector<f64>, Option<f64>)>,
    }
    let mut order: Vec<String> = Vec::new();
    let mut pending: HashMap<String, Pending> = HashMap::new();

    for record in csv.records() {
        let record = record.map_err(|e| {
            let row = e.position().map_or(0, |p| p.line() as usize);
            match e.kind() {
                csv::ErrorKind::UnequalLengths { expected_len, len, .. } => Error::Parse {
                    row,
                    message: format!("ragged row: {len} columns, header has {expected_len}"),
                },
                _ => Error::Parse { row, message: e.to_string() },
            }
        })?;
        let row = record.position().map_or(0, |p| p.line() as usize);
        let cell = |c: usize| record.get(c).unwrap_or("");
        let number = |c: usize| -> Result<f64> {
            let s = cell(c);
            s.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| Error::Parse {
                    row,
                    message: format!("column {}: {s:?} is not a finite number", names[c]),
                })
        };

        let id = cell(0).to_string();
        if id.is_empty() {
            return Err(Error::Parse { row, message: "empty individual_id".into() });
        }
        let policy_id: usize = match cell(1).parse::<i64>() {
            Ok(p) if p >= 0 && num_policies.map_or(true, |k| (p as usize) < k) => p as usize,
            Ok(p) => {
                return Err(Error::Parse { row, message: format!("policy_id {p} out of range") })
            }
            Err(_) => {
                return Err(Error::Parse {
                    row,
                    message: format!("policy_id {:?} is not an integer", cell(1)),
                })
            }
        };
        let t: usize = cell(2).parse().map_err(|_| Error::Parse {
            row,
            message: format!("t {:?} is not a nonnegative integer", cell(2)),
        })?;
        let obs = (0..dim)
            .map(|c| number(3 + c))
            .collect::<Result<Vec<f64>>>()?;
        let reward = if with_rewards { Some(number(3 + dim)?) } else { None };

        let entry = pending.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            Pending { policy_id, first_row: row, steps: Vec::new() }
        });
        if entry.policy_id != policy_id {
            return Err(Error::Parse {
                row,
                message: format!(
                    "individual {id:?} switches policy_id from {} to {policy_id}",
                    entry.policy_id
                ),
            });
        }
        entry.steps.push((t, row, DVector::from_vec(obs), reward));
    }

    let horizon = pending
        .values()
        .flat_map(|p| p.steps.iter().map(|s| s.0))
        .max()
        .ok_or_else(|| Error::Validation("no data rows".into()))?;

    let mut trajectories = Vec::with_capacity(order.len());
    for id in order {
        let mut p = pending.remove(&id).expect("grouped individual");
        p.steps.sort_by_key(|s| (s.0, s.1));
        for w in p.steps.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::Parse {
                    row: w[1].1,
                    message: format!("duplicate row for individual {id:?} at t={}", w[0].0),
                });
            }
        }
        if let Some(missing) = (0..=horizon).find(|&t| p.steps.get(t).map(|s| s.0) != Some(t)) {
            return Err(Error::Parse {
                row: p.first_row,
                message: format!("gap in time index: individual {id:?} is missing t={missing}"),
            });
        }
        let rewards = with_rewards.then(|| p.steps.iter().map(|s| s.3.unwrap_or(0.0)).collect());
        trajectories.push(ObservationTrajectory {
            individual_id: id,
            policy_id: p.policy_id,
            observations: p.steps.into_iter().map(|s| s.2).collect(),
            rewards,
        });
    }
    ExperimentDataset::new(trajectories, num_policies)
}

pub fn load_dataset(path: impl AsRef<Path>, num_policies: Option<usize>) -> Result<ExperimentDataset> {
    read_dataset(File::open(path)?, num_policies)
}

/// Writes the dataset as CSV. Floats use the shortest representation that
/// parses back to the same value.
pub fn write_dataset<W: Write>(dataset: &ExperimentDataset, writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    let mut header = vec!["individual_id".to_string(), "policy_id".into(), "t".into()];
    header.extend((0..dataset.dim()).map(|c| format!("f{c}")));
    if dataset.has_rewards() {
        header.push("r".into());
    }
    out.write_record(&header)?;
    let mut fields = Vec::with_capacity(header.len());
    for tr in dataset.trajectories() {
        for (t, o) in tr.observations.iter().enumerate() {
            fields.clear();
            fields.push(tr.individual_id.clone());
            fields.push(tr.policy_id.to_string());
            fields.push(t.to_string());
            fields.extend(o.iter().map(|x| x.to_string()));
            if let Some(r) = &tr.rewards {
                fields.push(r[t].to_string());
            }
            out.write_record(&fields)?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn save_dataset(dataset: &ExperimentDataset, path: impl AsRef<Path>) -> Result<()> {
    let file = std::io::BufWriter::new(File::create(path)?);
    write_dataset(dataset, file)
}

/// Linear reward coefficients: `r(o) = theta' o`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RewardFile", into = "RewardFile")]
pub struct RewardModel {
    theta: DVector<f64>,
}

#[derive(Serialize, Deserialize)]
struct RewardFile {
    theta: Vec<f64>,
}

impl TryFrom<RewardFile> for RewardModel {
    type Error = Error;
    fn try_from(f: RewardFile) -> Result<Self> {
        RewardModel::new(DVector::from_vec(f.theta))
    }
}

impl From<RewardModel> for RewardFile {
    fn from(m: RewardModel) -> Self {
        RewardFile { theta: m.theta.iter().copied().collect() }
    }
}

impl RewardModel {
    pub fn new(theta: DVector<f64>) -> Result<Self> {
        if theta.is_empty() || theta.iter().any(|x| !x.is_finite()) {
            return Err(Error::Validation("reward coefficients must be nonempty and finite".into()));
        }
        Ok(Self { theta })
    }

    /// Reward equal to a single observed feature.
    pub fn one_hot(dim: usize, index: usize) -> Result<Self> {
        if index >= dim {
            return Err(Error::Config(format!("reward feature {index} out of range for d={dim}")));
        }
        let mut theta = DVector::zeros(dim);
        theta[index] = 1.0;
        Self::new(theta)
    }

    /// `theta = 1/d` in every coordinate.
    pub fn uniform(dim: usize) -> Self {
        Self { theta: DVector::from_element(dim, 1.0 / dim as f64) }
    }

    pub fn theta(&self) -> &DVector<f64> {
        &self.theta
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn reward(&self, o: &DVector<f64>) -> f64 {
        self.theta.dot(o)
    }

    pub fn check_dim(&self, dim: usize) -> Result<()> {
        if self.dim() != dim {
            return Err(Error::Config(format!(
                "reward coefficients have dimension {}, data has {dim}",
                self.dim()
            )));
        }
        Ok(())
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string(self).expect("finite floats serialize")
    }
}

/// Least-squares reward fit plus its residual RMS.
#[derive(Debug, Clone)]
pub struct RewardFit {
    pub model: RewardModel,
    pub residual_rms: f64,
}

/// Regresses observed rewards on observations (no intercept).
pub fn estimate_reward_coefficients(dataset: &ExperimentDataset) -> Result<RewardFit> {
    if !dataset.has_rewards() {
        return Err(Error::Validation(
            "dataset has no reward column; supply reward coefficients explicitly".into(),
        ));
    }
    let d = dataset.dim();
    let mut gram = DMatrix::zeros(d, d);
    let mut rhs = DMatrix::zeros(d, 1);
    for tr in dataset.trajectories() {
        let rewards = tr.rewards.as_ref().expect("validated rewards");
        for (o, &r) in tr.observations.iter().zip(rewards) {
            gram.ger(1.0, o, o, 1.0);
            rhs.column_mut(0).axpy(r, o, 1.0);
        }
    }
    let theta = solve_spd_checked(
        &gram,
        &rhs,
        "reward regression Gram matrix",
        "observations are (nearly) collinear; drop or combine features",
    )?;
    let theta = theta.column(0).into_owned();

    let mut sse = KahanSum::default();
    let mut count = 0usize;
    for tr in dataset.trajectories() {
        let rewards = tr.rewards.as_ref().expect("validated rewards");
        for (o, &r) in tr.observations.iter().zip(rewards) {
            let e = r - theta.dot(o);
            sse.add(e * e);
            count += 1;
        }
    }
    Ok(RewardFit {
        model: RewardModel::new(theta)?,
        residual_rms: (sse.value() / count as f64).sqrt(),
    })
}

/// Monte Carlo estimate of the initial observation mean of one group.
pub fn mean_initial_observation(dataset: &ExperimentDataset, policy: usize) -> Result<DVector<f64>> {
    if policy >= dataset.num_policies() {
        return Err(Error::Config(format!(
            "policy {policy} out of range [0, {})",
            dataset.num_policies()
        )));
    }
    let mut sum = DVector::zeros(dataset.dim());
    for tr in dataset.group(policy) {
        sum += &tr.observations[0];
    }
    Ok(sum / dataset.group_size(policy) as f64)
}
