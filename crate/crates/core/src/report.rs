//! JSON layout of fitted estimates.
//!
//! ```text
//! {
//!   "method": "nonstationary",
//!   "gamma": 0.99,
//!   "matrices": [[[row 0], [row 1], ...], ...],   // one d x d matrix per policy, row-major
//!   "z": [[z_0], [z_1], ..., [z_T]],
//!   "loss_trace": [...],
//!   "iterations": 12,
//!   "converged": true,
//!   "values": [v_0, ..., v_{k-1}],
//!   "effects": [v_1 - v_0, ..., v_{k-1} - v_0],
//!   "diagnostics": {...}
//! }
//! ```
//!
//! Methods without a transition model or exogenous series leave those
//! arrays empty.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::harness::Method;
use crate::nonstationary::FitReport;
use crate::stationary::StationaryFit;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub method: Method,
    pub gamma: f64,
    pub matrices: Vec<Vec<Vec<f64>>>,
    pub z: Vec<Vec<f64>>,
    pub loss_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub values: Vec<f64>,
    pub effects: Vec<f64>,
    pub diagnostics: serde_json::Value,
}

pub fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn vector(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

impl From<&FitReport> for ReportFile {
    fn from(r: &FitReport) -> Self {
        Self {
            method: Method::Nonstationary,
            gamma: r.model.gamma(),
            matrices: r.model.matrices().iter().map(matrix_rows).collect(),
            z: r.exogenous.steps().iter().map(vector).collect(),
            loss_trace: r.loss_trace.clone(),
            iterations: r.iterations,
            converged: r.converged,
            values: r.values.clone(),
            effects: r.effects.clone(),
            diagnostics: serde_json::to_value(&r.diagnostics).expect("diagnostics serialize"),
        }
    }
}

impl ReportFile {
    /// Report for the stationary estimator, given its per-policy values.
    pub fn stationary(fit: &StationaryFit, values: Vec<f64>) -> Self {
        let effects = values[1..].iter().map(|v| v - values[0]).collect();
        Self {
            method: Method::Stationary,
            gamma: fit.model.gamma(),
            matrices: fit.model.matrices().iter().map(matrix_rows).collect(),
            z: Vec::new(),
            loss_trace: Vec::new(),
            iterations: 1,
            converged: true,
            values,
            effects,
            diagnostics: serde_json::json!({
                "gram_condition_numbers": fit.condition_numbers,
                "residual_rms": fit.residual_rms,
                "spectral_radii": fit.model.matrices().iter().map(crate::linalg::spectral_radius).collect::<Vec<_>>(),
                "spectral_norms": fit.model.matrices().iter().map(crate::linalg::spectral_norm).collect::<Vec<_>>(),
            }),
        }
    }

    /// Report for the naive average baseline.
    pub fn naive(gamma: f64, effects: Vec<f64>, scaled: bool) -> Self {
        Self {
            method: Method::Naive,
            gamma,
            matrices: Vec::new(),
            z: Vec::new(),
            loss_trace: Vec::new(),
            iterations: 0,
            converged: true,
            values: Vec::new(),
            effects,
            diagnostics: serde_json::json!({ "discount_scaled": scaled }),
        }
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json_pretty() + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}
