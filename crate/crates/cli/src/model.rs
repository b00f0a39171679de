//! The fitted-model artifact written by `fit` and read by `predict`.
//!
//! Every number is stored as a decimal string (the shortest representation
//! that round-trips), so a model file is byte-identical across platforms and
//! reading it back recovers the exact coefficients.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use semicomp::data::Process;
use semicomp::CoxFit;

use crate::{decimal, parse_decimal, CliError};

pub const MODEL_FORMAT: &str = "semicomp-model/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub protected_column: String,
    /// SHA-256 of the data file the model was fitted to.
    pub data_sha256: String,
    pub promotion: ProcessModel,
    pub retirement: ProcessModel,
}

/// One process's fit in the layout of a coefficient table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessModel {
    pub process: Process,
    pub sample_size: usize,
    pub events: usize,
    pub converged: bool,
    pub iterations: usize,
    pub log_likelihood: String,
    pub coefficients: Vec<CoefficientRow>,
    pub baseline_jumps: Vec<JumpRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRow {
    pub name: String,
    pub estimate: String,
    /// `NaN` for an aliased covariate.
    pub std_error: String,
    /// `exp(estimate)`.
    pub hazard_ratio: String,
    pub z: String,
    /// Two-sided Wald p-value.
    pub p_value: String,
    pub aliased: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpRow {
    pub time: String,
    pub jump: String,
}

/// Two-sided normal p-value of a Wald statistic.
pub fn wald_p_value(z: f64) -> f64 {
    erfc(z.abs() / std::f64::consts::SQRT_2)
}

impl ProcessModel {
    pub fn from_fit(fit: &CoxFit) -> Self {
        let se = fit.standard_errors();
        let coefficients = fit
            .covariate_names
            .iter()
            .enumerate()
            .map(|(j, name)| {
                let b = fit.beta_hat[j];
                let z = b / se[j];
                CoefficientRow {
                    name: name.clone(),
                    estimate: decimal(b),
                    std_error: decimal(se[j]),
                    hazard_ratio: decimal(b.exp()),
                    z: decimal(z),
                    p_value: decimal(wald_p_value(z)),
                    aliased: fit.aliased[j],
                }
            })
            .collect();
        Self {
            process: fit.process,
            sample_size: fit.sample_size,
            events: fit.events,
            converged: fit.converged,
            iterations: fit.iterations,
            log_likelihood: decimal(fit.log_likelihood),
            coefficients,
            baseline_jumps: fit
                .baseline_jumps
                .iter()
                .map(|j| JumpRow {
                    time: decimal(j.time),
                    jump: decimal(j.jump),
                })
                .collect(),
        }
    }

    pub fn covariate_names(&self) -> Vec<String> {
        self.coefficients.iter().map(|c| c.name.clone()).collect()
    }

    pub fn estimates(&self) -> Result<Vec<f64>, CliError> {
        self.coefficients
            .iter()
            .map(|c| {
                parse_decimal(&c.estimate).map_err(|e| CliError::Model(format!("{} {}: {e}", self.process, c.name)))
            })
            .collect()
    }
}

impl ModelFile {
    pub fn new(protected_column: &str, data_sha256: String, promotion: &CoxFit, retirement: &CoxFit) -> Self {
        Self {
            format: MODEL_FORMAT.into(),
            protected_column: protected_column.into(),
            data_sha256,
            promotion: ProcessModel::from_fit(promotion),
            retirement: ProcessModel::from_fit(retirement),
        }
    }

    pub fn process(&self, process: Process) -> &ProcessModel {
        match process {
            Process::Promotion => &self.promotion,
            Process::Retirement => &self.retirement,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let model: Self = serde_json::from_str(text).map_err(|e| CliError::Model(e.to_string()))?;
        if model.format != MODEL_FORMAT {
            return Err(CliError::Model(format!("unsupported format `{}`", model.format)));
        }
        Ok(model)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("model serializes");
        s.push('\n');
        s
    }
}
