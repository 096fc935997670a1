use std::path::Path;

use ngdim_core::estimator::DimensionEstimate;
use ngdim_core::hypothesis::{TestMethod, TestOutcome};
use ngdim_core::simulation::{EstimatorReport, ModelName, SimulationReport};
use serde::Serialize;

use crate::error::CliError;

pub const SCHEMA: &str = "ngdim-report/1";

/// Top-level report document. Holds everything needed to rerun the command:
/// the resolved configuration, the seed and the program version.
#[derive(Debug, Serialize)]
pub struct Report<C: Serialize, R: Serialize> {
    pub schema: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub generator: &'static str,
    #[serde(with = "ngdim_core::rng::seed_serde")]
    pub seed: u64,
    pub config: C,
    pub result: R,
}

impl<C: Serialize, R: Serialize> Report<C, R> {
    pub fn new(command: &'static str, seed: u64, config: C, result: R) -> Self {
        Self {
            schema: SCHEMA,
            version: env!("CARGO_PKG_VERSION"),
            command,
            generator: ngdim_core::rng::GENERATOR_NAME,
            seed,
            config,
            result,
        }
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        Ok(toml::to_string(self)?)
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        std::fs::write(path, self.to_toml()?).map_err(|e| CliError::io(path, e))
    }
}

/// Where the data came from.
#[derive(Debug, Clone, Serialize)]
pub struct InputEcho {
    pub source: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data_model: Option<ModelName>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data_seed: Option<String>,
    pub n: usize,
    pub p: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct TestEntry {
    pub rejected: bool,
    #[serde(flatten)]
    pub outcome: TestOutcome,
}

#[derive(Debug, Clone, Serialize)]
pub struct TestResult {
    pub alpha: f64,
    pub tests: Vec<TestEntry>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimateResult {
    pub estimate: DimensionEstimate,
    pub tests: Vec<TestOutcome>,
}

#[derive(Debug, Clone, Serialize)]
#[serde(untagged)]
pub enum SimulateResult {
    Rejection { experiments: Vec<SimulationReport> },
    Estimator { experiments: Vec<EstimatorReport> },
}

#[derive(Debug, Clone, Serialize)]
pub struct UnmixReport {
    /// Unmixing matrix, one row per latent component.
    pub w: Vec<Vec<f64>>,
    pub d: Vec<f64>,
    pub location: Vec<f64>,
    pub ordering: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_index: Option<usize>,
}

pub fn method_label(m: TestMethod) -> &'static str {
    match m {
        TestMethod::Bootstrap => "bootstrap",
        TestMethod::AsymptoticTk => "asymptotic T_k",
        TestMethod::AsymptoticTk1 => "chi2 T_k1",
        TestMethod::AsymptoticTk2 => "chi2 T_k2",
    }
}

/// Left-aligned plain-text table.
pub fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        padded.join("  ").trim_end().to_string() + "\n"
    };
    let mut out = line(header.to_vec());
    out += &line(widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().iter().map(String::as_str).collect());
    for row in rows {
        out += &line(row.iter().map(String::as_str).collect());
    }
    out
}
