//! Seeded Monte Carlo experiments: interval coverage, test size and power,
//! CLT diagnostics and first-order limit checks.
//!
//! Replicate `i` of an experiment always draws from
//! [`replicate_rng`]`(master_seed, i)`, so aggregates do not depend on the
//! order in which replicates are executed.

mod clt;
mod coverage;
mod first_order;
mod size_power;
pub mod stats;

pub use clt::{run_clt_diagnostics, CltReport, ComponentDiagnostics, ModeDiagnostics};
pub use coverage::{run_coverage, write_coverage_csv, CoverageReport, ReplicateInterval};
pub use first_order::{run_first_order, FirstOrderReport, FirstOrderReplicate};
pub use size_power::{evaluate_null, run_size_power, write_size_power_csv, NullSpec, SizePowerReport, SizePowerRow};

use crate::inference::InferenceError;
use crate::params::{FamilySpec, ModelParams, ParamSpec, ParamsError};
use crate::simulator::{replicate_rng, Schedule, SystemState, GENERATOR_ID};
use crate::spectral::SpectralError;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Params(#[from] ParamsError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Coverage,
    SizePower,
    CltDiagnostics,
    Analyze,
}

/// Which interval is built in a coverage study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum CiMethod {
    /// Two urns; `eta = None` is the conservative unknown-`η` interval.
    N2 {
        #[serde(default)]
        eta: Option<f64>,
    },
    MeanField,
    /// Uses the true `W` of the simulated model.
    General,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub params: ParamSpec,
    #[serde(rename = "S")]
    pub s: usize,
    pub t: u64,
    /// Truth-proxy step; defaults to `100·t`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_inf: Option<u64>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    pub master_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ci: Option<CiMethod>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub nulls: Vec<NullSpec>,
    /// Fraction of the horizon below which checkpoints are ignored by the
    /// regression estimators.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<Schedule>,
}

fn default_alpha() -> f64 {
    0.05
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn t_inf(&self) -> u64 {
        self.t_inf.unwrap_or(100 * self.t)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.s == 0 {
            return Err(HarnessError::Config("S must be at least 1".into()));
        }
        if self.t == 0 {
            return Err(HarnessError::Config("t must be positive".into()));
        }
        if self.t_inf() <= self.t {
            return Err(HarnessError::Config(format!("t_inf = {} must exceed t = {}", self.t_inf(), self.t)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(HarnessError::Config(format!("alpha = {} outside (0, 1)", self.alpha)));
        }
        if self.kind == ExperimentKind::SizePower && self.nulls.is_empty() {
            return Err(HarnessError::Config("size_power needs at least one null".into()));
        }
        self.params.build()?;
        Ok(())
    }

    /// The interval to use when none is configured: the family's own.
    pub fn ci_method(&self) -> CiMethod {
        if let Some(m) = &self.ci {
            return m.clone();
        }
        match &self.params {
            ParamSpec::Family(FamilySpec::N2 { eta, eta_w, .. }) => CiMethod::N2 { eta: Some(eta_w.unwrap_or(*eta)) },
            ParamSpec::Family(FamilySpec::MeanField { .. }) => CiMethod::MeanField,
            ParamSpec::Explicit(_) => CiMethod::General,
        }
    }
}

/// What one replicate exposes to the experiments: novelty counts and the
/// counts of the item with the largest system count, both at `t`, and
/// optionally the same quantities at the truth-proxy step.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Observation {
    pub d_t: Vec<u64>,
    pub item: Option<usize>,
    pub k_t: Vec<u64>,
    pub d_inf: Vec<u64>,
    pub k_inf: Vec<u64>,
}

pub(crate) fn observe(params: &ModelParams, master: u64, index: u64, t: u64, t_inf: Option<u64>) -> Observation {
    let mut state = SystemState::new(params.clone(), replicate_rng(master, index));
    state.advance_to(t);
    let n = state.n();
    let d_t = state.novelty_counts().to_vec();
    let item = state.top_colors(1).first().copied();
    let counts = |s: &SystemState| item.map(|c| s.counts(c).expect("tracked color exists").to_vec()).unwrap_or_else(|| vec![0; n]);
    let k_t = counts(&state);
    let (d_inf, k_inf) = match t_inf {
        Some(ti) => {
            state.advance_to(ti);
            (state.novelty_counts().to_vec(), counts(&state))
        }
        None => (Vec::new(), Vec::new()),
    };
    Observation { d_t, item, k_t, d_inf, k_inf }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub generator: String,
    pub command: String,
    pub master_seed: Option<u64>,
    pub config: serde_json::Value,
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, master_seed: Option<u64>, config: serde_json::Value) -> Self {
        Self {
            tool: "urnflow".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            generator: GENERATOR_ID.into(),
            command: command.into(),
            master_seed,
            config,
            outputs: Vec::new(),
        }
    }
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), HarnessError> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|source| HarnessError::Io { path: path.to_path_buf(), source })
}

/// Writes `manifest.json` into `dir`.
pub fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<PathBuf, HarnessError> {
    let path = dir.join("manifest.json");
    write_json(manifest, &path)?;
    Ok(path)
}

pub fn ensure_dir(dir: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir).map_err(|source| HarnessError::Io { path: dir.to_path_buf(), source })
}
