use super::stats::binomial_se;
use super::{observe, ExperimentConfig, HarnessError};
use crate::inference::{
    analytic_power, delta0_gamma_n2, test_gamma_meanfield, test_gamma_n2, test_general, test_w_meanfield, test_w_n2, Family,
    InferenceError, TestResult,
};
use crate::params::{rows_to_matrix, ModelParams};
use crate::spectral::{eigen_structure, Mode};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// One null hypothesis to evaluate on every replicate. The two-urn `Γ` test
/// takes `r` and `γ*` from the simulated model unless given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullSpec {
    pub test: Family,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iota0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_star: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi0: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizePowerRow {
    pub null: NullSpec,
    pub delta0: f64,
    /// `Δ` of the simulated model for the tested matrix.
    pub delta1: f64,
    pub evaluated: usize,
    pub rejections: usize,
    pub rate: f64,
    pub standard_error: f64,
    pub analytic_power: f64,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizePowerReport {
    pub config: ExperimentConfig,
    pub rows: Vec<SizePowerRow>,
}

struct Prepared {
    null: NullSpec,
    mode: Mode,
    r: f64,
    gamma_star: f64,
    phi0: Option<(DMatrix<f64>, f64)>,
    delta0: f64,
    delta1: f64,
}

fn need_iota(n: &NullSpec) -> Result<f64, HarnessError> {
    n.iota0.ok_or_else(|| HarnessError::Config(format!("{:?} null needs iota0", n.test)))
}

fn prepare(null: &NullSpec, n: usize, truth: Option<&ModelParams>) -> Result<Prepared, HarnessError> {
    let mode = match null.test {
        Family::GammaN2 | Family::GammaMeanField => Mode::Gamma,
        Family::WN2 | Family::WMeanField => Mode::W,
        Family::General => null.mode.ok_or_else(|| HarnessError::Config("general null needs a mode".into()))?,
    };
    let eig = match truth {
        Some(p) => Some(eigen_structure(match mode {
            Mode::Gamma => p.gamma(),
            Mode::W => p.w(),
        })?),
        None => None,
    };
    let delta1 = eig.as_ref().map_or(f64::NAN, |e| e.gap());
    let r = null.r.or(eig.as_ref().map(|e| e.u[0] / e.u[1.min(e.n() - 1)]));
    let gamma_star = null.gamma_star.or(eig.as_ref().map(|e| e.phi_star));
    let mut phi0 = None;
    let delta0 = match null.test {
        Family::GammaN2 => {
            let (Some(r), Some(g)) = (r, gamma_star) else {
                return Err(HarnessError::Config("gamma_n2 null needs r and gamma_star".into()));
            };
            delta0_gamma_n2(r, g, need_iota(null)?, null.eta0.unwrap_or(0.5))
        }
        Family::WN2 | Family::GammaMeanField | Family::WMeanField => need_iota(null)? - 0.5,
        Family::General => {
            let rows = null.phi0.as_ref().ok_or_else(|| HarnessError::Config("general null needs phi0".into()))?;
            let m = rows_to_matrix(n, rows, "phi0")?;
            let e0 = eigen_structure(&m)?;
            phi0 = Some((m, e0.phi_star));
            e0.gap()
        }
    };
    Ok(Prepared { null: null.clone(), mode, r: r.unwrap_or(f64::NAN), gamma_star: gamma_star.unwrap_or(f64::NAN), phi0, delta0, delta1 })
}

/// Evaluates one null on observed novelty counts `d` and item counts `k` at
/// step `t`. The two-urn `Γ` null must carry `r` and `gamma_star`.
pub fn evaluate_null(null: &NullSpec, d: &[u64], k: &[u64], t: u64) -> Result<TestResult, HarnessError> {
    Ok(prepare(null, d.len().max(k.len()), None)?.evaluate(d, k, t)?)
}

impl Prepared {
    fn evaluate(&self, d: &[u64], k: &[u64], t: u64) -> Result<TestResult, InferenceError> {
        let iota0 = self.null.iota0.unwrap_or(f64::NAN);
        match self.null.test {
            Family::GammaN2 => test_gamma_n2(d, self.r, self.gamma_star, iota0, self.null.eta0.unwrap_or(0.5)),
            Family::WN2 => test_w_n2(k, t, iota0),
            Family::GammaMeanField => test_gamma_meanfield(d, iota0),
            Family::WMeanField => test_w_meanfield(k, t, iota0),
            Family::General => {
                let (m, phi_star) = self.phi0.as_ref().expect("prepared general null");
                let b: Vec<f64> = match self.mode {
                    Mode::Gamma => d.iter().map(|&x| x as f64 / (t as f64).powf(*phi_star)).collect(),
                    Mode::W => k.iter().map(|&x| x as f64 / t as f64).collect(),
                };
                test_general(&b, m, self.mode, t as f64)
            }
        }
    }
}

/// Rejection rates of every configured null over `S` replicates at step `t`,
/// beside the analytic `(Δ₀/Δ₁)χ²` prediction. `W` tests use the item with
/// the largest system count at `t`.
pub fn run_size_power(config: &ExperimentConfig) -> Result<SizePowerReport, HarnessError> {
    config.validate()?;
    let params = config.params.build()?;
    let prepared: Vec<Prepared> = config.nulls.iter().map(|n| prepare(n, params.n(), Some(&params))).collect::<Result<_, _>>()?;
    let t = config.t;
    // per replicate, per null: Some(reject) or None on failure
    let outcomes: Vec<Vec<Option<bool>>> = (0..config.s as u64)
        .into_par_iter()
        .map(|i| {
            let obs = observe(&params, config.master_seed, i, t, None);
            prepared.iter().map(|p| p.evaluate(&obs.d_t, &obs.k_t, t).ok().map(|r| r.rejects(config.alpha))).collect()
        })
        .collect();
    let mut rows = Vec::with_capacity(prepared.len());
    for (j, p) in prepared.iter().enumerate() {
        let evaluated = outcomes.iter().filter(|o| o[j].is_some()).count();
        let rejections = outcomes.iter().filter(|o| o[j] == Some(true)).count();
        let rate = rejections as f64 / evaluated.max(1) as f64;
        let df = if matches!(p.null.test, Family::GammaN2 | Family::WN2) { 1 } else { params.n() as u32 - 1 };
        rows.push(SizePowerRow {
            null: p.null.clone(),
            delta0: p.delta0,
            delta1: p.delta1,
            evaluated,
            rejections,
            rate,
            standard_error: binomial_se(rate, evaluated.max(1)),
            analytic_power: analytic_power(p.delta0, p.delta1, df, config.alpha)?,
            failures: config.s - evaluated,
        });
    }
    Ok(SizePowerReport { config: config.clone(), rows })
}

pub fn write_size_power_csv(report: &SizePowerReport, path: &Path) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["test", "iota0", "eta0", "delta0", "delta1", "evaluated", "rejections", "rate", "se", "analytic_power"])?;
    let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    for r in &report.rows {
        w.write_record([
            serde_json::to_value(r.null.test)?.as_str().unwrap_or_default().to_string(),
            opt(r.null.iota0),
            opt(r.null.eta0),
            r.delta0.to_string(),
            r.delta1.to_string(),
            r.evaluated.to_string(),
            r.rejections.to_string(),
            r.rate.to_string(),
            r.standard_error.to_string(),
            r.analytic_power.to_string(),
        ])?;
    }
    w.flush().map_err(|source| HarnessError::Io { path: path.to_path_buf(), source })?;
    Ok(())
}
