use super::stats::{covariance, excess_kurtosis, mean, normal_ks_distance, skewness, variance};
use super::{observe, ExperimentConfig, HarnessError};
use crate::spectral::{c_det, covariance_blocks, eigen_structure, sigma_det, whitening, EigenStructure, Mode};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentDiagnostics {
    pub mean: f64,
    pub standard_error: f64,
    pub variance: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
    pub ks_distance: f64,
}

impl ComponentDiagnostics {
    fn of(x: &[f64]) -> Self {
        let var = variance(x);
        Self {
            mean: mean(x),
            standard_error: (var / x.len() as f64).sqrt(),
            variance: var,
            skewness: skewness(x),
            excess_kurtosis: excess_kurtosis(x),
            ks_distance: normal_ks_distance(x),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeDiagnostics {
    pub mode: Mode,
    pub replicates: usize,
    /// Fluctuations around the truth proxy divided by the plug-in random factor.
    pub fluctuation: Vec<ComponentDiagnostics>,
    pub empirical_covariance: Vec<Vec<f64>>,
    pub theoretical_covariance: Vec<Vec<f64>>,
    /// `tr(empirical) / tr(theoretical)`.
    pub variance_ratio: f64,
    /// Normalized shares around the proxy shares, against `Q C_det Qᵀ`.
    pub share_covariance: Vec<Vec<f64>>,
    pub share_theoretical: Vec<Vec<f64>>,
    pub share_variance_ratio: f64,
    /// Whitened complement components; each should be `N(0,1)`.
    pub whitened: Vec<ComponentDiagnostics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CltReport {
    pub config: ExperimentConfig,
    pub gamma: ModeDiagnostics,
    pub w: ModeDiagnostics,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn trace(m: &[Vec<f64>]) -> f64 {
    (0..m.len()).map(|i| m[i][i]).sum()
}

struct ModeSetup {
    eig: EigenStructure,
    c_det: DMatrix<f64>,
    whiten: DMatrix<f64>,
    q: DMatrix<f64>,
}

impl ModeSetup {
    fn new(phi: &DMatrix<f64>, mode: Mode) -> Result<Self, HarnessError> {
        let eig = eigen_structure(phi)?;
        let c = c_det(&eig, mode)?;
        let whiten = whitening(&covariance_blocks(&eig, &sigma_det(&eig, mode))?.m33)?;
        let n = eig.n();
        let u_sum = eig.u.sum();
        let q = DMatrix::identity(n, n) - &eig.u * DVector::from_element(n, 1.0 / u_sum).transpose();
        Ok(Self { eig, c_det: c, whiten, q })
    }

    /// Returns (studentized fluctuation, studentized share fluctuation,
    /// whitened complement) for one replicate.
    fn sample(&self, mode: Mode, b_t: &DVector<f64>, b_inf: &DVector<f64>, scale: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let phi = self.eig.phi_star;
        let b_tilde = self.eig.v.dot(b_t);
        let g = mode.g(phi * b_tilde);
        let sd = g.sqrt();
        let fluct: Vec<f64> = ((b_t - b_inf) * (scale / sd)).iter().copied().collect();
        let share = |b: &DVector<f64>| b / b.sum();
        let u_sum = self.eig.u.sum();
        // share − proxy share ≈ Q δ / (vᵀB · 1ᵀu)
        let share_fluct: Vec<f64> = ((share(b_t) - share(b_inf)) * (scale * b_tilde * u_sum / sd)).iter().copied().collect();
        let whitened: Vec<f64> = (&self.whiten * (self.eig.complement_projector() * b_t) * (scale / sd)).iter().copied().collect();
        (fluct, share_fluct, whitened)
    }
}

fn summarize(mode: Mode, setup: &ModeSetup, samples: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)>) -> ModeDiagnostics {
    let column = |xs: &[Vec<f64>], j: usize| -> Vec<f64> { xs.iter().map(|r| r[j]).collect() };
    let fl: Vec<Vec<f64>> = samples.iter().map(|s| s.0.clone()).collect();
    let sh: Vec<Vec<f64>> = samples.iter().map(|s| s.1.clone()).collect();
    let wh: Vec<Vec<f64>> = samples.iter().map(|s| s.2.clone()).collect();
    let emp = covariance(&fl);
    let theory = rows(&setup.c_det);
    let share_emp = covariance(&sh);
    let share_theory = rows(&(&setup.q * &setup.c_det * setup.q.transpose()));
    ModeDiagnostics {
        mode,
        replicates: samples.len(),
        fluctuation: (0..fl[0].len()).map(|j| ComponentDiagnostics::of(&column(&fl, j))).collect(),
        variance_ratio: trace(&emp) / trace(&theory),
        empirical_covariance: emp,
        theoretical_covariance: theory,
        share_variance_ratio: trace(&share_emp) / trace(&share_theory),
        share_covariance: share_emp,
        share_theoretical: share_theory,
        whitened: (0..wh[0].len()).map(|j| ComponentDiagnostics::of(&column(&wh, j))).collect(),
    }
}

/// Compares the simulated fluctuations of `D*_t/t^{γ*}` and of `K_t(c)/t`
/// (for the item with the largest system count at `t`) with their Gaussian
/// limits. The random factors `Z̃**` and `P̃(1−P̃)` are replaced by per-replicate
/// plug-ins and the limits by the values at `t_inf`.
pub fn run_clt_diagnostics(config: &ExperimentConfig) -> Result<CltReport, HarnessError> {
    config.validate()?;
    if config.s < 2 {
        return Err(HarnessError::Config("CLT diagnostics need S >= 2".into()));
    }
    let params = config.params.build()?;
    let gs = ModeSetup::new(params.gamma(), Mode::Gamma)?;
    let ws = ModeSetup::new(params.w(), Mode::W)?;
    let (t, t_inf) = (config.t, config.t_inf());
    let gamma_star = gs.eig.phi_star;
    let per: Vec<_> = (0..config.s as u64)
        .into_par_iter()
        .map(|i| {
            let obs = observe(&params, config.master_seed, i, t, Some(t_inf));
            let vec = |x: &[u64], scale: f64| DVector::from_iterator(x.len(), x.iter().map(|&v| v as f64 / scale));
            let tg = (t as f64).powf(gamma_star);
            let g = gs.sample(
                Mode::Gamma,
                &vec(&obs.d_t, tg),
                &vec(&obs.d_inf, (t_inf as f64).powf(gamma_star)),
                tg.sqrt(),
            );
            let w = ws.sample(Mode::W, &vec(&obs.k_t, t as f64), &vec(&obs.k_inf, t_inf as f64), (t as f64).sqrt());
            (g, w)
        })
        .collect();
    let (gam, w): (Vec<_>, Vec<_>) = per.into_iter().unzip();
    Ok(CltReport { config: config.clone(), gamma: summarize(Mode::Gamma, &gs, gam), w: summarize(Mode::W, &ws, w) })
}
