//! χ² tests on the interaction matrices `Γ` and `W`.

use super::special::{chi2_isf, chi2_sf};
use super::InferenceError;
use crate::params::{admissible_interval, w_interval};
use crate::spectral::{covariance_blocks, eigen_structure, sigma_det, whitening, Mode};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    GammaN2,
    WN2,
    GammaMeanField,
    WMeanField,
    General,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub family: Family,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iota0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta0: Option<f64>,
    #[serde(rename = "N")]
    pub n: usize,
    /// Composite null the statistic remains valid for.
    pub side: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub df: u32,
    pub p_value: f64,
    pub delta0: f64,
    pub hypothesis: Hypothesis,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl TestResult {
    fn new(statistic: f64, df: u32, delta0: f64, hypothesis: Hypothesis) -> Self {
        Self { statistic, df, p_value: chi2_sf(statistic, df), delta0, hypothesis, warnings: Vec::new() }
    }

    pub fn rejects(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }
}

fn check_counts(mean: f64, t: Option<f64>) -> Result<(), InferenceError> {
    let bad = match t {
        Some(t) => !(mean > 0.0 && mean < t),
        None => mean <= 0.0,
    };
    if bad {
        return Err(InferenceError::DegenerateCounts(format!("average count {mean} outside the open range")));
    }
    Ok(())
}

fn check_meanfield_iota(iota0: f64) -> Result<(), InferenceError> {
    if !(iota0 > 0.5 && iota0 <= 1.0) {
        return Err(InferenceError::InadmissibleNull(format!("iota0 = {iota0} outside (1/2, 1]")));
    }
    Ok(())
}

/// `Δ₀` of the two-urn `Γ` test.
pub fn delta0_gamma_n2(r: f64, gamma_star: f64, iota0: f64, eta0: f64) -> f64 {
    iota0 / gamma_star * ((1.0 - eta0) + eta0 * r * r) / r - 0.5
}

/// Two-urn test on `Γ`:
/// `2/(r(1+r)) · Δ₀ · D*₂ (D*₁/D*₂ − r)²  ~ χ²(1)`.
pub fn test_gamma_n2(d_star: &[u64], r: f64, gamma_star: f64, iota0: f64, eta0: f64) -> Result<TestResult, InferenceError> {
    if d_star.len() != 2 {
        return Err(InferenceError::InvalidInput("need two novelty counts".into()));
    }
    let interval = admissible_interval(r, gamma_star, eta0).map_err(|e| InferenceError::InadmissibleNull(e.to_string()))?;
    if !interval.contains(iota0) {
        return Err(InferenceError::InadmissibleNull(format!("iota0 = {iota0} outside {interval}")));
    }
    let delta0 = delta0_gamma_n2(r, gamma_star, iota0, eta0);
    if delta0 <= 0.0 {
        return Err(InferenceError::InadmissibleNull(format!("Delta0 = {delta0} <= 0")));
    }
    let (d1, d2) = (d_star[0] as f64, d_star[1] as f64);
    check_counts(d2, None)?;
    let statistic = 2.0 / (r * (1.0 + r)) * delta0 * d2 * (d1 / d2 - r).powi(2);
    let side = if r > 1.0 {
        "iota>=iota0, eta>=1/2"
    } else if r < 1.0 {
        "iota>=iota0, eta<=1/2"
    } else {
        "iota>=iota0"
    };
    let hyp = Hypothesis { family: Family::GammaN2, iota0: Some(iota0), eta0: Some(eta0), n: 2, side: side.into() };
    Ok(TestResult::new(statistic, 1, delta0, hyp))
}

/// Two-urn test on `W`: `Δ₀ (K₁−K₂)² / (K̃(1−K̃/t)) ~ χ²(1)` with
/// `K̃ = (K₁+K₂)/2` and `Δ₀ = ι₀ − 1/2`.
pub fn test_w_n2(k: &[u64], t: u64, iota0: f64) -> Result<TestResult, InferenceError> {
    if k.len() != 2 {
        return Err(InferenceError::InvalidInput("need two item counts".into()));
    }
    let interval = w_interval(0.5).map_err(|e| InferenceError::InadmissibleNull(e.to_string()))?;
    if !(iota0 > 0.5 && iota0 < interval.upper) {
        return Err(InferenceError::InadmissibleNull(format!("iota0 = {iota0} outside (1/2, 2)")));
    }
    let t = t as f64;
    let (k1, k2) = (k[0] as f64, k[1] as f64);
    let kt = 0.5 * (k1 + k2);
    check_counts(kt, Some(t))?;
    let delta0 = iota0 - 0.5;
    let statistic = delta0 * (k1 - k2).powi(2) / (kt * (1.0 - kt / t));
    let hyp = Hypothesis { family: Family::WN2, iota0: Some(iota0), eta0: Some(0.5), n: 2, side: "iota>=iota0".into() };
    Ok(TestResult::new(statistic, 1, delta0, hyp))
}

fn spread(x: &[f64]) -> (f64, f64) {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    (mean, x.iter().map(|v| (v - mean).powi(2)).sum())
}

/// Mean-field test on `Γ`: `2(ι₀−1/2)‖D* − D̃*1‖²/D̃* ~ χ²(N−1)`.
pub fn test_gamma_meanfield(d_star: &[u64], iota0: f64) -> Result<TestResult, InferenceError> {
    check_meanfield_iota(iota0)?;
    let n = d_star.len();
    if n < 2 {
        return Err(InferenceError::InvalidInput("need at least two urns".into()));
    }
    let x: Vec<f64> = d_star.iter().map(|&d| d as f64).collect();
    let (mean, ss) = spread(&x);
    check_counts(mean, None)?;
    let delta0 = iota0 - 0.5;
    let hyp = Hypothesis { family: Family::GammaMeanField, iota0: Some(iota0), eta0: None, n, side: "iota>=iota0".into() };
    Ok(TestResult::new(2.0 * delta0 * ss / mean, (n - 1) as u32, delta0, hyp))
}

/// Mean-field test on `W`: `2(ι₀−1/2)‖K − K̃1‖²/(K̃(1−K̃/t)) ~ χ²(N−1)`.
pub fn test_w_meanfield(k: &[u64], t: u64, iota0: f64) -> Result<TestResult, InferenceError> {
    check_meanfield_iota(iota0)?;
    let n = k.len();
    if n < 2 {
        return Err(InferenceError::InvalidInput("need at least two urns".into()));
    }
    let x: Vec<f64> = k.iter().map(|&v| v as f64).collect();
    let (mean, ss) = spread(&x);
    let t = t as f64;
    check_counts(mean, Some(t))?;
    let delta0 = iota0 - 0.5;
    let hyp = Hypothesis { family: Family::WMeanField, iota0: Some(iota0), eta0: None, n, side: "iota>=iota0".into() };
    Ok(TestResult::new(2.0 * delta0 * ss / (mean * (1.0 - mean / t)), (n - 1) as u32, delta0, hyp))
}

/// Test of `H₀: Φ = Φ₀` from an observable `B_t`:
/// `‖t^{φ*/2} g(φ*B̃_t)^{−1/2} L (O)ᵀ U Vᵀ B_t‖² ~ χ²(N−1)` with
/// `B̃_t = vᵀB_t` and the whitening of `M^{33}` for the mode's `Σ_det`.
/// Pass `B = D*/t^{γ*}` for [`Mode::Gamma`] and `B = K_t(c)/t` for [`Mode::W`].
pub fn test_general(b: &[f64], phi0: &DMatrix<f64>, mode: Mode, t: f64) -> Result<TestResult, InferenceError> {
    let n = phi0.nrows();
    if b.len() != n || n < 2 {
        return Err(InferenceError::InvalidInput(format!("observable of length {} for a {n}x{n} matrix", b.len())));
    }
    let eig = eigen_structure(phi0)?;
    let blocks = covariance_blocks(&eig, &sigma_det(&eig, mode))?;
    let whiten = whitening(&blocks.m33)?;
    let b = DVector::from_column_slice(b);
    let b_tilde = eig.v.dot(&b);
    let g = mode.g(eig.phi_star * b_tilde);
    if !(g > 0.0) {
        return Err(InferenceError::DegenerateCounts(format!("g(phi* B~) = {g} is not positive")));
    }
    let fluct = &whiten * (eig.complement_projector() * &b);
    let statistic = t.powf(eig.phi_star) * fluct.norm_squared() / g;
    let delta0 = eig.gap();
    let hyp = Hypothesis { family: Family::General, iota0: None, eta0: None, n, side: "phi=phi0".into() };
    let mut result = TestResult::new(statistic, (n - 1) as u32, delta0, hyp);
    if let Some(p2) = eig.phi2_star {
        if p2.im.abs() > 1e-10 {
            result.warnings.push(format!("second eigenvalue is complex ({} + {}i); Delta uses its real part", p2.re, p2.im));
        }
    }
    Ok(result)
}

/// Asymptotic power under `H₁`, where the statistic is `(Δ₀/Δ₁)χ²(df)`.
pub fn analytic_power(delta0: f64, delta1: f64, df: u32, alpha: f64) -> Result<f64, InferenceError> {
    if !(delta0 > 0.0 && delta1 > 0.0) {
        return Err(InferenceError::InadmissibleNull(format!("Delta0 = {delta0}, Delta1 = {delta1} must be positive")));
    }
    Ok(chi2_sf(chi2_isf(alpha, df) * delta1 / delta0, df))
}
