//! Confidence intervals for the limit probability `P̃∞(c)` of an item.

use super::special::z_alpha;
use super::InferenceError;
use crate::spectral::{eigen_structure, sigma_det, Mode};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub center: f64,
    pub half_width: f64,
    pub level: f64,
    pub t: u64,
    pub c_factor: f64,
}

impl ConfidenceInterval {
    pub fn lower(&self) -> f64 {
        self.center - self.half_width
    }

    pub fn upper(&self) -> f64 {
        self.center + self.half_width
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lower() <= x && x <= self.upper()
    }
}

fn bernoulli_interval(p: f64, t: u64, c: f64, alpha: f64) -> Result<ConfidenceInterval, InferenceError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(InferenceError::InvalidInput(format!("alpha = {alpha} outside (0, 1)")));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(InferenceError::DegenerateCounts(format!("K~/t = {p} outside (0, 1)")));
    }
    let half_width = z_alpha(alpha) * (p * (1.0 - p) * c / t as f64).sqrt();
    Ok(ConfidenceInterval { center: p, half_width, level: 1.0 - alpha, t, c_factor: c })
}

/// `c_η = η² + (1−η)²`.
pub fn c_eta(eta: f64) -> f64 {
    eta * eta + (1.0 - eta) * (1.0 - eta)
}

/// `c_{r,η} = (r³η² + (1−η)²) / ((rη + 1−η)(r²η + 1−η))`, i.e. `vᵀdiag(u)v`
/// for the two-urn family.
pub fn c_r_eta(r: f64, eta: f64) -> f64 {
    (r.powi(3) * eta * eta + (1.0 - eta).powi(2)) / ((r * eta + 1.0 - eta) * (r * r * eta + 1.0 - eta))
}

/// Two-urn interval `K̃/t ± z_α t^{−1/2} sqrt((K̃/t)(1−K̃/t) c_η)` with
/// `K̃ = ηK₁ + (1−η)K₂`. With `eta = None` the center uses `η = 1/2` and the
/// factor `c_η` is replaced by its maximum 1.
pub fn ci_p_tilde_n2(k: &[u64], t: u64, eta: Option<f64>, alpha: f64) -> Result<ConfidenceInterval, InferenceError> {
    if k.len() != 2 {
        return Err(InferenceError::InvalidInput("need two item counts".into()));
    }
    let (e, c) = match eta {
        Some(e) if (0.0..=1.0).contains(&e) => (e, c_eta(e)),
        Some(e) => return Err(InferenceError::InvalidInput(format!("eta = {e} outside [0, 1]"))),
        None => (0.5, 1.0),
    };
    let kt = e * k[0] as f64 + (1.0 - e) * k[1] as f64;
    bernoulli_interval(kt / t as f64, t, c, alpha)
}

/// Mean-field interval `K̃/t ± z_α t^{−1/2} sqrt((K̃/t)(1−K̃/t)/N)`.
pub fn ci_p_tilde_meanfield(k: &[u64], t: u64, alpha: f64) -> Result<ConfidenceInterval, InferenceError> {
    let n = k.len();
    if n == 0 {
        return Err(InferenceError::InvalidInput("empty count vector".into()));
    }
    let kt = k.iter().sum::<u64>() as f64 / n as f64;
    bernoulli_interval(kt / t as f64, t, 1.0 / n as f64, alpha)
}

/// Interval for a general `W₀` (item counts, `Σ_det = I`):
/// `vᵀK/t ± z_α t^{−1/2} sqrt(g(vᵀK/t) vᵀv)`.
pub fn ci_general(k: &[u64], t: u64, w0: &DMatrix<f64>, alpha: f64) -> Result<ConfidenceInterval, InferenceError> {
    if k.len() != w0.nrows() {
        return Err(InferenceError::InvalidInput("count vector and matrix sizes differ".into()));
    }
    let eig = eigen_structure(w0)?;
    let sigma = sigma_det(&eig, Mode::W);
    let c = (eig.v.transpose() * &sigma * &eig.v)[(0, 0)];
    let kv = DVector::from_iterator(k.len(), k.iter().map(|&x| x as f64));
    bernoulli_interval(eig.phi_star * eig.v.dot(&kv) / t as f64, t, eig.phi_star * c, alpha)
}
