//! Hypothesis tests, confidence intervals and power.

mod ci;
mod hypothesis;
pub mod special;

pub use ci::{c_eta, c_r_eta, ci_general, ci_p_tilde_meanfield, ci_p_tilde_n2, ConfidenceInterval};
pub use hypothesis::{
    analytic_power, delta0_gamma_n2, test_gamma_meanfield, test_gamma_n2, test_general, test_w_meanfield, test_w_n2, Family,
    Hypothesis, TestResult,
};
pub use special::{chi2_isf, chi2_sf, normal_quantile, z_alpha};

use crate::spectral::SpectralError;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InferenceError {
    #[error("inadmissible null hypothesis: {0}")]
    InadmissibleNull(String),
    #[error("degenerate counts: {0}")]
    DegenerateCounts(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}
