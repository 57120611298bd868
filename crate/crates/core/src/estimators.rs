//! First-order estimators: the Heaps exponent `γ*`, eigenvector ratios
//! `u_h/u_j`, and the plug-in limit probability of an item.

use crate::simulator::Trajectory;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MIN_POINTS: usize = 5;
pub const DEFAULT_WINDOW: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimatorError {
    #[error("only {found} checkpoints in window, need at least {MIN_POINTS}")]
    InsufficientData { found: usize },
    #[error("reference series is zero at t = {t}")]
    ZeroDenominator { t: u64 },
    #[error("window fraction must lie in [0, 1), got {0}")]
    BadWindow(f64),
    #[error("urn index {0} out of range")]
    BadUrn(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    pub slope: f64,
    /// Intercept of the base-10 log-log fit.
    pub intercept: f64,
    pub window: (u64, u64),
    pub n_points: usize,
    pub residual_rms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatioMethod {
    #[default]
    GeometricMean,
    InterceptDifference,
}

/// Ordinary least squares `y = intercept + slope·x`; returns residual RMS too.
pub fn ols(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = xs.iter().zip(ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    (slope, intercept, (rss / n).sqrt())
}

fn window_indices(checkpoints: &[u64], window: f64) -> Result<Vec<usize>, EstimatorError> {
    if !(0.0..1.0).contains(&window) {
        return Err(EstimatorError::BadWindow(window));
    }
    let horizon = *checkpoints.last().ok_or(EstimatorError::InsufficientData { found: 0 })?;
    let lo = window * horizon as f64;
    let idx: Vec<usize> = (0..checkpoints.len()).filter(|&i| checkpoints[i] as f64 >= lo).collect();
    if idx.len() < MIN_POINTS {
        return Err(EstimatorError::InsufficientData { found: idx.len() });
    }
    Ok(idx)
}

/// Log-log regression of `series` on `checkpoints` over `[window·T, T]`.
pub fn loglog_fit(checkpoints: &[u64], series: &[f64], window: f64) -> Result<RegressionFit, EstimatorError> {
    let idx = window_indices(checkpoints, window)?;
    let mut xs = Vec::with_capacity(idx.len());
    let mut ys = Vec::with_capacity(idx.len());
    for &i in &idx {
        if series[i] <= 0.0 {
            return Err(EstimatorError::ZeroDenominator { t: checkpoints[i] });
        }
        xs.push((checkpoints[i] as f64).log10());
        ys.push(series[i].log10());
    }
    let (slope, intercept, residual_rms) = ols(&xs, &ys);
    Ok(RegressionFit {
        slope,
        intercept,
        window: (checkpoints[idx[0]], checkpoints[*idx.last().unwrap()]),
        n_points: idx.len(),
        residual_rms,
    })
}

/// `γ̂*`: slope of `log Σ_h D*_{t,h}` against `log t`.
pub fn heaps_exponent(traj: &Trajectory, window: f64) -> Result<RegressionFit, EstimatorError> {
    let totals: Vec<f64> = (0..traj.checkpoints.len()).map(|i| traj.d_total(i) as f64).collect();
    loglog_fit(&traj.checkpoints, &totals, window)
}

/// Estimate of `u_h/u_j` from the tail window.
pub fn eigvec_ratio(traj: &Trajectory, h: usize, j: usize, window: f64, method: RatioMethod) -> Result<f64, EstimatorError> {
    let n = traj.n();
    for &k in &[h, j] {
        if k >= n {
            return Err(EstimatorError::BadUrn(k));
        }
    }
    let series = |k: usize| -> Vec<f64> { traj.d_star.iter().map(|d| d[k] as f64).collect() };
    match method {
        RatioMethod::GeometricMean => {
            let idx = window_indices(&traj.checkpoints, window)?;
            let mut acc = 0.0;
            for &i in &idx {
                let (num, den) = (traj.d_star[i][h] as f64, traj.d_star[i][j] as f64);
                if den == 0.0 || num == 0.0 {
                    return Err(EstimatorError::ZeroDenominator { t: traj.checkpoints[i] });
                }
                acc += (num / den).ln();
            }
            Ok((acc / idx.len() as f64).exp())
        }
        RatioMethod::InterceptDifference => {
            let fh = loglog_fit(&traj.checkpoints, &series(h), window)?;
            let fj = loglog_fit(&traj.checkpoints, &series(j), window)?;
            Ok(10f64.powf(fh.intercept - fj.intercept))
        }
    }
}

/// Ratios `u_h/u_j` for every `h` (entry `j` is 1).
pub fn eigvec_ratios(traj: &Trajectory, j: usize, window: f64, method: RatioMethod) -> Result<Vec<f64>, EstimatorError> {
    (0..traj.n()).map(|h| if h == j { Ok(1.0) } else { eigvec_ratio(traj, h, j, window, method) }).collect()
}

/// `1ᵀK_t(c)/(N t)`.
pub fn p_tilde_hat(k: &[u64], t: u64) -> f64 {
    k.iter().sum::<u64>() as f64 / (k.len() as f64 * t as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::TrajectoryMeta;
    use proptest::prelude::*;

    fn synthetic(d: impl Fn(u64) -> Vec<u64>, cps: Vec<u64>) -> Trajectory {
        let n = d(1).len();
        Trajectory {
            meta: TrajectoryMeta::bare(n, *cps.last().unwrap(), "test"),
            d_star: cps.iter().map(|&t| d(t)).collect(),
            k_series: vec![vec![]; cps.len()],
            tracked_items: vec![],
            checkpoints: cps,
        }
    }

    #[test]
    fn exact_power_law_slope() {
        let cps: Vec<u64> = (0..=40).map(|k| 10f64.powf(2.0 + k as f64 / 10.0).round() as u64).collect();
        let totals: Vec<f64> = cps.iter().map(|&t| 3.0 * (t as f64).powf(0.5)).collect();
        let fit = loglog_fit(&cps, &totals, 0.1).unwrap();
        assert!((fit.slope - 0.5).abs() < 1e-10);
        assert!((10f64.powf(fit.intercept) - 3.0).abs() < 1e-9);
        assert!(fit.residual_rms < 1e-10);
        assert!(fit.n_points >= MIN_POINTS);
    }

    #[test]
    fn insufficient_data() {
        let traj = synthetic(|t| vec![t, t], vec![1, 2, 3, 1000]);
        assert_eq!(heaps_exponent(&traj, 0.1).unwrap_err(), EstimatorError::InsufficientData { found: 1 });
    }

    #[test]
    fn zero_denominator() {
        let cps: Vec<u64> = (1..=20).map(|k| k * 10).collect();
        let traj = synthetic(|t| vec![t, 0], cps);
        assert!(matches!(
            eigvec_ratio(&traj, 0, 1, 0.1, RatioMethod::GeometricMean),
            Err(EstimatorError::ZeroDenominator { .. })
        ));
    }

    #[test]
    fn ratio_methods_agree_on_exact_data() {
        let cps: Vec<u64> = (1..=50).map(|k| k * 1000).collect();
        let traj = synthetic(|t| vec![3 * t, 4 * t], cps);
        for m in [RatioMethod::GeometricMean, RatioMethod::InterceptDifference] {
            assert!((eigvec_ratio(&traj, 0, 1, 0.1, m).unwrap() - 0.75).abs() < 1e-12);
        }
        assert_eq!(eigvec_ratios(&traj, 1, 0.1, RatioMethod::GeometricMean).unwrap()[1], 1.0);
    }

    #[test]
    fn p_tilde_examples() {
        assert_eq!(p_tilde_hat(&[500, 500], 1000), 0.5);
        assert_eq!(p_tilde_hat(&[0, 0], 10), 0.0);
    }

    proptest! {
        #[test]
        fn ratio_scale_invariant(scale in 1u64..20, noise in proptest::collection::vec(1u64..50, 30)) {
            let cps: Vec<u64> = (1..=30).map(|k| k * 100).collect();
            let base: Vec<Vec<u64>> = cps.iter().zip(&noise).map(|(&t, &e)| vec![t + e, 2 * t]).collect();
            let mk = |s: u64| Trajectory {
                meta: TrajectoryMeta::bare(2, 3000, "test"),
                d_star: base.iter().map(|d| d.iter().map(|x| x * s).collect()).collect(),
                k_series: vec![vec![]; 30],
                tracked_items: vec![],
                checkpoints: cps.clone(),
            };
            for m in [RatioMethod::GeometricMean, RatioMethod::InterceptDifference] {
                let a = eigvec_ratio(&mk(1), 0, 1, 0.1, m).unwrap();
                let b = eigvec_ratio(&mk(scale), 0, 1, 0.1, m).unwrap();
                prop_assert!((a - b).abs() < 1e-10 * a);
            }
        }
    }
}
