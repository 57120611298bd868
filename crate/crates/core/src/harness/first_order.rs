use super::{ExperimentConfig, HarnessError};
use crate::estimators::{eigvec_ratios, heaps_exponent, RatioMethod, DEFAULT_WINDOW};
use crate::simulator::{replicate_rng, SystemState, Trajectory, TrajectoryMeta};
use crate::spectral::eigen_structure;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirstOrderReplicate {
    pub replicate: u64,
    pub gamma_hat: Option<f64>,
    /// `û_h/û_N` for each urn.
    pub ratios: Option<Vec<f64>>,
    /// `K_t(h,c)/Σ_j K_t(j,c)` for the item with the largest system count.
    pub top_share: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirstOrderReport {
    pub config: ExperimentConfig,
    pub gamma_star: f64,
    /// `u_h/u_N` of the true `Γ`.
    pub true_ratios: Vec<f64>,
    pub replicates: Vec<FirstOrderReplicate>,
    pub median_gamma_hat: f64,
    pub median_ratios: Vec<f64>,
}

fn median(mut x: Vec<f64>) -> f64 {
    if x.is_empty() {
        return f64::NAN;
    }
    x.sort_by(f64::total_cmp);
    let n = x.len();
    if n % 2 == 1 {
        x[n / 2]
    } else {
        0.5 * (x[n / 2 - 1] + x[n / 2])
    }
}

/// Heaps exponent, eigenvector ratios and the top item's urn shares at `t`
/// over `S` replicates.
pub fn run_first_order(config: &ExperimentConfig) -> Result<FirstOrderReport, HarnessError> {
    config.validate()?;
    let params = config.params.build()?;
    let n = params.n();
    let eig = eigen_structure(params.gamma())?;
    let schedule = config.schedule.clone().unwrap_or_default();
    let window = config.window.unwrap_or(DEFAULT_WINDOW);
    let horizon = config.t;
    let checkpoints = schedule.checkpoints(horizon);
    let replicates: Vec<FirstOrderReplicate> = (0..config.s as u64)
        .into_par_iter()
        .map(|i| {
            let mut state = SystemState::new(params.clone(), replicate_rng(config.master_seed, i));
            let mut d_star = Vec::with_capacity(checkpoints.len());
            for &cp in &checkpoints {
                state.advance_to(cp);
                d_star.push(state.novelty_counts().to_vec());
            }
            let traj = Trajectory {
                meta: TrajectoryMeta::bare(n, horizon, "simulator"),
                checkpoints: checkpoints.clone(),
                k_series: vec![Vec::new(); checkpoints.len()],
                tracked_items: Vec::new(),
                d_star,
            };
            let top_share = match state.top_colors(1).first() {
                Some(&c) => {
                    let k = state.counts(c).expect("color exists");
                    let total = k.iter().sum::<u64>() as f64;
                    k.iter().map(|&x| x as f64 / total).collect()
                }
                None => vec![f64::NAN; n],
            };
            FirstOrderReplicate {
                replicate: i,
                gamma_hat: heaps_exponent(&traj, window).ok().map(|f| f.slope),
                ratios: eigvec_ratios(&traj, n - 1, window, RatioMethod::GeometricMean).ok(),
                top_share,
            }
        })
        .collect();
    let median_gamma_hat = median(replicates.iter().filter_map(|r| r.gamma_hat).collect());
    let median_ratios = (0..n).map(|h| median(replicates.iter().filter_map(|r| r.ratios.as_ref().map(|v| v[h])).collect())).collect();
    Ok(FirstOrderReport {
        config: config.clone(),
        gamma_star: eig.phi_star,
        true_ratios: eig.u.iter().map(|x| x / eig.u[n - 1]).collect(),
        replicates,
        median_gamma_hat,
        median_ratios,
    })
}
