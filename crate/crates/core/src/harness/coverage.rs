use super::stats::binomial_se;
use super::{observe, CiMethod, ExperimentConfig, HarnessError};
use crate::inference::{ci_general, ci_p_tilde_meanfield, ci_p_tilde_n2, ConfidenceInterval, InferenceError};
use crate::spectral::eigen_structure;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateInterval {
    pub replicate: u64,
    pub item: Option<usize>,
    pub interval: Option<ConfidenceInterval>,
    pub truth: f64,
    pub hit: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub config: ExperimentConfig,
    pub ci_method: CiMethod,
    pub replicates: Vec<ReplicateInterval>,
    /// Replicates whose interval could be built.
    pub evaluated: usize,
    pub coverage: f64,
    pub standard_error: f64,
}

struct Interval {
    w: DMatrix<f64>,
    method: CiMethod,
    alpha: f64,
    phi_star: f64,
    v: Vec<f64>,
}

impl Interval {
    fn build(&self, k: &[u64], t: u64) -> Result<ConfidenceInterval, InferenceError> {
        match &self.method {
            CiMethod::N2 { eta } => ci_p_tilde_n2(k, t, *eta, self.alpha),
            CiMethod::MeanField => ci_p_tilde_meanfield(k, t, self.alpha),
            CiMethod::General => ci_general(k, t, &self.w, self.alpha),
        }
    }

    /// The interval's target estimated at the truth-proxy step.
    fn truth(&self, k: &[u64], t: u64) -> f64 {
        let t = t as f64;
        match &self.method {
            CiMethod::N2 { eta } => {
                let e = eta.unwrap_or(0.5);
                (e * k[0] as f64 + (1.0 - e) * k[1] as f64) / t
            }
            CiMethod::MeanField => k.iter().sum::<u64>() as f64 / (k.len() as f64 * t),
            CiMethod::General => self.phi_star * self.v.iter().zip(k).map(|(v, &x)| v * x as f64).sum::<f64>() / t,
        }
    }
}

/// Simulates each replicate to `t_inf`, builds the interval at `t` for the
/// item with the largest system count at `t`, and checks it against that
/// item's estimate at `t_inf`.
pub fn run_coverage(config: &ExperimentConfig) -> Result<CoverageReport, HarnessError> {
    config.validate()?;
    let params = config.params.build()?;
    let method = config.ci_method();
    if let CiMethod::N2 { .. } = method {
        if params.n() != 2 {
            return Err(HarnessError::Config("the two-urn interval needs N = 2".into()));
        }
    }
    let eig = eigen_structure(params.w())?;
    let iv = Interval {
        w: params.w().clone(),
        method: method.clone(),
        alpha: config.alpha,
        phi_star: eig.phi_star,
        v: eig.v.iter().copied().collect(),
    };
    let (t, t_inf) = (config.t, config.t_inf());
    let replicates: Vec<ReplicateInterval> = (0..config.s as u64)
        .into_par_iter()
        .map(|i| {
            let obs = observe(&params, config.master_seed, i, t, Some(t_inf));
            let truth = iv.truth(&obs.k_inf, t_inf);
            match iv.build(&obs.k_t, t) {
                Ok(ci) => ReplicateInterval { replicate: i, item: obs.item, hit: ci.contains(truth), interval: Some(ci), truth, error: None },
                Err(e) => ReplicateInterval { replicate: i, item: obs.item, interval: None, truth, hit: false, error: Some(e.to_string()) },
            }
        })
        .collect();
    let evaluated = replicates.iter().filter(|r| r.interval.is_some()).count();
    let hits = replicates.iter().filter(|r| r.hit).count();
    let coverage = if evaluated > 0 { hits as f64 / evaluated as f64 } else { f64::NAN };
    Ok(CoverageReport {
        config: config.clone(),
        ci_method: method,
        evaluated,
        coverage,
        standard_error: binomial_se(coverage, evaluated.max(1)),
        replicates,
    })
}

/// Long-format interval table sorted by interval center (the item's count at
/// `t`): `index,replicate,lower,upper,truth,hit`.
pub fn write_coverage_csv(report: &CoverageReport, path: &Path) -> Result<(), HarnessError> {
    let mut rows: Vec<&ReplicateInterval> = report.replicates.iter().filter(|r| r.interval.is_some()).collect();
    let center = |r: &ReplicateInterval| r.interval.as_ref().map_or(f64::NAN, |c| c.center);
    rows.sort_by(|a, b| center(a).total_cmp(&center(b)).then(a.replicate.cmp(&b.replicate)));
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["index", "replicate", "lower", "upper", "truth", "hit"])?;
    for (i, r) in rows.iter().enumerate() {
        let ci = r.interval.as_ref().unwrap();
        w.write_record([
            i.to_string(),
            r.replicate.to_string(),
            format!("{:.10}", ci.lower()),
            format!("{:.10}", ci.upper()),
            format!("{:.10}", r.truth),
            (r.hit as u8).to_string(),
        ])?;
    }
    w.flush().map_err(|source| HarnessError::Io { path: path.to_path_buf(), source })?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(alpha: f64, s: usize) -> ExperimentConfig {
        ExperimentConfig::from_json(&format!(
            r#"{{"kind": "coverage", "params": {{"family": "mean_field", "N": 2, "phi": 0.6, "iota_gamma": 0.8, "iota_w": 0.8}},
                "S": {s}, "t": 300, "t_inf": 30000, "alpha": {alpha}, "master_seed": 11}}"#
        ))
        .unwrap()
    }

    #[test]
    fn coverage_is_mean_of_hits_and_order_free() {
        let r = run_coverage(&config(0.05, 24)).unwrap();
        let hits = r.replicates.iter().filter(|x| x.hit).count();
        assert_eq!(r.coverage, hits as f64 / r.evaluated as f64);
        let again = run_coverage(&config(0.05, 24)).unwrap();
        assert_eq!(r, again);
        // a smaller experiment reuses the same replicate streams
        let small = run_coverage(&config(0.05, 8)).unwrap();
        assert_eq!(small.replicates[..], r.replicates[..8]);
    }

    #[test]
    fn lower_level_lowers_coverage() {
        let wide = run_coverage(&config(0.05, 60)).unwrap();
        let narrow = run_coverage(&config(0.5, 60)).unwrap();
        assert!(narrow.coverage < wide.coverage);
        assert!(narrow.coverage > 0.2 && narrow.coverage < 0.8, "{}", narrow.coverage);
    }

    #[test]
    fn csv_is_sorted_by_center() {
        let r = run_coverage(&config(0.05, 12)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cov.csv");
        write_coverage_csv(&r, &path).unwrap();
        let mut rd = csv::Reader::from_path(&path).unwrap();
        let mids: Vec<f64> = rd
            .records()
            .map(|x| {
                let x = x.unwrap();
                0.5 * (x[2].parse::<f64>().unwrap() + x[3].parse::<f64>().unwrap())
            })
            .collect();
        assert_eq!(mids.len(), r.evaluated);
        assert!(mids.windows(2).all(|w| w[0] <= w[1] + 1e-9));
    }
}
