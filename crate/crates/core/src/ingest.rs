//! Aligned token streams to novelty and item-count observables, and p-value
//! summaries for many-item tests.

use crate::simulator::{Schedule, Trajectory, TrajectoryMeta};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    IoError { path: PathBuf, source: std::io::Error },
    #[error("stream {0} contains no tokens")]
    EmptyStream(String),
    #[error("no input streams")]
    NoStreams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenStreams {
    pub process_names: Vec<String>,
    pub streams: Vec<Vec<String>>,
    /// Lengths before truncation to the common minimum.
    pub original_lengths: Vec<usize>,
}

impl TokenStreams {
    /// Truncates every stream to the shortest one.
    pub fn new(process_names: Vec<String>, mut streams: Vec<Vec<String>>) -> Result<Self, IngestError> {
        if streams.is_empty() {
            return Err(IngestError::NoStreams);
        }
        for (name, s) in process_names.iter().zip(&streams) {
            if s.is_empty() {
                return Err(IngestError::EmptyStream(name.clone()));
            }
        }
        let original_lengths: Vec<usize> = streams.iter().map(Vec::len).collect();
        let len = *original_lengths.iter().min().unwrap();
        for s in &mut streams {
            s.truncate(len);
        }
        Ok(Self { process_names, streams, original_lengths })
    }

    pub fn len(&self) -> usize {
        self.streams[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One token per non-blank line, one file per process.
pub fn load_streams(paths: &[PathBuf], case_fold: bool) -> Result<TokenStreams, IngestError> {
    let mut names = Vec::with_capacity(paths.len());
    let mut streams = Vec::with_capacity(paths.len());
    for p in paths {
        let text = std::fs::read_to_string(p).map_err(|source| IngestError::IoError { path: p.clone(), source })?;
        let tokens: Vec<String> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(|l| if case_fold { l.to_lowercase() } else { l.to_string() })
            .collect();
        names.push(process_name(p));
        streams.push(tokens);
    }
    TokenStreams::new(names, streams)
}

fn process_name(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| p.display().to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestStats {
    pub steps: usize,
    pub distinct_items: usize,
    /// Items first seen in more than one stream at the same step.
    pub simultaneous_novelties: usize,
    pub original_lengths: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservableBundle {
    pub trajectory: Trajectory,
    pub stats: IngestStats,
}

/// Builds `D*_t` and `K_t(·,c)` for the `top_m` items with the largest total
/// count at the final step. An item is new at the first step it appears in
/// any stream; its originator is the lowest-index stream among those showing
/// it at that step.
pub fn observables(streams: &TokenStreams, schedule: &Schedule, top_m: usize) -> ObservableBundle {
    let n = streams.streams.len();
    let horizon = streams.len();
    let checkpoints = schedule.checkpoints(horizon as u64);

    let mut ids: HashMap<&str, usize> = HashMap::new();
    let mut labels: Vec<&str> = Vec::new();
    let mut first_step: Vec<usize> = Vec::new();
    let mut originator: Vec<usize> = Vec::new();
    let mut collided: Vec<bool> = Vec::new();
    let mut totals: Vec<u64> = Vec::new();
    let mut novelty = vec![0u64; n];
    let mut d_star = Vec::with_capacity(checkpoints.len());
    let mut next_cp = 0;
    for t in 0..horizon {
        for h in 0..n {
            let tok = streams.streams[h][t].as_str();
            let id = match ids.get(tok) {
                Some(&id) => {
                    if first_step[id] == t && originator[id] != h {
                        collided[id] = true;
                    }
                    id
                }
                None => {
                    let id = labels.len();
                    ids.insert(tok, id);
                    labels.push(tok);
                    first_step.push(t);
                    originator.push(h);
                    collided.push(false);
                    totals.push(0);
                    novelty[h] += 1;
                    id
                }
            };
            totals[id] += 1;
        }
        while next_cp < checkpoints.len() && checkpoints[next_cp] == (t + 1) as u64 {
            d_star.push(novelty.clone());
            next_cp += 1;
        }
    }

    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.sort_by(|&a, &b| totals[b].cmp(&totals[a]).then(a.cmp(&b)));
    order.truncate(top_m);
    let slot: HashMap<usize, usize> = order.iter().enumerate().map(|(i, &id)| (id, i)).collect();

    // second pass: per-process counts of the tracked items
    let mut counts = vec![vec![0u64; n]; order.len()];
    let mut k_series = Vec::with_capacity(checkpoints.len());
    let mut next_cp = 0;
    for t in 0..horizon {
        for h in 0..n {
            if let Some(&i) = slot.get(&ids[streams.streams[h][t].as_str()]) {
                counts[i][h] += 1;
            }
        }
        while next_cp < checkpoints.len() && checkpoints[next_cp] == (t + 1) as u64 {
            k_series.push(counts.clone());
            next_cp += 1;
        }
    }

    let stats = IngestStats {
        steps: horizon,
        distinct_items: labels.len(),
        simultaneous_novelties: collided.iter().filter(|&&c| c).count(),
        original_lengths: streams.original_lengths.clone(),
    };
    let mut meta = TrajectoryMeta::bare(n, horizon as u64, "ingest");
    meta.schedule = Some(schedule.clone());
    meta.extra.insert("process_names".into(), serde_json::json!(streams.process_names));
    meta.extra.insert("stats".into(), serde_json::to_value(&stats).expect("stats serialize"));
    meta.extra.insert("top_m".into(), serde_json::json!(top_m));
    let trajectory = Trajectory {
        meta,
        checkpoints,
        d_star,
        tracked_items: order.iter().map(|&id| labels[id].to_string()).collect(),
        k_series,
    };
    ObservableBundle { trajectory, stats }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PValueSummary {
    pub n: usize,
    pub probabilities: Vec<f64>,
    pub quantiles: Vec<f64>,
}

impl PValueSummary {
    /// Quantiles rendered as in a printed table (`<0.001` below one in a thousand).
    pub fn formatted(&self) -> Vec<String> {
        self.quantiles.iter().map(|&q| format_pvalue(q)).collect()
    }
}

pub fn format_pvalue(p: f64) -> String {
    if p < 0.001 {
        "<0.001".to_string()
    } else {
        format!("{p:.3}")
    }
}

/// Type-7 (linear interpolation) empirical quantile of sorted data.
pub fn quantile_type7(sorted: &[f64], prob: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * prob;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// # Panics
/// If `pvals` is empty.
pub fn pvalue_summary(pvals: &[f64], probabilities: &[f64]) -> PValueSummary {
    assert!(!pvals.is_empty(), "pvalue_summary needs at least one p-value");
    let mut sorted = pvals.to_vec();
    sorted.sort_by(f64::total_cmp);
    PValueSummary {
        n: sorted.len(),
        probabilities: probabilities.to_vec(),
        quantiles: probabilities.iter().map(|&p| quantile_type7(&sorted, p)).collect(),
    }
}

pub fn bonferroni(pvals: &[f64]) -> Vec<f64> {
    let m = pvals.len() as f64;
    pvals.iter().map(|p| (p * m).min(1.0)).collect()
}
