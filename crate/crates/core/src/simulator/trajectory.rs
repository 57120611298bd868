//! Trajectories: observables recorded along a run, with CSV/JSON persistence.

use super::{SystemState, GENERATOR_ID};
use crate::params::ModelParams;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("malformed trajectory: {0}")]
    Format(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrajectoryError + '_ {
    move |source| TrajectoryError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    LogSpaced { per_decade: u32 },
    Explicit { steps: Vec<u64> },
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule::LogSpaced { per_decade: 50 }
    }
}

impl Schedule {
    /// Increasing checkpoints in `[1, horizon]`, always ending at `horizon`.
    pub fn checkpoints(&self, horizon: u64) -> Vec<u64> {
        let mut out: Vec<u64> = match self {
            Schedule::LogSpaced { per_decade } => {
                let pd = (*per_decade).max(1) as f64;
                let mut v = Vec::new();
                let mut k = 0u32;
                loop {
                    let x = 10f64.powf(k as f64 / pd).round() as u64;
                    if x > horizon {
                        break;
                    }
                    v.push(x.max(1));
                    k += 1;
                }
                v
            }
            Schedule::Explicit { steps } => steps.iter().copied().filter(|&s| s >= 1 && s <= horizon).collect(),
        };
        out.sort_unstable();
        out.dedup();
        if out.last() != Some(&horizon) {
            out.push(horizon);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrackPolicy {
    #[default]
    None,
    /// Top `m` colors by system count at step `at` (default: the horizon).
    TopM {
        m: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        at: Option<u64>,
    },
    Explicit { ids: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    #[serde(rename = "N")]
    pub n: usize,
    pub horizon: u64,
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<ModelParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<Schedule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub track: Option<TrackPolicy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, serde_json::Value>,
}

impl TrajectoryMeta {
    pub fn bare(n: usize, horizon: u64, source: &str) -> Self {
        Self {
            n,
            horizon,
            source: source.to_string(),
            params: None,
            seed: None,
            schedule: None,
            track: None,
            generator: None,
            extra: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub meta: TrajectoryMeta,
    pub checkpoints: Vec<u64>,
    /// `d_star[i][h] = D*_{t_i,h}`.
    pub d_star: Vec<Vec<u64>>,
    pub tracked_items: Vec<String>,
    /// `k_series[i][m][h] = K_{t_i}(h, item_m)`.
    pub k_series: Vec<Vec<Vec<u64>>>,
}

impl Trajectory {
    pub fn n(&self) -> usize {
        self.meta.n
    }

    pub fn horizon(&self) -> u64 {
        *self.checkpoints.last().unwrap_or(&0)
    }

    pub fn d_total(&self, i: usize) -> u64 {
        self.d_star[i].iter().sum()
    }
}

/// Colors with the largest system count at step `at` of the run with `seed`.
pub fn select_top_items(params: &ModelParams, seed: u64, at: u64, m: usize) -> Vec<usize> {
    let mut s = SystemState::from_seed(params.clone(), seed);
    s.advance_to(at);
    s.top_colors(m)
}

fn simulate(
    params: &ModelParams,
    seed: u64,
    horizon: u64,
    schedule: &Schedule,
    track: &TrackPolicy,
    mut streams: Option<&mut Vec<Vec<usize>>>,
) -> Trajectory {
    let ids: Vec<usize> = match track {
        TrackPolicy::None => Vec::new(),
        TrackPolicy::Explicit { ids } => ids.clone(),
        TrackPolicy::TopM { m, at } => select_top_items(params, seed, at.unwrap_or(horizon).min(horizon), *m),
    };
    let n = params.n();
    let checkpoints = schedule.checkpoints(horizon);
    let mut state = SystemState::from_seed(params.clone(), seed);
    let mut d_star = Vec::with_capacity(checkpoints.len());
    let mut k_series = Vec::with_capacity(checkpoints.len());
    if let Some(s) = streams.as_deref_mut() {
        *s = vec![Vec::with_capacity(horizon as usize); n];
    }
    for &cp in &checkpoints {
        while state.t() < cp {
            let rec = state.step();
            if let Some(s) = streams.as_deref_mut() {
                for d in rec.draws {
                    s[d.urn].push(d.color);
                }
            }
        }
        d_star.push(state.novelty_counts().to_vec());
        k_series.push(ids.iter().map(|&c| state.counts(c).map(|k| k.to_vec()).unwrap_or_else(|_| vec![0; n])).collect());
    }
    let meta = TrajectoryMeta {
        params: Some(params.clone()),
        seed: Some(seed),
        schedule: Some(schedule.clone()),
        track: Some(track.clone()),
        generator: Some(GENERATOR_ID.to_string()),
        ..TrajectoryMeta::bare(n, horizon, "simulator")
    };
    Trajectory { meta, checkpoints, d_star, tracked_items: ids.iter().map(|c| c.to_string()).collect(), k_series }
}

/// Deterministic in `(params, seed, horizon, schedule, track)`.
pub fn run(params: &ModelParams, seed: u64, horizon: u64, schedule: &Schedule, track: &TrackPolicy) -> Trajectory {
    simulate(params, seed, horizon, schedule, track, None)
}

/// As [`run`], also returning the per-urn sequence of drawn color ids.
pub fn run_with_streams(
    params: &ModelParams,
    seed: u64,
    horizon: u64,
    schedule: &Schedule,
    track: &TrackPolicy,
) -> (Trajectory, Vec<Vec<usize>>) {
    let mut streams = Vec::new();
    let traj = simulate(params, seed, horizon, schedule, track, Some(&mut streams));
    (traj, streams)
}

pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

/// Writes `path` (CSV) and its `.json` sidecar.
pub fn write_trajectory(traj: &Trajectory, path: &Path) -> Result<(), TrajectoryError> {
    let n = traj.n();
    let mut wtr = csv::Writer::from_path(path)?;
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|h| format!("D{h}")));
    for item in &traj.tracked_items {
        header.extend((1..=n).map(|h| format!("K_{item}_{h}")));
    }
    wtr.write_record(&header)?;
    for (i, &t) in traj.checkpoints.iter().enumerate() {
        let mut row = vec![t.to_string()];
        row.extend(traj.d_star[i].iter().map(|x| x.to_string()));
        for k in &traj.k_series[i] {
            row.extend(k.iter().map(|x| x.to_string()));
        }
        wtr.write_record(&row)?;
    }
    wtr.flush().map_err(io_err(path))?;
    let side = sidecar_path(path);
    let mut json = serde_json::to_string_pretty(&traj.meta)?;
    json.push('\n');
    std::fs::write(&side, json).map_err(io_err(&side))?;
    Ok(())
}

/// Reads a trajectory CSV; the sidecar is used when present.
pub fn read_trajectory(path: &Path) -> Result<Trajectory, TrajectoryError> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let mut rdr = csv::Reader::from_reader(file);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.first().map(String::as_str) != Some("t") {
        return Err(TrajectoryError::Format("first column must be t".into()));
    }
    let n = header.iter().skip(1).take_while(|h| h.starts_with('D')).count();
    if n == 0 {
        return Err(TrajectoryError::Format("no D columns".into()));
    }
    let k_cols = &header[1 + n..];
    if !k_cols.len().is_multiple_of(n) {
        return Err(TrajectoryError::Format("K columns are not a multiple of N".into()));
    }
    let mut items = Vec::new();
    for chunk in k_cols.chunks(n) {
        let label = chunk[0]
            .strip_prefix("K_")
            .and_then(|s| s.rsplit_once('_'))
            .map(|(l, _)| l.to_string())
            .ok_or_else(|| TrajectoryError::Format(format!("bad column {}", chunk[0])))?;
        items.push(label);
    }
    let mut checkpoints = Vec::new();
    let mut d_star = Vec::new();
    let mut k_series = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let vals: Vec<u64> = rec
            .iter()
            .map(|s| s.trim().parse::<u64>().map_err(|e| TrajectoryError::Format(format!("{s:?}: {e}"))))
            .collect::<Result<_, _>>()?;
        if vals.len() != header.len() {
            return Err(TrajectoryError::Format("row length mismatch".into()));
        }
        checkpoints.push(vals[0]);
        d_star.push(vals[1..1 + n].to_vec());
        k_series.push(vals[1 + n..].chunks(n).map(<[u64]>::to_vec).collect());
    }
    if checkpoints.is_empty() {
        return Err(TrajectoryError::Format("no rows".into()));
    }
    let side = sidecar_path(path);
    let meta = if side.exists() {
        let text = std::fs::read_to_string(&side).map_err(io_err(&side))?;
        serde_json::from_str(&text)?
    } else {
        TrajectoryMeta::bare(n, *checkpoints.last().unwrap(), "csv")
    };
    Ok(Trajectory { meta, checkpoints, d_star, tracked_items: items, k_series })
}

/// One file per urn, one token (decimal color id) per line.
pub fn write_streams(streams: &[Vec<usize>], dir: &Path) -> Result<Vec<PathBuf>, TrajectoryError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut paths = Vec::new();
    for (h, s) in streams.iter().enumerate() {
        let p = dir.join(format!("stream_{}.txt", h + 1));
        let mut text = String::with_capacity(s.len() * 6);
        for c in s {
            text.push_str(&c.to_string());
            text.push('\n');
        }
        std::fs::write(&p, text).map_err(io_err(&p))?;
        paths.push(p);
    }
    Ok(paths)
}
