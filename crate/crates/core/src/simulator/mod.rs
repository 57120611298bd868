//! Forward simulation of `N` interacting urns with triggering.
//!
//! At step `t` urn `h` draws a never-seen color with probability
//! `Z*_{t,h} = (θ_h + Σ_j γ_{j,h} D*_{t,j}) / (θ_h + t)` and an already seen
//! color `c` with probability
//! `P_t(h,c) = (Σ_j w_{j,h} K_t(j,c) − γ_{j*(c),h}) / (θ_h + t)`.

mod enumerate;
mod fenwick;
mod trajectory;

pub use enumerate::{canonical_state, exact_enumeration, ColorClass, EnumError, Enumeration, OracleState};
pub use fenwick::Fenwick;
pub use trajectory::{
    read_trajectory, run, run_with_streams, select_top_items, sidecar_path, write_streams, write_trajectory, Schedule,
    TrackPolicy,
    Trajectory, TrajectoryError, TrajectoryMeta,
};

use crate::params::ModelParams;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Recorded in every output so that runs can be reproduced.
pub const GENERATOR_ID: &str = "ChaCha8Rng";

const CLAMP_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("unknown color {0}")]
    UnknownColor(usize),
    #[error("urn index {0} out of range")]
    UnknownUrn(usize),
}

/// Generator for replicate `index` of an experiment with `master` seed.
pub fn replicate_rng(master: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Draw {
    pub urn: usize,
    pub color: usize,
    pub new: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DrawRecord {
    /// Step index the draws belong to (the value of `t` before the step).
    pub t: u64,
    pub draws: Vec<Draw>,
}

#[derive(Debug, Clone)]
pub struct SystemState {
    params: ModelParams,
    n: usize,
    t: u64,
    // row-major copies of Γ and W: [j * n + h]
    gamma: Vec<f64>,
    w: Vec<f64>,
    /// `K_t(j,c)` stored at `c * n + j`.
    counts: Vec<u64>,
    originator: Vec<usize>,
    novelty: Vec<u64>,
    samplers: Vec<Fenwick>,
    rng: ChaCha8Rng,
}

fn flat(m: &nalgebra::DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    (0..n * n).map(|k| m[(k / n, k % n)]).collect()
}

impl SystemState {
    pub fn new(params: ModelParams, rng: ChaCha8Rng) -> Self {
        let n = params.n();
        Self {
            gamma: flat(params.gamma()),
            w: flat(params.w()),
            n,
            t: 0,
            counts: Vec::new(),
            originator: Vec::new(),
            novelty: vec![0; n],
            samplers: vec![Fenwick::new(); n],
            rng,
            params,
        }
    }

    pub fn from_seed(params: ModelParams, seed: u64) -> Self {
        Self::new(params, replicate_rng(seed, 0))
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn num_colors(&self) -> usize {
        self.originator.len()
    }

    /// `D*_t`.
    pub fn novelty_counts(&self) -> &[u64] {
        &self.novelty
    }

    pub fn originator(&self, c: usize) -> Option<usize> {
        self.originator.get(c).copied()
    }

    /// `K_t(·,c)`.
    pub fn counts(&self, c: usize) -> Result<&[u64], SimError> {
        if c >= self.num_colors() {
            return Err(SimError::UnknownColor(c));
        }
        Ok(&self.counts[c * self.n..(c + 1) * self.n])
    }

    /// `1ᵀK_t(c)`.
    pub fn system_count(&self, c: usize) -> u64 {
        self.counts[c * self.n..(c + 1) * self.n].iter().sum()
    }

    pub fn weight(&self, h: usize, c: usize) -> f64 {
        self.samplers[h].get(c)
    }

    pub fn total_weight(&self, h: usize) -> f64 {
        self.samplers[h].total()
    }

    fn theta(&self, h: usize) -> f64 {
        self.params.theta()[h]
    }

    pub fn birth_probability(&self, h: usize) -> f64 {
        let n = self.n;
        let drift: f64 = (0..n).map(|j| self.gamma[j * n + h] * self.novelty[j] as f64).sum();
        (self.theta(h) + drift) / (self.theta(h) + self.t as f64)
    }

    pub fn old_color_probability(&self, h: usize, c: usize) -> Result<f64, SimError> {
        if h >= self.n {
            return Err(SimError::UnknownUrn(h));
        }
        let k = self.counts(c)?;
        let n = self.n;
        let num: f64 = (0..n).map(|j| self.w[j * n + h] * k[j] as f64).sum::<f64>() - self.gamma[self.originator[c] * n + h];
        Ok(num / (self.theta(h) + self.t as f64))
    }

    fn mint(&mut self, urn: usize) -> usize {
        let c = self.originator.len();
        let n = self.n;
        self.originator.push(urn);
        self.novelty[urn] += 1;
        self.counts.extend(std::iter::repeat_n(0, n));
        self.counts[c * n + urn] = 1;
        for h in 0..n {
            let mut lambda = self.w[urn * n + h] - self.gamma[urn * n + h];
            if (-CLAMP_TOL..0.0).contains(&lambda) {
                lambda = 0.0;
            }
            self.samplers[h].push(lambda);
        }
        c
    }

    fn reinforce(&mut self, urn: usize, c: usize) {
        let n = self.n;
        self.counts[c * n + urn] += 1;
        for h in 0..n {
            let dw = self.w[urn * n + h];
            if dw != 0.0 {
                self.samplers[h].add(c, dw);
            }
        }
    }

    /// One simultaneous draw from every urn, conditionally on the current state.
    pub fn step(&mut self) -> DrawRecord {
        let t = self.t;
        let mut picks: Vec<Option<usize>> = Vec::with_capacity(self.n);
        for h in 0..self.n {
            let z = self.birth_probability(h);
            let u1: f64 = self.rng.gen();
            if u1 < z {
                picks.push(None);
            } else {
                let u2: f64 = self.rng.gen();
                let total = self.samplers[h].total();
                // total > 0 whenever z < 1; `None` can only come from rounding
                picks.push(self.samplers[h].find(u2 * total));
            }
        }
        let mut draws = Vec::with_capacity(self.n);
        for (h, pick) in picks.into_iter().enumerate() {
            match pick {
                Some(c) => {
                    self.reinforce(h, c);
                    draws.push(Draw { urn: h, color: c, new: false });
                }
                None => {
                    let c = self.mint(h);
                    draws.push(Draw { urn: h, color: c, new: true });
                }
            }
        }
        self.t += 1;
        DrawRecord { t, draws }
    }

    pub fn advance_to(&mut self, t: u64) {
        while self.t < t {
            self.step();
        }
    }

    /// Colors ordered by decreasing system count; ties go to the earlier color.
    pub fn top_colors(&self, m: usize) -> Vec<usize> {
        let mut ids: Vec<usize> = (0..self.num_colors()).collect();
        ids.sort_by(|&a, &b| self.system_count(b).cmp(&self.system_count(a)).then(a.cmp(&b)));
        ids.truncate(m);
        ids
    }

    /// Smallest weight over all urns and colors.
    pub fn min_weight(&self) -> f64 {
        self.samplers.iter().flat_map(|s| s.values().iter().copied()).fold(f64::INFINITY, f64::min)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    pub(crate) fn fixture() -> ModelParams {
        ModelParams::validate(
            vec![1.0, 1.0],
            DMatrix::from_row_slice(2, 2, &[0.4, 0.3, 0.3, 0.4]),
            DMatrix::from_row_slice(2, 2, &[0.7, 0.3, 0.3, 0.7]),
        )
        .unwrap()
    }

    #[test]
    fn first_step_mints_everywhere() {
        let mut s = SystemState::from_seed(fixture(), 1);
        assert_eq!(s.birth_probability(0), 1.0);
        let rec = s.step();
        assert!(rec.draws.iter().all(|d| d.new));
        assert_eq!(s.novelty_counts(), &[1, 1]);
        assert_eq!(s.originator(0), Some(0));
        assert_eq!(s.originator(1), Some(1));
    }

    #[test]
    fn hand_evaluated_probabilities() {
        let mut s = SystemState::from_seed(fixture(), 1);
        s.step();
        assert!((s.birth_probability(0) - 0.85).abs() < 1e-15);
        assert!((s.old_color_probability(0, 0).unwrap() - 0.15).abs() < 1e-15);
        assert!(s.old_color_probability(0, 1).unwrap().abs() < 1e-15);
        assert_eq!(s.old_color_probability(0, 2), Err(SimError::UnknownColor(2)));
    }

    #[test]
    fn normalization_and_counts() {
        let mut s = SystemState::from_seed(fixture(), 3);
        for _ in 0..500 {
            s.step();
            for h in 0..2 {
                let old: f64 = (0..s.num_colors()).map(|c| s.old_color_probability(h, c).unwrap()).sum();
                assert!((s.birth_probability(h) + old - 1.0).abs() < 1e-10);
                let total: u64 = (0..s.num_colors()).map(|c| s.counts(c).unwrap()[h]).sum();
                assert_eq!(total, s.t());
            }
            assert!(s.min_weight() >= -1e-12);
        }
        let d: u64 = s.novelty_counts().iter().sum();
        assert_eq!(d as usize, s.num_colors());
    }

    #[test]
    fn weights_track_counts() {
        let mut s = SystemState::from_seed(fixture(), 11);
        s.advance_to(300);
        for h in 0..2 {
            for c in 0..s.num_colors() {
                let p = s.old_color_probability(h, c).unwrap() * (1.0 + s.t() as f64);
                assert!((s.weight(h, c) - p).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn deterministic() {
        let mut a = SystemState::from_seed(fixture(), 42);
        let mut b = SystemState::from_seed(fixture(), 42);
        for _ in 0..200 {
            assert_eq!(a.step(), b.step());
        }
    }

    #[test]
    fn replicate_streams_differ() {
        let mut a = SystemState::new(fixture(), replicate_rng(5, 0));
        let mut b = SystemState::new(fixture(), replicate_rng(5, 1));
        a.advance_to(200);
        b.advance_to(200);
        assert_ne!(a.novelty_counts().to_vec(), b.novelty_counts().to_vec());
    }
}
