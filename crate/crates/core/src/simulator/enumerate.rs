//! Exhaustive expansion of the outcome tree for tiny systems, used as an
//! oracle for the sampler.

use super::SystemState;
use crate::params::ModelParams;
use std::collections::{BTreeMap, HashMap};
use thiserror::Error;

pub const MAX_URNS: usize = 3;
pub const MAX_STEPS: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EnumError {
    #[error("exact enumeration supports N <= {MAX_URNS} and t_max <= {MAX_STEPS} (got N = {n}, t_max = {t_max})")]
    TooLarge { n: usize, t_max: usize },
}

/// A color up to relabeling: its originator and per-urn counts.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ColorClass {
    pub originator: usize,
    pub counts: Vec<u64>,
}

/// Sorted multiset of color classes.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct OracleState {
    pub colors: Vec<ColorClass>,
}

impl OracleState {
    pub fn novelty_counts(&self, n: usize) -> Vec<u64> {
        let mut d = vec![0; n];
        for c in &self.colors {
            d[c.originator] += 1;
        }
        d
    }

    /// Sorted (descending) system counts `1ᵀK_t(c)`.
    pub fn system_counts(&self) -> Vec<u64> {
        let mut s: Vec<u64> = self.colors.iter().map(|c| c.counts.iter().sum()).collect();
        s.sort_unstable_by(|a, b| b.cmp(a));
        s
    }

    fn canonicalize(mut self) -> Self {
        self.colors.sort();
        self
    }
}

pub fn canonical_state(s: &SystemState) -> OracleState {
    let colors = (0..s.num_colors())
        .map(|c| ColorClass { originator: s.originator(c).unwrap(), counts: s.counts(c).unwrap().to_vec() })
        .collect();
    OracleState { colors }.canonicalize()
}

#[derive(Debug, Clone)]
pub struct Enumeration {
    pub n: usize,
    /// `levels[t]` is the law of the state after `t` steps.
    pub levels: Vec<Vec<(OracleState, f64)>>,
}

impl Enumeration {
    /// Law of `key(state)` after `t` steps.
    pub fn distribution<K: Ord, F: Fn(&OracleState) -> K>(&self, t: usize, key: F) -> BTreeMap<K, f64> {
        let mut out = BTreeMap::new();
        for (s, p) in &self.levels[t] {
            *out.entry(key(s)).or_insert(0.0) += p;
        }
        out
    }

    pub fn total_mass(&self, t: usize) -> f64 {
        self.levels[t].iter().map(|(_, p)| p).sum()
    }
}

fn options(params: &ModelParams, t: u64, state: &OracleState, h: usize) -> Vec<(Option<usize>, f64)> {
    let n = params.n();
    let theta = params.theta()[h];
    let denom = theta + t as f64;
    let d = state.novelty_counts(n);
    let birth = (theta + (0..n).map(|j| params.gamma()[(j, h)] * d[j] as f64).sum::<f64>()) / denom;
    let mut out = vec![(None, birth)];
    for (i, c) in state.colors.iter().enumerate() {
        let num: f64 =
            (0..n).map(|j| params.w()[(j, h)] * c.counts[j] as f64).sum::<f64>() - params.gamma()[(c.originator, h)];
        let p = num / denom;
        if p > 0.0 {
            out.push((Some(i), p));
        }
    }
    out
}

/// Exact law of the system after each of the first `t_max` steps.
pub fn exact_enumeration(params: &ModelParams, t_max: usize) -> Result<Enumeration, EnumError> {
    let n = params.n();
    if n > MAX_URNS || t_max > MAX_STEPS {
        return Err(EnumError::TooLarge { n, t_max });
    }
    let mut levels = vec![vec![(OracleState { colors: Vec::new() }, 1.0)]];
    for t in 0..t_max {
        let mut next: HashMap<OracleState, f64> = HashMap::new();
        for (state, p_state) in &levels[t] {
            let per_urn: Vec<_> = (0..n).map(|h| options(params, t as u64, state, h)).collect();
            // odometer over the Cartesian product of per-urn choices
            let mut idx = vec![0usize; n];
            loop {
                let mut s = state.clone();
                let mut p = *p_state;
                for h in 0..n {
                    let (choice, q) = per_urn[h][idx[h]];
                    p *= q;
                    match choice {
                        Some(i) => s.colors[i].counts[h] += 1,
                        None => {
                            let mut counts = vec![0; n];
                            counts[h] = 1;
                            s.colors.push(ColorClass { originator: h, counts });
                        }
                    }
                }
                *next.entry(s.canonicalize()).or_insert(0.0) += p;
                let mut k = 0;
                while k < n {
                    idx[k] += 1;
                    if idx[k] < per_urn[k].len() {
                        break;
                    }
                    idx[k] = 0;
                    k += 1;
                }
                if k == n {
                    break;
                }
            }
        }
        let mut level: Vec<_> = next.into_iter().collect();
        level.sort_by(|a, b| a.0.cmp(&b.0));
        levels.push(level);
    }
    Ok(Enumeration { n, levels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::mean_field;
    use nalgebra::DMatrix;

    fn fixture() -> ModelParams {
        super::super::tests::fixture()
    }

    #[test]
    fn total_mass_is_one() {
        let e = exact_enumeration(&fixture(), 4).unwrap();
        for t in 0..=4 {
            assert!((e.total_mass(t) - 1.0).abs() < 1e-12);
        }
        let g = mean_field(0.7, 0.8, 3).unwrap();
        let w = mean_field(1.0, 0.9, 3).unwrap();
        let p3 = ModelParams::validate(vec![1.0, 2.0, 0.5], g, w).unwrap();
        let e3 = exact_enumeration(&p3, 3).unwrap();
        assert!((e3.total_mass(3) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn first_step_is_all_new() {
        let e = exact_enumeration(&fixture(), 1).unwrap();
        let d = e.distribution(1, |s| s.novelty_counts(2));
        assert_eq!(d.len(), 1);
        assert!((d[&vec![1, 1]] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn second_step_birth_marginal() {
        let e = exact_enumeration(&fixture(), 2).unwrap();
        let d = e.distribution(2, |s| s.novelty_counts(2)[0]);
        assert!((d[&2] - 0.85).abs() < 1e-12);
        // independence at step 2: both new with probability 0.85²
        let joint = e.distribution(2, |s| s.novelty_counts(2));
        assert!((joint[&vec![2, 2]] - 0.85 * 0.85).abs() < 1e-12);
    }

    #[test]
    fn too_large() {
        assert_eq!(exact_enumeration(&fixture(), 5).unwrap_err(), EnumError::TooLarge { n: 2, t_max: 5 });
        let g = DMatrix::from_element(4, 4, 0.2);
        let w = DMatrix::from_element(4, 4, 0.25);
        let p = ModelParams::validate(vec![1.0; 4], g, w).unwrap();
        assert!(exact_enumeration(&p, 2).is_err());
    }
}
