//! Model parameters: the interaction matrices `Γ` (novelty triggering) and
//! `W` (reinforcement of old items) plus the per-urn `θ`.
//!
//! Matrices are indexed `[(j, h)]` with `j` the source urn and `h` the target
//! urn, so column `h` collects every influence acting on urn `h` and the
//! normalisation constraints are column sums.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance for exact linear constraints (column sums, eigen residuals).
pub const LINEAR_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParamsError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("negative entry {value} in {matrix} at ({row}, {col})")]
    NonNegativityViolation { matrix: &'static str, row: usize, col: usize, value: f64 },
    #[error("column {col} of {matrix} sums to {sum}, violating {bound} (off by {excess:e})")]
    ColumnSumViolation { matrix: &'static str, col: usize, sum: f64, bound: &'static str, excess: f64 },
    #[error("{0} is reducible: its positivity graph is not strongly connected")]
    ReducibleMatrix(&'static str),
    #[error("diagonal of W - Gamma is not positive at urn {urn}: {value}")]
    LambdaDiagonalNonPositive { urn: usize, value: f64 },
    #[error("theta[{index}] = {value} must be positive and finite")]
    NonPositiveTheta { index: usize, value: f64 },
    #[error("inadmissible intensity iota = {iota}: must lie in {interval}")]
    InadmissibleIntensity { iota: f64, interval: String },
    #[error("parameter out of range: {0}")]
    OutOfRange(String),
    #[error("{} constraint violations: {}", .0.len(), join_errors(.0))]
    Multiple(Vec<ParamsError>),
}

fn join_errors(errs: &[ParamsError]) -> String {
    errs.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; ")
}

/// How strictly the diagonal of `Λ = W − Γ` is checked.
///
/// The urn construction needs `λ_{h,h} > 0`. Some published parameter sets sit
/// exactly on the boundary `λ_{h,h} = 0`; the dynamics stay well defined there
/// (weights remain nonnegative), so `AllowZero` accepts them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaDiagonal {
    #[default]
    Strict,
    AllowZero,
}

/// Validated parameterisation of an `N`-urn system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct ModelParams {
    theta: Vec<f64>,
    gamma: DMatrix<f64>,
    w: DMatrix<f64>,
}

/// Unvalidated parameter bundle, as read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawParams {
    #[serde(rename = "N")]
    pub n: usize,
    pub theta: Vec<f64>,
    pub gamma: Vec<Vec<f64>>,
    pub w: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "is_strict")]
    pub lambda_diagonal: LambdaDiagonal,
}

fn is_strict(l: &LambdaDiagonal) -> bool {
    *l == LambdaDiagonal::Strict
}

impl TryFrom<RawParams> for ModelParams {
    type Error = ParamsError;
    fn try_from(raw: RawParams) -> Result<Self, ParamsError> {
        let policy = raw.lambda_diagonal;
        let gamma = rows_to_matrix(raw.n, &raw.gamma, "gamma")?;
        let w = rows_to_matrix(raw.n, &raw.w, "w")?;
        ModelParams::validate_with(raw.theta, gamma, w, policy)
    }
}

impl From<ModelParams> for RawParams {
    fn from(p: ModelParams) -> Self {
        let lambda_diagonal = if p.lambda().diagonal().iter().any(|&x| x <= 0.0) {
            LambdaDiagonal::AllowZero
        } else {
            LambdaDiagonal::Strict
        };
        RawParams {
            n: p.n(),
            gamma: matrix_to_rows(&p.gamma),
            w: matrix_to_rows(&p.w),
            theta: p.theta,
            lambda_diagonal,
        }
    }
}

pub fn rows_to_matrix(n: usize, rows: &[Vec<f64>], name: &str) -> Result<DMatrix<f64>, ParamsError> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(ParamsError::Dimension(format!("{name} must be {n}x{n}")));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

impl ModelParams {
    /// Validates with the strict `λ_{h,h} > 0` policy.
    pub fn validate(theta: Vec<f64>, gamma: DMatrix<f64>, w: DMatrix<f64>) -> Result<Self, ParamsError> {
        Self::validate_with(theta, gamma, w, LambdaDiagonal::Strict)
    }

    /// Checks every constraint and reports all violations at once.
    pub fn validate_with(
        theta: Vec<f64>,
        gamma: DMatrix<f64>,
        w: DMatrix<f64>,
        policy: LambdaDiagonal,
    ) -> Result<Self, ParamsError> {
        let n = theta.len();
        if n == 0 {
            return Err(ParamsError::Dimension("N must be at least 1".into()));
        }
        if gamma.shape() != (n, n) || w.shape() != (n, n) {
            return Err(ParamsError::Dimension(format!(
                "theta has length {n} but gamma is {:?} and w is {:?}",
                gamma.shape(),
                w.shape()
            )));
        }
        let mut errs = Vec::new();
        for (i, &th) in theta.iter().enumerate() {
            if !(th > 0.0 && th.is_finite()) {
                errs.push(ParamsError::NonPositiveTheta { index: i, value: th });
            }
        }
        for (name, m) in [("gamma", &gamma), ("w", &w)] {
            for j in 0..n {
                for h in 0..n {
                    let x = m[(j, h)];
                    if !(x >= 0.0 && x.is_finite()) {
                        errs.push(ParamsError::NonNegativityViolation { matrix: name, row: j, col: h, value: x });
                    }
                }
            }
        }
        for h in 0..n {
            let s: f64 = gamma.column(h).sum();
            if s >= 1.0 {
                errs.push(ParamsError::ColumnSumViolation {
                    matrix: "gamma",
                    col: h,
                    sum: s,
                    bound: "sum < 1",
                    excess: s - 1.0,
                });
            }
            let s: f64 = w.column(h).sum();
            if (s - 1.0).abs() > LINEAR_TOL {
                errs.push(ParamsError::ColumnSumViolation {
                    matrix: "w",
                    col: h,
                    sum: s,
                    bound: "sum = 1",
                    excess: s - 1.0,
                });
            }
        }
        let lambda = &w - &gamma;
        for j in 0..n {
            for h in 0..n {
                let x = lambda[(j, h)];
                if j == h {
                    let bad = match policy {
                        LambdaDiagonal::Strict => x <= 0.0,
                        LambdaDiagonal::AllowZero => x < -LINEAR_TOL,
                    };
                    if bad {
                        errs.push(ParamsError::LambdaDiagonalNonPositive { urn: j, value: x });
                    }
                } else if x < -LINEAR_TOL {
                    errs.push(ParamsError::NonNegativityViolation { matrix: "lambda", row: j, col: h, value: x });
                }
            }
        }
        if n > 1 {
            if !is_irreducible(&gamma) {
                errs.push(ParamsError::ReducibleMatrix("gamma"));
            }
            if !is_irreducible(&w) {
                errs.push(ParamsError::ReducibleMatrix("w"));
            }
        }
        match errs.len() {
            0 => Ok(ModelParams { theta, gamma, w }),
            1 => Err(errs.pop().unwrap()),
            _ => Err(ParamsError::Multiple(errs)),
        }
    }

    pub fn n(&self) -> usize {
        self.theta.len()
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn gamma(&self) -> &DMatrix<f64> {
        &self.gamma
    }

    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    /// `Λ = W − Γ`.
    pub fn lambda(&self) -> DMatrix<f64> {
        &self.w - &self.gamma
    }
}

/// Strong connectivity of the directed graph with an edge `i → j` wherever
/// `m[(i, j)] > 0` (Kosaraju: forward and reverse reachability from node 0).
pub fn is_irreducible(m: &DMatrix<f64>) -> bool {
    let n = m.nrows();
    if n <= 1 {
        return true;
    }
    let reach = |forward: bool| {
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in 0..n {
                let x = if forward { m[(i, j)] } else { m[(j, i)] };
                if x > 0.0 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    reach(true) && reach(false)
}

/// Two-urn parameterisation around a known leading eigenvalue `γ*` and
/// eigenvector ratio `r = u_1/u_2`: `ι` is the total cross-interaction and
/// `η` the share of it exerted by urn 1 on urn 2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct N2Parametrization {
    pub r: f64,
    pub gamma_star: f64,
    pub eta: f64,
    pub iota: f64,
}

/// Interval `(0, upper]` or `(0, upper)` of admissible intensities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdmissibleInterval {
    pub upper: f64,
    pub upper_inclusive: bool,
}

impl AdmissibleInterval {
    pub fn contains(&self, x: f64) -> bool {
        x > 0.0 && if self.upper_inclusive { x <= self.upper } else { x < self.upper }
    }
}

impl std::fmt::Display for AdmissibleInterval {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let close = if self.upper_inclusive { ']' } else { ')' };
        write!(f, "(0, {}{close}", self.upper)
    }
}

/// Admissible `ι` for the two-urn `Γ` family: the intersection of the
/// nonnegativity range `(0, min(γ*r/(1−η), γ*/(rη))]` with the column-sum
/// range, which is unbounded when `r = 1`.
pub fn admissible_interval(r: f64, gamma_star: f64, eta: f64) -> Result<AdmissibleInterval, ParamsError> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(ParamsError::OutOfRange(format!("r = {r} must be positive")));
    }
    if !(gamma_star > 0.0 && gamma_star < 1.0) {
        return Err(ParamsError::OutOfRange(format!("gamma_star = {gamma_star} must lie in (0,1)")));
    }
    if !(eta > 0.0 && eta < 1.0) {
        return Err(ParamsError::OutOfRange(format!("eta = {eta} must lie in (0,1)")));
    }
    let closed = (gamma_star * r / (1.0 - eta)).min(gamma_star / (r * eta));
    let open = if r < 1.0 {
        (1.0 - gamma_star) / (eta * (1.0 - r))
    } else if r > 1.0 {
        (1.0 - gamma_star) / ((1.0 - eta) * (1.0 - 1.0 / r))
    } else {
        f64::INFINITY
    };
    Ok(if closed < open {
        AdmissibleInterval { upper: closed, upper_inclusive: true }
    } else {
        AdmissibleInterval { upper: open, upper_inclusive: false }
    })
}

/// `Γ` from `(r, γ*, η, ι)`. The vector `(r, 1)` is a left eigenvector with
/// eigenvalue `γ*` by construction.
pub fn gamma_from_n2(p: &N2Parametrization) -> Result<DMatrix<f64>, ParamsError> {
    let interval = admissible_interval(p.r, p.gamma_star, p.eta)?;
    if !interval.contains(p.iota) {
        return Err(ParamsError::InadmissibleIntensity { iota: p.iota, interval: interval.to_string() });
    }
    let N2Parametrization { r, gamma_star: g, eta, iota } = *p;
    Ok(DMatrix::from_row_slice(
        2,
        2,
        &[g - (1.0 - eta) * iota / r, eta * iota, (1.0 - eta) * iota, g - r * eta * iota],
    ))
}

/// Admissible `ι` for the two-urn `W` family: `(0, min(1/η, 1/(1−η)))`.
pub fn w_interval(eta: f64) -> Result<AdmissibleInterval, ParamsError> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(ParamsError::OutOfRange(format!("eta = {eta} must lie in (0,1)")));
    }
    Ok(AdmissibleInterval { upper: (1.0 / eta).min(1.0 / (1.0 - eta)), upper_inclusive: false })
}

/// Column-stochastic `W` from `(η, ι)`.
pub fn w_from_n2(eta: f64, iota: f64) -> Result<DMatrix<f64>, ParamsError> {
    let interval = w_interval(eta)?;
    if !interval.contains(iota) {
        return Err(ParamsError::InadmissibleIntensity { iota, interval: interval.to_string() });
    }
    Ok(DMatrix::from_row_slice(
        2,
        2,
        &[1.0 - (1.0 - eta) * iota, eta * iota, (1.0 - eta) * iota, 1.0 - eta * iota],
    ))
}

/// Mean-field matrix `φ(ι/N + δ_{j,h}(1−ι))`.
pub fn mean_field(phi: f64, iota: f64, n: usize) -> Result<DMatrix<f64>, ParamsError> {
    if !(phi > 0.0 && phi <= 1.0) {
        return Err(ParamsError::OutOfRange(format!("phi = {phi} must lie in (0,1]")));
    }
    if !(iota > 0.0 && iota <= 1.0) {
        return Err(ParamsError::OutOfRange(format!("iota = {iota} must lie in (0,1]")));
    }
    if n < 2 {
        return Err(ParamsError::OutOfRange(format!("mean-field needs N >= 2, got {n}")));
    }
    let off = phi * iota / n as f64;
    Ok(DMatrix::from_fn(n, n, |j, h| if j == h { off + phi * (1.0 - iota) } else { off }))
}

/// Parameters as written in configuration files: explicit matrices or one of
/// the two parametrised families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamSpec {
    Family(FamilySpec),
    Explicit(RawParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum FamilySpec {
    N2 {
        r: f64,
        gamma_star: f64,
        eta: f64,
        iota_gamma: f64,
        iota_w: f64,
        /// `η` for `W`; defaults to `eta`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        eta_w: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        theta: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "is_strict")]
        lambda_diagonal: LambdaDiagonal,
    },
    MeanField {
        #[serde(rename = "N")]
        n: usize,
        phi: f64,
        iota_gamma: f64,
        iota_w: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        theta: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "is_strict")]
        lambda_diagonal: LambdaDiagonal,
    },
}

impl ParamSpec {
    pub fn build(&self) -> Result<ModelParams, ParamsError> {
        match self {
            ParamSpec::Explicit(raw) => ModelParams::try_from(raw.clone()),
            ParamSpec::Family(FamilySpec::N2 { r, gamma_star, eta, iota_gamma, iota_w, eta_w, theta, lambda_diagonal }) => {
                let gamma = gamma_from_n2(&N2Parametrization { r: *r, gamma_star: *gamma_star, eta: *eta, iota: *iota_gamma })?;
                let w = w_from_n2(eta_w.unwrap_or(*eta), *iota_w)?;
                let theta = theta.clone().unwrap_or_else(|| vec![1.0; 2]);
                ModelParams::validate_with(theta, gamma, w, *lambda_diagonal)
            }
            ParamSpec::Family(FamilySpec::MeanField { n, phi, iota_gamma, iota_w, theta, lambda_diagonal }) => {
                let gamma = mean_field(*phi, *iota_gamma, *n)?;
                let w = mean_field(1.0, *iota_w, *n)?;
                let theta = theta.clone().unwrap_or_else(|| vec![1.0; *n]);
                ModelParams::validate_with(theta, gamma, w, *lambda_diagonal)
            }
        }
    }
}
