//! Eigen-structure of an interaction matrix and the deterministic
//! covariance objects behind every central limit theorem and test.
//!
//! For an irreducible nonnegative `Φ` with Perron eigenvalue `φ*` we keep the
//! decomposition `Φᵀ = φ* u vᵀ + U D Vᵀ` where `Φᵀu = φ*u`, `Φv = φ*v`,
//! `vᵀ1 = 1`, `vᵀu = 1`, `VᵀU = I`, `Vᵀu = 0`, `Uᵀv = 0`.
//! The complement may be complex; it is carried in complex arithmetic and
//! every assembled covariance block is checked to be real.

use nalgebra::{Complex, DMatrix, DVector, Schur};
use serde::Serialize;
use thiserror::Error;

type C64 = Complex<f64>;

const POWER_TOL: f64 = 1e-12;
const POWER_MAX_ITER: usize = 100_000;
const MAX_QR_ITER: usize = 10_000;
/// Eigenvalues closer than this are treated as one (repeated) eigenvalue.
const CLUSTER_TOL: f64 = 1e-7;
/// Maximum imaginary residue tolerated in an assembled real block.
const IMAG_TOL: f64 = 1e-10;
/// Relative eigenvalue threshold deciding the numerical rank of a block.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpectralError {
    #[error("matrix must be square and non-empty")]
    NotSquare,
    #[error("eigen solver did not converge: {0}")]
    ConvergenceFailure(String),
    #[error("stability condition violated: Re(phi2)/phi* = {ratio} >= 1/2")]
    StabilityViolation { ratio: f64 },
    #[error("expected rank {expected}, found {found}")]
    RankDeficiency { expected: usize, found: usize },
    #[error("assembled block has imaginary residue {0:e}")]
    ComplexResidue(f64),
}

/// Which observable the covariance refers to: novelty counts (`Γ`, with
/// `Σ_det = diag(u)` and `g(x) = x`) or item counts (`W`, with `Σ_det = I` and
/// `g(x) = x(1−x)`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Gamma,
    W,
}

impl Mode {
    pub fn g(self, x: f64) -> f64 {
        match self {
            Mode::Gamma => x,
            Mode::W => x * (1.0 - x),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EigenStructure {
    pub phi_star: f64,
    /// Non-leading eigenvalue with the largest real part; `None` when `N = 1`.
    pub phi2_star: Option<C64>,
    pub u: DVector<f64>,
    pub v: DVector<f64>,
    /// `N × (N−1)`, columns are eigenvectors of `Φᵀ`.
    pub u_mat: DMatrix<C64>,
    /// `N × (N−1)`, columns are eigenvectors of `Φ`.
    pub v_mat: DMatrix<C64>,
    /// Non-leading eigenvalues, aligned with the columns of `U` and `V`.
    pub d: DVector<C64>,
}

impl EigenStructure {
    pub fn n(&self) -> usize {
        self.u.len()
    }

    /// `1/2 − Re(φ*_2)/φ*`; `+∞` for a single urn.
    pub fn gap(&self) -> f64 {
        match self.phi2_star {
            Some(p) => 0.5 - p.re / self.phi_star,
            None => f64::INFINITY,
        }
    }

    /// `U Vᵀ = I − u vᵀ`, the projector onto the complement.
    pub fn complement_projector(&self) -> DMatrix<f64> {
        let n = self.n();
        DMatrix::identity(n, n) - &self.u * self.v.transpose()
    }

    /// `φ* u vᵀ + U D Vᵀ`, which must equal `Φᵀ`.
    pub fn reconstruct_transpose(&self) -> DMatrix<C64> {
        let lead = (&self.u * self.v.transpose()).map(|x| C64::new(x * self.phi_star, 0.0));
        let d = DMatrix::from_diagonal(&self.d);
        lead + &self.u_mat * d * self.v_mat.transpose()
    }

    pub fn report(&self) -> EigenReport {
        EigenReport {
            phi_star: self.phi_star,
            phi2_star: self.phi2_star.map(|c| [c.re, c.im]),
            gap: self.gap(),
            u: self.u.iter().copied().collect(),
            v: self.v.iter().copied().collect(),
            d: self.d.iter().map(|c| [c.re, c.im]).collect(),
            u_mat: complex_rows(&self.u_mat),
            v_mat: complex_rows(&self.v_mat),
        }
    }
}

/// JSON-friendly dump; complex numbers are `[re, im]`.
#[derive(Debug, Clone, Serialize)]
pub struct EigenReport {
    pub phi_star: f64,
    pub phi2_star: Option<[f64; 2]>,
    pub gap: f64,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub d: Vec<[f64; 2]>,
    pub u_mat: Vec<Vec<[f64; 2]>>,
    pub v_mat: Vec<Vec<[f64; 2]>>,
}

fn complex_rows(m: &DMatrix<C64>) -> Vec<Vec<[f64; 2]>> {
    (0..m.nrows()).map(|i| m.row(i).iter().map(|c| [c.re, c.im]).collect()).collect()
}

/// Perron vector of `m` via power iteration on `m + I` (the shift makes the
/// iteration converge for periodic irreducible matrices). Returns the
/// eigenvalue of `m` and a positive vector with unit sum.
fn perron_vector(m: &DMatrix<f64>) -> Result<(f64, DVector<f64>), SpectralError> {
    let n = m.nrows();
    let shifted = m + DMatrix::<f64>::identity(n, n);
    let mut x = DVector::from_element(n, 1.0 / n as f64);
    for _ in 0..POWER_MAX_ITER {
        let mut y = &shifted * &x;
        let s = y.sum();
        if !(s > 0.0 && s.is_finite()) {
            return Err(SpectralError::ConvergenceFailure("power iteration degenerated".into()));
        }
        y /= s;
        let diff = (&y - &x).amax();
        x = y;
        if diff < POWER_TOL * x.amax() {
            // Small spectral gaps leave the iterate short of the fixed point;
            // a few inverse-iteration steps close the remainder.
            let lambda = (m * &x).sum() / x.sum();
            let shift = lambda * (1.0 + 1e-11) + 1e-14;
            let lu = (m - DMatrix::<f64>::identity(n, n) * shift).lu();
            for _ in 0..3 {
                match lu.solve(&x) {
                    Some(y) if y.iter().all(|v| v.is_finite()) && y.sum() != 0.0 => x = &y / y.sum(),
                    _ => break,
                }
            }
            let lambda = (m * &x).sum() / x.sum();
            if x.iter().any(|&xi| xi <= 0.0) {
                return Err(SpectralError::ConvergenceFailure("Perron vector is not positive".into()));
            }
            return Ok((lambda, x));
        }
    }
    Err(SpectralError::ConvergenceFailure(format!("power iteration exceeded {POWER_MAX_ITER} iterations")))
}

/// All eigenvalues of a real matrix via a bounded real Schur form. If the QR
/// sweep stalls, the same spectrum is recomputed from an orthogonally similar
/// matrix `H Φ H` with a fixed Householder reflector `H`.
fn dense_eigenvalues(m: &DMatrix<f64>) -> Result<Vec<C64>, SpectralError> {
    let n = m.nrows();
    for attempt in 0..6u32 {
        let a = if attempt == 0 {
            m.clone()
        } else {
            let v = DVector::from_fn(n, |i, _| ((i + 1) as f64 * 0.754_877_666_2 * attempt as f64).fract() - 0.5).normalize();
            let h = DMatrix::identity(n, n) - &v * v.transpose() * 2.0;
            &h * m * &h
        };
        if let Some(schur) = Schur::try_new(a, 4.0 * f64::EPSILON, MAX_QR_ITER) {
            return Ok(schur.complex_eigenvalues().iter().copied().collect());
        }
    }
    Err(SpectralError::ConvergenceFailure("Schur decomposition did not converge".into()))
}

fn to_complex(m: &DMatrix<f64>) -> DMatrix<C64> {
    m.map(|x| C64::new(x, 0.0))
}

/// Orthonormal basis of the (numerical) null space of `a` of dimension `dim`.
fn null_space(a: &DMatrix<C64>, dim: usize) -> Result<Vec<DVector<C64>>, SpectralError> {
    let n = a.ncols();
    let svd = a
        .clone()
        .try_svd(false, true, 4.0 * f64::EPSILON, MAX_QR_ITER)
        .ok_or_else(|| SpectralError::ConvergenceFailure("SVD did not converge".into()))?;
    let v_t = svd.v_t.ok_or_else(|| SpectralError::ConvergenceFailure("SVD failed".into()))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
    Ok(order[..dim].iter().map(|&k| v_t.row(k).adjoint().into_owned()).collect())
}

/// Unit norm with the first non-negligible component real and positive.
fn normalize_phase(x: &mut DVector<C64>) {
    let norm = x.norm();
    let pivot = x.iter().copied().find(|c| c.norm() > 1e-12 * norm).unwrap_or(C64::new(1.0, 0.0));
    let phase = pivot / pivot.norm();
    for c in x.iter_mut() {
        *c /= phase * norm;
    }
}

/// Full eigen-structure of an irreducible nonnegative matrix.
pub fn eigen_structure(phi: &DMatrix<f64>) -> Result<EigenStructure, SpectralError> {
    let n = phi.nrows();
    if n == 0 || phi.ncols() != n {
        return Err(SpectralError::NotSquare);
    }
    let phi_t = phi.transpose();
    let (phi_star, mut u) = perron_vector(&phi_t)?;
    let (phi_star_v, mut v) = perron_vector(phi)?;
    if (phi_star - phi_star_v).abs() > 1e-9 * phi_star.max(1.0) {
        return Err(SpectralError::ConvergenceFailure(format!(
            "left and right Perron values disagree: {phi_star} vs {phi_star_v}"
        )));
    }
    // vᵀ1 = 1 already holds; scale u so that vᵀu = 1.
    v /= v.sum();
    u /= v.dot(&u);

    if n == 1 {
        return Ok(EigenStructure {
            phi_star,
            phi2_star: None,
            u,
            v,
            u_mat: DMatrix::zeros(1, 0),
            v_mat: DMatrix::zeros(1, 0),
            d: DVector::zeros(0),
        });
    }

    let mut eigs = dense_eigenvalues(phi)?;
    let lead = eigs
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - phi_star).norm().total_cmp(&(b.1 - phi_star).norm()))
        .map(|(i, _)| i)
        .unwrap();
    if (eigs[lead] - phi_star).norm() > 1e-8 * phi_star.max(1.0) {
        return Err(SpectralError::ConvergenceFailure(format!(
            "dense solver eigenvalue {} does not match Perron value {phi_star}",
            eigs[lead]
        )));
    }
    eigs.remove(lead);

    // Group repeated eigenvalues; each cluster contributes a null space of
    // matching dimension.
    let mut clusters: Vec<(C64, usize)> = Vec::new();
    for e in eigs {
        match clusters.iter_mut().find(|(c, _)| (*c - e).norm() < CLUSTER_TOL) {
            Some((c, k)) => {
                *c = (*c * *k as f64 + e) / (*k as f64 + 1.0);
                *k += 1;
            }
            None => clusters.push((e, 1)),
        }
    }
    clusters.sort_by(|a, b| b.0.re.total_cmp(&a.0.re).then(b.0.im.total_cmp(&a.0.im)));

    let phi_t_c = to_complex(&phi_t);
    let mut cols: Vec<DVector<C64>> = Vec::with_capacity(n - 1);
    let mut values: Vec<C64> = Vec::with_capacity(n - 1);
    for &(lambda, mult) in &clusters {
        let shifted = &phi_t_c - DMatrix::<C64>::identity(n, n) * lambda;
        for mut x in null_space(&shifted, mult)? {
            normalize_phase(&mut x);
            cols.push(x);
            values.push(lambda);
        }
    }

    let mut p = DMatrix::<C64>::zeros(n, n);
    p.set_column(0, &u.map(|x| C64::new(x, 0.0)));
    for (k, c) in cols.iter().enumerate() {
        p.set_column(k + 1, c);
    }
    let p_inv = p
        .clone()
        .try_inverse()
        .ok_or_else(|| SpectralError::ConvergenceFailure("eigenvector matrix is singular (defective matrix?)".into()))?;
    let u_mat = p.columns(1, n - 1).into_owned();
    let v_mat = p_inv.rows(1, n - 1).transpose();
    // Rayleigh-type refinement of the non-leading eigenvalues.
    let dvals = &v_mat.transpose() * &phi_t_c * &u_mat;
    let d = DVector::from_fn(n - 1, |k, _| {
        let refined = dvals[(k, k)];
        if (refined - values[k]).norm() < 1e-6 {
            refined
        } else {
            values[k]
        }
    });
    let phi2_star = d.iter().copied().max_by(|a, b| a.re.total_cmp(&b.re));

    Ok(EigenStructure { phi_star, phi2_star, u, v, u_mat, v_mat, d })
}

/// Closed-form eigen-structure of a 2×2 irreducible matrix written through
/// `r = u_1/u_2`, `ι = φ_12 + φ_21` and `η = φ_12/ι`.
pub fn eigen_structure_n2_closed_form(phi: &DMatrix<f64>) -> Result<EigenStructure, SpectralError> {
    if phi.shape() != (2, 2) {
        return Err(SpectralError::NotSquare);
    }
    let (a, b, c, d) = (phi[(0, 0)], phi[(0, 1)], phi[(1, 0)], phi[(1, 1)]);
    let tr = a + d;
    let disc = ((a - d) * (a - d) + 4.0 * b * c).sqrt();
    let phi_star = 0.5 * (tr + disc);
    // Left eigenvector (r, 1): r φ11 + φ21 = r φ*.
    let r = c / (phi_star - a);
    let iota = b + c;
    let eta = b / iota;
    let denom_v = r * eta + (1.0 - eta);
    let q = (1.0 - eta) + r * r * eta;
    let v = DVector::from_vec(vec![r * eta / denom_v, (1.0 - eta) / denom_v]);
    let u = DVector::from_vec(vec![r, 1.0]) * (denom_v / q);
    let s = ((1.0 - eta).powi(2) + r * r * eta * eta).sqrt();
    let u_mat = DMatrix::from_column_slice(2, 1, &[C64::new((1.0 - eta) / s, 0.0), C64::new(-r * eta / s, 0.0)]);
    let v_mat = DMatrix::from_column_slice(2, 1, &[C64::new(s / q, 0.0), C64::new(-r * s / q, 0.0)]);
    let phi2 = phi_star - (c + r * r * b) / r;
    Ok(EigenStructure {
        phi_star,
        phi2_star: Some(C64::new(phi2, 0.0)),
        u,
        v,
        u_mat,
        v_mat,
        d: DVector::from_element(1, C64::new(phi2, 0.0)),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct CovarianceBlocks {
    #[serde(serialize_with = "ser_matrix")]
    pub m11: DMatrix<f64>,
    #[serde(serialize_with = "ser_matrix")]
    pub m13: DMatrix<f64>,
    #[serde(serialize_with = "ser_matrix")]
    pub m33: DMatrix<f64>,
    #[serde(serialize_with = "ser_matrix")]
    pub sigma_det: DMatrix<f64>,
    pub gap: f64,
}

pub(crate) fn ser_matrix<S: serde::Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
    crate::params::matrix_to_rows(m).serialize(s)
}

fn check_stability(eig: &EigenStructure) -> Result<(), SpectralError> {
    if let Some(p2) = eig.phi2_star {
        let ratio = p2.re / eig.phi_star;
        if ratio >= 0.5 {
            return Err(SpectralError::StabilityViolation { ratio });
        }
    }
    Ok(())
}

fn real_part_checked(m: &DMatrix<C64>) -> Result<DMatrix<f64>, SpectralError> {
    let scale = m.iter().map(|c| c.re.abs()).fold(1.0, f64::max);
    let imag = m.iter().map(|c| c.im.abs()).fold(0.0, f64::max);
    if imag > IMAG_TOL * scale {
        return Err(SpectralError::ComplexResidue(imag));
    }
    Ok(m.map(|c| c.re))
}

/// The blocks `M^{11} = U S^{11} Uᵀ`, `M^{13}`, `M^{33}` with
/// `[S^{11}]_{h,j} = φ_jφ_h/(φ*−φ_j−φ_h) (V_jᵀΣV_h)`, `S^{33}` without the
/// eigenvalue numerator and `S^{13}` with `φ_j` only.
pub fn covariance_blocks(eig: &EigenStructure, sigma_det: &DMatrix<f64>) -> Result<CovarianceBlocks, SpectralError> {
    check_stability(eig)?;
    let n = eig.n();
    if sigma_det.shape() != (n, n) {
        return Err(SpectralError::NotSquare);
    }
    let k = n - 1;
    let sigma = to_complex(sigma_det);
    let vsv = eig.v_mat.transpose() * &sigma * &eig.v_mat;
    let phi = C64::new(eig.phi_star, 0.0);
    let mut s11 = DMatrix::<C64>::zeros(k, k);
    let mut s13 = DMatrix::<C64>::zeros(k, k);
    let mut s33 = DMatrix::<C64>::zeros(k, k);
    for h in 0..k {
        for j in 0..k {
            let (ph, pj) = (eig.d[h], eig.d[j]);
            let base = vsv[(j, h)] / (phi - pj - ph);
            s33[(h, j)] = base;
            s13[(h, j)] = pj * base;
            s11[(h, j)] = pj * ph * base;
        }
    }
    let assemble = |s: &DMatrix<C64>| real_part_checked(&(&eig.u_mat * s * eig.u_mat.transpose()));
    Ok(CovarianceBlocks {
        m11: assemble(&s11)?,
        m13: assemble(&s13)?,
        m33: assemble(&s33)?,
        sigma_det: sigma_det.clone(),
        gap: eig.gap(),
    })
}

/// `Σ_det` paired with each mode.
pub fn sigma_det(eig: &EigenStructure, mode: Mode) -> DMatrix<f64> {
    match mode {
        Mode::Gamma => DMatrix::from_diagonal(&eig.u),
        Mode::W => DMatrix::identity(eig.n(), eig.n()),
    }
}

/// Deterministic CLT covariance `(vᵀΣ_det v/φ*) u uᵀ + M^{33}_det`: the
/// limit covariance is `Z̃**·C_det` for novelty counts and `P̃(1−P̃)·C_det`
/// for item counts.
pub fn c_det(eig: &EigenStructure, mode: Mode) -> Result<DMatrix<f64>, SpectralError> {
    let sigma = sigma_det(eig, mode);
    let lead = (eig.v.transpose() * &sigma * &eig.v)[(0, 0)] / eig.phi_star;
    let mut c = &eig.u * eig.u.transpose() * lead;
    if eig.n() > 1 {
        c += covariance_blocks(eig, &sigma)?.m33;
    }
    Ok(c)
}

/// `T = L Oᵀ` with `block = O diag(λ) Oᵀ` over the nonzero eigenpairs and
/// `L = diag(λ)^{-1/2}`, so that `T·block·Tᵀ = I_{N−1}`. Rows follow
/// decreasing eigenvalue; each eigenvector has its first non-negligible
/// component positive.
pub fn whitening(block: &DMatrix<f64>) -> Result<DMatrix<f64>, SpectralError> {
    let n = block.nrows();
    if n == 0 || block.ncols() != n {
        return Err(SpectralError::NotSquare);
    }
    let sym = (block + block.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
    let mut keep: Vec<usize> = (0..n).filter(|&i| eig.eigenvalues[i] > RANK_TOL * max).collect();
    if keep.len() != n - 1 {
        return Err(SpectralError::RankDeficiency { expected: n - 1, found: keep.len() });
    }
    keep.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut t = DMatrix::zeros(n - 1, n);
    for (row, &i) in keep.iter().enumerate() {
        let mut o = eig.eigenvectors.column(i).into_owned();
        if let Some(first) = o.iter().copied().find(|x| x.abs() > 1e-12) {
            if first < 0.0 {
                o = -o;
            }
        }
        let scale = eig.eigenvalues[i].sqrt();
        for c in 0..n {
            t[(row, c)] = o[c] / scale;
        }
    }
    Ok(t)
}
