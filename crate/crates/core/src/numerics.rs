//! Dense numerical kernels with explicit tolerance contracts.
//!
//! Everything here works on small dense `nalgebra` matrices. Positive
//! (semi)definiteness is always decided on eigenvalues with a tolerance
//! relative to the matrix scale, so the same predicates are used by the
//! model validator, the BP engine and the convergence analysis.

use nalgebra::linalg::Schur;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use thiserror::Error;

/// Relative eigenvalue tolerance for psd / pd decisions.
pub const PSD_REL_TOL: f64 = 1e-9;

/// Largest asymmetry accepted silently before symmetrization.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Above this dimension `spectral_radius` switches to power iteration.
pub const DENSE_EIG_MAX_DIM: usize = 2000;

const POWER_ITER_TOL: f64 = 1e-10;
const POWER_ITER_MAX: usize = 100_000;
/// Schur sweeps allowed per matrix dimension.
const SCHUR_MAX_ITERS: usize = 200;
const SQUARING_STEPS: i32 = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("part metric requires positive definite arguments")]
    NotPositiveDefinite,
    #[error("matrix has non-finite entries")]
    NonFinite,
}

/// A square matrix that has been symmetrized on construction.
///
/// The asymmetry observed before symmetrization is kept so callers can
/// surface it as a diagnostic.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    inner: DMatrix<f64>,
    asymmetry: f64,
}

impl SymMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self, NumericsError> {
        if !m.is_square() {
            return Err(NumericsError::NotSquare {
                rows: m.nrows(),
                cols: m.ncols(),
            });
        }
        let asymmetry = max_asymmetry(&m);
        if asymmetry > SYMMETRY_TOL {
            log::warn!("symmetrizing matrix with asymmetry {asymmetry:e}");
        }
        Ok(Self {
            inner: symmetrize(&m),
            asymmetry,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            inner: DMatrix::identity(n, n),
            asymmetry: 0.0,
        }
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        Self {
            inner: DMatrix::from_diagonal(&DVector::from_row_slice(d)),
            asymmetry: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.inner.nrows()
    }

    pub fn asymmetry(&self) -> f64 {
        self.asymmetry
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.inner
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.inner
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        sym_eigenvalues(&self.inner)
    }
}

pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Ascending eigenvalues of the symmetric part of `m`.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    let s = symmetrize(m);
    let mut ev: Vec<f64> = s.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

fn psd_from_eigs(ev: &[f64], scale: f64) -> bool {
    match ev.first() {
        None => true,
        Some(&lo) => lo >= -PSD_REL_TOL * scale,
    }
}

fn pd_from_eigs(ev: &[f64], scale: f64) -> bool {
    match ev.first() {
        None => true,
        Some(&lo) => lo > PSD_REL_TOL * scale,
    }
}

fn eig_scale(ev: &[f64]) -> f64 {
    ev.last().copied().unwrap_or(0.0).max(1.0)
}

pub fn is_psd(x: &SymMatrix) -> bool {
    is_psd_matrix(x.as_matrix())
}

pub fn is_pd(x: &SymMatrix) -> bool {
    is_pd_matrix(x.as_matrix())
}

/// `λ_min ≥ −tol·max(1, λ_max)` on the symmetric part.
pub fn is_psd_matrix(m: &DMatrix<f64>) -> bool {
    if m.iter().any(|v| !v.is_finite()) {
        return false;
    }
    let ev = sym_eigenvalues(m);
    psd_from_eigs(&ev, eig_scale(&ev))
}

/// `λ_min > tol·max(1, λ_max)` on the symmetric part.
pub fn is_pd_matrix(m: &DMatrix<f64>) -> bool {
    if m.iter().any(|v| !v.is_finite()) {
        return false;
    }
    let ev = sym_eigenvalues(m);
    pd_from_eigs(&ev, eig_scale(&ev))
}

/// Outcome of comparing two symmetric matrices in the Loewner order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PsdOrdering {
    /// `X ⪰ Y` (and not equal).
    Greater,
    /// `Y ⪰ X` (and not equal).
    Less,
    Equal,
    Incomparable,
}

impl PsdOrdering {
    /// `X ⪰ Y` holds, strictly or with equality.
    pub fn is_ge(self) -> bool {
        matches!(self, PsdOrdering::Greater | PsdOrdering::Equal)
    }

    pub fn is_le(self) -> bool {
        matches!(self, PsdOrdering::Less | PsdOrdering::Equal)
    }
}

/// Loewner comparison via psd tests on `X − Y` and `Y − X`.
///
/// The tolerance is relative to the larger operand, not to the difference,
/// so that rounding in nearly equal operands reads as equality.
pub fn psd_compare(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<PsdOrdering, NumericsError> {
    if !x.is_square() {
        return Err(NumericsError::NotSquare {
            rows: x.nrows(),
            cols: x.ncols(),
        });
    }
    if x.shape() != y.shape() {
        return Err(NumericsError::DimensionMismatch {
            left: x.nrows(),
            right: y.nrows(),
        });
    }
    let scale = operand_scale(x).max(operand_scale(y)).max(1.0);
    let diff = sym_eigenvalues(&(x - y));
    let x_ge_y = psd_from_eigs(&diff, scale);
    let y_ge_x = match diff.last() {
        None => true,
        Some(&hi) => -hi >= -PSD_REL_TOL * scale,
    };
    Ok(match (x_ge_y, y_ge_x) {
        (true, true) => PsdOrdering::Equal,
        (true, false) => PsdOrdering::Greater,
        (false, true) => PsdOrdering::Less,
        (false, false) => PsdOrdering::Incomparable,
    })
}

fn operand_scale(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m)
        .iter()
        .fold(0.0f64, |acc, v| acc.max(v.abs()))
}

/// Part (Birkhoff) metric value, natural-log scale.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct PartMetricValue(pub f64);

impl PartMetricValue {
    pub fn value(self) -> f64 {
        self.0
    }
}

/// `d(X, Y) = log max(λ_max(X⁻¹Y), λ_max(Y⁻¹X))` for positive definite `X`, `Y`.
///
/// Evaluated as the extreme eigenvalues of `L⁻¹ Y L⁻ᵀ` with `X = L Lᵀ`.
pub fn part_metric(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<PartMetricValue, NumericsError> {
    if x.shape() != y.shape() {
        return Err(NumericsError::DimensionMismatch {
            left: x.nrows(),
            right: y.nrows(),
        });
    }
    if !is_pd_matrix(x) || !is_pd_matrix(y) {
        return Err(NumericsError::NotPositiveDefinite);
    }
    if x.nrows() == 0 {
        return Ok(PartMetricValue(0.0));
    }
    let chol = Cholesky::new(symmetrize(x)).ok_or(NumericsError::NotPositiveDefinite)?;
    let l = chol.l();
    let linv_y = l
        .solve_lower_triangular(&symmetrize(y))
        .ok_or(NumericsError::NotPositiveDefinite)?;
    let c = l
        .solve_lower_triangular(&linv_y.transpose())
        .ok_or(NumericsError::NotPositiveDefinite)?;
    let ev = sym_eigenvalues(&c);
    let lo = ev[0];
    let hi = ev[ev.len() - 1];
    if lo <= 0.0 {
        return Err(NumericsError::NotPositiveDefinite);
    }
    Ok(PartMetricValue(hi.ln().max(-lo.ln()).max(0.0)))
}

/// Spectral radius of a general square matrix.
///
/// Dense Schur-based eigenvalues up to [`DENSE_EIG_MAX_DIM`]; above that, or
/// if the Schur iteration stalls, a normalized power iteration whose
/// growth-rate estimate is accepted once successive estimates agree to 1e-10
/// relative.
pub fn spectral_radius(m: &DMatrix<f64>) -> Result<f64, NumericsError> {
    if !m.is_square() {
        return Err(NumericsError::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(NumericsError::NonFinite);
    }
    let n = m.nrows();
    if n == 0 {
        return Ok(0.0);
    }
    if n > DENSE_EIG_MAX_DIM {
        return Ok(power_spectral_radius(m).0);
    }
    // The unbounded `Schur::new` can cycle forever on some inputs.
    match Schur::try_new(m.clone(), f64::EPSILON, SCHUR_MAX_ITERS * n) {
        Some(schur) => Ok(schur
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)),
        None => {
            log::warn!(
                "Schur iteration did not converge for a {n}x{n} matrix; using repeated squaring"
            );
            Ok(squaring_spectral_radius(m))
        }
    }
}

/// `ρ(M) = lim ‖M^(2^k)‖^(1/2^k)`, squaring with renormalization so the
/// scale is carried as a logarithm. Exact zero for nilpotent `M`.
pub fn squaring_spectral_radius(m: &DMatrix<f64>) -> f64 {
    let norm = m.norm();
    if norm == 0.0 {
        return 0.0;
    }
    let mut a = m / norm;
    let mut log_scale = norm.ln();
    let mut est = norm;
    for k in 1..=SQUARING_STEPS {
        let sq = &a * &a;
        let c = sq.norm();
        if c == 0.0 {
            return 0.0;
        }
        a = sq / c;
        log_scale = 2.0 * log_scale + c.ln();
        let next = (log_scale / 2f64.powi(k)).exp();
        if (next - est).abs() <= f64::EPSILON * next {
            return next;
        }
        est = next;
    }
    est
}

/// Power-iteration estimate of `ρ(M)` and the last relative change of the
/// estimate (the documented residual).
///
/// Uses the geometric mean of two consecutive growth factors, which also
/// settles for a dominant pair `±ρ`.
pub fn power_spectral_radius(m: &DMatrix<f64>) -> (f64, f64) {
    let n = m.nrows();
    let mut x = DVector::from_fn(n, |i, _| 1.0 + (i as f64 * 0.618_033_988_7).fract());
    x /= x.norm();
    let mut prev = f64::NAN;
    let mut prev_growth = 1.0;
    let mut residual = f64::INFINITY;
    for _ in 0..POWER_ITER_MAX {
        let y = m * &x;
        let g = y.norm();
        if g == 0.0 {
            return (0.0, 0.0);
        }
        let est = (g * prev_growth).sqrt();
        prev_growth = g;
        x = y / g;
        if prev.is_finite() {
            residual = (est - prev).abs() / est.max(f64::MIN_POSITIVE);
            if residual < POWER_ITER_TOL {
                return (est, residual);
            }
        }
        prev = est;
    }
    (prev, residual)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eig(x: &SymMatrix) -> f64 {
    x.eigenvalues().first().copied().unwrap_or(f64::INFINITY)
}

/// Inverse of a symmetric positive definite matrix via Cholesky.
pub fn spd_inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    Cholesky::new(symmetrize(m)).map(|c| symmetrize(&c.inverse()))
}

pub fn spd_cholesky(m: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    Cholesky::new(symmetrize(m))
}

/// Singular-value based full column rank test: `σ_min > 1e-10·σ_max`.
pub fn has_full_column_rank(m: &DMatrix<f64>) -> bool {
    if m.ncols() == 0 {
        return true;
    }
    if m.nrows() < m.ncols() || m.iter().any(|v| !v.is_finite()) {
        return false;
    }
    let sv = m.clone().singular_values();
    let hi = sv.iter().copied().fold(0.0, f64::max);
    let lo = sv.iter().copied().fold(f64::INFINITY, f64::min);
    hi > 0.0 && lo > 1e-10 * hi
}

/// Block diagonal matrix from square blocks.
pub fn block_diag(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let n: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(n, n);
    let mut off = 0;
    for b in blocks {
        out.view_mut((off, off), b.shape()).copy_from(b);
        off += b.nrows();
    }
    out
}
