//! Scalar Gaussian MRFs in information form, walk-summability, and the
//! factor-width-2 rewrite of a walk-summable MRF as a pairwise linear
//! Gaussian model.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{FactorSpec, LinearGaussianModel, VariableSpec};
use crate::numerics::{self, spd_cholesky, sym_eigenvalues};

pub const PERRON_TOL: f64 = 1e-12;
pub const PERRON_MAX_ITERS: usize = 10_000;
pub const SURPLUS_FLOOR: f64 = 1e-14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MrfError {
    #[error("information matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("potential vector has length {found}, expected {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("diagonal entry {index} is not strictly positive")]
    NonPositiveDiagonal { index: usize },
    #[error("information matrix not positive definite")]
    NotPositiveDefinite,
    #[error("factorization requires walk-summable model (lambda_min = {lambda_min})")]
    NotWalkSummable { lambda_min: f64 },
    #[error("omega = {omega} outside (0, {lambda_min})")]
    OmegaOutOfRange { omega: f64, lambda_min: f64 },
    #[error("Perron vector did not converge in {iterations} steps (residual {residual:e})")]
    PerronNotConverged { iterations: usize, residual: f64 },
    #[error("column {column} of V has {count} nonzeros")]
    TooManyNonzeros { column: usize, count: usize },
}

/// `p(x) ∝ exp(−½ xᵀJx + hᵀx)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MrfModel {
    pub j: DMatrix<f64>,
    pub h: DVector<f64>,
    /// Diagonal `D` with `J = D J_raw D`; original means are `D μ`.
    pub scale: DVector<f64>,
}

impl MrfModel {
    /// Takes `(J, h)` as given, without normalizing.
    pub fn new(j: DMatrix<f64>, h: DVector<f64>) -> Result<Self, MrfError> {
        check_shapes(&j, &h)?;
        let n = h.len();
        Ok(Self {
            j: numerics::symmetrize(&j),
            h,
            scale: DVector::from_element(n, 1.0),
        })
    }

    pub fn dim(&self) -> usize {
        self.h.len()
    }

    /// `R = I − J`.
    pub fn r(&self) -> DMatrix<f64> {
        DMatrix::identity(self.dim(), self.dim()) - &self.j
    }

    /// Maps means of this model back to the unnormalized model.
    pub fn unscale_means(&self, mu: &DVector<f64>) -> DVector<f64> {
        mu.component_mul(&self.scale)
    }
}

fn check_shapes(j: &DMatrix<f64>, h: &DVector<f64>) -> Result<(), MrfError> {
    if !j.is_square() {
        return Err(MrfError::NotSquare {
            rows: j.nrows(),
            cols: j.ncols(),
        });
    }
    if h.len() != j.nrows() {
        return Err(MrfError::DimensionMismatch {
            expected: j.nrows(),
            found: h.len(),
        });
    }
    Ok(())
}

/// Rescales to unit diagonal: `D = diag(J_raw)^{-1/2}`, `J = D J_raw D`, `h = D h_raw`.
pub fn normalize_mrf(j_raw: &DMatrix<f64>, h_raw: &DVector<f64>) -> Result<MrfModel, MrfError> {
    check_shapes(j_raw, h_raw)?;
    let n = h_raw.len();
    if let Some(index) = (0..n).find(|&i| j_raw[(i, i)].is_nan() || j_raw[(i, i)] <= 0.0) {
        return Err(MrfError::NonPositiveDiagonal { index });
    }
    let d = DVector::from_fn(n, |i, _| j_raw[(i, i)].sqrt().recip());
    let mut j = DMatrix::from_fn(n, n, |a, b| d[a] * j_raw[(a, b)] * d[b]);
    for i in 0..n {
        j[(i, i)] = 1.0;
    }
    Ok(MrfModel {
        j: numerics::symmetrize(&j),
        h: h_raw.component_mul(&d),
        scale: d,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkSummabilityReport {
    /// `λ_min(I − |R|)`.
    pub lambda_min: f64,
    /// All eigenvalues of `I − |R|`, ascending.
    pub eigenvalues: Vec<f64>,
    pub walk_summable: bool,
}

pub fn check_walk_summability(mrf: &MrfModel) -> WalkSummabilityReport {
    let n = mrf.dim();
    let abs_r = mrf.r().abs();
    let m = DMatrix::identity(n, n) - abs_r;
    let eigenvalues = sym_eigenvalues(&m);
    let lambda_min = eigenvalues.first().copied().unwrap_or(1.0);
    let lambda_max = eigenvalues.last().copied().unwrap_or(1.0);
    WalkSummabilityReport {
        lambda_min,
        walk_summable: lambda_min > numerics::PSD_REL_TOL * lambda_max.abs().max(1.0),
        eigenvalues,
    }
}

/// `J − ωI = V Vᵀ` with at most two nonzeros per column of `V`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorWidth2Factorization {
    pub omega: f64,
    pub v: DMatrix<f64>,
}

impl FactorWidth2Factorization {
    pub fn columns(&self) -> usize {
        self.v.ncols()
    }

    pub fn max_column_support(&self) -> usize {
        self.v
            .column_iter()
            .map(|c| c.iter().filter(|&&x| x != 0.0).count())
            .max()
            .unwrap_or(0)
    }

    /// `‖(J − ωI) − V Vᵀ‖_F`.
    pub fn reconstruction_error(&self, mrf: &MrfModel) -> f64 {
        let n = mrf.dim();
        (&mrf.j - DMatrix::identity(n, n) * self.omega - &self.v * self.v.transpose()).norm()
    }
}

/// Connected components of the off-diagonal support, each ascending.
fn components(abs_r: &DMatrix<f64>) -> Vec<Vec<usize>> {
    let n = abs_r.nrows();
    let mut seen = vec![false; n];
    let mut out = Vec::new();
    for s in 0..n {
        if seen[s] {
            continue;
        }
        seen[s] = true;
        let mut comp = vec![s];
        let mut k = 0;
        while k < comp.len() {
            let a = comp[k];
            for b in 0..n {
                if !seen[b] && abs_r[(a, b)] != 0.0 {
                    seen[b] = true;
                    comp.push(b);
                }
            }
            k += 1;
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

/// Positive Perron vector of `|R|`, computed per connected component by
/// power iteration on `I + |R|`; entries have unit max per component.
fn perron_scaling(abs_r: &DMatrix<f64>) -> Result<DVector<f64>, MrfError> {
    let n = abs_r.nrows();
    let mut u = DVector::from_element(n, 1.0);
    for comp in components(abs_r) {
        if comp.len() == 1 {
            continue;
        }
        let k = comp.len();
        let sub = DMatrix::from_fn(k, k, |a, b| abs_r[(comp[a], comp[b])]);
        let shifted = DMatrix::identity(k, k) + &sub;
        let mut x = DVector::from_element(k, 1.0);
        let mut residual = f64::INFINITY;
        let mut done = false;
        for _ in 0..PERRON_MAX_ITERS {
            let mut y = &shifted * &x;
            y /= y.amax();
            residual = (&y - &x).amax();
            x = y;
            if residual < PERRON_TOL {
                done = true;
                break;
            }
        }
        if !done {
            return Err(MrfError::PerronNotConverged {
                iterations: PERRON_MAX_ITERS,
                residual,
            });
        }
        for (a, &i) in comp.iter().enumerate() {
            u[i] = x[a];
        }
    }
    Ok(u)
}

/// Factor-width-2 factorization of `J − ωI` for a walk-summable, normalized MRF.
///
/// With `u` the Perron vector of `|R|` and `D = diag(u)`, `S = D (J − ωI) D`
/// is diagonally dominant. Each off-diagonal `s_ab` gives the column
/// `√|s_ab| (e_a + sign(s_ab) e_b)`, each diagonal surplus
/// `s_aa − Σ_b |s_ab|` gives `√surplus e_a`, and `V = D⁻¹ V_S`.
pub fn factor_width_two(
    mrf: &MrfModel,
    omega: Option<f64>,
) -> Result<FactorWidth2Factorization, MrfError> {
    let ws = check_walk_summability(mrf);
    if !ws.walk_summable {
        return Err(MrfError::NotWalkSummable {
            lambda_min: ws.lambda_min,
        });
    }
    let omega = match omega {
        None => 0.5 * ws.lambda_min.min(1.0),
        Some(w) if w > 0.0 && w < ws.lambda_min => w,
        Some(w) => {
            return Err(MrfError::OmegaOutOfRange {
                omega: w,
                lambda_min: ws.lambda_min,
            })
        }
    };
    let n = mrf.dim();
    let r = mrf.r();
    let u = perron_scaling(&r.abs())?;
    let m = &mrf.j - DMatrix::identity(n, n) * omega;
    let s = DMatrix::from_fn(n, n, |a, b| u[a] * m[(a, b)] * u[b]);

    let mut cols: Vec<DVector<f64>> = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            let sab = s[(a, b)];
            if sab != 0.0 {
                let w = sab.abs().sqrt();
                let mut c = DVector::zeros(n);
                c[a] = w / u[a];
                c[b] = sab.signum() * w / u[b];
                cols.push(c);
            }
        }
    }
    for a in 0..n {
        let off: f64 = (0..n).filter(|&b| b != a).map(|b| s[(a, b)].abs()).sum();
        let surplus = s[(a, a)] - off;
        if surplus > SURPLUS_FLOOR {
            let mut c = DVector::zeros(n);
            c[a] = surplus.sqrt() / u[a];
            cols.push(c);
        }
    }
    let v = if cols.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&cols)
    };
    Ok(FactorWidth2Factorization { omega, v })
}

/// Rewrites the MRF as a linear Gaussian model over scalar variables `1..=n`.
///
/// Two-nonzero columns of `V` become factors with `y = 0`, `R = 1`;
/// single-nonzero columns fold into the prior precision `p_a`. A nonzero
/// potential `h_a` splits the precision: the prior keeps `p_a − ω/2` and a
/// singleton factor with coefficient 1, noise `2/ω` and `y = 2h_a/ω` adds
/// `ω/2` back together with the information `h_a`.
pub fn mrf_to_linear_gaussian(
    mrf: &MrfModel,
    fac: &FactorWidth2Factorization,
) -> Result<LinearGaussianModel, MrfError> {
    let n = mrf.dim();
    let omega = fac.omega;
    let mut prior_prec = vec![omega; n];
    let mut factors = Vec::new();
    let mut next_id = 1u32;
    let s = |x: f64| DMatrix::from_element(1, 1, x);
    for (ci, col) in fac.v.column_iter().enumerate() {
        let nz: Vec<usize> = (0..n).filter(|&a| col[a] != 0.0).collect();
        match nz.len() {
            0 => {}
            1 => prior_prec[nz[0]] += col[nz[0]] * col[nz[0]],
            2 => {
                let ids: Vec<u32> = nz.iter().map(|&a| a as u32 + 1).collect();
                factors.push(FactorSpec {
                    id: next_id,
                    scope: ids.clone(),
                    coeff: BTreeMap::from([(ids[0], s(col[nz[0]])), (ids[1], s(col[nz[1]]))]),
                    noise_cov: s(1.0),
                    obs: DVector::zeros(1),
                });
                next_id += 1;
            }
            count => return Err(MrfError::TooManyNonzeros { column: ci, count }),
        }
    }
    for (a, &h) in mrf.h.iter().enumerate() {
        if h != 0.0 {
            prior_prec[a] -= 0.5 * omega;
            let id = a as u32 + 1;
            factors.push(FactorSpec {
                id: next_id,
                scope: vec![id],
                coeff: BTreeMap::from([(id, s(1.0))]),
                noise_cov: s(2.0 / omega),
                obs: DVector::from_element(1, 2.0 * h / omega),
            });
            next_id += 1;
        }
    }
    let variables = (0..n)
        .map(|a| VariableSpec {
            id: a as u32 + 1,
            dim: 1,
            prior_cov: s(prior_prec[a].recip()),
        })
        .collect();
    Ok(LinearGaussianModel::new(variables, factors))
}

/// Exact marginal means `J⁻¹ h`.
pub fn mrf_marginal_oracle(mrf: &MrfModel) -> Result<DVector<f64>, MrfError> {
    let chol = spd_cholesky(&mrf.j).ok_or(MrfError::NotPositiveDefinite)?;
    Ok(chol.solve(&mrf.h))
}
