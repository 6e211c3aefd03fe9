//! Distributed linear Gaussian model.
//!
//! Each factor `n` observes `y_n = Σ_{i ∈ scope(n)} A_{n,i} x_i + z_n` with
//! `z_n ~ N(0, R_n)`; each variable carries a zero-mean prior `N(0, W_i)`.
//! Ids are positive integers and everything that stacks (global matrices,
//! edge orders) uses ascending id order.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::graph::TopologyKind;
use crate::numerics::{self, has_full_column_rank, is_pd_matrix, max_asymmetry, SYMMETRY_TOL};

#[derive(Debug, Clone, PartialEq)]
pub struct VariableSpec {
    pub id: u32,
    pub dim: usize,
    pub prior_cov: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorSpec {
    pub id: u32,
    /// Variable ids this factor touches, ascending.
    pub scope: Vec<u32>,
    pub coeff: BTreeMap<u32, DMatrix<f64>>,
    pub noise_cov: DMatrix<f64>,
    pub obs: DVector<f64>,
}

impl FactorSpec {
    /// Observation dimension `m_n`.
    pub fn obs_dim(&self) -> usize {
        self.obs.len()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LinearGaussianModel {
    pub variables: Vec<VariableSpec>,
    pub factors: Vec<FactorSpec>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid model: {0}")]
    Invalid(ValidationReport),
    #[error("global model unobservable: stacked coefficient matrix is rank deficient")]
    Unobservable,
    #[error("posterior precision is not positive definite")]
    SingularPosterior,
    #[error("cannot eliminate: A_{{{factor},{factor}}} not invertible")]
    NotEliminable { factor: u32 },
    #[error("cannot eliminate factor {factor}: {reason}")]
    EliminationPrecondition { factor: u32, reason: String },
    #[error("infeasible random model request: {0}")]
    Infeasible(String),
}

/// One violated modelling assumption, with its location.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    DuplicateVariable {
        var: u32,
    },
    DuplicateFactor {
        factor: u32,
    },
    ZeroId,
    ZeroDim {
        var: u32,
    },
    PriorShape {
        var: u32,
    },
    PriorNotPd {
        var: u32,
    },
    EmptyScope {
        factor: u32,
    },
    UnknownVariable {
        factor: u32,
        var: u32,
    },
    CoeffScopeMismatch {
        factor: u32,
    },
    CoeffShape {
        factor: u32,
        var: u32,
        expected: (usize, usize),
        found: (usize, usize),
    },
    RankDeficient {
        factor: u32,
        var: u32,
    },
    NoiseShape {
        factor: u32,
    },
    NoiseNotPd {
        factor: u32,
    },
    NonFinite {
        factor: u32,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateVariable { var } => write!(f, "duplicate variable id {var}"),
            Violation::DuplicateFactor { factor } => write!(f, "duplicate factor id {factor}"),
            Violation::ZeroId => write!(f, "ids must be positive"),
            Violation::ZeroDim { var } => write!(f, "variable {var} has dimension 0"),
            Violation::PriorShape { var } => {
                write!(f, "prior_cov has wrong shape at variable {var}")
            }
            Violation::PriorNotPd { var } => {
                write!(f, "prior_cov not positive definite at variable {var}")
            }
            Violation::EmptyScope { factor } => write!(f, "empty scope at factor {factor}"),
            Violation::UnknownVariable { factor, var } => {
                write!(f, "factor {factor} references unknown variable {var}")
            }
            Violation::CoeffScopeMismatch { factor } => {
                write!(f, "coefficient keys do not match scope at factor {factor}")
            }
            Violation::CoeffShape {
                factor,
                var,
                expected,
                found,
            } => write!(
                f,
                "coefficient shape at ({factor},{var}) is {}x{}, expected {}x{}",
                found.0, found.1, expected.0, expected.1
            ),
            Violation::RankDeficient { factor, var } => {
                write!(f, "rank deficient at ({factor},{var})")
            }
            Violation::NoiseShape { factor } => {
                write!(f, "noise_cov has wrong shape at factor {factor}")
            }
            Violation::NoiseNotPd { factor } => {
                write!(f, "noise_cov not positive definite at factor {factor}")
            }
            Violation::NonFinite { factor } => write!(f, "non-finite entries at factor {factor}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    /// Non-fatal diagnostics (e.g. symmetrized covariances).
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "valid");
        }
        let msgs: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        write!(f, "{}", msgs.join("; "))
    }
}

/// Global stacking `y = A x + z` in ascending id order.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedSystem {
    pub a: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub y: DVector<f64>,
    /// `(variable id, column offset, dim)`.
    pub var_offsets: Vec<(u32, usize, usize)>,
    /// `(factor id, row offset, obs dim)`.
    pub factor_offsets: Vec<(u32, usize, usize)>,
}

impl StackedSystem {
    /// `W⁻¹ + Aᵀ R⁻¹ A`.
    pub fn posterior_precision(&self) -> Option<DMatrix<f64>> {
        let w_inv = numerics::spd_inverse(&self.w)?;
        let r_chol = numerics::spd_cholesky(&self.r)?;
        let rinv_a = r_chol.solve(&self.a);
        Some(numerics::symmetrize(&(w_inv + self.a.transpose() * rinv_a)))
    }
}

/// Exact centralized MMSE estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct CentralizedSolution {
    pub mean: DVector<f64>,
    pub posterior_precision: DMatrix<f64>,
    pub var_offsets: Vec<(u32, usize, usize)>,
}

impl CentralizedSolution {
    pub fn mean_of(&self, var: u32) -> Option<DVector<f64>> {
        self.var_offsets
            .iter()
            .find(|(id, _, _)| *id == var)
            .map(|&(_, off, dim)| self.mean.rows(off, dim).into_owned())
    }

    /// Marginal covariance blocks, one per variable in ascending order.
    pub fn covariance_blocks(&self) -> Vec<(u32, DMatrix<f64>)> {
        let cov = numerics::spd_inverse(&self.posterior_precision)
            .expect("posterior precision is positive definite by construction");
        self.var_offsets
            .iter()
            .map(|&(id, off, dim)| (id, cov.view((off, off), (dim, dim)).into_owned()))
            .collect()
    }
}

impl LinearGaussianModel {
    /// Builds a model with variables, factors and scopes put in ascending order.
    pub fn new(mut variables: Vec<VariableSpec>, mut factors: Vec<FactorSpec>) -> Self {
        variables.sort_by_key(|v| v.id);
        factors.sort_by_key(|f| f.id);
        for f in &mut factors {
            f.scope.sort_unstable();
        }
        Self { variables, factors }
    }

    pub fn variable(&self, id: u32) -> Option<&VariableSpec> {
        self.variables.iter().find(|v| v.id == id)
    }

    pub fn factor(&self, id: u32) -> Option<&FactorSpec> {
        self.factors.iter().find(|f| f.id == id)
    }

    pub fn total_dim(&self) -> usize {
        self.variables.iter().map(|v| v.dim).sum()
    }

    /// Lists every violated assumption. Never fails.
    pub fn validate(&self) -> ValidationReport {
        validate_model(self)
    }

    pub fn ensure_valid(&self) -> Result<(), ModelError> {
        let report = self.validate();
        if report.is_valid() {
            Ok(())
        } else {
            Err(ModelError::Invalid(report))
        }
    }
}

pub fn validate_model(model: &LinearGaussianModel) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut dims: BTreeMap<u32, usize> = BTreeMap::new();
    let v = &mut report.violations;

    for var in &model.variables {
        if var.id == 0 {
            v.push(Violation::ZeroId);
        }
        if dims.insert(var.id, var.dim).is_some() {
            v.push(Violation::DuplicateVariable { var: var.id });
        }
        if var.dim == 0 {
            v.push(Violation::ZeroDim { var: var.id });
            continue;
        }
        if var.prior_cov.shape() != (var.dim, var.dim) {
            v.push(Violation::PriorShape { var: var.id });
            continue;
        }
        if max_asymmetry(&var.prior_cov) > SYMMETRY_TOL {
            report
                .warnings
                .push(format!("prior_cov of variable {} symmetrized", var.id));
        }
        if !is_pd_matrix(&var.prior_cov) {
            v.push(Violation::PriorNotPd { var: var.id });
        }
    }

    let mut seen_factors = BTreeSet::new();
    for f in &model.factors {
        if f.id == 0 {
            v.push(Violation::ZeroId);
        }
        if !seen_factors.insert(f.id) {
            v.push(Violation::DuplicateFactor { factor: f.id });
        }
        if f.scope.is_empty() {
            v.push(Violation::EmptyScope { factor: f.id });
        }
        let scope: BTreeSet<u32> = f.scope.iter().copied().collect();
        let keys: BTreeSet<u32> = f.coeff.keys().copied().collect();
        if scope != keys || scope.len() != f.scope.len() {
            v.push(Violation::CoeffScopeMismatch { factor: f.id });
        }
        let m = f.obs.len();
        if f.noise_cov.shape() != (m, m) {
            v.push(Violation::NoiseShape { factor: f.id });
        } else if f
            .noise_cov
            .iter()
            .chain(f.obs.iter())
            .any(|x| !x.is_finite())
        {
            v.push(Violation::NonFinite { factor: f.id });
        } else {
            if max_asymmetry(&f.noise_cov) > SYMMETRY_TOL {
                report
                    .warnings
                    .push(format!("noise_cov of factor {} symmetrized", f.id));
            }
            if !is_pd_matrix(&f.noise_cov) {
                v.push(Violation::NoiseNotPd { factor: f.id });
            }
        }
        for (&var, a) in &f.coeff {
            let Some(&dim) = dims.get(&var) else {
                v.push(Violation::UnknownVariable { factor: f.id, var });
                continue;
            };
            if a.shape() != (m, dim) {
                v.push(Violation::CoeffShape {
                    factor: f.id,
                    var,
                    expected: (m, dim),
                    found: a.shape(),
                });
                continue;
            }
            if !has_full_column_rank(a) {
                v.push(Violation::RankDeficient { factor: f.id, var });
            }
        }
    }
    report
}

/// Stacks the model into `(A, W, R, y)`; rejects invalid models.
pub fn stack_global(model: &LinearGaussianModel) -> Result<StackedSystem, ModelError> {
    model.ensure_valid()?;
    Ok(stack_unchecked(model))
}

fn stack_unchecked(model: &LinearGaussianModel) -> StackedSystem {
    let mut vars: Vec<&VariableSpec> = model.variables.iter().collect();
    vars.sort_by_key(|v| v.id);
    let mut factors: Vec<&FactorSpec> = model.factors.iter().collect();
    factors.sort_by_key(|f| f.id);

    let mut var_offsets = Vec::with_capacity(vars.len());
    let mut col = 0;
    for v in &vars {
        var_offsets.push((v.id, col, v.dim));
        col += v.dim;
    }
    let mut factor_offsets = Vec::with_capacity(factors.len());
    let mut row = 0;
    for f in &factors {
        factor_offsets.push((f.id, row, f.obs_dim()));
        row += f.obs_dim();
    }

    let mut a = DMatrix::zeros(row, col);
    let mut r = DMatrix::zeros(row, row);
    let mut y = DVector::zeros(row);
    let mut w = DMatrix::zeros(col, col);
    for (v, &(_, off, dim)) in vars.iter().zip(&var_offsets) {
        w.view_mut((off, off), (dim, dim)).copy_from(&v.prior_cov);
    }
    for (f, &(_, roff, m)) in factors.iter().zip(&factor_offsets) {
        r.view_mut((roff, roff), (m, m)).copy_from(&f.noise_cov);
        y.rows_mut(roff, m).copy_from(&f.obs);
        for (var, block) in &f.coeff {
            let &(_, coff, dim) = var_offsets
                .iter()
                .find(|(id, _, _)| id == var)
                .expect("validated scope");
            a.view_mut((roff, coff), (m, dim)).copy_from(block);
        }
    }
    StackedSystem {
        a,
        w,
        r,
        y,
        var_offsets,
        factor_offsets,
    }
}

/// `x̂ = (W⁻¹ + AᵀR⁻¹A)⁻¹ AᵀR⁻¹ y`, requiring a full-column-rank stacked `A`.
pub fn centralized_solve(model: &LinearGaussianModel) -> Result<CentralizedSolution, ModelError> {
    let sys = stack_global(model)?;
    if !has_full_column_rank(&sys.a) {
        return Err(ModelError::Unobservable);
    }
    solve_stacked(&sys)
}

/// Posterior mean and precision without the observability requirement.
///
/// The priors alone make the posterior proper, so this is well defined for
/// any valid model, including ones where some variables are prior-only.
pub fn posterior_solve(model: &LinearGaussianModel) -> Result<CentralizedSolution, ModelError> {
    let sys = stack_global(model)?;
    solve_stacked(&sys)
}

fn solve_stacked(sys: &StackedSystem) -> Result<CentralizedSolution, ModelError> {
    let precision = sys
        .posterior_precision()
        .ok_or(ModelError::SingularPosterior)?;
    let r_chol = numerics::spd_cholesky(&sys.r).ok_or(ModelError::SingularPosterior)?;
    let rhs = sys.a.transpose() * r_chol.solve(&sys.y);
    let chol = numerics::spd_cholesky(&precision).ok_or(ModelError::SingularPosterior)?;
    Ok(CentralizedSolution {
        mean: chol.solve(&rhs),
        posterior_precision: precision,
        var_offsets: sys.var_offsets.clone(),
    })
}

/// Removes a noiseless factor `n` (declared `R_n = 0`) by substituting
/// `x_n = A_{n,n}⁻¹ (y_n − Σ_{i≠n} A_{n,i} x_i)` into every other factor
/// that touches `x_n`.
///
/// The prior of `x_n` turns into a new factor over the remaining scope of
/// `n` with observation `A_{n,n}⁻¹ y_n`, coefficients `A_{n,n}⁻¹ A_{n,i}`
/// and noise `W_n`; it gets id `max factor id + 1`. Variable `n` and
/// factor `n` are removed; other ids are unchanged.
pub fn eliminate_noiseless_factor(
    model: &LinearGaussianModel,
    n: u32,
) -> Result<LinearGaussianModel, ModelError> {
    let precondition = |reason: &str| ModelError::EliminationPrecondition {
        factor: n,
        reason: reason.to_string(),
    };
    let fac = model
        .factor(n)
        .ok_or_else(|| precondition("no such factor"))?;
    let var = model
        .variable(n)
        .ok_or_else(|| precondition("no variable with the same id"))?;
    if fac.noise_cov.iter().any(|x| x.abs() > 1e-12) {
        return Err(precondition("noise_cov is not zero"));
    }
    let a_nn = fac
        .coeff
        .get(&n)
        .ok_or_else(|| precondition("variable not in the factor scope"))?;
    if !a_nn.is_square() || !has_full_column_rank(a_nn) {
        return Err(ModelError::NotEliminable { factor: n });
    }
    let g = a_nn
        .clone()
        .try_inverse()
        .ok_or(ModelError::NotEliminable { factor: n })?;
    let g_y = &g * &fac.obs;
    // x_n = g_y − Σ_i g_a[i] x_i
    let g_a: BTreeMap<u32, DMatrix<f64>> = fac
        .coeff
        .iter()
        .filter(|(&i, _)| i != n)
        .map(|(&i, a)| (i, &g * a))
        .collect();

    let mut factors = Vec::with_capacity(model.factors.len());
    for f in &model.factors {
        if f.id == n {
            continue;
        }
        let Some(a_kn) = f.coeff.get(&n) else {
            factors.push(f.clone());
            continue;
        };
        let mut coeff: BTreeMap<u32, DMatrix<f64>> = f
            .coeff
            .iter()
            .filter(|(&i, _)| i != n)
            .map(|(&i, a)| (i, a.clone()))
            .collect();
        for (&i, ga) in &g_a {
            let update = a_kn * ga;
            coeff
                .entry(i)
                .and_modify(|a| *a -= &update)
                .or_insert_with(|| -update.clone());
        }
        factors.push(FactorSpec {
            id: f.id,
            scope: coeff.keys().copied().collect(),
            obs: &f.obs - a_kn * &g_y,
            noise_cov: f.noise_cov.clone(),
            coeff,
        });
    }
    if !g_a.is_empty() {
        let new_id = model.factors.iter().map(|f| f.id).max().unwrap_or(0) + 1;
        factors.push(FactorSpec {
            id: new_id,
            scope: g_a.keys().copied().collect(),
            coeff: g_a,
            noise_cov: var.prior_cov.clone(),
            obs: g_y,
        });
    }
    let variables = model
        .variables
        .iter()
        .filter(|v| v.id != n)
        .cloned()
        .collect();
    Ok(LinearGaussianModel::new(variables, factors))
}

/// Parameters for [`random_model`].
#[derive(Debug, Clone, PartialEq)]
pub struct RandomModelSpec {
    pub seed: u64,
    pub agents: usize,
    pub min_dim: usize,
    pub max_dim: usize,
    pub topology: TopologyKind,
    /// Scale of the cross-coupling coefficient blocks.
    pub coeff_scale: f64,
    /// Scale of the noise standard deviation.
    pub noise_scale: f64,
}

impl RandomModelSpec {
    pub fn new(seed: u64, agents: usize, topology: TopologyKind) -> Self {
        Self {
            seed,
            agents,
            min_dim: 1,
            max_dim: 1,
            topology,
            coeff_scale: 0.5,
            noise_scale: 1.0,
        }
    }

    pub fn dims(mut self, min_dim: usize, max_dim: usize) -> Self {
        self.min_dim = min_dim;
        self.max_dim = max_dim;
        self
    }

    pub fn scales(mut self, coeff_scale: f64, noise_scale: f64) -> Self {
        self.coeff_scale = coeff_scale;
        self.noise_scale = noise_scale;
        self
    }
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, x: usize) -> usize {
        let mut r = x;
        while self.0[r] != r {
            r = self.0[r];
        }
        let mut c = x;
        while self.0[c] != r {
            let next = self.0[c];
            self.0[c] = r;
            c = next;
        }
        r
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn random_spd(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DMatrix<f64> {
    let b = gaussian_matrix(rng, n, n);
    let s = (&b * b.transpose()) / (n as f64) * 0.5 + DMatrix::identity(n, n) * 0.5;
    numerics::symmetrize(&(s * scale))
}

/// Deterministic random model whose factor graph has the requested topology.
///
/// Factor `n` always touches variable `n` (with an identity-dominated
/// block, so the stacked `A` has full column rank) plus up to two earlier
/// variables from distinct components, which keeps the bipartite graph a
/// forest. Loops are then closed by adding extra variables to factor
/// scopes: one for `single_loop_plus_forest`, at least two for `multi_loop`.
pub fn random_model(spec: &RandomModelSpec) -> Result<LinearGaussianModel, ModelError> {
    let m = spec.agents;
    if m == 0 {
        return Err(ModelError::Infeasible("at least one agent required".into()));
    }
    if spec.min_dim == 0 || spec.max_dim < spec.min_dim {
        return Err(ModelError::Infeasible(
            "dims must satisfy 1 <= min <= max".into(),
        ));
    }
    if !(spec.coeff_scale > 0.0 && spec.noise_scale > 0.0) {
        return Err(ModelError::Infeasible("scales must be positive".into()));
    }
    if spec.topology != TopologyKind::Forest && m == 1 {
        return Err(ModelError::Infeasible(format!(
            "{} needs at least 2 agents",
            spec.topology
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dims: Vec<usize> = (0..m)
        .map(|_| rng.random_range(spec.min_dim..=spec.max_dim))
        .collect();

    let connected = spec.topology != TopologyKind::Forest;
    let mut uf = UnionFind((0..m).collect());
    let mut scopes: Vec<BTreeSet<usize>> = Vec::with_capacity(m);
    for n in 0..m {
        let mut scope = BTreeSet::from([n]);
        if n > 0 {
            let lo = if connected { 1 } else { 0 };
            let want = rng.random_range(lo..=2usize);
            let mut comps = BTreeSet::new();
            for _ in 0..(4 * want) {
                if scope.len() > want {
                    break;
                }
                let cand = rng.random_range(0..n);
                if comps.insert(uf.find(cand)) {
                    scope.insert(cand);
                }
            }
        }
        for &v in &scope {
            uf.union(n, v);
        }
        scopes.push(scope);
    }

    let extra = match spec.topology {
        TopologyKind::Forest => 0,
        TopologyKind::SingleLoopPlusForest => 1,
        TopologyKind::MultiLoop => 2 + rng.random_range(0..=m / 2),
    };
    let mut open: Vec<(usize, usize)> = Vec::new();
    for (f, scope) in scopes.iter().enumerate() {
        for v in 0..m {
            if !scope.contains(&v) {
                open.push((f, v));
            }
        }
    }
    let min_extra = if spec.topology == TopologyKind::MultiLoop {
        2
    } else {
        extra
    };
    if open.len() < min_extra {
        return Err(ModelError::Infeasible(format!(
            "cannot build {} with {m} agents",
            spec.topology
        )));
    }
    for _ in 0..extra.min(open.len()) {
        let k = rng.random_range(0..open.len());
        let (f, v) = open.swap_remove(k);
        scopes[f].insert(v);
    }

    let variables: Vec<VariableSpec> = (0..m)
        .map(|i| VariableSpec {
            id: i as u32 + 1,
            dim: dims[i],
            prior_cov: random_spd(&mut rng, dims[i], 1.0),
        })
        .collect();
    let mut factors = Vec::with_capacity(m);
    for (n, scope) in scopes.iter().enumerate() {
        let rows = scope.iter().map(|&i| dims[i]).max().unwrap_or(1);
        let mut coeff = BTreeMap::new();
        for &i in scope {
            let block = loop {
                let b = if i == n {
                    DMatrix::identity(rows, dims[i])
                        + gaussian_matrix(&mut rng, rows, dims[i]) * 0.3
                } else {
                    gaussian_matrix(&mut rng, rows, dims[i]) * spec.coeff_scale
                };
                if has_full_column_rank(&b) {
                    let sv = b.clone().singular_values();
                    let hi = sv.max();
                    if sv.min() > 1e-3 * hi {
                        break b;
                    }
                }
            };
            coeff.insert(i as u32 + 1, block);
        }
        let noise_cov = random_spd(&mut rng, rows, spec.noise_scale * spec.noise_scale);
        let obs = DVector::from_fn(rows, |_, _| rng.sample::<f64, _>(StandardNormal));
        factors.push(FactorSpec {
            id: n as u32 + 1,
            scope: scope.iter().map(|&i| i as u32 + 1).collect(),
            coeff,
            noise_cov,
            obs,
        });
    }
    let model = LinearGaussianModel::new(variables, factors);
    model.ensure_valid()?;
    Ok(model)
}
