//! Vector-valued Gaussian belief propagation on the model's factor graph.
//!
//! Messages are Gaussian and carried as `(J, v)`: information matrix and
//! mean vector. One iteration computes every variable→factor message from
//! the previous factor→variable messages and then every factor→variable
//! message from those:
//!
//! ```text
//! J_{j→f_n} = W_j⁻¹ + Σ_{f_k ∈ B(j)∖f_n} J_{f_k→j}
//! v_{j→f_n} = J_{j→f_n}⁻¹ Σ_{f_k ∈ B(j)∖f_n} J_{f_k→j} v_{f_k→j}
//! M         = R_n + Σ_{j ∈ B(f_n)∖i} A_{n,j} J_{j→f_n}⁻¹ A_{n,j}ᵀ
//! J_{f_n→i} = A_{n,i}ᵀ M⁻¹ A_{n,i}
//! v_{f_n→i} = J_{f_n→i}⁻¹ A_{n,i}ᵀ M⁻¹ (y_n − Σ_{j ∈ B(f_n)∖i} A_{n,j} v_{j→f_n})
//! ```
//!
//! Normalization constants are never materialized; only their existence
//! condition is checked (in strict mode).

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{build_factor_graph, canonical_edge_order, EdgeIndex, FactorGraph};
use crate::model::{LinearGaussianModel, ModelError};
use crate::numerics::{self, is_pd_matrix, is_psd_matrix, part_metric, spd_cholesky, spd_inverse};
use crate::par::{self, Execution};

pub const DEFAULT_TOL_J: f64 = 1e-10;
pub const DEFAULT_TOL_V: f64 = 1e-10;
pub const DEFAULT_MAX_ITERS: usize = 10_000;
pub const DIVERGENCE_LIMIT: f64 = 1e12;

/// Part-metric values below this are treated as numerically zero.
pub const PART_METRIC_FLOOR: f64 = 1e-13;

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    /// Information matrix `J`.
    pub info: DMatrix<f64>,
    /// Mean vector `v`.
    pub mean: DVector<f64>,
}

impl Message {
    pub fn zero(dim: usize) -> Self {
        Self {
            info: DMatrix::zeros(dim, dim),
            mean: DVector::zeros(dim),
        }
    }
}

/// All directed-edge messages, positioned by [`EdgeIndex`].
#[derive(Debug, Clone, PartialEq)]
pub struct MessageSet {
    pub f2v: Vec<Message>,
    pub v2f: Vec<Message>,
    pub iteration: usize,
}

impl MessageSet {
    pub fn f2v_infos(&self) -> Vec<DMatrix<f64>> {
        self.f2v.iter().map(|m| m.info.clone()).collect()
    }

    pub fn max_abs_mean(&self) -> f64 {
        self.f2v
            .iter()
            .chain(&self.v2f)
            .flat_map(|m| m.mean.iter())
            .fold(0.0f64, |acc, v| {
                if v.is_finite() {
                    acc.max(v.abs())
                } else {
                    f64::INFINITY
                }
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitStrategy {
    Zero,
    LowerBound,
    UpperBound,
    /// Per f2v edge `(factor, var)` information matrices; missing edges are zero.
    CustomPsd(BTreeMap<(u32, u32), DMatrix<f64>>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Schedule {
    /// Every message of iteration ℓ reads only iteration ℓ−1.
    #[default]
    Synchronous,
    /// Factor sweep in ascending id order, reading the latest messages.
    SequentialAscending,
    /// Factor sweep in a fresh seeded permutation each iteration.
    RandomPermutation(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    F2v,
    V2f,
}

impl fmt::Display for EdgeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EdgeKind::F2v => "f2v",
            EdgeKind::V2f => "v2f",
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BpError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("message undefined on edge f{factor}->x{var}: inner matrix not positive definite")]
    MessageUndefined { factor: u32, var: u32 },
    #[error("variable message x{var}->f{factor} has a singular information matrix")]
    SingularVariableMessage { var: u32, factor: u32 },
    #[error("existence condition violated on edge f{factor}->x{var} at iteration {iteration}")]
    Existence {
        factor: u32,
        var: u32,
        iteration: usize,
    },
    #[error("{kind} message {from}->{to} not positive definite at iteration {iteration}")]
    NotPositiveDefinite {
        kind: EdgeKind,
        from: u32,
        to: u32,
        iteration: usize,
    },
    #[error("invalid initialization: {0}")]
    InvalidInit(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Belief {
    pub var: u32,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BpOptions {
    pub tol_j: f64,
    pub tol_v: f64,
    pub max_iters: usize,
    pub divergence_limit: f64,
    /// Check the existence condition and message positive definiteness on
    /// every edge, every iteration.
    pub strict: bool,
    /// Per-f2v-edge reference information matrices (usually `J*`).
    pub reference: Option<Vec<DMatrix<f64>>>,
    pub record_edges: bool,
    /// Keep every iterate's f2v information matrices.
    pub record_info: bool,
    pub snapshot_every: Option<usize>,
    pub execution: Execution,
}

impl Default for BpOptions {
    fn default() -> Self {
        Self {
            tol_j: DEFAULT_TOL_J,
            tol_v: DEFAULT_TOL_V,
            max_iters: DEFAULT_MAX_ITERS,
            divergence_limit: DIVERGENCE_LIMIT,
            strict: false,
            reference: None,
            record_edges: true,
            record_info: false,
            snapshot_every: None,
            execution: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub kind: EdgeKind,
    pub from: u32,
    pub to: u32,
    pub d_info: f64,
    pub d_mean: f64,
    pub part_metric: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    /// `max_e ‖ΔJ_e‖_F / (1 + ‖J_e‖_F)`.
    pub max_d_info: f64,
    /// `max_e ‖Δv_e‖_∞`.
    pub max_d_mean: f64,
    /// `max_e d(J_e, J*_e)` over f2v edges, when a reference is set.
    pub max_part_metric: Option<f64>,
    pub edges: Vec<EdgeRecord>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BpTrajectory {
    /// `d(J⁽⁰⁾, J*)`; infinite when the initial matrices are singular.
    pub initial_part_metric: Option<f64>,
    pub iterations: Vec<IterationRecord>,
    pub snapshots: Vec<(usize, Vec<Belief>)>,
    pub info_history: Vec<Vec<DMatrix<f64>>>,
}

impl BpTrajectory {
    /// `d_ℓ` for ℓ = 0, 1, …; empty without a reference.
    pub fn part_metrics(&self) -> Vec<f64> {
        let Some(d0) = self.initial_part_metric else {
            return Vec::new();
        };
        std::iter::once(d0)
            .chain(
                self.iterations
                    .iter()
                    .map(|r| r.max_part_metric.unwrap_or(f64::INFINITY)),
            )
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum BpStatus {
    /// Iterate `at` already matched its successor within tolerance.
    Converged {
        at: usize,
    },
    MaxIters,
    Diverged {
        at: usize,
    },
}

impl BpStatus {
    pub fn is_converged(self) -> bool {
        matches!(self, BpStatus::Converged { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BpRun {
    pub messages: MessageSet,
    pub trajectory: BpTrajectory,
    pub status: BpStatus,
}

#[derive(Debug, Clone)]
struct FactorData {
    id: u32,
    obs: DVector<f64>,
    noise: DMatrix<f64>,
    noise_inv: DMatrix<f64>,
    coeff: BTreeMap<u32, DMatrix<f64>>,
}

/// A validated model together with its factor graph and edge order; the
/// entry point for every message computation.
#[derive(Debug, Clone)]
pub struct Problem {
    model: LinearGaussianModel,
    graph: FactorGraph,
    index: EdgeIndex,
    prior_info: HashMap<u32, DMatrix<f64>>,
    factor_pos: HashMap<u32, usize>,
    factors: Vec<FactorData>,
}

impl Problem {
    pub fn new(model: &LinearGaussianModel) -> Result<Self, ModelError> {
        let graph = build_factor_graph(model)?;
        let index = canonical_edge_order(&graph);
        let prior_info = model
            .variables
            .iter()
            .map(|v| (v.id, spd_inverse(&v.prior_cov).expect("validated prior")))
            .collect();
        let mut factors: Vec<FactorData> = model
            .factors
            .iter()
            .map(|f| FactorData {
                id: f.id,
                obs: f.obs.clone(),
                noise: numerics::symmetrize(&f.noise_cov),
                noise_inv: spd_inverse(&f.noise_cov).expect("validated noise"),
                coeff: f.coeff.clone(),
            })
            .collect();
        factors.sort_by_key(|f| f.id);
        let factor_pos = factors.iter().enumerate().map(|(p, f)| (f.id, p)).collect();
        Ok(Self {
            model: model.clone(),
            graph,
            index,
            prior_info,
            factor_pos,
            factors,
        })
    }

    pub fn model(&self) -> &LinearGaussianModel {
        &self.model
    }

    pub fn graph(&self) -> &FactorGraph {
        &self.graph
    }

    pub fn index(&self) -> &EdgeIndex {
        &self.index
    }

    /// `W_j⁻¹`.
    pub fn prior_info(&self, var: u32) -> &DMatrix<f64> {
        &self.prior_info[&var]
    }

    pub fn coeff(&self, factor: u32, var: u32) -> &DMatrix<f64> {
        &self.factor(factor).coeff[&var]
    }

    pub fn noise_cov(&self, factor: u32) -> &DMatrix<f64> {
        &self.factor(factor).noise
    }

    pub fn obs(&self, factor: u32) -> &DVector<f64> {
        &self.factor(factor).obs
    }

    fn factor(&self, id: u32) -> &FactorData {
        &self.factors[self.factor_pos[&id]]
    }

    // ---- information-matrix kernels -------------------------------------

    /// `W_j⁻¹ + Σ J_{f_k→j}` for v2f edge `pos`.
    pub fn v2f_info(&self, pos: usize, f2v_info: &[DMatrix<f64>]) -> DMatrix<f64> {
        let (j, _) = self.index.v2f[pos];
        let mut acc = self.prior_info[&j].clone();
        for &q in &self.index.v2f_inputs[pos] {
            acc += &f2v_info[q];
        }
        acc
    }

    /// `R_n + Σ_{j ∈ B(f_n)∖i} A_{n,j} J_{j→f_n}⁻¹ A_{n,j}ᵀ` for f2v edge `pos`.
    pub fn factor_core(
        &self,
        pos: usize,
        v2f_info: &[DMatrix<f64>],
    ) -> Result<DMatrix<f64>, BpError> {
        let (n, _) = self.index.f2v[pos];
        let fac = self.factor(n);
        let mut core = fac.noise.clone();
        for &q in &self.index.f2v_inputs[pos] {
            let (j, _) = self.index.v2f[q];
            let a = &fac.coeff[&j];
            let chol = spd_cholesky(&v2f_info[q])
                .ok_or(BpError::SingularVariableMessage { var: j, factor: n })?;
            core += a * chol.solve(&a.transpose());
        }
        Ok(numerics::symmetrize(&core))
    }

    /// `A_{n,i}ᵀ M⁻¹ A_{n,i}` for f2v edge `pos`.
    pub fn f2v_info(&self, pos: usize, v2f_info: &[DMatrix<f64>]) -> Result<DMatrix<f64>, BpError> {
        let (n, i) = self.index.f2v[pos];
        let core = self.factor_core(pos, v2f_info)?;
        let a = &self.factor(n).coeff[&i];
        let chol = spd_cholesky(&core).ok_or(BpError::MessageUndefined { factor: n, var: i })?;
        Ok(numerics::symmetrize(&(a.transpose() * chol.solve(a))))
    }

    /// The combined information map `F`: every f2v information matrix of
    /// iteration ℓ from those of iteration ℓ−1.
    pub fn info_map(
        &self,
        f2v_info: &[DMatrix<f64>],
        exec: Execution,
    ) -> Result<Vec<DMatrix<f64>>, BpError> {
        let v2f: Vec<DMatrix<f64>> =
            par::map_range(exec, self.index.v2f.len(), |p| self.v2f_info(p, f2v_info));
        par::map_range(exec, self.index.f2v.len(), |p| self.f2v_info(p, &v2f))
            .into_iter()
            .collect()
    }

    /// `U_e = A_{n,i}ᵀ R_n⁻¹ A_{n,i}`.
    pub fn upper_block(&self, pos: usize) -> DMatrix<f64> {
        let (n, i) = self.index.f2v[pos];
        let fac = self.factor(n);
        let a = &fac.coeff[&i];
        numerics::symmetrize(&(a.transpose() * &fac.noise_inv * a))
    }

    /// `L_e = A_{n,i}ᵀ [R_n + Σ_{j ∈ B(f_n)∖i} A_{n,j} W_j A_{n,j}ᵀ]⁻¹ A_{n,i}`.
    pub fn lower_block(&self, pos: usize) -> DMatrix<f64> {
        let (n, i) = self.index.f2v[pos];
        let fac = self.factor(n);
        let mut core = fac.noise.clone();
        for &j in self.graph.factor_neighbors(n) {
            if j != i {
                let a = &fac.coeff[&j];
                let w = &self.model.variable(j).expect("validated").prior_cov;
                core += a * w * a.transpose();
            }
        }
        let a = &fac.coeff[&i];
        let chol = spd_cholesky(&core).expect("R_n plus psd terms is positive definite");
        numerics::symmetrize(&(a.transpose() * chol.solve(a)))
    }

    // ---- full messages --------------------------------------------------

    fn v2f_from(&self, pos: usize, f2v: &[Message]) -> Result<Message, BpError> {
        let (j, n) = self.index.v2f[pos];
        let mut info = self.prior_info[&j].clone();
        let mut h = DVector::zeros(info.nrows());
        for &q in &self.index.v2f_inputs[pos] {
            info += &f2v[q].info;
            h += &f2v[q].info * &f2v[q].mean;
        }
        let info = numerics::symmetrize(&info);
        let mean = if h.iter().all(|&x| x == 0.0) {
            h
        } else {
            spd_cholesky(&info)
                .ok_or(BpError::SingularVariableMessage { var: j, factor: n })?
                .solve(&h)
        };
        Ok(Message { info, mean })
    }

    fn f2v_from(&self, pos: usize, v2f: &[Message]) -> Result<Message, BpError> {
        let (n, i) = self.index.f2v[pos];
        let fac = self.factor(n);
        let mut core = fac.noise.clone();
        let mut resid = fac.obs.clone();
        for &q in &self.index.f2v_inputs[pos] {
            let (j, _) = self.index.v2f[q];
            let a = &fac.coeff[&j];
            let chol = spd_cholesky(&v2f[q].info)
                .ok_or(BpError::SingularVariableMessage { var: j, factor: n })?;
            core += a * chol.solve(&a.transpose());
            resid -= a * &v2f[q].mean;
        }
        let undefined = BpError::MessageUndefined { factor: n, var: i };
        let core_chol = spd_cholesky(&core).ok_or(undefined.clone())?;
        let a = &fac.coeff[&i];
        let info = numerics::symmetrize(&(a.transpose() * core_chol.solve(a)));
        let rhs = a.transpose() * core_chol.solve(&resid);
        let mean = spd_cholesky(&info).ok_or(undefined)?.solve(&rhs);
        Ok(Message { info, mean })
    }

    /// Variable-to-factor message `x_j → f_n` from the current f2v messages.
    pub fn var_to_factor(&self, msgs: &MessageSet, j: u32, n: u32) -> Result<Message, BpError> {
        let pos = self
            .index
            .v2f_position(j, n)
            .ok_or_else(|| BpError::InvalidInit(format!("no edge x{j}->f{n}")))?;
        self.v2f_from(pos, &msgs.f2v)
    }

    /// Factor-to-variable message `f_n → x_i` from the current v2f messages.
    pub fn factor_to_var(&self, msgs: &MessageSet, n: u32, i: u32) -> Result<Message, BpError> {
        let pos = self
            .index
            .f2v_position(n, i)
            .ok_or_else(|| BpError::InvalidInit(format!("no edge f{n}->x{i}")))?;
        self.f2v_from(pos, &msgs.v2f)
    }

    /// Existence condition for `f_n → x_i`:
    /// `A_Sᵀ R_n⁻¹ A_S + blockdiag(J_{j→f_n}) ≻ 0` over `S = B(f_n) ∖ i`.
    pub fn existence_check(&self, msgs: &MessageSet, n: u32, i: u32) -> bool {
        match self.index.f2v_position(n, i) {
            Some(pos) => self.existence_at(pos, &msgs.v2f),
            None => false,
        }
    }

    fn existence_at(&self, pos: usize, v2f: &[Message]) -> bool {
        let inputs = &self.index.f2v_inputs[pos];
        if inputs.is_empty() {
            return true;
        }
        let (n, _) = self.index.f2v[pos];
        let fac = self.factor(n);
        let blocks: Vec<&DMatrix<f64>> = inputs
            .iter()
            .map(|&q| &fac.coeff[&self.index.v2f[q].0])
            .collect();
        let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
        let mut a_s = DMatrix::zeros(fac.obs.len(), cols);
        let mut off = 0;
        for b in &blocks {
            a_s.view_mut((0, off), b.shape()).copy_from(b);
            off += b.ncols();
        }
        let infos: Vec<DMatrix<f64>> = inputs.iter().map(|&q| v2f[q].info.clone()).collect();
        let total = a_s.transpose() * &fac.noise_inv * &a_s + numerics::block_diag(&infos);
        is_pd_matrix(&total)
    }

    /// Initial messages: f2v per strategy with zero means; v2f zero.
    pub fn init_messages(&self, strategy: &InitStrategy) -> Result<MessageSet, BpError> {
        let f2v: Vec<Message> = match strategy {
            InitStrategy::Zero => self
                .index
                .f2v_dims
                .iter()
                .map(|&d| Message::zero(d))
                .collect(),
            InitStrategy::LowerBound => (0..self.index.f2v.len())
                .map(|p| Message {
                    info: self.lower_block(p),
                    mean: DVector::zeros(self.index.f2v_dims[p]),
                })
                .collect(),
            InitStrategy::UpperBound => (0..self.index.f2v.len())
                .map(|p| Message {
                    info: self.upper_block(p),
                    mean: DVector::zeros(self.index.f2v_dims[p]),
                })
                .collect(),
            InitStrategy::CustomPsd(map) => {
                for &(n, i) in map.keys() {
                    if self.index.f2v_position(n, i).is_none() {
                        return Err(BpError::InvalidInit(format!("no edge f{n}->x{i}")));
                    }
                }
                let mut out = Vec::with_capacity(self.index.f2v.len());
                for (p, &(n, i)) in self.index.f2v.iter().enumerate() {
                    let d = self.index.f2v_dims[p];
                    let info = match map.get(&(n, i)) {
                        Some(m) => {
                            if m.shape() != (d, d) {
                                return Err(BpError::InvalidInit(format!(
                                    "edge f{n}->x{i}: expected {d}x{d} matrix"
                                )));
                            }
                            if !is_psd_matrix(m) {
                                return Err(BpError::InvalidInit(format!(
                                    "edge f{n}->x{i}: initial information matrix not psd"
                                )));
                            }
                            numerics::symmetrize(m)
                        }
                        None => DMatrix::zeros(d, d),
                    };
                    out.push(Message {
                        info,
                        mean: DVector::zeros(d),
                    });
                }
                out
            }
        };
        Ok(MessageSet {
            f2v,
            v2f: self
                .index
                .v2f_dims
                .iter()
                .map(|&d| Message::zero(d))
                .collect(),
            iteration: 0,
        })
    }

    /// Beliefs `P_i = [W_i⁻¹ + Σ J_{f→i}]⁻¹`, `μ_i = P_i Σ J_{f→i} v_{f→i}`.
    pub fn compute_beliefs(&self, msgs: &MessageSet) -> Result<Vec<Belief>, BpError> {
        self.beliefs_from_f2v(&msgs.f2v)
    }

    pub(crate) fn beliefs_from_f2v(&self, f2v: &[Message]) -> Result<Vec<Belief>, BpError> {
        self.graph
            .variables()
            .map(|i| {
                let mut info = self.prior_info[&i].clone();
                let mut h = DVector::zeros(info.nrows());
                for &n in self.graph.var_neighbors(i) {
                    let m = &f2v[self.index.f2v_position(n, i).expect("edge")];
                    info += &m.info;
                    h += &m.info * &m.mean;
                }
                let chol = spd_cholesky(&info)
                    .ok_or(BpError::SingularVariableMessage { var: i, factor: 0 })?;
                Ok(Belief {
                    var: i,
                    mean: chol.solve(&h),
                    cov: numerics::symmetrize(&chol.inverse()),
                })
            })
            .collect()
    }

    /// Runs BP from a strategy-initialized message set.
    pub fn run_bp(
        &self,
        init: &InitStrategy,
        schedule: Schedule,
        opts: &BpOptions,
    ) -> Result<BpRun, BpError> {
        let msgs = self.init_messages(init)?;
        self.run_bp_from(msgs, schedule, opts)
    }

    /// Runs BP from an arbitrary starting message set.
    pub fn run_bp_from(
        &self,
        mut msgs: MessageSet,
        schedule: Schedule,
        opts: &BpOptions,
    ) -> Result<BpRun, BpError> {
        let mut traj = BpTrajectory::default();
        if let Some(reference) = &opts.reference {
            traj.initial_part_metric = Some(self.max_part_metric(&msgs.f2v, reference).0);
        }
        if opts.record_info {
            traj.info_history.push(msgs.f2v_infos());
        }
        let mut rng = match schedule {
            Schedule::RandomPermutation(seed) => Some(ChaCha8Rng::seed_from_u64(seed)),
            _ => None,
        };
        let mut order: Vec<u32> = self.graph.factors().collect();
        let mut status = BpStatus::MaxIters;

        for iter in 1..=opts.max_iters {
            let prev = msgs.clone();
            match schedule {
                Schedule::Synchronous => {
                    let v2f = par::map_range(opts.execution, self.index.v2f.len(), |p| {
                        self.v2f_from(p, &prev.f2v)
                    })
                    .into_iter()
                    .collect::<Result<Vec<_>, _>>()?;
                    let f2v = par::map_range(opts.execution, self.index.f2v.len(), |p| {
                        if opts.strict && !self.existence_at(p, &v2f) {
                            let (factor, var) = self.index.f2v[p];
                            return Err(BpError::Existence {
                                factor,
                                var,
                                iteration: iter,
                            });
                        }
                        self.f2v_from(p, &v2f)
                    })
                    .into_iter()
                    .collect::<Result<Vec<_>, _>>()?;
                    msgs.v2f = v2f;
                    msgs.f2v = f2v;
                }
                Schedule::SequentialAscending | Schedule::RandomPermutation(_) => {
                    if let Some(rng) = rng.as_mut() {
                        order.shuffle(rng);
                    }
                    for &n in &order {
                        for &j in self.graph.factor_neighbors(n) {
                            let p = self.index.v2f_position(j, n).expect("edge");
                            msgs.v2f[p] = self.v2f_from(p, &msgs.f2v)?;
                        }
                        for &i in self.graph.factor_neighbors(n) {
                            let p = self.index.f2v_position(n, i).expect("edge");
                            if opts.strict && !self.existence_at(p, &msgs.v2f) {
                                return Err(BpError::Existence {
                                    factor: n,
                                    var: i,
                                    iteration: iter,
                                });
                            }
                            msgs.f2v[p] = self.f2v_from(p, &msgs.v2f)?;
                        }
                    }
                }
            }
            msgs.iteration = iter;
            if opts.strict {
                self.check_messages_pd(&msgs, iter, opts.execution)?;
            }

            let record = self.iteration_record(iter, &prev, &msgs, opts);
            let converged = record.max_d_info < opts.tol_j && record.max_d_mean < opts.tol_v;
            traj.iterations.push(record);
            if opts.record_info {
                traj.info_history.push(msgs.f2v_infos());
            }
            if let Some(every) = opts.snapshot_every {
                if every > 0 && iter % every == 0 {
                    if let Ok(b) = self.compute_beliefs(&msgs) {
                        traj.snapshots.push((iter, b));
                    }
                }
            }
            if msgs.max_abs_mean() > opts.divergence_limit {
                status = BpStatus::Diverged { at: iter };
                break;
            }
            if converged {
                status = BpStatus::Converged { at: iter - 1 };
                break;
            }
        }
        Ok(BpRun {
            messages: msgs,
            trajectory: traj,
            status,
        })
    }

    fn check_messages_pd(
        &self,
        msgs: &MessageSet,
        iter: usize,
        exec: Execution,
    ) -> Result<(), BpError> {
        let v2f_bad = par::map_slice(exec, &msgs.v2f, |m| !is_pd_matrix(&m.info));
        if let Some(p) = v2f_bad.iter().position(|&b| b) {
            let (j, n) = self.index.v2f[p];
            return Err(BpError::NotPositiveDefinite {
                kind: EdgeKind::V2f,
                from: j,
                to: n,
                iteration: iter,
            });
        }
        let f2v_bad = par::map_slice(exec, &msgs.f2v, |m| !is_pd_matrix(&m.info));
        if let Some(p) = f2v_bad.iter().position(|&b| b) {
            let (n, i) = self.index.f2v[p];
            return Err(BpError::NotPositiveDefinite {
                kind: EdgeKind::F2v,
                from: n,
                to: i,
                iteration: iter,
            });
        }
        Ok(())
    }

    /// `(max_e d(J_e, ref_e), per-edge values)`; infinite where `J_e` is singular.
    pub fn max_part_metric(&self, f2v: &[Message], reference: &[DMatrix<f64>]) -> (f64, Vec<f64>) {
        let per_edge: Vec<f64> = f2v
            .iter()
            .zip(reference)
            .map(|(m, r)| {
                part_metric(&m.info, r)
                    .map(|d| d.value())
                    .unwrap_or(f64::INFINITY)
            })
            .collect();
        let max = per_edge.iter().copied().fold(0.0, f64::max);
        (max, per_edge)
    }

    fn iteration_record(
        &self,
        iter: usize,
        prev: &MessageSet,
        cur: &MessageSet,
        opts: &BpOptions,
    ) -> IterationRecord {
        let delta = |a: &Message, b: &Message| {
            let dj = (&b.info - &a.info).norm() / (1.0 + b.info.norm());
            let dv = (&b.mean - &a.mean).amax();
            (
                if dj.is_finite() { dj } else { f64::INFINITY },
                if dv.is_finite() { dv } else { f64::INFINITY },
            )
        };
        let (max_pm, per_edge_pm) = match &opts.reference {
            Some(r) => {
                let (m, e) = self.max_part_metric(&cur.f2v, r);
                (Some(m), Some(e))
            }
            None => (None, None),
        };
        let mut max_d_info = 0.0f64;
        let mut max_d_mean = 0.0f64;
        let mut edges = Vec::new();
        for (p, (a, b)) in prev.f2v.iter().zip(&cur.f2v).enumerate() {
            let (dj, dv) = delta(a, b);
            max_d_info = max_d_info.max(dj);
            max_d_mean = max_d_mean.max(dv);
            if opts.record_edges {
                let (n, i) = self.index.f2v[p];
                edges.push(EdgeRecord {
                    kind: EdgeKind::F2v,
                    from: n,
                    to: i,
                    d_info: dj,
                    d_mean: dv,
                    part_metric: per_edge_pm.as_ref().map(|e| e[p]),
                });
            }
        }
        for (p, (a, b)) in prev.v2f.iter().zip(&cur.v2f).enumerate() {
            let (dj, dv) = delta(a, b);
            max_d_info = max_d_info.max(dj);
            max_d_mean = max_d_mean.max(dv);
            if opts.record_edges {
                let (j, n) = self.index.v2f[p];
                edges.push(EdgeRecord {
                    kind: EdgeKind::V2f,
                    from: j,
                    to: n,
                    d_info: dj,
                    d_mean: dv,
                    part_metric: None,
                });
            }
        }
        IterationRecord {
            iteration: iter,
            max_d_info,
            max_d_mean,
            max_part_metric: max_pm,
            edges,
        }
    }
}
