//! Convergence analysis: information-matrix fixed point and its bounds, the
//! mean recursion `v ← b − Q v` with frozen `J*`, the `ρ(Q)` verdict, and
//! contraction-rate fitting in the part metric.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bp::{
    Belief, BpError, BpOptions, BpStatus, InitStrategy, Message, Problem, Schedule,
    PART_METRIC_FLOOR,
};
use crate::graph::{classify_topology, TopologyClass, TopologyKind};
use crate::model::{posterior_solve, LinearGaussianModel};
use crate::numerics::{self, part_metric, spd_cholesky};
use crate::par::Execution;

pub const FIXED_POINT_TOL: f64 = 1e-12;
pub const BORDERLINE_BAND: f64 = 1e-3;

/// Per-f2v-edge bounds `L_e ⪯ J_e⁽ˡ⁾ ⪯ U_e` (ℓ ≥ 1).
#[derive(Debug, Clone, PartialEq)]
pub struct BoundsLU {
    pub edges: Vec<(u32, u32)>,
    pub lower: Vec<DMatrix<f64>>,
    pub upper: Vec<DMatrix<f64>>,
}

impl BoundsLU {
    pub fn stacked_lower(&self) -> DMatrix<f64> {
        numerics::block_diag(&self.lower)
    }

    pub fn stacked_upper(&self) -> DMatrix<f64> {
        numerics::block_diag(&self.upper)
    }
}

pub fn compute_bounds(problem: &Problem) -> BoundsLU {
    let n = problem.index().f2v.len();
    BoundsLU {
        edges: problem.index().f2v.clone(),
        lower: (0..n).map(|p| problem.lower_block(p)).collect(),
        upper: (0..n).map(|p| problem.upper_block(p)).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPointOptions {
    pub tol: f64,
    pub max_iters: usize,
    pub execution: Execution,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        Self {
            tol: FIXED_POINT_TOL,
            max_iters: 10_000,
            execution: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedPoint {
    /// `J*` per f2v edge, canonical order.
    pub j_star: Vec<DMatrix<f64>>,
    /// `max_e ‖F(J*)_e − J*_e‖_F / (1 + ‖J*_e‖_F)`.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn relative_step(prev: &[DMatrix<f64>], next: &[DMatrix<f64>]) -> f64 {
    prev.iter()
        .zip(next)
        .map(|(a, b)| (b - a).norm() / (1.0 + b.norm()))
        .fold(0.0, f64::max)
}

/// Iterates the observation-independent map `J ← F(J)` from `init`.
pub fn information_fixed_point(
    problem: &Problem,
    init: &InitStrategy,
    opts: &FixedPointOptions,
) -> Result<FixedPoint, BpError> {
    let mut j = problem.init_messages(init)?.f2v_infos();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iters {
        let next = problem.info_map(&j, opts.execution)?;
        iterations += 1;
        let step = relative_step(&j, &next);
        j = next;
        if step < opts.tol {
            converged = true;
            break;
        }
    }
    let check = problem.info_map(&j, opts.execution)?;
    let residual = relative_step(&j, &check);
    Ok(FixedPoint {
        j_star: j,
        residual,
        iterations,
        converged,
    })
}

/// The mean recursion with frozen `J*`, over stacked v2f mean coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct QSystem {
    pub q: DMatrix<f64>,
    pub b: DVector<f64>,
    /// v2f edges `(j, n)` in block order, with their offsets and dims.
    pub edges: Vec<(u32, u32)>,
    pub offsets: Vec<usize>,
    pub dims: Vec<usize>,
    /// `M_{k,j}` keyed by `(k, j)`.
    pub m_blocks: BTreeMap<(u32, u32), DMatrix<f64>>,
    /// Column blocks that row block `r` depends on.
    pub structure: Vec<Vec<usize>>,
    /// `J*_{j→f_n}` per v2f edge.
    pub v2f_info: Vec<DMatrix<f64>>,
    pub rho: f64,
}

impl QSystem {
    pub fn dim(&self) -> usize {
        self.b.len()
    }

    /// `(I + Q)⁻¹ b`, the mean fixed point when it exists.
    pub fn fixed_point(&self) -> Option<DVector<f64>> {
        let n = self.dim();
        (DMatrix::identity(n, n) + &self.q).lu().solve(&self.b)
    }

    pub fn block(&self, row: usize, col: usize) -> DMatrix<f64> {
        self.q
            .view(
                (self.offsets[row], self.offsets[col]),
                (self.dims[row], self.dims[col]),
            )
            .into_owned()
    }
}

/// Assembles `Q` and `b` from a converged `J*`.
///
/// Block `((j,n), (z,k))` is `[J*_{j→f_n}]⁻¹ A_{k,j}ᵀ M_{k,j}⁻¹ A_{k,z}` for
/// `f_k ∈ B(j)∖f_n`, `z ∈ B(f_k)∖j`, with
/// `M_{k,j} = R_k + Σ_{z ∈ B(f_k)∖j} A_{k,z} [J*_{z→f_k}]⁻¹ A_{k,z}ᵀ`, and
/// `b_{j→f_n} = [J*_{j→f_n}]⁻¹ Σ_{f_k} A_{k,j}ᵀ M_{k,j}⁻¹ y_k`.
pub fn assemble_q(problem: &Problem, fp: &FixedPoint) -> Result<QSystem, BpError> {
    let index = problem.index();
    let ne = index.v2f.len();
    let v2f_info: Vec<DMatrix<f64>> = (0..ne).map(|p| problem.v2f_info(p, &fp.j_star)).collect();

    let mut m_blocks = BTreeMap::new();
    let mut m_chol = Vec::with_capacity(index.f2v.len());
    for (q, &(k, j)) in index.f2v.iter().enumerate() {
        let m = problem.factor_core(q, &v2f_info)?;
        let chol = spd_cholesky(&m).ok_or(BpError::MessageUndefined { factor: k, var: j })?;
        m_chol.push(chol);
        m_blocks.insert((k, j), m);
    }

    let dim = index.v2f_total_dim();
    let mut qm = DMatrix::zeros(dim, dim);
    let mut b = DVector::zeros(dim);
    let mut structure = vec![Vec::new(); ne];
    for r in 0..ne {
        let (j, n) = index.v2f[r];
        let jinv = spd_cholesky(&v2f_info[r])
            .ok_or(BpError::SingularVariableMessage { var: j, factor: n })?;
        let (ro, rd) = (index.v2f_offsets[r], index.v2f_dims[r]);
        let mut h = DVector::zeros(rd);
        for &q in &index.v2f_inputs[r] {
            let (k, _) = index.f2v[q];
            let a_kj = problem.coeff(k, j);
            // A_{k,j}ᵀ M_{k,j}⁻¹
            let gain = m_chol[q].solve(a_kj).transpose();
            h += &gain * problem.obs(k);
            for &c in &index.f2v_inputs[q] {
                let (z, _) = index.v2f[c];
                let blk = jinv.solve(&(&gain * problem.coeff(k, z)));
                qm.view_mut((ro, index.v2f_offsets[c]), (rd, index.v2f_dims[c]))
                    .copy_from(&blk);
                structure[r].push(c);
            }
        }
        b.rows_mut(ro, rd).copy_from(&jinv.solve(&h));
    }

    let mut sys = QSystem {
        q: qm,
        b,
        edges: index.v2f.clone(),
        offsets: index.v2f_offsets.clone(),
        dims: index.v2f_dims.clone(),
        m_blocks,
        structure,
        v2f_info,
        rho: 0.0,
    };
    sys.rho = block_spectral_radius(&sys);
    Ok(sys)
}

/// `ρ(Q)` as the maximum over strongly connected components of the block
/// dependency digraph. Acyclic parts contribute exactly zero, so forest
/// models report `ρ = 0` without eigen-solving a nilpotent matrix.
pub fn block_spectral_radius(sys: &QSystem) -> f64 {
    let ne = sys.edges.len();
    let mut g = DiGraph::<usize, ()>::with_capacity(ne, 0);
    let nodes: Vec<_> = (0..ne).map(|r| g.add_node(r)).collect();
    for (r, cols) in sys.structure.iter().enumerate() {
        for &c in cols {
            g.add_edge(nodes[r], nodes[c], ());
        }
    }
    let mut rho = 0.0f64;
    for scc in tarjan_scc(&g) {
        let self_loop = scc.len() == 1 && sys.structure[g[scc[0]]].contains(&g[scc[0]]);
        if scc.len() < 2 && !self_loop {
            continue;
        }
        let mut blocks: Vec<usize> = scc.iter().map(|&n| g[n]).collect();
        blocks.sort_unstable();
        let coords: Vec<usize> = blocks
            .iter()
            .flat_map(|&r| sys.offsets[r]..sys.offsets[r] + sys.dims[r])
            .collect();
        let sub = DMatrix::from_fn(coords.len(), coords.len(), |a, c| {
            sys.q[(coords[a], coords[c])]
        });
        let r = numerics::spectral_radius(&sub).unwrap_or(f64::INFINITY);
        rho = rho.max(r);
    }
    rho
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    GuaranteedByTopology,
    #[serde(rename = "converges_rho_lt_1")]
    ConvergesRhoLt1,
    #[serde(rename = "diverges_rho_ge_1")]
    DivergesRhoGe1,
    Borderline,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::GuaranteedByTopology => "guaranteed_by_topology",
            Verdict::ConvergesRhoLt1 => "converges_rho_lt_1",
            Verdict::DivergesRhoGe1 => "diverges_rho_ge_1",
            Verdict::Borderline => "borderline",
        })
    }
}

pub fn verdict_for(rho: f64, topology: TopologyKind) -> Verdict {
    if (rho - 1.0).abs() < BORDERLINE_BAND {
        Verdict::Borderline
    } else if topology <= TopologyKind::SingleLoopPlusForest {
        Verdict::GuaranteedByTopology
    } else if rho < 1.0 {
        Verdict::ConvergesRhoLt1
    } else {
        Verdict::DivergesRhoGe1
    }
}

pub fn decide_mean_convergence(qsys: &QSystem, topo: &TopologyClass) -> Verdict {
    verdict_for(qsys.rho, topo.kind)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanRecursionOptions {
    pub max_iters: usize,
    /// Stop when `‖Δv‖_∞ ≤ tol·(1 + ‖v‖_∞)`.
    pub tol: f64,
    pub divergence_limit: f64,
}

impl Default for MeanRecursionOptions {
    fn default() -> Self {
        Self {
            max_iters: 200_000,
            tol: 1e-13,
            divergence_limit: crate::bp::DIVERGENCE_LIMIT,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum MeanStatus {
    Converged { iterations: usize },
    Diverged { iterations: usize },
    MaxIters,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeanRecursion {
    pub status: MeanStatus,
    pub v: DVector<f64>,
}

/// Runs `v ← b − Q v` from `v0` with `J` frozen at `J*`.
pub fn mean_recursion(
    qsys: &QSystem,
    v0: &DVector<f64>,
    opts: &MeanRecursionOptions,
) -> MeanRecursion {
    let mut v = v0.clone();
    for it in 1..=opts.max_iters {
        let next = &qsys.b - &qsys.q * &v;
        let norm = next.amax();
        if !norm.is_finite() || norm > opts.divergence_limit {
            return MeanRecursion {
                status: MeanStatus::Diverged { iterations: it },
                v: next,
            };
        }
        let step = (&next - &v).amax();
        v = next;
        if step <= opts.tol * (1.0 + norm) {
            return MeanRecursion {
                status: MeanStatus::Converged { iterations: it },
                v,
            };
        }
    }
    MeanRecursion {
        status: MeanStatus::MaxIters,
        v,
    }
}

/// A seeded standard-normal starting vector of length `n`.
pub fn random_start(n: usize, seed: u64) -> DVector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng))
}

/// Beliefs from v2f means and `J*`.
pub fn beliefs_from_v2f_means(
    problem: &Problem,
    fp: &FixedPoint,
    qsys: &QSystem,
    v: &DVector<f64>,
) -> Result<Vec<Belief>, BpError> {
    let index = problem.index();
    let v2f: Vec<Message> = (0..index.v2f.len())
        .map(|r| Message {
            info: qsys.v2f_info[r].clone(),
            mean: v.rows(qsys.offsets[r], qsys.dims[r]).into_owned(),
        })
        .collect();
    let f2v: Vec<Message> = (0..index.f2v.len())
        .map(|q| {
            let (k, i) = index.f2v[q];
            let m = &qsys.m_blocks[&(k, i)];
            let chol = spd_cholesky(m).ok_or(BpError::MessageUndefined { factor: k, var: i })?;
            let mut resid = problem.obs(k).clone();
            for &c in &index.f2v_inputs[q] {
                let (z, _) = index.v2f[c];
                resid -= problem.coeff(k, z) * &v2f[c].mean;
            }
            let h = problem.coeff(k, i).transpose() * chol.solve(&resid);
            let info = fp.j_star[q].clone();
            let mean = spd_cholesky(&info)
                .ok_or(BpError::MessageUndefined { factor: k, var: i })?
                .solve(&h);
            Ok(Message { info, mean })
        })
        .collect::<Result<_, BpError>>()?;
    problem.beliefs_from_f2v(&f2v)
}

/// Geometric rate estimates for a part-metric sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    /// Least-squares fit of `log d_ℓ ≈ a + ℓ log c` over `from..=to`.
    pub c: f64,
    /// Smallest `c` with `d_ℓ ≤ c^(ℓ−s) d_s` for every usable ℓ, where `s`
    /// is the first usable index (0 unless `d_0` is infinite). With
    /// super-geometric decay the least-squares `c` undershoots early steps;
    /// this one is a pointwise certificate.
    pub envelope_c: f64,
    pub anchor: usize,
    /// First and last ℓ of the fitted stretch; `envelope_c` covers `anchor..=to`.
    pub from: usize,
    pub to: usize,
    pub contracting: bool,
}

/// Fits a geometric rate to `d_0, d_1, …`.
///
/// Usable points are finite and above the numerical floor, starting at the
/// first finite one and ending where `d` first reaches the floor. The fit
/// runs over the longest strictly decreasing stretch of usable points (all
/// of them when no stretch has three points, so a flat sequence yields
/// `c = 1`). `None` with fewer than three usable points.
pub fn fit_contraction_rate(d: &[f64]) -> Option<RateFit> {
    let usable = |x: f64| x.is_finite() && x > PART_METRIC_FLOOR;
    let start = d.iter().position(|&x| usable(x))?;
    let mut end = start;
    while end + 1 < d.len() && usable(d[end + 1]) {
        end += 1;
    }
    let (mut from, mut to) = (start, start);
    let mut run = start;
    for l in start + 1..=end {
        if d[l] < d[l - 1] {
            if l - run > to - from {
                (from, to) = (run, l);
            }
        } else {
            run = l;
        }
    }
    if to - from < 2 {
        (from, to) = (start, end);
    }
    if to - from < 2 {
        return None;
    }
    let pts: Vec<(f64, f64)> = (from..=to).map(|l| (l as f64, d[l].ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let c = (sxy / sxx).exp();
    let envelope_c = (start + 1..=to)
        .map(|l| (d[l] / d[start]).powf(1.0 / (l - start) as f64))
        .fold(0.0, f64::max);
    Some(RateFit {
        c,
        envelope_c,
        anchor: start,
        from,
        to,
        contracting: c < 1.0 - 1e-12,
    })
}

/// `d(J⁽ˡ⁾, J*)` for ℓ = 0, 1, … under the information map, until it drops
/// below the floor or `max_iters` is hit.
pub fn part_metric_trajectory(
    problem: &Problem,
    init: &InitStrategy,
    j_star: &[DMatrix<f64>],
    max_iters: usize,
    exec: Execution,
) -> Result<Vec<f64>, BpError> {
    let dist = |j: &[DMatrix<f64>]| {
        j.iter()
            .zip(j_star)
            .map(|(a, b)| {
                part_metric(a, b)
                    .map(|d| d.value())
                    .unwrap_or(f64::INFINITY)
            })
            .fold(0.0, f64::max)
    };
    let mut j = problem.init_messages(init)?.f2v_infos();
    let mut out = vec![dist(&j)];
    for _ in 0..max_iters {
        j = problem.info_map(&j, exec)?;
        let d = dist(&j);
        out.push(d);
        if d <= PART_METRIC_FLOOR {
            break;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CertifyOptions {
    pub fixed_point: FixedPointOptions,
    /// Also run BP and compare against the centralized estimate.
    pub cross_check: Option<BpOptions>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossCheck {
    pub status: BpStatus,
    /// `max |μ − x̂|`, when both are available.
    pub max_mean_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub topology: TopologyClass,
    pub bounds: BoundsLU,
    pub fixed_point: FixedPoint,
    pub rho_q: f64,
    pub verdict: Verdict,
    pub fitted_rate: Option<RateFit>,
    /// Part metric to `J*` from the upper-bound initialization.
    pub part_metrics: Vec<f64>,
    pub cross_check: Option<CrossCheck>,
    pub fixed_point_tol: f64,
    pub notes: Vec<String>,
}

pub fn certify(
    model: &LinearGaussianModel,
    opts: &CertifyOptions,
) -> Result<ConvergenceReport, BpError> {
    let problem = Problem::new(model)?;
    let topology = classify_topology(problem.graph());
    let bounds = compute_bounds(&problem);
    let fixed_point = information_fixed_point(&problem, &InitStrategy::Zero, &opts.fixed_point)?;
    let mut notes = Vec::new();
    if !fixed_point.converged {
        notes.push(format!(
            "information fixed point not reached in {} iterations (residual {:e})",
            fixed_point.iterations, fixed_point.residual
        ));
    }
    let qsys = assemble_q(&problem, &fixed_point)?;
    let verdict = decide_mean_convergence(&qsys, &topology);
    if verdict == Verdict::DivergesRhoGe1 {
        notes.push(
            "information matrices still converge to a unique J*; only the means diverge".into(),
        );
    }
    let part_metrics = part_metric_trajectory(
        &problem,
        &InitStrategy::UpperBound,
        &fixed_point.j_star,
        opts.fixed_point.max_iters,
        opts.fixed_point.execution,
    )?;
    let fitted_rate = fit_contraction_rate(&part_metrics);

    let cross_check = match &opts.cross_check {
        Some(bp_opts) => {
            let run = problem.run_bp(&InitStrategy::Zero, Schedule::Synchronous, bp_opts)?;
            let max_mean_error = match (run.status, posterior_solve(model)) {
                (BpStatus::Converged { .. }, Ok(sol)) => {
                    let beliefs = problem.compute_beliefs(&run.messages)?;
                    Some(
                        beliefs
                            .iter()
                            .map(|b| (&b.mean - sol.mean_of(b.var).expect("variable")).amax())
                            .fold(0.0, f64::max),
                    )
                }
                _ => None,
            };
            Some(CrossCheck {
                status: run.status,
                max_mean_error,
            })
        }
        None => None,
    };

    Ok(ConvergenceReport {
        topology,
        bounds,
        rho_q: qsys.rho,
        fixed_point,
        verdict,
        fitted_rate,
        part_metrics,
        cross_check,
        fixed_point_tol: opts.fixed_point.tol,
        notes,
    })
}
