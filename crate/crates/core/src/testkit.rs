//! Seeded model corpora for tests, benches and the acceptance suite.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::analysis::{assemble_q, information_fixed_point, FixedPointOptions};
use crate::bp::{InitStrategy, Problem};
use crate::graph::TopologyKind;
use crate::model::{random_model, FactorSpec, LinearGaussianModel, RandomModelSpec, VariableSpec};
use crate::mrf_bridge::{factor_width_two, mrf_to_linear_gaussian, MrfModel};

/// The 4×4 unit-diagonal information matrix that fails walk-summability
/// but has a single-loop linear Gaussian decomposition.
pub fn loopy_mrf_j() -> DMatrix<f64> {
    let s2 = 2f64.sqrt();
    let s3 = 3f64.sqrt();
    let s6 = 6f64.sqrt();
    DMatrix::from_row_slice(
        4,
        4,
        &[
            1.0,
            1.0 / (3.0 * s2),
            1.0 / s3,
            s2 / 3.0,
            1.0 / (3.0 * s2),
            1.0,
            0.0,
            1.0 / 3.0,
            1.0 / s3,
            0.0,
            1.0,
            1.0 / s6,
            s2 / 3.0,
            1.0 / 3.0,
            1.0 / s6,
            1.0,
        ],
    )
}

/// Coefficient matrix of the decomposition `J = AᵀA + W⁻¹`.
pub fn loopy_mrf_a() -> DMatrix<f64> {
    let s2 = 2f64.sqrt();
    let s3 = 3f64.sqrt();
    let s6 = 6f64.sqrt();
    DMatrix::from_row_slice(
        3,
        4,
        &[
            2.0 / s6,
            0.0,
            1.0 / s2,
            1.0 / s3,
            1.0 / s6,
            1.0 / s3,
            0.0,
            0.0,
            0.0,
            1.0 / s3,
            0.0,
            1.0 / s3,
        ],
    )
}

pub const LOOPY_MRF_W: [f64; 4] = [6.0, 3.0, 2.0, 3.0];

/// The decomposition as a model: scalar agents 1..4, one factor per row
/// of `A` over its nonzero columns, unit noise.
pub fn loopy_mrf_model(y: [f64; 3]) -> LinearGaussianModel {
    let a = loopy_mrf_a();
    let s = |x: f64| DMatrix::from_element(1, 1, x);
    let variables = (0..4)
        .map(|i| VariableSpec {
            id: i as u32 + 1,
            dim: 1,
            prior_cov: s(LOOPY_MRF_W[i]),
        })
        .collect();
    let factors = (0..3)
        .map(|n| {
            let coeff: BTreeMap<u32, DMatrix<f64>> = (0..4)
                .filter(|&i| a[(n, i)] != 0.0)
                .map(|i| (i as u32 + 1, s(a[(n, i)])))
                .collect();
            FactorSpec {
                id: n as u32 + 1,
                scope: coeff.keys().copied().collect(),
                coeff,
                noise_cov: s(1.0),
                obs: DVector::from_element(1, y[n]),
            }
        })
        .collect();
    LinearGaussianModel::new(variables, factors)
}

pub fn forest(seed: u64, agents: usize, max_dim: usize) -> LinearGaussianModel {
    random_model(&RandomModelSpec::new(seed, agents, TopologyKind::Forest).dims(1, max_dim))
        .expect("forest request is feasible")
}

pub fn single_loop(seed: u64, agents: usize, max_dim: usize) -> LinearGaussianModel {
    random_model(
        &RandomModelSpec::new(seed, agents, TopologyKind::SingleLoopPlusForest).dims(1, max_dim),
    )
    .expect("single-loop request is feasible")
}

pub fn multi_loop(
    seed: u64,
    agents: usize,
    max_dim: usize,
    coeff_scale: f64,
) -> LinearGaussianModel {
    random_model(
        &RandomModelSpec::new(seed, agents, TopologyKind::MultiLoop)
            .dims(1, max_dim)
            .scales(coeff_scale, 1.0),
    )
    .expect("multi-loop request is feasible")
}

/// `n` forests with 1..=20 agents and blocks up to 3×3.
pub fn forest_corpus(n: usize) -> Vec<LinearGaussianModel> {
    (0..n as u64)
        .map(|s| forest(1000 + s, 1 + (s as usize * 7) % 20, 3))
        .collect()
}

/// `n` loopy models (alternating single- and multi-loop), 3..=10 agents.
pub fn loopy_corpus(n: usize) -> Vec<LinearGaussianModel> {
    (0..n as u64)
        .map(|s| {
            let agents = 3 + (s as usize * 5) % 8;
            if s % 2 == 0 {
                single_loop(2000 + s, agents, 2)
            } else {
                multi_loop(2000 + s, agents, 2, 0.5)
            }
        })
        .collect()
}

/// Random unit-diagonal MRF with `ρ(|R|)` drawn from `[0.2, 0.95]`, hence
/// walk-summable; about half the couplings are zero.
pub fn walk_summable_mrf(seed: u64, n: usize) -> MrfModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = DMatrix::zeros(n, n);
    for a in 0..n {
        for b in a + 1..n {
            if rng.random_bool(0.5) {
                let x: f64 = rng.random_range(-1.0..1.0);
                r[(a, b)] = x;
                r[(b, a)] = x;
            }
        }
    }
    let rho = crate::numerics::sym_eigenvalues(&r.abs())
        .last()
        .copied()
        .unwrap_or(0.0);
    let target: f64 = rng.random_range(0.2..0.95);
    if rho > 0.0 {
        r *= target / rho;
    }
    let j = DMatrix::identity(n, n) - r;
    let h = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
    MrfModel::new(j, h).expect("square")
}

/// Walk-summable MRF converted through the factor-width-2 factorization.
pub fn converted_mrf(seed: u64, n: usize) -> LinearGaussianModel {
    let mrf = walk_summable_mrf(seed, n);
    let fac = factor_width_two(&mrf, None).expect("walk-summable by construction");
    mrf_to_linear_gaussian(&mrf, &fac).expect("at most two nonzeros per column")
}

/// Random psd matrix `G Gᵀ / d` of size `d` (rank-deficient half the time).
pub fn random_psd(rng: &mut impl Rng, d: usize) -> DMatrix<f64> {
    let k = if rng.random_bool(0.5) {
        d
    } else {
        d.div_ceil(2)
    };
    let g: DMatrix<f64> = DMatrix::from_fn(d, k, |_, _| StandardNormal.sample(&mut *rng));
    (&g * g.transpose()) / d as f64
}

/// Random psd initial information matrix for every f2v edge.
pub fn random_psd_init(problem: &Problem, seed: u64) -> InitStrategy {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let map = problem
        .index()
        .f2v
        .iter()
        .zip(&problem.index().f2v_dims)
        .map(|(&e, &d)| (e, random_psd(&mut rng, d)))
        .collect();
    InitStrategy::CustomPsd(map)
}

/// `ρ(Q)` of a model, from a zero-initialized fixed point.
pub fn rho_q(model: &LinearGaussianModel) -> f64 {
    let p = Problem::new(model).expect("valid model");
    let fp = information_fixed_point(&p, &InitStrategy::Zero, &FixedPointOptions::default())
        .expect("fixed point");
    assemble_q(&p, &fp).expect("Q").rho
}

/// Seeded dense loopy models with the coupling scale swept upward until
/// `ρ(Q) ≥ 1.02`. Returns the model, its `ρ(Q)` and the scale used.
pub fn divergent_instance(seed: u64) -> Option<(LinearGaussianModel, f64, f64)> {
    for s in seed..seed + 200 {
        let mut scale = 1.0;
        while scale <= 256.0 {
            let model = dense_loopy(s, 5, 4, 1, scale);
            if model.validate().is_valid() {
                let rho = rho_q(&model);
                if rho >= 1.02 {
                    return Some((model, rho, scale));
                }
            }
            scale *= 2.0;
        }
    }
    None
}

/// Population for the `ρ(Q)` decision: dense loopy models, 4..=6 agents
/// with 2-dim blocks, coupling scales cycling through 1, 4, 16, 64.
pub fn rho_population(n: usize) -> Vec<LinearGaussianModel> {
    (0..n as u64)
        .map(|s| {
            dense_loopy(
                5000 + s,
                4 + (s as usize % 3),
                4,
                2,
                [1.0, 4.0, 16.0, 64.0][(s % 4) as usize],
            )
        })
        .filter(|m| m.validate().is_valid())
        .collect()
}

/// The model corpus used for corpus-wide properties.
pub fn corpus() -> Vec<(String, LinearGaussianModel)> {
    let mut out = Vec::new();
    for (k, m) in forest_corpus(12).into_iter().enumerate() {
        out.push((format!("forest-{k}"), m));
    }
    for (k, m) in loopy_corpus(12).into_iter().enumerate() {
        out.push((format!("loopy-{k}"), m));
    }
    out.push(("loopy-mrf".into(), loopy_mrf_model([1.0, -0.5, 2.0])));
    for k in 0..4 {
        out.push((format!("converted-mrf-{k}"), converted_mrf(3000 + k, 5)));
    }
    out
}

/// Loopy model with `agents` scalar-or-vector agents and as many factors,
/// each over 2..=`max_scope` random agents with `N(0, coeff_scale²)`
/// coefficients, unit priors and unit noise. Denser than [`multi_loop`]
/// and able to reach `ρ(Q) > 1`.
pub fn dense_loopy(
    seed: u64,
    agents: usize,
    max_scope: usize,
    dim: usize,
    coeff_scale: f64,
) -> LinearGaussianModel {
    use rand::seq::SliceRandom;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let variables = (1..=agents as u32)
        .map(|id| VariableSpec {
            id,
            dim,
            prior_cov: DMatrix::identity(dim, dim),
        })
        .collect();
    let mut factors = Vec::with_capacity(agents);
    for id in 1..=agents as u32 {
        let size = rng.random_range(2..=max_scope.min(agents));
        let mut scope: Vec<u32> = (1..=agents as u32).collect();
        scope.shuffle(&mut rng);
        scope.truncate(size);
        scope.sort_unstable();
        let coeff = scope
            .iter()
            .map(|&i| {
                let a: DMatrix<f64> = DMatrix::from_fn(dim, dim, |_, _| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    coeff_scale * z
                });
                (i, a)
            })
            .collect();
        let obs: DVector<f64> = DVector::from_fn(dim, |_, _| StandardNormal.sample(&mut rng));
        factors.push(FactorSpec {
            id,
            scope,
            coeff,
            noise_cov: DMatrix::identity(dim, dim),
            obs,
        });
    }
    LinearGaussianModel::new(variables, factors)
}
