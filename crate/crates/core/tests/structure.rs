//! Graph, model and Q-matrix structure checks against brute-force oracles.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gabp::analysis::{assemble_q, information_fixed_point, FixedPointOptions};
use gabp::graph::{
    build_factor_graph, canonical_edge_order, classify_topology, FactorGraph, TopologyKind,
};
use gabp::io::{model_from_json, model_to_json};
use gabp::model::{
    eliminate_noiseless_factor, posterior_solve, random_model, stack_global, FactorSpec,
    LinearGaussianModel, RandomModelSpec, VariableSpec,
};
use gabp::numerics::{min_eig, SymMatrix};
use gabp::testkit;
use gabp::{InitStrategy, Problem};

fn topology(seed: u64) -> TopologyKind {
    [
        TopologyKind::Forest,
        TopologyKind::SingleLoopPlusForest,
        TopologyKind::MultiLoop,
    ][(seed % 3) as usize]
}

/// Random models of every class, up to `max_agents`, including dense ones.
fn any_model(seed: u64, max_agents: usize) -> LinearGaussianModel {
    let agents = 3 + (seed as usize) % (max_agents - 2);
    if seed % 4 == 3 {
        return testkit::dense_loopy(seed, agents, 3, 1, 1.0);
    }
    random_model(&RandomModelSpec::new(seed, agents, topology(seed)).dims(1, 2)).unwrap()
}

/// Cycle-space dimension per connected component, by counting edge subsets
/// in which every node has even degree (there are `2^rank` of them).
fn brute_force_cycle_ranks(g: &FactorGraph) -> Vec<usize> {
    let mut edges = Vec::new();
    for f in g.factors() {
        for &v in g.factor_neighbors(f) {
            edges.push((v, f));
        }
    }
    // components over variables via shared factors
    let mut comp: BTreeMap<u32, usize> = BTreeMap::new();
    let mut next = 0;
    for v in g.variables() {
        if comp.contains_key(&v) {
            continue;
        }
        let mut stack = vec![v];
        comp.insert(v, next);
        while let Some(x) = stack.pop() {
            for &f in g.var_neighbors(x) {
                for &y in g.factor_neighbors(f) {
                    if comp.insert(y, next).is_none() {
                        stack.push(y);
                    }
                }
            }
        }
        next += 1;
    }
    (0..next)
        .map(|c| {
            let local: Vec<(u32, u32)> = edges
                .iter()
                .copied()
                .filter(|(v, _)| comp[v] == c)
                .collect();
            let mut even = 0u64;
            for mask in 0u64..(1 << local.len()) {
                let mut deg: BTreeMap<(bool, u32), u32> = BTreeMap::new();
                for (k, &(v, f)) in local.iter().enumerate() {
                    if mask >> k & 1 == 1 {
                        *deg.entry((false, v)).or_default() += 1;
                        *deg.entry((true, f)).or_default() += 1;
                    }
                }
                if deg.values().all(|d| d % 2 == 0) {
                    even += 1;
                }
            }
            even.trailing_zeros() as usize
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn adjacency_is_symmetric(seed in 0u64..100_000) {
        let g = build_factor_graph(&any_model(seed, 10)).unwrap();
        for v in g.variables() {
            for &f in g.var_neighbors(v) {
                prop_assert!(g.factor_neighbors(f).contains(&v));
            }
        }
        for f in g.factors() {
            for &v in g.factor_neighbors(f) {
                prop_assert!(g.var_neighbors(v).contains(&f));
            }
        }
    }

    #[test]
    fn topology_matches_brute_force(seed in 0u64..100_000) {
        let model = any_model(seed, 6);
        let g = build_factor_graph(&model).unwrap();
        prop_assume!(g.num_variables() + g.num_factors() <= 12 && g.num_edges() <= 18);
        let ranks = brute_force_cycle_ranks(&g);
        let class = classify_topology(&g);
        let worst = match ranks.iter().max().copied().unwrap_or(0) {
            0 => TopologyKind::Forest,
            1 => TopologyKind::SingleLoopPlusForest,
            _ => TopologyKind::MultiLoop,
        };
        prop_assert_eq!(class.kind, worst);
        prop_assert_eq!(class.cycle_rank(), ranks.iter().sum::<usize>());
        let mut mine: Vec<usize> = class.components.iter().map(|c| c.cycle_rank).collect();
        let mut theirs = ranks.clone();
        mine.sort_unstable();
        theirs.sort_unstable();
        prop_assert_eq!(mine, theirs);
    }

    #[test]
    fn edge_index_round_trips(seed in 0u64..100_000) {
        let g = build_factor_graph(&any_model(seed, 12)).unwrap();
        let idx = canonical_edge_order(&g);
        prop_assert_eq!(idx.f2v.len(), g.num_edges());
        prop_assert_eq!(idx.v2f.len(), g.num_edges());
        for (p, &(f, v)) in idx.f2v.iter().enumerate() {
            prop_assert_eq!(idx.f2v_position(f, v), Some(p));
        }
        for (p, &(v, f)) in idx.v2f.iter().enumerate() {
            prop_assert_eq!(idx.v2f_position(v, f), Some(p));
        }
    }

    #[test]
    fn posterior_precision_is_pd(seed in 0u64..100_000) {
        let sys = stack_global(&any_model(seed, 10)).unwrap();
        let p = sys.posterior_precision().unwrap();
        prop_assert!((&p - p.transpose()).amax() <= 1e-12 * p.amax().max(1.0));
        prop_assert!(min_eig(&SymMatrix::new(p).unwrap()) > 0.0);
    }

    #[test]
    fn serialization_round_trips_bit_exactly(seed in 0u64..100_000) {
        let model = random_model(&RandomModelSpec::new(seed, 2 + (seed % 9) as usize, topology(seed))
            .dims(1, 3)
            .scales(0.1 + (seed % 7) as f64, 0.3))
            .unwrap();
        let text = model_to_json(&model, None);
        let (back, prov) = model_from_json(&text).unwrap();
        prop_assert!(prov.is_none());
        prop_assert_eq!(&back, &model);
        prop_assert_eq!(model_to_json(&back, None), text);
    }

    #[test]
    fn elimination_matches_constrained_least_squares(seed in 0u64..100_000) {
        let (model, n) = noiseless_model(seed);
        let reduced = eliminate_noiseless_factor(&model, n).unwrap();
        let sol = posterior_solve(&reduced).unwrap();
        let oracle = constrained_oracle(&model, n);
        for v in reduced.variables.iter().map(|v| v.id) {
            let diff = (sol.mean_of(v).unwrap() - &oracle[&v]).amax();
            prop_assert!(diff <= 1e-8, "variable {v}: {diff:e}");
        }
    }
}

/// Model with total dimension ≤ 12 whose factor `n` has zero noise. All
/// agents share one dimension so every coefficient block is square.
fn noiseless_model(seed: u64) -> (LinearGaussianModel, u32) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let agents = rng.random_range(2..=4u32);
    let dim = rng.random_range(1..=3);
    let dims = vec![dim; agents as usize];
    let mut gauss = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0));
    let variables = (1..=agents)
        .map(|id| {
            let d = dims[id as usize - 1];
            let g = gauss(d, d);
            VariableSpec {
                id,
                dim: d,
                prior_cov: &g * g.transpose() + DMatrix::identity(d, d),
            }
        })
        .collect();
    let factors = (1..=agents)
        .map(|id| {
            let d = dims[id as usize - 1];
            let scope: Vec<u32> = (1..=agents)
                .filter(|&j| j == id || (j + id) % 2 == 1 || j == id % agents + 1)
                .collect();
            let coeff: BTreeMap<u32, DMatrix<f64>> = scope
                .iter()
                .map(|&j| {
                    let a = gauss(d, dims[j as usize - 1]);
                    (
                        j,
                        if j == id {
                            a + DMatrix::identity(d, d) * 2.0
                        } else {
                            a
                        },
                    )
                })
                .collect();
            let noise = if id == 1 {
                DMatrix::zeros(d, d)
            } else {
                let g = gauss(d, d);
                &g * g.transpose() + DMatrix::identity(d, d) * 0.5
            };
            FactorSpec {
                id,
                scope,
                coeff,
                noise_cov: noise,
                obs: gauss(d, 1).column(0).into_owned(),
            }
        })
        .collect();
    (LinearGaussianModel::new(variables, factors), 1)
}

/// Minimizes the posterior energy of every factor but `n`, subject to
/// `A_n x = y_n`, by solving the KKT system.
fn constrained_oracle(model: &LinearGaussianModel, n: u32) -> BTreeMap<u32, DVector<f64>> {
    let rest = LinearGaussianModel::new(
        model.variables.clone(),
        model
            .factors
            .iter()
            .filter(|f| f.id != n)
            .cloned()
            .collect(),
    );
    let sys = stack_global(&rest).unwrap();
    let h = sys.posterior_precision().unwrap();
    let g = sys.a.transpose() * sys.r.clone().try_inverse().unwrap() * &sys.y;
    let total = h.nrows();
    let fac = model.factor(n).unwrap();
    let m = fac.obs.len();
    let mut c = DMatrix::zeros(m, total);
    for &(id, off, d) in &sys.var_offsets {
        if let Some(a) = fac.coeff.get(&id) {
            c.view_mut((0, off), (m, d)).copy_from(a);
        }
    }
    let mut kkt = DMatrix::zeros(total + m, total + m);
    kkt.view_mut((0, 0), (total, total)).copy_from(&h);
    kkt.view_mut((0, total), (total, m))
        .copy_from(&c.transpose());
    kkt.view_mut((total, 0), (m, total)).copy_from(&c);
    let mut rhs = DVector::zeros(total + m);
    rhs.rows_mut(0, total).copy_from(&g);
    rhs.rows_mut(total, m).copy_from(&fac.obs);
    let x = kkt.lu().solve(&rhs).unwrap();
    sys.var_offsets
        .iter()
        .map(|&(id, off, d)| (id, x.rows(off, d).into_owned()))
        .collect()
}

#[test]
fn q_blocks_follow_two_hop_pattern() {
    for seed in 0..40u64 {
        let model = any_model(seed, 8);
        let problem = Problem::new(&model).unwrap();
        let fp =
            information_fixed_point(&problem, &InitStrategy::Zero, &FixedPointOptions::default())
                .unwrap();
        let q = assemble_q(&problem, &fp).unwrap();
        let g = problem.graph();
        for (r, &(j, fnn)) in q.edges.iter().enumerate() {
            let expected: BTreeSet<(u32, u32)> = g
                .var_neighbors(j)
                .iter()
                .filter(|&&k| k != fnn)
                .flat_map(|&k| {
                    g.factor_neighbors(k)
                        .iter()
                        .filter(move |&&z| z != j)
                        .map(move |&z| (z, k))
                })
                .collect();
            for (c, &edge) in q.edges.iter().enumerate() {
                let nonzero = q.block(r, c).amax() > 0.0;
                assert_eq!(
                    nonzero,
                    expected.contains(&edge),
                    "seed {seed}: block (x{j}->f{fnn}, x{}->f{})",
                    edge.0,
                    edge.1
                );
            }
        }
    }
}
