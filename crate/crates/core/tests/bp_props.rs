use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gabp::analysis::{
    assemble_q, beliefs_from_v2f_means, information_fixed_point, mean_recursion, random_start,
    FixedPointOptions, MeanRecursionOptions, MeanStatus,
};
use gabp::bp::{BpOptions, InitStrategy, Problem, Schedule};
use gabp::model::posterior_solve;
use gabp::mrf_bridge::{
    check_walk_summability, factor_width_two, mrf_marginal_oracle, mrf_to_linear_gaussian,
    normalize_mrf,
};
use gabp::testkit;
use gabp::Execution;

fn run(problem: &Problem, execution: Execution, init: &InitStrategy) -> gabp::BpRun {
    let opts = BpOptions {
        execution,
        reference: None,
        ..Default::default()
    };
    problem.run_bp(init, Schedule::Synchronous, &opts).unwrap()
}

#[test]
fn synchronous_runs_are_bit_identical_across_execution_modes() {
    for (k, model) in testkit::loopy_corpus(10)
        .iter()
        .chain(&testkit::forest_corpus(5))
        .enumerate()
    {
        let problem = Problem::new(model).unwrap();
        let init = testkit::random_psd_init(&problem, k as u64);
        let par = run(&problem, Execution::Parallel, &init);
        let seq = run(&problem, Execution::Sequential, &init);
        let again = run(&problem, Execution::Parallel, &init);
        assert_eq!(par.status, seq.status, "model {k}");
        assert_eq!(par.messages, seq.messages, "model {k}");
        assert_eq!(par.trajectory, seq.trajectory, "model {k}");
        assert_eq!(par.trajectory, again.trajectory, "model {k}");
    }
}

#[test]
fn per_edge_updates_commute_within_an_iteration() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for model in testkit::loopy_corpus(8) {
        let problem = Problem::new(&model).unwrap();
        let mut j = problem
            .init_messages(&InitStrategy::UpperBound)
            .unwrap()
            .f2v_infos();
        for _ in 0..5 {
            let reference = problem.info_map(&j, Execution::Sequential).unwrap();
            let nv = problem.index().v2f.len();
            let mut order: Vec<usize> = (0..nv).collect();
            order.shuffle(&mut rng);
            let mut v2f = vec![DMatrix::zeros(0, 0); nv];
            for &p in &order {
                v2f[p] = problem.v2f_info(p, &j);
            }
            order.shuffle(&mut rng);
            let mut shuffled = vec![DMatrix::zeros(0, 0); reference.len()];
            for &p in &order {
                shuffled[p] = problem.f2v_info(p, &v2f).unwrap();
            }
            assert_eq!(shuffled, reference);
            j = reference;
        }
    }
}

#[test]
fn two_phase_beliefs_match_posterior_when_rho_below_one() {
    let mut checked = 0;
    for (k, model) in testkit::rho_population(40).iter().enumerate() {
        let problem = Problem::new(model).unwrap();
        let fp =
            information_fixed_point(&problem, &InitStrategy::Zero, &FixedPointOptions::default())
                .unwrap();
        let q = assemble_q(&problem, &fp).unwrap();
        if q.rho >= 0.999 {
            continue;
        }
        let r = mean_recursion(
            &q,
            &random_start(q.dim(), k as u64),
            &MeanRecursionOptions::default(),
        );
        assert!(
            matches!(r.status, MeanStatus::Converged { .. }),
            "model {k}: {:?}",
            r.status
        );
        let beliefs = beliefs_from_v2f_means(&problem, &fp, &q, &r.v).unwrap();
        let sol = posterior_solve(model).unwrap();
        for b in &beliefs {
            let err = (&b.mean - sol.mean_of(b.var).unwrap()).amax();
            assert!(err <= 1e-8, "model {k} var {}: {err:e}", b.var);
        }
        checked += 1;
    }
    assert!(checked >= 10);
}

#[test]
fn schedules_reach_the_same_beliefs() {
    for model in testkit::loopy_corpus(6) {
        let problem = Problem::new(&model).unwrap();
        let opts = BpOptions {
            record_edges: false,
            ..Default::default()
        };
        let sol = posterior_solve(&model).unwrap();
        for schedule in [
            Schedule::Synchronous,
            Schedule::SequentialAscending,
            Schedule::RandomPermutation(5),
        ] {
            let run = problem
                .run_bp(&InitStrategy::Zero, schedule, &opts)
                .unwrap();
            assert!(run.status.is_converged(), "{schedule:?}");
            for b in problem.compute_beliefs(&run.messages).unwrap() {
                assert!(
                    (&b.mean - sol.mean_of(b.var).unwrap()).amax() <= 1e-8,
                    "{schedule:?}"
                );
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn walk_summable_mrfs_convert_and_converge(seed in 0u64..100_000, n in 2usize..=7) {
        let mrf = testkit::walk_summable_mrf(seed, n);
        prop_assert!(check_walk_summability(&mrf).walk_summable);
        let fac = factor_width_two(&mrf, None).unwrap();
        prop_assert!(fac.reconstruction_error(&mrf) <= 1e-8);
        prop_assert!(fac.max_column_support() <= 2);
        let model = mrf_to_linear_gaussian(&mrf, &fac).unwrap();

        let exact = mrf_marginal_oracle(&mrf).unwrap();
        let sol = posterior_solve(&model).unwrap();
        for i in 0..n {
            let mean = sol.mean_of(i as u32 + 1).unwrap()[0];
            prop_assert!((mean - exact[i]).abs() <= 1e-10 * (1.0 + exact.amax()), "x{}: {mean} vs {}", i + 1, exact[i]);
        }

        prop_assert!(testkit::rho_q(&model) < 1.0);
        let problem = Problem::new(&model).unwrap();
        let run = problem
            .run_bp(&InitStrategy::Zero, Schedule::Synchronous, &BpOptions { record_edges: false, ..Default::default() })
            .unwrap();
        prop_assert!(run.status.is_converged());
        for b in problem.compute_beliefs(&run.messages).unwrap() {
            prop_assert!((b.mean[0] - exact[b.var as usize - 1]).abs() <= 1e-8);
        }
    }

    #[test]
    fn normalization_preserves_means(seed in 0u64..100_000, n in 1usize..=6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let j = &g * g.transpose() + DMatrix::identity(n, n) * rng.random_range(0.1..3.0);
        let h = DVector::from_fn(n, |_, _| rng.random_range(-5.0..5.0));
        let raw = j.clone().cholesky().unwrap().solve(&h);
        let mrf = normalize_mrf(&j, &h).unwrap();
        prop_assert!(mrf.j.diagonal().iter().all(|&d| (d - 1.0).abs() <= 1e-12));
        let scaled = mrf.unscale_means(&mrf_marginal_oracle(&mrf).unwrap());
        prop_assert!((scaled - &raw).amax() <= 1e-9 * (1.0 + raw.amax()));
    }
}
