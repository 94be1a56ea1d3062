//! Property tests over randomly drawn models and inputs.

mod common;

use ::clbp::constraints::{solve_constrained, ConstrainedOptions, Regime, Scope, SolveStatus};
use ::clbp::graph_model::{load_factor_graph, save_factor_graph, LoadOptions};
use ::clbp::harness::{
    anneal_sweep, fmt_num, gen_potts_regular, gen_wainwright_jordan, rng, truncated_quartiles, AnnealSchedule,
    SweepOptions,
};
use ::clbp::inference::{clbp, ClbpOptions, Problem};
use ::clbp::oracle::exact_stats;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn oracle_marginals_and_covariance_are_consistent(seed in any::<u64>(), n in 1usize..=6) {
        let fg = common::random_model(&mut rng(seed), n, 4096);
        let s = exact_stats(&fg, &[]).unwrap();
        for m in &s.single_marginals {
            prop_assert!((m.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(m.iter().all(|p| *p >= 0.0));
        }
        for i in 0..n {
            for y in 0..fg.card(i) {
                // Diagonal entries are Bernoulli variances.
                let p = s.single_marginals[i][y];
                prop_assert!((s.cov(i, y, i, y) - p * (1.0 - p)).abs() < 1e-12);
                for j in 0..n {
                    let row: f64 = (0..fg.card(j)).map(|y2| s.cov(i, y, j, y2)).sum();
                    prop_assert!(row.abs() < 1e-12);
                    for y2 in 0..fg.card(j) {
                        prop_assert!((s.cov(i, y, j, y2) - s.cov(j, y2, i, y)).abs() < 1e-14);
                    }
                }
            }
        }
    }

    #[test]
    fn message_passing_is_exact_on_trees(seed in any::<u64>(), n in 1usize..=9) {
        let (fg, _) = common::random_tree(&mut rng(seed), n);
        let p = Problem::bethe(&fg).unwrap();
        let st = clbp(&p, &[], &ClbpOptions::default()).unwrap();
        prop_assert!(st.converged);
        let exact = exact_stats(&fg, &[]).unwrap();
        for (q, e) in st.marginals(&p).iter().zip(&exact.single_marginals) {
            for (a, b) in q.iter().zip(e) {
                prop_assert!((a - b).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn trees_need_no_multipliers(seed in any::<u64>(), n in 2usize..=7) {
        let (fg, _) = common::random_tree(&mut rng(seed), n);
        let mut o = ConstrainedOptions::default();
        o.build.scope = Scope::All;
        let sol = solve_constrained(&fg, Regime::OnOff, 1.0, &o).unwrap();
        prop_assert_eq!(sol.status, SolveStatus::Converged);
        prop_assert!(sol.lambda.values.iter().all(|l| *l == 0.0));
        prop_assert!(sol.max_abs_delta() < 1e-6);
    }

    #[test]
    fn generators_are_seed_deterministic(seed in any::<u64>()) {
        let a = save_factor_graph(&gen_wainwright_jordan(3, seed).unwrap());
        prop_assert_eq!(&a, &save_factor_graph(&gen_wainwright_jordan(3, seed).unwrap()));
        let b = save_factor_graph(&gen_potts_regular(8, seed).unwrap());
        prop_assert_eq!(&b, &save_factor_graph(&gen_potts_regular(8, seed).unwrap()));
    }

    #[test]
    fn text_format_round_trips(seed in any::<u64>(), n in 1usize..=6) {
        let fg = common::random_model(&mut rng(seed), n, 4096);
        let back = load_factor_graph::<f64>(&save_factor_graph(&fg), LoadOptions::default()).unwrap();
        prop_assert_eq!(back.cards(), fg.cards());
        prop_assert_eq!(back.num_factors(), fg.num_factors());
        for (x, y) in back.factors().iter().zip(fg.factors()) {
            prop_assert_eq!(x.members(), y.members());
            for (u, v) in x.table().iter().zip(y.table()) {
                prop_assert!((u - v).abs() <= 1e-15 * v.abs());
            }
        }
    }

    #[test]
    fn truncated_quartiles_are_ordered(vals in prop::collection::vec(prop_oneof![0.0f64..10.0, Just(f64::INFINITY)], 1..30)) {
        let q = truncated_quartiles(&vals);
        prop_assert!(q[0] <= q[1] && q[1] <= q[2]);
        let inf = vals.iter().filter(|v| v.is_infinite()).count();
        if 2 * inf > vals.len() {
            prop_assert!(q[1].is_infinite());
        }
        if inf == 0 {
            prop_assert!(q[2].is_finite());
        }
    }

    #[test]
    fn numbers_render_round_trip(v in prop::num::f64::NORMAL | prop::num::f64::ZERO) {
        prop_assert_eq!(fmt_num(v).parse::<f64>().unwrap(), v);
    }

    #[test]
    fn geometric_schedules_are_monotone(a in 0.05f64..20.0, b in 0.05f64..20.0, k in 2usize..50) {
        prop_assume!((a / b).ln().abs() > 1e-3);
        let s = AnnealSchedule::geometric(a, b, k).unwrap();
        let t = s.temps();
        prop_assert_eq!(t.len(), k);
        prop_assert!((t[0] - a).abs() < 1e-12 * a && (t[k - 1] - b).abs() < 1e-12 * b);
        prop_assert!(t.windows(2).all(|w| (w[0] > w[1]) == (a > b)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn converged_records_satisfy_the_constraints(seed in 0u64..1000) {
        let fg = gen_wainwright_jordan(3, seed).unwrap();
        let sched = AnnealSchedule::geometric(5.0, 1.5, 5).unwrap();
        let opts = SweepOptions::default();
        for r in anneal_sweep(&fg, Regime::Diagonal, &sched, &opts).unwrap() {
            if r.converged() {
                prop_assert!(r.max_abs_delta <= opts.constrained.tol_constraint);
                prop_assert!(r.mad_marginal.is_finite() && r.mad_c.is_finite() && r.mad_chi.is_finite());
            } else {
                prop_assert!(r.mad_marginal.is_infinite());
            }
        }
    }
}
