//! Property tests for the structural invariants.

use nalgebra::{DMatrix, DVector};
use powermarket::fit::{fit_quadratic, SampleBox};
use powermarket::rng::CounterRng;
use powermarket::sensitivity::{djsp_dr, sensitivity_bundle};
use powermarket::sim::{monte_carlo_costs, SimConfig};
use powermarket::{solve_riccati, LinearSystem, QuadraticCost, TimeGrid};
use proptest::prelude::*;

fn matrix(n: usize, vals: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| vals[i * n + j])
}

prop_compose! {
    fn lq_problem()(n in 1usize..=3, vals in prop::collection::vec(-1.0f64..1.0, 30), r in 0.05f64..20.0)
        -> (LinearSystem, QuadraticCost) {
        let a = matrix(n, &vals[0..9]) * 0.5 - DMatrix::identity(n, n) * 0.5;
        let b = DMatrix::from_fn(n, 1, |i, _| vals[9 + i] + if i == n - 1 { 1.5 } else { 0.0 });
        let g = DMatrix::from_diagonal(&DVector::from_fn(n, |i, _| vals[12 + i].abs()));
        let h = DVector::from_fn(n, |i, _| vals[15 + i]);
        let l = matrix(n, &vals[18..27]);
        let q = &l * l.transpose();
        let d = DVector::from_fn(n, |i, _| vals[27 + i]);
        (LinearSystem::new(a, b, g, h).unwrap(), QuadraticCost::new(q, d, r).unwrap())
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn riccati_symmetric_with_zero_terminal((sys, cost) in lq_problem()) {
        let grid = TimeGrid::new(2.0, 0.02).unwrap();
        let sol = solve_riccati(&sys, &cost, &grid).unwrap();
        for k in &sol.k {
            prop_assert_eq!(k.clone(), k.transpose());
        }
        prop_assert_eq!(sol.k.last().unwrap().norm(), 0.0);
        prop_assert_eq!(sol.s.last().unwrap().norm(), 0.0);
        prop_assert_eq!(*sol.q.last().unwrap(), 0.0);
        // K(t) stays PSD for a PSD state weight.
        let min_eig = sol.k[0].clone().symmetric_eigen().eigenvalues.min();
        prop_assert!(min_eig > -1e-9 * sol.k[0].norm().max(1.0));
    }

    #[test]
    fn chain_rule_identity(x in -1e3f64..1e3, r in 1e-3f64..1e3) {
        let dr = djsp_dr(x, r).unwrap();
        prop_assert!((dr * r * r + x).abs() <= 1e-12 * x.abs().max(1e-300));
    }

    #[test]
    fn cost_accounting_identity((sys, cost) in lq_problem(), seed in any::<u64>()) {
        let grid = TimeGrid::new(1.0, 0.05).unwrap();
        let sol = solve_riccati(&sys, &cost, &grid).unwrap();
        let x0 = DVector::from_element(sys.n(), 0.3);
        let est = monte_carlo_costs(&sys, &cost, &sol, &x0, &SimConfig::new(grid, 16, seed).unwrap()).unwrap();
        prop_assert!((est.total - (est.state_penalizing + cost.r * est.volatility)).abs() <= 1e-12 * est.total.abs().max(1.0));
    }

    #[test]
    fn common_random_numbers_ignore_the_model((sys, cost) in lq_problem(), seed in any::<u64>(), r2 in 0.1f64..10.0) {
        let cfg = SimConfig::new(TimeGrid::new(1.0, 0.1).unwrap(), 4, seed).unwrap();
        let a = cfg.rng_for(&sys, &cost);
        let b = cfg.rng_for(&sys, &cost.with_r(r2).unwrap());
        prop_assert_eq!(a.normal(3, 2, 1).to_bits(), b.normal(3, 2, 1).to_bits());
        let ind = cfg.independent();
        if r2 != cost.r {
            prop_assert_ne!(ind.rng_for(&sys, &cost).seed(), ind.rng_for(&sys, &cost.with_r(r2).unwrap()).seed());
        }
    }

    #[test]
    fn rng_is_a_pure_function(seed in any::<u64>(), p in any::<u64>(), s in any::<u64>(), c in 0u64..8) {
        let g = CounterRng::new(seed);
        prop_assert_eq!(g.normal(p, s, c).to_bits(), CounterRng::new(seed).normal(p, s, c).to_bits());
        prop_assert!(g.normal(p, s, c).is_finite());
    }

    #[test]
    fn fit_reproduces_a_convex_quadratic(vals in prop::collection::vec(-1.0f64..1.0, 13)) {
        let l = matrix(3, &vals[0..9]);
        let q = &l * l.transpose();
        let d = DVector::from_column_slice(&vals[9..12]);
        let c = vals[12];
        let f = |x: &[f64]| {
            let x = DVector::from_column_slice(x);
            x.dot(&(&q * &x)) + 2.0 * x.dot(&d) + c
        };
        let fit = fit_quadratic(f, &SampleBox::operating(), 1000).unwrap();
        prop_assert!((&fit.q - &q).norm() < 1e-6 * q.norm().max(1.0));
        prop_assert!((&fit.d - &d).norm() < 1e-6);
        // Fitting the fit changes nothing.
        let again = fit_quadratic(|x: &[f64]| fit.eval(x) + fit.intercept, &SampleBox::operating(), 1000).unwrap();
        prop_assert!((&again.q - &fit.q).norm() < 1e-8 * fit.q.norm().max(1.0));
        prop_assert!((&again.d - &fit.d).norm() < 1e-6);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn sensitivity_terminals_and_chain_rule((sys, cost) in lq_problem()) {
        let grid = TimeGrid::new(1.0, 0.02).unwrap();
        let sol = solve_riccati(&sys, &cost, &grid).unwrap();
        let a_star = &sys.a - &sys.b * sys.b.transpose() * &sol.k[0] / cost.r;
        prop_assume!(a_star.complex_eigenvalues().iter().all(|l| l.re < -1e-6));
        let bundle = sensitivity_bundle(&sys, &cost, &grid).unwrap();
        prop_assert_eq!(bundle.dk.last().unwrap().norm(), 0.0);
        prop_assert_eq!(bundle.ds.last().unwrap().norm(), 0.0);
        prop_assert!((bundle.djsp_dr * cost.r * cost.r + bundle.djsp_dgamma).abs() <= 1e-12 * bundle.djsp_dgamma.abs().max(1e-300));
    }
}
