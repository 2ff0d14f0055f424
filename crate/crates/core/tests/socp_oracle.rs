//! Randomized checks of the conic solver against brute-force oracles.

mod common;

use common::*;
use mssmpc::socp::{solve, SolverStatus};
use nalgebra::DMatrix;

#[test]
fn hundred_random_instances_match_oracles() {
    let mut rng = Uniform::new(20_240_917);
    let mut checker = Uniform::new(7);
    for case in 0..100 {
        let nu = 1 + case % 6;
        let p = random_instance(&mut rng, nu);
        let sol = solve(&p).unwrap();
        assert_eq!(sol.status, SolverStatus::Optimal, "case {case}");
        assert!(sol.kkt.max() <= 1e-6, "case {case}: {:?}", sol.kkt);
        assert!(sol.y.iter().all(|v| v.is_finite()));
        assert!(p.max_violation(&sol.y) <= 1e-7, "case {case}");

        let gain = ray_search_improvement(&p, &sol.y, &mut checker);
        assert!(gain <= 1e-4, "case {case}: ray search improves by {gain}");

        let gap = duality_gap(&p, &sol.y, &sol);
        assert!(gap.abs() <= 1e-4, "case {case}: gap {gap}");

        if nu <= 2 {
            let grid = grid_minimum(&p, -4.0, 4.0, if nu == 1 { 80_000 } else { 800 });
            assert!(sol.objective <= grid + 1e-9, "case {case}: grid {grid} beats {}", sol.objective);
            // fine grid around the reported optimum
            let mut local = f64::INFINITY;
            let r = 0.05;
            let steps = 100;
            for i in 0..=steps {
                for j in 0..=(if nu == 2 { steps } else { 0 }) {
                    let mut y = sol.y.clone();
                    y[0] += -r + 2.0 * r * i as f64 / steps as f64;
                    if nu == 2 {
                        y[1] += -r + 2.0 * r * j as f64 / steps as f64;
                    }
                    if feasible(&p, &y) {
                        local = local.min(p.objective(&y));
                    }
                }
            }
            assert!((local - sol.objective).abs() <= 1e-4 || local >= sol.objective, "case {case}");
        }
    }
}

#[test]
fn barrier_path_is_monotone_on_random_instances() {
    let mut rng = Uniform::new(99);
    for case in 0..30 {
        let p = random_instance(&mut rng, 1 + case % 6);
        let sol = solve(&p).unwrap();
        for w in sol.path_objectives.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "case {case}: {:?}", sol.path_objectives);
        }
    }
}

#[test]
fn argmin_is_invariant_to_cost_scaling() {
    let mut rng = Uniform::new(4242);
    for case in 0..30 {
        let nu = 1 + case % 6;
        let mut p = random_instance(&mut rng, nu);
        // make the objective strongly convex so the argmin is unique
        p.qhat += DMatrix::<f64>::identity(nu, nu) * 0.5;
        let base = solve(&p).unwrap();
        for factor in [0.5, 2.0, 10.0] {
            let mut scaled = p.clone();
            scaled.qhat *= factor;
            scaled.chat *= factor;
            let s = solve(&scaled).unwrap();
            assert!((&s.y - &base.y).amax() <= 1e-7, "case {case} factor {factor}: {}", (&s.y - &base.y).amax());
        }
    }
}
