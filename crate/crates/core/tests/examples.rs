//! Every example runs and produces sensible output.

#[path = "../examples/bounds_table.rs"]
mod bounds_table;
#[path = "../examples/compare.rs"]
mod compare;
#[path = "../examples/conic_solver.rs"]
mod conic_solver;
#[path = "../examples/design_benchmark.rs"]
mod design_benchmark;
#[path = "../examples/monte_carlo.rs"]
mod monte_carlo;
#[path = "../examples/solve_step.rs"]
mod solve_step;

use mssmpc::socp::SolverStatus;

#[test]
fn design_benchmark_runs() {
    let d = design_benchmark::run_example().unwrap();
    assert!((d.rho - 2.146).abs() < 1e-3);
}

#[test]
fn solve_step_runs() {
    let sols = solve_step::run_example().unwrap();
    assert_eq!(sols.len(), 3);
    assert!(sols.iter().all(|s| s.status == SolverStatus::Optimal));
    // hard first-input bound needs the most relaxation
    assert!(sols[1].gamma_x > sols[2].gamma_x);
}

#[test]
fn conic_solver_runs() {
    let s = conic_solver::run_example().unwrap();
    assert_eq!(s.status, SolverStatus::Optimal);
    assert!((s.y[0] + s.y[1] - 1.0).abs() < 1e-6);
}

#[test]
fn monte_carlo_runs() {
    let s = monte_carlo::run_example().unwrap();
    assert_eq!(s.n_sim(), 100);
    assert_eq!(s.histogram.total(), 100);
}

#[test]
fn compare_runs() {
    let c = compare::run_example().unwrap();
    assert_eq!(c.pairs().len(), 100);
    assert!((c.mean_ratio() - 1.0).abs() < 0.05);
}

#[test]
fn bounds_table_runs() {
    let rows = bounds_table::run_example().unwrap();
    assert_eq!(rows.len(), 10);
    assert!(rows[5..].iter().all(|r| r.f_x == 1.0 && r.f_u == 1.0));
}
