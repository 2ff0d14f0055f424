//! Acceptance criteria on the double-integrator benchmark. Prints one
//! PASS/FAIL line per criterion and exits nonzero if any criterion fails.

mod common;

use std::time::{Duration, Instant};

use mssmpc::baseline::{IsController, IsOptions, Mode};
use mssmpc::benchmark;
use mssmpc::cli;
use mssmpc::controller::{candidate_gammas, candidate_shift, MsController, MsOptions, Strategy};
use mssmpc::linalg;
use mssmpc::model::inscribed_radius;
use mssmpc::offline::{self, DesignArtifacts, NoiseFamily};
use mssmpc::sim::{self, Controller, ControllerSpec, NoiseSampler, RngStream};
use mssmpc::socp::{self, SolverStatus};
use mssmpc::Error;
use nalgebra::DVector;

// 1: radius calibration
const RHO_EXPECTED: f64 = 2.146;
const RHO_TOL: f64 = 1e-3;
const RHO_RUNTIME: Duration = Duration::from_millis(1);
// 2: inscribed radius
const R_X_EXPECTED: f64 = 12.1010;
const R_X_TOL: f64 = 1e-3;
// 3: published design validity
const EIGEN_MARGIN: f64 = -1e-6;
// 4: certificate
const PUBLISHED_MU: f64 = 0.0464;
const PUBLISHED_BETA: f64 = 33.7956;
// 5: LQR region
const LQR_POINTS: usize = 100;
const LQR_COST_REL: f64 = 1e-5;
const LQR_INPUT_TOL: f64 = 1e-5;
const LQR_GAMMA_TOL: f64 = 1e-7;
const LQR_RUNTIME: Duration = Duration::from_secs(10);
// 6: feasibility frontier
const RELAXED_GAMMA: f64 = 1.0 + 1e-7;
const SOLVE_RUNTIME: Duration = Duration::from_secs(1);
// 7: conic oracle
const ORACLE_CASES: usize = 100;
const ORACLE_OBJECTIVE_TOL: f64 = 1e-4;
const KKT_TOL: f64 = 1e-6;
// 8, 9: one-step statistics
const DRAWS: usize = 2000;
const SIGMAS: f64 = 3.0;
// 10: steady-state chance constraint
const STEADY_EPISODES: usize = 1000;
const STEADY_STEPS: std::ops::RangeInclusive<usize> = 20..=50;
// 11: relaxation decay
const DECAY_EPISODES: usize = 1000;
const DECAY_STEP: usize = 10;
const DECAY_GAMMA: f64 = 1.01;
// 12: cost comparison
const COMPARE_EPISODES: usize = 1000;
const RATIO_BAND: (f64, f64) = (0.95, 1.05);
const CAMPAIGN_RUNTIME: Duration = Duration::from_secs(300);

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed, detail: detail.into() }
}

fn v2(a: f64, b: f64) -> DVector<f64> {
    DVector::from_column_slice(&[a, b])
}

fn mean_se(values: &[f64]) -> (f64, f64) {
    let (m, s) = sim::mean_std(values);
    (m, s / (values.len() as f64).sqrt())
}

fn radius_calibration(_: &DesignArtifacts) -> Outcome {
    let start = Instant::now();
    let rho = offline::rho_from_eps(0.1, 2, NoiseFamily::Gaussian).unwrap();
    let elapsed = start.elapsed();
    outcome(
        (rho - RHO_EXPECTED).abs() <= RHO_TOL && elapsed < RHO_RUNTIME,
        format!("rho = {rho:.6} (target {RHO_EXPECTED} ± {RHO_TOL}), {elapsed:?}"),
    )
}

fn inscribed(_: &DesignArtifacts) -> Outcome {
    let r = inscribed_radius(&benchmark::published_w_x(), &benchmark::state_constraints()).unwrap();
    outcome((r - R_X_EXPECTED).abs() <= R_X_TOL, format!("r_x = {r:.6} (target {R_X_EXPECTED} ± {R_X_TOL})"))
}

fn published_validity(d: &DesignArtifacts) -> Outcome {
    let w = benchmark::published_w_x();
    let lambda = benchmark::PUBLISHED_LAMBDA;
    let contraction = offline::contraction_margin(&w, &d.lqr.a_k, lambda);
    let noise = offline::noise_margin(&w, d.system.gamma_w(), lambda);
    let slack = d.rho - offline::rho_lower_bound(2, lambda);
    let (lo, hi) = offline::lambda_interval(d.system.gamma_w(), &d.lqr.a_k, &w).unwrap();
    outcome(
        contraction >= EIGEN_MARGIN && noise >= EIGEN_MARGIN && slack > 0.0,
        format!(
            "lambda {lambda}: contraction {contraction:+.3e}, noise {noise:+.3e} (need ≥ {EIGEN_MARGIN:e}), rho slack {slack:.4}; \
             feasible lambda for this W_x is [{lo:.10}, {hi:.10}]"
        ),
    )
}

fn certificate(d: &DesignArtifacts) -> Outcome {
    let (a, b) = offline::certificate_margins(
        &d.lqr.p,
        &d.q,
        d.system.gamma_w(),
        &benchmark::published_w_x(),
        R_X_EXPECTED,
        PUBLISHED_MU,
        PUBLISHED_BETA,
    )
    .unwrap();
    let literal = a >= EIGEN_MARGIN && b >= EIGEN_MARGIN;
    let found = offline::certify_convergence(&d.lqr.p, &d.q, d.system.gamma_w(), &benchmark::published_w_x(), R_X_EXPECTED);
    let detail = format!(
        "published (mu, beta) margins ({a:+.3e}, {b:+.3e}) {}; grid pair {}",
        if literal { "hold" } else { "fail" },
        found.map_or("none".to_string(), |c| format!("mu = {:.6}, beta = {:.4}", c.mu, c.beta))
    );
    outcome(literal || found.is_some(), detail)
}

fn lqr_region(d: &DesignArtifacts) -> Outcome {
    let ms = MsController::new(d, MsOptions::default()).unwrap();
    let l = linalg::psd_factor(&d.w_x);
    let mut rng = RngStream::new(5, 0);
    let (mut cost, mut input, mut gamma) = (0.0f64, 0.0f64, 0.0f64);
    let start = Instant::now();
    for _ in 0..LQR_POINTS {
        let r = d.r_xu * rng.uniform().sqrt();
        let th = std::f64::consts::TAU * rng.uniform();
        let x = &l * v2(th.cos(), th.sin()) * r;
        let sol = ms.solve(&x).unwrap();
        let xpx = linalg::quad_form(&d.lqr.p, &x);
        cost = cost.max((sol.j_total - xpx).abs() / xpx.max(f64::MIN_POSITIVE));
        input = input.max((&sol.v[0] - &d.lqr.k * &x).amax());
        gamma = gamma.max((sol.gamma_x - 1.0).abs().max((sol.gamma_u - 1.0).abs()));
    }
    let elapsed = start.elapsed();
    outcome(
        cost <= LQR_COST_REL && input <= LQR_INPUT_TOL && gamma <= LQR_GAMMA_TOL && elapsed < LQR_RUNTIME,
        format!("max rel cost err {cost:.2e}, max |u − Kx| {input:.2e}, max |γ − 1| {gamma:.2e}, {elapsed:.2?}"),
    )
}

fn frontier(d: &DesignArtifacts) -> Outcome {
    let x0 = v2(-40.0, 40.0);
    let mut passed = true;
    let mut parts = Vec::new();
    let mut slowest = Duration::ZERO;
    for s in [Strategy::A, Strategy::C] {
        let ms = MsController::new(d, MsOptions::with_strategy(s)).unwrap();
        let start = Instant::now();
        let sol = ms.solve(&x0).unwrap();
        slowest = slowest.max(start.elapsed());
        let g = sol.gamma_x.max(sol.gamma_u);
        let ok = sol.status == SolverStatus::Optimal && g > RELAXED_GAMMA;
        passed &= ok;
        parts.push(format!("MS-{s} {} max γ − 1 = {:.3e} [{}]", sol.status, g - 1.0, if ok { "ok" } else { "no relaxation" }));
    }
    let mut is_verdict = |label: &str, options: IsOptions, gate: bool| {
        let is = IsController::new(d, options).unwrap();
        let start = Instant::now();
        let err = is.step(&x0, &mut Default::default()).err();
        slowest = slowest.max(start.elapsed());
        let ok = matches!(err, Some(Error::InitiallyInfeasible { .. }));
        if gate {
            passed &= ok;
        }
        parts.push(format!("{label} {}", if ok { "initially infeasible" } else { "feasible" }));
    };
    is_verdict("IS", IsOptions::default(), true);
    is_verdict("(IS with bounded v0:", IsOptions { first_input_bound: true, ..IsOptions::default() }, false);
    parts.last_mut().unwrap().push(')');
    passed &= slowest < SOLVE_RUNTIME;
    outcome(passed, format!("{}; slowest solve {slowest:.2?}", parts.join(", ")))
}

fn conic_oracle(_: &DesignArtifacts) -> Outcome {
    let mut rng = common::Uniform::new(20_240_917);
    let mut checker = common::Uniform::new(7);
    let (mut worst_obj, mut worst_kkt, mut not_optimal) = (0.0f64, 0.0f64, 0);
    for case in 0..ORACLE_CASES {
        let nu = 1 + case % 6;
        let p = common::random_instance(&mut rng, nu);
        let sol = socp::solve(&p).unwrap();
        if sol.status != SolverStatus::Optimal {
            not_optimal += 1;
            continue;
        }
        worst_kkt = worst_kkt.max(sol.kkt.max());
        let mut gap = common::ray_search_improvement(&p, &sol.y, &mut checker);
        if nu <= 2 {
            let grid = common::grid_minimum(&p, -4.0, 4.0, if nu == 1 { 80_000 } else { 800 });
            gap = gap.max(sol.objective - grid);
        }
        worst_obj = worst_obj.max(gap);
    }
    outcome(
        not_optimal == 0 && worst_obj <= ORACLE_OBJECTIVE_TOL && worst_kkt <= KKT_TOL,
        format!("{ORACLE_CASES} instances, {not_optimal} non-optimal, worst oracle improvement {worst_obj:.2e}, worst KKT {worst_kkt:.2e}"),
    )
}

fn candidate_relaxation(d: &DesignArtifacts) -> Outcome {
    let x = v2(-40.0, 40.0);
    let sampler = NoiseSampler::new(d.system.gamma_w());
    let mut passed = true;
    let mut parts = Vec::new();
    for s in [Strategy::A, Strategy::B, Strategy::C] {
        let sol = MsController::new(d, MsOptions::with_strategy(s)).unwrap().solve(&x).unwrap();
        let mut rng = RngStream::new(8, s as u64);
        let (mut gx, mut gu) = (Vec::with_capacity(DRAWS), Vec::with_capacity(DRAWS));
        for _ in 0..DRAWS {
            let (z, v) = candidate_shift(&sol, &sampler.sample(&mut rng), d);
            let (a, b) = candidate_gammas(&z, &v, d);
            gx.push(a);
            gu.push(b);
        }
        let ((mx, sx), (mu, su)) = (mean_se(&gx), mean_se(&gu));
        let ok = mx <= sol.gamma_x + SIGMAS * sx && mu <= sol.gamma_u + SIGMAS * su;
        passed &= ok;
        parts.push(format!("{s}: E γx⁺ {mx:.4} vs γx★ {:.4}, E γu⁺ {mu:.4} vs γu★ {:.4}", sol.gamma_x, sol.gamma_u));
    }
    outcome(passed, parts.join("; "))
}

/// Strategy B is reported but not gated: the shifted candidate behind the
/// descent argument has first input `v★₁ + K w`, which the hard bound on `v₀`
/// does not admit in general.
fn descent(d: &DesignArtifacts) -> Outcome {
    let x = v2(-40.0, 40.0);
    let sampler = NoiseSampler::new(d.system.gamma_w());
    let tr = (&d.lqr.p * d.system.gamma_w()).trace();
    let mut passed = true;
    let mut parts = Vec::new();
    for s in [Strategy::A, Strategy::C, Strategy::B] {
        let ms = MsController::new(d, MsOptions::with_strategy(s)).unwrap();
        let (u, sol) = ms.control(&x).unwrap();
        let stage = linalg::quad_form(&d.q, &x) + linalg::quad_form(&d.r, &u);
        let mut rng = RngStream::new(9, s as u64);
        let mut diffs = Vec::with_capacity(DRAWS);
        let (mut failed, mut outside) = (0, 0);
        for _ in 0..DRAWS {
            let w = sampler.sample(&mut rng);
            let (_, v) = candidate_shift(&sol, &w, d);
            outside += usize::from(!d.input_constraints.contains(&v[0]));
            let next = d.system.simulate_step(&x, &u, &w).unwrap();
            match ms.control(&next) {
                Ok((_, s1)) => diffs.push(s1.j_total - sol.j_total),
                Err(_) => failed += 1,
            }
        }
        let (m, se) = mean_se(&diffs);
        let bound = tr - stage;
        let ok = failed == 0 && m <= bound + SIGMAS * se;
        let mut line = format!("{s}: E ΔJ {m:.2} ± {se:.2} vs tr(PΓ) − ℓ = {bound:.2}");
        if failed > 0 {
            line.push_str(&format!(", {failed} failed solves"));
        }
        if s == Strategy::B {
            line = format!(
                "({line} [{}], not gated: candidate v₀ outside U in {:.1}% of draws)",
                if ok { "holds" } else { "violated" },
                100.0 * outside as f64 / DRAWS as f64
            );
        } else {
            passed &= ok;
        }
        parts.push(line);
    }
    outcome(passed, parts.join("; "))
}

fn steady_state(d: &DesignArtifacts) -> Outcome {
    // the fast path returns the LQR plan inside E_{W_x}(r_xu), where it is the
    // optimum (see the LQR region check)
    let opts = MsOptions { lqr_fast_path: true, ..MsOptions::default() };
    let c = Controller::new(d, ControllerSpec::Ms(opts)).unwrap();
    let s = sim::monte_carlo(&c, &v2(0.0, 0.0), *STEADY_STEPS.end(), STEADY_EPISODES, 10).unwrap();
    let floor = 1.0 - d.eps - SIGMAS * (d.eps * (1.0 - d.eps) / STEADY_EPISODES as f64).sqrt();
    let freqs: Vec<f64> = STEADY_STEPS.map(|k| s.state_frequency(k)).collect();
    let min = freqs.iter().copied().fold(f64::INFINITY, f64::min);
    let pooled = freqs.iter().sum::<f64>() / freqs.len() as f64;
    outcome(
        s.failures.is_empty() && min >= floor,
        format!("min over k ∈ [20, 50] {min:.4}, pooled {pooled:.4}, floor {floor:.4}, {} failures", s.failures.len()),
    )
}

fn relaxation_decay(d: &DesignArtifacts) -> Outcome {
    let mut passed = true;
    let mut parts = Vec::new();
    for s in [Strategy::A, Strategy::C] {
        let c = Controller::new(d, ControllerSpec::ms(s)).unwrap();
        let sum = sim::monte_carlo(&c, &v2(-40.0, 40.0), DECAY_STEP + 1, DECAY_EPISODES, 11).unwrap();
        let (gx, gu) = (sum.mean_gamma_x[DECAY_STEP], sum.mean_gamma_u[DECAY_STEP]);
        let ok = sum.failures.is_empty() && gx <= DECAY_GAMMA && gu <= DECAY_GAMMA;
        passed &= ok;
        parts.push(format!(
            "{s}: mean γ at k=0 ({:.4}, {:.4}), at k={DECAY_STEP} ({gx:.6}, {gu:.6}), {} failures",
            sum.mean_gamma_x[0],
            sum.mean_gamma_u[0],
            sum.failures.len()
        ));
    }
    outcome(passed, parts.join("; "))
}

fn cost_comparison(d: &DesignArtifacts) -> Outcome {
    let mut passed = true;
    let mut parts = Vec::new();
    for (x0, near_one) in [(v2(-30.0, 0.0), true), (v2(-40.0, 37.0), false)] {
        let start = Instant::now();
        let c = cli::compare(d, Strategy::A, &x0, d.horizon, COMPARE_EPISODES, 12, None);
        let elapsed = start.elapsed();
        match c {
            Ok(c) => {
                let ratio = c.mean_ratio();
                let ok = if near_one { ratio >= RATIO_BAND.0 && ratio <= RATIO_BAND.1 } else { ratio < 1.0 };
                let ok = ok && elapsed < CAMPAIGN_RUNTIME && c.pairs().len() == COMPARE_EPISODES;
                passed &= ok;
                let shifted = c.is.traces.iter().flat_map(|t| &t.steps).filter(|s| s.mode == Mode::Shifted).count();
                parts.push(format!(
                    "x0 {:?}: J ms {:.2}, is {:.2}, ratio {ratio:.6} (need {}), IS shifted steps {shifted}, {elapsed:.1?}",
                    x0.as_slice(),
                    c.ms.j_mean,
                    c.is.j_mean,
                    if near_one { "∈ [0.95, 1.05]" } else { "< 1" }
                ));
            }
            Err(e) => {
                passed = false;
                parts.push(format!("x0 {:?}: {e}", x0.as_slice()));
            }
        }
    }
    outcome(passed, parts.join("; "))
}

fn determinism(d: &DesignArtifacts) -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let design = dir.path().join("design.json");
    cli::save_design(d, &design).unwrap();
    let run = |name: &str, threads: &str| {
        let out = dir.path().join(name);
        let code = cli::main_with_args([
            "mssmpc",
            "simulate",
            "--design",
            design.to_str().unwrap(),
            "--strategy",
            "C",
            "--x0",
            "-40,40",
            "--episodes",
            "24",
            "--seed",
            "13",
            "--threads",
            threads,
            "--out",
            out.to_str().unwrap(),
        ]);
        (code, out)
    };
    let runs = [run("a", "1"), run("b", "4"), run("c", "1")];
    let files = ["trajectories.csv", "summary.csv", "frequencies.csv", "bounds.csv", "histogram.csv", "report.svg"];
    let mut identical = runs.iter().all(|r| r.0 == 0);
    for f in files {
        let first = std::fs::read(runs[0].1.join(f)).unwrap_or_default();
        identical &= !first.is_empty() && runs.iter().all(|r| std::fs::read(r.1.join(f)).ok().as_ref() == Some(&first));
    }
    outcome(identical, format!("3 runs (1, 4, 1 workers) × {} files byte-identical: {identical}", files.len()))
}

type Criterion = fn(&DesignArtifacts) -> Outcome;

fn main() {
    let (design, report) = benchmark::design().expect("benchmark design");
    assert!(report.passed(), "benchmark design must validate:\n{report}");
    rayon::ThreadPoolBuilder::new().build_global().ok();
    let criteria: [(&str, Criterion); 13] = [
        ("radius calibration", radius_calibration),
        ("inscribed radius", inscribed),
        ("published design validity", published_validity),
        ("convergence certificate", certificate),
        ("LQR region shortcut", lqr_region),
        ("feasibility frontier", frontier),
        ("conic solver oracle", conic_oracle),
        ("candidate relaxation", candidate_relaxation),
        ("expected cost descent", descent),
        ("steady-state chance constraint", steady_state),
        ("relaxation vanishes", relaxation_decay),
        ("cost comparison", cost_comparison),
        ("determinism", determinism),
    ];
    let mut failed = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = check(&design);
        println!(
            "[{}] {:>2}. {name}: {} ({:.1?})",
            if o.passed { "PASS" } else { "FAIL" },
            i + 1,
            o.detail,
            start.elapsed()
        );
        if !o.passed {
            failed.push(i + 1);
        }
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed.len(), criteria.len());
    if !failed.is_empty() {
        println!("failed: {failed:?}");
        std::process::exit(1);
    }
}
