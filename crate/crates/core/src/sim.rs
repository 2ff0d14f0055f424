//! Seeded closed-loop simulation: noise streams, episodes, Monte-Carlo
//! campaigns and their statistics.
//!
//! Every episode owns a [`RngStream`] keyed by `(seed, episode)`, so a
//! campaign gives the same numbers for any worker count.

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use rayon::prelude::*;

use crate::baseline::{DualModeState, IsController, IsOptions, Mode};
use crate::controller::{aposteriori_bounds, MsController, MsOptions, OcpSolution, Strategy};
use crate::error::{Error, Result};
use crate::linalg;
use crate::offline::DesignArtifacts;
use crate::socp::SolverStatus;

pub use crate::special::chi2_cdf;

/// Default number of histogram bins.
pub const HISTOGRAM_BINS: usize = 30;

/// Gaussian noise stream: ChaCha8 keyed by `seed`, with `stream_id` selecting
/// an independent stream, and Box–Muller for the normals.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self { seed, stream_id, rng, spare: None }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Uniform on `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // 1 − U lies in (0, 1], so the log is finite
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        self.spare = Some(r * s);
        r * c
    }

    pub fn standard_normal_vector(&mut self, n: usize) -> DVector<f64> {
        DVector::from_fn(n, |_, _| self.standard_normal())
    }
}

/// Draws `w = L ξ` with `L Lᵀ = Γ_w` and `ξ` standard normal.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSampler {
    factor: DMatrix<f64>,
}

impl NoiseSampler {
    /// Cholesky factor when `Γ_w ≻ 0`, a symmetric square root otherwise.
    pub fn new(gamma_w: &DMatrix<f64>) -> Self {
        Self { factor: linalg::psd_factor(gamma_w) }
    }

    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    pub fn sample(&self, rng: &mut RngStream) -> DVector<f64> {
        &self.factor * rng.standard_normal_vector(self.factor.ncols())
    }
}

/// Which controller closes the loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ControllerSpec {
    Ms(MsOptions),
    Is(IsOptions),
}

impl ControllerSpec {
    pub fn ms(strategy: Strategy) -> Self {
        ControllerSpec::Ms(MsOptions::with_strategy(strategy))
    }

    pub fn is() -> Self {
        ControllerSpec::Is(IsOptions::default())
    }

    pub fn label(&self) -> String {
        match self {
            ControllerSpec::Ms(o) => format!("ms-{}", o.strategy),
            ControllerSpec::Is(o) if o.first_input_bound => "is-bounded".to_string(),
            ControllerSpec::Is(_) => "is".to_string(),
        }
    }
}

/// A built controller, shared read-only by all episodes.
#[derive(Debug, Clone)]
pub enum Controller {
    Ms(MsController),
    Is(IsController),
}

impl Controller {
    pub fn new(design: &DesignArtifacts, spec: ControllerSpec) -> Result<Self> {
        Ok(match spec {
            ControllerSpec::Ms(o) => Controller::Ms(MsController::new(design, o)?),
            ControllerSpec::Is(o) => Controller::Is(IsController::new(design, o)?),
        })
    }

    pub fn design(&self) -> &DesignArtifacts {
        match self {
            Controller::Ms(c) => c.design(),
            Controller::Is(c) => c.design(),
        }
    }

    /// Input at `x`; `state` is only used by the dual-mode controller.
    pub fn step(&self, x: &DVector<f64>, state: &mut DualModeState) -> Result<(DVector<f64>, OcpSolution, Mode)> {
        match self {
            Controller::Ms(c) => {
                let (u, sol) = c.control(x)?;
                Ok((u, sol, Mode::Measured))
            }
            Controller::Is(c) => {
                let s = c.step(x, state)?;
                Ok((s.u, s.solution, s.mode))
            }
        }
    }
}

/// What happened at one closed-loop step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub x: DVector<f64>,
    pub u: DVector<f64>,
    pub gamma_x: f64,
    pub gamma_u: f64,
    /// `‖x‖²_Q + ‖u‖²_R`.
    pub stage_cost: f64,
    pub mode: Mode,
    pub status: SolverStatus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub episode: u64,
    /// `horizon + 1` states.
    pub states: Vec<DVector<f64>>,
    /// `horizon` steps.
    pub steps: Vec<StepRecord>,
    /// The plan computed at `k = 0`.
    pub first_solution: OcpSolution,
}

impl EpisodeTrace {
    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    /// `Σ_k ‖x_k‖²_Q + ‖u_k‖²_R` over the episode.
    pub fn j_mpc(&self) -> f64 {
        self.steps.iter().map(|s| s.stage_cost).sum()
    }
}

/// Runs `horizon` closed-loop steps from `x0`.
pub fn run_episode(controller: &Controller, x0: &DVector<f64>, horizon: usize, rng: &mut RngStream) -> Result<EpisodeTrace> {
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    let d = controller.design();
    if x0.len() != d.state_dim() {
        return Err(Error::Dimension(format!("x0 has length {}, expected {}", x0.len(), d.state_dim())));
    }
    let sampler = NoiseSampler::new(d.system.gamma_w());
    let mut mode_state = DualModeState::new();
    let mut states = vec![x0.clone()];
    let mut steps = Vec::with_capacity(horizon);
    let mut first_solution = None;
    for k in 0..horizon {
        let x = &states[k];
        let at = |e: Error| Error::AtStep { step: k, source: Box::new(e) };
        let (u, sol, mode) = controller.step(x, &mut mode_state).map_err(at)?;
        let w = sampler.sample(rng);
        let next = d.system.simulate_step(x, &u, &w).map_err(at)?;
        let stage_cost = linalg::quad_form(&d.q, x) + linalg::quad_form(&d.r, &u);
        steps.push(StepRecord {
            x: x.clone(),
            u,
            gamma_x: sol.gamma_x,
            gamma_u: sol.gamma_u,
            stage_cost,
            mode,
            status: sol.status,
        });
        if first_solution.is_none() {
            first_solution = Some(sol);
        }
        states.push(next);
    }
    Ok(EpisodeTrace {
        episode: rng.stream_id(),
        states,
        steps,
        first_solution: first_solution.expect("horizon ≥ 1"),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McOptions {
    /// Worker threads; `None` uses the global rayon pool.
    pub threads: Option<usize>,
    pub histogram_bins: usize,
}

impl Default for McOptions {
    fn default() -> Self {
        Self { threads: None, histogram_bins: HISTOGRAM_BINS }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeFailure {
    pub episode: u64,
    pub error: Error,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    /// `counts.len() + 1` increasing edges.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// Equal-width bins over `[min, max]`; a degenerate range gets unit width.
    pub fn new(values: &[f64], bins: usize) -> Self {
        let bins = bins.max(1);
        if values.is_empty() {
            return Self { edges: (0..=bins).map(|i| i as f64).collect(), counts: vec![0; bins] };
        }
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (lo, width) = if hi > lo { (lo, (hi - lo) / bins as f64) } else { (lo - 0.5, 1.0 / bins as f64) };
        let edges = (0..=bins).map(|i| lo + width * i as f64).collect();
        let mut counts = vec![0; bins];
        for v in values {
            let i = (((v - lo) / width).floor() as usize).min(bins - 1);
            counts[i] += 1;
        }
        Self { edges, counts }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// Statistics of a campaign over the successful episodes.
#[derive(Debug, Clone, PartialEq)]
pub struct McSummary {
    pub controller: String,
    pub x0: DVector<f64>,
    pub horizon: usize,
    pub seed: u64,
    pub episodes: usize,
    /// Successful episodes in episode order.
    pub traces: Vec<EpisodeTrace>,
    pub failures: Vec<EpisodeFailure>,
    pub j_mean: f64,
    /// Sample standard deviation (zero for a single episode).
    pub j_std: f64,
    /// Episodes with `x_k ∉ E_{W_x}(r_x)`, for `k = 0..=horizon`.
    pub state_violations: Vec<usize>,
    /// Episodes with `u_k ∉ E_{W_u}(r_u)`, for `k = 0..horizon`.
    pub input_violations: Vec<usize>,
    /// Same counts against the polytopes `X` and `U`.
    pub state_polytope_violations: Vec<usize>,
    pub input_polytope_violations: Vec<usize>,
    /// Mean `γ_x★`, `γ_u★` per step.
    pub mean_gamma_x: Vec<f64>,
    pub mean_gamma_u: Vec<f64>,
    pub histogram: Histogram,
}

impl McSummary {
    /// Number of successful episodes.
    pub fn n_sim(&self) -> usize {
        self.traces.len()
    }

    fn frequency(&self, violations: usize) -> f64 {
        match self.n_sim() {
            0 => 0.0,
            n => (n - violations) as f64 / n as f64,
        }
    }

    /// Fraction of episodes with `x_k ∈ E_{W_x}(r_x)`.
    pub fn state_frequency(&self, k: usize) -> f64 {
        self.frequency(self.state_violations[k])
    }

    /// Fraction of episodes with `u_k ∈ E_{W_u}(r_u)`.
    pub fn input_frequency(&self, k: usize) -> f64 {
        self.frequency(self.input_violations[k])
    }

    /// Per-episode costs indexed by episode; failed episodes are `None`.
    pub fn costs_by_episode(&self) -> Vec<Option<f64>> {
        let mut out = vec![None; self.episodes];
        for t in &self.traces {
            out[t.episode as usize] = Some(t.j_mpc());
        }
        out
    }

    /// The `k = 0` plan of the first successful episode.
    pub fn first_solution(&self) -> Option<&OcpSolution> {
        self.traces.first().map(|t| &t.first_solution)
    }
}

fn inside(shape: &DMatrix<f64>, radius: f64, x: &DVector<f64>) -> bool {
    let l = linalg::cholesky_lower(shape, "shape").expect("validated shape");
    let s = l.solve_lower_triangular(x).expect("nonsingular factor").norm();
    s <= radius
}

/// Runs `episodes` episodes with `stream_id = 0..episodes` and reduces them in
/// episode order.
pub fn monte_carlo(
    controller: &Controller,
    x0: &DVector<f64>,
    horizon: usize,
    episodes: usize,
    seed: u64,
) -> Result<McSummary> {
    monte_carlo_with(controller, x0, horizon, episodes, seed, &McOptions::default())
}

pub fn monte_carlo_with(
    controller: &Controller,
    x0: &DVector<f64>,
    horizon: usize,
    episodes: usize,
    seed: u64,
    options: &McOptions,
) -> Result<McSummary> {
    if episodes == 0 {
        return Err(Error::InvalidArgument("episodes must be at least 1".into()));
    }
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    let run = |e: usize| {
        let mut rng = RngStream::new(seed, e as u64);
        run_episode(controller, x0, horizon, &mut rng)
    };
    let outcomes: Vec<Result<EpisodeTrace>> = match options.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?
            .install(|| (0..episodes).into_par_iter().map(run).collect()),
        None => (0..episodes).into_par_iter().map(run).collect(),
    };
    Ok(summarize(controller, x0, horizon, seed, outcomes, options.histogram_bins))
}

fn summarize(
    controller: &Controller,
    x0: &DVector<f64>,
    horizon: usize,
    seed: u64,
    outcomes: Vec<Result<EpisodeTrace>>,
    bins: usize,
) -> McSummary {
    let d = controller.design();
    let episodes = outcomes.len();
    let mut traces = Vec::new();
    let mut failures = Vec::new();
    for (e, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(t) => traces.push(t),
            Err(error) => failures.push(EpisodeFailure { episode: e as u64, error }),
        }
    }
    let mut state_violations = vec![0; horizon + 1];
    let mut state_polytope_violations = vec![0; horizon + 1];
    let mut input_violations = vec![0; horizon];
    let mut input_polytope_violations = vec![0; horizon];
    let mut mean_gamma_x = vec![0.0; horizon];
    let mut mean_gamma_u = vec![0.0; horizon];
    let mut costs = Vec::with_capacity(traces.len());
    for t in &traces {
        for (k, x) in t.states.iter().enumerate() {
            state_violations[k] += usize::from(!inside(&d.w_x, d.r_x, x));
            state_polytope_violations[k] += usize::from(!d.state_constraints.contains(x));
        }
        for (k, s) in t.steps.iter().enumerate() {
            input_violations[k] += usize::from(!inside(&d.w_u, d.r_u, &s.u));
            input_polytope_violations[k] += usize::from(!d.input_constraints.contains(&s.u));
            mean_gamma_x[k] += s.gamma_x;
            mean_gamma_u[k] += s.gamma_u;
        }
        costs.push(t.j_mpc());
    }
    let n = traces.len();
    if n > 0 {
        for g in mean_gamma_x.iter_mut().chain(mean_gamma_u.iter_mut()) {
            *g /= n as f64;
        }
    }
    let (j_mean, j_std) = mean_std(&costs);
    McSummary {
        controller: match controller {
            Controller::Ms(c) => ControllerSpec::Ms(*c.options()).label(),
            Controller::Is(c) => ControllerSpec::Is(*c.options()).label(),
        },
        x0: x0.clone(),
        horizon,
        seed,
        episodes,
        traces,
        failures,
        j_mean,
        j_std,
        state_violations,
        input_violations,
        state_polytope_violations,
        input_polytope_violations,
        mean_gamma_x,
        mean_gamma_u,
        histogram: Histogram::new(&costs, bins),
    }
}

/// Mean and sample standard deviation; NaN mean for no values.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// One row of the bound table: predicted probabilities and observed
/// frequencies at prediction step `ℓ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundRow {
    pub ell: usize,
    pub p_x: f64,
    pub p_u: f64,
    pub f_x: f64,
    pub f_u: f64,
}

/// Rows `ℓ = 1..N`. `p` comes from the `k = 0` plan; `f` counts the traces
/// with `x_ℓ ∈ E_{W_x}(r_x)` and `u_ℓ ∈ E_{W_u}(r_u)`. At `ℓ = N` both
/// components count `x_N ∈ E_{W_x}(r_xu)`, the set the `p` column refers to.
/// Steps beyond a trace's length count as satisfied.
pub fn bound_table(traces: &[EpisodeTrace], sol0: &OcpSolution, design: &DesignArtifacts) -> Vec<BoundRow> {
    let d = design;
    let horizon = sol0.v.len();
    let n = traces.len();
    let freq = |bad: usize| if n == 0 { 0.0 } else { (n - bad) as f64 / n as f64 };
    aposteriori_bounds(sol0, d)
        .into_iter()
        .map(|b| {
            let ell = b.ell;
            let (mut bad_x, mut bad_u) = (0, 0);
            for t in traces {
                if ell < horizon {
                    if let Some(x) = t.states.get(ell) {
                        bad_x += usize::from(!inside(&d.w_x, d.r_x, x));
                    }
                    if let Some(s) = t.steps.get(ell) {
                        bad_u += usize::from(!inside(&d.w_u, d.r_u, &s.u));
                    }
                } else if let Some(x) = t.states.get(ell) {
                    let bad = usize::from(!inside(&d.w_x, d.r_xu, x));
                    bad_x += bad;
                    bad_u += bad;
                }
            }
            BoundRow { ell, p_x: b.p_x, p_u: b.p_u, f_x: freq(bad_x), f_u: freq(bad_u) }
        })
        .collect()
}
