//! A small dense log-barrier interior-point solver for
//!
//! ```text
//! minimize    ½ yᵀ Q̂ y + ĉᵀ y
//! subject to  ‖A_i y + b_i‖ ≤ c_iᵀ y + d_i      (second-order cones)
//!             G y ≤ g                           (linear inequalities)
//! ```
//!
//! The barrier is `−Σ log((c_iᵀy+d_i)² − ‖A_iy+b_i‖²) − Σ log(g − Gy)`, whose
//! parameter is `2` per cone and `1` per linear row. Each center is computed
//! with damped Newton (Armijo backtracking); the path parameter grows
//! geometrically until the duality gap `θ/t` is below tolerance. A Phase-I
//! problem that minimizes a common slack `s` finds a strictly feasible start
//! or certifies infeasibility.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// `‖A y + b‖ ≤ cᵀ y + d`.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondOrderCone {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: DVector<f64>,
    pub d: f64,
}

impl SecondOrderCone {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>, c: DVector<f64>, d: f64) -> Result<Self> {
        if a.nrows() == 0 {
            return Err(Error::Dimension("cone needs at least one row".into()));
        }
        if a.nrows() != b.len() || a.ncols() != c.len() {
            return Err(Error::Dimension(format!(
                "cone data inconsistent: A {}x{}, b {}, c {}",
                a.nrows(),
                a.ncols(),
                b.len(),
                c.len()
            )));
        }
        Ok(Self { a, b, c, d })
    }

    /// `(cᵀy + d, A y + b)`.
    fn evaluate(&self, y: &DVector<f64>) -> (f64, DVector<f64>) {
        (self.c.dot(y) + self.d, &self.a * y + &self.b)
    }

    /// `max(0, ‖Ay + b‖ − cᵀy − d)`.
    pub fn violation(&self, y: &DVector<f64>) -> f64 {
        let (u0, u) = self.evaluate(y);
        (u.norm() - u0).max(0.0)
    }

    fn data_scale(&self) -> f64 {
        self.a.amax().max(self.b.amax()).max(self.c.amax()).max(self.d.abs())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConicProblem {
    pub qhat: DMatrix<f64>,
    pub chat: DVector<f64>,
    pub cones: Vec<SecondOrderCone>,
    /// Rows of `G` in `G y ≤ g`.
    pub g_mat: DMatrix<f64>,
    pub g_vec: DVector<f64>,
}

impl ConicProblem {
    /// Unconstrained problem with the given cost.
    pub fn new(qhat: DMatrix<f64>, chat: DVector<f64>) -> Result<Self> {
        let nu = chat.len();
        if qhat.nrows() != nu || qhat.ncols() != nu {
            return Err(Error::Dimension(format!(
                "Qhat is {}x{}, expected {nu}x{nu}",
                qhat.nrows(),
                qhat.ncols()
            )));
        }
        Ok(Self {
            qhat,
            chat,
            cones: Vec::new(),
            g_mat: DMatrix::zeros(0, nu),
            g_vec: DVector::zeros(0),
        })
    }

    pub fn dim(&self) -> usize {
        self.chat.len()
    }

    pub fn add_cone(&mut self, cone: SecondOrderCone) -> Result<()> {
        if cone.a.ncols() != self.dim() {
            return Err(Error::Dimension(format!(
                "cone has {} columns, problem has {} variables",
                cone.a.ncols(),
                self.dim()
            )));
        }
        self.cones.push(cone);
        Ok(())
    }

    /// Appends `rowᵀ y ≤ rhs`.
    pub fn add_linear(&mut self, row: &DVector<f64>, rhs: f64) -> Result<()> {
        if row.len() != self.dim() {
            return Err(Error::Dimension("linear row has wrong length".into()));
        }
        let k = self.g_mat.nrows();
        let mut g = DMatrix::zeros(k + 1, self.dim());
        g.rows_mut(0, k).copy_from(&self.g_mat);
        g.row_mut(k).copy_from(&row.transpose());
        self.g_mat = g;
        self.g_vec = self.g_vec.clone().push(rhs);
        Ok(())
    }

    pub fn num_linear(&self) -> usize {
        self.g_mat.nrows()
    }

    pub fn objective(&self, y: &DVector<f64>) -> f64 {
        0.5 * y.dot(&(&self.qhat * y)) + self.chat.dot(y)
    }

    /// Barrier parameter `θ`.
    pub fn barrier_parameter(&self) -> f64 {
        2.0 * self.cones.len() as f64 + self.num_linear() as f64
    }

    fn validate(&self) -> Result<()> {
        let nu = self.dim();
        if self.qhat.nrows() != nu || self.qhat.ncols() != nu {
            return Err(Error::Dimension("Qhat dimension".into()));
        }
        if self.g_mat.ncols() != nu || self.g_mat.nrows() != self.g_vec.len() {
            return Err(Error::Dimension("linear constraint dimension".into()));
        }
        for c in &self.cones {
            if c.a.ncols() != nu || c.c.len() != nu || c.a.nrows() != c.b.len() || c.a.nrows() == 0 {
                return Err(Error::Dimension("cone dimension".into()));
            }
        }
        let asym = (&self.qhat - self.qhat.transpose()).amax();
        if asym > 1e-9 * self.qhat.amax().max(1.0) {
            return Err(Error::InvalidArgument("Qhat is not symmetric".into()));
        }
        Ok(())
    }

    fn objective_scale(&self) -> f64 {
        self.qhat.amax().max(self.chat.amax()).max(1.0)
    }

    /// True when every constraint holds with positive slack.
    pub fn is_strictly_feasible(&self, y: &DVector<f64>) -> bool {
        self.cones.iter().all(|c| {
            let (u0, u) = c.evaluate(y);
            u0 > u.norm()
        }) && (&self.g_mat * y)
            .iter()
            .zip(self.g_vec.iter())
            .all(|(l, r)| l < r)
    }

    /// Largest absolute constraint violation at `y`.
    pub fn max_violation(&self, y: &DVector<f64>) -> f64 {
        let cone = self.cones.iter().map(|c| c.violation(y)).fold(0.0, f64::max);
        let lin = (&self.g_mat * y - &self.g_vec).iter().fold(0.0f64, |m, v| m.max(*v));
        cone.max(lin)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    pub initial_t: f64,
    pub barrier_growth: f64,
    /// Stop when `θ / t` falls below this.
    pub gap_tolerance: f64,
    /// Stop centering when `λ²/2` falls below this.
    pub newton_tolerance: f64,
    pub armijo_slope: f64,
    pub backtrack: f64,
    pub max_newton_per_center: usize,
    pub max_outer: usize,
    /// Phase-I slack above which the problem is declared infeasible.
    pub infeasibility_threshold: f64,
    /// Scaled KKT tolerance that an optimal exit must meet.
    pub kkt_tolerance: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            initial_t: 1.0,
            barrier_growth: 10.0,
            gap_tolerance: 1e-8,
            newton_tolerance: 1e-9,
            armijo_slope: 0.25,
            backtrack: 0.5,
            max_newton_per_center: 200,
            max_outer: 40,
            infeasibility_threshold: 1e-9,
            kkt_tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverStatus {
    Optimal,
    Infeasible,
    IterationLimit,
    /// The line search could not make progress before the gap closed.
    NumericalFailure,
}

impl std::fmt::Display for SolverStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SolverStatus::Optimal => "optimal",
            SolverStatus::Infeasible => "infeasible",
            SolverStatus::IterationLimit => "iteration_limit",
            SolverStatus::NumericalFailure => "numerical_failure",
        };
        f.write_str(s)
    }
}

/// Scaled KKT residuals: stationarity and complementarity are divided by
/// `max(1, ‖Q̂‖_max, ‖ĉ‖_∞)`, constraint violations by the data scale of
/// their own row or cone.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal_feasibility: f64,
    pub complementarity: f64,
    pub dual_feasibility: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal_feasibility)
            .max(self.complementarity)
            .max(self.dual_feasibility)
    }
}

/// Multipliers: `(z₀, z₁)` in the second-order cone for each cone and
/// `λ ≥ 0` for the linear rows.
#[derive(Debug, Clone, PartialEq)]
pub struct DualVariables {
    pub cones: Vec<(f64, DVector<f64>)>,
    pub linear: DVector<f64>,
}

impl DualVariables {
    pub fn zeros(p: &ConicProblem) -> Self {
        Self {
            cones: p.cones.iter().map(|c| (0.0, DVector::zeros(c.a.nrows()))).collect(),
            linear: DVector::zeros(p.num_linear()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConicSolution {
    pub y: DVector<f64>,
    pub objective: f64,
    pub status: SolverStatus,
    pub kkt: KktResiduals,
    pub duals: DualVariables,
    /// Objective at the end of every outer (centering) iteration.
    pub path_objectives: Vec<f64>,
    pub newton_steps: usize,
    pub outer_iterations: usize,
    /// Final Phase-I slack, when Phase I ran.
    pub phase1_slack: Option<f64>,
}

impl ConicSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == SolverStatus::Optimal
    }
}

/// Solves with default settings from the origin.
pub fn solve(p: &ConicProblem) -> Result<ConicSolution> {
    solve_with(p, &SolverSettings::default(), None)
}

/// Solves from `start` if it is strictly feasible, otherwise runs Phase I
/// from `start` (or the origin).
pub fn solve_with(
    p: &ConicProblem,
    settings: &SolverSettings,
    start: Option<&DVector<f64>>,
) -> Result<ConicSolution> {
    p.validate()?;
    let nu = p.dim();
    let y0 = match start {
        Some(s) if s.len() != nu => {
            return Err(Error::Dimension(format!("start has length {}, expected {nu}", s.len())))
        }
        Some(s) => s.clone(),
        None => DVector::zeros(nu),
    };

    let mut newton_steps = 0;
    let mut phase1_slack = None;
    let y_feasible = if p.is_strictly_feasible(&y0) {
        y0
    } else {
        let out = phase_one(p, settings, &y0, &mut newton_steps);
        phase1_slack = Some(out.slack);
        match out.point {
            Some(y) => y,
            None => {
                let status = if out.exhausted {
                    SolverStatus::IterationLimit
                } else {
                    SolverStatus::Infeasible
                };
                let y = out.last;
                return Ok(ConicSolution {
                    objective: p.objective(&y),
                    kkt: kkt_check(p, &y, &DualVariables::zeros(p)),
                    y,
                    status,
                    duals: DualVariables::zeros(p),
                    path_objectives: Vec::new(),
                    newton_steps,
                    outer_iterations: 0,
                    phase1_slack,
                });
            }
        }
    };

    let mut path = barrier_path(p, settings, y_feasible, &mut newton_steps, None);
    if path.outcome == PathOutcome::Converged {
        // The decrement test bounds the gradient in the H⁻¹ norm only; near the
        // boundary that leaves a visible stationarity error in the duals.
        let polish = SolverSettings { newton_tolerance: 1e-24, max_newton_per_center: 20, ..*settings };
        path.y = center(p, &polish, &path.y, path.t, &mut newton_steps, None).y;
    }
    let mut duals = barrier_duals(p, &path.y, path.t);
    let mut kkt = kkt_check(p, &path.y, &duals);
    if let Some(refit) = refit_multipliers(p, &path.y, &duals) {
        let k2 = kkt_check(p, &path.y, &refit);
        if k2.max() < kkt.max() {
            duals = refit;
            kkt = k2;
        }
    }
    let status = match path.outcome {
        PathOutcome::Converged if kkt.max() <= settings.kkt_tolerance => SolverStatus::Optimal,
        PathOutcome::Converged | PathOutcome::Stalled => SolverStatus::NumericalFailure,
        PathOutcome::IterationLimit => SolverStatus::IterationLimit,
        PathOutcome::EarlyStop => unreachable!("no early stop in phase II"),
    };
    Ok(ConicSolution {
        objective: p.objective(&path.y),
        y: path.y,
        status,
        kkt,
        duals,
        path_objectives: path.objectives,
        newton_steps,
        outer_iterations: path.outer,
        phase1_slack,
    })
}

/// Residuals of a candidate primal/dual pair.
pub fn kkt_check(p: &ConicProblem, y: &DVector<f64>, duals: &DualVariables) -> KktResiduals {
    let obj_scale = p.objective_scale();
    let mut grad = &p.qhat * y + &p.chat;
    let mut feas: f64 = 0.0;
    let mut comp: f64 = 0.0;
    let mut dual_feas: f64 = 0.0;
    for (cone, (z0, z1)) in p.cones.iter().zip(duals.cones.iter()) {
        let (u0, u) = cone.evaluate(y);
        grad -= &cone.c * *z0 + cone.a.transpose() * z1;
        feas = feas.max((u.norm() - u0).max(0.0) / cone.data_scale().max(1.0));
        comp = comp.max((z0 * u0 + z1.dot(&u)).abs());
        dual_feas = dual_feas.max((z1.norm() - z0).max(0.0));
    }
    if p.num_linear() > 0 {
        grad += p.g_mat.transpose() * &duals.linear;
        let slack = &p.g_vec - &p.g_mat * y;
        for j in 0..p.num_linear() {
            let scale = p.g_mat.row(j).amax().max(p.g_vec[j].abs()).max(1.0);
            feas = feas.max((-slack[j]).max(0.0) / scale);
            comp = comp.max((duals.linear[j] * slack[j]).abs());
            dual_feas = dual_feas.max((-duals.linear[j]).max(0.0));
        }
    }
    KktResiduals {
        stationarity: grad.amax() / obj_scale,
        primal_feasibility: feas,
        complementarity: comp / obj_scale,
        dual_feasibility: dual_feas / obj_scale,
    }
}

fn barrier_duals(p: &ConicProblem, y: &DVector<f64>, t: f64) -> DualVariables {
    let cones = p
        .cones
        .iter()
        .map(|c| {
            let (u0, u) = c.evaluate(y);
            let nu = u.norm();
            let dval = (u0 - nu) * (u0 + nu);
            (2.0 * u0 / (t * dval), u * (-2.0 / (t * dval)))
        })
        .collect();
    let slack = &p.g_vec - &p.g_mat * y;
    let linear = slack.map(|s| 1.0 / (t * s));
    DualVariables { cones, linear }
}

/// Re-estimates the multiplier magnitudes of the near-active constraints by
/// least squares on the stationarity equation, keeping the barrier directions
/// `(u₀, −u)`. The barrier formula `2/(tD)` loses digits when the slack `D`
/// is computed by cancellation; the directions do not.
fn refit_multipliers(p: &ConicProblem, y: &DVector<f64>, duals: &DualVariables) -> Option<DualVariables> {
    // stationarity: Q̂y + ĉ = Σ αᵢ (cᵢu₀ − Aᵢᵀu) − Σ λⱼ Gⱼᵀ
    let target = &p.qhat * y + &p.chat;
    let mut columns: Vec<DVector<f64>> = Vec::new();
    let mut which: Vec<(bool, usize)> = Vec::new();
    let mut contributions: Vec<(f64, DVector<f64>, bool, usize)> = Vec::new();
    for (i, c) in p.cones.iter().enumerate() {
        let (u0, u) = c.evaluate(y);
        let dir = &c.c * u0 - c.a.transpose() * &u;
        let alpha = if u0.abs() > 0.0 { duals.cones[i].0 / u0 } else { 0.0 };
        contributions.push(((&dir * alpha).amax(), dir, true, i));
    }
    for j in 0..p.num_linear() {
        let dir = -p.g_mat.row(j).transpose();
        contributions.push(((&dir * duals.linear[j]).amax(), dir, false, j));
    }
    let biggest = contributions.iter().map(|c| c.0).fold(0.0, f64::max);
    if biggest == 0.0 {
        return None;
    }
    let mut rhs = target.clone();
    let mut fixed = duals.clone();
    for (mag, dir, is_cone, idx) in contributions {
        if mag >= 1e-6 * biggest {
            columns.push(dir);
            which.push((is_cone, idx));
        } else if is_cone {
            let (u0, _) = p.cones[idx].evaluate(y);
            let alpha = if u0.abs() > 0.0 { duals.cones[idx].0 / u0 } else { 0.0 };
            rhs -= dir * alpha;
        } else {
            rhs -= dir * duals.linear[idx];
        }
    }
    let m = DMatrix::from_columns(&columns);
    // Degenerate vertices make the multipliers non-unique, so the plain least
    // squares fit can go negative where a nonnegative fit exists.
    let coeffs = nonnegative_least_squares(&m, &rhs)?;
    for (k, (is_cone, idx)) in which.into_iter().enumerate() {
        if is_cone {
            let (u0, u) = p.cones[idx].evaluate(y);
            fixed.cones[idx] = (coeffs[k] * u0, -u * coeffs[k]);
        } else {
            fixed.linear[idx] = coeffs[k];
        }
    }
    Some(fixed)
}

/// Lawson–Hanson active-set solution of `min ‖M a − r‖, a ≥ 0`.
fn nonnegative_least_squares(m: &DMatrix<f64>, r: &DVector<f64>) -> Option<DVector<f64>> {
    let k = m.ncols();
    let tol = 1e-12 * m.amax().max(1.0) * r.amax().max(1.0);
    let mut x = DVector::zeros(k);
    let mut passive = vec![false; k];
    let solve_passive = |passive: &[bool]| -> Option<DVector<f64>> {
        let idx: Vec<usize> = (0..k).filter(|&j| passive[j]).collect();
        let sub = m.select_columns(&idx);
        let z = sub.svd(true, true).solve(r, 1e-14).ok()?;
        let mut full = DVector::zeros(k);
        for (c, &j) in idx.iter().enumerate() {
            full[j] = z[c];
        }
        Some(full)
    };
    for _ in 0..3 * k + 10 {
        let w = m.transpose() * (r - m * &x);
        let Some(enter) = (0..k).filter(|&j| !passive[j] && w[j] > tol).max_by(|&a, &b| w[a].total_cmp(&w[b]))
        else {
            return x.iter().all(|v| v.is_finite()).then_some(x);
        };
        passive[enter] = true;
        loop {
            let z = solve_passive(&passive)?;
            if (0..k).all(|j| !passive[j] || z[j] > 0.0) {
                x = z;
                break;
            }
            let mut alpha = f64::INFINITY;
            let mut blocking = 0;
            for j in 0..k {
                if passive[j] && z[j] <= 0.0 {
                    let a = x[j] / (x[j] - z[j]);
                    if a < alpha {
                        alpha = a;
                        blocking = j;
                    }
                }
            }
            x += (&z - &x) * alpha;
            x[blocking] = 0.0;
            passive[blocking] = false;
            for j in 0..k {
                if passive[j] && x[j] <= 0.0 {
                    passive[j] = false;
                    x[j] = 0.0;
                }
            }
        }
    }
    None
}

struct PhaseOneOutcome {
    point: Option<DVector<f64>>,
    last: DVector<f64>,
    slack: f64,
    exhausted: bool,
}

/// Phase I searches within `PHASE_ONE_RADIUS · scale` of its start.
const PHASE_ONE_RADIUS: f64 = 1e3;

fn phase_one_scale(p: &ConicProblem, y0: &DVector<f64>) -> f64 {
    let cones = p.cones.iter().map(SecondOrderCone::data_scale).fold(0.0, f64::max);
    let lin = if p.g_vec.is_empty() { 0.0 } else { p.g_vec.amax().max(p.g_mat.amax()) };
    1f64.max(y0.norm()).max(cones).max(lin)
}

/// Minimizes `s` over `{‖A_iy+b_i‖ ≤ c_iᵀy+d_i+s, Gy ≤ g+s, s ≥ −1}` and stops
/// at the first iterate with `s < 0`. A ball around `y0` keeps the search
/// bounded, so an infeasible verdict is relative to that ball.
fn phase_one(
    p: &ConicProblem,
    settings: &SolverSettings,
    y0: &DVector<f64>,
    newton_steps: &mut usize,
) -> PhaseOneOutcome {
    let nu = p.dim();
    let mut chat = DVector::zeros(nu + 1);
    chat[nu] = 1.0;
    let mut aux = ConicProblem::new(DMatrix::zeros(nu + 1, nu + 1), chat)
        .expect("consistent auxiliary dimensions");
    for c in &p.cones {
        let a = c.a.clone().insert_column(nu, 0.0);
        let cc = c.c.clone().push(1.0);
        aux.cones.push(SecondOrderCone { a, b: c.b.clone(), c: cc, d: c.d });
    }
    let k = p.num_linear();
    let mut g = DMatrix::zeros(k + 1, nu + 1);
    g.view_mut((0, 0), (k, nu)).copy_from(&p.g_mat);
    for j in 0..k {
        g[(j, nu)] = -1.0;
    }
    g[(k, nu)] = -1.0;
    aux.g_mat = g;
    aux.g_vec = p.g_vec.clone().push(1.0);
    // Without a bound the auxiliary barrier is unbounded below whenever the
    // feasible set is, and centering drifts off instead of reducing `s`.
    let radius = PHASE_ONE_RADIUS * phase_one_scale(p, y0);
    let mut ball = DMatrix::zeros(nu, nu + 1);
    ball.view_mut((0, 0), (nu, nu)).fill_with_identity();
    aux.cones.push(SecondOrderCone { a: ball, b: -y0.clone(), c: DVector::zeros(nu + 1), d: radius });

    let s0 = p.max_violation(y0).max(0.0) + 1.0;
    // `max_violation` is zero on the boundary; any positive s0 gives strict feasibility.
    let start = y0.clone().push(s0);
    debug_assert!(aux.is_strictly_feasible(&start));

    let threshold = settings.infeasibility_threshold;
    let theta = aux.barrier_parameter();
    let stop = move |y: &DVector<f64>, t: f64, centered: bool| -> Option<bool> {
        let s = y[nu];
        if s < 0.0 {
            Some(true)
        } else if centered && s - theta / t > threshold {
            // central-path lower bound on the optimal slack is already positive
            Some(false)
        } else {
            None
        }
    };
    let path = barrier_path(&aux, settings, start, newton_steps, Some(&stop));
    let slack = path.y[nu];
    let y = path.y.rows(0, nu).into_owned();
    match path.outcome {
        PathOutcome::EarlyStop if slack < 0.0 && p.is_strictly_feasible(&y) => {
            PhaseOneOutcome { point: Some(y.clone()), last: y, slack, exhausted: false }
        }
        PathOutcome::IterationLimit => PhaseOneOutcome { point: None, last: y, slack, exhausted: true },
        _ => PhaseOneOutcome { point: None, last: y, slack, exhausted: false },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PathOutcome {
    Converged,
    EarlyStop,
    IterationLimit,
    Stalled,
}

struct PathResult {
    y: DVector<f64>,
    t: f64,
    outcome: PathOutcome,
    objectives: Vec<f64>,
    outer: usize,
}

/// `stop(y, t, centered)` may end the path early after any Newton step.
type StopRule<'a> = &'a dyn Fn(&DVector<f64>, f64, bool) -> Option<bool>;

fn barrier_path(
    p: &ConicProblem,
    settings: &SolverSettings,
    mut y: DVector<f64>,
    newton_steps: &mut usize,
    stop: Option<StopRule<'_>>,
) -> PathResult {
    let theta = p.barrier_parameter();
    let mut t = initial_weight(p, &y, settings.initial_t);
    let mut objectives = Vec::new();
    let mut outer = 0;
    loop {
        outer += 1;
        let c = center(p, settings, &y, t, newton_steps, stop);
        y = c.y;
        objectives.push(p.objective(&y));
        match c.outcome {
            CenterOutcome::EarlyStop => {
                return PathResult { y, t, outcome: PathOutcome::EarlyStop, objectives, outer }
            }
            CenterOutcome::IterationLimit => {
                return PathResult { y, t, outcome: PathOutcome::IterationLimit, objectives, outer }
            }
            CenterOutcome::Stalled if theta / t > 1e3 * settings.gap_tolerance => {
                return PathResult { y, t, outcome: PathOutcome::Stalled, objectives, outer }
            }
            CenterOutcome::Centered | CenterOutcome::Stalled => {}
        }
        if let Some(rule) = stop {
            if rule(&y, t, true).is_some() {
                return PathResult { y, t, outcome: PathOutcome::EarlyStop, objectives, outer };
            }
        }
        if theta / t <= settings.gap_tolerance {
            return PathResult { y, t, outcome: PathOutcome::Converged, objectives, outer };
        }
        if outer >= settings.max_outer {
            return PathResult { y, t, outcome: PathOutcome::IterationLimit, objectives, outer };
        }
        t *= settings.barrier_growth;
    }
}

enum CenterOutcome {
    Centered,
    EarlyStop,
    IterationLimit,
    Stalled,
}

struct CenterResult {
    y: DVector<f64>,
    outcome: CenterOutcome,
}

/// Constraint values at the current iterate, reused by the line search.
struct LocalState {
    cone_u0: Vec<f64>,
    cone_u: Vec<DVector<f64>>,
    cone_logd: Vec<f64>,
    lin_slack: DVector<f64>,
}

fn local_state(p: &ConicProblem, y: &DVector<f64>) -> LocalState {
    let mut cone_u0 = Vec::with_capacity(p.cones.len());
    let mut cone_u = Vec::with_capacity(p.cones.len());
    let mut cone_logd = Vec::with_capacity(p.cones.len());
    for c in &p.cones {
        let (u0, u) = c.evaluate(y);
        let nu = u.norm();
        cone_logd.push(((u0 - nu) * (u0 + nu)).ln());
        cone_u0.push(u0);
        cone_u.push(u);
    }
    let lin_slack = &p.g_vec - &p.g_mat * y;
    LocalState { cone_u0, cone_u, cone_logd, lin_slack }
}

/// Gradient and Hessian of the log barrier `φ`; `curv` holds `c cᵀ − AᵀA`
/// per cone.
fn barrier_derivatives(p: &ConicProblem, st: &LocalState, curv: &[DMatrix<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let nu = p.dim();
    let mut grad = DVector::zeros(nu);
    let mut hess = DMatrix::zeros(nu, nu);
    let mut grad_d = DVector::zeros(nu);
    for (i, c) in p.cones.iter().enumerate() {
        let u0 = st.cone_u0[i];
        let dval = st.cone_logd[i].exp();
        // ∇D = 2 u0 c − 2 Aᵀu,  ∇²D = 2 c cᵀ − 2 AᵀA
        grad_d.copy_from(&c.c);
        grad_d.gemv_tr(-2.0, &c.a, &st.cone_u[i], 2.0 * u0);
        grad.axpy(-1.0 / dval, &grad_d, 1.0);
        hess.ger(1.0 / (dval * dval), &grad_d, &grad_d, 1.0);
        let w = 2.0 / dval;
        hess.zip_apply(&curv[i], |h, k| *h -= w * k);
    }
    if p.num_linear() > 0 {
        let inv = st.lin_slack.map(|s| 1.0 / s);
        grad.gemv_tr(1.0, &p.g_mat, &inv, 1.0);
        for j in 0..p.num_linear() {
            let row = p.g_mat.row(j);
            let w = inv[j] * inv[j];
            for a in 0..nu {
                let ra = row[a];
                if ra != 0.0 {
                    for b in 0..nu {
                        hess[(a, b)] += w * ra * row[b];
                    }
                }
            }
        }
    }
    (grad, hess)
}

/// `c cᵀ − AᵀA` per cone; constant over a solve.
fn cone_curvatures(p: &ConicProblem) -> Vec<DMatrix<f64>> {
    p.cones.iter().map(|c| &c.c * c.c.transpose() - c.a.tr_mul(&c.a)).collect()
}

/// The weight `t ≤ t_max` that best centers `y`, i.e. minimizes
/// `‖t ∇f + ∇φ‖` in the `(∇²φ)⁻¹` norm. A start far from the central path
/// of `t_max` otherwise costs hundreds of damped Newton steps.
fn initial_weight(p: &ConicProblem, y: &DVector<f64>, t_max: f64) -> f64 {
    let (g_phi, h_phi) = barrier_derivatives(p, &local_state(p, y), &cone_curvatures(p));
    let g_f = &p.qhat * y + &p.chat;
    let Some(h_inv_gf) = newton_direction(&h_phi, &g_f) else { return t_max };
    // newton_direction returns −H⁻¹g
    let num = g_phi.dot(&h_inv_gf);
    let den = -g_f.dot(&h_inv_gf);
    let t = num / den;
    if t.is_finite() && den > 0.0 && t > 0.0 {
        t.clamp(t_max * MIN_WEIGHT_RATIO, t_max)
    } else {
        t_max
    }
}

const MIN_WEIGHT_RATIO: f64 = 1e-8;
const NOISE_DECREMENT: f64 = 1e-3;
const MIN_STEP: f64 = 1e-10;
const MAX_STAGNANT_STEPS: usize = 8;
const QUADRATIC_REGION: f64 = 0.1;

fn center(
    p: &ConicProblem,
    settings: &SolverSettings,
    y_start: &DVector<f64>,
    t: f64,
    newton_steps: &mut usize,
    stop: Option<StopRule<'_>>,
) -> CenterResult {
    let nu = p.dim();
    let mut y = y_start.clone();
    let curv = cone_curvatures(p);
    let mut best_decrement_sq = f64::INFINITY;
    let mut stagnant_steps = 0;
    for _ in 0..settings.max_newton_per_center {
        let st = local_state(p, &y);

        // gradient and Hessian of ψ = t f + φ
        let (mut grad, mut hess) = barrier_derivatives(p, &st, &curv);
        grad += (&p.qhat * &y + &p.chat) * t;
        hess += &p.qhat * t;

        let delta = match newton_direction(&hess, &grad) {
            Some(d) => d,
            None => return CenterResult { y, outcome: CenterOutcome::Stalled },
        };
        let slope = grad.dot(&delta);
        let decrement_sq = -slope;
        if !(decrement_sq.is_finite()) {
            return CenterResult { y, outcome: CenterOutcome::Stalled };
        }
        if decrement_sq / 2.0 <= settings.newton_tolerance {
            return CenterResult { y, outcome: CenterOutcome::Centered };
        }

        // Precomputed directional data so that Δψ(s) avoids cancellation.
        let gf_dir = (&p.qhat * &y + &p.chat).dot(&delta);
        let curv = delta.dot(&(&p.qhat * &delta));
        let cone_dirs: Vec<(f64, DVector<f64>)> =
            p.cones.iter().map(|c| (c.c.dot(&delta), &c.a * &delta)).collect();
        let lin_dir = &p.g_mat * &delta;

        let delta_psi = |s: f64| -> Option<f64> {
            let mut val = t * (s * gf_dir + 0.5 * s * s * curv);
            for (i, (dc, da)) in cone_dirs.iter().enumerate() {
                let u0 = st.cone_u0[i] + s * dc;
                let un = st.cone_u[i].iter().zip(da.iter()).map(|(u, d)| (u + s * d).powi(2)).sum::<f64>().sqrt();
                if !(u0 > un) {
                    return None;
                }
                let dnew = (u0 - un) * (u0 + un);
                if !(dnew > 0.0) {
                    return None;
                }
                val -= dnew.ln() - st.cone_logd[i];
            }
            for j in 0..lin_dir.len() {
                let snew = st.lin_slack[j] - s * lin_dir[j];
                if !(snew > 0.0) {
                    return None;
                }
                val -= (snew / st.lin_slack[j]).ln();
            }
            Some(val)
        };

        let mut step = 1.0;
        let accepted = loop {
            if let Some(dv) = delta_psi(step) {
                // Δψ works from extrapolated slacks; the new point itself must
                // also evaluate as interior.
                if dv <= settings.armijo_slope * step * slope && p.is_strictly_feasible(&(&y + &delta * step)) {
                    break true;
                }
            }
            step *= settings.backtrack;
            if step < 1e-14 {
                break false;
            }
        };
        if !accepted {
            let outcome = if decrement_sq / 2.0 <= NOISE_DECREMENT {
                CenterOutcome::Centered
            } else {
                CenterOutcome::Stalled
            };
            return CenterResult { y, outcome };
        }
        y += &delta * step;
        *newton_steps += 1;
        debug_assert_eq!(y.len(), nu);
        // In the quadratic region a rejected full step, or a decrement that
        // stops shrinking, means Δψ is below rounding noise.
        let stagnant = decrement_sq > 0.5 * best_decrement_sq;
        // Outside the quadratic region progress may be slow but never absent.
        let frozen = decrement_sq >= best_decrement_sq;
        best_decrement_sq = best_decrement_sq.min(decrement_sq);
        if (step < 1.0 || stagnant) && decrement_sq / 2.0 <= NOISE_DECREMENT {
            return CenterResult { y, outcome: CenterOutcome::Centered };
        }
        // Inside the quadratic region each step should shrink λ² many times over.
        let no_progress = if decrement_sq <= QUADRATIC_REGION { stagnant } else { frozen };
        stagnant_steps = if no_progress { stagnant_steps + 1 } else { 0 };
        if step < MIN_STEP || stagnant_steps >= MAX_STAGNANT_STEPS {
            return CenterResult { y, outcome: CenterOutcome::Stalled };
        }

        if let Some(rule) = stop {
            if rule(&y, t, false).is_some() {
                return CenterResult { y, outcome: CenterOutcome::EarlyStop };
            }
        }
    }
    CenterResult { y, outcome: CenterOutcome::IterationLimit }
}

/// Solves `H Δ = −g`, regularizing the diagonal when `H` is numerically
/// singular.
fn newton_direction(hess: &DMatrix<f64>, grad: &DVector<f64>) -> Option<DVector<f64>> {
    let h = (hess + hess.transpose()) * 0.5;
    if let Some(ch) = h.clone().cholesky() {
        let d = ch.solve(&(-grad));
        if d.iter().all(|v| v.is_finite()) {
            return Some(d);
        }
    }
    let diag_max = h.diagonal().amax().max(1e-300);
    if !diag_max.is_finite() {
        return None;
    }
    let mut shift = 1e-12 * diag_max;
    while shift <= 1e-2 * diag_max {
        let mut hs = h.clone();
        for i in 0..hs.nrows() {
            hs[(i, i)] += shift;
        }
        if let Some(ch) = hs.cholesky() {
            let d = ch.solve(&(-grad));
            if d.iter().all(|v| v.is_finite()) {
                return Some(d);
            }
        }
        shift *= 100.0;
    }
    None
}
