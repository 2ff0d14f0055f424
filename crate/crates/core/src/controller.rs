//! The measured-state controller: the relaxed optimal-control problem in
//! condensed form, its solution, and the constructs used to reason about it
//! (LQR region test, candidate shift, candidate relaxations, a-posteriori
//! probability bounds).
//!
//! Decision vector: `y = (v₀, …, v_{N−1}, δ_x, δ_u, t)` with `γ = 1 + δ`, where
//! `t` is the epigraph variable of `max(δ_x, δ_u)`. Working with `δ` keeps
//! the bound `γ ≥ 1` free of cancellation near the optimum.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::offline::{self, DesignArtifacts};
use crate::socp::{self, ConicProblem, SecondOrderCone, SolverSettings, SolverStatus};
use crate::special;

/// How the first nominal input is bounded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    /// No bound on `v₀`.
    A,
    /// Hard bound `H_u v₀ ≤ h_u`.
    B,
    /// Soft bound `H_u v₀ ≤ γ_u h_u`.
    C,
}

impl std::str::FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "A" | "a" => Ok(Strategy::A),
            "B" | "b" => Ok(Strategy::B),
            "C" | "c" => Ok(Strategy::C),
            other => Err(Error::Config(format!("unknown strategy '{other}', expected A, B or C"))),
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Strategy::A => "A",
            Strategy::B => "B",
            Strategy::C => "C",
        })
    }
}

/// `z_ℓ = F_ℓ x + G_ℓ v` for `ℓ = 0..=N`, with `v` the stacked inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct CondensedDynamics {
    pub f: Vec<DMatrix<f64>>,
    pub g: Vec<DMatrix<f64>>,
}

impl CondensedDynamics {
    pub fn new(a: &DMatrix<f64>, b: &DMatrix<f64>, horizon: usize) -> Self {
        let n = a.nrows();
        let m = b.ncols();
        let mut f = Vec::with_capacity(horizon + 1);
        let mut g = Vec::with_capacity(horizon + 1);
        f.push(DMatrix::identity(n, n));
        g.push(DMatrix::zeros(n, horizon * m));
        for ell in 0..horizon {
            f.push(a * &f[ell]);
            let mut next = a * &g[ell];
            let mut block = next.view_mut((0, ell * m), (n, m));
            block += b;
            g.push(next);
        }
        Self { f, g }
    }

    pub fn horizon(&self) -> usize {
        self.f.len() - 1
    }

    pub fn state(&self, ell: usize, x: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        &self.f[ell] * x + &self.g[ell] * v
    }
}

/// Optimal nominal plan at one sampling instant.
#[derive(Debug, Clone, PartialEq)]
pub struct OcpSolution {
    /// `z₀ … z_N`.
    pub z: Vec<DVector<f64>>,
    /// `v₀ … v_{N−1}`.
    pub v: Vec<DVector<f64>>,
    pub gamma_x: f64,
    pub gamma_u: f64,
    pub t: f64,
    /// Tracking cost `Σ ‖z‖²_Q + ‖v‖²_R + ‖z_N‖²_P`.
    pub j_p: f64,
    /// `j_p + η t`.
    pub j_total: f64,
    pub status: SolverStatus,
    pub strategy: Strategy,
    pub newton_steps: usize,
    pub kkt_max: f64,
}

impl OcpSolution {
    pub fn first_input(&self) -> &DVector<f64> {
        &self.v[0]
    }
}

/// Options of the measured-state controller.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MsOptions {
    pub strategy: Strategy,
    /// Return the LQR plan without solving when the state lies in `E_{W_x}(r_xu)`.
    pub lqr_fast_path: bool,
    pub solver: SolverSettings,
}

impl Default for MsOptions {
    fn default() -> Self {
        Self { strategy: Strategy::A, lqr_fast_path: false, solver: SolverSettings::default() }
    }
}

impl MsOptions {
    pub fn with_strategy(strategy: Strategy) -> Self {
        Self { strategy, ..Self::default() }
    }
}

/// A cone whose offset is `map · x`.
#[derive(Debug, Clone)]
struct ConeTemplate {
    cone: SecondOrderCone,
    offset_map: Option<DMatrix<f64>>,
}

/// Per-design data shared by every solve: condensed dynamics, cost matrices
/// and cone templates.
#[derive(Debug, Clone)]
pub(crate) struct OcpTemplate {
    pub(crate) design: DesignArtifacts,
    pub(crate) dynamics: CondensedDynamics,
    /// Inverse Cholesky factors of the shapes.
    pub(crate) lx_inv: DMatrix<f64>,
    pub(crate) lu_inv: DMatrix<f64>,
    /// Hessian block over the stacked inputs.
    hess_v: DMatrix<f64>,
    /// Linear cost over the stacked inputs is `lin_v · x`.
    lin_v: DMatrix<f64>,
    relaxed: bool,
    cones: Vec<ConeTemplate>,
}

/// How the terminal state is constrained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Terminal {
    /// `‖z_N‖ ≤ γ_x r_x − ρ(1−λ^N)` and `‖z_N‖ ≤ γ_u r_u − ρ(1−λ^N)`, both in the `W_x` norm.
    Relaxed,
    /// `‖z_N‖_{W_x} ≤ radius`.
    Fixed(f64),
}

impl OcpTemplate {
    pub(crate) fn new(design: &DesignArtifacts, relaxed: bool, terminal: Terminal) -> Result<Self> {
        let report = offline::verify_design(design);
        if !report.passed() {
            let names: Vec<_> = report.failures().map(|c| c.name.clone()).collect();
            return Err(Error::InvalidDesign(format!("failed checks: {}", names.join(", "))));
        }
        let d = design;
        let (n, m, horizon) = (d.state_dim(), d.input_dim(), d.horizon);
        let dynamics = CondensedDynamics::new(d.system.a(), d.system.b(), horizon);
        let lx_inv = linalg::lower_inverse(&linalg::cholesky_lower(&d.w_x, "W_x")?);
        let lu_inv = linalg::lower_inverse(&linalg::cholesky_lower(&d.w_u, "W_u")?);

        let nv = horizon * m;
        let mut hess_v = DMatrix::zeros(nv, nv);
        let mut lin_v = DMatrix::zeros(nv, n);
        for ell in 0..=horizon {
            let weight = if ell == horizon { &d.lqr.p } else { &d.q };
            let gt_w = dynamics.g[ell].transpose() * weight;
            hess_v += &gt_w * &dynamics.g[ell] * 2.0;
            lin_v += &gt_w * &dynamics.f[ell] * 2.0;
        }
        for ell in 0..horizon {
            let mut blk = hess_v.view_mut((ell * m, ell * m), (m, m));
            blk += &d.r * 2.0;
        }
        let hess_v = linalg::symmetrize(&hess_v);

        let nu = if relaxed { nv + 3 } else { nv };
        let mut cones = Vec::new();
        let widen = |block: DMatrix<f64>| -> DMatrix<f64> {
            let mut a = DMatrix::zeros(block.nrows(), nu);
            a.view_mut((0, 0), (block.nrows(), nv)).copy_from(&block);
            a
        };
        let unit = |idx: usize| -> DVector<f64> {
            let mut c = DVector::zeros(nu);
            c[idx] = 1.0;
            c
        };
        let (gx, gu) = (nv, nv + 1);

        // Each cone is divided by its nominal radius so that all cone data is O(1).
        for ell in 1..horizon {
            let tight = d.tightening(ell);
            let a = widen(&lx_inv * &dynamics.g[ell] / d.r_x);
            let map = &lx_inv * &dynamics.f[ell] / d.r_x;
            let c = if relaxed { unit(gx) } else { DVector::zeros(nu) };
            let off = 1.0 - tight / d.r_x;
            cones.push(ConeTemplate { cone: SecondOrderCone::new(a, DVector::zeros(n), c, off)?, offset_map: Some(map) });

            let mut sel = DMatrix::zeros(m, nv);
            sel.view_mut((0, ell * m), (m, m)).copy_from(&(&lu_inv / d.r_u));
            let c = if relaxed { unit(gu) } else { DVector::zeros(nu) };
            let off = 1.0 - tight / d.r_u;
            cones.push(ConeTemplate { cone: SecondOrderCone::new(widen(sel), DVector::zeros(m), c, off)?, offset_map: None });
        }
        let tight_n = d.tightening(horizon);
        match terminal {
            Terminal::Relaxed => {
                for (radius, idx) in [(d.r_x, gx), (d.r_u, gu)] {
                    let a = widen(&lx_inv * &dynamics.g[horizon] / radius);
                    let map = &lx_inv * &dynamics.f[horizon] / radius;
                    cones.push(ConeTemplate {
                        cone: SecondOrderCone::new(a, DVector::zeros(n), unit(idx), 1.0 - tight_n / radius)?,
                        offset_map: Some(map),
                    });
                }
            }
            Terminal::Fixed(radius) => {
                if !(radius > 0.0) {
                    return Err(Error::InvalidDesign(format!("terminal radius {radius} is not positive")));
                }
                let a = widen(&lx_inv * &dynamics.g[horizon] / radius);
                let map = &lx_inv * &dynamics.f[horizon] / radius;
                cones.push(ConeTemplate {
                    cone: SecondOrderCone::new(a, DVector::zeros(n), DVector::zeros(nu), 1.0)?,
                    offset_map: Some(map),
                });
            }
        }

        Ok(Self { design: design.clone(), dynamics, lx_inv, lu_inv, hess_v, lin_v, relaxed, cones })
    }

    pub(crate) fn num_inputs(&self) -> usize {
        self.design.horizon * self.design.input_dim()
    }

    pub(crate) fn dim(&self) -> usize {
        self.num_inputs() + if self.relaxed { 3 } else { 0 }
    }

    /// Assembles the conic problem for the measured (or nominal) initial state `x`.
    pub(crate) fn problem(&self, x: &DVector<f64>, strategy: Strategy) -> Result<ConicProblem> {
        let d = &self.design;
        if x.len() != d.state_dim() {
            return Err(Error::Dimension(format!("state has length {}, expected {}", x.len(), d.state_dim())));
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("state is not finite".into()));
        }
        let (nv, nu, m) = (self.num_inputs(), self.dim(), d.input_dim());
        let mut qhat = DMatrix::zeros(nu, nu);
        qhat.view_mut((0, 0), (nv, nv)).copy_from(&self.hess_v);
        let mut chat = DVector::zeros(nu);
        chat.rows_mut(0, nv).copy_from(&(&self.lin_v * x));
        if self.relaxed {
            chat[nv + 2] = d.eta;
        }
        let mut p = ConicProblem::new(qhat, chat)?;
        for t in &self.cones {
            let mut cone = t.cone.clone();
            if let Some(map) = &t.offset_map {
                cone.b = map * x;
            }
            p.cones.push(cone);
        }

        let row = |p: &mut ConicProblem, entries: &[(usize, f64)], rhs: f64| -> Result<()> {
            let mut r = DVector::zeros(nu);
            for &(i, v) in entries {
                r[i] = v;
            }
            p.add_linear(&r, rhs)
        };
        if self.relaxed {
            let (gx, gu, t) = (nv, nv + 1, nv + 2);
            row(&mut p, &[(gx, -1.0)], 0.0)?;
            row(&mut p, &[(gu, -1.0)], 0.0)?;
            row(&mut p, &[(gx, 1.0), (t, -1.0)], 0.0)?;
            row(&mut p, &[(gu, 1.0), (t, -1.0)], 0.0)?;
            row(&mut p, &[(t, -1.0)], 0.0)?;
        }
        let hu = d.input_constraints.h();
        let h = d.input_constraints.offsets();
        match strategy {
            Strategy::A => {}
            Strategy::B => {
                for i in 0..hu.nrows() {
                    let entries: Vec<_> = (0..m).map(|j| (j, hu[(i, j)])).collect();
                    row(&mut p, &entries, h[i])?;
                }
            }
            Strategy::C => {
                if !self.relaxed {
                    return Err(Error::InvalidArgument("soft first-input bound needs the relaxed problem".into()));
                }
                for i in 0..hu.nrows() {
                    let mut entries: Vec<_> = (0..m).map(|j| (j, hu[(i, j)])).collect();
                    entries.push((nv + 1, -h[i]));
                    row(&mut p, &entries, h[i])?;
                }
            }
        }
        Ok(p)
    }

    /// A strictly feasible point for the relaxed problem: the LQR rollout
    /// (first input shrunk under a hard bound) with generous relaxations.
    fn relaxed_start(&self, x: &DVector<f64>, strategy: Strategy) -> DVector<f64> {
        let d = &self.design;
        let (n_v, m) = (self.num_inputs(), d.input_dim());
        let hu = d.input_constraints.h();
        let h = d.input_constraints.offsets();
        let mut y = DVector::zeros(self.dim());
        let mut z = x.clone();
        for ell in 0..d.horizon {
            let mut v = &d.lqr.k * &z;
            if ell == 0 && strategy == Strategy::B {
                let load = (hu * &v).iter().zip(h.iter()).map(|(a, b)| a / b).fold(0.0, f64::max);
                if load >= 0.5 {
                    v *= 0.5 / load;
                }
            }
            y.rows_mut(ell * m, m).copy_from(&v);
            z = d.system.a() * &z + d.system.b() * v;
        }
        let sol_v = y.rows(0, n_v).into_owned();
        let (gx, gu) = self.required_gammas(x, &sol_v, strategy);
        // δ = γ − 1 with a unit margin
        let dx = gx;
        let du = gu;
        y[n_v] = dx;
        y[n_v + 1] = du;
        y[n_v + 2] = dx.max(du) + 1.0;
        y
    }

    /// Smallest relaxations making `v` feasible from `x`.
    fn required_gammas(&self, x: &DVector<f64>, v: &DVector<f64>, strategy: Strategy) -> (f64, f64) {
        let d = &self.design;
        let m = d.input_dim();
        let mut gx: f64 = 1.0;
        let mut gu: f64 = 1.0;
        for ell in 1..=d.horizon {
            let tight = d.tightening(ell);
            let zn = (&self.lx_inv * self.dynamics.state(ell, x, v)).norm();
            gx = gx.max((zn + tight) / d.r_x);
            if ell < d.horizon {
                let vn = (&self.lu_inv * v.rows(ell * m, m)).norm();
                gu = gu.max((vn + tight) / d.r_u);
            } else {
                gu = gu.max((zn + tight) / d.r_u);
            }
        }
        if strategy == Strategy::C {
            let hu = d.input_constraints.h();
            let h = d.input_constraints.offsets();
            let load = (hu * v.rows(0, m)).iter().zip(h.iter()).map(|(a, b)| a / b).fold(0.0, f64::max);
            gu = gu.max(load);
        }
        (gx, gu)
    }

    /// Tracking cost of an input sequence from `x`.
    pub(crate) fn tracking_cost(&self, z: &[DVector<f64>], v: &[DVector<f64>]) -> f64 {
        let d = &self.design;
        let stage: f64 = (0..d.horizon)
            .map(|ell| linalg::quad_form(&d.q, &z[ell]) + linalg::quad_form(&d.r, &v[ell]))
            .sum();
        stage + linalg::quad_form(&d.lqr.p, &z[d.horizon])
    }

    /// Splits a decision vector into a trajectory from `x`.
    pub(crate) fn unpack(&self, x: &DVector<f64>, y: &DVector<f64>) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
        let d = &self.design;
        let m = d.input_dim();
        let vs = y.rows(0, self.num_inputs()).into_owned();
        let v: Vec<_> = (0..d.horizon).map(|ell| vs.rows(ell * m, m).into_owned()).collect();
        let mut z = Vec::with_capacity(d.horizon + 1);
        z.push(x.clone());
        for ell in 0..d.horizon {
            let next = d.system.a() * &z[ell] + d.system.b() * &v[ell];
            z.push(next);
        }
        (z, v)
    }

    pub(crate) fn solve(
        &self,
        x: &DVector<f64>,
        strategy: Strategy,
        settings: &SolverSettings,
    ) -> Result<OcpSolution> {
        let problem = self.problem(x, strategy)?;
        let start = if self.relaxed { Some(self.relaxed_start(x, strategy)) } else { None };
        let sol = socp::solve_with(&problem, settings, start.as_ref())?;
        let (z, v) = self.unpack(x, &sol.y);
        let nv = self.num_inputs();
        let (gamma_x, gamma_u, t) =
            if self.relaxed { (1.0 + sol.y[nv], 1.0 + sol.y[nv + 1], sol.y[nv + 2]) } else { (1.0, 1.0, 0.0) };
        let j_p = self.tracking_cost(&z, &v);
        let eta = if self.relaxed { self.design.eta } else { 0.0 };
        Ok(OcpSolution {
            z,
            v,
            gamma_x,
            gamma_u,
            t,
            j_p,
            j_total: j_p + eta * t,
            status: sol.status,
            strategy,
            newton_steps: sol.newton_steps,
            kkt_max: sol.kkt.max(),
        })
    }
}

/// The measured-state controller for one design.
#[derive(Debug, Clone)]
pub struct MsController {
    template: OcpTemplate,
    options: MsOptions,
}

impl MsController {
    /// Fails when the design does not pass [`offline::verify_design`].
    pub fn new(design: &DesignArtifacts, options: MsOptions) -> Result<Self> {
        Ok(Self { template: OcpTemplate::new(design, true, Terminal::Relaxed)?, options })
    }

    pub fn design(&self) -> &DesignArtifacts {
        &self.template.design
    }

    pub fn options(&self) -> &MsOptions {
        &self.options
    }

    /// The conic problem solved at state `x`.
    pub fn problem(&self, x: &DVector<f64>) -> Result<ConicProblem> {
        self.template.problem(x, self.options.strategy)
    }

    /// Solves at `x` and returns the plan whatever the solver status.
    pub fn solve(&self, x: &DVector<f64>) -> Result<OcpSolution> {
        if self.options.lqr_fast_path && lqr_shortcut_applicable(self.design(), x) {
            return Ok(self.lqr_plan(x));
        }
        self.template.solve(x, self.options.strategy, &self.options.solver)
    }

    /// `u_k = v★₀`; a non-optimal solve is an error.
    pub fn control(&self, x: &DVector<f64>) -> Result<(DVector<f64>, OcpSolution)> {
        let sol = self.solve(x)?;
        if sol.status != SolverStatus::Optimal {
            return Err(Error::Solver {
                status: sol.status.to_string(),
                detail: format!("x = {:?}, kkt {:.3e}, {} Newton steps", x.as_slice(), sol.kkt_max, sol.newton_steps),
            });
        }
        Ok((sol.v[0].clone(), sol))
    }

    /// The unconstrained LQR plan `v_ℓ = K A_K^ℓ x` with `γ = 1`.
    pub fn lqr_plan(&self, x: &DVector<f64>) -> OcpSolution {
        let d = self.design();
        let mut z = vec![x.clone()];
        let mut v = Vec::with_capacity(d.horizon);
        for ell in 0..d.horizon {
            v.push(&d.lqr.k * &z[ell]);
            let next = &d.lqr.a_k * &z[ell];
            z.push(next);
        }
        let j_p = self.template.tracking_cost(&z, &v);
        OcpSolution {
            z,
            v,
            gamma_x: 1.0,
            gamma_u: 1.0,
            t: 0.0,
            j_p,
            j_total: j_p,
            status: SolverStatus::Optimal,
            strategy: self.options.strategy,
            newton_steps: 0,
            kkt_max: 0.0,
        }
    }
}

/// The conic problem at `x` for the given strategy.
pub fn build_ocp(design: &DesignArtifacts, x: &DVector<f64>, strategy: Strategy) -> Result<ConicProblem> {
    MsController::new(design, MsOptions::with_strategy(strategy))?.problem(x)
}

/// One-off solve at `x`; build an [`MsController`] once for repeated use.
pub fn control_step(design: &DesignArtifacts, x: &DVector<f64>, strategy: Strategy) -> Result<(DVector<f64>, OcpSolution)> {
    MsController::new(design, MsOptions::with_strategy(strategy))?.control(x)
}

/// Shape norm `sqrt(xᵀ W⁻¹ x)` through the Cholesky factor of `W`.
fn shape_norm(w: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    let l = linalg::cholesky_lower(w, "shape").expect("validated shape");
    l.solve_lower_triangular(x).expect("nonsingular factor").norm()
}

/// `xᵀ W_x⁻¹ x ≤ r_xu²` (relative tolerance `1e-9`).
pub fn lqr_shortcut_applicable(design: &DesignArtifacts, x: &DVector<f64>) -> bool {
    let s = shape_norm(&design.w_x, x);
    s * s <= design.r_xu * design.r_xu * (1.0 + 1e-9)
}

/// Shifted candidate plan at `k+1` after the disturbance `w`:
/// `z⁺_ℓ = z★_{ℓ+1} + A_K^ℓ w`, `z⁺_N = A_K z★_N + A_K^N w`,
/// `v⁺_ℓ = v★_{ℓ+1} + K A_K^ℓ w`, `v⁺_{N−1} = K z★_N + K A_K^{N−1} w`.
pub fn candidate_shift(
    sol: &OcpSolution,
    w: &DVector<f64>,
    design: &DesignArtifacts,
) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
    let horizon = sol.v.len();
    let a_k = &design.lqr.a_k;
    let k = &design.lqr.k;
    let mut prop = w.clone(); // A_K^ℓ w
    let mut z = Vec::with_capacity(horizon + 1);
    let mut v = Vec::with_capacity(horizon);
    for ell in 0..horizon {
        z.push(&sol.z[ell + 1] + &prop);
        if ell + 1 < horizon {
            v.push(&sol.v[ell + 1] + k * &prop);
        } else {
            v.push(k * &sol.z[horizon] + k * &prop);
        }
        prop = a_k * prop;
    }
    z.push(a_k * &sol.z[horizon] + &prop);
    (z, v)
}

/// Smallest relaxations under which a candidate plan is feasible:
/// `γ_x⁺ = max(1, (‖z⁺_ℓ‖_{W_x} + ρ(1−λ^ℓ))/r_x)` over `ℓ = 1..N`, and
/// `γ_u⁺` over the inputs `ℓ = 1..N−1` (`W_u` norm) and the terminal state
/// (`W_x` norm, radius `r_u`).
pub fn candidate_gammas(z: &[DVector<f64>], v: &[DVector<f64>], design: &DesignArtifacts) -> (f64, f64) {
    let d = design;
    let horizon = v.len();
    let mut gx: f64 = 1.0;
    let mut gu: f64 = 1.0;
    for ell in 1..=horizon {
        let tight = offline::prs_radius(d.rho, d.lambda, ell);
        let zn = shape_norm(&d.w_x, &z[ell]);
        gx = gx.max((zn + tight) / d.r_x);
        if ell < horizon {
            gu = gu.max((shape_norm(&d.w_u, &v[ell]) + tight) / d.r_u);
        } else {
            gu = gu.max((zn + tight) / d.r_u);
        }
    }
    (gx, gu)
}

/// A-posteriori radius and probability at one prediction step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepBound {
    pub ell: usize,
    /// `None` when the nominal point is not strictly inside the constraint ellipsoid.
    pub rho_x: Option<f64>,
    pub rho_u: Option<f64>,
    /// `χ²_n(ρ²)`, zero when the radius is undefined.
    pub p_x: f64,
    pub p_u: f64,
}

/// Per-step radii `ρ_ℓ = (r − ‖·‖)/(1 − λ^ℓ)` of a plan for `ℓ = 1..N`. At
/// `ℓ = N` both components use `r_xu` and the terminal state, since no input
/// `v_N` exists.
pub fn aposteriori_bounds(sol: &OcpSolution, design: &DesignArtifacts) -> Vec<StepBound> {
    let d = design;
    let n = d.state_dim();
    let horizon = sol.v.len();
    let radius = |r: f64, norm: f64, ell: usize| -> Option<f64> {
        (norm < r).then(|| (r - norm) / (1.0 - d.lambda.powi(ell as i32)))
    };
    let prob = |rho: Option<f64>| -> f64 {
        rho.map(|r| special::chi2_cdf(r * r, n).expect("finite radius")).unwrap_or(0.0)
    };
    (1..=horizon)
        .map(|ell| {
            let (rho_x, rho_u) = if ell < horizon {
                (
                    radius(d.r_x, shape_norm(&d.w_x, &sol.z[ell]), ell),
                    radius(d.r_u, shape_norm(&d.w_u, &sol.v[ell]), ell),
                )
            } else {
                let r = radius(d.r_xu, shape_norm(&d.w_x, &sol.z[ell]), ell);
                (r, r)
            };
            StepBound { ell, rho_x, rho_u, p_x: prob(rho_x), p_u: prob(rho_u) }
        })
        .collect()
}
