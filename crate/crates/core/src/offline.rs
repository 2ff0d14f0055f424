//! Offline design: the reachable-set shape `W_x` with contraction rate `λ`,
//! the probability radius `ρ(ε)`, the inscribed radii, the input shape `W_u`,
//! validity checks and the convergence certificate `(μ, β)`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg;
use crate::lqr::{self, LqrResult};
use crate::model::{self, LinearSystem, Polytope};
use crate::special;

const SHAPE_REL_TOL: f64 = 1e-12;
const SHAPE_MAX_ITERATIONS: usize = 1_000_000;
const CHECK_REL_TOL: f64 = 1e-9;
const LAMBDA_TIE_TOL: f64 = 1e-9;
/// Number of `μ` values scanned by [`certify_convergence`].
pub const CERTIFICATE_GRID: usize = 2000;
/// Eigenvalue tolerance used when checking a supplied `(μ, β)` pair.
pub const CERTIFICATE_TOL: f64 = 1e-6;

/// How `ρ` is derived from the violation level `ε`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseFamily {
    /// Chebyshev bound, valid for any distribution with covariance `Γ_w`.
    Generic,
    /// Exact `χ²` quantile for Gaussian noise.
    Gaussian,
}

impl std::str::FromStr for NoiseFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "generic" => Ok(NoiseFamily::Generic),
            "gaussian" => Ok(NoiseFamily::Gaussian),
            other => Err(Error::Config(format!("unknown noise family '{other}'"))),
        }
    }
}

impl std::fmt::Display for NoiseFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NoiseFamily::Generic => "generic",
            NoiseFamily::Gaussian => "gaussian",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Certificate {
    pub mu: f64,
    pub beta: f64,
}

/// Everything the online controllers need, produced once offline.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignArtifacts {
    pub system: LinearSystem,
    pub state_constraints: Polytope,
    pub input_constraints: Polytope,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub lqr: LqrResult,
    pub w_x: DMatrix<f64>,
    pub w_u: DMatrix<f64>,
    pub lambda: f64,
    pub rho: f64,
    pub r_x: f64,
    pub r_u: f64,
    pub r_xu: f64,
    pub eps: f64,
    pub eta: f64,
    pub horizon: usize,
    pub family: NoiseFamily,
    pub certificate: Option<Certificate>,
}

impl DesignArtifacts {
    pub fn state_dim(&self) -> usize {
        self.system.state_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.system.input_dim()
    }

    /// Tightening `ρ(1 − λ^ℓ)` at prediction step `ell`.
    pub fn tightening(&self, ell: usize) -> f64 {
        prs_radius(self.rho, self.lambda, ell)
    }

    /// Radius of the terminal set `E_{W_x}(r_xu − ρ(1 − λ^N))`.
    pub fn terminal_radius(&self) -> f64 {
        self.r_xu - self.tightening(self.horizon)
    }
}

/// User choices for [`design`].
#[derive(Debug, Clone, PartialEq)]
pub struct DesignSpec {
    pub system: LinearSystem,
    pub state_constraints: Polytope,
    pub input_constraints: Polytope,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub eps: f64,
    pub eta: f64,
    pub horizon: usize,
    pub family: NoiseFamily,
    /// Fixed contraction rate; selected on a grid when absent.
    pub lambda: Option<f64>,
    /// Fixed shape; designed from `λ` when absent.
    pub w_x: Option<DMatrix<f64>>,
    pub lambda_grid: usize,
}

/// `ρ(ε)`: `sqrt(n/ε)` for generic noise, `sqrt(χ²_n⁻¹(1 − ε))` for Gaussian noise.
pub fn rho_from_eps(eps: f64, n: usize, family: NoiseFamily) -> Result<f64> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidArgument(format!("eps must lie in (0,1), got {eps}")));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("dimension must be positive".into()));
    }
    match family {
        NoiseFamily::Generic => Ok((n as f64 / eps).sqrt()),
        NoiseFamily::Gaussian => special::chi2_radius(1.0 - eps, n, 1e-10),
    }
}

/// Radius `ρ(1 − λ^ℓ)` of the `ℓ`-step reachable set.
pub fn prs_radius(rho: f64, lambda: f64, ell: usize) -> f64 {
    rho * (1.0 - lambda.powi(ell.min(i32::MAX as usize) as i32))
}

/// Fixed point of `W = A_K W A_Kᵀ / λ² + Γ_w / (1 − λ)²`.
///
/// A singular `Γ_w` is regularized by `1e-12·max(‖Γ_w‖, 1)·I` so that the
/// returned shape is positive definite.
pub fn design_shape(gamma_w: &DMatrix<f64>, a_k: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    let n = linalg::ensure_square(a_k, "A_K")?;
    if gamma_w.nrows() != n || gamma_w.ncols() != n {
        return Err(Error::Dimension("Gamma_w and A_K differ in size".into()));
    }
    let sr = lqr::spectral_radius(a_k);
    if !(lambda > sr && lambda < 1.0) {
        return Err(Error::ContractionInfeasible { lambda, spectral_radius: sr });
    }
    let gamma = regularized_noise(gamma_w);
    let source = &gamma / ((1.0 - lambda) * (1.0 - lambda));
    let m = a_k / lambda;
    let mt = m.transpose();
    let mut w = source.clone();
    for _ in 0..SHAPE_MAX_ITERATIONS {
        let next = linalg::symmetrize(&(&m * &w * &mt + &source));
        let change = (&next - &w).norm();
        w = next;
        if change <= SHAPE_REL_TOL * w.norm() {
            return Ok(w);
        }
    }
    Err(Error::ContractionInfeasible { lambda, spectral_radius: sr })
}

fn regularized_noise(gamma_w: &DMatrix<f64>) -> DMatrix<f64> {
    let n = gamma_w.nrows();
    if linalg::is_positive_definite(gamma_w) {
        return linalg::symmetrize(gamma_w);
    }
    let delta = 1e-12 * gamma_w.norm().max(1.0);
    linalg::symmetrize(gamma_w) + DMatrix::identity(n, n) * delta
}

/// `W_u = K W_x Kᵀ`, the tightest input shape with `W_x⁻¹ ⪰ Kᵀ W_u⁻¹ K`.
pub fn design_input_shape(k: &DMatrix<f64>, w_x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if k.ncols() != w_x.nrows() {
        return Err(Error::Dimension("K and W_x differ in size".into()));
    }
    if k.iter().all(|v| *v == 0.0) {
        return Err(Error::InputShapeUndefined("the feedback gain is zero".into()));
    }
    let mut w_u = linalg::symmetrize(&(k * w_x * k.transpose()));
    let m = w_u.nrows();
    if m > 1 && !linalg::is_positive_definite(&w_u) {
        w_u += DMatrix::identity(m, m) * 1e-12;
    }
    if !linalg::is_positive_definite(&w_u) {
        return Err(Error::InputShapeUndefined("K W_x Kᵀ is singular".into()));
    }
    Ok(w_u)
}

/// Feasible contraction interval `[λ_lo, λ_hi]` for a given shape: the
/// contraction condition needs `λ² ≥ λ_max(W⁻½ A_K W A_Kᵀ W⁻½)`, the noise
/// containment needs `(1 − λ)² ≥ λ_max(W⁻½ Γ_w W⁻½)`.
pub fn lambda_interval(gamma_w: &DMatrix<f64>, a_k: &DMatrix<f64>, w_x: &DMatrix<f64>) -> Result<(f64, f64)> {
    let contraction = linalg::max_generalized_eigenvalue(&(a_k * w_x * a_k.transpose()), w_x)?;
    let noise = linalg::max_generalized_eigenvalue(gamma_w, w_x)?;
    Ok((contraction.max(0.0).sqrt(), 1.0 - noise.max(0.0).sqrt()))
}

/// Midpoint of [`lambda_interval`]; fails when the interval is empty.
pub fn fit_lambda_to_shape(gamma_w: &DMatrix<f64>, a_k: &DMatrix<f64>, w_x: &DMatrix<f64>) -> Result<f64> {
    let (lo, hi) = lambda_interval(gamma_w, a_k, w_x)?;
    if lo > hi || hi <= 0.0 || lo >= 1.0 {
        return Err(Error::DesignInfeasible(format!(
            "no contraction rate fits the supplied W_x: need lambda >= {lo:.10} and <= {hi:.10}"
        )));
    }
    Ok(0.5 * (lo + hi))
}

struct Radii {
    r_x: f64,
    r_u: f64,
}

fn radii(w_x: &DMatrix<f64>, w_u: &DMatrix<f64>, xs: &Polytope, us: &Polytope) -> Result<Radii> {
    Ok(Radii { r_x: model::inscribed_radius(w_x, xs)?, r_u: model::inscribed_radius(w_u, us)? })
}

/// Scans `λ` on a uniform grid over `(ρ(A_K) + 1e-3, 1 − 1e-3)` and keeps the
/// value maximizing the terminal margin `1 − ρ(1 − λ^N)/r_xu`.
///
/// The margin is normalized by `r_xu` because the scale of `W_x` changes with
/// `λ`, so unnormalized radii from different grid points are not comparable.
/// Ties within `1e-9` go to the smallest `λ`.
pub fn select_lambda(
    system: &LinearSystem,
    lqr: &LqrResult,
    state_constraints: &Polytope,
    input_constraints: &Polytope,
    eps: f64,
    family: NoiseFamily,
    horizon: usize,
    grid_size: usize,
) -> Result<(f64, DMatrix<f64>)> {
    if grid_size < 10 {
        return Err(Error::InvalidArgument("lambda grid needs at least 10 points".into()));
    }
    let n = system.state_dim();
    let rho = rho_from_eps(eps, n, family)?;
    let noiseless = system.gamma_w().iter().all(|v| *v == 0.0);
    let lo = lqr::spectral_radius(&lqr.a_k) + 1e-3;
    let hi = 1.0 - 1e-3;
    if lo >= hi {
        return Err(Error::DesignInfeasible("closed loop is too slow for any contraction rate".into()));
    }

    let mut best: Option<(f64, f64, DMatrix<f64>)> = None;
    for i in 0..grid_size {
        let lambda = lo + (hi - lo) * i as f64 / (grid_size - 1) as f64;
        let Ok(w_x) = design_shape(system.gamma_w(), &lqr.a_k, lambda) else {
            continue;
        };
        let Ok(w_u) = design_input_shape(&lqr.k, &w_x) else {
            continue;
        };
        let Ok(rd) = radii(&w_x, &w_u, state_constraints, input_constraints) else {
            continue;
        };
        let r_xu = rd.r_x.min(rd.r_u);
        if rho > r_xu || rho < rho_lower_bound(n, lambda) {
            continue;
        }
        let margin = if noiseless { 1.0 } else { 1.0 - prs_radius(rho, lambda, horizon) / r_xu };
        let better = match &best {
            None => true,
            Some((_, m, _)) => margin > m + LAMBDA_TIE_TOL,
        };
        if better {
            best = Some((lambda, margin, w_x));
        }
    }
    best.map(|(l, _, w)| (l, w))
        .ok_or_else(|| Error::DesignInfeasible("noise too large for constraints".into()))
}

/// `sqrt(n(1 − λ)/(1 + λ))`, the smallest `ρ` compatible with the descent argument.
pub fn rho_lower_bound(n: usize, lambda: f64) -> f64 {
    (n as f64 * (1.0 - lambda) / (1.0 + lambda)).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    /// Minimum eigenvalue or scalar slack; negative means violated.
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    fn push(&mut self, name: impl Into<String>, margin: f64, passed: bool) {
        self.checks.push(Check { name: name.into(), passed, margin });
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for c in &self.checks {
            writeln!(f, "{:<28} {:>5}  margin {:+.6e}", c.name, if c.passed { "ok" } else { "FAIL" }, c.margin)?;
        }
        Ok(())
    }
}

/// Contraction check `λ²W − A_K W A_Kᵀ ⪰ 0`: minimum eigenvalue.
pub fn contraction_margin(w_x: &DMatrix<f64>, a_k: &DMatrix<f64>, lambda: f64) -> f64 {
    linalg::min_eigenvalue(&(w_x * (lambda * lambda) - a_k * w_x * a_k.transpose()))
}

/// Noise containment `(1 − λ)²W − Γ_w ⪰ 0`: minimum eigenvalue.
pub fn noise_margin(w_x: &DMatrix<f64>, gamma_w: &DMatrix<f64>, lambda: f64) -> f64 {
    linalg::min_eigenvalue(&(w_x * ((1.0 - lambda) * (1.0 - lambda)) - gamma_w))
}

/// Input shape compatibility `W_x⁻¹ − Kᵀ W_u⁻¹ K ⪰ 0`: minimum eigenvalue.
pub fn input_shape_margin(w_x: &DMatrix<f64>, w_u: &DMatrix<f64>, k: &DMatrix<f64>) -> Result<f64> {
    let wxi = spd_inverse(w_x, "W_x")?;
    let wui = spd_inverse(w_u, "W_u")?;
    Ok(linalg::min_eigenvalue(&(wxi - k.transpose() * wui * k)))
}

fn spd_inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let l = linalg::cholesky_lower(m, what)?;
    let li = linalg::lower_inverse(&l);
    Ok(linalg::symmetrize(&(li.transpose() * li)))
}

/// Runs every offline check; never fails, failures are reported.
pub fn verify_design(d: &DesignArtifacts) -> ValidationReport {
    let mut rep = ValidationReport::default();
    let wx_scale = d.w_x.norm();

    let m = contraction_margin(&d.w_x, &d.lqr.a_k, d.lambda);
    rep.push("contraction", m, m >= -CHECK_REL_TOL * wx_scale);
    let m = noise_margin(&d.w_x, d.system.gamma_w(), d.lambda);
    rep.push("noise_containment", m, m >= -CHECK_REL_TOL * wx_scale);
    match input_shape_margin(&d.w_x, &d.w_u, &d.lqr.k) {
        Ok(m) => {
            let scale = spd_inverse(&d.w_x, "W_x").map(|w| w.norm()).unwrap_or(1.0);
            rep.push("input_shape", m, m >= -CHECK_REL_TOL * scale);
        }
        Err(_) => rep.push("input_shape", f64::NEG_INFINITY, false),
    }
    let slack = d.r_xu - d.rho;
    rep.push("rho_within_radius", slack, slack >= 0.0);
    let slack = d.rho - rho_lower_bound(d.state_dim(), d.lambda);
    rep.push("rho_lower_bound", slack, slack >= 0.0);
    for ell in 1..=d.horizon {
        let t = d.tightening(ell);
        rep.push(format!("state_set_nonempty[{ell}]"), d.r_x - t, d.r_x - t > 0.0);
        rep.push(format!("input_set_nonempty[{ell}]"), d.r_u - t, d.r_u - t > 0.0);
    }
    rep
}

/// Margins of the two certificate inequalities
/// `(Q − μP)/tr(PΓ_w) − W_x⁻¹/r² ⪰ 0` and `μP/β − W_x⁻¹/r² ≻ 0`.
pub fn certificate_margins(
    p: &DMatrix<f64>,
    q: &DMatrix<f64>,
    gamma_w: &DMatrix<f64>,
    w_x: &DMatrix<f64>,
    r_xu: f64,
    mu: f64,
    beta: f64,
) -> Result<(f64, f64)> {
    let tr = (p * gamma_w).trace();
    if !(tr > 0.0) || !(beta > 0.0) || !(r_xu > 0.0) {
        return Err(Error::InvalidArgument("certificate needs tr(P Gamma_w) > 0, beta > 0, r > 0".into()));
    }
    let target = spd_inverse(w_x, "W_x")? / (r_xu * r_xu);
    let first = linalg::min_eigenvalue(&((q - p * mu) / tr - &target));
    let second = linalg::min_eigenvalue(&(p * (mu / beta) - &target));
    Ok((first, second))
}

/// `β(μ) = tr(PΓ_w) · λ_max((Q − μP)⁻¹P)`, or `None` when `Q − μP` is not PD.
pub fn beta_for_mu(p: &DMatrix<f64>, q: &DMatrix<f64>, gamma_w: &DMatrix<f64>, mu: f64) -> Option<f64> {
    let shifted = q - p * mu;
    if !linalg::is_positive_definite(&shifted) {
        return None;
    }
    let tr = (p * gamma_w).trace();
    linalg::max_generalized_eigenvalue(p, &shifted).ok().map(|g| tr * g)
}

/// First `μ` on a 2000-point grid in `(0, 1)` whose `β(μ)` satisfies both
/// certificate inequalities with nonnegative margins.
pub fn certify_convergence(
    p: &DMatrix<f64>,
    q: &DMatrix<f64>,
    gamma_w: &DMatrix<f64>,
    w_x: &DMatrix<f64>,
    r_xu: f64,
) -> Option<Certificate> {
    let tr = (p * gamma_w).trace();
    if !(tr > 0.0) || !(r_xu > 0.0) {
        return None;
    }
    (1..=CERTIFICATE_GRID).find_map(|i| {
        let mu = i as f64 / (CERTIFICATE_GRID + 1) as f64;
        let beta = beta_for_mu(p, q, gamma_w, mu)?;
        let (a, b) = certificate_margins(p, q, gamma_w, w_x, r_xu, mu, beta).ok()?;
        (a >= 0.0 && b > 0.0).then_some(Certificate { mu, beta })
    })
}

/// Full offline pipeline. Construction errors are returned as errors; the
/// validation outcome is returned alongside the artifacts.
pub fn design(spec: &DesignSpec) -> Result<(DesignArtifacts, ValidationReport)> {
    let n = spec.system.state_dim();
    let m = spec.system.input_dim();
    if spec.state_constraints.dim() != n || spec.input_constraints.dim() != m {
        return Err(Error::Dimension("constraint sets do not match the plant".into()));
    }
    if spec.horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    if !(spec.eta > 0.0) {
        return Err(Error::InvalidArgument("eta must be positive".into()));
    }
    let rho = rho_from_eps(spec.eps, n, spec.family)?;
    let lqr = lqr::solve_lqr(&spec.system, &spec.q, &spec.r)?;

    let (lambda, w_x) = match (&spec.w_x, spec.lambda) {
        (Some(w), Some(l)) => (l, w.clone()),
        (Some(w), None) => (fit_lambda_to_shape(spec.system.gamma_w(), &lqr.a_k, w)?, w.clone()),
        (None, Some(l)) => (l, design_shape(spec.system.gamma_w(), &lqr.a_k, l)?),
        (None, None) => select_lambda(
            &spec.system,
            &lqr,
            &spec.state_constraints,
            &spec.input_constraints,
            spec.eps,
            spec.family,
            spec.horizon,
            spec.lambda_grid,
        )?,
    };
    if !linalg::is_positive_definite(&w_x) {
        return Err(Error::NotPositiveDefinite("W_x".into()));
    }
    let w_u = design_input_shape(&lqr.k, &w_x)?;
    let rd = radii(&w_x, &w_u, &spec.state_constraints, &spec.input_constraints)?;
    let r_xu = rd.r_x.min(rd.r_u);
    let certificate = certify_convergence(&lqr.p, &spec.q, spec.system.gamma_w(), &w_x, r_xu);

    let artifacts = DesignArtifacts {
        system: spec.system.clone(),
        state_constraints: spec.state_constraints.clone(),
        input_constraints: spec.input_constraints.clone(),
        q: spec.q.clone(),
        r: spec.r.clone(),
        lqr,
        w_x,
        w_u,
        lambda,
        rho,
        r_x: rd.r_x,
        r_u: rd.r_u,
        r_xu,
        eps: spec.eps,
        eta: spec.eta,
        horizon: spec.horizon,
        family: spec.family,
        certificate,
    };
    let report = verify_design(&artifacts);
    Ok((artifacts, report))
}
