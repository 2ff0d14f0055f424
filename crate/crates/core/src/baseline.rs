//! IS-SMPC: the comparison controller with fixed tightened sets (`γ ≡ 1`) and
//! dual-mode initialization. The nominal starts at the measured state when
//! that problem is feasible and at the previous prediction `z★_{1|k−1}`
//! otherwise; in the latter case the applied input carries the error feedback
//! `u = v★₀ + K (x − z₀)`.

use nalgebra::DVector;

use crate::controller::{OcpSolution, OcpTemplate, Strategy, Terminal};
use crate::error::{Error, Result};
use crate::offline::DesignArtifacts;
use crate::socp::{SolverSettings, SolverStatus};

/// Where the nominal trajectory of a step was initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Measured,
    Shifted,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Measured => "measured",
            Mode::Shifted => "shifted",
        })
    }
}

/// Per-episode memory of the dual-mode scheme.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DualModeState {
    pub last_solution: Option<OcpSolution>,
    pub mode_history: Vec<Mode>,
}

impl DualModeState {
    pub fn new() -> Self {
        Self::default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct IsOptions {
    /// Adds the hard bound `H_u v₀ ≤ h_u`. Off by default: the tightened
    /// input sets start at `ℓ = 1`, as in the relaxed problem.
    pub first_input_bound: bool,
    pub solver: SolverSettings,
}

/// Result of one IS-SMPC step.
#[derive(Debug, Clone, PartialEq)]
pub struct IsStep {
    pub u: DVector<f64>,
    pub solution: OcpSolution,
    pub mode: Mode,
}

#[derive(Debug, Clone)]
pub struct IsController {
    template: OcpTemplate,
    options: IsOptions,
}

impl IsController {
    /// The terminal set is `E_{W_x}(r_xu − ρ)`.
    pub fn new(design: &DesignArtifacts, options: IsOptions) -> Result<Self> {
        let radius = terminal_radius(design);
        Ok(Self { template: OcpTemplate::new(design, false, Terminal::Fixed(radius))?, options })
    }

    pub fn design(&self) -> &DesignArtifacts {
        &self.template.design
    }

    pub fn options(&self) -> &IsOptions {
        &self.options
    }

    fn strategy(&self) -> Strategy {
        if self.options.first_input_bound {
            Strategy::B
        } else {
            Strategy::A
        }
    }

    /// Solves the fixed-tightening problem with nominal start `z0`.
    pub fn solve(&self, z0: &DVector<f64>) -> Result<OcpSolution> {
        self.template.solve(z0, self.strategy(), &self.options.solver)
    }

    /// One dual-mode step at the measured state `x`.
    pub fn step(&self, x: &DVector<f64>, state: &mut DualModeState) -> Result<IsStep> {
        let measured = self.solve(x)?;
        let (solution, mode, z0) = match measured.status {
            SolverStatus::Optimal => (measured, Mode::Measured, x.clone()),
            SolverStatus::Infeasible => {
                let Some(prev) = &state.last_solution else {
                    return Err(Error::InitiallyInfeasible { x0: x.as_slice().to_vec() });
                };
                let z0 = prev.z[1].clone();
                let shifted = self.solve(&z0)?;
                if shifted.status != SolverStatus::Optimal {
                    return Err(solver_error(&shifted, &z0, "shifted"));
                }
                (shifted, Mode::Shifted, z0)
            }
            _ => return Err(solver_error(&measured, x, "measured")),
        };
        let k = &self.design().lqr.k;
        let u = &solution.v[0] + k * (x - &z0);
        state.last_solution = Some(solution.clone());
        state.mode_history.push(mode);
        Ok(IsStep { u, solution, mode })
    }
}

fn solver_error(sol: &OcpSolution, z0: &DVector<f64>, mode: &str) -> Error {
    Error::Solver {
        status: sol.status.to_string(),
        detail: format!("{mode} start {:?}, kkt {:.3e}, {} Newton steps", z0.as_slice(), sol.kkt_max, sol.newton_steps),
    }
}

/// `r_xu − ρ`, the radius of the terminal set `E_{W_x}(r_xu) ⊖ E_{W_x}(ρ)`.
pub fn terminal_radius(design: &DesignArtifacts) -> f64 {
    design.r_xu - design.rho
}

/// One step with default options; returns the input and the updated state.
pub fn is_smpc_step(
    design: &DesignArtifacts,
    x: &DVector<f64>,
    state: DualModeState,
) -> Result<(DVector<f64>, DualModeState)> {
    let mut state = state;
    let step = IsController::new(design, IsOptions::default())?.step(x, &mut state)?;
    Ok((step.u, state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmark;
    use crate::controller::{MsController, MsOptions};

    fn v2(a: f64, b: f64) -> DVector<f64> {
        DVector::from_column_slice(&[a, b])
    }

    fn design() -> DesignArtifacts {
        benchmark::design().unwrap().0
    }

    #[test]
    fn terminal_set_is_tighter_than_relaxed_one() {
        let d = design();
        assert!(terminal_radius(&d) < d.r_xu - d.tightening(d.horizon));
        assert!(terminal_radius(&d) > 0.0);
    }

    #[test]
    fn feasible_in_measured_mode_from_moderate_state() {
        let d = design();
        let (u, state) = is_smpc_step(&d, &v2(-30.0, 0.0), DualModeState::new()).unwrap();
        assert_eq!(state.mode_history, vec![Mode::Measured]);
        let sol = state.last_solution.unwrap();
        assert_eq!(sol.status, SolverStatus::Optimal);
        assert!((sol.gamma_x, sol.gamma_u) == (1.0, 1.0));
        assert_eq!(u, sol.v[0]);
    }

    #[test]
    fn measured_mode_matches_relaxed_controller() {
        // whenever the fixed problem is feasible the relaxed one needs no relaxation
        let d = design();
        let is = IsController::new(&d, IsOptions::default()).unwrap();
        let ms = MsController::new(&d, MsOptions::default()).unwrap();
        for x in [v2(-30.0, 0.0), v2(-20.0, 5.0), v2(10.0, -8.0), v2(-25.0, 10.0)] {
            let a = is.solve(&x).unwrap();
            if a.status != SolverStatus::Optimal {
                continue;
            }
            let b = ms.solve(&x).unwrap();
            assert!((b.gamma_x - 1.0).abs() < 1e-7 && (b.gamma_u - 1.0).abs() < 1e-7, "{x:?}");
            // the relaxed problem has the looser terminal set
            assert!(b.j_p <= a.j_p * (1.0 + 1e-5) + 1e-9, "{x:?}: {} vs {}", b.j_p, a.j_p);
        }
    }

    #[test]
    fn first_input_bound_is_respected() {
        let d = design();
        let opts = IsOptions { first_input_bound: true, ..IsOptions::default() };
        let is = IsController::new(&d, opts).unwrap();
        let sol = is.solve(&v2(-30.0, 0.0)).unwrap();
        assert_eq!(sol.status, SolverStatus::Optimal);
        assert!(sol.v[0][0].abs() <= 10.0 + 1e-7);
    }

    #[test]
    fn initial_infeasibility_is_an_error() {
        let d = design();
        let opts = IsOptions { first_input_bound: true, ..IsOptions::default() };
        let is = IsController::new(&d, opts).unwrap();
        let mut state = DualModeState::new();
        let err = is.step(&v2(-40.0, 40.0), &mut state).unwrap_err();
        assert_eq!(err, Error::InitiallyInfeasible { x0: vec![-40.0, 40.0] });
        assert!(state.mode_history.is_empty());
    }

    #[test]
    fn falls_back_to_shifted_mode() {
        let d = design();
        let is = IsController::new(&d, IsOptions::default()).unwrap();
        let mut state = DualModeState::new();
        let x0 = v2(-30.0, 0.0);
        let first = is.step(&x0, &mut state).unwrap();
        // a measurement far outside the feasible region
        let x1 = v2(200.0, 200.0);
        assert_eq!(is.solve(&x1).unwrap().status, SolverStatus::Infeasible);
        let second = is.step(&x1, &mut state).unwrap();
        assert_eq!(second.mode, Mode::Shifted);
        assert_eq!(state.mode_history, vec![Mode::Measured, Mode::Shifted]);
        let z0 = &first.solution.z[1];
        assert!((&second.solution.z[0] - z0).amax() < 1e-12);
        let expected = &second.solution.v[0] + &d.lqr.k * (&x1 - z0);
        assert!((&second.u - expected).amax() < 1e-12);
    }
}
