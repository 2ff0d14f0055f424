//! The double-integrator benchmark: plant, constraints, weights and the
//! published reachable-set shape.

use nalgebra::DMatrix;

use crate::error::Result;
use crate::lqr::{self, LqrResult};
use crate::model::{LinearSystem, Polytope};
use crate::offline::{self, DesignArtifacts, DesignSpec, NoiseFamily, ValidationReport};

/// Contraction rate printed alongside [`published_w_x`].
pub const PUBLISHED_LAMBDA: f64 = 0.7503;
pub const EPS: f64 = 0.1;
pub const ETA: f64 = 1e5;
pub const HORIZON: usize = 10;

pub fn system() -> LinearSystem {
    LinearSystem::new(
        DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]),
        DMatrix::from_row_slice(2, 1, &[0.5, 1.0]),
        DMatrix::from_row_slice(2, 2, &[0.1, 0.05, 0.05, 0.1]),
    )
    .expect("benchmark plant is valid")
}

pub fn q() -> DMatrix<f64> {
    DMatrix::identity(2, 2)
}

pub fn r() -> DMatrix<f64> {
    DMatrix::from_element(1, 1, 10.0)
}

pub fn lqr() -> LqrResult {
    lqr::solve_lqr(&system(), &q(), &r()).expect("benchmark LQR converges")
}

/// `‖x‖_∞ ≤ 40`.
pub fn state_constraints() -> Polytope {
    Polytope::symmetric_box(2, 40.0).expect("valid box")
}

/// `|u| ≤ 10`.
pub fn input_constraints() -> Polytope {
    Polytope::symmetric_box(1, 10.0).expect("valid box")
}

/// The published reachable-set shape (four-digit rounding).
pub fn published_w_x() -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[10.9264, -3.7386, -3.7386, 3.8143])
}

/// Design inputs using the published shape; `λ` is fitted to it.
pub fn design_spec() -> DesignSpec {
    DesignSpec {
        system: system(),
        state_constraints: state_constraints(),
        input_constraints: input_constraints(),
        q: q(),
        r: r(),
        eps: EPS,
        eta: ETA,
        horizon: HORIZON,
        family: NoiseFamily::Gaussian,
        lambda: None,
        w_x: Some(published_w_x()),
        lambda_grid: 200,
    }
}

pub fn design() -> Result<(DesignArtifacts, ValidationReport)> {
    offline::design(&design_spec())
}
