//! The conic solver on its own: a quadratic objective over a disc cut by a
//! halfplane.

use mssmpc::socp::{self, ConicProblem, ConicSolution, SecondOrderCone};
use nalgebra::{DMatrix, DVector};

pub fn run_example() -> mssmpc::Result<ConicSolution> {
    // min ‖y − (2, 1)‖²  s.t.  ‖y‖ ≤ 1.5,  y₁ + y₂ ≤ 1
    let target = DVector::from_column_slice(&[2.0, 1.0]);
    let mut p = ConicProblem::new(DMatrix::identity(2, 2) * 2.0, -&target * 2.0)?;
    p.add_cone(SecondOrderCone::new(DMatrix::identity(2, 2), DVector::zeros(2), DVector::zeros(2), 1.5)?)?;
    p.add_linear(&DVector::from_column_slice(&[1.0, 1.0]), 1.0)?;
    let sol = socp::solve(&p)?;
    println!("status {}  y = ({:.6}, {:.6})", sol.status, sol.y[0], sol.y[1]);
    println!("objective {:.6}  max KKT residual {:.2e}", sol.objective + target.norm_squared(), sol.kkt.max());
    Ok(sol)
}

#[allow(dead_code)]
fn main() {
    run_example().expect("conic solve");
}
