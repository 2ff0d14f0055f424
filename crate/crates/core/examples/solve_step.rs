//! One relaxed optimal-control solve per first-input strategy, with the
//! a-posteriori probability bounds of each plan.

use mssmpc::benchmark;
use mssmpc::controller::{aposteriori_bounds, MsController, MsOptions, OcpSolution, Strategy};
use nalgebra::DVector;

pub fn run_example() -> mssmpc::Result<Vec<OcpSolution>> {
    let d = benchmark::design()?.0;
    let x0 = DVector::from_column_slice(&[-40.0, 40.0]);
    let mut out = Vec::new();
    for s in [Strategy::A, Strategy::B, Strategy::C] {
        let ms = MsController::new(&d, MsOptions::with_strategy(s))?;
        let (u, sol) = ms.control(&x0)?;
        println!(
            "strategy {s}: u0 = {:+.4}, gamma = ({:.4}, {:.4}), cost {:.2}, {} Newton steps",
            u[0], sol.gamma_x, sol.gamma_u, sol.j_total, sol.newton_steps
        );
        for b in aposteriori_bounds(&sol, &d).iter().take(3) {
            println!("    ell {:>2}: p = ({:.4}, {:.4})", b.ell, b.p_x, b.p_u);
        }
        out.push(sol);
    }
    Ok(out)
}

#[allow(dead_code)]
fn main() {
    run_example().expect("solve");
}
