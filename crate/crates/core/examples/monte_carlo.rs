//! A seeded closed-loop campaign from the edge of the state box with soft
//! first-input bounds.

use mssmpc::benchmark;
use mssmpc::controller::Strategy;
use mssmpc::sim::{self, Controller, ControllerSpec, McSummary};
use nalgebra::DVector;

pub fn run_example() -> mssmpc::Result<McSummary> {
    let d = benchmark::design()?.0;
    let c = Controller::new(&d, ControllerSpec::ms(Strategy::C))?;
    let x0 = DVector::from_column_slice(&[-40.0, 40.0]);
    let s = sim::monte_carlo(&c, &x0, 10, 100, 42)?;
    println!("{}: {} episodes, J_MPC {:.2} ± {:.2}", s.controller, s.n_sim(), s.j_mean, s.j_std);
    println!("{:>3} {:>8} {:>8} {:>10}", "k", "f_x", "f_u", "mean γ_x");
    for k in 0..s.horizon {
        println!("{k:>3} {:>8.3} {:>8.3} {:>10.5}", s.state_frequency(k), s.input_frequency(k), s.mean_gamma_x[k]);
    }
    Ok(s)
}

#[allow(dead_code)]
fn main() {
    run_example().expect("campaign");
}
