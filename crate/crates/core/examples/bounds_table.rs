//! Predicted constraint-satisfaction probabilities of the first plan next to
//! the frequencies observed in closed loop.

use mssmpc::benchmark;
use mssmpc::controller::Strategy;
use mssmpc::sim::{self, BoundRow, Controller, ControllerSpec};
use nalgebra::DVector;

pub fn run_example() -> mssmpc::Result<Vec<BoundRow>> {
    let d = benchmark::design()?.0;
    let c = Controller::new(&d, ControllerSpec::ms(Strategy::A))?;
    let s = sim::monte_carlo(&c, &DVector::from_column_slice(&[-40.0, 40.0]), d.horizon, 100, 1)?;
    let rows = sim::bound_table(&s.traces, s.first_solution().expect("one episode"), &d);
    println!("{:>4}  {:>15}  {:>15}", "ell", "p", "f");
    for r in &rows {
        println!("{:>4}  ({:.2}, {:.2})    ({:.2}, {:.2})", r.ell, r.p_x, r.p_u, r.f_x, r.f_u);
    }
    Ok(rows)
}

#[allow(dead_code)]
fn main() {
    run_example().expect("bound table");
}
