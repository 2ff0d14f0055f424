//! Paired comparison of the measured-state controller and the dual-mode
//! baseline on identical noise streams.

use mssmpc::benchmark;
use mssmpc::cli::{self, Comparison};
use mssmpc::controller::Strategy;
use nalgebra::DVector;

pub fn run_example() -> mssmpc::Result<Comparison> {
    let d = benchmark::design()?.0;
    let x0 = DVector::from_column_slice(&[-30.0, 0.0]);
    let c = cli::compare(&d, Strategy::A, &x0, 10, 100, 7, None)?;
    println!("mean J_MPC: ms {:.3}, is {:.3}, ratio {:.6}", c.ms.j_mean, c.is.j_mean, c.mean_ratio());
    for (e, a, b) in c.pairs().into_iter().take(5) {
        println!("  episode {e}: {a:.3} vs {b:.3}");
    }
    Ok(c)
}

#[allow(dead_code)]
fn main() {
    run_example().expect("comparison");
}
