//! Offline design of the double-integrator benchmark: reachable-set shape,
//! radii, validation checks and the convergence certificate.

use mssmpc::{benchmark, cli, offline::DesignArtifacts};

pub fn run_example() -> mssmpc::Result<DesignArtifacts> {
    let (d, report) = benchmark::design()?;
    print!("{report}");
    println!("lambda {:.10}  rho {:.10}", d.lambda, d.rho);
    println!("r_x {:.6}  r_u {:.6}  r_xu {:.6}", d.r_x, d.r_u, d.r_xu);
    println!("K {}  W_u {:.6}", d.lqr.k, d.w_u[(0, 0)]);
    if let Some(c) = d.certificate {
        println!("certificate mu {:.6} beta {:.4}", c.mu, c.beta);
    }
    // design files store every float with 17 significant digits
    let json = cli::design_to_json(&d)?;
    assert_eq!(cli::design_from_json(&json)?, d);
    println!("design file: {} bytes, round-trips exactly", json.len());
    Ok(d)
}

#[allow(dead_code)]
fn main() {
    run_example().expect("benchmark design");
}
