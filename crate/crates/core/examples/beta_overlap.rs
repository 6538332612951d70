//! Cubic on-site term only: Dirichlet and periodic heads coincide.

use kgchain::lattice::Boundary;
use kgchain::run::{simulate, RunConfig};

fn main() -> kgchain::Result<()> {
    let t_end: f64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1e4);
    let mut slopes = Vec::new();
    for bc in [Boundary::Dirichlet, Boundary::Periodic] {
        let mut cfg = RunConfig::production();
        cfg.lattice.alpha = 0.0;
        cfg.lattice.beta = 0.25;
        cfg.lattice.bc = bc;
        cfg.integrator.t_end = t_end;
        cfg.observables.fit.head = Some((1, 15));
        cfg.output = format!("runs/beta_{bc:?}").to_lowercase().into();
        let head = simulate(&cfg)?.fit.and_then(|f| f.head).expect("head fit");
        println!("{bc:?}: ln E_k ~ {:.4} k", head.slope);
        slopes.push(head.slope);
    }
    println!("relative difference {:.2}%", 100.0 * (slopes[0] - slopes[1]).abs() / slopes[1].abs());
    Ok(())
}
