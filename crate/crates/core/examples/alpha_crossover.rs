//! Quadratic on-site term: the Dirichlet spectrum grows a power-law tail
//! under the exponential head, the periodic one does not.
//!
//! Defaults are a quick look; `-- 511 100000` is the full experiment.

use kgchain::lattice::Boundary;
use kgchain::run::{simulate, RunConfig};

fn main() -> kgchain::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(255);
    let t_end: f64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(1e4);
    for bc in [Boundary::Dirichlet, Boundary::Periodic] {
        let mut cfg = RunConfig::production();
        cfg.lattice.n = n;
        cfg.lattice.bc = bc;
        cfg.integrator.t_end = t_end;
        cfg.output = format!("runs/alpha_{bc:?}").to_lowercase().into();
        let out = simulate(&cfg)?;
        let Some(fit) = out.fit else { continue };
        print!("{bc:?}: ");
        match (fit.k_star, fit.tail) {
            (Some(k), Some(tail)) => println!("crossover at k = {k}, E = {:.2e}, tail exponent {:.2}", fit.e_star.unwrap_or(0.0), tail.slope),
            _ => println!("no crossover, head slope {:.3}", fit.head.map(|h| h.slope).unwrap_or(f64::NAN)),
        }
    }
    Ok(())
}
