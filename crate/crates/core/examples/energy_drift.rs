//! Energy drift of both integrators on the production chain, shorter run.
//!
//! `cargo run --release --example energy_drift -- 10000`

use kgchain::integrator::{integrate, EnergyMonitor, IntegratorConfig, Method};
use kgchain::lattice::LatticeParams;
use kgchain::run::InitialCondition;

fn main() -> kgchain::Result<()> {
    let t_end: f64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(2000.0);
    let params = LatticeParams::dirichlet(511, 0.5, 0.25, 0.0)?;
    let start = InitialCondition::EnergyDensity { density: 1e-3 }.build(&params)?;
    for (method, dt) in [(Method::Leapfrog, 0.05), (Method::Yoshida4, 0.05), (Method::Yoshida4, 0.1)] {
        let cfg = IntegratorConfig::new(method, dt, t_end).sampling(100);
        let mut mon = EnergyMonitor::new(&params);
        integrate(&params, &start, &cfg, &mut [&mut mon])?;
        println!("{method:?} dt={dt}: max |dH/H| = {:.3e} over t={t_end}", mon.max_relative_drift());
    }
    Ok(())
}
