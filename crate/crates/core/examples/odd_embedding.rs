//! A Dirichlet chain is the odd part of a periodic chain twice its size.
//! With a cubic force the plain periodic chain works; with a quadratic
//! force the step-sign sequence is needed.

use kgchain::integrator::{integrate, IntegratorConfig, Method};
use kgchain::lattice::{odd_extend, restrict_odd, ExtendedChain, LatticeParams};
use kgchain::run::InitialCondition;

fn main() -> kgchain::Result<()> {
    let dbc = LatticeParams::dirichlet(63, 0.5, 0.25, 0.25)?;
    let start = InitialCondition::EnergyDensity { density: 0.01 }.build(&dbc)?;
    let cfg = IntegratorConfig::new(Method::Yoshida4, 0.05, 200.0);

    let direct = integrate(&dbc, &start, &cfg, &mut [])?;
    let chain = ExtendedChain::new(&dbc)?;
    let extended = integrate(&chain, &odd_extend(&dbc, &start)?, &cfg, &mut [])?;
    println!("sign-weighted extension: {:.2e}", restrict_odd(&extended)?.max_deviation(&direct));

    // dropping the sign sequence breaks oddness as soon as alpha != 0
    let plain = integrate(chain.periodic_params(), &odd_extend(&dbc, &start)?, &cfg, &mut [])?;
    match restrict_odd(&plain) {
        Ok(s) => println!("plain periodic chain: {:.2e}", s.max_deviation(&direct)),
        Err(e) => println!("plain periodic chain: {e}"),
    }
    Ok(())
}
