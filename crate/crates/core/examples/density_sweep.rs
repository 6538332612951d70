//! Head slopes over a range of energy densities, run on the sweep pool.
//! `KGCHAIN_WORKERS` bounds the number of concurrent runs.

use kgchain::run::{sweep, RunConfig, SweepKind, SweepParam};

fn main() -> kgchain::Result<()> {
    let mut cfg = RunConfig::production();
    cfg.lattice.n = 255;
    cfg.integrator.t_end = 2000.0;
    cfg.observables.fit.head = Some((1, 21));
    cfg.output = "runs/density".into();
    let densities = [0.05, 0.025, 0.01, 0.005, 0.001];
    let report = sweep(&cfg, SweepParam::Density, &densities, SweepKind::Simulate)?;
    for m in &report.members {
        let head = m.fit.as_ref().and_then(|f| f.head.as_ref()).map(|h| h.slope);
        println!("E = {:<6} head slope {:?}", m.value, head);
    }
    Ok(())
}
