//! How well the envelope equation tracks the chain: remainder norms at
//! `t = mu^-2` for a few chain sizes, run concurrently.

use kgchain::run::{sweep, RunConfig, SweepKind, SweepParam};

fn main() -> kgchain::Result<()> {
    let mut cfg = RunConfig::production();
    cfg.lattice.a = 0.25;
    cfg.integrator.dt = 0.02;
    cfg.compare.samples = 50;
    cfg.output = "runs/nls_scaling".into();
    let report = sweep(&cfg, SweepParam::N, &[16.0, 32.0, 64.0], SweepKind::Compare)?;
    for m in &report.members {
        let c = m.compare.as_ref().expect("compare member");
        println!("N = {:<4} t_end = {:<8.1} sup |z1| = {:?}", m.value, c.t_end, c.sup_error);
    }
    println!("successive ratios {:?}", report.error_ratios);
    Ok(())
}
