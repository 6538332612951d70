//! The remainder at t = 1, mode by mode, next to the first-order correction.
//! Both fall off like k^-3 on odd modes.

use kgchain::correction::CorrectionModel;
use kgchain::run::{correction, RunConfig};

fn main() -> kgchain::Result<()> {
    let mut cfg = RunConfig::production();
    cfg.lattice.n = 511;
    cfg.integrator.dt = 0.01;
    cfg.compare.correction = Some(CorrectionModel::DrivenResponse);
    cfg.output = "runs/correction".into();
    let rep = correction(&cfg)?;
    for (i, k) in rep.k.iter().enumerate().filter(|(_, k)| [1, 3, 11, 51, 201].contains(*k)) {
        println!("k = {k:<4} |z1| = {:.3e}  |z10| = {:.3e}", rep.measured[i], rep.predicted[i]);
    }
    if let (Some(a), Some(b)) = (&rep.measured_fit, &rep.predicted_fit) {
        println!("exponents: measured {:.3}, predicted {:.3}", a.slope, b.slope);
    }

    cfg.compare.correction = Some(CorrectionModel::NormalFormBracket);
    cfg.output = "runs/correction_bracket".into();
    let rep = correction(&cfg)?;
    let i = rep.k.iter().position(|&k| k == 11).unwrap_or(0);
    println!("bracket form at k = 11: predicted / measured = {:.2}", rep.predicted[i] / rep.measured[i]);
    Ok(())
}
