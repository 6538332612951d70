//! Split-step envelope solver against the exact plane wave, plus the
//! conserved mass along the way.

use num_complex::Complex64;
use std::f64::consts::PI;

use kgchain::nls::{nls_invariants, FourierSeries, NlsField, NlsPropagator};

fn main() -> kgchain::Result<()> {
    let (k, amp, gamma, d) = (3i64, 0.7, -0.8, 0.5);
    let series = FourierSeries::plane_wave(k, amp, 32)?;
    let prop = NlsPropagator::for_series(&series);
    let mut field = NlsField::new(series, gamma, d);
    let (m0, _) = nls_invariants(&field);
    for tau in [0.25, 0.5, 1.0] {
        prop.evolve_to(&mut field, tau, 1e-3)?;
        // phase speed: d k^2 + gamma |A|^2
        let omega = -(d * (k * k) as f64 + gamma * amp * amp);
        let err = (0..64)
            .map(|i| {
                let x = -PI + 2.0 * PI * i as f64 / 64.0;
                (field.series.eval(x) - Complex64::from_polar(amp, k as f64 * x - omega * tau)).norm()
            })
            .fold(0.0, f64::max);
        let (m, _) = nls_invariants(&field);
        println!("tau = {tau}: max error {err:.2e}, mass drift {:.2e}", (m - m0).abs() / m0);
    }
    Ok(())
}
