//! Mode transform round trip and the energy identity on both boundaries.

use kgchain::lattice::{quadratic_energy, Boundary, LatticeParams, SiteState};
use kgchain::spectral::{mode_energies, ModeTransform, TransformPath};

fn main() -> kgchain::Result<()> {
    for bc in [Boundary::Dirichlet, Boundary::Periodic] {
        let params = LatticeParams::new(127, 0.5, 0.0, 0.0, bc)?;
        let m = params.sites();
        // something smooth plus something rough
        let q: Vec<f64> = (0..m).map(|i| (0.1 * i as f64).sin() + 0.01 * ((i * 7919) % 13) as f64).collect();
        let p: Vec<f64> = (0..m).map(|i| (0.03 * i as f64).cos()).collect();
        let state = SiteState::new(p, q, 0.0)?;

        let fast = ModeTransform::new(&params);
        let slow = ModeTransform::with_path(&params, TransformPath::Reference);
        let modes = fast.to_modes(&state)?;
        let reference = slow.to_modes(&state)?;
        let back = fast.from_modes(&modes)?;

        let diff = modes.q_hat.iter().zip(&reference.q_hat).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let sum: f64 = mode_energies(&modes, fast.freqs()).iter().sum();
        let h0 = quadratic_energy(&params, &state);
        println!("{bc:?}: fast vs reference {diff:.2e}, round trip {:.2e}", back.max_deviation(&state));
        println!("  sum E_k = {sum:.15}, H0 = {h0:.15}");
    }
    Ok(())
}
