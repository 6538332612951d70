//! Chain model: parameters, phase points, energy and forces.
//!
//! A Dirichlet chain has `N` moving sites `j = 1..=N` with fixed walls
//! `q_0 = q_{N+1} = 0`. A periodic chain has `2N + 2` sites
//! `j = -(N+1)..=N`, stored at array index `j + N + 1`.
//!
//! The odd extension embeds a Dirichlet chain into the periodic chain of
//! doubled size. For `alpha = 0` the plain periodic equations preserve the
//! skew-symmetric subspace; for `alpha != 0` the cubic term has to be
//! weighted by the discrete sign sequence, see [`ExtendedChain`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    Dirichlet,
    Periodic,
}

/// Upper bound on the coupling for which the normal-form estimates hold.
pub const THEOREM_COUPLING_LIMIT: f64 = 1.0 / 3.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticeParams {
    pub n: usize,
    pub a: f64,
    pub alpha: f64,
    pub beta: f64,
    pub bc: Boundary,
}

impl LatticeParams {
    pub fn new(n: usize, a: f64, alpha: f64, beta: f64, bc: Boundary) -> Result<Self> {
        let params = LatticeParams { n, a, alpha, beta, bc };
        params.validate()?;
        if !params.in_theorem_regime() {
            log::warn!("coupling a = {a} is outside the normal-form regime a < 1/3");
        }
        Ok(params)
    }

    pub fn dirichlet(n: usize, a: f64, alpha: f64, beta: f64) -> Result<Self> {
        Self::new(n, a, alpha, beta, Boundary::Dirichlet)
    }

    pub fn periodic(n: usize, a: f64, alpha: f64, beta: f64) -> Result<Self> {
        Self::new(n, a, alpha, beta, Boundary::Periodic)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 1 {
            return Err(Error::InvalidParams("N must be at least 1".into()));
        }
        for (name, v) in [("a", self.a), ("alpha", self.alpha), ("beta", self.beta)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidParams(format!("{name} = {v} must be finite and >= 0")));
            }
        }
        Ok(())
    }

    pub fn in_theorem_regime(&self) -> bool {
        self.a < THEOREM_COUPLING_LIMIT
    }

    /// Number of moving sites: `N` (Dirichlet) or `2N + 2` (periodic).
    pub fn sites(&self) -> usize {
        match self.bc {
            Boundary::Dirichlet => self.n,
            Boundary::Periodic => 2 * self.n + 2,
        }
    }

    /// Lattice spacing of the interpolating torus, `pi / (N + 1)`.
    pub fn mu(&self) -> f64 {
        std::f64::consts::PI / (self.n as f64 + 1.0)
    }

    /// Site label `j` stored at array index `idx`.
    pub fn site_label(&self, idx: usize) -> i64 {
        match self.bc {
            Boundary::Dirichlet => idx as i64 + 1,
            Boundary::Periodic => idx as i64 - (self.n as i64 + 1),
        }
    }

    pub fn site_labels(&self) -> Vec<i64> {
        (0..self.sites()).map(|i| self.site_label(i)).collect()
    }

    /// Largest linear frequency, `sqrt(1 + 4a)`.
    pub fn omega_max(&self) -> f64 {
        (1.0 + 4.0 * self.a).sqrt()
    }

    /// Same chain with periodic boundary conditions on `2N + 2` sites.
    pub fn with_bc(&self, bc: Boundary) -> Self {
        LatticeParams { bc, ..*self }
    }

    pub fn zero_state(&self) -> SiteState {
        SiteState::zeros(self.sites())
    }

    pub(crate) fn check_len(&self, len: usize) -> Result<()> {
        if len != self.sites() {
            return Err(Error::LengthMismatch { expected: self.sites(), got: len });
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiteState {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub t: f64,
}

impl SiteState {
    pub fn new(p: Vec<f64>, q: Vec<f64>, t: f64) -> Result<Self> {
        if p.len() != q.len() {
            return Err(Error::LengthMismatch { expected: p.len(), got: q.len() });
        }
        let s = SiteState { p, q, t };
        s.check_finite()?;
        Ok(s)
    }

    pub fn zeros(len: usize) -> Self {
        SiteState { p: vec![0.0; len], q: vec![0.0; len], t: 0.0 }
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.p.iter().chain(&self.q).all(|v| v.is_finite())
    }

    pub fn check_finite(&self) -> Result<()> {
        if let Some(i) = self.p.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "momenta", index: i });
        }
        if let Some(i) = self.q.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "positions", index: i });
        }
        Ok(())
    }

    /// Largest site-wise difference in either component.
    pub fn max_deviation(&self, other: &SiteState) -> f64 {
        self.p
            .iter()
            .zip(&other.p)
            .chain(self.q.iter().zip(&other.q))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Separable chain potential `V(q)`; the kinetic part is always `sum p^2 / 2`.
pub trait Potential {
    fn sites(&self) -> usize;
    /// Writes `-dV/dq` into `out`. Inputs are assumed validated.
    fn force_into(&self, q: &[f64], out: &mut [f64]);
    fn potential_energy(&self, q: &[f64]) -> f64;
    fn omega_max(&self) -> f64;

    fn energy(&self, state: &SiteState) -> f64 {
        let kinetic: f64 = state.p.iter().map(|p| 0.5 * p * p).sum();
        kinetic + self.potential_energy(&state.q)
    }
}

#[inline]
fn onsite_force(q: f64, alpha: f64, beta: f64) -> f64 {
    -q - alpha * q * q - beta * q * q * q
}

#[inline]
fn onsite_energy(q: f64, alpha: f64, beta: f64) -> f64 {
    let q2 = q * q;
    0.5 * q2 + alpha * q2 * q / 3.0 + 0.25 * beta * q2 * q2
}

impl Potential for LatticeParams {
    fn sites(&self) -> usize {
        LatticeParams::sites(self)
    }

    fn force_into(&self, q: &[f64], out: &mut [f64]) {
        let (a, alpha, beta) = (self.a, self.alpha, self.beta);
        let m = q.len();
        match self.bc {
            Boundary::Dirichlet => {
                for j in 0..m {
                    let left = if j == 0 { 0.0 } else { q[j - 1] };
                    let right = if j + 1 == m { 0.0 } else { q[j + 1] };
                    out[j] = onsite_force(q[j], alpha, beta) + a * (right - 2.0 * q[j] + left);
                }
            }
            Boundary::Periodic => {
                for j in 0..m {
                    let left = q[(j + m - 1) % m];
                    let right = q[(j + 1) % m];
                    out[j] = onsite_force(q[j], alpha, beta) + a * (right - 2.0 * q[j] + left);
                }
            }
        }
    }

    fn potential_energy(&self, q: &[f64]) -> f64 {
        let onsite: f64 = q.iter().map(|&x| onsite_energy(x, self.alpha, self.beta)).sum();
        onsite + 0.5 * self.a * bond_sum(q, self.bc)
    }

    fn omega_max(&self) -> f64 {
        LatticeParams::omega_max(self)
    }
}

/// Sum of squared bond stretches, including the two wall springs for Dirichlet.
fn bond_sum(q: &[f64], bc: Boundary) -> f64 {
    let m = q.len();
    if m == 0 {
        return 0.0;
    }
    let inner: f64 = q.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum();
    match bc {
        Boundary::Dirichlet => inner + q[0] * q[0] + q[m - 1] * q[m - 1],
        Boundary::Periodic => inner + (q[0] - q[m - 1]).powi(2),
    }
}

/// Checked force evaluation.
pub fn eval_force(params: &LatticeParams, q: &[f64]) -> Result<Vec<f64>> {
    params.check_len(q.len())?;
    if let Some(i) = q.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { what: "positions", index: i });
    }
    let mut out = vec![0.0; q.len()];
    params.force_into(q, &mut out);
    Ok(out)
}

/// Checked total energy `H = H0 + H1 + H2`.
pub fn eval_energy(params: &LatticeParams, state: &SiteState) -> Result<f64> {
    params.check_len(state.len())?;
    state.check_finite()?;
    Ok(params.energy(state))
}

/// Quadratic part `H0` of the energy.
pub fn quadratic_energy(params: &LatticeParams, state: &SiteState) -> f64 {
    let kinetic: f64 = state.p.iter().map(|p| 0.5 * p * p).sum();
    let onsite: f64 = state.q.iter().map(|q| 0.5 * q * q).sum();
    kinetic + onsite + 0.5 * params.a * bond_sum(&state.q, params.bc)
}

/// Energy density: `H0` per moving site.
pub fn energy_density(params: &LatticeParams, state: &SiteState) -> f64 {
    quadratic_energy(params, state) / params.sites() as f64
}

/// Discrete sign of the site label on the periodic lattice of `2N + 2` sites.
#[derive(Clone, Debug, PartialEq)]
pub struct StepSequence {
    pub s: Vec<f64>,
}

impl StepSequence {
    pub fn new(n: usize) -> Self {
        let s = (0..2 * n + 2)
            .map(|idx| {
                let j = idx as i64 - (n as i64 + 1);
                match j.signum() {
                    1 => 1.0,
                    0 => 0.0,
                    _ => -1.0,
                }
            })
            .collect();
        StepSequence { s }
    }
}

/// Periodic chain of `2N + 2` sites whose cubic term carries the discrete
/// sign `s_j`, so that skew-symmetric states evolve exactly like the
/// Dirichlet chain they extend.
#[derive(Clone, Debug)]
pub struct ExtendedChain {
    pub params: LatticeParams,
    pub step: StepSequence,
}

impl ExtendedChain {
    /// `params` describes the Dirichlet chain being extended.
    pub fn new(params: &LatticeParams) -> Result<Self> {
        if params.bc != Boundary::Dirichlet {
            return Err(Error::WrongBoundary { op: "ExtendedChain::new", expected: Boundary::Dirichlet });
        }
        Ok(ExtendedChain { params: params.with_bc(Boundary::Periodic), step: StepSequence::new(params.n) })
    }

    pub fn periodic_params(&self) -> &LatticeParams {
        &self.params
    }
}

impl Potential for ExtendedChain {
    fn sites(&self) -> usize {
        self.step.s.len()
    }

    fn force_into(&self, q: &[f64], out: &mut [f64]) {
        let LatticeParams { a, alpha, beta, .. } = self.params;
        let m = q.len();
        for j in 0..m {
            let x = q[j];
            let left = q[(j + m - 1) % m];
            let right = q[(j + 1) % m];
            out[j] = -x - alpha * self.step.s[j] * x * x - beta * x * x * x + a * (right - 2.0 * x + left);
        }
    }

    fn potential_energy(&self, q: &[f64]) -> f64 {
        let LatticeParams { a, alpha, beta, .. } = self.params;
        let onsite: f64 = q
            .iter()
            .zip(&self.step.s)
            .map(|(&x, &s)| {
                let x2 = x * x;
                0.5 * x2 + alpha * s * x2 * x / 3.0 + 0.25 * beta * x2 * x2
            })
            .sum();
        onsite + 0.5 * a * bond_sum(q, Boundary::Periodic)
    }

    fn omega_max(&self) -> f64 {
        self.params.omega_max()
    }
}

/// Skew-symmetric extension of a Dirichlet state onto `2N + 2` periodic sites.
pub fn odd_extend(params: &LatticeParams, state: &SiteState) -> Result<SiteState> {
    if params.bc != Boundary::Dirichlet {
        return Err(Error::WrongBoundary { op: "odd_extend", expected: Boundary::Dirichlet });
    }
    params.check_len(state.len())?;
    let extend = |x: &[f64]| {
        let n = x.len();
        let mut out = vec![0.0; 2 * n + 2];
        for j in 1..=n {
            out[n + 1 + j] = x[j - 1];
            out[n + 1 - j] = -x[j - 1];
        }
        out
    };
    Ok(SiteState { p: extend(&state.p), q: extend(&state.q), t: state.t })
}

/// Tolerance on the skew-symmetry defect accepted by [`restrict_odd`].
pub const ODD_TOLERANCE: f64 = 1e-8;

/// Largest defect `|x_j + x_{-j}|` over both components, including the
/// fixed sites `j = 0` and `j = -(N+1)`.
pub fn odd_asymmetry(extended: &SiteState) -> Result<f64> {
    let m = extended.len();
    if m < 4 || m % 2 != 0 {
        return Err(Error::InvalidParams(format!("{m} sites is not a periodic lattice of size 2N+2")));
    }
    let n = m / 2 - 1;
    let defect = |x: &[f64]| {
        let mut d = x[0].abs().max(x[n + 1].abs());
        for j in 1..=n {
            d = d.max((x[n + 1 + j] + x[n + 1 - j]).abs());
        }
        d
    };
    Ok(defect(&extended.p).max(defect(&extended.q)))
}

/// Dirichlet slice `j = 1..=N` of a skew-symmetric periodic state.
pub fn restrict_odd(extended: &SiteState) -> Result<SiteState> {
    let asymmetry = odd_asymmetry(extended)?;
    if asymmetry > ODD_TOLERANCE {
        return Err(Error::Asymmetric { asymmetry });
    }
    let n = extended.len() / 2 - 1;
    Ok(SiteState {
        p: extended.p[n + 2..].to_vec(),
        q: extended.q[n + 2..].to_vec(),
        t: extended.t,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_state(len: usize, amp: f64, rng: &mut ChaCha8Rng) -> SiteState {
        SiteState {
            p: (0..len).map(|_| rng.gen_range(-amp..amp)).collect(),
            q: (0..len).map(|_| rng.gen_range(-amp..amp)).collect(),
            t: 0.0,
        }
    }

    #[test]
    fn harmonic_onsite_force() {
        let params = LatticeParams::dirichlet(5, 0.0, 0.0, 0.0).unwrap();
        let q = [0.3, -1.0, 2.0, 0.0, 0.5];
        let f = eval_force(&params, &q).unwrap();
        for (fi, qi) in f.iter().zip(q) {
            assert_eq!(*fi, -qi);
        }
    }

    #[test]
    fn dirichlet_force_by_hand() {
        let params = LatticeParams::dirichlet(3, 0.5, 0.25, 0.0).unwrap();
        let f = eval_force(&params, &[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(f, vec![-2.25, 0.5, 0.0]);
    }

    #[test]
    fn extended_cubic_vanishes_at_origin_site() {
        let params = LatticeParams::dirichlet(3, 0.0, 1.0, 0.0).unwrap();
        let chain = ExtendedChain::new(&params).unwrap();
        let mut q = vec![0.0; 8];
        q[4] = 0.7; // j = 0
        let mut f = vec![0.0; 8];
        chain.force_into(&q, &mut f);
        assert_eq!(f[4], -0.7);
    }

    #[test]
    fn energy_by_hand() {
        let params = LatticeParams::dirichlet(1, 0.5, 0.0, 0.0).unwrap();
        let state = SiteState::new(vec![0.0], vec![1.0], 0.0).unwrap();
        assert_eq!(eval_energy(&params, &state).unwrap(), 1.0);
        let zero = params.zero_state();
        assert_eq!(eval_energy(&params, &zero).unwrap(), 0.0);
    }

    #[test]
    fn rejects_bad_input() {
        let params = LatticeParams::dirichlet(4, 0.5, 0.1, 0.0).unwrap();
        assert!(matches!(eval_force(&params, &[0.0; 3]), Err(Error::LengthMismatch { .. })));
        assert!(matches!(eval_force(&params, &[0.0, f64::NAN, 0.0, 0.0]), Err(Error::NonFinite { .. })));
        assert!(LatticeParams::dirichlet(0, 0.5, 0.0, 0.0).is_err());
        assert!(LatticeParams::dirichlet(4, -0.1, 0.0, 0.0).is_err());
    }

    fn finite_difference_check<P: Potential>(pot: &P, q: &[f64]) {
        let mut f = vec![0.0; q.len()];
        pot.force_into(q, &mut f);
        let h = 1e-5;
        let mut qq = q.to_vec();
        for j in 0..q.len() {
            qq[j] = q[j] + h;
            let up = pot.potential_energy(&qq);
            qq[j] = q[j] - h;
            let down = pot.potential_energy(&qq);
            qq[j] = q[j];
            let grad = (up - down) / (2.0 * h);
            let scale = f[j].abs().max(1.0);
            assert!((f[j] + grad).abs() / scale < 1e-8, "site {j}: force {} vs -grad {}", f[j], -grad);
        }
    }

    #[test]
    fn force_is_negative_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in [7, 15, 31] {
            for bc in [Boundary::Dirichlet, Boundary::Periodic] {
                let params = LatticeParams::new(n, 0.5, 0.3, 0.2, bc).unwrap();
                let s = random_state(params.sites(), 0.8, &mut rng);
                finite_difference_check(&params, &s.q);
            }
            let ext = ExtendedChain::new(&LatticeParams::dirichlet(n, 0.4, 0.3, 0.1).unwrap()).unwrap();
            let s = random_state(ext.sites(), 0.8, &mut rng);
            finite_difference_check(&ext, &s.q);
        }
    }

    #[test]
    fn involution_equivariance_without_cubic() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let params = LatticeParams::periodic(9, 0.5, 0.0, 0.3).unwrap();
        let m = params.sites();
        let n1 = params.n + 1;
        let q: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
        // (Sq)_j = -q_{-j}, index of -j is (2(N+1) - idx) mod m
        let mirror = |x: &[f64]| (0..m).map(|i| -x[(2 * n1 + m - i) % m]).collect::<Vec<_>>();
        let f_of_mirror = eval_force(&params, &mirror(&q)).unwrap();
        let mirror_of_f = mirror(&eval_force(&params, &q).unwrap());
        for (a, b) in f_of_mirror.iter().zip(&mirror_of_f) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn odd_extension_layout() {
        let params = LatticeParams::dirichlet(2, 0.5, 0.0, 0.0).unwrap();
        let s = SiteState::new(vec![0.5, -0.25], vec![1.0, 2.0], 3.0).unwrap();
        let e = odd_extend(&params, &s).unwrap();
        assert_eq!(e.q, vec![0.0, -2.0, -1.0, 0.0, 1.0, 2.0]);
        assert_eq!(e.p, vec![0.0, 0.25, -0.5, 0.0, 0.5, -0.25]);
        assert_eq!(odd_asymmetry(&e).unwrap(), 0.0);
        assert_eq!(restrict_odd(&e).unwrap(), s);
        let pbc = params.with_bc(Boundary::Periodic);
        assert!(matches!(odd_extend(&pbc, &pbc.zero_state()), Err(Error::WrongBoundary { .. })));
    }

    #[test]
    fn restrict_reports_asymmetry() {
        let params = LatticeParams::dirichlet(4, 0.5, 0.0, 0.0).unwrap();
        let s = SiteState::new(vec![0.1; 4], vec![0.2, 0.3, -0.1, 0.4], 0.0).unwrap();
        let mut e = odd_extend(&params, &s).unwrap();
        e.q[2] += 1e-6;
        match restrict_odd(&e) {
            Err(Error::Asymmetric { asymmetry }) => assert!((asymmetry - 1e-6).abs() < 1e-12),
            other => panic!("expected asymmetry error, got {other:?}"),
        }
    }

    #[test]
    fn extension_commutes_with_force_and_doubles_energy() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for alpha in [0.0, 0.35] {
            let params = LatticeParams::dirichlet(12, 0.5, alpha, 0.2).unwrap();
            let chain = ExtendedChain::new(&params).unwrap();
            let s = random_state(params.sites(), 0.5, &mut rng);
            let e = odd_extend(&params, &s).unwrap();

            let f_dbc = eval_force(&params, &s.q).unwrap();
            let mut f_ext = vec![0.0; e.len()];
            chain.force_into(&e.q, &mut f_ext);
            let lifted = odd_extend(&params, &SiteState { p: f_dbc.clone(), q: f_dbc, t: 0.0 }).unwrap();
            for (a, b) in f_ext.iter().zip(&lifted.q) {
                assert!((a - b).abs() < 1e-14);
            }

            let h_dbc = params.energy(&s);
            assert!((chain.energy(&e) - 2.0 * h_dbc).abs() < 1e-13 * h_dbc.abs().max(1.0));
            if alpha == 0.0 {
                let pbc = chain.periodic_params();
                assert!((pbc.energy(&e) - 2.0 * h_dbc).abs() < 1e-13 * h_dbc.abs().max(1.0));
            }
        }
    }

    #[test]
    fn step_sequence_signs() {
        let s = StepSequence::new(2);
        assert_eq!(s.s, vec![-1.0, -1.0, -1.0, 0.0, 1.0, 1.0]);
    }
}
