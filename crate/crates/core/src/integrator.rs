//! Symplectic time stepping for the separable chain Hamiltonian.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{LatticeParams, Potential, SiteState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Leapfrog,
    #[default]
    Yoshida4,
}

/// Substep weights of the fourth-order triple jump.
pub fn yoshida_weights() -> [f64; 3] {
    let w1 = 1.0 / (2.0 - 2f64.powf(1.0 / 3.0));
    let w0 = 1.0 - 2.0 * w1;
    [w1, w0, w1]
}

impl Method {
    pub fn order(self) -> u32 {
        match self {
            Method::Leapfrog => 2,
            Method::Yoshida4 => 4,
        }
    }

    /// Largest absolute substep fraction of one step.
    fn max_substep(self) -> f64 {
        match self {
            Method::Leapfrog => 1.0,
            Method::Yoshida4 => yoshida_weights().iter().fold(0.0, |m, w| m.max(w.abs())),
        }
    }
}

/// Linear stability limit of a leapfrog substep: `h * omega_max < 2`.
pub const STABILITY_LIMIT: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    #[serde(default)]
    pub method: Method,
    pub dt: f64,
    pub t_end: f64,
    #[serde(default = "one")]
    pub sample_every: u64,
    /// Zero disables checkpoints.
    #[serde(default)]
    pub checkpoint_every: u64,
}

fn one() -> u64 {
    1
}

impl IntegratorConfig {
    pub fn new(method: Method, dt: f64, t_end: f64) -> Self {
        IntegratorConfig { method, dt, t_end, sample_every: 1, checkpoint_every: 0 }
    }

    pub fn sampling(mut self, every: u64) -> Self {
        self.sample_every = every;
        self
    }

    pub fn checkpoints(mut self, every: u64) -> Self {
        self.checkpoint_every = every;
        self
    }

    pub fn validate(&self, omega_max: f64) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidConfig(format!("dt = {} must be positive", self.dt)));
        }
        if !self.t_end.is_finite() || self.t_end < 0.0 {
            return Err(Error::InvalidConfig(format!("t_end = {} must be finite and >= 0", self.t_end)));
        }
        if self.sample_every == 0 {
            return Err(Error::InvalidConfig("sample_every must be at least 1".into()));
        }
        check_stability(self.method, self.dt, omega_max)
    }

    /// Number of steps from `t0` to `t_end`.
    pub fn steps_from(&self, t0: f64) -> u64 {
        ((self.t_end - t0) / self.dt).round().max(0.0) as u64
    }
}

pub fn check_stability(method: Method, dt: f64, omega_max: f64) -> Result<()> {
    let product = dt.abs() * omega_max * method.max_substep();
    if product >= STABILITY_LIMIT {
        return Err(Error::Unstable { dt, product, limit: STABILITY_LIMIT });
    }
    Ok(())
}

/// Reusable stepper. The force at the current positions is carried over
/// between steps, so a leapfrog step costs one force evaluation.
pub struct Stepper<'a, P: Potential> {
    pot: &'a P,
    method: Method,
    dt: f64,
    force: Vec<f64>,
    fresh: bool,
}

impl<'a, P: Potential> Stepper<'a, P> {
    pub fn new(pot: &'a P, method: Method, dt: f64) -> Result<Self> {
        check_stability(method, dt, pot.omega_max())?;
        Ok(Stepper { pot, method, dt, force: vec![0.0; pot.sites()], fresh: false })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Reverse the direction of time.
    pub fn set_dt(&mut self, dt: f64) -> Result<()> {
        check_stability(self.method, dt, self.pot.omega_max())?;
        self.dt = dt;
        Ok(())
    }

    /// Call after modifying positions outside of [`Stepper::advance`].
    pub fn invalidate(&mut self) {
        self.fresh = false;
    }

    fn kdk(&mut self, state: &mut SiteState, h: f64) {
        if !self.fresh {
            self.pot.force_into(&state.q, &mut self.force);
            self.fresh = true;
        }
        let half = 0.5 * h;
        for (p, f) in state.p.iter_mut().zip(&self.force) {
            *p += half * f;
        }
        for (q, p) in state.q.iter_mut().zip(&state.p) {
            *q += h * p;
        }
        self.pot.force_into(&state.q, &mut self.force);
        for (p, f) in state.p.iter_mut().zip(&self.force) {
            *p += half * f;
        }
    }

    /// One step in place; `state.t` advances by `dt`.
    pub fn advance(&mut self, state: &mut SiteState) {
        match self.method {
            Method::Leapfrog => self.kdk(state, self.dt),
            Method::Yoshida4 => {
                for w in yoshida_weights() {
                    self.kdk(state, w * self.dt);
                }
            }
        }
        state.t += self.dt;
    }
}

/// One step of `method` from `state`.
pub fn step(params: &LatticeParams, state: &SiteState, dt: f64, method: Method) -> Result<SiteState> {
    params.check_len(state.len())?;
    let mut stepper = Stepper::new(params, method, dt)?;
    let mut out = state.clone();
    stepper.advance(&mut out);
    Ok(out)
}

/// Callbacks fired by [`integrate`].
pub trait Observer {
    fn sample(&mut self, _state: &SiteState) -> Result<()> {
        Ok(())
    }

    fn checkpoint(&mut self, _state: &SiteState) -> Result<()> {
        Ok(())
    }
}

/// Advance `state` to `config.t_end`.
///
/// Samples fire at the initial instant and every `sample_every` steps,
/// checkpoints every `checkpoint_every` steps. The state is checked for
/// non-finite entries at each of those instants and at the end.
pub fn integrate<P: Potential>(
    pot: &P,
    state: &SiteState,
    config: &IntegratorConfig,
    observers: &mut [&mut dyn Observer],
) -> Result<SiteState> {
    config.validate(pot.omega_max())?;
    if state.len() != pot.sites() {
        return Err(Error::LengthMismatch { expected: pot.sites(), got: state.len() });
    }
    state.check_finite()?;
    let mut stepper = Stepper::new(pot, config.method, config.dt)?;
    let mut cur = state.clone();
    let t0 = state.t;
    let steps = config.steps_from(t0);
    let mut last_good = Some(t0);
    for obs in observers.iter_mut() {
        obs.sample(&cur)?;
    }
    for i in 1..=steps {
        stepper.advance(&mut cur);
        cur.t = t0 + i as f64 * config.dt;
        let sample = i % config.sample_every == 0;
        let ckpt = config.checkpoint_every > 0 && i % config.checkpoint_every == 0;
        if sample || ckpt || i == steps {
            if !cur.is_finite() {
                return Err(Error::Diverged { t: cur.t, last_good });
            }
            last_good = Some(cur.t);
        }
        if sample {
            for obs in observers.iter_mut() {
                obs.sample(&cur)?;
            }
        }
        if ckpt {
            for obs in observers.iter_mut() {
                obs.checkpoint(&cur)?;
            }
        }
    }
    Ok(cur)
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// Persisted phase point with everything needed to resume.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub params: LatticeParams,
    pub config: IntegratorConfig,
    pub config_hash: String,
    pub state: SiteState,
}

impl Checkpoint {
    pub fn new(params: LatticeParams, config: IntegratorConfig, config_hash: &str, state: SiteState) -> Self {
        Checkpoint { version: CHECKPOINT_VERSION, params, config, config_hash: config_hash.to_string(), state }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let version = value.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointVersion(version));
        }
        Ok(serde_json::from_value(value)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_json()?)?;
        fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

/// Observer writing `checkpoint.json` in a directory, replacing the previous one.
pub struct CheckpointWriter {
    pub path: PathBuf,
    params: LatticeParams,
    config: IntegratorConfig,
    config_hash: String,
    pub written: usize,
}

impl CheckpointWriter {
    pub fn new(dir: &Path, params: LatticeParams, config: IntegratorConfig, config_hash: &str) -> Self {
        CheckpointWriter {
            path: dir.join("checkpoint.json"),
            params,
            config,
            config_hash: config_hash.to_string(),
            written: 0,
        }
    }
}

impl Observer for CheckpointWriter {
    fn checkpoint(&mut self, state: &SiteState) -> Result<()> {
        Checkpoint::new(self.params, self.config, &self.config_hash, state.clone()).save(&self.path)?;
        self.written += 1;
        Ok(())
    }
}

/// Records `(t, H)` at every sample.
pub struct EnergyMonitor<'a, P: Potential> {
    pot: &'a P,
    pub times: Vec<f64>,
    pub energies: Vec<f64>,
}

impl<'a, P: Potential> EnergyMonitor<'a, P> {
    pub fn new(pot: &'a P) -> Self {
        EnergyMonitor { pot, times: Vec::new(), energies: Vec::new() }
    }

    /// `max |H(t) - H(0)| / |H(0)|` over the recorded samples.
    pub fn max_relative_drift(&self) -> f64 {
        let Some(&h0) = self.energies.first() else { return 0.0 };
        if h0 == 0.0 {
            return self.energies.iter().fold(0.0, |m, h| m.max(h.abs()));
        }
        self.energies.iter().fold(0.0, |m, h| m.max(((h - h0) / h0).abs()))
    }
}

impl<P: Potential> Observer for EnergyMonitor<'_, P> {
    fn sample(&mut self, state: &SiteState) -> Result<()> {
        self.times.push(state.t);
        self.energies.push(self.pot.energy(state));
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{odd_asymmetry, odd_extend, Boundary};
    use crate::spectral::{frequency, mode_index, ModeState, ModeTransform};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn smooth_state(params: &LatticeParams, amp: f64) -> SiteState {
        let labels = params.site_labels();
        let mu = params.mu();
        SiteState {
            p: labels.iter().map(|&j| 0.3 * amp * (2.0 * mu * j as f64).sin()).collect(),
            q: labels.iter().map(|&j| amp * (mu * j as f64).sin()).collect(),
            t: 0.0,
        }
    }

    fn run(params: &LatticeParams, s: &SiteState, method: Method, dt: f64, t_end: f64) -> SiteState {
        integrate(params, s, &IntegratorConfig::new(method, dt, t_end), &mut []).unwrap()
    }

    #[test]
    fn weights_sum_to_one() {
        let w = yoshida_weights();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(w[1] < 0.0);
    }

    #[test]
    fn stability_bound_enforced() {
        let params = LatticeParams::dirichlet(8, 0.5, 0.0, 0.0).unwrap();
        let wmax = params.omega_max();
        assert!(IntegratorConfig::new(Method::Leapfrog, 1.9 / wmax, 1.0).validate(wmax).is_ok());
        assert!(matches!(
            IntegratorConfig::new(Method::Leapfrog, 2.0 / wmax, 1.0).validate(wmax),
            Err(Error::Unstable { .. })
        ));
        assert!(IntegratorConfig::new(Method::Yoshida4, 1.9 / wmax, 1.0).validate(wmax).is_err());
        assert!(IntegratorConfig::new(Method::Yoshida4, 0.1, 1.0).validate(wmax).is_ok());
        assert!(IntegratorConfig::new(Method::Leapfrog, -0.1, 1.0).validate(wmax).is_err());
        assert!(IntegratorConfig::new(Method::Leapfrog, 0.1, 1.0).sampling(0).validate(wmax).is_err());
    }

    #[test]
    fn harmonic_mode_rotates() {
        let params = LatticeParams::dirichlet(15, 0.5, 0.0, 0.0).unwrap();
        let tr = ModeTransform::new(&params);
        let k = 3;
        let idx = mode_index(&params, k).unwrap();
        let w = frequency(k, &params);
        let mut m = ModeState::zeros(15);
        m.q_hat[idx] = 1.0;
        let s0 = tr.from_modes(&m).unwrap();
        let (t_end, dt) = (20.0, 0.05);
        let end = tr.to_modes(&run(&params, &s0, Method::Leapfrog, dt, t_end)).unwrap();
        // Hamilton's equations in mode variables: dq/dt = w p, dp/dt = -w q
        let phase = end.p_hat[idx].atan2(end.q_hat[idx]);
        let expect = -(w * t_end).sin().atan2((w * t_end).cos());
        let mut err = (phase - expect).abs();
        err = err.min(2.0 * std::f64::consts::PI - err);
        // secular drift w^3 dt^2 t / 24 plus the bounded ellipse distortion
        assert!(err <= w.powi(3) * dt * dt * t_end / 24.0 * 1.01 + w * w * dt * dt / 4.0, "phase error {err}");
        for (i, (p, q)) in end.p_hat.iter().zip(&end.q_hat).enumerate() {
            if i != idx {
                assert!(p.abs() + q.abs() < 1e-12);
            }
        }
    }

    fn richardson_ratio(method: Method) -> f64 {
        let params = LatticeParams::dirichlet(31, 0.5, 0.25, 0.0).unwrap();
        let s = smooth_state(&params, 0.5);
        let dt = 0.1;
        let x1 = run(&params, &s, method, dt, 10.0);
        let x2 = run(&params, &s, method, dt / 2.0, 10.0);
        let x4 = run(&params, &s, method, dt / 4.0, 10.0);
        x1.max_deviation(&x2) / x2.max_deviation(&x4)
    }

    #[test]
    fn self_convergence_ratios() {
        let lf = richardson_ratio(Method::Leapfrog);
        let y4 = richardson_ratio(Method::Yoshida4);
        assert!((lf - 4.0).abs() < 0.4, "leapfrog ratio {lf}");
        assert!((y4 - 16.0).abs() < 2.0, "yoshida ratio {y4}");
    }

    #[test]
    fn time_reversal() {
        let params = LatticeParams::dirichlet(31, 0.5, 0.25, 0.0).unwrap();
        let s = smooth_state(&params, 0.5);
        for method in [Method::Leapfrog, Method::Yoshida4] {
            let mut stepper = Stepper::new(&params, method, 0.05).unwrap();
            let mut x = s.clone();
            for _ in 0..10_000 {
                stepper.advance(&mut x);
            }
            stepper.set_dt(-0.05).unwrap();
            stepper.invalidate();
            for _ in 0..10_000 {
                stepper.advance(&mut x);
            }
            assert!(x.max_deviation(&s) < 1e-10, "{method:?}: {}", x.max_deviation(&s));
        }
    }

    #[test]
    fn zero_state_is_fixed() {
        let params = LatticeParams::periodic(7, 0.5, 0.25, 0.25).unwrap();
        let z = params.zero_state();
        let end = run(&params, &z, Method::Yoshida4, 0.1, 50.0);
        assert!(end.p.iter().chain(&end.q).all(|&v| v == 0.0));
        assert!((end.t - 50.0).abs() < 1e-12);
    }

    #[test]
    fn single_site_jacobian_is_unimodular() {
        let params = LatticeParams::dirichlet(1, 0.5, 0.25, 0.3).unwrap();
        let h = 1e-6;
        for method in [Method::Leapfrog, Method::Yoshida4] {
            let x0 = (0.4, 0.7);
            let f = |p: f64, q: f64| {
                let s = step(&params, &SiteState { p: vec![p], q: vec![q], t: 0.0 }, 0.1, method).unwrap();
                (s.p[0], s.q[0])
            };
            let (pp, qp) = f(x0.0 + h, x0.1);
            let (pm, qm) = f(x0.0 - h, x0.1);
            let (pq, qq) = f(x0.0, x0.1 + h);
            let (pn, qn) = f(x0.0, x0.1 - h);
            let j11 = (pp - pm) / (2.0 * h);
            let j21 = (qp - qm) / (2.0 * h);
            let j12 = (pq - pn) / (2.0 * h);
            let j22 = (qq - qn) / (2.0 * h);
            let det = j11 * j22 - j12 * j21;
            assert!((det - 1.0).abs() < 1e-9, "{method:?}: det {det}");
        }
    }

    #[test]
    fn deterministic_runs() {
        let params = LatticeParams::dirichlet(31, 0.5, 0.25, 0.0).unwrap();
        let s = smooth_state(&params, 0.3);
        let a = run(&params, &s, Method::Yoshida4, 0.1, 30.0);
        let b = run(&params, &s, Method::Yoshida4, 0.1, 30.0);
        assert_eq!(a, b);
    }

    #[test]
    fn odd_data_stays_odd() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let dbc = LatticeParams::dirichlet(15, 0.5, 0.0, 0.25).unwrap();
        let s = SiteState {
            p: (0..15).map(|_| rng.gen_range(-0.2..0.2)).collect(),
            q: (0..15).map(|_| rng.gen_range(-0.2..0.2)).collect(),
            t: 0.0,
        };
        let ext = odd_extend(&dbc, &s).unwrap();
        let pbc = dbc.with_bc(Boundary::Periodic);
        let end = run(&pbc, &ext, Method::Yoshida4, 0.1, 100.0);
        assert!(odd_asymmetry(&end).unwrap() < 1e-10);
    }

    struct Counter(usize, usize);
    impl Observer for Counter {
        fn sample(&mut self, _: &SiteState) -> Result<()> {
            self.0 += 1;
            Ok(())
        }
        fn checkpoint(&mut self, _: &SiteState) -> Result<()> {
            self.1 += 1;
            Ok(())
        }
    }

    #[test]
    fn observer_cadence() {
        let params = LatticeParams::dirichlet(4, 0.5, 0.0, 0.0).unwrap();
        let mut c = Counter(0, 0);
        let cfg = IntegratorConfig::new(Method::Leapfrog, 0.1, 10.0).sampling(10).checkpoints(25);
        integrate(&params, &smooth_state(&params, 0.1), &cfg, &mut [&mut c]).unwrap();
        assert_eq!((c.0, c.1), (11, 4));
    }

    #[test]
    fn divergence_reports_last_good() {
        // a huge quartic amplitude blows up within a few steps
        let params = LatticeParams::dirichlet(4, 0.0, 0.0, 1.0).unwrap();
        let s = SiteState { p: vec![0.0; 4], q: vec![1e3; 4], t: 0.0 };
        let cfg = IntegratorConfig::new(Method::Leapfrog, 0.5, 100.0).sampling(1);
        match integrate(&params, &s, &cfg, &mut []) {
            Err(Error::Diverged { last_good: Some(t), .. }) => assert!(t >= 0.0),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let params = LatticeParams::dirichlet(9, 0.5, 0.25, 0.0).unwrap();
        let s = run(&params, &smooth_state(&params, 0.3), Method::Yoshida4, 0.1, 3.3);
        let cfg = IntegratorConfig::new(Method::Yoshida4, 0.1, 3.3);
        let dir = tempfile::tempdir().unwrap();
        let ck = Checkpoint::new(params, cfg, "abc", s.clone());
        let path = dir.path().join("c.json");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);
        for (a, b) in back.state.q.iter().zip(&s.q) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        let bumped = ck.to_json().unwrap().replace("\"version\":1", "\"version\":7");
        assert!(matches!(Checkpoint::from_json(&bumped), Err(Error::CheckpointVersion(7))));
    }
}
