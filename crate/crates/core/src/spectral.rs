//! Normal-mode basis, rescaled mode variables and weighted sequence norms.
//!
//! Mode arrays are ordered `k = 1..=N` for Dirichlet chains and
//! `k = 0, 1, -1, 2, -2, ..., N, -N, -(N+1)` for periodic chains.
//! Positive labels are sines, negative labels cosines.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Boundary, LatticeParams, SiteState};

/// Mode labels in storage order.
pub fn mode_labels(params: &LatticeParams) -> Vec<i64> {
    let n = params.n as i64;
    match params.bc {
        Boundary::Dirichlet => (1..=n).collect(),
        Boundary::Periodic => {
            let mut v = Vec::with_capacity(2 * params.n + 2);
            v.push(0);
            for k in 1..=n {
                v.push(k);
                v.push(-k);
            }
            v.push(-(n + 1));
            v
        }
    }
}

/// Storage index of mode `k`.
pub fn mode_index(params: &LatticeParams, k: i64) -> Result<usize> {
    let n = params.n as i64;
    match params.bc {
        Boundary::Dirichlet => {
            if (1..=n).contains(&k) {
                Ok((k - 1) as usize)
            } else {
                Err(Error::IndexOutOfRange { index: k, lo: 1, hi: n })
            }
        }
        Boundary::Periodic => match k {
            0 => Ok(0),
            k if k > 0 && k <= n => Ok((2 * k - 1) as usize),
            k if k < 0 && -k <= n => Ok((-2 * k) as usize),
            k if k == -(n + 1) => Ok((2 * n + 1) as usize),
            _ => Err(Error::IndexOutOfRange { index: k, lo: -(n + 1), hi: n }),
        },
    }
}

/// Value of the normalized basis vector `e_k` at site `j`.
pub fn basis_value(k: i64, j: i64, params: &LatticeParams) -> Result<f64> {
    let n = params.n as i64;
    let n1 = (n + 1) as f64;
    let theta = PI / n1;
    match params.bc {
        Boundary::Dirichlet => {
            mode_index(params, k)?;
            if !(0..=n + 1).contains(&j) {
                return Err(Error::IndexOutOfRange { index: j, lo: 0, hi: n + 1 });
            }
            Ok((2.0 / n1).sqrt() * ((j * k) as f64 * theta).sin())
        }
        Boundary::Periodic => {
            mode_index(params, k)?;
            if !(-(n + 1)..=n).contains(&j) {
                return Err(Error::IndexOutOfRange { index: j, lo: -(n + 1), hi: n });
            }
            let m = 2.0 * n1;
            Ok(if k == 0 {
                1.0 / m.sqrt()
            } else if k == -(n + 1) {
                (if j.rem_euclid(2) == 0 { 1.0 } else { -1.0 }) / m.sqrt()
            } else if k > 0 {
                ((j * k) as f64 * theta).sin() / n1.sqrt()
            } else {
                ((j * -k) as f64 * theta).cos() / n1.sqrt()
            })
        }
    }
}

/// Linear frequency of mode `k`.
pub fn frequency(k: i64, params: &LatticeParams) -> f64 {
    let s = (k as f64 * PI / (2.0 * (params.n as f64 + 1.0))).sin();
    (1.0 + 4.0 * params.a * s * s).sqrt()
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrequencyTable {
    pub labels: Vec<i64>,
    pub omega: Vec<f64>,
    /// `omega - 1`, evaluated without cancellation.
    pub nu: Vec<f64>,
}

pub fn frequencies(params: &LatticeParams) -> FrequencyTable {
    let labels = mode_labels(params);
    let mut omega = Vec::with_capacity(labels.len());
    let mut nu = Vec::with_capacity(labels.len());
    for &k in &labels {
        let s = (k as f64 * PI / (2.0 * (params.n as f64 + 1.0))).sin();
        let x = 4.0 * params.a * s * s;
        let w = (1.0 + x).sqrt();
        omega.push(w);
        nu.push(x / (w + 1.0));
    }
    FrequencyTable { labels, omega, nu }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeState {
    pub p_hat: Vec<f64>,
    pub q_hat: Vec<f64>,
    pub t: f64,
}

impl ModeState {
    pub fn zeros(len: usize) -> Self {
        ModeState { p_hat: vec![0.0; len], q_hat: vec![0.0; len], t: 0.0 }
    }

    pub fn len(&self) -> usize {
        self.q_hat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q_hat.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransformPath {
    #[default]
    Fast,
    Reference,
}

/// Precomputed transform between site and mode variables for one lattice.
#[derive(Clone)]
pub struct ModeTransform {
    params: LatticeParams,
    freqs: FrequencyTable,
    sqrt_omega: Vec<f64>,
    path: TransformPath,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for ModeTransform {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModeTransform").field("params", &self.params).field("path", &self.path).finish()
    }
}

impl ModeTransform {
    pub fn new(params: &LatticeParams) -> Self {
        Self::with_path(params, TransformPath::Fast)
    }

    pub fn with_path(params: &LatticeParams, path: TransformPath) -> Self {
        let freqs = frequencies(params);
        let sqrt_omega = freqs.omega.iter().map(|w| w.sqrt()).collect();
        let m = 2 * params.n + 2;
        let mut planner = FftPlanner::new();
        ModeTransform {
            params: *params,
            freqs,
            sqrt_omega,
            path,
            forward: planner.plan_fft_forward(m),
            inverse: planner.plan_fft_inverse(m),
        }
    }

    pub fn params(&self) -> &LatticeParams {
        &self.params
    }

    pub fn freqs(&self) -> &FrequencyTable {
        &self.freqs
    }

    pub fn labels(&self) -> &[i64] {
        &self.freqs.labels
    }

    pub fn path(&self) -> TransformPath {
        self.path
    }

    /// Basis coefficients `sum_j x_j e_k(j)` of two real site arrays at once.
    pub fn analyze_pair(&self, x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
        match self.path {
            TransformPath::Reference => (self.reference_analyze(x), self.reference_analyze(y)),
            TransformPath::Fast => match self.params.bc {
                Boundary::Dirichlet => self.dirichlet_pair(x, y),
                Boundary::Periodic => self.periodic_analyze(x, y),
            },
        }
    }

    /// Site arrays `sum_k c_k e_k(j)` of two coefficient arrays at once.
    pub fn synthesize_pair(&self, cx: &[f64], cy: &[f64]) -> (Vec<f64>, Vec<f64>) {
        match self.path {
            TransformPath::Reference => (self.reference_synthesize(cx), self.reference_synthesize(cy)),
            TransformPath::Fast => match self.params.bc {
                // The Dirichlet basis matrix is symmetric and orthogonal.
                Boundary::Dirichlet => self.dirichlet_pair(cx, cy),
                Boundary::Periodic => self.periodic_synthesize(cx, cy),
            },
        }
    }

    pub fn to_modes(&self, state: &SiteState) -> Result<ModeState> {
        self.params.check_len(state.len())?;
        let (mut p_hat, mut q_hat) = self.analyze_pair(&state.p, &state.q);
        for ((p, q), w) in p_hat.iter_mut().zip(q_hat.iter_mut()).zip(&self.sqrt_omega) {
            *p /= w;
            *q *= w;
        }
        Ok(ModeState { p_hat, q_hat, t: state.t })
    }

    pub fn from_modes(&self, modes: &ModeState) -> Result<SiteState> {
        self.params.check_len(modes.len())?;
        let cp: Vec<f64> = modes.p_hat.iter().zip(&self.sqrt_omega).map(|(p, w)| p * w).collect();
        let cq: Vec<f64> = modes.q_hat.iter().zip(&self.sqrt_omega).map(|(q, w)| q / w).collect();
        let (p, q) = self.synthesize_pair(&cp, &cq);
        Ok(SiteState { p, q, t: modes.t })
    }

    /// Mode energies of a site state.
    pub fn energies(&self, state: &SiteState) -> Result<Vec<f64>> {
        let modes = self.to_modes(state)?;
        Ok(mode_energies(&modes, &self.freqs))
    }

    fn reference_analyze(&self, x: &[f64]) -> Vec<f64> {
        let sites = self.params.site_labels();
        self.freqs
            .labels
            .iter()
            .map(|&k| {
                sites
                    .iter()
                    .zip(x)
                    .map(|(&j, v)| v * basis_value(k, j, &self.params).expect("labels in range"))
                    .sum()
            })
            .collect()
    }

    fn reference_synthesize(&self, c: &[f64]) -> Vec<f64> {
        self.params
            .site_labels()
            .iter()
            .map(|&j| {
                self.freqs
                    .labels
                    .iter()
                    .zip(c)
                    .map(|(&k, v)| v * basis_value(k, j, &self.params).expect("labels in range"))
                    .sum()
            })
            .collect()
    }

    fn dirichlet_pair(&self, x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.params.n;
        let m = 2 * n + 2;
        let mut buf = vec![Complex64::new(0.0, 0.0); m];
        for j in 1..=n {
            let z = Complex64::new(x[j - 1], y[j - 1]);
            buf[j] = z;
            buf[m - j] = -z;
        }
        self.forward.process(&mut buf);
        let scale = 0.5 * (2.0 / (n as f64 + 1.0)).sqrt();
        let cx = (1..=n).map(|k| -buf[k].im * scale).collect();
        let cy = (1..=n).map(|k| buf[k].re * scale).collect();
        (cx, cy)
    }

    fn periodic_analyze(&self, x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.params.n;
        let m = 2 * n + 2;
        let mut buf: Vec<Complex64> = x.iter().zip(y).map(|(&a, &b)| Complex64::new(a, b)).collect();
        self.forward.process(&mut buf);
        let split = |k: usize| {
            let zk = buf[k];
            let zc = buf[(m - k) % m].conj();
            ((zk + zc) * 0.5, (zk - zc) * Complex64::new(0.0, -0.5))
        };
        let r = (n as f64 + 1.0).sqrt();
        let rm = (m as f64).sqrt();
        let mut cx = Vec::with_capacity(m);
        let mut cy = Vec::with_capacity(m);
        let (x0, y0) = split(0);
        cx.push(x0.re / rm);
        cy.push(y0.re / rm);
        for k in 1..=n {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            let (xk, yk) = split(k);
            cx.push(-sign * xk.im / r);
            cy.push(-sign * yk.im / r);
            cx.push(sign * xk.re / r);
            cy.push(sign * yk.re / r);
        }
        let sign = if (n + 1) % 2 == 0 { 1.0 } else { -1.0 };
        let (xn, yn) = split(n + 1);
        cx.push(sign * xn.re / rm);
        cy.push(sign * yn.re / rm);
        (cx, cy)
    }

    fn periodic_synthesize(&self, cx: &[f64], cy: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.params.n;
        let m = 2 * n + 2;
        let r = (n as f64 + 1.0).sqrt();
        let rm = (m as f64).sqrt();
        let mut buf = vec![Complex64::new(0.0, 0.0); m];
        let pack = |c: &[f64]| {
            let mut v = vec![Complex64::new(0.0, 0.0); n + 2];
            v[0] = Complex64::new(c[0] / rm, 0.0);
            for k in 1..=n {
                let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                let w = Complex64::new(c[2 * k], -c[2 * k - 1]) / r;
                v[k] = w * (0.5 * sign);
            }
            let sign = if (n + 1) % 2 == 0 { 1.0 } else { -1.0 };
            v[n + 1] = Complex64::new(sign * c[2 * n + 1] / rm, 0.0);
            v
        };
        let vx = pack(cx);
        let vy = pack(cy);
        let i = Complex64::new(0.0, 1.0);
        buf[0] = vx[0] + i * vy[0];
        buf[n + 1] = vx[n + 1] + i * vy[n + 1];
        for k in 1..=n {
            buf[k] = vx[k] + i * vy[k];
            buf[m - k] = vx[k].conj() + i * vy[k].conj();
        }
        self.inverse.process(&mut buf);
        (buf.iter().map(|z| z.re).collect(), buf.iter().map(|z| z.im).collect())
    }
}

pub fn to_modes(state: &SiteState, params: &LatticeParams) -> Result<ModeState> {
    ModeTransform::new(params).to_modes(state)
}

pub fn from_modes(modes: &ModeState, params: &LatticeParams) -> Result<SiteState> {
    ModeTransform::new(params).from_modes(modes)
}

/// Harmonic energies `omega_k (p_k^2 + q_k^2) / 2`.
pub fn mode_energies(modes: &ModeState, freqs: &FrequencyTable) -> Vec<f64> {
    modes
        .p_hat
        .iter()
        .zip(&modes.q_hat)
        .zip(&freqs.omega)
        .map(|((p, q), w)| 0.5 * w * (p * p + q * q))
        .collect()
}

/// Weights of the norm `mu * sum [k]^{2s} e^{2 sigma |k|} |c_k|^2`, `[k] = max(1, |k|)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormWeights {
    pub s: f64,
    pub sigma: f64,
    pub mu: f64,
}

impl NormWeights {
    /// Sequence norm on a lattice with spacing `pi / (N + 1)`.
    pub fn lattice(s: f64, sigma: f64, n: usize) -> Self {
        NormWeights { s, sigma, mu: PI / (n as f64 + 1.0) }
    }

    /// Norm of Fourier coefficients of a function on the torus.
    pub fn function(s: f64, sigma: f64) -> Self {
        NormWeights { s, sigma, mu: 1.0 }
    }

    fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0) || !self.s.is_finite() || !(self.mu > 0.0) {
            return Err(Error::InvalidParams(format!("bad norm weights {self:?}")));
        }
        Ok(())
    }
}

/// Core of every norm: `abs2` yields `|c_k|^2` in the order of `labels`.
fn weighted_norm(labels: &[i64], abs2: impl Iterator<Item = f64> + Clone, w: NormWeights) -> Result<f64> {
    w.validate()?;
    let log_weight = |k: i64| {
        let kk = (k.unsigned_abs() as f64).max(1.0);
        2.0 * w.s * kk.ln() + 2.0 * w.sigma * k.unsigned_abs() as f64
    };
    let max_log = labels.iter().map(|&k| log_weight(k)).fold(f64::NEG_INFINITY, f64::max);
    let max_abs2 = abs2.clone().fold(0.0, f64::max);
    if !max_abs2.is_finite() {
        return Err(Error::NonFinite { what: "norm input", index: 0 });
    }
    if max_abs2 == 0.0 {
        return Ok(0.0);
    }
    if max_log < 600.0 && max_abs2 < 1e100 {
        let sum: f64 = labels.iter().zip(abs2).map(|(&k, c2)| log_weight(k).exp() * c2).sum();
        return Ok((w.mu * sum).sqrt());
    }
    let logs: Vec<f64> = labels
        .iter()
        .zip(abs2)
        .filter(|(_, c2)| *c2 > 0.0)
        .map(|(&k, c2)| log_weight(k) + c2.ln())
        .collect();
    let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logs.iter().map(|l| (l - top).exp()).sum();
    let log_norm = 0.5 * (w.mu.ln() + top + sum.ln());
    if log_norm >= f64::MAX.ln() {
        return Err(Error::NormOverflow);
    }
    Ok(log_norm.exp())
}

fn check_labels(labels: &[i64], len: usize) -> Result<()> {
    if labels.len() != len {
        return Err(Error::LengthMismatch { expected: labels.len(), got: len });
    }
    Ok(())
}

/// Weighted norm of one real coefficient array.
pub fn seq_norm(labels: &[i64], c: &[f64], w: NormWeights) -> Result<f64> {
    check_labels(labels, c.len())?;
    weighted_norm(labels, c.iter().map(|v| v * v), w)
}

/// Weighted norm of a complex coefficient array.
pub fn seq_norm_complex(labels: &[i64], c: &[Complex64], w: NormWeights) -> Result<f64> {
    check_labels(labels, c.len())?;
    weighted_norm(labels, c.iter().map(|v| v.norm_sqr()), w)
}

/// Joint norm of a phase point, `sqrt(|p|^2 + |q|^2)`.
pub fn phase_norm(labels: &[i64], modes: &ModeState, w: NormWeights) -> Result<f64> {
    check_labels(labels, modes.len())?;
    let both: Vec<i64> = labels.iter().chain(labels).copied().collect();
    weighted_norm(&both, modes.p_hat.iter().chain(&modes.q_hat).map(|v| v * v), w)
}
