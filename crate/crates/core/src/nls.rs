//! Continuum envelope: Fourier series on the 2pi-torus, a split-step solver
//! for the cubic Schrodinger equation
//!
//! ```text
//! -i phi_tau = -D phi_xx + gamma |phi|^2 phi
//! ```
//!
//! and the maps between lattice sequences and continuum functions.
//!
//! Series use the real basis `1/sqrt(2 pi)`, `sin(kx)/sqrt(pi)` (label `k > 0`)
//! and `cos(kx)/sqrt(pi)` (label `-k`). Odd series use `sqrt(2/pi) sin(kx)`,
//! normalized on `[0, pi]`. With these labels a lattice basis vector is the
//! continuum basis function sampled at `x = mu j`, up to a factor `sqrt(mu)`.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Boundary, LatticeParams, SiteState};
use crate::spectral::{mode_index, mode_labels, seq_norm_complex, ModeTransform, NormWeights};

const I: Complex64 = Complex64::new(0.0, 1.0);
const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sector {
    /// Every function on the torus.
    Full,
    /// Odd functions, the continuum counterpart of Dirichlet chains.
    Odd,
}

impl Sector {
    pub fn for_boundary(bc: Boundary) -> Self {
        match bc {
            Boundary::Dirichlet => Sector::Odd,
            Boundary::Periodic => Sector::Full,
        }
    }
}

/// Truncated series with complex coefficients on the real basis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FourierSeries {
    pub sector: Sector,
    pub k_max: usize,
    pub coeffs: Vec<Complex64>,
}

impl FourierSeries {
    pub fn zeros(sector: Sector, k_max: usize) -> Self {
        let len = match sector {
            Sector::Full => 2 * k_max + 1,
            Sector::Odd => k_max,
        };
        FourierSeries { sector, k_max, coeffs: vec![ZERO; len] }
    }

    /// Labels in storage order: `0, 1, -1, ..., K, -K` or `1..=K`.
    pub fn labels(&self) -> Vec<i64> {
        let k = self.k_max as i64;
        match self.sector {
            Sector::Full => std::iter::once(0).chain((1..=k).flat_map(|m| [m, -m])).collect(),
            Sector::Odd => (1..=k).collect(),
        }
    }

    pub fn index(&self, k: i64) -> Option<usize> {
        let km = self.k_max as i64;
        match self.sector {
            Sector::Full if k == 0 => Some(0),
            Sector::Full if k > 0 && k <= km => Some((2 * k - 1) as usize),
            Sector::Full if k < 0 && -k <= km => Some((-2 * k) as usize),
            Sector::Odd if k >= 1 && k <= km => Some((k - 1) as usize),
            _ => None,
        }
    }

    pub fn get(&self, k: i64) -> Complex64 {
        self.index(k).map_or(ZERO, |i| self.coeffs[i])
    }

    pub fn set(&mut self, k: i64, v: Complex64) -> Result<()> {
        let km = self.k_max as i64;
        let i = self.index(k).ok_or(Error::IndexOutOfRange { index: k, lo: -km, hi: km })?;
        self.coeffs[i] = v;
        Ok(())
    }

    /// Coefficients `c_n`, `|n| <= K`, of `phi = sum c_n e^{inx} / sqrt(2 pi)`; index `n + K`.
    pub fn to_exponential(&self) -> Vec<Complex64> {
        let k = self.k_max;
        let mut c = vec![ZERO; 2 * k + 1];
        match self.sector {
            Sector::Full => {
                c[k] = self.coeffs[0];
                let r = std::f64::consts::FRAC_1_SQRT_2;
                for n in 1..=k {
                    let s = self.coeffs[2 * n - 1];
                    let co = self.coeffs[2 * n];
                    c[k + n] = (co - I * s) * r;
                    c[k - n] = (co + I * s) * r;
                }
            }
            Sector::Odd => {
                for n in 1..=k {
                    let b = self.coeffs[n - 1];
                    c[k + n] = -I * b;
                    c[k - n] = I * b;
                }
            }
        }
        c
    }

    /// Inverse of [`FourierSeries::to_exponential`]; odd series keep only the odd part.
    pub fn from_exponential(sector: Sector, k_max: usize, c: &[Complex64]) -> Self {
        let k = k_max;
        let mut out = Self::zeros(sector, k);
        match sector {
            Sector::Full => {
                out.coeffs[0] = c[k];
                let r = std::f64::consts::FRAC_1_SQRT_2;
                for n in 1..=k {
                    out.coeffs[2 * n - 1] = I * (c[k + n] - c[k - n]) * r;
                    out.coeffs[2 * n] = (c[k + n] + c[k - n]) * r;
                }
            }
            Sector::Odd => {
                for n in 1..=k {
                    out.coeffs[n - 1] = I * (c[k + n] - c[k - n]) * 0.5;
                }
            }
        }
        out
    }

    /// `amp * e^{ikx}` in the full sector.
    pub fn plane_wave(k: i64, amp: f64, k_max: usize) -> Result<Self> {
        let km = k_max as i64;
        if k.abs() > km {
            return Err(Error::IndexOutOfRange { index: k, lo: -km, hi: km });
        }
        let mut c = vec![ZERO; 2 * k_max + 1];
        c[(k + km) as usize] = Complex64::new(amp * (2.0 * PI).sqrt(), 0.0);
        Ok(Self::from_exponential(Sector::Full, k_max, &c))
    }

    /// Direct evaluation, `O(K)` per point.
    pub fn eval(&self, x: f64) -> Complex64 {
        let mut acc = ZERO;
        match self.sector {
            Sector::Full => {
                acc += self.coeffs[0] / (2.0 * PI).sqrt();
                for n in 1..=self.k_max {
                    let (s, c) = (n as f64 * x).sin_cos();
                    acc += (self.coeffs[2 * n - 1] * s + self.coeffs[2 * n] * c) / PI.sqrt();
                }
            }
            Sector::Odd => {
                for n in 1..=self.k_max {
                    acc += self.coeffs[n - 1] * (n as f64 * x).sin() * (2.0 / PI).sqrt();
                }
            }
        }
        acc
    }

    /// Values at `x_i = -pi + 2 pi i / m`, `i = 0..m`. Modes beyond `m/2` alias.
    pub fn to_grid(&self, m: usize) -> Vec<Complex64> {
        let c = self.to_exponential();
        let k = self.k_max as i64;
        let mut buf = vec![ZERO; m];
        let scale = 1.0 / (2.0 * PI).sqrt();
        for n in -k..=k {
            let sign = if n.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
            buf[n.rem_euclid(m as i64) as usize] += c[(n + k) as usize] * (sign * scale);
        }
        FftPlanner::new().plan_fft_inverse(m).process(&mut buf);
        buf
    }

    /// Interpolating projection of grid values at `x_i = -pi + 2 pi i / m`; needs `2K < m`.
    pub fn from_grid(sector: Sector, k_max: usize, values: &[Complex64]) -> Result<Self> {
        let m = values.len();
        if 2 * k_max >= m {
            return Err(Error::InvalidParams(format!("grid of {m} points cannot resolve K = {k_max}")));
        }
        let mut buf = values.to_vec();
        FftPlanner::new().plan_fft_forward(m).process(&mut buf);
        let k = k_max as i64;
        let scale = (2.0 * PI).sqrt() / m as f64;
        let c: Vec<Complex64> = (-k..=k)
            .map(|n| {
                let sign = if n.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
                buf[n.rem_euclid(m as i64) as usize] * (sign * scale)
            })
            .collect();
        Ok(Self::from_exponential(sector, k_max, &c))
    }

    /// Values at the lattice sites `x = mu j`, in site storage order.
    pub fn eval_lattice(&self, params: &LatticeParams) -> Vec<Complex64> {
        let n = params.n;
        let grid = self.to_grid(2 * n + 2);
        match params.bc {
            Boundary::Periodic => grid,
            Boundary::Dirichlet => grid[n + 2..].to_vec(),
        }
    }

    pub fn norm(&self, w: NormWeights) -> Result<f64> {
        seq_norm_complex(&self.labels(), &self.coeffs, w)
    }

    pub fn mass(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum()
    }

    /// Pointwise product `f(phi)` on an oversampled grid, projected back.
    pub fn map_pointwise(&self, sector: Sector, k_max: usize, grid: usize, f: impl Fn(Complex64) -> Complex64) -> Result<Self> {
        let values: Vec<Complex64> = self.to_grid(grid).into_iter().map(f).collect();
        Self::from_grid(sector, k_max, &values)
    }
}

/// Nonlinear coefficients: `(gamma, gamma_tilde)` with
/// `gamma_tilde = (3/8)(beta - (10/9) alpha^2)` and `gamma = gamma_tilde / a`.
pub fn gamma_coeff(params: &LatticeParams) -> Result<(f64, f64)> {
    if !(params.a > 0.0) {
        return Err(Error::InvalidParams("the continuum limit needs a > 0".into()));
    }
    let tilde = 0.375 * (params.beta - 10.0 / 9.0 * params.alpha * params.alpha);
    Ok((tilde / params.a, tilde))
}

/// Dispersion coefficient matching the small-`k` lattice frequencies
/// `omega_k = 1 + (a/2) mu^2 k^2 + ...` under `tau = a mu^2 t`.
pub const LATTICE_DISPERSION: f64 = 0.5;

/// Relation between lattice time and envelope time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleMap {
    pub mu: f64,
    pub a: f64,
}

impl ScaleMap {
    pub fn new(params: &LatticeParams) -> Self {
        ScaleMap { mu: params.mu(), a: params.a }
    }

    pub fn tau(&self, t: f64) -> f64 {
        self.a * self.mu * self.mu * t
    }

    pub fn t(&self, tau: f64) -> f64 {
        tau / (self.a * self.mu * self.mu)
    }

    pub fn gauge(&self, t: f64) -> Complex64 {
        Complex64::from_polar(1.0, t)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NlsField {
    pub series: FourierSeries,
    pub tau: f64,
    pub gamma: f64,
    pub dispersion: f64,
}

impl NlsField {
    pub fn new(series: FourierSeries, gamma: f64, dispersion: f64) -> Self {
        NlsField { series, tau: 0.0, gamma, dispersion }
    }

    /// Envelope of a lattice run: coefficients from [`gamma_coeff`] and
    /// [`LATTICE_DISPERSION`].
    pub fn for_lattice(series: FourierSeries, params: &LatticeParams) -> Result<Self> {
        let (gamma, _) = gamma_coeff(params)?;
        Ok(Self::new(series, gamma, LATTICE_DISPERSION))
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.series.coeffs.iter().position(|c| !c.re.is_finite() || !c.im.is_finite()) {
            Some(i) => Err(Error::NonFinite { what: "field coefficients", index: i }),
            None => Ok(()),
        }
    }
}

/// Strang splitting on a uniform grid with 2/3-rule dealiasing.
pub struct NlsPropagator {
    grid: usize,
    cutoff: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    /// Wavenumber of each FFT bin.
    wavenumber: Vec<i64>,
    pub dealias: bool,
}

impl NlsPropagator {
    /// Grid of `2K + 2` points for a series truncated at `K`.
    pub fn for_series(series: &FourierSeries) -> Self {
        Self::with_grid(2 * series.k_max + 2)
    }

    pub fn with_grid(grid: usize) -> Self {
        let mut planner = FftPlanner::new();
        let wavenumber = (0..grid as i64).map(|i| if 2 * i <= grid as i64 { i } else { i - grid as i64 }).collect();
        NlsPropagator {
            grid,
            cutoff: grid / 3,
            forward: planner.plan_fft_forward(grid),
            inverse: planner.plan_fft_inverse(grid),
            wavenumber,
            dealias: true,
        }
    }

    pub fn without_dealiasing(mut self) -> Self {
        self.dealias = false;
        self
    }

    pub fn grid(&self) -> usize {
        self.grid
    }

    /// Largest wavenumber kept by the dealiasing mask.
    pub fn cutoff(&self) -> usize {
        if self.dealias {
            self.cutoff
        } else {
            self.grid / 2
        }
    }

    /// `min(1e-3, 0.1 / (D K^2))` with `K` the retained cutoff.
    pub fn default_step(&self, dispersion: f64) -> f64 {
        let k = self.cutoff().max(1) as f64;
        let limit = if dispersion.abs() > 0.0 { 0.1 / (dispersion.abs() * k * k) } else { f64::INFINITY };
        limit.min(1e-3)
    }

    fn load(&self, series: &FourierSeries) -> Result<Vec<Complex64>> {
        if 2 * series.k_max >= self.grid {
            return Err(Error::InvalidParams(format!("grid {} cannot hold K = {}", self.grid, series.k_max)));
        }
        let c = series.to_exponential();
        let k = series.k_max as i64;
        let mut spec = vec![ZERO; self.grid];
        for n in -k..=k {
            spec[n.rem_euclid(self.grid as i64) as usize] = c[(n + k) as usize];
        }
        Ok(spec)
    }

    fn store(&self, spec: &[Complex64], like: &FourierSeries) -> FourierSeries {
        let k = like.k_max as i64;
        let c: Vec<Complex64> = (-k..=k).map(|n| spec[n.rem_euclid(self.grid as i64) as usize]).collect();
        FourierSeries::from_exponential(like.sector, like.k_max, &c)
    }

    fn linear(&self, spec: &mut [Complex64], dispersion: f64, h: f64) {
        for (c, &n) in spec.iter_mut().zip(&self.wavenumber) {
            *c *= Complex64::from_polar(1.0, dispersion * (n * n) as f64 * h);
        }
    }

    fn nonlinear(&self, spec: &mut [Complex64], gamma: f64, h: f64) {
        let m = self.grid as f64;
        let scale = 1.0 / (2.0 * PI).sqrt();
        self.inverse.process(spec);
        for v in spec.iter_mut() {
            let u = *v * scale;
            *v = u * Complex64::from_polar(1.0, gamma * u.norm_sqr() * h);
        }
        self.forward.process(spec);
        let back = (2.0 * PI).sqrt() / m;
        for (c, &n) in spec.iter_mut().zip(&self.wavenumber) {
            if self.dealias && n.unsigned_abs() as usize > self.cutoff {
                *c = ZERO;
            } else {
                *c *= back;
            }
        }
    }

    /// One Strang step: half linear, full nonlinear, half linear.
    pub fn step(&self, field: &mut NlsField, d_tau: f64) -> Result<()> {
        self.evolve_steps(field, d_tau, 1)
    }

    /// `steps` Strang steps of size `d_tau`; adjacent linear half steps are merged.
    pub fn evolve_steps(&self, field: &mut NlsField, d_tau: f64, steps: u64) -> Result<()> {
        if !(d_tau > 0.0) {
            return Err(Error::InvalidParams(format!("d_tau = {d_tau} must be positive")));
        }
        if steps == 0 {
            return Ok(());
        }
        let mut spec = self.load(&field.series)?;
        let d = field.dispersion;
        self.linear(&mut spec, d, 0.5 * d_tau);
        for i in 0..steps {
            self.nonlinear(&mut spec, field.gamma, d_tau);
            let h = if i + 1 == steps { 0.5 * d_tau } else { d_tau };
            self.linear(&mut spec, d, h);
        }
        field.series = self.store(&spec, &field.series);
        field.tau += d_tau * steps as f64;
        field.check_finite()
    }

    /// Advance to `tau_end` with steps no larger than `max_step`.
    pub fn evolve_to(&self, field: &mut NlsField, tau_end: f64, max_step: f64) -> Result<()> {
        let span = tau_end - field.tau;
        if span < 0.0 {
            return Err(Error::TimeMismatch { expected: tau_end, got: field.tau });
        }
        if span == 0.0 {
            return Ok(());
        }
        let steps = (span / max_step).ceil().max(1.0) as u64;
        self.evolve_steps(field, span / steps as f64, steps)?;
        field.tau = tau_end;
        Ok(())
    }
}

/// Mass `sum |phi_k|^2` and energy `D sum k^2 |phi_k|^2 + (gamma/2) int |phi|^4`.
///
/// Odd series integrate over `[0, pi]`, matching their normalization.
pub fn nls_invariants(field: &NlsField) -> (f64, f64) {
    let s = &field.series;
    let mass = s.mass();
    let kinetic: f64 = s.labels().iter().zip(&s.coeffs).map(|(&k, c)| (k * k) as f64 * c.norm_sqr()).sum();
    // |phi|^4 has bandwidth 4K, so this grid integrates it exactly
    let m = (4 * s.k_max + 2).next_power_of_two();
    let quartic: f64 = s.to_grid(m).iter().map(|v| v.norm_sqr().powi(2)).sum::<f64>() * 2.0 * PI / m as f64;
    let quartic = match s.sector {
        Sector::Full => quartic,
        Sector::Odd => 0.5 * quartic,
    };
    (mass, field.dispersion * kinetic + 0.5 * field.gamma * quartic)
}

/// Continuum series `sqrt(mu) c_k` of lattice coefficients `c_k` (lattice mode order).
///
/// The periodic alternating mode is shared evenly between `cos((N+1)x)` and
/// `i sin((N+1)x)`, so the map is an isometry and [`restrict`] undoes it.
pub fn interpolate(coeffs: &[Complex64], params: &LatticeParams) -> Result<FourierSeries> {
    params.check_len(coeffs.len())?;
    let sm = params.mu().sqrt();
    let n = params.n as i64;
    match params.bc {
        Boundary::Dirichlet => {
            Ok(FourierSeries { sector: Sector::Odd, k_max: params.n, coeffs: coeffs.iter().map(|c| c * sm).collect() })
        }
        Boundary::Periodic => {
            let mut out = FourierSeries::zeros(Sector::Full, params.n + 1);
            for (&k, c) in mode_labels(params).iter().zip(coeffs) {
                if k == -(n + 1) {
                    let half = c * sm * std::f64::consts::FRAC_1_SQRT_2;
                    out.set(-(n + 1), half)?;
                    out.set(n + 1, I * half)?;
                } else {
                    out.set(k, c * sm)?;
                }
            }
            Ok(out)
        }
    }
}

pub fn interpolate_real(coeffs: &[f64], params: &LatticeParams) -> Result<FourierSeries> {
    let c: Vec<Complex64> = coeffs.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    interpolate(&c, params)
}

/// Lattice coefficients of the samples `u(mu j)`, by folding modes onto the lattice.
pub fn restrict(u: &FourierSeries, params: &LatticeParams) -> Result<Vec<Complex64>> {
    let n1 = params.n as i64 + 1;
    let m = 2 * n1;
    let inv = 1.0 / params.mu().sqrt();
    let mut out = vec![ZERO; params.sites()];
    let periodic = params.bc == Boundary::Periodic;
    if !periodic && u.sector == Sector::Full {
        return Err(Error::InvalidParams("a Dirichlet chain needs an odd series".into()));
    }
    for (&label, &c) in u.labels().iter().zip(&u.coeffs) {
        if c == ZERO {
            continue;
        }
        let freq = label.abs();
        let is_sine = label > 0;
        let mut r = freq % m;
        let mut sign = 1.0;
        if r > n1 {
            r = m - r;
            if is_sine {
                sign = -1.0;
            }
        }
        let boundary = r == 0 || r == n1;
        let (target, factor) = match (u.sector, is_sine, boundary) {
            (_, true, true) => continue,
            (Sector::Odd, true, false) => (r, (2.0f64).sqrt() * inv),
            (Sector::Full, true, false) => (r, inv),
            (_, false, _) if label == 0 => (0, inv),
            (_, false, true) => (if r == 0 { 0 } else { -n1 }, (2.0f64).sqrt() * inv),
            (_, false, false) => (-r, inv),
        };
        // the odd basis carries an extra sqrt(2) relative to sin(kx)/sqrt(pi);
        // so does the Dirichlet lattice basis, hence the factor cancels
        let factor = if u.sector == Sector::Odd { factor / (2.0f64).sqrt() } else { factor };
        out[mode_index(params, target)?] += c * (sign * factor);
    }
    Ok(out)
}

/// Same as [`restrict`], by sampling at the sites and transforming.
pub fn restrict_pointwise(u: &FourierSeries, params: &LatticeParams) -> Result<Vec<Complex64>> {
    if params.bc == Boundary::Dirichlet && u.sector == Sector::Full {
        return Err(Error::InvalidParams("a Dirichlet chain needs an odd series".into()));
    }
    let values = u.eval_lattice(params);
    let re: Vec<f64> = values.iter().map(|v| v.re).collect();
    let im: Vec<f64> = values.iter().map(|v| v.im).collect();
    let (cr, ci) = ModeTransform::new(params).analyze_pair(&re, &im);
    Ok(cr.into_iter().zip(ci).map(|(a, b)| Complex64::new(a, b)).collect())
}

/// Approximate lattice state `z^a_j = e^{it} phi(mu j, tau)`, split as
/// `p = Re z^a`, `q = Im z^a`. Returns `(z^a, mu z^a)`.
pub fn build_approx(phi: &NlsField, t: f64, params: &LatticeParams) -> Result<(SiteState, SiteState)> {
    let scale = ScaleMap::new(params);
    let expect = scale.tau(t);
    if (phi.tau - expect).abs() > 1e-9 * expect.abs().max(1.0) {
        return Err(Error::TimeMismatch { expected: expect, got: phi.tau });
    }
    if params.bc == Boundary::Dirichlet && phi.series.sector == Sector::Full {
        return Err(Error::InvalidParams("a Dirichlet chain needs an odd series".into()));
    }
    let g = scale.gauge(t);
    let values: Vec<Complex64> = phi.series.eval_lattice(params).into_iter().map(|v| v * g).collect();
    let za = SiteState { p: values.iter().map(|v| v.re).collect(), q: values.iter().map(|v| v.im).collect(), t };
    let mu = scale.mu;
    let phys = SiteState { p: za.p.iter().map(|v| v * mu).collect(), q: za.q.iter().map(|v| v * mu).collect(), t };
    Ok((za, phys))
}

/// `i sin(x)` in the sector of `bc`, truncated at `k_max`.
pub fn imaginary_sine(bc: Boundary, k_max: usize) -> FourierSeries {
    let mut s = FourierSeries::zeros(Sector::for_boundary(bc), k_max);
    let amp = match bc {
        Boundary::Dirichlet => (PI / 2.0).sqrt(),
        Boundary::Periodic => PI.sqrt(),
    };
    s.set(1, I * amp).expect("k_max >= 1");
    s
}
