//! First-order correction to the envelope approximation and measurement of
//! the actual remainder `z_1 = (z - mu z^a) / mu^2`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrator::{integrate, IntegratorConfig, Method, Observer};
use crate::lattice::{LatticeParams, SiteState};
use crate::nls::{build_approx, FourierSeries, NlsField, NlsPropagator, ScaleMap, Sector};
use std::f64::consts::PI;

use crate::spectral::{frequency, phase_norm, ModeTransform, NormWeights};

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Which closed form produces the correction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrectionModel {
    /// Second-order response of the linear chain to the quadratic force
    /// `-alpha q^2` generated by the leading approximation.
    #[default]
    DrivenResponse,
    /// `(alpha / 6 sqrt 2) [4 e^{i w t} - 3 e^{2it} - e^{-2it} - 6i e^{i w t} + 6i] Phi_k`.
    NormalFormBracket,
}

/// Coefficients of `Phi = -i (phi0)^2` and `M = |phi0|^2`.
///
/// In the odd sector both are weighted by `sgn(x)` before projection, which
/// is what restricting the squares to `j >= 1` sees.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrectionField {
    pub phi0: FourierSeries,
    pub phi_hat: FourierSeries,
    pub m_hat: FourierSeries,
    pub alpha: f64,
}

pub fn phi_field(phi0: &FourierSeries, alpha: f64) -> Result<CorrectionField> {
    let k = phi0.k_max;
    // the squares have degree 2K, so this grid resolves them exactly
    let grid = (4 * k + 2).next_power_of_two();
    let values = phi0.to_grid(grid);
    let peak = values.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let real = values.iter().map(|v| v.re.abs()).fold(0.0, f64::max);
    if real > 1e-12 * peak.max(1e-300) {
        log::warn!("initial envelope is not purely imaginary (max |Re| = {real:e})");
    }
    let phi: Vec<Complex64> = values.iter().map(|v| -I * v * v).collect();
    let m: Vec<Complex64> = values.iter().map(|v| Complex64::new(v.norm_sqr(), 0.0)).collect();
    Ok(CorrectionField {
        phi0: phi0.clone(),
        phi_hat: project_square(phi0.sector, k, &phi)?,
        m_hat: project_square(phi0.sector, k, &m)?,
        alpha,
    })
}

/// Projects grid values of a square. In the odd sector the even square is
/// multiplied by `sgn(x)` first, done exactly on its cosine coefficients.
fn project_square(sector: Sector, k: usize, values: &[Complex64]) -> Result<FourierSeries> {
    if sector == Sector::Full {
        return FourierSeries::from_grid(sector, k, values);
    }
    let c = FourierSeries::from_grid(Sector::Full, 2 * k, values)?.to_exponential();
    let two_k = 2 * k as i64;
    let mut out = FourierSeries::zeros(sector, k);
    for (i, b) in out.coeffs.iter_mut().enumerate() {
        let kk = i as i64 + 1;
        let mut acc = Complex64::new(0.0, 0.0);
        for n in -two_k..=two_k {
            // int_0^pi cos(nx) sin(kx) dx
            if (n.abs() + kk) % 2 == 1 {
                acc += c[(n + two_k) as usize] * (2 * kk) as f64 / (kk * kk - n * n) as f64;
            }
        }
        *b = acc / PI;
    }
    Ok(out)
}

/// Zero-state responses of `x'' + w^2 x = f` for `f = 1, cos 2t, sin 2t`,
/// with their time derivatives.
fn responses(w: f64, t: f64) -> [(f64, f64); 3] {
    let w2 = w * w;
    let (sw, cw) = (w * t).sin_cos();
    let (s2, c2) = (2.0 * t).sin_cos();
    let s0 = ((1.0 - cw) / w2, sw / w);
    let d = w2 - 4.0;
    if d.abs() < 1e-7 {
        // resonant limits at w = 2
        let sc = (t * s2 / 4.0, (s2 + 2.0 * t * c2) / 4.0);
        let ss = ((0.5 * s2 - t * c2) / 4.0, (t * s2 * 2.0) / 4.0);
        return [s0, sc, ss];
    }
    let sc = ((c2 - cw) / d, (-2.0 * s2 + w * sw) / d);
    let ss = ((s2 - 2.0 / w * sw) / d, (2.0 * c2 - 2.0 * cw) / d);
    [s0, sc, ss]
}

/// `(p + i q)` multiplier pair for one mode: returns the contribution of
/// `(phi_k, m_k)` to `p_k + i q_k`.
fn mode_correction(model: CorrectionModel, alpha: f64, w: f64, t: f64, phi: Complex64, m: f64) -> Complex64 {
    match model {
        CorrectionModel::DrivenResponse => {
            let [s0, sc, ss] = responses(w, t);
            let q = -0.5 * alpha * (m * s0.0 + phi.im * sc.0 + phi.re * ss.0);
            let p = -0.5 * alpha * (m * s0.1 + phi.im * sc.1 + phi.re * ss.1);
            Complex64::new(p, q)
        }
        CorrectionModel::NormalFormBracket => {
            let e = Complex64::from_polar(1.0, w * t);
            let bracket = 4.0 * e - 3.0 * Complex64::from_polar(1.0, 2.0 * t) - Complex64::from_polar(1.0, -2.0 * t)
                - 6.0 * I * e
                + 6.0 * I;
            // sqrt 2 psi = p + i q
            bracket * phi * (alpha / 6.0)
        }
    }
}

/// Continuum coefficients of `psi_10(t)`, with `(p_10 + i q_10)/sqrt 2 = psi_10(mu j)`.
pub fn psi10(corr: &CorrectionField, t: f64, params: &LatticeParams, model: CorrectionModel) -> FourierSeries {
    let mut out = corr.phi_hat.clone();
    let r = std::f64::consts::FRAC_1_SQRT_2;
    for ((c, &k), m) in out.coeffs.iter_mut().zip(&corr.phi_hat.labels()).zip(&corr.m_hat.coeffs) {
        let w = frequency(k, params);
        *c = mode_correction(model, corr.alpha, w, t, *c, m.re) * r;
    }
    out
}

/// The correction `z_10(t)` on the lattice sites.
///
/// The squares are sampled at the sites and every lattice mode gets the
/// multiplier of its own frequency. Lattice frequencies repeat with period
/// `2(N+1)` in `k`, so this equals restricting [`psi10`].
pub fn z10(corr: &CorrectionField, t: f64, params: &LatticeParams, model: CorrectionModel) -> Result<SiteState> {
    let tr = ModeTransform::new(params);
    let values = corr.phi0.eval_lattice(params);
    let phi_re: Vec<f64> = values.iter().map(|v| (-I * v * v).re).collect();
    let phi_im: Vec<f64> = values.iter().map(|v| (-I * v * v).im).collect();
    let m: Vec<f64> = values.iter().map(|v| v.norm_sqr()).collect();
    let (pr, pi) = tr.analyze_pair(&phi_re, &phi_im);
    let (mk, _) = tr.analyze_pair(&m, &vec![0.0; m.len()]);
    let mut cp = Vec::with_capacity(mk.len());
    let mut cq = Vec::with_capacity(mk.len());
    for (i, w) in tr.freqs().omega.iter().enumerate() {
        let z = mode_correction(model, corr.alpha, *w, t, Complex64::new(pr[i], pi[i]), mk[i]);
        cp.push(z.re);
        cq.push(z.im);
    }
    let (p, q) = tr.synthesize_pair(&cp, &cq);
    Ok(SiteState { p, q, t })
}

/// Vector field of the leading generating function,
/// `X_j = -(alpha / 6 sqrt 2)(3 psi_j^2 + 6i |psi_j|^2 + conj(psi_j)^2)`.
pub fn chi01_field(psi: &[Complex64], alpha: f64) -> Vec<Complex64> {
    let c = -alpha / (6.0 * 2f64.sqrt());
    psi.iter().map(|z| (3.0 * z * z + 6.0 * I * z.norm_sqr() + z.conj() * z.conj()) * c).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormSpec {
    pub s: f64,
    pub sigma: f64,
}

impl NormSpec {
    pub fn weights(&self, n: usize) -> NormWeights {
        NormWeights::lattice(self.s, self.sigma, n)
    }

    pub fn label(&self) -> String {
        format!("norm_s{}_sigma{}", self.s, self.sigma)
    }
}

/// `(2, 0)`, `(2.4, 0)` and `(1, 0.05)`.
pub fn default_norms() -> Vec<NormSpec> {
    vec![NormSpec { s: 2.0, sigma: 0.0 }, NormSpec { s: 2.4, sigma: 0.0 }, NormSpec { s: 1.0, sigma: 0.05 }]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub t: f64,
    pub z1: SiteState,
    pub norms: Vec<(NormSpec, f64)>,
}

/// Weighted norm of a site state through its rescaled mode variables.
pub fn state_norm(tr: &ModeTransform, state: &SiteState, w: NormWeights) -> Result<f64> {
    phase_norm(tr.labels(), &tr.to_modes(state)?, w)
}

/// `z_1 = (z - mu z^a) / mu^2` with `z^a` built from `phi` at time `z.t`.
pub fn extract_error(z: &SiteState, phi: &NlsField, params: &LatticeParams, norms: &[NormSpec]) -> Result<ErrorRecord> {
    params.check_len(z.len())?;
    let (_, approx) = build_approx(phi, z.t, params)?;
    let mu2 = params.mu() * params.mu();
    let z1 = SiteState {
        p: z.p.iter().zip(&approx.p).map(|(a, b)| (a - b) / mu2).collect(),
        q: z.q.iter().zip(&approx.q).map(|(a, b)| (a - b) / mu2).collect(),
        t: z.t,
    };
    let tr = ModeTransform::new(params);
    let norms = norms
        .iter()
        .map(|ns| Ok((*ns, state_norm(&tr, &z1, ns.weights(params.n))?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(ErrorRecord { t: z.t, z1, norms })
}

/// `|| z_1 - z_10 ||` in the given weights.
pub fn compare_correction(err: &ErrorRecord, z10: &SiteState, params: &LatticeParams, w: NormWeights) -> Result<f64> {
    if (err.t - z10.t).abs() > 1e-9 * err.t.abs().max(1.0) {
        return Err(Error::TimeMismatch { expected: err.t, got: z10.t });
    }
    params.check_len(z10.len())?;
    let diff = SiteState {
        p: err.z1.p.iter().zip(&z10.p).map(|(a, b)| a - b).collect(),
        q: err.z1.q.iter().zip(&z10.q).map(|(a, b)| a - b).collect(),
        t: err.t,
    };
    state_norm(&ModeTransform::new(params), &diff, w)
}

/// Per-mode magnitudes `sqrt(p_k^2 + q_k^2)` of a site state, in mode order.
pub fn mode_magnitudes(tr: &ModeTransform, state: &SiteState) -> Result<Vec<f64>> {
    let m = tr.to_modes(state)?;
    Ok(m.p_hat.iter().zip(&m.q_hat).map(|(p, q)| p.hypot(*q)).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareConfig {
    pub method: Method,
    pub dt: f64,
    pub t_end: f64,
    /// Lattice steps between error samples.
    pub sample_every: u64,
    pub norms: Vec<NormSpec>,
    /// Also measure `|| z_1 - z_10 ||` in every norm.
    pub correction: Option<CorrectionModel>,
    /// Largest envelope step; defaults to the propagator's choice.
    pub nls_step: Option<f64>,
}

impl CompareConfig {
    pub fn new(dt: f64, t_end: f64, sample_every: u64) -> Self {
        CompareConfig {
            method: Method::Yoshida4,
            dt,
            t_end,
            sample_every,
            norms: default_norms(),
            correction: None,
            nls_step: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareSample {
    pub t: f64,
    /// `|| z_1 ||` per configured norm.
    pub error: Vec<f64>,
    /// `|| z_1 - z_10 ||` per configured norm, when requested.
    pub corrected: Vec<f64>,
}

struct Comparator<'a> {
    params: &'a LatticeParams,
    cfg: &'a CompareConfig,
    field: NlsField,
    prop: NlsPropagator,
    corr: Option<CorrectionField>,
    scale: ScaleMap,
    samples: Vec<CompareSample>,
    last: Option<ErrorRecord>,
}

impl Observer for Comparator<'_> {
    fn sample(&mut self, state: &SiteState) -> Result<()> {
        let step = self.cfg.nls_step.unwrap_or_else(|| self.prop.default_step(self.field.dispersion));
        self.prop.evolve_to(&mut self.field, self.scale.tau(state.t), step)?;
        let rec = extract_error(state, &self.field, self.params, &self.cfg.norms)?;
        let mut corrected = Vec::new();
        if let (Some(model), Some(corr)) = (self.cfg.correction, &self.corr) {
            let z = z10(corr, state.t, self.params, model)?;
            for ns in &self.cfg.norms {
                corrected.push(compare_correction(&rec, &z, self.params, ns.weights(self.params.n))?);
            }
        }
        self.samples.push(CompareSample { t: state.t, error: rec.norms.iter().map(|x| x.1).collect(), corrected });
        self.last = Some(rec);
        Ok(())
    }
}

/// Result of [`run_comparison`].
#[derive(Clone, Debug)]
pub struct Comparison {
    pub samples: Vec<CompareSample>,
    /// Remainder at the final sample.
    pub last: ErrorRecord,
    pub field: NlsField,
}

impl Comparison {
    /// `sup_t` of the error in norm `i`.
    pub fn sup_error(&self, i: usize) -> f64 {
        self.samples.iter().map(|s| s.error[i]).fold(0.0, f64::max)
    }
}

/// Integrates the chain from `mu z^a(0)` next to the envelope started at
/// `phi0`, sampling the remainder every `sample_every` steps.
pub fn run_comparison(params: &LatticeParams, phi0: &FourierSeries, cfg: &CompareConfig) -> Result<Comparison> {
    let field = NlsField::for_lattice(phi0.clone(), params)?;
    let (_, start) = build_approx(&field, 0.0, params)?;
    let corr = match cfg.correction {
        Some(_) => Some(phi_field(phi0, params.alpha)?),
        None => None,
    };
    let mut obs = Comparator {
        params,
        cfg,
        prop: NlsPropagator::for_series(phi0),
        field,
        corr,
        scale: ScaleMap::new(params),
        samples: Vec::new(),
        last: None,
    };
    let icfg = IntegratorConfig::new(cfg.method, cfg.dt, cfg.t_end).sampling(cfg.sample_every);
    integrate(params, &start, &icfg, &mut [&mut obs])?;
    let last = obs.last.take().expect("the initial instant is always sampled");
    Ok(Comparison { samples: obs.samples, last, field: obs.field })
}
