//! Time-averaged mode energies and decay-law fits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrator::Observer;
use crate::lattice::{Boundary, LatticeParams, SiteState};
use crate::spectral::ModeTransform;

/// Running trapezoid average `<E_k>(t) = (1/t) * int_0^t E_k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AveragedSpectrum {
    pub k: Vec<i64>,
    pub omega: Vec<f64>,
    pub e_avg: Vec<f64>,
    pub t_accum: f64,
    pub n_samples: u64,
    pub params: LatticeParams,
    #[serde(skip)]
    integral: Vec<f64>,
    #[serde(skip)]
    last: Vec<f64>,
    #[serde(skip)]
    t_last: f64,
}

impl AveragedSpectrum {
    pub fn new(params: &LatticeParams, k: Vec<i64>, omega: Vec<f64>) -> Self {
        let len = k.len();
        AveragedSpectrum {
            k,
            omega,
            e_avg: vec![0.0; len],
            t_accum: 0.0,
            n_samples: 0,
            params: *params,
            integral: vec![0.0; len],
            last: vec![0.0; len],
            t_last: 0.0,
        }
    }

    pub fn for_transform(tr: &ModeTransform) -> Self {
        Self::new(tr.params(), tr.labels().to_vec(), tr.freqs().omega.clone())
    }

    /// Finished spectrum from stored values, e.g. read back from disk.
    pub fn from_values(params: &LatticeParams, k: Vec<i64>, omega: Vec<f64>, e_avg: Vec<f64>, t_accum: f64) -> Self {
        let mut s = Self::new(params, k, omega);
        s.e_avg = e_avg;
        s.t_accum = t_accum;
        s
    }

    /// Adds one sample. Until two samples exist the average is the first sample.
    pub fn accumulate(&mut self, e: &[f64], t: f64) -> Result<()> {
        if e.len() != self.k.len() {
            return Err(Error::LengthMismatch { expected: self.k.len(), got: e.len() });
        }
        if let Some(i) = e.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "mode energies", index: i });
        }
        if self.n_samples > 0 {
            if !(t > self.t_last) {
                return Err(Error::NonMonotoneTime { prev: self.t_last, t });
            }
            let h = 0.5 * (t - self.t_last);
            for ((acc, a), b) in self.integral.iter_mut().zip(&self.last).zip(e) {
                *acc += h * (a + b);
            }
            self.t_accum += t - self.t_last;
            for (avg, acc) in self.e_avg.iter_mut().zip(&self.integral) {
                *avg = acc / self.t_accum;
            }
        } else {
            self.e_avg.copy_from_slice(e);
        }
        self.last.copy_from_slice(e);
        self.t_last = t;
        self.n_samples += 1;
        Ok(())
    }

    pub fn value(&self, k: i64) -> Option<f64> {
        self.k.iter().position(|&x| x == k).map(|i| self.e_avg[i])
    }

    /// `(k, E)` pairs with `k >= 1`, sorted by `k`; odd `k` only if requested.
    pub fn positive_modes(&self, odd_only: bool) -> (Vec<i64>, Vec<f64>) {
        let mut pairs: Vec<(i64, f64)> = self
            .k
            .iter()
            .zip(&self.e_avg)
            .filter(|(&k, _)| k >= 1 && (!odd_only || k % 2 == 1))
            .map(|(&k, &e)| (k, e))
            .collect();
        pairs.sort_by_key(|p| p.0);
        pairs.into_iter().unzip()
    }
}

/// Mean of the `k` and `-k` entries of a periodic spectrum.
///
/// Output labels are `0, 1, ..., N, -(N+1)`; the unpaired modes pass through.
pub fn pair_average(spec: &AveragedSpectrum) -> Result<AveragedSpectrum> {
    if spec.params.bc != Boundary::Periodic {
        return Err(Error::WrongBoundary { op: "pair_average", expected: Boundary::Periodic });
    }
    let n = spec.params.n as i64;
    let get = |k: i64| {
        spec.k
            .iter()
            .position(|&x| x == k)
            .ok_or(Error::IndexOutOfRange { index: k, lo: -(n + 1), hi: n })
    };
    let mut k = vec![0];
    let mut omega = vec![spec.omega[get(0)?]];
    let mut e = vec![spec.e_avg[get(0)?]];
    for m in 1..=n {
        let (i, j) = (get(m)?, get(-m)?);
        k.push(m);
        omega.push(spec.omega[i]);
        e.push(0.5 * (spec.e_avg[i] + spec.e_avg[j]));
    }
    let last = get(-(n + 1))?;
    k.push(-(n + 1));
    omega.push(spec.omega[last]);
    e.push(spec.e_avg[last]);
    let mut out = AveragedSpectrum::from_values(&spec.params, k, omega, e, spec.t_accum);
    out.n_samples = spec.n_samples;
    Ok(out)
}

/// Observer feeding mode energies into an [`AveragedSpectrum`].
pub struct SpectrumSampler {
    pub transform: ModeTransform,
    pub spectrum: AveragedSpectrum,
    /// Samples before this time are ignored.
    pub discard: f64,
}

impl SpectrumSampler {
    pub fn new(params: &LatticeParams) -> Self {
        let transform = ModeTransform::new(params);
        let spectrum = AveragedSpectrum::for_transform(&transform);
        SpectrumSampler { transform, spectrum, discard: 0.0 }
    }

    pub fn with_discard(mut self, discard: f64) -> Self {
        self.discard = discard;
        self
    }
}

impl Observer for SpectrumSampler {
    fn sample(&mut self, state: &SiteState) -> Result<()> {
        if state.t < self.discard {
            return Ok(());
        }
        let e = self.transform.energies(state)?;
        self.spectrum.accumulate(&e, state.t)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitKind {
    /// `ln E = c + slope * k`
    Exponential,
    /// `ln E = c + slope * ln k`
    Powerlaw,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub kind: FitKind,
    pub slope: f64,
    pub intercept: f64,
    pub k_range: (i64, i64),
    pub points: usize,
    /// rms deviation in `ln E`.
    pub residual: f64,
}

impl DecayFit {
    pub fn predict_ln(&self, k: i64) -> f64 {
        self.intercept + self.slope * abscissa(self.kind, k)
    }
}

pub const MIN_FIT_POINTS: usize = 4;

fn abscissa(kind: FitKind, k: i64) -> f64 {
    match kind {
        FitKind::Exponential => k as f64,
        FitKind::Powerlaw => (k as f64).ln(),
    }
}

/// Ordinary least squares; returns (slope, intercept, sum of squared residuals).
fn least_squares(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        sxy += (a - mx) * (b - my);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    (slope, intercept, ssr)
}

/// Fits one decay law to `(k, E)` over `k_range` (inclusive).
pub fn fit_decay(k: &[i64], e: &[f64], kind: FitKind, k_range: (i64, i64), odd_only: bool) -> Result<DecayFit> {
    if k.len() != e.len() {
        return Err(Error::LengthMismatch { expected: k.len(), got: e.len() });
    }
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut used = (i64::MAX, i64::MIN);
    for (&kk, &ee) in k.iter().zip(e) {
        if kk < k_range.0 || kk > k_range.1 || kk < 1 || (odd_only && kk % 2 == 0) {
            continue;
        }
        if !(ee > 0.0) {
            return Err(Error::NonPositiveEnergy { k: kk, value: ee });
        }
        x.push(abscissa(kind, kk));
        y.push(ee.ln());
        used = (used.0.min(kk), used.1.max(kk));
    }
    if x.len() < MIN_FIT_POINTS {
        return Err(Error::WindowTooShort { points: x.len(), min: MIN_FIT_POINTS });
    }
    let (slope, intercept, ssr) = least_squares(&x, &y);
    Ok(DecayFit { kind, slope, intercept, k_range: used, points: x.len(), residual: (ssr / x.len() as f64).sqrt() })
}

pub fn fit_spectrum(spec: &AveragedSpectrum, kind: FitKind, k_range: (i64, i64), odd_only: bool) -> Result<DecayFit> {
    let (k, e) = spec.positive_modes(false);
    fit_decay(&k, &e, kind, k_range, odd_only)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossoverOptions {
    pub odd_only: bool,
    /// Candidate modes run from `k_min` up to `k_max`.
    pub k_min: i64,
    pub k_max: i64,
    /// Modes with `E` below this value are left out of the search.
    pub floor: f64,
    /// A split must bring the rms below this fraction of the single-fit rms.
    pub improvement: f64,
}

impl CrossoverOptions {
    /// Odd modes from 3 up to `0.6 N`.
    pub fn for_chain(n: usize) -> Self {
        CrossoverOptions { odd_only: true, k_min: 3, k_max: (0.6 * n as f64).floor() as i64, floor: 0.0, improvement: 0.9 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Crossover {
    /// Last mode of the exponential head, `None` when no split improves enough
    /// or the tail is no closer to a power law than to an exponential.
    pub k_star: Option<i64>,
    /// Spectrum value at `k_star`.
    pub e_star: Option<f64>,
    pub head: Option<DecayFit>,
    pub tail: Option<DecayFit>,
    /// Exponential fit over the whole window.
    pub single: DecayFit,
    /// rms of the best split, in `ln E`.
    pub split_residual: f64,
}

/// Minimum span of `E` over the search window, in decades.
pub const MIN_DECADES: f64 = 2.0;

/// Exhaustive search for the exponential-to-power-law breakpoint.
pub fn detect_crossover(k: &[i64], e: &[f64], opts: &CrossoverOptions) -> Result<Crossover> {
    if k.len() != e.len() {
        return Err(Error::LengthMismatch { expected: k.len(), got: e.len() });
    }
    let mut pts: Vec<(i64, f64)> = k
        .iter()
        .zip(e)
        .filter(|(&kk, &ee)| {
            kk >= opts.k_min.max(1) && kk <= opts.k_max && (!opts.odd_only || kk % 2 == 1) && ee >= opts.floor
        })
        .map(|(&kk, &ee)| (kk, ee))
        .collect();
    pts.sort_by_key(|p| p.0);
    if let Some(&(kk, ee)) = pts.iter().find(|p| !(p.1 > 0.0)) {
        return Err(Error::NonPositiveEnergy { k: kk, value: ee });
    }
    if pts.len() < 2 * MIN_FIT_POINTS {
        return Err(Error::WindowTooShort { points: pts.len(), min: 2 * MIN_FIT_POINTS });
    }
    let hi = pts.iter().map(|p| p.1).fold(f64::MIN, f64::max);
    let lo = pts.iter().map(|p| p.1).fold(f64::MAX, f64::min);
    let decades = (hi / lo).log10();
    if decades < MIN_DECADES {
        return Err(Error::NarrowSpectrum { decades });
    }
    let (ks, es): (Vec<i64>, Vec<f64>) = pts.iter().copied().unzip();
    let range = (ks[0], *ks.last().unwrap());
    let single = fit_decay(&ks, &es, FitKind::Exponential, range, false)?;
    let total = ks.len() as f64;

    let mut best: Option<(f64, usize)> = None;
    for split in MIN_FIT_POINTS..=ks.len() - MIN_FIT_POINTS {
        let (hk, he) = (&ks[..split], &es[..split]);
        let (tk, te) = (&ks[split..], &es[split..]);
        let head = fit_decay(hk, he, FitKind::Exponential, (hk[0], hk[split - 1]), false)?;
        let tail = fit_decay(tk, te, FitKind::Powerlaw, (tk[0], *tk.last().unwrap()), false)?;
        let ssr = head.residual.powi(2) * head.points as f64 + tail.residual.powi(2) * tail.points as f64;
        let rms = (ssr / total).sqrt();
        if best.map_or(true, |(r, _)| rms < r) {
            best = Some((rms, split));
        }
    }
    let (split_residual, split) = best.expect("at least one split");
    if split_residual >= opts.improvement * single.residual {
        return Ok(Crossover { k_star: None, e_star: None, head: None, tail: None, single, split_residual });
    }
    let head = fit_decay(&ks[..split], &es[..split], FitKind::Exponential, range, false)?;
    let tail = fit_decay(&ks[split..], &es[split..], FitKind::Powerlaw, range, false)?;
    // a short tail of a curved exponential fits a power law too; it has to
    // beat the exponential on its own points to count
    let tail_exp = fit_decay(&ks[split..], &es[split..], FitKind::Exponential, range, false)?;
    if tail.residual >= tail_exp.residual {
        return Ok(Crossover { k_star: None, e_star: None, head: None, tail: None, single, split_residual });
    }
    Ok(Crossover {
        k_star: Some(ks[split - 1]),
        e_star: Some(es[split - 1]),
        head: Some(head),
        tail: Some(tail),
        single,
        split_residual,
    })
}

pub fn spectrum_crossover(spec: &AveragedSpectrum, opts: &CrossoverOptions) -> Result<Crossover> {
    let (k, e) = spec.positive_modes(false);
    detect_crossover(&k, &e, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrator::{integrate, IntegratorConfig, Method};
    use crate::lattice::odd_extend;
    use crate::spectral::{mode_index, ModeState};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dummy(len: usize) -> AveragedSpectrum {
        let params = LatticeParams::dirichlet(len, 0.5, 0.0, 0.0).unwrap();
        AveragedSpectrum::new(&params, (1..=len as i64).collect(), vec![1.0; len])
    }

    #[test]
    fn constant_average() {
        let mut acc = dummy(3);
        for i in 0..10 {
            acc.accumulate(&[2.0, 0.5, 0.0], i as f64 * 0.3).unwrap();
            assert_eq!(acc.e_avg, vec![2.0, 0.5, 0.0]);
        }
        assert_eq!(acc.n_samples, 10);
        assert!((acc.t_accum - 2.7).abs() < 1e-12);
    }

    #[test]
    fn linear_average_is_half() {
        let mut acc = dummy(1);
        let n = 1000;
        for i in 0..=n {
            let t = 5.0 * i as f64 / n as f64;
            acc.accumulate(&[t], t).unwrap();
        }
        assert!((acc.e_avg[0] - 2.5).abs() < 1e-12);
    }

    #[test]
    fn rejects_time_going_backwards() {
        let mut acc = dummy(1);
        acc.accumulate(&[1.0], 1.0).unwrap();
        assert!(matches!(acc.accumulate(&[1.0], 1.0), Err(Error::NonMonotoneTime { .. })));
        assert!(matches!(acc.accumulate(&[1.0, 2.0], 2.0), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn sparse_sampling_matches_dense() {
        let params = LatticeParams::dirichlet(15, 0.5, 0.0, 0.0).unwrap();
        let tr = ModeTransform::new(&params);
        let mut m = ModeState::zeros(15);
        m.q_hat[0] = 1.0;
        m.q_hat[2] = 0.3;
        m.p_hat[4] = 0.2;
        let s = tr.from_modes(&m).unwrap();
        let mut dense = SpectrumSampler::new(&params);
        let mut sparse = SpectrumSampler::new(&params);
        integrate(&params, &s, &IntegratorConfig::new(Method::Leapfrog, 0.01, 50.0), &mut [&mut dense]).unwrap();
        integrate(&params, &s, &IntegratorConfig::new(Method::Leapfrog, 0.01, 50.0).sampling(10), &mut [&mut sparse])
            .unwrap();
        for (a, b) in dense.spectrum.e_avg.iter().zip(&sparse.spectrum.e_avg) {
            if *a > 1e-6 {
                assert!((a - b).abs() < 1e-3 * a);
            }
        }
    }

    #[test]
    fn pair_average_examples() {
        let params = LatticeParams::periodic(2, 0.5, 0.0, 0.0).unwrap();
        let k = vec![0, 1, -1, 2, -2, -3];
        let spec = AveragedSpectrum::from_values(&params, k, vec![1.0; 6], vec![5.0, 1.0, 3.0, 4.0, 4.0, 7.0], 1.0);
        let avg = pair_average(&spec).unwrap();
        assert_eq!(avg.k, vec![0, 1, 2, -3]);
        assert_eq!(avg.e_avg, vec![5.0, 2.0, 4.0, 7.0]);
        assert!(pair_average(&dummy(3)).is_err());
    }

    #[test]
    fn pair_average_of_odd_extension_matches_dirichlet() {
        let dbc = LatticeParams::dirichlet(15, 0.5, 0.0, 0.25).unwrap();
        let pbc = dbc.with_bc(Boundary::Periodic);
        let tr = ModeTransform::new(&dbc);
        let mut m = ModeState::zeros(15);
        m.q_hat[mode_index(&dbc, 1).unwrap()] = 0.5;
        let s = tr.from_modes(&m).unwrap();
        let cfg = IntegratorConfig::new(Method::Yoshida4, 0.1, 100.0).sampling(5);
        let mut a = SpectrumSampler::new(&dbc);
        let mut b = SpectrumSampler::new(&pbc);
        integrate(&dbc, &s, &cfg, &mut [&mut a]).unwrap();
        integrate(&pbc, &odd_extend(&dbc, &s).unwrap(), &cfg, &mut [&mut b]).unwrap();
        let avg = pair_average(&b.spectrum).unwrap();
        for k in 1..=15 {
            let x = a.spectrum.value(k).unwrap();
            let y = avg.value(k).unwrap();
            assert!((x - y).abs() < 1e-10 * a.spectrum.e_avg[0], "k={k}: {x} vs {y}");
        }
    }

    #[test]
    fn exact_fits() {
        let k: Vec<i64> = (1..60).collect();
        let e: Vec<f64> = k.iter().map(|&k| 3.0 * (-0.1 * k as f64).exp()).collect();
        let f = fit_decay(&k, &e, FitKind::Exponential, (1, 59), false).unwrap();
        assert!((f.slope + 0.1).abs() < 1e-12 && f.residual < 1e-12);
        let e: Vec<f64> = k.iter().map(|&k| 2.0 * (k as f64).powi(-6)).collect();
        let f = fit_decay(&k, &e, FitKind::Powerlaw, (5, 59), true).unwrap();
        assert!((f.slope + 6.0).abs() < 1e-12);
        assert_eq!(f.k_range, (5, 59));
        assert_eq!(f.points, 28);
    }

    #[test]
    fn noisy_power_law() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let k: Vec<i64> = (1..300).collect();
        let e: Vec<f64> = k.iter().map(|&k| 1e-3 * (k as f64).powi(-6) * (1.0 + rng.gen_range(-0.1..0.1))).collect();
        let f = fit_decay(&k, &e, FitKind::Powerlaw, (11, 299), true).unwrap();
        assert!((f.slope + 6.0).abs() < 0.3, "slope {}", f.slope);
    }

    #[test]
    fn fit_errors() {
        let k: Vec<i64> = (1..10).collect();
        let mut e = vec![1.0; 9];
        e[4] = 0.0;
        assert!(matches!(fit_decay(&k, &e, FitKind::Exponential, (1, 9), false), Err(Error::NonPositiveEnergy { k: 5, .. })));
        assert!(matches!(fit_decay(&k, &[1.0; 9], FitKind::Exponential, (1, 6), true), Err(Error::WindowTooShort { .. })));
    }

    #[test]
    fn no_crossover_for_pure_exponential() {
        let k: Vec<i64> = (1..200).collect();
        let e: Vec<f64> = k.iter().map(|&k| (-0.2 * k as f64).exp()).collect();
        let c = detect_crossover(&k, &e, &CrossoverOptions::for_chain(255)).unwrap();
        assert!(c.k_star.is_none());
    }

    #[test]
    fn crossover_at_intersection() {
        let k: Vec<i64> = (1..=511).collect();
        let e: Vec<f64> = k.iter().map(|&k| (-0.5 * k as f64).exp().max(1e-4 * (k as f64).powi(-6))).collect();
        // e^{-k/2} = 1e-4 k^-6 solved by bisection
        let g = |x: f64| -0.5 * x - (1e-4f64.ln() - 6.0 * x.ln());
        let (mut a, mut b) = (20.0, 200.0);
        for _ in 0..100 {
            let m = 0.5 * (a + b);
            if g(m) > 0.0 { a = m } else { b = m }
        }
        let c = detect_crossover(&k, &e, &CrossoverOptions::for_chain(511)).unwrap();
        let ks = c.k_star.unwrap() as f64;
        assert!((ks - a).abs() <= 2.0, "k* {ks}, intersection {a}");
        assert!((c.tail.unwrap().slope + 6.0).abs() < 1e-6);
    }

    #[test]
    fn crossover_requires_two_decades() {
        let k: Vec<i64> = (1..100).collect();
        let e: Vec<f64> = k.iter().map(|&k| 1.0 + 1e-3 * k as f64).collect();
        assert!(matches!(detect_crossover(&k, &e, &CrossoverOptions::for_chain(99)), Err(Error::NarrowSpectrum { .. })));
    }

    proptest! {
        #[test]
        fn accumulate_refinement_invariant(c0 in -2.0f64..2.0, c1 in -2.0f64..2.0, t_end in 0.5f64..20.0, n in 2usize..50) {
            let mut coarse = dummy(1);
            let mut fine = dummy(1);
            for i in 0..=n {
                let t = t_end * i as f64 / n as f64;
                coarse.accumulate(&[c0 + c1 * t], t).unwrap();
            }
            for i in 0..=3 * n {
                let t = t_end * i as f64 / (3 * n) as f64;
                fine.accumulate(&[c0 + c1 * t], t).unwrap();
            }
            prop_assert!((coarse.e_avg[0] - fine.e_avg[0]).abs() < 1e-12 * (1.0 + c0.abs() + c1.abs() * t_end));
        }

        #[test]
        fn fits_under_energy_scaling(scale in 1e-6f64..1e6, slope in -8.0f64..-1.0, seed in 0u64..100) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let k: Vec<i64> = (1..80).collect();
            let e: Vec<f64> = k.iter().map(|&k| (k as f64).powf(slope) * (1.0 + rng.gen_range(-0.1..0.1))).collect();
            let scaled: Vec<f64> = e.iter().map(|v| v * scale).collect();
            for kind in [FitKind::Exponential, FitKind::Powerlaw] {
                let a = fit_decay(&k, &e, kind, (3, 79), true).unwrap();
                let b = fit_decay(&k, &scaled, kind, (3, 79), true).unwrap();
                prop_assert!((a.slope - b.slope).abs() < 1e-9);
                prop_assert!((b.intercept - a.intercept - scale.ln()).abs() < 1e-9);
            }
        }
    }
}
