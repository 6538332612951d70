//! Batch runs: configuration, artifacts and provenance.
//!
//! Every artifact carries the hash of the configuration that produced it.
//! CSV files start with a `# config_hash=<hex>` line, JSON reports have a
//! `config_hash` field. The hash covers everything except the output
//! directory, so the same physics written elsewhere keeps its identity.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::correction::{
    default_norms, mode_magnitudes, phi_field, run_comparison, z10, CompareConfig, CompareSample, CorrectionModel,
    NormSpec,
};
use crate::error::{Error, Result};
use crate::integrator::{integrate, CheckpointWriter, EnergyMonitor, IntegratorConfig, Method};
use crate::lattice::{Boundary, LatticeParams, SiteState};
use crate::nls::{imaginary_sine, nls_invariants, NlsField, NlsPropagator};
use crate::observables::{
    detect_crossover, fit_decay, pair_average, AveragedSpectrum, Crossover, CrossoverOptions, DecayFit, FitKind, SpectrumSampler,
};
use crate::spectral::{frequency, mode_index, ModeState, ModeTransform};

pub const HASH_PREFIX: &str = "# config_hash=";
/// Overrides the sweep pool size.
pub const WORKERS_ENV: &str = "KGCHAIN_WORKERS";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeEnergy {
    pub k: i64,
    pub energy: f64,
}

/// Zero-velocity initial data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialCondition {
    /// All energy on mode 1, `density` per moving site.
    EnergyDensity { density: f64 },
    Modes { modes: Vec<ModeEnergy> },
}

impl Default for InitialCondition {
    fn default() -> Self {
        InitialCondition::EnergyDensity { density: 1e-3 }
    }
}

impl InitialCondition {
    pub fn mode_energies(&self, params: &LatticeParams) -> Vec<ModeEnergy> {
        match self {
            InitialCondition::EnergyDensity { density } => {
                vec![ModeEnergy { k: 1, energy: density * params.sites() as f64 }]
            }
            InitialCondition::Modes { modes } => modes.clone(),
        }
    }

    /// `q_k = sqrt(2 E_k / omega_k)`, `p = 0`.
    pub fn build(&self, params: &LatticeParams) -> Result<SiteState> {
        let tr = ModeTransform::new(params);
        let mut modes = ModeState::zeros(params.sites());
        for m in self.mode_energies(params) {
            if !m.energy.is_finite() || m.energy < 0.0 {
                return Err(Error::InvalidConfig(format!("mode {} energy {} must be finite and >= 0", m.k, m.energy)));
            }
            let i = mode_index(params, m.k).map_err(|e| Error::InvalidConfig(e.to_string()))?;
            modes.q_hat[i] = (2.0 * m.energy / frequency(m.k, params)).sqrt();
        }
        tr.from_modes(&modes)
    }
}

/// Fit windows and crossover search for spectra.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSpec {
    /// Exponential fit window; defaults to the detected head.
    #[serde(default)]
    pub head: Option<(i64, i64)>,
    /// Power-law fit window; defaults to the detected tail.
    #[serde(default)]
    pub tail: Option<(i64, i64)>,
    /// Largest mode the crossover search sees; defaults to `0.6 N`.
    #[serde(default)]
    pub k_max: Option<i64>,
    /// Modes with `E_avg` below this are ignored.
    #[serde(default)]
    pub floor: f64,
    /// Same, relative to the largest mode energy. The default sits a few
    /// decades above the double-precision roundoff level of `E_k`.
    #[serde(default = "roundoff_floor")]
    pub relative_floor: f64,
}

pub const ROUNDOFF_FLOOR: f64 = 1e-24;

fn roundoff_floor() -> f64 {
    ROUNDOFF_FLOOR
}

impl Default for FitSpec {
    fn default() -> Self {
        FitSpec { head: None, tail: None, k_max: None, floor: 0.0, relative_floor: ROUNDOFF_FLOOR }
    }
}

impl FitSpec {
    pub fn crossover_options(&self, n: usize, odd_only: bool, e_max: f64) -> CrossoverOptions {
        let mut o = CrossoverOptions::for_chain(n);
        o.odd_only = odd_only;
        if let Some(k) = self.k_max {
            o.k_max = k;
        }
        o.floor = self.floor.max(self.relative_floor * e_max);
        o
    }
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservableSpec {
    /// Restrict written spectra and fits to odd modes.
    #[serde(default = "yes")]
    pub odd_only: bool,
    /// Initial transient left out of the time average.
    #[serde(default)]
    pub discard: f64,
    #[serde(default)]
    pub fit: FitSpec,
    #[serde(default = "default_norms")]
    pub norms: Vec<NormSpec>,
}

impl Default for ObservableSpec {
    fn default() -> Self {
        ObservableSpec { odd_only: true, discard: 0.0, fit: FitSpec::default(), norms: default_norms() }
    }
}

fn unit() -> f64 {
    1.0
}

fn hundred() -> u64 {
    100
}

fn spectrum_window() -> (i64, i64) {
    (11, 201)
}

/// Lattice against envelope runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareSpec {
    /// Runs last `horizon * mu^-b`.
    #[serde(default = "unit")]
    pub horizon: f64,
    #[serde(default = "two")]
    pub b: f64,
    /// Number of error samples over the run.
    #[serde(default = "hundred")]
    pub samples: u64,
    #[serde(default)]
    pub correction: Option<CorrectionModel>,
    /// Time of the correction spectrum.
    #[serde(default = "unit")]
    pub t_spectrum: f64,
    #[serde(default = "spectrum_window")]
    pub spectrum_window: (i64, i64),
    /// Envelope step; defaults to the propagator's choice.
    #[serde(default)]
    pub nls_step: Option<f64>,
}

fn two() -> f64 {
    2.0
}

impl Default for CompareSpec {
    fn default() -> Self {
        CompareSpec {
            horizon: 1.0,
            b: 2.0,
            samples: 100,
            correction: None,
            t_spectrum: 1.0,
            spectrum_window: spectrum_window(),
            nls_step: None,
        }
    }
}

impl CompareSpec {
    pub fn t_end(&self, params: &LatticeParams) -> f64 {
        self.horizon * params.mu().powf(-self.b)
    }
}

/// Stand-alone envelope runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NlsSpec {
    #[serde(default = "unit")]
    pub tau_end: f64,
    #[serde(default)]
    pub step: Option<f64>,
    /// Snapshots written over the run, beside the initial one.
    #[serde(default = "one_u64")]
    pub snapshots: u64,
}

fn one_u64() -> u64 {
    1
}

impl Default for NlsSpec {
    fn default() -> Self {
        NlsSpec { tau_end: 1.0, step: None, snapshots: 1 }
    }
}

fn default_output() -> PathBuf {
    PathBuf::from("runs/default")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub lattice: LatticeParams,
    pub integrator: IntegratorConfig,
    #[serde(default)]
    pub initial: InitialCondition,
    #[serde(default)]
    pub observables: ObservableSpec,
    #[serde(default)]
    pub compare: CompareSpec,
    #[serde(default)]
    pub nls: NlsSpec,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    /// Only used by synthetic noisy tests; physics runs are deterministic.
    #[serde(default)]
    pub seed: u64,
}

impl RunConfig {
    /// `N = 511`, `a = 0.5`, `alpha = 0.25`, Dirichlet, energy density `1e-3`,
    /// `T = 1e5` at `dt = 0.1`, sampled every 10 steps.
    pub fn production() -> Self {
        RunConfig {
            lattice: LatticeParams { n: 511, a: 0.5, alpha: 0.25, beta: 0.0, bc: Boundary::Dirichlet },
            integrator: IntegratorConfig::new(Method::Yoshida4, 0.1, 1e5).sampling(10),
            initial: InitialCondition::default(),
            observables: ObservableSpec::default(),
            compare: CompareSpec::default(),
            nls: NlsSpec::default(),
            output: default_output(),
            seed: 0,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.lattice.validate().map_err(|e| Error::InvalidConfig(e.to_string()))?;
        self.integrator.validate(self.lattice.omega_max())?;
        self.initial.build(&self.lattice)?;
        let o = &self.observables;
        if !o.discard.is_finite() || o.discard < 0.0 {
            return Err(Error::InvalidConfig(format!("discard = {} must be >= 0", o.discard)));
        }
        for w in [o.fit.head, o.fit.tail, Some(self.compare.spectrum_window)].into_iter().flatten() {
            if w.0 < 0 || w.1 < w.0 {
                return Err(Error::InvalidConfig(format!("bad fit window {w:?}")));
            }
        }
        for ns in &o.norms {
            if !(ns.s.is_finite() && ns.sigma.is_finite() && ns.sigma >= 0.0) {
                return Err(Error::InvalidConfig(format!("bad norm {ns:?}")));
            }
        }
        let c = &self.compare;
        if !(c.horizon >= 0.0 && c.horizon.is_finite() && c.b.is_finite() && c.t_spectrum >= 0.0) {
            return Err(Error::InvalidConfig("compare horizon, b and t_spectrum must be finite".into()));
        }
        if c.samples == 0 {
            return Err(Error::InvalidConfig("compare.samples must be at least 1".into()));
        }
        if !(self.nls.tau_end >= 0.0 && self.nls.tau_end.is_finite()) || self.nls.snapshots == 0 {
            return Err(Error::InvalidConfig("nls.tau_end must be >= 0 and snapshots >= 1".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, with the output directory blanked.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = PathBuf::new();
        let json = serde_json::to_string(&c).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub config_hash: String,
    pub config: RunConfig,
    pub files: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, cfg: &RunConfig) -> Self {
        Manifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: cfg.hash(),
            config: cfg.clone(),
            files: Vec::new(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("manifest.json");
        fs::write(&path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(path)
    }

    /// Loads a manifest and checks the stored hash against its config.
    pub fn load(path: &Path) -> Result<Self> {
        let m: Manifest = serde_json::from_str(&fs::read_to_string(path)?)?;
        let h = m.config.hash();
        if h != m.config_hash {
            return Err(Error::Provenance { expected: h, found: m.config_hash });
        }
        Ok(m)
    }
}

pub fn check_lineage(expected: &str, got: &str, what: &str) -> Result<()> {
    if expected != got {
        log::error!("{what} does not share the expected lineage");
        return Err(Error::Provenance { expected: expected.to_string(), found: got.to_string() });
    }
    Ok(())
}

fn csv_header(hash: &str, columns: &[&str]) -> String {
    format!("{HASH_PREFIX}{hash}\n{}\n", columns.join(","))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    Ok(())
}

/// A stored spectrum, as read back from CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumTable {
    pub config_hash: String,
    pub k: Vec<i64>,
    pub omega: Vec<f64>,
    pub e_avg: Vec<f64>,
    pub t_accum: f64,
}

pub fn write_spectrum_csv(path: &Path, spec: &AveragedSpectrum, odd_only: bool, hash: &str) -> Result<()> {
    let mut out = csv_header(hash, &["k", "omega_k", "E_avg", "t_accum"]);
    let mut rows: Vec<(i64, f64, f64)> =
        spec.k.iter().zip(&spec.omega).zip(&spec.e_avg).map(|((k, w), e)| (*k, *w, *e)).collect();
    rows.retain(|r| r.0 > 0 && (!odd_only || r.0 % 2 == 1));
    rows.sort_by_key(|r| r.0);
    for (k, w, e) in rows {
        let _ = writeln!(out, "{k},{w:e},{e:e},{}", spec.t_accum);
    }
    write_text(path, &out)
}

/// Reads the hash line, then the CSV body. Errors carry 1-based line numbers.
fn read_tagged_csv(path: &Path) -> Result<(String, Vec<(u64, csv::StringRecord)>)> {
    let text = fs::read_to_string(path)?;
    let first = text.lines().next().unwrap_or("");
    let hash = first
        .strip_prefix(HASH_PREFIX)
        .ok_or_else(|| Error::Parse { line: 1, msg: format!("expected a '{HASH_PREFIX}' line") })?
        .trim()
        .to_string();
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            msg: e.to_string(),
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        rows.push((line, rec));
    }
    Ok((hash, rows))
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, line: u64, name: &str) -> Result<T> {
    let raw = rec.get(i).ok_or_else(|| Error::Parse { line, msg: format!("missing column {name}") })?;
    raw.parse().map_err(|_| Error::Parse { line, msg: format!("bad {name} value '{raw}'") })
}

pub fn read_spectrum_csv(path: &Path) -> Result<SpectrumTable> {
    let (config_hash, rows) = read_tagged_csv(path)?;
    let mut t = SpectrumTable { config_hash, k: Vec::new(), omega: Vec::new(), e_avg: Vec::new(), t_accum: 0.0 };
    for (line, rec) in rows {
        if rec.len() != 4 {
            return Err(Error::Parse { line, msg: format!("expected 4 columns, found {}", rec.len()) });
        }
        t.k.push(field(&rec, 0, line, "k")?);
        t.omega.push(field(&rec, 1, line, "omega_k")?);
        let e: f64 = field(&rec, 2, line, "E_avg")?;
        if !e.is_finite() {
            return Err(Error::Parse { line, msg: "non-finite E_avg".into() });
        }
        t.e_avg.push(e);
        t.t_accum = field(&rec, 3, line, "t_accum")?;
    }
    Ok(t)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub config_hash: String,
    pub odd_only: bool,
    pub crossover: Option<Crossover>,
    /// Exponential fit over the head window.
    pub head: Option<DecayFit>,
    /// Power-law fit over the tail window.
    pub tail: Option<DecayFit>,
    pub k_star: Option<i64>,
    pub e_star: Option<f64>,
}

/// Crossover search plus explicit head and tail fits.
///
/// A spectrum too narrow for the search still gets the explicit fits.
pub fn fit_table(table: &SpectrumTable, spec: &FitSpec, n: usize, odd_only: bool) -> Result<FitReport> {
    let e_max = table.e_avg.iter().copied().fold(0.0, f64::max);
    let crossover = match detect_crossover(&table.k, &table.e_avg, &spec.crossover_options(n, odd_only, e_max)) {
        Ok(c) => Some(c),
        Err(e @ (Error::NarrowSpectrum { .. } | Error::WindowTooShort { .. })) => {
            if spec.head.is_none() && spec.tail.is_none() {
                return Err(e);
            }
            log::warn!("crossover search skipped: {e}");
            None
        }
        Err(e) => return Err(e),
    };
    let fit = |w: Option<(i64, i64)>, kind| w.map(|w| fit_decay(&table.k, &table.e_avg, kind, w, odd_only)).transpose();
    let head = match fit(spec.head, FitKind::Exponential)? {
        Some(f) => Some(f),
        None => crossover.as_ref().and_then(|c| c.head.clone().or_else(|| Some(c.single.clone()))),
    };
    let tail = match fit(spec.tail, FitKind::Powerlaw)? {
        Some(f) => Some(f),
        None => crossover.as_ref().and_then(|c| c.tail.clone()),
    };
    Ok(FitReport {
        config_hash: table.config_hash.clone(),
        odd_only,
        k_star: crossover.as_ref().and_then(|c| c.k_star),
        e_star: crossover.as_ref().and_then(|c| c.e_star),
        crossover,
        head,
        tail,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn prepare(cfg: &RunConfig, dir: &Path) -> Result<String> {
    cfg.validate()?;
    fs::create_dir_all(dir)?;
    Ok(cfg.hash())
}

pub struct SimulateOutput {
    pub dir: PathBuf,
    pub config_hash: String,
    pub spectrum: AveragedSpectrum,
    pub final_state: SiteState,
    pub max_drift: f64,
    pub fit: Option<FitReport>,
}

/// Integrates the configured chain, writing `spectrum.csv`,
/// `energy_drift.csv`, `fit.json`, `checkpoint.json` and `manifest.json`.
pub fn simulate(cfg: &RunConfig) -> Result<SimulateOutput> {
    let dir = cfg.output.clone();
    let hash = prepare(cfg, &dir)?;
    let params = cfg.lattice;
    let start = cfg.initial.build(&params)?;
    let mut sampler = SpectrumSampler::new(&params).with_discard(cfg.observables.discard);
    let mut monitor = EnergyMonitor::new(&params);
    let mut files = vec!["spectrum.csv".to_string(), "energy_drift.csv".to_string()];
    let final_state = if cfg.integrator.checkpoint_every > 0 {
        let mut ckpt = CheckpointWriter::new(&dir, params, cfg.integrator, &hash);
        let s = integrate(&params, &start, &cfg.integrator, &mut [&mut sampler, &mut monitor, &mut ckpt])?;
        files.push("checkpoint.json".into());
        s
    } else {
        integrate(&params, &start, &cfg.integrator, &mut [&mut sampler, &mut monitor])?
    };
    let odd = cfg.observables.odd_only;
    let spectrum = paired(sampler.spectrum)?;
    write_spectrum_csv(&dir.join("spectrum.csv"), &spectrum, odd, &hash)?;
    let mut drift = csv_header(&hash, &["t", "H", "rel_drift"]);
    let h0 = monitor.energies.first().copied().unwrap_or(0.0);
    for (t, h) in monitor.times.iter().zip(&monitor.energies) {
        let rel = if h0 != 0.0 { (h - h0) / h0 } else { *h };
        let _ = writeln!(drift, "{t},{h:e},{rel:e}");
    }
    write_text(&dir.join("energy_drift.csv"), &drift)?;
    let table = read_spectrum_csv(&dir.join("spectrum.csv"))?;
    let fit = match fit_table(&table, &cfg.observables.fit, params.n, odd) {
        Ok(r) => {
            write_json(&dir.join("fit.json"), &r)?;
            files.push("fit.json".into());
            Some(r)
        }
        Err(e) => {
            log::warn!("no fit report: {e}");
            None
        }
    };
    let mut m = Manifest::new("simulate", cfg);
    m.files = files;
    m.write(&dir)?;
    Ok(SimulateOutput {
        dir,
        config_hash: hash,
        spectrum,
        final_state,
        max_drift: monitor.max_relative_drift(),
        fit,
    })
}

/// Periodic spectra are reported as `k, -k` pair averages.
fn paired(spec: AveragedSpectrum) -> Result<AveragedSpectrum> {
    match spec.params.bc {
        Boundary::Periodic => pair_average(&spec),
        Boundary::Dirichlet => Ok(spec),
    }
}

/// Instantaneous mode energies of a stored checkpoint, as a spectrum CSV with `t_accum = 0`.
pub fn checkpoint_spectrum(checkpoint: &Path, out: &Path, odd_only: bool) -> Result<AveragedSpectrum> {
    let ck = crate::integrator::Checkpoint::load(checkpoint)?;
    let tr = ModeTransform::new(&ck.params);
    let e = tr.energies(&ck.state)?;
    let spec = paired(AveragedSpectrum::from_values(&ck.params, tr.labels().to_vec(), tr.freqs().omega.clone(), e, 0.0))?;
    write_spectrum_csv(out, &spec, odd_only, &ck.config_hash)?;
    Ok(spec)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub config_hash: String,
    pub n: usize,
    pub mu: f64,
    pub t_end: f64,
    pub norms: Vec<NormSpec>,
    /// `sup_t || z_1 ||` per norm.
    pub sup_error: Vec<f64>,
    /// `sup_t || z_1 - z_10 ||` per norm, when a correction model is set.
    pub sup_corrected: Vec<f64>,
    /// The same two quantities at the final time.
    pub final_error: Vec<f64>,
    pub final_corrected: Vec<f64>,
}

fn compare_config(cfg: &RunConfig, t_end: f64) -> CompareConfig {
    let steps = ((t_end / cfg.integrator.dt).round() as u64).max(1);
    CompareConfig {
        method: cfg.integrator.method,
        dt: cfg.integrator.dt,
        t_end,
        sample_every: (steps / cfg.compare.samples).max(1),
        norms: cfg.observables.norms.clone(),
        correction: cfg.compare.correction,
        nls_step: cfg.compare.nls_step,
    }
}

fn sup(samples: &[CompareSample], f: impl Fn(&CompareSample) -> &Vec<f64>, n: usize) -> Vec<f64> {
    (0..n).map(|i| samples.iter().filter_map(|s| f(s).get(i)).fold(0.0, |m: f64, v| m.max(*v))).collect()
}

/// Lattice run from `mu z^a(0)` with `phi0 = i sin x`, next to the envelope.
/// Writes `error_series.csv`, `compare.json` and `manifest.json`.
pub fn compare(cfg: &RunConfig) -> Result<CompareReport> {
    let dir = cfg.output.clone();
    let hash = prepare(cfg, &dir)?;
    let params = cfg.lattice;
    let t_end = cfg.compare.t_end(&params);
    let ccfg = compare_config(cfg, t_end);
    let phi0 = imaginary_sine(params.bc, params.n);
    let cmp = run_comparison(&params, &phi0, &ccfg)?;
    let mut cols = vec!["t".to_string()];
    cols.extend(ccfg.norms.iter().map(|n| n.label()));
    if ccfg.correction.is_some() {
        cols.extend(ccfg.norms.iter().map(|n| format!("corrected_{}", n.label())));
    }
    let cols: Vec<&str> = cols.iter().map(String::as_str).collect();
    let mut out = csv_header(&hash, &cols);
    for s in &cmp.samples {
        let mut row = vec![s.t.to_string()];
        row.extend(s.error.iter().chain(&s.corrected).map(|v| format!("{v:e}")));
        out.push_str(&row.join(","));
        out.push('\n');
    }
    write_text(&dir.join("error_series.csv"), &out)?;
    let n = ccfg.norms.len();
    let last = cmp.samples.last().expect("at least one sample");
    let report = CompareReport {
        config_hash: hash.clone(),
        n: params.n,
        mu: params.mu(),
        t_end,
        norms: ccfg.norms.clone(),
        sup_error: sup(&cmp.samples, |s| &s.error, n),
        sup_corrected: if ccfg.correction.is_some() { sup(&cmp.samples, |s| &s.corrected, n) } else { Vec::new() },
        final_error: last.error.clone(),
        final_corrected: last.corrected.clone(),
    };
    write_json(&dir.join("compare.json"), &report)?;
    let mut m = Manifest::new("compare", cfg);
    m.files = vec!["error_series.csv".into(), "compare.json".into()];
    m.write(&dir)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrectionReport {
    pub config_hash: String,
    pub t: f64,
    pub model: CorrectionModel,
    pub k: Vec<i64>,
    /// `|z_1,k|` measured.
    pub measured: Vec<f64>,
    /// `|z_10,k|` predicted.
    pub predicted: Vec<f64>,
    pub measured_fit: Option<DecayFit>,
    pub predicted_fit: Option<DecayFit>,
}

/// Measured remainder against the correction, mode by mode, at `compare.t_spectrum`.
/// Writes `correction_spectrum.csv`, `correction.json` and `manifest.json`.
pub fn correction(cfg: &RunConfig) -> Result<CorrectionReport> {
    let dir = cfg.output.clone();
    let hash = prepare(cfg, &dir)?;
    let params = cfg.lattice;
    let t = cfg.compare.t_spectrum;
    let model = cfg.compare.correction.unwrap_or_default();
    let mut ccfg = compare_config(cfg, t);
    ccfg.correction = None;
    let phi0 = imaginary_sine(params.bc, params.n);
    let cmp = run_comparison(&params, &phi0, &ccfg)?;
    let corr = phi_field(&phi0, params.alpha)?;
    let predicted_state = z10(&corr, cmp.last.t, &params, model)?;
    let tr = ModeTransform::new(&params);
    let measured = mode_magnitudes(&tr, &cmp.last.z1)?;
    let predicted = mode_magnitudes(&tr, &predicted_state)?;
    let mut rows: Vec<(i64, f64, f64)> =
        tr.labels().iter().zip(&measured).zip(&predicted).map(|((k, a), b)| (*k, *a, *b)).collect();
    rows.retain(|r| r.0 > 0 && (!cfg.observables.odd_only || r.0 % 2 == 1));
    rows.sort_by_key(|r| r.0);
    let mut out = csv_header(&hash, &["k", "z1", "z10"]);
    for (k, a, b) in &rows {
        let _ = writeln!(out, "{k},{a:e},{b:e}");
    }
    write_text(&dir.join("correction_spectrum.csv"), &out)?;
    let k: Vec<i64> = rows.iter().map(|r| r.0).collect();
    let a: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let b: Vec<f64> = rows.iter().map(|r| r.2).collect();
    let (lo, hi) = cfg.compare.spectrum_window;
    let w = (lo, hi.min(params.n as i64));
    let fit = |e: &[f64]| match fit_decay(&k, e, FitKind::Powerlaw, w, cfg.observables.odd_only) {
        Ok(f) => Some(f),
        Err(err) => {
            log::warn!("correction spectrum fit skipped: {err}");
            None
        }
    };
    let report = CorrectionReport {
        config_hash: hash,
        t: cmp.last.t,
        model,
        measured_fit: fit(&a),
        predicted_fit: fit(&b),
        k,
        measured: a,
        predicted: b,
    };
    write_json(&dir.join("correction.json"), &report)?;
    let mut m = Manifest::new("correction", cfg);
    m.files = vec!["correction_spectrum.csv".into(), "correction.json".into()];
    m.write(&dir)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NlsReport {
    pub config_hash: String,
    pub gamma: f64,
    pub dispersion: f64,
    pub step: f64,
    pub tau: Vec<f64>,
    pub mass: Vec<f64>,
    pub energy: Vec<f64>,
}

/// Envelope run from `i sin x` in the chain's sector; writes `field.csv`
/// (one block of rows per snapshot), `nls.json` and `manifest.json`.
pub fn nls(cfg: &RunConfig) -> Result<NlsReport> {
    let dir = cfg.output.clone();
    let hash = prepare(cfg, &dir)?;
    let params = cfg.lattice;
    let mut field = NlsField::for_lattice(imaginary_sine(params.bc, params.n), &params)?;
    let prop = NlsPropagator::for_series(&field.series);
    let step = cfg.nls.step.unwrap_or_else(|| prop.default_step(field.dispersion));
    let mut out = csv_header(&hash, &["k", "re", "im", "tau"]);
    let mut report = NlsReport {
        config_hash: hash.clone(),
        gamma: field.gamma,
        dispersion: field.dispersion,
        step,
        tau: Vec::new(),
        mass: Vec::new(),
        energy: Vec::new(),
    };
    let snaps = cfg.nls.snapshots;
    for i in 0..=snaps {
        let tau = cfg.nls.tau_end * i as f64 / snaps as f64;
        prop.evolve_to(&mut field, tau, step)?;
        for (k, c) in field.series.labels().iter().zip(&field.series.coeffs) {
            let _ = writeln!(out, "{k},{:e},{:e},{}", c.re, c.im, field.tau);
        }
        let (m, e) = nls_invariants(&field);
        report.tau.push(field.tau);
        report.mass.push(m);
        report.energy.push(e);
    }
    write_text(&dir.join("field.csv"), &out)?;
    write_json(&dir.join("nls.json"), &report)?;
    let mut m = Manifest::new("nls", cfg);
    m.files = vec!["field.csv".into(), "nls.json".into()];
    m.write(&dir)?;
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    N,
    Density,
    Alpha,
    Beta,
    A,
    Dt,
}

impl std::str::FromStr for SweepParam {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "n" => SweepParam::N,
            "density" => SweepParam::Density,
            "alpha" => SweepParam::Alpha,
            "beta" => SweepParam::Beta,
            "a" => SweepParam::A,
            "dt" => SweepParam::Dt,
            _ => return Err(Error::InvalidConfig(format!("unknown sweep parameter '{s}'"))),
        })
    }
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::N => "n",
            SweepParam::Density => "density",
            SweepParam::Alpha => "alpha",
            SweepParam::Beta => "beta",
            SweepParam::A => "a",
            SweepParam::Dt => "dt",
        }
    }

    pub fn apply(self, cfg: &mut RunConfig, v: f64) -> Result<()> {
        match self {
            SweepParam::N => {
                if v < 1.0 || v.fract() != 0.0 {
                    return Err(Error::InvalidConfig(format!("N = {v} must be a positive integer")));
                }
                cfg.lattice.n = v as usize;
            }
            SweepParam::Density => cfg.initial = InitialCondition::EnergyDensity { density: v },
            SweepParam::Alpha => cfg.lattice.alpha = v,
            SweepParam::Beta => cfg.lattice.beta = v,
            SweepParam::A => cfg.lattice.a = v,
            SweepParam::Dt => cfg.integrator.dt = v,
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    Simulate,
    Compare,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepMember {
    pub value: f64,
    pub config_hash: String,
    pub output: PathBuf,
    pub fit: Option<FitReport>,
    pub max_drift: Option<f64>,
    pub compare: Option<CompareReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub param: SweepParam,
    pub kind: SweepKind,
    pub members: Vec<SweepMember>,
    /// For compare sweeps: `sup_error[i] / sup_error[i+1]` per norm, and
    /// the same for the corrected error.
    pub error_ratios: Vec<Vec<f64>>,
    pub corrected_ratios: Vec<Vec<f64>>,
}

/// Worker count from the environment, else the available parallelism.
pub fn worker_count() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

fn ratios(members: &[SweepMember], f: impl Fn(&CompareReport) -> &Vec<f64>) -> Vec<Vec<f64>> {
    members
        .windows(2)
        .filter_map(|w| {
            let (a, b) = (f(w[0].compare.as_ref()?), f(w[1].compare.as_ref()?));
            Some(a.iter().zip(b).map(|(x, y)| x / y).collect())
        })
        .collect()
}

/// Runs one member per value on a bounded pool and writes `sweep.json`
/// once all of them are done.
pub fn sweep(base: &RunConfig, param: SweepParam, values: &[f64], kind: SweepKind) -> Result<SweepReport> {
    use rayon::prelude::*;
    if values.is_empty() {
        return Err(Error::InvalidConfig("sweep needs at least one value".into()));
    }
    let mut members = Vec::with_capacity(values.len());
    for &v in values {
        let mut c = base.clone();
        param.apply(&mut c, v)?;
        c.output = base.output.join(format!("{}_{v}", param.name()));
        c.validate()?;
        members.push(c);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count())
        .build()
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let results: Vec<Result<SweepMember>> = pool.install(|| {
        members
            .par_iter()
            .zip(values.par_iter())
            .map(|(c, &value)| {
                let mut m = SweepMember {
                    value,
                    config_hash: c.hash(),
                    output: c.output.clone(),
                    fit: None,
                    max_drift: None,
                    compare: None,
                };
                match kind {
                    SweepKind::Simulate => {
                        let out = simulate(c)?;
                        m.fit = out.fit;
                        m.max_drift = Some(out.max_drift);
                    }
                    SweepKind::Compare => m.compare = Some(compare(c)?),
                }
                Ok(m)
            })
            .collect()
    });
    let members = results.into_iter().collect::<Result<Vec<_>>>()?;
    for m in &members {
        let stored = Manifest::load(&m.output.join("manifest.json"))?;
        check_lineage(&m.config_hash, &stored.config_hash, &m.output.display().to_string())?;
    }
    let report = SweepReport {
        param,
        kind,
        error_ratios: ratios(&members, |c| &c.sup_error),
        corrected_ratios: ratios(&members, |c| &c.sup_corrected),
        members,
    };
    write_json(&base.output.join("sweep.json"), &report)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::eval_energy;
    use crate::spectral::mode_energies;

    fn small(dir: &Path) -> RunConfig {
        let mut c = RunConfig::production();
        c.lattice.n = 15;
        c.integrator = IntegratorConfig::new(Method::Yoshida4, 0.1, 20.0).sampling(5).checkpoints(50);
        c.output = dir.to_path_buf();
        c
    }

    #[test]
    fn toml_round_trip_and_defaults() {
        let text = r#"
            [lattice]
            n = 31
            a = 0.5
            alpha = 0.25
            beta = 0.0
            bc = "periodic"

            [integrator]
            dt = 0.05
            t_end = 10.0
        "#;
        let c = RunConfig::from_toml(text).unwrap();
        assert_eq!(c.integrator.method, Method::Yoshida4);
        assert_eq!(c.integrator.sample_every, 1);
        assert_eq!(c.initial, InitialCondition::EnergyDensity { density: 1e-3 });
        assert!(c.observables.odd_only);
        assert_eq!(c.observables.norms.len(), 3);
        let back = RunConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = RunConfig::production();
        c.integrator.dt = 5.0;
        assert!(matches!(c.validate(), Err(Error::Unstable { .. })));
        let mut c = RunConfig::production();
        c.lattice.a = -1.0;
        assert_eq!(c.validate().unwrap_err().exit_code(), 2);
        let mut c = RunConfig::production();
        c.initial = InitialCondition::Modes { modes: vec![ModeEnergy { k: 600, energy: 1.0 }] };
        assert_eq!(c.validate().unwrap_err().exit_code(), 2);
        assert!(RunConfig::from_toml("[lattice]\nn = 3").is_err());
        let unknown = RunConfig::production().to_toml().unwrap() + "\nbogus = 1\n";
        assert!(RunConfig::from_toml(&unknown).is_err());
    }

    #[test]
    fn hash_ignores_output_only() {
        let a = RunConfig::production();
        let mut b = a.clone();
        b.output = PathBuf::from("elsewhere");
        assert_eq!(a.hash(), b.hash());
        b.lattice.alpha = 0.3;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn initial_datum_energy() {
        for bc in [Boundary::Dirichlet, Boundary::Periodic] {
            let params = LatticeParams::new(31, 0.5, 0.0, 0.0, bc).unwrap();
            let s = InitialCondition::EnergyDensity { density: 0.01 }.build(&params).unwrap();
            assert!(s.p.iter().all(|p| p.abs() < 1e-15));
            let e = eval_energy(&params, &s).unwrap();
            assert!((e / params.sites() as f64 - 0.01).abs() < 1e-14);
            let tr = ModeTransform::new(&params);
            let en = mode_energies(&tr.to_modes(&s).unwrap(), tr.freqs());
            let i = mode_index(&params, 1).unwrap();
            assert!((en[i] - e).abs() < 1e-14 * e);
        }
    }

    #[test]
    fn spectrum_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let params = LatticeParams::dirichlet(7, 0.5, 0.0, 0.0).unwrap();
        let k: Vec<i64> = (1..=7).collect();
        let omega: Vec<f64> = k.iter().map(|&k| frequency(k, &params)).collect();
        let e: Vec<f64> = k.iter().map(|&k| 0.1f64.powi(k as i32) / 3.0).collect();
        let spec = AveragedSpectrum::from_values(&params, k, omega, e, 12.5);
        let path = dir.path().join("s.csv");
        write_spectrum_csv(&path, &spec, false, "abc").unwrap();
        let t = read_spectrum_csv(&path).unwrap();
        assert_eq!(t.config_hash, "abc");
        assert_eq!(t.e_avg, spec.e_avg);
        assert_eq!(t.omega, spec.omega);
        assert_eq!(t.t_accum, 12.5);
        write_spectrum_csv(&path, &spec, true, "abc").unwrap();
        assert_eq!(read_spectrum_csv(&path).unwrap().k, vec![1, 3, 5, 7]);
    }

    #[test]
    fn malformed_csv_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        fs::write(&path, "# config_hash=x\nk,omega_k,E_avg,t_accum\n1,1.0,0.5,2\n3,1.1,oops,2\n").unwrap();
        match read_spectrum_csv(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
        fs::write(&path, "k,omega_k,E_avg,t_accum\n1,1,1,1\n").unwrap();
        assert!(matches!(read_spectrum_csv(&path), Err(Error::Parse { line: 1, .. })));
        fs::write(&path, "# config_hash=x\nk,omega_k,E_avg,t_accum\n1,1,1\n").unwrap();
        assert!(matches!(read_spectrum_csv(&path), Err(Error::Parse { line: 3, .. })));
    }

    #[test]
    fn simulate_is_reproducible() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let a = simulate(&small(d1.path())).unwrap();
        let b = simulate(&small(d2.path())).unwrap();
        assert_eq!(a.config_hash, b.config_hash);
        for f in ["spectrum.csv", "energy_drift.csv", "checkpoint.json"] {
            let x = fs::read(d1.path().join(f)).unwrap();
            assert_eq!(x, fs::read(d2.path().join(f)).unwrap(), "{f}");
        }
        let m = Manifest::load(&d1.path().join("manifest.json")).unwrap();
        assert_eq!(m.config_hash, a.config_hash);
        assert!(a.max_drift < 1e-4, "{}", a.max_drift);
        let t = read_spectrum_csv(&d1.path().join("spectrum.csv")).unwrap();
        check_lineage(&m.config_hash, &t.config_hash, "spectrum").unwrap();
        assert!(check_lineage("other", &t.config_hash, "spectrum").is_err());
        let ck = crate::integrator::Checkpoint::load(&d1.path().join("checkpoint.json")).unwrap();
        assert_eq!(ck.state, a.final_state);
    }

    #[test]
    fn tampered_manifest_is_rejected() {
        let d = tempfile::tempdir().unwrap();
        simulate(&small(d.path())).unwrap();
        let p = d.path().join("manifest.json");
        let text = fs::read_to_string(&p).unwrap().replace("\"alpha\": 0.25", "\"alpha\": 0.3");
        fs::write(&p, text).unwrap();
        assert!(matches!(Manifest::load(&p), Err(Error::Provenance { .. })));
    }

    #[test]
    fn checkpoint_spectrum_matches_final_energies() {
        let d = tempfile::tempdir().unwrap();
        let out = simulate(&small(d.path())).unwrap();
        let spec = checkpoint_spectrum(&d.path().join("checkpoint.json"), &d.path().join("inst.csv"), false).unwrap();
        let total: f64 = spec.e_avg.iter().sum();
        let h0 = crate::lattice::quadratic_energy(&out.spectrum.params, &out.final_state);
        assert!((total - h0).abs() < 1e-12 * h0);
        assert_eq!(read_spectrum_csv(&d.path().join("inst.csv")).unwrap().config_hash, out.config_hash);
    }

    #[test]
    fn periodic_spectrum_is_pair_averaged() {
        // an even potential keeps the odd extension, so both spectra coincide
        let d = tempfile::tempdir().unwrap();
        let mut c = small(d.path());
        c.lattice.alpha = 0.0;
        c.lattice.beta = 0.25;
        c.integrator.checkpoint_every = 0;
        c.initial = InitialCondition::Modes { modes: vec![ModeEnergy { k: 1, energy: 0.015 }] };
        let dbc = simulate(&c).unwrap();
        c.lattice.bc = Boundary::Periodic;
        c.initial = InitialCondition::Modes { modes: vec![ModeEnergy { k: 1, energy: 0.03 }] };
        c.output = d.path().join("pbc");
        let pbc = simulate(&c).unwrap();
        for (k, e) in dbc.spectrum.k.iter().zip(&dbc.spectrum.e_avg) {
            let p = pbc.spectrum.value(*k).unwrap();
            assert!((p - e).abs() < 1e-9 * dbc.spectrum.e_avg[0], "k={k}: {p} vs {e}");
        }
    }

    #[test]
    fn compare_and_correction_artifacts() {
        let d = tempfile::tempdir().unwrap();
        let mut c = small(d.path());
        c.lattice.n = 16;
        c.lattice.a = 0.25;
        c.integrator.dt = 0.02;
        c.compare.horizon = 1.0;
        c.compare.b = 0.5;
        c.compare.samples = 10;
        c.compare.correction = Some(CorrectionModel::DrivenResponse);
        let r = compare(&c).unwrap();
        assert_eq!(r.sup_error.len(), 3);
        assert!(r.sup_corrected[0] < r.sup_error[0]);
        let text = fs::read_to_string(d.path().join("error_series.csv")).unwrap();
        assert!(text.starts_with(&format!("{HASH_PREFIX}{}", r.config_hash)));
        assert_eq!(text.lines().nth(1).unwrap().split(',').count(), 7);
        let cr = correction(&c).unwrap();
        assert_eq!(cr.k, (0..8).map(|i| 2 * i + 1).collect::<Vec<i64>>());
        assert!(cr.measured.iter().zip(&cr.predicted).all(|(a, b)| (a - b).abs() < 0.2 * a.max(*b) + 1e-9));
    }

    #[test]
    fn nls_artifacts() {
        let d = tempfile::tempdir().unwrap();
        let mut c = small(d.path());
        c.nls.tau_end = 0.5;
        c.nls.snapshots = 2;
        let r = nls(&c).unwrap();
        assert_eq!(r.tau, vec![0.0, 0.25, 0.5]);
        assert!((r.mass[2] - r.mass[0]).abs() < 1e-10 * r.mass[0]);
        let text = fs::read_to_string(d.path().join("field.csv")).unwrap();
        assert_eq!(text.lines().count(), 2 + 3 * 15);
    }

    #[test]
    fn sweep_merges_after_all_members() {
        let d = tempfile::tempdir().unwrap();
        let mut c = small(d.path());
        c.integrator.checkpoint_every = 0;
        let r = sweep(&c, SweepParam::Density, &[0.01, 0.001], SweepKind::Simulate).unwrap();
        assert_eq!(r.members.len(), 2);
        assert_ne!(r.members[0].config_hash, r.members[1].config_hash);
        assert!(d.path().join("sweep.json").exists());
        assert!(d.path().join("density_0.01").join("spectrum.csv").exists());
        assert!(sweep(&c, SweepParam::N, &[2.5], SweepKind::Simulate).is_err());
    }
}
