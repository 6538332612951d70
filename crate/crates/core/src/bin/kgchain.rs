use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use kgchain::correction::{CorrectionModel, NormSpec};
use kgchain::integrator::Method;
use kgchain::lattice::Boundary;
use kgchain::run::{self, InitialCondition, Manifest, RunConfig, SweepKind, SweepParam};
use kgchain::{Error, Result};

#[derive(Parser)]
#[command(name = "kgchain", version, about = "Klein-Gordon chain runs and spectral analysis")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Integrate the chain and write the averaged spectrum.
    Simulate(RunArgs),
    /// Instantaneous mode energies of a checkpoint.
    Spectrum {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "spectrum.csv")]
        out: PathBuf,
        /// Keep even modes too.
        #[arg(long)]
        all_modes: bool,
    },
    /// Fit a stored spectrum CSV.
    Fit(FitArgs),
    /// Evolve the envelope equation from i sin x.
    Nls(RunArgs),
    /// Lattice against envelope, remainder norms over time.
    Compare(RunArgs),
    /// Measured remainder against the first-order correction, per mode.
    Correction(RunArgs),
    /// Fan a run out over a list of parameter values.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// n | density | alpha | beta | a | dt
        #[arg(long)]
        param: SweepParam,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long, value_enum, default_value = "simulate")]
        kind: KindArg,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum KindArg {
    Simulate,
    Compare,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum BcArg {
    Dirichlet,
    Periodic,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum MethodArg {
    Leapfrog,
    Yoshida4,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum ModelArg {
    DrivenResponse,
    NormalFormBracket,
}

fn parse_window(s: &str) -> std::result::Result<(i64, i64), String> {
    let (a, b) = s.split_once(',').ok_or("expected LO,HI")?;
    Ok((a.trim().parse().map_err(|e| format!("{e}"))?, b.trim().parse().map_err(|e| format!("{e}"))?))
}

fn parse_norm(s: &str) -> std::result::Result<NormSpec, String> {
    let (a, b) = s.split_once(':').ok_or("expected S:SIGMA")?;
    Ok(NormSpec { s: a.parse().map_err(|e| format!("{e}"))?, sigma: b.parse().map_err(|e| format!("{e}"))? })
}

/// Every field of the run config, each overriding the file (or the
/// production defaults when no file is given).
#[derive(Args)]
struct RunArgs {
    /// TOML run config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    a: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long, value_enum)]
    bc: Option<BcArg>,
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    t_end: Option<f64>,
    #[arg(long)]
    sample_every: Option<u64>,
    #[arg(long)]
    checkpoint_every: Option<u64>,
    /// Energy per moving site, all on mode 1.
    #[arg(long)]
    density: Option<f64>,
    #[arg(long)]
    discard: Option<f64>,
    #[arg(long)]
    odd_only: Option<bool>,
    #[arg(long, value_parser = parse_window)]
    head: Option<(i64, i64)>,
    #[arg(long, value_parser = parse_window)]
    tail: Option<(i64, i64)>,
    #[arg(long)]
    k_max: Option<i64>,
    #[arg(long)]
    floor: Option<f64>,
    /// Repeatable, `S:SIGMA`.
    #[arg(long = "norm", value_parser = parse_norm)]
    norms: Vec<NormSpec>,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    b: Option<f64>,
    #[arg(long)]
    samples: Option<u64>,
    #[arg(long, value_enum)]
    correction: Option<ModelArg>,
    #[arg(long)]
    t_spectrum: Option<f64>,
    #[arg(long, value_parser = parse_window)]
    spectrum_window: Option<(i64, i64)>,
    #[arg(long)]
    nls_step: Option<f64>,
    #[arg(long)]
    tau_end: Option<f64>,
    #[arg(long)]
    snapshots: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
}

macro_rules! set {
    ($dst:expr, $src:expr) => {
        if let Some(v) = $src {
            $dst = v;
        }
    };
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::production(),
        };
        set!(c.output, self.output.clone());
        set!(c.lattice.n, self.n);
        set!(c.lattice.a, self.a);
        set!(c.lattice.alpha, self.alpha);
        set!(c.lattice.beta, self.beta);
        set!(
            c.lattice.bc,
            self.bc.map(|b| match b {
                BcArg::Dirichlet => Boundary::Dirichlet,
                BcArg::Periodic => Boundary::Periodic,
            })
        );
        set!(
            c.integrator.method,
            self.method.map(|m| match m {
                MethodArg::Leapfrog => Method::Leapfrog,
                MethodArg::Yoshida4 => Method::Yoshida4,
            })
        );
        set!(c.integrator.dt, self.dt);
        set!(c.integrator.t_end, self.t_end);
        set!(c.integrator.sample_every, self.sample_every);
        set!(c.integrator.checkpoint_every, self.checkpoint_every);
        if let Some(d) = self.density {
            c.initial = InitialCondition::EnergyDensity { density: d };
        }
        set!(c.observables.discard, self.discard);
        set!(c.observables.odd_only, self.odd_only);
        if self.head.is_some() {
            c.observables.fit.head = self.head;
        }
        if self.tail.is_some() {
            c.observables.fit.tail = self.tail;
        }
        if self.k_max.is_some() {
            c.observables.fit.k_max = self.k_max;
        }
        set!(c.observables.fit.floor, self.floor);
        if !self.norms.is_empty() {
            c.observables.norms = self.norms.clone();
        }
        set!(c.compare.horizon, self.horizon);
        set!(c.compare.b, self.b);
        set!(c.compare.samples, self.samples);
        if let Some(m) = self.correction {
            c.compare.correction = Some(match m {
                ModelArg::DrivenResponse => CorrectionModel::DrivenResponse,
                ModelArg::NormalFormBracket => CorrectionModel::NormalFormBracket,
            });
        }
        set!(c.compare.t_spectrum, self.t_spectrum);
        set!(c.compare.spectrum_window, self.spectrum_window);
        if self.nls_step.is_some() {
            c.compare.nls_step = self.nls_step;
            c.nls.step = self.nls_step;
        }
        set!(c.nls.tau_end, self.tau_end);
        set!(c.nls.snapshots, self.snapshots);
        set!(c.seed, self.seed);
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    spectrum: PathBuf,
    /// Reject the spectrum unless it came from this run.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Chain size; defaults to the manifest's, else the largest stored mode.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, value_parser = parse_window)]
    head: Option<(i64, i64)>,
    #[arg(long, value_parser = parse_window)]
    tail: Option<(i64, i64)>,
    #[arg(long)]
    k_max: Option<i64>,
    #[arg(long)]
    floor: Option<f64>,
    #[arg(long)]
    all_modes: bool,
    #[arg(long, default_value = "fit.json")]
    out: PathBuf,
}

fn fit(args: &FitArgs) -> Result<()> {
    let table = run::read_spectrum_csv(&args.spectrum)?;
    let mut spec = run::FitSpec::default();
    let mut n = args.n;
    if let Some(p) = &args.manifest {
        let m = Manifest::load(p)?;
        run::check_lineage(&m.config_hash, &table.config_hash, &args.spectrum.display().to_string())?;
        spec = m.config.observables.fit.clone();
        n = n.or(Some(m.config.lattice.n));
    }
    let n = n.unwrap_or_else(|| table.k.iter().copied().max().unwrap_or(1).max(1) as usize);
    spec.head = args.head.or(spec.head);
    spec.tail = args.tail.or(spec.tail);
    spec.k_max = args.k_max.or(spec.k_max);
    set!(spec.floor, args.floor);
    let report = run::fit_table(&table, &spec, n, !args.all_modes)?;
    run::write_json(&args.out, &report)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Simulate(r) => {
            let out = run::simulate(&r.resolve()?)?;
            println!("wrote {} (config {})", out.dir.display(), out.config_hash);
            println!("max relative energy drift {:e}", out.max_drift);
            if let Some(f) = out.fit {
                println!("k* = {:?}, E* = {:?}", f.k_star, f.e_star);
            }
        }
        Cmd::Spectrum { checkpoint, out, all_modes } => {
            let s = run::checkpoint_spectrum(&checkpoint, &out, !all_modes)?;
            println!("wrote {} modes to {}", s.k.len(), out.display());
        }
        Cmd::Fit(f) => fit(&f)?,
        Cmd::Nls(r) => {
            let rep = run::nls(&r.resolve()?)?;
            println!("{}", serde_json::to_string_pretty(&rep)?);
        }
        Cmd::Compare(r) => {
            let rep = run::compare(&r.resolve()?)?;
            println!("{}", serde_json::to_string_pretty(&rep)?);
        }
        Cmd::Correction(r) => {
            let rep = run::correction(&r.resolve()?)?;
            println!("measured fit {:?}", rep.measured_fit.map(|f| f.slope));
            println!("predicted fit {:?}", rep.predicted_fit.map(|f| f.slope));
        }
        Cmd::Sweep { run: r, param, values, kind } => {
            let kind = match kind {
                KindArg::Simulate => SweepKind::Simulate,
                KindArg::Compare => SweepKind::Compare,
            };
            let rep = run::sweep(&r.resolve()?, param, &values, kind)?;
            for m in &rep.members {
                println!("{} = {}: {}", param.name(), m.value, m.output.display());
            }
            for (i, r) in rep.error_ratios.iter().enumerate() {
                println!("ratio {}/{}: {:?}", i, i + 1, r);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    e.exit_code() as u8
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn run(args: &[&str]) -> Result<()> {
        let mut v = vec!["kgchain"];
        v.extend_from_slice(args);
        execute(Cli::try_parse_from(v).expect("arguments parse"))
    }

    fn code(r: Result<()>) -> i32 {
        r.err().map_or(0, |e| e.exit_code())
    }

    fn small(dir: &std::path::Path) -> Vec<String> {
        [
            "--n", "15", "--dt", "0.05", "--t-end", "50", "--sample-every", "5",
            "--checkpoint-every", "200", "--output",
        ]
        .iter()
        .map(|s| s.to_string())
        .chain([dir.display().to_string()])
        .collect()
    }

    #[test]
    fn overrides_land_in_config() {
        let cli = Cli::try_parse_from([
            "kgchain", "simulate", "--n", "31", "--alpha", "0.1", "--bc", "periodic", "--method", "leapfrog",
            "--dt", "0.01", "--head", "1,9", "--norm", "2:0", "--norm", "1:0.05", "--correction",
            "normal-form-bracket", "--density", "0.01",
        ])
        .unwrap();
        let Cmd::Simulate(r) = cli.cmd else { panic!("wrong subcommand") };
        let c = r.resolve().unwrap();
        assert_eq!(c.lattice.n, 31);
        assert_eq!(c.lattice.alpha, 0.1);
        assert_eq!(c.lattice.bc, Boundary::Periodic);
        assert_eq!(c.integrator.method, Method::Leapfrog);
        assert_eq!(c.observables.fit.head, Some((1, 9)));
        assert_eq!(c.observables.norms.len(), 2);
        assert_eq!(c.observables.norms[1].sigma, 0.05);
        assert_eq!(c.compare.correction, Some(CorrectionModel::NormalFormBracket));
        assert!(matches!(c.initial, InitialCondition::EnergyDensity { density } if density == 0.01));
        // untouched fields keep the production values
        assert_eq!(c.lattice.a, 0.5);
    }

    #[test]
    fn bad_arguments_are_rejected_by_the_parser() {
        assert!(Cli::try_parse_from(["kgchain", "simulate", "--head", "3"]).is_err());
        assert!(Cli::try_parse_from(["kgchain", "simulate", "--norm", "2"]).is_err());
        assert!(Cli::try_parse_from(["kgchain", "sweep", "--param", "gamma", "--values", "1"]).is_err());
    }

    #[test]
    fn unstable_step_exits_with_config_code() {
        assert_eq!(code(run(&["simulate", "--n", "15", "--dt", "5"])), 2);
        assert_eq!(code(run(&["simulate", "--n", "0"])), 2);
    }

    #[test]
    fn simulate_spectrum_and_fit_chain_together() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("sim");
        let mut args = vec!["simulate".to_string()];
        args.extend(small(&dir));
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        run(&refs).unwrap();
        for f in ["spectrum.csv", "energy_drift.csv", "checkpoint.json", "manifest.json"] {
            assert!(dir.join(f).exists(), "{f} missing");
        }

        let spec = tmp.path().join("inst.csv");
        run(&["spectrum", "--checkpoint", dir.join("checkpoint.json").to_str().unwrap(), "--out", spec.to_str().unwrap()])
            .unwrap();
        assert!(fs::read_to_string(&spec).unwrap().starts_with(run::HASH_PREFIX));

        let out = tmp.path().join("fit.json");
        run(&[
            "fit", "--spectrum", dir.join("spectrum.csv").to_str().unwrap(), "--manifest",
            dir.join("manifest.json").to_str().unwrap(), "--head", "1,9", "--out", out.to_str().unwrap(),
        ])
        .unwrap();
        let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
        assert!(v["head"]["slope"].is_number());
    }

    #[test]
    fn fit_refuses_foreign_spectrum() {
        let tmp = tempfile::tempdir().unwrap();
        let (d1, d2) = (tmp.path().join("one"), tmp.path().join("two"));
        for (d, rho) in [(&d1, "0.001"), (&d2, "0.002")] {
            let mut args = vec!["simulate".to_string()];
            args.extend(small(d));
            args.extend(["--density".to_string(), rho.to_string()]);
            let refs: Vec<&str> = args.iter().map(String::as_str).collect();
            run(&refs).unwrap();
        }
        let r = run(&[
            "fit", "--spectrum", d1.join("spectrum.csv").to_str().unwrap(), "--manifest",
            d2.join("manifest.json").to_str().unwrap(), "--head", "1,9", "--out",
            tmp.path().join("f.json").to_str().unwrap(),
        ]);
        assert_eq!(code(r), 5);
    }

    #[test]
    fn malformed_spectrum_exits_with_parse_code() {
        let tmp = tempfile::tempdir().unwrap();
        let p = tmp.path().join("bad.csv");
        fs::write(&p, "# config_hash=abc\nk,omega,e_avg,t_accum\n1,1.1,oops,3\n").unwrap();
        let r = run(&["fit", "--spectrum", p.to_str().unwrap(), "--out", tmp.path().join("f.json").to_str().unwrap()]);
        assert_eq!(code(r), 5);
    }

    #[test]
    fn config_file_is_read_and_overridden() {
        let tmp = tempfile::tempdir().unwrap();
        let mut c = RunConfig::production();
        c.lattice.n = 21;
        c.nls.tau_end = 0.1;
        c.output = tmp.path().join("nls");
        let path = tmp.path().join("run.toml");
        fs::write(&path, c.to_toml().unwrap()).unwrap();
        run(&["nls", "--config", path.to_str().unwrap(), "--tau-end", "0.05"]).unwrap();
        let v: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(tmp.path().join("nls/nls.json")).unwrap()).unwrap();
        let m = Manifest::load(&tmp.path().join("nls/manifest.json")).unwrap();
        assert_eq!(m.config.lattice.n, 21);
        assert_eq!(m.config.nls.tau_end, 0.05);
        assert!(v.is_object());
    }
}
