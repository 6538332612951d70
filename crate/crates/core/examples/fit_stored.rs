//! Fit a spectrum that was written earlier, and what a foreign file looks like.

use kgchain::run::{check_lineage, fit_table, read_spectrum_csv, simulate, FitSpec, Manifest, RunConfig};

fn main() -> kgchain::Result<()> {
    let mut cfg = RunConfig::production();
    cfg.lattice.n = 127;
    cfg.integrator.t_end = 2000.0;
    cfg.output = "runs/fit_stored".into();
    let out = simulate(&cfg)?;

    let table = read_spectrum_csv(&out.dir.join("spectrum.csv"))?;
    let manifest = Manifest::load(&out.dir.join("manifest.json"))?;
    check_lineage(&manifest.config_hash, &table.config_hash, "spectrum.csv")?;

    let spec = FitSpec { head: Some((1, 9)), ..FitSpec::default() };
    let report = fit_table(&table, &spec, cfg.lattice.n, true)?;
    println!("{}", serde_json::to_string_pretty(&report)?);

    if let Err(e) = check_lineage("0000", &table.config_hash, "spectrum.csv") {
        println!("rejected: {e}");
    }
    Ok(())
}
