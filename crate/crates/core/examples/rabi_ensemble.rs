//! Noisy Rabi dynamics at layers 0, 1 and 2, written to CSV.
//!
//! `cargo run --release --example rabi_ensemble -- [trajectories] [out.csv]`

use std::path::PathBuf;

use rabi_ccd::cli::write_csv;
use rabi_ccd::experiments::{build_experiment, run_ensemble};

fn main() -> rabi_ccd::Result<()> {
    let mut args = std::env::args().skip(1);
    let mut spec = build_experiment("rabi")?;
    spec.n_trajectories = args.next().and_then(|s| s.parse().ok()).unwrap_or(4);
    spec.plan.t_final = 2e-3;
    spec.plan.n_outputs = 40;
    let out = PathBuf::from(args.next().unwrap_or_else(|| "rabi_ensemble.csv".into()));
    let r = run_ensemble(&spec)?;
    for s in r.series.iter().filter(|s| s.name.starts_with('F')) {
        println!("{:<16} F(2 ms) = {:.4} +- {:.4}", s.name, s.mean.last().unwrap(), s.stderr.last().unwrap());
    }
    write_csv(&r, &out)?;
    println!("wrote {}", out.display());
    Ok(())
}
