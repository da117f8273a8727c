//! Zitterbewegung of the trapped-ion Dirac equation: position of the packet
//! under the first-layer realization, noiseless, against the ideal model.
//!
//! `cargo run --release --example dirac_zitterbewegung`

use rabi_ccd::experiments::{build_experiment, run_ensemble};

fn main() -> rabi_ccd::Result<()> {
    let mut spec = build_experiment("dirac")?;
    spec.noise.noiseless = true;
    spec.n_trajectories = 1;
    spec.layers = vec![1];
    spec.plan.n_outputs = 48;
    let r = run_ensemble(&spec)?;
    let x = r.series("x_L1")?;
    let ideal = r.series("x_ideal")?;
    let f = r.series("F_L1")?;
    for i in (0..r.axis.len()).step_by(4) {
        println!(
            "t = {:.2} ms  <x> = {:>8.4}  ideal {:>8.4}  F = {:.4}",
            r.axis[i] * 1e3,
            x.mean[i],
            ideal.mean[i],
            f.mean[i]
        );
    }
    Ok(())
}
