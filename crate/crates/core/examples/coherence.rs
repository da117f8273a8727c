//! Free-qubit coherence under fast and slow dephasing noise with the same T2,
//! simulated and exact.
//!
//! `cargo run --release --example coherence`

use rabi_ccd::experiments::{build_experiment, run_ensemble};

fn main() -> rabi_ccd::Result<()> {
    let mut spec = build_experiment("coherence")?;
    spec.n_trajectories = 200;
    let r = run_ensemble(&spec)?;
    println!("{:>8} {:>10} {:>10} {:>10} {:>10}", "t [ms]", "fast", "exact", "slow", "exact");
    for i in (0..r.axis.len()).step_by(24) {
        let row: Vec<f64> = ["sx_tau50us", "sx_analytic_tau50us", "sx_tau5000us", "sx_analytic_tau5000us"]
            .iter()
            .map(|n| r.series(n).map(|s| s.mean[i]))
            .collect::<rabi_ccd::Result<_>>()?;
        println!("{:>8.2} {:>10.4} {:>10.4} {:>10.4} {:>10.4}", r.axis[i] * 1e3, row[0], row[1], row[2], row[3]);
    }
    Ok(())
}
