//! Universal scaling function of the Rabi quench in the ideal model:
//! curves for two frequency ratios collapse when plotted against T = tau_Q / R.
//!
//! `cargo run --release --example qpt_scaling`

use std::f64::consts::TAU;

use rabi_ccd::experiments::{ground_state_constants, ideal_quench_sigma, QuenchSpec};
use rabi_ccd::fock::Pauli;
use rabi_ccd::hamiltonian::RabiParams;
use rabi_ccd::observables::scaling_point;
use rabi_ccd::units::khz;

fn main() -> rabi_ccd::Result<()> {
    let omega = khz(1.0);
    let n_fock = 40;
    let ratios = [50.0, 100.0];
    let gs = ground_state_constants(&ratios, 1.0, n_fock)?;
    for (r, sigma, diff) in &gs {
        println!("R = {r}: <sigma>_GS = {sigma:.10} (N vs 2N {diff:.1e})");
    }
    println!("{:>10} {:>10} {:>10}", "T", "S(R=50)", "S(R=100)");
    for t in QuenchSpec::log_grid(0.02 / 50.0, 8.6 / 100.0, 6) {
        let mut row = Vec::new();
        for (r, sigma_gs, _) in &gs {
            let params = RabiParams::from_targets(*r, 1.0, omega, Pauli::Z, Pauli::X);
            let tau_q = r * t * TAU / omega;
            let sigma = ideal_quench_sigma(&params, n_fock, tau_q)?;
            row.push(scaling_point(*r, tau_q, sigma, *sigma_gs)?.s);
        }
        println!("{t:>10.3e} {:>10.4} {:>10.4}", row[0], row[1]);
    }
    Ok(())
}
