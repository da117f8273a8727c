//! Laser settings that realize a target Rabi or Dirac model at each
//! protection layer, and the targets recovered back from them.
//!
//! `cargo run --release --example layer_parameters`

use std::f64::consts::TAU;

use rabi_ccd::hamiltonian::{
    dirac_targets_from_config, params_from_targets, rabi_targets_from_config, FixedParams, Layer, Targets,
};
use rabi_ccd::units::khz;

fn main() -> rabi_ccd::Result<()> {
    let fixed = FixedParams::standard()?;
    let rabi = Targets::Rabi { ratio: 1.0, coupling: 0.25, omega_mode: khz(5.0) };
    let dirac = Targets::Dirac { r: 2.0, c_d: TAU / 0.8e-3 };
    for targets in [rabi, dirac] {
        println!("{targets:?}");
        for layer in Layer::ALL {
            let real = params_from_targets(targets, layer, &fixed)?;
            println!("  layer {}", layer.index());
            for l in &real.config.lasers {
                println!(
                    "    {:<3} Omega/2pi = {:>9.3} kHz  Delta/2pi = {:>10.3} kHz  phi = {:>6.3}  eta = {}",
                    l.label,
                    l.omega / khz(1.0),
                    l.delta / khz(1.0),
                    l.phi,
                    l.eta
                );
            }
            match targets {
                Targets::Rabi { .. } => {
                    let (r, g, w) = rabi_targets_from_config(&real.config)?;
                    println!("    recovered R = {r:.4}, g = {g:.4}, omega/2pi = {:.3} kHz", w / khz(1.0));
                }
                Targets::Dirac { .. } => {
                    let (r, c) = dirac_targets_from_config(&real.config)?;
                    println!("    recovered r = {r:.4}, c_D = {c:.1} rad/s");
                }
            }
        }
    }
    Ok(())
}
