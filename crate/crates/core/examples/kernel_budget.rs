//! Per-step cost of the propagation kernels, to size ensemble runs.
//!
//! `cargo run --release --example kernel_budget`

use std::time::Instant;

use rabi_ccd::fock::{Pauli, QuantumState};
use rabi_ccd::hamiltonian::{params_from_targets, FixedParams, Layer, Targets};
use rabi_ccd::propagate::{IntegrationPlan, Kernel, LayerKernel, NoiseSource, OuNoiseBank};
use rabi_ccd::units::khz;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> rabi_ccd::Result<()> {
    let fixed = FixedParams::standard()?;
    let dt = IntegrationPlan::default_dt(fixed.nu);
    let cases = [
        ("rabi", Targets::Rabi { ratio: 1.0, coupling: 0.25, omega_mode: khz(5.0) }, 30),
        ("dirac", Targets::Dirac { r: 2.0, c_d: khz(1.25) }, 60),
    ];
    println!("dt = {dt:.4e} s");
    for (name, targets, n_fock) in cases {
        for layer in Layer::ALL {
            let cfg = params_from_targets(targets, layer, &fixed)?.config;
            let mut kernel = LayerKernel::new(&cfg, n_fock)?;
            let mut noise = OuNoiseBank::for_layer(&cfg, dt, ChaCha8Rng::seed_from_u64(1));
            let mut psi = QuantumState::vacuum_with(n_fock, Pauli::Z, true)?;
            let steps: usize = std::env::var("KERNEL_BUDGET_STEPS").ok().and_then(|s| s.parse().ok()).unwrap_or(50_000);
            let start = Instant::now();
            for k in 0..steps {
                kernel.step(k as f64 * dt, dt, noise.current(), &mut psi)?;
                noise.advance()?;
            }
            let per_step = start.elapsed().as_secs_f64() / steps as f64;
            println!(
                "{name:6} layer {} N = {n_fock:3}  band {:5.1}  {:6.3} us/step  {:6.2} s per ms of evolution",
                layer.index(),
                kernel.mean_bandwidth(),
                per_step * 1e6,
                per_step * 1e-3 / dt
            );
        }
    }
    Ok(())
}
