//! One noiseless trajectory of each layer against the ideal quantum Rabi
//! model, with the dt-halving certificate.
//!
//! `cargo run --release --example noiseless_rabi`

use rabi_ccd::fock::{build_operator_set, QuantumState};
use rabi_ccd::hamiltonian::{params_from_targets, FixedParams, Layer, NoiseSnapshot, Targets};
use rabi_ccd::observables::fidelity;
use rabi_ccd::propagate::{certify_step, evolve, FrozenNoise, IntegrationPlan, LayerKernel, SpectralPropagator};
use rabi_ccd::units::khz;

fn main() -> rabi_ccd::Result<()> {
    let fixed = FixedParams::standard()?;
    let targets = Targets::Rabi { ratio: 1.0, coupling: 0.25, omega_mode: khz(5.0) };
    let n_fock = 10;
    let ops = build_operator_set(n_fock)?;
    let plan = IntegrationPlan::new(IntegrationPlan::default_dt(fixed.nu), 2e-3, 8)?;
    for layer in Layer::ALL {
        let real = params_from_targets(targets, layer, &fixed)?;
        let config = real.config.noiseless();
        let channels = config.amplitude_noise.len();
        let psi0 = QuantumState::product(n_fock, real.ideal.tls_axis().eigenvector(true), 0)?;
        let ideal = SpectralPropagator::new(&real.ideal.hamiltonian(&ops), n_fock)?;
        let mut kernel = LayerKernel::new(&config, n_fock)?;
        let mut noise = FrozenNoise(NoiseSnapshot::quiet(channels));
        println!("layer {}", layer.index());
        evolve(&psi0, &mut kernel, &plan, &mut noise, |_, t, psi| {
            let target = real.frame.apply(t, &ideal.evolve(&psi0, t));
            println!("  t = {:.2} ms  F = {:.6}", t * 1e3, fidelity(psi, &target)?);
            Ok(())
        })?;
        let deficit = certify_step(&psi0, &mut kernel, &plan, channels, 1e-4)?;
        println!("  dt vs dt/2 deficit {deficit:.2e}");
    }
    Ok(())
}
