//! Fast invariant checks run by the `validate` subcommand.

use std::io::Write;

use nalgebra::DVector;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::experiments::{build_experiment, ground_state_constants, run_ensemble_with};
use crate::fock::{build_operator_set, displacement_matrix, Pauli, QuantumState};
use crate::hamiltonian::{build_layer_hamiltonian, params_from_targets, FixedParams, Layer, NoiseSnapshot, Targets};
use crate::linalg::C0;
use crate::noise::{analytic_moments, NoiseRealization, OuParams};
use crate::observables::{ancilla_position_readout, default_probe_times, position_expectation};
use crate::propagate::{certify_step, unitary_step, IntegrationPlan, Kernel, LayerKernel};
use crate::units::khz;

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::invalid(msg()))
    }
}

fn ou_moments() -> Result<()> {
    let p = OuParams::new(50e-6, 1.5e11)?;
    let dt = 5e-6;
    let n = 4000;
    let mut sum = 0.0;
    let mut sq = 0.0;
    for k in 0..n {
        let x = *NoiseRealization::generate(p, dt, 11, k)?.samples.last().unwrap();
        sum += x;
        sq += x * x;
    }
    let var = sq / n as f64 - (sum / n as f64).powi(2);
    let (_, expected) = analytic_moments(50e-6, &p)?;
    check((var / expected - 1.0).abs() < 0.1, || format!("variance {var:.4e} vs {expected:.4e}"))
}

fn layer_kernel_matches_dense() -> Result<()> {
    let fixed = FixedParams::standard()?;
    let n = 10;
    for layer in Layer::ALL {
        let r = params_from_targets(Targets::Rabi { ratio: 1.0, coupling: 0.25, omega_mode: khz(5.0) }, layer, &fixed)?;
        let ops = build_operator_set(n)?;
        let snap = NoiseSnapshot { dephasing: 300.0, amplitude: vec![1e-3; r.config.amplitude_noise.len()] };
        let psi = QuantumState::product(n, Pauli::X.eigenvector(true), 1)?;
        let (t, dt) = (3.7e-6, IntegrationPlan::default_dt(fixed.nu));
        let h = build_layer_hamiltonian(t + 0.5 * dt, &r.config, &snap, &ops)?;
        let dense = unitary_step(&psi, &h, dt)?;
        let mut fast = psi.clone();
        LayerKernel::new(&r.config, n)?.step(t, dt, &snap, &mut fast)?;
        let diff = dense.amplitudes.iter().zip(fast.amplitudes.iter()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        check(diff < 1e-12, || format!("layer {}: kernel differs from dense step by {diff:.2e}", layer.index()))?;
    }
    Ok(())
}

fn halving_check() -> Result<()> {
    let fixed = FixedParams::standard()?;
    let r =
        params_from_targets(Targets::Rabi { ratio: 1.0, coupling: 0.25, omega_mode: khz(5.0) }, Layer::Second, &fixed)?;
    let psi = QuantumState::product(8, r.ideal.tls_axis().eigenvector(true), 0)?;
    let plan = IntegrationPlan::new(IntegrationPlan::default_dt(fixed.nu), 2e-4, 1)?;
    certify_step(&psi, &mut LayerKernel::new(&r.config, 8)?, &plan, r.config.amplitude_noise.len(), 1e-4)?;
    Ok(())
}

fn noiseless_rabi_fidelity() -> Result<()> {
    let mut spec = build_experiment("rabi")?;
    spec.noise.noiseless = true;
    spec.n_trajectories = 1;
    spec.layers = vec![1];
    spec.plan.t_final = 5e-4;
    spec.plan.n_outputs = 5;
    let r = run_ensemble_with(&spec, Some(1))?;
    for name in ["F_up_tls_L1", "F_up_perp_L1"] {
        let f = *r.series(name)?.mean.last().unwrap();
        check(f > 0.999, || format!("{name} = {f}"))?;
    }
    Ok(())
}

fn worker_independence() -> Result<()> {
    let mut spec = build_experiment("ccd-demo")?;
    spec.n_trajectories = 6;
    spec.plan.t_final = 2e-4;
    spec.plan.n_outputs = 4;
    let a = run_ensemble_with(&spec, Some(1))?;
    let b = run_ensemble_with(&spec, Some(3))?;
    check(a == b, || "results depend on the worker count".into())
}

fn ground_state_convergence() -> Result<()> {
    for (r, _, diff) in ground_state_constants(&[50.0, 100.0], 1.0, 40)? {
        check(diff < 1e-8, || format!("R = {r}: N vs 2N differ by {diff:.2e}"))?;
    }
    Ok(())
}

fn ancilla_readout() -> Result<()> {
    let d = displacement_matrix(Complex64::new(0.5, 0.0), 30)?;
    let vac = DVector::from_fn(30, |i, _| if i == 0 { Complex64::new(1.0, 0.0) } else { C0 });
    let psi = QuantumState::from_parts(Pauli::Z.eigenvector(true), &(d * vac));
    let omega = 1e4;
    let est = ancilla_position_readout(&psi, omega, &default_probe_times(&psi, omega))?;
    let direct = position_expectation(&psi);
    check((est / direct - 1.0).abs() < 0.02, || format!("readout {est} vs {direct}"))
}

type Check = (&'static str, fn() -> Result<()>);

/// Runs every check, writing one line each; returns whether all passed.
pub fn run_all(out: &mut dyn Write) -> bool {
    let checks: [Check; 7] = [
        ("ou_moments", ou_moments),
        ("layer_kernel_matches_dense", layer_kernel_matches_dense),
        ("halving_check", halving_check),
        ("noiseless_rabi_fidelity", noiseless_rabi_fidelity),
        ("worker_independence", worker_independence),
        ("ground_state_convergence", ground_state_convergence),
        ("ancilla_readout", ancilla_readout),
    ];
    let mut all = true;
    for (name, f) in checks {
        let line = match f() {
            Ok(()) => format!("ok   {name}"),
            Err(e) => {
                all = false;
                format!("FAIL {name}: {e}")
            }
        };
        let _ = writeln!(out, "{line}");
    }
    all
}
