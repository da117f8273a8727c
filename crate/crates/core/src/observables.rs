//! Fidelities, expectation values, exact ground states, the quench scaling
//! transform and the ancilla-based position readout.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{build_operator_set, truncation_tail, OperatorSet, Pauli, QuantumState};
use crate::hamiltonian::{ideal_rabi_hamiltonian, RabiParams};
use crate::linalg::{self, C0};
use crate::propagate::{TAIL_TOLERANCE, TAIL_WIDTH};

/// Critical exponents of the quench scaling function.
pub const MU: f64 = 2.0 / 3.0;
pub const GAMMA: f64 = 1.0;
pub const ZETA: f64 = 0.5;

/// `|<ψ|φ>|`.
pub fn fidelity(psi: &QuantumState, phi: &QuantumState) -> Result<f64> {
    if psi.dim() != phi.dim() {
        return Err(Error::DimensionMismatch { expected: psi.dim(), got: phi.dim() });
    }
    Ok(linalg::inner(&psi.amplitudes, &phi.amplitudes).norm().min(1.0))
}

/// `<ψ|O|ψ>` for Hermitian `O`.
pub fn expectation(state: &QuantumState, op: &DMatrix<Complex64>) -> Result<f64> {
    if op.nrows() != state.dim() || op.ncols() != state.dim() {
        return Err(Error::DimensionMismatch { expected: state.dim(), got: op.nrows() });
    }
    linalg::ensure_hermitian(op, 1e-12)?;
    let v = linalg::inner(&state.amplitudes, &(op * &state.amplitudes));
    if v.im.abs() > 1e-10 {
        return Err(Error::NotHermitian { deviation: v.im.abs() });
    }
    Ok(v.re)
}

/// `<σ_axis>` of the qubit, traced over the mode.
pub fn qubit_expectation(state: &QuantumState, axis: Pauli) -> f64 {
    let n = state.n_fock;
    let (up, dn) = state.amplitudes.as_slice().split_at(n);
    match axis {
        Pauli::Z => up.iter().map(|z| z.norm_sqr()).sum::<f64>() - dn.iter().map(|z| z.norm_sqr()).sum::<f64>(),
        _ => {
            // <σx> = 2 Re Σ conj(u) d, <σy> = 2 Im Σ conj(u) d
            let c: Complex64 = up.iter().zip(dn).map(|(u, d)| u.conj() * d).sum();
            if axis == Pauli::X {
                2.0 * c.re
            } else {
                2.0 * c.im
            }
        }
    }
}

/// `<a + a†>`.
pub fn position_expectation(state: &QuantumState) -> f64 {
    let n = state.n_fock;
    let amps = state.amplitudes.as_slice();
    let mut acc = 0.0;
    for half in [&amps[..n], &amps[n..]] {
        for k in 0..n - 1 {
            acc += ((k + 1) as f64).sqrt() * (half[k].conj() * half[k + 1]).re;
        }
    }
    2.0 * acc
}

/// `<a†a>`.
pub fn phonon_number(state: &QuantumState) -> f64 {
    (0..state.n_fock).map(|k| k as f64 * state.fock_population(k)).sum()
}

/// Population `(1 + <σ_axis>)/2` of the `+1` eigenstate.
pub fn excited_population(state: &QuantumState, axis: Pauli) -> f64 {
    0.5 * (1.0 + qubit_expectation(state, axis))
}

/// Lowest eigenpair of the ideal Rabi Hamiltonian.
pub fn rabi_ground_state(params: &RabiParams, ops: &OperatorSet) -> Result<(f64, QuantumState)> {
    let h = ideal_rabi_hamiltonian(params, ops);
    let (values, vectors) = linalg::eigh(&h)?;
    let mut amps: DVector<Complex64> = vectors.column(0).into_owned();
    // Fix the global phase so the largest amplitude is real and positive.
    let (imax, _) =
        amps.iter().enumerate().fold((0, 0.0), |acc, (i, z)| if z.norm() > acc.1 { (i, z.norm()) } else { acc });
    let phase = amps[imax].conj() / amps[imax].norm();
    amps *= phase;
    let state = QuantumState::new(ops.n_fock, amps)?;
    if ops.n_fock > TAIL_WIDTH {
        let tail = truncation_tail(&state, TAIL_WIDTH)?;
        if tail > TAIL_TOLERANCE {
            return Err(Error::Truncation { what: "Rabi ground state".into(), time: 0.0, tail, n_fock: ops.n_fock });
        }
    }
    Ok((values[0], state))
}

/// Ground state with the truncation doubled from `n_start` until the ground
/// state passes the tail check, up to `n_max`.
pub fn rabi_ground_state_adaptive(params: &RabiParams, n_start: usize, n_max: usize) -> Result<(f64, QuantumState)> {
    let mut n = n_start;
    loop {
        match rabi_ground_state(params, &build_operator_set(n)?) {
            Err(Error::Truncation { .. }) if 2 * n <= n_max => n *= 2,
            other => return other,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub r: f64,
    pub tau_q: f64,
    /// Rescaled time `R^{-γ/(μ(1+ζ))} τ_Q`.
    pub t: f64,
    /// `R^μ |<σ_TLS> - <σ_TLS>_GS|`.
    pub s: f64,
}

pub fn scaling_point(r: f64, tau_q: f64, sigma_final: f64, sigma_gs: f64) -> Result<ScalingPoint> {
    if !(r > 0.0 && tau_q > 0.0) {
        return Err(Error::invalid("R and tau_Q must be > 0"));
    }
    let exponent = GAMMA / (MU * (1.0 + ZETA));
    let t = if (exponent - 1.0).abs() < 1e-12 { tau_q / r } else { tau_q * r.powf(-exponent) };
    Ok(ScalingPoint { r, tau_q, t, s: r.powf(MU) * (sigma_final - sigma_gs).abs() })
}

/// Probe grid of five times reaching `2Ω t ‖x‖ ≈ 0.1`, with `‖x‖` estimated
/// from `sqrt(<x²>)` of the state.
pub fn default_probe_times(state: &QuantumState, probe_omega: f64) -> Vec<f64> {
    let n = state.n_fock;
    let amps = state.amplitudes.as_slice();
    let mut x2 = 0.0;
    for half in [&amps[..n], &amps[n..]] {
        // (a + a†)² = 2n + 1 + a² + a†² on the truncated space
        for k in 0..n {
            let diag = if k + 1 < n { (2 * k + 1) as f64 } else { (n - 1) as f64 };
            x2 += diag * half[k].norm_sqr();
            if k + 2 < n {
                x2 += 2.0 * (((k + 1) * (k + 2)) as f64).sqrt() * (half[k].conj() * half[k + 2]).re;
            }
        }
    }
    let scale = x2.max(1.0).sqrt();
    let t_max = 0.05 / (probe_omega * scale);
    (1..=5).map(|k| k as f64 * t_max / 5.0).collect()
}

/// Estimates `<x̂>` by coupling an ancilla prepared in `|↑>` through
/// `U = exp(-iΩt σ_x^A x̂)` and fitting the initial slope of `<σ_y^A>(t)`.
///
/// With `σ_z|↑> = +|↑>`, `<σ_y^A>(t) = -<sin(2Ωt x̂)>`, so the slope at the
/// origin is `-2Ω<x̂>` and the estimate is `-slope/(2Ω)`.
pub fn ancilla_position_readout(psi: &QuantumState, probe_omega: f64, probe_times: &[f64]) -> Result<f64> {
    if !(probe_omega > 0.0) {
        return Err(Error::invalid("probe frequency must be > 0"));
    }
    if probe_times.len() < 2 || probe_times.iter().any(|&t| !(t > 0.0)) {
        return Err(Error::invalid("need at least two positive probe times"));
    }
    let n = psi.n_fock;
    let ops = build_operator_set(n)?;
    // Ancilla-major 4N space: ancilla σx ⊗ (1_qubit ⊗ x̂).
    let sx_a = Pauli::X.matrix();
    let coupling = sx_a.kronecker(&ops.x);
    let (values, vectors) = linalg::eigh(&coupling)?;
    let dim = 2 * psi.dim();
    let mut joint = DVector::from_element(dim, C0);
    // Ancilla |↑> occupies the first half.
    joint.rows_mut(0, psi.dim()).copy_from(&psi.amplitudes);
    let coeffs = vectors.adjoint() * &joint;
    let sy_a = Pauli::Y.matrix().kronecker(&DMatrix::<Complex64>::identity(psi.dim(), psi.dim()));

    let ys: Vec<f64> = probe_times
        .iter()
        .map(|&t| {
            let mut c = coeffs.clone();
            for (ck, &e) in c.iter_mut().zip(values.iter()) {
                *ck *= Complex64::from_polar(1.0, -probe_omega * t * e);
            }
            let evolved = &vectors * c;
            linalg::inner(&evolved, &(&sy_a * &evolved)).re
        })
        .collect();

    let scale = ys.iter().fold(0.0f64, |m, y| m.max(y.abs()));
    if scale < 1e-13 {
        return Ok(0.0);
    }
    // <σ_y^A>(0) = 0 for the ancilla in |↑>, so fit through the origin.
    let stt: f64 = probe_times.iter().map(|t| t * t).sum();
    let sty: f64 = probe_times.iter().zip(&ys).map(|(t, y)| t * y).sum();
    let slope = sty / stt;

    // Nonlinearity: quadratic term of a two-parameter fit, and the largest
    // departure from the straight line, both relative to the linear signal.
    let t_max = probe_times.iter().cloned().fold(0.0, f64::max);
    let (s2, s3, s4) =
        probe_times.iter().fold((0.0, 0.0, 0.0), |(a, b, c), t| (a + t * t, b + t.powi(3), c + t.powi(4)));
    let sty2: f64 = probe_times.iter().zip(&ys).map(|(t, y)| t * t * y).sum();
    let det = s2 * s4 - s3 * s3;
    let lin = (sty * s4 - sty2 * s3) / det;
    let quad = (s2 * sty2 - s3 * sty) / det;
    let signal = (slope * t_max).abs();
    let departure = probe_times.iter().zip(&ys).map(|(t, y)| (y - slope * t).abs()).fold(0.0, f64::max);
    let ratio = ((quad * t_max).abs() / lin.abs().max(1e-300)).max(departure / signal.max(1e-300));
    if ratio > 0.05 {
        return Err(Error::ProbeNonlinear { ratio });
    }
    Ok(-slope / (2.0 * probe_omega))
}
