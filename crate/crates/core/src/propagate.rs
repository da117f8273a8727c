//! Norm-preserving time stepping of one noise realization.
//!
//! Every kernel applies the exponential midpoint rule
//! `ψ(t + dt) = exp(-i H(t + dt/2; x(t)) dt) ψ(t)` where `x(t)` are the noise
//! values held from the start of the step.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{truncation_tail, QuantumState};
use crate::hamiltonian::{LayerConfig, NoiseSnapshot};
use crate::linalg;
use crate::noise::{OuParams, OuStepper};

mod layer;
pub use layer::LayerKernel;

/// Fock levels watched by the truncation check.
pub const TAIL_WIDTH: usize = 3;
pub const TAIL_TOLERANCE: f64 = 1e-6;
/// Allowed norm drift per 10⁵ steps.
pub const NORM_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConvergenceMode {
    Off,
    HalvingCheck,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegrationPlan {
    pub dt: f64,
    pub t_final: f64,
    pub output_stride: usize,
    pub convergence: ConvergenceMode,
}

impl IntegrationPlan {
    /// Default step `2π/(32ν)`, the largest allowed.
    pub fn default_dt(nu: f64) -> f64 {
        std::f64::consts::TAU / (32.0 * nu)
    }

    /// Plan whose step divides `t_final` exactly and is no longer than `dt_max`,
    /// recording roughly `n_outputs` evenly spaced points.
    pub fn new(dt_max: f64, t_final: f64, n_outputs: usize) -> Result<Self> {
        if !(dt_max > 0.0 && t_final > 0.0) {
            return Err(Error::invalid("dt and t_final must be > 0"));
        }
        let n_out = n_outputs.max(1);
        let per_output = (t_final / n_out as f64 / dt_max).ceil().max(1.0) as usize;
        let n_steps = per_output * n_out;
        Ok(Self { dt: t_final / n_steps as f64, t_final, output_stride: per_output, convergence: ConvergenceMode::Off })
    }

    pub fn with_convergence(mut self, mode: ConvergenceMode) -> Self {
        self.convergence = mode;
        self
    }

    pub fn n_steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }

    pub fn validate(&self, nu: Option<f64>) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::invalid("dt must be > 0"));
        }
        if !(self.t_final > 0.0) {
            return Err(Error::invalid("t_final must be > 0"));
        }
        if self.output_stride == 0 {
            return Err(Error::invalid("output_stride must be >= 1"));
        }
        let n = self.t_final / self.dt;
        if (n - n.round()).abs() > 1e-6 * n.max(1.0) {
            return Err(Error::invalid("t_final must be an integer number of steps"));
        }
        if let Some(nu) = nu {
            if self.dt * nu > std::f64::consts::TAU / 32.0 * (1.0 + 1e-12) {
                return Err(Error::invalid(format!(
                    "dt = {:.3e} s does not resolve the trap frequency (need dt*nu <= 2pi/32)",
                    self.dt
                )));
            }
        }
        Ok(())
    }

    /// Same plan at half the step (and twice the stride).
    pub fn halved(&self) -> Self {
        Self { dt: 0.5 * self.dt, output_stride: 2 * self.output_stride, ..*self }
    }

    /// Step indices at which observables are recorded; always includes 0 and the last step.
    pub fn output_steps(&self) -> Vec<usize> {
        let n = self.n_steps();
        let mut steps: Vec<usize> = (0..=n).step_by(self.output_stride).collect();
        if *steps.last().unwrap() != n {
            steps.push(n);
        }
        steps
    }

    pub fn output_times(&self) -> Vec<f64> {
        self.output_steps().into_iter().map(|k| k as f64 * self.dt).collect()
    }
}

/// `exp(-i H dt) ψ` via Hermitian eigendecomposition.
pub fn unitary_step(state: &QuantumState, h: &DMatrix<Complex64>, dt: f64) -> Result<QuantumState> {
    linalg::ensure_hermitian(h, 1e-12)?;
    state.apply(&linalg::hermitian_exp(h, -dt)?)
}

/// `exp(-i H dt) ψ` by a Taylor series with scaling; an independent route to
/// [`unitary_step`].
pub fn unitary_step_taylor(state: &QuantumState, h: &DMatrix<Complex64>, dt: f64) -> Result<QuantumState> {
    let norm = h.iter().map(|z| z.norm()).sum::<f64>().max(h.nrows() as f64 * 1e-300);
    let pieces = (norm * dt.abs() / 0.5).ceil().max(1.0) as usize;
    let tau = dt / pieces as f64;
    let mut psi = state.amplitudes.clone();
    for _ in 0..pieces {
        let mut term = psi.clone();
        let mut sum = psi.clone();
        for k in 1..40 {
            term = (h * &term) * Complex64::new(0.0, -tau / k as f64);
            sum += &term;
            if term.norm() < 1e-18 * sum.norm() {
                break;
            }
        }
        psi = sum;
    }
    QuantumState::new(state.n_fock, psi)
}

/// Advances a state by one step of the exponential midpoint rule.
pub trait Kernel {
    fn n_fock(&self) -> usize;
    /// `ψ ← exp(-i H(t + dt/2; noise) dt) ψ`. Negative `dt` steps backwards
    /// from `t` to `t + dt`.
    fn step(&mut self, t: f64, dt: f64, noise: &NoiseSnapshot, psi: &mut QuantumState) -> Result<()>;
}

/// Reference kernel: builds the dense Hamiltonian and exponentiates it by
/// eigendecomposition every step.
pub struct DenseKernel<F> {
    n_fock: usize,
    build: F,
}

impl<F> DenseKernel<F>
where
    F: FnMut(f64, &NoiseSnapshot) -> Result<DMatrix<Complex64>>,
{
    pub fn new(n_fock: usize, build: F) -> Self {
        Self { n_fock, build }
    }
}

impl<F> Kernel for DenseKernel<F>
where
    F: FnMut(f64, &NoiseSnapshot) -> Result<DMatrix<Complex64>>,
{
    fn n_fock(&self) -> usize {
        self.n_fock
    }

    fn step(&mut self, t: f64, dt: f64, noise: &NoiseSnapshot, psi: &mut QuantumState) -> Result<()> {
        let h = (self.build)(t + 0.5 * dt, noise)?;
        *psi = unitary_step(psi, &h, dt)?;
        Ok(())
    }
}

/// Time-independent Hamiltonian; the eigendecomposition is computed once.
#[derive(Debug, Clone)]
pub struct SpectralPropagator {
    pub n_fock: usize,
    pub values: DVector<f64>,
    pub vectors: DMatrix<Complex64>,
}

impl SpectralPropagator {
    pub fn new(h: &DMatrix<Complex64>, n_fock: usize) -> Result<Self> {
        linalg::ensure_hermitian(h, 1e-12)?;
        let (values, vectors) = linalg::eigh(h)?;
        Ok(Self { n_fock, values, vectors })
    }

    /// `exp(-i H t) ψ₀` exactly, for any `t`.
    pub fn evolve(&self, psi0: &QuantumState, t: f64) -> QuantumState {
        let mut coeffs = self.vectors.adjoint() * &psi0.amplitudes;
        for (c, &e) in coeffs.iter_mut().zip(self.values.iter()) {
            *c *= Complex64::from_polar(1.0, -e * t);
        }
        QuantumState { n_fock: psi0.n_fock, amplitudes: &self.vectors * coeffs }
    }
}

impl Kernel for SpectralPropagator {
    fn n_fock(&self) -> usize {
        self.n_fock
    }

    fn step(&mut self, _t: f64, dt: f64, _noise: &NoiseSnapshot, psi: &mut QuantumState) -> Result<()> {
        *psi = self.evolve(psi, dt);
        Ok(())
    }
}

/// A driven qubit without motion: `H = δ_m/2 σz + Ω/2 σx`.
#[derive(Debug, Clone, Copy)]
pub struct QubitKernel {
    pub omega: f64,
}

impl Kernel for QubitKernel {
    fn n_fock(&self) -> usize {
        1
    }

    fn step(&mut self, _t: f64, dt: f64, noise: &NoiseSnapshot, psi: &mut QuantumState) -> Result<()> {
        if psi.dim() != 2 {
            return Err(Error::DimensionMismatch { expected: 2, got: psi.dim() });
        }
        // exp(-i dt (b·σ)) = cos(|b|dt) - i sin(|b|dt) b̂·σ
        let bx = 0.5 * self.omega;
        let bz = 0.5 * noise.dephasing;
        let b = bx.hypot(bz);
        let (s, c) = (b * dt).sin_cos();
        let (nx, nz) = if b > 0.0 { (bx / b, bz / b) } else { (0.0, 0.0) };
        let up = psi.amplitudes[0];
        let dn = psi.amplitudes[1];
        let mi = Complex64::new(0.0, -s);
        psi.amplitudes[0] = up * c + mi * (nz * up + nx * dn);
        psi.amplitudes[1] = dn * c + mi * (nx * up - nz * dn);
        Ok(())
    }
}

/// Supplies the noise values held during each step.
pub trait NoiseSource {
    /// Values at the start of the current step.
    fn current(&self) -> &NoiseSnapshot;
    /// Moves to the next step.
    fn advance(&mut self) -> Result<()>;
}

/// Independent OU channels driven from one random stream, advanced by the
/// exact update. Channels with zero diffusion consume no random numbers.
pub struct OuNoiseBank {
    dephasing: OuStepper,
    amplitude: Vec<OuStepper>,
    snapshot: NoiseSnapshot,
    rng: ChaCha8Rng,
}

impl OuNoiseBank {
    pub fn new(dephasing: &OuParams, amplitude: &[OuParams], dt: f64, rng: ChaCha8Rng) -> Self {
        Self {
            dephasing: OuStepper::new(dephasing, dt),
            amplitude: amplitude.iter().map(|p| OuStepper::new(p, dt)).collect(),
            snapshot: NoiseSnapshot { dephasing: dephasing.x0, amplitude: amplitude.iter().map(|p| p.x0).collect() },
            rng,
        }
    }

    pub fn for_layer(config: &LayerConfig, dt: f64, rng: ChaCha8Rng) -> Self {
        let amps: Vec<OuParams> = config.amplitude_noise.iter().map(|c| c.params).collect();
        Self::new(&config.dephasing, &amps, dt, rng)
    }
}

impl NoiseSource for OuNoiseBank {
    fn current(&self) -> &NoiseSnapshot {
        &self.snapshot
    }

    fn advance(&mut self) -> Result<()> {
        if !self.dephasing.is_silent() {
            let z: f64 = self.rng.sample(StandardNormal);
            self.snapshot.dephasing = self.dephasing.step(self.snapshot.dephasing, z);
        }
        for (x, s) in self.snapshot.amplitude.iter_mut().zip(&self.amplitude) {
            if !s.is_silent() {
                let z: f64 = self.rng.sample(StandardNormal);
                *x = s.step(*x, z);
            }
        }
        Ok(())
    }
}

/// Constant noise values (zero for a noiseless run).
pub struct FrozenNoise(pub NoiseSnapshot);

impl NoiseSource for FrozenNoise {
    fn current(&self) -> &NoiseSnapshot {
        &self.0
    }

    fn advance(&mut self) -> Result<()> {
        Ok(())
    }
}

/// Wraps a source and keeps every snapshot it hands out.
pub struct RecordingNoise<S> {
    pub inner: S,
    pub history: Vec<NoiseSnapshot>,
}

impl<S: NoiseSource> RecordingNoise<S> {
    pub fn new(inner: S) -> Self {
        let first = inner.current().clone();
        Self { inner, history: vec![first] }
    }
}

impl<S: NoiseSource> NoiseSource for RecordingNoise<S> {
    fn current(&self) -> &NoiseSnapshot {
        self.inner.current()
    }

    fn advance(&mut self) -> Result<()> {
        self.inner.advance()?;
        self.history.push(self.inner.current().clone());
        Ok(())
    }
}

/// Checks norm and truncation of a state at a recording time.
pub fn check_state(psi: &QuantumState, t: f64, steps_done: usize) -> Result<()> {
    let norm = psi.norm();
    if !norm.is_finite() {
        return Err(Error::NonFinite("state norm"));
    }
    let allowed = NORM_TOLERANCE * (steps_done as f64 / 1e5).max(1.0);
    let drift = (norm - 1.0).abs();
    if drift > allowed {
        return Err(Error::NormDrift { time: t, drift });
    }
    if psi.n_fock > TAIL_WIDTH {
        let tail = truncation_tail(psi, TAIL_WIDTH)?;
        if tail > TAIL_TOLERANCE {
            return Err(Error::Truncation {
                what: format!("population in the top {TAIL_WIDTH} Fock levels"),
                time: t,
                tail,
                n_fock: psi.n_fock,
            });
        }
    }
    Ok(())
}

/// Integrates one trajectory. `record(k, t, ψ)` is called at step 0, every
/// `output_stride` steps and at the final step, after the state checks pass.
pub fn evolve<K, S, F>(
    state0: &QuantumState,
    kernel: &mut K,
    plan: &IntegrationPlan,
    noise: &mut S,
    mut record: F,
) -> Result<QuantumState>
where
    K: Kernel + ?Sized,
    S: NoiseSource + ?Sized,
    F: FnMut(usize, f64, &QuantumState) -> Result<()>,
{
    plan.validate(None)?;
    if state0.n_fock != kernel.n_fock() {
        return Err(Error::DimensionMismatch { expected: 2 * kernel.n_fock(), got: state0.dim() });
    }
    if (state0.norm() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid("initial state is not normalized"));
    }
    let n_steps = plan.n_steps();
    let mut psi = state0.clone();
    check_state(&psi, 0.0, 0)?;
    record(0, 0.0, &psi)?;
    for k in 0..n_steps {
        let t = k as f64 * plan.dt;
        kernel.step(t, plan.dt, noise.current(), &mut psi)?;
        noise.advance()?;
        let done = k + 1;
        if done % plan.output_stride == 0 || done == n_steps {
            let t1 = done as f64 * plan.dt;
            check_state(&psi, t1, done)?;
            record(done, t1, &psi)?;
        }
    }
    Ok(psi)
}

/// Runs a trajectory backwards from `t_final` to 0, replaying `history`
/// (one snapshot per forward step) in reverse.
pub fn evolve_backward<K: Kernel + ?Sized>(
    state: &QuantumState,
    kernel: &mut K,
    plan: &IntegrationPlan,
    history: &[NoiseSnapshot],
) -> Result<QuantumState> {
    let n_steps = plan.n_steps();
    if history.len() < n_steps {
        return Err(Error::invalid("noise history shorter than the plan"));
    }
    let mut psi = state.clone();
    for k in (0..n_steps).rev() {
        let t = (k + 1) as f64 * plan.dt;
        kernel.step(t, -plan.dt, &history[k], &mut psi)?;
    }
    Ok(psi)
}

/// Fidelity deficit `1 - |<ψ_dt|ψ_dt/2>|` between a run at `plan.dt` and one
/// at `plan.dt / 2`, both without noise.
pub fn halving_deficit<K: Kernel + ?Sized>(
    state0: &QuantumState,
    kernel: &mut K,
    plan: &IntegrationPlan,
    channels: usize,
) -> Result<f64> {
    let quiet = || FrozenNoise(NoiseSnapshot::quiet(channels));
    let coarse = evolve(state0, kernel, plan, &mut quiet(), |_, _, _| Ok(()))?;
    let fine = evolve(state0, kernel, &plan.halved(), &mut quiet(), |_, _, _| Ok(()))?;
    Ok(1.0 - linalg::inner(&coarse.amplitudes, &fine.amplitudes).norm())
}

/// Fails when the halving deficit exceeds `tolerance`.
pub fn certify_step<K: Kernel + ?Sized>(
    state0: &QuantumState,
    kernel: &mut K,
    plan: &IntegrationPlan,
    channels: usize,
    tolerance: f64,
) -> Result<f64> {
    let deficit = halving_deficit(state0, kernel, plan, channels)?;
    if deficit > tolerance {
        return Err(Error::invalid(format!(
            "step dt = {:.3e} s fails the halving check (deficit {deficit:.3e} > {tolerance:.1e})",
            plan.dt
        )));
    }
    Ok(deficit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{build_operator_set, Pauli};
    use crate::hamiltonian::{
        build_layer_hamiltonian, ideal_rabi_hamiltonian, params_from_targets, FixedParams, Layer, RabiParams, Targets,
    };
    use crate::units::khz;
    use approx::assert_relative_eq;
    use rand::SeedableRng;

    fn fidelity(a: &QuantumState, b: &QuantumState) -> f64 {
        linalg::inner(&a.amplitudes, &b.amplitudes).norm()
    }

    fn random_state(n_fock: usize, seed: u64) -> QuantumState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = DVector::from_fn(2 * n_fock, |i, _| {
            let w = (-(i as f64) / 4.0).exp();
            Complex64::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal)) * w
        });
        let mut s = QuantumState::new(n_fock, v).unwrap();
        s.normalize();
        s
    }

    #[test]
    fn zero_hamiltonian_is_identity() {
        let s = random_state(4, 1);
        let h = DMatrix::zeros(8, 8);
        assert_eq!(unitary_step(&s, &h, 0.3).unwrap().amplitudes.len(), 8);
        assert!((unitary_step(&s, &h, 0.3).unwrap().amplitudes - &s.amplitudes).norm() < 1e-15);
    }

    #[test]
    fn two_level_flop() {
        let ops = build_operator_set(2).unwrap();
        let omega = 2.3;
        let dt = 0.7;
        let h = &ops.sx * Complex64::new(omega / 2.0, 0.0);
        let s = QuantumState::vacuum_with(2, Pauli::Z, true).unwrap();
        let out = unitary_step(&s, &h, dt).unwrap();
        assert_relative_eq!(out.amplitudes[0].norm_sqr(), (omega * dt / 2.0).cos().powi(2), epsilon = 1e-14);
        assert_relative_eq!(out.norm(), 1.0, epsilon = 1e-13);
    }

    #[test]
    fn step_composition_and_routes_agree() {
        let ops = build_operator_set(6).unwrap();
        let p = RabiParams::from_targets(1.3, 0.6, 1.0, Pauli::Z, Pauli::X);
        let h = ideal_rabi_hamiltonian(&p, &ops);
        let s = random_state(6, 2);
        let one = unitary_step(&s, &h, 0.4).unwrap();
        let two = unitary_step(&unitary_step(&s, &h, 0.2).unwrap(), &h, 0.2).unwrap();
        assert!(1.0 - fidelity(&one, &two) < 1e-12);
        let taylor = unitary_step_taylor(&s, &h, 0.4).unwrap();
        assert!((taylor.amplitudes - &one.amplitudes).norm() < 1e-12);
    }

    #[test]
    fn qubit_kernel_matches_dense() {
        let ops = build_operator_set(2).unwrap();
        let mut k = QubitKernel { omega: 1.7 };
        let noise = NoiseSnapshot { dephasing: -0.9, amplitude: vec![] };
        let s0 =
            QuantumState::new(1, DVector::from_vec(vec![Complex64::new(0.6, 0.0), Complex64::new(0.0, 0.8)])).unwrap();
        let mut s = s0.clone();
        k.step(0.0, 0.37, &noise, &mut s).unwrap();
        // Qubit block of the N = 2 operators, mode in |0>.
        let h = &ops.sx * Complex64::new(0.85, 0.0) + &ops.sz * Complex64::new(-0.45, 0.0);
        let big = QuantumState::product(2, [s0.amplitudes[0], s0.amplitudes[1]], 0).unwrap();
        let out = unitary_step(&big, &h, 0.37).unwrap();
        assert!((out.amplitudes[0] - s.amplitudes[0]).norm() < 1e-14);
        assert!((out.amplitudes[2] - s.amplitudes[1]).norm() < 1e-14);
    }

    fn layer(layer: Layer) -> LayerConfig {
        let t = Targets::Rabi { ratio: 1.0, coupling: 0.25, omega_mode: khz(5.0) };
        params_from_targets(t, layer, &FixedParams::standard().unwrap()).unwrap().config
    }

    #[test]
    fn layer_kernel_matches_dense_step() {
        let n = 14;
        let ops = build_operator_set(n).unwrap();
        for l in Layer::ALL {
            let cfg = layer(l);
            let mut fast = LayerKernel::new(&cfg, n).unwrap();
            let noise = NoiseSnapshot { dephasing: 3.1e3, amplitude: vec![2e-3; cfg.amplitude_noise.len()] };
            for &(t, dt) in &[(0.0, 1e-8), (1.234e-4, 1.15e-8), (7.7e-3, -2e-8), (3e-3, 4e-7)] {
                let s0 = random_state(n, 7);
                let mut s = s0.clone();
                fast.step(t, dt, &noise, &mut s).unwrap();
                let h = build_layer_hamiltonian(t + 0.5 * dt, &cfg, &noise, &ops).unwrap();
                let reference = unitary_step(&s0, &h, dt).unwrap();
                let err = (reference.amplitudes - &s.amplitudes).norm();
                assert!(err < 1e-12, "layer {l:?} t {t} dt {dt}: {err}");
            }
        }
    }

    #[test]
    fn layer_kernel_preserves_norm_over_many_steps() {
        let cfg = layer(Layer::Second);
        let mut k = LayerKernel::new(&cfg, 20).unwrap();
        let mut s = QuantumState::vacuum_with(20, Pauli::Y, true).unwrap();
        let dt = IntegrationPlan::default_dt(cfg.nu);
        let noise = NoiseSnapshot { dephasing: 5e3, amplitude: vec![1e-3; 3] };
        for i in 0..100_000 {
            k.step(i as f64 * dt, dt, &noise, &mut s).unwrap();
        }
        assert!((s.norm() - 1.0).abs() < 1e-8, "{}", s.norm() - 1.0);
    }

    #[test]
    fn plan_construction() {
        let p = IntegrationPlan::new(1e-8, 8e-3, 80).unwrap();
        assert!(p.dt <= 1e-8);
        assert_eq!(p.n_steps() % p.output_stride, 0);
        assert_eq!(p.output_steps().len(), 81);
        assert_relative_eq!(*p.output_times().last().unwrap(), 8e-3, max_relative = 1e-12);
        let nu = khz(1360.0);
        let ok = IntegrationPlan::new(IntegrationPlan::default_dt(nu), 1e-3, 10).unwrap();
        assert!(ok.validate(Some(nu)).is_ok());
        let coarse = IntegrationPlan::new(10.0 * IntegrationPlan::default_dt(nu), 1e-3, 10).unwrap();
        assert!(coarse.validate(Some(nu)).is_err());
        assert!(IntegrationPlan::new(0.0, 1.0, 1).is_err());
    }

    #[test]
    fn ideal_rabi_steps_match_exact_diagonalization() {
        let n = 30;
        let ops = build_operator_set(n).unwrap();
        let p = RabiParams::from_targets(1.0, 0.25, khz(5.0), Pauli::Z, Pauli::X);
        let h = ideal_rabi_hamiltonian(&p, &ops);
        let exact = SpectralPropagator::new(&h, n).unwrap();
        let s0 = QuantumState::vacuum_with(n, Pauli::Z, true).unwrap();
        let plan = IntegrationPlan::new(1e-5, 8e-3, 8).unwrap();
        let mut dense = DenseKernel::new(n, |_, _: &NoiseSnapshot| Ok(h.clone()));
        let out = evolve(&s0, &mut dense, &plan, &mut FrozenNoise(NoiseSnapshot::default()), |_, _, _| Ok(())).unwrap();
        assert!(1.0 - fidelity(&out, &exact.evolve(&s0, 8e-3)) < 1e-8);
    }

    #[test]
    fn evolve_records_and_checks_truncation() {
        let n = 6;
        let ops = build_operator_set(n).unwrap();
        // Strong displacement drive pumps population to the top levels.
        let h = &ops.x * Complex64::new(5.0, 0.0);
        let s0 = QuantumState::vacuum_with(n, Pauli::Z, true).unwrap();
        let plan = IntegrationPlan::new(0.01, 1.0, 10).unwrap();
        let mut k = SpectralPropagator::new(&h, n).unwrap();
        let err = evolve(&s0, &mut k, &plan, &mut FrozenNoise(NoiseSnapshot::default()), |_, _, _| Ok(()));
        assert!(matches!(err, Err(Error::Truncation { .. })));

        let mut times = vec![];
        let zero = DMatrix::zeros(2 * n, 2 * n);
        let mut k = SpectralPropagator::new(&zero, n).unwrap();
        let out = evolve(&s0, &mut k, &plan, &mut FrozenNoise(NoiseSnapshot::default()), |_, t, _| {
            times.push(t);
            Ok(())
        })
        .unwrap();
        assert_eq!(out, s0);
        assert_eq!(times.len(), 11);
    }

    #[test]
    fn time_reversal_with_recorded_noise() {
        let n = 16;
        let cfg = layer(Layer::First);
        let mut k = LayerKernel::new(&cfg, n).unwrap();
        let plan = IntegrationPlan::new(IntegrationPlan::default_dt(cfg.nu), 2e-4, 4).unwrap();
        let s0 = QuantumState::vacuum_with(n, Pauli::X, true).unwrap();
        let mut noise = RecordingNoise::new(OuNoiseBank::for_layer(&cfg, plan.dt, ChaCha8Rng::seed_from_u64(3)));
        let out = evolve(&s0, &mut k, &plan, &mut noise, |_, _, _| Ok(())).unwrap();
        let back = evolve_backward(&out, &mut k, &plan, &noise.history).unwrap();
        assert!(1.0 - fidelity(&back, &s0) < 1e-6);
        assert!(noise.history.iter().any(|s| s.dephasing != 0.0));

        let frozen = vec![NoiseSnapshot { dephasing: 2e3, amplitude: vec![1e-3; 2] }; plan.n_steps()];
        let mut f = FrozenNoise(frozen[0].clone());
        let out = evolve(&s0, &mut k, &plan, &mut f, |_, _, _| Ok(())).unwrap();
        let back = evolve_backward(&out, &mut k, &plan, &frozen).unwrap();
        assert!(1.0 - fidelity(&back, &s0) < 1e-6);
    }

    #[test]
    fn vanishing_lamb_dicke_first_layer_flops_at_carrier_frequency() {
        let mut cfg = layer(Layer::First).noiseless();
        for l in &mut cfg.lasers {
            l.eta = 0.0;
        }
        // Keep only the carrier.
        cfg.lasers[0].omega = 0.0;
        cfg.lasers[1].omega = 0.0;
        let omega_a = cfg.lasers[2].omega;
        let mut k = LayerKernel::new(&cfg, 4).unwrap();
        let plan = IntegrationPlan::new(1e-6, 1e-4, 1).unwrap();
        let s0 = QuantumState::vacuum_with(4, Pauli::Z, true).unwrap();
        let out = evolve(&s0, &mut k, &plan, &mut FrozenNoise(NoiseSnapshot::quiet(2)), |_, _, _| Ok(())).unwrap();
        assert_relative_eq!(out.amplitudes[0].norm_sqr(), (omega_a * 1e-4 / 2.0).cos().powi(2), epsilon = 1e-12);
    }

    #[test]
    fn ou_bank_is_reproducible_and_silent_when_noiseless() {
        let cfg = layer(Layer::Second);
        let mut a = OuNoiseBank::for_layer(&cfg, 1e-8, ChaCha8Rng::seed_from_u64(9));
        let mut b = OuNoiseBank::for_layer(&cfg, 1e-8, ChaCha8Rng::seed_from_u64(9));
        for _ in 0..1000 {
            a.advance().unwrap();
            b.advance().unwrap();
        }
        assert_eq!(a.current(), b.current());
        assert!(a.current().dephasing != 0.0);
        let mut q = OuNoiseBank::for_layer(&cfg.noiseless(), 1e-8, ChaCha8Rng::seed_from_u64(9));
        for _ in 0..10 {
            q.advance().unwrap();
        }
        assert_eq!(q.current(), &NoiseSnapshot::quiet(3));
    }
}
