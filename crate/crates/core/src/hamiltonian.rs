//! Trapped-ion Hamiltonians for the bare, first and second protection layers,
//! the ideal Rabi and Dirac targets they realize, and the frame maps relating
//! the two pictures.
//!
//! Every simulated Hamiltonian has the post-optical-RWA form
//!
//! ```text
//! H(t) = δ_m(t)/2 σz + Σ_j Ω_j(t)(1 + δ_Ωj(t))/2 [σ⁺ D(iη_j e^{iνt}) e^{i(Δ_j t - φ_j)} + h.c.]
//! ```
//!
//! with the displacement factor kept exact (no Lamb-Dicke expansion and no
//! vibrational RWA).

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{displacement_matrix, OperatorSet, Pauli, QuantumState};
use crate::linalg::{self, C0};
use crate::noise::OuParams;
use crate::units::khz;

/// Protection layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Layer {
    Zeroth,
    First,
    Second,
}

impl Layer {
    pub const ALL: [Layer; 3] = [Layer::Zeroth, Layer::First, Layer::Second];

    pub fn index(self) -> usize {
        match self {
            Layer::Zeroth => 0,
            Layer::First => 1,
            Layer::Second => 2,
        }
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Layer::ALL.get(i).copied().ok_or_else(|| Error::invalid(format!("layer must be 0, 1 or 2, got {i}")))
    }

    pub fn laser_count(self) -> usize {
        match self {
            Layer::Zeroth => 2,
            Layer::First | Layer::Second => 3,
        }
    }
}

/// Deterministic amplitude modulation of a laser.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Envelope {
    Constant,
    /// Linear rise from 0 at t = 0 to 1 at `duration`, held afterwards.
    Ramp {
        duration: f64,
    },
    /// `2 cos(omega t)`.
    Cosine {
        omega: f64,
    },
}

impl Envelope {
    #[inline]
    pub fn value(&self, t: f64) -> f64 {
        match *self {
            Envelope::Constant => 1.0,
            Envelope::Ramp { duration } => (t / duration).clamp(0.0, 1.0),
            Envelope::Cosine { omega } => 2.0 * (omega * t).cos(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaserConfig {
    pub label: String,
    /// Rabi frequency Ω_j in rad/s.
    pub omega: f64,
    /// Detuning Δ_j in rad/s.
    pub delta: f64,
    pub phi: f64,
    /// Lamb-Dicke parameter.
    pub eta: f64,
    pub envelope: Envelope,
    /// Index into [`LayerConfig::amplitude_noise`], if the intensity fluctuates.
    pub amplitude_noise_channel: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmplitudeChannel {
    pub label: String,
    pub params: OuParams,
}

/// Complete description of one simulated trapped-ion Hamiltonian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerConfig {
    pub layer: Layer,
    pub lasers: Vec<LaserConfig>,
    /// Trap frequency ν in rad/s.
    pub nu: f64,
    pub dephasing: OuParams,
    pub amplitude_noise: Vec<AmplitudeChannel>,
    /// Qubit transition frequency; metadata only, it drops out after the optical RWA.
    pub optical_frequency: Option<f64>,
}

impl LayerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lasers.len() != self.layer.laser_count() {
            return Err(Error::invalid(format!(
                "layer {} needs {} lasers, got {}",
                self.layer.index(),
                self.layer.laser_count(),
                self.lasers.len()
            )));
        }
        if !(self.nu > 0.0) {
            return Err(Error::invalid("trap frequency must be > 0"));
        }
        for l in &self.lasers {
            if l.omega < 0.0 || l.eta < 0.0 {
                return Err(Error::invalid(format!("laser {}: omega and eta must be >= 0", l.label)));
            }
            if l.delta.abs() > 2.0 * self.nu * (1.0 + 1e-12) {
                return Err(Error::invalid(format!("laser {}: |detuning| {} exceeds 2 nu", l.label, l.delta)));
            }
            if let Some(ch) = l.amplitude_noise_channel {
                if ch >= self.amplitude_noise.len() {
                    return Err(Error::MissingNoiseChannel(ch));
                }
            }
        }
        Ok(())
    }

    /// Same Hamiltonian with every noise source switched off.
    pub fn noiseless(&self) -> Self {
        let mut out = self.clone();
        out.dephasing = OuParams::silent(self.dephasing.tau);
        for ch in &mut out.amplitude_noise {
            ch.params = OuParams::silent(ch.params.tau);
        }
        out
    }

    /// Largest possible `‖H(t)‖` over all times, for a given noise snapshot bound.
    pub fn norm_bound(&self, snapshot: &NoiseSnapshot) -> f64 {
        let lasers: f64 = self
            .lasers
            .iter()
            .map(|l| {
                let env = match l.envelope {
                    Envelope::Cosine { .. } => 2.0,
                    _ => 1.0,
                };
                let noise = l.amplitude_noise_channel.and_then(|c| snapshot.amplitude.get(c)).copied().unwrap_or(0.0);
                0.5 * l.omega * env * (1.0 + noise).abs()
            })
            .sum();
        0.5 * snapshot.dephasing.abs() + lasers
    }
}

/// Values of every noise channel at one instant.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NoiseSnapshot {
    pub dephasing: f64,
    pub amplitude: Vec<f64>,
}

impl NoiseSnapshot {
    pub fn quiet(channels: usize) -> Self {
        Self { dephasing: 0.0, amplitude: vec![0.0; channels] }
    }
}

/// Complex prefactor of `σ⁺ D(iη e^{iνt})` contributed by one laser at time `t`.
#[inline]
pub fn laser_coefficient(laser: &LaserConfig, t: f64, snapshot: &NoiseSnapshot) -> Result<Complex64> {
    let noise = match laser.amplitude_noise_channel {
        Some(ch) => *snapshot.amplitude.get(ch).ok_or(Error::MissingNoiseChannel(ch))?,
        None => 0.0,
    };
    let amp = 0.5 * laser.omega * laser.envelope.value(t) * (1.0 + noise);
    Ok(Complex64::from_polar(amp, laser.delta * t - laser.phi))
}

/// Dense simulated Hamiltonian at time `t`.
pub fn build_layer_hamiltonian(
    t: f64,
    config: &LayerConfig,
    snapshot: &NoiseSnapshot,
    ops: &OperatorSet,
) -> Result<DMatrix<Complex64>> {
    let n = ops.n_fock;
    let mut coupling = DMatrix::<Complex64>::zeros(n, n);
    for laser in &config.lasers {
        let c = laser_coefficient(laser, t, snapshot)?;
        if c == C0 {
            continue;
        }
        let alpha = Complex64::new(0.0, laser.eta) * Complex64::from_polar(1.0, config.nu * t);
        coupling += displacement_matrix(alpha, n)? * c;
    }
    let mut h = &ops.sz * Complex64::new(0.5 * snapshot.dephasing, 0.0);
    // σ⁺ ⊗ M fills the ↑↓ block, σ⁻ ⊗ M† the ↓↑ block.
    h.view_mut((0, n), (n, n)).copy_from(&coupling);
    h.view_mut((n, 0), (n, n)).copy_from(&coupling.adjoint());
    linalg::ensure_hermitian(&h, 1e-12)?;
    Ok(h)
}

/// Quantum Rabi model `Ω̃/2 σ_TLS + ω̃ a†a - λ̃ σ_⊥ (a + a†)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RabiParams {
    pub omega_tls: f64,
    pub omega_mode: f64,
    pub lambda: f64,
    pub tls_axis: Pauli,
    pub perp_axis: Pauli,
}

impl RabiParams {
    /// Frequency ratio `Ω̃ / ω̃`.
    pub fn ratio(&self) -> f64 {
        self.omega_tls / self.omega_mode
    }

    /// Dimensionless coupling `2λ̃ / (ω̃ √R)`.
    pub fn coupling(&self) -> f64 {
        2.0 * self.lambda / (self.omega_mode * self.ratio().sqrt())
    }

    /// Parameters from `(R, g, ω̃)`.
    pub fn from_targets(ratio: f64, coupling: f64, omega_mode: f64, tls_axis: Pauli, perp_axis: Pauli) -> Self {
        Self {
            omega_tls: ratio * omega_mode,
            omega_mode,
            lambda: 0.5 * coupling * omega_mode * ratio.sqrt(),
            tls_axis,
            perp_axis,
        }
    }
}

/// Dirac Hamiltonian `c_D p̂ σ_⊥ + m_D c² σ_TLS`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiracParams {
    pub c_d: f64,
    pub m_d_c2: f64,
    pub tls_axis: Pauli,
    pub perp_axis: Pauli,
}

impl DiracParams {
    /// Dimensionless mass `r` with `H/c_D = r σ_TLS + p̂ σ_⊥`.
    pub fn r(&self) -> f64 {
        self.m_d_c2 / self.c_d
    }
}

pub fn ideal_rabi_hamiltonian(params: &RabiParams, ops: &OperatorSet) -> DMatrix<Complex64> {
    ops.pauli(params.tls_axis) * Complex64::new(0.5 * params.omega_tls, 0.0)
        + &ops.num * Complex64::new(params.omega_mode, 0.0)
        - ops.pauli(params.perp_axis) * &ops.x * Complex64::new(params.lambda, 0.0)
}

pub fn ideal_dirac_hamiltonian(params: &DiracParams, ops: &OperatorSet) -> DMatrix<Complex64> {
    ops.pauli(params.perp_axis) * &ops.p * Complex64::new(params.c_d, 0.0)
        + ops.pauli(params.tls_axis) * Complex64::new(params.m_d_c2, 0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum IdealModel {
    Rabi(RabiParams),
    Dirac(DiracParams),
}

impl IdealModel {
    pub fn hamiltonian(&self, ops: &OperatorSet) -> DMatrix<Complex64> {
        match self {
            IdealModel::Rabi(p) => ideal_rabi_hamiltonian(p, ops),
            IdealModel::Dirac(p) => ideal_dirac_hamiltonian(p, ops),
        }
    }

    pub fn tls_axis(&self) -> Pauli {
        match self {
            IdealModel::Rabi(p) => p.tls_axis,
            IdealModel::Dirac(p) => p.tls_axis,
        }
    }

    pub fn perp_axis(&self) -> Pauli {
        match self {
            IdealModel::Rabi(p) => p.perp_axis,
            IdealModel::Dirac(p) => p.perp_axis,
        }
    }
}

/// Unitary `U(t) = exp(+i qubit_rate t σ_axis / 2) ⊗ exp(+i mode_rate t a†a)`
/// carrying an ideal-model state into the simulation picture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameMap {
    pub qubit_axis: Pauli,
    pub qubit_rate: f64,
    pub mode_rate: f64,
}

impl FrameMap {
    pub const IDENTITY: FrameMap = FrameMap { qubit_axis: Pauli::Z, qubit_rate: 0.0, mode_rate: 0.0 };

    /// Qubit factor as a 2×2 matrix `[[u00, u01], [u10, u11]]`.
    pub fn qubit_unitary(&self, t: f64) -> [[Complex64; 2]; 2] {
        let theta = 0.5 * self.qubit_rate * t;
        let (s, c) = theta.sin_cos();
        let cc = Complex64::new(c, 0.0);
        // exp(iθσ) = cos θ + i sin θ σ
        match self.qubit_axis {
            Pauli::Z => [[Complex64::from_polar(1.0, theta), C0], [C0, Complex64::from_polar(1.0, -theta)]],
            Pauli::X => [[cc, Complex64::new(0.0, s)], [Complex64::new(0.0, s), cc]],
            Pauli::Y => [[cc, Complex64::new(s, 0.0)], [Complex64::new(-s, 0.0), cc]],
        }
    }

    pub fn apply(&self, t: f64, state: &QuantumState) -> QuantumState {
        let n = state.n_fock;
        let u = self.qubit_unitary(t);
        let mut out = state.clone();
        for k in 0..n {
            let phase = Complex64::from_polar(1.0, self.mode_rate * t * k as f64);
            let up = state.amplitudes[k];
            let dn = state.amplitudes[n + k];
            out.amplitudes[k] = (u[0][0] * up + u[0][1] * dn) * phase;
            out.amplitudes[n + k] = (u[1][0] * up + u[1][1] * dn) * phase;
        }
        out
    }
}

/// Maps an ideal-model state at time `t` into the simulation picture.
pub fn frame_transform(frame: &FrameMap, t: f64, state: &QuantumState) -> QuantumState {
    frame.apply(t, state)
}

/// Target model to realize.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Targets {
    /// `R = Ω̃/ω̃`, `g = 2λ̃/(ω̃√R)` and the mode frequency `ω̃` in rad/s.
    Rabi { ratio: f64, coupling: f64, omega_mode: f64 },
    /// `r = m_D c_D` and `c_D` in rad/s.
    Dirac { r: f64, c_d: f64 },
}

/// Hardware constants and noise held fixed while mapping targets onto lasers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedParams {
    pub nu: f64,
    /// η of the sideband lasers 1 and 2.
    pub eta_sideband: f64,
    /// η of the carrier lasers a and b.
    pub eta_carrier: f64,
    /// Carrier Rabi frequency Ω_a used by the second layer.
    pub omega_a_second: f64,
    pub dephasing: OuParams,
    pub laser_noise: OuParams,
    /// Lasers 1 and 2 share one intensity-noise realization.
    pub correlated_sidebands: bool,
    /// Linear intensity ramp of the coupling lasers over this duration.
    pub quench: Option<f64>,
}

impl FixedParams {
    /// Trap and noise parameters used for every numerical experiment.
    pub fn standard() -> Result<Self> {
        let tau_omega = 1e-3;
        let p = 1e-3;
        Ok(Self {
            nu: khz(1360.0),
            eta_sideband: 0.06,
            eta_carrier: 0.01,
            omega_a_second: khz(200.0),
            dephasing: OuParams::from_t2(50e-6, 3e-3)?,
            laser_noise: OuParams::new(tau_omega, 2.0 * p * p / tau_omega)?,
            correlated_sidebands: true,
            quench: None,
        })
    }
}

/// A layer configuration together with the ideal model it realizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Realization {
    pub config: LayerConfig,
    pub ideal: IdealModel,
    pub frame: FrameMap,
    pub warnings: Vec<String>,
}

impl Realization {
    /// Ideal model at time `t` of a quench (the coupling rises with the intensity ramp).
    pub fn ideal_at(&self, t: f64) -> IdealModel {
        match (self.ideal, self.quench_duration()) {
            (IdealModel::Rabi(mut p), Some(d)) => {
                p.lambda *= (t / d).clamp(0.0, 1.0);
                IdealModel::Rabi(p)
            }
            (m, _) => m,
        }
    }

    pub fn quench_duration(&self) -> Option<f64> {
        self.config.lasers.iter().find_map(|l| match l.envelope {
            Envelope::Ramp { duration } => Some(duration),
            _ => None,
        })
    }
}

fn laser(label: &str, omega: f64, delta: f64, phi: f64, eta: f64, channel: Option<usize>) -> LaserConfig {
    LaserConfig {
        label: label.to_string(),
        omega,
        delta,
        phi,
        eta,
        envelope: Envelope::Constant,
        amplitude_noise_channel: channel,
    }
}

fn channel(label: &str, params: OuParams) -> AmplitudeChannel {
    AmplitudeChannel { label: label.to_string(), params }
}

/// Laser detunings, phases and intensities realizing `targets` at `layer`.
pub fn params_from_targets(targets: Targets, layer: Layer, fixed: &FixedParams) -> Result<Realization> {
    let nu = fixed.nu;
    let eta = fixed.eta_sideband;
    let eta_c = fixed.eta_carrier;
    let mut warnings = Vec::new();
    let noise = fixed.laser_noise;

    // Channel layout: sidebands first (shared or split), then carriers.
    let (ch1, ch2, mut channels) = if layer == Layer::Second {
        (0, 0, vec![channel("omega_1", noise)])
    } else if fixed.correlated_sidebands {
        (0, 0, vec![channel("omega_12", noise)])
    } else {
        (0, 1, vec![channel("omega_1", noise), channel("omega_2", noise)])
    };

    let (lasers, ideal, frame) = match (targets, layer) {
        (Targets::Rabi { ratio, coupling, omega_mode }, _) => {
            check_positive(&[("R", ratio), ("omega_mode", omega_mode)])?;
            if coupling < 0.0 {
                return Err(Error::invalid("coupling g must be >= 0"));
            }
            let omega_tls = ratio * omega_mode;
            let lambda = 0.5 * coupling * omega_mode * ratio.sqrt();
            match layer {
                Layer::Zeroth => {
                    let d1 = omega_tls - omega_mode;
                    let d2 = omega_tls + omega_mode;
                    let omega = 2.0 * lambda / eta;
                    let lasers = vec![
                        laser("1", omega, nu + d1, 1.5 * PI, eta, Some(ch1)),
                        laser("2", omega, -nu + d2, 1.5 * PI, eta, Some(ch2)),
                    ];
                    let ideal = RabiParams { omega_tls, omega_mode, lambda, tls_axis: Pauli::Z, perp_axis: Pauli::X };
                    let frame = FrameMap { qubit_axis: Pauli::Z, qubit_rate: omega_tls, mode_rate: omega_mode };
                    (lasers, IdealModel::Rabi(ideal), frame)
                }
                Layer::First => {
                    let omega = 2.0 * lambda / eta;
                    let cha = channels.len();
                    channels.push(channel("omega_a", noise));
                    let lasers = vec![
                        laser("1", omega, nu - omega_mode, 0.0, eta, Some(ch1)),
                        laser("2", omega, -nu + omega_mode, 0.0, eta, Some(ch2)),
                        laser("a", omega_tls, 0.0, 0.0, eta_c, Some(cha)),
                    ];
                    let ideal = RabiParams { omega_tls, omega_mode, lambda, tls_axis: Pauli::X, perp_axis: Pauli::Y };
                    let frame = FrameMap { qubit_axis: Pauli::Z, qubit_rate: 0.0, mode_rate: omega_mode };
                    (lasers, IdealModel::Rabi(ideal), frame)
                }
                Layer::Second => {
                    let omega_a = fixed.omega_a_second;
                    let omega_b = omega_tls;
                    check_second_layer(omega_a, omega_b, &mut warnings)?;
                    let omega1 = 4.0 * lambda / eta;
                    channels.push(channel("omega_a", noise));
                    channels.push(channel("omega_b", noise));
                    let mut b = laser("b", omega_b, 0.0, FRAC_PI_2, eta_c, Some(2));
                    b.envelope = Envelope::Cosine { omega: omega_a };
                    let lasers = vec![
                        laser("1", omega1, nu - omega_mode, 1.5 * PI, eta, Some(0)),
                        laser("a", omega_a, 0.0, 0.0, eta_c, Some(1)),
                        b,
                    ];
                    let ideal = RabiParams { omega_tls, omega_mode, lambda, tls_axis: Pauli::Y, perp_axis: Pauli::X };
                    let frame = FrameMap { qubit_axis: Pauli::X, qubit_rate: -omega_a, mode_rate: omega_mode };
                    (lasers, IdealModel::Rabi(ideal), frame)
                }
            }
        }
        (Targets::Dirac { r, c_d }, _) => {
            check_positive(&[("c_D", c_d)])?;
            if r < 0.0 {
                return Err(Error::invalid("Dirac mass r must be >= 0"));
            }
            if r == 0.0 && layer != Layer::Zeroth {
                return Err(Error::invalid(
                    "the massless Dirac limit r = 0 has no protected realization at layers 1 and 2",
                ));
            }
            let m_d_c2 = r * c_d;
            match layer {
                Layer::Zeroth => {
                    let delta = 2.0 * m_d_c2;
                    let omega = c_d / eta;
                    let lasers = vec![
                        laser("1", omega, nu + delta, PI, eta, Some(ch1)),
                        laser("2", omega, -nu + delta, 0.0, eta, Some(ch2)),
                    ];
                    let ideal = DiracParams { c_d, m_d_c2, tls_axis: Pauli::Z, perp_axis: Pauli::X };
                    let frame = FrameMap { qubit_axis: Pauli::Z, qubit_rate: delta, mode_rate: 0.0 };
                    (lasers, IdealModel::Dirac(ideal), frame)
                }
                Layer::First => {
                    let omega = c_d / eta;
                    let cha = channels.len();
                    channels.push(channel("omega_a", noise));
                    let lasers = vec![
                        laser("1", omega, nu, 1.5 * PI, eta, Some(ch1)),
                        laser("2", omega, -nu, FRAC_PI_2, eta, Some(ch2)),
                        laser("a", 2.0 * m_d_c2, 0.0, 0.0, eta_c, Some(cha)),
                    ];
                    let ideal = DiracParams { c_d, m_d_c2, tls_axis: Pauli::X, perp_axis: Pauli::Y };
                    (lasers, IdealModel::Dirac(ideal), FrameMap::IDENTITY)
                }
                Layer::Second => {
                    let omega_a = fixed.omega_a_second;
                    let omega_b = 2.0 * m_d_c2;
                    check_second_layer(omega_a, omega_b, &mut warnings)?;
                    channels.push(channel("omega_a", noise));
                    channels.push(channel("omega_b", noise));
                    let mut b = laser("b", omega_b, 0.0, FRAC_PI_2, eta_c, Some(2));
                    b.envelope = Envelope::Cosine { omega: omega_a };
                    let lasers = vec![
                        laser("1", 2.0 * c_d / eta, nu, PI, eta, Some(0)),
                        laser("a", omega_a, 0.0, 0.0, eta_c, Some(1)),
                        b,
                    ];
                    let ideal = DiracParams { c_d, m_d_c2, tls_axis: Pauli::Y, perp_axis: Pauli::X };
                    let frame = FrameMap { qubit_axis: Pauli::X, qubit_rate: -omega_a, mode_rate: 0.0 };
                    (lasers, IdealModel::Dirac(ideal), frame)
                }
            }
        }
    };

    let mut config = LayerConfig {
        layer,
        lasers,
        nu,
        dephasing: fixed.dephasing,
        amplitude_noise: channels,
        optical_frequency: None,
    };
    if let Some(duration) = fixed.quench {
        if !(duration > 0.0) {
            return Err(Error::invalid("quench duration must be > 0"));
        }
        // Only the sideband (coupling) lasers ramp.
        for l in config.lasers.iter_mut().filter(|l| l.label == "1" || l.label == "2") {
            l.envelope = Envelope::Ramp { duration };
        }
    }
    config.validate()?;
    if config.lasers.iter().any(|l| l.omega < 0.0) {
        return Err(Error::invalid("targets require a negative Rabi frequency"));
    }
    Ok(Realization { config, ideal, frame, warnings })
}

fn check_positive(values: &[(&str, f64)]) -> Result<()> {
    for (name, v) in values {
        if !(v.is_finite() && *v > 0.0) {
            return Err(Error::invalid(format!("{name} must be > 0, got {v}")));
        }
    }
    Ok(())
}

fn check_second_layer(omega_a: f64, omega_b: f64, warnings: &mut Vec<String>) -> Result<()> {
    if omega_b >= omega_a {
        return Err(Error::invalid(format!(
            "second layer needs Omega_b < Omega_a, got Omega_b/Omega_a = {:.3}",
            omega_b / omega_a
        )));
    }
    if omega_b >= omega_a / 5.0 {
        warnings.push(format!(
            "Omega_a/Omega_b = {:.2}: the rotating-wave approximation behind the second layer is not well satisfied",
            omega_a / omega_b
        ));
    }
    Ok(())
}

fn find_laser<'a>(config: &'a LayerConfig, label: &str) -> Result<&'a LaserConfig> {
    config.lasers.iter().find(|l| l.label == label).ok_or_else(|| Error::invalid(format!("layer has no laser {label}")))
}

/// Recovers `(R, g, ω̃)` from the lasers of a Rabi realization.
pub fn rabi_targets_from_config(config: &LayerConfig) -> Result<(f64, f64, f64)> {
    let l1 = find_laser(config, "1")?;
    let (omega_tls, omega_mode, lambda) = match config.layer {
        Layer::Zeroth => {
            let l2 = find_laser(config, "2")?;
            let d1 = l1.delta - config.nu;
            let d2 = l2.delta + config.nu;
            (0.5 * (d1 + d2), 0.5 * (d2 - d1), 0.5 * l1.eta * l1.omega)
        }
        Layer::First => (find_laser(config, "a")?.omega, config.nu - l1.delta, 0.5 * l1.eta * l1.omega),
        Layer::Second => (find_laser(config, "b")?.omega, config.nu - l1.delta, 0.25 * l1.eta * l1.omega),
    };
    let p = RabiParams { omega_tls, omega_mode, lambda, tls_axis: Pauli::Z, perp_axis: Pauli::X };
    Ok((p.ratio(), p.coupling(), omega_mode))
}

/// Recovers `(r, c_D)` from the lasers of a Dirac realization.
pub fn dirac_targets_from_config(config: &LayerConfig) -> Result<(f64, f64)> {
    let l1 = find_laser(config, "1")?;
    let (m_d_c2, c_d) = match config.layer {
        Layer::Zeroth => (0.5 * (l1.delta - config.nu), l1.eta * l1.omega),
        Layer::First => (0.5 * find_laser(config, "a")?.omega, l1.eta * l1.omega),
        Layer::Second => (0.5 * find_laser(config, "b")?.omega, 0.5 * l1.eta * l1.omega),
    };
    Ok((m_d_c2 / c_d, c_d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::build_operator_set;
    use crate::linalg::{hermiticity_deviation, max_abs_diff};
    use approx::assert_relative_eq;

    fn fixed() -> FixedParams {
        FixedParams::standard().unwrap()
    }

    fn rabi_targets() -> Targets {
        Targets::Rabi { ratio: 1.0, coupling: 0.25, omega_mode: khz(5.0) }
    }

    #[test]
    fn rabi_zeroth_layer_table_values() {
        let r = params_from_targets(rabi_targets(), Layer::Zeroth, &fixed()).unwrap();
        let nu = fixed().nu;
        let l = &r.config.lasers;
        assert_relative_eq!(l[0].delta - nu, 0.0, epsilon = 1e-6);
        assert_relative_eq!(l[1].delta + nu, khz(10.0), max_relative = 1e-12);
        assert_relative_eq!(l[0].omega / khz(1.0), 20.833, epsilon = 1e-3);
        assert_eq!(l[0].omega, l[1].omega);
        assert_eq!(l[0].phi, 1.5 * PI);
        assert_eq!(l[0].amplitude_noise_channel, l[1].amplitude_noise_channel);
    }

    #[test]
    fn rabi_second_layer_table_values() {
        let r = params_from_targets(rabi_targets(), Layer::Second, &fixed()).unwrap();
        let l = &r.config.lasers;
        assert_relative_eq!(l[0].omega / khz(1.0), 41.667, epsilon = 1e-3);
        assert_relative_eq!(l[1].omega, khz(200.0), max_relative = 1e-12);
        assert_relative_eq!(l[2].omega, khz(5.0), max_relative = 1e-12);
        assert_eq!(l[2].phi, FRAC_PI_2);
        assert!(r.warnings.is_empty());
        let channels: Vec<_> = l.iter().map(|x| x.amplitude_noise_channel).collect();
        assert_eq!(channels, vec![Some(0), Some(1), Some(2)]);
    }

    #[test]
    fn qpt_final_intensities() {
        for (ratio, expected) in [(50.0, 117.85), (100.0, 166.67)] {
            let t = Targets::Rabi { ratio, coupling: 1.0, omega_mode: khz(1.0) };
            let r = params_from_targets(t, Layer::First, &fixed()).unwrap();
            assert_relative_eq!(r.config.lasers[0].omega / khz(1.0), expected, epsilon = 0.01);
        }
        let mut f = fixed();
        f.quench = Some(1e-3);
        for (ratio, expected) in [(50.0, 94.28), (100.0, 133.33)] {
            let t = Targets::Rabi { ratio, coupling: 1.0, omega_mode: khz(0.4) };
            let r = params_from_targets(t, Layer::Second, &f).unwrap();
            assert_relative_eq!(r.config.lasers[0].omega / khz(1.0), expected, epsilon = 0.01);
            assert_eq!(r.config.lasers[0].envelope, Envelope::Ramp { duration: 1e-3 });
            assert_eq!(r.config.lasers[1].envelope, Envelope::Constant);
            assert_eq!(r.warnings.is_empty(), ratio < 100.0);
        }
    }

    #[test]
    fn dirac_table_values() {
        let t = Targets::Dirac { r: 2.0, c_d: khz(1.25) };
        let r0 = params_from_targets(t, Layer::Zeroth, &fixed()).unwrap();
        let IdealModel::Dirac(p) = r0.ideal else { panic!() };
        assert_relative_eq!(p.c_d, 0.06 * r0.config.lasers[0].omega, max_relative = 1e-12);
        assert_relative_eq!(r0.config.lasers[0].omega / khz(1.0), 20.833, epsilon = 1e-3);
        assert_relative_eq!(p.m_d_c2, khz(2.5), max_relative = 1e-12);
        assert_relative_eq!(r0.config.lasers[0].delta - fixed().nu, khz(5.0), max_relative = 1e-9);
        let r2 = params_from_targets(t, Layer::Second, &fixed()).unwrap();
        assert_relative_eq!(r2.config.lasers[0].omega / khz(1.0), 41.667, epsilon = 1e-3);
        assert_relative_eq!(r2.config.lasers[2].omega, khz(5.0), max_relative = 1e-12);
        let massless = Targets::Dirac { r: 0.0, c_d: khz(1.25) };
        assert!(params_from_targets(massless, Layer::First, &fixed()).is_err());
        assert!(params_from_targets(massless, Layer::Zeroth, &fixed()).is_ok());
    }

    #[test]
    fn second_layer_rejects_and_warns() {
        let t = Targets::Rabi { ratio: 100.0, coupling: 1.0, omega_mode: khz(3.0) };
        assert!(params_from_targets(t, Layer::Second, &fixed()).is_err());
        let t = Targets::Rabi { ratio: 50.0, coupling: 1.0, omega_mode: khz(1.0) };
        let r = params_from_targets(t, Layer::Second, &fixed()).unwrap();
        assert_eq!(r.warnings.len(), 1);
    }

    #[test]
    fn targets_round_trip() {
        for layer in Layer::ALL {
            for &(ratio, g, w) in &[(1.0, 0.25, khz(5.0)), (50.0, 1.0, khz(0.4)), (3.0, 0.7, khz(2.0))] {
                let t = Targets::Rabi { ratio, coupling: g, omega_mode: w };
                let r = params_from_targets(t, layer, &fixed()).unwrap();
                let (r2, g2, w2) = rabi_targets_from_config(&r.config).unwrap();
                assert_relative_eq!(r2, ratio, max_relative = 1e-12);
                assert_relative_eq!(g2, g, max_relative = 1e-12);
                assert_relative_eq!(w2, w, max_relative = 1e-9);
                let IdealModel::Rabi(p) = r.ideal else { panic!() };
                assert_relative_eq!(p.ratio(), ratio, max_relative = 1e-12);
                assert_relative_eq!(p.coupling(), g, max_relative = 1e-12);
            }
            let t = Targets::Dirac { r: 2.0, c_d: khz(1.25) };
            let r = params_from_targets(t, layer, &fixed()).unwrap();
            let (rr, cd) = dirac_targets_from_config(&r.config).unwrap();
            assert_relative_eq!(rr, 2.0, max_relative = 1e-12);
            assert_relative_eq!(cd, khz(1.25), max_relative = 1e-12);
        }
    }

    #[test]
    fn coupling_inversion() {
        let p = RabiParams::from_targets(1.0, 0.25, khz(5.0), Pauli::Z, Pauli::X);
        assert_relative_eq!(p.lambda, khz(0.625), max_relative = 1e-12);
    }

    #[test]
    fn layer_hamiltonians_are_hermitian() {
        let ops = build_operator_set(12).unwrap();
        for layer in Layer::ALL {
            let r = params_from_targets(rabi_targets(), layer, &fixed()).unwrap();
            let snap = NoiseSnapshot { dephasing: 1234.0, amplitude: vec![1e-3; r.config.amplitude_noise.len()] };
            for &t in &[0.0, 1.3e-7, 2.7e-4, 7.9e-3] {
                let h = build_layer_hamiltonian(t, &r.config, &snap, &ops).unwrap();
                assert!(hermiticity_deviation(&h) < 1e-12 * h.norm());
            }
        }
    }

    #[test]
    fn missing_channel_is_rejected() {
        let ops = build_operator_set(6).unwrap();
        let r = params_from_targets(rabi_targets(), Layer::First, &fixed()).unwrap();
        let snap = NoiseSnapshot { dephasing: 0.0, amplitude: vec![0.0] };
        assert!(matches!(build_layer_hamiltonian(0.0, &r.config, &snap, &ops), Err(Error::MissingNoiseChannel(1))));
    }

    /// Second construction of the bare Rabi layer at t = 0 directly from the
    /// operator set: σ⁺ e^{iη x} summed with the two laser phases.
    #[test]
    fn zeroth_layer_matches_hand_assembly() {
        let n = 16;
        let ops = build_operator_set(n).unwrap();
        let f = fixed();
        let r = params_from_targets(rabi_targets(), Layer::Zeroth, &f).unwrap();
        let snap = NoiseSnapshot::quiet(1);
        let h = build_layer_hamiltonian(0.0, &r.config, &snap, &ops).unwrap();

        let omega = 2.0 * khz(0.625) / 0.06;
        let ld = linalg::hermitian_exp(&ops.x, 0.06).unwrap(); // e^{iηx} on the full space
        let phase = Complex64::from_polar(1.0, -1.5 * PI);
        let term = &ops.sp * &ld * (phase * omega); // two lasers, Ω/2 each, same phase at t=0
        let expected = &term + term.adjoint();
        assert!(max_abs_diff(&h, &expected) < 1e-12 * omega);
    }

    #[test]
    fn vanishing_lamb_dicke_gives_qubit_only_dynamics() {
        let ops = build_operator_set(6).unwrap();
        let mut r = params_from_targets(rabi_targets(), Layer::First, &fixed()).unwrap();
        for l in &mut r.config.lasers {
            l.eta = 0.0;
        }
        let t = 3.3e-5;
        let snap = NoiseSnapshot { dephasing: 500.0, amplitude: vec![0.0; 2] };
        let h = build_layer_hamiltonian(t, &r.config, &snap, &ops).unwrap();
        let mut expected = &ops.sz * Complex64::new(250.0, 0.0);
        for l in &r.config.lasers {
            let c = Complex64::from_polar(0.5 * l.omega, l.delta * t - l.phi);
            expected += &ops.sp * c + &ops.sm * c.conj();
        }
        assert!(max_abs_diff(&h, &expected) < 1e-9);
    }

    #[test]
    fn ideal_models() {
        let ops = build_operator_set(10).unwrap();
        let p = RabiParams { omega_tls: 3.0, omega_mode: 1.0, lambda: 0.0, tls_axis: Pauli::Z, perp_axis: Pauli::X };
        let h = ideal_rabi_hamiltonian(&p, &ops);
        let (vals, _) = linalg::eigh(&h).unwrap();
        let mut expected: Vec<f64> = (0..10).flat_map(|n| [1.5 + n as f64, -1.5 + n as f64]).collect();
        expected.sort_by(f64::total_cmp);
        for (a, b) in vals.iter().zip(expected) {
            assert_relative_eq!(*a, b, epsilon = 1e-10);
        }

        let p = RabiParams::from_targets(1.0, 0.7, 1.0, Pauli::X, Pauli::Y);
        let h = ideal_rabi_hamiltonian(&p, &ops);
        assert!(hermiticity_deviation(&h) < 1e-14);
        let (vals, _) = linalg::eigh(&h).unwrap();
        assert!(vals[0] <= -0.5 * p.omega_tls + 1e-12);

        let d = DiracParams { c_d: 1.0, m_d_c2: 0.0, tls_axis: Pauli::Z, perp_axis: Pauli::X };
        let ops60 = build_operator_set(60).unwrap();
        let h = ideal_dirac_hamiltonian(&d, &ops60);
        assert!(hermiticity_deviation(&h) < 1e-14);
        let (vals, _) = linalg::eigh(&h).unwrap();
        let n = vals.len();
        for k in 0..n {
            assert_relative_eq!(vals[k], -vals[n - 1 - k], epsilon = 1e-9);
        }
    }

    #[test]
    fn frame_maps_are_unitary_and_trivial_at_zero() {
        let ops = build_operator_set(8).unwrap();
        let mut amps = nalgebra::DVector::from_fn(16, |i, _| Complex64::new(i as f64 * 0.1, 1.0 - i as f64 * 0.05));
        amps /= Complex64::new(amps.norm(), 0.0);
        let s = QuantumState::new(8, amps).unwrap();
        for layer in Layer::ALL {
            let r = params_from_targets(rabi_targets(), layer, &fixed()).unwrap();
            assert_eq!(frame_transform(&r.frame, 0.0, &s), s);
            let m = frame_transform(&r.frame, 1.234e-3, &s);
            assert_relative_eq!(m.norm(), 1.0, epsilon = 1e-12);
        }
        // Matches the dense exponential of the frame generator.
        let f = FrameMap { qubit_axis: Pauli::X, qubit_rate: -3.0, mode_rate: 2.0 };
        let gen = &ops.sx * Complex64::new(-1.5, 0.0) + &ops.num * Complex64::new(2.0, 0.0);
        let u = linalg::hermitian_exp(&gen, 0.37).unwrap();
        let direct = s.apply(&u).unwrap();
        let mapped = f.apply(0.37, &s);
        assert!((direct.amplitudes - mapped.amplitudes).norm() < 1e-12);
        for axis in [Pauli::Y, Pauli::Z] {
            let f = FrameMap { qubit_axis: axis, qubit_rate: 1.1, mode_rate: 0.0 };
            let u = linalg::hermitian_exp(&(ops.pauli(axis) * Complex64::new(0.55, 0.0)), 0.8).unwrap();
            assert!((s.apply(&u).unwrap().amplitudes - f.apply(0.8, &s).amplitudes).norm() < 1e-12);
        }
    }
}
