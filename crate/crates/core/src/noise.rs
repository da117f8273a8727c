//! Ornstein–Uhlenbeck processes for magnetic-field and laser-intensity
//! fluctuations, together with their closed-form statistics.
//!
//! A process is described by a correlation time `tau` and a diffusion
//! constant `c`. Paths are advanced with the exact update
//!
//! ```text
//! X(t + dt) = X(t) e^{-dt/tau} + sqrt(c tau / 2 (1 - e^{-2 dt/tau})) N
//! ```
//!
//! which holds for any `dt`, so a path sampled on a coarse grid has the same
//! law as one sampled finely and then decimated.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::{num_complex::Complex64, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

/// Correlation time, diffusion constant and starting value of an OU process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OuParams {
    /// Correlation time in seconds.
    pub tau: f64,
    /// Diffusion constant in units²/s.
    pub c: f64,
    /// Value at t = 0.
    pub x0: f64,
}

impl OuParams {
    pub fn new(tau: f64, c: f64) -> Result<Self> {
        ensure_finite(tau, "OU correlation time")?;
        ensure_finite(c, "OU diffusion constant")?;
        if tau <= 0.0 {
            return Err(Error::invalid(format!("OU tau must be > 0, got {tau}")));
        }
        if c < 0.0 {
            return Err(Error::invalid(format!("OU c must be >= 0, got {c}")));
        }
        Ok(Self { tau, c, x0: 0.0 })
    }

    /// Process whose stationary standard deviation is `sigma`, i.e. `c = 2 sigma² / tau`.
    pub fn from_std(tau: f64, sigma: f64) -> Result<Self> {
        Self::new(tau, 2.0 * sigma * sigma / tau)
    }

    /// Dephasing process with coherence time `t2`.
    pub fn from_t2(tau: f64, t2: f64) -> Result<Self> {
        Self::new(tau, diffusion_from_t2(tau, t2)?)
    }

    /// A process that stays at zero forever.
    pub fn silent(tau: f64) -> Self {
        Self { tau, c: 0.0, x0: 0.0 }
    }

    pub fn with_x0(mut self, x0: f64) -> Self {
        self.x0 = x0;
        self
    }

    pub fn stationary_variance(&self) -> f64 {
        0.5 * self.c * self.tau
    }

    /// Frequency (Hz) at which the spectral density has dropped to half its zero-frequency value.
    pub fn crossover_frequency(&self) -> f64 {
        1.0 / (2.0 * PI * self.tau)
    }

    pub fn is_silent(&self) -> bool {
        self.c == 0.0 && self.x0 == 0.0
    }
}

/// One exact OU update of `x` over `dt` given a standard normal draw.
pub fn ou_step(x: f64, dt: f64, params: &OuParams, gaussian_draw: f64) -> Result<f64> {
    ensure_finite(x, "OU value")?;
    ensure_finite(dt, "OU step")?;
    ensure_finite(gaussian_draw, "Gaussian draw")?;
    if dt <= 0.0 {
        return Err(Error::invalid(format!("OU step must be > 0, got {dt}")));
    }
    Ok(OuStepper::new(params, dt).step(x, gaussian_draw))
}

/// Precomputed update coefficients for a fixed step, used in hot loops.
#[derive(Debug, Clone, Copy)]
pub struct OuStepper {
    decay: f64,
    kick: f64,
}

impl OuStepper {
    pub fn new(params: &OuParams, dt: f64) -> Self {
        let decay = (-dt / params.tau).exp();
        // 1 - e^{-2dt/tau} via expm1 keeps precision for dt << tau.
        let kick = (0.5 * params.c * params.tau * -(-2.0 * dt / params.tau).exp_m1()).sqrt();
        Self { decay, kick }
    }

    #[inline]
    pub fn step(&self, x: f64, gaussian_draw: f64) -> f64 {
        x * self.decay + self.kick * gaussian_draw
    }

    pub fn is_silent(&self) -> bool {
        self.kick == 0.0
    }
}

/// Diffusion constant giving coherence time `t2` for correlation time `tau`.
///
/// The closed form carries a factor `e^{2 T2/tau}` in numerator and
/// denominator; it is cancelled before evaluation so that fast noise
/// (`T2/tau` in the hundreds and beyond) does not overflow.
pub fn diffusion_from_t2(tau: f64, t2: f64) -> Result<f64> {
    ensure_finite(tau, "tau")?;
    ensure_finite(t2, "T2")?;
    if tau <= 0.0 || t2 <= 0.0 {
        return Err(Error::invalid(format!("tau and T2 must be > 0, got tau = {tau}, T2 = {t2}")));
    }
    let ratio = t2 / tau;
    let bracket = 4.0 * tau * (-ratio).exp() - tau * (-2.0 * ratio).exp() + 2.0 * t2 - 3.0 * tau;
    let c = 4.0 / (tau * tau * bracket);
    if !c.is_finite() || c <= 0.0 {
        return Err(Error::DiffusionOverflow { ratio });
    }
    Ok(c)
}

/// Mean and variance of a zero-started process at time `t`.
pub fn analytic_moments(t: f64, params: &OuParams) -> Result<(f64, f64)> {
    ensure_finite(t, "time")?;
    if t < 0.0 {
        return Err(Error::invalid(format!("time must be >= 0, got {t}")));
    }
    let variance = -params.stationary_variance() * (-2.0 * t / params.tau).exp_m1();
    Ok((0.0, variance))
}

/// Variance of the accumulated phase `∫_0^t X(s) ds` of a zero-started process.
pub fn phase_variance(t: f64, params: &OuParams) -> f64 {
    let x = t / params.tau;
    // x - 3/2 + 2e^{-x} - e^{-2x}/2 starts at O(x³); sum its series near zero.
    let shape = if x < 0.1 {
        let mut sum = 0.0;
        let mut power = 0.5 * x * x; // x^k / k! at k = 2
        let mut two_pow = 2.0; // 2^{k-1} at k = 2
        for k in 3..30 {
            power *= x / k as f64;
            two_pow *= 2.0;
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            sum += sign * (2.0 - two_pow) * power;
        }
        sum
    } else {
        x + 2.0 * (-x).exp_m1() - 0.5 * (-2.0 * x).exp_m1()
    };
    params.c * params.tau.powi(3) * shape
}

/// Ensemble coherence `<σx(t)>` of `|↑_x>` under `δ(t)/2 σz` with OU `δ`.
pub fn analytic_coherence(t: f64, params: &OuParams) -> Result<f64> {
    ensure_finite(t, "time")?;
    if t < 0.0 {
        return Err(Error::invalid(format!("time must be >= 0, got {t}")));
    }
    Ok((-0.5 * phase_variance(t, params)).exp())
}

/// Two-sided power spectral density at frequency `f` (Hz).
pub fn spectral_density_analytic(f: f64, params: &OuParams) -> f64 {
    let wt = 2.0 * PI * params.tau * f;
    params.c * params.tau * params.tau / (1.0 + wt * wt)
}

/// A sampled path on a uniform grid starting at t = 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseRealization {
    pub dt: f64,
    pub samples: Vec<f64>,
    pub params: OuParams,
    pub seed: u64,
}

impl NoiseRealization {
    /// Draws `n_samples` grid values (including `t = 0`) from a ChaCha stream seeded with `seed`.
    pub fn generate(params: OuParams, dt: f64, n_samples: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::generate_with(params, dt, n_samples, seed, &mut rng)
    }

    pub fn generate_with<R: Rng + ?Sized>(
        params: OuParams,
        dt: f64,
        n_samples: usize,
        seed: u64,
        rng: &mut R,
    ) -> Result<Self> {
        ensure_finite(dt, "grid spacing")?;
        if dt <= 0.0 {
            return Err(Error::invalid("grid spacing must be > 0"));
        }
        if n_samples == 0 {
            return Err(Error::invalid("a realization needs at least one sample"));
        }
        let stepper = OuStepper::new(&params, dt);
        let mut samples = Vec::with_capacity(n_samples);
        let mut x = params.x0;
        samples.push(x);
        for _ in 1..n_samples {
            let draw: f64 = rng.sample(StandardNormal);
            x = stepper.step(x, draw);
            samples.push(x);
        }
        Ok(Self { dt, samples, params, seed })
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.samples.len()).map(move |k| k as f64 * self.dt)
    }

    pub fn record_length(&self) -> f64 {
        self.samples.len() as f64 * self.dt
    }
}

/// Periodogram `|P_n|² / T` on the non-negative frequency grid `f_n = n / T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralEstimate {
    pub frequencies: Vec<f64>,
    pub power: Vec<f64>,
    pub record_length: f64,
}

impl SpectralEstimate {
    /// Bin-wise mean of several estimates sharing one frequency grid.
    pub fn average(estimates: &[SpectralEstimate]) -> Result<SpectralEstimate> {
        let first = estimates.first().ok_or_else(|| Error::invalid("cannot average zero spectra"))?;
        let mut power = vec![0.0; first.power.len()];
        for e in estimates {
            if e.frequencies != first.frequencies {
                return Err(Error::invalid("spectra have different frequency grids"));
            }
            for (acc, p) in power.iter_mut().zip(&e.power) {
                *acc += p;
            }
        }
        let n = estimates.len() as f64;
        power.iter_mut().for_each(|p| *p /= n);
        Ok(SpectralEstimate { frequencies: first.frequencies.clone(), power, record_length: first.record_length })
    }

    /// Least-squares slope of `log power` against `log f` over `[f_lo, f_hi]`.
    pub fn loglog_slope(&self, f_lo: f64, f_hi: f64) -> Option<f64> {
        let points: Vec<(f64, f64)> = self
            .frequencies
            .iter()
            .zip(&self.power)
            .filter(|(f, p)| **f >= f_lo && **f <= f_hi && **p > 0.0)
            .map(|(f, p)| (f.ln(), p.ln()))
            .collect();
        if points.len() < 2 {
            return None;
        }
        let n = points.len() as f64;
        let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
        let my = points.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = points.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = points.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
        (sxx > 0.0).then(|| sxy / sxx)
    }
}

/// Periodogram of a realization (rectangular window, DC bin included).
pub fn periodogram(realization: &NoiseRealization) -> Result<SpectralEstimate> {
    spectrum_uniform(&realization.samples, realization.dt)
}

/// Periodogram of samples given at explicit times; the grid must be uniform.
pub fn periodogram_from_grid(times: &[f64], values: &[f64]) -> Result<SpectralEstimate> {
    if times.len() != values.len() {
        return Err(Error::DimensionMismatch { expected: times.len(), got: values.len() });
    }
    if times.len() < 2 {
        return Err(Error::invalid("periodogram needs at least two samples"));
    }
    let dt = times[1] - times[0];
    if dt <= 0.0 {
        return Err(Error::invalid("time grid must be increasing"));
    }
    for (k, w) in times.windows(2).enumerate() {
        if ((w[1] - w[0]) - dt).abs() > 1e-9 * dt.max(times[k].abs() * 1e-6) {
            return Err(Error::invalid(format!(
                "non-uniform grid at index {}: spacing {} vs {}",
                k + 1,
                w[1] - w[0],
                dt
            )));
        }
    }
    spectrum_uniform(values, dt)
}

fn spectrum_uniform(values: &[f64], dt: f64) -> Result<SpectralEstimate> {
    let m = values.len();
    if m < 2 {
        return Err(Error::invalid("periodogram needs at least two samples"));
    }
    let mut buffer: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(m).process(&mut buffer);
    let record_length = m as f64 * dt;
    let bins = m / 2 + 1;
    let frequencies = (0..bins).map(|n| n as f64 / record_length).collect();
    // P_n = dt Σ x_k e^{-2πi kn/M} approximates ∫_0^T X(t) e^{-2πi f_n t} dt.
    let power = buffer[..bins].iter().map(|z| (z * dt).norm_sqr() / record_length).collect();
    Ok(SpectralEstimate { frequencies, power, record_length })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const TAU: f64 = 50e-6;
    const C_FIG1: f64 = 1.5e11;

    #[test]
    fn zero_decays_to_zero_without_diffusion() {
        let p = OuParams::new(1e-3, 0.0).unwrap();
        assert_eq!(ou_step(0.0, 1e-6, &p, 1.7).unwrap(), 0.0);
    }

    #[test]
    fn deterministic_decay_factor() {
        let p = OuParams::new(TAU, C_FIG1).unwrap();
        let x = ou_step(1.0, TAU, &p, 0.0).unwrap();
        assert_relative_eq!(x, (-1.0f64).exp(), epsilon = 1e-15);
        assert_relative_eq!(x, 0.367879, epsilon = 1e-6);
    }

    #[test]
    fn rejects_bad_inputs() {
        let p = OuParams::new(TAU, C_FIG1).unwrap();
        assert!(ou_step(f64::NAN, 1e-6, &p, 0.0).is_err());
        assert!(ou_step(0.0, 1e-6, &p, f64::INFINITY).is_err());
        assert!(ou_step(0.0, 0.0, &p, 0.0).is_err());
        assert!(OuParams::new(0.0, 1.0).is_err());
        assert!(OuParams::new(1.0, -1.0).is_err());
    }

    #[test]
    fn diffusion_constant_for_fast_noise() {
        let c = diffusion_from_t2(TAU, 3e-3).unwrap();
        // Direct evaluation of the un-cancelled closed form at this moderate ratio.
        let e1 = (3e-3f64 / TAU).exp();
        let e2 = e1 * e1;
        let direct = 4.0 * e2 / (TAU * TAU * (4.0 * e1 * TAU - TAU + e2 * (2.0 * 3e-3 - 3.0 * TAU)));
        assert_relative_eq!(c, direct, max_relative = 1e-12);
        assert!((2.6e11..2.8e11).contains(&c), "c = {c}");
        let fast = c * TAU * TAU * 3e-3 / 2.0;
        assert!((0.95..=1.05).contains(&fast), "c τ² T2 / 2 = {fast}");
    }

    #[test]
    fn diffusion_constant_round_trip() {
        for &(tau, t2) in &[(50e-6, 3e-3), (5e-3, 3e-3), (1e-6, 3e-3), (1e-3, 18e-3)] {
            let p = OuParams::from_t2(tau, t2).unwrap();
            let coherence = analytic_coherence(t2, &p).unwrap();
            assert_relative_eq!(coherence, (-1.0f64).exp(), max_relative = 1e-9);
        }
    }

    #[test]
    fn diffusion_constant_survives_huge_ratio() {
        // The raw closed form overflows at T2/tau ≈ 355.
        let c = diffusion_from_t2(1e-8, 3e-3).unwrap();
        assert!(c.is_finite());
        assert_relative_eq!(c * 1e-16 * 3e-3 / 2.0, 1.0, max_relative = 1e-4);
    }

    #[test]
    fn moments() {
        let p = OuParams::new(TAU, C_FIG1).unwrap();
        assert_eq!(analytic_moments(0.0, &p).unwrap(), (0.0, 0.0));
        let (m, v) = analytic_moments(1e3, &p).unwrap();
        assert_eq!(m, 0.0);
        assert_relative_eq!(v, 3.75e6, max_relative = 1e-12);
        let (_, v) = analytic_moments(TAU, &p).unwrap();
        assert_relative_eq!(v, 3.75e6 * (1.0 - (-2.0f64).exp()), max_relative = 1e-12);
        assert!((3.2e6..3.3e6).contains(&v));
        assert!(analytic_moments(-1.0, &p).is_err());
    }

    #[test]
    fn coherence_values() {
        let p = OuParams::new(TAU, C_FIG1).unwrap();
        assert_eq!(analytic_coherence(0.0, &p).unwrap(), 1.0);
        // c is fixed by C(T2) = 1/e for either noise regime.
        for tau in [50e-6, 5e-3] {
            let q = OuParams::from_t2(tau, 3e-3).unwrap();
            assert_relative_eq!(analytic_coherence(3e-3, &q).unwrap(), (-1f64).exp(), max_relative = 1e-12);
        }
        // Slow noise is only roughly Gaussian at T2/2: e^{-1/4} = 0.779 vs 0.857.
        let slow = OuParams::from_t2(5e-3, 3e-3).unwrap();
        let half = analytic_coherence(1.5e-3, &slow).unwrap();
        assert_relative_eq!(half, 0.857_479_979_139_568_5, max_relative = 1e-10);
    }

    #[test]
    fn phase_variance_series_matches_direct_form() {
        let p = OuParams::new(1.0, 2.0).unwrap();
        for &t in &[0.09, 0.0999, 0.1001, 0.12] {
            let x: f64 = t;
            let direct = 2.0 * (x - (1.5 - 2.0 * (-x).exp() + 0.5 * (-2.0 * x).exp()));
            assert_relative_eq!(phase_variance(t, &p), direct, max_relative = 1e-9);
        }
        // Leading small-time behaviour c τ³ x³ / 3.
        assert_relative_eq!(phase_variance(1e-4, &p), 2.0 * 1e-12 / 3.0, max_relative = 1e-3);
    }

    #[test]
    fn spectral_density_shape() {
        let p = OuParams::new(TAU, C_FIG1).unwrap();
        let s0 = C_FIG1 * TAU * TAU;
        let fcr = p.crossover_frequency();
        assert_relative_eq!(spectral_density_analytic(0.0, &p), s0, max_relative = 1e-15);
        assert_relative_eq!(spectral_density_analytic(fcr, &p), s0 / 2.0, max_relative = 1e-12);
        assert_relative_eq!(spectral_density_analytic(10.0 * fcr, &p), s0 / 101.0, max_relative = 1e-12);
    }

    #[test]
    fn realization_is_reproducible() {
        let p = OuParams::new(TAU, C_FIG1).unwrap().with_x0(0.0);
        let a = NoiseRealization::generate(p, 1e-6, 1000, 7).unwrap();
        let b = NoiseRealization::generate(p, 1e-6, 1000, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.samples[0], 0.0);
        let c = NoiseRealization::generate(p, 1e-6, 1000, 8).unwrap();
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn periodogram_of_sinusoid_has_one_bin() {
        let m = 256;
        let dt = 1e-3;
        let k0 = 17;
        let f0 = k0 as f64 / (m as f64 * dt);
        let values: Vec<f64> = (0..m).map(|k| (2.0 * PI * f0 * k as f64 * dt).cos()).collect();
        let times: Vec<f64> = (0..m).map(|k| k as f64 * dt).collect();
        let est = periodogram_from_grid(&times, &values).unwrap();
        let total: f64 = est.power.iter().sum();
        assert_relative_eq!(est.power[k0] / total, 1.0, epsilon = 1e-12);
        assert_relative_eq!(est.frequencies[k0], f0, max_relative = 1e-12);
    }

    #[test]
    fn periodogram_of_white_noise_is_flat() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dt = 1e-3;
        let spectra: Vec<SpectralEstimate> = (0..50)
            .map(|_| {
                let v: Vec<f64> = (0..1024).map(|_| rng.sample(StandardNormal)).collect();
                spectrum_uniform(&v, dt).unwrap()
            })
            .collect();
        let avg = SpectralEstimate::average(&spectra).unwrap();
        // White noise of unit variance has two-sided density dt.
        let n = avg.power.len();
        let low: f64 = avg.power[1..n / 2].iter().sum::<f64>() / (n / 2 - 1) as f64;
        let high: f64 = avg.power[n / 2..n - 1].iter().sum::<f64>() / (n - 1 - n / 2) as f64;
        assert!((low / dt - 1.0).abs() < 0.05, "{low}");
        assert!((high / dt - 1.0).abs() < 0.05, "{high}");
        assert!(avg.loglog_slope(1.0, 500.0).unwrap().abs() < 0.1);
    }

    #[test]
    fn silent_path_has_no_power_beyond_dc() {
        let p = OuParams::new(TAU, 0.0).unwrap().with_x0(0.0);
        let r = NoiseRealization::generate(p, 1e-6, 512, 1).unwrap();
        let est = periodogram(&r).unwrap();
        assert!(est.power[1..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn rejects_nonuniform_grid() {
        let times = [0.0, 1.0, 2.5, 3.0];
        let values = [0.0; 4];
        assert!(periodogram_from_grid(&times, &values).is_err());
    }

    #[test]
    fn ou_path_is_red_above_crossover() {
        let p = OuParams::new(TAU, C_FIG1).unwrap();
        let r = NoiseRealization::generate(p, 0.5e-6, 1 << 16, 11).unwrap();
        let est = periodogram(&r).unwrap();
        let fcr = p.crossover_frequency();
        let slope = est.loglog_slope(10.0 * fcr, 100.0 * fcr).unwrap();
        assert!((-2.4..=-1.6).contains(&slope), "slope {slope}");
    }

    fn ensemble_at(times: &[f64], n: usize, p: &OuParams) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut out = vec![Vec::with_capacity(n); times.len()];
        for _ in 0..n {
            let mut x = p.x0;
            let mut t = 0.0;
            for (slot, &target) in times.iter().enumerate() {
                x = ou_step(x, target - t, p, rng.sample(StandardNormal)).unwrap();
                t = target;
                out[slot].push(x);
            }
        }
        out
    }

    #[test]
    fn ensemble_matches_moments() {
        let p = OuParams::new(TAU, C_FIG1).unwrap();
        let times = [TAU / 2.0, TAU, 5.0 * TAU];
        let n = 10_000;
        for (t, values) in times.iter().zip(ensemble_at(&times, n, &p)) {
            let mean = values.iter().sum::<f64>() / n as f64;
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let (_, expected) = analytic_moments(*t, &p).unwrap();
            assert!(mean.abs() < 4.0 * (var / n as f64).sqrt());
            assert!((var / expected - 1.0).abs() < 0.05, "t={t} var={var} expected={expected}");
        }
    }

    #[test]
    fn split_steps_share_distribution() {
        // Two steps of dt/2 and one of dt have identical first two moments.
        let p = OuParams::new(TAU, C_FIG1).unwrap();
        let dt = 0.7 * TAU;
        let one = OuStepper::new(&p, dt);
        let half = OuStepper::new(&p, dt / 2.0);
        assert_relative_eq!(one.decay, half.decay * half.decay, max_relative = 1e-14);
        let var_two = half.kick.powi(2) * half.decay.powi(2) + half.kick.powi(2);
        assert_relative_eq!(one.kick.powi(2), var_two, max_relative = 1e-12);
    }
}
