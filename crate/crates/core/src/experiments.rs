//! Figure presets, quench scheduling and deterministic ensemble averaging.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{build_operator_set, Pauli, QuantumState};
use crate::hamiltonian::{
    ideal_rabi_hamiltonian, params_from_targets, FixedParams, IdealModel, Layer, RabiParams, Realization, Targets,
};
use crate::noise::{
    analytic_coherence, analytic_moments, periodogram, NoiseRealization, OuParams, OuStepper, SpectralEstimate,
};
use crate::observables::{self, fidelity, position_expectation, qubit_expectation, scaling_point};
use crate::propagate::{evolve, IntegrationPlan, LayerKernel, OuNoiseBank, QubitKernel, SpectralPropagator};
use crate::units::khz;

/// Linear intensity ramp `Ω_f t / τ_Q` on `[0, τ_Q]`.
pub fn quench_envelope(t: f64, tau_q: f64, omega_f: f64) -> Result<f64> {
    if !(tau_q > 0.0) {
        return Err(Error::invalid("tau_Q must be > 0"));
    }
    if !(0.0..=tau_q).contains(&t) {
        return Err(Error::invalid(format!("t = {t} outside the quench [0, {tau_q}]")));
    }
    Ok(omega_f * t / tau_q)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Model {
    OuDemo,
    QubitOnly,
    Rabi,
    Dirac,
}

/// Qubit part of the initial state; the mode starts in `|0>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialState {
    UpTls,
    DownTls,
    UpPerp,
    UpX,
}

impl InitialState {
    pub fn label(self) -> &'static str {
        match self {
            InitialState::UpTls => "up_tls",
            InitialState::DownTls => "down_tls",
            InitialState::UpPerp => "up_perp",
            InitialState::UpX => "up_x",
        }
    }

    fn qubit(self, ideal: Option<&IdealModel>) -> [num_complex::Complex64; 2] {
        match (self, ideal) {
            (InitialState::UpTls, Some(m)) => m.tls_axis().eigenvector(true),
            (InitialState::DownTls, Some(m)) => m.tls_axis().eigenvector(false),
            (InitialState::UpPerp, Some(m)) => m.perp_axis().eigenvector(true),
            (InitialState::DownTls, None) => Pauli::Z.eigenvector(false),
            (InitialState::UpTls, None) => Pauli::Z.eigenvector(true),
            (InitialState::UpPerp | InitialState::UpX, _) => Pauli::X.eigenvector(true),
        }
    }
}

impl std::str::FromStr for InitialState {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "up-tls" => Ok(InitialState::UpTls),
            "down-tls" => Ok(InitialState::DownTls),
            "up-perp" => Ok(InitialState::UpPerp),
            "up-x" => Ok(InitialState::UpX),
            other => Err(Error::Config(format!("unknown initial state {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Correlation time of the magnetic dephasing noise [s].
    pub tau_m: f64,
    /// Coherence time fixing the dephasing diffusion constant [s].
    pub t2: f64,
    /// Explicit dephasing diffusion constant [s⁻³], overriding `t2`.
    pub c_m: Option<f64>,
    /// Correlation time of the laser-intensity noise [s].
    pub tau_omega: f64,
    /// Relative intensity-noise amplitude; `c_Ω = 2p²/τ_Ω`.
    pub p: f64,
    pub correlated_sidebands: bool,
    pub noiseless: bool,
}

impl NoiseSpec {
    pub fn standard() -> Self {
        Self {
            tau_m: 50e-6,
            t2: 3e-3,
            c_m: None,
            tau_omega: 1e-3,
            p: 1e-3,
            correlated_sidebands: true,
            noiseless: false,
        }
    }

    pub fn dephasing(&self, tau: f64) -> Result<OuParams> {
        if self.noiseless {
            return Ok(OuParams::silent(tau));
        }
        match self.c_m {
            Some(c) => OuParams::new(tau, c),
            None => OuParams::from_t2(tau, self.t2),
        }
    }

    pub fn laser(&self) -> Result<OuParams> {
        if self.noiseless || self.p == 0.0 {
            return Ok(OuParams::silent(self.tau_omega));
        }
        OuParams::new(self.tau_omega, 2.0 * self.p * self.p / self.tau_omega)
    }

    fn fixed(&self) -> Result<FixedParams> {
        let mut fixed = FixedParams::standard()?;
        fixed.dephasing = self.dephasing(self.tau_m)?;
        fixed.laser_noise = self.laser()?;
        fixed.correlated_sidebands = self.correlated_sidebands;
        Ok(fixed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSpec {
    /// Largest allowed step [s]; `None` picks the default for the model.
    pub dt: Option<f64>,
    pub t_final: f64,
    pub n_outputs: usize,
}

/// Quench sweep: linear ramps to coupling `g` over `τ_Q = R T (2π/ω̃)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuenchSpec {
    pub ratios: Vec<f64>,
    pub coupling: f64,
    /// Mode frequency `ω̃` of layers 0, 1 and 2 [rad/s].
    pub omega_mode: [f64; 3],
    /// Rescaled quench times `T` in units of `2π/ω̃`.
    pub t_grid: Vec<f64>,
}

impl QuenchSpec {
    pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        if n == 1 {
            return vec![lo];
        }
        (0..n).map(|k| (lo.ln() + (hi.ln() - lo.ln()) * k as f64 / (n - 1) as f64).exp()).collect()
    }
}

/// Spectrum settings of the OU demonstration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumSpec {
    pub samples: usize,
    pub realizations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub name: String,
    pub model: Model,
    pub layers: Vec<usize>,
    pub targets: Option<Targets>,
    /// Drive Rabi frequencies of qubit-only runs [rad/s].
    pub drives: Vec<f64>,
    /// Dephasing correlation times swept by qubit-only runs [s]; empty uses `noise.tau_m`.
    pub taus: Vec<f64>,
    pub initial_states: Vec<InitialState>,
    pub noise: NoiseSpec,
    pub plan: PlanSpec,
    pub quench: Option<QuenchSpec>,
    pub spectrum: Option<SpectrumSpec>,
    pub n_trajectories: usize,
    pub master_seed: u64,
    pub n_fock: usize,
}

pub const PRESETS: [&str; 7] = ["ou-demo", "coherence", "ccd-demo", "rabi", "rabi-dark", "qpt", "dirac"];

/// Fully parameterized preset by name.
pub fn build_experiment(name: &str) -> Result<ExperimentSpec> {
    let base = |model, layers: Vec<usize>, plan| ExperimentSpec {
        name: name.to_string(),
        model,
        layers,
        targets: None,
        drives: Vec::new(),
        taus: Vec::new(),
        initial_states: vec![InitialState::UpX],
        noise: NoiseSpec::standard(),
        plan,
        quench: None,
        spectrum: None,
        n_trajectories: 200,
        master_seed: 1,
        n_fock: 1,
    };
    let spec = match name {
        "ou-demo" => {
            let mut s = base(Model::OuDemo, vec![], PlanSpec { dt: Some(0.5e-6), t_final: 500e-6, n_outputs: 200 });
            s.noise.c_m = Some(1.5e11);
            s.spectrum = Some(SpectrumSpec { samples: 1 << 18, realizations: 100 });
            s.n_trajectories = 10_000;
            s
        }
        "coherence" => {
            let mut s = base(Model::QubitOnly, vec![], PlanSpec { dt: Some(0.5e-6), t_final: 6e-3, n_outputs: 240 });
            s.drives = vec![0.0];
            s.taus = vec![50e-6, 5e-3];
            s.n_trajectories = 1000;
            s
        }
        "ccd-demo" => {
            let mut s = base(Model::QubitOnly, vec![], PlanSpec { dt: Some(0.5e-6), t_final: 3e-3, n_outputs: 120 });
            s.drives = vec![khz(0.5), khz(5.0), khz(50.0)];
            s.n_trajectories = 500;
            s
        }
        "rabi" | "rabi-dark" => {
            let mut s = base(Model::Rabi, vec![0, 1, 2], PlanSpec { dt: None, t_final: 8e-3, n_outputs: 160 });
            s.targets = Some(Targets::Rabi { ratio: 1.0, coupling: 0.25, omega_mode: khz(5.0) });
            s.initial_states = if name == "rabi" {
                vec![InitialState::UpTls, InitialState::UpPerp]
            } else {
                vec![InitialState::DownTls]
            };
            s.n_fock = 10;
            s
        }
        "qpt" => {
            let mut s = base(Model::Rabi, vec![0, 1, 2], PlanSpec { dt: None, t_final: 0.0, n_outputs: 1 });
            s.initial_states = vec![InitialState::DownTls];
            // A shared T grid keeps R T inside 0.02..8.6 for both ratios.
            s.quench = Some(QuenchSpec {
                ratios: vec![50.0, 100.0],
                coupling: 1.0,
                omega_mode: [khz(1.0), khz(1.0), khz(0.4)],
                t_grid: QuenchSpec::log_grid(0.02 / 50.0, 8.6 / 100.0, 6),
            });
            s.n_trajectories = 50;
            s.n_fock = 40;
            s
        }
        "dirac" => {
            let c_d = 2.0 * std::f64::consts::PI / 0.8e-3;
            let mut s = base(Model::Dirac, vec![0, 1, 2], PlanSpec { dt: None, t_final: 2.4e-3, n_outputs: 120 });
            s.targets = Some(Targets::Dirac { r: 2.0, c_d });
            s.initial_states = vec![InitialState::UpPerp];
            s.n_fock = 80;
            s
        }
        other => return Err(Error::UnknownExperiment(other.to_string())),
    };
    Ok(spec)
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_trajectories == 0 {
            return Err(Error::invalid("need at least one trajectory"));
        }
        if self.initial_states.is_empty() {
            return Err(Error::invalid("no initial state"));
        }
        for &l in &self.layers {
            Layer::from_index(l)?;
        }
        match self.model {
            Model::Rabi | Model::Dirac => {
                if self.layers.is_empty() {
                    return Err(Error::invalid("no layer selected"));
                }
                if self.n_fock < 2 {
                    return Err(Error::invalid("n_fock must be >= 2"));
                }
                match (self.model, self.targets, &self.quench) {
                    (Model::Rabi, _, Some(q)) => {
                        if q.ratios.is_empty() || q.t_grid.is_empty() || q.t_grid.iter().any(|&t| !(t > 0.0)) {
                            return Err(Error::invalid("quench needs ratios and a positive T grid"));
                        }
                    }
                    (Model::Rabi, Some(Targets::Rabi { .. }), None)
                    | (Model::Dirac, Some(Targets::Dirac { .. }), _) => {}
                    _ => return Err(Error::invalid("targets do not match the model")),
                }
                if self.quench.is_none() && self.initial_states.contains(&InitialState::UpX) {
                    return Err(Error::invalid("up-x is a qubit-only initial state"));
                }
            }
            Model::QubitOnly if self.drives.is_empty() => return Err(Error::invalid("no drive frequency")),
            _ => {}
        }
        if self.quench.is_none() && !(self.plan.t_final > 0.0) {
            return Err(Error::invalid("t_final must be > 0"));
        }
        if self.plan.n_outputs == 0 {
            return Err(Error::invalid("n_outputs must be >= 1"));
        }
        Ok(())
    }

    fn fixed(&self) -> Result<FixedParams> {
        self.noise.fixed()
    }

    fn plan(&self, default_dt: f64) -> Result<IntegrationPlan> {
        IntegrationPlan::new(self.plan.dt.unwrap_or(default_dt), self.plan.t_final, self.plan.n_outputs)
    }
}

/// One named column of an ensemble average.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub name: String,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleResult {
    /// Name of the abscissa column (`time_s` for time series).
    pub axis_label: String,
    pub axis: Vec<f64>,
    pub series: Vec<Series>,
    pub n_trajectories: usize,
    pub master_seed: u64,
    pub seeds: Vec<u64>,
}

impl EnsembleResult {
    pub fn get(&self, name: &str) -> Option<&Series> {
        self.series.iter().find(|s| s.name == name)
    }

    pub fn series(&self, name: &str) -> Result<&Series> {
        self.get(name).ok_or_else(|| Error::invalid(format!("no series named {name:?}")))
    }

    /// Appends a deterministic column (standard error zero).
    pub fn push_exact(&mut self, name: impl Into<String>, values: Vec<f64>) {
        let stderr = vec![0.0; values.len()];
        self.series.push(Series { name: name.into(), mean: values, stderr });
    }

    /// Index of the axis point closest to `x`.
    pub fn index_of(&self, x: f64) -> usize {
        self.axis
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - x).abs().total_cmp(&(b.1 - x).abs()))
            .map(|(i, _)| i)
            .unwrap_or(0)
    }
}

/// Seed of trajectory `k`: the first word of ChaCha8 stream `k` keyed by the master seed.
pub fn child_seed(master_seed: u64, k: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(k as u64);
    rng.next_u64()
}

/// Runs `trajectory(seed)` for `n` child seeds and averages each returned
/// series in trajectory order. `trajectory` returns `values[series][point]`.
pub fn ensemble<F>(
    names: Vec<String>,
    axis_label: &str,
    axis: Vec<f64>,
    n: usize,
    master_seed: u64,
    workers: Option<usize>,
    trajectory: F,
) -> Result<EnsembleResult>
where
    F: Fn(u64) -> Result<Vec<Vec<f64>>> + Sync,
{
    if n == 0 {
        return Err(Error::invalid("need at least one trajectory"));
    }
    let seeds: Vec<u64> = (0..n).map(|k| child_seed(master_seed, k)).collect();
    let run = || seeds.par_iter().map(|&s| trajectory(s)).collect::<Vec<_>>();
    let outcomes = match workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build()
            .map_err(|e| Error::invalid(format!("thread pool: {e}")))?
            .install(run),
        None => run(),
    };
    let mut runs = Vec::with_capacity(n);
    for (index, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(v) => runs.push(v),
            Err(e) => {
                return Err(Error::Trajectory { index, seed: seeds[index], source: Box::new(e) });
            }
        }
    }
    let points = axis.len();
    let mut series = Vec::with_capacity(names.len());
    for (j, name) in names.into_iter().enumerate() {
        let mut mean = vec![0.0; points];
        let mut stderr = vec![0.0; points];
        for run in &runs {
            let row = run
                .get(j)
                .filter(|r| r.len() == points)
                .ok_or(Error::DimensionMismatch { expected: points, got: run.get(j).map_or(0, |r| r.len()) })?;
            // Offsets from the first run keep identical runs exactly identical.
            mean.iter_mut().zip(row).zip(&runs[0][j]).for_each(|((m, v), v0)| *m += v - v0);
        }
        mean.iter_mut().zip(&runs[0][j]).for_each(|(m, v0)| *m = v0 + *m / n as f64);
        if n > 1 {
            for run in &runs {
                for ((s, m), v) in stderr.iter_mut().zip(&mean).zip(&run[j]) {
                    *s += (v - m) * (v - m);
                }
            }
            let norm = ((n - 1) * n) as f64;
            stderr.iter_mut().for_each(|s| *s = (*s / norm).sqrt());
        }
        series.push(Series { name, mean, stderr });
    }
    Ok(EnsembleResult { axis_label: axis_label.to_string(), axis, series, n_trajectories: n, master_seed, seeds })
}

/// Runs a preset with the default rayon pool.
pub fn run_ensemble(spec: &ExperimentSpec) -> Result<EnsembleResult> {
    run_ensemble_with(spec, None)
}

/// Runs a preset on `workers` threads; the output does not depend on `workers`.
pub fn run_ensemble_with(spec: &ExperimentSpec, workers: Option<usize>) -> Result<EnsembleResult> {
    spec.validate()?;
    match spec.model {
        Model::OuDemo => run_ou_demo(spec, workers),
        Model::QubitOnly => run_qubit(spec, workers),
        Model::Rabi if spec.quench.is_some() => run_quench(spec, workers),
        Model::Rabi | Model::Dirac => run_layers(spec, workers),
    }
}

fn run_ou_demo(spec: &ExperimentSpec, workers: Option<usize>) -> Result<EnsembleResult> {
    let params = spec.noise.dephasing(spec.noise.tau_m)?;
    let plan = spec.plan(params.tau / 100.0)?;
    let steps = plan.output_steps();
    let n_steps = plan.n_steps();
    let stepper = OuStepper::new(&params, plan.dt);
    let mut result = ensemble(
        vec!["delta_m".into(), "delta_m_sq".into()],
        "time_s",
        plan.output_times(),
        spec.n_trajectories,
        spec.master_seed,
        workers,
        |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut x = params.x0;
            let mut path = Vec::with_capacity(steps.len());
            let mut next = 0;
            for k in 0..=n_steps {
                if steps.get(next) == Some(&k) {
                    path.push(x);
                    next += 1;
                }
                if k < n_steps && !stepper.is_silent() {
                    let z: f64 = rand::Rng::sample(&mut rng, StandardNormal);
                    x = stepper.step(x, z);
                }
            }
            let sq = path.iter().map(|v| v * v).collect();
            Ok(vec![path, sq])
        },
    )?;
    let var: Result<Vec<f64>> = result.axis.iter().map(|&t| analytic_moments(t, &params).map(|m| m.1)).collect();
    result.push_exact("variance_analytic", var?);
    // One sample path for plotting.
    let first = NoiseRealization::generate(params, plan.dt, n_steps + 1, result.seeds[0])?;
    result.push_exact("delta_m_path", steps.iter().map(|&k| first.samples[k]).collect());
    Ok(result)
}

/// Averaged periodogram of the dephasing process of the OU demonstration.
pub fn ou_spectrum(spec: &ExperimentSpec, workers: Option<usize>) -> Result<EnsembleResult> {
    let params = spec.noise.dephasing(spec.noise.tau_m)?;
    let settings = spec.spectrum.clone().ok_or_else(|| Error::invalid("experiment has no spectrum settings"))?;
    let dt = spec.plan.dt.unwrap_or(params.tau / 100.0);
    // Stationary start so the record has no transient.
    let start = |seed: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z: f64 = rand::Rng::sample(&mut rng, StandardNormal);
        let p = params.with_x0(z * params.stationary_variance().sqrt());
        NoiseRealization::generate_with(p, dt, settings.samples, seed, &mut rng)
    };
    let probe = periodogram(&start(0)?)?;
    let result = ensemble(
        vec!["power".into()],
        "frequency_hz",
        probe.frequencies.clone(),
        settings.realizations,
        spec.master_seed,
        workers,
        |seed| Ok(vec![periodogram(&start(seed)?)?.power]),
    )?;
    let mut result = result;
    let analytic = result.axis.iter().map(|&f| crate::noise::spectral_density_analytic(f, &params)).collect();
    result.push_exact("power_analytic", analytic);
    Ok(result)
}

/// Averaged spectrum as a `SpectralEstimate`, for slope fits.
pub fn spectrum_estimate(result: &EnsembleResult) -> Result<SpectralEstimate> {
    let power = result.series("power")?.mean.clone();
    let record_length = if result.axis.len() > 1 { 1.0 / result.axis[1] } else { 0.0 };
    Ok(SpectralEstimate { frequencies: result.axis.clone(), power, record_length })
}

fn khz_label(omega: f64) -> String {
    let v = crate::units::to_khz(omega);
    let s = format!("{v}");
    s.replace('.', "p")
}

fn run_qubit(spec: &ExperimentSpec, workers: Option<usize>) -> Result<EnsembleResult> {
    let taus = if spec.taus.is_empty() { vec![spec.noise.tau_m] } else { spec.taus.clone() };
    let dephasing: Vec<OuParams> = taus.iter().map(|&t| spec.noise.dephasing(t)).collect::<Result<_>>()?;
    let min_tau = taus.iter().cloned().fold(f64::INFINITY, f64::min);
    let plan = spec.plan(min_tau / 100.0)?;
    let mut runs = Vec::new();
    for (ti, &tau) in taus.iter().enumerate() {
        for &omega in &spec.drives {
            for &init in &spec.initial_states {
                let mut name = if spec.drives.len() == 1 && omega == 0.0 {
                    format!("sx_tau{}us", tau * 1e6)
                } else {
                    format!("sx_omega{}khz", khz_label(omega))
                };
                if taus.len() > 1 && !name.starts_with("sx_tau") {
                    name.push_str(&format!("_tau{}us", tau * 1e6));
                }
                if spec.initial_states.len() > 1 {
                    name.push_str(&format!("_{}", init.label()));
                }
                runs.push((name, ti, omega, init));
            }
        }
    }
    let names = runs.iter().map(|r| r.0.clone()).collect();
    let mut result =
        ensemble(names, "time_s", plan.output_times(), spec.n_trajectories, spec.master_seed, workers, |seed| {
            runs.iter()
                .map(|&(_, ti, omega, init)| {
                    let psi0 = QuantumState::product(1, init.qubit(None), 0)?;
                    let mut noise = OuNoiseBank::new(&dephasing[ti], &[], plan.dt, ChaCha8Rng::seed_from_u64(seed));
                    let mut out = Vec::with_capacity(plan.output_steps().len());
                    evolve(&psi0, &mut QubitKernel { omega }, &plan, &mut noise, |_, _, psi| {
                        out.push(qubit_expectation(psi, Pauli::X));
                        Ok(())
                    })?;
                    Ok(out)
                })
                .collect()
        })?;
    if spec.drives == [0.0] {
        for (ti, &tau) in taus.iter().enumerate() {
            let values: Result<Vec<f64>> = result.axis.iter().map(|&t| analytic_coherence(t, &dephasing[ti])).collect();
            result.push_exact(format!("sx_analytic_tau{}us", tau * 1e6), values?);
        }
    }
    Ok(result)
}

/// Realization of one layer with its initial state and noiseless ideal reference.
struct LayerRun {
    realization: Realization,
    kernel: LayerKernel,
    psi0: QuantumState,
}

impl LayerRun {
    fn new(
        spec: &ExperimentSpec,
        targets: Targets,
        layer: Layer,
        init: InitialState,
        fixed: &FixedParams,
    ) -> Result<Self> {
        let mut realization = params_from_targets(targets, layer, fixed)?;
        if spec.noise.noiseless {
            realization.config = realization.config.noiseless();
        }
        let kernel = LayerKernel::new(&realization.config, spec.n_fock)?;
        let psi0 = QuantumState::product(spec.n_fock, init.qubit(Some(&realization.ideal)), 0)?;
        Ok(Self { realization, kernel, psi0 })
    }

    /// Integrates one trajectory and calls `observe(k, ψ in the ideal frame)` at each output.
    fn run<F>(&self, plan: &IntegrationPlan, seed: u64, mut observe: F) -> Result<()>
    where
        F: FnMut(usize, &QuantumState) -> Result<()>,
    {
        let mut kernel = self.kernel.clone();
        let mut noise = OuNoiseBank::for_layer(&self.realization.config, plan.dt, ChaCha8Rng::seed_from_u64(seed));
        let mut index = 0;
        evolve(&self.psi0, &mut kernel, plan, &mut noise, |_, t, psi| {
            let ideal_frame = self.realization.frame.apply(-t, psi);
            observe(index, &ideal_frame)?;
            index += 1;
            Ok(())
        })?;
        Ok(())
    }
}

fn layers_of(spec: &ExperimentSpec) -> Result<Vec<Layer>> {
    spec.layers.iter().map(|&l| Layer::from_index(l)).collect()
}

fn run_layers(spec: &ExperimentSpec, workers: Option<usize>) -> Result<EnsembleResult> {
    let targets = spec.targets.ok_or_else(|| Error::invalid("experiment has no targets"))?;
    let fixed = spec.fixed()?;
    let layers = layers_of(spec)?;
    let nu = fixed.nu;
    let plan = spec.plan(IntegrationPlan::default_dt(nu))?;
    plan.validate(Some(nu))?;
    let times = plan.output_times();
    let ops = build_operator_set(spec.n_fock)?;
    let multi = spec.initial_states.len() > 1;

    struct Entry {
        run: LayerRun,
        ideal: Vec<QuantumState>,
        tls: Pauli,
    }
    let mut entries = Vec::new();
    let mut names = Vec::new();
    let mut ideal_columns = Vec::new();
    for &init in &spec.initial_states {
        let prefix = if multi { format!("_{}", init.label()) } else { String::new() };
        for &layer in &layers {
            let run = LayerRun::new(spec, targets, layer, init, &fixed)?;
            let model = run.realization.ideal;
            let propagator = SpectralPropagator::new(&model.hamiltonian(&ops), spec.n_fock)?;
            let ideal: Vec<QuantumState> = times.iter().map(|&t| propagator.evolve(&run.psi0, t)).collect();
            let tls = model.tls_axis();
            let l = layer.index();
            names.push(format!("F{prefix}_L{l}"));
            names.push(format!("pop{prefix}_L{l}"));
            names.push(format!("x{prefix}_L{l}"));
            if layer == layers[0] {
                let pop = ideal.iter().map(|s| observables::excited_population(s, tls)).collect::<Vec<_>>();
                let x = ideal.iter().map(position_expectation).collect::<Vec<_>>();
                ideal_columns.push((format!("pop{prefix}_ideal"), pop));
                ideal_columns.push((format!("x{prefix}_ideal"), x));
            }
            entries.push(Entry { run, ideal, tls });
        }
    }

    let mut result =
        ensemble(names, "time_s", times.clone(), spec.n_trajectories, spec.master_seed, workers, |seed| {
            let mut out = Vec::with_capacity(3 * entries.len());
            for e in &entries {
                let mut f = Vec::with_capacity(times.len());
                let mut pop = Vec::with_capacity(times.len());
                let mut x = Vec::with_capacity(times.len());
                e.run.run(&plan, seed, |k, psi| {
                    f.push(fidelity(&e.ideal[k], psi)?);
                    pop.push(observables::excited_population(psi, e.tls));
                    x.push(position_expectation(psi));
                    Ok(())
                })?;
                out.extend([f, pop, x]);
            }
            Ok(out)
        })?;
    for (name, values) in ideal_columns {
        result.push_exact(name, values);
    }
    Ok(result)
}

/// `<σ_TLS>` at the end of a noiseless ideal quench of `params` over `tau_q`,
/// starting from the `λ = 0` ground state.
pub fn ideal_quench_sigma(params: &RabiParams, n_fock: usize, tau_q: f64) -> Result<f64> {
    use num_complex::Complex64;
    let ops = build_operator_set(n_fock)?;
    let h0 = ideal_rabi_hamiltonian(&RabiParams { lambda: 0.0, ..*params }, &ops);
    let h1 = ideal_rabi_hamiltonian(params, &ops) - &h0;
    // Both pieces are very sparse; keep only their nonzeros.
    let sparse = |m: &nalgebra::DMatrix<Complex64>| -> Vec<(usize, usize, Complex64)> {
        let mut out = Vec::new();
        for j in 0..m.ncols() {
            for i in 0..m.nrows() {
                if m[(i, j)] != Complex64::new(0.0, 0.0) {
                    out.push((i, j, m[(i, j)]));
                }
            }
        }
        out
    };
    let (a, b) = (sparse(&h0), sparse(&h1));
    let norm = 0.5 * params.omega_tls.abs()
        + params.omega_mode * n_fock as f64
        + 2.0 * params.lambda.abs() * (n_fock as f64).sqrt();
    let n_steps = ((tau_q * norm / 0.2).ceil() as usize).max(16);
    let dt = tau_q / n_steps as f64;
    let mut psi = QuantumState::product(n_fock, params.tls_axis.eigenvector(false), 0)?;
    let dim = psi.dim();
    let mut term = vec![Complex64::new(0.0, 0.0); dim];
    let mut next = term.clone();
    for k in 0..n_steps {
        let s = (k as f64 + 0.5) / n_steps as f64;
        term.copy_from_slice(psi.amplitudes.as_slice());
        // exp(-i H dt) by Taylor series; ‖H‖dt <= 0.2 so 16 terms reach round-off.
        for order in 1..=16 {
            next.iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
            for &(i, j, v) in &a {
                next[i] += v * term[j];
            }
            for &(i, j, v) in &b {
                next[i] += v * s * term[j];
            }
            let factor = Complex64::new(0.0, -dt / order as f64);
            let mut size = 0.0;
            for (t, n) in term.iter_mut().zip(&next) {
                *t = n * factor;
                size += t.norm_sqr();
            }
            psi.amplitudes.iter_mut().zip(&term).for_each(|(p, t)| *p += t);
            if size < 1e-34 {
                break;
            }
        }
    }
    crate::propagate::check_state(&psi, tau_q, n_steps)?;
    Ok(qubit_expectation(&psi, params.tls_axis))
}

fn run_quench(spec: &ExperimentSpec, workers: Option<usize>) -> Result<EnsembleResult> {
    let q = spec.quench.as_ref().ok_or_else(|| Error::invalid("no quench settings"))?;
    let layers = layers_of(spec)?;
    let base = spec.fixed()?;
    let init = spec.initial_states[0];
    // The axis is T in seconds for ω̃ = ω̃_0.
    let unit = 2.0 * std::f64::consts::PI / q.omega_mode[0];
    let axis: Vec<f64> = q.t_grid.iter().map(|t| t * unit).collect();

    struct Point {
        run: LayerRun,
        plan: IntegrationPlan,
        tls: Pauli,
    }
    struct Curve {
        ratio: f64,
        sigma_gs: f64,
        points: Vec<Point>,
    }
    let mut curves = Vec::new();
    let mut names = Vec::new();
    let mut ground = Vec::new();
    for &ratio in &q.ratios {
        let params = RabiParams::from_targets(ratio, q.coupling, 1.0, Pauli::Z, Pauli::X);
        let (_, gs) = observables::rabi_ground_state_adaptive(&params, spec.n_fock, 8 * spec.n_fock)?;
        let sigma_gs = qubit_expectation(&gs, Pauli::Z);
        ground.push((ratio, params, sigma_gs));
    }
    for &layer in &layers {
        for &(ratio, _, sigma_gs) in &ground {
            let omega_mode = q.omega_mode[layer.index()];
            let targets = Targets::Rabi { ratio, coupling: q.coupling, omega_mode };
            let mut points = Vec::new();
            for &t in &q.t_grid {
                let tau_q = ratio * t * 2.0 * std::f64::consts::PI / omega_mode;
                let mut fixed = base.clone();
                fixed.quench = Some(tau_q);
                let run = LayerRun::new(spec, targets, layer, init, &fixed)?;
                let plan =
                    IntegrationPlan::new(spec.plan.dt.unwrap_or(IntegrationPlan::default_dt(fixed.nu)), tau_q, 1)?;
                plan.validate(Some(fixed.nu))?;
                let tls = run.realization.ideal.tls_axis();
                points.push(Point { run, plan, tls });
            }
            names.push(format!("S_L{}_R{}", layer.index(), ratio));
            curves.push(Curve { ratio, sigma_gs, points });
        }
    }

    let mut result = ensemble(names, "time_s", axis, spec.n_trajectories, spec.master_seed, workers, |seed| {
        curves
            .iter()
            .map(|c| {
                c.points
                    .iter()
                    .map(|p| {
                        let mut sigma = 0.0;
                        p.run.run(&p.plan, seed, |k, psi| {
                            if k == 1 {
                                sigma = qubit_expectation(psi, p.tls);
                            }
                            Ok(())
                        })?;
                        // Signed R^μ(σ - σ_GS); the modulus is taken after averaging.
                        Ok(scaling_point(c.ratio, p.plan.t_final, sigma, c.sigma_gs)?.s * (sigma - c.sigma_gs).signum())
                    })
                    .collect()
            })
            .collect()
    })?;
    for s in &mut result.series {
        s.mean.iter_mut().for_each(|m| *m = m.abs());
    }
    for &(ratio, params, sigma_gs) in &ground {
        let values: Result<Vec<f64>> = q
            .t_grid
            .iter()
            .map(|&t| {
                let tau_q = ratio * t * 2.0 * std::f64::consts::PI;
                let sigma = ideal_quench_sigma(&params, spec.n_fock, tau_q)?;
                Ok(scaling_point(ratio, tau_q, sigma, sigma_gs)?.s)
            })
            .collect();
        result.push_exact(format!("S_ideal_R{ratio}"), values?);
    }
    Ok(result)
}

/// Noiseless copy of a preset.
pub fn noiseless_twin(spec: &ExperimentSpec) -> ExperimentSpec {
    let mut twin = spec.clone();
    twin.noise.noiseless = true;
    twin.n_trajectories = 1;
    twin
}

/// Ground-state `<σ_TLS>` at coupling `g` for each ratio, with the N-vs-2N difference.
pub fn ground_state_constants(ratios: &[f64], coupling: f64, n_fock: usize) -> Result<Vec<(f64, f64, f64)>> {
    ratios
        .iter()
        .map(|&r| {
            let p = RabiParams::from_targets(r, coupling, 1.0, Pauli::Z, Pauli::X);
            let (_, a) = observables::rabi_ground_state_adaptive(&p, n_fock, 8 * n_fock)?;
            let (_, b) = observables::rabi_ground_state(&p, &build_operator_set(2 * a.n_fock)?)?;
            let sa = qubit_expectation(&a, Pauli::Z);
            let sb = qubit_expectation(&b, Pauli::Z);
            Ok((r, sa, (sa - sb).abs()))
        })
        .collect()
}
