//! Command-line front end: configuration, preset dispatch and result files.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use toml::{Table, Value};

use crate::error::{Error, Result};
use crate::experiments::{self, build_experiment, EnsembleResult, ExperimentSpec, InitialState, QuenchSpec};
use crate::hamiltonian::Targets;
use crate::units::parse_angular;

#[derive(Debug, Parser)]
#[command(
    name = "rabi-ccd",
    version,
    about = "Stochastic trapped-ion simulations of concatenated dynamical decoupling"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// OU dephasing paths, moments and averaged spectrum.
    OuDemo(RunArgs),
    /// Qubit coherence under fast and slow dephasing noise.
    Coherence(RunArgs),
    /// Dressed-qubit coherence for three drive strengths.
    CcdDemo(RunArgs),
    /// Quantum Rabi model from |0>|up_TLS> and |0>|up_perp>.
    Rabi(RunArgs),
    /// Quantum Rabi model from the dark state |0>|down_TLS>.
    RabiDark(RunArgs),
    /// Quench scaling function S(T) across layers and frequency ratios.
    Qpt(RunArgs),
    /// Dirac equation and Zitterbewegung.
    Dirac(RunArgs),
    /// Runs the built-in invariant checks.
    Validate,
}

#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct RunArgs {
    /// TOML configuration file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output CSV path (default `<preset>.csv`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub trajectories: Option<usize>,
    /// Worker threads; the output does not depend on this.
    #[arg(long, env = "RABI_CCD_WORKERS")]
    pub workers: Option<usize>,
    /// Largest integration step [s].
    #[arg(long)]
    pub dt: Option<f64>,
    /// Fock-space truncation N.
    #[arg(long)]
    pub fock: Option<usize>,
    /// Switch every noise source off.
    #[arg(long)]
    pub noiseless: bool,
    /// Protection layer(s) to run (0, 1 or 2); repeat or comma-separate.
    #[arg(long, value_delimiter = ',')]
    pub layer: Vec<usize>,
    /// Dephasing correlation time [s].
    #[arg(long)]
    pub tau: Option<f64>,
}

impl Command {
    fn preset(&self) -> Option<(&'static str, &RunArgs)> {
        Some(match self {
            Command::OuDemo(a) => ("ou-demo", a),
            Command::Coherence(a) => ("coherence", a),
            Command::CcdDemo(a) => ("ccd-demo", a),
            Command::Rabi(a) => ("rabi", a),
            Command::RabiDark(a) => ("rabi-dark", a),
            Command::Qpt(a) => ("qpt", a),
            Command::Dirac(a) => ("dirac", a),
            Command::Validate => return None,
        })
    }
}

/// Resolved run: the full experiment plus output options, echoed into the metadata.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub subcommand: String,
    pub config_file: Option<PathBuf>,
    pub out: PathBuf,
    pub workers: Option<usize>,
    pub spec: ExperimentSpec,
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn as_f64(key: &str, v: &Value) -> Result<f64> {
    match v {
        Value::Float(f) => Ok(*f),
        Value::Integer(i) => Ok(*i as f64),
        _ => Err(config_err(format!("{key}: expected a number"))),
    }
}

/// Frequencies are rad/s numbers or `"2pi*<kHz>"` strings.
fn as_angular(key: &str, v: &Value) -> Result<f64> {
    match v {
        Value::String(s) => parse_angular(s),
        _ => as_f64(key, v),
    }
}

fn as_usize(key: &str, v: &Value) -> Result<usize> {
    match v {
        Value::Integer(i) if *i >= 0 => Ok(*i as usize),
        _ => Err(config_err(format!("{key}: expected a non-negative integer"))),
    }
}

fn as_bool(key: &str, v: &Value) -> Result<bool> {
    v.as_bool().ok_or_else(|| config_err(format!("{key}: expected true or false")))
}

fn as_list<T>(key: &str, v: &Value, item: impl Fn(&str, &Value) -> Result<T>) -> Result<Vec<T>> {
    match v {
        Value::Array(items) => items.iter().map(|x| item(key, x)).collect(),
        other => Ok(vec![item(key, other)?]),
    }
}

fn as_table<'a>(key: &str, v: &'a Value) -> Result<&'a Table> {
    v.as_table().ok_or_else(|| config_err(format!("[{key}] must be a table")))
}

/// Applies a parsed TOML configuration on top of `spec`.
pub fn apply_config(spec: &mut ExperimentSpec, table: &Table) -> Result<()> {
    for (key, v) in table {
        match key.as_str() {
            "experiment" => {
                let name = v.as_str().ok_or_else(|| config_err("experiment: expected a string"))?;
                if name != spec.name {
                    return Err(config_err(format!("config is for {name:?}, not {:?}", spec.name)));
                }
            }
            "seed" => spec.master_seed = as_usize(key, v)? as u64,
            "trajectories" => spec.n_trajectories = as_usize(key, v)?,
            "fock" => spec.n_fock = as_usize(key, v)?,
            "layers" => spec.layers = as_list(key, v, as_usize)?,
            "initial_states" => {
                spec.initial_states = as_list(key, v, |k, x| {
                    x.as_str().ok_or_else(|| config_err(format!("{k}: expected strings")))?.parse::<InitialState>()
                })?
            }
            "drives" => spec.drives = as_list(key, v, as_angular)?,
            "taus" => spec.taus = as_list(key, v, as_f64)?,
            "plan" => {
                for (k, x) in as_table(key, v)? {
                    match k.as_str() {
                        "dt" => spec.plan.dt = Some(as_f64(k, x)?),
                        "t_final" => spec.plan.t_final = as_f64(k, x)?,
                        "outputs" => spec.plan.n_outputs = as_usize(k, x)?,
                        _ => return Err(config_err(format!("unknown key plan.{k}"))),
                    }
                }
            }
            "noise" => {
                let n = &mut spec.noise;
                for (k, x) in as_table(key, v)? {
                    match k.as_str() {
                        "tau_m" => n.tau_m = as_f64(k, x)?,
                        "t2" => n.t2 = as_f64(k, x)?,
                        "c_m" => n.c_m = Some(as_f64(k, x)?),
                        "tau_omega" => n.tau_omega = as_f64(k, x)?,
                        "p" => n.p = as_f64(k, x)?,
                        "correlated_sidebands" => n.correlated_sidebands = as_bool(k, x)?,
                        "noiseless" => n.noiseless = as_bool(k, x)?,
                        _ => return Err(config_err(format!("unknown key noise.{k}"))),
                    }
                }
            }
            "targets" => {
                let t = as_table(key, v)?;
                let get = |k: &str, angular: bool| -> Result<Option<f64>> {
                    t.get(k).map(|x| if angular { as_angular(k, x) } else { as_f64(k, x) }).transpose()
                };
                if let Some(k) =
                    t.keys().find(|k| !["ratio", "coupling", "omega_mode", "r", "c_d"].contains(&k.as_str()))
                {
                    return Err(config_err(format!("unknown key targets.{k}")));
                }
                spec.targets = Some(match spec.targets {
                    Some(Targets::Rabi { ratio, coupling, omega_mode }) => Targets::Rabi {
                        ratio: get("ratio", false)?.unwrap_or(ratio),
                        coupling: get("coupling", false)?.unwrap_or(coupling),
                        omega_mode: get("omega_mode", true)?.unwrap_or(omega_mode),
                    },
                    Some(Targets::Dirac { r, c_d }) => {
                        Targets::Dirac { r: get("r", false)?.unwrap_or(r), c_d: get("c_d", true)?.unwrap_or(c_d) }
                    }
                    None => return Err(config_err(format!("{} takes no [targets]", spec.name))),
                });
            }
            "quench" => {
                let q: &mut QuenchSpec =
                    spec.quench.as_mut().ok_or_else(|| config_err(format!("{} takes no [quench]", spec.name)))?;
                for (k, x) in as_table(key, v)? {
                    match k.as_str() {
                        "ratios" => q.ratios = as_list(k, x, as_f64)?,
                        "coupling" => q.coupling = as_f64(k, x)?,
                        "t_grid" => q.t_grid = as_list(k, x, as_f64)?,
                        "omega_mode" => {
                            let w = as_list(k, x, as_angular)?;
                            q.omega_mode =
                                w.try_into().map_err(|_| config_err("quench.omega_mode needs three values"))?;
                        }
                        _ => return Err(config_err(format!("unknown key quench.{k}"))),
                    }
                }
            }
            _ => return Err(config_err(format!("unknown key {key}"))),
        }
    }
    Ok(())
}

/// Builds the preset, then applies the config file, then the flags.
pub fn resolve(preset: &str, args: &RunArgs) -> Result<RunConfig> {
    let mut spec = build_experiment(preset)?;
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        let table: Table = text.parse().map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        apply_config(&mut spec, &table)?;
    }
    if let Some(s) = args.seed {
        spec.master_seed = s;
    }
    if let Some(n) = args.trajectories {
        spec.n_trajectories = n;
    }
    if let Some(dt) = args.dt {
        spec.plan.dt = Some(dt);
    }
    if let Some(n) = args.fock {
        spec.n_fock = n;
    }
    if args.noiseless {
        spec.noise.noiseless = true;
    }
    if !args.layer.is_empty() {
        spec.layers = args.layer.clone();
    }
    if let Some(tau) = args.tau {
        if spec.taus.is_empty() {
            spec.noise.tau_m = tau;
        } else {
            spec.taus = vec![tau];
        }
    }
    spec.validate()?;
    Ok(RunConfig {
        subcommand: preset.to_string(),
        config_file: args.config.clone(),
        out: args.out.clone().unwrap_or_else(|| PathBuf::from(format!("{preset}.csv"))),
        workers: args.workers,
        spec,
    })
}

/// 17 significant digits, enough to recover every `f64` exactly.
fn number(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes `axis, mean_<name>, stderr_<name>, ...` with LF line endings.
pub fn write_csv(result: &EnsembleResult, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str(&result.axis_label);
    for s in &result.series {
        out.push_str(&format!(",mean_{0},stderr_{0}", s.name));
    }
    out.push('\n');
    for (i, x) in result.axis.iter().enumerate() {
        out.push_str(&number(*x));
        for s in &result.series {
            out.push(',');
            out.push_str(&number(s.mean[i]));
            out.push(',');
            out.push_str(&number(s.stderr[i]));
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Parses a file written by [`write_csv`] back into header and rows.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::invalid("empty CSV"))?.split(',').map(String::from).collect();
    let rows = lines
        .map(|l| {
            l.split(',').map(|v| v.parse::<f64>().map_err(|_| Error::invalid(format!("bad number {v:?}")))).collect()
        })
        .collect::<Result<_>>()?;
    Ok((header, rows))
}

/// Sidecar `<csv>.meta.json` holding the resolved configuration and seeds.
pub fn meta_path(csv: &Path) -> PathBuf {
    let mut s = csv.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

pub fn write_meta(config: &RunConfig, result: &EnsembleResult, csv: &Path) -> Result<()> {
    let meta = serde_json::json!({
        "code_version": env!("CARGO_PKG_VERSION"),
        "csv": csv.file_name().map(|n| n.to_string_lossy().into_owned()),
        "columns": std::iter::once(result.axis_label.clone())
            .chain(result.series.iter().flat_map(|s| [format!("mean_{}", s.name), format!("stderr_{}", s.name)]))
            .collect::<Vec<_>>(),
        "n_trajectories": result.n_trajectories,
        "master_seed": result.master_seed,
        "trajectory_seeds": result.seeds,
        "n_fock": config.spec.n_fock,
        "dt_max": config.spec.plan.dt,
        "config": config,
    });
    let mut text = serde_json::to_string_pretty(&meta).map_err(|e| Error::invalid(e.to_string()))?;
    text.push('\n');
    fs::write(meta_path(csv), text)?;
    Ok(())
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let ext = path.extension().map(|e| format!(".{}", e.to_string_lossy())).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}{ext}"))
}

/// Runs a resolved configuration and writes its files; returns the paths written.
pub fn execute(config: &RunConfig) -> Result<Vec<PathBuf>> {
    let result = experiments::run_ensemble_with(&config.spec, config.workers)?;
    write_csv(&result, &config.out)?;
    write_meta(config, &result, &config.out)?;
    let mut written = vec![config.out.clone(), meta_path(&config.out)];
    if config.spec.spectrum.is_some() {
        let spectrum = experiments::ou_spectrum(&config.spec, config.workers)?;
        let path = with_suffix(&config.out, "spectrum");
        write_csv(&spectrum, &path)?;
        write_meta(config, &spectrum, &path)?;
        written.push(path);
    }
    Ok(written)
}

fn error_record(e: &Error) -> serde_json::Value {
    let kind = match e {
        Error::InvalidInput(_) => "invalid_input",
        Error::NonFinite(_) => "non_finite",
        Error::DiffusionOverflow { .. } => "diffusion_overflow",
        Error::DimensionMismatch { .. } => "dimension_mismatch",
        Error::Truncation { .. } => "truncation",
        Error::NormDrift { .. } => "norm_drift",
        Error::NotHermitian { .. } => "not_hermitian",
        Error::MissingNoiseChannel(_) => "missing_noise_channel",
        Error::Eigen(_) => "eigensolver",
        Error::ProbeNonlinear { .. } => "probe_nonlinear",
        Error::Trajectory { .. } => "trajectory",
        Error::UnknownExperiment(_) => "unknown_experiment",
        Error::Config(_) => "config",
        Error::Io(_) => "io",
    };
    let mut record = serde_json::json!({ "error": kind, "message": e.to_string() });
    if let Error::Trajectory { index, seed, .. } = e {
        record["trajectory"] = (*index).into();
        record["seed"] = (*seed).into();
    }
    record
}

/// Parses `argv`, runs the command and returns the process exit status.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    let outcome = match cli.command.preset() {
        Some((preset, args)) => resolve(preset, args).and_then(|c| execute(&c)).map(|paths| {
            for p in paths {
                println!("wrote {}", p.display());
            }
            true
        }),
        None => Ok(crate::validate::run_all(&mut std::io::stdout())),
    };
    match outcome {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            let _ = writeln!(std::io::stderr(), "{}", error_record(&e));
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_overrides_and_frequencies() {
        let mut spec = build_experiment("rabi").unwrap();
        let table: Table = r#"
            trajectories = 7
            layers = [1]
            initial_states = ["down-tls"]
            [targets]
            omega_mode = "2pi*2"
            [noise]
            p = 0.0
            [plan]
            t_final = 1e-3
            outputs = 10
        "#
        .parse()
        .unwrap();
        apply_config(&mut spec, &table).unwrap();
        assert_eq!(spec.n_trajectories, 7);
        assert_eq!(spec.layers, vec![1]);
        assert_eq!(spec.initial_states, vec![InitialState::DownTls]);
        assert!(
            matches!(spec.targets, Some(Targets::Rabi { omega_mode, ratio, .. }) if omega_mode == crate::units::khz(2.0) && ratio == 1.0)
        );
        assert_eq!(spec.noise.p, 0.0);
        assert_eq!(spec.plan.n_outputs, 10);
        let bad: Table = "nonsense = 1".parse().unwrap();
        assert!(matches!(apply_config(&mut spec, &bad), Err(Error::Config(_))));
        let wrong: Table = "[quench]\nratios = [1]".parse().unwrap();
        assert!(apply_config(&mut spec, &wrong).is_err());
    }

    #[test]
    fn flags_override_file() {
        let dir = std::env::temp_dir().join(format!("rabi-ccd-cfg-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let cfg = dir.join("c.toml");
        fs::write(&cfg, "seed = 3\ntrajectories = 9\n").unwrap();
        let args = RunArgs { config: Some(cfg), trajectories: Some(2), ..Default::default() };
        let c = resolve("ccd-demo", &args).unwrap();
        assert_eq!(c.spec.master_seed, 3);
        assert_eq!(c.spec.n_trajectories, 2);
        let c = resolve("coherence", &RunArgs { tau: Some(5e-3), ..Default::default() }).unwrap();
        assert_eq!(c.spec.taus, vec![5e-3]);
        fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let mut r = EnsembleResult {
            axis_label: "time_s".into(),
            axis: vec![0.0, 1.0 / 3.0, 2e-3],
            series: vec![],
            n_trajectories: 1,
            master_seed: 0,
            seeds: vec![0],
        };
        let dir = std::env::temp_dir().join(format!("rabi-ccd-csv-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("r.csv");
        write_csv(&r, &path).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap().lines().next(), Some("time_s"));
        r.push_exact("v", vec![std::f64::consts::PI, -1e-300, 0.1 + 0.2]);
        write_csv(&r, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(!text.contains('\r'));
        let (header, rows) = read_csv(&path).unwrap();
        assert_eq!(header, vec!["time_s", "mean_v", "stderr_v"]);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row[0], r.axis[i]);
            assert_eq!(row[1], r.series[0].mean[i]);
            assert_eq!(row[2], 0.0);
        }
        fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn unknown_flag_is_rejected() {
        assert_ne!(run_command(["rabi-ccd", "rabi", "--bogus"]), 0);
    }
}
