//! Command-line surface: one subcommand per pipeline stage, each writing its
//! outputs plus a `manifest.json` into the `--out` directory.
//!
//! The manifest records the fully resolved parameters of the run (tool
//! version, command, every value after defaults were applied), so any run
//! can be replayed byte-for-byte with `--config manifest.json`. When
//! `--config` is given it *replaces* the command's flags — mixing them is a
//! usage error — except `--out` and `--threads`, which may always be
//! overridden.
//!
//! Exit codes: 0 success, 1 runtime failure (I/O, numerical), 2 usage or
//! configuration error.

use clap::parser::ValueSource;
use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::datagen::{
    read_file, sample_dataset, sample_dataset_with, write_file, Dataset, Domains, Interval,
    NoiseMode, SampleOptions,
};
use crate::error::{Error, Result};
use crate::features::{
    dedupe_collinear, eliminate_cos_powers, FeatureSet, DEFAULT_COLLINEARITY_TOL,
};
use crate::integrate::Scheme;
use crate::recover::{
    epsilon_sweep, parameter_dependence, ParamDepConfig, Response, DEFAULT_EPS_GRID,
};
use crate::refine::{
    refine_model, refine_multi_seed, write_cost_history_csv, OrbitData, RefineConfig,
};
use crate::regress::{fit_with_options, residuals, FJetModel, FitOptions};
use crate::simulate::{
    error_curve, exact_trajectory, fine_trajectory, generate, stability_lambda,
    write_residual_plot_csv, Stepper,
};
use crate::systems::{Forcing, State, SystemKind, SystemSpec};
use crate::util::parse_csv_floats;

/// Parses arguments from the process environment, runs the selected command,
/// and returns the process exit code.
pub fn main_entry() -> i32 {
    let matches = match Cli::command().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let cli = Cli::from_arg_matches(&matches).expect("matches conform to the derive");
    init_threads(cli.threads);
    let (_, sub) = matches.subcommand().expect("subcommand is required");
    match dispatch(&cli, sub) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage() {
                2
            } else {
                1
            }
        }
    }
}

fn init_threads(flag: Option<usize>) {
    let n = flag.or_else(|| {
        std::env::var("FJET_THREADS")
            .ok()
            .and_then(|s| s.parse().ok())
    });
    if let Some(n) = n.filter(|&n| n > 0) {
        // Ignore failure: the global pool can only be set once (tests).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "fjet",
    version,
    about = "Reconstruct differential equations from trajectory update data",
    long_about = "Samples phase-space update records from reference systems, fits \
                  linear-in-features update maps, recovers the underlying equations by \
                  extrapolating coefficients to step size zero, and benchmarks the fitted \
                  maps against classical integrators."
)]
struct Cli {
    /// Directory all outputs are written into (created if missing).
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Cap on worker threads (FJET_THREADS is the fallback; default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Sample a synthetic dataset of (state, update) records from a system.
    Synth(SynthArgs),
    /// Fit an update-map model to a dataset by ordinary least squares.
    Fit(FitArgs),
    /// Fit across a grid of step sizes and extrapolate coefficients to zero.
    Sweep(SweepArgs),
    /// Recover how one coefficient depends on a swept system parameter.
    Paramdep(ParamdepArgs),
    /// Iterate a fitted model's update map into a trajectory.
    Generate(GenerateArgs),
    /// Measure the long-run energy-drift exponent of a stepper.
    Stability(StabilityArgs),
    /// Evaluate a model's prediction residuals over a dataset.
    Residuals(ResidualsArgs),
    /// Refine model coefficients against an observed orbit.
    Refine(RefineArgs),
}

fn dispatch(cli: &Cli, sub: &ArgMatches) -> Result<()> {
    let out = &cli.out;
    match &cli.command {
        Cmd::Synth(a) => run_synth(&resolve(a, &a.config, sub, "synth", SynthArgs::resolve)?, out),
        Cmd::Fit(a) => run_fit(&resolve(a, &a.config, sub, "fit", FitArgs::resolve)?, out),
        Cmd::Sweep(a) => run_sweep(&resolve(a, &a.config, sub, "sweep", SweepArgs::resolve)?, out),
        Cmd::Paramdep(a) => {
            run_paramdep(&resolve(a, &a.config, sub, "paramdep", ParamdepArgs::resolve)?, out)
        }
        Cmd::Generate(a) => {
            run_generate(&resolve(a, &a.config, sub, "generate", GenerateArgs::resolve)?, out)
        }
        Cmd::Stability(a) => {
            run_stability(&resolve(a, &a.config, sub, "stability", StabilityArgs::resolve)?, out)
        }
        Cmd::Residuals(a) => {
            run_residuals(&resolve(a, &a.config, sub, "residuals", ResidualsArgs::resolve)?, out)
        }
        Cmd::Refine(a) => {
            run_refine(&resolve(a, &a.config, sub, "refine", RefineArgs::resolve)?, out)
        }
    }
}

/// Produces the command's resolved parameters either from its flags or from
/// a `--config` file (which must not be mixed with other flags).
fn resolve<A, R: DeserializeOwned>(
    args: &A,
    config: &Option<PathBuf>,
    sub: &ArgMatches,
    command: &str,
    from_flags: impl Fn(&A) -> Result<R>,
) -> Result<R> {
    match config {
        Some(path) => {
            reject_flag_mixing(sub, command)?;
            load_config(path, command)
        }
        None => from_flags(args),
    }
}

fn reject_flag_mixing(sub: &ArgMatches, command: &str) -> Result<()> {
    const ALLOWED: [&str; 3] = ["config", "out", "threads"];
    // Matching an argument also records every group it belongs to (with the
    // same value source), and the derive adds an implicit group per argument
    // struct; skip those, since any offending flag also appears as itself.
    let spec = Cli::command();
    let groups: Vec<String> = spec
        .find_subcommand(command)
        .map(|c| c.get_groups().map(|g| g.get_id().to_string()).collect())
        .unwrap_or_default();
    for id in sub.ids() {
        let name = id.as_str();
        if ALLOWED.contains(&name) || groups.iter().any(|g| g == name) {
            continue;
        }
        if sub.value_source(name) == Some(ValueSource::CommandLine) {
            return Err(Error::config(format!(
                "--config replaces command flags; remove --{} (only --out and --threads may be \
                 combined with --config)",
                name.replace('_', "-")
            )));
        }
    }
    Ok(())
}

/// Reads resolved parameters from a config file: either a bare parameter
/// object or a full manifest (whose `command` must match).
fn load_config<R: DeserializeOwned>(path: &Path, command: &str) -> Result<R> {
    let text = read_file(path)?;
    let bad = |reason: String| Error::FileFormat {
        path: path.display().to_string(),
        reason,
    };
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
    let params = match value.get("params") {
        Some(p) => {
            if let Some(c) = value.get("command").and_then(|c| c.as_str()) {
                if c != command {
                    return Err(Error::config(format!(
                        "config file is for command '{c}', not '{command}'"
                    )));
                }
            }
            p.clone()
        }
        None => value,
    };
    serde_json::from_value(params).map_err(|e| bad(e.to_string()))
}

#[derive(Serialize)]
struct Manifest<'a, T: Serialize> {
    tool: &'a str,
    version: &'a str,
    command: &'a str,
    params: &'a T,
}

fn write_manifest<T: Serialize>(out: &Path, command: &str, params: &T) -> Result<()> {
    let manifest = Manifest {
        tool: "fjet",
        version: env!("CARGO_PKG_VERSION"),
        command,
        params,
    };
    let body = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_file(&out.join("manifest.json"), body.as_bytes())
}

// ---------------------------------------------------------------------------
// Shared flag groups and small parsers
// ---------------------------------------------------------------------------

#[derive(Args, Debug, Default)]
struct SystemArgs {
    /// Reference system: ho | pendulum | duffing.
    #[arg(long)]
    system: Option<String>,
    /// Natural frequency ω₀ (oscillator, pendulum).
    #[arg(long)]
    omega0: Option<f64>,
    /// Damping coefficient γ.
    #[arg(long)]
    gamma: Option<f64>,
    /// Linear restoring coefficient α (double-well system).
    #[arg(long)]
    alpha: Option<f64>,
    /// Cubic restoring coefficient β (double-well system).
    #[arg(long)]
    beta: Option<f64>,
    /// Drive amplitude A (double-well system).
    #[arg(long = "A")]
    amplitude: Option<f64>,
    /// Drive angular frequency Ω (double-well system).
    #[arg(long = "Omega")]
    frequency: Option<f64>,
}

impl SystemArgs {
    fn resolve(&self) -> Result<SystemSpec> {
        let kind: SystemKind = self
            .system
            .as_deref()
            .ok_or_else(|| Error::config("--system is required"))?
            .parse()?;
        let overrides = [
            ("omega0", self.omega0),
            ("gamma", self.gamma),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("A", self.amplitude),
            ("Omega", self.frequency),
        ];
        SystemSpec::from_params(
            kind,
            overrides.iter().filter_map(|&(n, v)| v.map(|v| (n, v))),
        )
    }

    fn given(&self) -> bool {
        self.system.is_some()
    }
}

fn require<T>(value: Option<T>, flag: &str) -> Result<T> {
    value.ok_or_else(|| Error::config(format!("{flag} is required")))
}

fn parse_pair(s: &str, flag: &str) -> Result<(f64, f64)> {
    parse_csv_floats(s, 2)
        .map(|v| (v[0], v[1]))
        .ok_or_else(|| Error::config(format!("{flag} expects two comma-separated numbers, got '{s}'")))
}

fn parse_f64_list(s: &str, flag: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|tok| {
            tok.trim()
                .parse::<f64>()
                .map_err(|_| Error::config(format!("{flag}: '{tok}' is not a number")))
        })
        .collect()
}

fn parse_u64_list(s: &str, flag: &str) -> Result<Vec<u64>> {
    s.split(',')
        .map(|tok| {
            tok.trim()
                .parse::<u64>()
                .map_err(|_| Error::config(format!("{flag}: '{tok}' is not an integer")))
        })
        .collect()
}

fn parse_interval(s: &str, flag: &str) -> Result<Interval> {
    let (lo, hi) = parse_pair(s, flag)?;
    Interval::new(lo, hi)
}

fn parse_noise(s: &str) -> Result<NoiseMode> {
    match s {
        "fresh" | "fresh_draws" => Ok(NoiseMode::FreshDraws),
        "shared" | "shared_draws" => Ok(NoiseMode::SharedDraws),
        other => Err(Error::config(format!(
            "--noise must be 'fresh' or 'shared', got '{other}'"
        ))),
    }
}

/// The update-map feature bases each system uses by default: the terms an
/// expanded one-step map needs, plus the deliberately superfluous cubic
/// cross-terms for the double-well system.
fn default_features(spec: &SystemSpec) -> (Vec<String>, Vec<String>) {
    let both = |list: &[&str]| -> (Vec<String>, Vec<String>) {
        let v: Vec<String> = list.iter().map(|s| s.to_string()).collect();
        (v.clone(), v)
    };
    match spec.kind() {
        SystemKind::HarmonicOscillator => both(&["u", "v"]),
        SystemKind::Pendulum => both(&["v", "sin(u)", "v*cos(u)"]),
        SystemKind::Duffing => both(&["u", "v", "u^3", "u^2*v", "u*v^2", "v^3", "p", "pdot"]),
    }
}

fn parse_feature_set(strings: &[String]) -> Result<FeatureSet> {
    let feats: Vec<_> = strings.iter().map(|s| s.parse()).collect::<Result<_>>()?;
    Ok(FeatureSet::new(feats))
}

/// The feature-selection flags shared by the fitting commands.
struct FeatureFlags<'a> {
    features: &'a Option<String>,
    features_du: &'a Option<String>,
    features_dv: &'a Option<String>,
    base: &'a Option<String>,
    max_n: Option<usize>,
    max_degree: Option<u32>,
}

impl<'a> FeatureFlags<'a> {
    /// For commands without the superset-generation flags.
    fn lists_only(
        features: &'a Option<String>,
        features_du: &'a Option<String>,
        features_dv: &'a Option<String>,
    ) -> Self {
        FeatureFlags {
            features,
            features_du,
            features_dv,
            base: &None,
            max_n: None,
            max_degree: None,
        }
    }
}

/// Resolves the per-row feature lists from `--features` (with optional
/// per-row overrides), including `--features auto` superset generation
/// against a dataset.
fn resolve_features(
    flags: &FeatureFlags<'_>,
    dataset_for_auto: Option<&Dataset>,
    defaults: Option<(Vec<String>, Vec<String>)>,
) -> Result<(Vec<String>, Vec<String>)> {
    let shared: Option<Vec<String>> = match flags.features.as_deref() {
        Some("auto") => {
            let base = require(flags.base.as_ref(), "--base (with --features auto)")?;
            let max_n = require(flags.max_n, "--max-n (with --features auto)")?;
            let base_set = FeatureSet::parse_list(base)?;
            let sup =
                FeatureSet::superset(&base_set, max_n, flags.max_degree.unwrap_or(max_n as u32))?;
            let rewritten = eliminate_cos_powers(&sup);
            let ds = dataset_for_auto.ok_or_else(|| {
                Error::config("--features auto needs a dataset to prune against")
            })?;
            let (kept, dropped) =
                dedupe_collinear(&rewritten, &ds.jet_points(), DEFAULT_COLLINEARITY_TOL)?;
            if !dropped.is_empty() {
                eprintln!(
                    "note: dropped {} collinear feature(s): {}",
                    dropped.len(),
                    dropped
                        .iter()
                        .map(|f| f.to_string())
                        .collect::<Vec<_>>()
                        .join(", ")
                );
            }
            Some(kept.to_strings())
        }
        Some(list) => Some(FeatureSet::parse_list(list)?.to_strings()),
        None => None,
    };
    let row = |over: &Option<String>, idx: usize| -> Result<Option<Vec<String>>> {
        match over {
            Some(list) => Ok(Some(FeatureSet::parse_list(list)?.to_strings())),
            None => Ok(shared.clone().or_else(|| {
                defaults
                    .as_ref()
                    .map(|(du, dv)| if idx == 0 { du.clone() } else { dv.clone() })
            })),
        }
    };
    let du = row(flags.features_du, 0)?
        .ok_or_else(|| Error::config("--features (or --features-du) is required"))?;
    let dv = row(flags.features_dv, 1)?
        .ok_or_else(|| Error::config("--features (or --features-dv) is required"))?;
    Ok((du, dv))
}

/// Loads orbit observations from a trajectory-style CSV (`t,u,v` with
/// optional extra columns, full-precision floats).
fn load_orbit_csv(path: &Path) -> Result<OrbitData> {
    let text = read_file(path)?;
    let bad = |reason: String| Error::FileFormat {
        path: path.display().to_string(),
        reason,
    };
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
    if !(header == "t,u,v" || header.starts_with("t,u,v,")) {
        return Err(bad(format!("expected a 't,u,v…' header, got '{header}'")));
    }
    let cols = header.split(',').count();
    let mut points = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let vals = parse_csv_floats(line, cols)
            .ok_or_else(|| bad(format!("row {}: expected {cols} numbers", i + 2)))?;
        points.push((vals[0], vals[1], vals[2]));
    }
    OrbitData::new(points)
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

#[derive(Args, Debug)]
struct SynthArgs {
    /// Replay a previous run's manifest (replaces all other flags).
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    system: SystemArgs,
    /// Number of update records to sample.
    #[arg(long)]
    n: Option<usize>,
    /// Step size ε between the two states of each record.
    #[arg(long)]
    eps: Option<f64>,
    /// Noise scale σ (each state coordinate is perturbed by N(0, (σε)²)).
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Override the u sampling interval, as "lo,hi".
    #[arg(long)]
    u_range: Option<String>,
    /// Override the v sampling interval, as "lo,hi".
    #[arg(long)]
    v_range: Option<String>,
    /// Override the t sampling interval, as "lo,hi".
    #[arg(long)]
    t_range: Option<String>,
    /// Endpoint noise draws: fresh (independent per state) | shared.
    #[arg(long)]
    noise: Option<String>,
}

#[derive(Serialize, Deserialize, Debug)]
struct SynthResolved {
    system: SystemSpec,
    domains: Domains,
    n: usize,
    eps: f64,
    sigma: f64,
    seed: u64,
    noise: NoiseMode,
}

impl SynthArgs {
    fn resolve(&self) -> Result<SynthResolved> {
        let system = self.system.resolve()?;
        let mut domains = Domains::for_system(&system);
        if let Some(s) = &self.u_range {
            domains.u = parse_interval(s, "--u-range")?;
        }
        if let Some(s) = &self.v_range {
            domains.v = parse_interval(s, "--v-range")?;
        }
        if let Some(s) = &self.t_range {
            domains.t = parse_interval(s, "--t-range")?;
        }
        Ok(SynthResolved {
            system,
            domains,
            n: require(self.n, "--n")?,
            eps: require(self.eps, "--eps")?,
            sigma: self.sigma,
            seed: self.seed,
            noise: match &self.noise {
                Some(s) => parse_noise(s)?,
                None => NoiseMode::FreshDraws,
            },
        })
    }
}

fn run_synth(r: &SynthResolved, out: &Path) -> Result<()> {
    let options = SampleOptions {
        noise: r.noise,
        ..SampleOptions::default()
    };
    let ds = sample_dataset_with(&r.system, &r.domains, r.n, r.eps, r.sigma, r.seed, options)?;
    let path = out.join("dataset.csv");
    ds.save(&path)?;
    write_manifest(out, "synth", r)?;
    println!(
        "wrote {} records ({} system, eps={}, sigma={}) to {}",
        ds.len(),
        r.system.kind().as_str(),
        r.eps,
        r.sigma,
        path.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

#[derive(Args, Debug)]
struct FitArgs {
    /// Replay a previous run's manifest (replaces all other flags).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset CSV produced by `synth`.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Feature list for both rows ("u,v,…") or "auto" for superset
    /// generation from --base.
    #[arg(long)]
    features: Option<String>,
    /// Per-row override of the Δu feature list.
    #[arg(long)]
    features_du: Option<String>,
    /// Per-row override of the Δv feature list.
    #[arg(long)]
    features_dv: Option<String>,
    /// Base features the superset is grown from (with --features auto).
    #[arg(long)]
    base: Option<String>,
    /// Maximum product length for generated features (with --features auto).
    #[arg(long)]
    max_n: Option<usize>,
    /// Maximum total degree for generated features (default: --max-n).
    #[arg(long)]
    max_degree: Option<u32>,
    /// Append a constant diagnostic feature to both rows.
    #[arg(long, default_value_t = false)]
    intercept: bool,
}

#[derive(Serialize, Deserialize)]
struct FitResolved {
    dataset: String,
    features_du: Vec<String>,
    features_dv: Vec<String>,
    intercept: bool,
}

impl FitArgs {
    fn resolve(&self) -> Result<FitResolved> {
        let dataset = require(self.dataset.as_ref(), "--dataset")?;
        let loaded;
        let ds_for_auto = if self.features.as_deref() == Some("auto") {
            loaded = Dataset::load(dataset)?;
            Some(&loaded)
        } else {
            None
        };
        let flags = FeatureFlags {
            features: &self.features,
            features_du: &self.features_du,
            features_dv: &self.features_dv,
            base: &self.base,
            max_n: self.max_n,
            max_degree: self.max_degree,
        };
        let (features_du, features_dv) = resolve_features(&flags, ds_for_auto, None)?;
        Ok(FitResolved {
            dataset: dataset.display().to_string(),
            features_du,
            features_dv,
            intercept: self.intercept,
        })
    }
}

fn run_fit(r: &FitResolved, out: &Path) -> Result<()> {
    let ds = Dataset::load(Path::new(&r.dataset))?;
    let fdu = parse_feature_set(&r.features_du)?;
    let fdv = parse_feature_set(&r.features_dv)?;
    let model = fit_with_options(&ds, &fdu, &fdv, FitOptions { intercept: r.intercept })?;
    let path = out.join("model.fjet");
    model.save(&path)?;
    write_manifest(out, "fit", r)?;
    println!("fitted model ({} records, eps={}) -> {}", ds.len(), ds.eps, path.display());
    for (f, c) in model.features_du().iter().zip(model.coeffs_du()) {
        println!("  du  {f:<12} {c:+.12e}");
    }
    for (f, c) in model.features_dv().iter().zip(model.coeffs_dv()) {
        println!("  dv  {f:<12} {c:+.12e}");
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

#[derive(Args, Debug)]
struct SweepArgs {
    /// Replay a previous run's manifest (replaces all other flags).
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    system: SystemArgs,
    /// Records sampled per grid step size.
    #[arg(long, default_value_t = 2000)]
    n: usize,
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Step-size grid, comma-separated (default: built-in two-decade grid).
    #[arg(long)]
    eps_grid: Option<String>,
    /// Feature list for both rows (default: the system's standard basis).
    #[arg(long)]
    features: Option<String>,
    #[arg(long)]
    features_du: Option<String>,
    #[arg(long)]
    features_dv: Option<String>,
    /// Force the extrapolation fit degree (1 or 2; default: automatic).
    #[arg(long)]
    degree: Option<usize>,
}

#[derive(Serialize, Deserialize)]
struct SweepResolved {
    system: SystemSpec,
    domains: Domains,
    n: usize,
    sigma: f64,
    seed: u64,
    eps_grid: Vec<f64>,
    features_du: Vec<String>,
    features_dv: Vec<String>,
    degree: Option<usize>,
}

impl SweepArgs {
    fn resolve(&self) -> Result<SweepResolved> {
        let system = self.system.resolve()?;
        let (features_du, features_dv) = resolve_features(
            &FeatureFlags::lists_only(&self.features, &self.features_du, &self.features_dv),
            None,
            Some(default_features(&system)),
        )?;
        Ok(SweepResolved {
            domains: Domains::for_system(&system),
            system,
            n: self.n,
            sigma: self.sigma,
            seed: self.seed,
            eps_grid: match &self.eps_grid {
                Some(s) => parse_f64_list(s, "--eps-grid")?,
                None => DEFAULT_EPS_GRID.to_vec(),
            },
            features_du,
            features_dv,
            degree: self.degree,
        })
    }
}

fn run_sweep(r: &SweepResolved, out: &Path) -> Result<()> {
    let fdu = parse_feature_set(&r.features_du)?;
    let fdv = parse_feature_set(&r.features_dv)?;
    let mut sweep = epsilon_sweep(
        &r.system, &r.domains, r.n, r.sigma, r.seed, &fdu, &fdv, &r.eps_grid,
    )?;
    sweep.fit_all(r.degree)?;
    sweep.write_sweep_csv(&out.join("sweep.csv"))?;
    sweep.write_fit_summary_csv(Some(&r.system), &out.join("fit_summary.csv"))?;
    write_manifest(out, "sweep", r)?;
    println!(
        "swept {} step sizes x {} records ({} system, sigma={})",
        r.eps_grid.len(),
        r.n,
        r.system.kind().as_str(),
        r.sigma
    );
    for s in &sweep.series {
        let fit = s.fit.as_ref().expect("fitted above");
        println!(
            "  {:<3} {:<10} {:<3} intercept {:+.6e}  slope {:+.6e}",
            s.label,
            s.feature.to_string(),
            s.response,
            fit.intercept(),
            fit.slope()
        );
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// paramdep
// ---------------------------------------------------------------------------

#[derive(Args, Debug)]
struct ParamdepArgs {
    /// Replay a previous run's manifest (replaces all other flags).
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    system: SystemArgs,
    /// System parameter to sweep (omega0, gamma, alpha, beta, A, Omega).
    #[arg(long)]
    param: Option<String>,
    /// Parameter values, comma-separated.
    #[arg(long)]
    param_grid: Option<String>,
    /// Which row the tracked coefficient belongs to: du | dv.
    #[arg(long)]
    response: Option<String>,
    /// The tracked feature (e.g. "u").
    #[arg(long)]
    feature: Option<String>,
    /// Degree of the polynomial fitted in the parameter.
    #[arg(long, default_value_t = 2)]
    poly_degree: usize,
    #[arg(long, default_value_t = 2000)]
    n: usize,
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Step-size grid, comma-separated (default: built-in two-decade grid).
    #[arg(long)]
    eps_grid: Option<String>,
    /// Feature list for both rows (default: the system's standard basis).
    #[arg(long)]
    features: Option<String>,
    #[arg(long)]
    features_du: Option<String>,
    #[arg(long)]
    features_dv: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct ParamdepResolved {
    system: SystemSpec,
    param: String,
    param_grid: Vec<f64>,
    response: Response,
    feature: String,
    poly_degree: usize,
    n: usize,
    sigma: f64,
    seed: u64,
    eps_grid: Vec<f64>,
    features_du: Vec<String>,
    features_dv: Vec<String>,
}

impl ParamdepArgs {
    fn resolve(&self) -> Result<ParamdepResolved> {
        let system = self.system.resolve()?;
        let (features_du, features_dv) = resolve_features(
            &FeatureFlags::lists_only(&self.features, &self.features_du, &self.features_dv),
            None,
            Some(default_features(&system)),
        )?;
        let response = match require(self.response.as_deref(), "--response")? {
            "du" => Response::Du,
            "dv" => Response::Dv,
            other => {
                return Err(Error::config(format!(
                    "--response must be 'du' or 'dv', got '{other}'"
                )))
            }
        };
        Ok(ParamdepResolved {
            system,
            param: require(self.param.clone(), "--param")?,
            param_grid: parse_f64_list(require(self.param_grid.as_deref(), "--param-grid")?, "--param-grid")?,
            response,
            feature: require(self.feature.clone(), "--feature")?,
            poly_degree: self.poly_degree,
            n: self.n,
            sigma: self.sigma,
            seed: self.seed,
            eps_grid: match &self.eps_grid {
                Some(s) => parse_f64_list(s, "--eps-grid")?,
                None => DEFAULT_EPS_GRID.to_vec(),
            },
            features_du,
            features_dv,
        })
    }
}

fn run_paramdep(r: &ParamdepResolved, out: &Path) -> Result<()> {
    let fdu = parse_feature_set(&r.features_du)?;
    let fdv = parse_feature_set(&r.features_dv)?;
    let cfg = ParamDepConfig {
        param: r.param.clone(),
        param_grid: r.param_grid.clone(),
        response: r.response,
        feature: r.feature.parse()?,
        poly_degree: r.poly_degree,
        n: r.n,
        sigma: r.sigma,
        seed: r.seed,
        eps_grid: r.eps_grid.clone(),
    };
    let dep = parameter_dependence(&r.system, &fdu, &fdv, &cfg)?;
    dep.write_surface_csv(&out.join("paramdep.csv"))?;
    dep.write_fit_json(&out.join("paramdep_fit.json"))?;
    write_manifest(out, "paramdep", r)?;
    println!(
        "coefficient of {} ({}) as a polynomial in {} at step size zero:",
        r.feature, r.response, r.param
    );
    for (k, c) in dep.limit_poly.iter().enumerate() {
        let marker = if k == dep.dominant_degree { "  <- dominant" } else { "" };
        println!("  {}^{k}: {c:+.6e}{marker}", r.param);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

#[derive(Args, Debug)]
struct GenerateArgs {
    /// Replay a previous run's manifest (replaces all other flags).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model file produced by `fit` or `refine`.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Initial state "u,v".
    #[arg(long)]
    init: Option<String>,
    /// Start time of the generated orbit.
    #[arg(long, default_value_t = 0.0)]
    t0: f64,
    /// Number of update steps to iterate.
    #[arg(long)]
    steps: Option<usize>,
    /// Also write an error curve against a reference: exact | fine
    /// (requires --system and its parameters).
    #[arg(long)]
    reference: Option<String>,
    /// Reference system parameters; --A/--Omega also set the drive for
    /// models that use p, pdot.
    #[command(flatten)]
    system: SystemArgs,
}

#[derive(Serialize, Deserialize)]
struct GenerateResolved {
    model: String,
    init: (f64, f64),
    t0: f64,
    steps: usize,
    forcing: Option<Forcing>,
    /// `exact` or `fine`, with the reference system, when an error curve is
    /// requested.
    reference: Option<(String, SystemSpec)>,
}

impl GenerateArgs {
    fn resolve(&self) -> Result<GenerateResolved> {
        let forcing = match (self.system.amplitude, self.system.frequency) {
            (Some(a), Some(w)) => Some(Forcing { amplitude: a, frequency: w }),
            (None, None) => None,
            _ => return Err(Error::config("--A and --Omega must be given together")),
        };
        let reference = match self.reference.as_deref() {
            None => None,
            Some(kind @ ("exact" | "fine")) => {
                if !self.system.given() {
                    return Err(Error::config(format!(
                        "--reference {kind} needs --system (and its parameters)"
                    )));
                }
                Some((kind.to_string(), self.system.resolve()?))
            }
            Some(other) => {
                return Err(Error::config(format!(
                    "--reference must be 'exact' or 'fine', got '{other}'"
                )))
            }
        };
        // A driven reference system implies the drive for the model too.
        let forcing = forcing.or_else(|| {
            reference.as_ref().and_then(|(_, spec)| spec.forcing())
        });
        Ok(GenerateResolved {
            model: require(self.model.as_ref(), "--model")?.display().to_string(),
            init: parse_pair(require(self.init.as_deref(), "--init")?, "--init")?,
            t0: self.t0,
            steps: require(self.steps, "--steps")?,
            forcing,
            reference,
        })
    }
}

fn run_generate(r: &GenerateResolved, out: &Path) -> Result<()> {
    let model = FJetModel::load(Path::new(&r.model))?;
    let init = State::new(r.init.0, r.init.1)?;
    let traj = generate(&model, init, r.t0, r.steps, r.forcing.as_ref())?;
    traj.write_csv(&out.join("trajectory.csv"), r.forcing.as_ref())?;
    if let Some((kind, spec)) = &r.reference {
        let reference = match kind.as_str() {
            "exact" => exact_trajectory(spec, init, r.t0, r.steps, model.eps())?,
            _ => fine_trajectory(spec, init, r.t0, r.steps, model.eps())?,
        };
        let curve = error_curve(&traj, &reference, Some(spec))?;
        curve.write_csv(&out.join("error_curve.csv"))?;
    }
    write_manifest(out, "generate", r)?;
    let last = traj.last();
    println!(
        "generated {} points (eps={}); final state t={} u={:+.6e} v={:+.6e}{}",
        traj.points.len(),
        traj.eps,
        last.t,
        last.u,
        last.v,
        if traj.truncated { "  [truncated: diverged]" } else { "" }
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// stability
// ---------------------------------------------------------------------------

#[derive(Args, Debug)]
struct StabilityArgs {
    /// Replay a previous run's manifest (replaces all other flags).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Stepper to measure: euler | rk2 | rk4 | fjet0 (freshly fitted map).
    #[arg(long)]
    scheme: Option<String>,
    /// Natural frequency of the undamped test oscillator.
    #[arg(long, default_value_t = 1.0)]
    omega0: f64,
    /// Initial state "u,v".
    #[arg(long, default_value = "1,0")]
    init: String,
    #[arg(long, default_value_t = 10_000)]
    steps: usize,
    #[arg(long)]
    eps: Option<f64>,
    /// Records for the fjet0 fit (σ=0).
    #[arg(long, default_value_t = 2000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Serialize, Deserialize)]
struct StabilityResolved {
    scheme: String,
    omega0: f64,
    init: (f64, f64),
    steps: usize,
    eps: f64,
    n: usize,
    seed: u64,
}

impl StabilityArgs {
    fn resolve(&self) -> Result<StabilityResolved> {
        let scheme = require(self.scheme.clone(), "--scheme")?;
        if !["euler", "rk2", "midpoint", "rk4", "fjet0"].contains(&scheme.as_str()) {
            return Err(Error::config(format!(
                "--scheme must be euler, rk2, rk4, or fjet0, got '{scheme}'"
            )));
        }
        Ok(StabilityResolved {
            scheme,
            omega0: self.omega0,
            init: parse_pair(&self.init, "--init")?,
            steps: self.steps,
            eps: require(self.eps, "--eps")?,
            n: self.n,
            seed: self.seed,
        })
    }
}

fn run_stability(r: &StabilityResolved, out: &Path) -> Result<()> {
    let spec = SystemSpec::harmonic(r.omega0, 0.0)?;
    let init = State::new(r.init.0, r.init.1)?;
    let fitted;
    let stepper = if r.scheme == "fjet0" {
        let ds = sample_dataset(&spec, &Domains::for_system(&spec), r.n, r.eps, 0.0, r.seed)?;
        let fs = FeatureSet::parse_list("u,v")?;
        fitted = crate::regress::fit(&ds, &fs, &fs)?;
        Stepper::Model(&fitted)
    } else {
        Stepper::Scheme(r.scheme.parse::<Scheme>()?)
    };
    let report = stability_lambda(&spec, stepper, init, r.steps, r.eps)?;
    report.write_json(&out.join("stability.json"))?;
    write_manifest(out, "stability", r)?;
    println!(
        "{}: lambda_per_step {:+.6e}, lambda_per_time {:+.6e} ({} steps at eps={})",
        report.source, report.lambda_per_step, report.lambda_per_time, r.steps, r.eps
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// residuals
// ---------------------------------------------------------------------------

#[derive(Args, Debug)]
struct ResidualsArgs {
    /// Replay a previous run's manifest (replaces all other flags).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model file to evaluate.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Dataset CSV to evaluate against (must share the model's ε).
    #[arg(long)]
    dataset: Option<PathBuf>,
}

#[derive(Serialize, Deserialize)]
struct ResidualsResolved {
    model: String,
    dataset: String,
}

#[derive(Serialize)]
struct ResidualSummary {
    records: usize,
    max_abs_du: f64,
    max_abs_dv: f64,
}

impl ResidualsArgs {
    fn resolve(&self) -> Result<ResidualsResolved> {
        Ok(ResidualsResolved {
            model: require(self.model.as_ref(), "--model")?.display().to_string(),
            dataset: require(self.dataset.as_ref(), "--dataset")?.display().to_string(),
        })
    }
}

fn run_residuals(r: &ResidualsResolved, out: &Path) -> Result<()> {
    let model = FJetModel::load(Path::new(&r.model))?;
    let ds = Dataset::load(Path::new(&r.dataset))?;
    let map = residuals(&model, &ds)?;
    write_residual_plot_csv(&map, &out.join("residuals.csv"))?;
    let summary = ResidualSummary {
        records: map.records.len(),
        max_abs_du: map.max_abs_du,
        max_abs_dv: map.max_abs_dv,
    };
    write_file(
        &out.join("residual_summary.json"),
        serde_json::to_string_pretty(&summary).expect("serializes").as_bytes(),
    )?;
    write_manifest(out, "residuals", r)?;
    println!(
        "residuals over {} records: max |du| {:.6e}, max |dv| {:.6e}",
        summary.records, summary.max_abs_du, summary.max_abs_dv
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// refine
// ---------------------------------------------------------------------------

#[derive(Args, Debug)]
struct RefineArgs {
    /// Replay a previous run's manifest (replaces all other flags).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model file to refine.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Orbit observations CSV ("t,u,v…" rows, e.g. a trajectory file).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Initial state "u,v" of the orbit.
    #[arg(long)]
    init: Option<String>,
    /// Start time of the orbit.
    #[arg(long, default_value_t = 0.0)]
    t0: f64,
    /// Velocity-error weight in the cost.
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = 2000)]
    iterations: usize,
    /// Initial relative perturbation scale.
    #[arg(long, default_value_t = 1e-3)]
    init_scale: f64,
    /// Scale multiplier applied after `patience` consecutive rejections.
    #[arg(long, default_value_t = 0.5)]
    decay: f64,
    #[arg(long, default_value_t = 50)]
    patience: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Run one restart per seed and keep the best (comma-separated).
    #[arg(long)]
    seeds: Option<String>,
    /// Drive amplitude A for models that use p, pdot.
    #[arg(long = "A")]
    amplitude: Option<f64>,
    /// Drive angular frequency Ω for models that use p, pdot.
    #[arg(long = "Omega")]
    frequency: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct RefineResolved {
    model: String,
    data: String,
    init: (f64, f64),
    t0: f64,
    alpha: f64,
    iterations: usize,
    init_scale: f64,
    decay: f64,
    patience: usize,
    seed: u64,
    seeds: Option<Vec<u64>>,
    forcing: Option<Forcing>,
}

impl RefineArgs {
    fn resolve(&self) -> Result<RefineResolved> {
        let forcing = match (self.amplitude, self.frequency) {
            (Some(a), Some(w)) => Some(Forcing { amplitude: a, frequency: w }),
            (None, None) => None,
            _ => return Err(Error::config("--A and --Omega must be given together")),
        };
        Ok(RefineResolved {
            model: require(self.model.as_ref(), "--model")?.display().to_string(),
            data: require(self.data.as_ref(), "--data")?.display().to_string(),
            init: parse_pair(require(self.init.as_deref(), "--init")?, "--init")?,
            t0: self.t0,
            alpha: self.alpha,
            iterations: self.iterations,
            init_scale: self.init_scale,
            decay: self.decay,
            patience: self.patience,
            seed: self.seed,
            seeds: match &self.seeds {
                Some(s) => Some(parse_u64_list(s, "--seeds")?),
                None => None,
            },
            forcing,
        })
    }
}

fn run_refine(r: &RefineResolved, out: &Path) -> Result<()> {
    let model = FJetModel::load(Path::new(&r.model))?;
    let data = load_orbit_csv(Path::new(&r.data))?;
    let init = State::new(r.init.0, r.init.1)?;
    let cfg = RefineConfig {
        alpha: r.alpha,
        iterations: r.iterations,
        init_scale: r.init_scale,
        decay: r.decay,
        patience: r.patience,
        seed: r.seed,
    };
    let forcing = r.forcing.as_ref();
    let (mut refined, history, seed_note) = match &r.seeds {
        Some(seeds) => {
            let (m, h, winner) =
                refine_multi_seed(&model, &data, init, r.t0, &cfg, forcing, seeds)?;
            (m, h, format!(" (best of {} seeds: {winner})", seeds.len()))
        }
        None => {
            let (m, h) = refine_model(&model, &data, init, r.t0, &cfg, forcing)?;
            (m, h, String::new())
        }
    };
    refined.set_refined_from(r.model.clone());
    refined.save(&out.join("model_refined.fjet"))?;
    write_cost_history_csv(&history, &out.join("cost_history.csv"))?;
    write_manifest(out, "refine", r)?;
    println!(
        "refined over {} observations: cost {:.6e} -> {:.6e}{}",
        data.len(),
        history.first().unwrap(),
        history.last().unwrap(),
        seed_note
    );
    Ok(())
}
