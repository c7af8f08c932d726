//! Trajectory generation and model-quality diagnostics.
//!
//! A fitted update map is itself a discrete-time dynamical system: iterating
//! it from an initial state produces a trajectory on the same time grid an
//! integrator of step ε would use. This module generates such trajectories
//! (from models, from the classical integrators, from the closed-form
//! solution where one exists, and from fine reference propagation), compares
//! them pointwise on a shared grid, and measures long-run energy stability
//! through a fitted exponential rate.
//!
//! All trajectories use index-based time (`t_k = t0 + k·ε`) so grids from
//! different sources agree bit-for-bit and never accumulate rounding.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::datagen::{write_file, Dataset};
use crate::error::{Error, Result};
use crate::features::JetPoint;
use crate::integrate::{propagate_fine, step, Scheme, DEFAULT_EPS_BASE};
use crate::recover::error_measure;
use crate::regress::{self, FJetModel, ResidualMap};
use crate::systems::{Forcing, State, SystemSpec};
use crate::util::fmt_f64;

/// Magnitude of `u` or `v` beyond which a trajectory counts as diverged and
/// is truncated.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

/// What produced a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceTag {
    /// Closed-form solution.
    Exact,
    Euler,
    Rk2,
    Rk4,
    /// Iterated fitted update map.
    FJet,
    /// Iterated update map after trajectory refinement.
    FJetOpt,
    /// Fine reference propagation (many sub-steps per grid point).
    Fine,
}

impl SourceTag {
    pub fn as_str(self) -> &'static str {
        match self {
            SourceTag::Exact => "exact",
            SourceTag::Euler => "euler",
            SourceTag::Rk2 => "rk2",
            SourceTag::Rk4 => "rk4",
            SourceTag::FJet => "fjet0",
            SourceTag::FJetOpt => "fjet_opt",
            SourceTag::Fine => "fine",
        }
    }
}

impl std::fmt::Display for SourceTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One sample of a trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajPoint {
    pub t: f64,
    pub u: f64,
    pub v: f64,
}

/// A time-gridded trajectory with provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// Samples at `t0 + k·eps`, including the initial state.
    pub points: Vec<TrajPoint>,
    pub eps: f64,
    pub source: SourceTag,
    /// True when generation stopped early because the state diverged.
    pub truncated: bool,
}

impl Trajectory {
    pub fn last(&self) -> &TrajPoint {
        self.points.last().expect("trajectories are non-empty")
    }

    /// Writes `t,u,v` rows (plus `p,pdot` columns when a drive is given).
    pub fn write_csv(&self, path: &Path, forcing: Option<&Forcing>) -> Result<()> {
        let mut out = String::with_capacity(self.points.len() * 48);
        match forcing {
            Some(_) => out.push_str("t,u,v,p,pdot\n"),
            None => out.push_str("t,u,v\n"),
        }
        for p in &self.points {
            out.push_str(&fmt_f64(p.t));
            out.push(',');
            out.push_str(&fmt_f64(p.u));
            out.push(',');
            out.push_str(&fmt_f64(p.v));
            if let Some(f) = forcing {
                out.push(',');
                out.push_str(&fmt_f64(f.p(p.t)));
                out.push(',');
                out.push_str(&fmt_f64(f.p_dot(p.t)));
            }
            out.push('\n');
        }
        write_file(path, out.as_bytes())
    }
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::config(format!("step size must be finite and > 0, got {eps}")));
    }
    Ok(())
}

fn diverged(u: f64, v: f64) -> bool {
    !u.is_finite() || !v.is_finite() || u.abs() > DIVERGENCE_LIMIT || v.abs() > DIVERGENCE_LIMIT
}

/// Iterates a fitted model's update map for `steps` steps from `init`.
///
/// Models whose features involve the drive terms require `forcing`; the
/// drive is evaluated at each grid time. If the state diverges the
/// trajectory is truncated at the last finite point and marked.
pub fn generate(
    m: &FJetModel,
    init: State,
    t0: f64,
    steps: usize,
    forcing: Option<&Forcing>,
) -> Result<Trajectory> {
    if m.uses_forcing() && forcing.is_none() {
        return Err(Error::config(
            "model uses drive features (p, pdot); a forcing must be supplied",
        ));
    }
    if !t0.is_finite() {
        return Err(Error::config(format!("start time must be finite, got {t0}")));
    }
    let eps = m.eps();
    let source = if m.refined_from().is_some() { SourceTag::FJetOpt } else { SourceTag::FJet };
    let (mut u, mut v) = (init.u(), init.v());
    let mut points = vec![TrajPoint { t: t0, u, v }];
    let mut truncated = false;
    for k in 0..steps {
        let t = t0 + k as f64 * eps;
        let (p, pdot) = match forcing {
            Some(f) => (f.p(t), f.p_dot(t)),
            None => (0.0, 0.0),
        };
        let (du, dv) = m.predict(&JetPoint { t, u, v, p, pdot });
        let (nu, nv) = (u + du, v + dv);
        if diverged(nu, nv) {
            truncated = true;
            break;
        }
        u = nu;
        v = nv;
        points.push(TrajPoint { t: t0 + (k + 1) as f64 * eps, u, v });
    }
    Ok(Trajectory { points, eps, source, truncated })
}

/// Marches a classical integrator on the same grid conventions as
/// [`generate`], truncating on divergence.
pub fn integrate_trajectory(
    spec: &SystemSpec,
    scheme: Scheme,
    init: State,
    t0: f64,
    steps: usize,
    eps: f64,
) -> Result<Trajectory> {
    check_eps(eps)?;
    let source = match scheme {
        Scheme::Euler => SourceTag::Euler,
        Scheme::Rk2 => SourceTag::Rk2,
        Scheme::Rk4 => SourceTag::Rk4,
    };
    march(source, init, t0, steps, eps, |t, s| step(scheme, spec, t, s, eps))
}

/// Closed-form trajectory; only the linear oscillator has one.
pub fn exact_trajectory(
    spec: &SystemSpec,
    init: State,
    t0: f64,
    steps: usize,
    eps: f64,
) -> Result<Trajectory> {
    check_eps(eps)?;
    let mut points = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        // The oscillator is autonomous: elapsed time since `init` is k·ε.
        let s = spec.exact_ho(init, k as f64 * eps)?;
        points.push(TrajPoint { t: t0 + k as f64 * eps, u: s.u(), v: s.v() });
    }
    Ok(Trajectory { points, eps, source: SourceTag::Exact, truncated: false })
}

/// Reference trajectory via fine sub-stepped propagation of each grid step.
pub fn fine_trajectory(
    spec: &SystemSpec,
    init: State,
    t0: f64,
    steps: usize,
    eps: f64,
) -> Result<Trajectory> {
    check_eps(eps)?;
    march(SourceTag::Fine, init, t0, steps, eps, |t, s| {
        propagate_fine(spec, t, s, eps, DEFAULT_EPS_BASE)
    })
}

/// Shared stepping loop: index-based grid, divergence truncation.
fn march(
    source: SourceTag,
    init: State,
    t0: f64,
    steps: usize,
    eps: f64,
    mut advance: impl FnMut(f64, State) -> Result<State>,
) -> Result<Trajectory> {
    if !t0.is_finite() {
        return Err(Error::config(format!("start time must be finite, got {t0}")));
    }
    let mut s = init;
    let mut points = vec![TrajPoint { t: t0, u: s.u(), v: s.v() }];
    let mut truncated = false;
    for k in 0..steps {
        let t = t0 + k as f64 * eps;
        match advance(t, s) {
            Ok(next) if !diverged(next.u(), next.v()) => {
                s = next;
                points.push(TrajPoint { t: t0 + (k + 1) as f64 * eps, u: s.u(), v: s.v() });
            }
            Ok(_) | Err(Error::Overflow(_)) => {
                truncated = true;
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(Trajectory { points, eps, source, truncated })
}

/// Pointwise log₁₀ errors of a trajectory against a reference on the same
/// grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorCurve {
    pub t: Vec<f64>,
    pub e_u: Vec<f64>,
    pub e_v: Vec<f64>,
    /// Present when an energy function was available.
    pub e_energy: Option<Vec<f64>>,
}

impl ErrorCurve {
    /// Writes `t,E_u,E_v,E_energy` (energy cells empty when unavailable).
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::with_capacity(self.t.len() * 48);
        out.push_str("t,E_u,E_v,E_energy\n");
        for i in 0..self.t.len() {
            let energy = self
                .e_energy
                .as_ref()
                .map(|e| fmt_f64(e[i]))
                .unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{}\n",
                fmt_f64(self.t[i]),
                fmt_f64(self.e_u[i]),
                fmt_f64(self.e_v[i]),
                energy
            ));
        }
        write_file(path, out.as_bytes())
    }
}

/// Compares two trajectories sample-by-sample. Their grids must agree within
/// 1e-9 over the common prefix (shorter if one was truncated). When `spec`
/// provides an energy function, an energy-error channel is included.
pub fn error_curve(
    traj: &Trajectory,
    reference: &Trajectory,
    spec: Option<&SystemSpec>,
) -> Result<ErrorCurve> {
    let n = traj.points.len().min(reference.points.len());
    if n == 0 {
        return Err(Error::config("cannot compare empty trajectories"));
    }
    let energy_of = |p: &TrajPoint| -> Option<f64> {
        let s = State::new(p.u, p.v).ok()?;
        spec.and_then(|sp| sp.energy(s))
    };
    let with_energy = spec
        .map(|sp| sp.energy(State::new(0.0, 0.0).unwrap()).is_some())
        .unwrap_or(false);

    let mut t = Vec::with_capacity(n);
    let mut e_u = Vec::with_capacity(n);
    let mut e_v = Vec::with_capacity(n);
    let mut e_energy = if with_energy { Some(Vec::with_capacity(n)) } else { None };
    for (a, b) in traj.points.iter().zip(&reference.points).take(n) {
        if (a.t - b.t).abs() > 1e-9 {
            return Err(Error::config(format!(
                "trajectory grids disagree: t={} vs reference t={}",
                a.t, b.t
            )));
        }
        t.push(a.t);
        e_u.push(error_measure(a.u, b.u));
        e_v.push(error_measure(a.v, b.v));
        if let Some(e) = e_energy.as_mut() {
            match (energy_of(a), energy_of(b)) {
                (Some(ea), Some(eb)) => e.push(error_measure(ea, eb)),
                _ => e.push(-18.0),
            }
        }
    }
    Ok(ErrorCurve { t, e_u, e_v, e_energy })
}

/// What to iterate when measuring stability: a classical scheme or a fitted
/// model.
#[derive(Debug, Clone, Copy)]
pub enum Stepper<'a> {
    Scheme(Scheme),
    Model(&'a FJetModel),
}

impl Stepper<'_> {
    fn label(&self) -> &'static str {
        match self {
            Stepper::Scheme(Scheme::Euler) => "euler",
            Stepper::Scheme(Scheme::Rk2) => "rk2",
            Stepper::Scheme(Scheme::Rk4) => "rk4",
            Stepper::Model(m) if m.refined_from().is_some() => "fjet_opt",
            Stepper::Model(_) => "fjet0",
        }
    }
}

/// Fitted exponential energy drift of an iterated map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    /// Which stepper was measured.
    pub source: String,
    pub eps: f64,
    pub steps: usize,
    /// Least-squares slope of ln(Eₙ/E₀) against the step index n.
    pub lambda_per_step: f64,
    /// The same rate per unit time (slope / ε).
    pub lambda_per_time: f64,
    /// Root-mean-square residual of the line fit.
    pub fit_residual: f64,
}

impl StabilityReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let body = serde_json::to_string_pretty(self).expect("serializes");
        write_file(path, body.as_bytes())
    }
}

/// Iterates a stepper from `init` and fits `ln(Eₙ/E₀) = c + λ·n`, reporting
/// λ both per step and per unit time.
///
/// Requires a conservative system (one with an energy function) and a
/// strictly positive initial energy; a non-positive or non-finite energy at
/// any step is an error, since the log-drift model no longer applies. Large
/// but finite growth is expected — a dissipative scheme can amplify the
/// state by many orders of magnitude over long runs, and that growth is
/// precisely what λ quantifies — so unlike trajectory generation this
/// measurement applies no amplitude cutoff.
pub fn stability_lambda(
    spec: &SystemSpec,
    stepper: Stepper<'_>,
    init: State,
    steps: usize,
    eps: f64,
) -> Result<StabilityReport> {
    check_eps(eps)?;
    if steps < 2 {
        return Err(Error::config("stability measurement needs at least 2 steps"));
    }
    if let Stepper::Model(m) = stepper {
        if (m.eps() - eps).abs() > 1e-12 {
            return Err(Error::config(format!(
                "model step {} does not match requested step {eps}",
                m.eps()
            )));
        }
        if m.uses_forcing() {
            return Err(Error::config(
                "stability measurement is defined for autonomous models only",
            ));
        }
    }
    let e0 = spec
        .energy(init)
        .ok_or_else(|| Error::Unsupported("system has no energy function".into()))?;
    if !(e0.is_finite() && e0 > 0.0) {
        return Err(Error::config(format!("initial energy must be > 0, got {e0}")));
    }

    let (mut u, mut v) = (init.u(), init.v());
    let mut log_ratio = Vec::with_capacity(steps);
    for k in 0..steps {
        let t = k as f64 * eps;
        match stepper {
            Stepper::Scheme(scheme) => {
                let next = step(scheme, spec, t, State::new(u, v)?, eps)?;
                u = next.u();
                v = next.v();
            }
            Stepper::Model(m) => {
                let (du, dv) = m.predict(&JetPoint { t, u, v, p: 0.0, pdot: 0.0 });
                u += du;
                v += dv;
            }
        }
        if !(u.is_finite() && v.is_finite()) {
            return Err(Error::Overflow(format!("state diverged at step {}", k + 1)));
        }
        let e = spec.energy(State::new(u, v)?).expect("energy checked above");
        if !(e.is_finite() && e > 0.0) {
            return Err(Error::Overflow(format!(
                "energy became non-positive at step {}: {e}",
                k + 1
            )));
        }
        log_ratio.push((e / e0).ln());
    }

    // Line fit y = c + λ n over n = 1..steps.
    let n = steps as f64;
    let mean_x = (n + 1.0) / 2.0;
    let mean_y = log_ratio.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (i, y) in log_ratio.iter().enumerate() {
        let dx = (i + 1) as f64 - mean_x;
        sxx += dx * dx;
        sxy += dx * (y - mean_y);
    }
    let lambda = sxy / sxx;
    let intercept = mean_y - lambda * mean_x;
    let ss = log_ratio
        .iter()
        .enumerate()
        .map(|(i, y)| {
            let r = y - (intercept + lambda * (i + 1) as f64);
            r * r
        })
        .sum::<f64>();
    Ok(StabilityReport {
        source: stepper.label().to_string(),
        eps,
        steps,
        lambda_per_step: lambda,
        lambda_per_time: lambda / eps,
        fit_residual: (ss / n).sqrt(),
    })
}

/// Residuals of a model over a dataset, for plotting against position.
pub fn residual_map(m: &FJetModel, ds: &Dataset) -> Result<ResidualMap> {
    regress::residuals(m, ds)
}

/// Writes residuals with magnitude columns:
/// `u,v,res_du,res_dv,abs_du,abs_dv`.
pub fn write_residual_plot_csv(map: &ResidualMap, path: &Path) -> Result<()> {
    let mut out = String::with_capacity(map.records.len() * 64);
    out.push_str("u,v,res_du,res_dv,abs_du,abs_dv\n");
    for r in &map.records {
        let row = [r.u, r.v, r.res_du, r.res_dv, r.res_du.abs(), r.res_dv.abs()];
        for (i, x) in row.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            out.push_str(&fmt_f64(*x));
        }
        out.push('\n');
    }
    write_file(path, out.as_bytes())
}
