//! Recovery of governing-equation coefficients by ε → 0 extrapolation.
//!
//! A single fitted update map depends on the step size ε used to build its
//! dataset. Sweeping ε over a grid, fitting one model per value, and tracking
//! each *normalized* coefficient (raw / ε) produces a series whose
//! extrapolation to ε = 0 converges on the corresponding term of the
//! underlying differential equation. This module runs that sweep, fits
//! low-order polynomials in ε to each coefficient series, extrapolates, and
//! compares intercepts against the generating system's true coefficients.
//!
//! It also supports sweeping a *system parameter* (at several ε values at
//! once) to recover how a coefficient depends on that parameter — e.g. that
//! the restoring-force coefficient varies as −ω₀².

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::datagen::{sample_dataset, write_file, Domains};
use crate::error::{Error, Result};
use crate::features::{Atom, FeatureExpr, FeatureSet};
use crate::regress::{fit, FJetModel};
use crate::systems::SystemSpec;
use crate::util::{derive_seed, fmt_f64};

/// Step sizes used by default when sweeping ε. All are multiples of the fine
/// propagation sub-step, span two decades, and cluster toward zero where the
/// extrapolation needs leverage.
pub const DEFAULT_EPS_GRID: [f64; 10] =
    [0.001, 0.002, 0.004, 0.007, 0.01, 0.02, 0.04, 0.06, 0.08, 0.1];

/// Which update-map row a coefficient belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Response {
    /// The Δu (position-update) row.
    Du,
    /// The Δv (velocity-update) row.
    Dv,
}

impl Response {
    pub fn as_str(self) -> &'static str {
        match self {
            Response::Du => "du",
            Response::Dv => "dv",
        }
    }

    /// Prefix used in compact coefficient labels (`a` for Δu, `b` for Δv).
    fn prefix(self) -> char {
        match self {
            Response::Du => 'a',
            Response::Dv => 'b',
        }
    }
}

impl std::fmt::Display for Response {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A low-order polynomial fit of a coefficient series in ε.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesFit {
    /// Polynomial degree: 1 (linear) or 2 (quadratic).
    pub degree: usize,
    /// Coefficients, intercept first. The intercept is the ε → 0 estimate.
    pub coeffs: Vec<f64>,
    /// Root-mean-square residual of the fit over the grid.
    pub residual: f64,
}

impl SeriesFit {
    /// The extrapolated ε → 0 value.
    pub fn intercept(&self) -> f64 {
        self.coeffs[0]
    }

    /// The linear component in ε.
    pub fn slope(&self) -> f64 {
        self.coeffs[1]
    }

    /// The quadratic component, when fitted.
    pub fn quad(&self) -> Option<f64> {
        self.coeffs.get(2).copied()
    }
}

/// One normalized coefficient tracked across the ε grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientSeries {
    /// Compact display label (`a1`, `b3`, …) determined by the feature's
    /// position in the sweep's combined feature list.
    pub label: String,
    pub response: Response,
    pub feature: FeatureExpr,
    /// `(ε, coefficient / ε)` pairs, sorted by ε ascending.
    pub points: Vec<(f64, f64)>,
    /// Polynomial fit in ε, once computed.
    pub fit: Option<SeriesFit>,
}

impl CoefficientSeries {
    /// Fits this series in ε. `degree` forces linear (1) or quadratic (2);
    /// `None` selects automatically (see [`auto_fit`]).
    pub fn fit_in_eps(&mut self, degree: Option<usize>) -> Result<&SeriesFit> {
        let fit = match degree {
            Some(d) => extrapolate_to_zero(&self.points, d)?,
            None => auto_fit(&self.points)?,
        };
        self.fit = Some(fit);
        Ok(self.fit.as_ref().unwrap())
    }
}

/// The result of an ε sweep: one series per (response, feature).
#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub series: Vec<CoefficientSeries>,
    pub eps_grid: Vec<f64>,
}

impl Sweep {
    /// Looks up the series for one coefficient.
    pub fn find(&self, response: Response, feature: &FeatureExpr) -> Option<&CoefficientSeries> {
        self.series
            .iter()
            .find(|s| s.response == response && s.feature == *feature)
    }

    /// Fits every series in ε, in place. `degree` as in
    /// [`CoefficientSeries::fit_in_eps`].
    pub fn fit_all(&mut self, degree: Option<usize>) -> Result<()> {
        for s in &mut self.series {
            s.fit_in_eps(degree)?;
        }
        Ok(())
    }

    /// Writes the raw sweep table: `label,response,feature,eps,coeff_normalized`.
    pub fn write_sweep_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        out.push_str("label,response,feature,eps,coeff_normalized\n");
        for s in &self.series {
            for (eps, value) in &s.points {
                out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    s.label,
                    s.response,
                    s.feature,
                    fmt_f64(*eps),
                    fmt_f64(*value)
                ));
            }
        }
        write_file(path, out.as_bytes())
    }

    /// Writes per-series fit results:
    /// `label,feature,intercept,slope,quad,fit_residual,E_sigma_vs_truth`.
    ///
    /// The `quad` cell is empty for linear fits. When `truth_system` is given,
    /// the last column reports the log₁₀ error of the intercept against that
    /// system's true coefficient; otherwise it is left empty. Unfitted series
    /// are an error.
    pub fn write_fit_summary_csv(
        &self,
        truth_system: Option<&SystemSpec>,
        path: &Path,
    ) -> Result<()> {
        let mut out = String::new();
        out.push_str("label,feature,intercept,slope,quad,fit_residual,E_sigma_vs_truth\n");
        for s in &self.series {
            let fit = s.fit.as_ref().ok_or_else(|| {
                Error::config(format!("series {} has not been fitted", s.label))
            })?;
            let quad = fit.quad().map(fmt_f64).unwrap_or_default();
            let e_sigma = truth_system
                .map(|spec| {
                    let truth = true_coefficient(spec, s.response, &s.feature);
                    fmt_f64(error_measure(fit.intercept(), truth))
                })
                .unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                s.label,
                s.feature,
                fmt_f64(fit.intercept()),
                fmt_f64(fit.slope()),
                quad,
                fmt_f64(fit.residual),
                e_sigma
            ));
        }
        write_file(path, out.as_bytes())
    }
}

/// Samples a dataset and fits a model at each grid ε, then regroups the
/// normalized coefficients into per-feature series.
///
/// Each ε gets an independent sub-seed derived from `seed`, so the sweep is
/// deterministic as a whole while grid points stay statistically independent.
/// Errors from any grid point are annotated with its ε.
#[allow(clippy::too_many_arguments)]
pub fn epsilon_sweep(
    spec: &SystemSpec,
    domains: &Domains,
    n: usize,
    sigma: f64,
    seed: u64,
    features_du: &FeatureSet,
    features_dv: &FeatureSet,
    eps_grid: &[f64],
) -> Result<Sweep> {
    let eps_grid = validate_grid(eps_grid)?;
    let models: Vec<(f64, FJetModel)> = eps_grid
        .par_iter()
        .enumerate()
        .map(|(i, &eps)| {
            let sub_seed = derive_seed(seed, i as u64);
            let ds = sample_dataset(spec, domains, n, eps, sigma, sub_seed)
                .map_err(|e| annotate_eps(e, eps))?;
            let m = fit(&ds, features_du, features_dv).map_err(|e| annotate_eps(e, eps))?;
            Ok((eps, m))
        })
        .collect::<Result<_>>()?;

    // Label indices come from the combined list: the Δv features (the full
    // equation row) first, then any Δu-only extras.
    let mut combined: Vec<FeatureExpr> = features_dv.iter().cloned().collect();
    for f in features_du.iter() {
        if !combined.contains(f) {
            combined.push(f.clone());
        }
    }
    let label_of = |response: Response, feature: &FeatureExpr| {
        let idx = combined.iter().position(|f| f == feature).unwrap();
        format!("{}{}", response.prefix(), idx + 1)
    };

    let mut series = Vec::new();
    for (response, features) in [(Response::Du, features_du), (Response::Dv, features_dv)] {
        for feature in features.iter() {
            let points = models
                .iter()
                .map(|(eps, m)| {
                    let raw = match response {
                        Response::Du => m.coeff_du(feature),
                        Response::Dv => m.coeff_dv(feature),
                    }
                    .expect("fitted model retains its features");
                    (*eps, raw / eps)
                })
                .collect();
            series.push(CoefficientSeries {
                label: label_of(response, feature),
                response,
                feature: feature.clone(),
                points,
                fit: None,
            });
        }
    }
    Ok(Sweep { series, eps_grid })
}

fn validate_grid(eps_grid: &[f64]) -> Result<Vec<f64>> {
    if eps_grid.is_empty() {
        return Err(Error::config("eps grid must be non-empty"));
    }
    if eps_grid.iter().any(|e| !e.is_finite() || *e <= 0.0) {
        return Err(Error::config("eps grid values must be finite and > 0"));
    }
    let mut sorted = eps_grid.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::config("eps grid values must be distinct"));
    }
    Ok(sorted)
}

fn annotate_eps(e: Error, eps: f64) -> Error {
    match e {
        Error::Config(m) => Error::Config(format!("eps={eps}: {m}")),
        Error::Overflow(m) => Error::Overflow(format!("eps={eps}: {m}")),
        Error::RankDeficient(m) => Error::RankDeficient(format!("eps={eps}: {m}")),
        other => other,
    }
}

/// Least-squares polynomial fit of `(ε, value)` points, extrapolating to
/// ε = 0. `degree` must be 1 or 2 and the series must overdetermine the fit
/// (at least `degree + 2` points).
pub fn extrapolate_to_zero(points: &[(f64, f64)], degree: usize) -> Result<SeriesFit> {
    if !(1..=2).contains(&degree) {
        return Err(Error::config(format!("fit degree must be 1 or 2, got {degree}")));
    }
    if points.len() < degree + 2 {
        return Err(Error::config(format!(
            "need at least {} points for a degree-{degree} fit, got {}",
            degree + 2,
            points.len()
        )));
    }
    let n = points.len();
    let a = DMatrix::from_fn(n, degree + 1, |i, j| points[i].0.powi(j as i32));
    let y = DVector::from_iterator(n, points.iter().map(|p| p.1));
    let svd = a.clone().svd(true, true);
    let c = svd
        .solve(&y, 0.0)
        .map_err(|e| Error::Config(format!("polynomial fit failed: {e}")))?;
    let residual = ((&a * &c - &y).norm_squared() / n as f64).sqrt();
    Ok(SeriesFit { degree, coeffs: c.iter().copied().collect(), residual })
}

/// Fits linear and, when warranted, quadratic: the quadratic wins only when
/// it reduces the residual at least threefold *and* the linear residual is
/// above rounding level, so exactly-linear series are not over-fitted.
pub fn auto_fit(points: &[(f64, f64)]) -> Result<SeriesFit> {
    let linear = extrapolate_to_zero(points, 1)?;
    if points.len() < 4 {
        return Ok(linear);
    }
    let quadratic = extrapolate_to_zero(points, 2)?;
    let scale = points.iter().map(|p| p.1.abs()).fold(0.0_f64, f64::max);
    let floor = 1e-12 * (1.0 + scale);
    if linear.residual > 3.0 * quadratic.residual && linear.residual > floor {
        Ok(quadratic)
    } else {
        Ok(linear)
    }
}

/// Log₁₀ absolute error between an estimate and a reference, floored at −18
/// (the floor also stands in for an exact match).
pub fn error_measure(p: f64, p_ref: f64) -> f64 {
    let d = (p - p_ref).abs();
    if d == 0.0 {
        return -18.0;
    }
    d.log10().max(-18.0)
}

/// The coefficient a feature carries in the governing equations, written in
/// first-order form `u̇ = v`, `v̇ = …`. Features absent from the equations
/// have coefficient 0.
pub fn true_coefficient(spec: &SystemSpec, response: Response, feature: &FeatureExpr) -> f64 {
    let is = |atom: Atom| *feature == FeatureExpr::atom(atom);
    match response {
        Response::Du => {
            if is(Atom::V) {
                1.0
            } else {
                0.0
            }
        }
        Response::Dv => match *spec {
            SystemSpec::HarmonicOscillator { omega0, gamma } => {
                if is(Atom::U) {
                    -omega0 * omega0
                } else if is(Atom::V) {
                    -2.0 * gamma
                } else {
                    0.0
                }
            }
            SystemSpec::Pendulum { omega0, gamma } => {
                if is(Atom::SinU) {
                    -omega0 * omega0
                } else if is(Atom::V) {
                    -2.0 * gamma
                } else {
                    0.0
                }
            }
            SystemSpec::Duffing { gamma, alpha, beta, .. } => {
                if is(Atom::U) {
                    -alpha
                } else if is(Atom::V) {
                    -2.0 * gamma
                } else if *feature == FeatureExpr::from_factors([(Atom::U, 3)]) {
                    -beta
                } else if is(Atom::P) {
                    1.0
                } else {
                    0.0
                }
            }
        },
    }
}

/// Configuration for [`parameter_dependence`].
#[derive(Debug, Clone)]
pub struct ParamDepConfig {
    /// Name of the system parameter to sweep (as accepted by
    /// [`SystemSpec::with_param`]).
    pub param: String,
    /// Values the parameter takes; must overdetermine `poly_degree`.
    pub param_grid: Vec<f64>,
    /// The tracked coefficient.
    pub response: Response,
    pub feature: FeatureExpr,
    /// Degree of the polynomial fitted in the parameter at each ε.
    pub poly_degree: usize,
    pub n: usize,
    pub sigma: f64,
    pub seed: u64,
    pub eps_grid: Vec<f64>,
}

/// How one coefficient depends on a swept system parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamDependence {
    pub param: String,
    pub response: Response,
    pub feature: String,
    pub param_grid: Vec<f64>,
    pub eps_grid: Vec<f64>,
    /// Normalized coefficient at `[eps index][param index]`.
    pub surface: Vec<Vec<f64>>,
    /// Polynomial (in the parameter) fitted at each ε, intercept first.
    pub per_eps_polys: Vec<Vec<f64>>,
    /// Each polynomial coefficient extrapolated to ε → 0, intercept first.
    pub limit_poly: Vec<f64>,
    /// Degree of the largest-magnitude term of `limit_poly`.
    pub dominant_degree: usize,
}

impl ParamDependence {
    /// Writes the raw surface: `eps,param_value,coeff_normalized`.
    pub fn write_surface_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        out.push_str("eps,param_value,coeff_normalized\n");
        for (i, eps) in self.eps_grid.iter().enumerate() {
            for (j, p) in self.param_grid.iter().enumerate() {
                out.push_str(&format!(
                    "{},{},{}\n",
                    fmt_f64(*eps),
                    fmt_f64(*p),
                    fmt_f64(self.surface[i][j])
                ));
            }
        }
        write_file(path, out.as_bytes())
    }

    /// Writes the fitted dependence (limit polynomial and per-ε polynomials)
    /// as JSON.
    pub fn write_fit_json(&self, path: &Path) -> Result<()> {
        let body = serde_json::to_string_pretty(self).expect("serializes");
        write_file(path, body.as_bytes())
    }
}

/// Sweeps a system parameter and ε jointly to recover how one normalized
/// coefficient depends on the parameter in the ε → 0 limit.
///
/// For every (ε, parameter) pair a dataset is sampled (independent derived
/// seed) and a model fitted; at each ε the tracked coefficient is fitted as a
/// polynomial in the parameter; each polynomial coefficient is then
/// extrapolated to ε = 0, giving the limiting dependence.
pub fn parameter_dependence(
    base: &SystemSpec,
    features_du: &FeatureSet,
    features_dv: &FeatureSet,
    cfg: &ParamDepConfig,
) -> Result<ParamDependence> {
    let eps_grid = validate_grid(&cfg.eps_grid)?;
    if cfg.param_grid.len() < cfg.poly_degree + 1 {
        return Err(Error::config(format!(
            "parameter grid of {} values cannot determine a degree-{} polynomial",
            cfg.param_grid.len(),
            cfg.poly_degree
        )));
    }
    if cfg.param_grid.iter().any(|p| !p.is_finite()) {
        return Err(Error::config("parameter grid values must be finite"));
    }

    let cases: Vec<(usize, usize)> = (0..eps_grid.len())
        .flat_map(|i| (0..cfg.param_grid.len()).map(move |j| (i, j)))
        .collect();
    let coeffs: Vec<f64> = cases
        .par_iter()
        .map(|&(i, j)| {
            let eps = eps_grid[i];
            let spec = base.with_param(&cfg.param, cfg.param_grid[j])?;
            let domains = Domains::for_system(&spec);
            let sub_seed = derive_seed(cfg.seed, (i * cfg.param_grid.len() + j) as u64);
            let ds = sample_dataset(&spec, &domains, cfg.n, eps, cfg.sigma, sub_seed)
                .map_err(|e| annotate_eps(e, eps))?;
            let m = fit(&ds, features_du, features_dv).map_err(|e| annotate_eps(e, eps))?;
            let raw = match cfg.response {
                Response::Du => m.coeff_du(&cfg.feature),
                Response::Dv => m.coeff_dv(&cfg.feature),
            }
            .ok_or_else(|| {
                Error::config(format!("feature {} is not in the fitted basis", cfg.feature))
            })?;
            Ok(raw / eps)
        })
        .collect::<Result<_>>()?;

    let surface: Vec<Vec<f64>> = (0..eps_grid.len())
        .map(|i| {
            (0..cfg.param_grid.len())
                .map(|j| coeffs[i * cfg.param_grid.len() + j])
                .collect()
        })
        .collect();

    // Polynomial in the parameter at each ε.
    let per_eps_polys: Vec<Vec<f64>> = surface
        .iter()
        .map(|row| polyfit(&cfg.param_grid, row, cfg.poly_degree))
        .collect::<Result<_>>()?;

    // Extrapolate each polynomial coefficient to ε = 0.
    let mut limit_poly = Vec::with_capacity(cfg.poly_degree + 1);
    for k in 0..=cfg.poly_degree {
        let series: Vec<(f64, f64)> = eps_grid
            .iter()
            .zip(&per_eps_polys)
            .map(|(eps, poly)| (*eps, poly[k]))
            .collect();
        let fit = if series.len() >= 3 {
            auto_fit(&series)?
        } else {
            // Too few ε values to overdetermine a line: fall back to the
            // smallest-ε value as the limit estimate.
            SeriesFit { degree: 1, coeffs: vec![series[0].1, 0.0], residual: f64::NAN }
        };
        limit_poly.push(fit.intercept());
    }
    let dominant_degree = limit_poly
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
        .map(|(k, _)| k)
        .unwrap_or(0);

    Ok(ParamDependence {
        param: cfg.param.clone(),
        response: cfg.response,
        feature: cfg.feature.to_string(),
        param_grid: cfg.param_grid.clone(),
        eps_grid,
        surface,
        per_eps_polys,
        limit_poly,
        dominant_degree,
    })
}

/// Ordinary least-squares polynomial fit, intercept first.
fn polyfit(xs: &[f64], ys: &[f64], degree: usize) -> Result<Vec<f64>> {
    let n = xs.len();
    let a = DMatrix::from_fn(n, degree + 1, |i, j| xs[i].powi(j as i32));
    let y = DVector::from_column_slice(ys);
    let svd = a.svd(true, true);
    let c = svd
        .solve(&y, 1e-14)
        .map_err(|e| Error::Config(format!("polynomial fit failed: {e}")))?;
    Ok(c.iter().copied().collect())
}
