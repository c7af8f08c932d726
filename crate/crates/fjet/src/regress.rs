//! Least-squares fitting of update maps over feature bases.
//!
//! For a dataset of update records, [`fit`] solves two independent ordinary
//! least squares problems — one per response — expressing `Δu` and `Δv` as
//! linear combinations of evaluated features. No regularization and no
//! intercept are used: the update of a well-sampled smooth system has no
//! constant term, and the ε-sweep in [`recover`](crate::recover) plays the
//! role regularization usually would. A diagnostic option can append an
//! explicit constant feature to verify its coefficient fits ≈ 0.
//!
//! Fitted coefficients are stored *raw*: the full multiplier of each feature
//! in the one-step update. The normalized coefficient (raw / ε), which tends
//! to the corresponding term of the governing equation as ε → 0, is computed
//! on demand.
//!
//! The design matrix must be numerically full-rank; dependent columns are
//! reported by feature name so the caller can prune them (see
//! [`dedupe_collinear`](crate::features::dedupe_collinear)).

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::datagen::{read_file, write_file, Dataset};
use crate::error::{Error, Result};
use crate::features::{FeatureExpr, FeatureSet, JetPoint};
use crate::integrate::ExpandedMap;
use crate::util::fmt_f64;

/// Relative residual below which a design-matrix column counts as linearly
/// dependent and the fit refuses to proceed. Deliberately tighter than the
/// default pruning tolerance: pruning is advisory, this is a hard error.
pub const RANK_TOL: f64 = 1e-10;

/// A fitted one-step update map: `Δu = Σ cᵢ fᵢ(x)`, `Δv = Σ dⱼ gⱼ(x)`, with
/// independent feature bases per response. Immutable after construction;
/// coefficient counts match feature counts and all values are finite.
#[derive(Debug, Clone, PartialEq)]
pub struct FJetModel {
    eps: f64,
    sigma: f64,
    system: Option<String>,
    seed: Option<u64>,
    refined_from: Option<String>,
    features_du: FeatureSet,
    coeffs_du: Vec<f64>,
    features_dv: FeatureSet,
    coeffs_dv: Vec<f64>,
}

impl FJetModel {
    /// Assembles a model from parts, validating shape and finiteness.
    pub fn new(
        eps: f64,
        features_du: FeatureSet,
        coeffs_du: Vec<f64>,
        features_dv: FeatureSet,
        coeffs_dv: Vec<f64>,
    ) -> Result<Self> {
        if !(eps.is_finite() && eps > 0.0) {
            return Err(Error::config(format!("model eps must be finite and > 0, got {eps}")));
        }
        if features_du.len() != coeffs_du.len() || features_dv.len() != coeffs_dv.len() {
            return Err(Error::config(format!(
                "coefficient/feature count mismatch: du {} vs {}, dv {} vs {}",
                coeffs_du.len(),
                features_du.len(),
                coeffs_dv.len(),
                features_dv.len()
            )));
        }
        if coeffs_du.iter().chain(&coeffs_dv).any(|c| !c.is_finite()) {
            return Err(Error::config("model coefficients must be finite"));
        }
        Ok(FJetModel {
            eps,
            sigma: 0.0,
            system: None,
            seed: None,
            refined_from: None,
            features_du,
            coeffs_du,
            features_dv,
            coeffs_dv,
        })
    }

    /// Converts an analytically expanded integrator map into a model, so the
    /// expansion can be simulated and diagnosed exactly like a fitted one.
    pub fn from_expansion(map: &ExpandedMap, eps: f64) -> Result<Self> {
        let (fdu, cdu): (Vec<_>, Vec<_>) = map.du.iter().cloned().unzip();
        let (fdv, cdv): (Vec<_>, Vec<_>) = map.dv.iter().cloned().unzip();
        FJetModel::new(eps, FeatureSet::new(fdu), cdu, FeatureSet::new(fdv), cdv)
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Provenance: the kind tag of the system the training data came from.
    pub fn system(&self) -> Option<&str> {
        self.system.as_deref()
    }

    /// Provenance: the training dataset's seed.
    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// Provenance: where a refined model came from (set by the refinement
    /// stage; `None` for direct fits).
    pub fn refined_from(&self) -> Option<&str> {
        self.refined_from.as_deref()
    }

    pub fn features_du(&self) -> &FeatureSet {
        &self.features_du
    }

    pub fn features_dv(&self) -> &FeatureSet {
        &self.features_dv
    }

    /// Raw coefficients of the Δu row, aligned with `features_du`.
    pub fn coeffs_du(&self) -> &[f64] {
        &self.coeffs_du
    }

    /// Raw coefficients of the Δv row, aligned with `features_dv`.
    pub fn coeffs_dv(&self) -> &[f64] {
        &self.coeffs_dv
    }

    /// Raw coefficient of a specific Δu feature.
    pub fn coeff_du(&self, f: &FeatureExpr) -> Option<f64> {
        self.features_du.position(f).map(|i| self.coeffs_du[i])
    }

    /// Raw coefficient of a specific Δv feature.
    pub fn coeff_dv(&self, f: &FeatureExpr) -> Option<f64> {
        self.features_dv.position(f).map(|i| self.coeffs_dv[i])
    }

    /// Normalized (raw / ε) Δu coefficients; these are the quantities swept
    /// and extrapolated to ε → 0.
    pub fn normalized_du(&self) -> Vec<f64> {
        self.coeffs_du.iter().map(|c| c / self.eps).collect()
    }

    /// Normalized (raw / ε) Δv coefficients.
    pub fn normalized_dv(&self) -> Vec<f64> {
        self.coeffs_dv.iter().map(|c| c / self.eps).collect()
    }

    /// True if any feature of either response involves the drive atoms.
    pub fn uses_forcing(&self) -> bool {
        self.features_du
            .iter()
            .chain(self.features_dv.iter())
            .any(FeatureExpr::uses_forcing)
    }

    /// Predicted `(Δu, Δv)` at a point.
    pub fn predict(&self, at: &JetPoint) -> (f64, f64) {
        let dot = |features: &FeatureSet, coeffs: &[f64]| {
            features
                .iter()
                .zip(coeffs)
                .map(|(f, c)| c * f.evaluate(at))
                .sum::<f64>()
        };
        (
            dot(&self.features_du, &self.coeffs_du),
            dot(&self.features_dv, &self.coeffs_dv),
        )
    }

    /// A copy with replaced coefficient vectors (same features); used by the
    /// refinement stage. Shapes and finiteness are re-validated.
    pub fn with_coefficients(&self, coeffs_du: Vec<f64>, coeffs_dv: Vec<f64>) -> Result<Self> {
        let mut m = FJetModel::new(
            self.eps,
            self.features_du.clone(),
            coeffs_du,
            self.features_dv.clone(),
            coeffs_dv,
        )?;
        m.sigma = self.sigma;
        m.system = self.system.clone();
        m.seed = self.seed;
        m.refined_from = self.refined_from.clone();
        Ok(m)
    }

    /// Records refinement provenance on this model.
    pub fn set_refined_from(&mut self, origin: impl Into<String>) {
        self.refined_from = Some(origin.into());
    }

    /// Saves the model as versioned JSON; floats round-trip exactly.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = ModelFile {
            version: MODEL_VERSION,
            system: self.system.clone(),
            eps: self.eps,
            sigma: self.sigma,
            seed: self.seed,
            refined_from: self.refined_from.clone(),
            features_du: self.features_du.to_strings(),
            coeffs_du: self.coeffs_du.clone(),
            features_dv: self.features_dv.to_strings(),
            coeffs_dv: self.coeffs_dv.clone(),
        };
        let body = serde_json::to_string_pretty(&file).expect("model serializes");
        write_file(path, body.as_bytes())
    }

    /// Loads a model written by [`FJetModel::save`].
    pub fn load(path: &Path) -> Result<Self> {
        let text = read_file(path)?;
        let bad = |reason: String| Error::FileFormat {
            path: path.display().to_string(),
            reason,
        };
        let file: ModelFile = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
        if file.version != MODEL_VERSION {
            return Err(bad(format!(
                "unsupported version {} (expected {MODEL_VERSION})",
                file.version
            )));
        }
        let parse_set = |strs: &[String]| -> Result<FeatureSet> {
            let feats: Vec<FeatureExpr> =
                strs.iter().map(|s| s.parse()).collect::<Result<_>>()?;
            Ok(FeatureSet::new(feats))
        };
        let mut m = FJetModel::new(
            file.eps,
            parse_set(&file.features_du)?,
            file.coeffs_du,
            parse_set(&file.features_dv)?,
            file.coeffs_dv,
        )
        .map_err(|e| bad(e.to_string()))?;
        m.sigma = file.sigma;
        m.system = file.system;
        m.seed = file.seed;
        m.refined_from = file.refined_from;
        Ok(m)
    }
}

const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    system: Option<String>,
    eps: f64,
    sigma: f64,
    seed: Option<u64>,
    refined_from: Option<String>,
    features_du: Vec<String>,
    coeffs_du: Vec<f64>,
    features_dv: Vec<String>,
    coeffs_dv: Vec<f64>,
}

/// Options for [`fit_with_options`].
#[derive(Debug, Clone, Copy, Default)]
pub struct FitOptions {
    /// Append a constant feature `1` to both bases as a diagnostic; its
    /// fitted coefficient should come out ≈ 0 on well-formed data.
    pub intercept: bool,
}

/// Fits update maps by per-response ordinary least squares. Provenance
/// (system tag, σ, seed, ε) is taken from the dataset.
pub fn fit(ds: &Dataset, features_du: &FeatureSet, features_dv: &FeatureSet) -> Result<FJetModel> {
    fit_with_options(ds, features_du, features_dv, FitOptions::default())
}

/// [`fit`] with diagnostics. See [`FitOptions`].
pub fn fit_with_options(
    ds: &Dataset,
    features_du: &FeatureSet,
    features_dv: &FeatureSet,
    options: FitOptions,
) -> Result<FJetModel> {
    if features_du.is_empty() || features_dv.is_empty() {
        return Err(Error::config("feature sets must be non-empty"));
    }
    let mut features_du = features_du.clone();
    let mut features_dv = features_dv.clone();
    if options.intercept {
        let with_one = |fs: &FeatureSet| {
            FeatureSet::new(fs.iter().cloned().chain([FeatureExpr::one()]))
        };
        features_du = with_one(&features_du);
        features_dv = with_one(&features_dv);
    }
    let max_features = features_du.len().max(features_dv.len());
    if ds.len() <= max_features {
        return Err(Error::config(format!(
            "need more records ({}) than features ({max_features}) to fit",
            ds.len()
        )));
    }
    let points = ds.jet_points();

    let du: Vec<f64> = ds.records.iter().map(|r| r.du).collect();
    let dv: Vec<f64> = ds.records.iter().map(|r| r.dv).collect();
    let coeffs_du = solve_ols(&features_du, &points, &du)?;
    let coeffs_dv = solve_ols(&features_dv, &points, &dv)?;

    let mut model = FJetModel::new(ds.eps, features_du, coeffs_du, features_dv, coeffs_dv)?;
    model.sigma = ds.sigma;
    model.system = Some(ds.system.kind().as_str().to_owned());
    model.seed = Some(ds.seed);
    Ok(model)
}

/// Solves one OLS problem over evaluated feature columns via SVD, erroring on
/// numerically dependent columns (named).
fn solve_ols(features: &FeatureSet, points: &[JetPoint], target: &[f64]) -> Result<Vec<f64>> {
    let (n, m) = (points.len(), features.len());
    let a = DMatrix::from_fn(n, m, |i, j| features.get(j).unwrap().evaluate(&points[i]));
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::Overflow("feature evaluation over dataset".into()));
    }

    // Name dependent columns before factorizing: project each column onto
    // the span of its predecessors (with one re-orthogonalization pass) and
    // flag tiny residuals.
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut dependent: Vec<String> = Vec::new();
    for j in 0..m {
        let mut col = a.column(j).clone_owned();
        let norm0 = col.norm();
        if norm0 <= f64::MIN_POSITIVE {
            dependent.push(features.get(j).unwrap().to_string());
            continue;
        }
        for _ in 0..2 {
            for q in &basis {
                let c = q.dot(&col);
                col.axpy(-c, q, 1.0);
            }
        }
        let residual = col.norm();
        if residual < RANK_TOL * norm0 {
            dependent.push(features.get(j).unwrap().to_string());
        } else {
            basis.push(col / residual);
        }
    }
    if !dependent.is_empty() {
        return Err(Error::RankDeficient(dependent.join(", ")));
    }

    let y = DVector::from_column_slice(target);
    let svd = a.svd(true, true);
    let c = svd
        .solve(&y, 0.0)
        .map_err(|e| Error::Config(format!("least-squares solve failed: {e}")))?;
    Ok(c.iter().copied().collect())
}

/// One record's prediction error, `predicted − observed`, tagged with the
/// record's position for plotting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualRecord {
    pub u: f64,
    pub v: f64,
    pub res_du: f64,
    pub res_dv: f64,
}

/// Per-record residuals plus their maxima over the sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualMap {
    pub records: Vec<ResidualRecord>,
    pub max_abs_du: f64,
    pub max_abs_dv: f64,
}

impl ResidualMap {
    /// Writes `u,v,res_du,res_dv` rows at full precision.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::with_capacity(self.records.len() * 48);
        out.push_str("u,v,res_du,res_dv\n");
        for r in &self.records {
            for (i, x) in [r.u, r.v, r.res_du, r.res_dv].iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&fmt_f64(*x));
            }
            out.push('\n');
        }
        write_file(path, out.as_bytes())
    }
}

/// Evaluates a model's residuals over a dataset sharing its ε.
pub fn residuals(m: &FJetModel, ds: &Dataset) -> Result<ResidualMap> {
    if (m.eps() - ds.eps).abs() > 1e-12 {
        return Err(Error::config(format!(
            "model eps {} does not match dataset eps {}",
            m.eps(),
            ds.eps
        )));
    }
    let mut records = Vec::with_capacity(ds.len());
    let (mut max_du, mut max_dv) = (0.0_f64, 0.0_f64);
    for r in &ds.records {
        let (pdu, pdv) = m.predict(&r.jet_point());
        let rec = ResidualRecord {
            u: r.u,
            v: r.v,
            res_du: pdu - r.du,
            res_dv: pdv - r.dv,
        };
        max_du = max_du.max(rec.res_du.abs());
        max_dv = max_dv.max(rec.res_dv.abs());
        records.push(rec);
    }
    Ok(ResidualMap { records, max_abs_du: max_du, max_abs_dv: max_dv })
}
