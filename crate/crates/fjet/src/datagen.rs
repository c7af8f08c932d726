//! Training-data generation: random update pairs with optional noise.
//!
//! A dataset is a bag of independent *update records*: a phase-space point
//! `(u, v)` and time `t` drawn uniformly from rectangular domains, together
//! with the changes `(Δu, Δv)` the system accrues over one step of size ε.
//! Ground truth comes from [`propagate_fine`](crate::integrate::propagate_fine)
//! (many small RK4 sub-steps), so the recorded updates are exact to well
//! below any effect the downstream regression resolves. Driven systems also
//! record the drive values `p(t)`, `ṗ(t)` at the start time.
//!
//! Measurement noise is modeled on the *states*, not the updates: the start
//! and end points each receive independent `N(0, (σε)²)` perturbations per
//! component and the differences are recomputed, so a record's noisy `Δu` is
//! correlated with its noisy `u`. A documented [`NoiseMode`] switch instead
//! reuses the start draws at the end point for sensitivity studies.
//!
//! Sampling is deterministic: record `i` uses stream `i` of a counter-based
//! ChaCha8 generator seeded with the dataset seed, so results are identical
//! across platforms, thread counts, and record-evaluation order. Within a
//! record the draw order is `u, v, t`, then any noise draws.

use std::io::Write as _;
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::JetPoint;
use crate::integrate::{self, Scheme, DEFAULT_EPS_BASE};
use crate::systems::{State, SystemKind, SystemSpec};
use crate::util::{fmt_f64, parse_csv_floats};

/// An open interval `(lo, hi)` used as a sampling range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    /// Creates a non-degenerate finite interval (`lo < hi`).
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if lo.is_finite() && hi.is_finite() && lo < hi {
            Ok(Interval { lo, hi })
        } else {
            Err(Error::config(format!("degenerate interval ({lo}, {hi})")))
        }
    }

    fn validate(&self) -> Result<()> {
        Interval::new(self.lo, self.hi).map(|_| ())
    }

    fn sample(&self, rng: &mut impl Rng) -> f64 {
        rng.random_range(self.lo..self.hi)
    }
}

/// Sampling domains for the three drawn quantities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Domains {
    pub u: Interval,
    pub v: Interval,
    pub t: Interval,
}

impl Domains {
    pub fn new(u: Interval, v: Interval, t: Interval) -> Result<Self> {
        u.validate()?;
        v.validate()?;
        t.validate()?;
        Ok(Domains { u, v, t })
    }

    /// Conventional training domains per system: `(−2, 2)²` for the harmonic
    /// oscillator, `(−π, π)²` for the pendulum, `(−3, 3)²` for Duffing.
    /// Start times cover two natural periods `(0, 4π/ω₀)` for the autonomous
    /// systems (where t is inert anyway) and two drive periods `(0, 4π/Ω)`
    /// for Duffing.
    pub fn for_system(spec: &SystemSpec) -> Self {
        use std::f64::consts::PI;
        let sym = |h: f64| Interval { lo: -h, hi: h };
        match *spec {
            SystemSpec::HarmonicOscillator { omega0, .. } => Domains {
                u: sym(2.0),
                v: sym(2.0),
                t: Interval { lo: 0.0, hi: 4.0 * PI / omega0 },
            },
            SystemSpec::Pendulum { omega0, .. } => Domains {
                u: sym(PI),
                v: sym(PI),
                t: Interval { lo: 0.0, hi: 4.0 * PI / omega0 },
            },
            SystemSpec::Duffing { forcing, .. } => Domains {
                u: sym(3.0),
                v: sym(3.0),
                t: Interval {
                    lo: 0.0,
                    // Degenerate drive frequencies fall back to a unit window.
                    hi: if forcing.frequency.abs() > f64::EPSILON {
                        4.0 * PI / forcing.frequency.abs()
                    } else {
                        1.0
                    },
                },
            },
        }
    }

    fn validate(&self) -> Result<()> {
        self.u.validate()?;
        self.v.validate()?;
        self.t.validate()
    }
}

/// One training sample: start time, start state, drive values at the start
/// time, and the changes over one ε step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateRecord {
    pub t: f64,
    pub u: f64,
    pub v: f64,
    pub p: f64,
    pub pdot: f64,
    pub du: f64,
    pub dv: f64,
}

impl UpdateRecord {
    /// The feature-evaluation point of this record (start of the step).
    pub fn jet_point(&self) -> JetPoint {
        JetPoint { t: self.t, u: self.u, v: self.v, p: self.p, pdot: self.pdot }
    }

    fn is_finite(&self) -> bool {
        [self.t, self.u, self.v, self.p, self.pdot, self.du, self.dv]
            .iter()
            .all(|x| x.is_finite())
    }
}

/// How measurement noise is attached to the two endpoints of an update pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    /// Independent draws for the start and end states (default): noisy `Δ`
    /// picks up `σε√2` of noise per component.
    FreshDraws,
    /// The end state reuses the start draws, so `Δ` stays noise-free while
    /// the recorded state still moves. Kept for sensitivity studies.
    SharedDraws,
}

/// How the end state of each update pair is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Propagator {
    /// Fine RK4 sub-stepping (ground truth); the default.
    Fine,
    /// A single step of the named scheme. Used to manufacture data whose
    /// exact update map is known in closed form.
    SingleStep(Scheme),
}

/// Knobs of [`sample_dataset_with`] beyond the core arguments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleOptions {
    pub eps_base: f64,
    pub noise: NoiseMode,
    pub propagator: Propagator,
}

impl Default for SampleOptions {
    fn default() -> Self {
        SampleOptions {
            eps_base: DEFAULT_EPS_BASE,
            noise: NoiseMode::FreshDraws,
            propagator: Propagator::Fine,
        }
    }
}

/// A sampled training set plus everything needed to regenerate it.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub records: Vec<UpdateRecord>,
    pub eps: f64,
    pub sigma: f64,
    pub seed: u64,
    pub system: SystemSpec,
    pub domains: Domains,
    pub options: SampleOptions,
}

/// Samples `n` update records with default options (fine-step ground truth,
/// independent noise draws).
pub fn sample_dataset(
    spec: &SystemSpec,
    domains: &Domains,
    n: usize,
    eps: f64,
    sigma: f64,
    seed: u64,
) -> Result<Dataset> {
    sample_dataset_with(spec, domains, n, eps, sigma, seed, SampleOptions::default())
}

/// Samples `n` update records. Records are generated in parallel but each is
/// a pure function of `(seed, record index)`, so the result is byte-identical
/// for a given argument tuple regardless of thread count.
pub fn sample_dataset_with(
    spec: &SystemSpec,
    domains: &Domains,
    n: usize,
    eps: f64,
    sigma: f64,
    seed: u64,
    options: SampleOptions,
) -> Result<Dataset> {
    domains.validate()?;
    if n == 0 {
        return Err(Error::config("dataset size n must be >= 1"));
    }
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::config(format!("sigma must be finite and >= 0, got {sigma}")));
    }
    // Validate eps (and its compatibility with eps_base) once up front so the
    // error doesn't surface from inside a worker.
    match options.propagator {
        Propagator::Fine => {
            let probe = State::new(0.0, 0.0).unwrap();
            integrate::propagate_fine(spec, 0.0, probe, eps, options.eps_base)?;
        }
        Propagator::SingleStep(scheme) => {
            let probe = State::new(0.0, 0.0).unwrap();
            integrate::step(scheme, spec, 0.0, probe, eps)?;
        }
    }

    let records: Vec<UpdateRecord> = (0..n)
        .into_par_iter()
        .map(|i| sample_record(spec, domains, eps, sigma, seed, i as u64, options))
        .collect::<Result<_>>()?;
    Ok(Dataset {
        records,
        eps,
        sigma,
        seed,
        system: *spec,
        domains: *domains,
        options,
    })
}

fn sample_record(
    spec: &SystemSpec,
    domains: &Domains,
    eps: f64,
    sigma: f64,
    seed: u64,
    index: u64,
    options: SampleOptions,
) -> Result<UpdateRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let u = domains.u.sample(&mut rng);
    let v = domains.v.sample(&mut rng);
    let t = domains.t.sample(&mut rng);
    let start = State::new(u, v)?;
    let end = match options.propagator {
        Propagator::Fine => integrate::propagate_fine(spec, t, start, eps, options.eps_base)?,
        Propagator::SingleStep(scheme) => integrate::step(scheme, spec, t, start, eps)?,
    };
    let (p, pdot) = match spec.forcing() {
        Some(f) => (f.p(t), f.p_dot(t)),
        None => (0.0, 0.0),
    };
    let record = UpdateRecord {
        t,
        u,
        v,
        p,
        pdot,
        du: end.u() - u,
        dv: end.v() - v,
    };
    apply_noise_with(&record, sigma, eps, options.noise, &mut rng)
}

/// Adds measurement noise to one record with independent endpoint draws; see
/// [`apply_noise_with`]. With `sigma == 0` the record is returned unchanged
/// and the generator is untouched.
pub fn apply_noise(
    rec: &UpdateRecord,
    sigma: f64,
    eps: f64,
    rng: &mut impl Rng,
) -> Result<UpdateRecord> {
    apply_noise_with(rec, sigma, eps, NoiseMode::FreshDraws, rng)
}

/// Adds `N(0, (σε)²)` measurement noise to the start and end states of an
/// update pair and recomputes the differences. Draw order is
/// `u_start, v_start, u_end, v_end` (the last two skipped in
/// [`NoiseMode::SharedDraws`]). `t`, `p`, `ṗ` are exact observables here and
/// stay untouched.
pub fn apply_noise_with(
    rec: &UpdateRecord,
    sigma: f64,
    eps: f64,
    mode: NoiseMode,
    rng: &mut impl Rng,
) -> Result<UpdateRecord> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::config(format!("sigma must be finite and >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(*rec);
    }
    let scale = sigma * eps;
    let normal = Normal::new(0.0, scale)
        .map_err(|e| Error::config(format!("bad noise scale sigma*eps = {scale}: {e}")))?;
    let nu_start = (normal.sample(rng), normal.sample(rng));
    let nu_end = match mode {
        NoiseMode::FreshDraws => (normal.sample(rng), normal.sample(rng)),
        NoiseMode::SharedDraws => nu_start,
    };
    let (u_end, v_end) = (rec.u + rec.du + nu_end.0, rec.v + rec.dv + nu_end.1);
    let (u, v) = (rec.u + nu_start.0, rec.v + nu_start.1);
    Ok(UpdateRecord {
        t: rec.t,
        u,
        v,
        p: rec.p,
        pdot: rec.pdot,
        du: u_end - u,
        dv: v_end - v,
    })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Feature-evaluation points of all records, in order.
    pub fn jet_points(&self) -> Vec<JetPoint> {
        self.records.iter().map(UpdateRecord::jet_point).collect()
    }

    /// Writes the record table as CSV (`t,u,v,p,pdot,du,dv`, 17 significant
    /// digits) plus a `.meta.json` sidecar carrying everything else needed to
    /// reproduce or reload the dataset.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut csv = String::with_capacity(self.records.len() * 64);
        csv.push_str("t,u,v,p,pdot,du,dv\n");
        for r in &self.records {
            for (i, x) in [r.t, r.u, r.v, r.p, r.pdot, r.du, r.dv].iter().enumerate() {
                if i > 0 {
                    csv.push(',');
                }
                csv.push_str(&fmt_f64(*x));
            }
            csv.push('\n');
        }
        write_file(path, csv.as_bytes())?;

        let meta = DatasetMeta {
            version: FORMAT_VERSION,
            system: self.system,
            domains: self.domains,
            n: self.records.len(),
            eps: self.eps,
            sigma: self.sigma,
            seed: self.seed,
            options: self.options,
        };
        let meta_path = meta_path_for(path);
        let body = serde_json::to_string_pretty(&meta).expect("metadata serializes");
        write_file(&meta_path, body.as_bytes())
    }

    /// Loads a dataset written by [`Dataset::save`]; expects the `.meta.json`
    /// sidecar next to the CSV.
    pub fn load(path: &Path) -> Result<Self> {
        let meta_path = meta_path_for(path);
        let meta_text = read_file(&meta_path)?;
        let meta: DatasetMeta = serde_json::from_str(&meta_text).map_err(|e| Error::FileFormat {
            path: meta_path.display().to_string(),
            reason: e.to_string(),
        })?;
        if meta.version != FORMAT_VERSION {
            return Err(Error::FileFormat {
                path: meta_path.display().to_string(),
                reason: format!("unsupported version {} (expected {FORMAT_VERSION})", meta.version),
            });
        }

        let body = read_file(path)?;
        let bad = |reason: String| Error::FileFormat {
            path: path.display().to_string(),
            reason,
        };
        let mut lines = body.lines();
        match lines.next() {
            Some("t,u,v,p,pdot,du,dv") => {}
            other => return Err(bad(format!("bad header {other:?}"))),
        }
        let mut records = Vec::with_capacity(meta.n);
        for (lineno, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let vals = parse_csv_floats(line, 7)
                .ok_or_else(|| bad(format!("malformed row at line {}", lineno + 2)))?;
            let rec = UpdateRecord {
                t: vals[0],
                u: vals[1],
                v: vals[2],
                p: vals[3],
                pdot: vals[4],
                du: vals[5],
                dv: vals[6],
            };
            if !rec.is_finite() {
                return Err(bad(format!("non-finite value at line {}", lineno + 2)));
            }
            records.push(rec);
        }
        if records.len() != meta.n {
            return Err(bad(format!(
                "row count {} does not match metadata n = {}",
                records.len(),
                meta.n
            )));
        }
        Ok(Dataset {
            records,
            eps: meta.eps,
            sigma: meta.sigma,
            seed: meta.seed,
            system: meta.system,
            domains: meta.domains,
            options: meta.options,
        })
    }
}

const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct DatasetMeta {
    version: u32,
    system: SystemSpec,
    domains: Domains,
    n: usize,
    eps: f64,
    sigma: f64,
    seed: u64,
    options: SampleOptions,
}

/// `foo.csv` → `foo.meta.json`.
fn meta_path_for(path: &Path) -> std::path::PathBuf {
    path.with_extension("meta.json")
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let io = |e| Error::io(path.display().to_string(), e);
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(io)?;
        }
    }
    let mut f = std::fs::File::create(path).map_err(io)?;
    f.write_all(bytes).map_err(io)
}

pub(crate) fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))
}

/// True for systems whose dynamics ignore `t`; their records carry
/// `p = ṗ = 0`.
pub fn is_autonomous(kind: SystemKind) -> bool {
    !matches!(kind, SystemKind::Duffing)
}
