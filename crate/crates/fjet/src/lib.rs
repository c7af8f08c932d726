//! Reconstruction of ordinary differential equations from trajectory data.
//!
//! The central object is a *fitted update map*: given samples of a second-order
//! system recorded as phase-space points `(u, u̇)` together with the changes
//! `(Δu, Δu̇)` accrued over a small time step ε, we regress each change onto a
//! basis of nonlinear features of the state (and, for driven systems, of the
//! forcing). The fitted map is itself a usable integrator; more interestingly,
//! the fitted coefficients divided by ε converge, as ε → 0, to the right-hand
//! side of the underlying differential equation. Sweeping ε and extrapolating
//! therefore *recovers the governing equation* from data alone.
//!
//! The crate is organized as a pipeline:
//!
//! - [`systems`]: the benchmark systems (damped harmonic oscillator, pendulum,
//!   driven Duffing oscillator), their exact/closed-form solutions where
//!   available, and energies.
//! - [`integrate`]: fixed-step Euler / midpoint / classical Runge–Kutta
//!   steppers, a fine-step reference propagator, and series expansions of the
//!   midpoint update map used as comparison models.
//! - [`features`]: a small symbolic algebra for products of state atoms
//!   (`u`, `v`, `t`, `p`, `ṗ`, `sin u`, `cos u`) with canonical forms,
//!   differentiation, automatic basis generation, and collinearity pruning.
//! - [`datagen`]: sampling of update-pair datasets, optional measurement
//!   noise, and CSV persistence.
//! - [`regress`]: ordinary least squares fits of update maps over a feature
//!   basis, model files, and residual diagnostics.
//! - [`recover`]: ε sweeps, extrapolation of normalized coefficients to ε = 0,
//!   comparison against the true generating equations, and parameter-
//!   dependence scans.
//! - [`simulate`]: long-horizon trajectory generation from fitted models,
//!   error curves against reference solutions, and energy-growth (stability)
//!   measurements.
//! - [`refine`]: a second optimization stage that nudges fitted coefficients
//!   to minimize whole-orbit error against a data trajectory.
//! - [`cli`]: the `fjet` command-line tool wrapping all of the above.

pub mod cli;
pub mod datagen;
pub mod error;
pub mod features;
pub mod integrate;
pub mod recover;
pub mod refine;
pub mod regress;
pub mod simulate;
pub mod systems;
mod util;

pub use error::{Error, Result};

pub use datagen::{Dataset, Domains, Interval, NoiseMode, UpdateRecord};
pub use features::{Atom, FeatureExpr, FeatureSet, JetPoint, Var};
pub use integrate::Scheme;
pub use recover::{CoefficientSeries, Response, SeriesFit, Sweep};
pub use refine::{OrbitData, RefineConfig};
pub use regress::FJetModel;
pub use simulate::{SourceTag, StabilityReport, Trajectory};
pub use systems::{Forcing, State, SystemKind, SystemSpec};
