//! Benchmark dynamical systems.
//!
//! All systems are second-order, written in first-order form on the phase
//! space `(u, v)` with `v = u̇`:
//!
//! - harmonic oscillator: `ü + 2γu̇ + ω₀²u = 0`
//! - pendulum:            `ü + 2γu̇ + ω₀² sin u = 0`
//! - Duffing oscillator:  `ü + 2γu̇ + αu + βu³ = p(t)`, `p(t) = A cos Ωt`
//!
//! The damped harmonic oscillator additionally has a closed-form solution
//! (used as ground truth in tests and error curves), and the undriven systems
//! have conserved/decaying energies used by stability measurements.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A phase-space point `(u, v)` with `v = u̇`. Both components are guaranteed
/// finite by construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct State {
    u: f64,
    v: f64,
}

impl State {
    /// Creates a state, rejecting NaN or infinite components.
    pub fn new(u: f64, v: f64) -> Result<Self> {
        if u.is_finite() && v.is_finite() {
            Ok(State { u, v })
        } else {
            Err(Error::Overflow(format!("state ({u}, {v})")))
        }
    }

    pub fn u(&self) -> f64 {
        self.u
    }

    pub fn v(&self) -> f64 {
        self.v
    }
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.u, self.v)
    }
}

/// Sinusoidal external drive `p(t) = A cos Ωt`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Forcing {
    pub amplitude: f64,
    pub frequency: f64,
}

impl Forcing {
    /// Drive value `p(t)`.
    pub fn p(&self, t: f64) -> f64 {
        self.amplitude * (self.frequency * t).cos()
    }

    /// Drive rate `ṗ(t)`.
    pub fn p_dot(&self, t: f64) -> f64 {
        -self.amplitude * self.frequency * (self.frequency * t).sin()
    }
}

/// Discriminant for the three supported systems.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SystemKind {
    HarmonicOscillator,
    Pendulum,
    Duffing,
}

impl SystemKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            SystemKind::HarmonicOscillator => "ho",
            SystemKind::Pendulum => "pendulum",
            SystemKind::Duffing => "duffing",
        }
    }
}

impl fmt::Display for SystemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SystemKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ho" | "harmonic" | "harmonic_oscillator" => Ok(SystemKind::HarmonicOscillator),
            "pendulum" => Ok(SystemKind::Pendulum),
            "duffing" => Ok(SystemKind::Duffing),
            other => Err(Error::config(format!(
                "unknown system {other:?} (expected ho, pendulum, or duffing)"
            ))),
        }
    }
}

/// A fully parameterized system. Construct with [`SystemSpec::harmonic`],
/// [`SystemSpec::pendulum`], [`SystemSpec::duffing`], or
/// [`SystemSpec::from_params`]; parameters are validated once at construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SystemRepr", into = "SystemRepr")]
pub enum SystemSpec {
    HarmonicOscillator { omega0: f64, gamma: f64 },
    Pendulum { omega0: f64, gamma: f64 },
    Duffing { gamma: f64, alpha: f64, beta: f64, forcing: Forcing },
}

impl SystemSpec {
    /// Damped harmonic oscillator `ü + 2γu̇ + ω₀²u = 0`. Requires ω₀ > 0.
    pub fn harmonic(omega0: f64, gamma: f64) -> Result<Self> {
        check_omega0(omega0)?;
        check_finite("gamma", gamma)?;
        Ok(SystemSpec::HarmonicOscillator { omega0, gamma })
    }

    /// Damped pendulum `ü + 2γu̇ + ω₀² sin u = 0`. Requires ω₀ > 0.
    pub fn pendulum(omega0: f64, gamma: f64) -> Result<Self> {
        check_omega0(omega0)?;
        check_finite("gamma", gamma)?;
        Ok(SystemSpec::Pendulum { omega0, gamma })
    }

    /// Driven Duffing oscillator `ü + 2γu̇ + αu + βu³ = A cos Ωt`.
    pub fn duffing(gamma: f64, alpha: f64, beta: f64, amplitude: f64, frequency: f64) -> Result<Self> {
        check_finite("gamma", gamma)?;
        check_finite("alpha", alpha)?;
        check_finite("beta", beta)?;
        check_finite("A", amplitude)?;
        check_finite("Omega", frequency)?;
        Ok(SystemSpec::Duffing {
            gamma,
            alpha,
            beta,
            forcing: Forcing { amplitude, frequency },
        })
    }

    /// Builds a system from a kind tag plus named parameter overrides.
    /// Parameters not mentioned keep their defaults (ω₀ = 1, γ = 0 for the
    /// oscillators; γ = 0.15, α = −1, β = 1, A = 0.28, Ω = 1.2 for Duffing,
    /// the chaotic regime studied throughout). Unknown names are an error.
    pub fn from_params<'a>(
        kind: SystemKind,
        overrides: impl IntoIterator<Item = (&'a str, f64)>,
    ) -> Result<Self> {
        let mut params: BTreeMap<&'static str, f64> = match kind {
            SystemKind::HarmonicOscillator | SystemKind::Pendulum => {
                [("omega0", 1.0), ("gamma", 0.0)].into_iter().collect()
            }
            SystemKind::Duffing => [
                ("gamma", 0.15),
                ("alpha", -1.0),
                ("beta", 1.0),
                ("A", 0.28),
                ("Omega", 1.2),
            ]
            .into_iter()
            .collect(),
        };
        for (name, value) in overrides {
            let slot = params.iter_mut().find(|(k, _)| **k == name);
            match slot {
                Some((_, v)) => *v = value,
                None => {
                    return Err(Error::config(format!(
                        "unknown parameter {name:?} for system {kind}"
                    )))
                }
            }
        }
        match kind {
            SystemKind::HarmonicOscillator => Self::harmonic(params["omega0"], params["gamma"]),
            SystemKind::Pendulum => Self::pendulum(params["omega0"], params["gamma"]),
            SystemKind::Duffing => Self::duffing(
                params["gamma"],
                params["alpha"],
                params["beta"],
                params["A"],
                params["Omega"],
            ),
        }
    }

    /// Returns a copy with one named parameter replaced; used by parameter
    /// sweeps. Unknown names are an error.
    pub fn with_param(&self, name: &str, value: f64) -> Result<Self> {
        let mut params = self.params();
        let slot = params.iter_mut().find(|(k, _)| *k == name);
        match slot {
            Some((_, v)) => *v = value,
            None => {
                return Err(Error::config(format!(
                    "unknown parameter {name:?} for system {}",
                    self.kind()
                )))
            }
        }
        let owned: Vec<(&str, f64)> = params.into_iter().collect();
        Self::from_params(self.kind(), owned)
    }

    pub fn kind(&self) -> SystemKind {
        match self {
            SystemSpec::HarmonicOscillator { .. } => SystemKind::HarmonicOscillator,
            SystemSpec::Pendulum { .. } => SystemKind::Pendulum,
            SystemSpec::Duffing { .. } => SystemKind::Duffing,
        }
    }

    /// The system's parameters as (name, value) pairs, in a fixed order.
    pub fn params(&self) -> Vec<(&'static str, f64)> {
        match *self {
            SystemSpec::HarmonicOscillator { omega0, gamma }
            | SystemSpec::Pendulum { omega0, gamma } => {
                vec![("omega0", omega0), ("gamma", gamma)]
            }
            SystemSpec::Duffing { gamma, alpha, beta, forcing } => vec![
                ("gamma", gamma),
                ("alpha", alpha),
                ("beta", beta),
                ("A", forcing.amplitude),
                ("Omega", forcing.frequency),
            ],
        }
    }

    /// The external drive, if the system has one.
    pub fn forcing(&self) -> Option<Forcing> {
        match self {
            SystemSpec::Duffing { forcing, .. } => Some(*forcing),
            _ => None,
        }
    }

    /// Evaluates the first-order vector field: returns `(u̇, v̇) = (v, G)`.
    pub fn eval_rhs(&self, t: f64, s: State) -> (f64, f64) {
        let (u, v) = (s.u(), s.v());
        let g = match *self {
            SystemSpec::HarmonicOscillator { omega0, gamma } => {
                -2.0 * gamma * v - omega0 * omega0 * u
            }
            SystemSpec::Pendulum { omega0, gamma } => -2.0 * gamma * v - omega0 * omega0 * u.sin(),
            SystemSpec::Duffing { gamma, alpha, beta, forcing } => {
                -2.0 * gamma * v - alpha * u - beta * u * u * u + forcing.p(t)
            }
        };
        (v, g)
    }

    /// Mechanical energy where one is defined: `v²/2 + ω₀²u²/2` for the
    /// oscillator, `v²/2 + ω₀²(1 − cos u)` for the pendulum. The driven
    /// Duffing system has no conserved energy, so `None`.
    pub fn energy(&self, s: State) -> Option<f64> {
        let (u, v) = (s.u(), s.v());
        match *self {
            SystemSpec::HarmonicOscillator { omega0, .. } => {
                Some(0.5 * v * v + 0.5 * omega0 * omega0 * u * u)
            }
            SystemSpec::Pendulum { omega0, .. } => {
                Some(0.5 * v * v + omega0 * omega0 * (1.0 - u.cos()))
            }
            SystemSpec::Duffing { .. } => None,
        }
    }

    /// Closed-form solution of the (underdamped) harmonic oscillator at time
    /// `t`, starting from `init` at time 0. Errors for other systems and for
    /// the overdamped regime γ ≥ ω₀.
    pub fn exact_ho(&self, init: State, t: f64) -> Result<State> {
        let (omega0, gamma) = match *self {
            SystemSpec::HarmonicOscillator { omega0, gamma } => (omega0, gamma),
            _ => {
                return Err(Error::Unsupported(format!(
                    "closed-form solution is only available for the harmonic oscillator, not {}",
                    self.kind()
                )))
            }
        };
        if gamma >= omega0 {
            return Err(Error::Unsupported(format!(
                "closed-form solution requires the underdamped regime (gamma {gamma} >= omega0 {omega0})"
            )));
        }
        let wd = (omega0 * omega0 - gamma * gamma).sqrt();
        let (c1, c2) = (init.u(), (init.v() + gamma * init.u()) / wd);
        let (cos, sin) = ((wd * t).cos(), (wd * t).sin());
        let decay = (-gamma * t).exp();
        let u = decay * (c1 * cos + c2 * sin);
        let v = decay * ((c2 * wd - gamma * c1) * cos - (c1 * wd + gamma * c2) * sin);
        State::new(u, v)
    }
}

/// Serialized shape shared by dataset metadata, model files, and manifests:
/// a kind tag plus a sorted name → value map.
#[derive(Serialize, Deserialize)]
struct SystemRepr {
    kind: String,
    params: BTreeMap<String, f64>,
}

impl From<SystemSpec> for SystemRepr {
    fn from(spec: SystemSpec) -> Self {
        SystemRepr {
            kind: spec.kind().as_str().to_owned(),
            params: spec
                .params()
                .into_iter()
                .map(|(k, v)| (k.to_owned(), v))
                .collect(),
        }
    }
}

impl TryFrom<SystemRepr> for SystemSpec {
    type Error = Error;

    fn try_from(repr: SystemRepr) -> Result<Self> {
        let kind: SystemKind = repr.kind.parse()?;
        let overrides: Vec<(&str, f64)> =
            repr.params.iter().map(|(k, v)| (k.as_str(), *v)).collect();
        SystemSpec::from_params(kind, overrides)
    }
}

fn check_omega0(omega0: f64) -> Result<()> {
    if omega0.is_finite() && omega0 > 0.0 {
        Ok(())
    } else {
        Err(Error::config(format!("omega0 must be finite and > 0, got {omega0}")))
    }
}

fn check_finite(name: &str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::config(format!("parameter {name} must be finite, got {value}")))
    }
}
