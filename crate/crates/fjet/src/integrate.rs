//! Fixed-step integrators and series expansions of their update maps.
//!
//! Three explicit one-step schemes are provided — forward Euler, the midpoint
//! method, and the classical fourth-order Runge–Kutta method — plus
//! [`propagate_fine`], which advances over a step of size ε by taking many
//! small RK4 sub-steps. The fine propagator is the ground-truth oracle used
//! when sampling training data: its error is far below every effect being
//! measured.
//!
//! [`rk2_expansion`] and [`rk4_expansion_ho`] express one *whole* step of the
//! midpoint (resp. RK4) scheme as an explicit linear combination of state
//! features, i.e. as update maps `Δu = Σ cᵢ fᵢ`, `Δu̇ = Σ dᵢ fᵢ`. These are
//! the analytic counterparts of the regression-fitted maps and serve as
//! comparison models: their normalized coefficients, viewed as functions of
//! ε, are the reference slopes for extrapolation diagnostics, and their
//! residuals against fine-step data quantify how much accuracy a fitted map
//! gains over a scheme of the same order.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{Atom, FeatureExpr, JetPoint};
use crate::systems::{State, SystemSpec};

/// Default sub-step size for [`propagate_fine`].
pub const DEFAULT_EPS_BASE: f64 = 1e-3;

/// Explicit one-step integration schemes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    /// Forward Euler (first order).
    Euler,
    /// Midpoint method (second order).
    Rk2,
    /// Classical fourth-order Runge–Kutta.
    Rk4,
}

impl Scheme {
    /// Global order of accuracy (1, 2, 4).
    pub fn order(&self) -> u32 {
        match self {
            Scheme::Euler => 1,
            Scheme::Rk2 => 2,
            Scheme::Rk4 => 4,
        }
    }

    /// Order of the one-step (local truncation) error: `order() + 1`.
    pub fn local_error_order(&self) -> u32 {
        self.order() + 1
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Scheme::Euler => "euler",
            Scheme::Rk2 => "rk2",
            Scheme::Rk4 => "rk4",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler" => Ok(Scheme::Euler),
            "rk2" | "midpoint" => Ok(Scheme::Rk2),
            "rk4" => Ok(Scheme::Rk4),
            other => Err(Error::config(format!(
                "unknown scheme {other:?} (expected euler, rk2, or rk4)"
            ))),
        }
    }
}

fn check_eps(eps: f64) -> Result<()> {
    if eps.is_finite() && eps > 0.0 {
        Ok(())
    } else {
        Err(Error::config(format!("step size must be finite and > 0, got {eps}")))
    }
}

/// Advances `(t, s)` by one step of size `eps` with the given scheme.
/// Non-finite intermediates surface as overflow errors.
pub fn step(scheme: Scheme, spec: &SystemSpec, t: f64, s: State, eps: f64) -> Result<State> {
    check_eps(eps)?;
    let (u, v) = (s.u(), s.v());
    let f = |t: f64, u: f64, v: f64| {
        // The vector field needs a State, but mid-stage points may be
        // non-finite; evaluate the field on raw components instead and let
        // the final State::new catch overflow.
        match State::new(u, v) {
            Ok(s) => Ok(spec.eval_rhs(t, s)),
            Err(e) => Err(e),
        }
    };
    let (nu, nv) = match scheme {
        Scheme::Euler => {
            let (k1u, k1v) = f(t, u, v)?;
            (u + eps * k1u, v + eps * k1v)
        }
        Scheme::Rk2 => {
            let (k1u, k1v) = f(t, u, v)?;
            let (k2u, k2v) = f(t + 0.5 * eps, u + 0.5 * eps * k1u, v + 0.5 * eps * k1v)?;
            (u + eps * k2u, v + eps * k2v)
        }
        Scheme::Rk4 => {
            let (k1u, k1v) = f(t, u, v)?;
            let (k2u, k2v) = f(t + 0.5 * eps, u + 0.5 * eps * k1u, v + 0.5 * eps * k1v)?;
            let (k3u, k3v) = f(t + 0.5 * eps, u + 0.5 * eps * k2u, v + 0.5 * eps * k2v)?;
            let (k4u, k4v) = f(t + eps, u + eps * k3u, v + eps * k3v)?;
            (
                u + eps * (k1u + 2.0 * k2u + 2.0 * k3u + k4u) / 6.0,
                v + eps * (k1v + 2.0 * k2v + 2.0 * k3v + k4v) / 6.0,
            )
        }
    };
    State::new(nu, nv)
}

/// Advances over a step of size `eps` by `eps / eps_base` RK4 sub-steps of
/// size `eps_base`. `eps` must be a whole multiple of `eps_base` (to within
/// 1e−9); the sub-step count is exact, so repeated calls tile a trajectory
/// without drift.
pub fn propagate_fine(
    spec: &SystemSpec,
    t: f64,
    s: State,
    eps: f64,
    eps_base: f64,
) -> Result<State> {
    check_eps(eps)?;
    check_eps(eps_base)?;
    let m = (eps / eps_base).round();
    if m < 1.0 || (eps - m * eps_base).abs() > 1e-9 {
        return Err(Error::config(format!(
            "eps {eps} is not a whole multiple of eps_base {eps_base}"
        )));
    }
    let m = m as u64;
    let mut state = s;
    for j in 0..m {
        state = step(Scheme::Rk4, spec, t + j as f64 * eps_base, state, eps_base)?;
    }
    Ok(state)
}

/// A one-step update map written out as linear combinations of features,
/// with *raw* (un-normalized) coefficients: `Δu = Σ cᵢ fᵢ(x)`, and likewise
/// for `Δu̇`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpandedMap {
    pub du: Vec<(FeatureExpr, f64)>,
    pub dv: Vec<(FeatureExpr, f64)>,
}

impl ExpandedMap {
    /// Evaluates the map at a point, returning `(Δu, Δu̇)`.
    pub fn predict(&self, at: &JetPoint) -> (f64, f64) {
        let sum = |terms: &[(FeatureExpr, f64)]| {
            terms.iter().map(|(f, c)| c * f.evaluate(at)).sum::<f64>()
        };
        (sum(&self.du), sum(&self.dv))
    }
}

/// One midpoint step expanded to second order in ε as an update map over the
/// natural feature basis of each system. For the (linear) harmonic
/// oscillator the expansion *is* the midpoint step; for the pendulum and
/// Duffing systems it agrees with the literal step to O(ε³) per step.
///
/// Zero coefficients (features the scheme leaves untouched at this order,
/// such as `u²v` in the Duffing Δu row) are kept so the basis matches the
/// fitted models'.
pub fn rk2_expansion(spec: &SystemSpec, eps: f64) -> ExpandedMap {
    let e = eps;
    let u = FeatureExpr::atom(Atom::U);
    let v = FeatureExpr::atom(Atom::V);
    match *spec {
        SystemSpec::HarmonicOscillator { omega0, gamma } => {
            let w = omega0 * omega0;
            ExpandedMap {
                du: vec![(u.clone(), -e * e * w / 2.0), (v.clone(), e * (1.0 - e * gamma))],
                dv: vec![
                    (u, -e * w * (1.0 - e * gamma)),
                    (v, e * (-2.0 * gamma * (1.0 - e * gamma) - e * w / 2.0)),
                ],
            }
        }
        SystemSpec::Pendulum { omega0, gamma } => {
            let w = omega0 * omega0;
            let sin = FeatureExpr::atom(Atom::SinU);
            let vcos = v.mul(&FeatureExpr::atom(Atom::CosU));
            ExpandedMap {
                du: vec![
                    (v.clone(), e * (1.0 - e * gamma)),
                    (sin.clone(), -e * e * w / 2.0),
                    (vcos.clone(), 0.0),
                ],
                dv: vec![
                    (v, -2.0 * e * gamma * (1.0 - e * gamma)),
                    (sin, -e * w * (1.0 - e * gamma)),
                    (vcos, -e * e * w / 2.0),
                ],
            }
        }
        SystemSpec::Duffing { gamma, alpha, beta, .. } => {
            let u3 = FeatureExpr::from_factors([(Atom::U, 3)]);
            let u2v = FeatureExpr::from_factors([(Atom::U, 2), (Atom::V, 1)]);
            let p = FeatureExpr::atom(Atom::P);
            let pdot = FeatureExpr::atom(Atom::Pdot);
            let damp = 1.0 - e * gamma;
            ExpandedMap {
                du: vec![
                    (u.clone(), -e * e * alpha / 2.0),
                    (v.clone(), e * damp),
                    (u3.clone(), -e * e * beta / 2.0),
                    (u2v.clone(), 0.0),
                    (p.clone(), e * e / 2.0),
                    (pdot.clone(), 0.0),
                ],
                dv: vec![
                    (u, -e * alpha * damp),
                    (v, e * (-2.0 * gamma * damp - e * alpha / 2.0)),
                    (u3, -e * beta * damp),
                    (u2v, -1.5 * e * e * beta),
                    (p, e * damp),
                    (pdot, e * e / 2.0),
                ],
            }
        }
    }
}

/// One classical RK4 step on the harmonic oscillator as an update map over
/// `{u, v}`. The oscillator is linear, so the RK4 step is exactly the
/// degree-4 truncation of the matrix exponential, `Σ_{k≤4} (εA)^k / k!` with
/// `A = [[0, 1], [−ω₀², −2γ]]`; the coefficients below are the entries of
/// that truncation minus the identity. Errors for other systems.
pub fn rk4_expansion_ho(spec: &SystemSpec, eps: f64) -> Result<ExpandedMap> {
    let SystemSpec::HarmonicOscillator { omega0, gamma } = *spec else {
        return Err(Error::Unsupported(format!(
            "RK4 expansion is only available for the harmonic oscillator, not {}",
            spec.kind()
        )));
    };
    check_eps(eps)?;
    let a = nalgebra::Matrix2::new(0.0, 1.0, -omega0 * omega0, -2.0 * gamma);
    // εA + ε²A²/2 + ε³A³/6 + ε⁴A⁴/24, accumulated by Horner-style products.
    let mut term = a * eps;
    let mut total = term;
    for k in 2..=4u32 {
        term = term * a * (eps / f64::from(k));
        total += term;
    }
    let u = FeatureExpr::atom(Atom::U);
    let v = FeatureExpr::atom(Atom::V);
    Ok(ExpandedMap {
        du: vec![(u.clone(), total[(0, 0)]), (v.clone(), total[(0, 1)])],
        dv: vec![(u, total[(1, 0)]), (v, total[(1, 1)])],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn ho() -> SystemSpec {
        SystemSpec::harmonic(1.0, 0.0).unwrap()
    }

    fn state(u: f64, v: f64) -> State {
        State::new(u, v).unwrap()
    }

    #[test]
    fn step_rejects_bad_eps() {
        for eps in [0.0, -0.1, f64::NAN, f64::INFINITY] {
            assert!(step(Scheme::Euler, &ho(), 0.0, state(1.0, 0.0), eps).is_err());
        }
    }

    #[test]
    fn euler_step_on_oscillator() {
        let s = step(Scheme::Euler, &ho(), 0.0, state(1.0, 0.0), 0.1).unwrap();
        assert_eq!(s.u(), 1.0);
        assert_eq!(s.v(), -0.1);
    }

    #[test]
    fn rk2_step_on_oscillator() {
        // Midpoint on the linear system is (I + εA + ε²A²/2).
        let s = step(Scheme::Rk2, &ho(), 0.0, state(1.0, 0.0), 0.1).unwrap();
        assert_relative_eq!(s.u(), 0.995, epsilon = 1e-15);
        assert_relative_eq!(s.v(), -0.1, epsilon = 1e-15);
    }

    #[test]
    fn rk4_step_matches_closed_form_map() {
        // For u″ = −u one RK4 step from (1, 0) is
        // (1 − ε²/2 + ε⁴/24, −ε + ε³/6).
        let s = step(Scheme::Rk4, &ho(), 0.0, state(1.0, 0.0), 0.1).unwrap();
        assert_relative_eq!(s.u(), 0.9950041666666667, max_relative = 1e-15);
        assert_relative_eq!(s.v(), -0.09983333333333334, max_relative = 1e-15);
    }

    #[test]
    fn one_step_error_orders() {
        // log₂ of the error ratio under ε halving ≈ local error order
        // (2 for Euler, 3 for midpoint, 5 for RK4).
        let spec = ho();
        let init = state(1.0, 0.0);
        for scheme in [Scheme::Euler, Scheme::Rk2, Scheme::Rk4] {
            let err = |eps: f64| {
                let got = step(scheme, &spec, 0.0, init, eps).unwrap();
                let want = spec.exact_ho(init, eps).unwrap();
                ((got.u() - want.u()).powi(2) + (got.v() - want.v()).powi(2)).sqrt()
            };
            let (e1, e2) = (err(0.1), err(0.05));
            let slope = (e1 / e2).log2();
            let expected = f64::from(scheme.local_error_order());
            assert!(
                (slope - expected).abs() < 0.2,
                "{scheme}: observed order {slope}, expected {expected}"
            );
        }
    }

    #[test]
    fn overflow_is_reported_not_propagated() {
        // Wildly unstable parameters + huge step drive Euler to ±inf fast.
        let spec = SystemSpec::duffing(0.0, 0.0, -1.0, 0.0, 1.0).unwrap();
        let mut s = state(10.0, 0.0);
        let mut saw_overflow = false;
        for _ in 0..100 {
            match step(Scheme::Euler, &spec, 0.0, s, 10.0) {
                Ok(next) => s = next,
                Err(Error::Overflow(_)) => {
                    saw_overflow = true;
                    break;
                }
                Err(e) => panic!("unexpected error {e}"),
            }
        }
        assert!(saw_overflow);
    }

    #[test]
    fn fine_propagation_tracks_exact_solution() {
        let spec = SystemSpec::harmonic(1.0, 0.1).unwrap();
        let init = state(1.3, -0.4);
        let got = propagate_fine(&spec, 0.0, init, 0.1, 1e-3).unwrap();
        let want = spec.exact_ho(init, 0.1).unwrap();
        assert_relative_eq!(got.u(), want.u(), epsilon = 1e-13);
        assert_relative_eq!(got.v(), want.v(), epsilon = 1e-13);
    }

    #[test]
    fn fine_propagation_requires_whole_multiple() {
        let spec = ho();
        let init = state(1.0, 0.0);
        assert!(propagate_fine(&spec, 0.0, init, 0.0015, 1e-3).is_err());
        // A single sub-step degenerates to one RK4 step.
        let a = propagate_fine(&spec, 0.0, init, 1e-3, 1e-3).unwrap();
        let b = step(Scheme::Rk4, &spec, 0.0, init, 1e-3).unwrap();
        assert_eq!(a, b);
        // 0.007 = 7 × 0.001 must pass the multiple check despite rounding.
        assert!(propagate_fine(&spec, 0.0, init, 0.007, 1e-3).is_ok());
    }

    #[test]
    fn rk2_expansion_equals_literal_step_for_linear_system() {
        let spec = SystemSpec::harmonic(1.0, 0.1).unwrap();
        let map = rk2_expansion(&spec, 0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let s = state(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let at = JetPoint { t: 0.0, u: s.u(), v: s.v(), p: 0.0, pdot: 0.0 };
            let (du, dv) = map.predict(&at);
            let next = step(Scheme::Rk2, &spec, 0.0, s, 0.1).unwrap();
            assert_relative_eq!(s.u() + du, next.u(), epsilon = 1e-14);
            assert_relative_eq!(s.v() + dv, next.v(), epsilon = 1e-14);
        }
    }

    #[test]
    fn rk2_expansion_coefficients_at_reference_parameters() {
        // ω₀ = 1, γ = 0.1, ε = 0.1: Δu = −0.005u + 0.099v.
        let spec = SystemSpec::harmonic(1.0, 0.1).unwrap();
        let map = rk2_expansion(&spec, 0.1);
        assert_relative_eq!(map.du[0].1, -0.005, epsilon = 1e-15);
        assert_relative_eq!(map.du[1].1, 0.099, epsilon = 1e-15);
        assert_relative_eq!(map.dv[0].1, -0.099, epsilon = 1e-15);
        assert_relative_eq!(map.dv[1].1, -0.0248, epsilon = 1e-15);
    }

    #[test]
    fn rk2_expansion_approximates_nonlinear_steps_to_third_order() {
        for spec in [
            SystemSpec::pendulum(1.0, 0.1).unwrap(),
            SystemSpec::duffing(0.15, -1.0, 1.0, 0.28, 1.2).unwrap(),
        ] {
            let t0 = 0.3;
            let s = state(1.1, 0.7);
            let forcing = spec.forcing();
            let gap = |eps: f64| {
                let map = rk2_expansion(&spec, eps);
                let at = JetPoint {
                    t: t0,
                    u: s.u(),
                    v: s.v(),
                    p: forcing.map_or(0.0, |f| f.p(t0)),
                    pdot: forcing.map_or(0.0, |f| f.p_dot(t0)),
                };
                let (du, dv) = map.predict(&at);
                let next = step(Scheme::Rk2, &spec, t0, s, eps).unwrap();
                ((s.u() + du - next.u()).powi(2) + (s.v() + dv - next.v()).powi(2)).sqrt()
            };
            // Error between expansion and literal step shrinks like ε³.
            let ratio = gap(0.02) / gap(0.01);
            assert!(
                (ratio.log2() - 3.0).abs() < 0.4,
                "{}: observed order {}",
                spec.kind(),
                ratio.log2()
            );
        }
    }

    #[test]
    fn rk4_expansion_matches_literal_rk4_and_polynomial_forms() {
        let (omega0, gamma, eps) = (1.3, 0.2, 0.1);
        let spec = SystemSpec::harmonic(omega0, gamma).unwrap();
        let map = rk4_expansion_ho(&spec, eps).unwrap();

        // Against the literal step (exact for a linear system).
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let s = state(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let at = JetPoint { t: 0.0, u: s.u(), v: s.v(), p: 0.0, pdot: 0.0 };
            let (du, dv) = map.predict(&at);
            let next = step(Scheme::Rk4, &spec, 0.0, s, eps).unwrap();
            assert_relative_eq!(s.u() + du, next.u(), epsilon = 1e-13);
            assert_relative_eq!(s.v() + dv, next.v(), epsilon = 1e-13);
        }

        // Against the closed-form coefficient polynomials (normalized by ε).
        let (e, w) = (eps, omega0 * omega0);
        let g = gamma;
        let a1 = -(e / 6.0) * w * (3.0 - 2.0 * e * g + e * e * g * g - e * e * w / 4.0);
        let a2 = (6.0 - 6.0 * e * g + 4.0 * e * e * g * g
            - 2.0 * e * e * e * g * g * g
            - e * e * w
            + e * e * e * g * w)
            / 6.0;
        let b1 = -w * a2;
        let b2 = (-12.0 * g + 12.0 * e * g * g - 8.0 * e * e * g * g * g
            + 4.0 * e * e * e * g * g * g * g
            - 3.0 * e * w
            + e * e * e * w * w / 4.0
            + 4.0 * e * e * g * w
            - 3.0 * e * e * e * g * g * w)
            / 6.0;
        assert_relative_eq!(map.du[0].1, e * a1, max_relative = 1e-13);
        assert_relative_eq!(map.du[1].1, e * a2, max_relative = 1e-13);
        assert_relative_eq!(map.dv[0].1, e * b1, max_relative = 1e-13);
        assert_relative_eq!(map.dv[1].1, e * b2, max_relative = 1e-13);

        assert!(rk4_expansion_ho(&SystemSpec::pendulum(1.0, 0.0).unwrap(), 0.1).is_err());
    }
}
