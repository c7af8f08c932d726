//! Symbolic feature algebra for update-map regression.
//!
//! A *feature* is a product of integer powers of the atoms
//! `u, v, t, p, pdot, sin(u), cos(u)` — for example `v*cos(u)` or `u^2*v`.
//! Features keep a canonical form (factors sorted by atom, merged powers) so
//! that equality, hashing, and textual round-trips are exact. On top of the
//! single-feature operations (evaluation, symbolic differentiation,
//! `cos²u → 1 − sin²u` rewriting) this module provides ordered feature *sets*,
//! automatic generation of candidate bases by closing a seed set under
//! differentiation and forming bounded products, and data-driven pruning of
//! numerically collinear columns.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;

use crate::error::{Error, Result};

/// Hard cap on generated basis sizes; [`FeatureSet::superset`] refuses to
/// return more features than this.
pub const MAX_GENERATED_FEATURES: usize = 512;

/// Default relative tolerance for [`dedupe_collinear`]: a column whose
/// residual after projection onto the kept columns is below `tol × ‖column‖`
/// is considered linearly dependent.
pub const DEFAULT_COLLINEARITY_TOL: f64 = 1e-8;

/// The multiplicative building blocks of features. The declaration order is
/// the canonical factor order used for sorting and display.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Atom {
    U,
    V,
    T,
    P,
    Pdot,
    SinU,
    CosU,
}

impl Atom {
    pub fn symbol(&self) -> &'static str {
        match self {
            Atom::U => "u",
            Atom::V => "v",
            Atom::T => "t",
            Atom::P => "p",
            Atom::Pdot => "pdot",
            Atom::SinU => "sin(u)",
            Atom::CosU => "cos(u)",
        }
    }

    fn parse(s: &str) -> Option<Atom> {
        match s {
            "u" => Some(Atom::U),
            "v" => Some(Atom::V),
            "t" => Some(Atom::T),
            "p" => Some(Atom::P),
            "pdot" => Some(Atom::Pdot),
            "sin(u)" => Some(Atom::SinU),
            "cos(u)" => Some(Atom::CosU),
            _ => None,
        }
    }

    fn value(&self, at: &JetPoint) -> f64 {
        match self {
            Atom::U => at.u,
            Atom::V => at.v,
            Atom::T => at.t,
            Atom::P => at.p,
            Atom::Pdot => at.pdot,
            Atom::SinU => at.u.sin(),
            Atom::CosU => at.u.cos(),
        }
    }

    /// d(atom)/d(var) as `(coefficient, optional atom)`; `None` in the second
    /// slot means the derivative is the constant `coefficient`.
    fn derivative(&self, var: Var) -> Option<(f64, Option<Atom>)> {
        match (self, var) {
            (Atom::U, Var::U)
            | (Atom::V, Var::V)
            | (Atom::T, Var::T)
            | (Atom::P, Var::P)
            | (Atom::Pdot, Var::Pdot) => Some((1.0, None)),
            (Atom::SinU, Var::U) => Some((1.0, Some(Atom::CosU))),
            (Atom::CosU, Var::U) => Some((-1.0, Some(Atom::SinU))),
            _ => None,
        }
    }
}

/// Differentiation variables. `sin(u)` and `cos(u)` are functions of `u`, not
/// independent variables, so they do not appear here.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    U,
    V,
    T,
    P,
    Pdot,
}

impl Var {
    pub const ALL: [Var; 5] = [Var::U, Var::V, Var::T, Var::P, Var::Pdot];
}

/// A point of the extended phase space at which features are evaluated:
/// time, state, and the drive values carried alongside.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JetPoint {
    pub t: f64,
    pub u: f64,
    pub v: f64,
    pub p: f64,
    pub pdot: f64,
}

/// A canonicalized product of atom powers. The empty product is the constant
/// feature `1`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FeatureExpr {
    /// Sorted by atom, all powers ≥ 1.
    factors: Vec<(Atom, u32)>,
}

impl FeatureExpr {
    /// The constant feature `1`.
    pub fn one() -> Self {
        FeatureExpr { factors: Vec::new() }
    }

    /// A single atom to the first power.
    pub fn atom(a: Atom) -> Self {
        FeatureExpr { factors: vec![(a, 1)] }
    }

    /// Builds a feature from arbitrary (atom, power) pairs; factors are
    /// sorted and merged, zero powers dropped.
    pub fn from_factors(factors: impl IntoIterator<Item = (Atom, u32)>) -> Self {
        let mut list: Vec<(Atom, u32)> = factors.into_iter().filter(|&(_, k)| k > 0).collect();
        list.sort_by_key(|&(a, _)| a);
        let mut merged: Vec<(Atom, u32)> = Vec::with_capacity(list.len());
        for (a, k) in list {
            match merged.last_mut() {
                Some((last, pow)) if *last == a => *pow += k,
                _ => merged.push((a, k)),
            }
        }
        FeatureExpr { factors: merged }
    }

    /// Product of two features (canonical result).
    pub fn mul(&self, other: &FeatureExpr) -> FeatureExpr {
        FeatureExpr::from_factors(self.factors.iter().chain(&other.factors).copied())
    }

    /// Total degree: the sum of all powers.
    pub fn degree(&self) -> u32 {
        self.factors.iter().map(|&(_, k)| k).sum()
    }

    pub fn is_constant(&self) -> bool {
        self.factors.is_empty()
    }

    /// Power of a specific atom in this feature (0 if absent).
    pub fn power_of(&self, a: Atom) -> u32 {
        self.factors
            .iter()
            .find(|&&(atom, _)| atom == a)
            .map_or(0, |&(_, k)| k)
    }

    /// True if the feature involves the drive atoms `p` or `pdot`.
    pub fn uses_forcing(&self) -> bool {
        self.power_of(Atom::P) > 0 || self.power_of(Atom::Pdot) > 0
    }

    /// Numeric value at a point.
    pub fn evaluate(&self, at: &JetPoint) -> f64 {
        self.factors
            .iter()
            .map(|&(a, k)| a.value(at).powi(k as i32))
            .product()
    }

    /// Symbolic partial derivative, returned as a linear combination of
    /// canonical features with like terms combined and zero terms dropped.
    pub fn differentiate(&self, var: Var) -> Vec<(f64, FeatureExpr)> {
        let mut terms: Vec<(f64, FeatureExpr)> = Vec::new();
        for (i, &(a, k)) in self.factors.iter().enumerate() {
            let Some((coeff, replacement)) = a.derivative(var) else {
                continue;
            };
            // Product rule term: k * a^(k-1) * d(a) * (all other factors).
            let mut factors: Vec<(Atom, u32)> = Vec::with_capacity(self.factors.len() + 1);
            for (j, &(b, m)) in self.factors.iter().enumerate() {
                if j == i {
                    if m > 1 {
                        factors.push((b, m - 1));
                    }
                } else {
                    factors.push((b, m));
                }
            }
            if let Some(extra) = replacement {
                factors.push((extra, 1));
            }
            terms.push((f64::from(k) * coeff, FeatureExpr::from_factors(factors)));
        }
        combine_terms(terms)
    }

    /// Rewrites even powers of `cos(u)` via `cos²u = 1 − sin²u`, returning an
    /// equivalent linear combination free of `cos` powers above 1.
    pub fn normalize_cos_squares(&self) -> Vec<(f64, FeatureExpr)> {
        let k = self.power_of(Atom::CosU);
        if k < 2 {
            return vec![(1.0, self.clone())];
        }
        let (m, r) = (k / 2, k % 2); // cos^k = (cos²)^m · cos^r
        let rest = FeatureExpr::from_factors(
            self.factors
                .iter()
                .copied()
                .filter(|&(a, _)| a != Atom::CosU)
                .chain((r > 0).then_some((Atom::CosU, r))),
        );
        // (1 − sin²u)^m = Σ_i C(m,i) (−1)^i sin^(2i) u
        let mut terms = Vec::with_capacity(m as usize + 1);
        for i in 0..=m {
            let coeff = binomial(m, i) * if i % 2 == 0 { 1.0 } else { -1.0 };
            let sin_part = FeatureExpr::from_factors([(Atom::SinU, 2 * i)]);
            terms.push((coeff, rest.mul(&sin_part)));
        }
        combine_terms(terms)
    }
}

fn binomial(n: u32, k: u32) -> f64 {
    let mut acc = 1.0;
    for i in 0..k {
        acc = acc * f64::from(n - i) / f64::from(i + 1);
    }
    acc
}

/// Sums coefficients of equal features, drops zeros, and sorts by feature for
/// a deterministic order.
fn combine_terms(mut terms: Vec<(f64, FeatureExpr)>) -> Vec<(f64, FeatureExpr)> {
    terms.sort_by(|a, b| a.1.cmp(&b.1));
    let mut out: Vec<(f64, FeatureExpr)> = Vec::with_capacity(terms.len());
    for (c, f) in terms {
        match out.last_mut() {
            Some((acc, last)) if *last == f => *acc += c,
            _ => out.push((c, f)),
        }
    }
    out.retain(|&(c, _)| c != 0.0);
    out
}

impl fmt::Display for FeatureExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.factors.is_empty() {
            return f.write_str("1");
        }
        for (i, &(a, k)) in self.factors.iter().enumerate() {
            if i > 0 {
                f.write_str("*")?;
            }
            f.write_str(a.symbol())?;
            if k > 1 {
                write!(f, "^{k}")?;
            }
        }
        Ok(())
    }
}

impl FromStr for FeatureExpr {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() {
            return Err(parse_err(s, "empty feature"));
        }
        if s == "1" {
            return Ok(FeatureExpr::one());
        }
        let mut factors = Vec::new();
        for tok in s.split('*') {
            let tok = tok.trim();
            let (atom_str, power) = match tok.split_once('^') {
                Some((a, p)) => {
                    let power: u32 = p
                        .trim()
                        .parse()
                        .map_err(|_| parse_err(s, format!("bad power {p:?}")))?;
                    if power == 0 {
                        return Err(parse_err(s, "powers must be >= 1"));
                    }
                    (a.trim(), power)
                }
                None => (tok, 1),
            };
            let atom = Atom::parse(atom_str)
                .ok_or_else(|| parse_err(s, format!("unknown atom {atom_str:?}")))?;
            factors.push((atom, power));
        }
        Ok(FeatureExpr::from_factors(factors))
    }
}

fn parse_err(input: &str, reason: impl Into<String>) -> Error {
    Error::FeatureParse { input: input.to_owned(), reason: reason.into() }
}

/// An ordered collection of distinct features; the regression design matrix
/// has one column per element, in order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureSet {
    features: Vec<FeatureExpr>,
}

impl FeatureSet {
    /// Builds a set, dropping duplicates while preserving first-occurrence
    /// order.
    pub fn new(features: impl IntoIterator<Item = FeatureExpr>) -> Self {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for f in features {
            if seen.insert(f.clone()) {
                out.push(f);
            }
        }
        FeatureSet { features: out }
    }

    /// Parses a comma-separated feature list such as `"u, v, u^3, p"`.
    pub fn parse_list(s: &str) -> Result<Self> {
        let features: Vec<FeatureExpr> = s
            .split(',')
            .map(|tok| tok.parse())
            .collect::<Result<_>>()?;
        if features.is_empty() {
            return Err(parse_err(s, "empty feature list"));
        }
        Ok(FeatureSet::new(features))
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &FeatureExpr> {
        self.features.iter()
    }

    pub fn as_slice(&self) -> &[FeatureExpr] {
        &self.features
    }

    pub fn get(&self, i: usize) -> Option<&FeatureExpr> {
        self.features.get(i)
    }

    pub fn contains(&self, f: &FeatureExpr) -> bool {
        self.features.contains(f)
    }

    pub fn position(&self, f: &FeatureExpr) -> Option<usize> {
        self.features.iter().position(|g| g == f)
    }

    pub fn is_subset_of(&self, other: &FeatureSet) -> bool {
        self.features.iter().all(|f| other.contains(f))
    }

    pub fn to_strings(&self) -> Vec<String> {
        self.features.iter().map(|f| f.to_string()).collect()
    }

    /// Generates a candidate basis: the seed set is closed under up to two
    /// applications of the partial derivatives ∂u, ∂v, ∂t, ∂p, ∂pdot (new
    /// atoms like `cos(u)` from `sin(u)` enter this way), then all products
    /// of up to `max_n` generators with total degree ≤ `max_degree` are
    /// formed. Constants are dropped; the result is deduplicated and capped
    /// at [`MAX_GENERATED_FEATURES`].
    pub fn superset(base: &FeatureSet, max_n: usize, max_degree: u32) -> Result<FeatureSet> {
        if max_n == 0 {
            return Err(Error::config("superset requires max_n >= 1"));
        }
        // Close the generators under two rounds of differentiation.
        let mut generators: Vec<FeatureExpr> = Vec::new();
        let mut seen: HashSet<FeatureExpr> = HashSet::new();
        let mut frontier: Vec<FeatureExpr> = Vec::new();
        for f in base.iter() {
            if !f.is_constant() && seen.insert(f.clone()) {
                generators.push(f.clone());
                frontier.push(f.clone());
            }
        }
        for _round in 0..2 {
            let mut next = Vec::new();
            for f in &frontier {
                for var in Var::ALL {
                    for (_, g) in f.differentiate(var) {
                        if !g.is_constant() && seen.insert(g.clone()) {
                            generators.push(g.clone());
                            next.push(g);
                        }
                    }
                }
            }
            frontier = next;
        }

        // All products of up to max_n generators (with repetition), bounded
        // by total degree. Generation order — ascending product size, then
        // lexicographic generator indices — is deterministic.
        let mut out: Vec<FeatureExpr> = Vec::new();
        let mut emitted: HashSet<FeatureExpr> = HashSet::new();
        for n in 1..=max_n {
            products_of(&generators, n, 0, &FeatureExpr::one(), max_degree, &mut |prod| {
                if !prod.is_constant() && emitted.insert(prod.clone()) {
                    out.push(prod.clone());
                }
            });
            if out.len() > MAX_GENERATED_FEATURES {
                return Err(Error::config(format!(
                    "feature generation exceeded {MAX_GENERATED_FEATURES} features \
                     (max_n = {max_n}, max_degree = {max_degree}); tighten the bounds"
                )));
            }
        }
        Ok(FeatureSet::new(out))
    }
}

/// Recursively emits all products of exactly `n` generators drawn (with
/// repetition, non-decreasing index) from `gens[start..]`, pruning once the
/// degree bound is exceeded.
fn products_of(
    gens: &[FeatureExpr],
    n: usize,
    start: usize,
    acc: &FeatureExpr,
    max_degree: u32,
    emit: &mut impl FnMut(&FeatureExpr),
) {
    if n == 0 {
        emit(acc);
        return;
    }
    for (i, g) in gens.iter().enumerate().skip(start) {
        let prod = acc.mul(g);
        if prod.degree() > max_degree {
            continue;
        }
        products_of(gens, n - 1, i, &prod, max_degree, emit);
    }
}

impl fmt::Display for FeatureSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, feat) in self.features.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{feat}")?;
        }
        Ok(())
    }
}

/// Applies [`FeatureExpr::normalize_cos_squares`] across a set: every feature
/// carrying `cos²u` is replaced by the features of its rewriting, and the
/// result is deduplicated preserving order. Use before collinearity pruning
/// so that trig-identity duplicates collapse symbolically where possible.
pub fn eliminate_cos_powers(fs: &FeatureSet) -> FeatureSet {
    FeatureSet::new(
        fs.iter()
            .flat_map(|f| f.normalize_cos_squares().into_iter().map(|(_, g)| g)),
    )
}

/// Drops numerically collinear columns. Features are visited in order; each
/// column (the feature evaluated at every point) is projected onto the span
/// of the columns kept so far, and the feature is dropped when the residual
/// norm falls below `tol × ‖column‖` (or the column is identically zero).
/// Returns `(kept, dropped)`.
///
/// Requires at least as many points as features so that "dependent" is
/// meaningful.
pub fn dedupe_collinear(
    fs: &FeatureSet,
    points: &[JetPoint],
    tol: f64,
) -> Result<(FeatureSet, FeatureSet)> {
    if points.len() < fs.len() {
        return Err(Error::config(format!(
            "collinearity check needs at least as many points ({}) as features ({})",
            points.len(),
            fs.len()
        )));
    }
    if !(tol.is_finite() && tol > 0.0) {
        return Err(Error::config(format!("collinearity tolerance must be positive, got {tol}")));
    }
    let n = points.len();
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for f in fs.iter() {
        let mut col = DVector::from_iterator(n, points.iter().map(|p| f.evaluate(p)));
        let norm0 = col.norm();
        if norm0 <= f64::MIN_POSITIVE {
            dropped.push(f.clone());
            continue;
        }
        // Two projection passes (classical re-orthogonalization) keep the
        // basis orthonormal enough for a reliable small-residual test.
        for _ in 0..2 {
            for q in &basis {
                let c = q.dot(&col);
                col.axpy(-c, q, 1.0);
            }
        }
        let residual = col.norm();
        if residual < tol * norm0 {
            dropped.push(f.clone());
        } else {
            basis.push(col / residual);
            kept.push(f.clone());
        }
    }
    Ok((FeatureSet::new(kept), FeatureSet::new(dropped)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn feat(s: &str) -> FeatureExpr {
        s.parse().unwrap()
    }

    #[test]
    fn canonical_form_sorts_and_merges() {
        let f = FeatureExpr::from_factors([(Atom::V, 1), (Atom::U, 1), (Atom::U, 1)]);
        assert_eq!(f.to_string(), "u^2*v");
        assert_eq!(f.degree(), 3);
        let g = FeatureExpr::atom(Atom::CosU).mul(&FeatureExpr::atom(Atom::V));
        assert_eq!(g.to_string(), "v*cos(u)");
    }

    #[test]
    fn display_parse_round_trip() {
        for s in ["1", "u", "v*cos(u)", "u^2*v", "sin(u)*cos(u)", "v^3", "p", "pdot", "t^2*p"] {
            let f = feat(s);
            assert_eq!(f.to_string(), s);
            assert_eq!(feat(&f.to_string()), f);
        }
        // Non-canonical input parses to canonical form.
        assert_eq!(feat("v * u * u").to_string(), "u^2*v");
        assert_eq!(feat("cos(u)*sin(u)").to_string(), "sin(u)*cos(u)");
    }

    #[test]
    fn parse_rejects_garbage() {
        for s in ["", "q", "u^0", "u^-1", "u**v", "u^", "sin(v)", "2*u"] {
            assert!(s.parse::<FeatureExpr>().is_err(), "{s:?} should not parse");
        }
    }

    #[test]
    fn evaluation() {
        let at = JetPoint {
            t: 0.0,
            u: std::f64::consts::FRAC_PI_2,
            v: 3.0,
            p: 0.0,
            pdot: 0.0,
        };
        assert_relative_eq!(feat("v*sin(u)^2").evaluate(&at), 3.0, epsilon = 1e-15);
        assert_relative_eq!(feat("1").evaluate(&at), 1.0);
        assert_relative_eq!(
            feat("u^2*v").evaluate(&at),
            3.0 * std::f64::consts::FRAC_PI_2.powi(2),
            epsilon = 1e-14
        );
    }

    #[test]
    fn symbolic_derivatives() {
        let check = |f: &str, var: Var, expect: &[(f64, &str)]| {
            let got = feat(f).differentiate(var);
            let want: Vec<(f64, FeatureExpr)> =
                expect.iter().map(|&(c, s)| (c, feat(s))).collect();
            assert_eq!(got, want, "d({f})/d{var:?}");
        };
        check("u^2*v", Var::U, &[(2.0, "u*v")]);
        check("u^2*v", Var::V, &[(1.0, "u^2")]);
        check("v*sin(u)", Var::U, &[(1.0, "v*cos(u)")]);
        check("v*sin(u)", Var::V, &[(1.0, "sin(u)")]);
        check("cos(u)", Var::U, &[(-1.0, "sin(u)")]);
        check("sin(u)^2", Var::U, &[(2.0, "sin(u)*cos(u)")]);
        check("u", Var::T, &[]);
        check("t^2*p", Var::T, &[(2.0, "t*p")]);
        check("t^2*p", Var::P, &[(1.0, "t^2")]);
        check("u", Var::U, &[(1.0, "1")]);
        // u*sin(u) has two u-dependent factors; product rule gives two terms.
        check("u*sin(u)", Var::U, &[(1.0, "u*cos(u)"), (1.0, "sin(u)")]);
    }

    #[test]
    fn derivative_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let exprs = ["u^2*v", "v*sin(u)", "sin(u)*cos(u)", "u*v^2*cos(u)", "t*p^2", "v^3"];
        let h = 1e-6;
        for s in exprs {
            let f = feat(s);
            for _ in 0..20 {
                let at = JetPoint {
                    t: rng.random_range(0.1..2.0),
                    u: rng.random_range(-1.5..1.5),
                    v: rng.random_range(-1.5..1.5),
                    p: rng.random_range(-1.0..1.0),
                    pdot: rng.random_range(-1.0..1.0),
                };
                for var in Var::ALL {
                    let sym: f64 = f
                        .differentiate(var)
                        .iter()
                        .map(|(c, g)| c * g.evaluate(&at))
                        .sum();
                    let mut plus = at;
                    let mut minus = at;
                    match var {
                        Var::U => {
                            plus.u += h;
                            minus.u -= h;
                        }
                        Var::V => {
                            plus.v += h;
                            minus.v -= h;
                        }
                        Var::T => {
                            plus.t += h;
                            minus.t -= h;
                        }
                        Var::P => {
                            plus.p += h;
                            minus.p -= h;
                        }
                        Var::Pdot => {
                            plus.pdot += h;
                            minus.pdot -= h;
                        }
                    }
                    let fd = (f.evaluate(&plus) - f.evaluate(&minus)) / (2.0 * h);
                    assert!(
                        (sym - fd).abs() <= 1e-6 * (1.0 + sym.abs()),
                        "{s}, {var:?}: symbolic {sym} vs fd {fd}"
                    );
                }
            }
        }
    }

    #[test]
    fn cos_square_rewrite() {
        // cos²u → 1 − sin²u
        let terms = feat("cos(u)^2").normalize_cos_squares();
        assert_eq!(terms, vec![(1.0, feat("1")), (-1.0, feat("sin(u)^2"))]);
        // v·cos³u → v·cosu − v·sin²u·cosu (terms in canonical feature order)
        let terms = feat("v*cos(u)^3").normalize_cos_squares();
        assert_eq!(
            terms,
            vec![(-1.0, feat("v*sin(u)^2*cos(u)")), (1.0, feat("v*cos(u)"))]
        );
        // Odd single power untouched.
        assert_eq!(
            feat("v*cos(u)").normalize_cos_squares(),
            vec![(1.0, feat("v*cos(u)"))]
        );
        // Numeric equivalence on random points.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = feat("v*cos(u)^4");
        for _ in 0..50 {
            let at = JetPoint {
                t: 0.0,
                u: rng.random_range(-3.0..3.0),
                v: rng.random_range(-2.0..2.0),
                p: 0.0,
                pdot: 0.0,
            };
            let rewritten: f64 = f
                .normalize_cos_squares()
                .iter()
                .map(|(c, g)| c * g.evaluate(&at))
                .sum();
            assert_relative_eq!(rewritten, f.evaluate(&at), epsilon = 1e-12);
        }
    }

    #[test]
    fn eliminate_cos_powers_collapses_identity_duplicates() {
        let fs = FeatureSet::new([feat("v"), feat("v*sin(u)^2"), feat("v*cos(u)^2")]);
        let out = eliminate_cos_powers(&fs);
        assert_eq!(out, FeatureSet::new([feat("v"), feat("v*sin(u)^2")]));
    }

    #[test]
    fn superset_linear_base_stays_linear() {
        let base = FeatureSet::new([feat("u"), feat("v")]);
        for max_n in 1..=4 {
            let s = FeatureSet::superset(&base, max_n, 1).unwrap();
            assert_eq!(s, base, "max_n = {max_n}");
        }
        // Degree 3 with pairs/triples adds the cubic monomials.
        let s = FeatureSet::superset(&base, 3, 3).unwrap();
        for f in ["u", "v", "u^2", "u*v", "v^2", "u^3", "u^2*v", "u*v^2", "v^3"] {
            assert!(s.contains(&feat(f)), "missing {f}");
        }
    }

    #[test]
    fn superset_closes_pendulum_base_under_differentiation() {
        let base = FeatureSet::new([feat("v"), feat("sin(u)")]);
        let s1 = FeatureSet::superset(&base, 1, 4).unwrap();
        // d(sin u)/du = cos u joins the generators.
        assert_eq!(
            s1,
            FeatureSet::new([feat("v"), feat("sin(u)"), feat("cos(u)")])
        );
        let s4 = FeatureSet::superset(&base, 4, 4).unwrap();
        for f in [
            "v",
            "sin(u)",
            "v*cos(u)",
            "sin(u)*cos(u)",
            "v*sin(u)^2",
            "v^2*sin(u)",
            "v^3*cos(u)",
        ] {
            assert!(s4.contains(&feat(f)), "missing {f}");
        }
    }

    #[test]
    fn superset_nesting_in_max_n() {
        let base = FeatureSet::new([feat("v"), feat("sin(u)")]);
        let s1 = FeatureSet::superset(&base, 1, 4).unwrap();
        let s2 = FeatureSet::superset(&base, 2, 4).unwrap();
        let s4 = FeatureSet::superset(&base, 4, 4).unwrap();
        assert!(s1.is_subset_of(&s2));
        assert!(s2.is_subset_of(&s4));
        assert!(base.is_subset_of(&s1));
    }

    #[test]
    fn superset_covers_duffing_cubic_basis() {
        let base = FeatureSet::new([feat("u"), feat("v"), feat("p"), feat("pdot")]);
        let s = FeatureSet::superset(&base, 3, 3).unwrap();
        for f in ["u", "v", "u^3", "u^2*v", "u*v^2", "v^3", "p", "pdot"] {
            assert!(s.contains(&feat(f)), "missing {f}");
        }
    }

    #[test]
    fn superset_guards_against_blowup() {
        let base = FeatureSet::new([
            feat("u"),
            feat("v"),
            feat("t"),
            feat("p"),
            feat("pdot"),
            feat("sin(u)"),
            feat("cos(u)"),
        ]);
        // 7 generators, products up to size 5: 791 multisets > 512.
        let err = FeatureSet::superset(&base, 5, 5);
        assert!(matches!(err, Err(Error::Config(_))), "expected blow-up guard");
    }

    #[test]
    fn collinear_columns_are_dropped_in_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let points: Vec<JetPoint> = (0..500)
            .map(|_| JetPoint {
                t: 0.0,
                u: rng.random_range(-3.0..3.0),
                v: rng.random_range(-3.0..3.0),
                p: 0.0,
                pdot: 0.0,
            })
            .collect();
        // v·cos²u = v − v·sin²u numerically; the later column loses.
        let fs = FeatureSet::new([feat("v"), feat("v*sin(u)^2"), feat("v*cos(u)^2")]);
        let (kept, dropped) =
            dedupe_collinear(&fs, &points, DEFAULT_COLLINEARITY_TOL).unwrap();
        assert_eq!(kept, FeatureSet::new([feat("v"), feat("v*sin(u)^2")]));
        assert_eq!(dropped, FeatureSet::new([feat("v*cos(u)^2")]));
        // Zero columns (drive features on undriven data) are dropped too.
        let fs = FeatureSet::new([feat("u"), feat("p")]);
        let (kept, dropped) = dedupe_collinear(&fs, &points, 1e-8).unwrap();
        assert_eq!(kept, FeatureSet::new([feat("u")]));
        assert_eq!(dropped, FeatureSet::new([feat("p")]));
        // Independent columns survive.
        let fs = FeatureSet::new([feat("u"), feat("v"), feat("u*v")]);
        let (kept, dropped) = dedupe_collinear(&fs, &points, 1e-8).unwrap();
        assert_eq!(kept.len(), 3);
        assert!(dropped.is_empty());
    }

    #[test]
    fn collinearity_check_needs_enough_points() {
        let points = vec![JetPoint { t: 0.0, u: 1.0, v: 2.0, p: 0.0, pdot: 0.0 }];
        let fs = FeatureSet::new([feat("u"), feat("v")]);
        assert!(dedupe_collinear(&fs, &points, 1e-8).is_err());
    }
}
