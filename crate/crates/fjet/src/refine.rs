//! Second-stage model refinement against an observed orbit.
//!
//! A model fitted from noisy update data can be polished by comparing the
//! orbit it *generates* against reference observations of a single
//! trajectory and greedily nudging the coefficients. The cost is a weighted
//! sum of squared position and velocity mismatches at the observation times;
//! proposals are joint Gaussian perturbations of all coefficients, accepted
//! only when the cost strictly decreases, with the perturbation scale
//! shrinking after a run of rejections. This is a cheap, reproducible local
//! search — no gradients, no annealing.
//!
//! Observations need not be regularly spaced, but each observation time must
//! land on the model's ε grid (within 1e−9) measured from the orbit start.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use std::path::Path;

use crate::datagen::write_file;
use crate::error::{Error, Result};
use crate::regress::FJetModel;
use crate::simulate::{generate, Trajectory};
use crate::systems::{Forcing, State};
use crate::util::fmt_f64;

/// Settings for [`refine_model`]. Defaults: full velocity weight, 2000
/// proposals, initial relative scale 1e−3 halving after 50 consecutive
/// rejections.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineConfig {
    /// Weight of the velocity mismatch in the cost (0 fits positions only;
    /// 1 also tracks the energy closely).
    pub alpha: f64,
    /// Number of proposals to evaluate.
    pub iterations: usize,
    /// Initial relative perturbation scale η.
    pub init_scale: f64,
    /// Multiplier applied to η after `patience` consecutive rejections.
    pub decay: f64,
    /// Number of consecutive rejections that triggers a decay of η.
    pub patience: usize,
    /// Seed of the proposal stream.
    pub seed: u64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            alpha: 1.0,
            iterations: 2000,
            init_scale: 1e-3,
            decay: 0.5,
            patience: 50,
            seed: 0,
        }
    }
}

impl RefineConfig {
    fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::config(format!("alpha must be ≥ 0, got {}", self.alpha)));
        }
        if !(self.init_scale.is_finite() && self.init_scale > 0.0) {
            return Err(Error::config(format!(
                "init_scale must be > 0, got {}",
                self.init_scale
            )));
        }
        if !(self.decay.is_finite() && 0.0 < self.decay && self.decay < 1.0) {
            return Err(Error::config(format!(
                "decay must lie in (0, 1), got {}",
                self.decay
            )));
        }
        if self.patience == 0 {
            return Err(Error::config("patience must be ≥ 1"));
        }
        Ok(())
    }
}

/// Reference observations of one trajectory: `(t, u, v)` samples with
/// strictly increasing, finite times.
#[derive(Debug, Clone, PartialEq)]
pub struct OrbitData {
    points: Vec<(f64, f64, f64)>,
}

impl OrbitData {
    pub fn new(points: Vec<(f64, f64, f64)>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::config("orbit data must be non-empty"));
        }
        if points.iter().any(|(t, u, v)| !(t.is_finite() && u.is_finite() && v.is_finite())) {
            return Err(Error::config("orbit data must be finite"));
        }
        if points.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::config("orbit data times must be strictly increasing"));
        }
        Ok(OrbitData { points })
    }

    /// Adopts a trajectory's samples as observations.
    pub fn from_trajectory(traj: &Trajectory) -> Self {
        OrbitData {
            points: traj.points.iter().map(|p| (p.t, p.u, p.v)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[(f64, f64, f64)] {
        &self.points
    }
}

/// Maps an observation time onto the whole-step grid anchored at `t0`.
fn grid_index(t: f64, t0: f64, eps: f64) -> Result<usize> {
    let k = ((t - t0) / eps).round();
    if k < 0.0 || (t - (t0 + k * eps)).abs() > 1e-9 {
        return Err(Error::config(format!(
            "observation time {t} is not reachable by whole ε={eps} steps from t0={t0}"
        )));
    }
    Ok(k as usize)
}

/// Weighted squared mismatch between the orbit the model generates from
/// `(t0, init)` and the observations: `Σ (u_d − û)² + α (v_d − v̂)²`.
///
/// Divergent generation yields an infinite cost rather than an error, so
/// the refinement search can treat wild proposals as ordinary rejections.
pub fn orbit_cost(
    m: &FJetModel,
    data: &OrbitData,
    init: State,
    t0: f64,
    alpha: f64,
    forcing: Option<&Forcing>,
) -> Result<f64> {
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(Error::config(format!("alpha must be ≥ 0, got {alpha}")));
    }
    let indices: Vec<usize> = data
        .points
        .iter()
        .map(|(t, _, _)| grid_index(*t, t0, m.eps()))
        .collect::<Result<_>>()?;
    let steps = *indices.last().expect("orbit data is non-empty");
    let traj = generate(m, init, t0, steps, forcing)?;
    if traj.truncated {
        return Ok(f64::INFINITY);
    }
    let mut cost = 0.0;
    for ((_, u_d, v_d), &k) in data.points.iter().zip(&indices) {
        let p = &traj.points[k];
        cost += (u_d - p.u).powi(2) + alpha * (v_d - p.v).powi(2);
    }
    Ok(cost)
}

/// Greedy coefficient refinement. Returns the best model found and the
/// running best cost after each proposal (history[0] is the initial cost,
/// so the history is non-increasing and has `iterations + 1` entries).
///
/// Proposals perturb every coefficient jointly:
/// `c′ = c·(1 + η ξ) + η·10⁻³·ξ′` with ξ, ξ′ standard normal. A proposal is
/// accepted only if its cost strictly decreases; after `patience`
/// consecutive rejections η is multiplied by `decay`.
pub fn refine_model(
    m: &FJetModel,
    data: &OrbitData,
    init: State,
    t0: f64,
    cfg: &RefineConfig,
    forcing: Option<&Forcing>,
) -> Result<(FJetModel, Vec<f64>)> {
    cfg.validate()?;
    let initial_cost = orbit_cost(m, data, init, t0, cfg.alpha, forcing)?;
    if !initial_cost.is_finite() {
        return Err(Error::config(
            "initial model diverges on the data horizon; refinement needs a finite starting cost",
        ));
    }
    let mut history = Vec::with_capacity(cfg.iterations + 1);
    history.push(initial_cost);
    if cfg.iterations == 0 {
        return Ok((m.clone(), history));
    }

    let n_du = m.coeffs_du().len();
    let mut current: Vec<f64> = m.coeffs_du().iter().chain(m.coeffs_dv()).copied().collect();
    let mut best_model = m.clone();
    let mut best_cost = initial_cost;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut eta = cfg.init_scale;
    let mut rejections = 0usize;

    for _ in 0..cfg.iterations {
        let proposal: Vec<f64> = current
            .iter()
            .map(|&c| {
                let xi: f64 = rng.sample(StandardNormal);
                let xi_abs: f64 = rng.sample(StandardNormal);
                c * (1.0 + eta * xi) + eta * 1e-3 * xi_abs
            })
            .collect();
        let cost = match best_model
            .with_coefficients(proposal[..n_du].to_vec(), proposal[n_du..].to_vec())
        {
            Ok(candidate) => {
                match orbit_cost(&candidate, data, init, t0, cfg.alpha, forcing)? {
                    c if c < best_cost => {
                        current = proposal;
                        best_model = candidate;
                        best_cost = c;
                        rejections = 0;
                        c
                    }
                    _ => {
                        rejections += 1;
                        best_cost
                    }
                }
            }
            // A non-finite proposal is just a rejected move.
            Err(_) => {
                rejections += 1;
                best_cost
            }
        };
        if rejections >= cfg.patience {
            eta *= cfg.decay;
            rejections = 0;
        }
        history.push(cost);
    }
    best_model.set_refined_from("greedy-refinement");
    Ok((best_model, history))
}

/// Runs [`refine_model`] once per seed in parallel and keeps the best
/// outcome: lowest final cost, ties broken by the lowest seed. Returns the
/// winning model, its history, and the winning seed.
pub fn refine_multi_seed(
    m: &FJetModel,
    data: &OrbitData,
    init: State,
    t0: f64,
    cfg: &RefineConfig,
    forcing: Option<&Forcing>,
    seeds: &[u64],
) -> Result<(FJetModel, Vec<f64>, u64)> {
    if seeds.is_empty() {
        return Err(Error::config("at least one seed is required"));
    }
    let runs: Vec<(u64, FJetModel, Vec<f64>)> = seeds
        .par_iter()
        .map(|&seed| {
            let run_cfg = RefineConfig { seed, ..*cfg };
            let (model, history) = refine_model(m, data, init, t0, &run_cfg, forcing)?;
            Ok((seed, model, history))
        })
        .collect::<Result<_>>()?;
    let best = runs
        .into_iter()
        .min_by(|a, b| {
            let (ca, cb) = (*a.2.last().unwrap(), *b.2.last().unwrap());
            ca.partial_cmp(&cb).unwrap().then(a.0.cmp(&b.0))
        })
        .unwrap();
    Ok((best.1, best.2, best.0))
}

/// Writes a cost history as `iteration,cost` rows.
pub fn write_cost_history_csv(history: &[f64], path: &Path) -> Result<()> {
    let mut out = String::with_capacity(history.len() * 28);
    out.push_str("iteration,cost\n");
    for (i, c) in history.iter().enumerate() {
        out.push_str(&format!("{i},{}\n", fmt_f64(*c)));
    }
    write_file(path, out.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{sample_dataset, Domains};
    use crate::features::FeatureSet;
    use crate::recover::error_measure;
    use crate::regress::fit;
    use crate::simulate::exact_trajectory;
    use crate::systems::SystemSpec;

    fn uv() -> FeatureSet {
        FeatureSet::parse_list("u,v").unwrap()
    }

    fn state(u: f64, v: f64) -> State {
        State::new(u, v).unwrap()
    }

    fn ho_model(gamma: f64, sigma: f64, seed: u64) -> (SystemSpec, FJetModel) {
        let spec = SystemSpec::harmonic(1.0, gamma).unwrap();
        let ds = sample_dataset(&spec, &Domains::for_system(&spec), 400, 0.1, sigma, seed).unwrap();
        let m = fit(&ds, &uv(), &uv()).unwrap();
        (spec, m)
    }

    #[test]
    fn self_generated_data_has_zero_cost() {
        let (_, m) = ho_model(0.1, 0.0, 5);
        let traj = generate(&m, state(1.0, 0.0), 0.0, 100, None).unwrap();
        let data = OrbitData::from_trajectory(&traj);
        let cost = orbit_cost(&m, &data, state(1.0, 0.0), 0.0, 1.0, None).unwrap();
        assert!(cost <= 1e-20, "{cost}");
    }

    #[test]
    fn alpha_zero_ignores_velocity_mismatch() {
        let (_, m) = ho_model(0.1, 0.0, 5);
        let traj = generate(&m, state(1.0, 0.0), 0.0, 50, None).unwrap();
        let mut shifted: Vec<(f64, f64, f64)> =
            traj.points.iter().map(|p| (p.t, p.u, p.v + 0.5)).collect();
        let data = OrbitData::new(shifted.clone()).unwrap();
        let at_zero = orbit_cost(&m, &data, state(1.0, 0.0), 0.0, 0.0, None).unwrap();
        assert!(at_zero <= 1e-20, "v mismatches are invisible at alpha=0: {at_zero}");
        let at_one = orbit_cost(&m, &data, state(1.0, 0.0), 0.0, 1.0, None).unwrap();
        assert!((at_one - 51.0 * 0.25).abs() < 1e-9, "{at_one}");

        // Doubling alpha doubles the velocity part.
        shifted[0].1 += 0.1;
        let data = OrbitData::new(shifted).unwrap();
        let c1 = orbit_cost(&m, &data, state(1.0, 0.0), 0.0, 1.0, None).unwrap();
        let c2 = orbit_cost(&m, &data, state(1.0, 0.0), 0.0, 2.0, None).unwrap();
        assert!((c2 - c1 - 51.0 * 0.25).abs() < 1e-9);
    }

    #[test]
    fn cost_matches_hand_rolled_loop() {
        // Irregularly spaced observations on the ε grid, cost summed by an
        // explicit loop over predictions.
        let (_, m) = ho_model(0.0, 0.0, 9);
        let eps = m.eps();
        let exact = {
            let spec = SystemSpec::harmonic(1.0, 0.0).unwrap();
            exact_trajectory(&spec, state(0.8, -0.3), 0.0, 20, eps).unwrap()
        };
        let picks = [0usize, 1, 3, 5, 9, 12, 13, 17, 19, 20];
        let data = OrbitData::new(
            picks.iter().map(|&k| {
                let p = &exact.points[k];
                (p.t, p.u, p.v)
            }).collect(),
        )
        .unwrap();
        let alpha = 1.0;
        let cost = orbit_cost(&m, &data, state(0.8, -0.3), 0.0, alpha, None).unwrap();

        // Oracle: march the model's update map directly.
        let (mut u, mut v) = (0.8, -0.3);
        let mut states = vec![(u, v)];
        for k in 0..20 {
            let at = crate::features::JetPoint {
                t: k as f64 * eps,
                u,
                v,
                p: 0.0,
                pdot: 0.0,
            };
            let (du, dv) = m.predict(&at);
            u += du;
            v += dv;
            states.push((u, v));
        }
        let mut oracle = 0.0;
        for (&k, (_, u_d, v_d)) in picks.iter().zip(data.points()) {
            oracle += (u_d - states[k].0).powi(2) + alpha * (v_d - states[k].1).powi(2);
        }
        assert_eq!(cost, oracle);
    }

    #[test]
    fn off_grid_times_are_rejected() {
        let (_, m) = ho_model(0.0, 0.0, 9);
        let bad = OrbitData::new(vec![(0.0, 1.0, 0.0), (0.05, 1.0, 0.0)]).unwrap();
        assert!(orbit_cost(&m, &bad, state(1.0, 0.0), 0.0, 1.0, None).is_err());
        let before_start = OrbitData::new(vec![(-0.1, 1.0, 0.0)]).unwrap();
        assert!(orbit_cost(&m, &before_start, state(1.0, 0.0), 0.0, 1.0, None).is_err());

        // Observation times must strictly increase, and data must exist.
        assert!(OrbitData::new(vec![(0.0, 1.0, 0.0), (0.0, 1.0, 0.0)]).is_err());
        assert!(OrbitData::new(vec![]).is_err());
    }

    #[test]
    fn divergent_model_costs_infinity_and_cannot_start_refinement() {
        let m = FJetModel::new(0.1, uv(), vec![10.0, 0.0], uv(), vec![0.0, 10.0]).unwrap();
        let times: Vec<(f64, f64, f64)> =
            (0..=200).map(|k| (k as f64 * 0.1, 1.0, 0.0)).collect();
        let data = OrbitData::new(times).unwrap();
        let cost = orbit_cost(&m, &data, state(1.0, 1.0), 0.0, 1.0, None).unwrap();
        assert!(cost.is_infinite());
        let err = refine_model(&m, &data, state(1.0, 1.0), 0.0, &RefineConfig::default(), None);
        assert!(err.is_err());
    }

    #[test]
    fn zero_iterations_returns_input_unchanged() {
        let (_, m) = ho_model(0.1, 0.1, 3);
        let spec = SystemSpec::harmonic(1.0, 0.1).unwrap();
        let clean = exact_trajectory(&spec, state(1.0, 0.0), 0.0, 50, 0.1).unwrap();
        let data = OrbitData::from_trajectory(&clean);
        let cfg = RefineConfig { iterations: 0, ..RefineConfig::default() };
        let (refined, history) = refine_model(&m, &data, state(1.0, 0.0), 0.0, &cfg, None).unwrap();
        assert_eq!(refined.coeffs_du(), m.coeffs_du());
        assert_eq!(refined.coeffs_dv(), m.coeffs_dv());
        assert_eq!(history.len(), 1);
    }

    #[test]
    fn refinement_improves_noisy_model_deterministically() {
        // A model fitted from noisy updates, refined against a clean orbit:
        // the cost drops, the history never rises, and reruns are identical.
        let (spec, m) = ho_model(0.1, 0.1, 3);
        let clean = exact_trajectory(&spec, state(1.0, 0.0), 0.0, 100, 0.1).unwrap();
        let data = OrbitData::from_trajectory(&clean);
        let cfg = RefineConfig { iterations: 1000, ..RefineConfig::default() };
        let (refined, history) =
            refine_model(&m, &data, state(1.0, 0.0), 0.0, &cfg, None).unwrap();
        assert_eq!(history.len(), 1001);
        assert!(history.windows(2).all(|w| w[1] <= w[0]), "history is non-increasing");
        assert!(
            history.last().unwrap() < &(history[0] * 0.5),
            "cost at least halves: {} -> {}",
            history[0],
            history.last().unwrap()
        );
        assert_eq!(refined.refined_from(), Some("greedy-refinement"));

        let (again, history2) =
            refine_model(&m, &data, state(1.0, 0.0), 0.0, &cfg, None).unwrap();
        assert_eq!(again.coeffs_du(), refined.coeffs_du());
        assert_eq!(again.coeffs_dv(), refined.coeffs_dv());
        assert_eq!(history2, history);
    }

    #[test]
    fn exact_model_is_a_fixed_point() {
        let (_, m) = ho_model(0.0, 0.0, 21);
        let spec = SystemSpec::harmonic(1.0, 0.0).unwrap();
        let clean = exact_trajectory(&spec, state(1.0, 0.0), 0.0, 100, 0.1).unwrap();
        let data = OrbitData::from_trajectory(&clean);
        let cfg = RefineConfig { iterations: 200, ..RefineConfig::default() };
        let (refined, history) =
            refine_model(&m, &data, state(1.0, 0.0), 0.0, &cfg, None).unwrap();
        assert!(history[0] <= 1e-18, "exact model starts at ~zero cost: {}", history[0]);
        assert!(history.last().unwrap() <= &history[0]);
        for (a, b) in refined.coeffs_du().iter().zip(m.coeffs_du()) {
            assert!((a - b).abs() < 1e-9, "coefficients essentially unmoved");
        }
    }

    #[test]
    fn multi_seed_picks_best_and_breaks_ties_low() {
        let (spec, m) = ho_model(0.1, 0.1, 7);
        let clean = exact_trajectory(&spec, state(1.0, 0.0), 0.0, 60, 0.1).unwrap();
        let data = OrbitData::from_trajectory(&clean);
        let cfg = RefineConfig { iterations: 300, ..RefineConfig::default() };
        let seeds = [11u64, 22, 33];
        let (best, history, winner) =
            refine_multi_seed(&m, &data, state(1.0, 0.0), 0.0, &cfg, None, &seeds).unwrap();
        assert!(seeds.contains(&winner));
        // The winner's standalone run reproduces the reported result.
        let run_cfg = RefineConfig { seed: winner, ..cfg };
        let (solo, solo_history) =
            refine_model(&m, &data, state(1.0, 0.0), 0.0, &run_cfg, None).unwrap();
        assert_eq!(solo.coeffs_dv(), best.coeffs_dv());
        assert_eq!(solo_history, history);
        // And it is at least as good as every other seed.
        for s in seeds {
            let other_cfg = RefineConfig { seed: s, ..cfg };
            let (_, h) = refine_model(&m, &data, state(1.0, 0.0), 0.0, &other_cfg, None).unwrap();
            assert!(history.last().unwrap() <= h.last().unwrap());
        }

        assert!(refine_multi_seed(&m, &data, state(1.0, 0.0), 0.0, &cfg, None, &[]).is_err());
    }

    #[test]
    fn alpha_trades_position_error_for_energy_error() {
        // Refining with alpha=0 privileges u accuracy; alpha=1 privileges
        // energy. Checked as a tendency across five seeds.
        let spec = SystemSpec::harmonic(1.0, 0.0).unwrap();
        let clean = exact_trajectory(&spec, state(1.0, 0.0), 0.0, 100, 0.1).unwrap();
        let data = OrbitData::from_trajectory(&clean);

        let mean_u_error = |model: &FJetModel| {
            let traj = generate(model, state(1.0, 0.0), 0.0, 100, None).unwrap();
            let mean: f64 = traj
                .points
                .iter()
                .zip(&clean.points)
                .map(|(a, b)| error_measure(a.u, b.u))
                .sum::<f64>()
                / 101.0;
            mean
        };
        let mean_energy_error = |model: &FJetModel| {
            let traj = generate(model, state(1.0, 0.0), 0.0, 100, None).unwrap();
            let mean: f64 = traj
                .points
                .iter()
                .zip(&clean.points)
                .map(|(a, b)| {
                    let ea = spec.energy(state(a.u, a.v)).unwrap();
                    let eb = spec.energy(state(b.u, b.v)).unwrap();
                    error_measure(ea, eb)
                })
                .sum::<f64>()
                / 101.0;
            mean
        };

        let mut u_wins = 0;
        let mut energy_wins = 0;
        for seed in 0..5u64 {
            let (_, noisy) = ho_model(0.0, 0.1, 40 + seed);
            let base = RefineConfig { iterations: 1200, seed, ..RefineConfig::default() };
            let cfg_pos = RefineConfig { alpha: 0.0, ..base };
            let cfg_full = RefineConfig { alpha: 1.0, ..base };
            let (m_pos, _) =
                refine_model(&noisy, &data, state(1.0, 0.0), 0.0, &cfg_pos, None).unwrap();
            let (m_full, _) =
                refine_model(&noisy, &data, state(1.0, 0.0), 0.0, &cfg_full, None).unwrap();
            if mean_u_error(&m_pos) <= mean_u_error(&m_full) {
                u_wins += 1;
            }
            if mean_energy_error(&m_full) <= mean_energy_error(&m_pos) {
                energy_wins += 1;
            }
        }
        assert!(u_wins >= 3, "alpha=0 should win on u in most runs, won {u_wins}/5");
        assert!(energy_wins >= 3, "alpha=1 should win on energy in most runs, won {energy_wins}/5");
    }

    #[test]
    fn config_validation_and_history_csv() {
        let (_, m) = ho_model(0.1, 0.1, 3);
        let data = OrbitData::new(vec![(0.0, 1.0, 0.0), (0.1, 0.9, -0.1)]).unwrap();
        for bad in [
            RefineConfig { alpha: -1.0, ..RefineConfig::default() },
            RefineConfig { init_scale: 0.0, ..RefineConfig::default() },
            RefineConfig { decay: 1.0, ..RefineConfig::default() },
            RefineConfig { patience: 0, ..RefineConfig::default() },
        ] {
            assert!(refine_model(&m, &data, state(1.0, 0.0), 0.0, &bad, None).is_err());
        }

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cost_history.csv");
        write_cost_history_csv(&[2.0, 1.0, 0.5], &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "iteration,cost");
        assert_eq!(lines[1], format!("0,{}", fmt_f64(2.0)));
        assert_eq!(lines.len(), 4);
    }
}
