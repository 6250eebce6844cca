//! Simulation of the limiting two-level branching diffusion: logistic
//! Feller diffusions within cells, punctuated by exact-rate Yule splits
//! that divide mass theta : (1-theta).
//!
//! Scheme: full-truncation Euler with clamp at 0 and exact absorption at
//! 0 (0 is a trap of the branching diffusion). Split times are exact
//! per-cell exponentials; only the diffusion is discretized.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::Params;
use crate::state::LimitState;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LimitTrajectory {
    pub initial: LimitState,
    pub snapshots: Vec<(f64, LimitState)>,
    pub split_times: Vec<f64>,
    pub final_state: LimitState,
    pub final_time: f64,
}

/// One Euler-Maruyama step of dX = X(K - lambda X) dt + sqrt(2 sigma X) dB,
/// full truncation: the square root sees max(X,0), the result is clamped
/// at 0, and x = 0 returns 0 exactly.
pub fn feller_forward_step<R: Rng + ?Sized>(
    x: f64,
    dt: f64,
    params: &Params,
    rng: &mut R,
) -> f64 {
    debug_assert!(dt > 0.0);
    if x == 0.0 {
        return 0.0;
    }
    let xp = x.max(0.0);
    let drift = xp * (params.capital_k - params.lambda * xp);
    let noise: f64 = StandardNormal.sample(rng);
    (x + drift * dt + (2.0 * params.sigma * xp * dt).sqrt() * noise).max(0.0)
}

/// Stability heuristic for the default grid width.
pub fn default_dt(params: &Params, max_initial_mass: f64) -> f64 {
    1e-3 / (params.capital_k.abs() + params.lambda * max_initial_mass).max(1.0)
}

/// Simulate the limit model on [0, t_end]: every cell diffuses on a dt
/// grid, each cell splits at the exact constant rate r̄ (the limit model
/// carries p = 0), and a split replaces mass z by daughters theta z and
/// (1-theta) z.
pub fn simulate_limit<R: Rng + ?Sized>(
    init: &LimitState,
    params: &Params,
    t_end: f64,
    dt: f64,
    obs_times: &[f64],
    rng: &mut R,
) -> Result<LimitTrajectory> {
    params.validate()?;
    if params.split_exponent != 0 {
        return Err(Error::InvalidParams(
            "limit model supports constant split rate only (p = 0)".into(),
        ));
    }
    if !dt.is_finite() || dt <= 0.0 {
        return Err(Error::Domain("dt must be positive".into()));
    }
    if !t_end.is_finite() || t_end < 0.0 {
        return Err(Error::Domain("t_end must be nonnegative".into()));
    }
    let mut obs: Vec<f64> = obs_times.iter().map(|&t| t.min(t_end)).collect();
    obs.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let r = params.split_rate_base;
    let mut masses = init.masses.clone();
    let mut t = 0.0f64;
    let mut snapshots = Vec::with_capacity(obs.len());
    let mut split_times = Vec::new();
    let mut next_obs = 0usize;
    // next split: total rate r * #cells, memoryless after each split
    let mut next_split = if masses.is_empty() {
        f64::INFINITY
    } else {
        exponential(r * masses.len() as f64, rng)
    };

    loop {
        // next boundary where something other than plain diffusion happens
        let boundary = next_split
            .min(t_end)
            .min(obs.get(next_obs).copied().unwrap_or(f64::INFINITY));
        // diffuse all cells up to the boundary on the dt grid
        while t < boundary {
            let step = dt.min(boundary - t);
            for x in masses.iter_mut() {
                *x = feller_forward_step(*x, step, params, rng);
            }
            t += step;
        }
        while next_obs < obs.len() && obs[next_obs] <= t {
            snapshots.push((obs[next_obs], LimitState::new(masses.clone())?));
            next_obs += 1;
        }
        if t >= t_end {
            break;
        }
        if t >= next_split {
            let cell = rng.random_range(0..masses.len());
            let z = masses[cell];
            masses[cell] = params.theta * z;
            masses.push((1.0 - params.theta) * z);
            split_times.push(t);
            next_split = t + exponential(r * masses.len() as f64, rng);
        }
    }

    Ok(LimitTrajectory {
        initial: init.clone(),
        snapshots,
        split_times,
        final_state: LimitState::new(masses)?,
        final_time: t,
    })
}

fn exponential<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> f64 {
    -(1.0 - rng.random::<f64>()).ln() / rate
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::replicate_rng;
    use crate::stats::mean_se;
    use approx::assert_relative_eq;

    fn params(r: f64, theta: f64, sigma: f64, k: f64, lambda: f64) -> Params {
        Params::constant_rate(r, theta, sigma, k, lambda, 1.0).unwrap()
    }

    #[test]
    fn zero_is_absorbing() {
        let p = params(1.0, 0.5, 1.0, 1.0, 1.0);
        let mut rng = replicate_rng(1, 0);
        assert_eq!(feller_forward_step(0.0, 0.01, &p, &mut rng), 0.0);
    }

    /// sigma -> 0 limit: the iterated map tracks the logistic ODE, whose
    /// closed form x(t) = K x0 / (lambda x0 + (K - lambda x0) e^{-Kt})
    /// serves as oracle; fixed point K/lambda.
    #[test]
    fn deterministic_limit_tracks_logistic_ode() {
        let p = Params::constant_rate(1.0, 0.5, 1e-300, 1.0, 1.0, 1.0).unwrap();
        let mut rng = replicate_rng(2, 0);
        let dt = 1e-4;
        let mut x = 1.0f64;
        // noise amplitude sqrt(2*1e-300*x*dt) is numerically 0
        let t_end = 3.0;
        let steps = (t_end / dt) as usize;
        for _ in 0..steps {
            x = feller_forward_step(x, dt, &p, &mut rng);
        }
        let x0 = 1.0f64;
        let oracle = 1.0 * x0 / (1.0 * x0 + (1.0 - 1.0 * x0) * (-t_end).exp());
        assert_relative_eq!(x, oracle, epsilon = 1e-2);
        assert_relative_eq!(oracle, 1.0, epsilon = 1e-12); // fixed point K/lambda
    }

    /// One-step mean is x + x(K - lambda x) dt to O(dt^2).
    #[test]
    fn one_step_mean_euler_consistency() {
        let p = params(1.0, 0.5, 0.7, 1.3, 0.4);
        let x = 0.9;
        let dt = 1e-3;
        let n = 1_000_000u64;
        let vals: Vec<f64> = (0..n)
            .map(|i| {
                let mut rng = replicate_rng(3, i);
                feller_forward_step(x, dt, &p, &mut rng)
            })
            .collect();
        let (mean, se) = mean_se(&vals);
        let expect = x + x * (1.3 - 0.4 * x) * dt;
        assert!(
            (mean - expect).abs() < 3.0 * se + dt * dt,
            "mean={mean} expect={expect} se={se}"
        );
    }

    #[test]
    fn splits_conserve_mass_exactly() {
        let p = params(5.0, 0.3, 0.5, 0.0, 0.0);
        // theta z + (1-theta) z == z up to one ulp
        for z in [0.1f64, 1.0, 3.7, 250.0] {
            let split = p.theta * z + (1.0 - p.theta) * z;
            assert!((split - z).abs() <= z * f64::EPSILON);
        }
    }

    #[test]
    fn masses_stay_nonnegative_and_cells_grow() {
        let p = params(2.0, 0.5, 1.5, -0.5, 2.0);
        let mut rng = replicate_rng(4, 0);
        let init = LimitState::new(vec![1.0, 0.2]).unwrap();
        let traj = simulate_limit(&init, &p, 2.0, 1e-3, &[0.5, 1.0, 2.0], &mut rng).unwrap();
        for (_, s) in &traj.snapshots {
            assert!(s.masses.iter().all(|&x| x >= 0.0));
        }
        assert_eq!(
            traj.final_state.cell_count(),
            init.cell_count() + traj.split_times.len()
        );
    }

    /// With lambda=0 total mass expectation is m0 e^{Kt} (splits conserve
    /// mass, drift linear).
    #[test]
    fn total_mass_expectation_linear_growth() {
        let p = params(1.0, 0.5, 0.8, 0.6, 0.0);
        let reps = 4_000u64;
        let t = 0.5;
        let vals: Vec<f64> = (0..reps)
            .map(|i| {
                let mut rng = replicate_rng(5, i);
                let init = LimitState::new(vec![1.0, 0.5]).unwrap();
                simulate_limit(&init, &p, t, 1e-3, &[], &mut rng)
                    .unwrap()
                    .final_state
                    .total_mass()
            })
            .collect();
        let (mean, se) = mean_se(&vals);
        let expect = 1.5 * (0.6f64 * t).exp();
        assert!(
            (mean - expect).abs() < 3.0 * se + 2e-3,
            "mean={mean} expect={expect} se={se}"
        );
    }

    /// Cell count mean matches the Yule law k0 e^{rt}.
    #[test]
    fn cell_count_matches_yule_mean() {
        let p = params(1.0, 0.5, 0.5, 0.0, 0.0);
        let reps = 4_000u64;
        let t = 1.0;
        let vals: Vec<f64> = (0..reps)
            .map(|i| {
                let mut rng = replicate_rng(6, i);
                let init = LimitState::new(vec![1.0]).unwrap();
                simulate_limit(&init, &p, t, 5e-3, &[], &mut rng)
                    .unwrap()
                    .final_state
                    .cell_count() as f64
            })
            .collect();
        let (mean, se) = mean_se(&vals);
        let expect = 1.0 * (1.0f64 * t).exp();
        assert!(
            (mean - expect).abs() < 3.0 * se,
            "mean={mean} expect={expect} se={se}"
        );
    }

    #[test]
    fn rejects_mass_dependent_rate() {
        let p = Params::new(1.0, 2, 0.5, 1.0, 0.0, 0.0, 1.0).unwrap();
        let mut rng = replicate_rng(7, 0);
        let init = LimitState::new(vec![1.0]).unwrap();
        assert!(simulate_limit(&init, &p, 1.0, 1e-3, &[], &mut rng).is_err());
    }
}
