//! The dual Markov process (q_t, M_t, X_t) and its Feynman-Kac weight.
//!
//! q follows a closed-form logistic decay, the marks diffuse as logistic
//! Feller diffusions with drift (K x - sigma x^2) and noise sqrt(2 lambda x)
//! -- sigma and lambda swap roles relative to the forward diffusion -- and
//! jumps (two scalings per mark, one merge per ordered pair of marks) fire
//! at rate q r each, simulated exactly by thinning against the monotone
//! envelope q(t_last) r m(m+1). The weight exp(r int q_s M_s^2 ds) is
//! accumulated in log space with the exact piecewise integral of q.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::Params;
use crate::state::DualState;

/// Solution of dq/dt = -r q (1 - q): q_t = 1 / (1 + (q0^{-1} - 1) e^{rt}).
pub fn q_closed_form(q0: f64, r: f64, t: f64) -> Result<f64> {
    check_q0(q0)?;
    Ok(1.0 / (1.0 + (1.0 / q0 - 1.0) * (r * t).exp()))
}

/// Exact antiderivative: int_0^t q_s ds
/// = (1/r) ln( q0^{-1} / (q0^{-1} - 1 + e^{-rt}) ); nonnegative, <= t.
pub fn q_integral(q0: f64, r: f64, t: f64) -> Result<f64> {
    check_q0(q0)?;
    let inv = 1.0 / q0;
    Ok((inv / (inv - 1.0 + (-r * t).exp())).ln() / r)
}

fn check_q0(q0: f64) -> Result<()> {
    if !(q0 > 0.0 && q0 <= 1.0) {
        return Err(Error::Domain(format!("q0 must lie in (0,1], got {q0}")));
    }
    Ok(())
}

/// One full-truncation Euler step of the DUAL diffusion
/// dX = X(K - sigma X) dt + sqrt(2 lambda X) dB.
///
/// Note the role swap against the forward diffusion (drift -lambda z^2,
/// noise sigma z); a regression test guards it.
pub fn dual_feller_step<R: Rng + ?Sized>(x: f64, dt: f64, params: &Params, rng: &mut R) -> f64 {
    debug_assert!(dt > 0.0);
    if x == 0.0 {
        return 0.0;
    }
    let xp = x.max(0.0);
    let drift = xp * (params.capital_k - params.sigma * xp);
    let noise: f64 = StandardNormal.sample(rng);
    (x + drift * dt + (2.0 * params.lambda * xp * dt).sqrt() * noise).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DualEventKind {
    /// x_k -> theta x_k
    ScaleTheta { mark: usize },
    /// x_k -> (1 - theta) x_k
    ScaleOneMinusTheta { mark: usize },
    /// ordered pair (k1, k2) merges into theta x_{k1} + (1-theta) x_{k2}
    Merge { k1: usize, k2: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualEvent {
    pub time: f64,
    pub kind: DualEventKind,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DualTrajectory {
    pub initial: DualState,
    pub events: Vec<DualEvent>,
    /// State right after each jump, plus the final state.
    pub snapshots: Vec<(f64, DualState)>,
    pub final_state: DualState,
    pub final_time: f64,
}

/// Simulate the dual process on [0, t_end].
pub fn simulate_dual<R: Rng + ?Sized>(
    init: &DualState,
    params: &Params,
    t_end: f64,
    dt: f64,
    rng: &mut R,
) -> Result<DualTrajectory> {
    params.validate()?;
    if !dt.is_finite() || dt <= 0.0 {
        return Err(Error::Domain("dt must be positive".into()));
    }
    if !t_end.is_finite() || t_end < 0.0 {
        return Err(Error::Domain("t_end must be nonnegative".into()));
    }
    let q0 = init.q;
    check_q0(q0)?;
    let r = params.split_rate_base;
    let theta = params.theta;

    let mut marks = init.marks.clone();
    let mut log_weight = init.log_weight;
    let mut t = 0.0f64;
    let mut events = Vec::new();
    let mut snapshots = Vec::new();

    loop {
        let m = marks.len();
        let channels = m * (m + 1); // 2m scalings + m(m-1) ordered merges
        let q_env = q_closed_form(q0, r, t)?;
        let envelope = q_env * r * channels as f64;
        let t_prop = t + exponential(envelope, rng);
        let t_next = t_prop.min(t_end);

        // diffuse marks and accumulate the weight over [t, t_next]
        diffuse_marks(&mut marks, t_next - t, dt, params, rng);
        log_weight += r
            * (m * m) as f64
            * (q_integral(q0, r, t_next)? - q_integral(q0, r, t)?);
        t = t_next;
        if t >= t_end {
            break;
        }

        // thinning: accept with probability q(t_prop) / q(envelope start)
        let accept = q_closed_form(q0, r, t)? / q_env;
        debug_assert!(accept > 0.0 && accept <= 1.0);
        if rng.random::<f64>() >= accept {
            continue;
        }
        let channel = rng.random_range(0..channels);
        let kind = if channel < 2 * m {
            let mark = channel / 2;
            if channel % 2 == 0 {
                marks[mark] *= theta;
                DualEventKind::ScaleTheta { mark }
            } else {
                marks[mark] *= 1.0 - theta;
                DualEventKind::ScaleOneMinusTheta { mark }
            }
        } else {
            // ordered pair index over {(k1,k2): k1 != k2}
            let pair = channel - 2 * m;
            let k1 = pair / (m - 1);
            let mut k2 = pair % (m - 1);
            if k2 >= k1 {
                k2 += 1;
            }
            let merged = theta * marks[k1] + (1.0 - theta) * marks[k2];
            let (hi, lo) = if k1 > k2 { (k1, k2) } else { (k2, k1) };
            marks.swap_remove(hi);
            marks.swap_remove(lo);
            marks.push(merged);
            DualEventKind::Merge { k1, k2 }
        };
        events.push(DualEvent { time: t, kind });
        snapshots.push((
            t,
            DualState {
                q: q_closed_form(q0, r, t)?,
                marks: marks.clone(),
                log_weight,
            },
        ));
    }

    let final_state = DualState {
        q: q_closed_form(q0, r, t_end)?,
        marks,
        log_weight,
    };
    snapshots.push((t_end, final_state.clone()));
    Ok(DualTrajectory {
        initial: init.clone(),
        events,
        snapshots,
        final_state,
        final_time: t_end,
    })
}

fn diffuse_marks<R: Rng + ?Sized>(
    marks: &mut [f64],
    span: f64,
    dt: f64,
    params: &Params,
    rng: &mut R,
) {
    let mut done = 0.0;
    while done < span {
        let step = dt.min(span - done);
        for x in marks.iter_mut() {
            *x = dual_feller_step(*x, step, params, rng);
        }
        done += step;
    }
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
    fn q_closed_form_examples() {
        assert_eq!(q_closed_form(1.0, 1.0, 5.0).unwrap(), 1.0);
        assert_relative_eq!(
            q_closed_form(0.5, 1.0, (2.0f64).ln()).unwrap(),
            1.0 / 3.0,
            epsilon = 1e-14
        );
        assert_eq!(q_closed_form(0.37, 2.0, 0.0).unwrap(), 0.37);
        assert!(q_closed_form(0.0, 1.0, 1.0).is_err());
        assert!(q_closed_form(1.5, 1.0, 1.0).is_err());
    }

    #[test]
    fn q_is_strictly_decreasing_below_one() {
        let mut prev = q_closed_form(0.8, 1.3, 0.0).unwrap();
        for i in 1..50 {
            let q = q_closed_form(0.8, 1.3, i as f64 * 0.1).unwrap();
            assert!(q < prev);
            prev = q;
        }
    }

    #[test]
    fn q_integral_examples_and_quadrature_oracle() {
        assert_relative_eq!(q_integral(1.0, 1.7, 3.0).unwrap(), 3.0, epsilon = 1e-12);
        assert_eq!(q_integral(0.5, 1.0, 0.0).unwrap(), 0.0);
        assert_relative_eq!(
            q_integral(0.5, 1.0, (2.0f64).ln()).unwrap(),
            (4.0f64 / 3.0).ln(),
            epsilon = 1e-12
        );
        // Simpson quadrature oracle on a fine grid
        for &(q0, r, t) in &[(0.3, 1.0, 0.7), (0.9, 2.5, 1.3), (0.05, 0.4, 2.0)] {
            let n = 20_000usize;
            let h = t / n as f64;
            let mut acc = 0.0;
            for i in 0..n {
                let a = i as f64 * h;
                let fa = q_closed_form(q0, r, a).unwrap();
                let fm = q_closed_form(q0, r, a + 0.5 * h).unwrap();
                let fb = q_closed_form(q0, r, a + h).unwrap();
                acc += h / 6.0 * (fa + 4.0 * fm + fb);
            }
            assert_relative_eq!(q_integral(q0, r, t).unwrap(), acc, epsilon = 1e-10);
            let v = q_integral(q0, r, t).unwrap();
            assert!(v >= 0.0 && v <= t);
        }
    }

    #[test]
    fn dual_step_zero_absorbing() {
        let p = params(1.0, 0.5, 1.0, 1.0, 1.0);
        let mut rng = replicate_rng(1, 0);
        assert_eq!(dual_feller_step(0.0, 0.01, &p, &mut rng), 0.0);
    }

    /// lambda = 0 makes the dual diffusion the deterministic logistic ODE
    /// toward K/sigma -- this is the sigma/lambda role-swap regression.
    #[test]
    fn role_swap_regression_deterministic_logistic() {
        let p = params(1.0, 0.5, 2.0, 1.0, 0.0);
        let mut rng = replicate_rng(2, 0);
        let mut x = 1.5f64;
        let dt = 1e-4;
        for _ in 0..60_000 {
            x = dual_feller_step(x, dt, &p, &mut rng);
        }
        // fixed point K/sigma = 0.5, NOT K/lambda
        assert_relative_eq!(x, 0.5, epsilon = 1e-3);
    }

    #[test]
    fn dual_one_step_mean_euler_consistency() {
        let p = params(1.0, 0.5, 0.9, 1.1, 0.6);
        let x = 0.8;
        let dt = 1e-3;
        let n = 1_000_000u64;
        let vals: Vec<f64> = (0..n)
            .map(|i| {
                let mut rng = replicate_rng(3, i);
                dual_feller_step(x, dt, &p, &mut rng)
            })
            .collect();
        let (mean, se) = mean_se(&vals);
        let expect = x + x * (1.1 - 0.9 * x) * dt;
        assert!(
            (mean - expect).abs() < 3.0 * se + dt * dt,
            "mean={mean} expect={expect}"
        );
    }

    /// q0 = 1, m = 1: no merges possible, weight is exactly e^{rt} and q
    /// stays 1.
    #[test]
    fn unit_q_single_mark_weight_is_deterministic() {
        let p = params(1.3, 0.4, 1.0, 0.5, 0.5);
        for i in 0..20 {
            let mut rng = replicate_rng(4, i);
            let init = DualState::new(1.0, vec![0.7]).unwrap();
            let traj = simulate_dual(&init, &p, 0.8, 1e-3, &mut rng).unwrap();
            assert_relative_eq!(traj.final_state.log_weight, 1.3 * 0.8, epsilon = 1e-12);
            assert_eq!(traj.final_state.q, 1.0);
            assert_eq!(traj.final_state.mark_count(), 1);
        }
    }

    /// Marks started at zero stay zero under diffusion and scaling jumps;
    /// only m shrinks.
    #[test]
    fn zero_marks_stay_zero() {
        let p = params(2.0, 0.3, 1.0, 1.0, 1.0);
        let mut rng = replicate_rng(5, 0);
        let init = DualState::new(0.9, vec![0.0, 0.0, 0.0]).unwrap();
        let traj = simulate_dual(&init, &p, 1.5, 1e-3, &mut rng).unwrap();
        assert!(traj.final_state.marks.iter().all(|&x| x == 0.0));
        assert!(traj.final_state.mark_count() <= 3);
        assert!(traj.final_state.mark_count() >= 1);
    }

    #[test]
    fn mark_count_never_increases_and_weight_monotone() {
        let p = params(1.5, 0.5, 0.8, 0.7, 0.9);
        let mut rng = replicate_rng(6, 0);
        let init = DualState::new(0.8, vec![0.5, 1.0, 2.0]).unwrap();
        let traj = simulate_dual(&init, &p, 2.0, 1e-3, &mut rng).unwrap();
        let mut prev_m = init.mark_count();
        let mut prev_w = 0.0;
        for (_, s) in &traj.snapshots {
            assert!(s.mark_count() <= prev_m && s.mark_count() >= 1);
            assert!(s.log_weight >= prev_w);
            prev_m = s.mark_count();
            prev_w = s.log_weight;
        }
        // global weight bound r t q0 m0^2
        assert!(traj.final_state.log_weight <= 1.5 * 2.0 * 0.8 * 9.0 + 1e-12);
    }

    /// q snapshots along a trajectory equal the closed form (q is
    /// deterministic given t).
    #[test]
    fn q_snapshots_match_closed_form() {
        let p = params(1.1, 0.5, 1.0, 0.2, 0.5);
        let mut rng = replicate_rng(7, 0);
        let init = DualState::new(0.6, vec![1.0, 0.4]).unwrap();
        let traj = simulate_dual(&init, &p, 1.0, 1e-3, &mut rng).unwrap();
        for (t, s) in &traj.snapshots {
            assert_relative_eq!(
                s.q,
                q_closed_form(0.6, 1.1, *t).unwrap(),
                epsilon = 1e-12
            );
        }
    }

    /// Empirical total jump rate near t = 0 matches q0 r m (m+1).
    #[test]
    fn initial_jump_rate_matches_channel_sum() {
        let p = params(1.0, 0.5, 0.5, 0.5, 0.5);
        let q0 = 0.7;
        let m0 = 3usize;
        let horizon = 0.01;
        let reps = 100_000u64;
        let mut jumps = 0u64;
        for i in 0..reps {
            let mut rng = replicate_rng(8, i);
            let init = DualState::new(q0, vec![0.5; m0]).unwrap();
            let traj = simulate_dual(&init, &p, horizon, 1e-3, &mut rng).unwrap();
            jumps += traj.events.len() as u64;
        }
        let rate = q0 * 1.0 * (m0 * (m0 + 1)) as f64;
        let expect = rate * horizon * reps as f64;
        let se = expect.sqrt();
        assert!(
            (jumps as f64 - expect).abs() < 4.0 * se,
            "jumps={jumps} expect={expect}"
        );
    }
}
