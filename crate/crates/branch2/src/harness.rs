//! Monte-Carlo experiment orchestration: the Feynman-Kac duality check,
//! Yule laws, Gamma scaling, long-term behavior, generator convergence
//! and moment bounds, each reported with confidence-interval verdicts.
//!
//! Replicates fan out across workers with per-replicate seeded streams;
//! reductions are order-independent (collect in index order, pairwise
//! summation), so every estimate is bit-reproducible for a fixed seed.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytics::{
    apply_generator_limit, duality_residual, generator_gap, moment_bound, split_gap_only,
    yule_factorial_moment, yule_pgf,
};
use crate::dual::simulate_dual;
use crate::error::{Error, Result};
use crate::limit::simulate_limit;
use crate::params::Params;
use crate::particle::simulate_particle;
use crate::polynomial::{eval_dual_function, CellCountFn, MarkFn, TestFunction};
use crate::rng::replicate_rng;
use crate::state::{DualState, LimitState, ParticleState};
use crate::stats::{gamma_cdf, ks_critical_value, ks_statistic, mean_se};

/// A Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MCEstimate {
    pub mean: f64,
    pub se: f64,
    pub replicates: usize,
    pub seed: u64,
}

impl MCEstimate {
    pub fn from_values(values: &[f64], seed: u64) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::Domain("need at least 2 replicates".into()));
        }
        // zero-variance special cases must report SE = 0 exactly
        let (mean, se) = if values.iter().all(|v| v.to_bits() == values[0].to_bits()) {
            (values[0], 0.0)
        } else {
            mean_se(values)
        };
        Ok(Self {
            mean,
            se,
            replicates: values.len(),
            seed,
        })
    }
}

/// A reference value to compare an estimate against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value")]
pub enum Reference {
    ClosedForm(f64),
    Estimate(MCEstimate),
}

impl Reference {
    pub fn mean(&self) -> f64 {
        match self {
            Reference::ClosedForm(v) => *v,
            Reference::Estimate(e) => e.mean,
        }
    }
    pub fn se(&self) -> f64 {
        match self {
            Reference::ClosedForm(_) => 0.0,
            Reference::Estimate(e) => e.se,
        }
    }
}

/// One line of a check: |lhs - rhs| against k * combined SE (or an
/// explicit threshold).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckItem {
    pub label: String,
    pub lhs: MCEstimate,
    pub rhs: Reference,
    pub discrepancy: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl CheckItem {
    /// Three-combined-SE agreement criterion.
    pub fn three_se(label: String, lhs: MCEstimate, rhs: Reference) -> Self {
        let discrepancy = (lhs.mean - rhs.mean()).abs();
        let tolerance = 3.0 * (lhs.se * lhs.se + rhs.se() * rhs.se()).sqrt();
        let passed = discrepancy <= tolerance;
        Self {
            label,
            lhs,
            rhs,
            discrepancy,
            tolerance,
            passed,
        }
    }
}

/// Aggregate result of one named check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckReport {
    pub name: String,
    pub passed: bool,
    pub items: Vec<CheckItem>,
    pub config: serde_json::Value,
    /// Wall-clock time; excluded from serialized output so reruns with
    /// the same seed stay byte-identical.
    #[serde(skip)]
    pub runtime_secs: f64,
}

impl CheckReport {
    fn assemble(
        name: &str,
        items: Vec<CheckItem>,
        config: serde_json::Value,
        start: std::time::Instant,
    ) -> Self {
        Self {
            name: name.to_string(),
            passed: items.iter().all(|i| i.passed),
            items,
            config,
            runtime_secs: start.elapsed().as_secs_f64(),
        }
    }
}

/// Which forward model feeds the duality left-hand side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model")]
pub enum ForwardModel {
    Particle { zeta: f64 },
    Limit { dt: f64 },
}

fn masses_to_counts(masses: &[f64], zeta: f64) -> Result<Vec<u64>> {
    masses
        .iter()
        .map(|&z| {
            let n = z / zeta;
            if (n - n.round()).abs() > 1e-9 * (1.0 + n) {
                Err(Error::Domain(format!(
                    "initial mass {z} is not a multiple of zeta={zeta}"
                )))
            } else {
                Ok(n.round() as u64)
            }
        })
        .collect()
}

/// Forward-simulate `n` replicates, returning the cell masses at each
/// requested time: result[replicate][time_index].
pub fn forward_snapshots(
    init_masses: &[f64],
    params: &Params,
    forward: ForwardModel,
    ts: &[f64],
    n: usize,
    seed: u64,
) -> Result<Vec<Vec<Vec<f64>>>> {
    let t_end = ts.iter().cloned().fold(0.0, f64::max);
    match forward {
        ForwardModel::Particle { zeta } => {
            let mut p = *params;
            p.zeta = zeta;
            p.validate_particle()?;
            let counts = masses_to_counts(init_masses, zeta)?;
            let init = ParticleState::new(counts);
            (0..n as u64)
                .into_par_iter()
                .map(|i| {
                    let mut rng = replicate_rng(seed, i);
                    let traj = simulate_particle(&init, &p, t_end, ts, &mut rng, false)?;
                    Ok(traj
                        .snapshots
                        .iter()
                        .map(|(_, s)| s.masses(zeta))
                        .collect())
                })
                .collect()
        }
        ForwardModel::Limit { dt } => {
            let init = LimitState::new(init_masses.to_vec())?;
            (0..n as u64)
                .into_par_iter()
                .map(|i| {
                    let mut rng = replicate_rng(seed, i);
                    let traj = simulate_limit(&init, params, t_end, dt, ts, &mut rng)?;
                    Ok(traj
                        .snapshots
                        .iter()
                        .map(|(_, s)| s.masses.clone())
                        .collect())
                })
                .collect()
        }
    }
}

/// LHS of the duality relation: average over forward trajectories of the
/// dual function evaluated at Z_t with the FIXED initial (q, x).
pub fn estimate_duality_lhs(
    init_masses: &[f64],
    s0: &DualState,
    t: f64,
    params: &Params,
    forward: ForwardModel,
    n: usize,
    seed: u64,
) -> Result<MCEstimate> {
    if n < 2 {
        return Err(Error::Domain("need at least 2 replicates".into()));
    }
    let snaps = forward_snapshots(init_masses, params, forward, &[t], n, seed)?;
    let values: Vec<f64> = snaps
        .iter()
        .map(|per_t| eval_dual_function(&per_t[0], s0.q, &s0.marks))
        .collect();
    MCEstimate::from_values(&values, seed)
}

/// RHS of the duality relation: average over dual trajectories of
/// weight * q_t^{#cells} * H(nu_0, X_t) against the fixed initial nu_0.
pub fn estimate_duality_rhs(
    init_masses: &[f64],
    s0: &DualState,
    t: f64,
    params: &Params,
    dual_dt: f64,
    n: usize,
    seed: u64,
) -> Result<MCEstimate> {
    if n < 2 {
        return Err(Error::Domain("need at least 2 replicates".into()));
    }
    let values: Vec<f64> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = replicate_rng(seed, i);
            let traj = simulate_dual(s0, params, t, dual_dt, &mut rng)?;
            let fs = &traj.final_state;
            Ok(fs.log_weight.exp() * eval_dual_function(init_masses, fs.q, &fs.marks))
        })
        .collect::<Result<Vec<f64>>>()?;
    MCEstimate::from_values(&values, seed)
}

/// Pinned duality-check grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DualityConfig {
    pub init_masses: Vec<f64>,
    pub qs: Vec<f64>,
    pub ms: Vec<usize>,
    pub xs: Vec<f64>,
    pub ts: Vec<f64>,
    pub replicates: usize,
    pub forward: ForwardModel,
    pub dual_dt: f64,
    pub seed: u64,
}

impl Default for DualityConfig {
    fn default() -> Self {
        Self {
            init_masses: vec![1.0, 0.5],
            qs: vec![1.0, 0.7],
            ms: vec![1, 2],
            xs: vec![0.0, 0.5, 1.5],
            ts: vec![0.25, 0.5],
            replicates: 20_000,
            forward: ForwardModel::Particle { zeta: 0.02 },
            dual_dt: 1e-3,
            seed: 1,
        }
    }
}

/// Monte-Carlo check of the Feynman-Kac duality over the whole grid.
/// Forward trajectories are shared across grid cells at equal t.
pub fn check_duality(params: &Params, cfg: &DualityConfig) -> Result<CheckReport> {
    let start = std::time::Instant::now();
    let snaps = forward_snapshots(
        &cfg.init_masses,
        params,
        cfg.forward,
        &cfg.ts,
        cfg.replicates,
        cfg.seed,
    )?;
    let mut items = Vec::new();
    let mut cell_idx = 0u64;
    for &q in &cfg.qs {
        for &m in &cfg.ms {
            for &x in &cfg.xs {
                let s0 = DualState::new(q, vec![x; m])?;
                for (ti, &t) in cfg.ts.iter().enumerate() {
                    cell_idx += 1;
                    let lhs_vals: Vec<f64> = snaps
                        .iter()
                        .map(|per_t| eval_dual_function(&per_t[ti], q, &s0.marks))
                        .collect();
                    let lhs = MCEstimate::from_values(&lhs_vals, cfg.seed)?;
                    let rhs_seed = cfg.seed.wrapping_add(1_000_003 * cell_idx);
                    let rhs = estimate_duality_rhs(
                        &cfg.init_masses,
                        &s0,
                        t,
                        params,
                        cfg.dual_dt,
                        cfg.replicates,
                        rhs_seed,
                    )?;
                    items.push(CheckItem::three_se(
                        format!("q={q} m={m} x={x} t={t}"),
                        lhs,
                        Reference::Estimate(rhs),
                    ));
                }
            }
        }
    }
    Ok(CheckReport::assemble(
        "duality",
        items,
        serde_json::to_value(cfg)?,
        start,
    ))
}

/// Pure-birth (Yule) count at time t started from w individuals.
pub fn simulate_yule<R: rand::Rng + ?Sized>(w: u64, r: f64, t: f64, rng: &mut R) -> u64 {
    let mut count = w;
    let mut time = 0.0f64;
    loop {
        time += -(1.0 - rng.random::<f64>()).ln() / (r * count as f64);
        if time > t {
            return count;
        }
        count += 1;
    }
}

/// Yule pgf check: MC estimate of E[z^{W_t}] against the closed form.
pub fn check_yule(w: u32, r: f64, t: f64, z: f64, n: usize, seed: u64) -> Result<CheckReport> {
    let start = std::time::Instant::now();
    let values: Vec<f64> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = replicate_rng(seed, i);
            z.powi(simulate_yule(w as u64, r, t, &mut rng) as i32)
        })
        .collect();
    let lhs = MCEstimate::from_values(&values, seed)?;
    let items = vec![CheckItem::three_se(
        format!("E[z^W] w={w} r={r} t={t} z={z}"),
        lhs,
        Reference::ClosedForm(yule_pgf(w, r, t, z)?),
    )];
    Ok(CheckReport::assemble(
        "yule-pgf",
        items,
        serde_json::json!({"w": w, "r": r, "t": t, "z": z, "n": n, "seed": seed}),
        start,
    ))
}

/// Yule rising-factorial moment check for the requested orders.
pub fn check_yule_moments(
    w: u32,
    r: f64,
    t: f64,
    orders: &[u32],
    n: usize,
    seed: u64,
) -> Result<CheckReport> {
    let start = std::time::Instant::now();
    let counts: Vec<u64> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = replicate_rng(seed, i);
            simulate_yule(w as u64, r, t, &mut rng)
        })
        .collect();
    let mut items = Vec::new();
    for &m in orders {
        let values: Vec<f64> = counts
            .iter()
            .map(|&c| (0..m).map(|j| (c + j as u64) as f64).product())
            .collect();
        let lhs = MCEstimate::from_values(&values, seed)?;
        items.push(CheckItem::three_se(
            format!("rising moment m={m}"),
            lhs,
            Reference::ClosedForm(yule_factorial_moment(w, r, t, m)?),
        ));
    }
    Ok(CheckReport::assemble(
        "yule-moments",
        items,
        serde_json::json!({"w": w, "r": r, "t": t, "orders": orders, "n": n, "seed": seed}),
        start,
    ))
}

/// Gamma scaling: KS of e^{-rt} W_t against Gamma(w, 1) at the 1% level.
pub fn check_gamma_scaling(w: u32, r: f64, t: f64, n: usize, seed: u64) -> Result<CheckReport> {
    let start = std::time::Instant::now();
    let scale = (-r * t).exp();
    let sample: Vec<f64> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = replicate_rng(seed, i);
            scale * simulate_yule(w as u64, r, t, &mut rng) as f64
        })
        .collect();
    let d = ks_statistic(&sample, |x| gamma_cdf(w as f64, x));
    let crit = ks_critical_value(n, 0.01);
    let lhs = MCEstimate {
        mean: d,
        se: 0.0,
        replicates: n,
        seed,
    };
    let items = vec![CheckItem {
        label: format!("KS(e^(-rt) W_t, Gamma({w},1)) rt={}", r * t),
        lhs,
        rhs: Reference::ClosedForm(crit),
        discrepancy: d,
        tolerance: crit,
        passed: d < crit,
    }];
    Ok(CheckReport::assemble(
        "gamma-scaling",
        items,
        serde_json::json!({"w": w, "r": r, "t": t, "n": n, "seed": seed}),
        start,
    ))
}

/// Long-term behavior of the limit model: the rescaled cell count is
/// Gamma(k,1) and the infected-cell fraction (mass > eps) decays in t.
pub fn check_longterm(
    init_masses: &[f64],
    params: &Params,
    ts: &[f64],
    n: usize,
    eps: f64,
    dt: f64,
    seed: u64,
) -> Result<CheckReport> {
    let start = std::time::Instant::now();
    let init = LimitState::new(init_masses.to_vec())?;
    let k0 = init.cell_count();
    let t_end = ts.iter().cloned().fold(0.0, f64::max);
    let r = params.split_rate_base;
    let per_rep: Vec<(Vec<f64>, f64)> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = replicate_rng(seed, i);
            let traj = simulate_limit(&init, params, t_end, dt, ts, &mut rng)?;
            let fracs: Vec<f64> = traj
                .snapshots
                .iter()
                .map(|(_, s)| {
                    s.masses.iter().filter(|&&x| x > eps).count() as f64
                        / s.cell_count().max(1) as f64
                })
                .collect();
            let final_count = traj
                .snapshots
                .last()
                .map(|(_, s)| s.cell_count())
                .unwrap_or(k0) as f64;
            Ok((fracs, final_count))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut items = Vec::new();

    let sample: Vec<f64> = per_rep
        .iter()
        .map(|(_, c)| (-r * t_end).exp() * c)
        .collect();
    let d = ks_statistic(&sample, |x| gamma_cdf(k0 as f64, x));
    let crit = ks_critical_value(n, 0.01);
    items.push(CheckItem {
        label: format!("KS(e^(-rt)<1,Z_t>, Gamma({k0},1)) at t={t_end}"),
        lhs: MCEstimate {
            mean: d,
            se: 0.0,
            replicates: n,
            seed,
        },
        rhs: Reference::ClosedForm(crit),
        discrepancy: d,
        tolerance: crit,
        passed: d < crit,
    });

    let mut prev: Option<MCEstimate> = None;
    for (ti, &t) in ts.iter().enumerate() {
        let fr: Vec<f64> = per_rep.iter().map(|(f, _)| f[ti]).collect();
        let est = MCEstimate::from_values(&fr, seed)?;
        if let Some(p) = prev {
            let passed = est.mean < p.mean;
            items.push(CheckItem {
                label: format!("infected fraction decreasing into t={t}"),
                lhs: est,
                rhs: Reference::Estimate(p),
                discrepancy: est.mean - p.mean,
                tolerance: 0.0,
                passed,
            });
        }
        prev = Some(est);
    }

    Ok(CheckReport::assemble(
        "longterm",
        items,
        serde_json::json!({
            "init_masses": init_masses, "ts": ts, "n": n, "eps": eps,
            "dt": dt, "seed": seed, "params": params
        }),
        start,
    ))
}

/// The pinned state battery for generator-convergence checks: 1 to 4
/// cells with masses on the half-integer grid up to 5 (multiples of every
/// zeta used).
pub fn default_state_battery() -> Vec<Vec<f64>> {
    vec![
        vec![1.0],
        vec![5.0],
        vec![0.5, 2.0],
        vec![1.5, 1.0, 0.5],
        vec![2.5, 0.5, 4.0],
        vec![1.0, 1.0, 3.0, 0.5],
    ]
}

/// The three pinned smooth test functions for the decreasing-gap check.
pub fn default_gap_test_functions() -> Vec<TestFunction> {
    vec![
        TestFunction::new(
            CellCountFn::One,
            1,
            MarkFn::ExpSum { coeffs: vec![1.0] },
        )
        .unwrap(),
        TestFunction::new(
            CellCountFn::Geometric { q: 0.7 },
            2,
            MarkFn::ExpSum {
                coeffs: vec![0.3, 1.1],
            },
        )
        .unwrap(),
        TestFunction::new(
            CellCountFn::InversePower { a: 1.0 },
            1,
            MarkFn::ExpSum { coeffs: vec![0.5] },
        )
        .unwrap(),
    ]
}

/// Generator convergence: the total gap decreases strictly over the zeta
/// ladder for each pinned test function, and the split-term gap of a
/// hinge test function (the non-smooth probe of the binomial law of
/// large numbers) shrinks at the square-root rate between zeta and
/// zeta/4.
pub fn check_generator(params: &Params, zetas: &[f64]) -> Result<CheckReport> {
    let start = std::time::Instant::now();
    let battery = default_state_battery();
    let mut items = Vec::new();

    for (fi, tf) in default_gap_test_functions().iter().enumerate() {
        let mut prev: Option<f64> = None;
        for &zeta in zetas {
            let report = generator_gap(tf, zeta, &battery, params)?;
            if let Some(p) = prev {
                let passed = report.total_gap < p;
                items.push(CheckItem {
                    label: format!("F{} gap decreasing at zeta={zeta}", fi + 1),
                    lhs: MCEstimate {
                        mean: report.total_gap,
                        se: 0.0,
                        replicates: battery.len(),
                        seed: 0,
                    },
                    rhs: Reference::ClosedForm(p),
                    discrepancy: report.total_gap - p,
                    tolerance: 0.0,
                    passed,
                });
            }
            prev = Some(report.total_gap);
        }
    }

    // hinge with knot at theta * z for the battery's largest mass; only
    // f-values enter the split term, so the kink is legal there
    let hinge = TestFunction::new(
        CellCountFn::One,
        1,
        MarkFn::Hinge {
            index: 0,
            knot: params.theta * 5.0,
            arity: 1,
        },
    )?;
    let (z_hi, z_lo) = (0.1, 0.025);
    let g_hi = split_gap_only(&hinge, z_hi, &battery, params)?;
    let g_lo = split_gap_only(&hinge, z_lo, &battery, params)?;
    let ratio = g_hi / g_lo;
    items.push(CheckItem {
        label: format!("split-term gap ratio zeta={z_hi} vs {z_lo}"),
        lhs: MCEstimate {
            mean: ratio,
            se: 0.0,
            replicates: battery.len(),
            seed: 0,
        },
        rhs: Reference::ClosedForm(2.0),
        discrepancy: (ratio - 2.0).abs(),
        tolerance: 0.8,
        passed: (1.4..=2.8).contains(&ratio),
    });

    Ok(CheckReport::assemble(
        "generator-convergence",
        items,
        serde_json::json!({"zetas": zetas, "params": params}),
        start,
    ))
}

/// Pointwise duality identity over randomized states: the forward
/// generator applied to the dual function must equal the dual generator
/// plus the potential q r m^2 F to rounding error. Reports the worst
/// residual, normalized by 1e-8 * (1 + |Omega F|).
pub fn check_residuals(n_states: usize, seed: u64, params: &Params) -> Result<CheckItem> {
    let mut rng = replicate_rng(seed, u64::MAX);
    let mut worst_norm = 0.0f64;
    let mut worst_abs = 0.0f64;
    for _ in 0..n_states {
        let cells = rng.random_range(1..=4usize);
        let masses: Vec<f64> = (0..cells).map(|_| 5.0 * (1.0 - rng.random::<f64>())).collect();
        let q = 1.0 - rng.random::<f64>();
        let m = rng.random_range(1..=3usize);
        let marks: Vec<f64> = (0..m).map(|_| 2.0 * rng.random::<f64>()).collect();
        let s = DualState::new(q, marks)?;
        let tf = TestFunction::new(
            CellCountFn::Geometric { q },
            m,
            MarkFn::ExpSum {
                coeffs: s.marks.clone(),
            },
        )?;
        let omega_f = apply_generator_limit(&tf, &masses, params)?.total();
        let res = duality_residual(&masses, &s, params)?.abs();
        worst_abs = worst_abs.max(res);
        worst_norm = worst_norm.max(res / (1e-8 * (1.0 + omega_f.abs())));
    }
    Ok(CheckItem {
        label: format!("pointwise duality residual over {n_states} random states"),
        lhs: MCEstimate {
            mean: worst_abs,
            se: 0.0,
            replicates: n_states,
            seed,
        },
        rhs: Reference::ClosedForm(0.0),
        discrepancy: worst_norm,
        tolerance: 1.0,
        passed: worst_norm <= 1.0,
    })
}

/// Empirical E[int (1+z^2) Z_t(dz)] from particle replicates against the
/// closed-form moment bound.
pub fn check_moments(
    init_counts: &[u64],
    params: &Params,
    p_order: u32,
    t: f64,
    n: usize,
    seed: u64,
) -> Result<CheckReport> {
    let start = std::time::Instant::now();
    params.validate_particle()?;
    let init = ParticleState::new(init_counts.to_vec());
    let zeta = params.zeta;
    let phi = |masses: &[f64]| -> f64 {
        masses
            .iter()
            .map(|&z| 1.0 + z.powi(p_order as i32))
            .sum::<f64>()
    };
    let initial_moment = phi(&init.masses(zeta));
    let values: Vec<f64> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = replicate_rng(seed, i);
            let traj = simulate_particle(&init, params, t, &[], &mut rng, false)?;
            Ok(phi(&traj.final_state.masses(zeta)))
        })
        .collect::<Result<Vec<f64>>>()?;
    let lhs = MCEstimate::from_values(&values, seed)?;
    let bound = moment_bound(p_order, t, params, initial_moment)?;
    let passed = lhs.mean <= bound;
    let items = vec![CheckItem {
        label: format!("E[int (1+z^{p_order}) Z_t] <= bound at t={t}"),
        lhs,
        rhs: Reference::ClosedForm(bound),
        discrepancy: lhs.mean - bound,
        tolerance: 0.0,
        passed,
    }];
    Ok(CheckReport::assemble(
        "moment-bound",
        items,
        serde_json::json!({
            "init_counts": init_counts, "p": p_order, "t": t, "n": n,
            "seed": seed, "params": params
        }),
        start,
    ))
}
