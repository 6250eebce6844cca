//! Closed-form evaluators and numeric generator applications: Yule laws,
//! the pre-limit and limit generators on polynomial test functions, the
//! dual generator with its potential, pointwise duality residuals, the
//! generator-convergence gap and the moment bound.

use serde::{Deserialize, Serialize};

use crate::dual::q_closed_form;
use crate::error::{Error, Result};
use crate::params::Params;
use crate::polynomial::{
    binomial_split_pmf, eval_dual_function, factorial_integral, eval_polynomial, TestFunction,
};
use crate::state::DualState;

/// Largest total particle count the exact particle-generator sum handles.
pub const MAX_GENERATOR_PARTICLES: u64 = 10_000;

/// E_w[z^{W_t}] for the rate-r Yule process: the pgf flows along the
/// logistic ODE, E_w[z^{W_t}] = q_t(z)^w.
pub fn yule_pgf(w: u32, r: f64, t: f64, z: f64) -> Result<f64> {
    if w < 1 {
        return Err(Error::Domain("w must be >= 1".into()));
    }
    Ok(q_closed_form(z, r, t)?.powi(w as i32))
}

/// E_w[W_t (W_t+1) ... (W_t+m-1)] = w (w+1) ... (w+m-1) e^{r m t}.
pub fn yule_factorial_moment(w: u32, r: f64, t: f64, m: u32) -> Result<f64> {
    if w < 1 || m < 1 {
        return Err(Error::Domain("w and m must be >= 1".into()));
    }
    let rising: f64 = (0..m).map(|j| (w + j) as f64).product();
    Ok(rising * (r * m as f64 * t).exp())
}

/// Split and within-cell branching parts of a generator application.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParts {
    pub split: f64,
    pub branching: f64,
}

impl GeneratorParts {
    pub fn total(&self) -> f64 {
        self.split + self.branching
    }
}

/// Limit generator applied to F^{g,f,m} at the configuration `masses`.
///
/// Split part: for each cell z0, replace it by theta z0 and (1-theta) z0
/// and difference g(n+1) F^{1,f,m}(new) - g(n) F^{1,f,m}(old), times r.
/// Branching part: analytic partials of f under the factorial measure.
pub fn apply_generator_limit(
    tf: &TestFunction,
    masses: &[f64],
    params: &Params,
) -> Result<GeneratorParts> {
    params.validate()?;
    let n = masses.len();
    let r = params.split_rate_base;
    let theta = params.theta;

    let h_old = factorial_integral(masses, tf.m, |z| tf.f.value(z));
    let mut split = 0.0;
    let mut post = masses.to_vec();
    post.push(0.0);
    for i in 0..n {
        let z0 = masses[i];
        post[i] = theta * z0;
        post[n] = (1.0 - theta) * z0;
        let h_new = factorial_integral(&post, tf.m, |z| tf.f.value(z));
        split += r * (tf.g.eval(n + 1) * h_new - tf.g.eval(n) * h_old);
        post[i] = z0;
    }

    let branching = if tf.f.smooth() {
        tf.g.eval(n)
            * factorial_integral(masses, tf.m, |z| {
                (0..tf.m)
                    .map(|j| {
                        let zj = z[j];
                        zj * (params.capital_k - params.lambda * zj) * tf.f.d1(j, z)
                            + params.sigma * zj * tf.f.d2(j, z)
                    })
                    .sum()
            })
    } else {
        return Err(Error::UnsupportedTestFunction(
            "branching part needs analytic partials of f".into(),
        ));
    };

    Ok(GeneratorParts { split, branching })
}

/// Split part of the limit generator alone; defined for value-only f
/// (e.g. a hinge), since no derivatives enter.
pub fn limit_split_part(tf: &TestFunction, masses: &[f64], params: &Params) -> Result<f64> {
    params.validate()?;
    let n = masses.len();
    let h_old = factorial_integral(masses, tf.m, |z| tf.f.value(z));
    let mut split = 0.0;
    let mut post = masses.to_vec();
    post.push(0.0);
    for i in 0..n {
        let z0 = masses[i];
        post[i] = params.theta * z0;
        post[n] = (1.0 - params.theta) * z0;
        let h_new = factorial_integral(&post, tf.m, |z| tf.f.value(z));
        split += params.split_rate_base * (tf.g.eval(n + 1) * h_new - tf.g.eval(n) * h_old);
        post[i] = z0;
    }
    Ok(split)
}

/// Pre-limit generator applied to F^{g,f,m} at integer counts, as an
/// exact finite sum: the split term enumerates every binomial allocation,
/// birth/death evaluate F at counts shifted by one particle.
pub fn apply_generator_particle(
    tf: &TestFunction,
    counts: &[u64],
    params: &Params,
) -> Result<GeneratorParts> {
    params.validate_particle()?;
    let total: u64 = counts.iter().sum();
    if total > MAX_GENERATOR_PARTICLES {
        return Err(Error::Resource(format!(
            "state holds {total} particles, exact sum capped at {MAX_GENERATOR_PARTICLES}"
        )));
    }
    let zeta = params.zeta;
    let n = counts.len();
    let masses: Vec<f64> = counts.iter().map(|&c| zeta * c as f64).collect();
    let f_old = eval_polynomial(tf, &masses);

    let mut split = 0.0;
    let mut post = masses.clone();
    post.push(0.0);
    for i in 0..n {
        let ni = counts[i];
        let rate = params.split_rate(masses[i]);
        let mut expect_new = 0.0;
        for k in 0..=ni {
            let w = binomial_split_pmf(ni, params.theta, k)?;
            post[i] = zeta * k as f64;
            post[n] = zeta * (ni - k) as f64;
            expect_new += w * eval_polynomial(tf, &post);
        }
        post[i] = masses[i];
        split += rate * (expect_new - f_old);
    }

    let per_birth = params.sigma / zeta + params.capital_k;
    let mut branching = 0.0;
    let mut shifted = masses.clone();
    for i in 0..n {
        let ni = counts[i] as f64;
        if counts[i] == 0 {
            continue;
        }
        let birth_rate = per_birth * ni;
        let death_rate = ni * (params.sigma / zeta + params.lambda * zeta * (ni - 1.0));
        shifted[i] = masses[i] + zeta;
        branching += birth_rate * (eval_polynomial(tf, &shifted) - f_old);
        shifted[i] = masses[i] - zeta;
        branching += death_rate * (eval_polynomial(tf, &shifted) - f_old);
        shifted[i] = masses[i];
    }

    Ok(GeneratorParts { split, branching })
}

/// Split part of the pre-limit generator alone (value-only f allowed).
pub fn particle_split_part(tf: &TestFunction, counts: &[u64], params: &Params) -> Result<f64> {
    Ok(apply_generator_particle(tf, counts, params)?.split)
}

/// The three parts of the dual generator applied to the dual function
/// F(nu, (q,m,x)) at fixed nu.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualGeneratorParts {
    pub cell_number_flow: f64,
    pub disaster: f64,
    pub branching: f64,
}

impl DualGeneratorParts {
    pub fn total(&self) -> f64 {
        self.cell_number_flow + self.disaster + self.branching
    }
}

/// Dual generator on the dual function: q-flow term, disaster jumps (two
/// scalings per mark, ordered-pair merges) and the dual virus-branching
/// diffusion term with analytic x-derivatives.
pub fn apply_generator_dual(
    masses: &[f64],
    s: &DualState,
    params: &Params,
) -> Result<DualGeneratorParts> {
    params.validate()?;
    let q = s.q;
    let marks = &s.marks;
    let m = marks.len();
    let w = masses.len();
    let r = params.split_rate_base;
    let theta = params.theta;

    let h = |xs: &[f64]| -> f64 {
        if xs.len() > w {
            return 0.0;
        }
        factorial_integral(masses, xs.len(), |z| {
            (-z.iter().zip(xs).map(|(&zi, &xi)| xi * zi).sum::<f64>()).exp()
        })
    };
    let qw = q.powi(w as i32);
    let f_cur = qw * h(marks);

    // -r (1-q) q d/dq [q^W H] = -r (1-q) W q^W H
    let cell_number_flow = -r * (1.0 - q) * w as f64 * f_cur;

    let mut disaster = 0.0;
    let mut scaled = marks.clone();
    for i in 0..m {
        let xi = marks[i];
        scaled[i] = theta * xi;
        disaster += q * r * (qw * h(&scaled) - f_cur);
        scaled[i] = (1.0 - theta) * xi;
        disaster += q * r * (qw * h(&scaled) - f_cur);
        scaled[i] = xi;
    }
    if m >= 2 {
        let mut merged: Vec<f64> = Vec::with_capacity(m - 1);
        for i in 0..m {
            for j in 0..m {
                if i == j {
                    continue;
                }
                merged.clear();
                for (k, &x) in marks.iter().enumerate() {
                    if k != i && k != j {
                        merged.push(x);
                    }
                }
                merged.push(theta * marks[i] + (1.0 - theta) * marks[j]);
                disaster += q * r * (qw * h(&merged) - f_cur);
            }
        }
    }

    // analytic x-derivatives: dF/dx_i = q^W int (-z_i) e^{-sum x z},
    // d^2F/dx_i^2 = q^W int z_i^2 e^{-sum x z}
    let mut branching = 0.0;
    if m <= w {
        for i in 0..m {
            let xi = marks[i];
            let d1 = qw
                * factorial_integral(masses, m, |z| {
                    -z[i] * (-z.iter().zip(marks).map(|(&zj, &xj)| xj * zj).sum::<f64>()).exp()
                });
            let d2 = qw
                * factorial_integral(masses, m, |z| {
                    z[i] * z[i]
                        * (-z.iter().zip(marks).map(|(&zj, &xj)| xj * zj).sum::<f64>()).exp()
                });
            branching += (params.capital_k * xi - params.sigma * xi * xi) * d1
                + params.lambda * xi * d2;
        }
    }

    Ok(DualGeneratorParts {
        cell_number_flow,
        disaster,
        branching,
    })
}

/// Pointwise Feynman-Kac identity check: the forward generator applied to
/// the dual function minus the dual generator minus the potential
/// q r m^2 F. The duality theorem predicts exactly 0.
pub fn duality_residual(masses: &[f64], s: &DualState, params: &Params) -> Result<f64> {
    let tf = TestFunction::new(
        crate::polynomial::CellCountFn::Geometric { q: s.q },
        s.mark_count(),
        crate::polynomial::MarkFn::ExpSum {
            coeffs: s.marks.clone(),
        },
    )?;
    let forward = apply_generator_limit(&tf, masses, params)?.total();
    let dual = apply_generator_dual(masses, s, params)?.total();
    let m = s.mark_count() as f64;
    let potential = s.q * params.split_rate_base * m * m * eval_dual_function(masses, s.q, &s.marks);
    Ok(forward - dual - potential)
}

/// One row of a generator-convergence table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GapRow {
    pub masses: Vec<f64>,
    pub counts: Vec<u64>,
    pub particle: GeneratorParts,
    pub limit: GeneratorParts,
}

/// Generator-convergence report over a state battery at one zeta.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneratorReport {
    pub zeta: f64,
    pub rows: Vec<GapRow>,
    /// sup over the battery of |total particle - total limit|
    pub total_gap: f64,
    pub split_gap: f64,
    pub branching_gap: f64,
}

fn masses_to_counts(masses: &[f64], zeta: f64) -> Result<Vec<u64>> {
    masses
        .iter()
        .map(|&z| {
            let n = z / zeta;
            let rounded = n.round();
            if (n - rounded).abs() > 1e-9 * (1.0 + n.abs()) {
                Err(Error::Domain(format!(
                    "mass {z} is not a multiple of zeta={zeta}"
                )))
            } else {
                Ok(rounded as u64)
            }
        })
        .collect()
}

/// Max over the supplied finite state set of |Omega^zeta F - Omega F|,
/// per part and in total. Every state's masses must sit on the zeta-grid.
pub fn generator_gap(
    tf: &TestFunction,
    zeta: f64,
    battery: &[Vec<f64>],
    params: &Params,
) -> Result<GeneratorReport> {
    let mut p = *params;
    p.zeta = zeta;
    p.validate_particle()?;
    let mut rows = Vec::with_capacity(battery.len());
    let (mut total_gap, mut split_gap, mut branching_gap) = (0.0f64, 0.0f64, 0.0f64);
    for masses in battery {
        let counts = masses_to_counts(masses, zeta)?;
        let particle = apply_generator_particle(tf, &counts, &p)?;
        let limit = apply_generator_limit(tf, masses, &p)?;
        total_gap = total_gap.max((particle.total() - limit.total()).abs());
        split_gap = split_gap.max((particle.split - limit.split).abs());
        branching_gap = branching_gap.max((particle.branching - limit.branching).abs());
        rows.push(GapRow {
            masses: masses.clone(),
            counts,
            particle,
            limit,
        });
    }
    Ok(GeneratorReport {
        zeta,
        rows,
        total_gap,
        split_gap,
        branching_gap,
    })
}

/// Split-term-only gap for value-only test functions (hinge family).
pub fn split_gap_only(
    tf: &TestFunction,
    zeta: f64,
    battery: &[Vec<f64>],
    params: &Params,
) -> Result<f64> {
    let mut p = *params;
    p.zeta = zeta;
    p.validate_particle()?;
    let mut gap = 0.0f64;
    for masses in battery {
        let counts = masses_to_counts(masses, zeta)?;
        let particle = particle_split_part(tf, &counts, &p)?;
        let limit = limit_split_part(tf, masses, &p)?;
        gap = gap.max((particle - limit).abs());
    }
    Ok(gap)
}

/// Upper bound of Prop-3.1 type on E[int (1+z^p) Z_t(dz)]:
/// initial_moment * exp((r + K C_{p,1} + sigma C_{p,2}) t) with the Taylor
/// constants C_{p,1} = p 2^{p-1}, C_{p,2} = p(p-1) 2^{p-2} (valid for
/// zeta <= 1).
pub fn moment_bound(p: u32, t: f64, params: &Params, initial_moment: f64) -> Result<f64> {
    if p < 1 {
        return Err(Error::Domain("p must be >= 1".into()));
    }
    if initial_moment < 0.0 {
        return Err(Error::Domain("initial_moment must be nonnegative".into()));
    }
    let pf = p as f64;
    let c1 = pf * 2f64.powi(p as i32 - 1);
    let c2 = pf * (pf - 1.0) * 2f64.powi(p as i32 - 2);
    let rate = params.split_rate_base + params.capital_k * c1 + params.sigma * c2;
    Ok(initial_moment * (rate * t).exp())
}
