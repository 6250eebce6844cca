//! Polynomial test functions F^{g,f,m} over finite point configurations,
//! the factorial sampling measure, the binomial split allocation pmf and
//! the dual function. This is the shared algebra every other module
//! consumes; all operations are pure.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::ln_choose;

/// Largest sample size m for the factorial integral. Enumeration is
/// O(n^m); at desk scale 4 is plenty.
pub const MAX_SAMPLE_SIZE: usize = 4;

/// Probability that a cell holding `n` particles sends exactly `k` of them
/// to the theta-daughter: C(n,k) theta^k (1-theta)^{n-k}.
pub fn binomial_split_pmf(n: u64, theta: f64, k: u64) -> Result<f64> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::Domain(format!("theta must lie in (0,1), got {theta}")));
    }
    if k > n {
        return Err(Error::Domain(format!("k={k} out of range [0,{n}]")));
    }
    if n == 0 {
        return Ok(1.0);
    }
    let ln_p = ln_choose(n, k) + k as f64 * theta.ln() + (n - k) as f64 * (1.0 - theta).ln();
    Ok(ln_p.exp())
}

/// Integral of `f` against the factorial sampling measure nu^{(x) m, down}:
/// the sum of `f` over all ordered m-tuples of distinct cell indices (atoms
/// of equal mass count as distinct individuals). Returns 0 when m exceeds
/// the number of cells.
pub fn factorial_integral<F: Fn(&[f64]) -> f64>(masses: &[f64], m: usize, f: F) -> f64 {
    assert!(
        (1..=MAX_SAMPLE_SIZE).contains(&m),
        "sample size m must lie in 1..={MAX_SAMPLE_SIZE}"
    );
    let n = masses.len();
    if m > n {
        return 0.0;
    }
    let mut picked = vec![usize::MAX; m];
    let mut tuple = vec![0.0f64; m];
    let mut total = 0.0;
    enumerate_tuples(masses, m, 0, &mut picked, &mut tuple, &mut total, &f);
    total
}

fn enumerate_tuples<F: Fn(&[f64]) -> f64>(
    masses: &[f64],
    m: usize,
    depth: usize,
    picked: &mut [usize],
    tuple: &mut [f64],
    total: &mut f64,
    f: &F,
) {
    if depth == m {
        *total += f(tuple);
        return;
    }
    for i in 0..masses.len() {
        if picked[..depth].contains(&i) {
            continue;
        }
        picked[depth] = i;
        tuple[depth] = masses[i];
        enumerate_tuples(masses, m, depth + 1, picked, tuple, total, f);
    }
}

/// Built-in bounded family for the cell-count factor g.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CellCountFn {
    /// g == 1
    One,
    /// g(w) = q^w for q in (0,1]
    Geometric { q: f64 },
    /// g(w) = (1+w)^{-a} for a > 0
    InversePower { a: f64 },
}

impl CellCountFn {
    pub fn eval(&self, w: usize) -> f64 {
        match *self {
            CellCountFn::One => 1.0,
            CellCountFn::Geometric { q } => q.powi(w as i32),
            CellCountFn::InversePower { a } => (1.0 + w as f64).powf(-a),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            CellCountFn::One => Ok(()),
            CellCountFn::Geometric { q } if q > 0.0 && q <= 1.0 => Ok(()),
            CellCountFn::Geometric { q } => {
                Err(Error::Domain(format!("geometric g needs q in (0,1], got {q}")))
            }
            CellCountFn::InversePower { a } if a > 0.0 => Ok(()),
            CellCountFn::InversePower { a } => {
                Err(Error::Domain(format!("inverse-power g needs a > 0, got {a}")))
            }
        }
    }
}

/// The sampled-mass factor f with analytic value, first and second
/// partials in each coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MarkFn {
    Constant(f64),
    /// prod z_i^{powers[i]}
    Monomial { powers: Vec<u32> },
    /// exp(-sum coeffs[i] * z_i)
    ExpSum { coeffs: Vec<f64> },
    /// max(z_{index} - knot, 0); piecewise linear, value-only use
    /// (its second partial vanishes a.e.)
    Hinge { index: usize, knot: f64, arity: usize },
}

impl MarkFn {
    pub fn arity(&self) -> usize {
        match self {
            MarkFn::Constant(_) => 0, // any arity
            MarkFn::Monomial { powers } => powers.len(),
            MarkFn::ExpSum { coeffs } => coeffs.len(),
            MarkFn::Hinge { arity, .. } => *arity,
        }
    }

    pub fn value(&self, z: &[f64]) -> f64 {
        match self {
            MarkFn::Constant(c) => *c,
            MarkFn::Monomial { powers } => z
                .iter()
                .zip(powers)
                .map(|(&zi, &p)| zi.powi(p as i32))
                .product(),
            MarkFn::ExpSum { coeffs } => {
                (-z.iter().zip(coeffs).map(|(&zi, &c)| c * zi).sum::<f64>()).exp()
            }
            MarkFn::Hinge { index, knot, .. } => (z[*index] - knot).max(0.0),
        }
    }

    /// First partial in coordinate `i`.
    pub fn d1(&self, i: usize, z: &[f64]) -> f64 {
        match self {
            MarkFn::Constant(_) => 0.0,
            MarkFn::Monomial { powers } => {
                let p = powers[i];
                if p == 0 {
                    return 0.0;
                }
                let mut v = p as f64 * z[i].powi(p as i32 - 1);
                for (j, (&zj, &pj)) in z.iter().zip(powers).enumerate() {
                    if j != i {
                        v *= zj.powi(pj as i32);
                    }
                }
                v
            }
            MarkFn::ExpSum { coeffs } => -coeffs[i] * self.value(z),
            MarkFn::Hinge { index, knot, .. } => {
                if i == *index && z[i] > *knot {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Second partial in coordinate `i`.
    pub fn d2(&self, i: usize, z: &[f64]) -> f64 {
        match self {
            MarkFn::Constant(_) => 0.0,
            MarkFn::Monomial { powers } => {
                let p = powers[i];
                if p < 2 {
                    return 0.0;
                }
                let mut v = (p * (p - 1)) as f64 * z[i].powi(p as i32 - 2);
                for (j, (&zj, &pj)) in z.iter().zip(powers).enumerate() {
                    if j != i {
                        v *= zj.powi(pj as i32);
                    }
                }
                v
            }
            MarkFn::ExpSum { coeffs } => coeffs[i] * coeffs[i] * self.value(z),
            MarkFn::Hinge { .. } => 0.0,
        }
    }

    /// Whether analytic partials are available (the hinge is value-only).
    pub fn smooth(&self) -> bool {
        !matches!(self, MarkFn::Hinge { .. })
    }
}

/// A polynomial F^{g,f,m}: g(cell count) times the factorial-measure
/// integral of f over m sampled cell masses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestFunction {
    pub g: CellCountFn,
    pub m: usize,
    pub f: MarkFn,
}

impl TestFunction {
    pub fn new(g: CellCountFn, m: usize, f: MarkFn) -> Result<Self> {
        g.validate()?;
        if !(1..=MAX_SAMPLE_SIZE).contains(&m) {
            return Err(Error::Domain(format!(
                "sample size m must lie in 1..={MAX_SAMPLE_SIZE}, got {m}"
            )));
        }
        let arity = f.arity();
        if arity != 0 && arity != m {
            return Err(Error::Domain(format!(
                "f has arity {arity} but m = {m}"
            )));
        }
        Ok(Self { g, m, f })
    }
}

/// F^{g,f,m}(nu) = g(#cells) * factorial_integral(nu, m, f).
pub fn eval_polynomial(tf: &TestFunction, masses: &[f64]) -> f64 {
    tf.g.eval(masses.len()) * factorial_integral(masses, tf.m, |z| tf.f.value(z))
}

/// The dual function F(nu, (q, m, x)) = q^{#cells} * int exp(-sum x_k z_k)
/// nu^{(x) m, down}; 0 when m exceeds the number of cells.
pub fn eval_dual_function(masses: &[f64], q: f64, marks: &[f64]) -> f64 {
    let m = marks.len();
    if m > masses.len() {
        return 0.0;
    }
    q.powi(masses.len() as i32)
        * factorial_integral(masses, m, |z| {
            (-z.iter().zip(marks).map(|(&zi, &xi)| xi * zi).sum::<f64>()).exp()
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn split_pmf_examples() {
        assert_eq!(binomial_split_pmf(0, 0.5, 0).unwrap(), 1.0);
        assert_relative_eq!(binomial_split_pmf(2, 0.5, 1).unwrap(), 0.5, epsilon = 1e-14);
        assert_relative_eq!(
            binomial_split_pmf(3, 0.25, 0).unwrap(),
            0.421_875,
            epsilon = 1e-12
        );
        assert!(binomial_split_pmf(3, 0.25, 4).is_err());
        assert!(binomial_split_pmf(3, 1.0, 1).is_err());
    }

    #[test]
    fn split_pmf_sums_to_one_large_n() {
        for &n in &[1u64, 7, 100, 1000, 10_000] {
            for &theta in &[0.1, 0.5, 0.93] {
                let s: f64 = (0..=n)
                    .map(|k| binomial_split_pmf(n, theta, k).unwrap())
                    .sum();
                // per-term relative error ~1e-15 accumulates over n+1 terms
                let tol = 1e-13 * (n as f64 + 10.0);
                assert!((s - 1.0).abs() < tol, "n={n} theta={theta} sum={s}");
            }
        }
    }

    #[test]
    fn factorial_integral_examples() {
        // two ordered distinct pairs
        assert_eq!(factorial_integral(&[1.0, 2.0], 2, |_| 1.0), 2.0);
        // (1,2)+(2,1) = 2+2
        assert_eq!(factorial_integral(&[1.0, 2.0], 2, |z| z[0] * z[1]), 4.0);
        // no distinct pair exists
        assert_eq!(factorial_integral(&[3.0], 2, |_| 1.0), 0.0);
    }

    #[test]
    fn factorial_integral_counts_falling_factorials() {
        // f == 1 gives n! / (n-m)!
        for n in 0..6usize {
            let masses: Vec<f64> = (0..n).map(|i| i as f64).collect();
            for m in 1..=4usize {
                let expect = if m <= n {
                    ((n - m + 1)..=n).product::<usize>() as f64
                } else {
                    0.0
                };
                assert_eq!(factorial_integral(&masses, m, |_| 1.0), expect);
            }
        }
    }

    #[test]
    fn equal_atoms_are_distinct_individuals() {
        // two atoms of the same mass still form two ordered pairs
        assert_eq!(factorial_integral(&[2.0, 2.0], 2, |_| 1.0), 2.0);
        assert_eq!(factorial_integral(&[2.0, 2.0], 2, |z| z[0] * z[1]), 8.0);
    }

    #[test]
    fn eval_polynomial_examples() {
        let sum_mass = TestFunction::new(
            CellCountFn::One,
            1,
            MarkFn::Monomial { powers: vec![1] },
        )
        .unwrap();
        assert_eq!(eval_polynomial(&sum_mass, &[1.0, 2.0, 3.0]), 6.0);

        let halving = TestFunction::new(
            CellCountFn::Geometric { q: 0.5 },
            1,
            MarkFn::Constant(1.0),
        )
        .unwrap();
        assert_relative_eq!(
            eval_polynomial(&halving, &[0.3, 0.5, 0.9]),
            3.0 / 8.0,
            epsilon = 1e-14
        );

        let too_many = TestFunction::new(CellCountFn::One, 3, MarkFn::Constant(1.0)).unwrap();
        assert_eq!(eval_polynomial(&too_many, &[1.0, 2.0]), 0.0);
    }

    #[test]
    fn dual_function_examples() {
        assert_relative_eq!(
            eval_dual_function(&[1.0, 1.0], 0.5, &[0.0]),
            0.5,
            epsilon = 1e-14
        );
        // q=1, x=0: reduces to the cell count
        assert_eq!(eval_dual_function(&[0.2, 5.0, 1.1], 1.0, &[0.0]), 3.0);
        assert_relative_eq!(
            eval_dual_function(&[1.0], 1.0, &[1.0]),
            (-1.0f64).exp(),
            epsilon = 1e-14
        );
        // m > #cells
        assert_eq!(eval_dual_function(&[1.0], 1.0, &[0.5, 0.5]), 0.0);
    }

    #[test]
    fn test_function_validation() {
        assert!(TestFunction::new(CellCountFn::Geometric { q: 0.0 }, 1, MarkFn::Constant(1.0))
            .is_err());
        assert!(TestFunction::new(CellCountFn::One, 5, MarkFn::Constant(1.0)).is_err());
        assert!(TestFunction::new(
            CellCountFn::One,
            2,
            MarkFn::ExpSum { coeffs: vec![1.0] }
        )
        .is_err());
    }

    #[test]
    fn mark_fn_partials_match_finite_differences() {
        let fns = vec![
            MarkFn::Monomial { powers: vec![2, 1] },
            MarkFn::Monomial { powers: vec![3, 0] },
            MarkFn::ExpSum { coeffs: vec![0.7, 1.3] },
        ];
        let z = [0.8, 1.4];
        let h = 1e-5;
        for f in fns {
            for i in 0..2 {
                let mut zp = z;
                let mut zm = z;
                zp[i] += h;
                zm[i] -= h;
                let fd1 = (f.value(&zp) - f.value(&zm)) / (2.0 * h);
                let fd2 = (f.value(&zp) - 2.0 * f.value(&z) + f.value(&zm)) / (h * h);
                assert_relative_eq!(f.d1(i, &z), fd1, max_relative = 1e-6);
                assert_relative_eq!(f.d2(i, &z), fd2, max_relative = 1e-4);
            }
        }
    }

    proptest! {
        #[test]
        fn pmf_sums_to_one(n in 0u64..300, theta in 0.01f64..0.99) {
            let s: f64 = (0..=n).map(|k| binomial_split_pmf(n, theta, k).unwrap()).sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }

        #[test]
        fn factorial_integral_linear_in_f(
            masses in proptest::collection::vec(0.0f64..5.0, 1..5),
            a in -2.0f64..2.0,
            b in -2.0f64..2.0,
        ) {
            let lhs = factorial_integral(&masses, 2, |z| a * z[0] + b * z[0] * z[1]);
            let f1 = factorial_integral(&masses, 2, |z| z[0]);
            let f2 = factorial_integral(&masses, 2, |z| z[0] * z[1]);
            prop_assert!((lhs - (a * f1 + b * f2)).abs() < 1e-9 * (1.0 + lhs.abs()));
        }

        #[test]
        fn dual_function_bounded_by_falling_factorial(
            masses in proptest::collection::vec(0.0f64..5.0, 1..6),
            q in 0.05f64..1.0,
            marks in proptest::collection::vec(0.0f64..3.0, 1..4),
        ) {
            let n = masses.len();
            let m = marks.len();
            let v = eval_dual_function(&masses, q, &marks);
            let bound = if m <= n {
                q.powi(n as i32) * ((n - m + 1)..=n).product::<usize>() as f64
            } else {
                0.0
            };
            prop_assert!(v <= bound + 1e-12);
            prop_assert!(v >= 0.0);
        }
    }
}
