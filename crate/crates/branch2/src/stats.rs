//! Special functions and small statistics helpers: log-gamma, the
//! regularized incomplete gamma function (series / continued fraction),
//! the Gamma CDF, Kolmogorov-Smirnov machinery and order-independent
//! pairwise summation.

/// Natural log of the gamma function (Lanczos, g = 7, n = 9).
pub fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection formula
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + 7.5;
    for (i, &c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// `ln C(n, k)` via log-gamma.
pub fn ln_choose(n: u64, k: u64) -> f64 {
    debug_assert!(k <= n);
    if k == 0 || k == n {
        return 0.0;
    }
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

const GAMMA_EPS: f64 = 1e-14;
const GAMMA_ITMAX: usize = 500;

/// Regularized lower incomplete gamma function P(a, x).
///
/// Series expansion for x < a + 1, Lentz continued fraction otherwise.
pub fn reg_lower_gamma(a: f64, x: f64) -> f64 {
    assert!(a > 0.0 && x >= 0.0, "reg_lower_gamma domain: a>0, x>=0");
    if x == 0.0 {
        return 0.0;
    }
    if x < a + 1.0 {
        // series: P(a,x) = e^{-x} x^a / Gamma(a) * sum x^n / (a)_{n+1}
        let mut ap = a;
        let mut sum = 1.0 / a;
        let mut del = sum;
        for _ in 0..GAMMA_ITMAX {
            ap += 1.0;
            del *= x / ap;
            sum += del;
            if del.abs() < sum.abs() * GAMMA_EPS {
                break;
            }
        }
        sum * (-x + a * x.ln() - ln_gamma(a)).exp()
    } else {
        // continued fraction for Q(a,x), modified Lentz
        let fpmin = f64::MIN_POSITIVE / GAMMA_EPS;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / fpmin;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..=GAMMA_ITMAX {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < fpmin {
                d = fpmin;
            }
            c = b + an / c;
            if c.abs() < fpmin {
                c = fpmin;
            }
            d = 1.0 / d;
            let del = d * c;
            h *= del;
            if (del - 1.0).abs() < GAMMA_EPS {
                break;
            }
        }
        let q = (-x + a * x.ln() - ln_gamma(a)).exp() * h;
        1.0 - q
    }
}

/// CDF of Gamma(shape, 1).
pub fn gamma_cdf(shape: f64, x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        reg_lower_gamma(shape, x)
    }
}

/// One-sample KS statistic D_n against a continuous CDF. Sorts a copy.
pub fn ks_statistic<F: Fn(f64) -> f64>(sample: &[f64], cdf: F) -> f64 {
    assert!(!sample.is_empty());
    let mut xs = sample.to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        let lo = (f - i as f64 / n).abs();
        let hi = ((i as f64 + 1.0) / n - f).abs();
        d = d.max(lo).max(hi);
    }
    d
}

/// Asymptotic KS critical value at significance `alpha` for sample size n.
/// Only the two standard levels are tabulated.
pub fn ks_critical_value(n: usize, alpha: f64) -> f64 {
    let k_alpha = if alpha <= 0.01 {
        1.627_62
    } else {
        1.358_10 // 5% level
    };
    k_alpha / (n as f64).sqrt()
}

/// Order-independent pairwise (cascade) summation.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        2 => values[0] + values[1],
        n => {
            let mid = n / 2;
            pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
        }
    }
}

/// Sample mean and standard error (SE = s / sqrt(n)), pairwise-summed.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    assert!(n >= 2, "need at least two replicates");
    let mean = pairwise_sum(values) / n as f64;
    let sq: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    let var = pairwise_sum(&sq) / (n as f64 - 1.0);
    (mean, (var / n as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn ln_gamma_matches_factorials() {
        for n in 1u64..20 {
            let f: f64 = (1..n).map(|k| k as f64).product();
            assert_relative_eq!(ln_gamma(n as f64), f.ln(), max_relative = 1e-12, epsilon = 1e-13);
        }
        assert_relative_eq!(
            ln_gamma(0.5),
            std::f64::consts::PI.sqrt().ln(),
            max_relative = 1e-10
        );
    }

    #[test]
    fn incomplete_gamma_known_values() {
        // P(1, x) = 1 - e^{-x}
        for &x in &[0.1, 1.0, 2.5, 10.0] {
            assert_relative_eq!(reg_lower_gamma(1.0, x), 1.0 - (-x).exp(), epsilon = 1e-12);
        }
        // P(2, x) = 1 - (1+x) e^{-x}
        for &x in &[0.5, 1.0, 3.0, 8.0] {
            assert_relative_eq!(
                reg_lower_gamma(2.0, x),
                1.0 - (1.0 + x) * (-x).exp(),
                epsilon = 1e-12
            );
        }
        // median of Gamma(1,1) at ln 2
        assert_relative_eq!(gamma_cdf(1.0, std::f64::consts::LN_2), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn incomplete_gamma_monotone_in_x() {
        let mut prev = 0.0;
        for i in 1..200 {
            let x = i as f64 * 0.1;
            let p = reg_lower_gamma(3.3, x);
            assert!(p >= prev && (0.0..=1.0).contains(&p));
            prev = p;
        }
    }

    #[test]
    fn ks_statistic_exact_fit_small() {
        // sample at exact quantile midpoints of U(0,1): D = 1/(2n)
        let n = 10;
        let xs: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        let d = ks_statistic(&xs, |x| x.clamp(0.0, 1.0));
        assert_relative_eq!(d, 0.05, epsilon = 1e-12);
    }

    #[test]
    fn pairwise_sum_matches_naive() {
        let xs: Vec<f64> = (0..1000).map(|i| (i as f64).sin()).collect();
        let naive: f64 = xs.iter().sum();
        assert_relative_eq!(pairwise_sum(&xs), naive, epsilon = 1e-9);
    }

    #[test]
    fn mean_se_simple() {
        let (m, se) = mean_se(&[1.0, 2.0, 3.0, 4.0]);
        assert_relative_eq!(m, 2.5);
        // s^2 = 5/3, se = sqrt(5/12)
        assert_relative_eq!(se, (5.0f64 / 12.0).sqrt(), epsilon = 1e-12);
    }
}
