//! Special functions and small numerical kernels used across the crate.

use std::f64::consts::PI;
use std::num::NonZeroUsize;

use gauss_quad::{FiniteAboveNegOneF64, GaussJacobi, GaussLegendre};

/// Gamma function.
pub fn gamma(x: f64) -> f64 {
    statrs::function::gamma::gamma(x)
}

/// Natural logarithm of the Gamma function for positive arguments.
pub fn ln_gamma(x: f64) -> f64 {
    statrs::function::gamma::ln_gamma(x)
}

/// Euler Beta function `B(a, b)` for positive arguments.
pub fn beta(a: f64, b: f64) -> f64 {
    (ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)).exp()
}

/// Volume of the unit ball in `R^n`.
pub fn unit_ball_volume(n: usize) -> f64 {
    let h = n as f64 / 2.0;
    PI.powf(h) / gamma(h + 1.0)
}

/// Surface measure of the unit sphere `S^{n-1}` in `R^n`.
pub fn sphere_area(n: usize) -> f64 {
    let h = n as f64 / 2.0;
    2.0 * PI.powf(h) / gamma(h)
}

const BERNOULLI_EVEN: [f64; 6] = [
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
];

/// Riemann zeta function for real `s > 1`, via Euler-Maclaurin summation.
pub fn riemann_zeta(s: f64) -> f64 {
    assert!(s > 1.0, "zeta is only implemented for s > 1");
    let m = 20usize;
    let head: Vec<f64> = (1..m).map(|n| (n as f64).powf(-s)).collect();
    let mf = m as f64;
    let mut total = pairwise_sum(&head) + mf.powf(1.0 - s) / (s - 1.0) + 0.5 * mf.powf(-s);
    let mut rising = s;
    let mut factorial = 2.0;
    for (j, b) in BERNOULLI_EVEN.iter().enumerate() {
        let order = 2 * (j + 1);
        total += b / factorial * rising * mf.powf(-s - order as f64 + 1.0);
        rising *= (s + order as f64 - 1.0) * (s + order as f64);
        factorial *= ((order + 1) * (order + 2)) as f64;
    }
    total
}

/// Deterministic pairwise (tree) summation.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const BLOCK: usize = 16;
    if values.len() <= BLOCK {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Odd power `sign(x) |x|^p`.
pub fn signed_pow(x: f64, p: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x.signum() * x.abs().powf(p)
    }
}

/// `(1 + x)^p - 1` without cancellation for `x > -1`.
pub fn pow1p_m1(x: f64, p: f64) -> f64 {
    (p * x.ln_1p()).exp_m1()
}

/// `(Σ v)^p - Σ v^p` for non-negative `v`, accurate when one term dominates.
pub fn pow_sum_excess(values: &[f64], p: f64) -> f64 {
    let (imax, &vmax) = match values.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)) {
        Some(pair) => pair,
        None => return 0.0,
    };
    if vmax <= 0.0 {
        return 0.0;
    }
    let rest: f64 = values
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != imax)
        .map(|(_, v)| *v)
        .sum();
    let rest_pow: f64 = values
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != imax)
        .map(|(_, v)| v.powf(p))
        .sum();
    vmax.powf(p) * pow1p_m1(rest / vmax, p) - rest_pow
}

/// Gauss-Legendre nodes and weights mapped to `[a, b]`.
pub fn gauss_legendre(order: usize, a: f64, b: f64) -> Vec<(f64, f64)> {
    let degree = NonZeroUsize::new(order.max(1)).expect("order is positive");
    let rule = GaussLegendre::new(degree);
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut out: Vec<(f64, f64)> = rule
        .as_node_weight_pairs()
        .iter()
        .map(|&(x, w)| (mid + half * x, half * w))
        .collect();
    out.sort_by(|p, q| p.0.total_cmp(&q.0));
    out
}

/// Symmetric Gauss-Jacobi rule on `[-1, 1]` for the weight `(1 - x²)^a`.
pub fn gauss_jacobi_symmetric(order: usize, a: f64) -> Vec<(f64, f64)> {
    let degree = NonZeroUsize::new(order.max(1)).expect("order is positive");
    let exponent = FiniteAboveNegOneF64::new(a).expect("exponent above -1");
    let rule = GaussJacobi::new(degree, exponent, exponent);
    let mut out: Vec<(f64, f64)> = rule.as_node_weight_pairs().to_vec();
    out.sort_by(|p, q| p.0.total_cmp(&q.0));
    out
}

/// Gauss-Jacobi rule on `[-1, 1]` for the weight `(1 - x)^alpha (1 + x)^beta`.
pub fn gauss_jacobi(order: usize, alpha: f64, beta: f64) -> Vec<(f64, f64)> {
    let degree = NonZeroUsize::new(order.max(1)).expect("order is positive");
    let a = FiniteAboveNegOneF64::new(alpha).expect("exponent above -1");
    let b = FiniteAboveNegOneF64::new(beta).expect("exponent above -1");
    let rule = GaussJacobi::new(degree, a, b);
    let mut out: Vec<(f64, f64)> = rule.as_node_weight_pairs().to_vec();
    out.sort_by(|p, q| p.0.total_cmp(&q.0));
    out
}

/// Euclidean distance between two coordinate slices of equal length.
pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Squared Euclidean norm.
pub fn norm_sq(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum()
}

/// Ordinary least-squares fit `y = slope * x + intercept`; returns
/// `(slope, intercept, rms residual)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rms = (x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - slope * a - intercept).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    (slope, intercept, rms)
}
