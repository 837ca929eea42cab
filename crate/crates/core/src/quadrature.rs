//! Gauss-Hermite and Gauss-Legendre quadrature.
//!
//! Nodes are found by Newton iteration on the orthonormal three-term
//! recurrences, weights by the Christoffel sum 1/sum_k p_k(x)^2, which stays
//! well scaled for the node counts used here (up to a few hundred).

use crate::error::Error;
use crate::Result;

/// Nodes and weights for the weight function exp(-x^2) on the real line.
///
/// The rule integrates polynomials of degree < 2n exactly against exp(-x^2).
pub fn gauss_hermite(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if n < 2 {
        return Err(Error::invalid("gauss_hermite needs at least 2 nodes"));
    }
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];

    // Roots of H_n come in +/- pairs; find the non-negative half.
    let m = n.div_ceil(2);
    for i in 0..m {
        // Initial guesses, largest root first (Numerical Recipes style).
        let mut x = match i {
            0 => (2.0 * n as f64 + 1.0).sqrt() - 1.85575 * (2.0 * n as f64 + 1.0).powf(-1.0 / 6.0),
            1 => nodes[n - 1] - 1.14 * (n as f64).powf(0.426) / nodes[n - 1],
            2 => 1.86 * nodes[n - 2] - 0.86 * nodes[n - 1],
            3 => 1.91 * nodes[n - 3] - 0.91 * nodes[n - 2],
            _ => 2.0 * nodes[n - i] - nodes[n - i + 1],
        };
        for iter in 0..200 {
            let (p, dp) = hermite_orthonormal(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() <= 1e-15 * (1.0 + x.abs()) {
                break;
            }
            if iter == 199 {
                return Err(Error::Numeric(format!(
                    "Hermite root {i} of {n} did not converge"
                )));
            }
        }
        nodes[n - 1 - i] = x;
        nodes[i] = -x;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }

    for (x, w) in nodes.iter().zip(weights.iter_mut()) {
        *w = 1.0 / christoffel_hermite(n, *x);
    }
    Ok((nodes, weights))
}

/// Orthonormal Hermite value and derivative at x: (p_n, p_n').
fn hermite_orthonormal(n: usize, x: f64) -> (f64, f64) {
    let mut pm = 0.0;
    let mut p = std::f64::consts::PI.powf(-0.25);
    for k in 0..n {
        let kf = k as f64;
        let next = x * (2.0 / (kf + 1.0)).sqrt() * p - (kf / (kf + 1.0)).sqrt() * pm;
        pm = p;
        p = next;
    }
    let dp = (2.0 * n as f64).sqrt() * pm;
    (p, dp)
}

/// sum_{k<n} p_k(x)^2 for the orthonormal Hermite family.
fn christoffel_hermite(n: usize, x: f64) -> f64 {
    let mut pm = 0.0;
    let mut p = std::f64::consts::PI.powf(-0.25);
    let mut sum = p * p;
    for k in 0..n - 1 {
        let kf = k as f64;
        let next = x * (2.0 / (kf + 1.0)).sqrt() * p - (kf / (kf + 1.0)).sqrt() * pm;
        pm = p;
        p = next;
        sum += p * p;
    }
    sum
}

/// E[f(G)] for G ~ N(0, variance), by n-node Gauss-Hermite quadrature.
///
/// Exact for polynomial f of degree < 2 n_nodes. Non-finite integrand values
/// at the quadrature nodes are reported as a numeric error.
pub fn gauss_expectation<F: Fn(f64) -> f64>(f: F, variance: f64, n_nodes: usize) -> Result<f64> {
    if !(variance > 0.0) || !variance.is_finite() {
        return Err(Error::invalid(format!(
            "variance must be positive and finite, got {variance}"
        )));
    }
    let (nodes, weights) = gauss_hermite(n_nodes)?;
    let scale = (2.0 * variance).sqrt();
    let norm = std::f64::consts::PI.sqrt();
    let mut acc = 0.0;
    for (t, w) in nodes.iter().zip(weights.iter()) {
        let v = f(scale * t);
        if !v.is_finite() {
            return Err(Error::Numeric(format!(
                "integrand not finite at quadrature node x = {}",
                scale * t
            )));
        }
        acc += w * v;
    }
    Ok(acc / norm)
}

/// E[f(G)] for G ~ N(0, variance) when f has kinks at known breakpoints:
/// Gauss-Legendre panels between consecutive breakpoints (extended to
/// +-10 standard deviations) keep every panel smooth, so the rule
/// converges at spectral rate where plain Gauss-Hermite stalls.
pub fn gauss_expectation_piecewise<F: Fn(f64) -> f64>(
    f: F,
    variance: f64,
    breakpoints: &[f64],
    n_nodes: usize,
) -> Result<f64> {
    if !(variance > 0.0) || !variance.is_finite() {
        return Err(Error::invalid(format!(
            "variance must be positive and finite, got {variance}"
        )));
    }
    let sigma = variance.sqrt();
    let mut cuts = vec![-10.0 * sigma];
    cuts.extend(
        breakpoints
            .iter()
            .cloned()
            .filter(|b| b.abs() < 10.0 * sigma),
    );
    cuts.push(10.0 * sigma);
    cuts.sort_by(|a, b| a.total_cmp(b));

    let (nodes, weights) = gauss_legendre_01(n_nodes)?;
    let norm = 1.0 / (2.0 * std::f64::consts::PI * variance).sqrt();
    let mut acc = 0.0;
    for pair in cuts.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if b <= a {
            continue;
        }
        for (t, w) in nodes.iter().zip(weights.iter()) {
            let x = a + (b - a) * t;
            let v = f(x);
            if !v.is_finite() {
                return Err(Error::Numeric(format!("integrand not finite at x = {x}")));
            }
            acc += w * (b - a) * v * norm * (-0.5 * x * x / variance).exp();
        }
    }
    Ok(acc)
}

/// Gauss-Legendre nodes and weights on [0, 1].
pub fn gauss_legendre_01(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if n < 1 {
        return Err(Error::invalid("gauss_legendre_01 needs at least 1 node"));
    }
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Chebyshev-like initial guess on [-1, 1].
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for iter in 0..100 {
            let (p, dp) = legendre(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() <= 1e-15 {
                break;
            }
            if iter == 99 {
                return Err(Error::Numeric(format!("Legendre root {i} of {n} stalled")));
            }
        }
        let (_, dp) = legendre(n, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        // Map [-1, 1] -> [0, 1].
        nodes[i] = 0.5 * (1.0 - x);
        nodes[n - 1 - i] = 0.5 * (1.0 + x);
        weights[i] = 0.5 * w;
        weights[n - 1 - i] = 0.5 * w;
    }
    Ok((nodes, weights))
}

/// Legendre value and derivative at x: (P_n, P_n').
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut pm = 1.0;
    let mut p = x;
    for k in 2..=n {
        let kf = k as f64;
        let next = ((2.0 * kf - 1.0) * x * p - (kf - 1.0) * pm) / kf;
        pm = p;
        p = next;
    }
    let dp = n as f64 * (x * p - pm) / (x * x - 1.0);
    (p, dp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn second_moment_standard_normal() {
        let v = gauss_expectation(|x| x * x, 1.0, 10).unwrap();
        assert!((v - 1.0).abs() < 1e-12, "got {v}");
    }

    #[test]
    fn odd_integrand_vanishes() {
        let v = gauss_expectation(|x| x.tanh(), 1.0, 64).unwrap();
        assert!(v.abs() < 1e-12, "got {v}");
    }

    #[test]
    fn clipped_exponential_matches_mgf() {
        let v = gauss_expectation(|x| x.clamp(-10.0, 10.0).exp(), 1.0, 64).unwrap();
        assert!((v - 0.5f64.exp()).abs() < 1e-6, "got {v}");
    }

    #[test]
    fn rejects_bad_input() {
        assert!(gauss_expectation(|x| x, 0.0, 16).is_err());
        assert!(gauss_hermite(1).is_err());
        // Non-finite integrand surfaces as a numeric error.
        assert!(gauss_expectation(|x| (x - x) / (x - x), 1.0, 8).is_err());
    }

    #[test]
    fn piecewise_rule_matches_hermite_for_smooth_integrands() {
        let v1 = gauss_expectation(|x| (0.5 * x).tanh(), 1.0, 96).unwrap();
        let v2 = gauss_expectation_piecewise(|x| (0.5 * x).tanh(), 1.0, &[], 64).unwrap();
        assert!((v1 - v2).abs() < 1e-12, "{v1} vs {v2}");
        // Second moment sanity.
        let m2 = gauss_expectation_piecewise(|x| x * x, 2.0, &[], 64).unwrap();
        assert!((m2 - 2.0).abs() < 1e-12);
    }

    #[test]
    fn piecewise_rule_is_self_consistent_at_kinks() {
        let f = |x: f64| x.clamp(-2.0, 2.0).exp();
        let v1 = gauss_expectation_piecewise(f, 1.0, &[-2.0, 2.0], 64).unwrap();
        let v2 = gauss_expectation_piecewise(f, 1.0, &[-2.0, 2.0], 128).unwrap();
        assert!((v1 - v2).abs() < 1e-13, "{v1} vs {v2}");
        // Plain Hermite visibly lags on the kinked integrand.
        let gh = gauss_expectation(f, 1.0, 64).unwrap();
        assert!((gh - v1).abs() > 1e-6, "{gh} vs {v1}");
    }

    #[test]
    fn legendre_01_integrates_monomials() {
        let (nodes, weights) = gauss_legendre_01(8).unwrap();
        for p in 0..15 {
            let q: f64 = nodes
                .iter()
                .zip(weights.iter())
                .map(|(x, w)| w * x.powi(p))
                .sum();
            let exact = 1.0 / (p as f64 + 1.0);
            assert!((q - exact).abs() < 1e-14, "degree {p}: {q} vs {exact}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        // Doubling the node count must not move the answer for the smooth
        // bounded integrands in the suite's scale range.
        #[test]
        fn node_doubling_consistency(a in -2.0f64..2.0, b in 0.2f64..0.8, var in 0.25f64..1.0) {
            let f = |x: f64| (b * x + a).tanh();
            let v1 = gauss_expectation(f, var, 96).unwrap();
            let v2 = gauss_expectation(f, var, 192).unwrap();
            prop_assert!((v1 - v2).abs() < 1e-10, "{v1} vs {v2}");
        }

        #[test]
        fn polynomial_exactness(c0 in -2.0f64..2.0, c2 in -2.0f64..2.0, c4 in -1.0f64..1.0) {
            // E[c0 + c2 G^2 + c4 G^4] = c0 + c2 + 3 c4 for G ~ N(0,1).
            let f = move |x: f64| c0 + c2 * x * x + c4 * x.powi(4);
            let v = gauss_expectation(f, 1.0, 12).unwrap();
            let exact = c0 + c2 + 3.0 * c4;
            prop_assert!((v - exact).abs() < 1e-10 * (1.0 + exact.abs()));
        }
    }
}
