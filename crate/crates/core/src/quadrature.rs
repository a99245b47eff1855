//! Gauss–Legendre rules on `[-1, 1]` and their affine images.

use crate::error::{Error, Result};

pub const MAX_NODES: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct QuadRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

/// `n`-point Gauss–Legendre rule, exact for polynomials of degree `2n - 1`.
///
/// Nodes are the roots of `P_n`, found by Newton iteration from Chebyshev
/// initial guesses; the rule is symmetrized so that nodes come in exact
/// `±` pairs.
pub fn gauss_legendre(n: usize) -> Result<QuadRule> {
    if n == 0 || n > MAX_NODES {
        return Err(Error::InvalidSize(format!(
            "Gauss-Legendre rule size {n} outside 1..={MAX_NODES}"
        )));
    }
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let half = n.div_ceil(2);
    for i in 0..half {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() <= 1e-15 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        dp = if d != 0.0 { d } else { dp };
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        // roots come out in decreasing order
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    Ok(QuadRule { nodes, weights })
}

/// `P_n(x)` and `P_n'(x)` by the three-term recurrence.
fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// `P_0(x), ..., P_max(x)` (unnormalized Legendre polynomials).
pub fn legendre_values(max: usize, x: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(max + 1);
    out.push(1.0);
    if max >= 1 {
        out.push(x);
    }
    for k in 2..=max {
        let kf = k as f64;
        let v = ((2.0 * kf - 1.0) * x * out[k - 1] - (kf - 1.0) * out[k - 2]) / kf;
        out.push(v);
    }
    out
}

impl QuadRule {
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Nodes and weights on `[a, b]`.
    pub fn map_to_element(&self, a: f64, b: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        if !(b > a) {
            return Err(Error::Domain(format!("degenerate element [{a}, {b}]")));
        }
        Ok(self.map_unchecked(a, b))
    }

    pub(crate) fn map_unchecked(&self, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
        let mid = 0.5 * (a + b);
        let half = 0.5 * (b - a);
        (
            self.nodes.iter().map(|&x| mid + half * x).collect(),
            self.weights.iter().map(|&w| half * w).collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn one_and_two_points() {
        let r = gauss_legendre(1).unwrap();
        assert_eq!(r.nodes(), &[0.0]);
        assert_abs_diff_eq!(r.weights()[0], 2.0, epsilon = 1e-15);
        let r = gauss_legendre(2).unwrap();
        let s = 1.0 / 3f64.sqrt();
        assert_abs_diff_eq!(r.nodes()[0], -s, epsilon = 1e-15);
        assert_abs_diff_eq!(r.nodes()[1], s, epsilon = 1e-15);
        assert_abs_diff_eq!(r.weights()[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r.weights()[1], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn size_limits() {
        assert!(matches!(gauss_legendre(0), Err(Error::InvalidSize(_))));
        assert!(matches!(gauss_legendre(33), Err(Error::InvalidSize(_))));
        assert!(gauss_legendre(32).is_ok());
    }

    #[test]
    fn x8_with_five_points() {
        let r = gauss_legendre(5).unwrap();
        let s: f64 = r.nodes().iter().zip(r.weights()).map(|(x, w)| w * x.powi(8)).sum();
        assert_abs_diff_eq!(s, 2.0 / 9.0, epsilon = 1e-14);
    }

    #[test]
    fn weights_and_symmetry() {
        for n in 1..=MAX_NODES {
            let r = gauss_legendre(n).unwrap();
            let total: f64 = r.weights().iter().sum();
            assert_abs_diff_eq!(total, 2.0, epsilon = 1e-13);
            for i in 0..n {
                assert_eq!(r.nodes()[i], -r.nodes()[n - 1 - i]);
                assert!(r.weights()[i] > 0.0);
                assert!(r.nodes()[i].abs() < 1.0);
            }
            assert!(r.nodes().windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn mapped_rules() {
        let r = gauss_legendre(1).unwrap();
        let (x, w) = r.map_to_element(0.0, 0.5).unwrap();
        assert_abs_diff_eq!(x[0], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(w[0], 0.5, epsilon = 1e-15);
        let r = gauss_legendre(3).unwrap();
        let (x, w) = r.map_to_element(1.0, 3.0).unwrap();
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x * x).sum();
        assert_abs_diff_eq!(s, 26.0 / 3.0, epsilon = 1e-13);
        assert_abs_diff_eq!(w.iter().sum::<f64>(), 2.0, epsilon = 1e-14);
        assert!(matches!(r.map_to_element(1.0, 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn legendre_orthogonality() {
        let r = gauss_legendre(6).unwrap();
        for m in 0..5 {
            for k in 0..5 {
                let s: f64 = r
                    .nodes()
                    .iter()
                    .zip(r.weights())
                    .map(|(&x, w)| w * legendre_values(4, x)[m] * legendre_values(4, x)[k])
                    .sum();
                let e = if m == k { 2.0 / (2.0 * m as f64 + 1.0) } else { 0.0 };
                assert_abs_diff_eq!(s, e, epsilon = 1e-14);
            }
        }
    }

    proptest! {
        #[test]
        fn exact_for_degree_2n_minus_1(n in 1usize..=10, seed in proptest::collection::vec(-1.0f64..1.0, 20)) {
            let r = gauss_legendre(n).unwrap();
            let deg = 2 * n - 1;
            let coefs = &seed[..=deg];
            // exact integral of sum c_k x^k over [-1, 1]
            let exact: f64 = coefs.iter().enumerate()
                .filter(|(k, _)| k % 2 == 0)
                .map(|(k, c)| 2.0 * c / (k as f64 + 1.0))
                .sum();
            let q: f64 = r.nodes().iter().zip(r.weights())
                .map(|(x, w)| w * coefs.iter().rev().fold(0.0, |acc, c| acc * x + c))
                .sum();
            prop_assert!((q - exact).abs() < 1e-13);
        }
    }
}
