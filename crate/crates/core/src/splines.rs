//! Univariate B-spline spaces.
//!
//! A [`KnotVector`] is either open (clamped, first and last knot repeated
//! `p + 1` times) or periodic on a uniform mesh. Basis functions and their
//! derivatives are evaluated with the Cox–de Boor recursion in the
//! triangular-table form, which only ever divides by knot differences that
//! straddle a nondegenerate span.

use crate::error::{Error, Result};

/// Relative tolerance used to snap coordinates onto breakpoints and to accept
/// points that sit on the domain boundary up to rounding.
const SNAP_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct KnotVector {
    degree: usize,
    /// Full knot sequence. For periodic spaces this is the extended uniform
    /// sequence `a + (i - p) h`, `i = 0..=n + 2p`.
    knots: Vec<f64>,
    breakpoints: Vec<f64>,
    multiplicities: Vec<usize>,
    periodic: bool,
}

/// Nonzero basis functions (and derivatives) at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisTable {
    /// Knot span `i` with `knots[i] <= x < knots[i + 1]`.
    pub span: usize,
    /// Global basis index of each local column.
    pub indices: Vec<usize>,
    /// Row-major `(max_deriv + 1) x (p + 1)` array; row `k` holds the
    /// `k`-th derivatives.
    pub values: Vec<f64>,
    pub degree: usize,
    pub max_deriv: usize,
}

impl BasisTable {
    pub fn row(&self, deriv: usize) -> &[f64] {
        let w = self.degree + 1;
        &self.values[deriv * w..(deriv + 1) * w]
    }

    pub fn value(&self, deriv: usize, local: usize) -> f64 {
        self.values[deriv * (self.degree + 1) + local]
    }
}

/// Build an open knot vector on `domain` with `n_elements` uniform elements,
/// degree `degree` and global regularity `C^regularity` (`-1` means
/// discontinuous). Each entry of `extra_c0_breakpoints` becomes a breakpoint
/// of multiplicity `degree` (only `C^0` there), inserted if not already
/// present.
pub fn make_open_knot_vector(
    domain: (f64, f64),
    n_elements: usize,
    degree: usize,
    regularity: i64,
    extra_c0_breakpoints: &[f64],
) -> Result<KnotVector> {
    let (a, b) = domain;
    if !(b > a) || !a.is_finite() || !b.is_finite() {
        return Err(Error::Domain(format!("empty interval [{a}, {b}]")));
    }
    if n_elements == 0 {
        return Err(Error::InvalidSize("at least one element is required".into()));
    }
    if regularity > degree as i64 - 1 || regularity < -1 {
        return Err(Error::InvalidRegularity {
            degree,
            regularity,
        });
    }
    let interior_mult = (degree as i64 - regularity) as usize;
    let len = b - a;
    let tol = SNAP_TOL * len;

    let mut points: Vec<(f64, usize)> = (0..=n_elements)
        .map(|i| {
            let x = if i == n_elements {
                b
            } else {
                a + len * i as f64 / n_elements as f64
            };
            let m = if i == 0 || i == n_elements {
                degree + 1
            } else {
                interior_mult
            };
            (x, m)
        })
        .collect();

    for &z in extra_c0_breakpoints {
        if !(z > a + tol && z < b - tol) {
            return Err(Error::Domain(format!(
                "C^0 breakpoint {z} is not strictly inside [{a}, {b}]"
            )));
        }
        let c0_mult = degree.max(1);
        match points.iter_mut().find(|(x, _)| (*x - z).abs() <= tol) {
            Some(entry) => entry.1 = entry.1.max(c0_mult),
            None => {
                let pos = points.partition_point(|(x, _)| *x < z);
                points.insert(pos, (z, c0_mult));
            }
        }
    }

    let mut knots = Vec::new();
    for &(x, m) in &points {
        knots.extend(std::iter::repeat(x).take(m));
    }
    Ok(KnotVector {
        degree,
        knots,
        breakpoints: points.iter().map(|p| p.0).collect(),
        multiplicities: points.iter().map(|p| p.1).collect(),
        periodic: false,
    })
}

/// Uniform `C^{p-1}` periodic spline space on `domain` with `n_elements`
/// basis functions.
pub fn make_periodic_space(domain: (f64, f64), n_elements: usize, degree: usize) -> Result<KnotVector> {
    let (a, b) = domain;
    if !(b > a) {
        return Err(Error::Domain(format!("empty interval [{a}, {b}]")));
    }
    if n_elements <= degree {
        return Err(Error::InvalidSize(format!(
            "periodic space of degree {degree} needs more than {degree} elements, got {n_elements}"
        )));
    }
    let h = (b - a) / n_elements as f64;
    let knots = (0..=n_elements + 2 * degree)
        .map(|i| a + (i as f64 - degree as f64) * h)
        .collect();
    let breakpoints = (0..=n_elements)
        .map(|i| {
            if i == n_elements {
                b
            } else {
                a + i as f64 * h
            }
        })
        .collect();
    Ok(KnotVector {
        degree,
        knots,
        breakpoints,
        multiplicities: vec![1; n_elements + 1],
        periodic: true,
    })
}

impl KnotVector {
    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn multiplicities(&self) -> &[usize] {
        &self.multiplicities
    }

    pub fn is_periodic(&self) -> bool {
        self.periodic
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.breakpoints[0], *self.breakpoints.last().unwrap())
    }

    pub fn num_elements(&self) -> usize {
        self.breakpoints.len() - 1
    }

    /// Dimension of the spline space.
    pub fn num_basis(&self) -> usize {
        if self.periodic {
            self.num_elements()
        } else {
            self.knots.len() - self.degree - 1
        }
    }

    /// Parametric interval of element `e`.
    pub fn element(&self, e: usize) -> (f64, f64) {
        (self.breakpoints[e], self.breakpoints[e + 1])
    }

    /// Largest element length.
    pub fn mesh_size(&self) -> f64 {
        self.breakpoints
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0, f64::max)
    }

    /// Knot span index of element `e`.
    pub fn span_of_element(&self, e: usize) -> usize {
        if self.periodic {
            self.degree + e
        } else {
            self.multiplicities[..=e].iter().sum::<usize>() - 1
        }
    }

    /// Element containing `x`; the right endpoint belongs to the last element.
    pub fn element_of(&self, x: f64) -> Result<usize> {
        let (a, b) = self.domain();
        let tol = SNAP_TOL * (b - a);
        if !(x >= a - tol && x <= b + tol) {
            return Err(Error::Domain(format!("{x} lies outside [{a}, {b}]")));
        }
        let n = self.num_elements();
        let e = self.breakpoints.partition_point(|&z| z <= x);
        Ok(e.saturating_sub(1).min(n - 1))
    }

    /// Global index of the first nonzero basis function on element `e`.
    /// Local column `k` maps to `first + k` (modulo the dimension when
    /// periodic).
    pub fn first_basis_of_element(&self, e: usize) -> usize {
        self.span_of_element(e) - self.degree
    }

    pub fn global_index(&self, e: usize, local: usize) -> usize {
        let g = self.first_basis_of_element(e) + local;
        if self.periodic {
            g % self.num_basis()
        } else {
            g
        }
    }

    /// Basis functions and derivatives up to `max_deriv` at `x`.
    pub fn eval_basis(&self, x: f64, max_deriv: usize) -> Result<BasisTable> {
        let e = self.element_of(x)?;
        Ok(self.eval_on_element(e, x, max_deriv))
    }

    /// Like [`eval_basis`](Self::eval_basis) with the element given; `x` is
    /// not range-checked and may lie on either closed end of the element.
    pub fn eval_on_element(&self, e: usize, x: f64, max_deriv: usize) -> BasisTable {
        let span = self.span_of_element(e);
        let p = self.degree;
        let values = ders_basis_funs(&self.knots, span, p, x, max_deriv);
        let indices = (0..=p).map(|k| self.global_index(e, k)).collect();
        BasisTable {
            span,
            indices,
            values,
            degree: p,
            max_deriv,
        }
    }

    /// Averages of `p` consecutive knots; one point per basis function.
    pub fn greville_abscissae(&self) -> Result<Vec<f64>> {
        if self.periodic {
            return Err(Error::Unsupported(
                "Greville abscissae of a periodic knot vector".into(),
            ));
        }
        let p = self.degree;
        if p == 0 {
            return Ok(self
                .breakpoints
                .windows(2)
                .map(|w| 0.5 * (w[0] + w[1]))
                .collect());
        }
        Ok((0..self.num_basis())
            .map(|i| self.knots[i + 1..=i + p].iter().sum::<f64>() / p as f64)
            .collect())
    }

    /// Interpolation nodes: Greville abscissae for open knot vectors and the
    /// support centres of the basis functions (wrapped into the period) for
    /// periodic ones.
    pub fn interpolation_points(&self) -> Vec<f64> {
        if !self.periodic {
            return self.greville_abscissae().expect("open knot vector");
        }
        let (a, b) = self.domain();
        let n = self.num_basis();
        let h = (b - a) / n as f64;
        let shift = 0.5 * (self.degree + 1) as f64 * h;
        (0..n)
            .map(|j| {
                let c = self.knots[j] + shift;
                let wrapped = a + (c - a).rem_euclid(b - a);
                if (wrapped - b).abs() < SNAP_TOL * (b - a) {
                    a
                } else {
                    wrapped
                }
            })
            .collect()
    }

    /// Evaluate the spline `sum_i coefs[i] B_i` (derivative `deriv`) at `x`.
    pub fn eval_spline(&self, coefs: &[f64], x: f64, deriv: usize) -> Result<f64> {
        if coefs.len() != self.num_basis() {
            return Err(Error::DimensionMismatch {
                expected: self.num_basis(),
                got: coefs.len(),
            });
        }
        let table = self.eval_basis(x, deriv)?;
        Ok(table
            .indices
            .iter()
            .zip(table.row(deriv))
            .map(|(&i, &v)| coefs[i] * v)
            .sum())
    }
}

/// Nonzero basis functions `span - p ..= span` and their derivatives up to
/// `n` at `x`, as a row-major `(n + 1) x (p + 1)` array. Requires
/// `knots[span] < knots[span + 1]`.
fn ders_basis_funs(knots: &[f64], span: usize, p: usize, x: f64, n: usize) -> Vec<f64> {
    let w = p + 1;
    let mut ders = vec![0.0; (n + 1) * w];
    // ndu[j][r]: upper triangle basis values, lower triangle knot differences
    let mut ndu = vec![0.0; w * w];
    let mut left = vec![0.0; w];
    let mut right = vec![0.0; w];
    ndu[0] = 1.0;
    for j in 1..=p {
        left[j] = x - knots[span + 1 - j];
        right[j] = knots[span + j] - x;
        let mut saved = 0.0;
        for r in 0..j {
            ndu[j * w + r] = right[r + 1] + left[j - r];
            let temp = ndu[r * w + j - 1] / ndu[j * w + r];
            ndu[r * w + j] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        ndu[j * w + j] = saved;
    }
    for j in 0..=p {
        ders[j] = ndu[j * w + p];
    }
    if n == 0 {
        return ders;
    }

    let mut a = vec![0.0; 2 * w];
    for r in 0..=p {
        let (mut s1, mut s2) = (0usize, 1usize);
        a.iter_mut().for_each(|v| *v = 0.0);
        a[0] = 1.0;
        for k in 1..=n.min(p) {
            let mut d = 0.0;
            let rk = r as i64 - k as i64;
            let pk = p - k;
            if r >= k {
                let rk = rk as usize;
                a[s2 * w] = a[s1 * w] / ndu[(pk + 1) * w + rk];
                d = a[s2 * w] * ndu[rk * w + pk];
            }
            let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
            let j2 = if r as i64 - 1 <= pk as i64 { k - 1 } else { p - r };
            for j in j1..=j2 {
                let idx = (rk + j as i64) as usize;
                a[s2 * w + j] = (a[s1 * w + j] - a[s1 * w + j - 1]) / ndu[(pk + 1) * w + idx];
                d += a[s2 * w + j] * ndu[idx * w + pk];
            }
            if r <= pk {
                a[s2 * w + k] = -a[s1 * w + k - 1] / ndu[(pk + 1) * w + r];
                d += a[s2 * w + k] * ndu[r * w + pk];
            }
            ders[k * w + r] = d;
            std::mem::swap(&mut s1, &mut s2);
        }
    }
    let mut factor = p as f64;
    for k in 1..=n.min(p) {
        for j in 0..=p {
            ders[k * w + j] *= factor;
        }
        factor *= (p - k) as f64;
    }
    ders
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// Textbook recursion with the 0/0 = 0 convention; independent of the
    /// triangular-table evaluation above.
    fn cox_de_boor(knots: &[f64], i: usize, p: usize, x: f64) -> f64 {
        if p == 0 {
            return if knots[i] <= x && x < knots[i + 1] { 1.0 } else { 0.0 };
        }
        let mut v = 0.0;
        let d1 = knots[i + p] - knots[i];
        if d1 > 0.0 {
            v += (x - knots[i]) / d1 * cox_de_boor(knots, i, p - 1, x);
        }
        let d2 = knots[i + p + 1] - knots[i + 1];
        if d2 > 0.0 {
            v += (knots[i + p + 1] - x) / d2 * cox_de_boor(knots, i + 1, p - 1, x);
        }
        v
    }

    #[test]
    fn hat_space_knots() {
        let kv = make_open_knot_vector((0.0, 1.0), 2, 1, 0, &[]).unwrap();
        assert_eq!(kv.knots(), &[0.0, 0.0, 0.5, 1.0, 1.0]);
        assert_eq!(kv.num_basis(), 3);
    }

    #[test]
    fn maximal_regularity_dimension() {
        let kv = make_open_knot_vector((0.0, 1.0), 4, 3, 2, &[]).unwrap();
        assert_eq!(kv.multiplicities()[1..4], [1, 1, 1]);
        assert_eq!(kv.num_basis(), 7);
    }

    #[test]
    fn inserted_c0_line() {
        let kv = make_open_knot_vector((0.0, 1.0), 8, 2, 1, &[0.5]).unwrap();
        let knots = kv.knots();
        let explicit = [
            0.0, 0.0, 0.0, 0.125, 0.25, 0.375, 0.5, 0.5, 0.625, 0.75, 0.875, 1.0, 1.0, 1.0,
        ];
        assert_eq!(knots.len(), explicit.len());
        for (a, b) in knots.iter().zip(explicit) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
        assert_eq!(kv.multiplicities()[4], 2);
        assert_eq!(kv.num_basis(), explicit.len() - 2 - 1);
        assert_eq!(kv.num_basis(), 11);

        // a new breakpoint off the uniform grid is inserted
        let kv = make_open_knot_vector((0.0, 1.0), 2, 2, 1, &[0.3]).unwrap();
        assert_eq!(kv.num_elements(), 3);
        assert_eq!(kv.multiplicities(), &[3, 2, 1, 3]);
    }

    #[test]
    fn regularity_and_domain_errors() {
        assert!(matches!(
            make_open_knot_vector((0.0, 1.0), 4, 2, 2, &[]),
            Err(Error::InvalidRegularity { .. })
        ));
        assert!(matches!(
            make_open_knot_vector((0.0, 1.0), 4, 2, 1, &[1.0]),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            make_open_knot_vector((0.0, 1.0), 4, 2, 1, &[-0.2]),
            Err(Error::Domain(_))
        ));
        assert!(matches!(make_periodic_space((0.0, 1.0), 3, 3), Err(Error::InvalidSize(_))));
        let kv = make_open_knot_vector((0.0, 1.0), 4, 2, 1, &[]).unwrap();
        assert!(matches!(kv.eval_basis(1.5, 0), Err(Error::Domain(_))));
    }

    #[test]
    fn linear_hats_at_quarter() {
        let kv = make_open_knot_vector((0.0, 1.0), 2, 1, 0, &[]).unwrap();
        let t = kv.eval_basis(0.25, 0).unwrap();
        assert_eq!(t.indices, vec![0, 1]);
        assert_abs_diff_eq!(t.row(0)[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(t.row(0)[1], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn quadratic_values_match_piecewise_expansion() {
        // uniform p=2 on [0,1], 4 elements: knots 0,0,0,1/4,1/2,3/4,1,1,1.
        // x = 0.3 lies in [1/4, 1/2); with s = 4x - 1 the three nonzero
        // B-splines are N1 = (1-s)^2/2, N2 = (-2s^2 + 2s + 1)/2, N3 = s^2/2
        // (N1 is the non-uniform function with support [0, 1/2]).
        let kv = make_open_knot_vector((0.0, 1.0), 4, 2, 1, &[]).unwrap();
        let x = 0.3;
        let s: f64 = 4.0 * x - 1.0;
        let t = kv.eval_basis(x, 1).unwrap();
        assert_eq!(t.indices, vec![1, 2, 3]);
        let expect = [0.5 * (1.0 - s).powi(2), 0.5 * (-2.0 * s * s + 2.0 * s + 1.0), 0.5 * s * s];
        let dexpect = [-4.0 * (1.0 - s), 4.0 * (1.0 - 2.0 * s), 4.0 * s];
        for k in 0..3 {
            assert_abs_diff_eq!(t.value(0, k), expect[k], epsilon = 1e-14);
            assert_abs_diff_eq!(t.value(1, k), dexpect[k], epsilon = 1e-13);
        }
    }

    #[test]
    fn agrees_with_naive_recursion() {
        for &(p, q, n) in &[(1usize, 0i64, 3usize), (2, 1, 5), (3, 2, 4), (3, 0, 3), (4, 1, 6)] {
            let kv = make_open_knot_vector((0.0, 1.0), n, p, q, &[]).unwrap();
            for i in 0..97 {
                let x = i as f64 / 97.0;
                let t = kv.eval_basis(x, 0).unwrap();
                for (k, &g) in t.indices.iter().enumerate() {
                    assert_abs_diff_eq!(
                        t.value(0, k),
                        cox_de_boor(kv.knots(), g, p, x),
                        epsilon = 1e-13
                    );
                }
            }
        }
    }

    #[test]
    fn right_endpoint_maps_to_last_span() {
        let kv = make_open_knot_vector((0.0, 2.0), 3, 2, 1, &[]).unwrap();
        let t = kv.eval_basis(2.0, 1).unwrap();
        assert_eq!(*t.indices.last().unwrap(), kv.num_basis() - 1);
        assert_abs_diff_eq!(t.value(0, 2), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let kv = make_open_knot_vector((0.0, 1.0), 5, 4, 2, &[]).unwrap();
        let x = 0.537;
        let eps = 1e-6;
        let t = kv.eval_basis(x, 4).unwrap();
        let tp = kv.eval_basis(x + eps, 3).unwrap();
        let tm = kv.eval_basis(x - eps, 3).unwrap();
        for d in 1..=4 {
            for k in 0..=4 {
                let fd = (tp.value(d - 1, k) - tm.value(d - 1, k)) / (2.0 * eps);
                let scale = 1.0 + t.value(d, k).abs();
                assert!((fd - t.value(d, k)).abs() < 1e-5 * scale, "d={d} k={k}");
            }
        }
    }

    #[test]
    fn periodic_hats_wrap() {
        let kv = make_periodic_space((0.0, 1.0), 8, 1).unwrap();
        assert_eq!(kv.num_basis(), 8);
        let t = kv.eval_basis(0.95, 0).unwrap();
        // hat j is centred at j/8; the one centred at 0 also covers (7/8, 1]
        assert_eq!(t.indices, vec![7, 0]);
        assert_abs_diff_eq!(t.value(0, 1), 0.6, epsilon = 1e-12);
        let t0 = kv.eval_basis(0.05, 0).unwrap();
        assert_eq!(t0.indices, vec![0, 1]);
        assert_abs_diff_eq!(t0.value(0, 0), 0.6, epsilon = 1e-12);
    }

    #[test]
    fn periodic_shift_permutes_cyclically() {
        let n = 12;
        let kv = make_periodic_space((0.0, 1.0), n, 3).unwrap();
        let h = 1.0 / n as f64;
        for i in 0..40 {
            let x = 0.013 + i as f64 * 0.0217;
            let x = x % (1.0 - h);
            let a = kv.eval_basis(x, 1).unwrap();
            let b = kv.eval_basis(x + h, 1).unwrap();
            let mut dense_a = vec![0.0; n];
            let mut dense_b = vec![0.0; n];
            for k in 0..4 {
                dense_a[a.indices[k]] += a.value(0, k);
                dense_b[b.indices[k]] += b.value(0, k);
            }
            for j in 0..n {
                assert_abs_diff_eq!(dense_a[j], dense_b[(j + 1) % n], epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn greville_examples() {
        let kv = make_open_knot_vector((0.0, 1.0), 2, 1, 0, &[]).unwrap();
        assert_eq!(kv.greville_abscissae().unwrap(), vec![0.0, 0.5, 1.0]);
        let kv = make_open_knot_vector((0.0, 1.0), 2, 2, 1, &[]).unwrap();
        let g = kv.greville_abscissae().unwrap();
        for (a, b) in g.iter().zip([0.0, 0.25, 0.75, 1.0]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
        let kv = make_open_knot_vector((0.0, 1.0), 4, 3, 2, &[]).unwrap();
        let g = kv.greville_abscissae().unwrap();
        let expect = [0.0, 1.0 / 12.0, 0.25, 0.5, 0.75, 11.0 / 12.0, 1.0];
        assert_eq!(g.len(), 7);
        for (a, b) in g.iter().zip(expect) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        let pk = make_periodic_space((0.0, 1.0), 8, 2).unwrap();
        assert!(matches!(pk.greville_abscissae(), Err(Error::Unsupported(_))));
    }

    #[test]
    fn smoothness_at_multiple_knot() {
        // p = 3 with a knot of multiplicity 2 at 0.5: C^1 there, C^2 jumps.
        let kv = make_open_knot_vector((0.0, 1.0), 4, 3, 2, &[]).unwrap();
        let kv = {
            // raise the multiplicity of 0.5 to 2 by building it explicitly
            let mut k = kv.clone();
            let pos = k.knots.iter().position(|&x| x == 0.5).unwrap();
            k.knots.insert(pos, 0.5);
            k.multiplicities[2] = 2;
            k
        };
        let coefs: Vec<f64> = (0..kv.num_basis()).map(|i| ((i * 7 + 3) % 5) as f64 - 1.7).collect();
        let left = kv.eval_on_element(1, 0.5, 3);
        let right = kv.eval_on_element(2, 0.5, 3);
        let spl = |t: &BasisTable, d: usize| -> f64 {
            t.indices.iter().enumerate().map(|(k, &g)| coefs[g] * t.value(d, k)).sum()
        };
        for d in 0..=1 {
            assert_abs_diff_eq!(spl(&left, d), spl(&right, d), epsilon = 1e-10);
        }
        assert!((spl(&left, 2) - spl(&right, 2)).abs() > 1e-6);
    }
}
