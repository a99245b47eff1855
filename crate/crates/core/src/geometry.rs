//! Parametric maps from the unit box `[0,1]^d x [0,1]` onto the physical
//! space–time cylinder `Ω x (0,T)`.
//!
//! The time direction is always the affine scaling `t = T τ`, so the full
//! Jacobian is block diagonal `diag(DF, T)`.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Points and vectors in at most two space dimensions. Unused components are
/// zero.
pub type Vec2 = [f64; 2];
pub type Mat2 = [[f64; 2]; 2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BoundaryKind {
    Dirichlet,
    Neumann,
    Robin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Lower,
    Upper,
}

/// A face of the parametric box: the set where coordinate `direction` equals
/// 0 (`Lower`) or 1 (`Upper`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Face {
    pub direction: usize,
    pub side: Side,
}

impl Face {
    pub fn new(direction: usize, side: Side) -> Self {
        Face { direction, side }
    }

    pub fn coordinate(&self) -> f64 {
        match self.side {
            Side::Lower => 0.0,
            Side::Upper => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    /// `[0, L_1] x ... x [0, L_d]`.
    Box { lengths: Vec<f64> },
    /// Upper half of the annulus `r_in <= |x| <= r_out`, parametrized by
    /// radius along `η_1` and angle `π η_2`.
    HalfAnnulus { r_in: f64, r_out: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeometryMap {
    shape: Shape,
    final_time: f64,
    /// `tags[dir][side]`; `None` for directions without faces (periodic).
    tags: Vec<[Option<BoundaryKind>; 2]>,
}

/// Axis-aligned box with every face tagged `Neumann`; retag with
/// [`GeometryMap::with_face`].
pub fn unit_box(dim: usize, lengths: &[f64], final_time: f64) -> Result<GeometryMap> {
    if !(1..=2).contains(&dim) || lengths.len() != dim {
        return Err(Error::InvalidSize(format!(
            "box of dimension {dim} with {} lengths",
            lengths.len()
        )));
    }
    if lengths.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::Domain(format!("nonpositive box length in {lengths:?}")));
    }
    check_time(final_time)?;
    Ok(GeometryMap {
        shape: Shape::Box {
            lengths: lengths.to_vec(),
        },
        final_time,
        tags: vec![[Some(BoundaryKind::Neumann); 2]; dim],
    })
}

/// Half annulus with the inner arc `Dirichlet`, the outer arc `Robin` and the
/// two flat segments on `y = 0` `Neumann`.
pub fn half_annulus(r_in: f64, r_out: f64, final_time: f64) -> Result<GeometryMap> {
    if !(r_in > 0.0 && r_out > r_in) {
        return Err(Error::Domain(format!(
            "half annulus needs 0 < r_in < r_out, got ({r_in}, {r_out})"
        )));
    }
    check_time(final_time)?;
    Ok(GeometryMap {
        shape: Shape::HalfAnnulus { r_in, r_out },
        final_time,
        tags: vec![
            [Some(BoundaryKind::Dirichlet), Some(BoundaryKind::Robin)],
            [Some(BoundaryKind::Neumann), Some(BoundaryKind::Neumann)],
        ],
    })
}

fn check_time(t: f64) -> Result<()> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::Domain(format!("final time must be positive, got {t}")));
    }
    Ok(())
}

impl GeometryMap {
    pub fn dim(&self) -> usize {
        self.tags.len()
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn final_time(&self) -> f64 {
        self.final_time
    }

    pub fn is_affine_box(&self) -> bool {
        matches!(self.shape, Shape::Box { .. })
    }

    /// Retag a face (or remove its faces with `None`, as for periodic
    /// directions).
    pub fn with_face(mut self, face: Face, kind: Option<BoundaryKind>) -> Self {
        self.tags[face.direction][side_index(face.side)] = kind;
        self
    }

    pub fn with_all_faces(mut self, kind: BoundaryKind) -> Self {
        for t in &mut self.tags {
            *t = [Some(kind); 2];
        }
        self
    }

    /// Mark direction `dir` as periodic: it has no boundary faces.
    pub fn with_periodic_direction(mut self, dir: usize) -> Self {
        self.tags[dir] = [None, None];
        self
    }

    pub fn face_tag(&self, face: Face) -> Option<BoundaryKind> {
        self.tags
            .get(face.direction)
            .and_then(|t| t[side_index(face.side)])
    }

    pub fn faces_with(&self, kind: BoundaryKind) -> Vec<Face> {
        let mut out = Vec::new();
        for dir in 0..self.dim() {
            for side in [Side::Lower, Side::Upper] {
                let f = Face::new(dir, side);
                if self.face_tag(f) == Some(kind) {
                    out.push(f);
                }
            }
        }
        out
    }

    /// `F(η)`.
    pub fn map(&self, eta: &[f64]) -> Vec2 {
        match &self.shape {
            Shape::Box { lengths } => {
                let mut x = [0.0; 2];
                for (d, l) in lengths.iter().enumerate() {
                    x[d] = l * eta[d];
                }
                x
            }
            Shape::HalfAnnulus { r_in, r_out } => {
                let r = r_in + (r_out - r_in) * eta[0];
                let th = PI * eta[1];
                [r * th.cos(), r * th.sin()]
            }
        }
    }

    /// `DF(η)` with `J[i][j] = ∂x_i/∂η_j`.
    pub fn jacobian(&self, eta: &[f64]) -> Mat2 {
        match &self.shape {
            Shape::Box { lengths } => {
                let mut j = [[0.0; 2]; 2];
                for (d, l) in lengths.iter().enumerate() {
                    j[d][d] = *l;
                }
                j
            }
            Shape::HalfAnnulus { r_in, r_out } => {
                let dr = r_out - r_in;
                let r = r_in + dr * eta[0];
                let th = PI * eta[1];
                let (s, c) = th.sin_cos();
                [[dr * c, -PI * r * s], [dr * s, PI * r * c]]
            }
        }
    }

    pub fn det_jacobian(&self, eta: &[f64]) -> f64 {
        let j = self.jacobian(eta);
        match self.dim() {
            1 => j[0][0],
            _ => j[0][0] * j[1][1] - j[0][1] * j[1][0],
        }
    }

    /// `η = F^{-1}(x)`.
    pub fn inverse(&self, x: &[f64]) -> Result<Vec2> {
        match &self.shape {
            Shape::Box { lengths } => {
                let mut eta = [0.0; 2];
                for (d, l) in lengths.iter().enumerate() {
                    eta[d] = x[d] / l;
                }
                Ok(eta)
            }
            Shape::HalfAnnulus { r_in, r_out } => {
                let r = x[0].hypot(x[1]);
                if r == 0.0 {
                    return Err(Error::Geometry("origin is not in the half annulus".into()));
                }
                let th = x[1].atan2(x[0]);
                // points on y = 0 with x < 0 may come back as -π
                let th = if th < -0.5 * PI { th + 2.0 * PI } else { th };
                Ok([(r - r_in) / (r_out - r_in), th / PI])
            }
        }
    }

    /// Physical gradient `DF^{-T} ĝ` of a function whose parametric gradient
    /// is `ĝ`.
    pub fn pullback_gradient(&self, eta: &[f64], param_grad: &[f64]) -> Result<Vec2> {
        let j = self.jacobian(eta);
        pullback_with(&j, self.dim(), param_grad)
    }

    /// Surface measure `|DF t|` on a face, `t` the parametric tangent. Faces
    /// of a one-dimensional domain are points with unit measure.
    pub fn face_measure(&self, face: Face, eta: &[f64]) -> f64 {
        if self.dim() == 1 {
            return 1.0;
        }
        let j = self.jacobian(eta);
        let along = 1 - face.direction;
        j[0][along].hypot(j[1][along])
    }

    /// Outward unit normal on a face.
    pub fn outward_normal(&self, face: Face, eta: &[f64]) -> Vec2 {
        let sign = match face.side {
            Side::Lower => -1.0,
            Side::Upper => 1.0,
        };
        if self.dim() == 1 {
            return [sign, 0.0];
        }
        // the row of DF^{-T} belonging to the face direction is normal to it
        let j = self.jacobian(eta);
        let mut e = [0.0; 2];
        e[face.direction] = 1.0;
        let n = pullback_with(&j, 2, &e).expect("regular map");
        let len = n[0].hypot(n[1]);
        [sign * n[0] / len, sign * n[1] / len]
    }
}

pub(crate) fn pullback_with(j: &Mat2, dim: usize, g: &[f64]) -> Result<Vec2> {
    match dim {
        1 => {
            if j[0][0] == 0.0 {
                return Err(Error::Geometry("singular Jacobian".into()));
            }
            Ok([g[0] / j[0][0], 0.0])
        }
        _ => {
            let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
            if det.abs() <= f64::MIN_POSITIVE {
                return Err(Error::Geometry("singular Jacobian".into()));
            }
            // solve J^T y = g
            Ok([
                (j[1][1] * g[0] - j[1][0] * g[1]) / det,
                (-j[0][1] * g[0] + j[0][0] * g[1]) / det,
            ])
        }
    }
}

fn side_index(side: Side) -> usize {
    match side {
        Side::Lower => 0,
        Side::Upper => 1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::gauss_legendre;
    use approx::assert_abs_diff_eq;

    #[test]
    fn one_dimensional_box() {
        let g = unit_box(1, &[1.0], 10.0).unwrap();
        assert_eq!(g.jacobian(&[0.3])[0][0], 1.0);
        assert_eq!(g.final_time(), 10.0);
        assert!(matches!(unit_box(1, &[0.0], 1.0), Err(Error::Domain(_))));
        assert!(matches!(unit_box(2, &[1.0, -1.0], 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn box_determinant_is_volume() {
        let g = unit_box(2, &[1.0, 1.0], 0.375).unwrap();
        assert_eq!(g.det_jacobian(&[0.2, 0.9]), 1.0);
        let g = unit_box(2, &[2.0, 0.5], 1.0).unwrap();
        assert_eq!(g.det_jacobian(&[0.2, 0.9]), 1.0);
        let g = unit_box(2, &[3.0, 0.5], 1.0).unwrap();
        assert_abs_diff_eq!(g.det_jacobian(&[0.7, 0.1]), 1.5, epsilon = 1e-15);
    }

    #[test]
    fn box_pullback_scales() {
        let g = unit_box(2, &[1.0, 1.0], 1.0).unwrap();
        assert_eq!(g.pullback_gradient(&[0.5, 0.5], &[0.3, -2.0]).unwrap(), [0.3, -2.0]);
        let g = unit_box(2, &[4.0, 2.0], 1.0).unwrap();
        let p = g.pullback_gradient(&[0.5, 0.5], &[1.0, 1.0]).unwrap();
        assert_abs_diff_eq!(p[0], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(p[1], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn annulus_corners_and_determinant() {
        let g = half_annulus(1.0, 3.0, 6.0).unwrap();
        let a = g.map(&[0.0, 0.0]);
        assert_abs_diff_eq!(a[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(a[1], 0.0, epsilon = 1e-15);
        let b = g.map(&[1.0, 0.5]);
        assert_abs_diff_eq!(b[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(b[1], 3.0, epsilon = 1e-15);
        for &(e1, e2) in &[(0.0, 0.1), (0.5, 0.5), (1.0, 0.9), (0.25, 0.0)] {
            let r = 1.0 + 2.0 * e1;
            assert_abs_diff_eq!(g.det_jacobian(&[e1, e2]), PI * 2.0 * r, epsilon = 1e-12);
        }
        assert!(matches!(half_annulus(3.0, 1.0, 6.0), Err(Error::Domain(_))));
        assert_eq!(g.face_tag(Face::new(0, Side::Lower)), Some(BoundaryKind::Dirichlet));
        assert_eq!(g.face_tag(Face::new(0, Side::Upper)), Some(BoundaryKind::Robin));
        assert_eq!(g.faces_with(BoundaryKind::Neumann).len(), 2);
    }

    #[test]
    fn annulus_area_by_quadrature() {
        let g = half_annulus(1.0, 3.0, 6.0).unwrap();
        let r = gauss_legendre(6).unwrap();
        let mut area = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                let (x, wx) = r.map_to_element(i as f64 / 4.0, (i + 1) as f64 / 4.0).unwrap();
                let (y, wy) = r.map_to_element(j as f64 / 4.0, (j + 1) as f64 / 4.0).unwrap();
                for a in 0..x.len() {
                    for b in 0..y.len() {
                        area += wx[a] * wy[b] * g.det_jacobian(&[x[a], y[b]]);
                    }
                }
            }
        }
        assert_abs_diff_eq!(area, PI * (9.0 - 1.0) / 2.0, epsilon = 1e-10);
    }

    #[test]
    fn annulus_pullback_matches_finite_differences() {
        // φ(x, y) = x^2 y + sin(y); compare ∇φ with DF^{-T} ∇(φ∘F)
        let g = half_annulus(1.0, 3.0, 6.0).unwrap();
        let phi = |x: Vec2| x[0] * x[0] * x[1] + x[1].sin();
        let eta = [0.5, 0.25];
        let eps = 1e-6;
        let mut pg = [0.0; 2];
        for d in 0..2 {
            let mut ep = eta;
            let mut em = eta;
            ep[d] += eps;
            em[d] -= eps;
            pg[d] = (phi(g.map(&ep)) - phi(g.map(&em))) / (2.0 * eps);
        }
        let grad = g.pullback_gradient(&eta, &pg).unwrap();
        let x = g.map(&eta);
        let exact = [2.0 * x[0] * x[1], x[0] * x[0] + x[1].cos()];
        assert_abs_diff_eq!(grad[0], exact[0], epsilon = 1e-6);
        assert_abs_diff_eq!(grad[1], exact[1], epsilon = 1e-6);
    }

    #[test]
    fn annulus_inverse_and_normals() {
        let g = half_annulus(1.0, 3.0, 6.0).unwrap();
        for &eta in &[[0.1, 0.2], [0.9, 0.75], [0.5, 1.0], [0.0, 0.0]] {
            let back = g.inverse(&g.map(&eta)).unwrap();
            assert_abs_diff_eq!(back[0], eta[0], epsilon = 1e-12);
            assert_abs_diff_eq!(back[1], eta[1], epsilon = 1e-12);
        }
        let n = g.outward_normal(Face::new(0, Side::Upper), &[1.0, 0.5]);
        assert_abs_diff_eq!(n[1], 1.0, epsilon = 1e-12);
        let n = g.outward_normal(Face::new(0, Side::Lower), &[0.0, 0.5]);
        assert_abs_diff_eq!(n[1], -1.0, epsilon = 1e-12);
        let n = g.outward_normal(Face::new(1, Side::Lower), &[0.5, 0.0]);
        assert_abs_diff_eq!(n[1], -1.0, epsilon = 1e-12);
        // outer arc length element: 3π per unit η_2
        assert_abs_diff_eq!(g.face_measure(Face::new(0, Side::Upper), &[1.0, 0.3]), 3.0 * PI, epsilon = 1e-12);
        assert_abs_diff_eq!(g.face_measure(Face::new(1, Side::Lower), &[0.3, 0.0]), 2.0, epsilon = 1e-12);
    }
}
