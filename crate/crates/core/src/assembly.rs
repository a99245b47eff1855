//! Petrov–Galerkin systems for the plain, IGA-Stab and FEM-Stab forms.
//!
//! The bilinear form is
//! `a(w, v) = ∫_Q c² ∇w·∇v - ∂_t w ∂_t v + ∫_{Σ_R} ϑ c ∂_t w v`,
//! optionally minus the high-order penalty
//! `δ Σ_k (T Δζ_k)^{2p_t} ∫ c² ∂_t^{p_t}∇w · ∂_t^{p_t}∇v` (IGA-Stab), or with
//! the test gradient replaced by its per-time-element L² projection onto
//! polynomials of degree `p_t - 1` (FEM-Stab).
//!
//! Constant speed on a box is assembled from 1D factors as a sum of
//! Kronecker products; everything else goes through an element loop.

use rayon::prelude::*;

use crate::discretization::{DiscreteFunction, Space1D, SpaceTimeSpace};
use crate::error::{Error, Result};
use crate::geometry::{BoundaryKind, Face, GeometryMap, Shape, Side, Vec2};
use crate::problem::{Velocity, WaveProblem};
use crate::quadrature::{gauss_legendre, legendre_values};
use crate::sparse::SparseMatrix;

/// Sparse 1D matrix: rows index test functions, columns trial functions.
pub type Matrix1D = SparseMatrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    Plain,
    IgaStab { delta: f64 },
    FemStab,
}

impl Method {
    /// IGA-Stab with the default `δ = 10^{-p}`.
    pub fn iga_stab_default(p: usize) -> Self {
        Method::IgaStab {
            delta: 10f64.powi(-(p as i32)),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Method::Plain => "plain",
            Method::IgaStab { .. } => "iga-stab",
            Method::FemStab => "fem-stab",
        }
    }

    pub fn delta(&self) -> Option<f64> {
        match self {
            Method::IgaStab { delta } => Some(*delta),
            _ => None,
        }
    }

    fn validate(&self) -> Result<()> {
        if let Method::IgaStab { delta } = self {
            if !(*delta > 0.0 && delta.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "stabilization parameter must be positive, got {delta}"
                )));
            }
        }
        Ok(())
    }
}

/// Which operator assembly to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AssemblyPath {
    /// Kronecker products when speed and geometry allow it.
    Auto,
    Kronecker,
    ElementLoop,
}

#[derive(Debug, Clone)]
pub struct LinearSystem {
    pub operator: SparseMatrix,
    pub rhs: Vec<f64>,
    pub method: Method,
    /// Physical mesh sizes `(h_s, h_t)`; `h_s` is the largest over directions.
    pub mesh_sizes: (f64, f64),
    /// `(p_s, p_t)`, `p_s` the largest spatial degree.
    pub degrees: (usize, usize),
    pub trial: SpaceTimeSpace,
    pub test: SpaceTimeSpace,
}

impl LinearSystem {
    pub fn n_dof(&self) -> usize {
        self.rhs.len()
    }
}

/// `Σ_e scale(e) ∫_e weight · D^a(trial_j) · D^b(test_i)` in parametric
/// coordinates.
pub fn assemble_1d(
    trial: &Space1D,
    test: &Space1D,
    trial_deriv: usize,
    test_deriv: usize,
    weight: &dyn Fn(f64) -> f64,
    element_scale: &dyn Fn(usize) -> f64,
) -> Result<Matrix1D> {
    let p = trial.knot_vector().degree();
    assemble_1d_nodes(trial, test, trial_deriv, test_deriv, weight, element_scale, p + 2)
}

fn assemble_1d_nodes(
    trial: &Space1D,
    test: &Space1D,
    trial_deriv: usize,
    test_deriv: usize,
    weight: &dyn Fn(f64) -> f64,
    element_scale: &dyn Fn(usize) -> f64,
    nodes: usize,
) -> Result<Matrix1D> {
    let kv = same_knots(trial, test)?;
    let p = kv.degree();
    if trial_deriv > p || test_deriv > p {
        return Err(Error::InvalidParameter(format!(
            "derivative orders ({trial_deriv}, {test_deriv}) exceed degree {p}"
        )));
    }
    let rule = gauss_legendre(nodes)?;
    let md = trial_deriv.max(test_deriv);
    let mut triplets = Vec::new();
    for e in 0..kv.num_elements() {
        let (a, b) = kv.element(e);
        let scale = element_scale(e);
        let (xs, ws) = rule.map_unchecked(a, b);
        for (&x, &w) in xs.iter().zip(&ws) {
            let t = kv.eval_on_element(e, x, md);
            let wx = scale * w * weight(x);
            for (li, &gi) in t.indices.iter().enumerate() {
                let Some(i) = test.local_index(gi) else { continue };
                let vi = t.value(test_deriv, li);
                for (lj, &gj) in t.indices.iter().enumerate() {
                    let Some(j) = trial.local_index(gj) else { continue };
                    triplets.push((i, j, wx * vi * t.value(trial_deriv, lj)));
                }
            }
        }
    }
    Ok(SparseMatrix::from_triplets(test.dim(), trial.dim(), triplets))
}

/// `Σ_e Σ_{m ≤ degree} (∫_e ψ_i L_m)(∫_e ψ_j L_m)` with `L_m` orthonormal
/// Legendre polynomials on each element: the mass matrix between trial
/// functions and L²-projected test functions.
pub fn projected_mass_1d(trial: &Space1D, test: &Space1D, degree: usize) -> Result<Matrix1D> {
    let kv = same_knots(trial, test)?;
    let p = kv.degree();
    let rule = gauss_legendre(p.max(degree) + 2)?;
    let mut triplets = Vec::new();
    for e in 0..kv.num_elements() {
        let (a, b) = kv.element(e);
        let (xs, ws) = rule.map_unchecked(a, b);
        // moments[m][k] = ∫_e ψ_k L_m
        let mut moments = vec![vec![0.0; p + 1]; degree + 1];
        for ((&x, &w), &xi) in xs.iter().zip(&ws).zip(rule.nodes()) {
            let t = kv.eval_on_element(e, x, 0);
            let leg = legendre_values(degree, xi);
            for m in 0..=degree {
                let lm = leg[m] * ((2 * m + 1) as f64 / (b - a)).sqrt();
                for k in 0..=p {
                    moments[m][k] += w * lm * t.value(0, k);
                }
            }
        }
        for li in 0..=p {
            let Some(i) = test.local_index(kv.global_index(e, li)) else { continue };
            for lj in 0..=p {
                let Some(j) = trial.local_index(kv.global_index(e, lj)) else { continue };
                let v: f64 = moments.iter().map(|mm| mm[li] * mm[lj]).sum();
                triplets.push((i, j, v));
            }
        }
    }
    Ok(SparseMatrix::from_triplets(test.dim(), trial.dim(), triplets))
}

/// `E[i][j] = test_i(x) trial_j(x)` at an end of the parameter interval.
fn trace_1d(trial: &Space1D, test: &Space1D, side: Side) -> Result<Matrix1D> {
    let kv = same_knots(trial, test)?;
    let x = match side {
        Side::Lower => kv.domain().0,
        Side::Upper => kv.domain().1,
    };
    let t = kv.eval_basis(x, 0)?;
    let mut triplets = Vec::new();
    for (li, &gi) in t.indices.iter().enumerate() {
        let Some(i) = test.local_index(gi) else { continue };
        for (lj, &gj) in t.indices.iter().enumerate() {
            let Some(j) = trial.local_index(gj) else { continue };
            let v = t.value(0, li) * t.value(0, lj);
            if v != 0.0 {
                triplets.push((i, j, v));
            }
        }
    }
    Ok(SparseMatrix::from_triplets(test.dim(), trial.dim(), triplets))
}

fn same_knots<'a>(trial: &'a Space1D, test: &Space1D) -> Result<&'a crate::splines::KnotVector> {
    if trial.knot_vector() != test.knot_vector() {
        return Err(Error::InvalidParameter(
            "trial and test factors must share the knot vector".into(),
        ));
    }
    Ok(trial.knot_vector())
}

fn check_compatible(problem: &WaveProblem, trial: &SpaceTimeSpace, test: &SpaceTimeSpace) -> Result<()> {
    let d = problem.geometry.dim();
    if trial.space_dim() != d || test.space_dim() != d {
        return Err(Error::InvalidParameter(format!(
            "{}-dimensional geometry with {}/{}-dimensional spaces",
            d,
            trial.space_dim(),
            test.space_dim()
        )));
    }
    for dir in 0..d {
        same_knots(&trial.spatial()[dir], &test.spatial()[dir])?;
        let periodic = trial.spatial()[dir].knot_vector().is_periodic();
        let faceless = problem.geometry.face_tag(Face::new(dir, Side::Lower)).is_none()
            && problem.geometry.face_tag(Face::new(dir, Side::Upper)).is_none();
        if periodic != faceless {
            return Err(Error::InvalidParameter(format!(
                "direction {dir}: periodic spaces need a periodic geometry direction and vice versa"
            )));
        }
    }
    same_knots(trial.temporal(), test.temporal())?;
    Ok(())
}

fn kronecker_applicable(problem: &WaveProblem) -> bool {
    matches!(problem.velocity, Velocity::Constant(_))
}

/// Operator of `method` mapping `trial` coefficients to test residuals.
pub fn assemble_operator(
    problem: &WaveProblem,
    trial: &SpaceTimeSpace,
    test: &SpaceTimeSpace,
    method: Method,
    path: AssemblyPath,
) -> Result<SparseMatrix> {
    method.validate()?;
    check_compatible(problem, trial, test)?;
    let kron = match path {
        AssemblyPath::Auto => kronecker_applicable(problem),
        AssemblyPath::Kronecker => {
            if !kronecker_applicable(problem) {
                return Err(Error::Unsupported(
                    "Kronecker assembly needs a constant speed".into(),
                ));
            }
            true
        }
        AssemblyPath::ElementLoop => false,
    };
    if kron {
        kron_terms(problem, trial, test, method)?.to_sparse()
    } else {
        element_loop_operator(problem, trial, test, method)
    }
}

/// One term `coef · F_t ⊗ F_{d-1} ⊗ … ⊗ F_0` of a separated operator.
#[derive(Debug, Clone)]
pub struct KronTerm {
    pub coef: f64,
    /// Slowest first: time, then the spatial directions from last to first.
    pub factors: Vec<SparseMatrix>,
}

/// Operator stored as a sum of Kronecker products.
#[derive(Debug, Clone)]
pub struct KronOperator {
    terms: Vec<KronTerm>,
    /// Per-axis sizes, fastest first (space directions, then time).
    row_dims: Vec<usize>,
    col_dims: Vec<usize>,
}

impl KronOperator {
    pub fn new(terms: Vec<KronTerm>) -> Result<Self> {
        let first = terms
            .first()
            .ok_or_else(|| Error::InvalidParameter("empty Kronecker operator".into()))?;
        let row_dims: Vec<usize> = first.factors.iter().rev().map(|f| f.rows()).collect();
        let col_dims: Vec<usize> = first.factors.iter().rev().map(|f| f.cols()).collect();
        for t in &terms {
            let r: Vec<usize> = t.factors.iter().rev().map(|f| f.rows()).collect();
            let c: Vec<usize> = t.factors.iter().rev().map(|f| f.cols()).collect();
            if r != row_dims || c != col_dims {
                return Err(Error::InvalidParameter("Kronecker terms of different shapes".into()));
            }
        }
        Ok(KronOperator {
            terms,
            row_dims,
            col_dims,
        })
    }

    pub fn terms(&self) -> &[KronTerm] {
        &self.terms
    }

    pub fn row_dims(&self) -> &[usize] {
        &self.row_dims
    }

    pub fn col_dims(&self) -> &[usize] {
        &self.col_dims
    }

    pub fn rows(&self) -> usize {
        self.row_dims.iter().product()
    }

    pub fn cols(&self) -> usize {
        self.col_dims.iter().product()
    }

    pub fn to_sparse(&self) -> Result<SparseMatrix> {
        let products: Vec<SparseMatrix> = self
            .terms
            .iter()
            .map(|t| SparseMatrix::kron_all(&t.factors.iter().collect::<Vec<_>>()))
            .collect();
        let combo: Vec<(f64, &SparseMatrix)> = self.terms.iter().zip(&products).map(|(t, m)| (t.coef, m)).collect();
        SparseMatrix::linear_combination(&combo)
    }

    /// `y = A x` without forming `A`.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols() {
            return Err(Error::DimensionMismatch {
                expected: self.cols(),
                got: x.len(),
            });
        }
        let mut y = vec![0.0; self.rows()];
        let naxes = self.col_dims.len();
        for t in &self.terms {
            let mut v = x.to_vec();
            let mut shape = self.col_dims.clone();
            for axis in 0..naxes {
                v = mode_product(&v, &mut shape, axis, &t.factors[naxes - 1 - axis]);
            }
            for (yi, vi) in y.iter_mut().zip(&v) {
                *yi += t.coef * vi;
            }
        }
        Ok(y)
    }

    /// Upper bound for the largest entry magnitude.
    pub fn max_abs_bound(&self) -> f64 {
        self.terms
            .iter()
            .map(|t| t.coef.abs() * t.factors.iter().map(|f| f.max_abs()).product::<f64>())
            .sum()
    }
}

/// Multiply a tensor (fastest axis first) along `axis` by `m`.
fn mode_product(x: &[f64], shape: &mut [usize], axis: usize, m: &SparseMatrix) -> Vec<f64> {
    let inner: usize = shape[..axis].iter().product();
    let n = shape[axis];
    let outer: usize = shape[axis + 1..].iter().product();
    let r = m.rows();
    let mut y = vec![0.0; inner * r * outer];
    for o in 0..outer {
        for i in 0..r {
            let (cols, vals) = m.row(i);
            let dst = inner * (i + r * o);
            for (&j, &a) in cols.iter().zip(vals) {
                let src = inner * (j + n * o);
                for k in 0..inner {
                    y[dst + k] += a * x[src + k];
                }
            }
        }
    }
    shape[axis] = r;
    y
}

/// Raw 1D factors of one spatial direction.
struct DirFactors {
    mass: SparseMatrix,
    stiff: SparseMatrix,
}

/// The operator as a sum of Kronecker products. Needs a constant speed; the
/// half annulus separates in polar coordinates.
pub fn kron_terms(
    problem: &WaveProblem,
    trial: &SpaceTimeSpace,
    test: &SpaceTimeSpace,
    method: Method,
) -> Result<KronOperator> {
    method.validate()?;
    check_compatible(problem, trial, test)?;
    let c = problem.velocity.constant_value().ok_or_else(|| {
        Error::Unsupported("separated assembly needs a constant speed".into())
    })?;
    let tf = problem.geometry.final_time();
    let d = trial.space_dim();
    let one = |_: f64| 1.0;
    let unit = |_: usize| 1.0;
    let dirs: Vec<DirFactors> = (0..d)
        .map(|dir| {
            let (tr, te) = (&trial.spatial()[dir], &test.spatial()[dir]);
            Ok(DirFactors {
                mass: assemble_1d(tr, te, 0, 0, &one, &unit)?,
                stiff: assemble_1d(tr, te, 1, 1, &one, &unit)?,
            })
        })
        .collect::<Result<_>>()?;
    // slowest-first spatial factor list with `pick(dir)` in each slot
    let spatial = |pick: &dyn Fn(usize) -> SparseMatrix| -> Vec<SparseMatrix> { (0..d).rev().map(pick).collect() };
    let trace = |face: Face| trace_1d(&trial.spatial()[face.direction], &test.spatial()[face.direction], face.side);

    let mut mass_terms: Vec<(f64, Vec<SparseMatrix>)> = Vec::new();
    let mut stiff_terms: Vec<(f64, Vec<SparseMatrix>)> = Vec::new();
    let mut robin_terms: Vec<(f64, Vec<SparseMatrix>)> = Vec::new();
    let robin = problem.geometry.faces_with(BoundaryKind::Robin);
    match problem.geometry.shape() {
        Shape::Box { lengths } => {
            let vol: f64 = lengths.iter().product();
            mass_terms.push((vol, spatial(&|dir| dirs[dir].mass.clone())));
            for k in 0..d {
                let f = spatial(&|dir| if dir == k { dirs[dir].stiff.clone() } else { dirs[dir].mass.clone() });
                stiff_terms.push((vol / (lengths[k] * lengths[k]), f));
            }
            for face in robin {
                let k = face.direction;
                let e = trace(face)?;
                let f = spatial(&|dir| if dir == k { e.clone() } else { dirs[dir].mass.clone() });
                robin_terms.push((vol / lengths[k], f));
            }
        }
        Shape::HalfAnnulus { r_in, r_out } => {
            let (r_in, r_out) = (*r_in, *r_out);
            let len = r_out - r_in;
            let pi = std::f64::consts::PI;
            let (ps, pt) = max_degrees(trial);
            let nq = ps.max(pt) + 2;
            let r = move |eta: f64| r_in + len * eta;
            let (tr, te) = (&trial.spatial()[0], &test.spatial()[0]);
            let rm = assemble_1d_nodes(tr, te, 0, 0, &r, &unit, nq)?;
            let ra = assemble_1d_nodes(tr, te, 1, 1, &r, &unit, nq)?;
            let rinv = assemble_1d_nodes(tr, te, 0, 0, &|eta| 1.0 / r(eta), &unit, nq)?;
            mass_terms.push((len * pi, vec![dirs[1].mass.clone(), rm]));
            stiff_terms.push((pi / len, vec![dirs[1].mass.clone(), ra]));
            stiff_terms.push((len / pi, vec![dirs[1].stiff.clone(), rinv]));
            for face in robin {
                let e = trace(face)?;
                if face.direction == 0 {
                    let radius = match face.side {
                        Side::Lower => r_in,
                        Side::Upper => r_out,
                    };
                    robin_terms.push((pi * radius, vec![dirs[1].mass.clone(), e]));
                } else {
                    robin_terms.push((len, vec![e, dirs[0].mass.clone()]));
                }
            }
        }
    }

    let (tt, tv) = (trial.temporal(), test.temporal());
    let pt = tt.knot_vector().degree();
    let at = assemble_1d(tt, tv, 1, 1, &one, &unit)?;
    let grad_time = match method {
        Method::FemStab => projected_mass_1d(tt, tv, pt - 1)?,
        _ => assemble_1d(tt, tv, 0, 0, &one, &unit)?,
    };
    let with_time = |coef: f64, time: &SparseMatrix, space: &[SparseMatrix]| {
        let mut factors = Vec::with_capacity(space.len() + 1);
        factors.push(time.clone());
        factors.extend_from_slice(space);
        KronTerm { coef, factors }
    };
    let mut terms = Vec::new();
    for (cm, f) in &mass_terms {
        terms.push(with_time(-cm / tf, &at, f));
    }
    for (cs, f) in &stiff_terms {
        terms.push(with_time(c * c * tf * cs, &grad_time, f));
    }
    if let Method::IgaStab { delta } = method {
        let kv = tt.knot_vector();
        let slab = |e: usize| {
            let (a, b) = kv.element(e);
            (b - a).powi(2 * pt as i32)
        };
        let st = assemble_1d(tt, tv, pt, pt, &one, &slab)?;
        for (cs, f) in &stiff_terms {
            terms.push(with_time(-delta * c * c * tf * cs, &st, f));
        }
    }
    if !robin_terms.is_empty() {
        let bt = assemble_1d(tt, tv, 1, 0, &one, &unit)?;
        for (cr, f) in &robin_terms {
            terms.push(with_time(problem.impedance * c * cr, &bt, f));
        }
    }
    KronOperator::new(terms)
}

/// Basis data at one spatial quadrature point.
#[derive(Debug, Clone)]
struct SpatialPoint {
    /// Quadrature weight times the volume (or surface) measure.
    weight: f64,
    x: Vec2,
    normal: Vec2,
    phi: Vec<f64>,
    grad: Vec<Vec2>,
}

#[derive(Debug, Clone)]
struct SpatialElement {
    points: Vec<SpatialPoint>,
    /// Spatial DOF of each local function in the trial/test numbering.
    trial: Vec<Option<usize>>,
    test: Vec<Option<usize>>,
    midpoint: Vec2,
}

#[derive(Debug, Clone)]
struct TimeElement {
    /// Physical times and weights `T w`.
    times: Vec<f64>,
    weights: Vec<f64>,
    /// `[r][k]` values, first τ-derivatives and `p_t`-th τ-derivatives.
    psi: Vec<Vec<f64>>,
    dpsi: Vec<Vec<f64>>,
    dpsi_p: Vec<Vec<f64>>,
    /// Test values after L² projection (FEM-Stab), else a copy of `psi`.
    psi_test: Vec<Vec<f64>>,
    trial: Vec<Option<usize>>,
    test: Vec<Option<usize>>,
    /// Parametric length `Δζ`.
    length: f64,
    midtime: f64,
}

fn spatial_elements(
    trial: &SpaceTimeSpace,
    test: &SpaceTimeSpace,
    geometry: &GeometryMap,
    nq: usize,
) -> Result<Vec<SpatialElement>> {
    let d = trial.space_dim();
    let rule = gauss_legendre(nq)?;
    let kvs: Vec<_> = trial.spatial().iter().map(|s| s.knot_vector()).collect();
    let ne: Vec<usize> = kvs.iter().map(|k| k.num_elements()).collect();
    let n1 = if d == 2 { ne[1] } else { 1 };
    let mut out = Vec::with_capacity(ne[0] * n1);
    for e1 in 0..n1 {
        for e0 in 0..ne[0] {
            let elem = [e0, e1];
            let mut pts: Vec<Vec<(f64, f64)>> = Vec::with_capacity(d);
            let mut tables = Vec::with_capacity(d);
            for dir in 0..d {
                let (a, b) = kvs[dir].element(elem[dir]);
                let (xs, ws) = rule.map_unchecked(a, b);
                tables.push(
                    xs.iter()
                        .map(|&x| kvs[dir].eval_on_element(elem[dir], x, 1))
                        .collect::<Vec<_>>(),
                );
                pts.push(xs.into_iter().zip(ws).collect());
            }
            let (trial_map, test_map) = local_spatial_maps(trial, test, &elem, &tables)?;
            let mid: Vec<f64> = (0..d)
                .map(|dir| {
                    let (a, b) = kvs[dir].element(elem[dir]);
                    0.5 * (a + b)
                })
                .collect();
            let mut points = Vec::with_capacity(pts.iter().map(Vec::len).product());
            let q1 = if d == 2 { pts[1].len() } else { 1 };
            for j in 0..q1 {
                for i in 0..pts[0].len() {
                    let (eta, w, vals) = tensor_point(d, &pts, &tables, i, j);
                    let jac = geometry.jacobian(&eta[..d]);
                    let det = geometry.det_jacobian(&eta[..d]);
                    if !(det > 0.0) {
                        return Err(Error::Geometry(format!("nonpositive Jacobian {det} at {eta:?}")));
                    }
                    let grad = vals
                        .iter()
                        .map(|&(_, g0, g1)| crate::geometry::pullback_with(&jac, d, &[g0, g1]))
                        .collect::<Result<Vec<_>>>()?;
                    points.push(SpatialPoint {
                        weight: w * det,
                        x: geometry.map(&eta[..d]),
                        normal: [0.0; 2],
                        phi: vals.iter().map(|v| v.0).collect(),
                        grad,
                    });
                }
            }
            out.push(SpatialElement {
                points,
                trial: trial_map,
                test: test_map,
                midpoint: geometry.map(&mid),
            });
        }
    }
    Ok(out)
}

/// Parametric point, weight and `(φ, ∂_0 φ, ∂_1 φ)` of all local functions
/// (first direction fastest) at tensor quadrature point `(i, j)`.
fn tensor_point(
    d: usize,
    pts: &[Vec<(f64, f64)>],
    tables: &[Vec<crate::splines::BasisTable>],
    i: usize,
    j: usize,
) -> ([f64; 2], f64, Vec<(f64, f64, f64)>) {
    let t0 = &tables[0][i];
    let n0 = t0.indices.len();
    if d == 1 {
        let vals = (0..n0).map(|a| (t0.value(0, a), t0.value(1, a), 0.0)).collect();
        return ([pts[0][i].0, 0.0], pts[0][i].1, vals);
    }
    let t1 = &tables[1][j];
    let n1 = t1.indices.len();
    let mut vals = Vec::with_capacity(n0 * n1);
    for b in 0..n1 {
        for a in 0..n0 {
            vals.push((
                t0.value(0, a) * t1.value(0, b),
                t0.value(1, a) * t1.value(0, b),
                t0.value(0, a) * t1.value(1, b),
            ));
        }
    }
    ([pts[0][i].0, pts[1][j].0], pts[0][i].1 * pts[1][j].1, vals)
}

fn local_spatial_maps(
    trial: &SpaceTimeSpace,
    test: &SpaceTimeSpace,
    elem: &[usize],
    tables: &[Vec<crate::splines::BasisTable>],
) -> Result<(Vec<Option<usize>>, Vec<Option<usize>>)> {
    let d = trial.space_dim();
    let idx0 = &tables[0][0].indices;
    let one = vec![0usize];
    let idx1 = if d == 2 { &tables[1][0].indices } else { &one };
    let map = |space: &SpaceTimeSpace| -> Vec<Option<usize>> {
        let mut out = Vec::with_capacity(idx0.len() * idx1.len());
        for &g1 in idx1.iter() {
            for &g0 in idx0.iter() {
                let l0 = space.spatial()[0].local_index(g0);
                let l1 = if d == 2 { space.spatial()[1].local_index(g1) } else { Some(0) };
                out.push(match (l0, l1) {
                    (Some(a), Some(b)) => Some(space.spatial_flat(&[a, b])),
                    _ => None,
                });
            }
        }
        out
    };
    let _ = elem;
    Ok((map(trial), map(test)))
}

/// Boundary elements of one face with surface quadrature data.
fn face_elements(
    trial: &SpaceTimeSpace,
    test: &SpaceTimeSpace,
    geometry: &GeometryMap,
    face: Face,
    nq: usize,
) -> Result<Vec<SpatialElement>> {
    let d = trial.space_dim();
    let rule = gauss_legendre(nq)?;
    let kvs: Vec<_> = trial.spatial().iter().map(|s| s.knot_vector()).collect();
    let k = face.direction;
    let ek = match face.side {
        Side::Lower => 0,
        Side::Upper => kvs[k].num_elements() - 1,
    };
    let along: Vec<usize> = if d == 2 { (0..kvs[1 - k].num_elements()).collect() } else { vec![0] };
    let mut out = Vec::new();
    for ea in along {
        let mut elem = [0usize; 2];
        elem[k] = ek;
        if d == 2 {
            elem[1 - k] = ea;
        }
        let mut pts: Vec<Vec<(f64, f64)>> = Vec::with_capacity(d);
        let mut tables = Vec::with_capacity(d);
        for dir in 0..d {
            if dir == k {
                let x = face.coordinate();
                pts.push(vec![(x, 1.0)]);
                tables.push(vec![kvs[dir].eval_on_element(elem[dir], x, 1)]);
            } else {
                let (a, b) = kvs[dir].element(elem[dir]);
                let (xs, ws) = rule.map_unchecked(a, b);
                tables.push(
                    xs.iter()
                        .map(|&x| kvs[dir].eval_on_element(elem[dir], x, 1))
                        .collect::<Vec<_>>(),
                );
                pts.push(xs.into_iter().zip(ws).collect());
            }
        }
        let (trial_map, test_map) = local_spatial_maps(trial, test, &elem, &tables)?;
        let mut points = Vec::new();
        let q1 = if d == 2 { pts[1].len() } else { 1 };
        for j in 0..q1 {
            for i in 0..pts[0].len() {
                let (eta, w, vals) = tensor_point(d, &pts, &tables, i, j);
                points.push(SpatialPoint {
                    weight: w * geometry.face_measure(face, &eta[..d]),
                    x: geometry.map(&eta[..d]),
                    normal: geometry.outward_normal(face, &eta[..d]),
                    phi: vals.iter().map(|v| v.0).collect(),
                    grad: Vec::new(),
                });
            }
        }
        let mid: Vec<f64> = (0..d)
            .map(|dir| {
                let (a, b) = kvs[dir].element(elem[dir]);
                0.5 * (a + b)
            })
            .collect();
        out.push(SpatialElement {
            points,
            trial: trial_map,
            test: test_map,
            midpoint: geometry.map(&mid),
        });
    }
    Ok(out)
}

fn time_element(
    trial: &Space1D,
    test: &Space1D,
    e: usize,
    nq: usize,
    final_time: f64,
    project: bool,
) -> Result<TimeElement> {
    let kv = trial.knot_vector();
    let p = kv.degree();
    let rule = gauss_legendre(nq)?;
    let (a, b) = kv.element(e);
    let (xs, ws) = rule.map_unchecked(a, b);
    let tabs: Vec<_> = xs.iter().map(|&x| kv.eval_on_element(e, x, p.max(1))).collect();
    let psi: Vec<Vec<f64>> = tabs.iter().map(|t| t.row(0).to_vec()).collect();
    let dpsi: Vec<Vec<f64>> = tabs.iter().map(|t| t.row(1).to_vec()).collect();
    let dpsi_p: Vec<Vec<f64>> = tabs.iter().map(|t| t.row(p).to_vec()).collect();
    let psi_test = if project {
        // Q ψ_l = Σ_m (∫ ψ_l L_m) L_m with orthonormal Legendre L_m, m < p
        let deg = p - 1;
        let norm: Vec<f64> = (0..=deg).map(|m| ((2 * m + 1) as f64 / (b - a)).sqrt()).collect();
        let leg: Vec<Vec<f64>> = rule
            .nodes()
            .iter()
            .map(|&xi| {
                legendre_values(deg, xi)
                    .iter()
                    .zip(&norm)
                    .map(|(v, n)| v * n)
                    .collect()
            })
            .collect();
        let mut moments = vec![vec![0.0; p + 1]; deg + 1];
        for r in 0..xs.len() {
            for m in 0..=deg {
                for l in 0..=p {
                    moments[m][l] += ws[r] * leg[r][m] * psi[r][l];
                }
            }
        }
        (0..xs.len())
            .map(|r| {
                (0..=p)
                    .map(|l| (0..=deg).map(|m| moments[m][l] * leg[r][m]).sum())
                    .collect()
            })
            .collect()
    } else {
        psi.clone()
    };
    let globals: Vec<usize> = (0..=p).map(|k| kv.global_index(e, k)).collect();
    Ok(TimeElement {
        times: xs.iter().map(|&x| final_time * x).collect(),
        weights: ws.iter().map(|&w| final_time * w).collect(),
        psi,
        dpsi,
        dpsi_p,
        psi_test,
        trial: globals.iter().map(|&g| trial.local_index(g)).collect(),
        test: globals.iter().map(|&g| test.local_index(g)).collect(),
        length: b - a,
        midtime: final_time * 0.5 * (a + b),
    })
}

fn velocity_fn<'a>(velocity: &'a Velocity, midpoint: Vec2, midtime: f64) -> impl Fn(&Vec2, f64) -> f64 + 'a {
    move |x: &Vec2, t: f64| match velocity {
        Velocity::Constant(c) => *c,
        Velocity::Variable(f) => f(x, t),
        Velocity::ElementMidpoint(f) => f(&midpoint, midtime),
    }
}

/// Sparsity pattern of the space–time operator (Kronecker product of the
/// 1D coupling patterns).
fn operator_pattern(trial: &SpaceTimeSpace, test: &SpaceTimeSpace) -> Result<SparseMatrix> {
    let pattern_1d = |tr: &Space1D, te: &Space1D| -> Result<SparseMatrix> {
        let kv = same_knots(tr, te)?;
        let p = kv.degree();
        let mut trip = Vec::new();
        for e in 0..kv.num_elements() {
            for li in 0..=p {
                let Some(i) = te.local_index(kv.global_index(e, li)) else { continue };
                for lj in 0..=p {
                    if let Some(j) = tr.local_index(kv.global_index(e, lj)) {
                        trip.push((i, j, 1.0));
                    }
                }
            }
        }
        Ok(SparseMatrix::from_triplets(te.dim(), tr.dim(), trip))
    };
    let mut factors = vec![pattern_1d(trial.temporal(), test.temporal())?];
    for dir in (0..trial.space_dim()).rev() {
        factors.push(pattern_1d(&trial.spatial()[dir], &test.spatial()[dir])?);
    }
    let refs: Vec<&SparseMatrix> = factors.iter().collect();
    let mut m = SparseMatrix::kron_all(&refs);
    m.data_mut().iter_mut().for_each(|v| *v = 0.0);
    Ok(m)
}

fn max_degrees(trial: &SpaceTimeSpace) -> (usize, usize) {
    let ps = trial
        .spatial()
        .iter()
        .map(|s| s.knot_vector().degree())
        .max()
        .unwrap_or(0);
    (ps, trial.temporal().knot_vector().degree())
}

/// Run `slab` over all time elements in parallel chunks and merge the
/// returned `(index, value)` contributions serially in time-element order.
fn merge_slabs<F>(n_slabs: usize, target: &mut [f64], slab: F) -> Result<()>
where
    F: Fn(usize) -> Result<Vec<(usize, f64)>> + Sync,
{
    let chunk = 2 * rayon::current_num_threads().max(1);
    let mut start = 0;
    while start < n_slabs {
        let end = (start + chunk).min(n_slabs);
        let parts: Vec<Vec<(usize, f64)>> = (start..end)
            .into_par_iter()
            .map(&slab)
            .collect::<Result<Vec<_>>>()?;
        for part in parts {
            for (k, v) in part {
                target[k] += v;
            }
        }
        start = end;
    }
    Ok(())
}

fn element_loop_operator(
    problem: &WaveProblem,
    trial: &SpaceTimeSpace,
    test: &SpaceTimeSpace,
    method: Method,
) -> Result<SparseMatrix> {
    let (ps, pt) = max_degrees(trial);
    let affine = matches!(problem.velocity, Velocity::Constant(_)) && problem.geometry.is_affine_box();
    let extra = if affine { 1 } else { 2 };
    let nq = ps.max(pt) + extra;
    let geometry = &problem.geometry;
    let tf = geometry.final_time();
    let spatial = spatial_elements(trial, test, geometry, nq)?;
    let mut robin = Vec::new();
    for face in geometry.faces_with(BoundaryKind::Robin) {
        robin.extend(face_elements(trial, test, geometry, face, nq)?);
    }
    let mut matrix = operator_pattern(trial, test)?;
    let pattern = matrix.clone();
    let (ns_trial, ns_test) = (trial.n_space(), test.n_space());
    let delta = method.delta().unwrap_or(0.0);
    let project = method == Method::FemStab;
    let n_te = trial.temporal().knot_vector().num_elements();

    let slab = |et: usize| -> Result<Vec<(usize, f64)>> {
        let te = time_element(trial.temporal(), test.temporal(), et, nq, tf, project)?;
        let nk = te.psi[0].len();
        let nr = te.times.len();
        let penalty_scale = te.length.powi(2 * pt as i32);
        // ∂_t ψ_k ∂_t ψ_l = T^{-2} ∂_τ ψ_k ∂_τ ψ_l
        let mut tt = vec![0.0; nk * nk];
        for r in 0..nr {
            let w = te.weights[r] / (tf * tf);
            for k in 0..nk {
                for l in 0..nk {
                    tt[k * nk + l] += w * te.dpsi[r][k] * te.dpsi[r][l];
                }
            }
        }
        let mut out = Vec::new();
        let mut emit = |se: &SpatialElement, local: &[f64], na: usize| {
            for l in 0..nk {
                let Some(itv) = te.test[l] else { continue };
                for b in 0..na {
                    let Some(sv) = se.test[b] else { continue };
                    let row = sv + ns_test * itv;
                    let base = (l * na + b) * nk * na;
                    for k in 0..nk {
                        let Some(itw) = te.trial[k] else { continue };
                        for a in 0..na {
                            let Some(sw) = se.trial[a] else { continue };
                            let col = sw + ns_trial * itw;
                            let v = local[base + k * na + a];
                            let pos = pattern.position(row, col).expect("entry in pattern");
                            out.push((pos, v));
                        }
                    }
                }
            }
        };
        let mut tc = vec![0.0; nk * nk];
        let mut tp = vec![0.0; nk * nk];
        let mut c2 = vec![0.0; nr];
        for se in &spatial {
            let na = se.trial.len();
            let mut local = vec![0.0; nk * na * nk * na];
            let c = velocity_fn(&problem.velocity, se.midpoint, te.midtime);
            for pt_ in &se.points {
                for r in 0..nr {
                    let cv = c(&pt_.x, te.times[r]);
                    c2[r] = cv * cv;
                }
                tc.iter_mut().for_each(|v| *v = 0.0);
                tp.iter_mut().for_each(|v| *v = 0.0);
                for r in 0..nr {
                    let w = te.weights[r] * c2[r];
                    for k in 0..nk {
                        let wk = w * te.psi[r][k];
                        let wpk = w * te.dpsi_p[r][k] * penalty_scale;
                        for l in 0..nk {
                            tc[k * nk + l] += wk * te.psi_test[r][l];
                            tp[k * nk + l] += wpk * te.dpsi_p[r][l];
                        }
                    }
                }
                for k in 0..nk * nk {
                    tc[k] -= delta * tp[k];
                }
                let wq = pt_.weight;
                for b in 0..na {
                    for a in 0..na {
                        let g = wq * (pt_.grad[a][0] * pt_.grad[b][0] + pt_.grad[a][1] * pt_.grad[b][1]);
                        let m = wq * pt_.phi[a] * pt_.phi[b];
                        for l in 0..nk {
                            let base = (l * na + b) * nk * na + a;
                            for k in 0..nk {
                                local[base + k * na] += g * tc[k * nk + l] - m * tt[k * nk + l];
                            }
                        }
                    }
                }
            }
            emit(se, &local, na);
        }
        for se in &robin {
            let na = se.trial.len();
            let mut local = vec![0.0; nk * na * nk * na];
            let c = velocity_fn(&problem.velocity, se.midpoint, te.midtime);
            for pt_ in &se.points {
                // ϑ c ∂_t w v dt = ϑ c ∂_τ ψ_k ψ_l dτ
                let mut tr = vec![0.0; nk * nk];
                for r in 0..nr {
                    let w = te.weights[r] / tf * problem.impedance * c(&pt_.x, te.times[r]);
                    for k in 0..nk {
                        for l in 0..nk {
                            tr[k * nk + l] += w * te.dpsi[r][k] * te.psi[r][l];
                        }
                    }
                }
                for b in 0..na {
                    for a in 0..na {
                        let m = pt_.weight * pt_.phi[a] * pt_.phi[b];
                        for l in 0..nk {
                            for k in 0..nk {
                                local[(l * na + b) * nk * na + k * na + a] += m * tr[k * nk + l];
                            }
                        }
                    }
                }
            }
            emit(se, &local, na);
        }
        Ok(out)
    };
    merge_slabs(n_te, matrix.data_mut(), slab)?;
    Ok(matrix)
}

/// `F(v) = ∫_Q f v + ∫_Ω u_1 v(·,0) + ∫_{Σ_N} g_N v + ∫_{Σ_R} g_R v`.
pub fn assemble_rhs(problem: &WaveProblem, test: &SpaceTimeSpace) -> Result<Vec<f64>> {
    if test.space_dim() != problem.geometry.dim() {
        return Err(Error::InvalidParameter("space and geometry dimensions differ".into()));
    }
    let geometry = &problem.geometry;
    let tf = geometry.final_time();
    let (ps, pt) = max_degrees(test);
    let nq = ps.max(pt) + 3;
    let ns = test.n_space();
    let mut rhs = vec![0.0; test.n_dof()];
    let tspace = test.temporal();
    let spatial = spatial_elements(test, test, geometry, nq)?;

    if let Some(f) = &problem.source {
        let n_te = tspace.knot_vector().num_elements();
        merge_slabs(n_te, &mut rhs, |et| {
            let te = time_element(tspace, tspace, et, nq, tf, false)?;
            let mut out = Vec::new();
            for se in &spatial {
                let na = se.test.len();
                let mut local = vec![0.0; te.psi[0].len() * na];
                for p in &se.points {
                    for r in 0..te.times.len() {
                        let fv = f(&p.x, te.times[r]) * p.weight * te.weights[r];
                        if fv == 0.0 {
                            continue;
                        }
                        for (l, &psi) in te.psi[r].iter().enumerate() {
                            for b in 0..na {
                                local[l * na + b] += fv * psi * p.phi[b];
                            }
                        }
                    }
                }
                scatter_vector(&te.test, &se.test, &local, ns, &mut out);
            }
            Ok(out)
        })?;
    }

    if let Some(u1) = &problem.initial_velocity {
        let t0 = tspace.knot_vector().eval_basis(0.0, 0)?;
        for se in &spatial {
            let na = se.test.len();
            let mut integ = vec![0.0; na];
            for p in &se.points {
                let v = u1(&p.x) * p.weight;
                for b in 0..na {
                    integ[b] += v * p.phi[b];
                }
            }
            for (k, &g) in t0.indices.iter().enumerate() {
                let (Some(it), psi) = (tspace.local_index(g), t0.value(0, k)) else { continue };
                if psi == 0.0 {
                    continue;
                }
                for b in 0..na {
                    if let Some(s) = se.test[b] {
                        rhs[s + ns * it] += psi * integ[b];
                    }
                }
            }
        }
    }

    for (kind, data) in [
        (BoundaryKind::Neumann, &problem.neumann),
        (BoundaryKind::Robin, &problem.robin),
    ] {
        let Some(g) = data else { continue };
        for face in geometry.faces_with(kind) {
            let elems = face_elements(test, test, geometry, face, nq)?;
            let n_te = tspace.knot_vector().num_elements();
            merge_slabs(n_te, &mut rhs, |et| {
                let te = time_element(tspace, tspace, et, nq, tf, false)?;
                let mut out = Vec::new();
                for se in &elems {
                    let na = se.test.len();
                    let mut local = vec![0.0; te.psi[0].len() * na];
                    for p in &se.points {
                        for r in 0..te.times.len() {
                            let gv = g(&p.x, &p.normal, te.times[r]) * p.weight * te.weights[r];
                            for (l, &psi) in te.psi[r].iter().enumerate() {
                                for b in 0..na {
                                    local[l * na + b] += gv * psi * p.phi[b];
                                }
                            }
                        }
                    }
                    scatter_vector(&te.test, &se.test, &local, ns, &mut out);
                }
                Ok(out)
            })?;
        }
    }
    Ok(rhs)
}

fn scatter_vector(
    time: &[Option<usize>],
    space: &[Option<usize>],
    local: &[f64],
    ns: usize,
    out: &mut Vec<(usize, f64)>,
) {
    let na = space.len();
    for (l, it) in time.iter().enumerate() {
        let Some(it) = it else { continue };
        for (b, s) in space.iter().enumerate() {
            if let Some(s) = s {
                out.push((s + ns * it, local[l * na + b]));
            }
        }
    }
}

fn build_system(
    problem: &WaveProblem,
    trial: &SpaceTimeSpace,
    test: &SpaceTimeSpace,
    method: Method,
) -> Result<LinearSystem> {
    let operator = assemble_operator(problem, trial, test, method, AssemblyPath::Auto)?;
    let rhs = assemble_rhs(problem, test)?;
    let spatial: Vec<_> = trial.spatial().iter().map(|s| s.knot_vector().clone()).collect();
    let mesh_sizes = crate::driver::physical_mesh_sizes(&problem.geometry, &spatial, trial.temporal().knot_vector());
    Ok(LinearSystem {
        operator,
        rhs,
        method,
        mesh_sizes,
        degrees: max_degrees(trial),
        trial: trial.clone(),
        test: test.clone(),
    })
}

pub fn assemble_plain(problem: &WaveProblem, trial: &SpaceTimeSpace, test: &SpaceTimeSpace) -> Result<LinearSystem> {
    build_system(problem, trial, test, Method::Plain)
}

pub fn assemble_iga_stab(
    problem: &WaveProblem,
    trial: &SpaceTimeSpace,
    test: &SpaceTimeSpace,
    delta: f64,
) -> Result<LinearSystem> {
    build_system(problem, trial, test, Method::IgaStab { delta })
}

pub fn assemble_fem_stab(problem: &WaveProblem, trial: &SpaceTimeSpace, test: &SpaceTimeSpace) -> Result<LinearSystem> {
    build_system(problem, trial, test, Method::FemStab)
}

pub fn assemble(
    problem: &WaveProblem,
    trial: &SpaceTimeSpace,
    test: &SpaceTimeSpace,
    method: Method,
) -> Result<LinearSystem> {
    build_system(problem, trial, test, method)
}

/// `rhs ← rhs - a_method(ū, v)` for a lifting `ū` in the unconstrained space.
pub fn apply_lifting(system: &LinearSystem, lifting: &DiscreteFunction, problem: &WaveProblem) -> Result<LinearSystem> {
    let mut out = system.clone();
    if lifting.coefficients().iter().all(|&c| c == 0.0) {
        return Ok(out);
    }
    let full_op = assemble_operator(problem, lifting.space(), &system.test, system.method, AssemblyPath::Auto)?;
    let r = full_op.matvec(lifting.coefficients())?;
    for (b, v) in out.rhs.iter_mut().zip(&r) {
        *b -= v;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretization::{build_spaces, unconstrained_space};
    use crate::geometry::{half_annulus, unit_box};
    use crate::problem::all_dirichlet;
    use crate::splines::make_open_knot_vector;
    use approx::assert_abs_diff_eq;
    use std::sync::Arc;

    fn kv(n: usize, p: usize) -> crate::splines::KnotVector {
        make_open_knot_vector((0.0, 1.0), n, p, p as i64 - 1, &[]).unwrap()
    }

    fn full(n: usize, p: usize) -> Space1D {
        Space1D::full(kv(n, p))
    }

    fn rel_diff(a: &SparseMatrix, b: &SparseMatrix) -> f64 {
        a.max_abs_diff(b).unwrap() / a.max_abs().max(b.max_abs())
    }

    #[test]
    fn mass_row_sums_hat_functions() {
        let s = full(2, 1);
        let m = assemble_1d(&s, &s, 0, 0, &|_| 1.0, &|_| 1.0).unwrap();
        let sums: Vec<f64> = (0..3).map(|i| m.row(i).1.iter().sum()).collect();
        for (a, b) in sums.iter().zip([0.25, 0.5, 0.25]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn stiffness_stencil() {
        let s = full(8, 1);
        let a = assemble_1d(&s, &s, 1, 1, &|_| 1.0, &|_| 1.0).unwrap();
        let h = 1.0 / 8.0;
        assert_abs_diff_eq!(a.get(4, 3), -1.0 / h, epsilon = 1e-12);
        assert_abs_diff_eq!(a.get(4, 4), 2.0 / h, epsilon = 1e-12);
        assert_abs_diff_eq!(a.get(4, 5), -1.0 / h, epsilon = 1e-12);
        assert_eq!(a.get(4, 6), 0.0);
    }

    #[test]
    fn penalty_matrix_matches_exact_integrals() {
        // p = 2, 3 uniform elements: second derivatives of quadratic
        // B-splines are piecewise constant, so ∫ B_i'' B_j'' = Σ_e h_e B_i''|_e B_j''|_e
        let k = kv(3, 2);
        let s = Space1D::full(k.clone());
        let scale = |e: usize| {
            let (a, b) = k.element(e);
            (b - a).powi(4)
        };
        let m = assemble_1d(&s, &s, 2, 2, &|_| 1.0, &scale).unwrap();
        let n = k.num_basis();
        let mut oracle = vec![vec![0.0; n]; n];
        for e in 0..3 {
            let (a, b) = k.element(e);
            let t = k.eval_on_element(e, 0.5 * (a + b), 2);
            for (li, &i) in t.indices.iter().enumerate() {
                for (lj, &j) in t.indices.iter().enumerate() {
                    oracle[i][j] += (b - a).powi(5) * t.value(2, li) * t.value(2, lj);
                }
            }
        }
        for i in 0..n {
            for j in 0..n {
                assert_abs_diff_eq!(m.get(i, j), oracle[i][j], epsilon = 1e-13);
            }
        }
        assert!(matches!(
            assemble_1d(&s, &s, 3, 0, &|_| 1.0, &|_| 1.0),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn projected_mass_is_identity_on_low_degree() {
        // with projection degree >= p the projected mass is the mass matrix
        let s = full(4, 2);
        let m = assemble_1d(&s, &s, 0, 0, &|_| 1.0, &|_| 1.0).unwrap();
        let q = projected_mass_1d(&s, &s, 2).unwrap();
        assert!(rel_diff(&m, &q) < 1e-13);
        // p = 1, projection to constants: (1/h) ∫ψ_i ∫ψ_j per element
        let s = full(2, 1);
        let q = projected_mass_1d(&s, &s, 0).unwrap();
        assert_abs_diff_eq!(q.get(0, 0), 0.125, epsilon = 1e-15);
        assert_abs_diff_eq!(q.get(1, 1), 0.25, epsilon = 1e-15);
    }

    fn box_problem(dim: usize, tf: f64, dirichlet: bool) -> WaveProblem {
        let lengths: Vec<f64> = (0..dim).map(|d| 1.0 + 0.5 * d as f64).collect();
        let mut g = unit_box(dim, &lengths, tf).unwrap();
        if dirichlet {
            g = g.with_all_faces(BoundaryKind::Dirichlet);
        }
        WaveProblem::new(g)
    }

    #[test]
    fn hand_computed_two_by_two() {
        // c = 1, Dirichlet, p = 1, 2 space and 2 time elements, T = 1
        let p = box_problem(1, 1.0, true);
        let (tr, te) = build_spaces(vec![kv(2, 1)], kv(2, 1), &all_dirichlet(1)).unwrap();
        let op = assemble_operator(&p, &tr, &te, Method::Plain, AssemblyPath::Auto).unwrap();
        // spatial: one hat, M_s = 1/3, A_s = 4
        // temporal (trial drops first, test drops last, h = 1/2):
        // M_t = [[h/6, 0], [2h/3, h/6]], A_t = [[-1/h, 0], [2/h, -1/h]]
        let h = 0.5;
        let mt = [[h / 6.0, 0.0], [2.0 * h / 3.0, h / 6.0]];
        let at = [[-1.0 / h, 0.0], [2.0 / h, -1.0 / h]];
        for i in 0..2 {
            for j in 0..2 {
                let expected = -at[i][j] / 3.0 + mt[i][j] * 4.0;
                assert_abs_diff_eq!(op.get(i, j), expected, epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn kronecker_matches_element_loop() {
        for dim in 1..=2 {
            for p in 1..=3 {
                for &(ns, nt) in &[(2usize, 3usize), (5, 4)] {
                    for dirichlet in [true, false] {
                        let prob = box_problem(dim, 2.0, dirichlet);
                        let faces = prob.dirichlet_faces();
                        let kvs = (0..dim).map(|d| kv(ns + d, p)).collect();
                        let (tr, te) = build_spaces(kvs, kv(nt, p), &faces).unwrap();
                        for method in [Method::Plain, Method::IgaStab { delta: 0.1 }, Method::FemStab] {
                            let a = assemble_operator(&prob, &tr, &te, method, AssemblyPath::Kronecker).unwrap();
                            let b = assemble_operator(&prob, &tr, &te, method, AssemblyPath::ElementLoop).unwrap();
                            assert!(rel_diff(&a, &b) <= 1e-12, "dim {dim} p {p} {method:?}: {}", rel_diff(&a, &b));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn kronecker_matches_element_loop_with_robin_and_speed() {
        let g = unit_box(2, &[1.0, 2.0], 1.5)
            .unwrap()
            .with_face(Face::new(0, Side::Upper), Some(BoundaryKind::Robin))
            .with_face(Face::new(1, Side::Lower), Some(BoundaryKind::Dirichlet));
        let mut prob = WaveProblem::new(g).with_velocity(Velocity::Constant(1.7));
        prob.impedance = 0.8;
        let (tr, te) = build_spaces(vec![kv(3, 2), kv(4, 2)], kv(3, 2), &prob.dirichlet_faces()).unwrap();
        let a = assemble_operator(&prob, &tr, &te, Method::Plain, AssemblyPath::Kronecker).unwrap();
        let b = assemble_operator(&prob, &tr, &te, Method::Plain, AssemblyPath::ElementLoop).unwrap();
        assert!(rel_diff(&a, &b) <= 1e-12);
    }

    #[test]
    fn half_annulus_separates() {
        let prob = WaveProblem::new(half_annulus(1.0, 3.0, 2.0).unwrap()).with_velocity(Velocity::Constant(1.3));
        for p in 1..=3 {
            let (tr, te) = build_spaces(vec![kv(3, p), kv(4, p)], kv(3, p), &prob.dirichlet_faces()).unwrap();
            for method in [Method::Plain, Method::IgaStab { delta: 0.1 }, Method::FemStab] {
                let a = assemble_operator(&prob, &tr, &te, method, AssemblyPath::Kronecker).unwrap();
                let b = assemble_operator(&prob, &tr, &te, method, AssemblyPath::ElementLoop).unwrap();
                assert!(rel_diff(&a, &b) <= 1e-12, "p {p} {method:?}: {}", rel_diff(&a, &b));
            }
        }
    }

    #[test]
    fn kron_apply_matches_sparse_product() {
        let prob = WaveProblem::new(half_annulus(1.0, 3.0, 1.0).unwrap());
        let (tr, te) = build_spaces(vec![kv(3, 2), kv(5, 2)], kv(4, 2), &prob.dirichlet_faces()).unwrap();
        let op = kron_terms(&prob, &tr, &te, Method::iga_stab_default(2)).unwrap();
        let x: Vec<f64> = (0..op.cols()).map(|i| ((i * 7919) % 13) as f64 - 6.0).collect();
        let y = op.apply(&x).unwrap();
        let sparse = op.to_sparse().unwrap();
        let z = sparse.matvec(&x).unwrap();
        for (a, b) in y.iter().zip(&z) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12 * sparse.max_abs());
        }
        assert!(op.max_abs_bound() >= sparse.max_abs());
        assert_eq!(op.col_dims(), tr.dims().as_slice());
    }

    #[test]
    fn fem_stab_equals_iga_stab_at_p1() {
        for n in [4usize, 8] {
            let prob = box_problem(1, 1.0, true);
            let (tr, te) = build_spaces(vec![kv(n, 1)], kv(n, 1), &all_dirichlet(1)).unwrap();
            let f = assemble_operator(&prob, &tr, &te, Method::FemStab, AssemblyPath::Auto).unwrap();
            let i = assemble_operator(&prob, &tr, &te, Method::IgaStab { delta: 1.0 / 12.0 }, AssemblyPath::Auto).unwrap();
            assert!(rel_diff(&f, &i) <= 1e-12);
        }
    }

    #[test]
    fn small_delta_recovers_plain() {
        let prob = box_problem(1, 1.0, true);
        let (tr, te) = build_spaces(vec![kv(4, 2)], kv(4, 2), &all_dirichlet(1)).unwrap();
        let p = assemble_operator(&prob, &tr, &te, Method::Plain, AssemblyPath::Auto).unwrap();
        let s = assemble_operator(&prob, &tr, &te, Method::IgaStab { delta: 1e-14 }, AssemblyPath::Auto).unwrap();
        assert!(rel_diff(&p, &s) < 1e-12);
        for bad in [0.0, -1.0, f64::NAN] {
            assert!(matches!(
                assemble_operator(&prob, &tr, &te, Method::IgaStab { delta: bad }, AssemblyPath::Auto),
                Err(Error::InvalidParameter(_))
            ));
        }
    }

    #[test]
    fn fem_stab_only_changes_gradient_block() {
        // with c = 0 only the ∂_t∂_t block remains, identical for both forms
        let prob = box_problem(1, 1.0, false).with_velocity(Velocity::Constant(0.0));
        let k0 = make_open_knot_vector((0.0, 1.0), 4, 2, 0, &[]).unwrap();
        let (tr, te) = build_spaces(vec![kv(3, 2)], k0, &[]).unwrap();
        let p = assemble_operator(&prob, &tr, &te, Method::Plain, AssemblyPath::Auto).unwrap();
        let f = assemble_operator(&prob, &tr, &te, Method::FemStab, AssemblyPath::Auto).unwrap();
        assert!(rel_diff(&p, &f) < 1e-14);
        let prob = box_problem(1, 1.0, false);
        let p = assemble_operator(&prob, &tr, &te, Method::Plain, AssemblyPath::Auto).unwrap();
        let f = assemble_operator(&prob, &tr, &te, Method::FemStab, AssemblyPath::Auto).unwrap();
        assert!(rel_diff(&p, &f) > 1e-6);
    }

    #[test]
    fn penalty_annihilates_low_degree_temporal_factors() {
        // trial functions whose temporal factor is a polynomial of degree
        // < p_t have zero p_t-th time derivative
        let p = 3;
        let tk = kv(5, p);
        let (tr, te) = build_spaces(vec![kv(3, 2)], tk.clone(), &[]).unwrap();
        let tt = tr.temporal();
        let slab = |e: usize| {
            let (a, b) = tk.element(e);
            (b - a).powi(2 * p as i32)
        };
        let st = assemble_1d(tt, te.temporal(), p, p, &|_| 1.0, &slab).unwrap();
        // τ² lies in the spline space and vanishes at 0 with zero slope: its
        // coefficients come from the blossom, here via interpolation
        let gr = tk.greville_abscissae().unwrap();
        let n = tk.num_basis();
        let mut c = vec![vec![0.0; n]; n];
        for (i, &x) in gr.iter().enumerate() {
            let t = tk.eval_basis(x, 0).unwrap();
            for (k, &g) in t.indices.iter().enumerate() {
                c[i][g] += t.value(0, k);
            }
        }
        let coefs = crate::linsolve::DenseLu::factor(c).unwrap().solve(&gr.iter().map(|x| x * x).collect::<Vec<_>>());
        let trial_coefs: Vec<f64> = (0..tt.dim()).map(|j| coefs[tt.global_index(j)]).collect();
        assert_abs_diff_eq!(coefs[0], 0.0, epsilon = 1e-14);
        let r = st.matvec(&trial_coefs).unwrap();
        assert!(r.iter().all(|v| v.abs() < 1e-12), "{r:?}");
    }

    #[test]
    fn sparsity_bound() {
        for p in 1..=3 {
            let prob = box_problem(2, 1.0, false);
            let (tr, te) = build_spaces(vec![kv(4, p), kv(3, p)], kv(5, p), &[]).unwrap();
            let op = assemble_operator(&prob, &tr, &te, Method::iga_stab_default(p), AssemblyPath::Auto).unwrap();
            assert!(op.nnz() <= tr.n_dof() * (2 * p + 1).pow(3));
        }
    }

    #[test]
    fn robin_term_is_local_to_the_face() {
        let g = half_annulus(1.0, 3.0, 1.0).unwrap();
        let with = WaveProblem::new(g.clone());
        let without = WaveProblem::new(g.with_face(Face::new(0, Side::Upper), Some(BoundaryKind::Neumann)));
        let (tr, te) = build_spaces(vec![kv(3, 2), kv(3, 2)], kv(2, 2), &with.dirichlet_faces()).unwrap();
        let a = assemble_operator(&with, &tr, &te, Method::Plain, AssemblyPath::Auto).unwrap();
        let b = assemble_operator(&without, &tr, &te, Method::Plain, AssemblyPath::Auto).unwrap();
        let d = SparseMatrix::linear_combination(&[(1.0, &a), (-1.0, &b)]).unwrap();
        let n0 = tr.spatial()[0].dim();
        let mut touched = false;
        for i in 0..d.rows() {
            let (cols, vals) = d.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                if v.abs() > 1e-14 {
                    touched = true;
                    let (si, _) = te.unflatten(i);
                    let (sj, _) = tr.unflatten(j);
                    assert_eq!(si[0], n0 - 1);
                    assert_eq!(sj[0], n0 - 1);
                }
            }
        }
        assert!(touched);
    }

    #[test]
    fn rhs_cases() {
        // all data zero
        let prob = box_problem(1, 1.0, true);
        let (tr, te) = build_spaces(vec![kv(2, 1)], kv(2, 1), &all_dirichlet(1)).unwrap();
        assert!(assemble_rhs(&prob, &te).unwrap().iter().all(|&v| v == 0.0));
        let sys = assemble_plain(&prob, &tr, &te).unwrap();
        let sol = crate::linsolve::factorize(&sys.operator, None).unwrap().solve(&sys.rhs).unwrap();
        assert!(sol.x.iter().all(|&v| v == 0.0));

        // f = 1, p = 1, 2 x 2 mesh, Neumann: entries are ∫_Q test function
        let prob = box_problem(1, 1.0, false).with_source(|_, _| 1.0);
        let (_, te) = build_spaces(vec![kv(2, 1)], kv(2, 1), &[]).unwrap();
        let r = assemble_rhs(&prob, &te).unwrap();
        let space = [0.25, 0.5, 0.25];
        let time = [0.25, 0.5];
        for it in 0..2 {
            for s in 0..3 {
                assert_abs_diff_eq!(r[s + 3 * it], space[s] * time[it], epsilon = 1e-14);
            }
        }

        // u1 only reaches the first temporal test function
        let prob = box_problem(1, 1.0, false).with_initial_velocity(|x| 1.0 + x[0]);
        let (_, te) = build_spaces(vec![kv(3, 2)], kv(4, 2), &[]).unwrap();
        let r = assemble_rhs(&prob, &te).unwrap();
        let ns = te.n_space();
        assert!(r[..ns].iter().all(|&v| v > 0.0));
        assert!(r[ns..].iter().all(|&v| v == 0.0));
        assert_abs_diff_eq!(r[..ns].iter().sum::<f64>(), 1.5, epsilon = 1e-13);
    }

    #[test]
    fn neumann_rhs_uses_outward_normals() {
        // g_N = n_x on the unit square: ∫ over x = 1 minus ∫ over x = 0
        let g = unit_box(2, &[1.0, 1.0], 1.0).unwrap();
        let prob = WaveProblem::new(g).with_neumann(|_, n, _| n[0]);
        let (_, te) = build_spaces(vec![kv(2, 1), kv(2, 1)], kv(1, 1), &[]).unwrap();
        let r = assemble_rhs(&prob, &te).unwrap();
        let total: f64 = r.iter().sum();
        assert_abs_diff_eq!(total, 0.0, epsilon = 1e-14);
        // right face functions receive ∫ φ dy ∫ ψ dt > 0
        assert!(r[2] > 0.0 && r[0] < 0.0);
    }

    #[test]
    fn lifting_of_constant_is_exact() {
        // pure Neumann, u0 = C, f = u1 = 0: the constant solves the problem
        for method in [Method::Plain, Method::iga_stab_default(2), Method::FemStab] {
            let prob = box_problem(1, 1.0, false).with_initial_value(|_| 2.5);
            let kvs = vec![kv(4, 2)];
            let (tr, te) = build_spaces(kvs.clone(), kv(3, 2), &[]).unwrap();
            let lift = crate::discretization::interpolate_lifting(
                prob.initial_value.as_ref().unwrap().as_ref(),
                kvs,
                kv(3, 2),
                &prob.geometry,
            )
            .unwrap();
            let sys = assemble(&prob, &tr, &te, method).unwrap();
            let lifted = apply_lifting(&sys, &lift, &prob).unwrap();
            assert!(lifted.rhs.iter().all(|v| v.abs() < 1e-13));
            let zero = DiscreteFunction::zero(unconstrained_space(vec![kv(4, 2)], kv(3, 2)).unwrap(), prob.geometry.clone())
                .unwrap();
            let same = apply_lifting(&sys, &zero, &prob).unwrap();
            assert_eq!(same.rhs, sys.rhs);
        }
    }

    #[test]
    fn variable_speed_reduces_to_constant() {
        let prob = box_problem(2, 1.0, false);
        let var = prob.clone().with_velocity(Velocity::Variable(Arc::new(|_, _| 1.0)));
        let (tr, te) = build_spaces(vec![kv(3, 2), kv(2, 2)], kv(3, 2), &[]).unwrap();
        for method in [Method::Plain, Method::IgaStab { delta: 0.01 }, Method::FemStab] {
            let a = assemble_operator(&prob, &tr, &te, method, AssemblyPath::Auto).unwrap();
            let b = assemble_operator(&var, &tr, &te, method, AssemblyPath::Auto).unwrap();
            assert!(rel_diff(&a, &b) < 1e-12);
        }
    }

    #[test]
    fn assembly_is_deterministic_across_thread_counts() {
        let g = half_annulus(1.0, 3.0, 1.0).unwrap();
        let prob = WaveProblem::new(g).with_source(crate::exact::scattering_source);
        let (tr, te) = build_spaces(vec![kv(3, 2), kv(4, 2)], kv(6, 2), &prob.dirichlet_faces()).unwrap();
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| assemble(&prob, &tr, &te, Method::iga_stab_default(2)).unwrap())
        };
        let a = run(1);
        let b = run(3);
        assert_eq!(a.operator, b.operator);
        assert_eq!(a.rhs, b.rhs);
    }
}
