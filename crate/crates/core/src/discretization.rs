//! Tensor-product space–time trial and test spaces and discrete functions.
//!
//! Trial functions vanish at `t = 0` (first temporal B-spline removed), test
//! functions at `t = T` (last one removed); spatial B-splines touching a
//! Dirichlet face are removed in both. Degrees of freedom are numbered
//! lexicographically with the first space direction fastest and time
//! slowest: `dof = i_0 + n_0 (i_1 + n_1 i_t)`.

use crate::error::{Error, Result};
use crate::geometry::{pullback_with, Face, GeometryMap, Side, Vec2};
use crate::linsolve::DenseLu;
use crate::splines::{BasisTable, KnotVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Trial,
    Test,
    /// No temporal and no Dirichlet constraint (used for liftings).
    Full,
}

/// A univariate spline space with some boundary functions removed.
#[derive(Debug, Clone, PartialEq)]
pub struct Space1D {
    kv: KnotVector,
    active: Vec<usize>,
    local_of: Vec<Option<usize>>,
}

impl Space1D {
    pub fn new(kv: KnotVector, drop_first: bool, drop_last: bool) -> Result<Self> {
        if kv.is_periodic() && (drop_first || drop_last) {
            return Err(Error::Unsupported(
                "boundary constraints on a periodic direction".into(),
            ));
        }
        let m = kv.num_basis();
        let lo = usize::from(drop_first);
        let hi = m - usize::from(drop_last);
        if hi <= lo {
            return Err(Error::InvalidSize(format!(
                "constrained space of dimension {m} has no free functions"
            )));
        }
        let active: Vec<usize> = (lo..hi).collect();
        let mut local_of = vec![None; m];
        for (l, &g) in active.iter().enumerate() {
            local_of[g] = Some(l);
        }
        Ok(Space1D {
            kv,
            active,
            local_of,
        })
    }

    pub fn full(kv: KnotVector) -> Self {
        Self::new(kv, false, false).expect("unconstrained space is never empty")
    }

    pub fn knot_vector(&self) -> &KnotVector {
        &self.kv
    }

    pub fn dim(&self) -> usize {
        self.active.len()
    }

    pub fn local_index(&self, global: usize) -> Option<usize> {
        self.local_of[global]
    }

    pub fn global_index(&self, local: usize) -> usize {
        self.active[local]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeSpace {
    spatial: Vec<Space1D>,
    temporal: Space1D,
    role: Role,
}

/// Trial and test spaces on the given knot vectors (all parametric on
/// `[0, 1]`).
pub fn build_spaces(
    spatial_kvs: Vec<KnotVector>,
    temporal_kv: KnotVector,
    dirichlet_faces: &[Face],
) -> Result<(SpaceTimeSpace, SpaceTimeSpace)> {
    check_knot_vectors(&spatial_kvs, &temporal_kv)?;
    for f in dirichlet_faces {
        if f.direction >= spatial_kvs.len() {
            return Err(Error::InvalidParameter(format!(
                "Dirichlet face in direction {} of a {}-dimensional space",
                f.direction,
                spatial_kvs.len()
            )));
        }
    }
    let spatial: Vec<Space1D> = spatial_kvs
        .into_iter()
        .enumerate()
        .map(|(d, kv)| {
            let first = dirichlet_faces.contains(&Face::new(d, Side::Lower));
            let last = dirichlet_faces.contains(&Face::new(d, Side::Upper));
            Space1D::new(kv, first, last)
        })
        .collect::<Result<_>>()?;
    let trial = SpaceTimeSpace {
        spatial: spatial.clone(),
        temporal: Space1D::new(temporal_kv.clone(), true, false)?,
        role: Role::Trial,
    };
    let test = SpaceTimeSpace {
        spatial,
        temporal: Space1D::new(temporal_kv, false, true)?,
        role: Role::Test,
    };
    Ok((trial, test))
}

/// The full tensor-product space without any constraint.
pub fn unconstrained_space(spatial_kvs: Vec<KnotVector>, temporal_kv: KnotVector) -> Result<SpaceTimeSpace> {
    check_knot_vectors(&spatial_kvs, &temporal_kv)?;
    Ok(SpaceTimeSpace {
        spatial: spatial_kvs.into_iter().map(Space1D::full).collect(),
        temporal: Space1D::full(temporal_kv),
        role: Role::Full,
    })
}

fn check_knot_vectors(spatial: &[KnotVector], temporal: &KnotVector) -> Result<()> {
    if spatial.is_empty() || spatial.len() > 2 {
        return Err(Error::InvalidSize(format!(
            "{} space directions (supported: 1 or 2)",
            spatial.len()
        )));
    }
    if temporal.is_periodic() {
        return Err(Error::Unsupported("periodic temporal knot vector".into()));
    }
    for kv in spatial.iter().chain(std::iter::once(temporal)) {
        if kv.degree() == 0 {
            return Err(Error::InvalidParameter(
                "trial and test spaces need degree at least 1".into(),
            ));
        }
        if kv.domain() != (0.0, 1.0) {
            return Err(Error::Domain(format!(
                "knot vectors must live on the parametric interval [0, 1], got {:?}",
                kv.domain()
            )));
        }
    }
    Ok(())
}

impl SpaceTimeSpace {
    pub fn role(&self) -> Role {
        self.role
    }

    pub fn spatial(&self) -> &[Space1D] {
        &self.spatial
    }

    pub fn temporal(&self) -> &Space1D {
        &self.temporal
    }

    pub fn space_dim(&self) -> usize {
        self.spatial.len()
    }

    /// Dimensions per direction, space first, time last.
    pub fn dims(&self) -> Vec<usize> {
        self.spatial
            .iter()
            .map(Space1D::dim)
            .chain(std::iter::once(self.temporal.dim()))
            .collect()
    }

    pub fn n_space(&self) -> usize {
        self.spatial.iter().map(Space1D::dim).product()
    }

    pub fn n_time(&self) -> usize {
        self.temporal.dim()
    }

    pub fn n_dof(&self) -> usize {
        self.n_space() * self.n_time()
    }

    pub fn flatten(&self, space: &[usize], time: usize) -> usize {
        self.spatial_flat(space) + self.n_space() * time
    }

    pub fn spatial_flat(&self, space: &[usize]) -> usize {
        let mut s = 0;
        let mut stride = 1;
        for (d, sp) in self.spatial.iter().enumerate() {
            s += space[d] * stride;
            stride *= sp.dim();
        }
        s
    }

    pub fn unflatten(&self, dof: usize) -> ([usize; 2], usize) {
        let ns = self.n_space();
        let time = dof / ns;
        let mut rest = dof % ns;
        let mut space = [0; 2];
        for (d, sp) in self.spatial.iter().enumerate() {
            space[d] = rest % sp.dim();
            rest /= sp.dim();
        }
        (space, time)
    }

    /// Local DOF of the tensor B-spline with the given global per-direction
    /// indices, or `None` if it is constrained away.
    pub fn dof_of_global(&self, space_global: &[usize], time_global: usize) -> Option<usize> {
        let it = self.temporal.local_index(time_global)?;
        let mut s = 0;
        let mut stride = 1;
        for (d, sp) in self.spatial.iter().enumerate() {
            s += sp.local_index(space_global[d])? * stride;
            stride *= sp.dim();
        }
        Some(s + self.n_space() * it)
    }

    /// Coefficients of the same function expressed in `target`, which must
    /// be built on the same knot vectors and contain this space.
    pub fn embed(&self, coefs: &[f64], target: &SpaceTimeSpace) -> Result<Vec<f64>> {
        if coefs.len() != self.n_dof() {
            return Err(Error::DimensionMismatch {
                expected: self.n_dof(),
                got: coefs.len(),
            });
        }
        let mut out = vec![0.0; target.n_dof()];
        for (dof, &c) in coefs.iter().enumerate() {
            let (sp, it) = self.unflatten(dof);
            let g: Vec<usize> = (0..self.space_dim())
                .map(|d| self.spatial[d].global_index(sp[d]))
                .collect();
            let gt = self.temporal.global_index(it);
            let k = target.dof_of_global(&g, gt).ok_or_else(|| {
                Error::InvalidParameter("target space does not contain the source space".into())
            })?;
            out[k] = c;
        }
        Ok(out)
    }

    /// Parametric mesh sizes `(h_space_max, h_time)` on `[0,1]`.
    pub fn parametric_mesh_sizes(&self) -> (f64, f64) {
        let hs = self
            .spatial
            .iter()
            .map(|s| s.kv.mesh_size())
            .fold(0.0, f64::max);
        (hs, self.temporal.kv.mesh_size())
    }
}

/// Value, time derivative and physical gradient at a point.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Sample {
    pub value: f64,
    pub time_derivative: f64,
    pub gradient: Vec2,
}

/// `u_h = Σ c_i B_i ∘ G^{-1}` over a space–time space.
#[derive(Debug, Clone)]
pub struct DiscreteFunction {
    coefficients: Vec<f64>,
    space: SpaceTimeSpace,
    geometry: GeometryMap,
}

impl DiscreteFunction {
    pub fn new(space: SpaceTimeSpace, geometry: GeometryMap, coefficients: Vec<f64>) -> Result<Self> {
        if coefficients.len() != space.n_dof() {
            return Err(Error::DimensionMismatch {
                expected: space.n_dof(),
                got: coefficients.len(),
            });
        }
        if geometry.dim() != space.space_dim() {
            return Err(Error::InvalidParameter(format!(
                "geometry of dimension {} for a {}-dimensional space",
                geometry.dim(),
                space.space_dim()
            )));
        }
        Ok(DiscreteFunction {
            coefficients,
            space,
            geometry,
        })
    }

    pub fn zero(space: SpaceTimeSpace, geometry: GeometryMap) -> Result<Self> {
        let n = space.n_dof();
        Self::new(space, geometry, vec![0.0; n])
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn space(&self) -> &SpaceTimeSpace {
        &self.space
    }

    pub fn geometry(&self) -> &GeometryMap {
        &self.geometry
    }

    /// Re-express in `target` (see [`SpaceTimeSpace::embed`]).
    pub fn embed_into(&self, target: &SpaceTimeSpace) -> Result<DiscreteFunction> {
        let c = self.space.embed(&self.coefficients, target)?;
        DiscreteFunction::new(target.clone(), self.geometry.clone(), c)
    }

    /// Sum of two functions over the same space.
    pub fn add(&self, other: &DiscreteFunction) -> Result<DiscreteFunction> {
        if self.space != other.space {
            return Err(Error::InvalidParameter("adding functions over different spaces".into()));
        }
        let c = self
            .coefficients
            .iter()
            .zip(&other.coefficients)
            .map(|(a, b)| a + b)
            .collect();
        DiscreteFunction::new(self.space.clone(), self.geometry.clone(), c)
    }

    /// Evaluate at a physical point `(x, t)`.
    pub fn evaluate(&self, x: &[f64], t: f64) -> Result<Sample> {
        let eta = self.geometry.inverse(x)?;
        let tf = self.geometry.final_time();
        self.evaluate_parametric(&eta[..self.space.space_dim()], t / tf)
    }

    /// Evaluate at parametric coordinates `(η, τ)`.
    pub fn evaluate_parametric(&self, eta: &[f64], tau: f64) -> Result<Sample> {
        let d = self.space.space_dim();
        let mut tables = Vec::with_capacity(d);
        for (dir, sp) in self.space.spatial.iter().enumerate() {
            tables.push(sp.kv.eval_basis(eta[dir], 1)?);
        }
        let tt = self.space.temporal.kv.eval_basis(tau, 1)?;
        let (v, dtau, pg) = self.contract(&tables, &tt, 0);
        let j = self.geometry.jacobian(eta);
        let gradient = pullback_with(&j, d, &pg)?;
        Ok(Sample {
            value: v,
            time_derivative: dtau / self.geometry.final_time(),
            gradient,
        })
    }

    /// `∂_t^order u_h(x, t)`.
    pub fn time_derivative(&self, x: &[f64], t: f64, order: usize) -> Result<f64> {
        let tf = self.geometry.final_time();
        let eta = self.geometry.inverse(x)?;
        let mut tables = Vec::new();
        for (dir, sp) in self.space.spatial.iter().enumerate() {
            tables.push(sp.kv.eval_basis(eta[dir], 0)?);
        }
        let tt = self.space.temporal.kv.eval_basis(t / tf, order)?;
        let (v, _, _) = self.contract(&tables, &tt, order);
        Ok(v / tf.powi(order as i32))
    }

    /// Contract coefficients against per-direction tables: returns the value
    /// with temporal derivative `time_row`, the first τ-derivative and the
    /// parametric spatial gradient (the latter two only when `time_row == 0`).
    fn contract(&self, tables: &[BasisTable], tt: &BasisTable, time_row: usize) -> (f64, f64, [f64; 2]) {
        let d = tables.len();
        let mut v = 0.0;
        let mut dt = 0.0;
        let mut g = [0.0; 2];
        let n1 = if d == 2 { tables[1].indices.len() } else { 1 };
        for (k, &gt) in tt.indices.iter().enumerate() {
            let Some(it) = self.space.temporal.local_index(gt) else {
                continue;
            };
            let psi = tt.value(time_row, k);
            let dpsi = if time_row == 0 && tt.max_deriv >= 1 { tt.value(1, k) } else { 0.0 };
            for b in 0..n1 {
                let (i1, f1, df1) = if d == 2 {
                    match self.space.spatial[1].local_index(tables[1].indices[b]) {
                        Some(l) => (l, tables[1].value(0, b), deriv_or_zero(&tables[1], b)),
                        None => continue,
                    }
                } else {
                    (0, 1.0, 0.0)
                };
                for (a, &g0) in tables[0].indices.iter().enumerate() {
                    let Some(i0) = self.space.spatial[0].local_index(g0) else {
                        continue;
                    };
                    let dof = self.space.flatten(&[i0, i1], it);
                    let c = self.coefficients[dof];
                    let f0 = tables[0].value(0, a);
                    v += c * f0 * f1 * psi;
                    dt += c * f0 * f1 * dpsi;
                    g[0] += c * deriv_or_zero(&tables[0], a) * f1 * psi;
                    g[1] += c * f0 * df1 * psi;
                }
            }
        }
        (v, dt, g)
    }

    /// Samples on the tensor grid `eta_points[0] x eta_points[1] x tau_points`
    /// inside one space–time element. Output order: first space direction
    /// fastest, time slowest.
    pub fn evaluate_on_element(
        &self,
        elem: &[usize],
        time_elem: usize,
        eta_points: &[Vec<f64>],
        tau_points: &[f64],
    ) -> Result<Vec<Sample>> {
        let d = self.space.space_dim();
        let tf = self.geometry.final_time();
        let tables: Vec<Vec<BasisTable>> = (0..d)
            .map(|dir| {
                eta_points[dir]
                    .iter()
                    .map(|&x| self.space.spatial[dir].kv.eval_on_element(elem[dir], x, 1))
                    .collect()
            })
            .collect();
        let ttables: Vec<BasisTable> = tau_points
            .iter()
            .map(|&t| self.space.temporal.kv.eval_on_element(time_elem, t, 1))
            .collect();

        // local coefficient block [k][b][a]
        let na = tables[0][0].indices.len();
        let nb = if d == 2 { tables[1][0].indices.len() } else { 1 };
        let nk = ttables[0].indices.len();
        let mut block = vec![0.0; na * nb * nk];
        for k in 0..nk {
            let Some(it) = self.space.temporal.local_index(ttables[0].indices[k]) else {
                continue;
            };
            for b in 0..nb {
                let i1 = if d == 2 {
                    match self.space.spatial[1].local_index(tables[1][0].indices[b]) {
                        Some(l) => l,
                        None => continue,
                    }
                } else {
                    0
                };
                for a in 0..na {
                    if let Some(i0) = self.space.spatial[0].local_index(tables[0][0].indices[a]) {
                        block[(k * nb + b) * na + a] = self.coefficients[self.space.flatten(&[i0, i1], it)];
                    }
                }
            }
        }

        let n0 = eta_points[0].len();
        let n1 = if d == 2 { eta_points[1].len() } else { 1 };
        let mut out = Vec::with_capacity(n0 * n1 * tau_points.len());
        // spatial Jacobians are shared by all time points
        let mut jac = Vec::with_capacity(n0 * n1);
        for q1 in 0..n1 {
            for q0 in 0..n0 {
                let eta = if d == 2 {
                    [eta_points[0][q0], eta_points[1][q1]]
                } else {
                    [eta_points[0][q0], 0.0]
                };
                jac.push(self.geometry.jacobian(&eta));
            }
        }
        for tt in &ttables {
            for q1 in 0..n1 {
                for q0 in 0..n0 {
                    let t0 = &tables[0][q0];
                    let (mut v, mut dt, mut g0, mut g1) = (0.0, 0.0, 0.0, 0.0);
                    for k in 0..nk {
                        let psi = tt.value(0, k);
                        let dpsi = tt.value(1, k);
                        for b in 0..nb {
                            let (f1, df1) = if d == 2 {
                                (tables[1][q1].value(0, b), tables[1][q1].value(1, b))
                            } else {
                                (1.0, 0.0)
                            };
                            let row = &block[(k * nb + b) * na..(k * nb + b + 1) * na];
                            let mut s0 = 0.0;
                            let mut s1 = 0.0;
                            for a in 0..na {
                                s0 += row[a] * t0.value(0, a);
                                s1 += row[a] * t0.value(1, a);
                            }
                            v += s0 * f1 * psi;
                            dt += s0 * f1 * dpsi;
                            g0 += s1 * f1 * psi;
                            g1 += s0 * df1 * psi;
                        }
                    }
                    let gradient = pullback_with(&jac[q1 * n0 + q0], d, &[g0, g1])?;
                    out.push(Sample {
                        value: v,
                        time_derivative: dt / tf,
                        gradient,
                    });
                }
            }
        }
        Ok(out)
    }
}

fn deriv_or_zero(t: &BasisTable, local: usize) -> f64 {
    if t.max_deriv >= 1 {
        t.value(1, local)
    } else {
        0.0
    }
}

/// Spline interpolant of `u0` at the interpolation nodes of the full spatial
/// space, extended constant in time. The result lives in the unconstrained
/// space and satisfies `ū(x_i, 0) = u0(x_i)` at every node.
pub fn interpolate_lifting(
    u0: &dyn Fn(&Vec2) -> f64,
    spatial_kvs: Vec<KnotVector>,
    temporal_kv: KnotVector,
    geometry: &GeometryMap,
) -> Result<DiscreteFunction> {
    let full = unconstrained_space(spatial_kvs, temporal_kv)?;
    let spatial = interpolate_spatial(u0, &full, geometry)?;
    let ns = full.n_space();
    let mut coefs = vec![0.0; full.n_dof()];
    // B-splines in time sum to one, so equal coefficients give a constant
    for it in 0..full.n_time() {
        coefs[it * ns..(it + 1) * ns].copy_from_slice(&spatial);
    }
    DiscreteFunction::new(full, geometry.clone(), coefs)
}

/// Coefficients of the tensor-product spatial interpolant (space index
/// ordering of `space`, which must be unconstrained).
pub fn interpolate_spatial(
    u0: &dyn Fn(&Vec2) -> f64,
    space: &SpaceTimeSpace,
    geometry: &GeometryMap,
) -> Result<Vec<f64>> {
    let d = space.space_dim();
    let points: Vec<Vec<f64>> = space
        .spatial
        .iter()
        .map(|s| s.kv.interpolation_points())
        .collect();
    let dims: Vec<usize> = points.iter().map(Vec::len).collect();
    let mut lus = Vec::with_capacity(d);
    for (dir, sp) in space.spatial.iter().enumerate() {
        let n = dims[dir];
        let mut c = vec![vec![0.0; n]; n];
        for (i, &x) in points[dir].iter().enumerate() {
            let t = sp.kv.eval_basis(x, 0)?;
            for (k, &g) in t.indices.iter().enumerate() {
                c[i][g] += t.value(0, k);
            }
        }
        lus.push(DenseLu::factor(c).map_err(|_| {
            Error::Numerical(format!("singular collocation matrix in direction {dir}"))
        })?);
    }
    let n0 = dims[0];
    let n1 = if d == 2 { dims[1] } else { 1 };
    let mut vals = vec![0.0; n0 * n1];
    for i1 in 0..n1 {
        for i0 in 0..n0 {
            let eta = if d == 2 {
                [points[0][i0], points[1][i1]]
            } else {
                [points[0][i0], 0.0]
            };
            vals[i1 * n0 + i0] = u0(&geometry.map(&eta[..d]));
        }
    }
    for i1 in 0..n1 {
        let row = lus[0].solve(&vals[i1 * n0..(i1 + 1) * n0]);
        vals[i1 * n0..(i1 + 1) * n0].copy_from_slice(&row);
    }
    if d == 2 {
        for i0 in 0..n0 {
            let col: Vec<f64> = (0..n1).map(|i1| vals[i1 * n0 + i0]).collect();
            let x = lus[1].solve(&col);
            for i1 in 0..n1 {
                vals[i1 * n0 + i0] = x[i1];
            }
        }
    }
    Ok(vals)
}
