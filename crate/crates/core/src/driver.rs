//! Mesh description and the assemble–lift–factor–solve pipeline.

use log::info;

use crate::assembly::{self, apply_lifting, assemble_1d, kron_terms, Method};
use crate::discretization::{build_spaces, interpolate_lifting, unconstrained_space, DiscreteFunction, SpaceTimeSpace};
use crate::error::{Error, Result};
use crate::geometry::{BoundaryKind, Face, GeometryMap, Shape, Side};
use crate::linsolve::{factorize, solve_separable, FactorStats, Solution};
use crate::problem::{Velocity, WaveProblem};
use crate::splines::{make_open_knot_vector, make_periodic_space, KnotVector};

/// Tensor-product space–time mesh on the parametric unit cube.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshSpec {
    pub space_elements: Vec<usize>,
    pub time_elements: usize,
    pub space_degree: usize,
    pub time_degree: usize,
    /// Interior continuity `C^q`; `None` means maximal (`p - 1`).
    pub space_regularity: Option<i64>,
    pub time_regularity: Option<i64>,
    /// Extra `C^0` breakpoints per spatial direction (parametric coordinates).
    pub c0_breakpoints: Vec<Vec<f64>>,
}

impl MeshSpec {
    /// Uniform mesh with degree `p` in space and time and maximal regularity.
    pub fn uniform(space_elements: Vec<usize>, time_elements: usize, p: usize) -> Self {
        let d = space_elements.len();
        MeshSpec {
            space_elements,
            time_elements,
            space_degree: p,
            time_degree: p,
            space_regularity: None,
            time_regularity: None,
            c0_breakpoints: vec![Vec::new(); d],
        }
    }

    pub fn with_degrees(mut self, space: usize, time: usize) -> Self {
        self.space_degree = space;
        self.time_degree = time;
        self
    }

    pub fn with_regularity(mut self, space: Option<i64>, time: Option<i64>) -> Self {
        self.space_regularity = space;
        self.time_regularity = time;
        self
    }

    pub fn with_c0_breakpoints(mut self, dir: usize, points: Vec<f64>) -> Self {
        if self.c0_breakpoints.len() <= dir {
            self.c0_breakpoints.resize(dir + 1, Vec::new());
        }
        self.c0_breakpoints[dir] = points;
        self
    }

    /// Spatial and temporal knot vectors. Directions without boundary tags
    /// in `geometry` get periodic splines.
    pub fn knot_vectors(&self, geometry: &GeometryMap) -> Result<(Vec<KnotVector>, KnotVector)> {
        let d = geometry.dim();
        if self.space_elements.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: self.space_elements.len(),
            });
        }
        for (p, q) in [
            (self.space_degree, self.space_regularity),
            (self.time_degree, self.time_regularity),
        ] {
            if p == 0 {
                return Err(Error::InvalidParameter("degree must be at least 1".into()));
            }
            if let Some(q) = q {
                if q < 0 || q > p as i64 - 1 {
                    return Err(Error::InvalidRegularity { degree: p, regularity: q });
                }
            }
        }
        let mut spatial = Vec::with_capacity(d);
        for dir in 0..d {
            let n = self.space_elements[dir];
            let p = self.space_degree;
            let extra = self.c0_breakpoints.get(dir).map(Vec::as_slice).unwrap_or(&[]);
            let periodic = geometry.face_tag(Face::new(dir, Side::Lower)).is_none()
                && geometry.face_tag(Face::new(dir, Side::Upper)).is_none();
            if periodic {
                if !extra.is_empty() || self.space_regularity.is_some_and(|q| q != p as i64 - 1) {
                    return Err(Error::Unsupported(
                        "periodic directions use maximal regularity without extra breakpoints".into(),
                    ));
                }
                spatial.push(make_periodic_space((0.0, 1.0), n, p)?);
            } else {
                let q = self.space_regularity.unwrap_or(p as i64 - 1);
                spatial.push(make_open_knot_vector((0.0, 1.0), n, p, q, extra)?);
            }
        }
        let pt = self.time_degree;
        let temporal = make_open_knot_vector(
            (0.0, 1.0),
            self.time_elements,
            pt,
            self.time_regularity.unwrap_or(pt as i64 - 1),
            &[],
        )?;
        Ok((spatial, temporal))
    }
}

/// Largest physical element sizes `(h_s, h_t)`.
pub fn physical_mesh_sizes(geometry: &GeometryMap, spatial: &[KnotVector], temporal: &KnotVector) -> (f64, f64) {
    let ht = temporal.mesh_size() * geometry.final_time();
    let hs = match geometry.shape() {
        Shape::Box { lengths } => lengths
            .iter()
            .zip(spatial)
            .map(|(l, kv)| l * kv.mesh_size())
            .fold(0.0, f64::max),
        Shape::HalfAnnulus { r_in, r_out } => {
            let radial = (r_out - r_in) * spatial[0].mesh_size();
            let angular = std::f64::consts::PI * r_out * spatial[1].mesh_size();
            radial.max(angular)
        }
    };
    (hs, ht)
}

/// Linear solver selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverChoice {
    /// Separable solver for two-dimensional constant-speed problems, banded
    /// LU otherwise.
    Auto,
    Banded,
    Separable,
}

/// Outcome of [`solve`].
#[derive(Debug, Clone)]
pub struct SolveReport {
    /// Discrete solution including the lifting, in the unconstrained space.
    pub solution: DiscreteFunction,
    pub method: Method,
    pub n_dof: usize,
    pub mesh_sizes: (f64, f64),
    pub degrees: (usize, usize),
    pub residual: f64,
    pub relative_residual: f64,
    /// Band statistics of the banded solver (absent for the separable one).
    pub factor_stats: Option<FactorStats>,
}

pub fn solve(problem: &WaveProblem, mesh: &MeshSpec, method: Method) -> Result<SolveReport> {
    solve_with(problem, mesh, method, SolverChoice::Auto)
}

fn separable_applicable(problem: &WaveProblem) -> bool {
    problem.geometry.dim() == 2
        && matches!(problem.velocity, Velocity::Constant(_))
        && problem
            .geometry
            .faces_with(BoundaryKind::Robin)
            .iter()
            .all(|f| f.direction == 0)
}

pub fn solve_with(
    problem: &WaveProblem,
    mesh: &MeshSpec,
    method: Method,
    solver: SolverChoice,
) -> Result<SolveReport> {
    let (spatial, temporal) = mesh.knot_vectors(&problem.geometry)?;
    let (trial, test) = build_spaces(spatial.clone(), temporal.clone(), &problem.dirichlet_faces())?;
    let full = unconstrained_space(spatial.clone(), temporal.clone())?;
    let separable = match solver {
        SolverChoice::Auto => separable_applicable(problem),
        SolverChoice::Banded => false,
        SolverChoice::Separable => {
            if !separable_applicable(problem) {
                return Err(Error::Unsupported(
                    "separable solve needs two space dimensions, constant speed and no Robin face across direction 1"
                        .into(),
                ));
            }
            true
        }
    };
    let lifting = match &problem.initial_value {
        Some(u0) => Some(interpolate_lifting(u0.as_ref(), spatial.clone(), temporal.clone(), &problem.geometry)?),
        None => None,
    };
    info!(
        "solving {} dofs ({}, p = {}/{}, {})",
        trial.n_dof(),
        method.name(),
        mesh.space_degree,
        mesh.time_degree,
        if separable { "separable" } else { "banded" }
    );
    let (solution, stats): (Solution, Option<FactorStats>) = if separable {
        let op = kron_terms(problem, &trial, &test, method)?;
        let mut rhs = assembly::assemble_rhs(problem, &test)?;
        if let Some(lift) = &lifting {
            let full_op = kron_terms(problem, &full, &test, method)?;
            let r = full_op.apply(lift.coefficients())?;
            rhs.iter_mut().zip(&r).for_each(|(b, v)| *b -= v);
        }
        let one = |_: f64| 1.0;
        let unit = |_: usize| 1.0;
        let (tr1, te1) = (&trial.spatial()[1], &test.spatial()[1]);
        let m1 = assemble_1d(tr1, te1, 0, 0, &one, &unit)?;
        let a1 = assemble_1d(tr1, te1, 1, 1, &one, &unit)?;
        (solve_separable(&op, &rhs, &m1, &a1)?, None)
    } else {
        let mut system = assembly::assemble(problem, &trial, &test, method)?;
        if let Some(lift) = &lifting {
            system = apply_lifting(&system, lift, problem)?;
        }
        let f = factorize(&system.operator, Some(&trial.dims()))?;
        let stats = f.stats();
        (f.solve(&system.rhs)?, Some(stats))
    };
    let mut u = DiscreteFunction::new(trial.clone(), problem.geometry.clone(), solution.x)?.embed_into(&full)?;
    if let Some(lift) = &lifting {
        u = u.add(lift)?;
    }
    Ok(SolveReport {
        solution: u,
        method,
        n_dof: trial.n_dof(),
        mesh_sizes: physical_mesh_sizes(&problem.geometry, &spatial, &temporal),
        degrees: (mesh.space_degree, mesh.time_degree),
        residual: solution.residual,
        relative_residual: solution.relative_residual,
        factor_stats: stats,
    })
}

/// Trial space of a mesh (useful for DOF counts without solving).
pub fn trial_space(problem: &WaveProblem, mesh: &MeshSpec) -> Result<SpaceTimeSpace> {
    let (spatial, temporal) = mesh.knot_vectors(&problem.geometry)?;
    Ok(build_spaces(spatial, temporal, &problem.dirichlet_faces())?.0)
}
