//! Wave problem data: geometry, wave speed, impedance, source and initial
//! and boundary data, plus ready-made configurations.

use std::fmt;
use std::sync::Arc;

use crate::error::Result;
use crate::exact::{
    scattering_source, EnergyStanding, ExactSolution, JumpVelocityPulse, LinearInTime, Profile,
    SmoothFront, SmoothStanding, StandingWave, TravelingPeriodic,
};
use crate::geometry::{half_annulus, unit_box, BoundaryKind, Face, GeometryMap, Side, Vec2};

pub type SpaceTimeFn = Arc<dyn Fn(&Vec2, f64) -> f64 + Send + Sync>;
pub type SpaceFn = Arc<dyn Fn(&Vec2) -> f64 + Send + Sync>;
/// Boundary data `g(x, n, t)` with `n` the outward unit normal.
pub type BoundaryFn = Arc<dyn Fn(&Vec2, &Vec2, f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum Velocity {
    Constant(f64),
    /// Smooth `c(x, t)` sampled at quadrature points.
    Variable(SpaceTimeFn),
    /// Piecewise `c(x, t)` evaluated once per space–time element at its
    /// midpoint (the mesh must resolve the jumps).
    ElementMidpoint(SpaceTimeFn),
}

impl Velocity {
    pub fn constant_value(&self) -> Option<f64> {
        match self {
            Velocity::Constant(c) => Some(*c),
            _ => None,
        }
    }

    /// Pointwise value (for the piecewise case, the value of the branch
    /// containing `x`).
    pub fn at(&self, x: &Vec2, t: f64) -> f64 {
        match self {
            Velocity::Constant(c) => *c,
            Velocity::Variable(f) | Velocity::ElementMidpoint(f) => f(x, t),
        }
    }
}

impl fmt::Debug for Velocity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Velocity::Constant(c) => write!(f, "Constant({c})"),
            Velocity::Variable(_) => write!(f, "Variable(..)"),
            Velocity::ElementMidpoint(_) => write!(f, "ElementMidpoint(..)"),
        }
    }
}

/// `∂_tt u - ∇·(c² ∇u) = f` with boundary kinds taken from the geometry
/// tags. Missing data are zero.
#[derive(Clone)]
pub struct WaveProblem {
    pub geometry: GeometryMap,
    pub velocity: Velocity,
    /// Impedance `ϑ` on Robin faces.
    pub impedance: f64,
    pub source: Option<SpaceTimeFn>,
    pub initial_value: Option<SpaceFn>,
    pub initial_velocity: Option<SpaceFn>,
    pub neumann: Option<BoundaryFn>,
    pub robin: Option<BoundaryFn>,
}

impl fmt::Debug for WaveProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("WaveProblem")
            .field("geometry", &self.geometry)
            .field("velocity", &self.velocity)
            .field("impedance", &self.impedance)
            .field("source", &self.source.is_some())
            .field("initial_value", &self.initial_value.is_some())
            .field("initial_velocity", &self.initial_velocity.is_some())
            .field("neumann", &self.neumann.is_some())
            .field("robin", &self.robin.is_some())
            .finish()
    }
}

impl WaveProblem {
    /// Homogeneous problem with unit speed.
    pub fn new(geometry: GeometryMap) -> Self {
        WaveProblem {
            geometry,
            velocity: Velocity::Constant(1.0),
            impedance: 1.0,
            source: None,
            initial_value: None,
            initial_velocity: None,
            neumann: None,
            robin: None,
        }
    }

    pub fn dirichlet_faces(&self) -> Vec<Face> {
        self.geometry.faces_with(BoundaryKind::Dirichlet)
    }

    pub fn has_robin(&self) -> bool {
        !self.geometry.faces_with(BoundaryKind::Robin).is_empty()
    }

    pub fn with_velocity(mut self, c: Velocity) -> Self {
        self.velocity = c;
        self
    }

    pub fn with_source(mut self, f: impl Fn(&Vec2, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.source = Some(Arc::new(f));
        self
    }

    pub fn with_initial_value(mut self, u0: impl Fn(&Vec2) -> f64 + Send + Sync + 'static) -> Self {
        self.initial_value = Some(Arc::new(u0));
        self
    }

    pub fn with_initial_velocity(mut self, u1: impl Fn(&Vec2) -> f64 + Send + Sync + 'static) -> Self {
        self.initial_velocity = Some(Arc::new(u1));
        self
    }

    pub fn with_neumann(mut self, g: impl Fn(&Vec2, &Vec2, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.neumann = Some(Arc::new(g));
        self
    }

    pub fn with_robin(mut self, g: impl Fn(&Vec2, &Vec2, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.robin = Some(Arc::new(g));
        self
    }
}

/// A problem together with its exact solution, when known.
#[derive(Clone)]
pub struct TestCase {
    pub problem: WaveProblem,
    pub exact: Option<Arc<dyn ExactSolution>>,
}

impl fmt::Debug for TestCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TestCase")
            .field("problem", &self.problem)
            .field("exact", &self.exact.is_some())
            .finish()
    }
}

fn dirichlet_interval(final_time: f64) -> Result<GeometryMap> {
    Ok(unit_box(1, &[1.0], final_time)?.with_all_faces(BoundaryKind::Dirichlet))
}

/// `sin(πx) sin²(5πt/4)` on `(0,1) x (0,T)`, homogeneous Dirichlet.
pub fn smooth_standing(final_time: f64) -> Result<TestCase> {
    let problem = WaveProblem::new(dirichlet_interval(final_time)?).with_source(SmoothStanding::source);
    Ok(TestCase {
        problem,
        exact: Some(Arc::new(SmoothStanding)),
    })
}

/// `sin(kπx) sin(kπt)` on `(0,1) x (0,T)`.
pub fn standing_wave(k: f64, final_time: f64) -> Result<TestCase> {
    let w = k * std::f64::consts::PI;
    let problem = WaveProblem::new(dirichlet_interval(final_time)?)
        .with_initial_velocity(move |x| w * (w * x[0]).sin());
    Ok(TestCase {
        problem,
        exact: Some(Arc::new(StandingWave { k })),
    })
}

/// `(cos πt + sin πt) sin πx` on `(0,1) x (0,T)`: nonzero initial value
/// through the lifting.
pub fn energy_standing(final_time: f64) -> Result<TestCase> {
    let pi = std::f64::consts::PI;
    let problem = WaveProblem::new(dirichlet_interval(final_time)?)
        .with_initial_value(move |x| (pi * x[0]).sin())
        .with_initial_velocity(move |x| pi * (pi * x[0]).sin());
    Ok(TestCase {
        problem,
        exact: Some(Arc::new(EnergyStanding)),
    })
}

/// Wavefront in the medium `c = 1 + y` on `(0,1)² x (0, T)`, all faces
/// Neumann with data from the exact solution.
pub fn smooth_front(final_time: f64) -> Result<TestCase> {
    let exact = SmoothFront;
    let problem = WaveProblem::new(unit_box(2, &[1.0, 1.0], final_time)?)
        .with_velocity(Velocity::Variable(Arc::new(SmoothFront::velocity)))
        .with_source(SmoothFront::source)
        .with_initial_value(move |x| exact.value(x, 0.0))
        .with_initial_velocity(move |x| exact.time_derivative(x, 0.0))
        .with_neumann(move |x, n, t| {
            let g = exact.gradient(x, t);
            let c = SmoothFront::velocity(x, t);
            c * c * (g[0] * n[0] + g[1] * n[1])
        });
    Ok(TestCase {
        problem,
        exact: Some(Arc::new(exact)),
    })
}

/// Bump crossing the velocity jump at `x = 1/2`, Neumann ends, `T = 1`.
pub fn jump_velocity_pulse() -> Result<TestCase> {
    let problem = WaveProblem::new(unit_box(1, &[1.0], 1.0)?)
        .with_velocity(Velocity::ElementMidpoint(Arc::new(JumpVelocityPulse::velocity)))
        .with_initial_value(JumpVelocityPulse::initial_value)
        .with_initial_velocity(JumpVelocityPulse::initial_velocity);
    Ok(TestCase {
        problem,
        exact: Some(Arc::new(JumpVelocityPulse)),
    })
}

/// `u = t` with Neumann faces in `dim` space dimensions.
pub fn linear_in_time(dim: usize, final_time: f64) -> Result<TestCase> {
    let lengths = vec![1.0; dim];
    let problem = WaveProblem::new(unit_box(dim, &lengths, final_time)?).with_initial_velocity(|_| 1.0);
    Ok(TestCase {
        problem,
        exact: Some(Arc::new(LinearInTime)),
    })
}

/// Periodic right-moving profile on `(0,1) x (0,T)`.
pub fn periodic_profile(profile: Profile, final_time: f64) -> Result<TestCase> {
    let geometry = unit_box(1, &[1.0], final_time)?.with_periodic_direction(0);
    let problem = WaveProblem::new(geometry)
        .with_initial_value(move |x| profile.value(x[0]))
        .with_initial_velocity(move |x| -profile.derivative(x[0]));
    Ok(TestCase {
        problem,
        exact: Some(Arc::new(TravelingPeriodic { profile })),
    })
}

/// Pulse scattered by the unit disk: half annulus `1 <= r <= 3`, sound-soft
/// inner arc, impedance `ϑ = 1` on the outer arc, Neumann on `y = 0`.
pub fn scattering(final_time: f64) -> Result<TestCase> {
    let problem = WaveProblem::new(half_annulus(1.0, 3.0, final_time)?).with_source(scattering_source);
    Ok(TestCase { problem, exact: None })
}

/// Dirichlet faces of a box of dimension `dim` on every side.
pub fn all_dirichlet(dim: usize) -> Vec<Face> {
    (0..dim)
        .flat_map(|d| [Face::new(d, Side::Lower), Face::new(d, Side::Upper)])
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn face_tags_follow_the_cases() {
        let c = smooth_standing(10.0).unwrap();
        assert_eq!(c.problem.dirichlet_faces(), all_dirichlet(1));
        assert!(!c.problem.has_robin());
        let s = scattering(2.0).unwrap();
        assert!(s.problem.has_robin());
        assert_eq!(s.problem.dirichlet_faces(), vec![Face::new(0, Side::Lower)]);
        let p = periodic_profile(Profile::Tent, 2.0).unwrap();
        assert!(p.problem.dirichlet_faces().is_empty());
        assert_eq!(p.problem.geometry.face_tag(Face::new(0, Side::Lower)), None);
        assert_eq!(smooth_front(0.375).unwrap().problem.velocity.constant_value(), None);
    }
}
