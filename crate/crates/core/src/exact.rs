//! Closed-form solutions and data used by the experiments.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::geometry::Vec2;
use crate::quadrature::gauss_legendre;

/// A smooth exact solution with analytic first derivatives.
pub trait ExactSolution: Send + Sync {
    fn value(&self, x: &Vec2, t: f64) -> f64;
    fn time_derivative(&self, x: &Vec2, t: f64) -> f64;
    fn gradient(&self, x: &Vec2, t: f64) -> Vec2;
}

/// Smooth bump `Ψ(s) = exp(1 + 1/(s² - 1))` on `(-1, 1)`, zero elsewhere.
pub fn bump(s: f64) -> f64 {
    if s.abs() < 1.0 {
        (1.0 + 1.0 / (s * s - 1.0)).exp()
    } else {
        0.0
    }
}

pub fn bump_derivative(s: f64) -> f64 {
    if s.abs() < 1.0 {
        let q = s * s - 1.0;
        -2.0 * s / (q * q) * bump(s)
    } else {
        0.0
    }
}

/// `sin(πx) sin²(a t)` with `a = 5π/4` on `(0,1) x (0,10)`, `c = 1`.
#[derive(Debug, Clone, Copy, Default)]
pub struct SmoothStanding;

impl SmoothStanding {
    const A: f64 = 1.25 * PI;

    pub fn source(x: &Vec2, t: f64) -> f64 {
        let a = Self::A;
        let s = (a * t).sin();
        (PI * x[0]).sin() * (2.0 * a * a * (2.0 * a * t).cos() + PI * PI * s * s)
    }
}

impl ExactSolution for SmoothStanding {
    fn value(&self, x: &Vec2, t: f64) -> f64 {
        let s = (Self::A * t).sin();
        (PI * x[0]).sin() * s * s
    }

    fn time_derivative(&self, x: &Vec2, t: f64) -> f64 {
        (PI * x[0]).sin() * Self::A * (2.0 * Self::A * t).sin()
    }

    fn gradient(&self, x: &Vec2, t: f64) -> Vec2 {
        let s = (Self::A * t).sin();
        [PI * (PI * x[0]).cos() * s * s, 0.0]
    }
}

/// `sin(kπx) sin(kπt)`.
#[derive(Debug, Clone, Copy)]
pub struct StandingWave {
    pub k: f64,
}

impl ExactSolution for StandingWave {
    fn value(&self, x: &Vec2, t: f64) -> f64 {
        let w = self.k * PI;
        (w * x[0]).sin() * (w * t).sin()
    }

    fn time_derivative(&self, x: &Vec2, t: f64) -> f64 {
        let w = self.k * PI;
        w * (w * x[0]).sin() * (w * t).cos()
    }

    fn gradient(&self, x: &Vec2, t: f64) -> Vec2 {
        let w = self.k * PI;
        [w * (w * x[0]).cos() * (w * t).sin(), 0.0]
    }
}

/// `(cos πt + sin πt) sin πx`, energy `π²/2`.
#[derive(Debug, Clone, Copy, Default)]
pub struct EnergyStanding;

impl EnergyStanding {
    pub const ENERGY: f64 = PI * PI / 2.0;
}

impl ExactSolution for EnergyStanding {
    fn value(&self, x: &Vec2, t: f64) -> f64 {
        ((PI * t).cos() + (PI * t).sin()) * (PI * x[0]).sin()
    }

    fn time_derivative(&self, x: &Vec2, t: f64) -> f64 {
        PI * ((PI * t).cos() - (PI * t).sin()) * (PI * x[0]).sin()
    }

    fn gradient(&self, x: &Vec2, t: f64) -> Vec2 {
        [PI * ((PI * t).cos() + (PI * t).sin()) * (PI * x[0]).cos(), 0.0]
    }
}

/// Wavefront `exp(-64 (x - (1+y) t)²)` in the medium `c = 1 + y` on
/// `(0,1)² x (0, 0.375)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct SmoothFront;

impl SmoothFront {
    fn g(s: f64) -> (f64, f64, f64) {
        let g = (-64.0 * s * s).exp();
        (g, -128.0 * s * g, (128.0 * 128.0 * s * s - 128.0) * g)
    }

    pub fn velocity(x: &Vec2, _t: f64) -> f64 {
        1.0 + x[1]
    }

    pub fn source(x: &Vec2, t: f64) -> f64 {
        let c = 1.0 + x[1];
        let (_, g1, g2) = Self::g(x[0] - c * t);
        2.0 * t * c * g1 - t * t * c * c * g2
    }
}

impl ExactSolution for SmoothFront {
    fn value(&self, x: &Vec2, t: f64) -> f64 {
        Self::g(x[0] - (1.0 + x[1]) * t).0
    }

    fn time_derivative(&self, x: &Vec2, t: f64) -> f64 {
        let c = 1.0 + x[1];
        -c * Self::g(x[0] - c * t).1
    }

    fn gradient(&self, x: &Vec2, t: f64) -> Vec2 {
        let (_, g1, _) = Self::g(x[0] - (1.0 + x[1]) * t);
        [g1, -t * g1]
    }
}

/// Bump crossing the velocity jump `c = 1 | 2` at `x = 1/2` on
/// `(0,1) x (0,1)` with Neumann ends.
#[derive(Debug, Clone, Copy, Default)]
pub struct JumpVelocityPulse;

impl JumpVelocityPulse {
    pub fn velocity(x: &Vec2, _t: f64) -> f64 {
        if x[0] < 0.5 {
            1.0
        } else {
            2.0
        }
    }

    pub fn initial_value(x: &Vec2) -> f64 {
        bump(5.0 * x[0] - 1.0)
    }

    pub fn initial_velocity(x: &Vec2) -> f64 {
        -5.0 * bump_derivative(5.0 * x[0] - 1.0)
    }

    /// Terms `(w, a, b, s)` of `Σ w Ψ(a x + b t + s)`.
    fn terms(x: f64) -> [(f64, f64, f64, f64); 4] {
        if x < 0.5 {
            [
                (1.0, 5.0, -5.0, -1.0),
                (-1.0 / 3.0, 5.0, 5.0, -4.0),
                (-1.0 / 3.0, 5.0, -5.0, 4.0),
                (8.0 / 9.0, 5.0, 5.0, -6.5),
            ]
        } else {
            [
                (2.0 / 3.0, 2.5, -5.0, 0.25),
                (2.0 / 3.0, 2.5, 5.0, -5.25),
                (2.0 / 9.0, 2.5, -5.0, 2.75),
                (2.0 / 9.0, 2.5, 5.0, -7.75),
            ]
        }
    }
}

impl ExactSolution for JumpVelocityPulse {
    fn value(&self, x: &Vec2, t: f64) -> f64 {
        Self::terms(x[0])
            .iter()
            .map(|&(w, a, b, s)| w * bump(a * x[0] + b * t + s))
            .sum()
    }

    fn time_derivative(&self, x: &Vec2, t: f64) -> f64 {
        Self::terms(x[0])
            .iter()
            .map(|&(w, a, b, s)| w * b * bump_derivative(a * x[0] + b * t + s))
            .sum()
    }

    fn gradient(&self, x: &Vec2, t: f64) -> Vec2 {
        let g = Self::terms(x[0])
            .iter()
            .map(|&(w, a, b, s)| w * a * bump_derivative(a * x[0] + b * t + s))
            .sum();
        [g, 0.0]
    }
}

/// `u(x, t) = t`: constant in space, linear in time.
#[derive(Debug, Clone, Copy, Default)]
pub struct LinearInTime;

impl ExactSolution for LinearInTime {
    fn value(&self, _x: &Vec2, t: f64) -> f64 {
        t
    }

    fn time_derivative(&self, _x: &Vec2, _t: f64) -> f64 {
        1.0
    }

    fn gradient(&self, _x: &Vec2, _t: f64) -> Vec2 {
        [0.0, 0.0]
    }
}

/// Periodic initial profiles on `[0, 1)` for the dispersion study.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    /// `(1 - |4x - 1|)` on `[0, 1/2]`.
    Tent,
    /// `Ψ(4x - 1)` on `[0, 1/2]`.
    Bump,
}

impl Profile {
    pub fn value(&self, x: f64) -> f64 {
        let x = x.rem_euclid(1.0);
        if x > 0.5 {
            return 0.0;
        }
        match self {
            Profile::Tent => 1.0 - (4.0 * x - 1.0).abs(),
            Profile::Bump => bump(4.0 * x - 1.0),
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        let x = x.rem_euclid(1.0);
        if x > 0.5 {
            return 0.0;
        }
        match self {
            Profile::Tent => {
                if x < 0.25 {
                    4.0
                } else {
                    -4.0
                }
            }
            Profile::Bump => 4.0 * bump_derivative(4.0 * x - 1.0),
        }
    }

    /// Kinks of the profile, used to split quadrature intervals.
    pub fn breakpoints(&self) -> &'static [f64] {
        match self {
            Profile::Tent => &[0.0, 0.25, 0.5, 1.0],
            Profile::Bump => &[0.0, 0.5, 1.0],
        }
    }

    /// `c_n = ∫_0^1 u_0(x) e^{-2πinx} dx`.
    pub fn fourier_coefficient(&self, n: i64) -> Complex64 {
        let rule = gauss_legendre(20).expect("valid rule size");
        let bp = self.breakpoints();
        let mut acc = Complex64::new(0.0, 0.0);
        for w in bp.windows(2) {
            let sub = 64;
            let h = (w[1] - w[0]) / sub as f64;
            for k in 0..sub {
                let (xs, ws) = rule.map_unchecked(w[0] + k as f64 * h, w[0] + (k + 1) as f64 * h);
                for (&x, &wt) in xs.iter().zip(&ws) {
                    let phase = -2.0 * PI * n as f64 * x;
                    acc += wt * self.value(x) * Complex64::new(phase.cos(), phase.sin());
                }
            }
        }
        acc
    }
}

/// Right-moving periodic wave `u_0((x - t) mod 1)` with unit speed.
#[derive(Debug, Clone, Copy)]
pub struct TravelingPeriodic {
    pub profile: Profile,
}

impl TravelingPeriodic {
    /// `c_n(t) = c_n(0) e^{-2πint}`.
    pub fn fourier_coefficient(&self, n: i64, t: f64) -> Complex64 {
        let phase = -2.0 * PI * n as f64 * t;
        self.profile.fourier_coefficient(n) * Complex64::new(phase.cos(), phase.sin())
    }
}

impl ExactSolution for TravelingPeriodic {
    fn value(&self, x: &Vec2, t: f64) -> f64 {
        self.profile.value(x[0] - t)
    }

    fn time_derivative(&self, x: &Vec2, t: f64) -> f64 {
        -self.profile.derivative(x[0] - t)
    }

    fn gradient(&self, x: &Vec2, t: f64) -> Vec2 {
        [self.profile.derivative(x[0] - t), 0.0]
    }
}

/// Pulse source `cos(2πt) Ψ(t) Ψ(|x - (2,0)| / 0.4)` for the scattering
/// problem.
pub fn scattering_source(x: &Vec2, t: f64) -> f64 {
    let r = ((x[0] - 2.0).powi(2) + x[1] * x[1]).sqrt();
    (2.0 * PI * t).cos() * bump(t) * bump(r / 0.4)
}
