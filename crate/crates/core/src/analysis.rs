//! Error norms, convergence rates, energy traces, Fourier phase errors and
//! the L² stability bound.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::discretization::{DiscreteFunction, Sample};
use crate::error::{Error, Result};
use crate::exact::ExactSolution;
use crate::geometry::Vec2;
use crate::problem::Velocity;
use crate::quadrature::{gauss_legendre, QuadRule};

/// Errors above this (or non-finite) are reported as blow-up.
pub const BLOW_UP_THRESHOLD: f64 = 1e100;

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    /// `‖u - u_h‖_{L²(Q)}`, relative to `‖u‖` when that is nonzero.
    pub l2: f64,
    /// Weighted seminorm `(∫_Q |∂_t e|² + c²|∇e|²)^{1/2}`, same convention.
    pub h1: f64,
    /// `‖e(·, T)‖_{L²(Ω)}` and `‖∇e(·, T)‖_{L²(Ω)}`, same convention.
    pub final_l2: f64,
    pub final_h1: f64,
    /// False when some exact norm vanished and that entry is absolute.
    pub relative: bool,
    pub blow_up: bool,
}

impl ErrorReport {
    fn new(err: [f64; 4], norm: [f64; 4]) -> Self {
        let relative = norm.iter().all(|&n| n > 0.0);
        let v: Vec<f64> = err
            .iter()
            .zip(&norm)
            .map(|(e, n)| if *n > 0.0 { e.sqrt() / n.sqrt() } else { e.sqrt() })
            .collect();
        let blow_up = v.iter().any(|x| !x.is_finite() || *x > BLOW_UP_THRESHOLD);
        ErrorReport {
            l2: v[0],
            h1: v[1],
            final_l2: v[2],
            final_h1: v[3],
            relative,
            blow_up,
        }
    }
}

/// Space–time quadrature over all elements of `u`'s mesh. `body` gets the
/// physical point, time, weight and the sample of `u`; the per-element sums
/// are added in element order.
fn integrate_q<const N: usize>(
    u: &DiscreteFunction,
    extra_nodes: usize,
    body: &(dyn Fn(&Vec2, f64, f64, &Sample) -> [f64; N] + Sync),
) -> Result<[f64; N]> {
    let space = u.space();
    let d = space.space_dim();
    let geometry = u.geometry();
    let tf = geometry.final_time();
    let kvs: Vec<_> = space.spatial().iter().map(|s| s.knot_vector()).collect();
    let tkv = space.temporal().knot_vector();
    let p = kvs.iter().map(|k| k.degree()).chain([tkv.degree()]).max().unwrap_or(1);
    let rule = gauss_legendre(p + extra_nodes)?;
    let ne: Vec<usize> = kvs.iter().map(|k| k.num_elements()).collect();
    let n1 = if d == 2 { ne[1] } else { 1 };
    let parts: Vec<[f64; N]> = (0..tkv.num_elements())
        .into_par_iter()
        .map(|et| -> Result<[f64; N]> {
            let (ta, tb) = tkv.element(et);
            let (taus, tws) = rule.map_unchecked(ta, tb);
            let mut acc = [0.0; N];
            for e1 in 0..n1 {
                for e0 in 0..ne[0] {
                    let elem = [e0, e1];
                    let (pts, wts) = element_points(&rule, &kvs, &elem);
                    let samples = u.evaluate_on_element(&elem[..d], et, &pts, &taus)?;
                    let mut idx = 0;
                    for (&tau, &tw) in taus.iter().zip(&tws) {
                        let t = tf * tau;
                        for_each_point(d, &pts, &wts, |eta, w| {
                            let s = &samples[idx];
                            idx += 1;
                            let weight = w * geometry.det_jacobian(eta).abs() * tw * tf;
                            let x = geometry.map(eta);
                            let v = body(&x, t, weight, s);
                            for k in 0..N {
                                acc[k] += v[k];
                            }
                        });
                    }
                }
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let mut total = [0.0; N];
    for part in parts {
        for k in 0..N {
            total[k] += part[k];
        }
    }
    Ok(total)
}

type Points = (Vec<Vec<f64>>, Vec<Vec<f64>>);

fn element_points(rule: &QuadRule, kvs: &[&crate::splines::KnotVector], elem: &[usize]) -> Points {
    kvs.iter()
        .enumerate()
        .map(|(dir, kv)| {
            let (a, b) = kv.element(elem[dir]);
            rule.map_unchecked(a, b)
        })
        .unzip()
}

/// Visit the tensor points (first direction fastest) with their weights.
fn for_each_point(d: usize, pts: &[Vec<f64>], wts: &[Vec<f64>], mut f: impl FnMut(&[f64], f64)) {
    if d == 1 {
        for (x, w) in pts[0].iter().zip(&wts[0]) {
            f(&[*x], *w);
        }
        return;
    }
    for (y, wy) in pts[1].iter().zip(&wts[1]) {
        for (x, wx) in pts[0].iter().zip(&wts[0]) {
            f(&[*x, *y], wx * wy);
        }
    }
}

/// Spatial quadrature at a fixed time `t`: `body(x, weight, sample)`.
fn integrate_omega<const N: usize>(
    u: &DiscreteFunction,
    t: f64,
    extra_nodes: usize,
    body: &dyn Fn(&Vec2, f64, &Sample) -> [f64; N],
) -> Result<[f64; N]> {
    let space = u.space();
    let d = space.space_dim();
    let geometry = u.geometry();
    let tf = geometry.final_time();
    let tau = (t / tf).clamp(0.0, 1.0);
    let tkv = space.temporal().knot_vector();
    let et = tkv.element_of(tau)?;
    let kvs: Vec<_> = space.spatial().iter().map(|s| s.knot_vector()).collect();
    let p = kvs.iter().map(|k| k.degree()).max().unwrap_or(1);
    let rule = gauss_legendre(p + extra_nodes)?;
    let ne: Vec<usize> = kvs.iter().map(|k| k.num_elements()).collect();
    let n1 = if d == 2 { ne[1] } else { 1 };
    let mut acc = [0.0; N];
    for e1 in 0..n1 {
        for e0 in 0..ne[0] {
            let elem = [e0, e1];
            let (pts, wts) = element_points(&rule, &kvs, &elem);
            let samples = u.evaluate_on_element(&elem[..d], et, &pts, &[tau])?;
            let mut idx = 0;
            for_each_point(d, &pts, &wts, |eta, w| {
                let s = &samples[idx];
                idx += 1;
                let v = body(&geometry.map(eta), w * geometry.det_jacobian(eta).abs(), s);
                for k in 0..N {
                    acc[k] += v[k];
                }
            });
        }
    }
    Ok(acc)
}

fn dot(a: &Vec2, b: &Vec2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// Relative space–time and final-time errors with `p + 3` Gauss nodes per
/// element and direction.
pub fn space_time_errors(u: &DiscreteFunction, exact: &dyn ExactSolution, c: &Velocity) -> Result<ErrorReport> {
    space_time_errors_with(u, exact, c, 3)
}

/// As [`space_time_errors`] with `p + extra_nodes` Gauss nodes.
pub fn space_time_errors_with(
    u: &DiscreteFunction,
    exact: &dyn ExactSolution,
    c: &Velocity,
    extra_nodes: usize,
) -> Result<ErrorReport> {
    let q = integrate_q(u, extra_nodes, &|x, t, w, s| {
        let ue = exact.value(x, t);
        let dte = exact.time_derivative(x, t);
        let ge = exact.gradient(x, t);
        let c2 = c.at(x, t).powi(2);
        let de = [ge[0] - s.gradient[0], ge[1] - s.gradient[1]];
        [
            w * (ue - s.value).powi(2),
            w * ((dte - s.time_derivative).powi(2) + c2 * dot(&de, &de)),
            w * ue * ue,
            w * (dte * dte + c2 * dot(&ge, &ge)),
        ]
    })?;
    let tf = u.geometry().final_time();
    let f = integrate_omega(u, tf, extra_nodes, &|x, w, s| {
        let ue = exact.value(x, tf);
        let ge = exact.gradient(x, tf);
        let de = [ge[0] - s.gradient[0], ge[1] - s.gradient[1]];
        [
            w * (ue - s.value).powi(2),
            w * dot(&de, &de),
            w * ue * ue,
            w * dot(&ge, &ge),
        ]
    })?;
    Ok(ErrorReport::new([q[0], q[1], f[0], f[1]], [q[2], q[3], f[2], f[3]]))
}

/// `‖u‖_{L²(Q)}`.
pub fn l2_norm(u: &DiscreteFunction) -> Result<f64> {
    Ok(integrate_q(u, 3, &|_, _, w, s| [w * s.value * s.value])?[0].sqrt())
}

/// Relative `L²(Q)` and weighted `H¹(Q)` distances of `u` from `reference`
/// (with `c = 1`), integrated on the reference mesh. The mesh of `u` must be
/// nested in that of `reference`.
pub fn self_errors(u: &DiscreteFunction, reference: &DiscreteFunction) -> Result<(f64, f64)> {
    let space = u.space();
    let rs = reference.space();
    let d = space.space_dim();
    if rs.space_dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: rs.space_dim(),
        });
    }
    let tf = reference.geometry().final_time();
    let geometry = reference.geometry();
    let kvs: Vec<_> = space.spatial().iter().map(|s| s.knot_vector()).collect();
    let rkvs: Vec<_> = rs.spatial().iter().map(|s| s.knot_vector()).collect();
    let (tkv, rtkv) = (space.temporal().knot_vector(), rs.temporal().knot_vector());
    let p = rkvs.iter().map(|k| k.degree()).chain([rtkv.degree()]).max().unwrap_or(1);
    let rule = gauss_legendre(p + 1)?;
    let ne: Vec<usize> = rkvs.iter().map(|k| k.num_elements()).collect();
    let n1 = if d == 2 { ne[1] } else { 1 };
    let mid = |kv: &crate::splines::KnotVector, (a, b): (f64, f64)| kv.element_of(0.5 * (a + b));
    let parts: Vec<[f64; 4]> = (0..rtkv.num_elements())
        .into_par_iter()
        .map(|et| -> Result<[f64; 4]> {
            let (ta, tb) = rtkv.element(et);
            let (taus, tws) = rule.map_unchecked(ta, tb);
            let cet = mid(tkv, (ta, tb))?;
            let mut acc = [0.0; 4];
            for e1 in 0..n1 {
                for e0 in 0..ne[0] {
                    let elem = [e0, e1];
                    let (pts, wts) = element_points(&rule, &rkvs, &elem);
                    let celem: Vec<usize> = (0..d)
                        .map(|dir| mid(kvs[dir], rkvs[dir].element(elem[dir])))
                        .collect::<Result<_>>()?;
                    let r = reference.evaluate_on_element(&elem[..d], et, &pts, &taus)?;
                    let a = u.evaluate_on_element(&celem, cet, &pts, &taus)?;
                    let mut idx = 0;
                    for &tw in &tws {
                        for_each_point(d, &pts, &wts, |eta, w| {
                            let (s, q) = (&a[idx], &r[idx]);
                            idx += 1;
                            let w = w * geometry.det_jacobian(eta).abs() * tw * tf;
                            let dg = [q.gradient[0] - s.gradient[0], q.gradient[1] - s.gradient[1]];
                            acc[0] += w * (q.value - s.value).powi(2);
                            acc[1] += w * ((q.time_derivative - s.time_derivative).powi(2) + dot(&dg, &dg));
                            acc[2] += w * q.value * q.value;
                            acc[3] += w * (q.time_derivative.powi(2) + dot(&q.gradient, &q.gradient));
                        });
                    }
                }
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let mut t = [0.0; 4];
    for part in parts {
        for k in 0..4 {
            t[k] += part[k];
        }
    }
    if t[2] == 0.0 || t[3] == 0.0 {
        return Err(Error::UndefinedRatio("reference solution vanishes".into()));
    }
    Ok(((t[0] / t[2]).sqrt(), (t[1] / t[3]).sqrt()))
}

/// Pairwise rates `log(e_i / e_{i+1}) / log(h_i / h_{i+1})`.
pub fn convergence_rates(data: &[(f64, f64)]) -> Result<Vec<f64>> {
    if data.len() < 2 {
        return Err(Error::InvalidSize(format!(
            "need at least two (h, error) pairs, got {}",
            data.len()
        )));
    }
    if let Some(&(h, e)) = data.iter().find(|(h, e)| !(*h > 0.0 && *e > 0.0 && h.is_finite() && e.is_finite())) {
        return Err(Error::Domain(format!("mesh sizes and errors must be positive, got ({h}, {e})")));
    }
    data.windows(2)
        .map(|w| {
            let (h0, e0) = w[0];
            let (h1, e1) = w[1];
            if h0 == h1 {
                return Err(Error::Domain(format!("repeated mesh size {h0}")));
            }
            Ok((e0 / e1).ln() / (h0 / h1).ln())
        })
        .collect()
}

/// `n` uniform sample times on `[0, T]`.
pub fn sample_times(final_time: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n).map(|i| final_time * i as f64 / (n - 1) as f64).collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyTrace {
    pub times: Vec<f64>,
    pub energy: Vec<f64>,
    /// `|E_h - E| / E` (absolute when `E = 0`).
    pub relative_error: Vec<f64>,
    /// Sign of `E_h - E`: `1`, `-1` or `0`.
    pub sign: Vec<i8>,
}

/// `E_h(t) = ½‖∂_t u(·,t)‖² + ½‖∇u(·,t)‖²`.
pub fn discrete_energy(u: &DiscreteFunction, t: f64, extra_nodes: usize) -> Result<f64> {
    let e = integrate_omega(u, t, extra_nodes, &|_, w, s| {
        [0.5 * w * (s.time_derivative.powi(2) + dot(&s.gradient, &s.gradient))]
    })?;
    Ok(e[0])
}

pub fn energy_trace(u: &DiscreteFunction, times: &[f64], exact_energy: f64) -> Result<EnergyTrace> {
    energy_trace_with(u, times, exact_energy, 3)
}

pub fn energy_trace_with(u: &DiscreteFunction, times: &[f64], exact_energy: f64, extra_nodes: usize) -> Result<EnergyTrace> {
    let energy: Vec<f64> = times
        .par_iter()
        .map(|&t| discrete_energy(u, t, extra_nodes))
        .collect::<Result<_>>()?;
    let relative_error = energy
        .iter()
        .map(|e| {
            let d = (e - exact_energy).abs();
            if exact_energy != 0.0 {
                d / exact_energy.abs()
            } else {
                d
            }
        })
        .collect();
    let sign = energy
        .iter()
        .map(|e| match (e - exact_energy).partial_cmp(&0.0) {
            Some(std::cmp::Ordering::Greater) => 1,
            Some(std::cmp::Ordering::Less) => -1,
            _ => 0,
        })
        .collect();
    Ok(EnergyTrace {
        times: times.to_vec(),
        energy,
        relative_error,
        sign,
    })
}

/// `c_n(t) = (1/|Ω|) ∫_Ω u(x, t) e^{-2πinx/|Ω|} dx` for a 1D periodic
/// solution.
pub fn fourier_coefficient(u: &DiscreteFunction, n: i64, t: f64) -> Result<Complex64> {
    if u.space().space_dim() != 1 || !u.space().spatial()[0].knot_vector().is_periodic() {
        return Err(Error::Unsupported(
            "Fourier coefficients need a one-dimensional periodic space".into(),
        ));
    }
    let len = u.geometry().map(&[1.0])[0];
    let acc = integrate_omega(u, t, 3, &|x, w, s| {
        let phase = -2.0 * PI * n as f64 * x[0] / len;
        [w * s.value * phase.cos(), w * s.value * phase.sin()]
    })?;
    Ok(Complex64::new(acc[0], acc[1]) / len)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseErrorTrace {
    pub mode: i64,
    pub times: Vec<f64>,
    /// `|arg((c_n / c_{n,h}) · (|c_{n,h}| / |c_n|))|` per time.
    pub errors: Vec<f64>,
    /// Set when `c_n` or `c_{n,h}` vanished at some time; `errors` is empty.
    pub skipped: bool,
}

/// Phase error `|arg(c_n conj(c_{n,h}))|`, or `None` for a vanishing
/// coefficient.
pub fn phase_error(exact: Complex64, discrete: Complex64) -> Option<f64> {
    let tiny = 1e-300;
    if exact.norm() <= tiny || discrete.norm() <= tiny {
        return None;
    }
    Some((exact / discrete * (discrete.norm() / exact.norm())).arg().abs())
}

pub fn phase_errors(
    u: &DiscreteFunction,
    modes: &[i64],
    times: &[f64],
    exact: &(dyn Fn(i64, f64) -> Complex64 + Sync),
) -> Result<Vec<PhaseErrorTrace>> {
    modes
        .iter()
        .map(|&n| {
            let errs: Vec<Option<f64>> = times
                .par_iter()
                .map(|&t| Ok(phase_error(exact(n, t), fourier_coefficient(u, n, t)?)))
                .collect::<Result<_>>()?;
            let skipped = errs.iter().any(Option::is_none);
            Ok(PhaseErrorTrace {
                mode: n,
                times: times.to_vec(),
                errors: if skipped { Vec::new() } else { errs.into_iter().flatten().collect() },
                skipped,
            })
        })
        .collect()
}

/// The `count` modes `1..=max_mode` with the largest `|c_n|`, largest first
/// (ties broken by the smaller index).
pub fn largest_modes(coefficient: &dyn Fn(i64) -> Complex64, count: usize, max_mode: i64) -> Vec<i64> {
    let mut m: Vec<(i64, f64)> = (1..=max_mode).map(|n| (n, coefficient(n).norm())).collect();
    m.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal).then(a.0.cmp(&b.0)));
    m.into_iter().take(count).map(|(n, _)| n).collect()
}

/// The constant `(4/π) T²` of the L² stability estimate.
pub fn stability_constant(final_time: f64) -> f64 {
    4.0 / PI * final_time * final_time
}

/// `‖u_h‖_{L²(Q)} / ((4/π) T² ‖f‖_{L²(Q)})`.
pub fn stability_bound_check(
    u: &DiscreteFunction,
    f: &(dyn Fn(&Vec2, f64) -> f64 + Sync),
    final_time: f64,
) -> Result<f64> {
    let n = integrate_q(u, 3, &|x, t, w, s| [w * s.value * s.value, w * f(x, t).powi(2)])?;
    let (un, fnorm) = (n[0].sqrt(), n[1].sqrt());
    if fnorm == 0.0 {
        return Err(Error::UndefinedRatio(format!(
            "‖f‖ = 0 (‖u_h‖ = {un:e}), the ratio is undefined"
        )));
    }
    Ok(un / (stability_constant(final_time) * fnorm))
}
