//! Experiment runners producing result tables.

use std::fmt;
use std::sync::Arc;

use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::analysis::{
    convergence_rates, energy_trace, largest_modes, phase_errors, sample_times, self_errors, space_time_errors,
    stability_bound_check, ErrorReport,
};
use crate::assembly::Method;
use crate::driver::{solve, MeshSpec, SolveReport};
use crate::error::{Error, Result};
use crate::exact::{EnergyStanding, Profile, TravelingPeriodic};
use crate::geometry::Shape;
use crate::problem::{self, TestCase, WaveProblem};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    Convergence,
    CflSweep,
    DeltaSweep,
    Energy,
    Dispersion,
    Scattering,
    DiscVelocity,
    StabilityBound,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 8] = [
        ExperimentKind::Convergence,
        ExperimentKind::CflSweep,
        ExperimentKind::DeltaSweep,
        ExperimentKind::Energy,
        ExperimentKind::Dispersion,
        ExperimentKind::Scattering,
        ExperimentKind::DiscVelocity,
        ExperimentKind::StabilityBound,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Convergence => "convergence",
            ExperimentKind::CflSweep => "cfl-sweep",
            ExperimentKind::DeltaSweep => "delta-sweep",
            ExperimentKind::Energy => "energy",
            ExperimentKind::Dispersion => "dispersion",
            ExperimentKind::Scattering => "scattering",
            ExperimentKind::DiscVelocity => "disc-velocity",
            ExperimentKind::StabilityBound => "stability-bound",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProblemKind {
    /// `sin(πx) sin²(5πt/4)`.
    SmoothStanding,
    StandingWave { k: f64 },
    EnergyStanding,
    SmoothFront,
    JumpVelocity,
    LinearInTime { dim: usize },
    Tent,
    Bump,
    Scattering,
}

impl ProblemKind {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "smooth-standing" => ProblemKind::SmoothStanding,
            "energy-standing" => ProblemKind::EnergyStanding,
            "smooth-front" => ProblemKind::SmoothFront,
            "jump-velocity" => ProblemKind::JumpVelocity,
            "linear-in-time" => ProblemKind::LinearInTime { dim: 1 },
            "linear-in-time-2d" => ProblemKind::LinearInTime { dim: 2 },
            "tent" => ProblemKind::Tent,
            "bump" => ProblemKind::Bump,
            "scattering" => ProblemKind::Scattering,
            _ => {
                let k = s.strip_prefix("standing-wave-")?.parse().ok()?;
                ProblemKind::StandingWave { k }
            }
        })
    }

    pub fn default_final_time(&self) -> f64 {
        match self {
            ProblemKind::SmoothStanding | ProblemKind::EnergyStanding => 10.0,
            ProblemKind::SmoothFront => 0.375,
            ProblemKind::Tent | ProblemKind::Bump => 2.0,
            ProblemKind::Scattering => 6.0,
            _ => 1.0,
        }
    }

    pub fn build(&self, final_time: f64) -> Result<TestCase> {
        match *self {
            ProblemKind::SmoothStanding => problem::smooth_standing(final_time),
            ProblemKind::StandingWave { k } => problem::standing_wave(k, final_time),
            ProblemKind::EnergyStanding => problem::energy_standing(final_time),
            ProblemKind::SmoothFront => problem::smooth_front(final_time),
            ProblemKind::JumpVelocity => {
                if final_time != 1.0 {
                    return Err(Error::InvalidParameter(
                        "the discontinuous-velocity problem is posed on T = 1".into(),
                    ));
                }
                problem::jump_velocity_pulse()
            }
            ProblemKind::LinearInTime { dim } => problem::linear_in_time(dim, final_time),
            ProblemKind::Tent => problem::periodic_profile(Profile::Tent, final_time),
            ProblemKind::Bump => problem::periodic_profile(Profile::Bump, final_time),
            ProblemKind::Scattering => problem::scattering(final_time),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodKind {
    Plain,
    IgaStab,
    FemStab,
}

impl MethodKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "plain" => Some(MethodKind::Plain),
            "iga-stab" => Some(MethodKind::IgaStab),
            "fem-stab" => Some(MethodKind::FemStab),
            _ => None,
        }
    }

    /// IGA-Stab uses `delta` or the default `10^{-p_t}`.
    pub fn method(&self, time_degree: usize, delta: Option<f64>) -> Method {
        match self {
            MethodKind::Plain => Method::Plain,
            MethodKind::FemStab => Method::FemStab,
            MethodKind::IgaStab => match delta {
                Some(delta) => Method::IgaStab { delta },
                None => Method::iga_stab_default(time_degree),
            },
        }
    }
}

/// Everything an experiment needs. Mesh sizes are given as element counts
/// per spatial direction; time meshes follow from `time_ratio = h_t / h_s`
/// or `time_step`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub kind: ExperimentKind,
    pub problem: ProblemKind,
    pub space_degree: usize,
    pub time_degree: usize,
    pub space_regularity: Option<i64>,
    pub time_regularity: Option<i64>,
    pub method: MethodKind,
    pub delta: Option<f64>,
    pub final_time: Option<f64>,
    pub space_elements: Vec<usize>,
    pub time_ratio: f64,
    /// Fixed physical time step (CFL sweep).
    pub time_step: Option<f64>,
    /// `h_t / h_s` values of the CFL sweep.
    pub ratios: Vec<f64>,
    pub deltas: Vec<f64>,
    pub modes: Vec<i64>,
    pub samples: usize,
    /// Elements per direction of the scattering reference solution.
    pub reference_elements: Option<usize>,
    /// Extra `C^0` breakpoints in the first spatial direction.
    pub c0_breakpoints: Vec<f64>,
    pub seed: u64,
    pub output: String,
}

impl ExperimentConfig {
    pub fn new(name: &str, kind: ExperimentKind, problem: ProblemKind, p: usize) -> Self {
        ExperimentConfig {
            name: name.to_string(),
            kind,
            problem,
            space_degree: p,
            time_degree: p,
            space_regularity: None,
            time_regularity: None,
            method: MethodKind::IgaStab,
            delta: None,
            final_time: None,
            space_elements: Vec::new(),
            time_ratio: 1.0,
            time_step: None,
            ratios: Vec::new(),
            deltas: Vec::new(),
            modes: Vec::new(),
            samples: 201,
            reference_elements: None,
            c0_breakpoints: Vec::new(),
            seed: 0,
            output: format!("{name}.csv"),
        }
    }

    pub fn final_time(&self) -> f64 {
        self.final_time.unwrap_or_else(|| self.problem.default_final_time())
    }

    pub fn method(&self) -> Method {
        self.method.method(self.time_degree, self.delta)
    }

    pub fn validate(&self) -> Result<()> {
        for (p, q, what) in [
            (self.space_degree, self.space_regularity, "space"),
            (self.time_degree, self.time_regularity, "time"),
        ] {
            if p == 0 {
                return Err(Error::InvalidParameter(format!("{what} degree must be at least 1")));
            }
            if let Some(q) = q {
                if q < 0 || q > p as i64 - 1 {
                    return Err(Error::InvalidRegularity { degree: p, regularity: q });
                }
            }
        }
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if let Some(d) = self.delta {
            if !positive(d) {
                return Err(Error::InvalidParameter(format!("delta must be positive, got {d}")));
            }
        }
        if let Some(d) = self.deltas.iter().find(|d| !positive(**d)) {
            return Err(Error::InvalidParameter(format!("delta must be positive, got {d}")));
        }
        if !positive(self.time_ratio) {
            return Err(Error::InvalidParameter("time ratio must be positive".into()));
        }
        if self.space_elements.is_empty() || self.space_elements.contains(&0) {
            return Err(Error::InvalidSize("the mesh list must contain positive element counts".into()));
        }
        let need = |ok: bool, msg: &str| if ok { Ok(()) } else { Err(Error::InvalidParameter(msg.into())) };
        match self.kind {
            ExperimentKind::CflSweep => {
                need(self.time_step.is_some_and(positive), "cfl-sweep needs a positive time step")?;
                need(!self.ratios.is_empty() && self.ratios.iter().all(|r| positive(*r)), "cfl-sweep needs ratios")?;
            }
            ExperimentKind::DeltaSweep => need(!self.deltas.is_empty(), "delta-sweep needs deltas")?,
            ExperimentKind::Scattering => need(
                self.reference_elements.is_some_and(|r| {
                    let n0 = self.space_elements.iter().min().copied().unwrap_or(1);
                    self.space_elements.iter().all(|&n| r > n && r % n == 0 && n % n0 == 0)
                }),
                "scattering needs reference elements refining every level",
            )?,
            ExperimentKind::Dispersion | ExperimentKind::Energy => {
                need(self.samples >= 2, "at least two sample times are needed")?
            }
            ExperimentKind::StabilityBound => need(self.samples >= 1, "at least one random source is needed")?,
            _ => {}
        }
        Ok(())
    }

    fn mesh(&self, space_elements: usize, time_elements: usize, dim: usize) -> MeshSpec {
        let mut m = MeshSpec::uniform(vec![space_elements; dim], time_elements, self.space_degree)
            .with_degrees(self.space_degree, self.time_degree)
            .with_regularity(self.space_regularity, self.time_regularity);
        if !self.c0_breakpoints.is_empty() {
            m = m.with_c0_breakpoints(0, self.c0_breakpoints.clone());
        }
        m
    }
}

/// Physical element size of a uniform mesh with `n` elements per direction.
fn space_step(problem: &WaveProblem, n: usize) -> f64 {
    match problem.geometry.shape() {
        Shape::Box { lengths } => lengths.iter().cloned().fold(0.0, f64::max) / n as f64,
        Shape::HalfAnnulus { r_in, r_out } => ((r_out - r_in) / n as f64).max(std::f64::consts::PI * r_out / n as f64),
    }
}

fn time_elements(final_time: f64, step: f64) -> usize {
    ((final_time / step).round() as usize).max(1)
}

/// A table cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Float(f64),
    Int(i64),
    Text(String),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Float(x) => write!(f, "{x:.16e}"),
            Value::Int(i) => write!(f, "{i}"),
            Value::Text(s) => f.write_str(s),
        }
    }
}

impl From<f64> for Value {
    fn from(x: f64) -> Self {
        Value::Float(x)
    }
}

impl From<usize> for Value {
    fn from(x: usize) -> Self {
        Value::Int(x as i64)
    }
}

impl From<i64> for Value {
    fn from(x: i64) -> Self {
        Value::Int(x)
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::Text(s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Table {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Value>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Numeric column (text cells become NaN).
    pub fn floats(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.column(name)?;
        Some(
            self.rows
                .iter()
                .map(|r| match &r[k] {
                    Value::Float(x) => *x,
                    Value::Int(i) => *i as f64,
                    Value::Text(_) => f64::NAN,
                })
                .collect(),
        )
    }
}

/// One solve with its error report. A singular system leaves `errors`
/// empty.
#[derive(Debug, Clone)]
pub struct ErrorRow {
    pub h_s: f64,
    pub h_t: f64,
    pub n_dof: usize,
    pub method: Method,
    pub degrees: (usize, usize),
    pub errors: Option<ErrorReport>,
    pub residual: f64,
    pub status: &'static str,
}

impl ErrorRow {
    pub fn ratio(&self) -> f64 {
        self.h_t / self.h_s
    }

    /// L² error, infinite for singular systems.
    pub fn l2(&self) -> f64 {
        self.errors.as_ref().map_or(f64::INFINITY, |e| e.l2)
    }

    pub fn h1(&self) -> f64 {
        self.errors.as_ref().map_or(f64::INFINITY, |e| e.h1)
    }
}

const ERROR_COLUMNS: [&str; 15] = [
    "h_t", "h_s", "ratio", "Ndof", "L2rel", "H1rel", "L2rate", "H1rate", "L2final", "H1final", "residual", "method",
    "p", "delta", "status",
];

/// Rows of an error study as a table, with rates between consecutive rows
/// when `rates` is set.
pub fn error_table(rows: &[ErrorRow], rates: bool) -> Table {
    let mut t = Table::new(&ERROR_COLUMNS);
    for (i, r) in rows.iter().enumerate() {
        let rate = |f: fn(&ErrorRow) -> f64| -> Value {
            if !rates || i == 0 {
                return Value::Text(String::new());
            }
            let prev = &rows[i - 1];
            match convergence_rates(&[(prev.h_s, f(prev)), (r.h_s, f(r))]) {
                Ok(v) => Value::Float(v[0]),
                Err(_) => Value::Text(String::new()),
            }
        };
        let (fl2, fh1) = r
            .errors
            .as_ref()
            .map_or((f64::INFINITY, f64::INFINITY), |e| (e.final_l2, e.final_h1));
        t.push(vec![
            r.h_t.into(),
            r.h_s.into(),
            r.ratio().into(),
            r.n_dof.into(),
            r.l2().into(),
            r.h1().into(),
            rate(ErrorRow::l2),
            rate(ErrorRow::h1),
            fl2.into(),
            fh1.into(),
            r.residual.into(),
            r.method.name().into(),
            r.degrees.0.into(),
            r.method.delta().map_or(Value::Text(String::new()), Value::Float),
            r.status.into(),
        ]);
    }
    t
}

fn solve_and_measure(case: &TestCase, mesh: &MeshSpec, method: Method) -> Result<ErrorRow> {
    let exact = case
        .exact
        .as_ref()
        .ok_or_else(|| Error::InvalidParameter("this experiment needs an exact solution".into()))?;
    match solve(&case.problem, mesh, method) {
        Ok(r) => {
            let e = space_time_errors(&r.solution, exact.as_ref(), &case.problem.velocity)?;
            let status = if e.blow_up { "blow-up" } else { "ok" };
            Ok(ErrorRow {
                h_s: r.mesh_sizes.0,
                h_t: r.mesh_sizes.1,
                n_dof: r.n_dof,
                method,
                degrees: r.degrees,
                errors: Some(e),
                residual: r.relative_residual,
                status,
            })
        }
        Err(Error::SingularSystem { step, pivot, threshold }) => {
            warn!("singular system at step {step} (pivot {pivot:e} < {threshold:e}), recorded as blow-up");
            let (spatial, temporal) = mesh.knot_vectors(&case.problem.geometry)?;
            let (h_s, h_t) = crate::driver::physical_mesh_sizes(&case.problem.geometry, &spatial, &temporal);
            Ok(ErrorRow {
                h_s,
                h_t,
                n_dof: crate::driver::trial_space(&case.problem, mesh)?.n_dof(),
                method,
                degrees: (mesh.space_degree, mesh.time_degree),
                errors: None,
                residual: f64::NAN,
                status: "singular",
            })
        }
        Err(e) => Err(e),
    }
}

/// Uniform refinements with `h_t = time_ratio · h_s`.
pub fn run_convergence(cfg: &ExperimentConfig) -> Result<Vec<ErrorRow>> {
    cfg.validate()?;
    let tf = cfg.final_time();
    let case = cfg.problem.build(tf)?;
    let dim = case.problem.geometry.dim();
    cfg.space_elements
        .iter()
        .map(|&n| {
            let nt = time_elements(tf, cfg.time_ratio * space_step(&case.problem, n));
            info!("{}: {n} space and {nt} time elements", cfg.name);
            solve_and_measure(&case, &cfg.mesh(n, nt, dim), cfg.method())
        })
        .collect()
}

/// Fixed `h_t`, spatial meshes chosen from the requested `h_t / h_s`.
pub fn run_cfl_sweep(cfg: &ExperimentConfig) -> Result<Vec<ErrorRow>> {
    cfg.validate()?;
    let tf = cfg.final_time();
    let case = cfg.problem.build(tf)?;
    let dim = case.problem.geometry.dim();
    let ht = cfg.time_step.expect("validated");
    let nt = time_elements(tf, ht);
    let unit = space_step(&case.problem, 1);
    cfg.ratios
        .iter()
        .map(|&ratio| {
            let ns = ((ratio * unit / ht).round() as usize).max(1);
            info!("{}: ratio {ratio}, {ns} space and {nt} time elements", cfg.name);
            solve_and_measure(&case, &cfg.mesh(ns, nt, dim), cfg.method())
        })
        .collect()
}

/// IGA-Stab on one mesh for each `δ`.
pub fn run_delta_sweep(cfg: &ExperimentConfig) -> Result<Vec<ErrorRow>> {
    cfg.validate()?;
    let tf = cfg.final_time();
    let case = cfg.problem.build(tf)?;
    let dim = case.problem.geometry.dim();
    let n = cfg.space_elements[0];
    let nt = time_elements(tf, cfg.time_ratio * space_step(&case.problem, n));
    let mesh = cfg.mesh(n, nt, dim);
    cfg.deltas
        .iter()
        .map(|&delta| solve_and_measure(&case, &mesh, Method::IgaStab { delta }))
        .collect()
}

/// Energy trace of the energy-conserving standing wave.
pub fn run_energy(cfg: &ExperimentConfig) -> Result<(SolveReport, crate::analysis::EnergyTrace)> {
    cfg.validate()?;
    if cfg.problem != ProblemKind::EnergyStanding {
        return Err(Error::InvalidParameter("the energy study uses the energy-standing problem".into()));
    }
    let tf = cfg.final_time();
    let case = cfg.problem.build(tf)?;
    let n = cfg.space_elements[0];
    let nt = time_elements(tf, cfg.time_ratio * space_step(&case.problem, n));
    let r = solve(&case.problem, &cfg.mesh(n, nt, 1), cfg.method())?;
    let trace = energy_trace(&r.solution, &sample_times(tf, cfg.samples), EnergyStanding::ENERGY)?;
    Ok((r, trace))
}

pub fn energy_table(r: &SolveReport, trace: &crate::analysis::EnergyTrace) -> Table {
    let mut t = Table::new(&["time", "energy", "relative_error", "sign", "h_s", "h_t", "p", "method", "delta"]);
    for i in 0..trace.times.len() {
        t.push(vec![
            trace.times[i].into(),
            trace.energy[i].into(),
            trace.relative_error[i].into(),
            (trace.sign[i] as i64).into(),
            r.mesh_sizes.0.into(),
            r.mesh_sizes.1.into(),
            r.degrees.0.into(),
            r.method.name().into(),
            r.method.delta().map_or(Value::Text(String::new()), Value::Float),
        ]);
    }
    t
}

/// Phase errors of the periodic tent or bump problem.
pub fn run_dispersion(cfg: &ExperimentConfig) -> Result<(SolveReport, Vec<crate::analysis::PhaseErrorTrace>)> {
    cfg.validate()?;
    let profile = match cfg.problem {
        ProblemKind::Tent => Profile::Tent,
        ProblemKind::Bump => Profile::Bump,
        _ => return Err(Error::InvalidParameter("the dispersion study uses the tent or bump problem".into())),
    };
    let tf = cfg.final_time();
    let case = cfg.problem.build(tf)?;
    let n = cfg.space_elements[0];
    let nt = time_elements(tf, cfg.time_ratio * space_step(&case.problem, n));
    let r = solve(&case.problem, &cfg.mesh(n, nt, 1), cfg.method())?;
    let exact = TravelingPeriodic { profile };
    let modes = if cfg.modes.is_empty() {
        largest_modes(&|k| profile.fourier_coefficient(k), 4, 64)
    } else {
        cfg.modes.clone()
    };
    let traces = phase_errors(&r.solution, &modes, &sample_times(tf, cfg.samples), &|k, t| {
        exact.fourier_coefficient(k, t)
    })?;
    Ok((r, traces))
}

pub fn dispersion_table(r: &SolveReport, traces: &[crate::analysis::PhaseErrorTrace]) -> Table {
    let mut t = Table::new(&["mode", "time", "phase_error", "Ndof", "h_s", "h_t", "p", "method", "delta", "status"]);
    for tr in traces {
        let rows: Vec<(f64, f64)> = if tr.skipped {
            tr.times.iter().map(|&x| (x, f64::NAN)).collect()
        } else {
            tr.times.iter().cloned().zip(tr.errors.iter().cloned()).collect()
        };
        for (time, err) in rows {
            t.push(vec![
                tr.mode.into(),
                time.into(),
                err.into(),
                r.n_dof.into(),
                r.mesh_sizes.0.into(),
                r.mesh_sizes.1.into(),
                r.degrees.0.into(),
                r.method.name().into(),
                r.method.delta().map_or(Value::Text(String::new()), Value::Float),
                (if tr.skipped { "skipped" } else { "ok" }).into(),
            ]);
        }
    }
    t
}

/// Self-convergence against a finer reference solution.
#[derive(Debug, Clone)]
pub struct ScatteringRow {
    pub elements: usize,
    pub h_s: f64,
    pub h_t: f64,
    pub n_dof: usize,
    pub l2: f64,
    pub h1: f64,
    pub residual: f64,
}

pub fn run_scattering(cfg: &ExperimentConfig) -> Result<Vec<ScatteringRow>> {
    cfg.validate()?;
    let tf = cfg.final_time();
    let case = cfg.problem.build(tf)?;
    let dim = case.problem.geometry.dim();
    let method = cfg.method();
    let nref = cfg.reference_elements.expect("validated");
    // time meshes scale with the coarsest level so that all levels nest
    let n0 = *cfg.space_elements.iter().min().expect("validated");
    let nt0 = time_elements(tf, cfg.time_ratio * space_step(&case.problem, n0));
    let run = |n: usize| {
        let nt = nt0 * n / n0;
        info!("{}: {n} elements per direction, {nt} in time", cfg.name);
        solve(&case.problem, &cfg.mesh(n, nt, dim), method)
    };
    let reference = run(nref)?;
    // nested time meshes need the time counts to divide
    let nt_ref = reference.solution.space().temporal().knot_vector().num_elements();
    cfg.space_elements
        .iter()
        .map(|&n| {
            let r = run(n)?;
            let nt = r.solution.space().temporal().knot_vector().num_elements();
            if nt_ref % nt != 0 {
                return Err(Error::InvalidParameter(format!(
                    "time mesh with {nt} elements is not nested in the reference with {nt_ref}"
                )));
            }
            let (l2, h1) = self_errors(&r.solution, &reference.solution)?;
            Ok(ScatteringRow {
                elements: n,
                h_s: r.mesh_sizes.0,
                h_t: r.mesh_sizes.1,
                n_dof: r.n_dof,
                l2,
                h1,
                residual: r.relative_residual,
            })
        })
        .collect()
}

pub fn scattering_table(rows: &[ScatteringRow], method: Method, p: usize) -> Table {
    let mut t = Table::new(&[
        "elements", "h_t", "h_s", "Ndof", "L2self", "H1self", "L2rate", "H1rate", "residual", "method", "p", "delta",
    ]);
    for (i, r) in rows.iter().enumerate() {
        let rate = |f: fn(&ScatteringRow) -> f64| -> Value {
            if i == 0 {
                return Value::Text(String::new());
            }
            let prev = &rows[i - 1];
            convergence_rates(&[(prev.h_s, f(prev)), (r.h_s, f(r))]).map_or(Value::Text(String::new()), |v| Value::Float(v[0]))
        };
        t.push(vec![
            r.elements.into(),
            r.h_t.into(),
            r.h_s.into(),
            r.n_dof.into(),
            r.l2.into(),
            r.h1.into(),
            rate(|r| r.l2),
            rate(|r| r.h1),
            r.residual.into(),
            method.name().into(),
            p.into(),
            method.delta().map_or(Value::Text(String::new()), Value::Float),
        ]);
    }
    t
}

/// Random smooth source `Σ a_jk sin(jπx/L) sin(kπt/T) / (jk)` with
/// `a_jk` uniform in `[-1, 1]`.
pub fn random_source(seed: u64, length: f64, final_time: f64) -> impl Fn(&[f64; 2], f64) -> f64 + Send + Sync + Clone {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = 3;
    let a: Vec<f64> = (0..k * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let a = Arc::new(a);
    move |x: &[f64; 2], t: f64| {
        let pi = std::f64::consts::PI;
        let mut s = 0.0;
        for j in 0..k {
            let sx = ((j + 1) as f64 * pi * x[0] / length).sin();
            for l in 0..k {
                let st = ((l + 1) as f64 * pi * t / final_time).sin();
                s += a[j * k + l] * sx * st / ((j + 1) * (l + 1)) as f64;
            }
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct StabilityRow {
    pub seed: u64,
    pub ratio: f64,
    pub n_dof: usize,
    pub residual: f64,
}

/// `‖u_h‖ / ((4/π) T² ‖f‖)` for `samples` seeded random sources on the
/// homogeneous Dirichlet interval.
pub fn run_stability_bound(cfg: &ExperimentConfig) -> Result<Vec<StabilityRow>> {
    cfg.validate()?;
    let tf = cfg.final_time();
    let n = cfg.space_elements[0];
    let nt = time_elements(tf, cfg.time_ratio / n as f64);
    let mesh = cfg.mesh(n, nt, 1);
    (0..cfg.samples as u64)
        .map(|k| {
            let seed = cfg.seed.wrapping_add(k);
            let f = random_source(seed, 1.0, tf);
            let base = problem::smooth_standing(tf)?.problem;
            let prob = WaveProblem { source: None, ..base }.with_source(f.clone());
            let r = solve(&prob, &mesh, cfg.method())?;
            let ratio = stability_bound_check(&r.solution, &|x, t| f(x, t), tf)?;
            Ok(StabilityRow {
                seed,
                ratio,
                n_dof: r.n_dof,
                residual: r.relative_residual,
            })
        })
        .collect()
}

pub fn stability_table(rows: &[StabilityRow], method: Method, p: usize) -> Table {
    let mut t = Table::new(&["seed", "ratio", "Ndof", "residual", "method", "p", "delta"]);
    for r in rows {
        t.push(vec![
            (r.seed as i64).into(),
            r.ratio.into(),
            r.n_dof.into(),
            r.residual.into(),
            method.name().into(),
            p.into(),
            method.delta().map_or(Value::Text(String::new()), Value::Float),
        ]);
    }
    t
}

/// Run an experiment and return its result table.
pub fn run(cfg: &ExperimentConfig) -> Result<Table> {
    match cfg.kind {
        ExperimentKind::Convergence | ExperimentKind::DiscVelocity => Ok(error_table(&run_convergence(cfg)?, true)),
        ExperimentKind::CflSweep => Ok(error_table(&run_cfl_sweep(cfg)?, false)),
        ExperimentKind::DeltaSweep => Ok(error_table(&run_delta_sweep(cfg)?, false)),
        ExperimentKind::Energy => {
            let (r, tr) = run_energy(cfg)?;
            Ok(energy_table(&r, &tr))
        }
        ExperimentKind::Dispersion => {
            let (r, tr) = run_dispersion(cfg)?;
            Ok(dispersion_table(&r, &tr))
        }
        ExperimentKind::Scattering => Ok(scattering_table(&run_scattering(cfg)?, cfg.method(), cfg.space_degree)),
        ExperimentKind::StabilityBound => Ok(stability_table(&run_stability_bound(cfg)?, cfg.method(), cfg.space_degree)),
    }
}
