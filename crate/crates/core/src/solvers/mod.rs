//! Transient integration, spin-up to a periodic annual cycle and
//! stationary solves.

mod anderson;
pub mod stationary;

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::forcing::Forcing;
use crate::grid::{self, Grid, GridError, TracerState};
use crate::kernels::{ColumnCoefficients, IronVariant, Rates, UptakeForm};
use crate::par::{self, Execution};
use crate::params::{fmt_f64, ParameterSet};
use crate::transport::{ImplicitTransport, TransportError, TransportOperator};

pub use stationary::{solve_stationary, StationaryOutcome};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("non-finite state after step {0}")]
    NonFinite(usize),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("invalid solver settings: {0}")]
    Settings(String),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum TransportMode {
    #[default]
    Explicit,
    Implicit,
}

impl TransportMode {
    pub fn name(self) -> &'static str {
        match self {
            TransportMode::Explicit => "explicit",
            TransportMode::Implicit => "implicit",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "explicit" => Some(TransportMode::Explicit),
            "implicit" => Some(TransportMode::Implicit),
            _ => None,
        }
    }
}

/// Fixed-point acceleration for the annual map.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Acceleration {
    #[default]
    None,
    /// Anderson mixing over the last `depth` cycles.
    Anderson { depth: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverSettings {
    /// Days.
    pub dt: f64,
    /// Days.
    pub period: f64,
    pub transport_mode: TransportMode,
    /// Clip negative concentrations after each step.
    pub clip: bool,
    /// Spin-up tolerance on the periodic residual.
    pub tol: f64,
    pub max_cycles: usize,
    /// Stationary tolerance on the pseudo-time increment.
    pub stationary_tol: f64,
    pub max_iters: usize,
    pub acceleration: Acceleration,
    pub execution: Execution,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            dt: 0.5,
            period: 360.0,
            transport_mode: TransportMode::Explicit,
            clip: false,
            tol: 1e-6,
            max_cycles: 3000,
            stationary_tol: 1e-8,
            max_iters: 500,
            acceleration: Acceleration::None,
            execution: Execution::default(),
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<(), SolverError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(SolverError::Settings("dt must be positive".into()));
        }
        if !(self.period > 0.0 && self.period.is_finite()) {
            return Err(SolverError::Settings("period must be positive".into()));
        }
        if !(self.tol > 0.0) || !(self.stationary_tol > 0.0) {
            return Err(SolverError::Settings("tolerances must be positive".into()));
        }
        if let Acceleration::Anderson { depth } = self.acceleration {
            if depth == 0 {
                return Err(SolverError::Settings("anderson depth must be positive".into()));
            }
        }
        Ok(())
    }

    /// Number of steps per period and the matching step length `≤ dt`.
    pub fn steps_per_period(&self) -> (usize, f64) {
        let n = ((self.period / self.dt) - 1e-9).ceil().max(1.0) as usize;
        (n, self.period / n as f64)
    }
}

/// Everything a run needs besides the solver settings.
#[derive(Clone, Debug)]
pub struct Model {
    pub grid: Grid,
    pub transport: TransportOperator,
    pub forcing: Forcing,
    pub params: ParameterSet,
    pub variant: IronVariant,
    pub uptake: UptakeForm,
    /// Keep `y3` fixed at its initial field.
    pub hold_iron: bool,
}

impl Model {
    pub fn new(
        grid: Grid,
        transport: TransportOperator,
        forcing: Forcing,
        params: ParameterSet,
    ) -> Result<Self, SolverError> {
        if transport.n_cells() != grid.n_cells() {
            return Err(TransportError::ShapeMismatch {
                expected: grid.n_cells(),
                got: transport.n_cells(),
            }
            .into());
        }
        if forcing.latitudes.len() != grid.columns().len() {
            return Err(SolverError::Settings(
                "forcing does not match the grid's column count".into(),
            ));
        }
        Ok(Self {
            grid,
            transport,
            forcing,
            params,
            variant: IronVariant::default(),
            uptake: UptakeForm::default(),
            hold_iron: false,
        })
    }

    /// Annual-mean insolation and time-mean transport.
    pub fn frozen(&self) -> Self {
        Self {
            transport: self.transport.time_mean(),
            forcing: self.forcing.frozen(),
            ..self.clone()
        }
    }

    pub fn with_params(&self, params: ParameterSet) -> Self {
        Self {
            params,
            ..self.clone()
        }
    }

    pub(crate) fn column_coefficients(&self) -> Vec<ColumnCoefficients> {
        let src = self.forcing.iron_source_field(&self.grid, &self.params);
        let cells = self.grid.cells();
        self.grid
            .columns()
            .iter()
            .map(|c| ColumnCoefficients::new(c, &cells[c.cells()], &self.params, &src[c.cells()]))
            .collect()
    }

    pub(crate) fn rates(&self) -> Rates {
        Rates::new(&self.params, self.variant, self.uptake)
    }

    pub(crate) fn column_bounds(&self) -> Vec<usize> {
        let mut b: Vec<usize> = self.grid.columns().iter().map(|c| c.first_cell).collect();
        b.push(self.grid.n_cells());
        b
    }
}

/// Operator-split time stepper: transport over `dt`, then reactions over
/// `dt` evaluated on the transported state.
pub struct Stepper<'m> {
    model: &'m Model,
    dt: f64,
    exec: Execution,
    clip: bool,
    rates: Rates,
    coeffs: Vec<ColumnCoefficients>,
    bounds: Vec<usize>,
    implicit: Option<ImplicitTransport>,
    scratch: Vec<f64>,
    insolation: Vec<f64>,
    r: [Vec<f64>; 3],
    steps: usize,
}

impl<'m> Stepper<'m> {
    pub fn new(
        model: &'m Model,
        dt: f64,
        mode: TransportMode,
        clip: bool,
        exec: Execution,
    ) -> Result<Self, SolverError> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(SolverError::Settings("dt must be positive".into()));
        }
        let implicit = match mode {
            TransportMode::Explicit => {
                model.transport.check_explicit_dt(dt)?;
                None
            }
            TransportMode::Implicit => Some(ImplicitTransport::new(&model.transport, dt)?),
        };
        let n = model.grid.n_cells();
        Ok(Self {
            model,
            dt,
            exec,
            clip,
            rates: model.rates(),
            coeffs: model.column_coefficients(),
            bounds: model.column_bounds(),
            implicit,
            scratch: vec![0.0; n],
            insolation: vec![0.0; model.grid.columns().len()],
            r: [vec![0.0; n], vec![0.0; n], vec![0.0; n]],
            steps: 0,
        })
    }

    pub fn from_settings(model: &'m Model, s: &SolverSettings) -> Result<Self, SolverError> {
        s.validate()?;
        let (_, h) = s.steps_per_period();
        Self::new(model, h, s.transport_mode, s.clip, s.execution)
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps_taken(&self) -> usize {
        self.steps
    }

    /// Advance `s` from `s.time` by `dt`.
    pub fn step(&mut self, s: &mut TracerState) -> Result<(), SolverError> {
        let t = s.time;
        self.advance(s, t)?;
        s.time = t + self.dt;
        Ok(())
    }

    fn advance(&mut self, s: &mut TracerState, t: f64) -> Result<(), SolverError> {
        let m = self.model;
        let hold = m.hold_iron;
        let b = m.transport.blend(t);
        {
            let mut fields: Vec<&mut [f64]> = vec![&mut s.y1, &mut s.y2];
            if !hold {
                fields.push(&mut s.y3);
            }
            match &self.implicit {
                None => m
                    .transport
                    .explicit_step(&mut fields, b, self.dt, &mut self.scratch, self.exec),
                Some(imp) => {
                    for f in fields {
                        imp.solve_in_place(f, b);
                    }
                }
            }
        }
        m.forcing.insolation_into(t, &mut self.insolation);
        self.react(s);
        if self.clip {
            clip_state(s, m.grid.volumes());
        }
        self.steps += 1;
        if !s.is_finite() {
            return Err(SolverError::NonFinite(self.steps));
        }
        Ok(())
    }

    fn react(&mut self, s: &mut TracerState) {
        let Self {
            model,
            dt,
            exec,
            rates,
            coeffs,
            bounds,
            insolation,
            r,
            ..
        } = self;
        let dt = *dt;
        let hold = model.hold_iron;
        let cells = model.grid.cells();
        let [r1, r2, r3] = r;
        let mut y1 = par::split_segments(&mut s.y1, bounds).into_iter();
        let mut y2 = par::split_segments(&mut s.y2, bounds).into_iter();
        let mut y3 = par::split_segments(&mut s.y3, bounds).into_iter();
        let mut r1 = par::split_segments(r1, bounds).into_iter();
        let mut r2 = par::split_segments(r2, bounds).into_iter();
        let mut r3 = par::split_segments(r3, bounds).into_iter();
        let work: Vec<_> = (0..coeffs.len())
            .map(|c| {
                (
                    c,
                    [y1.next().unwrap(), y2.next().unwrap(), y3.next().unwrap()],
                    [r1.next().unwrap(), r2.next().unwrap(), r3.next().unwrap()],
                )
            })
            .collect();
        let rates = &*rates;
        let coeffs = &*coeffs;
        let bounds = &*bounds;
        let insolation = &*insolation;
        par::for_each(*exec, work, |(c, [y1, y2, y3], [r1, r2, r3])| {
            let col_cells = &cells[bounds[c]..bounds[c + 1]];
            rates.column(&coeffs[c], col_cells, y1, y2, y3, insolation[c], r1, r2, r3);
            for k in 0..y1.len() {
                y1[k] += dt * r1[k];
                y2[k] += dt * r2[k];
                if !hold {
                    y3[k] += dt * r3[k];
                }
            }
        });
    }
}

/// Zero negative concentrations; the phosphorus added by clipping is taken
/// back from `y1` proportionally so the total is unchanged.
fn clip_state(s: &mut TracerState, vol: &[f64]) {
    let mut added = 0.0;
    for y in [&mut s.y1, &mut s.y2] {
        for (x, v) in y.iter_mut().zip(vol) {
            if *x < 0.0 {
                added -= *x * v;
                *x = 0.0;
            }
        }
    }
    if added > 0.0 {
        let m1 = grid::weighted_sum(&s.y1, vol);
        if m1 > 0.0 {
            let f = ((m1 - added) / m1).max(0.0);
            s.y1.iter_mut().for_each(|x| *x *= f);
        }
    }
    s.y3.iter_mut().for_each(|x| *x = x.max(0.0));
}

/// One row of the diagnostics table.
#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    /// Step, cycle or iteration number.
    pub index: usize,
    pub time: f64,
    pub mass_p: f64,
    pub mass_fe: f64,
    /// `None` for transient steps.
    pub residual: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RunKind {
    Transient,
    Spinup,
    Stationary,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunDiagnostics {
    pub kind: RunKind,
    pub records: Vec<Record>,
    pub step_count: usize,
    pub wall_time: Duration,
    pub converged: bool,
    /// `max |mass(t) - mass(0)| / mass(0)` over every step taken (absolute
    /// when the initial mass is zero).
    pub max_mass_drift: f64,
    pub notes: Vec<String>,
}

impl RunDiagnostics {
    fn new(kind: RunKind) -> Self {
        Self {
            kind,
            records: Vec::new(),
            step_count: 0,
            wall_time: Duration::ZERO,
            converged: false,
            max_mass_drift: 0.0,
            notes: Vec::new(),
        }
    }

    pub fn residuals(&self) -> Vec<f64> {
        self.records.iter().filter_map(|r| r.residual).collect()
    }

    pub fn final_residual(&self) -> Option<f64> {
        self.records.last().and_then(|r| r.residual)
    }

    /// Whether the residual history is non-increasing from entry `from` on.
    pub fn tail_non_increasing(&self, from: usize) -> bool {
        let r = self.residuals();
        r.iter().skip(from).zip(r.iter().skip(from + 1)).all(|(a, b)| b <= a)
    }

    /// `cycle_or_step,time,mass_P,mass_Fe,residual`; wall time is left out
    /// so that reruns compare equal.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("cycle_or_step,time,mass_P,mass_Fe,residual\n");
        for r in &self.records {
            let res = r.residual.map(fmt_f64).unwrap_or_default();
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                r.index,
                fmt_f64(r.time),
                fmt_f64(r.mass_p),
                fmt_f64(r.mass_fe),
                res
            );
        }
        s
    }
}

fn masses(s: &TracerState, vol: &[f64]) -> (f64, f64) {
    (
        grid::phosphorus_mass(&s.y1, &s.y2, vol),
        grid::weighted_sum(&s.y3, vol),
    )
}

fn drift(mass: f64, reference: f64) -> f64 {
    let d = (mass - reference).abs();
    if reference != 0.0 {
        d / reference.abs()
    } else {
        d
    }
}

/// Volume-weighted RMS difference over all three tracers,
/// `sqrt(Σ V_i |a_i - b_i|² / |Ω|)`.
pub fn state_distance(a: &TracerState, b: &TracerState, vol: &[f64]) -> f64 {
    let total: f64 = vol.iter().sum();
    let mut acc = 0.0;
    for (fa, fb) in a.fields().into_iter().zip(b.fields()) {
        for ((x, y), v) in fa.iter().zip(fb).zip(vol) {
            acc += v * (x - y) * (x - y);
        }
    }
    (acc / total).sqrt()
}

/// Volume-weighted RMS norm over all three tracers.
pub fn state_norm(a: &TracerState, vol: &[f64]) -> f64 {
    state_distance(a, &TracerState::zeros(a.n_cells()), vol)
}

/// Integrate from `y0` to `t_end` (relative to `y0.time`), recording the
/// masses at every step. The step is shortened uniformly so that the run
/// ends exactly at `t_end`.
pub fn run_transient(
    model: &Model,
    settings: &SolverSettings,
    y0: &TracerState,
    t_end: f64,
) -> Result<(TracerState, RunDiagnostics), SolverError> {
    settings.validate()?;
    model.grid.check_shape(y0)?;
    if !(t_end >= 0.0) {
        return Err(SolverError::Settings("end time must be nonnegative".into()));
    }
    let start = Instant::now();
    let mut diag = RunDiagnostics::new(RunKind::Transient);
    let vol = model.grid.volumes();
    let mut s = y0.clone();
    let (m0, fe0) = masses(&s, vol);
    diag.records.push(Record {
        index: 0,
        time: s.time,
        mass_p: m0,
        mass_fe: fe0,
        residual: None,
    });
    let n = if t_end == 0.0 {
        0
    } else {
        ((t_end / settings.dt) - 1e-9).ceil().max(1.0) as usize
    };
    if n > 0 {
        let h = t_end / n as f64;
        let mut stepper = Stepper::new(
            model,
            h,
            settings.transport_mode,
            settings.clip,
            settings.execution,
        )?;
        let t0 = y0.time;
        for j in 0..n {
            stepper.advance(&mut s, t0 + j as f64 * h)?;
            s.time = t0 + (j + 1) as f64 * h;
            let (m, fe) = masses(&s, vol);
            diag.max_mass_drift = diag.max_mass_drift.max(drift(m, m0));
            diag.records.push(Record {
                index: j + 1,
                time: s.time,
                mass_p: m,
                mass_fe: fe,
                residual: None,
            });
        }
        diag.step_count = n;
    }
    diag.converged = true;
    diag.wall_time = start.elapsed();
    Ok((s, diag))
}

/// Monthly (or other equal-length bin) means of `y1` and `y2` over one
/// period.
#[derive(Clone, Debug, PartialEq)]
pub struct CycleMeans {
    pub y1: Vec<Vec<f64>>,
    pub y2: Vec<Vec<f64>>,
}

impl CycleMeans {
    pub fn months(&self) -> usize {
        self.y1.len()
    }
}

pub const MONTHS: usize = 12;

/// Integrate one period starting at time 0 of the cycle. Returns the
/// largest phosphorus-mass drift seen relative to `reference`.
fn integrate_period(
    stepper: &mut Stepper<'_>,
    s: &mut TracerState,
    steps: usize,
    reference: f64,
    mut means: Option<&mut CycleMeans>,
) -> Result<f64, SolverError> {
    let h = stepper.dt();
    let vol = stepper.model.grid.volumes();
    let mut counts = [0usize; MONTHS];
    if let Some(m) = means.as_deref_mut() {
        for v in m.y1.iter_mut().chain(m.y2.iter_mut()) {
            v.fill(0.0);
        }
    }
    let mut worst: f64 = 0.0;
    for j in 0..steps {
        stepper.advance(s, j as f64 * h)?;
        worst = worst.max(drift(grid::phosphorus_mass(&s.y1, &s.y2, vol), reference));
        if let Some(m) = means.as_deref_mut() {
            let bin = j * MONTHS / steps;
            counts[bin] += 1;
            for (a, x) in m.y1[bin].iter_mut().zip(&s.y1) {
                *a += x;
            }
            for (a, x) in m.y2[bin].iter_mut().zip(&s.y2) {
                *a += x;
            }
        }
    }
    if let Some(m) = means {
        for (bin, &c) in counts.iter().enumerate() {
            let c = c.max(1) as f64;
            m.y1[bin].iter_mut().for_each(|x| *x /= c);
            m.y2[bin].iter_mut().for_each(|x| *x /= c);
        }
    }
    s.time = 0.0;
    Ok(worst)
}

#[derive(Clone, Debug)]
pub struct SpinupOutcome {
    /// Start state of the last cycle (best iterate if not converged).
    pub state: TracerState,
    pub diagnostics: RunDiagnostics,
    /// Means over the cycle that starts at `state`, when requested.
    pub means: Option<CycleMeans>,
    pub converged: bool,
}

/// Spin-up from the uniform state of total phosphorus mass `mass`.
pub fn spinup_periodic(
    model: &Model,
    settings: &SolverSettings,
    mass: f64,
) -> Result<SpinupOutcome, SolverError> {
    let y0 = grid::uniform_state_with_mass(mass, &model.grid)?;
    spinup_from(model, settings, &y0, false)
}

/// Repeat whole periods from `y0` until the periodic residual drops to
/// `settings.tol` or `settings.max_cycles` is reached.
pub fn spinup_from(
    model: &Model,
    settings: &SolverSettings,
    y0: &TracerState,
    want_means: bool,
) -> Result<SpinupOutcome, SolverError> {
    settings.validate()?;
    model.grid.check_shape(y0)?;
    let start = Instant::now();
    let (steps, _) = settings.steps_per_period();
    let mut stepper = Stepper::from_settings(model, settings)?;
    let vol = model.grid.volumes();
    let n = model.grid.n_cells();
    let mut diag = RunDiagnostics::new(RunKind::Spinup);
    let (c_mass, _) = masses(y0, vol);
    let mut x = y0.clone();
    x.time = 0.0;
    let mut means = want_means.then(|| CycleMeans {
        y1: vec![vec![0.0; n]; MONTHS],
        y2: vec![vec![0.0; n]; MONTHS],
    });
    let mut accel = match settings.acceleration {
        Acceleration::Anderson { depth } => Some(anderson::Anderson::new(depth, vol)),
        Acceleration::None => None,
    };
    let mut best: Option<(f64, TracerState, Option<CycleMeans>)> = None;
    let mut converged = false;
    let mut last_residual = f64::INFINITY;
    for cycle in 1..=settings.max_cycles {
        let mut gx = x.clone();
        let worst = integrate_period(&mut stepper, &mut gx, steps, c_mass, means.as_mut())?;
        diag.max_mass_drift = diag.max_mass_drift.max(worst);
        let residual = state_distance(&gx, &x, vol);
        let (m, fe) = masses(&gx, vol);
        diag.records.push(Record {
            index: cycle,
            time: cycle as f64 * settings.period,
            mass_p: m,
            mass_fe: fe,
            residual: Some(residual),
        });
        if best.as_ref().is_none_or(|b| residual < b.0) {
            // the cycle starting at x has this residual
            best = Some((residual, x.clone(), means.clone()));
        }
        if residual <= settings.tol {
            converged = true;
            break;
        }
        x = match accel.as_mut() {
            Some(a) => {
                if residual > last_residual {
                    a.reset();
                }
                a.next(&x, &gx)
            }
            None => gx,
        };
        last_residual = residual;
    }
    let (state, means) = if converged {
        (x, means)
    } else {
        diag.notes.push(format!(
            "no convergence within {} cycles; returning best iterate",
            settings.max_cycles
        ));
        match best {
            Some((_, s, m)) => (s, m),
            None => (x, means),
        }
    };
    diag.step_count = stepper.steps_taken();
    diag.converged = converged;
    diag.wall_time = start.elapsed();
    Ok(SpinupOutcome {
        state,
        diagnostics: diag,
        means,
        converged,
    })
}
