//! Stationary states under annual-mean forcing and time-mean transport.
//!
//! The target is the fixed point of the time stepper itself, so that a
//! stationary state is reproduced by the stepper up to the solve
//! tolerance. Writing `u` for the transported state, a fixed point
//! `y = S(y)` satisfies `A·u + M·R(u) = 0` with `y = u + dt·R(u)`, where
//! `M = I + dt·A` for explicit transport and `M = I` for implicit
//! transport. That system is driven to rest by linearly implicit
//! pseudo-time stepping whose step grows as the increments shrink.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use super::{
    masses, state_distance, Model, Record, RunDiagnostics, RunKind, SolverError, SolverSettings,
    Stepper, TransportMode,
};
use crate::grid::{self, Cell, TracerState};
use crate::kernels::{ColumnCoefficients, Rates};

const DTAU_START: f64 = 10.0;
const DTAU_MIN: f64 = 1e-2;
const DTAU_MAX: f64 = 1e7;
/// Pseudo-time step above which an increment counts as a converged one.
const DTAU_CONVERGED: f64 = 1e6;

#[derive(Clone, Debug)]
pub struct StationaryOutcome {
    pub state: TracerState,
    pub diagnostics: RunDiagnostics,
    pub converged: bool,
    /// `‖S(y) - y‖ / dt` for the returned state `y`.
    pub step_defect: f64,
}

/// Stationary state of total phosphorus mass `mass`, starting from the
/// uniform state. The model is frozen first.
pub fn solve_stationary(
    model: &Model,
    settings: &SolverSettings,
    mass: f64,
) -> Result<StationaryOutcome, SolverError> {
    let frozen = model.frozen();
    let y0 = grid::uniform_state_with_mass(mass, &frozen.grid)?;
    solve_stationary_from(&frozen, settings, &y0)
}

/// Stationary solve on `model` as given (no freezing) starting from `y0`.
pub fn solve_stationary_from(
    model: &Model,
    settings: &SolverSettings,
    y0: &TracerState,
) -> Result<StationaryOutcome, SolverError> {
    settings.validate()?;
    model.grid.check_shape(y0)?;
    if model.transport.n_snapshots() != 1 || !model.forcing.frozen {
        return Err(SolverError::Settings(
            "stationary solves need frozen forcing and a single transport snapshot".into(),
        ));
    }
    let start = Instant::now();
    let (_, dt) = settings.steps_per_period();
    if settings.transport_mode == TransportMode::Explicit {
        model.transport.check_explicit_dt(dt)?;
    }
    let n = model.grid.n_cells();
    let vol = model.grid.volumes();
    let total_vol: f64 = vol.iter().sum();
    let cells = model.grid.cells();
    let a = model.transport.to_dense(0);
    let identity = DMatrix::<f64>::identity(n, n);
    let m = match settings.transport_mode {
        TransportMode::Explicit => &identity + &a * dt,
        TransportMode::Implicit => identity,
    };
    let rates = model.rates();
    let coeffs = model.column_coefficients();
    let bounds = model.column_bounds();
    let insolation: Vec<f64> = (0..model.grid.columns().len())
        .map(|c| model.forcing.annual_mean_insolation(c))
        .collect();
    let p = &model.params;
    let hold = model.hold_iron;

    let mut u = y0.clone();
    u.time = 0.0;
    let (target, _) = masses(&u, vol);
    let mut diag = RunDiagnostics::new(RunKind::Stationary);
    let mut parts = Parts::new(n);
    let mut dtau = DTAU_START;
    let mut prev_norm = f64::INFINITY;
    let mut converged = false;
    let apply = |mat: &DMatrix<f64>, x: &[f64]| -> Vec<f64> {
        (mat * DVector::from_column_slice(x)).as_slice().to_vec()
    };

    for iter in 1..=settings.max_iters {
        parts.evaluate(&rates, &coeffs, &bounds, cells, &insolation, &u);
        // F1 = A·u1 + M(λu2 - G + E), F2 = A·u2 + M(νG - λu2)
        let v1: Vec<f64> = (0..n)
            .map(|i| p.lambda * u.y2[i] - parts.g[i] + parts.e[i])
            .collect();
        let v2: Vec<f64> = (0..n).map(|i| p.nu * parts.g[i] - p.lambda * u.y2[i]).collect();
        let (a1, m1) = (apply(&a, &u.y1), apply(&m, &v1));
        let (a2, m2) = (apply(&a, &u.y2), apply(&m, &v2));
        let f1: Vec<f64> = (0..n).map(|i| a1[i] + m1[i]).collect();
        let f2: Vec<f64> = (0..n).map(|i| a2[i] + m2[i]).collect();

        // (I/dτ - J)·δ = F for the coupled phosphorus block
        let inv = 1.0 / dtau;
        let mut jac = DMatrix::<f64>::zeros(2 * n, 2 * n);
        for j in 0..n {
            let gj = parts.dg[j];
            for i in 0..n {
                let (aij, mij) = (a[(i, j)], m[(i, j)]);
                jac[(i, j)] = -aij + mij * gj;
                jac[(i, n + j)] = -p.lambda * mij;
                jac[(n + i, j)] = -p.nu * mij * gj;
                jac[(n + i, n + j)] = -aij + p.lambda * mij;
            }
            jac[(j, j)] += inv;
            jac[(n + j, n + j)] += inv;
        }
        // export responds to uptake in the same column
        for (c, ck) in coeffs.iter().enumerate() {
            let first = bounds[c];
            for k in 0..ck.n_euphotic {
                let col = first + k;
                let scale = (1.0 - p.nu) * cells[col].thickness() * parts.dg[col];
                if scale == 0.0 {
                    continue;
                }
                for (q, w) in ck.export_weights.iter().enumerate() {
                    let row = first + ck.export_start + q;
                    for i in 0..n {
                        jac[(i, col)] -= m[(i, row)] * w * scale;
                    }
                }
            }
        }
        let rhs = DVector::from_iterator(2 * n, f1.iter().chain(&f2).copied());
        let delta = jac
            .lu()
            .solve(&rhs)
            .ok_or_else(|| SolverError::Settings("singular pseudo-time system".into()))?;
        let mut next = u.clone();
        for i in 0..n {
            next.y1[i] += delta[i];
            next.y2[i] += delta[n + i];
        }
        let shift = (target - grid::phosphorus_mass(&next.y1, &next.y2, vol)) / total_vol;
        next.y1.iter_mut().for_each(|x| *x += shift);

        let mut norm_sq = weighted_sq(&f1, vol) + weighted_sq(&f2, vol);
        if !hold {
            parts.evaluate(&rates, &coeffs, &bounds, cells, &insolation, &next);
            let mut d = vec![0.0; n];
            let mut v3 = vec![0.0; n];
            for (c, ck) in coeffs.iter().enumerate() {
                iron_terms(&rates, ck, bounds[c], &next, &parts.g, &mut d, &mut v3);
            }
            let (a3, m3) = (apply(&a, &next.y3), apply(&m, &v3));
            let f3: Vec<f64> = (0..n).map(|i| a3[i] + m3[i]).collect();
            norm_sq += weighted_sq(&f3, vol);
            let mut j3 = DMatrix::<f64>::zeros(n, n);
            for j in 0..n {
                for i in 0..n {
                    j3[(i, j)] = -a[(i, j)] + m[(i, j)] * d[j];
                }
                j3[(j, j)] += inv;
            }
            let d3 = j3
                .lu()
                .solve(&DVector::from_column_slice(&f3))
                .ok_or_else(|| SolverError::Settings("singular pseudo-time system".into()))?;
            for i in 0..n {
                next.y3[i] += d3[i];
            }
        }
        let norm = (norm_sq / total_vol).sqrt();
        let incr = state_distance(&next, &u, vol);
        if !incr.is_finite() {
            return Err(SolverError::NonFinite(iter));
        }
        u = next;
        let (mp, mfe) = masses(&u, vol);
        diag.records.push(Record {
            index: iter,
            time: dtau,
            mass_p: mp,
            mass_fe: mfe,
            residual: Some(incr),
        });
        if incr <= settings.stationary_tol && (dtau >= DTAU_CONVERGED || incr == 0.0) {
            converged = true;
            break;
        }
        // switched evolution relaxation on the tendency norm
        if prev_norm.is_finite() && norm > 0.0 {
            dtau = (dtau * (prev_norm / norm).clamp(0.25, 10.0)).clamp(DTAU_MIN, DTAU_MAX);
        }
        prev_norm = norm;
    }

    // back from the transported state to the step boundary
    let mut y = u.clone();
    {
        let mut r1 = vec![0.0; n];
        let mut r2 = vec![0.0; n];
        let mut r3 = vec![0.0; n];
        for (c, ck) in coeffs.iter().enumerate() {
            let r = bounds[c]..bounds[c + 1];
            rates.column(
                ck,
                &cells[r.clone()],
                &u.y1[r.clone()],
                &u.y2[r.clone()],
                &u.y3[r.clone()],
                insolation[c],
                &mut r1[r.clone()],
                &mut r2[r.clone()],
                &mut r3[r],
            );
        }
        for i in 0..n {
            y.y1[i] += dt * r1[i];
            y.y2[i] += dt * r2[i];
            if !hold {
                y.y3[i] += dt * r3[i];
            }
        }
    }
    let mut stepper = Stepper::new(
        model,
        dt,
        settings.transport_mode,
        false,
        settings.execution,
    )?;
    let mut sy = y.clone();
    stepper.step(&mut sy)?;
    sy.time = y.time;
    let step_defect = state_distance(&sy, &y, vol) / dt;
    diag.notes.push(format!("step defect {step_defect:e} per day"));
    if !converged {
        diag.notes.push(format!(
            "no convergence within {} iterations",
            settings.max_iters
        ));
    }
    diag.step_count = diag.records.len();
    diag.converged = converged;
    diag.max_mass_drift = diag
        .records
        .iter()
        .map(|r| super::drift(r.mass_p, target))
        .fold(0.0, f64::max);
    diag.wall_time = start.elapsed();
    Ok(StationaryOutcome {
        state: y,
        diagnostics: diag,
        converged,
        step_defect,
    })
}

fn weighted_sq(f: &[f64], vol: &[f64]) -> f64 {
    f.iter().zip(vol).map(|(x, v)| v * x * x).sum()
}

/// Uptake, its `y1` slope and the export source per cell.
struct Parts {
    g: Vec<f64>,
    dg: Vec<f64>,
    e: Vec<f64>,
}

impl Parts {
    fn new(n: usize) -> Self {
        Self {
            g: vec![0.0; n],
            dg: vec![0.0; n],
            e: vec![0.0; n],
        }
    }

    fn evaluate(
        &mut self,
        rates: &Rates,
        coeffs: &[ColumnCoefficients],
        bounds: &[usize],
        cells: &[Cell],
        insolation: &[f64],
        u: &TracerState,
    ) {
        for (c, ck) in coeffs.iter().enumerate() {
            let r = bounds[c]..bounds[c + 1];
            let total = rates.uptake_with_slope(
                ck,
                &cells[r.clone()],
                &u.y1[r.clone()],
                &u.y3[r.clone()],
                insolation[c],
                &mut self.g[r.clone()],
                &mut self.dg[r.clone()],
            );
            rates.export_into(ck, total, &mut self.e[r]);
        }
    }
}

/// Iron terms of one column: `d` holds the scavenging slope and `v` the
/// reaction part `R_Fe(λ·y2 - G) - J(y3) + S`.
fn iron_terms(
    rates: &Rates,
    ck: &ColumnCoefficients,
    first: usize,
    u: &TracerState,
    g: &[f64],
    d: &mut [f64],
    v: &mut [f64],
) {
    for k in 0..ck.scavenging.len() {
        let i = first + k;
        let y = u.y3[i];
        let h = 1e-7 * y.abs().max(1e-3);
        let slope = (rates.free_iron(y + h) - rates.free_iron(y - h)) / (2.0 * h);
        d[i] = ck.scavenging[k] * slope.max(0.0);
        v[i] = rates.r_fe * (rates.lambda * u.y2[i] - g[i]) - ck.scavenging[k] * rates.free_iron(y)
            + ck.iron_source[k];
    }
}
