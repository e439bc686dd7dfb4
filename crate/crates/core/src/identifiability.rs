//! Parameter collisions of the uptake term and twin experiments.
//!
//! Two parameter sets that differ in `(alpha, K_P, K_I, K_W)` produce the
//! same uptake wherever phosphate sits on a particular profile
//! `y1*(I, x3)`. Twin experiments fit the seven N-DOP parameters (or five
//! of them) to monthly means of a synthetic periodic cycle.

use std::fmt::Write as _;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::grid::{self, H_BAR_E};
use crate::kernels::uptake_g;
use crate::optimize::{self, NelderMeadOptions};
use crate::par::{self, Execution};
use crate::params::{fmt_f64, IdentificationSubset, NdopParam, ParameterSet};
use crate::solvers::{
    spinup_from, Acceleration, CycleMeans, Model, SolverError, SolverSettings,
};
use crate::grid::TracerState;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IdentError {
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("no admissible (I, x3) sample on the collision profile")]
    NoAdmissibleSample,
    #[error("invalid collision pair: {0}")]
    InvalidPair(String),
    #[error("invalid identification settings: {0}")]
    Settings(String),
}

/// Two parameter sets with equal uptake on a phosphate profile.
#[derive(Clone, Debug, PartialEq)]
pub struct CollisionPair {
    pub u1: ParameterSet,
    pub u2: ParameterSet,
    /// `alpha1 / alpha2`.
    pub ratio: f64,
    /// `c1..c8`.
    pub c: [f64; 8],
}

impl CollisionPair {
    /// `u2` takes `alpha1/ratio`, `k_p2`, `k_i2` and `k_w2`; everything
    /// else is copied from `u1`.
    pub fn new(
        u1: ParameterSet,
        ratio: f64,
        k_p2: f64,
        k_i2: f64,
        k_w2: f64,
    ) -> Result<Self, IdentError> {
        for (name, v) in [
            ("ratio", ratio),
            ("k_p2", k_p2),
            ("k_i2", k_i2),
            ("alpha1", u1.alpha),
            ("k_p1", u1.k_p),
            ("k_i1", u1.k_i),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(IdentError::InvalidPair(format!("{name} must be positive")));
            }
        }
        if !(k_w2 >= 0.0 && k_w2.is_finite()) {
            return Err(IdentError::InvalidPair("k_w2 must be nonnegative".into()));
        }
        let mut u2 = u1.clone();
        u2.alpha = u1.alpha / ratio;
        u2.k_p = k_p2;
        u2.k_i = k_i2;
        u2.k_w = k_w2;
        let c = [
            u1.k_p - ratio * k_p2,
            u1.k_p * u1.k_i,
            ratio * k_p2 * k_i2,
            ratio - 1.0,
            u1.k_i,
            ratio * k_i2,
            u1.k_w,
            k_w2,
        ];
        Ok(Self { u1, u2, ratio, c })
    }

    /// `c1 - (c2/c5 - (c4 + 1)·c3/c6)`; zero up to round-off.
    pub fn constraint_defect(&self) -> f64 {
        let c = &self.c;
        c[0] - (c[1] / c[4] - (c[3] + 1.0) * c[2] / c[5])
    }
}

/// Phosphate concentration on which both members of `pair` have equal
/// uptake at surface irradiance `i` and depth `x3`:
/// `(c1·I + c2·e^(x3·c7) - c3·e^(x3·c8)) / (c4·I - c5·e^(x3·c7) + c6·e^(x3·c8))`.
/// `None` if the denominator vanishes or the value is not positive.
pub fn collision_profile(pair: &CollisionPair, i: f64, x3: f64) -> Option<f64> {
    let c = &pair.c;
    let e1 = (x3 * c[6]).exp();
    let e2 = (x3 * c[7]).exp();
    let den_terms = [c[3] * i, -c[4] * e1, c[5] * e2];
    let den: f64 = den_terms.iter().sum();
    let scale: f64 = den_terms.iter().map(|t| t.abs()).sum();
    if !(den.abs() > 1e-12 * scale) {
        return None;
    }
    let y = (c[0] * i + c[1] * e1 - c[2] * e2) / den;
    (y > 0.0 && y.is_finite()).then_some(y)
}

/// One row of a collision table.
#[derive(Clone, Debug, PartialEq)]
pub struct CollisionRow {
    pub x3: f64,
    pub i: f64,
    pub y1: f64,
    pub g1: f64,
    pub g2: f64,
    pub gap: f64,
}

/// Uptake of both members on the profile for every admissible sample.
pub fn collision_table(pair: &CollisionPair, samples: &[(f64, f64)], y3: f64) -> Vec<CollisionRow> {
    samples
        .iter()
        .filter_map(|&(i, x3)| {
            let y1 = collision_profile(pair, i, x3)?;
            let g1 = uptake_g(y1, y3, i, x3, &pair.u1);
            let g2 = uptake_g(y1, y3, i, x3, &pair.u2);
            Some(CollisionRow {
                x3,
                i,
                y1,
                g1,
                g2,
                gap: (g1 - g2).abs(),
            })
        })
        .collect()
}

/// Largest uptake gap over the admissible samples, with iron `y3` shared
/// by both members.
pub fn verify_collision(
    pair: &CollisionPair,
    samples: &[(f64, f64)],
    y3: f64,
) -> Result<f64, IdentError> {
    let rows = collision_table(pair, samples, y3);
    if rows.is_empty() {
        return Err(IdentError::NoAdmissibleSample);
    }
    Ok(rows.iter().map(|r| r.gap).fold(0.0, f64::max))
}

/// Up to `count` admissible samples drawn uniformly from
/// `I ∈ i_range`, `x3 ∈ [0, h̄_e)`.
pub fn admissible_samples(
    pair: &CollisionPair,
    count: usize,
    i_range: (f64, f64),
    seed: u64,
) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count * 1000 {
        if out.len() == count {
            break;
        }
        let i = rng.gen_range(i_range.0..i_range.1);
        let x3 = rng.gen_range(0.0..H_BAR_E);
        if collision_profile(pair, i, x3).is_some() {
            out.push((i, x3));
        }
    }
    out
}

/// `lambda` from an aphotic DOP tendency `r2 = -lambda·y2`.
pub fn lambda_from_aphotic(r2: f64, y2: f64) -> Option<f64> {
    (y2 != 0.0).then(|| -r2 / y2)
}

/// `nu` from a euphotic DOP tendency `r2 = -lambda·y2 + nu·G`.
pub fn nu_from_euphotic(r2: f64, y2: f64, lambda: f64, g: f64) -> Option<f64> {
    (g != 0.0).then(|| (r2 + lambda * y2) / g)
}

/// `b` from the fraction `(h/h̄_e)^(-b)` of export reaching a floor at `h`.
pub fn b_from_bottom_fraction(fraction: f64, depth: f64) -> Option<f64> {
    (fraction > 0.0 && depth > H_BAR_E).then(|| -fraction.ln() / (depth / H_BAR_E).ln())
}

/// Search interval of one parameter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bound {
    pub lo: f64,
    pub hi: f64,
    /// Search in `ln` of the parameter.
    pub log: bool,
}

impl Bound {
    pub fn default_for(p: NdopParam) -> Self {
        let (lo, hi, log) = match p {
            NdopParam::Lambda => (0.002, 0.2, true),
            NdopParam::Alpha => (0.005, 0.5, true),
            NdopParam::KP => (0.05, 5.0, true),
            NdopParam::KI => (3.0, 300.0, true),
            NdopParam::KW => (0.002, 0.2, true),
            NdopParam::B => (0.3, 1.5, false),
            NdopParam::Nu => (0.05, 1.0, false),
        };
        Self { lo, hi, log }
    }

    fn t(&self, x: f64) -> f64 {
        if self.log {
            x.ln()
        } else {
            x
        }
    }

    /// Position in `[0, 1]`.
    pub fn to_unit(&self, x: f64) -> f64 {
        (self.t(x) - self.t(self.lo)) / (self.t(self.hi) - self.t(self.lo))
    }

    pub fn from_unit(&self, z: f64) -> f64 {
        let v = self.t(self.lo) + z * (self.t(self.hi) - self.t(self.lo));
        if self.log {
            v.exp()
        } else {
            v
        }
    }
}

/// Forward model of the twin experiments: periodic cycle with iron held
/// at the initial field, reduced to monthly means.
#[derive(Clone, Debug)]
pub struct TwinProblem {
    pub model: Model,
    pub settings: SolverSettings,
    pub initial: TracerState,
}

impl TwinProblem {
    /// Forward spin-ups use Anderson mixing and stop at `settings.tol`.
    pub fn new(model: &Model, settings: &SolverSettings, mass: f64) -> Result<Self, IdentError> {
        let initial = grid::uniform_state_with_mass(mass, &model.grid).map_err(SolverError::from)?;
        let mut model = model.clone();
        model.hold_iron = true;
        let mut settings = settings.clone();
        if settings.acceleration == Acceleration::None {
            settings.acceleration = Acceleration::Anderson { depth: 10 };
        }
        // restarts run in parallel; each forward run stays sequential
        settings.execution = Execution::Sequential;
        Ok(Self {
            model,
            settings,
            initial,
        })
    }

    /// Monthly means of the periodic cycle for `p`, starting from `warm`.
    pub fn forward(
        &self,
        p: &ParameterSet,
        warm: &TracerState,
    ) -> Result<(CycleMeans, TracerState, bool), SolverError> {
        let m = self.model.with_params(p.clone());
        let mut start = warm.clone();
        start.y3.clone_from(&self.initial.y3);
        let out = spinup_from(&m, &self.settings, &start, true)?;
        let means = out.means.expect("means requested");
        Ok((means, out.state, out.converged))
    }

    /// `Σ_months Σ_cells V·((y1 - o1)² + (y2 - o2)²)`.
    pub fn misfit(&self, obs: &CycleMeans, model: &CycleMeans) -> f64 {
        let vol = self.model.grid.volumes();
        let mut acc = 0.0;
        for m in 0..obs.months() {
            for (a, b) in [(&obs.y1[m], &model.y1[m]), (&obs.y2[m], &model.y2[m])] {
                for ((x, y), v) in a.iter().zip(b.iter()).zip(vol) {
                    acc += v * (x - y) * (x - y);
                }
            }
        }
        acc
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Observations {
    pub means: CycleMeans,
    pub noise: f64,
    pub seed: u64,
    /// Whether the truth spin-up met its tolerance.
    pub converged: bool,
}

/// Monthly means of the truth cycle, plus optional Gaussian noise of
/// standard deviation `noise` drawn from `seed`.
pub fn synth_observations(
    problem: &TwinProblem,
    truth: &ParameterSet,
    noise: f64,
    seed: u64,
) -> Result<Observations, IdentError> {
    if !(noise >= 0.0) {
        return Err(IdentError::Settings("noise must be nonnegative".into()));
    }
    let (mut means, _, converged) = problem.forward(truth, &problem.initial)?;
    if noise > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dist = Normal::new(0.0, noise).map_err(|e| IdentError::Settings(e.to_string()))?;
        for field in means.y1.iter_mut().chain(means.y2.iter_mut()) {
            for v in field.iter_mut() {
                *v += dist.sample(&mut rng);
            }
        }
    }
    Ok(Observations {
        means,
        noise,
        seed,
        converged,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct IdentifySettings {
    pub starts: usize,
    /// Forward runs per restart.
    pub budget: usize,
    pub seed: u64,
    /// Per free parameter, in subset order; defaults when empty.
    pub bounds: Vec<Bound>,
    /// Simplex collapse tolerance in unit coordinates.
    pub x_tol: f64,
    /// Misfit spread counted as collapsed, relative to the volume-weighted
    /// energy of the observations.
    pub f_tol: f64,
    /// Edge of the initial simplex in unit coordinates.
    pub initial_step: f64,
    /// Estimate curvature of the misfit at the best point.
    pub curvature: bool,
    pub execution: Execution,
}

impl Default for IdentifySettings {
    fn default() -> Self {
        Self {
            starts: 20,
            budget: 500,
            seed: 1,
            bounds: Vec::new(),
            x_tol: 1e-4,
            f_tol: 1e-9,
            initial_step: 0.3,
            curvature: false,
            execution: Execution::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RestartRecord {
    pub index: usize,
    /// Natural units, subset order.
    pub start: Vec<f64>,
    pub estimate: Vec<f64>,
    pub misfit: f64,
    pub evals: usize,
    pub iterations: usize,
    pub improvements: usize,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParameterRecovery {
    pub param: NdopParam,
    pub truth: f64,
    pub estimate: f64,
    pub rel_error: f64,
}

/// Curvature eigenpair of the misfit in unit coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct CurvatureMode {
    pub eigenvalue: f64,
    pub direction: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecoveryReport {
    pub subset: IdentificationSubset,
    pub free: Vec<NdopParam>,
    pub truth: ParameterSet,
    /// From the restart with the lowest misfit.
    pub parameters: Vec<ParameterRecovery>,
    pub misfit: f64,
    pub iterations: usize,
    pub restarts: Vec<RestartRecord>,
    /// Ascending eigenvalues; the first ones mark flat directions.
    pub curvature: Vec<CurvatureMode>,
}

fn rel_error(estimate: f64, truth: f64) -> f64 {
    if truth != 0.0 {
        ((estimate - truth) / truth).abs()
    } else {
        estimate.abs()
    }
}

impl RecoveryReport {
    /// Relative errors of one restart, subset order.
    pub fn restart_errors(&self, r: &RestartRecord) -> Vec<f64> {
        self.free
            .iter()
            .zip(&r.estimate)
            .map(|(p, &e)| rel_error(e, p.get(&self.truth)))
            .collect()
    }

    /// Restarts whose estimate of every parameter in `which` lies within
    /// `tol` relative error.
    pub fn restarts_within(&self, which: &[NdopParam], tol: f64) -> usize {
        self.restarts
            .iter()
            .filter(|r| {
                let errs = self.restart_errors(r);
                self.free
                    .iter()
                    .zip(&errs)
                    .filter(|(p, _)| which.contains(p))
                    .all(|(_, &e)| e <= tol)
            })
            .count()
    }

    /// `restart,converged,misfit,evals,iterations,improvements` followed by
    /// start, estimate and relative error per free parameter.
    pub fn restarts_csv(&self) -> String {
        let mut s = String::from("restart,converged,misfit,evals,iterations,improvements");
        for p in &self.free {
            let _ = write!(s, ",start_{0},estimate_{0},rel_error_{0}", p.name());
        }
        s.push('\n');
        for r in &self.restarts {
            let _ = write!(
                s,
                "{},{},{},{},{},{}",
                r.index,
                r.converged as u8,
                fmt_f64(r.misfit),
                r.evals,
                r.iterations,
                r.improvements
            );
            for ((a, b), e) in r.start.iter().zip(&r.estimate).zip(self.restart_errors(r)) {
                let _ = write!(s, ",{},{},{}", fmt_f64(*a), fmt_f64(*b), fmt_f64(e));
            }
            s.push('\n');
        }
        s
    }

    /// `parameter,truth,estimate,rel_error` for the best restart.
    pub fn parameters_csv(&self) -> String {
        let mut s = String::from("parameter,truth,estimate,rel_error\n");
        for p in &self.parameters {
            let _ = writeln!(
                s,
                "{},{},{},{}",
                p.param.name(),
                fmt_f64(p.truth),
                fmt_f64(p.estimate),
                fmt_f64(p.rel_error)
            );
        }
        s
    }

    /// `mode,eigenvalue,` then one component column per free parameter.
    pub fn curvature_csv(&self) -> String {
        let mut s = String::from("mode,eigenvalue");
        for p in &self.free {
            let _ = write!(s, ",{}", p.name());
        }
        s.push('\n');
        for (k, m) in self.curvature.iter().enumerate() {
            let _ = write!(s, "{},{}", k, fmt_f64(m.eigenvalue));
            for v in &m.direction {
                let _ = write!(s, ",{}", fmt_f64(*v));
            }
            s.push('\n');
        }
        s
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let converged = self.restarts.iter().filter(|r| r.converged).count();
        let _ = writeln!(
            s,
            "subset {}: {} restarts, {} converged, best misfit {:.3e}",
            self.subset.label(),
            self.restarts.len(),
            converged,
            self.misfit
        );
        for p in &self.parameters {
            let within = self.restarts_within(&[p.param], 0.01);
            let _ = writeln!(
                s,
                "  {:<7} truth {:<12.6} estimate {:<12.6} rel.error {:.2e}  ({}/{} restarts within 1%)",
                p.param.name(),
                p.truth,
                p.estimate,
                p.rel_error,
                within,
                self.restarts.len()
            );
        }
        if !self.curvature.is_empty() {
            let _ = writeln!(s, "  flattest misfit direction (unit coordinates):");
            let m = &self.curvature[0];
            let _ = write!(s, "    eigenvalue {:.3e}:", m.eigenvalue);
            for (p, v) in self.free.iter().zip(&m.direction) {
                let _ = write!(s, " {}={:+.3}", p.name(), v);
            }
            s.push('\n');
        }
        s
    }
}

/// Random starting points in the unit box, one stream per restart.
pub fn random_starts(count: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    (0..count)
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ r as u64);
            (0..dim).map(|_| rng.gen_range(0.0..1.0)).collect()
        })
        .collect()
}

/// Multi-start bounded simplex fit of the free parameters of `subset`;
/// the remaining parameters come from `truth`.
pub fn identify(
    problem: &TwinProblem,
    obs: &Observations,
    truth: &ParameterSet,
    subset: &IdentificationSubset,
    settings: &IdentifySettings,
) -> Result<RecoveryReport, IdentError> {
    let free = subset.free_parameters();
    let starts = random_starts(settings.starts, free.len(), settings.seed);
    identify_from(problem, obs, truth, subset, settings, &starts)
}

/// As [`identify`], with explicit starting points in unit coordinates.
pub fn identify_from(
    problem: &TwinProblem,
    obs: &Observations,
    truth: &ParameterSet,
    subset: &IdentificationSubset,
    settings: &IdentifySettings,
    starts: &[Vec<f64>],
) -> Result<RecoveryReport, IdentError> {
    let free = subset.free_parameters();
    let bounds: Vec<Bound> = if settings.bounds.is_empty() {
        free.iter().map(|&p| Bound::default_for(p)).collect()
    } else {
        settings.bounds.clone()
    };
    if bounds.len() != free.len() {
        return Err(IdentError::Settings(format!(
            "expected {} bounds, got {}",
            free.len(),
            bounds.len()
        )));
    }
    if starts.is_empty() || settings.budget == 0 {
        return Err(IdentError::Settings("need at least one start and a positive budget".into()));
    }
    let base = subset.apply_fixed(truth);
    let to_params = |z: &[f64]| {
        let mut p = base.clone();
        for ((param, b), &zi) in free.iter().zip(&bounds).zip(z) {
            param.set(&mut p, b.from_unit(zi));
        }
        p
    };
    let objective = |z: &[f64], warm: &mut TracerState| -> f64 {
        match problem.forward(&to_params(z), warm) {
            Ok((means, state, _)) => {
                *warm = state;
                problem.misfit(&obs.means, &means)
            }
            Err(_) => f64::INFINITY,
        }
    };
    let zero = CycleMeans {
        y1: vec![vec![0.0; problem.model.grid.n_cells()]; obs.means.months()],
        y2: vec![vec![0.0; problem.model.grid.n_cells()]; obs.means.months()],
    };
    let opts = NelderMeadOptions {
        max_evals: settings.budget,
        x_tol: settings.x_tol,
        f_tol: 0.0,
        f_abs: settings.f_tol * problem.misfit(&obs.means, &zero),
        initial_step: settings.initial_step,
        ..Default::default()
    };
    let lo = vec![0.0; free.len()];
    let hi = vec![1.0; free.len()];
    let runs = par::map_range(settings.execution, starts.len(), |r| {
        let mut warm = problem.initial.clone();
        let res = optimize::minimize(
            |z| objective(z, &mut warm),
            &starts[r],
            &lo,
            &hi,
            &opts,
        );
        let natural = |z: &[f64]| -> Vec<f64> {
            z.iter().zip(&bounds).map(|(&zi, b)| b.from_unit(zi)).collect()
        };
        (
            RestartRecord {
                index: r,
                start: natural(&starts[r]),
                estimate: natural(&res.x),
                misfit: res.f,
                evals: res.evals,
                iterations: res.iterations,
                improvements: res.improvements,
                converged: res.converged,
            },
            res.x,
            warm,
        )
    });
    let best = runs
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .0.misfit.total_cmp(&b.1 .0.misfit))
        .map(|(i, _)| i)
        .expect("at least one restart");
    let parameters = free
        .iter()
        .zip(&runs[best].0.estimate)
        .map(|(&param, &estimate)| {
            let t = param.get(truth);
            ParameterRecovery {
                param,
                truth: t,
                estimate,
                rel_error: rel_error(estimate, t),
            }
        })
        .collect();
    let curvature = if settings.curvature {
        let (_, z, warm) = &runs[best];
        let mut warm = warm.clone();
        curvature_modes(z, &mut |x: &[f64]| objective(x, &mut warm))
    } else {
        Vec::new()
    };
    let restarts: Vec<RestartRecord> = runs.into_iter().map(|r| r.0).collect();
    Ok(RecoveryReport {
        subset: subset.clone(),
        free,
        truth: truth.clone(),
        parameters,
        misfit: restarts[best].misfit,
        iterations: restarts[best].iterations,
        restarts,
        curvature,
    })
}

const CURVATURE_STEP: f64 = 1e-3;

/// Eigenpairs of the central-difference Hessian at `z`, ascending.
fn curvature_modes(z: &[f64], f: &mut dyn FnMut(&[f64]) -> f64) -> Vec<CurvatureMode> {
    let n = z.len();
    let h = CURVATURE_STEP;
    let center: Vec<f64> = z.iter().map(|v| v.clamp(h, 1.0 - h)).collect();
    let mut at = |di: &[(usize, f64)]| {
        let mut x = center.clone();
        for &(i, d) in di {
            x[i] += d;
        }
        f(&x)
    };
    let f0 = at(&[]);
    let mut hess = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        hess[(i, i)] = (at(&[(i, h)]) - 2.0 * f0 + at(&[(i, -h)])) / (h * h);
        for j in 0..i {
            let v = (at(&[(i, h), (j, h)]) - at(&[(i, h), (j, -h)]) - at(&[(i, -h), (j, h)])
                + at(&[(i, -h), (j, -h)]))
                / (4.0 * h * h);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    let eig = SymmetricEigen::new(hess);
    let mut modes: Vec<CurvatureMode> = (0..n)
        .map(|k| CurvatureMode {
            eigenvalue: eig.eigenvalues[k],
            direction: eig.eigenvectors.column(k).iter().copied().collect(),
        })
        .collect();
    modes.sort_by(|a, b| a.eigenvalue.total_cmp(&b.eigenvalue));
    modes
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair() -> CollisionPair {
        CollisionPair::new(ParameterSet::default(), 1.3, 0.35, 22.0, 0.027).unwrap()
    }

    #[test]
    fn constraint_identity_holds() {
        let p = pair();
        assert!(p.constraint_defect().abs() < 1e-14);
    }

    #[test]
    fn identical_members_have_no_profile() {
        let u = ParameterSet::default();
        let p = CollisionPair::new(u.clone(), 1.0, u.k_p, u.k_i, u.k_w).unwrap();
        for (i, x3) in [(50.0, 10.0), (120.0, 60.0), (5.0, 110.0)] {
            assert_eq!(collision_profile(&p, i, x3), None);
        }
    }

    #[test]
    fn profile_equalizes_uptake() {
        let p = pair();
        let samples = admissible_samples(&p, 100, (5.0, 300.0), 4);
        assert_eq!(samples.len(), 100);
        let gap = verify_collision(&p, &samples, 0.4).unwrap();
        assert!(gap <= 1e-12, "{gap}");
        // perturbing the profile breaks the equality
        for &(i, x3) in &samples {
            let y = collision_profile(&p, i, x3).unwrap() * 1.1;
            let g1 = uptake_g(y, 0.4, i, x3, &p.u1);
            let g2 = uptake_g(y, 0.4, i, x3, &p.u2);
            assert!((g1 - g2).abs() > 1e-9);
        }
    }

    #[test]
    fn no_admissible_sample_is_an_error() {
        let u = ParameterSet::default();
        let p = CollisionPair::new(u.clone(), 1.0, u.k_p, u.k_i, u.k_w).unwrap();
        assert_eq!(
            verify_collision(&p, &[(10.0, 5.0)], 0.5),
            Err(IdentError::NoAdmissibleSample)
        );
    }

    #[test]
    fn scalar_recoveries() {
        assert_eq!(lambda_from_aphotic(-0.02 * 0.3, 0.3), Some(0.02));
        assert_eq!(lambda_from_aphotic(0.0, 0.0), None);
        let nu = nu_from_euphotic(-0.02 * 0.1 + 0.67 * 0.004, 0.1, 0.02, 0.004).unwrap();
        assert!((nu - 0.67).abs() < 1e-12);
        let b = b_from_bottom_fraction((2000.0f64 / 120.0).powf(-0.858), 2000.0).unwrap();
        assert!((b - 0.858).abs() < 1e-12);
        assert_eq!(b_from_bottom_fraction(0.5, 100.0), None);
    }

    #[test]
    fn bounds_round_trip() {
        for p in NdopParam::ALL {
            let b = Bound::default_for(p);
            let x = 0.5 * (b.lo + b.hi);
            assert!((b.from_unit(b.to_unit(x)) - x).abs() < 1e-12 * x);
            assert!((b.from_unit(0.0) - b.lo).abs() < 1e-12 * b.lo);
        }
    }

    #[test]
    fn starts_are_reproducible() {
        assert_eq!(random_starts(3, 5, 7), random_starts(3, 5, 7));
        assert_ne!(random_starts(3, 5, 7)[0], random_starts(3, 5, 7)[1]);
    }
}
