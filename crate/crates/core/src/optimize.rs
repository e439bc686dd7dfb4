//! Bounded Nelder–Mead simplex search.
//!
//! Trial points are projected onto the box. Coefficients follow the
//! dimension-adaptive choice of Gao and Han. After the simplex collapses
//! it is rebuilt once around the best point; the search stops when a
//! rebuilt simplex collapses again without improving the best value.

#[derive(Clone, Debug, PartialEq)]
pub struct NelderMeadOptions {
    pub max_evals: usize,
    /// Simplex diameter (infinity norm) below which the simplex counts as
    /// collapsed.
    pub x_tol: f64,
    /// Spread of function values below which the simplex counts as
    /// collapsed, relative to `|f_best|` plus `f_abs`.
    pub f_tol: f64,
    pub f_abs: f64,
    /// Edge length of the initial simplex.
    pub initial_step: f64,
    /// Number of simplex rebuilds allowed after a collapse.
    pub rebuilds: usize,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            max_evals: 500,
            x_tol: 1e-6,
            f_tol: 1e-10,
            f_abs: 1e-30,
            initial_step: 0.1,
            rebuilds: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub evals: usize,
    pub iterations: usize,
    /// Number of times the best value strictly decreased after the
    /// initial point.
    pub improvements: usize,
    pub converged: bool,
}

fn project(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for ((v, l), h) in x.iter_mut().zip(lo).zip(hi) {
        *v = v.clamp(*l, *h);
    }
}

struct Counter<F> {
    f: F,
    evals: usize,
    best: f64,
    improvements: usize,
}

impl<F: FnMut(&[f64]) -> f64> Counter<F> {
    fn eval(&mut self, x: &[f64]) -> f64 {
        self.evals += 1;
        let v = (self.f)(x);
        let v = if v.is_nan() { f64::INFINITY } else { v };
        if v < self.best {
            if self.evals > 1 {
                self.improvements += 1;
            }
            self.best = v;
        }
        v
    }
}

/// Minimize `f` over the box `[lo, hi]` starting from `x0`.
pub fn minimize<F>(
    f: F,
    x0: &[f64],
    lo: &[f64],
    hi: &[f64],
    opts: &NelderMeadOptions,
) -> NelderMeadResult
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    assert!(n > 0 && lo.len() == n && hi.len() == n);
    let nf = n as f64;
    let (alpha, beta, gamma, delta) = if n >= 2 {
        (1.0, 1.0 + 2.0 / nf, 0.75 - 1.0 / (2.0 * nf), 1.0 - 1.0 / nf)
    } else {
        (1.0, 2.0, 0.5, 0.5)
    };
    let mut c = Counter {
        f,
        evals: 0,
        best: f64::INFINITY,
        improvements: 0,
    };
    let mut start = x0.to_vec();
    project(&mut start, lo, hi);
    let f_start = c.eval(&start);
    let mut iterations = 0;
    let mut converged = false;
    let mut rebuilds = 0;
    let mut best_at_build = f_start;
    let mut simplex: Vec<(Vec<f64>, f64)> = vec![(start, f_start)];

    'outer: loop {
        // build around the current best vertex
        let (base, fb) = simplex[0].clone();
        simplex = vec![(base.clone(), fb)];
        for i in 0..n {
            if c.evals >= opts.max_evals {
                break 'outer;
            }
            let mut v = base.clone();
            let room_up = hi[i] - v[i];
            let step = opts.initial_step * (hi[i] - lo[i]).max(f64::MIN_POSITIVE);
            v[i] += if room_up >= step { step } else { -step };
            project(&mut v, lo, hi);
            let fv = c.eval(&v);
            simplex.push((v, fv));
        }

        loop {
            simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
            let f_best = simplex[0].1;
            let f_worst = simplex[n].1;
            let diameter = simplex[1..]
                .iter()
                .flat_map(|(v, _)| v.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()))
                .fold(0.0, f64::max);
            let spread = f_worst - f_best;
            if diameter <= opts.x_tol
                || (spread.is_finite() && spread <= opts.f_tol * f_best.abs() + opts.f_abs)
            {
                if rebuilds < opts.rebuilds && f_best < best_at_build {
                    rebuilds += 1;
                    best_at_build = f_best;
                    continue 'outer;
                }
                converged = true;
                break 'outer;
            }
            if c.evals >= opts.max_evals {
                break 'outer;
            }
            iterations += 1;

            let mut centroid = vec![0.0; n];
            for (v, _) in &simplex[..n] {
                for (ci, vi) in centroid.iter_mut().zip(v) {
                    *ci += vi / nf;
                }
            }
            let along = |t: f64| {
                let mut x: Vec<f64> = centroid
                    .iter()
                    .zip(&simplex[n].0)
                    .map(|(ci, wi)| ci + t * (ci - wi))
                    .collect();
                project(&mut x, lo, hi);
                x
            };
            let xr = along(alpha);
            let fr = c.eval(&xr);
            if fr < simplex[0].1 {
                if c.evals >= opts.max_evals {
                    simplex[n] = (xr, fr);
                    continue;
                }
                let xe = along(alpha * beta);
                let fe = c.eval(&xe);
                simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
                continue;
            }
            if fr < simplex[n - 1].1 {
                simplex[n] = (xr, fr);
                continue;
            }
            if c.evals >= opts.max_evals {
                continue;
            }
            let (xc, fc) = if fr < simplex[n].1 {
                let x = along(alpha * gamma);
                let v = c.eval(&x);
                (x, v)
            } else {
                let x = along(-gamma);
                let v = c.eval(&x);
                (x, v)
            };
            if fc < fr.min(simplex[n].1) {
                simplex[n] = (xc, fc);
                continue;
            }
            // shrink towards the best vertex
            let best = simplex[0].0.clone();
            for vertex in simplex.iter_mut().skip(1) {
                if c.evals >= opts.max_evals {
                    break;
                }
                let mut x: Vec<f64> = best
                    .iter()
                    .zip(&vertex.0)
                    .map(|(b, v)| b + delta * (v - b))
                    .collect();
                project(&mut x, lo, hi);
                let fx = c.eval(&x);
                *vertex = (x, fx);
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, f) = simplex.swap_remove(0);
    NelderMeadResult {
        x,
        f,
        evals: c.evals,
        iterations,
        improvements: c.improvements,
        converged,
    }
}
