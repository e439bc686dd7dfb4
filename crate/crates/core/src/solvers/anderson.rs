//! Anderson mixing for the annual fixed-point map.
//!
//! The update is an affine combination of previous map outputs whose
//! weights sum to one, so linear invariants such as the total phosphorus
//! mass carry over from the map outputs up to round-off.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use crate::grid::TracerState;

pub(crate) struct Anderson {
    depth: usize,
    weights: Vec<f64>,
    g: VecDeque<Vec<f64>>,
    f: VecDeque<Vec<f64>>,
}

fn flatten(s: &TracerState) -> Vec<f64> {
    let mut v = Vec::with_capacity(3 * s.n_cells());
    for f in s.fields() {
        v.extend_from_slice(f);
    }
    v
}

impl Anderson {
    pub fn new(depth: usize, vol: &[f64]) -> Self {
        let w: Vec<f64> = vol.iter().map(|v| v.sqrt()).collect();
        let weights = [w.as_slice(); 3].concat();
        Self {
            depth,
            weights,
            g: VecDeque::new(),
            f: VecDeque::new(),
        }
    }

    pub fn reset(&mut self) {
        self.g.clear();
        self.f.clear();
    }

    /// Next iterate given the current one `x` and its image `gx`.
    pub fn next(&mut self, x: &TracerState, gx: &TracerState) -> TracerState {
        let xv = flatten(x);
        let gv = flatten(gx);
        let fv: Vec<f64> = gv
            .iter()
            .zip(&xv)
            .zip(&self.weights)
            .map(|((g, x), w)| (g - x) * w)
            .collect();
        self.g.push_back(gv.clone());
        self.f.push_back(fv);
        if self.g.len() > self.depth + 1 {
            self.g.pop_front();
            self.f.pop_front();
        }
        let m = self.g.len() - 1;
        if m == 0 {
            return gx.clone();
        }
        let n = gv.len();
        let last = &self.f[m];
        let df = DMatrix::from_fn(n, m, |i, j| self.f[j + 1][i] - self.f[j][i]);
        let rhs = DVector::from_column_slice(last);
        let svd = df.svd(true, true);
        let Ok(gamma) = svd.solve(&rhs, 1e-12 * svd.singular_values.max()) else {
            self.reset();
            return gx.clone();
        };
        let mut out = gv;
        for j in 0..m {
            let c = gamma[j];
            for (i, o) in out.iter_mut().enumerate() {
                *o -= c * (self.g[j + 1][i] - self.g[j][i]);
            }
        }
        if out.iter().any(|v| !v.is_finite()) {
            self.reset();
            return gx.clone();
        }
        let k = x.n_cells();
        TracerState {
            y1: out[..k].to_vec(),
            y2: out[k..2 * k].to_vec(),
            y3: out[2 * k..].to_vec(),
            time: gx.time,
        }
    }
}
