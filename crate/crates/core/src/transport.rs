//! Offline transport as a time-periodic sparse linear operator.
//!
//! Each snapshot is stored in tendency form, `d(state)/dt = A·state`, on a
//! pattern shared by all snapshots. Fluxes between cells are antisymmetric,
//! so `Σ V_i (A s)_i = 0` for every state and constants are annihilated.
//! Between snapshots the operator is interpolated linearly.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::grid::Grid;
use crate::par::{self, Execution};
use crate::params::fmt_f64;

pub const FORMAT_VERSION: u32 = 1;

const ROW_CHUNK: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransportError {
    #[error("field has {got} cells, operator has {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("inconsistent snapshots: {0}")]
    Inconsistent(String),
    #[error("dt = {dt} violates the explicit stability bound; max admissible dt = {max_dt}")]
    Cfl { dt: f64, max_dt: f64 },
    #[error("implicit factorization failed: singular matrix")]
    Singular,
    #[error("invalid circulation settings: {0}")]
    Settings(String),
}

/// Settings for the generated circulation.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCirculation {
    /// Peak horizontal gyre speed (m/day).
    pub gyre_strength: f64,
    /// Uniform diffusivity (m²/day).
    pub kappa: f64,
    /// Lateral distance between neighbouring columns (m).
    pub lateral_spacing: f64,
    /// Overturning cell strength relative to the gyre.
    pub overturning_ratio: f64,
    /// Upper bound on a single loop's volume flux relative to the volume
    /// of its smallest cell (1/day).
    pub max_exchange_rate: f64,
    /// Relative seasonal modulation of the velocities, in [0, 1).
    pub seasonal_modulation: f64,
    pub snapshots: usize,
    /// Days.
    pub period: f64,
}

impl Default for SyntheticCirculation {
    fn default() -> Self {
        Self {
            gyre_strength: 20000.0,
            kappa: 10.0,
            lateral_spacing: 5.0e5,
            overturning_ratio: 0.5,
            max_exchange_rate: 0.2,
            seasonal_modulation: 0.3,
            snapshots: 12,
            period: 360.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransportOperator {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    /// One value array per snapshot, aligned with `col_idx`.
    values: Vec<Vec<f64>>,
    times: Vec<f64>,
    period: f64,
}

/// Linear interpolation between two snapshots.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Blend {
    pub lo: usize,
    pub hi: usize,
    pub w: f64,
}

impl TransportOperator {
    fn from_triplets(
        n: usize,
        snapshots: Vec<BTreeMap<(usize, usize), f64>>,
        times: Vec<f64>,
        period: f64,
    ) -> Self {
        let mut pattern: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        for i in 0..n {
            pattern.insert((i, i), 0);
        }
        for s in &snapshots {
            for &key in s.keys() {
                pattern.insert(key, 0);
            }
        }
        let mut row_ptr = vec![0; n + 1];
        let mut col_idx = Vec::with_capacity(pattern.len());
        for (slot, (&(i, j), pos)) in pattern.iter_mut().enumerate() {
            *pos = slot;
            row_ptr[i + 1] += 1;
            col_idx.push(j);
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        let values = snapshots
            .iter()
            .map(|s| {
                let mut v = vec![0.0; col_idx.len()];
                for (key, &x) in s {
                    v[pattern[key]] = x;
                }
                v
            })
            .collect();
        Self {
            n,
            row_ptr,
            col_idx,
            values,
            times,
            period,
        }
    }

    pub fn n_cells(&self) -> usize {
        self.n
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn n_snapshots(&self) -> usize {
        self.values.len()
    }

    pub fn snapshot_times(&self) -> &[f64] {
        &self.times
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().flatten().all(|&v| v == 0.0)
    }

    /// Snapshot pair and weight for time `t` (taken modulo the period).
    pub fn blend(&self, t: f64) -> Blend {
        let m = self.values.len();
        if m == 1 {
            return Blend { lo: 0, hi: 0, w: 0.0 };
        }
        let tau = t.rem_euclid(self.period);
        let mut lo = m - 1;
        for (k, &tk) in self.times.iter().enumerate() {
            if tk <= tau {
                lo = k;
            } else {
                break;
            }
        }
        if tau < self.times[0] {
            lo = m - 1;
        }
        let hi = (lo + 1) % m;
        let t_lo = self.times[lo];
        let t_hi = if hi == 0 {
            self.times[0] + self.period
        } else {
            self.times[hi]
        };
        let tau = if tau < t_lo { tau + self.period } else { tau };
        let w = ((tau - t_lo) / (t_hi - t_lo)).clamp(0.0, 1.0);
        Blend { lo, hi, w }
    }

    /// Tendency `A(t)·s`.
    pub fn apply(&self, s: &[f64], t: f64) -> Result<Vec<f64>, TransportError> {
        if s.len() != self.n {
            return Err(TransportError::ShapeMismatch {
                expected: self.n,
                got: s.len(),
            });
        }
        let mut out = vec![0.0; self.n];
        self.apply_blend_into(s, self.blend(t), &mut out);
        Ok(out)
    }

    pub(crate) fn apply_blend_into(&self, s: &[f64], b: Blend, out: &mut [f64]) {
        self.apply_rows(s, b, 0, out);
    }

    /// Rows `row0..row0 + out.len()` of the blended product.
    fn apply_rows(&self, s: &[f64], b: Blend, row0: usize, out: &mut [f64]) {
        let a = &self.values[b.lo];
        if b.w == 0.0 || b.lo == b.hi {
            for (r, o) in out.iter_mut().enumerate() {
                let i = row0 + r;
                let mut acc = 0.0;
                for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                    acc += a[p] * s[self.col_idx[p]];
                }
                *o = acc;
            }
        } else {
            let c = &self.values[b.hi];
            let (wl, wh) = (1.0 - b.w, b.w);
            for (r, o) in out.iter_mut().enumerate() {
                let i = row0 + r;
                let mut acc = 0.0;
                for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                    acc += (wl * a[p] + wh * c[p]) * s[self.col_idx[p]];
                }
                *o = acc;
            }
        }
    }

    /// `s ← s + dt·A·s` for each field, rows split across workers.
    pub(crate) fn explicit_step(
        &self,
        fields: &mut [&mut [f64]],
        b: Blend,
        dt: f64,
        scratch: &mut [f64],
        exec: Execution,
    ) {
        for f in fields.iter_mut() {
            let src: &[f64] = f;
            par::for_each_chunk_mut(exec, scratch, ROW_CHUNK, |ci, c| {
                self.apply_rows(src, b, ci * ROW_CHUNK, c)
            });
            for (x, d) in f.iter_mut().zip(scratch.iter()) {
                *x += dt * d;
            }
        }
    }

    /// Largest `dt` for which `I + dt·A` keeps nonnegative fields
    /// nonnegative for every snapshot, `1/max|A_ii|`.
    pub fn max_explicit_dt(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for v in &self.values {
            for i in 0..self.n {
                for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                    if self.col_idx[p] == i {
                        worst = worst.max(-v[p]);
                    }
                }
            }
        }
        if worst > 0.0 {
            1.0 / worst
        } else {
            f64::INFINITY
        }
    }

    pub fn check_explicit_dt(&self, dt: f64) -> Result<(), TransportError> {
        let max_dt = self.max_explicit_dt();
        if dt > max_dt {
            Err(TransportError::Cfl { dt, max_dt })
        } else {
            Ok(())
        }
    }

    /// Dense copy of one snapshot.
    pub fn to_dense(&self, snapshot: usize) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        let v = &self.values[snapshot];
        for i in 0..self.n {
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                m[(i, self.col_idx[p])] += v[p];
            }
        }
        m
    }

    /// Time mean over one period of the interpolated operator, as a single
    /// constant snapshot. With equally weighted linear interpolation this
    /// is the trapezoidal mean of the snapshots.
    pub fn time_mean(&self) -> Self {
        let m = self.values.len();
        let mut mean = vec![0.0; self.col_idx.len()];
        for k in 0..m {
            let next = if k + 1 == m {
                self.times[0] + self.period
            } else {
                self.times[k + 1]
            };
            let span = next - self.times[k];
            let hi = (k + 1) % m;
            for (p, x) in mean.iter_mut().enumerate() {
                *x += 0.5 * span * (self.values[k][p] + self.values[hi][p]) / self.period;
            }
        }
        Self {
            n: self.n,
            row_ptr: self.row_ptr.clone(),
            col_idx: self.col_idx.clone(),
            values: vec![mean],
            times: vec![0.0],
            period: self.period,
        }
    }

    /// Coordinate-list text for one snapshot.
    pub fn snapshot_to_text(&self, snapshot: usize) -> String {
        let v = &self.values[snapshot];
        let nnz = v.iter().filter(|&&x| x != 0.0).count();
        let mut s = String::new();
        let _ = writeln!(s, "# ndopfe transport snapshot");
        let _ = writeln!(s, "format_version {FORMAT_VERSION}");
        let _ = writeln!(s, "period {}", fmt_f64(self.period));
        let _ = writeln!(s, "time {}", fmt_f64(self.times[snapshot]));
        let _ = writeln!(s, "cells {}", self.n);
        let _ = writeln!(s, "nnz {nnz}");
        for i in 0..self.n {
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                if v[p] != 0.0 {
                    let _ = writeln!(s, "{} {} {}", i, self.col_idx[p], fmt_f64(v[p]));
                }
            }
        }
        s
    }

    /// Assemble an operator from snapshot files in any order.
    pub fn from_snapshot_texts<S: AsRef<str>>(texts: &[S]) -> Result<Self, TransportError> {
        let mut parsed = Vec::new();
        for t in texts {
            parsed.push(parse_snapshot(t.as_ref())?);
        }
        if parsed.is_empty() {
            return Err(TransportError::Inconsistent("no snapshots".into()));
        }
        parsed.sort_by(|a, b| a.time.total_cmp(&b.time));
        let (n, period) = (parsed[0].cells, parsed[0].period);
        for p in &parsed {
            if p.cells != n || p.period != period {
                return Err(TransportError::Inconsistent(
                    "cell count and period must agree across snapshots".into(),
                ));
            }
            if !(p.time >= 0.0 && p.time < period) {
                return Err(TransportError::Inconsistent(format!(
                    "snapshot time {} outside [0, {period})",
                    p.time
                )));
            }
        }
        if parsed.windows(2).any(|w| w[0].time == w[1].time) {
            return Err(TransportError::Inconsistent("duplicate snapshot time".into()));
        }
        let times = parsed.iter().map(|p| p.time).collect();
        let maps = parsed.into_iter().map(|p| p.entries).collect();
        Ok(Self::from_triplets(n, maps, times, period))
    }

    /// Volume-weighted sum of the tendency of `s` under snapshot `k`, and
    /// the matching absolute scale `Σ V_i |(A s)_i|`.
    pub fn mass_defect(&self, snapshot: usize, s: &[f64], volumes: &[f64]) -> (f64, f64) {
        let b = Blend {
            lo: snapshot,
            hi: snapshot,
            w: 0.0,
        };
        let mut out = vec![0.0; self.n];
        self.apply_blend_into(s, b, &mut out);
        let sum = out.iter().zip(volumes).map(|(a, v)| a * v).sum();
        let scale = out.iter().zip(volumes).map(|(a, v)| a.abs() * v).sum();
        (sum, scale)
    }
}

struct ParsedSnapshot {
    period: f64,
    time: f64,
    cells: usize,
    entries: BTreeMap<(usize, usize), f64>,
}

fn parse_snapshot(text: &str) -> Result<ParsedSnapshot, TransportError> {
    let mut header: BTreeMap<&str, (usize, &str)> = BTreeMap::new();
    let mut entries = BTreeMap::new();
    let mut expected_nnz = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let f: Vec<&str> = body.split_whitespace().collect();
        let err = |message: String| TransportError::Parse { line, message };
        match f.as_slice() {
            [key, value] => {
                header.insert(key, (line, value));
            }
            [r, c, v] => {
                let r: usize = r.parse().map_err(|_| err(format!("bad row `{r}`")))?;
                let c: usize = c.parse().map_err(|_| err(format!("bad column `{c}`")))?;
                let v: f64 = v.parse().map_err(|_| err(format!("bad value `{v}`")))?;
                if entries.insert((r, c), v).is_some() {
                    return Err(err(format!("duplicate entry ({r}, {c})")));
                }
            }
            _ => return Err(err(format!("unrecognized line `{body}`"))),
        }
    }
    let get = |key: &str| {
        header.get(key).copied().ok_or(TransportError::Parse {
            line: 0,
            message: format!("missing header `{key}`"),
        })
    };
    let num = |key: &str| -> Result<f64, TransportError> {
        let (line, v) = get(key)?;
        v.parse().map_err(|_| TransportError::Parse {
            line,
            message: format!("bad `{key}` value `{v}`"),
        })
    };
    let version = num("format_version")?;
    if version != FORMAT_VERSION as f64 {
        return Err(TransportError::Inconsistent(format!(
            "unsupported format_version {version}"
        )));
    }
    let cells = num("cells")? as usize;
    if let Ok(n) = num("nnz") {
        expected_nnz = Some(n as usize);
    }
    if let Some(n) = expected_nnz {
        if n != entries.len() {
            return Err(TransportError::Inconsistent(format!(
                "header announces {n} entries, found {}",
                entries.len()
            )));
        }
    }
    if entries.keys().any(|&(r, c)| r >= cells || c >= cells) {
        return Err(TransportError::Inconsistent("entry index out of range".into()));
    }
    Ok(ParsedSnapshot {
        period: num("period")?,
        time: num("time")?,
        cells,
        entries,
    })
}

/// Generated operator plus any warnings raised while building it.
#[derive(Clone, Debug)]
pub struct SyntheticBuild {
    pub operator: TransportOperator,
    pub warnings: Vec<String>,
}

/// Upwind advection along a divergence-free loop circulation plus
/// central-difference diffusion with uniform `kappa`.
///
/// Velocities come from a discrete streamfunction: every elementary
/// loop of four cells (horizontal gyre loops on one layer, vertical
/// overturning loops between longitude neighbours) carries a closed
/// volume flux, so no flow crosses any boundary and every cell's net
/// volume flux is zero.
pub fn build_synthetic(
    grid: &Grid,
    s: &SyntheticCirculation,
) -> Result<SyntheticBuild, TransportError> {
    if !(s.kappa >= 0.0) || !(s.gyre_strength >= 0.0) {
        return Err(TransportError::Settings(
            "kappa and gyre_strength must be nonnegative".into(),
        ));
    }
    if !(s.lateral_spacing > 0.0)
        || !(s.period > 0.0)
        || s.snapshots == 0
        || !(s.max_exchange_rate > 0.0)
    {
        return Err(TransportError::Settings(
            "lateral_spacing, max_exchange_rate, period and snapshots must be positive".into(),
        ));
    }
    if !(0.0..1.0).contains(&s.seasonal_modulation) {
        return Err(TransportError::Settings(
            "seasonal_modulation must lie in [0, 1)".into(),
        ));
    }
    let mut warnings = Vec::new();
    let n = grid.n_cells();
    if n == 1 {
        warnings.push("grid has a single cell; transport is identically zero".to_string());
    }
    let cells = grid.cells();
    let vol = grid.volumes();
    let cols = grid.columns();
    let n_lon = cols.iter().map(|c| c.lon).max().unwrap_or(0) + 1;
    let n_lat = cols.iter().map(|c| c.lat).max().unwrap_or(0) + 1;
    let cell_at = |lon: usize, lat: usize, k: usize| -> Option<usize> {
        let c = &cols[grid.column_at(lon, lat)?];
        (k < c.n_layers()).then(|| c.first_cell + k)
    };
    let l = s.lateral_spacing;

    // symmetric diffusive conductances (m³/day)
    let mut diff: Vec<(usize, usize, f64)> = Vec::new();
    if s.kappa > 0.0 {
        for c in cols {
            for k in 0..c.n_layers().saturating_sub(1) {
                let (a, b) = (c.first_cell + k, c.first_cell + k + 1);
                let dz = cells[b].mid() - cells[a].mid();
                diff.push((a, b, s.kappa * c.area / dz));
            }
        }
        for c in cols {
            for k in 0..c.n_layers() {
                let a = c.first_cell + k;
                for (lon, lat) in [(c.lon + 1, c.lat), (c.lon, c.lat + 1)] {
                    if let Some(b) = cell_at(lon, lat, k) {
                        diff.push((a, b, s.kappa * vol[a].min(vol[b]) / (l * l)));
                    }
                }
            }
        }
    }

    // Loops with unit orientation and streamfunction-shaped weights. A
    // loop's volume flux scales with the mean volume of its cells, capped
    // so that no cell is exchanged faster than `max_exchange_rate`.
    let mut loops: Vec<([usize; 4], f64)> = Vec::new();
    if s.gyre_strength > 0.0 {
        let weight = |q: &[usize]| {
            let mean = q.iter().map(|&i| vol[i]).sum::<f64>() / q.len() as f64;
            let min = q.iter().map(|&i| vol[i]).fold(f64::INFINITY, f64::min);
            (mean / l).min(s.max_exchange_rate * min / s.gyre_strength)
        };
        let psi = |lon: usize, lat: usize| {
            (PI * (lon as f64 + 1.0) / n_lon as f64).sin()
                * (PI * (lat as f64 + 1.0) / n_lat as f64).sin()
        };
        for lon in 0..n_lon.saturating_sub(1) {
            for lat in 0..n_lat.saturating_sub(1) {
                for k in 0.. {
                    let quad = [
                        cell_at(lon, lat, k),
                        cell_at(lon + 1, lat, k),
                        cell_at(lon + 1, lat + 1, k),
                        cell_at(lon, lat + 1, k),
                    ];
                    let Some(q) = quad.iter().copied().collect::<Option<Vec<_>>>() else {
                        if cols.iter().all(|c| k >= c.n_layers()) {
                            break;
                        }
                        continue;
                    };
                    loops.push(([q[0], q[1], q[2], q[3]], psi(lon, lat) * weight(&q)));
                }
            }
        }
        if s.overturning_ratio > 0.0 {
            let depth_levels = cols.iter().map(|c| c.n_layers()).max().unwrap_or(1);
            for lon in 0..n_lon.saturating_sub(1) {
                let zonal = (PI * (lon as f64 + 1.0) / n_lon as f64).sin();
                for lat in 0..n_lat {
                    for k in 0.. {
                        let quad = [
                            cell_at(lon, lat, k),
                            cell_at(lon + 1, lat, k),
                            cell_at(lon + 1, lat, k + 1),
                            cell_at(lon, lat, k + 1),
                        ];
                        let Some(q) = quad.iter().copied().collect::<Option<Vec<_>>>() else {
                            if cols.iter().all(|c| k + 1 >= c.n_layers()) {
                                break;
                            }
                            continue;
                        };
                        let shape = zonal * (PI * (k as f64 + 1.0) / depth_levels as f64).sin();
                        loops.push((
                            [q[0], q[1], q[2], q[3]],
                            s.overturning_ratio * shape * weight(&q),
                        ));
                    }
                }
            }
        }
    }

    let mut maps = Vec::with_capacity(s.snapshots);
    let mut times = Vec::with_capacity(s.snapshots);
    for k in 0..s.snapshots {
        let t = s.period * k as f64 / s.snapshots as f64;
        times.push(t);
        let season = 1.0 + s.seasonal_modulation * (2.0 * PI * t / s.period).cos();
        let mut a: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for &(i, j, d) in &diff {
            *a.entry((i, j)).or_default() += d / vol[i];
            *a.entry((i, i)).or_default() -= d / vol[i];
            *a.entry((j, i)).or_default() += d / vol[j];
            *a.entry((j, j)).or_default() -= d / vol[j];
        }
        // net volume flux per ordered pair, antisymmetric by construction
        let mut q: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for (quad, w) in &loops {
            let flux = s.gyre_strength * season * w;
            for e in 0..4 {
                let (from, to) = (quad[e], quad[(e + 1) % 4]);
                let (lo, hi, f) = if from < to {
                    (from, to, flux)
                } else {
                    (to, from, -flux)
                };
                *q.entry((lo, hi)).or_default() += f;
            }
        }
        for (&(lo, hi), &f) in &q {
            // f > 0: flow from lo to hi carrying the lo concentration
            let (src, dst, f) = if f >= 0.0 { (lo, hi, f) } else { (hi, lo, -f) };
            if f == 0.0 {
                continue;
            }
            *a.entry((dst, src)).or_default() += f / vol[dst];
            *a.entry((src, src)).or_default() -= f / vol[src];
        }
        maps.push(a);
    }
    Ok(SyntheticBuild {
        operator: TransportOperator::from_triplets(n, maps, times, s.period),
        warnings,
    })
}

/// Per-snapshot factorizations of `I - dt·A` for implicit transport.
#[derive(Clone, Debug)]
pub struct ImplicitTransport {
    lus: Vec<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>>,
    dt: f64,
}

impl ImplicitTransport {
    pub fn new(op: &TransportOperator, dt: f64) -> Result<Self, TransportError> {
        let n = op.n_cells();
        let mut lus = Vec::with_capacity(op.n_snapshots());
        for k in 0..op.n_snapshots() {
            let m = DMatrix::identity(n, n) - op.to_dense(k) * dt;
            let lu = m.lu();
            if !lu.is_invertible() {
                return Err(TransportError::Singular);
            }
            lus.push(lu);
        }
        Ok(Self { lus, dt })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Solve `(I - dt·A_k) x = s` in place with the snapshot nearest to `b`.
    pub(crate) fn solve_in_place(&self, field: &mut [f64], b: Blend) {
        let k = if b.w < 0.5 { b.lo } else { b.hi };
        let mut v = DVector::from_column_slice(field);
        self.lus[k].solve_mut(&mut v);
        field.copy_from_slice(v.as_slice());
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn desk_op(s: &SyntheticCirculation) -> (Grid, TransportOperator) {
        let g = Grid::desk();
        let op = build_synthetic(&g, s).unwrap().operator;
        (g, op)
    }

    #[test]
    fn zero_settings_give_zero_operator() {
        let (_, op) = desk_op(&SyntheticCirculation {
            gyre_strength: 0.0,
            kappa: 0.0,
            ..Default::default()
        });
        assert!(op.is_zero());
    }

    #[test]
    fn constants_are_annihilated() {
        let (g, op) = desk_op(&SyntheticCirculation::default());
        let c = vec![2.75; g.n_cells()];
        for k in 0..op.n_snapshots() {
            let out = op.apply(&c, op.snapshot_times()[k]).unwrap();
            for v in out {
                assert!(v.abs() < 1e-15, "{v}");
            }
        }
    }

    #[test]
    fn mass_annihilation_on_random_states() {
        let (g, op) = desk_op(&SyntheticCirculation::default());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let s: Vec<f64> = (0..g.n_cells()).map(|_| rng.gen_range(-1.0..3.0)).collect();
            for k in 0..op.n_snapshots() {
                let (sum, scale) = op.mass_defect(k, &s, g.volumes());
                assert!(sum.abs() <= 1e-12 * scale, "{sum} vs {scale}");
            }
        }
    }

    #[test]
    fn periodic_and_linear() {
        let (g, op) = desk_op(&SyntheticCirculation::default());
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s: Vec<f64> = (0..g.n_cells()).map(|_| rng.gen_range(0.0..1.0)).collect();
        let u: Vec<f64> = (0..g.n_cells()).map(|_| rng.gen_range(0.0..1.0)).collect();
        for t in [0.0, 17.3, 101.0, 359.5] {
            let a = op.apply(&s, t).unwrap();
            let b = op.apply(&s, t + op.period()).unwrap();
            let scale = a.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() <= 1e-12 * scale);
            }
            let alpha = 2.5;
            let comb: Vec<f64> = s.iter().zip(&u).map(|(x, y)| alpha * x + y).collect();
            let lhs = op.apply(&comb, t).unwrap();
            let su = op.apply(&u, t).unwrap();
            let scale = a.iter().chain(&su).fold(0.0f64, |m, x| m.max(x.abs()));
            for i in 0..lhs.len() {
                let rhs = alpha * a[i] + su[i];
                assert!((lhs[i] - rhs).abs() <= 1e-12 * scale);
            }
        }
        assert!(op.apply(&[1.0], 0.0).is_err());
        let z = op.apply(&vec![0.0; g.n_cells()], 50.0).unwrap();
        assert!(z.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn blend_weights() {
        let (_, op) = desk_op(&SyntheticCirculation::default());
        assert_eq!(op.blend(0.0), Blend { lo: 0, hi: 1, w: 0.0 });
        let b = op.blend(45.0);
        assert_eq!((b.lo, b.hi), (1, 2));
        assert!((b.w - 0.5).abs() < 1e-15);
        let b = op.blend(350.0);
        assert_eq!((b.lo, b.hi), (11, 0));
        let b = op.blend(-10.0);
        assert_eq!((b.lo, b.hi), (11, 0));
    }

    #[test]
    fn diffusion_is_symmetric_negative_semidefinite() {
        let g = Grid::desk();
        let op = build_synthetic(
            &g,
            &SyntheticCirculation {
                gyre_strength: 0.0,
                ..Default::default()
            },
        )
        .unwrap()
        .operator;
        let a = op.to_dense(0);
        let v = g.volumes();
        let n = g.n_cells();
        // V·A symmetric
        for i in 0..n {
            for j in 0..n {
                let x = v[i] * a[(i, j)];
                let y = v[j] * a[(j, i)];
                assert!((x - y).abs() <= 1e-12 * (x.abs() + y.abs() + 1e-30));
            }
        }
        let va = DMatrix::from_fn(n, n, |i, j| 0.5 * (v[i] * a[(i, j)] + v[j] * a[(j, i)]));
        let eig = va.symmetric_eigenvalues();
        let scale = eig.iter().fold(0.0f64, |m, e| m.max(e.abs()));
        assert!(eig.iter().all(|&e| e <= 1e-12 * scale));
    }

    #[test]
    fn upwind_step_preserves_sign() {
        let (g, op) = desk_op(&SyntheticCirculation {
            kappa: 0.0,
            ..Default::default()
        });
        let dt = op.max_explicit_dt();
        assert!(dt.is_finite());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s: Vec<f64> = (0..g.n_cells())
            .map(|_| if rng.gen_bool(0.3) { 0.0 } else { rng.gen_range(0.0..5.0) })
            .collect();
        let mut scratch = vec![0.0; g.n_cells()];
        for step in 0..200 {
            let b = op.blend(step as f64 * dt);
            op.explicit_step(&mut [&mut s[..]], b, dt, &mut scratch, Execution::Sequential);
            assert!(s.iter().all(|&x| x >= -1e-14));
        }
    }

    #[test]
    fn default_explicit_bound_admits_half_day() {
        let (_, op) = desk_op(&SyntheticCirculation::default());
        assert!(op.check_explicit_dt(0.5).is_ok());
        let max = op.max_explicit_dt();
        assert!(matches!(
            op.check_explicit_dt(2.0 * max),
            Err(TransportError::Cfl { .. })
        ));
    }

    #[test]
    fn single_cell_grid_warns() {
        let g = Grid::new(vec![crate::grid::ColumnSpec {
            id: 0,
            lon: 0,
            lat: 0,
            area: 1.0,
            depth: 50.0,
            layers: 1,
            interfaces: None,
        }])
        .unwrap();
        let b = build_synthetic(&g, &SyntheticCirculation::default()).unwrap();
        assert!(b.operator.is_zero());
        assert_eq!(b.warnings.len(), 1);
    }

    #[test]
    fn snapshot_text_round_trip() {
        let (_, op) = desk_op(&SyntheticCirculation::default());
        let texts: Vec<String> = (0..op.n_snapshots())
            .rev()
            .map(|k| op.snapshot_to_text(k))
            .collect();
        let back = TransportOperator::from_snapshot_texts(&texts).unwrap();
        assert_eq!(back.snapshot_times(), op.snapshot_times());
        for k in 0..op.n_snapshots() {
            assert_eq!(back.to_dense(k), op.to_dense(k));
        }
        let bad = texts[0].replace("format_version 1", "format_version 7");
        assert!(TransportOperator::from_snapshot_texts(&[bad]).is_err());
        let dup = format!("{}\n", texts[0]);
        assert!(TransportOperator::from_snapshot_texts(&[dup.clone(), dup]).is_err());
    }

    #[test]
    fn time_mean_of_interpolated_operator() {
        let (g, op) = desk_op(&SyntheticCirculation::default());
        let mean = op.time_mean();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s: Vec<f64> = (0..g.n_cells()).map(|_| rng.gen_range(0.0..1.0)).collect();
        let direct = mean.apply(&s, 0.0).unwrap();
        let n = 3600;
        let mut acc = vec![0.0; g.n_cells()];
        for i in 0..n {
            let t = (i as f64 + 0.5) * op.period() / n as f64;
            for (a, x) in acc.iter_mut().zip(op.apply(&s, t).unwrap()) {
                *a += x / n as f64;
            }
        }
        for (a, b) in acc.iter().zip(&direct) {
            assert!((a - b).abs() <= 1e-9 * (b.abs() + 1e-6));
        }
    }
}
