//! Biogeochemical reaction terms.
//!
//! Every kernel is a pure function of local state, depth, light and
//! parameters. Negative concentrations are legal inputs everywhere; the
//! saturation functions keep `|x|` in the denominator for that reason.
//!
//! Tendencies follow the sign convention `dy/dt = transport + r`, so the
//! uptake `G` enters `r1` with a minus sign in the euphotic zone and the
//! exported fraction `(1 - nu)·P` reappears below it, where
//! `P = ∫₀^{h_e} G dx3` is the column uptake integral.

use thiserror::Error;

use crate::grid::{Cell, Column, Grid, H_BAR_E};
use crate::params::ParameterSet;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("half saturation constant must be positive, got {0}")]
    NonPositiveHalfSaturation(f64),
    #[error("free iron radicand is not positive at y3 = {0}")]
    RadicandNotPositive(f64),
    #[error("column depth {0} m is shallower than the euphotic reference depth")]
    ShallowColumn(f64),
    #[error("column has {expected} cells, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
}

/// Which free-iron closure feeds the scavenging term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum IronVariant {
    /// Positive root of the ligand-equilibrium quadratic.
    Original,
    /// Piecewise-linear substitute with strictly positive slope.
    #[default]
    Adjusted,
}

/// Functional form of the phosphate limitation inside the uptake.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum UptakeForm {
    /// `alpha · y1/(|y1| + K_P)`.
    #[default]
    Saturating,
    /// `beta · arctan(y1)`; `alpha` and `K_P` are unused.
    Arctan { beta: f64 },
}

/// `x/(|x| + k)`.
pub fn saturation(x: f64, k: f64) -> Result<f64, KernelError> {
    if !(k > 0.0) {
        return Err(KernelError::NonPositiveHalfSaturation(k));
    }
    Ok(sat(x, k))
}

#[inline]
pub(crate) fn sat(x: f64, k: f64) -> f64 {
    x / (x.abs() + k)
}

/// Surface irradiance attenuated to depth `x3`; zero outside the euphotic zone.
pub fn attenuated_light(i_surface: f64, x3: f64, k_w: f64, in_euphotic: bool) -> f64 {
    if in_euphotic {
        i_surface * (-x3 * k_w).exp()
    } else {
        0.0
    }
}

/// Uptake `G(y1, y3)` at depth `x3`; zero at or below `h̄_e`.
pub fn uptake_g(y1: f64, y3: f64, i_surface: f64, x3: f64, p: &ParameterSet) -> f64 {
    let light = attenuated_light(i_surface, x3, p.k_w, x3 < H_BAR_E);
    p.alpha * sat(y1, p.k_p) * sat(y3, p.k_f) * sat(light, p.k_i)
}

/// Uptake with the phosphate factor replaced by `beta_arc · arctan(y1)`.
pub fn uptake_arctan(
    y1: f64,
    y3: f64,
    i_surface: f64,
    x3: f64,
    p: &ParameterSet,
    beta_arc: f64,
) -> f64 {
    let light = attenuated_light(i_surface, x3, p.k_w, x3 < H_BAR_E);
    beta_arc * y1.atan() * sat(y3, p.k_f) * sat(light, p.k_i)
}

/// Radicand `(L_T + 1/K - y3)²/4 + y3/K`, evaluated in a form whose terms
/// are all nonnegative when `L_T ≥ 1/K`.
pub fn free_iron_radicand(y3: f64, k: f64, l_t: f64) -> f64 {
    if y3 > 0.0 {
        let h = l_t + 1.0 / k - y3;
        0.25 * h * h + y3 / k
    } else {
        let s = l_t + 1.0 / k;
        0.25 * s * s + 0.25 * y3 * y3 - 0.5 * y3 * (l_t - 1.0 / k)
    }
}

/// Free iron `Fe′(y3) = -H/2 + sqrt(H²/4 + y3/K)`, `H = L_T + 1/K - y3`.
pub fn free_iron_original(y3: f64, k: f64, l_t: f64) -> Result<f64, KernelError> {
    let r = free_iron_radicand(y3, k, l_t);
    if !(r > 0.0) {
        return Err(KernelError::RadicandNotPositive(y3));
    }
    Ok(free_iron_from_radicand(y3, k, l_t, r))
}

#[inline]
fn free_iron_from_radicand(y3: f64, k: f64, l_t: f64, r: f64) -> f64 {
    let h = l_t + 1.0 / k - y3;
    let root = r.sqrt();
    if h > 0.0 {
        // rationalized to avoid cancellation between H/2 and the root
        (y3 / k) / (0.5 * h + root)
    } else {
        -0.5 * h + root
    }
}

/// Piecewise-linear free iron: slope 1 above `L_T`, a line through the
/// origin below, meeting at `(L_T, Fe′(L_T))`.
pub fn free_iron_adjusted(y3: f64, k: f64, l_t: f64) -> f64 {
    let fe_l = free_iron_from_radicand(l_t, k, l_t, free_iron_radicand(l_t, k, l_t));
    adjusted_with_anchor(y3, l_t, fe_l)
}

#[inline]
fn adjusted_with_anchor(y3: f64, l_t: f64, fe_l: f64) -> f64 {
    if y3 > l_t {
        y3 + fe_l - l_t
    } else {
        fe_l / l_t * y3
    }
}

/// Particle profile `max(c_p_floor, c_p0·(max(x3, h̄_e)/h̄_e)^(-s))`.
pub fn particle_concentration(x3: f64, p: &ParameterSet) -> f64 {
    let q = x3.max(H_BAR_E) / H_BAR_E;
    (p.c_p0 * q.powf(-p.c_p_exponent)).max(p.c_p_floor)
}

/// `tau·k0·C_p^phi` at depth `x3`.
pub fn scavenging_coefficient(x3: f64, p: &ParameterSet) -> f64 {
    p.tau * p.k0 * particle_concentration(x3, p).powf(p.phi)
}

/// Scavenging loss `tau·k0·C_p(x3)^phi · free_iron(y3)`.
pub fn scavenging(y3: f64, x3: f64, p: &ParameterSet, variant: IronVariant) -> f64 {
    let c = scavenging_coefficient(x3, p);
    c * free_iron(y3, p, variant)
}

fn free_iron(y3: f64, p: &ParameterSet, variant: IronVariant) -> f64 {
    match variant {
        IronVariant::Original => {
            free_iron_from_radicand(y3, p.k_lig, p.l_t, free_iron_radicand(y3, p.k_lig, p.l_t))
        }
        IronVariant::Adjusted => free_iron_adjusted(y3, p.k_lig, p.l_t),
    }
}

/// Fraction of column export remineralized inside an aphotic column,
/// `1 - (h/h̄_e)^(-b)`.
pub fn martin_fraction(h: f64, b: f64) -> Result<f64, KernelError> {
    if h < H_BAR_E {
        return Err(KernelError::ShallowColumn(h));
    }
    Ok(1.0 - (h / H_BAR_E).powf(-b))
}

/// Tendencies of one column.
#[derive(Clone, Debug, PartialEq)]
pub struct ColumnReactionResult {
    pub r1: Vec<f64>,
    pub r2: Vec<f64>,
    pub r3: Vec<f64>,
    /// `(1 - nu)·P`, mmol m⁻² day⁻¹.
    pub export_production: f64,
    /// Part of the export that reaches the floor (Γ₂) or the whole export
    /// on shallow columns (Γ₁), mmol m⁻² day⁻¹.
    pub bottom_deposit: f64,
}

/// Reaction tendencies for `column` of `g`. Slices cover that column only.
#[allow(clippy::too_many_arguments)]
pub fn reaction_tendencies(
    g: &Grid,
    column: usize,
    y1: &[f64],
    y2: &[f64],
    y3: &[f64],
    i_surface: f64,
    iron_source: &[f64],
    p: &ParameterSet,
    variant: IronVariant,
) -> Result<ColumnReactionResult, KernelError> {
    let col = &g.columns()[column];
    let cells = &g.cells()[col.cells()];
    let n = cells.len();
    for len in [y1.len(), y2.len(), y3.len(), iron_source.len()] {
        if len != n {
            return Err(KernelError::ShapeMismatch { expected: n, got: len });
        }
    }
    let ck = ColumnCoefficients::new(col, cells, p, iron_source);
    let rates = Rates::new(p, variant, UptakeForm::Saturating);
    let mut out = ColumnReactionResult {
        r1: vec![0.0; n],
        r2: vec![0.0; n],
        r3: vec![0.0; n],
        export_production: 0.0,
        bottom_deposit: 0.0,
    };
    let (export, deposit) = rates.column(
        &ck,
        cells,
        y1,
        y2,
        y3,
        i_surface,
        &mut out.r1,
        &mut out.r2,
        &mut out.r3,
    );
    out.export_production = export;
    out.bottom_deposit = deposit;
    Ok(out)
}

/// Scalar rates shared by every column.
#[derive(Clone, Debug)]
pub(crate) struct Rates {
    pub lambda: f64,
    pub alpha: f64,
    pub k_p: f64,
    pub k_f: f64,
    pub k_i: f64,
    pub nu: f64,
    pub r_fe: f64,
    pub l_t: f64,
    pub k_lig: f64,
    pub fe_at_l_t: f64,
    pub variant: IronVariant,
    pub uptake: UptakeForm,
}

impl Rates {
    pub fn new(p: &ParameterSet, variant: IronVariant, uptake: UptakeForm) -> Self {
        Self {
            lambda: p.lambda,
            alpha: p.alpha,
            k_p: p.k_p,
            k_f: p.k_f,
            k_i: p.k_i,
            nu: p.nu,
            r_fe: p.r_fe,
            l_t: p.l_t,
            k_lig: p.k_lig,
            fe_at_l_t: free_iron_adjusted(p.l_t, p.k_lig, p.l_t),
            variant,
            uptake,
        }
    }

    #[inline]
    pub fn free_iron(&self, y3: f64) -> f64 {
        match self.variant {
            IronVariant::Adjusted => adjusted_with_anchor(y3, self.l_t, self.fe_at_l_t),
            IronVariant::Original => free_iron_from_radicand(
                y3,
                self.k_lig,
                self.l_t,
                free_iron_radicand(y3, self.k_lig, self.l_t),
            ),
        }
    }

    #[inline]
    pub fn uptake(&self, y1: f64, y3: f64, light: f64) -> f64 {
        let p_factor = match self.uptake {
            UptakeForm::Saturating => self.alpha * sat(y1, self.k_p),
            UptakeForm::Arctan { beta } => beta * y1.atan(),
        };
        p_factor * sat(y3, self.k_f) * sat(light, self.k_i)
    }

    /// Fill the three tendency slices of one column; returns
    /// `(export_production, bottom_deposit)`.
    #[allow(clippy::too_many_arguments)]
    pub fn column(
        &self,
        ck: &ColumnCoefficients,
        cells: &[Cell],
        y1: &[f64],
        y2: &[f64],
        y3: &[f64],
        i_surface: f64,
        r1: &mut [f64],
        r2: &mut [f64],
        r3: &mut [f64],
    ) -> (f64, f64) {
        let n = cells.len();
        let mut column_uptake = 0.0;
        for k in 0..n {
            let remin = self.lambda * y2[k];
            let scav = ck.scavenging[k] * self.free_iron(y3[k]);
            if k < ck.n_euphotic {
                let g = self.uptake(y1[k], y3[k], i_surface * ck.light[k]);
                column_uptake += g * cells[k].thickness();
                r1[k] = remin - g;
                r2[k] = -remin + self.nu * g;
                r3[k] = (remin - g) * self.r_fe - scav + ck.iron_source[k];
            } else {
                r1[k] = remin;
                r2[k] = -remin;
                r3[k] = remin * self.r_fe - scav + ck.iron_source[k];
            }
        }
        let export = (1.0 - self.nu) * column_uptake;
        if export != 0.0 {
            for (k, w) in ck.export_weights.iter().enumerate() {
                r1[ck.export_start + k] += export * w;
            }
        }
        (export, export * ck.bottom_fraction)
    }
}

impl Rates {
    /// Uptake and its `y1` derivative in the euphotic cells of one column;
    /// returns the column integral `P`.
    #[allow(clippy::too_many_arguments)]
    pub fn uptake_with_slope(
        &self,
        ck: &ColumnCoefficients,
        cells: &[Cell],
        y1: &[f64],
        y3: &[f64],
        i_surface: f64,
        g: &mut [f64],
        dg: &mut [f64],
    ) -> f64 {
        g.fill(0.0);
        dg.fill(0.0);
        let mut total = 0.0;
        for k in 0..ck.n_euphotic {
            let light = i_surface * ck.light[k];
            g[k] = self.uptake(y1[k], y3[k], light);
            let h = 1e-7 * y1[k].abs().max(1e-3);
            dg[k] = (self.uptake(y1[k] + h, y3[k], light) - self.uptake(y1[k] - h, y3[k], light))
                / (2.0 * h);
            total += g[k] * cells[k].thickness();
        }
        total
    }

    /// Export source per cell for a column uptake integral `column_uptake`.
    pub fn export_into(&self, ck: &ColumnCoefficients, column_uptake: f64, e: &mut [f64]) {
        e.fill(0.0);
        let export = (1.0 - self.nu) * column_uptake;
        for (k, w) in ck.export_weights.iter().enumerate() {
            e[ck.export_start + k] = export * w;
        }
    }
}

/// Per-cell coefficients of one column that depend only on geometry and
/// parameters.
#[derive(Clone, Debug)]
pub(crate) struct ColumnCoefficients {
    pub n_euphotic: usize,
    /// `exp(-x3·K_W)` at euphotic layer midpoints.
    pub light: Vec<f64>,
    pub scavenging: Vec<f64>,
    pub iron_source: Vec<f64>,
    /// First cell (column-local) receiving export.
    pub export_start: usize,
    /// Export share per unit thickness for cells `export_start..`; the
    /// thickness-weighted sum is exactly the telescoped `1`.
    pub export_weights: Vec<f64>,
    pub bottom_fraction: f64,
}

impl ColumnCoefficients {
    pub fn new(
        col: &Column,
        cells: &[Cell],
        p: &ParameterSet,
        iron_source: &[f64],
    ) -> Self {
        let n = cells.len();
        let n_e = col.n_euphotic;
        let light = cells[..n_e]
            .iter()
            .map(|c| (-c.mid() * p.k_w).exp())
            .collect();
        let scavenging = cells
            .iter()
            .map(|c| scavenging_coefficient(c.mid(), p))
            .collect();
        let (export_start, export_weights, bottom_fraction) = if col.is_aphotic() {
            // Martin curve integrated exactly over each aphotic layer:
            // the layer receives q(z_top) - q(z_bot), q(z) = (z/h̄_e)^(-b),
            // and the floor cell additionally gets q(h).
            let q = |z: f64| (z / H_BAR_E).powf(-p.b);
            let mut w: Vec<f64> = cells[n_e..]
                .iter()
                .map(|c| (q(c.z_top) - q(c.z_bot)) / c.thickness())
                .collect();
            let bottom = q(col.depth);
            let last = w.len() - 1;
            w[last] += bottom / cells[n - 1].thickness();
            (n_e, w, bottom)
        } else {
            (n - 1, vec![1.0 / cells[n - 1].thickness()], 1.0)
        };
        Self {
            n_euphotic: n_e,
            light,
            scavenging,
            iron_source: iron_source.to_vec(),
            export_start,
            export_weights,
            bottom_fraction,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::ColumnSpec;

    const K11: f64 = 59874.14171519782; // e^11

    #[test]
    fn saturation_values() {
        let k = 0.7;
        assert_eq!(saturation(0.0, k).unwrap(), 0.0);
        assert_eq!(saturation(k, k).unwrap(), 0.5);
        assert_eq!(saturation(-k, k).unwrap(), -0.5);
        assert!(saturation(1.0, 0.0).is_err());
        assert!(saturation(1.0, -1.0).is_err());
    }

    #[test]
    fn light_values() {
        assert_eq!(attenuated_light(80.0, 0.0, 0.04, true), 80.0);
        assert_eq!(attenuated_light(80.0, 30.0, 0.04, false), 0.0);
        let v = attenuated_light(100.0, 50.0, 0.02, true);
        assert!((v - 36.787944117144232).abs() < 1e-12);
    }

    #[test]
    fn uptake_limits() {
        let p = ParameterSet::default();
        assert_eq!(uptake_g(0.0, 1.0, 100.0, 10.0, &p), 0.0);
        assert_eq!(uptake_g(1.0, 1.0, 0.0, 10.0, &p), 0.0);
        assert_eq!(uptake_g(1.0, 1.0, 100.0, 130.0, &p), 0.0);
        // light at depth equal to K_I, nutrients saturated
        let x3 = 20.0;
        let i_s = p.k_i * (x3 * p.k_w).exp();
        let g = uptake_g(1e15, 1e15, i_s, x3, &p);
        assert!((g - p.alpha / 2.0).abs() < 1e-12);
    }

    #[test]
    fn arctan_uptake_values() {
        let p = ParameterSet {
            k_f: 1e-300,
            k_i: 1e-300,
            ..Default::default()
        };
        assert_eq!(uptake_arctan(0.0, 1.0, 100.0, 0.0, &p, 0.6), 0.0);
        let v = uptake_arctan(1.0, 1.0, 100.0, 0.0, &p, 0.6);
        assert!((v - 0.47123889803846899).abs() < 1e-12);
        let v = uptake_arctan(1e18, 1.0, 100.0, 0.0, &p, 0.6);
        assert!((v - 0.94247779607693797).abs() < 1e-12);
    }

    #[test]
    fn free_iron_values() {
        assert_eq!(K11, 11f64.exp());
        assert_eq!(free_iron_original(0.0, K11, 1.0).unwrap(), 0.0);
        // 40-digit reference values of the closed form
        let fe1 = free_iron_original(1.0, K11, 1.0).unwrap();
        assert!((fe1 - 0.004078429120064258).abs() < 1e-15);
        let fe2 = free_iron_original(2.0, K11, 1.0).unwrap();
        assert!((fe2 - 1.0000167011429246).abs() < 1e-13);
        assert!((fe2 - (2.0 - 1.0 + fe1)).abs() < 2e-2);
        let fe_half = free_iron_original(0.5, K11, 1.0).unwrap();
        assert!((fe_half / 1.670058511480808e-5 - 1.0).abs() < 1e-12);
        let fe_m5 = free_iron_original(-5.0, K11, 1.0).unwrap();
        assert!((fe_m5 / -1.3918077534757333e-5 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn radicand_failure_is_reported() {
        // the minimum of the radicand over y3 is L_T/K, reached at
        // y3 = L_T - 1/K; with no ligand it touches zero
        assert_eq!(free_iron_radicand(-1.0, 1.0, 0.0), 0.0);
        assert!(free_iron_original(-1.0, 1.0, 0.0).is_err());
        assert!(free_iron_original(f64::NAN, K11, 1.0).is_err());
        let r = free_iron_radicand(0.2 - 1.0, 1.0, 0.2);
        assert!((r - 0.2).abs() < 1e-15);
    }

    #[test]
    fn adjusted_iron_values() {
        let fe1 = free_iron_original(1.0, K11, 1.0).unwrap();
        assert_eq!(free_iron_adjusted(1.0, K11, 1.0), fe1);
        assert_eq!(free_iron_adjusted(0.0, K11, 1.0), 0.0);
        let v = free_iron_adjusted(2.0, K11, 1.0);
        assert!((v - 1.0040784291200643).abs() < 1e-14);
    }

    #[test]
    fn adjusted_lies_slightly_above_for_positive_iron() {
        let mut max_gap: f64 = 0.0;
        for i in 0..=10_000 {
            let y = 10.0 * i as f64 / 10_000.0;
            let gap = free_iron_adjusted(y, K11, 1.0) - free_iron_original(y, K11, 1.0).unwrap();
            assert!(gap >= -1e-15, "gap {gap} at {y}");
            max_gap = max_gap.max(gap);
        }
        assert!(max_gap < 5e-3, "{max_gap}");
    }

    #[test]
    fn scavenging_variants() {
        let p = ParameterSet::default();
        for v in [IronVariant::Original, IronVariant::Adjusted] {
            assert_eq!(scavenging(0.0, 200.0, &p, v), 0.0);
        }
        let a = scavenging(p.l_t, 300.0, &p, IronVariant::Adjusted);
        let o = scavenging(p.l_t, 300.0, &p, IronVariant::Original);
        assert_eq!(a, o);
        let gap = |y: f64| {
            scavenging(y, 300.0, &p, IronVariant::Adjusted)
                - scavenging(y, 300.0, &p, IronVariant::Original)
        };
        assert!(gap(-5.0) < 0.0);
        assert!(gap(-10.0) < gap(-5.0));
        // adjusted term is coercive: J(y)·y ≥ C1 y² - C2 |y|
        let c1 = p.tau * p.k0 * p.c_p_floor.powf(p.phi)
            * (free_iron_adjusted(p.l_t, p.k_lig, p.l_t) / p.l_t).min(1.0);
        let c2 = scavenging_coefficient(0.0, &p) * p.l_t;
        for i in 0..2000 {
            let y = -50.0 + 0.05 * i as f64;
            for x3 in [10.0, 500.0, 4000.0] {
                let j = scavenging(y, x3, &p, IronVariant::Adjusted);
                assert!(j * y >= c1 * y * y - c2 * y.abs() - 1e-15);
            }
        }
    }

    #[test]
    fn particle_floor_holds() {
        let p = ParameterSet::default();
        assert_eq!(particle_concentration(0.0, &p), p.c_p0);
        assert_eq!(particle_concentration(1e9, &p), p.c_p_floor);
        assert!(particle_concentration(800.0, &p) < p.c_p0);
    }

    #[test]
    fn martin_values() {
        assert_eq!(martin_fraction(3000.0, 0.0).unwrap(), 0.0);
        assert_eq!(martin_fraction(H_BAR_E, 0.858).unwrap(), 0.0);
        let v = martin_fraction(2.0 * H_BAR_E, 0.858).unwrap();
        assert!((v - 0.44828312997902037).abs() < 1e-14);
        assert!(martin_fraction(100.0, 0.5).is_err());
    }

    fn one_column(depth: f64) -> Grid {
        Grid::new(vec![ColumnSpec {
            id: 0,
            lon: 0,
            lat: 0,
            area: 2.0,
            depth,
            layers: 12,
            interfaces: None,
        }])
        .unwrap()
    }

    #[test]
    fn zero_state_has_zero_tendencies() {
        let g = one_column(2000.0);
        let p = ParameterSet::default();
        let z = vec![0.0; 12];
        let r = reaction_tendencies(&g, 0, &z, &z, &z, 200.0, &z, &p, IronVariant::Adjusted)
            .unwrap();
        assert!(r.r1.iter().chain(&r.r2).chain(&r.r3).all(|&v| v == 0.0));
        assert_eq!(r.export_production, 0.0);
    }

    #[test]
    fn nu_one_switches_export_off() {
        let g = one_column(2000.0);
        let p = ParameterSet {
            nu: 1.0,
            ..Default::default()
        };
        let y1 = vec![1.0; 12];
        let y2 = vec![0.3; 12];
        let y3 = vec![0.5; 12];
        let src = vec![0.0; 12];
        let r = reaction_tendencies(&g, 0, &y1, &y2, &y3, 150.0, &src, &p, IronVariant::Adjusted)
            .unwrap();
        assert_eq!(r.export_production, 0.0);
        let col = &g.columns()[0];
        for k in col.n_euphotic..12 {
            assert_eq!(r.r1[k], p.lambda * y2[k]);
        }
    }

    #[test]
    fn column_export_identity_and_balance() {
        let p = ParameterSet {
            b: 1.3,
            ..Default::default()
        };
        for depth in [90.0, 121.0, 800.0, 4000.0] {
            let g = one_column(depth);
            let cells = &g.cells()[g.columns()[0].cells()];
            let n = cells.len();
            let y1: Vec<f64> = (0..n).map(|k| 0.2 + 0.1 * k as f64).collect();
            let y2: Vec<f64> = (0..n).map(|k| 0.05 * (k as f64 + 1.0)).collect();
            let y3 = vec![0.4; n];
            let src = vec![0.0; n];
            let r = reaction_tendencies(&g, 0, &y1, &y2, &y3, 180.0, &src, &p, IronVariant::Adjusted)
                .unwrap();
            // aphotic remineralization plus deposit equals the export
            let n_e = g.columns()[0].n_euphotic;
            let remin: f64 = (n_e..n)
                .map(|k| (r.r1[k] - p.lambda * y2[k]) * cells[k].thickness())
                .sum();
            if depth > H_BAR_E {
                assert!((remin - r.export_production).abs() <= 1e-14 * r.export_production);
                let frac = martin_fraction(depth, p.b).unwrap();
                assert!(
                    (r.bottom_deposit - r.export_production * (1.0 - frac)).abs()
                        <= 1e-14 * r.export_production
                );
            } else {
                assert_eq!(r.bottom_deposit, r.export_production);
            }
            let balance: f64 = (0..n)
                .map(|k| (r.r1[k] + r.r2[k]) * cells[k].volume)
                .sum();
            let scale: f64 = (0..n)
                .map(|k| (r.r1[k].abs() + r.r2[k].abs()) * cells[k].volume)
                .sum();
            assert!(balance.abs() <= 1e-13 * scale, "{depth}: {balance} vs {scale}");
        }
    }

    #[test]
    fn b_zero_sends_everything_to_the_floor() {
        let g = one_column(1000.0);
        let p = ParameterSet {
            b: 0.0,
            ..Default::default()
        };
        let n = g.n_cells();
        let y = vec![0.8; n];
        let src = vec![0.0; n];
        let r = reaction_tendencies(&g, 0, &y, &y, &y, 150.0, &src, &p, IronVariant::Adjusted)
            .unwrap();
        assert_eq!(r.bottom_deposit, r.export_production);
        let n_e = g.columns()[0].n_euphotic;
        for k in n_e..n - 1 {
            assert_eq!(r.r1[k], p.lambda * 0.8);
        }
    }

    #[test]
    fn shape_mismatch() {
        let g = one_column(500.0);
        let p = ParameterSet::default();
        let short = vec![0.0; 3];
        let ok = vec![0.0; 12];
        assert!(matches!(
            reaction_tendencies(&g, 0, &short, &ok, &ok, 1.0, &ok, &p, IronVariant::Original),
            Err(KernelError::ShapeMismatch { .. })
        ));
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn saturation_is_odd_and_bounded(x in -1e6f64..1e6, k in 1e-6f64..1e3) {
                let s = saturation(x, k).unwrap();
                prop_assert!(s.abs() < 1.0);
                prop_assert_eq!(s, -saturation(-x, k).unwrap());
            }

            #[test]
            fn uptake_bounded_by_alpha(y1 in -1e3f64..1e3, y3 in -1e3f64..1e3,
                                       i in 0.0f64..1e3, x3 in 0.0f64..200.0) {
                let p = ParameterSet::default();
                prop_assert!(uptake_g(y1, y3, i, x3, &p).abs() <= p.alpha);
            }

            #[test]
            fn adjusted_iron_monotone(a in -100.0f64..100.0, d in 1e-6f64..10.0) {
                let k = 11f64.exp();
                prop_assert!(free_iron_adjusted(a + d, k, 1.0) > free_iron_adjusted(a, k, 1.0));
            }
        }
    }
}
