//! Surface insolation and aeolian iron deposition.

use std::f64::consts::PI;

use crate::grid::Grid;
use crate::params::ParameterSet;

/// Where the iron source `beta·F_in` is deposited inside a column.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SourceSpread {
    /// Spread evenly over the euphotic depth.
    #[default]
    Euphotic,
    /// Entirely into the surface cell.
    Surface,
}

impl SourceSpread {
    pub fn name(self) -> &'static str {
        match self {
            SourceSpread::Euphotic => "euphotic",
            SourceSpread::Surface => "surface",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "euphotic" => Some(SourceSpread::Euphotic),
            "surface" => Some(SourceSpread::Surface),
            _ => None,
        }
    }
}

/// Forcing configuration as it appears in a scenario file.
#[derive(Clone, Debug, PartialEq)]
pub struct ForcingSettings {
    /// Mean surface irradiance (W m⁻²).
    pub i0: f64,
    /// Relative seasonal amplitude at the poles.
    pub seasonal_amplitude: f64,
    /// Day of the northern summer solstice.
    pub solstice_day: f64,
    /// Latitude of lattice row 0 (degrees).
    pub lat_origin: f64,
    /// Latitude spacing between lattice rows (degrees).
    pub lat_step: f64,
    /// Constant deposition (concentration·m/day) for every column.
    pub f_in: f64,
    pub source_spread: SourceSpread,
}

impl Default for ForcingSettings {
    fn default() -> Self {
        Self {
            i0: 100.0,
            seasonal_amplitude: 0.6,
            solstice_day: 172.0,
            lat_origin: -45.0,
            lat_step: 30.0,
            f_in: 30.0,
            source_spread: SourceSpread::Euphotic,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Forcing {
    pub i0: f64,
    pub amplitude: f64,
    pub solstice_day: f64,
    pub period: f64,
    /// Degrees, one per column.
    pub latitudes: Vec<f64>,
    /// Deposition per column.
    pub f_in: Vec<f64>,
    pub spread: SourceSpread,
    /// Replace insolation by its annual mean.
    pub frozen: bool,
}

impl Forcing {
    pub fn new(g: &Grid, s: &ForcingSettings, period: f64) -> Self {
        Self {
            i0: s.i0,
            amplitude: s.seasonal_amplitude,
            solstice_day: s.solstice_day,
            period,
            latitudes: g
                .columns()
                .iter()
                .map(|c| s.lat_origin + s.lat_step * c.lat as f64)
                .collect(),
            f_in: vec![s.f_in; g.columns().len()],
            spread: s.source_spread,
            frozen: false,
        }
    }

    /// Same forcing with insolation held at its annual mean.
    pub fn frozen(&self) -> Self {
        Self {
            frozen: true,
            ..self.clone()
        }
    }

    fn seasonal_coefficient(&self, column: usize) -> f64 {
        self.amplitude * self.latitudes[column].to_radians().sin()
    }

    /// `I0·max(0, 1 + a·sin(lat)·cos(2π(t - t_s)/T))`; periodic in `t`.
    pub fn seasonal_insolation(&self, column: usize, t: f64) -> f64 {
        if self.frozen {
            return self.annual_mean_insolation(column);
        }
        let c = self.seasonal_coefficient(column);
        let phase = 2.0 * PI * (t - self.solstice_day).rem_euclid(self.period) / self.period;
        self.i0 * (1.0 + c * phase.cos()).max(0.0)
    }

    /// Exact annual mean of [`Self::seasonal_insolation`], including the
    /// clipped case `|a·sin(lat)| > 1`.
    pub fn annual_mean_insolation(&self, column: usize) -> f64 {
        let c = self.seasonal_coefficient(column).abs();
        if c <= 1.0 {
            self.i0
        } else {
            let theta = (-1.0 / c).acos();
            self.i0 * (theta + c * theta.sin()) / PI
        }
    }

    /// Insolation of every column at time `t`.
    pub fn insolation_into(&self, t: f64, out: &mut [f64]) {
        for (c, o) in out.iter_mut().enumerate() {
            *o = self.seasonal_insolation(c, t);
        }
    }

    /// Source `S_Fe` of one cell: `beta·F_in` spread over the euphotic
    /// depth (or the surface cell), zero below.
    pub fn iron_source(&self, g: &Grid, cell: usize, p: &ParameterSet) -> f64 {
        let c = &g.cells()[cell];
        if !c.euphotic {
            return 0.0;
        }
        let col = &g.columns()[c.column];
        let flux = p.beta * self.f_in[c.column];
        match self.spread {
            SourceSpread::Euphotic => flux / col.euphotic_depth(),
            SourceSpread::Surface if c.layer == 0 => flux / c.thickness(),
            SourceSpread::Surface => 0.0,
        }
    }

    pub fn iron_source_field(&self, g: &Grid, p: &ParameterSet) -> Vec<f64> {
        (0..g.n_cells()).map(|i| self.iron_source(g, i, p)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::ColumnSpec;

    fn desk_forcing(s: ForcingSettings) -> (Grid, Forcing) {
        let g = Grid::desk();
        let f = Forcing::new(&g, &s, 360.0);
        (g, f)
    }

    #[test]
    fn zero_amplitude_is_constant() {
        let (g, f) = desk_forcing(ForcingSettings {
            seasonal_amplitude: 0.0,
            ..Default::default()
        });
        for c in 0..g.columns().len() {
            for t in [0.0, 47.5, 200.0, 359.9] {
                assert_eq!(f.seasonal_insolation(c, t), f.i0);
            }
        }
    }

    #[test]
    fn insolation_is_periodic() {
        let (_, f) = desk_forcing(ForcingSettings::default());
        for t in [0.0, 13.25, 181.0, 300.5] {
            let a = f.seasonal_insolation(5, t);
            let b = f.seasonal_insolation(5, t + f.period);
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn antisymmetric_latitudes_sum_to_twice_the_mean() {
        let (g, f) = desk_forcing(ForcingSettings::default());
        // rows 0 and 3 sit at -45 and +45 degrees
        let south = g.column_at(2, 0).unwrap();
        let north = g.column_at(2, 3).unwrap();
        let t = f.solstice_day;
        let sum = f.seasonal_insolation(south, t) + f.seasonal_insolation(north, t);
        let mean = f.annual_mean_insolation(south);
        assert!((sum - 2.0 * mean).abs() < 1e-12);
        assert!(f.seasonal_insolation(north, t) > f.seasonal_insolation(south, t));
    }

    #[test]
    fn annual_mean_matches_quadrature() {
        for amp in [0.5, 1.8] {
            let (_, f) = desk_forcing(ForcingSettings {
                seasonal_amplitude: amp,
                ..Default::default()
            });
            let n = 200_000;
            let q: f64 = (0..n)
                .map(|i| f.seasonal_insolation(0, (i as f64 + 0.5) * f.period / n as f64))
                .sum::<f64>()
                / n as f64;
            assert!((q - f.annual_mean_insolation(0)).abs() < 1e-6 * f.i0);
            assert_eq!(f.frozen().seasonal_insolation(0, 10.0), f.annual_mean_insolation(0));
        }
    }

    #[test]
    fn iron_source_cases() {
        let p = ParameterSet::default();
        let (g, f) = desk_forcing(ForcingSettings::default());
        for (i, c) in g.cells().iter().enumerate() {
            if !c.euphotic {
                assert_eq!(f.iron_source(&g, i, &p), 0.0);
            }
        }
        let (g0, f0) = desk_forcing(ForcingSettings {
            f_in: 0.0,
            ..Default::default()
        });
        assert!(f0.iron_source_field(&g0, &p).iter().all(|&v| v == 0.0));
        // column-integrated source equals beta·F_in·area
        let src = f.iron_source_field(&g, &p);
        for col in g.columns() {
            let total: f64 = col.cells().map(|i| src[i] * g.cells()[i].volume).sum();
            let expect = p.beta * f.f_in[0] * col.area;
            assert!((total - expect).abs() <= 1e-14 * expect);
        }
    }

    #[test]
    fn column_source_is_refinement_invariant() {
        let p = ParameterSet::default();
        let mut totals = Vec::new();
        for layers in [3, 7, 15, 40] {
            for spread in [SourceSpread::Euphotic, SourceSpread::Surface] {
                let g = Grid::new(vec![ColumnSpec {
                    id: 0,
                    lon: 0,
                    lat: 0,
                    area: 3.0,
                    depth: 2500.0,
                    layers,
                    interfaces: None,
                }])
                .unwrap();
                let f = Forcing::new(
                    &g,
                    &ForcingSettings {
                        source_spread: spread,
                        ..Default::default()
                    },
                    360.0,
                );
                let src = f.iron_source_field(&g, &p);
                totals.push(
                    src.iter()
                        .zip(g.volumes())
                        .map(|(s, v)| s * v)
                        .sum::<f64>(),
                );
            }
        }
        for t in &totals {
            assert!((t - totals[0]).abs() <= 1e-13 * totals[0]);
        }
    }
}
