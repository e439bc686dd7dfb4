//! Column/layer ocean domain, tracer state and the mass functional.
//!
//! Cells are stored column-major: all layers of column 0 (surface first),
//! then column 1, and so on. Every column whose depth exceeds the euphotic
//! reference depth has a layer interface exactly at that depth, so the
//! euphotic zone always ends on an interface.

use std::fmt::Write as _;

use thiserror::Error;

use crate::params::fmt_f64;

/// Reference depth of the euphotic zone (m).
pub const H_BAR_E: f64 = 120.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("column {0}: depth must be positive and finite")]
    BadDepth(usize),
    #[error("column {0}: area must be positive and finite")]
    BadArea(usize),
    #[error("column {0}: needs at least one layer")]
    NoLayers(usize),
    #[error("column {0}: layer interfaces must increase strictly from 0 to the depth")]
    BadInterfaces(usize),
    #[error("column {0}: euphotic base must coincide with a layer interface")]
    EuphoticNotOnInterface(usize),
    #[error("duplicate lattice position ({lon}, {lat})")]
    DuplicatePosition { lon: usize, lat: usize },
    #[error("grid has no columns")]
    Empty,
    #[error("state has {got} cells, grid has {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("mass must be nonnegative")]
    NegativeMass,
}

/// Input description of one surface column.
#[derive(Clone, Debug, PartialEq)]
pub struct ColumnSpec {
    pub id: usize,
    pub lon: usize,
    pub lat: usize,
    /// Horizontal area (m²). Only ratios between columns matter for
    /// transport; absolute values fix the unit of mass.
    pub area: f64,
    pub depth: f64,
    pub layers: usize,
    /// Explicit interfaces `0 = z_0 < … < z_n = depth`; generated when absent.
    pub interfaces: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Column {
    pub id: usize,
    pub lon: usize,
    pub lat: usize,
    pub area: f64,
    pub depth: f64,
    pub interfaces: Vec<f64>,
    /// Index of the surface cell in the flat cell arrays.
    pub first_cell: usize,
    pub n_euphotic: usize,
}

impl Column {
    pub fn n_layers(&self) -> usize {
        self.interfaces.len() - 1
    }

    pub fn cells(&self) -> std::ops::Range<usize> {
        self.first_cell..self.first_cell + self.n_layers()
    }

    /// `h_e = min(h̄_e, h)`.
    pub fn euphotic_depth(&self) -> f64 {
        self.depth.min(H_BAR_E)
    }

    /// Column reaches below the euphotic zone (surface part Ω′₂, boundary Γ₂).
    pub fn is_aphotic(&self) -> bool {
        self.depth > H_BAR_E
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cell {
    pub column: usize,
    pub layer: usize,
    pub z_top: f64,
    pub z_bot: f64,
    pub volume: f64,
    pub euphotic: bool,
}

impl Cell {
    pub fn thickness(&self) -> f64 {
        self.z_bot - self.z_top
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.z_top + self.z_bot)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    columns: Vec<Column>,
    cells: Vec<Cell>,
    volumes: Vec<f64>,
    total_volume: f64,
}

/// Default interfaces: uniform layers for shallow columns; for deep ones
/// 40 % of the layers share the euphotic zone evenly and the rest stretch
/// from `h̄_e` to the floor.
pub fn default_interfaces(depth: f64, layers: usize) -> Vec<f64> {
    let n = layers.max(1);
    if depth <= H_BAR_E || n == 1 {
        return (0..=n).map(|k| depth * k as f64 / n as f64).collect();
    }
    let n_e = ((n as f64 * 0.4).round() as usize).clamp(1, n - 1);
    let m = n - n_e;
    let mut z: Vec<f64> = (0..=n_e).map(|k| H_BAR_E * k as f64 / n_e as f64).collect();
    for i in 1..=m {
        let s = i as f64 / m as f64;
        let z_i = if i == m {
            depth
        } else {
            H_BAR_E + (depth - H_BAR_E) * 0.5 * (s + s * s)
        };
        z.push(z_i);
    }
    z
}

impl Grid {
    pub fn new(specs: Vec<ColumnSpec>) -> Result<Self, GridError> {
        if specs.is_empty() {
            return Err(GridError::Empty);
        }
        let mut seen = std::collections::HashSet::new();
        let mut columns = Vec::with_capacity(specs.len());
        let mut cells = Vec::new();
        for (ci, s) in specs.into_iter().enumerate() {
            if !(s.depth.is_finite() && s.depth > 0.0) {
                return Err(GridError::BadDepth(s.id));
            }
            if !(s.area.is_finite() && s.area > 0.0) {
                return Err(GridError::BadArea(s.id));
            }
            if !seen.insert((s.lon, s.lat)) {
                return Err(GridError::DuplicatePosition {
                    lon: s.lon,
                    lat: s.lat,
                });
            }
            let interfaces = match s.interfaces {
                Some(z) => z,
                None => {
                    if s.layers == 0 {
                        return Err(GridError::NoLayers(s.id));
                    }
                    default_interfaces(s.depth, s.layers)
                }
            };
            if interfaces.len() < 2 {
                return Err(GridError::NoLayers(s.id));
            }
            let monotone = interfaces.windows(2).all(|w| w[1] > w[0]);
            if interfaces[0] != 0.0 || !monotone || *interfaces.last().unwrap() != s.depth {
                return Err(GridError::BadInterfaces(s.id));
            }
            let h_e = s.depth.min(H_BAR_E);
            if s.depth > H_BAR_E && !interfaces.contains(&H_BAR_E) {
                return Err(GridError::EuphoticNotOnInterface(s.id));
            }
            let first_cell = cells.len();
            let mut n_euphotic = 0;
            for (k, w) in interfaces.windows(2).enumerate() {
                let euphotic = 0.5 * (w[0] + w[1]) < h_e;
                n_euphotic += usize::from(euphotic);
                cells.push(Cell {
                    column: ci,
                    layer: k,
                    z_top: w[0],
                    z_bot: w[1],
                    volume: s.area * (w[1] - w[0]),
                    euphotic,
                });
            }
            columns.push(Column {
                id: s.id,
                lon: s.lon,
                lat: s.lat,
                area: s.area,
                depth: s.depth,
                interfaces,
                first_cell,
                n_euphotic,
            });
        }
        let volumes: Vec<f64> = cells.iter().map(|c| c.volume).collect();
        let total_volume = volumes.iter().sum();
        Ok(Self {
            columns,
            cells,
            volumes,
            total_volume,
        })
    }

    /// The 8×4 surface, 15-layer desk domain. Columns at `lon = 0` form a
    /// shelf shallower than `h̄_e`; the rest reach 500–4000 m. All columns
    /// share one area chosen so the total volume is 1.
    pub fn desk() -> Self {
        const DEPTHS: [[f64; 4]; 8] = [
            [80.0, 100.0, 110.0, 90.0],
            [600.0, 800.0, 700.0, 500.0],
            [1500.0, 2000.0, 1800.0, 1200.0],
            [3000.0, 3500.0, 3200.0, 2500.0],
            [4000.0, 4000.0, 3800.0, 3000.0],
            [3800.0, 4000.0, 3600.0, 2800.0],
            [2500.0, 3000.0, 2600.0, 2000.0],
            [900.0, 1200.0, 1000.0, 700.0],
        ];
        let sum: f64 = DEPTHS.iter().flatten().sum();
        let area = 1.0 / sum;
        let mut specs = Vec::new();
        for (lon, row) in DEPTHS.iter().enumerate() {
            for (lat, &depth) in row.iter().enumerate() {
                specs.push(ColumnSpec {
                    id: specs.len(),
                    lon,
                    lat,
                    area,
                    depth,
                    layers: 15,
                    interfaces: None,
                });
            }
        }
        Self::new(specs).expect("desk grid is valid")
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn volumes(&self) -> &[f64] {
        &self.volumes
    }

    /// |Ω|.
    pub fn total_volume(&self) -> f64 {
        self.total_volume
    }

    /// Column at lattice position, if present.
    pub fn column_at(&self, lon: usize, lat: usize) -> Option<usize> {
        self.columns
            .iter()
            .position(|c| c.lon == lon && c.lat == lat)
    }

    pub fn check_shape(&self, state: &TracerState) -> Result<(), GridError> {
        for f in [&state.y1, &state.y2, &state.y3] {
            if f.len() != self.n_cells() {
                return Err(GridError::ShapeMismatch {
                    expected: self.n_cells(),
                    got: f.len(),
                });
            }
        }
        Ok(())
    }

    /// Plain-text column table.
    pub fn to_table(&self) -> String {
        let mut s = String::from("# column_id lon lat area depth layers\n");
        for c in &self.columns {
            let _ = writeln!(
                s,
                "{} {} {} {} {} {}",
                c.id,
                c.lon,
                c.lat,
                fmt_f64(c.area),
                fmt_f64(c.depth),
                c.n_layers()
            );
        }
        s
    }

    /// Parse the column table; layer interfaces use [`default_interfaces`].
    pub fn from_table(text: &str) -> Result<Self, GridError> {
        let mut specs = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let f: Vec<&str> = body.split_whitespace().collect();
            if f.len() != 6 {
                return Err(GridError::Parse {
                    line,
                    message: format!("expected 6 fields, found {}", f.len()),
                });
            }
            let int = |s: &str| {
                s.parse::<usize>().map_err(|_| GridError::Parse {
                    line,
                    message: format!("bad integer `{s}`"),
                })
            };
            let float = |s: &str| {
                s.parse::<f64>().map_err(|_| GridError::Parse {
                    line,
                    message: format!("bad number `{s}`"),
                })
            };
            specs.push(ColumnSpec {
                id: int(f[0])?,
                lon: int(f[1])?,
                lat: int(f[2])?,
                area: float(f[3])?,
                depth: float(f[4])?,
                layers: int(f[5])?,
                interfaces: None,
            });
        }
        Self::new(specs)
    }
}

/// Concentrations of phosphate (`y1`), DOP (`y2`) and iron (`y3`) per cell.
#[derive(Clone, Debug, PartialEq)]
pub struct TracerState {
    pub y1: Vec<f64>,
    pub y2: Vec<f64>,
    pub y3: Vec<f64>,
    /// Days.
    pub time: f64,
}

impl TracerState {
    pub fn zeros(n: usize) -> Self {
        Self {
            y1: vec![0.0; n],
            y2: vec![0.0; n],
            y3: vec![0.0; n],
            time: 0.0,
        }
    }

    pub fn n_cells(&self) -> usize {
        self.y1.len()
    }

    pub fn is_finite(&self) -> bool {
        self.y1
            .iter()
            .chain(&self.y2)
            .chain(&self.y3)
            .all(|v| v.is_finite())
    }

    pub fn fields(&self) -> [&[f64]; 3] {
        [&self.y1, &self.y2, &self.y3]
    }

    /// Snapshot CSV: `cell_id,y1,y2,y3`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("cell_id,y1,y2,y3\n");
        for i in 0..self.n_cells() {
            let _ = writeln!(
                s,
                "{i},{},{},{}",
                fmt_f64(self.y1[i]),
                fmt_f64(self.y2[i]),
                fmt_f64(self.y3[i])
            );
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self, GridError> {
        let mut st = TracerState::zeros(0);
        for (i, raw) in text.lines().enumerate().skip(1) {
            let body = raw.trim();
            if body.is_empty() {
                continue;
            }
            let f: Vec<&str> = body.split(',').collect();
            let parse = |s: &str| {
                s.trim().parse::<f64>().map_err(|_| GridError::Parse {
                    line: i + 1,
                    message: format!("bad number `{s}`"),
                })
            };
            if f.len() != 4 {
                return Err(GridError::Parse {
                    line: i + 1,
                    message: "expected cell_id,y1,y2,y3".into(),
                });
            }
            st.y1.push(parse(f[1])?);
            st.y2.push(parse(f[2])?);
            st.y3.push(parse(f[3])?);
        }
        Ok(st)
    }
}

/// Volume-weighted phosphorus mass Σ (y1 + y2)·V; iron excluded.
pub fn total_mass(state: &TracerState, g: &Grid) -> Result<f64, GridError> {
    g.check_shape(state)?;
    Ok(phosphorus_mass(&state.y1, &state.y2, g.volumes()))
}

pub(crate) fn phosphorus_mass(y1: &[f64], y2: &[f64], vol: &[f64]) -> f64 {
    y1.iter()
        .zip(y2)
        .zip(vol)
        .map(|((a, b), v)| (a + b) * v)
        .sum()
}

pub(crate) fn weighted_sum(y: &[f64], vol: &[f64]) -> f64 {
    y.iter().zip(vol).map(|(a, v)| a * v).sum()
}

/// Default uniform iron concentration for generated initial states.
pub const DEFAULT_IRON: f64 = 0.6;

/// `y1 = C/|Ω|`, `y2 = 0`, `y3 =` [`DEFAULT_IRON`].
pub fn uniform_state_with_mass(mass: f64, g: &Grid) -> Result<TracerState, GridError> {
    uniform_state_with_mass_and_iron(mass, DEFAULT_IRON, g)
}

pub fn uniform_state_with_mass_and_iron(
    mass: f64,
    iron: f64,
    g: &Grid,
) -> Result<TracerState, GridError> {
    if !(mass >= 0.0) {
        return Err(GridError::NegativeMass);
    }
    let n = g.n_cells();
    let c = mass / g.total_volume();
    Ok(TracerState {
        y1: vec![c; n],
        y2: vec![0.0; n],
        y3: vec![if mass == 0.0 { 0.0 } else { iron }; n],
        time: 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_grid_shape() {
        let g = Grid::desk();
        assert_eq!(g.columns().len(), 32);
        assert_eq!(g.n_cells(), 480);
        assert!((g.total_volume() - 1.0).abs() < 1e-14);
        assert!(g.columns().iter().any(|c| !c.is_aphotic()));
        assert!(g.columns().iter().any(|c| c.is_aphotic()));
    }

    #[test]
    fn layers_sum_to_depth_and_mask_matches_h_e() {
        let g = Grid::desk();
        for c in g.columns() {
            let total: f64 = g.cells()[c.cells()].iter().map(|x| x.thickness()).sum();
            assert!((total - c.depth).abs() < 1e-9 * c.depth);
            let h_e = c.euphotic_depth();
            for cell in &g.cells()[c.cells()] {
                assert_eq!(cell.euphotic, cell.mid() < h_e);
            }
            let euph: f64 = g.cells()[c.cells()]
                .iter()
                .filter(|x| x.euphotic)
                .map(|x| x.thickness())
                .sum();
            assert!((euph - h_e).abs() < 1e-9);
            assert_eq!(c.is_aphotic(), c.depth > H_BAR_E);
        }
    }

    #[test]
    fn rejects_bad_columns() {
        let spec = |depth: f64, interfaces: Option<Vec<f64>>| ColumnSpec {
            id: 0,
            lon: 0,
            lat: 0,
            area: 1.0,
            depth,
            layers: 3,
            interfaces,
        };
        assert_eq!(Grid::new(vec![spec(0.0, None)]), Err(GridError::BadDepth(0)));
        assert_eq!(
            Grid::new(vec![spec(200.0, Some(vec![0.0, 100.0, 200.0]))]),
            Err(GridError::EuphoticNotOnInterface(0))
        );
        assert_eq!(
            Grid::new(vec![spec(100.0, Some(vec![0.0, 60.0, 50.0, 100.0]))]),
            Err(GridError::BadInterfaces(0))
        );
        assert_eq!(Grid::new(vec![]), Err(GridError::Empty));
    }

    #[test]
    fn mass_of_trivial_states() {
        let g = Grid::desk();
        let z = TracerState::zeros(g.n_cells());
        assert_eq!(total_mass(&z, &g).unwrap(), 0.0);
        let mut s = z.clone();
        s.y1.iter_mut().for_each(|v| *v = 3.0);
        let m = total_mass(&s, &g).unwrap();
        assert!((m - 3.0 * g.total_volume()).abs() < 1e-13);
        let short = TracerState::zeros(3);
        assert!(matches!(
            total_mass(&short, &g),
            Err(GridError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn uniform_state_cases() {
        let g = Grid::desk();
        let z = uniform_state_with_mass(0.0, &g).unwrap();
        assert!(z.y1.iter().chain(&z.y2).chain(&z.y3).all(|&v| v == 0.0));
        let s = uniform_state_with_mass(2.5, &g).unwrap();
        let m = total_mass(&s, &g).unwrap();
        assert!((m - 2.5).abs() <= 1e-12 * 2.5);
        assert_eq!(
            uniform_state_with_mass(-1.0, &g),
            Err(GridError::NegativeMass)
        );
        let unit = Grid::new(vec![ColumnSpec {
            id: 0,
            lon: 0,
            lat: 0,
            area: 0.01,
            depth: 100.0,
            layers: 4,
            interfaces: None,
        }])
        .unwrap();
        let s = uniform_state_with_mass(1.0, &unit).unwrap();
        assert!(s.y1.iter().all(|&v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn table_round_trip() {
        let g = Grid::desk();
        let back = Grid::from_table(&g.to_table()).unwrap();
        assert_eq!(back, g);
        assert!(matches!(
            Grid::from_table("0 0 0 1.0 100"),
            Err(GridError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn snapshot_csv_round_trip() {
        let g = Grid::desk();
        let mut s = uniform_state_with_mass(1.3, &g).unwrap();
        s.y2[7] = 1.0 / 3.0;
        let back = TracerState::from_csv(&s.to_csv()).unwrap();
        assert_eq!(back.y1, s.y1);
        assert_eq!(back.y2, s.y2);
        assert_eq!(back.y3, s.y3);
    }
}
