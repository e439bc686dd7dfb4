//! Scenario files: INI sections `[parameters]`, `[grid]`, `[transport]`,
//! `[forcing]` and `[solver]`. Keys match field names; anything unknown is
//! rejected with its line number.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndopfe::forcing::{Forcing, ForcingSettings, SourceSpread};
use ndopfe::grid::{Grid, GridError};
use ndopfe::kernels::IronVariant;
use ndopfe::par::Execution;
use ndopfe::params::{self, fmt_f64, ConfigError, Entry, ParameterSet};
use ndopfe::solvers::{Acceleration, Model, SolverError, SolverSettings, TransportMode};
use ndopfe::transport::{build_synthetic, SyntheticCirculation, TransportError, TransportOperator};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

impl ScenarioError {
    /// Errors in the scenario itself, as opposed to failures while running.
    pub fn is_config(&self) -> bool {
        !matches!(self, ScenarioError::Solver(SolverError::NonFinite(_)))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum GridSource {
    Desk,
    /// Column table file.
    Table(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub enum TransportSource {
    Synthetic(SyntheticCirculation),
    /// One sparse-operator file per snapshot.
    Files(Vec<PathBuf>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub grid: GridSource,
    pub transport: TransportSource,
    pub forcing: ForcingSettings,
    pub params: ParameterSet,
    pub solver: SolverSettings,
    pub iron_variant: IronVariant,
    /// Total phosphorus for spin-up and stationary runs.
    pub mass: f64,
    pub output_dir: PathBuf,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            grid: GridSource::Desk,
            transport: TransportSource::Synthetic(SyntheticCirculation::default()),
            forcing: ForcingSettings::default(),
            params: ParameterSet::default(),
            solver: SolverSettings::default(),
            iron_variant: IronVariant::default(),
            mass: 1.0,
            output_dir: PathBuf::from("runs"),
        }
    }
}

fn number(e: &Entry) -> Result<f64, ConfigError> {
    e.value.parse().map_err(|_| ConfigError::BadNumber {
        key: e.key.clone(),
        value: e.value.clone(),
        line: e.line,
    })
}

fn count(e: &Entry) -> Result<usize, ConfigError> {
    e.value.parse().map_err(|_| ConfigError::BadNumber {
        key: e.key.clone(),
        value: e.value.clone(),
        line: e.line,
    })
}

fn invalid(e: &Entry, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: e.key.clone(),
        message: message.into(),
        line: e.line,
    }
}

fn unknown(e: &Entry) -> ConfigError {
    ConfigError::UnknownKey {
        key: e.key.clone(),
        line: e.line,
    }
}

fn flag(e: &Entry) -> Result<bool, ConfigError> {
    match e.value.as_str() {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(invalid(e, format!("`{}` expects true or false", e.key))),
    }
}

fn resolve(base: &Path, value: &str) -> PathBuf {
    let p = PathBuf::from(value);
    if p.is_absolute() {
        p
    } else {
        base.join(p)
    }
}

const SECTIONS: [&str; 5] = ["parameters", "grid", "transport", "forcing", "solver"];

/// Parse a scenario; relative paths are taken relative to `base`.
pub fn parse_scenario(text: &str, base: &Path) -> Result<Scenario, ConfigError> {
    let mut sections: Vec<(String, Vec<Entry>)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let trimmed = raw.trim();
        if let Some(name) = trimmed.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            let name = name.trim();
            if !SECTIONS.contains(&name) {
                return Err(ConfigError::UnknownSection {
                    section: name.to_string(),
                    line: i + 1,
                });
            }
            if sections.iter().any(|(s, _)| s == name) {
                return Err(ConfigError::Syntax {
                    text: format!("section [{name}] appears twice"),
                    line: i + 1,
                });
            }
            sections.push((name.to_string(), Vec::new()));
            continue;
        }
        let entries = params::parse_entries(raw, i)?;
        if entries.is_empty() {
            continue;
        }
        let Some((_, list)) = sections.last_mut() else {
            return Err(ConfigError::Syntax {
                text: trimmed.to_string(),
                line: i + 1,
            });
        };
        if let Some(prev) = list.iter().find(|e| e.key == entries[0].key) {
            let _ = prev;
            return Err(ConfigError::Duplicate {
                key: entries[0].key.clone(),
                line: i + 1,
            });
        }
        list.extend(entries);
    }

    let mut sc = Scenario {
        output_dir: base.join("runs"),
        ..Scenario::default()
    };
    let mut circulation = SyntheticCirculation::default();
    let mut files: Option<Vec<PathBuf>> = None;
    let mut source_synthetic = true;
    let mut anderson_depth = 10;
    let mut anderson = false;
    for (name, entries) in &sections {
        match name.as_str() {
            "parameters" => sc.params = params::apply_entries(ParameterSet::default(), entries)?,
            "grid" => {
                let mut table = None;
                let mut kind = None;
                for e in entries {
                    match e.key.as_str() {
                        "source" => kind = Some((e.value.clone(), e.clone())),
                        "table" => table = Some(resolve(base, &e.value)),
                        _ => return Err(unknown(e)),
                    }
                }
                sc.grid = match kind {
                    None => match table {
                        Some(t) => GridSource::Table(t),
                        None => GridSource::Desk,
                    },
                    Some((k, e)) => match k.as_str() {
                        "desk" => GridSource::Desk,
                        "table" => GridSource::Table(
                            table.ok_or_else(|| invalid(&e, "grid source `table` needs `table = <file>`"))?,
                        ),
                        _ => return Err(invalid(&e, "grid source must be desk or table")),
                    },
                };
            }
            "transport" => {
                for e in entries {
                    match e.key.as_str() {
                        "source" => {
                            source_synthetic = match e.value.as_str() {
                                "synthetic" => true,
                                "files" => false,
                                _ => return Err(invalid(e, "transport source must be synthetic or files")),
                            }
                        }
                        "files" => {
                            files = Some(
                                e.value
                                    .split(',')
                                    .map(str::trim)
                                    .filter(|s| !s.is_empty())
                                    .map(|s| resolve(base, s))
                                    .collect(),
                            )
                        }
                        "gyre_strength" => circulation.gyre_strength = number(e)?,
                        "kappa" => circulation.kappa = number(e)?,
                        "lateral_spacing" => circulation.lateral_spacing = number(e)?,
                        "overturning_ratio" => circulation.overturning_ratio = number(e)?,
                        "max_exchange_rate" => circulation.max_exchange_rate = number(e)?,
                        "seasonal_modulation" => circulation.seasonal_modulation = number(e)?,
                        "snapshots" => circulation.snapshots = count(e)?,
                        _ => return Err(unknown(e)),
                    }
                }
            }
            "forcing" => {
                let f = &mut sc.forcing;
                for e in entries {
                    match e.key.as_str() {
                        "i0" => f.i0 = number(e)?,
                        "seasonal_amplitude" => f.seasonal_amplitude = number(e)?,
                        "solstice_day" => f.solstice_day = number(e)?,
                        "lat_origin" => f.lat_origin = number(e)?,
                        "lat_step" => f.lat_step = number(e)?,
                        "f_in" => f.f_in = number(e)?,
                        "source_spread" => {
                            f.source_spread = SourceSpread::parse(&e.value)
                                .ok_or_else(|| invalid(e, "source_spread must be euphotic or surface"))?
                        }
                        _ => return Err(unknown(e)),
                    }
                }
            }
            "solver" => {
                let s = &mut sc.solver;
                for e in entries {
                    match e.key.as_str() {
                        "dt" => s.dt = number(e)?,
                        "period" => s.period = number(e)?,
                        "transport_mode" => {
                            s.transport_mode = TransportMode::parse(&e.value)
                                .ok_or_else(|| invalid(e, "transport_mode must be explicit or implicit"))?
                        }
                        "clip" => s.clip = flag(e)?,
                        "tol" => s.tol = number(e)?,
                        "max_cycles" => s.max_cycles = count(e)?,
                        "stationary_tol" => s.stationary_tol = number(e)?,
                        "max_iters" => s.max_iters = count(e)?,
                        "acceleration" => {
                            anderson = match e.value.as_str() {
                                "none" => false,
                                "anderson" => true,
                                _ => return Err(invalid(e, "acceleration must be none or anderson")),
                            }
                        }
                        "anderson_depth" => anderson_depth = count(e)?,
                        "execution" => {
                            s.execution = match e.value.as_str() {
                                "sequential" => Execution::Sequential,
                                "parallel" => Execution::Parallel,
                                _ => return Err(invalid(e, "execution must be sequential or parallel")),
                            }
                        }
                        "iron_variant" => {
                            sc.iron_variant = match e.value.as_str() {
                                "adjusted" => IronVariant::Adjusted,
                                "original" => IronVariant::Original,
                                _ => return Err(invalid(e, "iron_variant must be adjusted or original")),
                            }
                        }
                        "mass" => sc.mass = number(e)?,
                        "output_dir" => sc.output_dir = resolve(base, &e.value),
                        _ => return Err(unknown(e)),
                    }
                }
                if let Err(SolverError::Settings(m)) = s.validate() {
                    return Err(ConfigError::Invalid {
                        key: "solver".into(),
                        message: m,
                        line: entries.first().map_or(0, |e| e.line),
                    });
                }
            }
            _ => unreachable!("section names are checked above"),
        }
    }
    if anderson {
        sc.solver.acceleration = Acceleration::Anderson {
            depth: anderson_depth,
        };
    }
    circulation.period = sc.solver.period;
    sc.transport = if source_synthetic {
        TransportSource::Synthetic(circulation)
    } else {
        TransportSource::Files(files.unwrap_or_default())
    };
    Ok(sc)
}

/// Read and parse a scenario file.
pub fn load_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = fs::read_to_string(path).map_err(|e| ScenarioError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    Ok(parse_scenario(&text, base)?)
}

fn read(path: &Path) -> Result<String, ScenarioError> {
    fs::read_to_string(path).map_err(|e| ScenarioError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

impl Scenario {
    pub fn build_grid(&self) -> Result<Grid, ScenarioError> {
        Ok(match &self.grid {
            GridSource::Desk => Grid::desk(),
            GridSource::Table(p) => Grid::from_table(&read(p)?)?,
        })
    }

    /// Transport operator plus construction warnings.
    pub fn build_transport(&self, grid: &Grid) -> Result<(TransportOperator, Vec<String>), ScenarioError> {
        match &self.transport {
            TransportSource::Synthetic(s) => {
                let b = build_synthetic(grid, s)?;
                Ok((b.operator, b.warnings))
            }
            TransportSource::Files(paths) => {
                let texts = paths.iter().map(|p| read(p)).collect::<Result<Vec<_>, _>>()?;
                Ok((TransportOperator::from_snapshot_texts(&texts)?, Vec::new()))
            }
        }
    }

    pub fn build_model(&self) -> Result<(Model, Vec<String>), ScenarioError> {
        let grid = self.build_grid()?;
        let (op, warnings) = self.build_transport(&grid)?;
        let forcing = Forcing::new(&grid, &self.forcing, self.solver.period);
        let mut m = Model::new(grid, op, forcing, self.params.clone())?;
        m.variant = self.iron_variant;
        Ok((m, warnings))
    }

    /// Fully resolved scenario; parses back to an equal value.
    pub fn to_ini(&self) -> String {
        let mut s = String::from("[parameters]\n");
        s.push_str(&params::serialize(&self.params));
        s.push_str("\n[grid]\n");
        match &self.grid {
            GridSource::Desk => s.push_str("source = desk\n"),
            GridSource::Table(p) => {
                let _ = writeln!(s, "source = table\ntable = {}", p.display());
            }
        }
        s.push_str("\n[transport]\n");
        match &self.transport {
            TransportSource::Synthetic(c) => {
                let _ = writeln!(s, "source = synthetic");
                for (k, v) in [
                    ("gyre_strength", c.gyre_strength),
                    ("kappa", c.kappa),
                    ("lateral_spacing", c.lateral_spacing),
                    ("overturning_ratio", c.overturning_ratio),
                    ("max_exchange_rate", c.max_exchange_rate),
                    ("seasonal_modulation", c.seasonal_modulation),
                ] {
                    let _ = writeln!(s, "{k} = {}", fmt_f64(v));
                }
                let _ = writeln!(s, "snapshots = {}", c.snapshots);
            }
            TransportSource::Files(files) => {
                let list: Vec<String> = files.iter().map(|p| p.display().to_string()).collect();
                let _ = writeln!(s, "source = files\nfiles = {}", list.join(", "));
            }
        }
        let f = &self.forcing;
        s.push_str("\n[forcing]\n");
        for (k, v) in [
            ("i0", f.i0),
            ("seasonal_amplitude", f.seasonal_amplitude),
            ("solstice_day", f.solstice_day),
            ("lat_origin", f.lat_origin),
            ("lat_step", f.lat_step),
            ("f_in", f.f_in),
        ] {
            let _ = writeln!(s, "{k} = {}", fmt_f64(v));
        }
        let _ = writeln!(s, "source_spread = {}", f.source_spread.name());
        let v = &self.solver;
        s.push_str("\n[solver]\n");
        let _ = writeln!(s, "dt = {}", fmt_f64(v.dt));
        let _ = writeln!(s, "period = {}", fmt_f64(v.period));
        let _ = writeln!(s, "transport_mode = {}", v.transport_mode.name());
        let _ = writeln!(s, "clip = {}", v.clip);
        let _ = writeln!(s, "tol = {}", fmt_f64(v.tol));
        let _ = writeln!(s, "max_cycles = {}", v.max_cycles);
        let _ = writeln!(s, "stationary_tol = {}", fmt_f64(v.stationary_tol));
        let _ = writeln!(s, "max_iters = {}", v.max_iters);
        match v.acceleration {
            Acceleration::None => s.push_str("acceleration = none\n"),
            Acceleration::Anderson { depth } => {
                let _ = writeln!(s, "acceleration = anderson\nanderson_depth = {depth}");
            }
        }
        let exec = match v.execution {
            Execution::Sequential => "sequential",
            Execution::Parallel => "parallel",
        };
        let _ = writeln!(s, "execution = {exec}");
        let variant = match self.iron_variant {
            IronVariant::Adjusted => "adjusted",
            IronVariant::Original => "original",
        };
        let _ = writeln!(s, "iron_variant = {variant}");
        let _ = writeln!(s, "mass = {}", fmt_f64(self.mass));
        let _ = writeln!(s, "output_dir = {}", self.output_dir.display());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        let sc = parse_scenario("", Path::new("/base")).unwrap();
        assert_eq!(sc.output_dir, Path::new("/base/runs"));
        assert_eq!(
            sc,
            Scenario {
                output_dir: PathBuf::from("/base/runs"),
                ..Scenario::default()
            }
        );
    }

    #[test]
    fn resolved_form_round_trips() {
        let text = "[parameters]\nlambda = 0.03\n[solver]\ndt = 0.25\nacceleration = anderson\nanderson_depth = 4\nexecution = sequential\n[transport]\nkappa = 5\n[forcing]\nsource_spread = surface\n";
        let sc = parse_scenario(text, Path::new("/x")).unwrap();
        assert_eq!(sc.params.lambda, 0.03);
        assert_eq!(sc.solver.acceleration, Acceleration::Anderson { depth: 4 });
        let again = parse_scenario(&sc.to_ini(), Path::new("/x")).unwrap();
        assert_eq!(again, sc);
        assert_eq!(again.to_ini(), sc.to_ini());
    }

    #[test]
    fn unknown_key_reports_line() {
        let err = parse_scenario("[solver]\n\ndtt = 1\n", Path::new(".")).unwrap_err();
        assert_eq!(
            err,
            ConfigError::UnknownKey {
                key: "dtt".into(),
                line: 3
            }
        );
        let err = parse_scenario("[parameters]\nlambda = 1\nlamda = 2\n", Path::new(".")).unwrap_err();
        assert!(matches!(err, ConfigError::UnknownKey { line: 3, .. }));
    }

    #[test]
    fn unknown_section_and_stray_keys() {
        assert!(matches!(
            parse_scenario("[output]\n", Path::new(".")),
            Err(ConfigError::UnknownSection { line: 1, .. })
        ));
        assert!(matches!(
            parse_scenario("dt = 1\n", Path::new(".")),
            Err(ConfigError::Syntax { line: 1, .. })
        ));
        assert!(matches!(
            parse_scenario("[solver]\ndt = 1\ndt = 2\n", Path::new(".")),
            Err(ConfigError::Duplicate { line: 3, .. })
        ));
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(parse_scenario("[solver]\ndt = -1\n", Path::new(".")).is_err());
        assert!(parse_scenario("[solver]\nclip = yes\n", Path::new(".")).is_err());
        assert!(parse_scenario("[parameters]\nnu = 2\n", Path::new(".")).is_err());
    }
}
