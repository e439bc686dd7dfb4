//! Command-line front end: scenario handling, subcommand dispatch and
//! run-directory output.

pub mod scenario;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndopfe::grid::{self, TracerState};
use ndopfe::identifiability::{
    self, admissible_samples, collision_table, CollisionPair, IdentError, IdentifySettings,
    TwinProblem,
};
use ndopfe::kernels::{free_iron_adjusted, free_iron_original, free_iron_radicand};
use ndopfe::par::Execution;
use ndopfe::params::{fmt_f64, IdentificationSubset};
use ndopfe::solvers::{self, RunDiagnostics, SolverError};

use scenario::{load_scenario, Scenario, ScenarioError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NOT_CONVERGED: i32 = 3;
pub const EXIT_RUNTIME: i32 = 4;

/// Version of the CSV layouts described in FORMATS.md.
pub const CSV_FORMAT: u32 = 1;

#[derive(Parser, Debug)]
#[command(name = "ndopfe", version, about = "N-DOP-Fe biogeochemistry under offline transport")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Scenario file; built-in defaults when absent.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Run directory; defaults to `<output_dir>/<subcommand>`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run without worker threads.
    #[arg(long)]
    sequential: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Integrate forward in time and record masses at every step.
    RunTransient {
        #[command(flatten)]
        common: Common,
        /// Total phosphorus of the uniform initial state.
        #[arg(long, allow_negative_numbers = true)]
        mass: Option<f64>,
        /// Initial state CSV (cell_id,y1,y2,y3) instead of a uniform state.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Days to integrate; one period when absent.
        #[arg(long, allow_negative_numbers = true)]
        t_end: Option<f64>,
    },
    /// Repeat periods until the periodic residual reaches the tolerance.
    SpinUp {
        #[command(flatten)]
        common: Common,
        #[arg(long, allow_negative_numbers = true)]
        mass: Option<f64>,
    },
    /// Stationary state under annual-mean forcing and transport.
    Stationary {
        #[command(flatten)]
        common: Common,
        #[arg(long, allow_negative_numbers = true)]
        mass: Option<f64>,
    },
    /// Twin experiment: fit N-DOP parameters to a synthetic cycle.
    Identify {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = SubsetArg::Reduced5)]
        subset: SubsetArg,
        #[arg(long, default_value_t = 20)]
        starts: usize,
        /// Forward runs per restart.
        #[arg(long, default_value_t = 500)]
        budget: usize,
        /// Standard deviation of additive observation noise.
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        noise: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, allow_negative_numbers = true)]
        mass: Option<f64>,
        /// Periodic tolerance of each forward spin-up.
        #[arg(long, default_value_t = 1e-9)]
        forward_tol: f64,
        #[arg(long, default_value_t = 300)]
        forward_max_cycles: usize,
        /// Report misfit curvature at the best point (always on for full7).
        #[arg(long)]
        curvature: bool,
    },
    /// Tabulate uptake of a colliding parameter pair on its profile.
    Collide {
        #[command(flatten)]
        common: Common,
        /// alpha1/alpha2.
        #[arg(long, default_value_t = 1.3)]
        ratio: f64,
        #[arg(long, default_value_t = 0.35)]
        k_p2: f64,
        #[arg(long, default_value_t = 22.0)]
        k_i2: f64,
        #[arg(long, default_value_t = 0.027)]
        k_w2: f64,
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Iron concentration shared by both members.
        #[arg(long, default_value_t = 0.4)]
        y3: f64,
        #[arg(long, default_value_t = 5.0)]
        i_min: f64,
        #[arg(long, default_value_t = 300.0)]
        i_max: f64,
    },
    /// Tabulate the free-iron closures.
    KernelsCheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = -10.0, allow_negative_numbers = true)]
        y3_min: f64,
        #[arg(long, default_value_t = 10.0, allow_negative_numbers = true)]
        y3_max: f64,
        #[arg(long, default_value_t = 401)]
        points: usize,
    },
    /// Write the transport snapshots of the scenario as operator files.
    GenCirculation {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum SubsetArg {
    Full7,
    Reduced5,
}

/// A failure with its exit code.
#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn config(m: impl ToString) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: m.to_string(),
        }
    }

    fn runtime(m: impl ToString) -> Self {
        Self {
            code: EXIT_RUNTIME,
            message: m.to_string(),
        }
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        if e.is_config() {
            Failure::config(e)
        } else {
            Failure::runtime(e)
        }
    }
}

impl From<SolverError> for Failure {
    fn from(e: SolverError) -> Self {
        match e {
            SolverError::Settings(_) | SolverError::Grid(_) => Failure::config(e),
            _ => Failure::runtime(e),
        }
    }
}

impl From<IdentError> for Failure {
    fn from(e: IdentError) -> Self {
        match e {
            IdentError::Solver(s) => s.into(),
            IdentError::NoAdmissibleSample => Failure::runtime(e),
            _ => Failure::config(e),
        }
    }
}

/// Output directory holding the resolved scenario, a version stamp and
/// the run's CSV files.
struct RunDir {
    path: PathBuf,
}

impl RunDir {
    fn create(path: &Path, sc: &Scenario) -> Result<Self, Failure> {
        fs::create_dir_all(path)
            .map_err(|e| Failure::runtime(format!("{}: {e}", path.display())))?;
        let dir = Self {
            path: path.to_path_buf(),
        };
        dir.write("resolved.ini", &sc.to_ini())?;
        dir.write("version.txt", &version_stamp())?;
        Ok(dir)
    }

    fn write(&self, name: &str, content: &str) -> Result<(), Failure> {
        let p = self.path.join(name);
        fs::write(&p, content).map_err(|e| Failure::runtime(format!("{}: {e}", p.display())))
    }
}

fn version_stamp() -> String {
    format!("ndopfe {}\ncsv_format {}\n", env!("CARGO_PKG_VERSION"), CSV_FORMAT)
}

fn prepare(common: &Common, name: &str) -> Result<(Scenario, PathBuf), Failure> {
    let mut sc = match &common.scenario {
        Some(p) => load_scenario(p)?,
        None => Scenario::default(),
    };
    if common.sequential {
        sc.solver.execution = Execution::Sequential;
    }
    let out = common
        .out
        .clone()
        .unwrap_or_else(|| sc.output_dir.join(name));
    Ok((sc, out))
}

fn positive_mass(sc: &mut Scenario, mass: Option<f64>) -> Result<(), Failure> {
    if let Some(m) = mass {
        sc.mass = m;
    }
    if !(sc.mass > 0.0 && sc.mass.is_finite()) {
        return Err(Failure::config("mass must be positive"));
    }
    Ok(())
}

fn finish(diag: &RunDiagnostics, converged: bool, what: &str) -> i32 {
    for n in &diag.notes {
        eprintln!("note: {n}");
    }
    if converged {
        println!("{what} converged");
        EXIT_OK
    } else {
        eprintln!("{what} did not converge");
        EXIT_NOT_CONVERGED
    }
}

fn run(cli: Cli) -> Result<i32, Failure> {
    match cli.command {
        Command::RunTransient {
            common,
            mass,
            init,
            t_end,
        } => {
            let (mut sc, out) = prepare(&common, "run-transient")?;
            let (model, warnings) = sc.build_model()?;
            warnings.iter().for_each(|w| eprintln!("warning: {w}"));
            let y0 = match init {
                Some(p) => {
                    let text = fs::read_to_string(&p)
                        .map_err(|e| Failure::config(format!("{}: {e}", p.display())))?;
                    let s = TracerState::from_csv(&text).map_err(Failure::config)?;
                    model.grid.check_shape(&s).map_err(Failure::config)?;
                    s
                }
                None => {
                    positive_mass(&mut sc, mass)?;
                    grid::uniform_state_with_mass(sc.mass, &model.grid).map_err(Failure::config)?
                }
            };
            let t_end = t_end.unwrap_or(sc.solver.period);
            let dir = RunDir::create(&out, &sc)?;
            let (state, diag) = solvers::run_transient(&model, &sc.solver, &y0, t_end)?;
            dir.write("diagnostics.csv", &diag.to_csv())?;
            dir.write("snapshot.csv", &state.to_csv())?;
            println!(
                "{} steps to t = {}, max relative mass drift {:.3e}",
                diag.step_count, state.time, diag.max_mass_drift
            );
            Ok(EXIT_OK)
        }
        Command::SpinUp { common, mass } => {
            let (mut sc, out) = prepare(&common, "spin-up")?;
            positive_mass(&mut sc, mass)?;
            let (model, warnings) = sc.build_model()?;
            warnings.iter().for_each(|w| eprintln!("warning: {w}"));
            let dir = RunDir::create(&out, &sc)?;
            let o = solvers::spinup_periodic(&model, &sc.solver, sc.mass)?;
            dir.write("diagnostics.csv", &o.diagnostics.to_csv())?;
            dir.write("snapshot.csv", &o.state.to_csv())?;
            println!(
                "{} cycles, final residual {:.3e}",
                o.diagnostics.records.len().saturating_sub(1),
                o.diagnostics.final_residual().unwrap_or(f64::NAN)
            );
            Ok(finish(&o.diagnostics, o.converged, "spin-up"))
        }
        Command::Stationary { common, mass } => {
            let (mut sc, out) = prepare(&common, "stationary")?;
            positive_mass(&mut sc, mass)?;
            let (model, warnings) = sc.build_model()?;
            warnings.iter().for_each(|w| eprintln!("warning: {w}"));
            let dir = RunDir::create(&out, &sc)?;
            let o = solvers::solve_stationary(&model, &sc.solver, sc.mass)?;
            dir.write("diagnostics.csv", &o.diagnostics.to_csv())?;
            dir.write("snapshot.csv", &o.state.to_csv())?;
            println!(
                "{} iterations, step defect {:.3e}",
                o.diagnostics.records.len().saturating_sub(1),
                o.step_defect
            );
            Ok(finish(&o.diagnostics, o.converged, "stationary solve"))
        }
        Command::Identify {
            common,
            subset,
            starts,
            budget,
            noise,
            seed,
            mass,
            forward_tol,
            forward_max_cycles,
            curvature,
        } => {
            let (mut sc, out) = prepare(&common, "identify")?;
            positive_mass(&mut sc, mass)?;
            if !(forward_tol > 0.0) {
                return Err(Failure::config("forward tolerance must be positive"));
            }
            if !(noise >= 0.0) {
                return Err(Failure::config("noise must be nonnegative"));
            }
            if starts == 0 || budget == 0 {
                return Err(Failure::config("starts and budget must be positive"));
            }
            let (model, warnings) = sc.build_model()?;
            warnings.iter().for_each(|w| eprintln!("warning: {w}"));
            let mut settings = sc.solver.clone();
            settings.tol = forward_tol;
            settings.max_cycles = forward_max_cycles;
            let problem = TwinProblem::new(&model, &settings, sc.mass)?;
            let subset = match subset {
                SubsetArg::Full7 => IdentificationSubset::Full7,
                SubsetArg::Reduced5 => IdentificationSubset::reduced_from(&sc.params),
            };
            let dir = RunDir::create(&out, &sc)?;
            let obs = identifiability::synth_observations(&problem, &sc.params, noise, seed)?;
            if !obs.converged {
                eprintln!("warning: truth spin-up did not reach the forward tolerance");
            }
            let id = IdentifySettings {
                starts,
                budget,
                seed,
                curvature: curvature || subset == IdentificationSubset::Full7,
                execution: sc.solver.execution,
                ..Default::default()
            };
            let report = identifiability::identify(&problem, &obs, &sc.params, &subset, &id)?;
            dir.write("parameters.csv", &report.parameters_csv())?;
            dir.write("restarts.csv", &report.restarts_csv())?;
            if !report.curvature.is_empty() {
                dir.write("curvature.csv", &report.curvature_csv())?;
            }
            let summary = report.summary();
            dir.write("summary.txt", &summary)?;
            print!("{summary}");
            let any = report.restarts.iter().any(|r| r.converged);
            Ok(if obs.converged && any {
                EXIT_OK
            } else {
                eprintln!("no restart met the simplex stopping rule");
                EXIT_NOT_CONVERGED
            })
        }
        Command::Collide {
            common,
            ratio,
            k_p2,
            k_i2,
            k_w2,
            samples,
            seed,
            y3,
            i_min,
            i_max,
        } => {
            let (sc, out) = prepare(&common, "collide")?;
            if !(i_min >= 0.0 && i_max > i_min) {
                return Err(Failure::config("irradiance range must satisfy 0 <= i-min < i-max"));
            }
            let pair = CollisionPair::new(sc.params.clone(), ratio, k_p2, k_i2, k_w2)?;
            let pts = admissible_samples(&pair, samples, (i_min, i_max), seed);
            let rows = collision_table(&pair, &pts, y3);
            if rows.is_empty() {
                return Err(IdentError::NoAdmissibleSample.into());
            }
            let mut csv = String::from("x3,I,y1,G1,G2,gap\n");
            for r in &rows {
                let _ = writeln!(
                    csv,
                    "{},{},{},{},{},{}",
                    fmt_f64(r.x3),
                    fmt_f64(r.i),
                    fmt_f64(r.y1),
                    fmt_f64(r.g1),
                    fmt_f64(r.g2),
                    fmt_f64(r.gap)
                );
            }
            let dir = RunDir::create(&out, &sc)?;
            dir.write("collision.csv", &csv)?;
            let gap = rows.iter().map(|r| r.gap).fold(0.0, f64::max);
            println!(
                "{} admissible samples, max uptake gap {:.3e}, constraint defect {:.3e}",
                rows.len(),
                gap,
                pair.constraint_defect()
            );
            Ok(EXIT_OK)
        }
        Command::KernelsCheck {
            common,
            y3_min,
            y3_max,
            points,
        } => {
            let (sc, out) = prepare(&common, "kernels-check")?;
            if points < 2 || !(y3_max > y3_min) {
                return Err(Failure::config("need at least 2 points and y3-min < y3-max"));
            }
            let (k, l_t) = (sc.params.k_lig, sc.params.l_t);
            let mut csv = String::from("y3,radicand,fe_original,fe_adjusted\n");
            for j in 0..points {
                let y3 = y3_min + (y3_max - y3_min) * j as f64 / (points - 1) as f64;
                let orig = free_iron_original(y3, k, l_t).map_err(Failure::runtime)?;
                let _ = writeln!(
                    csv,
                    "{},{},{},{}",
                    fmt_f64(y3),
                    fmt_f64(free_iron_radicand(y3, k, l_t)),
                    fmt_f64(orig),
                    fmt_f64(free_iron_adjusted(y3, k, l_t))
                );
            }
            let dir = RunDir::create(&out, &sc)?;
            dir.write("kernels.csv", &csv)?;
            println!("{points} points written to {}", out.join("kernels.csv").display());
            Ok(EXIT_OK)
        }
        Command::GenCirculation { common } => {
            let (sc, out) = prepare(&common, "gen-circulation")?;
            let grid = sc.build_grid()?;
            let (op, warnings) = sc.build_transport(&grid)?;
            warnings.iter().for_each(|w| eprintln!("warning: {w}"));
            let dir = RunDir::create(&out, &sc)?;
            dir.write("grid.txt", &grid.to_table())?;
            for k in 0..op.n_snapshots() {
                dir.write(&format!("snapshot_{k:02}.txt"), &op.snapshot_to_text(k))?;
            }
            println!(
                "{} snapshots, {} nonzeros each, max explicit dt {:.3} days",
                op.n_snapshots(),
                op.nnz(),
                op.max_explicit_dt()
            );
            Ok(EXIT_OK)
        }
    }
}

/// Parse `argv` (program name first), run the subcommand and return the
/// process exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}
