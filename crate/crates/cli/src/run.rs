use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use pointctl_core::bench::{self, StudyOptions};
use pointctl_core::mesh::{build_unit_ball, build_unit_disk, build_unit_square};
use pointctl_core::optctl::{ObservationPoint, OptimalControlProblem, ProblemSpec};
use pointctl_core::vtk::write_vtk;
use thiserror::Error;

use crate::config::{Bounds, Command, ConfigError, Domain, Format, ProblemSource, RunConfig};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{context}: {source}")]
    Solver {
        context: String,
        #[source]
        source: pointctl_core::Error,
    },
    #[error("cannot write {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl RunError {
    /// 2 for configuration problems, 3 for solver failures, 1 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Solver { .. } => 3,
            RunError::Io { .. } => 1,
        }
    }
}

/// Text printed to stdout and files written by a run.
#[derive(Debug, Default)]
pub struct RunOutput {
    pub stdout: String,
    pub files: Vec<PathBuf>,
}

fn solver(context: impl Into<String>) -> impl FnOnce(pointctl_core::Error) -> RunError {
    let context = context.into();
    move |source| RunError::Solver { context, source }
}

fn problem_label(cfg: &RunConfig) -> &str {
    match &cfg.problem {
        ProblemSource::Builtin(name) => name,
        ProblemSource::Custom { .. } => "custom",
    }
}

/// Problem on the coarsest mesh with all overrides applied.
pub fn resolve_spec(cfg: &RunConfig) -> Result<ProblemSpec, RunError> {
    let mut spec = match &cfg.problem {
        ProblemSource::Builtin(name) => bench::builtin(name)
            .ok_or_else(|| ConfigError::Validation(format!("unknown problem {name:?}")))?,
        ProblemSource::Custom {
            domain,
            coarse_n,
            points,
        } => {
            let mesh = match domain {
                Domain::Square => build_unit_square(*coarse_n),
                Domain::Disk => build_unit_disk(0),
                Domain::Ball => build_unit_ball(0),
            };
            let points = points
                .iter()
                .map(|(x, g)| ObservationPoint::new(x.clone(), *g))
                .collect();
            ProblemSpec::new(Arc::new(mesh), cfg.nu.unwrap_or(1.0), points)
        }
    };
    if let Some(nu) = cfg.nu {
        spec.nu = nu;
    }
    match cfg.bounds {
        Some(Bounds::None) => spec = spec.with_bounds(f64::NEG_INFINITY, f64::INFINITY),
        Some(Bounds::Box(a, b)) => spec = spec.with_bounds(a, b),
        None => {}
    }
    spec.assembly_degree = cfg.assembly_degree;
    spec.validate()
        .map_err(|e| ConfigError::Validation(e.to_string()))?;
    for p in &spec.points {
        spec.mesh().locate_point(&p.location).map_err(|_| {
            ConfigError::Validation(format!("point {:?} lies outside the domain", p.location))
        })?;
    }
    Ok(spec)
}

struct Writer<'a> {
    dir: &'a Path,
    stem: String,
    files: Vec<PathBuf>,
}

impl Writer<'_> {
    fn write(&mut self, suffix: &str, contents: &[u8]) -> Result<(), RunError> {
        let path = self.dir.join(format!("{}{suffix}", self.stem));
        fs::write(&path, contents).map_err(|source| RunError::Io {
            path: path.clone(),
            source,
        })?;
        self.files.push(path);
        Ok(())
    }
}

/// Execute a validated configuration.
pub fn run(cfg: &RunConfig) -> Result<RunOutput, RunError> {
    crate::config::validate(cfg)?;
    let base = resolve_spec(cfg)?;
    let opts = StudyOptions {
        error_degree: cfg.quad_degree,
        tol: cfg.tol,
        maxit: cfg.maxit,
    };
    fs::create_dir_all(&cfg.output_dir).map_err(|source| RunError::Io {
        path: cfg.output_dir.clone(),
        source,
    })?;
    let mut writer = Writer {
        dir: &cfg.output_dir,
        stem: format!("{}_{}", cfg.command, problem_label(cfg)),
        files: Vec::new(),
    };
    let finest = cfg.levels.saturating_sub(1);
    let (csv, table) = match cfg.command {
        Command::Eoc => {
            let mut benchmark = bench::builtin_benchmark(problem_label(cfg)).ok_or_else(|| {
                ConfigError::Validation("eoc needs benchmark2d or benchmark3d".into())
            })?;
            benchmark.spec = base;
            let records = bench::eoc_study_with(&benchmark, cfg.levels, &opts)
                .map_err(solver("eoc study"))?;
            (
                bench::convergence_csv(&records),
                bench::convergence_table(&records),
            )
        }
        Command::ApproxEoc => {
            let records = bench::approx_eoc_study_with(&base, cfg.levels, cfg.fine_level, &opts)
                .map_err(solver("approximate eoc study"))?;
            (
                bench::convergence_csv(&records),
                bench::convergence_table(&records),
            )
        }
        Command::NewtonTable => {
            let spec = bench::spec_at(&base, finest);
            let records =
                bench::newton_rate_table_with(&spec, &opts).map_err(solver("newton solve"))?;
            (bench::newton_csv(&records), bench::newton_table(&records))
        }
        Command::NuSweep => {
            let spec = bench::spec_at(&base, finest);
            let records =
                bench::nu_sweep_with(&spec, &cfg.nus, &opts).map_err(solver("nu sweep"))?;
            (
                bench::nu_sweep_csv(&records),
                bench::nu_sweep_table(&records),
            )
        }
        Command::Solve => solve(cfg, bench::spec_at(&base, finest), &opts, &mut writer)?,
    };
    if cfg.formats.contains(&Format::Csv) {
        writer.write(".csv", csv.as_bytes())?;
    }
    if cfg.formats.contains(&Format::Txt) {
        writer.write(".txt", table.as_bytes())?;
    }
    Ok(RunOutput {
        stdout: table,
        files: writer.files,
    })
}

fn solve(
    cfg: &RunConfig,
    spec: ProblemSpec,
    opts: &StudyOptions,
    writer: &mut Writer,
) -> Result<(String, String), RunError> {
    let problem = OptimalControlProblem::new(spec).map_err(solver("assembly"))?;
    let solution = problem
        .solve(opts.tol, opts.maxit)
        .map_err(solver("newton solve"))?;
    let spec = problem.spec();
    let mesh = spec.mesh();
    let values = problem.point_values(&solution.y);

    let dim = mesh.dim();
    let axes = ["x", "y", "z"];
    let mut csv = axes[..dim].join(",");
    csv.push_str(",target,y_h\n");
    for (p, v) in spec.points.iter().zip(&values) {
        for x in &p.location {
            let _ = write!(csv, "{},", bench::format_number(*x));
        }
        let _ = writeln!(
            csv,
            "{},{}",
            bench::format_number(p.target),
            bench::format_number(*v)
        );
    }

    let mut table = String::new();
    let _ = writeln!(
        table,
        "{} vertices, {} cells, nu = {:e}, bounds = [{}, {}]",
        mesh.n_vertices(),
        mesh.n_cells(),
        spec.nu,
        spec.lower,
        spec.upper
    );
    let _ = writeln!(table, "Newton iterations: {}", solution.report.iterations());
    for (k, d) in solution.report.residuals.iter().enumerate() {
        let _ = writeln!(table, "  delta_{k} = {d:.6e}");
    }
    let _ = writeln!(table, "{:>28} {:>10} {:>14}", "point", "target", "y_h");
    for (p, v) in spec.points.iter().zip(&values) {
        let loc: Vec<String> = p.location.iter().map(|x| format!("{x}")).collect();
        let _ = writeln!(table, "{:>28} {:>10} {:>14.6e}", loc.join(","), p.target, v);
    }

    if cfg.formats.contains(&Format::Vtk) {
        let fields = [
            ("y_h", solution.y.vertex_values(), "state y_h"),
            ("p_h", solution.p.vertex_values(), "adjoint p_h"),
            (
                "u_h",
                solution.control.vertex_values(),
                "control u_h = P(-p_h/nu) sampled at vertices; not a P1 function where bounds are active",
            ),
        ];
        for (name, vals, title) in fields {
            let mut buf = Vec::new();
            write_vtk(mesh, title, &[(name, &vals)], &mut buf).map_err(solver("vtk output"))?;
            writer.write(&format!("_{name}.vtk"), &buf)?;
        }
    }
    Ok((csv, table))
}
