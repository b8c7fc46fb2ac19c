use std::collections::BTreeSet;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use pointctl_core::bench;
use pointctl_core::optctl::{DEFAULT_ASSEMBLY_DEGREE, DEFAULT_MAXIT, DEFAULT_TOL};
use pointctl_core::quadrature::MAX_DEGREE;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid configuration: {0}")]
    Validation(String),
}

fn parse_err(line: usize, message: impl Into<String>) -> ConfigError {
    ConfigError::Parse {
        line,
        message: message.into(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Solve,
    Eoc,
    ApproxEoc,
    NewtonTable,
    NuSweep,
}

impl Command {
    pub const ALL: [Command; 5] = [
        Command::Solve,
        Command::Eoc,
        Command::ApproxEoc,
        Command::NewtonTable,
        Command::NuSweep,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Eoc => "eoc",
            Command::ApproxEoc => "approx-eoc",
            Command::NewtonTable => "newton-table",
            Command::NuSweep => "nu-sweep",
        }
    }
}

impl FromStr for Command {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown command {s:?}"))
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Format {
    Csv,
    Vtk,
    Txt,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "csv" => Ok(Format::Csv),
            "vtk" => Ok(Format::Vtk),
            "txt" => Ok(Format::Txt),
            _ => Err(format!("unknown format {s:?}")),
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Format::Csv => "csv",
            Format::Vtk => "vtk",
            Format::Txt => "txt",
        })
    }
}

/// Control bounds `a <= u <= b`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Bounds {
    None,
    Box(f64, f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Domain {
    Square,
    Disk,
    Ball,
}

impl FromStr for Domain {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "square" => Ok(Domain::Square),
            "disk" => Ok(Domain::Disk),
            "ball" => Ok(Domain::Ball),
            _ => Err(format!("unknown domain {s:?}")),
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::Square => "square",
            Domain::Disk => "disk",
            Domain::Ball => "ball",
        })
    }
}

/// Either a built-in problem or an inline description.
#[derive(Clone, Debug, PartialEq)]
pub enum ProblemSource {
    Builtin(String),
    Custom {
        domain: Domain,
        /// Cells per side of the coarsest square mesh; ignored for disk and ball.
        coarse_n: usize,
        points: Vec<(Vec<f64>, f64)>,
    },
}

pub const BUILTINS: [&str; 4] = [
    "benchmark2d",
    "benchmark3d",
    "constrained2d",
    "fivepoints2d",
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub problem: ProblemSource,
    /// Number of mesh levels for studies; mesh level for single solves.
    pub levels: usize,
    pub fine_level: Option<usize>,
    /// Overrides the problem's `nu` when set.
    pub nu: Option<f64>,
    /// Overrides the problem's bounds when set.
    pub bounds: Option<Bounds>,
    pub nus: Vec<f64>,
    /// Exactness degree for error norms.
    pub quad_degree: usize,
    pub assembly_degree: usize,
    pub tol: f64,
    pub maxit: usize,
    /// Weight of an `L^2` tracking term; only 0 is supported.
    pub theta: f64,
    pub output_dir: PathBuf,
    pub formats: BTreeSet<Format>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            command: Command::Solve,
            problem: ProblemSource::Builtin("constrained2d".into()),
            levels: 1,
            fine_level: None,
            nu: None,
            bounds: None,
            nus: vec![1e-1, 1e-2, 1e-3, 1e-4, 1e-5],
            quad_degree: bench::ERROR_QUAD_DEGREE,
            assembly_degree: DEFAULT_ASSEMBLY_DEGREE,
            tol: DEFAULT_TOL,
            maxit: DEFAULT_MAXIT,
            theta: 0.0,
            output_dir: PathBuf::from("."),
            formats: [Format::Csv, Format::Txt].into_iter().collect(),
        }
    }
}

const KEYS: [&str; 17] = [
    "command",
    "problem",
    "levels",
    "fine_level",
    "nu",
    "bounds",
    "nus",
    "quad_degree",
    "assembly_degree",
    "tol",
    "maxit",
    "theta",
    "output_dir",
    "formats",
    "domain",
    "coarse_n",
    "points",
];

fn number<T: FromStr>(line: usize, key: &str, value: &str) -> Result<T, ConfigError> {
    value
        .parse()
        .map_err(|_| parse_err(line, format!("{key}: cannot parse {value:?}")))
}

fn real_list(line: usize, key: &str, value: &str) -> Result<Vec<f64>, ConfigError> {
    value
        .split(',')
        .map(|v| number(line, key, v.trim()))
        .collect()
}

fn parse_points(line: usize, value: &str) -> Result<Vec<(Vec<f64>, f64)>, ConfigError> {
    value
        .split(';')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            let mut vals = real_list(line, "points", p)?;
            if !(3..=4).contains(&vals.len()) {
                return Err(parse_err(
                    line,
                    format!("points: expected x,y[,z],g but got {p:?}"),
                ));
            }
            let g = vals.pop().expect("non-empty");
            Ok((vals, g))
        })
        .collect()
}

/// Parse `key=value` lines. Blank lines and lines starting with `#` are ignored.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let mut cfg = RunConfig::default();
    let mut seen = BTreeSet::new();
    let mut problem_name: Option<String> = None;
    let mut domain: Option<Domain> = None;
    let mut coarse_n: Option<usize> = None;
    let mut points: Option<Vec<(Vec<f64>, f64)>> = None;

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let (key, value) = trimmed
            .split_once('=')
            .ok_or_else(|| parse_err(line, format!("expected key=value, got {trimmed:?}")))?;
        let (key, value) = (key.trim(), value.trim());
        if !KEYS.contains(&key) {
            return Err(parse_err(line, format!("unknown key {key:?}")));
        }
        if !seen.insert(key.to_string()) {
            return Err(parse_err(line, format!("duplicate key {key:?}")));
        }
        match key {
            "command" => cfg.command = value.parse().map_err(|e: String| parse_err(line, e))?,
            "problem" => problem_name = Some(value.to_string()),
            "levels" => cfg.levels = number(line, key, value)?,
            "fine_level" => cfg.fine_level = Some(number(line, key, value)?),
            "nu" => cfg.nu = Some(number(line, key, value)?),
            "bounds" => {
                cfg.bounds = Some(if value == "none" {
                    Bounds::None
                } else {
                    match real_list(line, key, value)?.as_slice() {
                        &[a, b] => Bounds::Box(a, b),
                        _ => return Err(parse_err(line, "bounds: expected \"none\" or a,b")),
                    }
                })
            }
            "nus" => cfg.nus = real_list(line, key, value)?,
            "quad_degree" => cfg.quad_degree = number(line, key, value)?,
            "assembly_degree" => cfg.assembly_degree = number(line, key, value)?,
            "tol" => cfg.tol = number(line, key, value)?,
            "maxit" => cfg.maxit = number(line, key, value)?,
            "theta" => cfg.theta = number(line, key, value)?,
            "output_dir" => cfg.output_dir = PathBuf::from(value),
            "formats" => {
                cfg.formats = value
                    .split(',')
                    .map(|f| f.trim().parse().map_err(|e: String| parse_err(line, e)))
                    .collect::<Result<_, _>>()?
            }
            "domain" => domain = Some(value.parse().map_err(|e: String| parse_err(line, e))?),
            "coarse_n" => coarse_n = Some(number(line, key, value)?),
            "points" => points = Some(parse_points(line, value)?),
            _ => unreachable!("key list checked above"),
        }
    }

    cfg.problem = match problem_name.as_deref() {
        Some("custom") => ProblemSource::Custom {
            domain: domain
                .ok_or_else(|| ConfigError::Validation("custom problem needs domain".into()))?,
            coarse_n: coarse_n.unwrap_or(bench::CONSTRAINED_COARSE_N),
            points: points
                .ok_or_else(|| ConfigError::Validation("custom problem needs points".into()))?,
        },
        Some(name) => {
            if domain.is_some() || coarse_n.is_some() || points.is_some() {
                return Err(ConfigError::Validation(
                    "domain, coarse_n and points only apply to problem=custom".into(),
                ));
            }
            ProblemSource::Builtin(name.to_string())
        }
        None => cfg.problem,
    };
    validate(&cfg)?;
    Ok(cfg)
}

/// Check the invariants a resolved problem must satisfy.
pub fn validate(cfg: &RunConfig) -> Result<(), ConfigError> {
    let invalid = |m: String| Err(ConfigError::Validation(m));
    match &cfg.problem {
        ProblemSource::Builtin(name) if !BUILTINS.contains(&name.as_str()) => {
            return invalid(format!(
                "unknown problem {name:?}; expected one of {BUILTINS:?} or custom"
            ));
        }
        ProblemSource::Custom {
            domain,
            coarse_n,
            points,
        } => {
            let dim = if *domain == Domain::Ball { 3 } else { 2 };
            if points.is_empty() {
                return invalid("custom problem needs at least one point".into());
            }
            if *coarse_n == 0 {
                return invalid("coarse_n must be positive".into());
            }
            for (x, g) in points {
                if x.len() != dim {
                    return invalid(format!("point {x:?} does not match the {dim}D domain"));
                }
                if !g.is_finite() || x.iter().any(|v| !v.is_finite()) {
                    return invalid(format!("point {x:?} has non-finite data"));
                }
            }
        }
        _ => {}
    }
    if let Some(nu) = cfg.nu {
        if !(nu > 0.0 && nu.is_finite()) {
            return invalid(format!("nu must be positive (nu > 0), got {nu}"));
        }
    }
    if let Some(Bounds::Box(a, b)) = cfg.bounds {
        if !(a < b) {
            return invalid(format!("bounds need a < b, got {a},{b}"));
        }
    }
    if cfg.theta != 0.0 {
        return invalid(format!(
            "theta = {} is not supported; only theta = 0",
            cfg.theta
        ));
    }
    if !(cfg.tol > 0.0) {
        return invalid(format!("tol must be positive, got {}", cfg.tol));
    }
    if cfg.maxit == 0 {
        return invalid("maxit must be positive".into());
    }
    for (name, d) in [
        ("quad_degree", cfg.quad_degree),
        ("assembly_degree", cfg.assembly_degree),
    ] {
        if d > MAX_DEGREE {
            return invalid(format!("{name} must be at most {MAX_DEGREE}, got {d}"));
        }
    }
    if cfg.formats.is_empty() {
        return invalid("formats must not be empty".into());
    }
    if cfg.nus.iter().any(|&v| !(v > 0.0)) || cfg.nus.windows(2).any(|w| w[1] >= w[0]) {
        return invalid("nus must be positive and strictly decreasing".into());
    }
    match cfg.command {
        Command::Eoc => {
            let is_exact = matches!(&cfg.problem, ProblemSource::Builtin(n) if bench::builtin_benchmark(n).is_some());
            if !is_exact {
                return invalid(
                    "eoc needs a problem with known solution (benchmark2d or benchmark3d)".into(),
                );
            }
            if cfg.nu.is_some() || cfg.bounds.is_some() {
                return invalid("eoc benchmarks have fixed nu and bounds".into());
            }
            if cfg.levels < 2 {
                return invalid("eoc needs levels >= 2".into());
            }
        }
        Command::ApproxEoc => {
            if cfg.levels < 2 {
                return invalid("approx-eoc needs levels >= 2".into());
            }
            if let Some(f) = cfg.fine_level {
                if f + 1 < cfg.levels {
                    return invalid(format!(
                        "fine_level {f} must not be coarser than level {}",
                        cfg.levels - 1
                    ));
                }
            }
        }
        Command::NuSweep if cfg.nus.is_empty() => return invalid("nu-sweep needs nus".into()),
        _ => {}
    }
    Ok(())
}

fn join(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| format!("{v:?}"))
        .collect::<Vec<_>>()
        .join(",")
}

/// Inverse of [`parse_config`].
pub fn render(cfg: &RunConfig) -> String {
    let mut lines = vec![format!("command={}", cfg.command)];
    match &cfg.problem {
        ProblemSource::Builtin(name) => lines.push(format!("problem={name}")),
        ProblemSource::Custom {
            domain,
            coarse_n,
            points,
        } => {
            lines.push("problem=custom".into());
            lines.push(format!("domain={domain}"));
            lines.push(format!("coarse_n={coarse_n}"));
            let pts: Vec<String> = points
                .iter()
                .map(|(x, g)| {
                    let mut v = x.clone();
                    v.push(*g);
                    join(&v)
                })
                .collect();
            lines.push(format!("points={}", pts.join(";")));
        }
    }
    lines.push(format!("levels={}", cfg.levels));
    if let Some(f) = cfg.fine_level {
        lines.push(format!("fine_level={f}"));
    }
    if let Some(nu) = cfg.nu {
        lines.push(format!("nu={nu:?}"));
    }
    match cfg.bounds {
        Some(Bounds::None) => lines.push("bounds=none".into()),
        Some(Bounds::Box(a, b)) => lines.push(format!("bounds={a:?},{b:?}")),
        None => {}
    }
    lines.push(format!("nus={}", join(&cfg.nus)));
    lines.push(format!("quad_degree={}", cfg.quad_degree));
    lines.push(format!("assembly_degree={}", cfg.assembly_degree));
    lines.push(format!("tol={:?}", cfg.tol));
    lines.push(format!("maxit={}", cfg.maxit));
    lines.push(format!("theta={:?}", cfg.theta));
    lines.push(format!("output_dir={}", cfg.output_dir.display()));
    let formats: Vec<String> = cfg.formats.iter().map(|f| f.to_string()).collect();
    lines.push(format!("formats={}", formats.join(",")));
    let mut out = lines.join("\n");
    out.push('\n');
    out
}
