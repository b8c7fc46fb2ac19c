//! Benchmark problems and convergence studies.
//!
//! Levels are produced by uniform refinement of the coarse mesh carried by a
//! [`ProblemSpec`], so every level is a refinement of all previous ones.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::sync::Arc;

use crate::assembly::{l2_error, ScalarField};
use crate::error::{Error, Result};
use crate::mesh::{build_unit_ball, build_unit_disk, build_unit_square, Mesh};
use crate::optctl::{
    project_box, Control, ObservationPoint, OptimalControlProblem, OptimalControlSolution,
    ProblemSpec, DEFAULT_MAXIT, DEFAULT_TOL,
};
use crate::quadrature::{gauss_rule, integrate_cellwise, QuadratureRule};

/// Exactness degree of the rule used for error norms.
pub const ERROR_QUAD_DEGREE: usize = 10;

/// Settings shared by all studies.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StudyOptions {
    pub error_degree: usize,
    pub tol: f64,
    pub maxit: usize,
}

impl Default for StudyOptions {
    fn default() -> Self {
        StudyOptions {
            error_degree: ERROR_QUAD_DEGREE,
            tol: DEFAULT_TOL,
            maxit: DEFAULT_MAXIT,
        }
    }
}

/// A problem with known continuous solution.
#[derive(Clone)]
pub struct ExactBenchmark {
    pub name: &'static str,
    /// Problem on the coarsest mesh; finer levels refine it.
    pub spec: ProblemSpec,
    pub exact_u: ScalarField,
    pub exact_p: ScalarField,
    pub exact_y: ScalarField,
}

impl ExactBenchmark {
    pub fn spec_at(&self, level: usize) -> ProblemSpec {
        spec_at(&self.spec, level)
    }
}

impl std::fmt::Debug for ExactBenchmark {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExactBenchmark")
            .field("name", &self.name)
            .field("spec", &self.spec)
            .finish()
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Disk benchmark with a logarithmic control singularity at the origin.
///
/// `u = log|x| / (2 pi)`, `y = cos(pi |x| / 2)`, `nu = 1`, one observation
/// point at the origin with target 0, no control bounds.
pub fn benchmark_2d() -> ExactBenchmark {
    let exact_u: ScalarField = Arc::new(|x| norm(x).ln() / (2.0 * PI));
    let exact_p: ScalarField = Arc::new(|x| -norm(x).ln() / (2.0 * PI));
    let exact_y: ScalarField = Arc::new(|x| (0.5 * PI * norm(x)).cos());
    let forcing: ScalarField = Arc::new(|x| {
        let r = norm(x);
        0.25 * PI * (2.0 / r * (0.5 * PI * r).sin() + PI * (0.5 * PI * r).cos())
            - r.ln() / (2.0 * PI)
    });
    let spec = ProblemSpec::new(
        Arc::new(build_unit_disk(0)),
        1.0,
        vec![ObservationPoint::new([0.0, 0.0], 0.0)],
    )
    .with_forcing(forcing);
    ExactBenchmark {
        name: "benchmark2d",
        spec,
        exact_u,
        exact_p,
        exact_y,
    }
}

/// Ball analogue of [`benchmark_2d`] with `u = -(1/|x| - 1) / (4 pi)`.
pub fn benchmark_3d() -> ExactBenchmark {
    let exact_u: ScalarField = Arc::new(|x| -(1.0 / norm(x) - 1.0) / (4.0 * PI));
    let exact_p: ScalarField = Arc::new(|x| (1.0 / norm(x) - 1.0) / (4.0 * PI));
    let exact_y: ScalarField = Arc::new(|x| (0.5 * PI * norm(x)).cos());
    let forcing: ScalarField = Arc::new(|x| {
        let r = norm(x);
        0.25 * PI * (4.0 / r * (0.5 * PI * r).sin() + PI * (0.5 * PI * r).cos())
            + (1.0 / r - 1.0) / (4.0 * PI)
    });
    let spec = ProblemSpec::new(
        Arc::new(build_unit_ball(0)),
        1.0,
        vec![ObservationPoint::new([0.0, 0.0, 0.0], 0.0)],
    )
    .with_forcing(forcing);
    ExactBenchmark {
        name: "benchmark3d",
        spec,
        exact_u,
        exact_p,
        exact_y,
    }
}

/// Grid size of the coarsest unit-square mesh used by the square problems.
pub const CONSTRAINED_COARSE_N: usize = 4;

/// Three points on the midline with targets 1, 0, -1, `nu = 1e-2`,
/// `-10 <= u <= 10`, no forcing, on the unit square.
pub fn constrained_2d() -> ProblemSpec {
    let points = vec![
        ObservationPoint::new([0.2, 0.5], 1.0),
        ObservationPoint::new([0.5, 0.5], 0.0),
        ObservationPoint::new([0.8, 0.5], -1.0),
    ];
    ProblemSpec::new(
        Arc::new(build_unit_square(CONSTRAINED_COARSE_N)),
        1e-2,
        points,
    )
    .with_bounds(-10.0, 10.0)
}

/// Five points with target 1, `nu = 1e-4`, no bounds, on a 129 x 129 vertex grid.
pub fn five_points_2d() -> ProblemSpec {
    let points = [[0.2, 0.5], [0.5, 0.5], [0.8, 0.2], [0.8, 0.5], [0.8, 0.8]]
        .into_iter()
        .map(|x| ObservationPoint::new(x, 1.0))
        .collect();
    ProblemSpec::new(Arc::new(build_unit_square(128)), 1e-4, points)
}

/// Look up a built-in problem by name.
pub fn builtin(name: &str) -> Option<ProblemSpec> {
    match name {
        "benchmark2d" => Some(benchmark_2d().spec),
        "benchmark3d" => Some(benchmark_3d().spec),
        "constrained2d" => Some(constrained_2d()),
        "fivepoints2d" => Some(five_points_2d()),
        _ => None,
    }
}

pub fn builtin_benchmark(name: &str) -> Option<ExactBenchmark> {
    match name {
        "benchmark2d" => Some(benchmark_2d()),
        "benchmark3d" => Some(benchmark_3d()),
        _ => None,
    }
}

/// `base` moved onto its mesh refined `level` times.
pub fn spec_at(base: &ProblemSpec, level: usize) -> ProblemSpec {
    let mut mesh = base.mesh().clone();
    for _ in 0..level {
        mesh = Arc::new(mesh.refine_uniform());
    }
    base.on_mesh(mesh)
}

/// Coarse mesh of `base` followed by `count - 1` successive refinements.
pub fn mesh_hierarchy(base: &ProblemSpec, count: usize) -> Vec<Arc<Mesh>> {
    let mut meshes: Vec<Arc<Mesh>> = Vec::with_capacity(count);
    for i in 0..count {
        let next = if i == 0 {
            base.mesh().clone()
        } else {
            Arc::new(meshes[i - 1].refine_uniform())
        };
        meshes.push(next);
    }
    meshes
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceRecord {
    pub h: f64,
    /// Number of mesh vertices, boundary included.
    pub dofs: usize,
    pub error: f64,
    pub eoc: Option<f64>,
}

/// Attach `log2(e_{i-1} / e_i)` to consecutive halvings of `h`.
pub fn fill_eoc(records: &mut [ConvergenceRecord]) {
    for i in 0..records.len() {
        records[i].eoc = if i == 0 {
            None
        } else {
            Some((records[i - 1].error / records[i].error).log2())
        };
    }
}

fn solve_level(
    spec: ProblemSpec,
    opts: &StudyOptions,
) -> Result<(OptimalControlProblem, OptimalControlSolution)> {
    let problem = OptimalControlProblem::new(spec)?;
    let solution = problem.solve(opts.tol, opts.maxit)?;
    Ok((problem, solution))
}

/// `|u - u_h|_{L^2}` against the exact control on `levels` nested meshes.
pub fn eoc_study(benchmark: &ExactBenchmark, levels: usize) -> Result<Vec<ConvergenceRecord>> {
    eoc_study_with(benchmark, levels, &StudyOptions::default())
}

pub fn eoc_study_with(
    benchmark: &ExactBenchmark,
    levels: usize,
    opts: &StudyOptions,
) -> Result<Vec<ConvergenceRecord>> {
    if levels < 2 {
        return Err(Error::InvalidProblem(
            "an EOC study needs at least 2 levels".into(),
        ));
    }
    let dim = benchmark.spec.mesh().dim();
    let rule = gauss_rule(dim, opts.error_degree)?;
    let mut records = Vec::with_capacity(levels);
    for mesh in mesh_hierarchy(&benchmark.spec, levels) {
        let (_, solution) = solve_level(benchmark.spec.on_mesh(mesh.clone()), opts)?;
        let exact = &benchmark.exact_u;
        let error = l2_error(&mesh, &rule, |qp| solution.control.at(qp), |x| exact(x));
        records.push(ConvergenceRecord {
            h: mesh.mesh_size(),
            dofs: mesh.n_vertices(),
            error,
            eoc: None,
        });
    }
    fill_eoc(&mut records);
    Ok(records)
}

/// Evaluates a coarse-level control at points of a finer mesh in the same
/// refinement chain by following parent links.
struct CoarseEvaluator<'a> {
    control: &'a Control,
    coarse: &'a Mesh,
    /// Ancestor on the coarse level of every fine cell.
    ancestor: Vec<usize>,
}

impl<'a> CoarseEvaluator<'a> {
    fn new(control: &'a Control, chain: &'a [Arc<Mesh>]) -> Self {
        let fine = chain.last().expect("non-empty chain");
        let mut ancestor: Vec<usize> = (0..fine.n_cells()).collect();
        for mesh in chain[1..].iter().rev() {
            let parents = mesh.parents();
            for a in ancestor.iter_mut() {
                *a = parents[*a];
            }
        }
        CoarseEvaluator {
            control,
            coarse: &chain[0],
            ancestor,
        }
    }

    fn value(&self, fine_cell: usize, x: &[f64]) -> f64 {
        let c = self.ancestor[fine_cell];
        let lambda = self.coarse.barycentric(c, x);
        if lambda.iter().all(|&l| l >= -1e-12) {
            return self.control.value_in_cell(c, &lambda);
        }
        // Refinement of curved boundaries leaves the parent cell.
        match self.coarse.locate_point(x) {
            Ok(loc) => self.control.value_in_cell(loc.cell_index, &loc.barycentric),
            Err(_) => project_box(0.0, self.control.lower, self.control.upper),
        }
    }
}

/// `|u_fine - u_h|_{L^2}` for a coarse solution on `chain[0]`, integrated on `chain.last()`.
fn reference_error(
    coarse: &Control,
    fine: &Control,
    chain: &[Arc<Mesh>],
    rule: &QuadratureRule,
) -> f64 {
    let evaluator = CoarseEvaluator::new(coarse, chain);
    let fine_mesh = chain.last().expect("non-empty chain");
    integrate_cellwise(fine_mesh, rule, |qp| {
        let d = fine.at(qp) - evaluator.value(qp.cell, qp.x);
        d * d
    })
    .sqrt()
}

/// Approximate EOC against the solution on level `fine_level`.
///
/// Coarse levels are `0..levels`; `fine_level` defaults to `levels + 1`,
/// two refinements beyond the finest coarse level.
pub fn approx_eoc_study(
    base: &ProblemSpec,
    levels: usize,
    fine_level: Option<usize>,
) -> Result<Vec<ConvergenceRecord>> {
    approx_eoc_study_with(base, levels, fine_level, &StudyOptions::default())
}

pub fn approx_eoc_study_with(
    base: &ProblemSpec,
    levels: usize,
    fine_level: Option<usize>,
    opts: &StudyOptions,
) -> Result<Vec<ConvergenceRecord>> {
    let fine_level = fine_level.unwrap_or(levels + 1);
    if levels < 1 || fine_level + 1 < levels {
        return Err(Error::InvalidProblem(format!(
            "reference level {fine_level} is coarser than coarse level {}",
            levels.saturating_sub(1)
        )));
    }
    let meshes = mesh_hierarchy(base, fine_level + 1);
    let rule = gauss_rule(base.mesh().dim(), opts.error_degree)?;
    let (_, fine) = solve_level(base.on_mesh(meshes[fine_level].clone()), opts)?;
    let mut records = Vec::with_capacity(levels);
    for level in 0..levels {
        let (_, coarse) = solve_level(base.on_mesh(meshes[level].clone()), opts)?;
        let error = reference_error(
            &coarse.control,
            &fine.control,
            &meshes[level..=fine_level],
            &rule,
        );
        records.push(ConvergenceRecord {
            h: meshes[level].mesh_size(),
            dofs: meshes[level].n_vertices(),
            error,
            eoc: None,
        });
    }
    fill_eoc(&mut records);
    Ok(records)
}

#[derive(Clone, Debug, PartialEq)]
pub struct NewtonRateRecord {
    pub k: usize,
    pub delta_k: f64,
    /// `log(d_{k+1} / d_k) / log(d_k / d_{k-1})`, defined for interior `k`.
    pub eoc_k: Option<f64>,
}

/// Residual history of the Newton solve, starting at the initial iterate.
pub fn newton_rate_table(spec: &ProblemSpec) -> Result<Vec<NewtonRateRecord>> {
    newton_rate_table_with(spec, &StudyOptions::default())
}

pub fn newton_rate_table_with(
    spec: &ProblemSpec,
    opts: &StudyOptions,
) -> Result<Vec<NewtonRateRecord>> {
    let (_, solution) = solve_level(spec.clone(), opts)?;
    Ok(newton_rates(&solution.report.residuals))
}

pub fn newton_rates(deltas: &[f64]) -> Vec<NewtonRateRecord> {
    (0..deltas.len())
        .map(|k| NewtonRateRecord {
            k,
            delta_k: deltas[k],
            eoc_k: (k >= 1 && k + 1 < deltas.len())
                .then(|| (deltas[k + 1] / deltas[k]).ln() / (deltas[k] / deltas[k - 1]).ln()),
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct NuSweepRecord {
    pub nu: f64,
    pub max_mismatch: f64,
    pub control_norm: f64,
}

/// Unconstrained solves of `base` on its own mesh for each `nu`.
pub fn nu_sweep(base: &ProblemSpec, nus: &[f64]) -> Result<Vec<NuSweepRecord>> {
    nu_sweep_with(base, nus, &StudyOptions::default())
}

pub fn nu_sweep_with(
    base: &ProblemSpec,
    nus: &[f64],
    opts: &StudyOptions,
) -> Result<Vec<NuSweepRecord>> {
    if nus.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidProblem(
            "nu values must be strictly decreasing".into(),
        ));
    }
    let rule = gauss_rule(base.mesh().dim(), opts.error_degree)?;
    nus.iter()
        .map(|&nu| {
            let spec = ProblemSpec {
                nu,
                ..base.clone().with_bounds(f64::NEG_INFINITY, f64::INFINITY)
            };
            let (problem, solution) = solve_level(spec, opts)?;
            let max_mismatch = problem
                .point_values(&solution.y)
                .iter()
                .zip(&base.points)
                .map(|(y, p)| (y - p.target).abs())
                .fold(0.0, f64::max);
            let control_norm =
                integrate_cellwise(base.mesh(), &rule, |qp| solution.control.at(qp).powi(2)).sqrt();
            Ok(NuSweepRecord {
                nu,
                max_mismatch,
                control_norm,
            })
        })
        .collect()
}

/// Twelve significant digits, scientific notation.
pub fn format_number(v: f64) -> String {
    format!("{v:.11e}")
}

fn format_opt(v: Option<f64>) -> String {
    v.map(format_number).unwrap_or_default()
}

pub fn convergence_csv(records: &[ConvergenceRecord]) -> String {
    let mut out = String::from("h,dofs,error,eoc\n");
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            format_number(r.h),
            r.dofs,
            format_number(r.error),
            format_opt(r.eoc)
        );
    }
    out
}

pub fn convergence_table(records: &[ConvergenceRecord]) -> String {
    let mut out = format!("{:>12} {:>10} {:>14} {:>8}\n", "h", "DoFs", "error", "EOC");
    for r in records {
        let eoc = r
            .eoc
            .map(|e| format!("{e:.4}"))
            .unwrap_or_else(|| "-".into());
        let _ = writeln!(
            out,
            "{:>12.6} {:>10} {:>14.6e} {:>8}",
            r.h, r.dofs, r.error, eoc
        );
    }
    out
}

pub fn newton_csv(records: &[NewtonRateRecord]) -> String {
    let mut out = String::from("k,delta_k,eoc_k\n");
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{}",
            r.k,
            format_number(r.delta_k),
            format_opt(r.eoc_k)
        );
    }
    out
}

pub fn newton_table(records: &[NewtonRateRecord]) -> String {
    let mut out = format!("{:>4} {:>14} {:>8}\n", "k", "delta_k", "EOC_k");
    for r in records {
        let eoc = r
            .eoc_k
            .map(|e| format!("{e:.3}"))
            .unwrap_or_else(|| "-".into());
        let _ = writeln!(out, "{:>4} {:>14.6e} {:>8}", r.k, r.delta_k, eoc);
    }
    out
}

pub fn nu_sweep_csv(records: &[NuSweepRecord]) -> String {
    let mut out = String::from("nu,max_mismatch,control_norm\n");
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{}",
            format_number(r.nu),
            format_number(r.max_mismatch),
            format_number(r.control_norm)
        );
    }
    out
}

pub fn nu_sweep_table(records: &[NuSweepRecord]) -> String {
    let mut out = format!("{:>10} {:>14} {:>14}\n", "nu", "max mismatch", "|u_h|");
    for r in records {
        let _ = writeln!(
            out,
            "{:>10.1e} {:>14.6e} {:>14.6e}",
            r.nu, r.max_mismatch, r.control_norm
        );
    }
    out
}
