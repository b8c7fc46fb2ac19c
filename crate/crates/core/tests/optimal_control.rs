use std::f64::consts::PI;
use std::sync::Arc;

use pointctl_core::assembly::l2_error;
use pointctl_core::bench::{constrained_2d, five_points_2d, spec_at};
use pointctl_core::mesh::{build_unit_square, Mesh};
use pointctl_core::optctl::{solve, ObservationPoint, OptimalControlProblem, ProblemSpec};
use pointctl_core::quadrature::gauss_rule;

fn state_problem(n: usize) -> OptimalControlProblem {
    let spec = ProblemSpec::new(
        Arc::new(build_unit_square(n)),
        1.0,
        vec![ObservationPoint::new([0.5, 0.5], 0.0)],
    );
    OptimalControlProblem::new(spec).unwrap()
}

#[test]
fn torsion_value_at_the_centre() {
    // Series solution of -Laplace y = 1 on the unit square at (1/2, 1/2).
    let series: f64 = (0..200)
        .map(|k| {
            let m = (2 * k + 1) as f64;
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            sign / (m.powi(3) * (m * PI / 2.0).cosh())
        })
        .sum();
    let exact = 0.125 - 4.0 / PI.powi(3) * series;
    assert!((exact - 0.07367).abs() < 1e-5);
    let problem = state_problem(64);
    let y = problem.solve_state(|_| 1.0).unwrap();
    let centre = y.evaluate(&[0.5, 0.5]).unwrap();
    assert!((centre - exact).abs() < 1e-4, "{centre} vs {exact}");
}

#[test]
fn smooth_state_converges_at_second_order() {
    let exact = |x: &[f64]| (PI * x[0]).sin() * (PI * x[1]).sin();
    let rule = gauss_rule(2, 10).unwrap();
    let errors: Vec<f64> = [8, 16, 32, 64]
        .into_iter()
        .map(|n| {
            let problem = state_problem(n);
            let y = problem
                .solve_state(|qp| 2.0 * PI * PI * exact(qp.x))
                .unwrap();
            l2_error(
                problem.dofmap().mesh(),
                &rule,
                |qp| y.value_in_cell(qp.cell, qp.barycentric),
                exact,
            )
        })
        .collect();
    for w in errors.windows(2) {
        let eoc = (w[0] / w[1]).log2();
        assert!(eoc >= 1.9, "errors {errors:?}");
    }
}

fn mirrored(mesh: &Mesh) -> Mesh {
    let coords: Vec<f64> = mesh
        .coords()
        .chunks(2)
        .flat_map(|x| [1.0 - x[0], x[1]])
        .collect();
    let cells: Vec<usize> = mesh.cells().flatten().copied().collect();
    Mesh::new(2, coords, cells, None).unwrap()
}

fn antisymmetry_defect(base: &ProblemSpec) -> (f64, f64) {
    // Reflecting the mesh while keeping points and targets is the same as
    // keeping the mesh and negating the targets, since the point set is
    // symmetric about x = 1/2 and the bounds are symmetric about zero.
    let mesh = base.mesh().clone();
    let original = solve(base.clone()).unwrap();
    let mirror = ProblemSpec::new(Arc::new(mirrored(&mesh)), base.nu, base.points.clone())
        .with_bounds(base.lower, base.upper);
    let reflected = solve(mirror).unwrap();
    let uo = original.control.vertex_values();
    let ur = reflected.control.vertex_values();
    let scale = uo.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut defect = 0.0f64;
    for v in 0..mesh.n_vertices() {
        let y_sum = original.y.vertex_value(v) + reflected.y.vertex_value(v);
        defect = defect.max(y_sum.abs()).max((uo[v] + ur[v]).abs() / scale);
    }
    let problem = OptimalControlProblem::new(base.clone()).unwrap();
    let values = problem.point_values(&original.y);
    let on_axis = values[1].abs().max((values[0] + values[2]).abs());
    (defect, on_axis)
}

#[test]
fn antisymmetric_targets_give_antisymmetric_solutions() {
    let base = spec_at(&constrained_2d(), 2);
    // Without bounds every integrand is polynomial and the symmetry is exact.
    let free = base.clone().with_bounds(f64::NEG_INFINITY, f64::INFINITY);
    let (defect, on_axis) = antisymmetry_defect(&free);
    assert!(defect < 1e-9 && on_axis < 1e-9, "{defect} {on_axis}");
    // Kinks of the projection are integrated by a rule that is not invariant
    // under reordering of cell vertices, so the mirrored problem differs by a
    // quadrature error.
    let (defect, on_axis) = antisymmetry_defect(&base);
    assert!(defect < 1e-4 && on_axis < 1e-4, "{defect} {on_axis}");
}

#[test]
fn solution_satisfies_the_projection_formula_pointwise() {
    let spec = spec_at(&constrained_2d(), 3);
    let (nu, a, b) = (spec.nu, spec.lower, spec.upper);
    let problem = OptimalControlProblem::new(spec).unwrap();
    let sol = problem.solve(1e-8, 30).unwrap();
    let mesh = problem.dofmap().mesh().clone();
    let rule = gauss_rule(2, 10).unwrap();
    let (mut lower, mut upper, mut free) = (0, 0, 0);
    for cell in 0..mesh.n_cells() {
        for (lambda, _) in rule.iter() {
            let p = sol.p.value_in_cell(cell, lambda);
            let u = sol.control.value_in_cell(cell, lambda);
            let grad = nu * u + p;
            assert!((a..=b).contains(&u));
            if u == a {
                assert!(grad >= 0.0);
                lower += 1;
            } else if u == b {
                assert!(grad <= 0.0);
                upper += 1;
            } else {
                assert!(grad.abs() <= 1e-14 * (1.0 + p.abs()));
                free += 1;
            }
        }
    }
    assert!(lower > 0 && upper > 0 && free > 0, "{lower} {upper} {free}");
}

#[test]
fn bounds_trade_fidelity_for_admissibility() {
    let spec = spec_at(&constrained_2d(), 3);
    let problem = OptimalControlProblem::new(spec.clone()).unwrap();
    let bounded = problem.solve(1e-8, 30).unwrap();
    let free_spec = spec.with_bounds(f64::NEG_INFINITY, f64::INFINITY);
    let free_problem = OptimalControlProblem::new(free_spec).unwrap();
    let free = free_problem.solve(1e-8, 30).unwrap();
    let yb = problem.point_values(&bounded.y);
    let yf = free_problem.point_values(&free.y);
    assert!((yb[0] - 1.0).abs() > (yf[0] - 1.0).abs());
    assert!((yb[2] + 1.0).abs() > (yf[2] + 1.0).abs());
    let max_free = free
        .control
        .vertex_values()
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(max_free > 10.0);
    assert!(free.report.iterations() == 1);
}

#[test]
fn five_point_targets_are_nearly_met() {
    let spec = five_points_2d();
    let problem = OptimalControlProblem::new(spec).unwrap();
    let sol = problem.solve(1e-8, 30).unwrap();
    for (v, point) in problem
        .point_values(&sol.y)
        .iter()
        .zip(&problem.spec().points)
    {
        assert!(
            (v - point.target).abs() < 0.05,
            "{v} at {:?}",
            point.location
        );
    }
}

#[test]
fn repeated_solves_are_bitwise_identical() {
    let spec = spec_at(&constrained_2d(), 2);
    let a = solve(spec.clone()).unwrap();
    let b = solve(spec).unwrap();
    assert_eq!(a.y.coefficients(), b.y.coefficients());
    assert_eq!(a.p.coefficients(), b.p.coefficients());
    assert_eq!(a.report.residuals, b.report.residuals);
}

#[test]
fn newton_rejects_an_iteration_budget_that_is_too_small() {
    let problem = OptimalControlProblem::new(spec_at(&constrained_2d(), 1)).unwrap();
    let err = problem.solve(1e-8, 1).unwrap_err();
    assert!(matches!(
        err,
        pointctl_core::Error::NoConvergence { maxit: 1, .. }
    ));
}
