//! Semismooth Newton solver for the variationally discretised problem.
//!
//! Unknowns are the nodal coefficients of the state `y_h` and adjoint `p_h`.
//! The control is never stored: it is `u_h = P_[a,b](-p_h / nu)` evaluated
//! pointwise, so it need not be a finite-element function when the bounds
//! are active. The nonlinear system
//!
//! ```text
//! a(y_h, v) - (P_[a,b](-p_h / nu) + f, v)              = 0
//! a(w, p_h) - sum_w (y_h(w) - g_w) w(w)                = 0
//! ```
//!
//! is solved from `(0, 0)` with the generalized derivative
//! `max'(0, x) = 1` for `x >= 0`, stopping on the discrete `H^{-1}` (Z) norm
//! of the residual.

use std::sync::Arc;

use crate::assembly::{
    assemble_laplacian, assemble_load, assemble_load_cellwise, assemble_mass, assemble_stiffness,
    assemble_weighted_mass, basis_at, point_load_at, point_matrix_at, CoefficientField, DofMap,
    FeFunction, ScalarField,
};
use crate::error::{Error, Result};
use crate::mesh::{Mesh, PointLocation};
use crate::quadrature::{gauss_rule, integrate_cellwise, QuadPoint, QuadratureRule};
use crate::sparse::{
    assemble_block, conjugate_gradient, dot, BlockSystem, CsrMatrix, SolverOptions,
};

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAXIT: usize = 30;
pub const DEFAULT_ASSEMBLY_DEGREE: usize = 5;

/// `P_[a,b](v) = v + max(0, a - v) - max(0, v - b)`; infinite bounds are allowed.
///
/// Evaluated as `min(max(v, a), b)`, which is exact in floating point where
/// the sum form can land an ulp outside `[a, b]`.
pub fn project_box(v: f64, a: f64, b: f64) -> f64 {
    v.max(a).min(b)
}

/// Generalized derivative of `max(0, x)`.
fn max_prime(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        0.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObservationPoint {
    pub location: Vec<f64>,
    pub target: f64,
}

impl ObservationPoint {
    pub fn new(location: impl Into<Vec<f64>>, target: f64) -> Self {
        ObservationPoint {
            location: location.into(),
            target,
        }
    }
}

/// Data of one discrete problem:
/// minimise `1/2 sum_w (y_h(w) - g_w)^2 + nu/2 |u|^2` subject to the state
/// equation with forcing `f` and `a <= u <= b`.
#[derive(Clone)]
pub struct ProblemSpec {
    pub dofmap: Arc<DofMap>,
    pub coeffs: CoefficientField,
    pub forcing: Option<ScalarField>,
    pub nu: f64,
    pub lower: f64,
    pub upper: f64,
    pub points: Vec<ObservationPoint>,
    /// Exactness degree of the rule used for the load, `M_c` and the
    /// nonlinear control term.
    pub assembly_degree: usize,
    pub solver: SolverOptions,
}

impl std::fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("n_dofs", &self.dofmap.n_dofs())
            .field("nu", &self.nu)
            .field("lower", &self.lower)
            .field("upper", &self.upper)
            .field("points", &self.points)
            .field("forcing", &self.forcing.is_some())
            .finish()
    }
}

impl ProblemSpec {
    /// Unconstrained problem with `A = -Laplace` and no forcing.
    pub fn new(mesh: Arc<Mesh>, nu: f64, points: Vec<ObservationPoint>) -> Self {
        ProblemSpec {
            dofmap: Arc::new(DofMap::new(mesh)),
            coeffs: CoefficientField::laplacian(),
            forcing: None,
            nu,
            lower: f64::NEG_INFINITY,
            upper: f64::INFINITY,
            points,
            assembly_degree: DEFAULT_ASSEMBLY_DEGREE,
            solver: SolverOptions::default(),
        }
    }

    pub fn with_bounds(mut self, lower: f64, upper: f64) -> Self {
        self.lower = lower;
        self.upper = upper;
        self
    }

    pub fn with_forcing(mut self, f: ScalarField) -> Self {
        self.forcing = Some(f);
        self
    }

    pub fn with_coefficients(mut self, coeffs: CoefficientField) -> Self {
        self.coeffs = coeffs;
        self
    }

    /// Same data on another mesh.
    pub fn on_mesh(&self, mesh: Arc<Mesh>) -> Self {
        ProblemSpec {
            dofmap: Arc::new(DofMap::new(mesh)),
            ..self.clone()
        }
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        self.dofmap.mesh()
    }

    pub fn is_constrained(&self) -> bool {
        self.lower.is_finite() || self.upper.is_finite()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.nu > 0.0) || !self.nu.is_finite() {
            return Err(Error::InvalidProblem(format!(
                "nu must be positive, got {}",
                self.nu
            )));
        }
        if !(self.lower < self.upper) || self.lower.is_nan() || self.upper.is_nan() {
            return Err(Error::InvalidProblem(format!(
                "lower bound {} must be below upper bound {}",
                self.lower, self.upper
            )));
        }
        let mesh = self.mesh();
        for (i, p) in self.points.iter().enumerate() {
            if p.location.len() != mesh.dim() {
                return Err(Error::InvalidProblem(format!(
                    "point {i} has the wrong dimension"
                )));
            }
            if !p.target.is_finite() {
                return Err(Error::InvalidProblem(format!(
                    "point {i} has a non-finite target"
                )));
            }
            for q in &self.points[..i] {
                if p.location == q.location {
                    return Err(Error::InvalidProblem(format!(
                        "duplicate observation point {:?}",
                        p.location
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Pointwise control `u_h(x) = P_[a,b](-p_h(x) / nu)`.
#[derive(Clone, Debug)]
pub struct Control {
    pub p: FeFunction,
    pub nu: f64,
    pub lower: f64,
    pub upper: f64,
}

impl Control {
    pub fn value_in_cell(&self, cell: usize, lambda: &[f64]) -> f64 {
        project_box(
            -self.p.value_in_cell(cell, lambda) / self.nu,
            self.lower,
            self.upper,
        )
    }

    pub fn at(&self, qp: &QuadPoint) -> f64 {
        self.value_in_cell(qp.cell, qp.barycentric)
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        Ok(project_box(
            -self.p.evaluate(x)? / self.nu,
            self.lower,
            self.upper,
        ))
    }

    /// Control sampled at the mesh vertices (not a P1 function in general).
    pub fn vertex_values(&self) -> Vec<f64> {
        self.p
            .vertex_values()
            .into_iter()
            .map(|p| project_box(-p / self.nu, self.lower, self.upper))
            .collect()
    }
}

/// Components of `F_h(y_h, p_h)` tested against the nodal basis.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualPair {
    pub r_state: Vec<f64>,
    pub r_adjoint: Vec<f64>,
}

#[derive(Clone, Debug, Default)]
pub struct NewtonReport {
    /// `delta_k`, the Z-norm of the residual at every iterate including the initial one.
    pub residuals: Vec<f64>,
    /// Inner BiCGStab iterations per Newton step.
    pub linear_iterations: Vec<usize>,
}

impl NewtonReport {
    /// Number of Newton updates performed.
    pub fn iterations(&self) -> usize {
        self.residuals.len().saturating_sub(1)
    }
}

#[derive(Clone, Debug)]
pub struct OptimalControlSolution {
    pub y: FeFunction,
    pub p: FeFunction,
    pub control: Control,
    pub report: NewtonReport,
}

/// A [`ProblemSpec`] with all mesh-dependent operators assembled.
pub struct OptimalControlProblem {
    spec: ProblemSpec,
    rule: QuadratureRule,
    stiffness: CsrMatrix,
    stiffness_t: CsrMatrix,
    laplacian: CsrMatrix,
    mass: CsrMatrix,
    point_sum: CsrMatrix,
    locations: Vec<PointLocation>,
    target_load: Vec<f64>,
    forcing_load: Vec<f64>,
}

impl OptimalControlProblem {
    pub fn new(spec: ProblemSpec) -> Result<Self> {
        spec.validate()?;
        let dofmap = spec.dofmap.clone();
        let mesh = dofmap.mesh().clone();
        let rule = gauss_rule(mesh.dim(), spec.assembly_degree)?;
        spec.coeffs.validate(&mesh, &rule, f64::EPSILON)?;

        let stiffness = assemble_stiffness(&dofmap, &spec.coeffs, &rule);
        let stiffness_t = stiffness.transpose();
        let laplacian = if spec.coeffs.is_laplacian() {
            stiffness.clone()
        } else {
            assemble_laplacian(&dofmap)
        };
        let mass = assemble_mass(&dofmap);

        let n = dofmap.n_dofs();
        let mut locations = Vec::with_capacity(spec.points.len());
        let mut point_sum = CsrMatrix::zeros(n, n);
        let mut target_load = vec![0.0; n];
        for p in &spec.points {
            let loc = mesh.locate_point(&p.location)?;
            point_sum = point_sum.add(&point_matrix_at(&dofmap, &loc))?;
            for (t, g) in target_load
                .iter_mut()
                .zip(point_load_at(&dofmap, &loc, p.target))
            {
                *t += g;
            }
            locations.push(loc);
        }
        let forcing_load = match &spec.forcing {
            Some(f) => assemble_load(&dofmap, &rule, |x| f(x)),
            None => vec![0.0; n],
        };
        Ok(OptimalControlProblem {
            spec,
            rule,
            stiffness,
            stiffness_t,
            laplacian,
            mass,
            point_sum,
            locations,
            target_load,
            forcing_load,
        })
    }

    pub fn spec(&self) -> &ProblemSpec {
        &self.spec
    }

    pub fn dofmap(&self) -> &Arc<DofMap> {
        &self.spec.dofmap
    }

    pub fn rule(&self) -> &QuadratureRule {
        &self.rule
    }

    pub fn stiffness(&self) -> &CsrMatrix {
        &self.stiffness
    }

    pub fn laplacian(&self) -> &CsrMatrix {
        &self.laplacian
    }

    pub fn mass(&self) -> &CsrMatrix {
        &self.mass
    }

    /// `sum_w M_w`.
    pub fn point_matrix_sum(&self) -> &CsrMatrix {
        &self.point_sum
    }

    /// `sum_w G_w`.
    pub fn target_load(&self) -> &[f64] {
        &self.target_load
    }

    pub fn forcing_load(&self) -> &[f64] {
        &self.forcing_load
    }

    pub fn locations(&self) -> &[PointLocation] {
        &self.locations
    }

    pub fn control(&self, p: &FeFunction) -> Control {
        Control {
            p: p.clone(),
            nu: self.spec.nu,
            lower: self.spec.lower,
            upper: self.spec.upper,
        }
    }

    fn fe(&self, coefficients: Vec<f64>) -> FeFunction {
        FeFunction::from_coefficients(self.spec.dofmap.clone(), coefficients)
            .expect("solver output has n_dofs entries")
    }

    fn spd_solve(&self, matrix: &CsrMatrix, rhs: &[f64]) -> Result<Vec<f64>> {
        Ok(conjugate_gradient(matrix, rhs, &self.spec.solver)?.0)
    }

    /// `y_h = S_h eta`: `a(y_h, v) = (eta + f, v)` for all `v` in `V_h`.
    pub fn solve_state(&self, eta: impl Fn(&QuadPoint) -> f64) -> Result<FeFunction> {
        let mut rhs = assemble_load_cellwise(&self.spec.dofmap, &self.rule, eta);
        for (r, f) in rhs.iter_mut().zip(&self.forcing_load) {
            *r += f;
        }
        Ok(self.fe(self.spd_solve(&self.stiffness, &rhs)?))
    }

    /// `a(v, p_h) = sum_w (y(w) - g_w) v(w)` for all `v` in `V_h`.
    pub fn solve_adjoint(&self, y: &FeFunction) -> Result<FeFunction> {
        let rhs = self.point_mismatch_load(y);
        Ok(self.fe(self.spd_solve(&self.stiffness_t, &rhs)?))
    }

    /// `sum_w (y(w) - g_w) phi_z(w)`.
    fn point_mismatch_load(&self, y: &FeFunction) -> Vec<f64> {
        let mut rhs = vec![0.0; self.spec.dofmap.n_dofs()];
        for (loc, p) in self.locations.iter().zip(&self.spec.points) {
            let mismatch = y.value_at(loc) - p.target;
            for (d, phi) in basis_at(&self.spec.dofmap, loc) {
                rhs[d] += mismatch * phi;
            }
        }
        rhs
    }

    /// Point values `y_h(w)` at the observation points.
    pub fn point_values(&self, y: &FeFunction) -> Vec<f64> {
        self.locations.iter().map(|loc| y.value_at(loc)).collect()
    }

    /// Nodal components of `F_h(y_h, p_h)`; the control term is integrated by quadrature.
    pub fn residual(&self, y: &FeFunction, p: &FeFunction) -> ResidualPair {
        let control = self.control(p);
        let projected = assemble_load_cellwise(&self.spec.dofmap, &self.rule, |qp| control.at(qp));
        let ay = self.stiffness.mul_vec(y.coefficients());
        let r_state = ay
            .iter()
            .zip(&projected)
            .zip(&self.forcing_load)
            .map(|((a, u), f)| a - u - f)
            .collect();
        let atp = self.stiffness_t.mul_vec(p.coefficients());
        let r_adjoint = atp
            .iter()
            .zip(self.point_mismatch_load(y))
            .map(|(a, m)| a - m)
            .collect();
        ResidualPair { r_state, r_adjoint }
    }

    /// `|r|_Z = |w|_{H^1_0}` where `(grad w, grad v) = <r, v>` for all `v` in `V_h`.
    pub fn z_norm(&self, r: &[f64]) -> Result<f64> {
        z_norm(&self.laplacian, r, &self.spec.solver)
    }

    /// Product-space norm `sqrt(|r_state|_Z^2 + |r_adjoint|_Z^2)`.
    pub fn residual_norm(&self, r: &ResidualPair) -> Result<f64> {
        Ok(self.z_norm(&r.r_state)?.hypot(self.z_norm(&r.r_adjoint)?))
    }

    /// Active-set indicator `c(x) = 1 - max'(0, a + p/nu) - max'(0, -p/nu - b)`.
    pub fn active_set_weight(&self, p_value: f64) -> f64 {
        let s = &self.spec;
        let mut c = 1.0;
        if s.lower.is_finite() {
            c -= max_prime(s.lower + p_value / s.nu);
        }
        if s.upper.is_finite() {
            c -= max_prime(-p_value / s.nu - s.upper);
        }
        c
    }

    /// `M_c` for the current adjoint.
    pub fn active_mass(&self, p: &FeFunction) -> CsrMatrix {
        if !self.spec.is_constrained() {
            return self.mass.clone();
        }
        assemble_weighted_mass(&self.spec.dofmap, &self.rule, |qp| {
            self.active_set_weight(p.value_in_cell(qp.cell, qp.barycentric))
        })
    }

    /// Generalized Jacobian at `p`, with right-hand side `-F_h(y, p)` when a residual is given.
    pub fn newton_jacobian(
        &self,
        p: &FeFunction,
        residual: Option<&ResidualPair>,
    ) -> Result<BlockSystem> {
        let n = self.spec.dofmap.n_dofs();
        let (top, bottom) = match residual {
            Some(r) => (
                r.r_state.iter().map(|v| -v).collect(),
                r.r_adjoint.iter().map(|v| -v).collect(),
            ),
            None => (vec![0.0; n], vec![0.0; n]),
        };
        assemble_block(
            self.stiffness.clone(),
            self.active_mass(p),
            self.point_sum.scaled(-1.0),
            top,
            bottom,
        )
    }

    /// Semismooth Newton iteration from `(0, 0)` until the Z-norm of the
    /// residual is at most `tol`.
    pub fn solve(&self, tol: f64, maxit: usize) -> Result<OptimalControlSolution> {
        let n = self.spec.dofmap.n_dofs();
        let mut y = self.fe(vec![0.0; n]);
        let mut p = self.fe(vec![0.0; n]);
        let mut report = NewtonReport::default();
        loop {
            let r = self.residual(&y, &p);
            let delta = self.residual_norm(&r)?;
            report.residuals.push(delta);
            if delta <= tol {
                break;
            }
            if report.iterations() >= maxit {
                return Err(Error::NoConvergence {
                    maxit,
                    last: delta,
                    log: report.residuals,
                });
            }
            let system = self.newton_jacobian(&p, Some(&r))?;
            let (dy, dp, lin) = system.solve(self.spec.nu, &self.spec.solver)?;
            report.linear_iterations.push(lin.iterations);
            y.coefficients_mut()
                .iter_mut()
                .zip(&dy)
                .for_each(|(a, d)| *a += d);
            p.coefficients_mut()
                .iter_mut()
                .zip(&dp)
                .for_each(|(a, d)| *a += d);
        }
        let control = self.control(&p);
        Ok(OptimalControlSolution {
            y,
            p,
            control,
            report,
        })
    }

    /// Reduced objective `1/2 sum_w (S_h eta (w) - g_w)^2 + nu/2 |eta|^2`,
    /// with the norm integrated by the assembly rule.
    pub fn objective(&self, eta: impl Fn(&QuadPoint) -> f64) -> Result<f64> {
        let y = self.solve_state(&eta)?;
        let fidelity: f64 = self
            .point_values(&y)
            .iter()
            .zip(&self.spec.points)
            .map(|(v, p)| (v - p.target).powi(2))
            .sum();
        let norm2 = integrate_cellwise(self.spec.mesh(), &self.rule, |qp| eta(qp).powi(2));
        Ok(0.5 * fidelity + 0.5 * self.spec.nu * norm2)
    }
}

/// `sqrt(w^T L w)` with `L w = r`, `L` the pure-Laplacian stiffness matrix.
pub fn z_norm(laplacian: &CsrMatrix, r: &[f64], opts: &SolverOptions) -> Result<f64> {
    if r.iter().all(|&v| v == 0.0) {
        return Ok(0.0);
    }
    let (w, _) = conjugate_gradient(laplacian, r, opts)?;
    Ok(dot(&w, r).max(0.0).sqrt())
}

/// Convenience wrapper: assemble and run Newton with the default tolerance.
pub fn solve(spec: ProblemSpec) -> Result<OptimalControlSolution> {
    OptimalControlProblem::new(spec)?.solve(DEFAULT_TOL, DEFAULT_MAXIT)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_unit_square;
    use crate::sparse::{dense_solve_oracle, DenseMatrix};
    use rand::{Rng, SeedableRng};

    fn square_problem(n: usize, nu: f64, bounds: Option<(f64, f64)>) -> OptimalControlProblem {
        let points = vec![
            ObservationPoint::new([0.2, 0.5], 1.0),
            ObservationPoint::new([0.5, 0.5], 0.0),
            ObservationPoint::new([0.8, 0.5], -1.0),
        ];
        let mut spec = ProblemSpec::new(Arc::new(build_unit_square(n)), nu, points);
        if let Some((a, b)) = bounds {
            spec = spec.with_bounds(a, b);
        }
        OptimalControlProblem::new(spec).unwrap()
    }

    #[test]
    fn projection() {
        assert_eq!(project_box(5.0, f64::NEG_INFINITY, f64::INFINITY), 5.0);
        assert_eq!(project_box(-12.0, -10.0, 10.0), -10.0);
        assert_eq!(project_box(12.0, -10.0, 10.0), 10.0);
        assert_eq!(project_box(3.0, -10.0, 10.0), 3.0);
    }

    #[test]
    fn invalid_specs() {
        let mesh = Arc::new(build_unit_square(4));
        let pts = vec![ObservationPoint::new([0.5, 0.5], 0.0)];
        assert!(ProblemSpec::new(mesh.clone(), 0.0, pts.clone())
            .validate()
            .is_err());
        assert!(ProblemSpec::new(mesh.clone(), 1.0, pts.clone())
            .with_bounds(1.0, -1.0)
            .validate()
            .is_err());
        let dup = vec![pts[0].clone(), pts[0].clone()];
        assert!(ProblemSpec::new(mesh.clone(), 1.0, dup).validate().is_err());
        let outside = vec![ObservationPoint::new([1.5, 0.5], 0.0)];
        assert!(matches!(
            OptimalControlProblem::new(ProblemSpec::new(mesh, 1.0, outside)),
            Err(Error::PointOutsideMesh(_))
        ));
    }

    #[test]
    fn state_of_zero_data_is_zero() {
        let prob = square_problem(4, 1.0, None);
        let y = prob.solve_state(|_| 0.0).unwrap();
        assert!(y.coefficients().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn adjoint_vanishes_when_targets_are_met() {
        let prob = square_problem(8, 1.0, None);
        let y = prob.solve_state(|qp| qp.x[0]).unwrap();
        let targets = prob.point_values(&y);
        let points: Vec<_> = prob
            .spec()
            .points
            .iter()
            .zip(&targets)
            .map(|(p, &g)| ObservationPoint::new(p.location.clone(), g))
            .collect();
        let spec = ProblemSpec {
            points,
            ..prob.spec().clone()
        };
        let p = OptimalControlProblem::new(spec)
            .unwrap()
            .solve_adjoint(&y)
            .unwrap();
        assert!(p.coefficients().iter().all(|&v| v.abs() < 1e-14));
    }

    #[test]
    fn adjoint_at_vertex_is_green_column() {
        let mesh = Arc::new(build_unit_square(6));
        let vertex = [0.5, 0.5];
        let spec = ProblemSpec::new(mesh, 1.0, vec![ObservationPoint::new(vertex, -1.0)]);
        let prob = OptimalControlProblem::new(spec).unwrap();
        let y = FeFunction::zeros(prob.dofmap().clone());
        let p = prob.solve_adjoint(&y).unwrap();
        let v = prob.spec().mesh().locate_point(&vertex).unwrap();
        let dof = prob
            .dofmap()
            .dof(
                prob.spec().mesh().cell(v.cell_index)[v
                    .barycentric
                    .iter()
                    .position(|&l| (l - 1.0).abs() < 1e-12)
                    .unwrap()],
            )
            .unwrap();
        let mut e = vec![0.0; prob.dofmap().n_dofs()];
        e[dof] = 1.0;
        let exact = dense_solve_oracle(&prob.stiffness().transpose().to_dense(), &e).unwrap();
        for (a, b) in p.coefficients().iter().zip(&exact) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn adjoint_superposition() {
        let mesh = Arc::new(build_unit_square(8));
        let p1 = ObservationPoint::new([0.3, 0.4], 2.0);
        let p2 = ObservationPoint::new([0.7, 0.55], -1.0);
        let solve_with = |pts: Vec<ObservationPoint>| {
            let prob =
                OptimalControlProblem::new(ProblemSpec::new(mesh.clone(), 1.0, pts)).unwrap();
            let y = FeFunction::zeros(prob.dofmap().clone());
            prob.solve_adjoint(&y).unwrap()
        };
        let both = solve_with(vec![p1.clone(), p2.clone()]);
        let a = solve_with(vec![p1]);
        let b = solve_with(vec![p2]);
        for i in 0..both.coefficients().len() {
            let s = a.coefficients()[i] + b.coefficients()[i];
            assert!((both.coefficients()[i] - s).abs() < 1e-10);
        }
    }

    #[test]
    fn residual_at_origin_is_point_load() {
        let prob = square_problem(8, 1.0, None);
        let z = FeFunction::zeros(prob.dofmap().clone());
        let spec = ProblemSpec {
            points: prob
                .spec()
                .points
                .iter()
                .map(|p| ObservationPoint::new(p.location.clone(), 1.0))
                .collect(),
            ..prob.spec().clone()
        };
        let prob = OptimalControlProblem::new(spec).unwrap();
        let r = prob.residual(&z, &z);
        assert!(r.r_state.iter().all(|&v| v == 0.0));
        let mut expected = vec![0.0; prob.dofmap().n_dofs()];
        for loc in prob.locations() {
            for (d, phi) in basis_at(prob.dofmap(), loc) {
                expected[d] += phi;
            }
        }
        for (a, b) in r.r_adjoint.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn residual_matches_independent_formula() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let prob = square_problem(6, 0.05, Some((-3.0, 2.0)));
        let n = prob.dofmap().n_dofs();
        let y = prob.fe((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let p = prob.fe((0..n).map(|_| rng.gen_range(-0.3..0.3)).collect());
        let r = prob.residual(&y, &p);

        // Second implementation: element loop over physical quadrature nodes,
        // point values through point location.
        let mesh = prob.spec().mesh().clone();
        let a = prob.stiffness().to_dense();
        let mut state = a.mul_vec(y.coefficients());
        for c in 0..mesh.n_cells() {
            let map = crate::quadrature::ReferenceMap::new(&mesh, c);
            for (bary, w) in prob.rule().iter() {
                let x = map.map(bary);
                let pval = p.evaluate(&x).unwrap();
                let u = (-pval / 0.05).clamp(-3.0, 2.0);
                for (i, &v) in mesh.cell(c).iter().enumerate() {
                    if let Some(d) = prob.dofmap().dof(v) {
                        state[d] -= w * map.jacobian_det * u * bary[i];
                    }
                }
            }
        }
        let mut adjoint = a.mul_vec(p.coefficients());
        for pt in &prob.spec().points {
            let mismatch = y.evaluate(&pt.location).unwrap() - pt.target;
            for d in 0..n {
                let mut e = vec![0.0; n];
                e[d] = 1.0;
                let phi = prob.fe(e).evaluate(&pt.location).unwrap();
                adjoint[d] -= mismatch * phi;
            }
        }
        for i in 0..n {
            assert!((r.r_state[i] - state[i]).abs() < 1e-12);
            assert!((r.r_adjoint[i] - adjoint[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn z_norm_definition() {
        let prob = square_problem(5, 1.0, None);
        assert_eq!(
            prob.z_norm(&vec![0.0; prob.dofmap().n_dofs()]).unwrap(),
            0.0
        );
        let n = prob.dofmap().n_dofs();
        let w: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).sin()).collect();
        let r = prob.laplacian().mul_vec(&w);
        let expected = prob.laplacian().quadratic_form(&w).sqrt();
        assert!((prob.z_norm(&r).unwrap() - expected).abs() < 1e-10 * expected);

        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let r: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w = dense_solve_oracle(&prob.laplacian().to_dense(), &r).unwrap();
        let oracle = dot(&w, &r).sqrt();
        assert!((prob.z_norm(&r).unwrap() - oracle).abs() < 1e-9);
    }

    #[test]
    fn unconstrained_jacobian_uses_full_mass() {
        let prob = square_problem(4, 1.0, None);
        let p = prob.fe(vec![1.0; prob.dofmap().n_dofs()]);
        let sys = prob.newton_jacobian(&p, None).unwrap();
        assert_eq!(sys.coupling_top_right, *prob.mass());
    }

    #[test]
    fn fully_active_lower_bound_gives_zero_weight() {
        let prob = square_problem(4, 0.1, Some((-1.0, 1.0)));
        // -p/nu = -50 < a everywhere inside
        let p = FeFunction::interpolate(prob.dofmap().clone(), |_| 5.0);
        let inner = prob.dofmap().mesh().clone();
        let interior_cells = (0..inner.n_cells())
            .filter(|&c| inner.cell(c).iter().all(|&v| !inner.is_boundary_vertex(v)))
            .count();
        assert!(interior_cells > 0);
        let mc = prob.active_mass(&p);
        // Only cells touching the boundary, where p_h drops to zero, keep c = 1.
        let touches_boundary_only = mc.triplets().all(|(r, c, _)| {
            let (vr, vc) = (prob.dofmap().vertex(r), prob.dofmap().vertex(c));
            inner.cells_of_vertex(vr).iter().any(|&cell| {
                inner.cell(cell).contains(&vc)
                    && inner
                        .cell(cell)
                        .iter()
                        .any(|&v| inner.is_boundary_vertex(v))
            })
        });
        assert!(touches_boundary_only);
        // p far beyond the bound everywhere: every weight is 0
        assert_eq!(prob.active_set_weight(5.0), 0.0);
        assert_eq!(prob.active_set_weight(-5.0), 0.0);
        assert_eq!(prob.active_set_weight(0.0), 1.0);
        // kink convention: max'(0, 0) = 1
        assert_eq!(prob.active_set_weight(0.1), 0.0);
    }

    #[test]
    fn jacobian_matches_finite_differences_away_from_kinks() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let nu = 0.1;
        let prob = square_problem(8, nu, Some((-1.0, 1.0)));
        let n = prob.dofmap().n_dofs();
        let y = prob.fe((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let p = FeFunction::interpolate(prob.dofmap().clone(), |x| {
            0.25 * (6.0 * x[0]).sin() * (4.0 * x[1]).cos()
        });
        let delta_y: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let delta_p: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let t = 1e-6;
        let yp = prob.fe(y
            .coefficients()
            .iter()
            .zip(&delta_y)
            .map(|(a, b)| a + t * b)
            .collect());
        let pp = prob.fe(p
            .coefficients()
            .iter()
            .zip(&delta_p)
            .map(|(a, b)| a + t * b)
            .collect());
        let r0 = prob.residual(&y, &p);
        let r1 = prob.residual(&yp, &pp);
        let sys = prob.newton_jacobian(&p, None).unwrap();
        let jac = sys.to_csr(nu);
        let dir: Vec<f64> = delta_y.iter().chain(&delta_p).copied().collect();
        let jd = jac.mul_vec(&dir);

        // Rows whose support meets a cell where a + p/nu or -p/nu - b changes
        // sign along the perturbation are excluded.
        let mesh = prob.spec().mesh().clone();
        let mut near_kink = vec![false; n];
        for c in 0..mesh.n_cells() {
            let mut crosses = false;
            for (bary, _) in prob.rule().iter() {
                let v0 = p.value_in_cell(c, bary);
                let v1 = pp.value_in_cell(c, bary);
                if prob.active_set_weight(v0) != prob.active_set_weight(v1) {
                    crosses = true;
                }
            }
            if crosses {
                for &v in mesh.cell(c) {
                    if let Some(d) = prob.dofmap().dof(v) {
                        near_kink[d] = true;
                    }
                }
            }
        }
        let fd: Vec<f64> = r1
            .r_state
            .iter()
            .chain(&r1.r_adjoint)
            .zip(r0.r_state.iter().chain(&r0.r_adjoint))
            .map(|(a, b)| (a - b) / t)
            .collect();
        let scale = jd.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut checked = 0;
        for i in 0..2 * n {
            if i < n && near_kink[i] {
                continue;
            }
            assert!(
                (fd[i] - jd[i]).abs() < 1e-5 * scale,
                "row {i}: {} vs {}",
                fd[i],
                jd[i]
            );
            checked += 1;
        }
        assert!(checked > n);
        // the active set is non-trivial for this p
        let weights: std::collections::BTreeSet<i32> = mesh
            .cells()
            .enumerate()
            .flat_map(|(c, _)| prob.rule().iter().map(move |(b, _)| (c, b.to_vec())))
            .map(|(c, b)| prob.active_set_weight(p.value_in_cell(c, &b)) as i32)
            .collect();
        assert_eq!(weights.len(), 2);
    }

    #[test]
    fn zero_data_converges_immediately() {
        let mesh = Arc::new(build_unit_square(4));
        let spec = ProblemSpec::new(mesh, 1.0, vec![ObservationPoint::new([0.5, 0.5], 0.0)])
            .with_bounds(-1.0, 1.0);
        let sol = solve(spec).unwrap();
        assert!(sol.report.iterations() <= 1);
        assert!(sol.y.coefficients().iter().all(|&v| v.abs() < 1e-14));
        assert!(sol.p.coefficients().iter().all(|&v| v.abs() < 1e-14));
    }

    #[test]
    fn unconstrained_is_one_newton_step_and_satisfies_linear_system() {
        let prob = square_problem(8, 1e-2, None);
        let sol = prob.solve(DEFAULT_TOL, DEFAULT_MAXIT).unwrap();
        assert_eq!(sol.report.iterations(), 1);
        let n = prob.dofmap().n_dofs();
        let full = prob.newton_jacobian(&sol.p, None).unwrap().to_csr(1e-2);
        let x: Vec<f64> = sol
            .y
            .coefficients()
            .iter()
            .chain(sol.p.coefficients())
            .copied()
            .collect();
        let lhs = full.mul_vec(&x);
        let rhs: Vec<f64> = prob
            .forcing_load()
            .iter()
            .copied()
            .chain(prob.target_load().iter().map(|g| -g))
            .collect();
        let res = lhs
            .iter()
            .zip(&rhs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(res < 1e-9, "{res}");
        // the monolithic solve agrees with the dense oracle
        let dense: DenseMatrix = full.to_dense();
        let exact = dense_solve_oracle(&dense, &rhs).unwrap();
        for i in 0..2 * n {
            assert!((x[i] - exact[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn constrained_control_stays_in_box_and_is_optimal() {
        let prob = square_problem(8, 1e-2, Some((-10.0, 10.0)));
        let sol = prob.solve(DEFAULT_TOL, DEFAULT_MAXIT).unwrap();
        assert!(*sol.report.residuals.last().unwrap() <= DEFAULT_TOL);
        assert!(sol
            .control
            .vertex_values()
            .iter()
            .all(|&u| (-10.0..=10.0).contains(&u)));
        // bounds are active somewhere
        assert!(sol.control.vertex_values().iter().any(|&u| u.abs() == 10.0));

        let best = prob.objective(|qp| sol.control.at(qp)).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let mesh = prob.spec().mesh().clone();
        for _ in 0..20 {
            let noise: Vec<f64> = (0..mesh.n_vertices())
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect();
            let perturbed = |qp: &QuadPoint| {
                let bump: f64 = mesh
                    .cell(qp.cell)
                    .iter()
                    .zip(qp.barycentric)
                    .map(|(&v, l)| l * noise[v])
                    .sum();
                project_box(sol.control.at(qp) + bump, -10.0, 10.0)
            };
            assert!(prob.objective(perturbed).unwrap() >= best - 1e-10);
        }
    }
}
