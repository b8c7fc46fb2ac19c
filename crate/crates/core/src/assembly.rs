//! P1 finite-element assembly on the interior degrees of freedom.
//!
//! Homogeneous Dirichlet conditions are imposed by elimination: only
//! interior vertices carry unknowns, and every discrete function is zero on
//! the boundary of `Omega_h` and on the skin outside it.

use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::mesh::{Mesh, PointLocation};
use crate::quadrature::{integrate_cellwise, QuadPoint, QuadratureRule, ReferenceMap};
use crate::sparse::CsrMatrix;

pub type ScalarField = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
/// Fills a row-major `dim x dim` tensor at a point.
pub type TensorField = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// Coefficients of `-div(a grad y) + a0 y`. `None` means identity diffusion
/// or zero reaction respectively.
#[derive(Clone, Default)]
pub struct CoefficientField {
    pub diffusion: Option<TensorField>,
    pub reaction: Option<ScalarField>,
}

impl std::fmt::Debug for CoefficientField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CoefficientField")
            .field("diffusion", &self.diffusion.as_ref().map(|_| "fn"))
            .field("reaction", &self.reaction.as_ref().map(|_| "fn"))
            .finish()
    }
}

impl CoefficientField {
    /// `A = -Laplace`.
    pub fn laplacian() -> Self {
        Self::default()
    }

    pub fn is_laplacian(&self) -> bool {
        self.diffusion.is_none() && self.reaction.is_none()
    }

    pub fn diffusion_at(&self, x: &[f64], out: &mut [f64]) {
        let dim = x.len();
        match &self.diffusion {
            Some(a) => a(x, out),
            None => {
                out.iter_mut().for_each(|v| *v = 0.0);
                for k in 0..dim {
                    out[k * dim + k] = 1.0;
                }
            }
        }
    }

    pub fn reaction_at(&self, x: &[f64]) -> f64 {
        self.reaction.as_ref().map_or(0.0, |r| r(x))
    }

    /// Spot-checks symmetry, uniform ellipticity (smallest eigenvalue at
    /// least `alpha`) and nonnegativity of the reaction at every quadrature node.
    pub fn validate(&self, mesh: &Mesh, rule: &QuadratureRule, alpha: f64) -> Result<()> {
        if self.is_laplacian() {
            return Ok(());
        }
        let dim = mesh.dim();
        let mut a = vec![0.0; dim * dim];
        let mut failure = None;
        integrate_cellwise(mesh, rule, |qp| {
            if failure.is_some() {
                return 0.0;
            }
            if self.reaction_at(qp.x) < 0.0 {
                failure = Some(format!("negative reaction coefficient at {:?}", qp.x));
            }
            self.diffusion_at(qp.x, &mut a);
            let m = DMatrix::from_row_slice(dim, dim, &a);
            if (&m - m.transpose()).amax() > 1e-12 * m.amax().max(1.0) {
                failure = Some(format!("diffusion tensor not symmetric at {:?}", qp.x));
            } else {
                let lmin = SymmetricEigen::new(m).eigenvalues.min();
                if lmin < alpha {
                    failure = Some(format!(
                        "diffusion eigenvalue {lmin} below {alpha} at {:?}",
                        qp.x
                    ));
                }
            }
            0.0
        });
        failure.map_or(Ok(()), |msg| Err(Error::InvalidProblem(msg)))
    }
}

/// Numbering of the interior vertices `N` as `0..n_int`.
#[derive(Clone, Debug)]
pub struct DofMap {
    mesh: Arc<Mesh>,
    interior: Vec<usize>,
    vertex_to_dof: Vec<Option<usize>>,
}

impl DofMap {
    pub fn new(mesh: Arc<Mesh>) -> Self {
        let mut interior = Vec::new();
        let vertex_to_dof = (0..mesh.n_vertices())
            .map(|v| {
                (!mesh.is_boundary_vertex(v)).then(|| {
                    interior.push(v);
                    interior.len() - 1
                })
            })
            .collect();
        DofMap {
            mesh,
            interior,
            vertex_to_dof,
        }
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn n_dofs(&self) -> usize {
        self.interior.len()
    }

    /// Interior vertex indices in DoF order.
    pub fn interior_vertices(&self) -> &[usize] {
        &self.interior
    }

    pub fn dof(&self, vertex: usize) -> Option<usize> {
        self.vertex_to_dof[vertex]
    }

    pub fn vertex(&self, dof: usize) -> usize {
        self.interior[dof]
    }
}

/// Nodal P1 function, zero on the boundary and outside `Omega_h`.
#[derive(Clone, Debug)]
pub struct FeFunction {
    dofmap: Arc<DofMap>,
    coefficients: Vec<f64>,
}

impl FeFunction {
    pub fn zeros(dofmap: Arc<DofMap>) -> Self {
        let n = dofmap.n_dofs();
        FeFunction {
            dofmap,
            coefficients: vec![0.0; n],
        }
    }

    pub fn from_coefficients(dofmap: Arc<DofMap>, coefficients: Vec<f64>) -> Result<Self> {
        if coefficients.len() != dofmap.n_dofs() {
            return Err(Error::DimensionMismatch(format!(
                "{} coefficients for {} degrees of freedom",
                coefficients.len(),
                dofmap.n_dofs()
            )));
        }
        Ok(FeFunction {
            dofmap,
            coefficients,
        })
    }

    /// Nodal interpolant of `f` at the interior vertices.
    pub fn interpolate(dofmap: Arc<DofMap>, f: impl Fn(&[f64]) -> f64) -> Self {
        let coefficients = dofmap
            .interior_vertices()
            .iter()
            .map(|&v| f(dofmap.mesh().vertex(v)))
            .collect();
        FeFunction {
            dofmap,
            coefficients,
        }
    }

    pub fn dofmap(&self) -> &Arc<DofMap> {
        &self.dofmap
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn coefficients_mut(&mut self) -> &mut [f64] {
        &mut self.coefficients
    }

    pub fn into_coefficients(self) -> Vec<f64> {
        self.coefficients
    }

    /// Value at a vertex (zero on boundary vertices).
    pub fn vertex_value(&self, v: usize) -> f64 {
        self.dofmap.dof(v).map_or(0.0, |d| self.coefficients[d])
    }

    pub fn vertex_values(&self) -> Vec<f64> {
        (0..self.dofmap.mesh().n_vertices())
            .map(|v| self.vertex_value(v))
            .collect()
    }

    /// Value inside `cell` at barycentric coordinates `lambda`.
    pub fn value_in_cell(&self, cell: usize, lambda: &[f64]) -> f64 {
        self.dofmap
            .mesh()
            .cell(cell)
            .iter()
            .zip(lambda)
            .map(|(&v, &l)| l * self.vertex_value(v))
            .sum()
    }

    pub fn value_at(&self, loc: &PointLocation) -> f64 {
        self.value_in_cell(loc.cell_index, &loc.barycentric)
    }

    /// Point evaluation; points outside `Omega_h` are an error.
    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        let loc = self.dofmap.mesh().locate_point(x)?;
        Ok(self.value_at(&loc))
    }
}

fn cell_dofs(dofmap: &DofMap, cell: usize) -> Vec<Option<usize>> {
    dofmap
        .mesh()
        .cell(cell)
        .iter()
        .map(|&v| dofmap.dof(v))
        .collect()
}

fn push_local(triplets: &mut Vec<(usize, usize, f64)>, dofs: &[Option<usize>], local: &[f64]) {
    let nb = dofs.len();
    for i in 0..nb {
        let Some(di) = dofs[i] else { continue };
        for j in 0..nb {
            let Some(dj) = dofs[j] else { continue };
            triplets.push((di, dj, local[i * nb + j]));
        }
    }
}

fn finish(dofmap: &DofMap, triplets: &[(usize, usize, f64)]) -> CsrMatrix {
    let n = dofmap.n_dofs();
    CsrMatrix::from_triplets(n, n, triplets).expect("local dofs are in range")
}

/// `A_{z zbar} = a(phi_z, phi_zbar)`. The rule is used only when the
/// coefficients are not the plain Laplacian.
pub fn assemble_stiffness(
    dofmap: &DofMap,
    coeffs: &CoefficientField,
    rule: &QuadratureRule,
) -> CsrMatrix {
    if coeffs.is_laplacian() {
        return assemble_laplacian(dofmap);
    }
    let mesh = dofmap.mesh();
    let dim = mesh.dim();
    let nb = dim + 1;
    let mut a = vec![0.0; dim * dim];
    let mut triplets = Vec::with_capacity(mesh.n_cells() * nb * nb);
    let mut local = vec![0.0; nb * nb];
    for c in 0..mesh.n_cells() {
        let map = ReferenceMap::new(mesh, c);
        let grads = map.barycentric_gradients();
        let jdet = map.jacobian_det.abs();
        local.iter_mut().for_each(|v| *v = 0.0);
        for (bary, w) in rule.iter() {
            let x = map.map(bary);
            coeffs.diffusion_at(&x, &mut a);
            let a0 = coeffs.reaction_at(&x);
            for i in 0..nb {
                for j in 0..nb {
                    let mut s = 0.0;
                    for r in 0..dim {
                        for k in 0..dim {
                            s += a[r * dim + k] * grads[j][r] * grads[i][k];
                        }
                    }
                    local[i * nb + j] += w * jdet * (s + a0 * bary[i] * bary[j]);
                }
            }
        }
        push_local(&mut triplets, &cell_dofs(dofmap, c), &local);
    }
    finish(dofmap, &triplets)
}

/// Stiffness matrix of `-Laplace`, `(grad phi_z, grad phi_zbar)`.
pub fn assemble_laplacian(dofmap: &DofMap) -> CsrMatrix {
    let mesh = dofmap.mesh();
    let nb = mesh.dim() + 1;
    let mut triplets = Vec::with_capacity(mesh.n_cells() * nb * nb);
    let mut local = vec![0.0; nb * nb];
    for c in 0..mesh.n_cells() {
        let map = ReferenceMap::new(mesh, c);
        let grads = map.barycentric_gradients();
        let vol = mesh.signed_volume(c);
        for i in 0..nb {
            for j in 0..nb {
                local[i * nb + j] = vol
                    * grads[i]
                        .iter()
                        .zip(&grads[j])
                        .map(|(a, b)| a * b)
                        .sum::<f64>();
            }
        }
        push_local(&mut triplets, &cell_dofs(dofmap, c), &local);
    }
    finish(dofmap, &triplets)
}

/// Consistent P1 mass matrix, `|T| (1 + delta_ij) / ((d + 1)(d + 2))` per cell.
pub fn assemble_mass(dofmap: &DofMap) -> CsrMatrix {
    let mesh = dofmap.mesh();
    let dim = mesh.dim();
    let nb = dim + 1;
    let denom = ((dim + 1) * (dim + 2)) as f64;
    let mut triplets = Vec::with_capacity(mesh.n_cells() * nb * nb);
    let mut local = vec![0.0; nb * nb];
    for c in 0..mesh.n_cells() {
        let vol = mesh.signed_volume(c);
        for i in 0..nb {
            for j in 0..nb {
                local[i * nb + j] = vol * if i == j { 2.0 } else { 1.0 } / denom;
            }
        }
        push_local(&mut triplets, &cell_dofs(dofmap, c), &local);
    }
    finish(dofmap, &triplets)
}

/// `Q(c phi_z phi_zbar)` for a pointwise weight `c` seen at every quadrature node.
pub fn assemble_weighted_mass(
    dofmap: &DofMap,
    rule: &QuadratureRule,
    c: impl Fn(&QuadPoint) -> f64,
) -> CsrMatrix {
    let mesh = dofmap.mesh();
    let nb = mesh.dim() + 1;
    let mut triplets = Vec::with_capacity(mesh.n_cells() * nb * nb);
    let mut local = vec![0.0; nb * nb];
    for cell in 0..mesh.n_cells() {
        let map = ReferenceMap::new(mesh, cell);
        let jdet = map.jacobian_det.abs();
        local.iter_mut().for_each(|v| *v = 0.0);
        let mut any = false;
        for (bary, w) in rule.iter() {
            let x = map.map(bary);
            let weight = c(&QuadPoint {
                cell,
                barycentric: bary,
                x: &x,
            });
            if weight == 0.0 {
                continue;
            }
            any = true;
            for i in 0..nb {
                for j in 0..nb {
                    local[i * nb + j] += w * jdet * weight * bary[i] * bary[j];
                }
            }
        }
        if any {
            push_local(&mut triplets, &cell_dofs(dofmap, cell), &local);
        }
    }
    finish(dofmap, &triplets)
}

/// Located point `omega`, as used for point matrices and loads.
pub fn locate(dofmap: &DofMap, omega: &[f64]) -> Result<PointLocation> {
    dofmap.mesh().locate_point(omega)
}

/// Nodal basis values at a located point: `(dof, phi_dof(omega))` for the
/// interior vertices of the containing cell.
pub fn basis_at(dofmap: &DofMap, loc: &PointLocation) -> Vec<(usize, f64)> {
    dofmap
        .mesh()
        .cell(loc.cell_index)
        .iter()
        .zip(&loc.barycentric)
        .filter_map(|(&v, &l)| dofmap.dof(v).map(|d| (d, l)))
        .collect()
}

/// `(M_w)_{z zbar} = phi_z(w) phi_zbar(w)`.
pub fn assemble_point_matrix(dofmap: &DofMap, omega: &[f64]) -> Result<CsrMatrix> {
    Ok(point_matrix_at(dofmap, &locate(dofmap, omega)?))
}

pub fn point_matrix_at(dofmap: &DofMap, loc: &PointLocation) -> CsrMatrix {
    let basis = basis_at(dofmap, loc);
    let mut triplets = Vec::with_capacity(basis.len() * basis.len());
    for &(i, pi) in &basis {
        for &(j, pj) in &basis {
            if pi * pj != 0.0 {
                triplets.push((i, j, pi * pj));
            }
        }
    }
    finish(dofmap, &triplets)
}

/// `(G_w)_z = g_w phi_z(w)`.
pub fn assemble_point_load(dofmap: &DofMap, omega: &[f64], g: f64) -> Result<Vec<f64>> {
    Ok(point_load_at(dofmap, &locate(dofmap, omega)?, g))
}

pub fn point_load_at(dofmap: &DofMap, loc: &PointLocation, g: f64) -> Vec<f64> {
    let mut out = vec![0.0; dofmap.n_dofs()];
    for (d, phi) in basis_at(dofmap, loc) {
        out[d] += g * phi;
    }
    out
}

/// `F_z = Q(f phi_z)` with a pointwise `f`.
pub fn assemble_load(
    dofmap: &DofMap,
    rule: &QuadratureRule,
    f: impl Fn(&[f64]) -> f64,
) -> Vec<f64> {
    assemble_load_cellwise(dofmap, rule, |qp| f(qp.x))
}

/// `F_z = Q(f phi_z)` where `f` may use the cell and barycentric position
/// (e.g. to evaluate a finite-element function without point location).
pub fn assemble_load_cellwise(
    dofmap: &DofMap,
    rule: &QuadratureRule,
    f: impl Fn(&QuadPoint) -> f64,
) -> Vec<f64> {
    let mesh = dofmap.mesh();
    let nb = mesh.dim() + 1;
    let mut out = vec![0.0; dofmap.n_dofs()];
    let mut local = vec![0.0; nb];
    for cell in 0..mesh.n_cells() {
        let dofs = cell_dofs(dofmap, cell);
        if dofs.iter().all(Option::is_none) {
            continue;
        }
        let map = ReferenceMap::new(mesh, cell);
        let jdet = map.jacobian_det.abs();
        local.iter_mut().for_each(|v| *v = 0.0);
        for (bary, w) in rule.iter() {
            let x = map.map(bary);
            let fx = f(&QuadPoint {
                cell,
                barycentric: bary,
                x: &x,
            });
            for i in 0..nb {
                local[i] += w * jdet * fx * bary[i];
            }
        }
        for (d, l) in dofs.iter().zip(&local) {
            if let Some(d) = d {
                out[*d] += l;
            }
        }
    }
    out
}

/// `sqrt(Q((approx - exact)^2))` over `Omega_h`.
pub fn l2_error(
    mesh: &Mesh,
    rule: &QuadratureRule,
    approx: impl Fn(&QuadPoint) -> f64,
    exact: impl Fn(&[f64]) -> f64,
) -> f64 {
    integrate_cellwise(mesh, rule, |qp| {
        let e = approx(qp) - exact(qp.x);
        e * e
    })
    .sqrt()
}

/// `sqrt(Q(v^2))` over `Omega_h`.
pub fn l2_norm(mesh: &Mesh, rule: &QuadratureRule, v: impl Fn(&QuadPoint) -> f64) -> f64 {
    l2_error(mesh, rule, v, |_| 0.0)
}
