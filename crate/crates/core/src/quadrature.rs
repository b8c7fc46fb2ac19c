//! Gauss quadrature on reference simplices.
//!
//! Rules are conical (collapsed-coordinate) products of one-dimensional
//! Gauss-Legendre and Gauss-Jacobi rules. With `m` points per direction a
//! rule integrates every polynomial of total degree `2m - 1` exactly, all
//! nodes lie strictly inside the simplex and all weights are positive.
//!
//! Reference simplices are `{x_i >= 0, sum x_i <= 1}`; weights sum to the
//! reference volume (1/2 or 1/6).

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::mesh::Mesh;

pub const MAX_DEGREE: usize = 10;

/// Quadrature nodes in barycentric form with reference-volume weights.
#[derive(Clone, Debug)]
pub struct QuadratureRule {
    dim: usize,
    degree: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Total polynomial degree integrated exactly.
    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Barycentric coordinates `(lambda_0, ..., lambda_dim)` of node `q`.
    pub fn point(&self, q: usize) -> &[f64] {
        let nb = self.dim + 1;
        &self.points[q * nb..(q + 1) * nb]
    }

    pub fn weight(&self, q: usize) -> f64 {
        self.weights[q]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.points
            .chunks(self.dim + 1)
            .zip(self.weights.iter().copied())
    }
}

/// Smallest rule in the conical-product family that is exact for `degree`.
pub fn gauss_rule(dim: usize, degree: usize) -> Result<QuadratureRule> {
    if !(dim == 2 || dim == 3) || !(1..=MAX_DEGREE).contains(&degree) {
        return Err(Error::UnsupportedDegree { dim, degree });
    }
    let m = degree / 2 + 1;
    let (s, ws) = gauss_jacobi_unit(m, 0.0);
    let (t1, wt1) = gauss_jacobi_unit(m, 1.0);
    let mut points = Vec::new();
    let mut weights = Vec::new();
    if dim == 2 {
        // x = s (1 - t), y = t, dx dy = (1 - t) ds dt
        for j in 0..m {
            for i in 0..m {
                let x = s[i] * (1.0 - t1[j]);
                let y = t1[j];
                points.extend_from_slice(&[1.0 - x - y, x, y]);
                weights.push(ws[i] * wt1[j]);
            }
        }
    } else {
        // x = r (1 - s)(1 - t), y = s (1 - t), z = t, dV = (1 - s)(1 - t)^2
        let (t2, wt2) = gauss_jacobi_unit(m, 2.0);
        for k in 0..m {
            for j in 0..m {
                for i in 0..m {
                    let z = t2[k];
                    let y = t1[j] * (1.0 - z);
                    let x = s[i] * (1.0 - t1[j]) * (1.0 - z);
                    points.extend_from_slice(&[1.0 - x - y - z, x, y, z]);
                    weights.push(ws[i] * wt1[j] * wt2[k]);
                }
            }
        }
    }
    Ok(QuadratureRule {
        dim,
        degree: 2 * m - 1,
        points,
        weights,
    })
}

/// Gauss-Jacobi nodes and weights for `int_0^1 (1 - t)^alpha g(t) dt`.
///
/// Golub-Welsch on the Jacobi recurrence with `beta = 0`.
fn gauss_jacobi_unit(m: usize, alpha: f64) -> (Vec<f64>, Vec<f64>) {
    let beta = 0.0;
    let ab = alpha + beta;
    let mut jac = DMatrix::<f64>::zeros(m, m);
    for n in 0..m {
        let nf = n as f64;
        jac[(n, n)] = if n == 0 {
            (beta - alpha) / (ab + 2.0)
        } else {
            (beta * beta - alpha * alpha) / ((2.0 * nf + ab) * (2.0 * nf + ab + 2.0))
        };
        if n + 1 < m {
            let k = nf + 1.0;
            let num = 4.0 * k * (k + alpha) * (k + beta) * (k + ab);
            let den = (2.0 * k + ab).powi(2) * (2.0 * k + ab + 1.0) * (2.0 * k + ab - 1.0);
            let off = (num / den).sqrt();
            jac[(n, n + 1)] = off;
            jac[(n + 1, n)] = off;
        }
    }
    let eig = SymmetricEigen::new(jac);
    // mu_0 = int_{-1}^{1} (1 - x)^alpha dx, then map [-1, 1] -> [0, 1].
    let mu0 = 2f64.powf(alpha + 1.0) / (alpha + 1.0);
    let scale = 0.5f64.powf(alpha + 1.0);
    let mut pairs: Vec<(f64, f64)> = (0..m)
        .map(|i| {
            let x = eig.eigenvalues[i];
            let v0 = eig.eigenvectors[(0, i)];
            (0.5 * (x + 1.0), mu0 * v0 * v0 * scale)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// Affine map `F_T(xhat) = offset + J xhat` from the reference simplex to a cell.
#[derive(Clone, Debug)]
pub struct ReferenceMap {
    pub cell_index: usize,
    /// Row-major `dim x dim`, columns are edge vectors `v_i - v_0`.
    pub jacobian: Vec<f64>,
    pub jacobian_det: f64,
    pub offset: Vec<f64>,
}

impl ReferenceMap {
    pub fn new(mesh: &Mesh, cell: usize) -> Self {
        let dim = mesh.dim();
        let verts = mesh.cell(cell);
        let v0 = mesh.vertex(verts[0]);
        let mut jacobian = vec![0.0; dim * dim];
        for j in 0..dim {
            let vj = mesh.vertex(verts[j + 1]);
            for r in 0..dim {
                jacobian[r * dim + j] = vj[r] - v0[r];
            }
        }
        let jacobian_det = mesh.signed_volume(cell) * if dim == 2 { 2.0 } else { 6.0 };
        ReferenceMap {
            cell_index: cell,
            jacobian,
            jacobian_det,
            offset: v0.to_vec(),
        }
    }

    pub fn dim(&self) -> usize {
        self.offset.len()
    }

    /// Physical point for barycentric coordinates `lambda`.
    pub fn map(&self, lambda: &[f64]) -> Vec<f64> {
        let dim = self.dim();
        let mut x = self.offset.clone();
        for r in 0..dim {
            for j in 0..dim {
                x[r] += self.jacobian[r * dim + j] * lambda[j + 1];
            }
        }
        x
    }

    /// Gradients of the barycentric coordinates (the P1 basis on the cell),
    /// returned as `dim + 1` rows of length `dim`.
    pub fn barycentric_gradients(&self) -> Vec<Vec<f64>> {
        let dim = self.dim();
        let j = &self.jacobian;
        // Rows of J^{-1} are the gradients of lambda_1..lambda_dim.
        let inv: Vec<f64> = if dim == 2 {
            let d = self.jacobian_det;
            vec![j[3] / d, -j[1] / d, -j[2] / d, j[0] / d]
        } else {
            let m = DMatrix::from_row_slice(3, 3, j);
            let inv = m.try_inverse().expect("non-degenerate cell");
            (0..3)
                .flat_map(|r| (0..3).map(move |c| (r, c)))
                .map(|(r, c)| inv[(r, c)])
                .collect()
        };
        let mut grads = vec![vec![0.0; dim]; dim + 1];
        for i in 0..dim {
            for k in 0..dim {
                grads[i + 1][k] = inv[i * dim + k];
                grads[0][k] -= inv[i * dim + k];
            }
        }
        grads
    }
}

/// Quadrature node seen by a cell-wise integrand.
#[derive(Clone, Copy, Debug)]
pub struct QuadPoint<'a> {
    pub cell: usize,
    pub barycentric: &'a [f64],
    pub x: &'a [f64],
}

/// `sum_T sum_q w_q |det DF_T| f(F_T(xhat_q))` with a fallible integrand
/// that also sees the cell and barycentric position of each node.
pub fn try_integrate_cellwise<E>(
    mesh: &Mesh,
    rule: &QuadratureRule,
    mut integrand: impl FnMut(&QuadPoint) -> std::result::Result<f64, E>,
) -> std::result::Result<f64, E> {
    let mut total = 0.0;
    for c in 0..mesh.n_cells() {
        let map = ReferenceMap::new(mesh, c);
        let mut cell_sum = 0.0;
        for (bary, w) in rule.iter() {
            let x = map.map(bary);
            let qp = QuadPoint {
                cell: c,
                barycentric: bary,
                x: &x,
            };
            cell_sum += w * integrand(&qp)?;
        }
        total += cell_sum * map.jacobian_det.abs();
    }
    Ok(total)
}

pub fn integrate_cellwise(
    mesh: &Mesh,
    rule: &QuadratureRule,
    mut integrand: impl FnMut(&QuadPoint) -> f64,
) -> f64 {
    try_integrate_cellwise::<std::convert::Infallible>(mesh, rule, |qp| Ok(integrand(qp)))
        .unwrap_or_else(|e| match e {})
}

/// Integral of a pointwise function over the mesh domain.
pub fn integrate(mesh: &Mesh, rule: &QuadratureRule, integrand: impl Fn(&[f64]) -> f64) -> f64 {
    integrate_cellwise(mesh, rule, |qp| integrand(qp.x))
}

pub fn try_integrate<E>(
    mesh: &Mesh,
    rule: &QuadratureRule,
    integrand: impl Fn(&[f64]) -> std::result::Result<f64, E>,
) -> std::result::Result<f64, E> {
    try_integrate_cellwise(mesh, rule, |qp| integrand(qp.x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_unit_disk, build_unit_square};

    fn factorial(n: u32) -> f64 {
        (1..=n).map(f64::from).product()
    }

    /// int over the reference simplex of x^a y^b z^c = a! b! c! / (a + b + c + dim)!
    fn monomial_exact(dim: usize, e: [u32; 3]) -> f64 {
        let s: u32 = e.iter().sum();
        e.iter().map(|&k| factorial(k)).product::<f64>() / factorial(s + dim as u32)
    }

    fn apply(rule: &QuadratureRule, e: [u32; 3]) -> f64 {
        rule.iter()
            .map(|(b, w)| {
                let mut v = w;
                for k in 0..rule.dim() {
                    v *= b[k + 1].powi(e[k] as i32);
                }
                v
            })
            .sum()
    }

    #[test]
    fn centroid_rule() {
        let rule = gauss_rule(2, 1).unwrap();
        assert_eq!(rule.len(), 1);
        assert!((rule.weight(0) - 0.5).abs() < 1e-15);
        for &l in rule.point(0) {
            assert!((l - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn degree_five_x3y2() {
        let rule = gauss_rule(2, 5).unwrap();
        assert!((apply(&rule, [3, 2, 0]) - 1.0 / 420.0).abs() < 1e-14);
    }

    #[test]
    fn weights_sum_to_reference_volume() {
        for degree in 1..=MAX_DEGREE {
            let r2 = gauss_rule(2, degree).unwrap();
            let r3 = gauss_rule(3, degree).unwrap();
            assert!((r2.weights().iter().sum::<f64>() - 0.5).abs() < 1e-14);
            assert!((r3.weights().iter().sum::<f64>() - 1.0 / 6.0).abs() < 1e-14);
            assert!(r2.weights().iter().chain(r3.weights()).all(|&w| w > 0.0));
        }
    }

    #[test]
    fn monomials_exact_up_to_degree() {
        for dim in [2usize, 3] {
            for degree in 1..=MAX_DEGREE {
                let rule = gauss_rule(dim, degree).unwrap();
                assert!(rule.degree() >= degree);
                for a in 0..=degree as u32 {
                    for b in 0..=(degree as u32 - a) {
                        let cmax = if dim == 3 { degree as u32 - a - b } else { 0 };
                        for c in 0..=cmax {
                            let e = [a, b, c];
                            let err = (apply(&rule, e) - monomial_exact(dim, e)).abs();
                            assert!(
                                err < 1e-12,
                                "dim {dim} degree {degree} exponents {e:?}: {err}"
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn unsupported_degree() {
        assert!(matches!(
            gauss_rule(2, 0),
            Err(Error::UnsupportedDegree { .. })
        ));
        assert!(matches!(
            gauss_rule(3, 11),
            Err(Error::UnsupportedDegree { .. })
        ));
        assert!(gauss_rule(4, 2).is_err());
    }

    #[test]
    fn area_of_square_and_disk() {
        let rule = gauss_rule(2, 2).unwrap();
        assert!((integrate(&build_unit_square(5), &rule, |_| 1.0) - 1.0).abs() < 1e-13);
        let mut deficits = Vec::new();
        for level in 0..4 {
            let mesh = build_unit_disk(level);
            let area = integrate(&mesh, &rule, |_| 1.0);
            let h = mesh.mesh_size();
            deficits.push((std::f64::consts::PI - area) / (h * h));
            assert!(area < std::f64::consts::PI);
        }
        // deficit / h^2 stays bounded (the ratio settles rather than growing)
        assert!(deficits.iter().all(|&d| d > 0.0 && d < 2.0 * deficits[1]));
    }

    #[test]
    fn barycentric_gradients_sum_to_zero() {
        let mesh = crate::mesh::build_unit_ball(0);
        for c in 0..mesh.n_cells() {
            let g = ReferenceMap::new(&mesh, c).barycentric_gradients();
            for k in 0..3 {
                assert!(g.iter().map(|r| r[k]).sum::<f64>().abs() < 1e-13);
            }
            // grad lambda_i . (v_j - v_0) = delta_ij - delta_0j
            let cell = mesh.cell(c);
            for i in 0..4 {
                for j in 1..4 {
                    let e: Vec<f64> = (0..3)
                        .map(|k| mesh.vertex(cell[j])[k] - mesh.vertex(cell[0])[k])
                        .collect();
                    let d: f64 = (0..3).map(|k| g[i][k] * e[k]).sum();
                    let expect = (i == j) as i32 as f64 - (i == 0) as i32 as f64;
                    assert!((d - expect).abs() < 1e-12);
                }
            }
        }
    }
}
