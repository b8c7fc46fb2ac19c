use super::Mesh;
use crate::error::{Error, Result};

/// Barycentric tolerance for point containment.
pub const LOCATE_TOL: f64 = 1e-10;

/// Containing cell of a point together with its barycentric coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct PointLocation {
    pub cell_index: usize,
    pub barycentric: Vec<f64>,
}

impl Mesh {
    /// Barycentric coordinates of `x` with respect to cell `c`.
    pub fn barycentric(&self, c: usize, x: &[f64]) -> Vec<f64> {
        let dim = self.dim;
        let cell = self.cell(c);
        let v0 = self.vertex(cell[0]);
        let col = |j: usize, k: usize| self.vertex(cell[j + 1])[k] - v0[k];
        let d: Vec<f64> = (0..dim).map(|k| x[k] - v0[k]).collect();
        let mut lambda = vec![0.0; dim + 1];
        if dim == 2 {
            let (a, b, c_, e) = (col(0, 0), col(1, 0), col(0, 1), col(1, 1));
            let det = a * e - b * c_;
            lambda[1] = (e * d[0] - b * d[1]) / det;
            lambda[2] = (-c_ * d[0] + a * d[1]) / det;
        } else {
            let m = [
                [col(0, 0), col(1, 0), col(2, 0)],
                [col(0, 1), col(1, 1), col(2, 1)],
                [col(0, 2), col(1, 2), col(2, 2)],
            ];
            let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
                - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
            // Cramer's rule, column by column.
            for j in 0..3 {
                let mut mj = m;
                for r in 0..3 {
                    mj[r][j] = d[r];
                }
                let dj = mj[0][0] * (mj[1][1] * mj[2][2] - mj[1][2] * mj[2][1])
                    - mj[0][1] * (mj[1][0] * mj[2][2] - mj[1][2] * mj[2][0])
                    + mj[0][2] * (mj[1][0] * mj[2][1] - mj[1][1] * mj[2][0]);
                lambda[j + 1] = dj / det;
            }
        }
        lambda[0] = 1.0 - lambda[1..].iter().sum::<f64>();
        lambda
    }

    /// Physical coordinates of a barycentric point in cell `c`.
    pub fn from_barycentric(&self, c: usize, lambda: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.dim];
        for (&v, &l) in self.cell(c).iter().zip(lambda) {
            for (xk, vk) in x.iter_mut().zip(self.vertex(v)) {
                *xk += l * vk;
            }
        }
        x
    }

    fn contains(&self, c: usize, x: &[f64]) -> Option<Vec<f64>> {
        let lambda = self.barycentric(c, x);
        lambda.iter().all(|&l| l >= -LOCATE_TOL).then_some(lambda)
    }

    /// Finds the cell containing `x`.
    ///
    /// Walks across facets from cell 0 towards `x`, falling back to a linear
    /// scan if the walk leaves the mesh. Among all cells containing `x`
    /// (points on shared facets, edges or vertices) the lowest index wins.
    pub fn locate_point(&self, x: &[f64]) -> Result<PointLocation> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch(format!(
                "point of length {} in a {}D mesh",
                x.len(),
                self.dim
            )));
        }
        let found = self
            .walk(x)
            .or_else(|| (0..self.n_cells()).find(|&c| self.contains(c, x).is_some()));
        let Some(found) = found else {
            return Err(Error::PointOutsideMesh(x.to_vec()));
        };
        let mut best = found;
        for &v in self.cell(found) {
            if let Some(&c) = self
                .cells_of_vertex(v)
                .iter()
                .find(|&&c| c < best && self.contains(c, x).is_some())
            {
                best = c;
            }
        }
        let mut barycentric = self.barycentric(best, x);
        clean_barycentric(&mut barycentric);
        Ok(PointLocation {
            cell_index: best,
            barycentric,
        })
    }

    fn walk(&self, x: &[f64]) -> Option<usize> {
        let mut c = 0;
        for _ in 0..self.n_cells() {
            let lambda = self.barycentric(c, x);
            let (imin, &lmin) = lambda
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(b.1))
                .expect("cells have vertices");
            if lmin >= -LOCATE_TOL {
                return Some(c);
            }
            c = self.neighbor(c, imin)?;
        }
        None
    }
}

/// Clamps round-off negatives to zero and renormalises to unit sum.
fn clean_barycentric(lambda: &mut [f64]) {
    for l in lambda.iter_mut() {
        if *l < 0.0 {
            *l = 0.0;
        }
    }
    let s: f64 = lambda.iter().sum();
    lambda.iter_mut().for_each(|l| *l /= s);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_unit_ball, build_unit_disk, build_unit_square};

    #[test]
    fn centroid_is_found() {
        let mesh = build_unit_square(4);
        for c in [0, 7, 31] {
            let x = mesh.from_barycentric(c, &[1.0 / 3.0; 3]);
            let loc = mesh.locate_point(&x).unwrap();
            assert_eq!(loc.cell_index, c);
            for l in loc.barycentric {
                assert!((l - 1.0 / 3.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shared_edge_goes_to_lowest_index() {
        let mesh = build_unit_square(2);
        // Midpoint of the diagonal of the first square, shared by cells 0 and 1.
        let loc = mesh.locate_point(&[0.25, 0.25]).unwrap();
        assert_eq!(loc.cell_index, 0);
        // Interior vertex shared by six cells.
        let loc = mesh.locate_point(&[0.5, 0.5]).unwrap();
        let owners = mesh.cells_of_vertex(4);
        assert_eq!(loc.cell_index, owners[0]);
    }

    #[test]
    fn outside_point_errors() {
        let mesh = build_unit_disk(1);
        assert!(matches!(
            mesh.locate_point(&[1.2, 0.0]),
            Err(Error::PointOutsideMesh(_))
        ));
        assert!(build_unit_square(3).locate_point(&[0.5, -0.01]).is_err());
    }

    #[test]
    fn barycentric_reconstruction() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mesh = build_unit_ball(1);
        for _ in 0..200 {
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let loc = mesh.locate_point(&x).unwrap();
            assert!(loc.barycentric.iter().all(|&l| l >= -1e-12));
            assert!((loc.barycentric.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let y = mesh.from_barycentric(loc.cell_index, &loc.barycentric);
            for k in 0..3 {
                assert!((x[k] - y[k]).abs() < 1e-12);
            }
        }
    }
}
