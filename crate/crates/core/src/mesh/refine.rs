use std::collections::{HashMap, HashSet};

use super::{distance, Mesh};

impl Mesh {
    /// Red (regular) refinement.
    ///
    /// Triangles split into four similar children, tetrahedra into eight
    /// (four corner tetrahedra plus the inner octahedron cut along its
    /// shortest diagonal). Children of cell `c` occupy indices
    /// `c * 2^dim .. (c + 1) * 2^dim` and record `c` as their parent.
    /// Midpoints of boundary edges are moved onto the true boundary when the
    /// mesh has a projector; existing vertices never move.
    pub fn refine_uniform(&self) -> Mesh {
        let dim = self.dim;
        let nv = dim + 1;
        let mut coords = self.coords.clone();
        let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();

        let boundary_edges: HashSet<(usize, usize)> = self
            .boundary_facets()
            .iter()
            .flat_map(|f| {
                let mut edges = Vec::new();
                for i in 0..f.len() {
                    for j in i + 1..f.len() {
                        edges.push((f[i].min(f[j]), f[i].max(f[j])));
                    }
                }
                edges
            })
            .collect();

        let mut mid = |a: usize, b: usize, coords: &mut Vec<f64>| -> usize {
            let key = (a.min(b), a.max(b));
            *midpoint.entry(key).or_insert_with(|| {
                let idx = coords.len() / dim;
                let mut x: Vec<f64> = (0..dim)
                    .map(|k| 0.5 * (coords[a * dim + k] + coords[b * dim + k]))
                    .collect();
                if let Some(proj) = self.projector {
                    if boundary_edges.contains(&key) {
                        proj.project(&mut x);
                    }
                }
                coords.extend_from_slice(&x);
                idx
            })
        };

        let children_per_cell = 1 << dim;
        let mut cells = Vec::with_capacity(self.cells.len() * children_per_cell);
        let mut parents = Vec::with_capacity(self.n_cells() * children_per_cell);
        for c in 0..self.n_cells() {
            let v = self.cell(c).to_vec();
            if dim == 2 {
                let m01 = mid(v[0], v[1], &mut coords);
                let m12 = mid(v[1], v[2], &mut coords);
                let m02 = mid(v[0], v[2], &mut coords);
                cells.extend_from_slice(&[v[0], m01, m02]);
                cells.extend_from_slice(&[m01, v[1], m12]);
                cells.extend_from_slice(&[m02, m12, v[2]]);
                cells.extend_from_slice(&[m01, m12, m02]);
            } else {
                let mut m = [[0usize; 4]; 4];
                for i in 0..4 {
                    for j in i + 1..4 {
                        let k = mid(v[i], v[j], &mut coords);
                        m[i][j] = k;
                        m[j][i] = k;
                    }
                }
                for i in 0..4 {
                    let mut child = [0usize; 4];
                    for (j, slot) in child.iter_mut().enumerate() {
                        *slot = if i == j { v[i] } else { m[i][j] };
                    }
                    cells.extend_from_slice(&child);
                }
                // Opposite midpoint pairs of the inner octahedron.
                let pairs = [(m[0][1], m[2][3]), (m[0][2], m[1][3]), (m[0][3], m[1][2])];
                let len = |p: (usize, usize)| {
                    distance(
                        &coords[p.0 * dim..(p.0 + 1) * dim],
                        &coords[p.1 * dim..(p.1 + 1) * dim],
                    )
                };
                let mut diag = 0;
                for k in 1..3 {
                    if len(pairs[k]) < len(pairs[diag]) - 1e-14 {
                        diag = k;
                    }
                }
                let (a, b) = pairs[diag];
                let (p, q) = (pairs[(diag + 1) % 3], pairs[(diag + 2) % 3]);
                let ring = [p.0, q.0, p.1, q.1];
                for k in 0..4 {
                    cells.extend_from_slice(&[a, b, ring[k], ring[(k + 1) % 4]]);
                }
            }
            parents.extend(std::iter::repeat_n(c, children_per_cell));
        }
        debug_assert_eq!(cells.len(), parents.len() * nv);
        Mesh::new(dim, coords, cells, self.projector)
            .expect("red refinement of a valid mesh is valid")
            .with_parents(parents)
    }
}
