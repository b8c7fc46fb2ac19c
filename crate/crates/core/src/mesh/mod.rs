//! Conforming simplicial meshes.
//!
//! A [`Mesh`] stores vertices and cells in flat arrays. Cells are kept
//! positively oriented; boundary vertices are derived from the facets that
//! belong to exactly one cell. Curved domains carry a [`BoundaryProjector`]
//! that is applied to new boundary vertices during refinement, so the
//! polygonal domain `Omega_h` is always inscribed in the true domain.

mod generate;
mod locate;
mod refine;

use std::collections::HashMap;

use crate::error::{Error, Result};

pub use generate::{build_unit_ball, build_unit_disk, build_unit_square};
pub use locate::PointLocation;

/// Maps a point to the closest point of the true (curved) boundary.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundaryProjector {
    /// Boundary of the unit disk (2D) or unit ball (3D), centred at the origin.
    UnitSphere,
}

impl BoundaryProjector {
    pub fn project(&self, x: &mut [f64]) {
        match self {
            BoundaryProjector::UnitSphere => {
                let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                if r > 0.0 {
                    x.iter_mut().for_each(|v| *v /= r);
                }
            }
        }
    }

    /// Distance from `x` to the true boundary.
    pub fn distance(&self, x: &[f64]) -> f64 {
        match self {
            BoundaryProjector::UnitSphere => {
                (x.iter().map(|v| v * v).sum::<f64>().sqrt() - 1.0).abs()
            }
        }
    }
}

/// Conforming simplicial triangulation in two or three dimensions.
#[derive(Clone, Debug)]
pub struct Mesh {
    dim: usize,
    coords: Vec<f64>,
    cells: Vec<usize>,
    boundary: Vec<bool>,
    projector: Option<BoundaryProjector>,
    /// Parent cell of each cell when this mesh came from `refine_uniform`.
    parents: Vec<usize>,
    /// `neighbors[c * (dim + 1) + i]` is the cell across the facet opposite local vertex `i`.
    neighbors: Vec<Option<usize>>,
    vertex_cell_offsets: Vec<usize>,
    vertex_cells: Vec<usize>,
}

impl Mesh {
    /// Builds a mesh from flat coordinate and connectivity arrays.
    ///
    /// Negatively oriented cells are flipped; degenerate cells and
    /// non-manifold facets are rejected.
    pub fn new(
        dim: usize,
        coords: Vec<f64>,
        mut cells: Vec<usize>,
        projector: Option<BoundaryProjector>,
    ) -> Result<Self> {
        if !(dim == 2 || dim == 3) {
            return Err(Error::DimensionMismatch(format!("mesh dimension {dim}")));
        }
        if !coords.len().is_multiple_of(dim) || !cells.len().is_multiple_of(dim + 1) {
            return Err(Error::DimensionMismatch(
                "coordinate or connectivity array has a ragged length".into(),
            ));
        }
        let n_vertices = coords.len() / dim;
        if let Some(&bad) = cells.iter().find(|&&v| v >= n_vertices) {
            return Err(Error::DimensionMismatch(format!(
                "cell references vertex {bad}"
            )));
        }
        let nv = dim + 1;
        for cell in cells.chunks_mut(nv) {
            let vol = signed_volume(dim, &coords, cell);
            if vol.abs() <= f64::EPSILON * 1e-3 {
                return Err(Error::InvalidProblem(format!("degenerate cell {cell:?}")));
            }
            if vol < 0.0 {
                cell.swap(dim - 1, dim);
            }
        }

        let n_cells = cells.len() / nv;
        let mut facet_owner: HashMap<Vec<usize>, (usize, usize)> =
            HashMap::with_capacity(n_cells * 2);
        let mut neighbors = vec![None; cells.len()];
        for c in 0..n_cells {
            for i in 0..nv {
                let key = facet_key(&cells[c * nv..(c + 1) * nv], i);
                match facet_owner.remove(&key) {
                    Some((other, j)) => {
                        neighbors[c * nv + i] = Some(other);
                        neighbors[other * nv + j] = Some(c);
                    }
                    None => {
                        facet_owner.insert(key, (c, i));
                    }
                }
            }
        }
        let mut boundary = vec![false; n_vertices];
        for key in facet_owner.keys() {
            for &v in key {
                boundary[v] = true;
            }
        }

        let mut counts = vec![0usize; n_vertices + 1];
        for &v in &cells {
            counts[v + 1] += 1;
        }
        for i in 0..n_vertices {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut vertex_cells = vec![0; cells.len()];
        for (c, cell) in cells.chunks(nv).enumerate() {
            for &v in cell {
                vertex_cells[fill[v]] = c;
                fill[v] += 1;
            }
        }

        Ok(Mesh {
            dim,
            coords,
            cells,
            boundary,
            projector,
            parents: Vec::new(),
            neighbors,
            vertex_cell_offsets: counts,
            vertex_cells,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_vertices(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len() / (self.dim + 1)
    }

    pub fn vertex(&self, v: usize) -> &[f64] {
        &self.coords[v * self.dim..(v + 1) * self.dim]
    }

    pub fn cell(&self, c: usize) -> &[usize] {
        let nv = self.dim + 1;
        &self.cells[c * nv..(c + 1) * nv]
    }

    pub fn cells(&self) -> impl Iterator<Item = &[usize]> {
        self.cells.chunks(self.dim + 1)
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn is_boundary_vertex(&self, v: usize) -> bool {
        self.boundary[v]
    }

    pub fn boundary_flags(&self) -> &[bool] {
        &self.boundary
    }

    pub fn projector(&self) -> Option<BoundaryProjector> {
        self.projector
    }

    /// Parent cell indices, empty unless the mesh came from [`Mesh::refine_uniform`].
    pub fn parents(&self) -> &[usize] {
        &self.parents
    }

    /// Cell across the facet opposite local vertex `i` of cell `c`.
    pub fn neighbor(&self, c: usize, i: usize) -> Option<usize> {
        self.neighbors[c * (self.dim + 1) + i]
    }

    /// Cells containing vertex `v`, in increasing order.
    pub fn cells_of_vertex(&self, v: usize) -> &[usize] {
        &self.vertex_cells[self.vertex_cell_offsets[v]..self.vertex_cell_offsets[v + 1]]
    }

    pub fn signed_volume(&self, c: usize) -> f64 {
        signed_volume(self.dim, &self.coords, self.cell(c))
    }

    pub fn volume(&self) -> f64 {
        (0..self.n_cells()).map(|c| self.signed_volume(c)).sum()
    }

    /// Largest distance between two vertices of cell `c`.
    pub fn cell_diameter(&self, c: usize) -> f64 {
        let cell = self.cell(c);
        let mut h: f64 = 0.0;
        for i in 0..cell.len() {
            for j in i + 1..cell.len() {
                h = h.max(distance(self.vertex(cell[i]), self.vertex(cell[j])));
            }
        }
        h
    }

    /// Maximum cell diameter.
    pub fn mesh_size(&self) -> f64 {
        (0..self.n_cells())
            .map(|c| self.cell_diameter(c))
            .fold(0.0, f64::max)
    }

    /// Ratio of cell diameter to the diameter of its inscribed ball.
    pub fn shape_ratio(&self, c: usize) -> f64 {
        let cell = self.cell(c);
        let vol = self.signed_volume(c);
        let facet_measure: f64 = (0..cell.len())
            .map(|i| {
                let pts: Vec<&[f64]> = (0..cell.len())
                    .filter(|&j| j != i)
                    .map(|j| self.vertex(cell[j]))
                    .collect();
                simplex_measure(&pts)
            })
            .sum();
        let inradius = self.dim as f64 * vol / facet_measure;
        self.cell_diameter(c) / (2.0 * inradius)
    }

    pub fn max_shape_ratio(&self) -> f64 {
        (0..self.n_cells())
            .map(|c| self.shape_ratio(c))
            .fold(0.0, f64::max)
    }

    /// Facets (as sorted vertex lists) that belong to exactly one cell.
    pub fn boundary_facets(&self) -> Vec<Vec<usize>> {
        let nv = self.dim + 1;
        let mut out = Vec::new();
        for c in 0..self.n_cells() {
            for i in 0..nv {
                if self.neighbors[c * nv + i].is_none() {
                    out.push(facet_key(self.cell(c), i));
                }
            }
        }
        out
    }

    /// Face-hash audit of conformity.
    ///
    /// Every facet must be shared by at most two cells, and every facet
    /// owned by a single cell must satisfy `on_boundary` at all its vertices
    /// (an unmatched interior facet indicates a hanging node).
    pub fn check_conforming(
        &self,
        on_boundary: impl Fn(&[f64]) -> bool,
    ) -> std::result::Result<(), String> {
        let mut count: HashMap<Vec<usize>, usize> = HashMap::new();
        for cell in self.cells() {
            for i in 0..cell.len() {
                *count.entry(facet_key(cell, i)).or_default() += 1;
            }
        }
        for (facet, n) in count {
            if n > 2 {
                return Err(format!("facet {facet:?} shared by {n} cells"));
            }
            if n == 1 {
                if let Some(&v) = facet.iter().find(|&&v| !on_boundary(self.vertex(v))) {
                    return Err(format!("unmatched facet {facet:?} has interior vertex {v}"));
                }
            }
        }
        Ok(())
    }

    pub(crate) fn with_parents(mut self, parents: Vec<usize>) -> Self {
        self.parents = parents;
        self
    }
}

pub(crate) fn facet_key(cell: &[usize], skip: usize) -> Vec<usize> {
    let mut key: Vec<usize> = cell
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != skip)
        .map(|(_, &v)| v)
        .collect();
    key.sort_unstable();
    key
}

pub(crate) fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub(crate) fn signed_volume(dim: usize, coords: &[f64], cell: &[usize]) -> f64 {
    let p = |v: usize, k: usize| coords[cell[v] * dim + k];
    match dim {
        2 => {
            let (ax, ay) = (p(1, 0) - p(0, 0), p(1, 1) - p(0, 1));
            let (bx, by) = (p(2, 0) - p(0, 0), p(2, 1) - p(0, 1));
            0.5 * (ax * by - ay * bx)
        }
        3 => {
            let a = [p(1, 0) - p(0, 0), p(1, 1) - p(0, 1), p(1, 2) - p(0, 2)];
            let b = [p(2, 0) - p(0, 0), p(2, 1) - p(0, 1), p(2, 2) - p(0, 2)];
            let c = [p(3, 0) - p(0, 0), p(3, 1) - p(0, 1), p(3, 2) - p(0, 2)];
            det3(&a, &b, &c) / 6.0
        }
        _ => unreachable!(),
    }
}

fn det3(a: &[f64; 3], b: &[f64; 3], c: &[f64; 3]) -> f64 {
    a[0] * (b[1] * c[2] - b[2] * c[1]) - a[1] * (b[0] * c[2] - b[2] * c[0])
        + a[2] * (b[0] * c[1] - b[1] * c[0])
}

/// Unsigned measure of a simplex of codimension one (segment or triangle).
fn simplex_measure(pts: &[&[f64]]) -> f64 {
    match pts.len() {
        2 => distance(pts[0], pts[1]),
        3 => {
            let u: Vec<f64> = (0..3).map(|k| pts[1][k] - pts[0][k]).collect();
            let w: Vec<f64> = (0..3).map(|k| pts[2][k] - pts[0][k]).collect();
            let cx = u[1] * w[2] - u[2] * w[1];
            let cy = u[2] * w[0] - u[0] * w[2];
            let cz = u[0] * w[1] - u[1] * w[0];
            0.5 * (cx * cx + cy * cy + cz * cz).sqrt()
        }
        _ => unreachable!(),
    }
}
