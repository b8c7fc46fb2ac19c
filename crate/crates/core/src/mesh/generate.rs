use super::{BoundaryProjector, Mesh};

/// Structured mesh of `(0,1)^2` with `n` cells per side, each square split
/// along its `(0,0)-(1,1)` diagonal.
pub fn build_unit_square(n: usize) -> Mesh {
    assert!(n >= 1, "unit square needs at least one cell per side");
    let (coords, cells) = kuhn_grid(2, n, 0.0, 1.0, |_| [1; 3]);
    Mesh::new(2, coords, cells, None).expect("structured square mesh is valid")
}

/// Polygonal approximation of the unit disk, refined `level` times.
///
/// The coarse mesh maps a 4x4 structured grid of `[-1,1]^2` onto the disk
/// with `x -> x |x|_inf / |x|_2`, so it has 25 vertices with the origin as
/// a vertex. Finer levels come from [`Mesh::refine_uniform`].
pub fn build_unit_disk(level: usize) -> Mesh {
    refine_times(mapped_ball(2, 4), level)
}

/// Polygonal approximation of the unit ball, refined `level` times.
///
/// The coarse mesh maps a 2x2x2 grid of `[-1,1]^3` onto the ball (27 vertices).
pub fn build_unit_ball(level: usize) -> Mesh {
    refine_times(mapped_ball(3, 2), level)
}

fn refine_times(mut mesh: Mesh, level: usize) -> Mesh {
    for _ in 0..level {
        mesh = mesh.refine_uniform();
    }
    mesh
}

fn mapped_ball(dim: usize, n: usize) -> Mesh {
    assert!(n.is_multiple_of(2), "origin must be a grid vertex");
    // Diagonals point away from the origin in every orthant, which keeps the
    // triangulation symmetric under coordinate reflections (and therefore
    // conforming across the orthant planes).
    let (mut coords, cells) = kuhn_grid(dim, n, -1.0, 1.0, |center| {
        let mut dir = [1i8; 3];
        for (k, d) in dir.iter_mut().enumerate().take(dim) {
            *d = if center[k] < 0.0 { -1 } else { 1 };
        }
        dir
    });
    for x in coords.chunks_mut(dim) {
        let r2 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if r2 == 0.0 {
            continue;
        }
        let rinf = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let scale = rinf / r2;
        x.iter_mut().for_each(|v| *v *= scale);
        if (rinf - 1.0).abs() < 1e-14 {
            BoundaryProjector::UnitSphere.project(x);
        }
    }
    Mesh::new(dim, coords, cells, Some(BoundaryProjector::UnitSphere))
        .expect("mapped ball mesh is valid")
}

/// Kuhn (Freudenthal) triangulation of a tensor grid on `[lo,hi]^dim`.
///
/// Each grid cube is split into `dim!` simplices sharing the diagonal from
/// its "near" corner; `direction(center)` gives the sign per axis, `+1`
/// meaning the near corner is the lower one.
fn kuhn_grid(
    dim: usize,
    n: usize,
    lo: f64,
    hi: f64,
    direction: impl Fn(&[f64]) -> [i8; 3],
) -> (Vec<f64>, Vec<usize>) {
    let np = n + 1;
    let step = (hi - lo) / n as f64;
    let coord = |i: usize| if i == n { hi } else { lo + i as f64 * step };
    let index = |ijk: &[usize]| -> usize { ijk.iter().rev().fold(0, |acc, &i| acc * np + i) };

    let n_vertices = np.pow(dim as u32);
    let mut coords = Vec::with_capacity(n_vertices * dim);
    for lin in 0..n_vertices {
        let mut rem = lin;
        for _ in 0..dim {
            coords.push(coord(rem % np));
            rem /= np;
        }
    }

    let perms: &[&[usize]] = if dim == 2 {
        &[&[0, 1], &[1, 0]]
    } else {
        &[
            &[0, 1, 2],
            &[0, 2, 1],
            &[1, 0, 2],
            &[1, 2, 0],
            &[2, 0, 1],
            &[2, 1, 0],
        ]
    };
    let mut cells = Vec::with_capacity(n.pow(dim as u32) * perms.len() * (dim + 1));
    for lin in 0..n.pow(dim as u32) {
        let mut cube = [0usize; 3];
        let mut rem = lin;
        for c in cube.iter_mut().take(dim) {
            *c = rem % n;
            rem /= n;
        }
        let center: Vec<f64> = (0..dim)
            .map(|k| lo + (cube[k] as f64 + 0.5) * step)
            .collect();
        let dir = direction(&center);
        let mut near = [0usize; 3];
        for k in 0..dim {
            near[k] = if dir[k] > 0 { cube[k] } else { cube[k] + 1 };
        }
        for perm in perms {
            let mut corner = near;
            cells.push(index(&corner[..dim]));
            for &axis in perm.iter() {
                if dir[axis] > 0 {
                    corner[axis] += 1;
                } else {
                    corner[axis] -= 1;
                }
                cells.push(index(&corner[..dim]));
            }
        }
    }
    (coords, cells)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_counts() {
        let m = build_unit_square(1);
        assert_eq!((m.n_cells(), m.n_vertices()), (2, 4));
        let m = build_unit_square(4);
        assert_eq!((m.n_cells(), m.n_vertices()), (32, 25));
        assert_eq!(m.boundary_flags().iter().filter(|&&b| !b).count(), 9);
        assert!((m.mesh_size() - 2f64.sqrt() / 4.0).abs() < 1e-15);
        assert_eq!(build_unit_square(8).n_vertices(), 81);
        assert!((m.volume() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn disk_coarse_boundary_on_circle() {
        let m = build_unit_disk(0);
        assert_eq!(m.n_vertices(), 25);
        for v in 0..m.n_vertices() {
            if m.is_boundary_vertex(v) {
                let r = m.vertex(v).iter().map(|x| x * x).sum::<f64>().sqrt();
                assert!((r - 1.0).abs() < 1e-12);
            }
        }
        assert!((0..m.n_cells()).all(|c| m.signed_volume(c) > 0.0));
    }

    #[test]
    fn ball_coarse_counts_and_orientation() {
        let m = build_unit_ball(0);
        assert_eq!(m.n_vertices(), 27);
        assert_eq!(m.n_cells(), 48);
        assert!((0..m.n_cells()).all(|c| m.signed_volume(c) > 0.0));
        assert_eq!(m.boundary_flags().iter().filter(|&&b| !b).count(), 1);
    }
}
