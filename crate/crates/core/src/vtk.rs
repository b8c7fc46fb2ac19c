//! Legacy ASCII VTK output of vertex fields.

use std::io::Write;

use crate::error::{Error, Result};
use crate::mesh::Mesh;

/// Write `mesh` as an unstructured grid with one scalar per vertex for each field.
pub fn write_vtk(
    mesh: &Mesh,
    title: &str,
    fields: &[(&str, &[f64])],
    mut out: impl Write,
) -> Result<()> {
    for (name, values) in fields {
        if values.len() != mesh.n_vertices() {
            return Err(Error::DimensionMismatch(format!(
                "field {name} has {} values for {} vertices",
                values.len(),
                mesh.n_vertices()
            )));
        }
    }
    let dim = mesh.dim();
    let nv = dim + 1;
    let cell_type = if dim == 2 { 5 } else { 10 };
    writeln!(out, "# vtk DataFile Version 3.0")?;
    writeln!(out, "{}", title.lines().next().unwrap_or(""))?;
    writeln!(out, "ASCII")?;
    writeln!(out, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(out, "POINTS {} double", mesh.n_vertices())?;
    for v in 0..mesh.n_vertices() {
        let x = mesh.vertex(v);
        let z = if dim == 3 { x[2] } else { 0.0 };
        writeln!(out, "{:e} {:e} {:e}", x[0], x[1], z)?;
    }
    writeln!(
        out,
        "CELLS {} {}",
        mesh.n_cells(),
        mesh.n_cells() * (nv + 1)
    )?;
    for cell in mesh.cells() {
        write!(out, "{nv}")?;
        for v in cell {
            write!(out, " {v}")?;
        }
        writeln!(out)?;
    }
    writeln!(out, "CELL_TYPES {}", mesh.n_cells())?;
    for _ in 0..mesh.n_cells() {
        writeln!(out, "{cell_type}")?;
    }
    if !fields.is_empty() {
        writeln!(out, "POINT_DATA {}", mesh.n_vertices())?;
        for (name, values) in fields {
            writeln!(out, "SCALARS {name} double 1")?;
            writeln!(out, "LOOKUP_TABLE default")?;
            for v in values.iter() {
                writeln!(out, "{v:e}")?;
            }
        }
    }
    Ok(())
}
