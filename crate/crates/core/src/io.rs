//! Output: mesh pictures (SVG), solution snapshots (legacy VTK) and CSV tables.

use std::io::{self, Write};

use crate::geometry::Point2;
use crate::mesh::Mesh;
use crate::space::DiscreteField;

/// Active cells as outlined squares; y points up.
pub fn write_mesh_svg(mesh: &Mesh, mut w: impl Write) -> io::Result<()> {
    let origin = mesh.shape().origin();
    let extent = mesh.shape().extent();
    let scale = 600.0 / extent;
    let size = extent * scale;
    writeln!(w, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size:.0}" height="{size:.0}" viewBox="-2 -2 {:.0} {:.0}">"#, size + 4.0, size + 4.0)?;
    writeln!(w, r#"<g fill="none" stroke="black" stroke-width="0.5">"#)?;
    for &c in mesh.active_cells() {
        let cell = mesh.cell(c);
        let x = (cell.origin.x - origin.x) * scale;
        let y = (origin.y + extent - cell.origin.y - cell.side) * scale;
        let s = cell.side * scale;
        writeln!(w, r#"<rect x="{x:.4}" y="{y:.4}" width="{s:.4}" height="{s:.4}"/>"#)?;
    }
    writeln!(w, "</g>\n</svg>")
}

/// Unstructured grid with four private corners per cell, so the
/// discontinuous cell constants show up as jumps.
pub fn write_vtk(field: &DiscreteField, title: &str, mut w: impl Write) -> io::Result<()> {
    let space = field.space();
    let mesh = space.mesh();
    let n = mesh.n_active();
    let corners = [Point2::new(0.0, 0.0), Point2::new(1.0, 0.0), Point2::new(1.0, 1.0), Point2::new(0.0, 1.0)];
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "{}", title.replace('\n', " "))?;
    writeln!(w, "ASCII\nDATASET UNSTRUCTURED_GRID")?;
    writeln!(w, "POINTS {} double", 4 * n)?;
    for &c in mesh.active_cells() {
        let cell = mesh.cell(c);
        for r in corners {
            let p = cell.to_physical(r);
            writeln!(w, "{:.17e} {:.17e} 0", p.x, p.y)?;
        }
    }
    writeln!(w, "CELLS {} {}", n, 5 * n)?;
    for i in 0..n {
        writeln!(w, "4 {} {} {} {}", 4 * i, 4 * i + 1, 4 * i + 2, 4 * i + 3)?;
    }
    writeln!(w, "CELL_TYPES {n}")?;
    for _ in 0..n {
        writeln!(w, "9")?;
    }
    writeln!(w, "POINT_DATA {}\nSCALARS pressure double 1\nLOOKUP_TABLE default", 4 * n)?;
    for pos in 0..n {
        for r in corners {
            writeln!(w, "{:.17e}", field.evaluate_at(pos, r).value)?;
        }
    }
    writeln!(w, "CELL_DATA {n}\nSCALARS level int 1\nLOOKUP_TABLE default")?;
    for &c in mesh.active_cells() {
        writeln!(w, "{}", mesh.cell(c).level)?;
    }
    writeln!(w, "SCALARS cell_constant double 1\nLOOKUP_TABLE default")?;
    for pos in 0..n {
        writeln!(w, "{:.17e}", field.coefficients()[space.const_dof(pos)])?;
    }
    Ok(())
}

/// One CSV field; `None` prints as empty.
pub fn csv_number(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.10e}"),
        None => String::new(),
    }
}
