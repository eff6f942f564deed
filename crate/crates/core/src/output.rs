//! File emission: VTK legacy snapshots, CSV time series and line samples.
//! Floating-point values are written with 9 significant digits.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use nalgebra::DVector;

use crate::assembly::Discretization;
use crate::basis::{eval_basis, DofMap};
use crate::mesh::Mesh;
use crate::Vec2;

/// 9 significant digits, scientific notation.
pub fn fmt_sig(v: f64) -> String {
    format!("{v:.8e}")
}

/// Mean of u_h over every element.
pub fn cell_means(disc: &Discretization, dm: &DofMap, u: &DVector<f64>) -> Vec<f64> {
    (0..dm.num_elements())
        .map(|k| {
            let rule = &disc.elem_rules[k];
            let mut v = vec![0.0; rule.len()];
            disc.elem_vals[k].reconstruct(&u.as_slice()[dm.range(k)], &mut v);
            let area: f64 = rule.weights.iter().sum();
            v.iter().zip(&rule.weights).map(|(a, w)| a * w).sum::<f64>() / area
        })
        .collect()
}

/// Per-cell fields written to a snapshot.
pub struct CellFields<'a> {
    pub degree: &'a [usize],
    pub indicator: &'a [f64],
    pub u_mean: &'a [f64],
}

/// VTK legacy 2.0 ASCII polydata with one polygon per cell.
pub fn vtk_text(mesh: &Mesh, fields: &CellFields, title: &str) -> String {
    let n = mesh.num_cells();
    assert!(fields.degree.len() == n && fields.indicator.len() == n && fields.u_mean.len() == n);
    let mut s = String::new();
    s += "# vtk DataFile Version 2.0\n";
    let _ = writeln!(s, "{}", title.lines().next().unwrap_or(""));
    s += "ASCII\nDATASET POLYDATA\n";
    let _ = writeln!(s, "POINTS {} double", mesh.vertices.len());
    for v in &mesh.vertices {
        let _ = writeln!(s, "{} {} 0", fmt_sig(v.x), fmt_sig(v.y));
    }
    let size: usize = mesh.cells.iter().map(|c| c.len() + 1).sum();
    let _ = writeln!(s, "POLYGONS {n} {size}");
    for c in &mesh.cells {
        let _ = write!(s, "{}", c.len());
        for i in c {
            let _ = write!(s, " {i}");
        }
        s.push('\n');
    }
    let _ = writeln!(s, "CELL_DATA {n}");
    s += "SCALARS degree int 1\nLOOKUP_TABLE default\n";
    for p in fields.degree {
        let _ = writeln!(s, "{p}");
    }
    for (name, vals) in [("indicator", fields.indicator), ("u_mean", fields.u_mean)] {
        let _ = writeln!(s, "SCALARS {name} double 1\nLOOKUP_TABLE default");
        for v in vals {
            let _ = writeln!(s, "{}", fmt_sig(*v));
        }
    }
    s
}

pub fn write_snapshot(path: &Path, mesh: &Mesh, fields: &CellFields, title: &str) -> io::Result<()> {
    fs::write(path, vtk_text(mesh, fields, title))
}

/// Reads a named CELL_DATA scalar array back from VTK text.
pub fn read_vtk_cell_scalars(text: &str, name: &str) -> Option<Vec<f64>> {
    let mut lines = text.lines();
    let n: usize = lines.by_ref().find_map(|l| l.strip_prefix("CELL_DATA ")).and_then(|v| v.trim().parse().ok())?;
    let header = format!("SCALARS {name} ");
    lines.by_ref().find(|l| l.starts_with(&header))?;
    lines.next()?;
    lines.take(n).map(|l| l.trim().parse().ok()).collect()
}

/// CSV with a header row; all numbers at 9 significant digits.
pub fn csv_text(header: &[&str], rows: &[Vec<f64>]) -> String {
    let mut s = header.join(",") + "\n";
    for r in rows {
        s += &r.iter().map(|v| fmt_sig(*v)).collect::<Vec<_>>().join(",");
        s.push('\n');
    }
    s
}

/// CSV whose first column is time and the rest are integers.
pub fn csv_counts_text(header: &[&str], rows: &[(f64, Vec<usize>)]) -> String {
    let mut s = header.join(",") + "\n";
    for (t, r) in rows {
        s += &fmt_sig(*t);
        for v in r {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

/// u_h at `n` equispaced points from `a` to `b`; points outside the mesh are skipped.
/// Rows are (s, x, y, u) with s the arc length.
pub fn sample_line(disc: &Discretization, dm: &DofMap, u: &DVector<f64>, a: Vec2, b: Vec2, n: usize) -> Vec<Vec<f64>> {
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let s = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
        let x = a + (b - a) * s;
        let Some(k) = disc.mesh.locate(x) else { continue };
        let bv = eval_basis(disc.mesh.geometry(k), dm.degree(k), &[x]);
        let mut v = [0.0];
        bv.reconstruct(&u.as_slice()[dm.range(k)], &mut v);
        rows.push(vec![s * (b - a).norm(), x.x, x.y, v[0]]);
    }
    rows
}

pub const LINE_HEADER: [&str; 4] = ["s", "x", "y", "u"];

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{assemble_operators, isotropic};
    use crate::basis::{project_l2, DegreeField};
    use crate::meshgen::structured_quads;

    #[test]
    fn two_cell_snapshot() {
        let mesh = structured_quads(Vec2::zeros(), Vec2::new(2.0, 1.0), 2, 1);
        let disc = Discretization::new(mesh, vec![isotropic(1.0); 2], 2, 10.0);
        let ops = assemble_operators(&disc, &DegreeField::new(vec![1, 2]).unwrap());
        let dm = &ops.dofmap;
        let mut u = DVector::zeros(dm.total());
        for k in 0..2 {
            let c = project_l2(|x| x.x * x.x - 0.3 * x.y, disc.mesh.geometry(k), dm.degree(k), None).unwrap();
            u.rows_mut(dm.offset(k), c.len()).copy_from(&c);
        }
        let means = cell_means(&disc, dm, &u);
        // exact means of x² − 0.3y on [0,1]² and [1,2]×[0,1]
        assert!((means[0] - (1.0 / 3.0 - 0.15)).abs() < 1e-12);
        assert!((means[1] - (7.0 / 3.0 - 0.15)).abs() < 1e-12);
        let text = vtk_text(&disc.mesh, &CellFields { degree: &[1, 2], indicator: &[0.5, 1e-7], u_mean: &means }, "t");
        assert!(text.contains("CELL_DATA 2"));
        assert_eq!(text.matches("SCALARS ").count(), 3);
        let back = read_vtk_cell_scalars(&text, "u_mean").unwrap();
        for (a, b) in back.iter().zip(&means) {
            assert!((a - b).abs() <= 1e-8 * b.abs());
        }
        assert_eq!(read_vtk_cell_scalars(&text, "degree").unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn constant_line_sample() {
        let mesh = structured_quads(Vec2::zeros(), Vec2::new(1.0, 1.0), 3, 3);
        let disc = Discretization::new(mesh, vec![isotropic(1.0); 9], 3, 10.0);
        let ops = assemble_operators(&disc, &DegreeField::uniform(9, 3));
        let u = ops.constant_vector(&disc, -67.0);
        let rows = sample_line(&disc, &ops.dofmap, &u, Vec2::new(0.0, 0.5), Vec2::new(1.0, 0.5), 21);
        assert_eq!(rows.len(), 21);
        for r in rows {
            assert!((r[3] + 67.0).abs() < 1e-12);
        }
    }

    #[test]
    fn csv_format() {
        let s = csv_text(&["t", "v"], &[vec![0.0, 1.0 / 3.0]]);
        assert_eq!(s, "t,v\n0.00000000e0,3.33333333e-1\n");
        let c = csv_counts_text(&["t", "ndof"], &[(0.5, vec![42])]);
        assert_eq!(c, "t,ndof\n5.00000000e-1,42\n");
    }
}
