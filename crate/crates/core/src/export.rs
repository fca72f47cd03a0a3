//! Plain-text and image exports. Every function returns the file contents;
//! writing and checksumming is left to the caller.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::fem::Field;
use crate::geometry::TriMesh;
use crate::moser::MoserReport;

fn check(mesh: &TriMesh, u: &Field) -> Result<()> {
    if u.len() != mesh.nodes.len() {
        return Err(Error::InvalidInput("field does not match the mesh".into()));
    }
    Ok(())
}

/// `x,y,u,dirichlet` per node.
pub fn field_csv(mesh: &TriMesh, u: &Field) -> Result<String> {
    check(mesh, u)?;
    let mut out = String::from("x,y,u,dirichlet\n");
    for ((p, v), b) in mesh.nodes.iter().zip(&u.values).zip(&mesh.boundary) {
        writeln!(out, "{},{},{},{}", p[0], p[1], v, u8::from(*b)).unwrap();
    }
    Ok(out)
}

pub fn triangles_csv(mesh: &TriMesh) -> String {
    let mut out = String::from("a,b,c\n");
    for t in &mesh.triangles {
        writeln!(out, "{},{},{}", t[0], t[1], t[2]).unwrap();
    }
    out
}

/// Legacy ASCII VTK unstructured grid with `u` as point data.
pub fn vtk(mesh: &TriMesh, u: &Field, title: &str) -> Result<String> {
    check(mesh, u)?;
    let mut out = String::new();
    writeln!(out, "# vtk DataFile Version 3.0\n{}\nASCII\nDATASET UNSTRUCTURED_GRID", title.replace('\n', " ")).unwrap();
    writeln!(out, "POINTS {} double", mesh.nodes.len()).unwrap();
    for p in &mesh.nodes {
        writeln!(out, "{} {} 0", p[0], p[1]).unwrap();
    }
    let n = mesh.triangles.len();
    writeln!(out, "CELLS {} {}", n, 4 * n).unwrap();
    for t in &mesh.triangles {
        writeln!(out, "3 {} {} {}", t[0], t[1], t[2]).unwrap();
    }
    writeln!(out, "CELL_TYPES {n}").unwrap();
    for _ in 0..n {
        out.push_str("5\n");
    }
    writeln!(out, "POINT_DATA {}\nSCALARS u double 1\nLOOKUP_TABLE default", mesh.nodes.len()).unwrap();
    for v in &u.values {
        writeln!(out, "{v}").unwrap();
    }
    Ok(out)
}

const BACKGROUND: [u8; 3] = [160, 160, 160];

fn shade(v: f64, scale: f64, eps: f64) -> [u8; 3] {
    if v.abs() <= eps {
        return [255, 255, 255];
    }
    // keep small nonzero values visibly tinted
    let a = 0.25 + 0.75 * (v.abs() / scale).min(1.0);
    let fade = (255.0 * (1.0 - a)).round() as u8;
    if v > 0.0 {
        [255, fade, fade]
    } else {
        [fade, fade, 255]
    }
}

/// Binary PPM of the piecewise-linear field over `[-1, 1]²`: red positive,
/// blue negative, white where `|u| ≤ eps`, grey outside the mesh.
pub fn heatmap_ppm(mesh: &TriMesh, u: &Field, pixels: usize, eps: f64) -> Result<Vec<u8>> {
    check(mesh, u)?;
    if pixels == 0 {
        return Err(Error::InvalidInput("heatmap needs at least one pixel".into()));
    }
    let scale = u.max_abs().max(f64::MIN_POSITIVE);
    let mut img = vec![BACKGROUND; pixels * pixels];
    let step = 2.0 / pixels as f64;
    // pixel (i, j): column i left to right, row j top to bottom
    let coord = |k: usize| -1.0 + (k as f64 + 0.5) * step;
    let index = |c: f64| ((c + 1.0) / step - 0.5).max(0.0) as usize;
    for t in &mesh.triangles {
        let [a, b, c] = t.map(|i| mesh.nodes[i]);
        let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
        if det == 0.0 {
            continue;
        }
        let xs = [a[0], b[0], c[0]];
        let ys = [a[1], b[1], c[1]];
        let lo_x = index(xs.iter().copied().fold(f64::INFINITY, f64::min));
        let hi_x = index(xs.iter().copied().fold(f64::NEG_INFINITY, f64::max)).saturating_add(1).min(pixels - 1);
        let lo_y = index(ys.iter().copied().fold(f64::INFINITY, f64::min));
        let hi_y = index(ys.iter().copied().fold(f64::NEG_INFINITY, f64::max)).saturating_add(1).min(pixels - 1);
        for i in lo_x..=hi_x {
            for k in lo_y..=hi_y {
                let (x, y) = (coord(i), coord(k));
                let l1 = ((b[0] - x) * (c[1] - y) - (c[0] - x) * (b[1] - y)) / det;
                let l2 = ((c[0] - x) * (a[1] - y) - (a[0] - x) * (c[1] - y)) / det;
                let l3 = 1.0 - l1 - l2;
                if l1 < -1e-12 || l2 < -1e-12 || l3 < -1e-12 {
                    continue;
                }
                let v = l1 * u.values[t[0]] + l2 * u.values[t[1]] + l3 * u.values[t[2]];
                img[(pixels - 1 - k) * pixels + i] = shade(v, scale, eps);
            }
        }
    }
    let mut out = format!("P6\n{pixels} {pixels}\n255\n").into_bytes();
    out.extend(img.into_iter().flatten());
    Ok(out)
}

/// `n,norm,L1,L2,max_I`; `max_I` is empty where the scan found no ridge.
pub fn moser_csv(report: &MoserReport) -> String {
    let mut out = String::from("n,norm,L1,L2,max_I\n");
    for row in &report.rows {
        let max_i = row.scan.as_ref().map(|s| s.max_i.to_string()).unwrap_or_default();
        writeln!(out, "{},{},{},{},{}", row.n, row.norm, row.l1, row.l2, max_i).unwrap();
    }
    out
}

/// `t,I` samples of `I(t·e)` along the final path.
pub fn path_trace_csv(trace: &[(f64, f64)]) -> String {
    let mut out = String::from("t,I\n");
    for (t, i) in trace {
        writeln!(out, "{t},{i}").unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_disk_mesh, mesh_sector, Sector};

    fn disk_field() -> (TriMesh, Field) {
        let s = Sector::new(1).unwrap();
        let d = build_disk_mesh(1, &mesh_sector(&s, 0.1, 2.0).unwrap()).unwrap();
        let values = d.mesh.nodes.iter().map(|p| p[1] * (1.0 - p[0] * p[0] - p[1] * p[1])).collect();
        (d.mesh, Field { values })
    }

    #[test]
    fn csv_and_vtk_have_one_line_per_entity() {
        let (mesh, u) = disk_field();
        assert_eq!(field_csv(&mesh, &u).unwrap().lines().count(), mesh.nodes.len() + 1);
        assert_eq!(triangles_csv(&mesh).lines().count(), mesh.triangles.len() + 1);
        let v = vtk(&mesh, &u, "t").unwrap();
        assert!(v.contains(&format!("POINTS {} double", mesh.nodes.len())));
        assert!(v.contains(&format!("CELL_TYPES {}", mesh.triangles.len())));
        assert!(field_csv(&mesh, &Field { values: vec![0.0] }).is_err());
    }

    #[test]
    fn heatmap_colours_follow_the_sign() {
        let (mesh, u) = disk_field();
        let px = 64;
        let img = heatmap_ppm(&mesh, &u, px, 1e-9).unwrap();
        let header = format!("P6\n{px} {px}\n255\n");
        assert!(img.starts_with(header.as_bytes()));
        let body = &img[header.len()..];
        assert_eq!(body.len(), 3 * px * px);
        let at = |i: usize, k: usize| &body[3 * (k * px + i)..3 * (k * px + i) + 3];
        // row 16 is the upper half, row 48 the lower half
        assert_eq!(at(32, 16)[0], 255);
        assert!(at(32, 16)[2] < 255);
        assert_eq!(at(32, 48)[2], 255);
        assert!(at(32, 48)[0] < 255);
        assert_eq!(at(0, 0), BACKGROUND);
    }
}
