//! Polytopal meshes: file ingestion, validation, face topology and per-element
//! geometry (diameter, bounding box, sub-triangulation, quadrature).
//!
//! Mesh file format (UTF-8, whitespace separated):
//!
//! ```text
//! NV NC
//! x y            (NV lines)
//! m n v1 ... vn  (NC lines: material label, vertex count, zero-based CCW loop)
//! ```

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::error::MeshError;
use crate::quadrature::{segment_rule, triangle_rule, QuadratureRule};
use crate::Vec2;

/// A mesh edge with one (boundary) or two (interior) adjacent cells.
///
/// `normal` points out of `left`; for an interior face the outward normal of
/// `right` is `-normal`.
#[derive(Debug, Clone)]
pub struct Face {
    pub vertices: [usize; 2],
    pub left: usize,
    pub right: Option<usize>,
    pub normal: Vec2,
    pub tangent: Vec2,
    pub length: f64,
}

impl Face {
    pub fn is_interior(&self) -> bool {
        self.right.is_some()
    }

    /// Outward unit normal as seen from `cell`.
    pub fn normal_for(&self, cell: usize) -> Vec2 {
        if cell == self.left {
            self.normal
        } else {
            -self.normal
        }
    }

    /// The cell on the other side of this face from `cell`, if any.
    pub fn neighbor_of(&self, cell: usize) -> Option<usize> {
        if cell == self.left {
            self.right
        } else {
            Some(self.left)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub min: Vec2,
    pub max: Vec2,
}

impl BoundingBox {
    pub fn extent(&self) -> Vec2 {
        self.max - self.min
    }

    pub fn center(&self) -> Vec2 {
        0.5 * (self.min + self.max)
    }

    pub fn area(&self) -> f64 {
        let e = self.extent();
        e.x * e.y
    }
}

/// Derived geometry of one polygonal element.
#[derive(Debug, Clone)]
pub struct ElementGeometry {
    pub diameter: f64,
    pub bbox: BoundingBox,
    pub centroid: Vec2,
    pub area: f64,
    pub sub_triangles: Vec<[Vec2; 3]>,
}

impl ElementGeometry {
    /// Volume rule of the given polynomial order, composed over the sub-triangles.
    pub fn quadrature(&self, order: usize) -> QuadratureRule {
        quadrature(self, order)
    }
}

/// Volume quadrature on a polygon, exact for bivariate polynomials of total
/// degree ≤ `order`.
pub fn quadrature(geom: &ElementGeometry, order: usize) -> QuadratureRule {
    let order = order.max(1);
    let mut rule = QuadratureRule::default();
    for tri in &geom.sub_triangles {
        triangle_rule(tri, order, &mut rule);
    }
    rule
}

/// Quadrature on a face, exact for univariate polynomials of degree ≤ `order`.
pub fn face_quadrature(mesh: &Mesh, face: usize, order: usize) -> QuadratureRule {
    let f = &mesh.faces[face];
    segment_rule(mesh.vertices[f.vertices[0]], mesh.vertices[f.vertices[1]], order)
}

#[derive(Debug, Clone)]
pub struct Mesh {
    pub vertices: Vec<Vec2>,
    pub cells: Vec<Vec<usize>>,
    pub cell_material: Vec<u32>,
    pub faces: Vec<Face>,
    /// Face indices of each cell, in loop order.
    pub cell_faces: Vec<Vec<usize>>,
    geometry: Vec<ElementGeometry>,
}

impl Mesh {
    /// Builds and validates a mesh from raw arrays.
    pub fn new(
        vertices: Vec<Vec2>,
        cells: Vec<Vec<usize>>,
        cell_material: Vec<u32>,
    ) -> Result<Self, MeshError> {
        assert_eq!(cells.len(), cell_material.len());
        for (k, cell) in cells.iter().enumerate() {
            if cell.len() < 3 {
                return Err(MeshError::DegenerateCell {
                    cell: k,
                    msg: format!("degenerate cell: {} vertices", cell.len()),
                });
            }
            if let Some(&v) = cell.iter().find(|&&v| v >= vertices.len()) {
                return Err(MeshError::DegenerateCell {
                    cell: k,
                    msg: format!("vertex index {v} out of range"),
                });
            }
            let pts: Vec<Vec2> = cell.iter().map(|&v| vertices[v]).collect();
            let area = signed_area(&pts);
            if area <= 0.0 || !area.is_finite() {
                return Err(MeshError::DegenerateCell {
                    cell: k,
                    msg: format!("non-positive signed area {area:e} (zero area or clockwise loop)"),
                });
            }
            if !is_simple(&pts) {
                return Err(MeshError::NonSimple { cell: k });
            }
        }

        let mut edge_map: HashMap<(usize, usize), Vec<(usize, usize)>> = HashMap::new();
        let mut edge_order = Vec::new();
        for (k, cell) in cells.iter().enumerate() {
            let n = cell.len();
            for i in 0..n {
                let (a, b) = (cell[i], cell[(i + 1) % n]);
                let key = (a.min(b), a.max(b));
                let entry = edge_map.entry(key).or_default();
                if entry.is_empty() {
                    edge_order.push(key);
                }
                entry.push((k, i));
            }
        }

        let mut faces = Vec::with_capacity(edge_order.len());
        let mut cell_faces: Vec<Vec<usize>> = cells.iter().map(|c| vec![0; c.len()]).collect();
        for key in edge_order {
            let sides = &edge_map[&key];
            if sides.len() > 2 {
                return Err(MeshError::InconsistentFace { a: key.0, b: key.1, count: sides.len() });
            }
            let (left, li) = sides[0];
            let n = cells[left].len();
            let a = cells[left][li];
            let b = cells[left][(li + 1) % n];
            let right = if sides.len() == 2 {
                let (r, ri) = sides[1];
                let rn = cells[r].len();
                // a CCW neighbour traverses the shared edge in the opposite direction
                if cells[r][ri] != b || cells[r][(ri + 1) % rn] != a {
                    return Err(MeshError::InconsistentFace { a: key.0, b: key.1, count: 2 });
                }
                Some(r)
            } else {
                None
            };
            let d = vertices[b] - vertices[a];
            let length = d.norm();
            if length <= 0.0 {
                return Err(MeshError::DegenerateCell {
                    cell: left,
                    msg: "zero-length edge".into(),
                });
            }
            let tangent = d / length;
            let normal = Vec2::new(tangent.y, -tangent.x);
            let fi = faces.len();
            cell_faces[left][li] = fi;
            if let Some(r) = right {
                cell_faces[r][sides[1].1] = fi;
            }
            faces.push(Face { vertices: [a, b], left, right, normal, tangent, length });
        }

        let geometry = cells
            .iter()
            .enumerate()
            .map(|(k, cell)| {
                let pts: Vec<Vec2> = cell.iter().map(|&v| vertices[v]).collect();
                build_geometry(&pts).ok_or(MeshError::NonSimple { cell: k })
            })
            .collect::<Result<Vec<_>, _>>()?;

        Ok(Self { vertices, cells, cell_material, faces, cell_faces, geometry })
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn geometry(&self, k: usize) -> &ElementGeometry {
        &self.geometry[k]
    }

    /// Cell polygon as a list of points.
    pub fn cell_points(&self, k: usize) -> Vec<Vec2> {
        self.cells[k].iter().map(|&v| self.vertices[v]).collect()
    }

    /// Distinct face-neighbours of `k`, sorted.
    pub fn neighbors(&self, k: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self.cell_faces[k]
            .iter()
            .filter_map(|&f| self.faces[f].neighbor_of(k))
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Largest element diameter.
    pub fn h_max(&self) -> f64 {
        self.geometry.iter().map(|g| g.diameter).fold(0.0, f64::max)
    }

    pub fn total_area(&self) -> f64 {
        self.geometry.iter().map(|g| g.area).sum()
    }

    pub fn interior_face_count(&self) -> usize {
        self.faces.iter().filter(|f| f.is_interior()).count()
    }

    /// Smallest ratio (face length / h_K) over all faces of all elements.
    /// Reported only; shape regularity is not enforced.
    pub fn min_face_to_diameter_ratio(&self) -> f64 {
        let mut r = f64::INFINITY;
        for (k, faces) in self.cell_faces.iter().enumerate() {
            let h = self.geometry[k].diameter;
            for &f in faces {
                r = r.min(self.faces[f].length / h);
            }
        }
        r
    }

    /// Index of the cell containing `p`, if any.
    pub fn locate(&self, p: Vec2) -> Option<usize> {
        (0..self.num_cells()).find(|&k| {
            let g = &self.geometry[k];
            if p.x < g.bbox.min.x - 1e-12
                || p.x > g.bbox.max.x + 1e-12
                || p.y < g.bbox.min.y - 1e-12
                || p.y > g.bbox.max.y + 1e-12
            {
                return false;
            }
            point_in_polygon(p, &self.cell_points(k))
        })
        .or_else(|| {
            // points on the outer boundary are not inside any cell by the crossing rule
            (0..self.num_cells()).find(|&k| {
                let pts = self.cell_points(k);
                let tol = 1e-10 * self.geometry[k].diameter;
                (0..pts.len()).any(|i| segment_distance(p, pts[i], pts[(i + 1) % pts.len()]) <= tol)
            })
        })
    }

    /// Serialises the mesh in the text format accepted by [`load_mesh`].
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{} {}", self.vertices.len(), self.cells.len());
        for v in &self.vertices {
            let _ = writeln!(s, "{:.17e} {:.17e}", v.x, v.y);
        }
        for (cell, m) in self.cells.iter().zip(&self.cell_material) {
            let _ = write!(s, "{} {}", m, cell.len());
            for v in cell {
                let _ = write!(s, " {v}");
            }
            s.push('\n');
        }
        s
    }
}

/// Parses and validates a mesh from its text representation.
pub fn load_mesh(source: &str) -> Result<Mesh, MeshError> {
    let mut lines = source
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let malformed = |line: usize, msg: &str| MeshError::Malformed { line, msg: msg.to_string() };

    let (ln, header) = lines.next().ok_or_else(|| malformed(0, "empty mesh file"))?;
    let nums: Vec<&str> = header.split_whitespace().collect();
    if nums.len() != 2 {
        return Err(malformed(ln, "header must be `NV NC`"));
    }
    let nv: usize = nums[0].parse().map_err(|_| malformed(ln, "bad vertex count"))?;
    let nc: usize = nums[1].parse().map_err(|_| malformed(ln, "bad cell count"))?;

    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (ln, l) = lines.next().ok_or_else(|| malformed(0, "unexpected end of file in vertices"))?;
        let xy: Vec<f64> = l
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| malformed(ln, "bad coordinate"))?;
        if xy.len() != 2 || !xy.iter().all(|v| v.is_finite()) {
            return Err(malformed(ln, "vertex line must be `x y`"));
        }
        vertices.push(Vec2::new(xy[0], xy[1]));
    }

    let mut cells = Vec::with_capacity(nc);
    let mut materials = Vec::with_capacity(nc);
    for _ in 0..nc {
        let (ln, l) = lines.next().ok_or_else(|| malformed(0, "unexpected end of file in cells"))?;
        let toks: Vec<usize> = l
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|_| malformed(ln, "bad integer in cell line"))?;
        if toks.len() < 2 || toks.len() != 2 + toks[1] {
            return Err(malformed(ln, "cell line must be `m n v1 ... vn`"));
        }
        let m = u32::try_from(toks[0]).map_err(|_| malformed(ln, "material label too large"))?;
        materials.push(m);
        cells.push(toks[2..].to_vec());
    }
    if let Some((ln, _)) = lines.next() {
        return Err(malformed(ln, "trailing data after cells"));
    }
    Mesh::new(vertices, cells, materials)
}

/// Geometry of cell `k` (convenience wrapper).
pub fn element_geometry(mesh: &Mesh, k: usize) -> &ElementGeometry {
    mesh.geometry(k)
}

pub fn signed_area(pts: &[Vec2]) -> f64 {
    let n = pts.len();
    0.5 * (0..n)
        .map(|i| {
            let (a, b) = (pts[i], pts[(i + 1) % n]);
            a.x * b.y - a.y * b.x
        })
        .sum::<f64>()
}

fn polygon_centroid(pts: &[Vec2]) -> Vec2 {
    let n = pts.len();
    let mut c = Vec2::zeros();
    let mut a2 = 0.0;
    for i in 0..n {
        let (a, b) = (pts[i], pts[(i + 1) % n]);
        let cr = a.x * b.y - a.y * b.x;
        a2 += cr;
        c += (a + b) * cr;
    }
    c / (3.0 * a2)
}

fn cross(o: Vec2, a: Vec2, b: Vec2) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

fn segments_intersect(p1: Vec2, p2: Vec2, q1: Vec2, q2: Vec2) -> bool {
    let d1 = cross(q1, q2, p1);
    let d2 = cross(q1, q2, p2);
    let d3 = cross(p1, p2, q1);
    let d4 = cross(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    let on = |a: Vec2, b: Vec2, p: Vec2, d: f64| {
        d == 0.0
            && p.x >= a.x.min(b.x)
            && p.x <= a.x.max(b.x)
            && p.y >= a.y.min(b.y)
            && p.y <= a.y.max(b.y)
    };
    on(q1, q2, p1, d1) || on(q1, q2, p2, d2) || on(p1, p2, q1, d3) || on(p1, p2, q2, d4)
}

/// True when no two non-adjacent edges intersect and no vertex repeats.
pub fn is_simple(pts: &[Vec2]) -> bool {
    let n = pts.len();
    for i in 0..n {
        for j in (i + 1)..n {
            if pts[i] == pts[j] {
                return false;
            }
        }
    }
    for i in 0..n {
        let (a, b) = (pts[i], pts[(i + 1) % n]);
        for j in (i + 1)..n {
            if j == i || (j + 1) % n == i || (i + 1) % n == j {
                continue;
            }
            let (c, d) = (pts[j], pts[(j + 1) % n]);
            if segments_intersect(a, b, c, d) {
                return false;
            }
        }
    }
    true
}

fn segment_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let d = b - a;
    let t = ((p - a).dot(&d) / d.norm_squared()).clamp(0.0, 1.0);
    (p - (a + d * t)).norm()
}

pub fn point_in_polygon(p: Vec2, pts: &[Vec2]) -> bool {
    let n = pts.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (pts[i], pts[j]);
        if (a.y > p.y) != (b.y > p.y) && p.x < (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x {
            inside = !inside;
        }
        j = i;
    }
    inside
}

fn build_geometry(pts: &[Vec2]) -> Option<ElementGeometry> {
    let area = signed_area(pts);
    let centroid = polygon_centroid(pts);
    let mut min = pts[0];
    let mut max = pts[0];
    let mut diameter: f64 = 0.0;
    for (i, p) in pts.iter().enumerate() {
        min = min.inf(p);
        max = max.sup(p);
        for q in &pts[i + 1..] {
            diameter = diameter.max((p - q).norm());
        }
    }
    let sub_triangles = triangulate(pts, centroid)?;
    Some(ElementGeometry { diameter, bbox: BoundingBox { min, max }, centroid, area, sub_triangles })
}

/// Fan from the centroid when the polygon is star-shaped with respect to it,
/// otherwise ear clipping.
fn triangulate(pts: &[Vec2], centroid: Vec2) -> Option<Vec<[Vec2; 3]>> {
    let n = pts.len();
    let area = signed_area(pts);
    let tol = 1e-12 * area;
    let star = (0..n).all(|i| cross(centroid, pts[i], pts[(i + 1) % n]) > tol);
    if star {
        return Some((0..n).map(|i| [centroid, pts[i], pts[(i + 1) % n]]).collect());
    }
    ear_clip(pts)
}

fn ear_clip(pts: &[Vec2]) -> Option<Vec<[Vec2; 3]>> {
    let mut idx: Vec<usize> = (0..pts.len()).collect();
    let mut tris = Vec::with_capacity(pts.len() - 2);
    let area = signed_area(pts);
    let tol = 1e-14 * area;
    while idx.len() > 3 {
        let m = idx.len();
        let mut clipped = false;
        for i in 0..m {
            let (ip, ic, inx) = (idx[(i + m - 1) % m], idx[i], idx[(i + 1) % m]);
            let (a, b, c) = (pts[ip], pts[ic], pts[inx]);
            if cross(a, b, c) <= tol {
                continue;
            }
            let contains_other = idx.iter().any(|&j| {
                if j == ip || j == ic || j == inx {
                    return false;
                }
                let p = pts[j];
                cross(a, b, p) >= 0.0 && cross(b, c, p) >= 0.0 && cross(c, a, p) >= 0.0
            });
            if contains_other {
                continue;
            }
            tris.push([a, b, c]);
            idx.remove(i);
            clipped = true;
            break;
        }
        if !clipped {
            return None;
        }
    }
    let (a, b, c) = (pts[idx[0]], pts[idx[1]], pts[idx[2]]);
    if cross(a, b, c) <= 0.0 {
        return None;
    }
    tris.push([a, b, c]);
    Some(tris)
}
