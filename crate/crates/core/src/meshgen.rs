//! Mesh generators for rectangles: structured quadrilaterals and centroidal
//! Voronoi polygons, optionally split into material strips along vertical
//! interfaces.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::MeshError;
use crate::mesh::{signed_area, Mesh};
use crate::Vec2;

/// nx × ny quadrilaterals on the rectangle [min, max], material 0.
pub fn structured_quads(min: Vec2, max: Vec2, nx: usize, ny: usize) -> Mesh {
    let mut v = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            v.push(Vec2::new(
                min.x + (max.x - min.x) * i as f64 / nx as f64,
                min.y + (max.y - min.y) * j as f64 / ny as f64,
            ));
        }
    }
    let id = |i: usize, j: usize| j * (nx + 1) + i;
    let mut cells = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            cells.push(vec![id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1)]);
        }
    }
    let n = cells.len();
    Mesh::new(v, cells, vec![0; n]).expect("structured grid is valid")
}

/// Clips a convex CCW polygon by the half-plane {x : (x − p)·n ≤ 0}.
fn clip(poly: &[Vec2], p: Vec2, n: Vec2) -> Vec<Vec2> {
    let mut out = Vec::with_capacity(poly.len() + 1);
    let m = poly.len();
    for i in 0..m {
        let a = poly[i];
        let b = poly[(i + 1) % m];
        let da = (a - p).dot(&n);
        let db = (b - p).dot(&n);
        if da <= 0.0 {
            out.push(a);
        }
        if (da < 0.0 && db > 0.0) || (da > 0.0 && db < 0.0) {
            let t = da / (da - db);
            out.push(a + (b - a) * t);
        }
    }
    out
}

fn centroid(poly: &[Vec2]) -> Vec2 {
    let n = poly.len();
    let mut c = Vec2::zeros();
    let mut a2 = 0.0;
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        let cr = a.x * b.y - a.y * b.x;
        a2 += cr;
        c += (a + b) * cr;
    }
    c / (3.0 * a2)
}

/// Voronoi cells of `seeds` clipped to the rectangle.
fn voronoi_cells(seeds: &[Vec2], min: Vec2, max: Vec2) -> Vec<Vec<Vec2>> {
    let rect = vec![min, Vec2::new(max.x, min.y), max, Vec2::new(min.x, max.y)];
    let mut order: Vec<usize> = Vec::with_capacity(seeds.len());
    seeds
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            order.clear();
            order.extend((0..seeds.len()).filter(|&j| j != i));
            order.sort_by(|&a, &b| (seeds[a] - s).norm_squared().total_cmp(&(seeds[b] - s).norm_squared()));
            let mut cell = rect.clone();
            for &j in &order {
                let d = seeds[j] - s;
                let reach = cell.iter().map(|v| (v - s).norm()).fold(0.0, f64::max);
                if d.norm() > 2.0 * reach {
                    break;
                }
                cell = clip(&cell, s + 0.5 * d, d);
            }
            cell
        })
        .collect()
}

/// Centroidal Voronoi tessellation of a rectangle after `lloyd` relaxation
/// sweeps, returned as raw polygons.
pub fn cvt_polygons(min: Vec2, max: Vec2, n_cells: usize, lloyd: usize, seed: u64) -> Vec<Vec<Vec2>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seeds: Vec<Vec2> = (0..n_cells)
        .map(|_| Vec2::new(rng.gen_range(min.x..max.x), rng.gen_range(min.y..max.y)))
        .collect();
    for _ in 0..lloyd {
        let cells = voronoi_cells(&seeds, min, max);
        seeds = cells.iter().map(|c| centroid(c)).collect();
    }
    voronoi_cells(&seeds, min, max)
}

/// Joins polygons into a conforming mesh: merges coincident vertices, drops
/// repeated ones and splits edges at vertices of neighbouring polygons that lie
/// on them (hanging nodes across material interfaces).
pub fn polygons_to_mesh(polys: &[Vec<Vec2>], materials: &[u32], scale: f64) -> Result<Mesh, MeshError> {
    let tol = 1e-9 * scale;
    let key = |p: Vec2| ((p.x / tol).round() as i64, (p.y / tol).round() as i64);
    let mut map: HashMap<(i64, i64), usize> = HashMap::new();
    let mut verts: Vec<Vec2> = Vec::new();
    let mut cells: Vec<Vec<usize>> = Vec::with_capacity(polys.len());
    for poly in polys {
        let mut cell: Vec<usize> = Vec::with_capacity(poly.len());
        for &p in poly {
            let (kx, ky) = key(p);
            let mut found = None;
            'search: for dx in -2..=2 {
                for dy in -2..=2 {
                    if let Some(&id) = map.get(&(kx + dx, ky + dy)) {
                        if (verts[id] - p).norm() <= 2.0 * tol {
                            found = Some(id);
                            break 'search;
                        }
                    }
                }
            }
            let id = found.unwrap_or_else(|| {
                verts.push(p);
                map.insert((kx, ky), verts.len() - 1);
                verts.len() - 1
            });
            if cell.last() != Some(&id) {
                cell.push(id);
            }
        }
        while cell.len() > 1 && cell.first() == cell.last() {
            cell.pop();
        }
        cells.push(cell);
    }

    // Split edges at foreign vertices lying in their interior.
    let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    let bucket = scale * 0.02;
    let bkey = |p: Vec2| ((p.x / bucket).floor() as i64, (p.y / bucket).floor() as i64);
    for (i, v) in verts.iter().enumerate() {
        grid.entry(bkey(*v)).or_default().push(i);
    }
    for cell in cells.iter_mut() {
        let mut out = Vec::with_capacity(cell.len());
        let n = cell.len();
        for i in 0..n {
            let (a, b) = (cell[i], cell[(i + 1) % n]);
            out.push(a);
            let (pa, pb) = (verts[a], verts[b]);
            let d = pb - pa;
            let len2 = d.norm_squared();
            let (k0, k1) = (bkey(pa.inf(&pb)), bkey(pa.sup(&pb)));
            let mut on: Vec<(f64, usize)> = Vec::new();
            for gx in k0.0..=k1.0 {
                for gy in k0.1..=k1.1 {
                    if let Some(ids) = grid.get(&(gx, gy)) {
                        for &v in ids {
                            if v == a || v == b {
                                continue;
                            }
                            let t = (verts[v] - pa).dot(&d) / len2;
                            if t <= 1e-9 || t >= 1.0 - 1e-9 {
                                continue;
                            }
                            let dist = (pa + d * t - verts[v]).norm();
                            if dist <= 4.0 * tol {
                                on.push((t, v));
                            }
                        }
                    }
                }
            }
            on.sort_by(|x, y| x.0.total_cmp(&y.0));
            out.extend(on.into_iter().map(|(_, v)| v));
        }
        *cell = out;
    }

    // Drop vertices that are unused.
    let mut used = vec![usize::MAX; verts.len()];
    let mut new_verts = Vec::new();
    for cell in cells.iter_mut() {
        for v in cell.iter_mut() {
            if used[*v] == usize::MAX {
                used[*v] = new_verts.len();
                new_verts.push(verts[*v]);
            }
            *v = used[*v];
        }
    }
    Mesh::new(new_verts, cells, materials.to_vec())
}

/// Description of a generated rectangular mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct RectMeshSpec {
    pub min: Vec2,
    pub max: Vec2,
    pub n_cells: usize,
    /// x-coordinates of vertical material interfaces, increasing; strip i gets label i.
    pub interfaces: Vec<f64>,
    pub lloyd: usize,
    pub seed: u64,
}

/// Centroidal Voronoi mesh of a rectangle, conforming across material strips.
pub fn voronoi_rectangle(spec: &RectMeshSpec) -> Result<Mesh, MeshError> {
    let mut xs = vec![spec.min.x];
    xs.extend(spec.interfaces.iter().copied().filter(|&x| x > spec.min.x && x < spec.max.x));
    xs.push(spec.max.x);
    let total = (spec.max.x - spec.min.x) * (spec.max.y - spec.min.y);
    let mut polys = Vec::new();
    let mut mats = Vec::new();
    for s in 0..xs.len() - 1 {
        let lo = Vec2::new(xs[s], spec.min.y);
        let hi = Vec2::new(xs[s + 1], spec.max.y);
        let area = (hi.x - lo.x) * (hi.y - lo.y);
        let n = ((spec.n_cells as f64) * area / total).round().max(1.0) as usize;
        let cells = cvt_polygons(lo, hi, n, spec.lloyd, spec.seed.wrapping_add(s as u64));
        for c in cells {
            if c.len() >= 3 && signed_area(&c) > 0.0 {
                polys.push(c);
                mats.push(s as u32);
            }
        }
    }
    let scale = (spec.max - spec.min).norm();
    polygons_to_mesh(&polys, &mats, scale)
}
