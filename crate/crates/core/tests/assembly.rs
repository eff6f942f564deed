//! Element-level quantities against oracles that share no code with the
//! solver: polygon integrals through Green's theorem along the edges, and a
//! Legendre basis written out here.

use nalgebra::{DMatrix, DVector};

use padg::assembly::{assemble_ionic, assemble_operators, isotropic, update_operators, Discretization};
use padg::basis::{modes, DegreeField};
use padg::ionic::{cubic_f, CubicParams, IonicModel};
use padg::mesh::{quadrature, Mesh};
use padg::meshgen::{voronoi_rectangle, RectMeshSpec};
use padg::Vec2;

/// Gauss-Legendre nodes and weights on [-1, 1] by Newton iteration.
fn gauss(n: usize) -> Vec<(f64, f64)> {
    (0..n)
        .map(|i| {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            (x, 2.0 / ((1.0 - x * x) * dp * dp))
        })
        .collect()
}

/// ∫∫_P g dA = ∮ G dy with G(x, y) = ∫_{x0}^{x} g(s, y) ds, both integrals by
/// Gauss rules exact for polynomial g of degree < 2n - 1.
fn green_integral(poly: &[Vec2], g: impl Fn(f64, f64) -> f64, n: usize) -> f64 {
    let rule = gauss(n);
    let x0 = poly.iter().map(|v| v.x).fold(f64::INFINITY, f64::min);
    let antiderivative = |x: f64, y: f64| {
        let half = 0.5 * (x - x0);
        rule.iter().map(|(t, w)| w * half * g(x0 + half * (t + 1.0), y)).sum::<f64>()
    };
    let mut total = 0.0;
    for i in 0..poly.len() {
        let (a, b) = (poly[i], poly[(i + 1) % poly.len()]);
        for (t, w) in &rule {
            let s = 0.5 * (t + 1.0);
            let p = a + (b - a) * s;
            total += 0.5 * w * antiderivative(p.x, p.y) * (b.y - a.y);
        }
    }
    total
}

fn legendre(n: usize, x: f64) -> f64 {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return 1.0;
    }
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    p1
}

/// Orthonormal tensor Legendre mode (i, j) on the bounding box of `poly`.
fn mode(poly: &[Vec2], i: usize, j: usize, x: f64, y: f64) -> f64 {
    let (lo_x, hi_x) = poly.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v.x), b.max(v.x)));
    let (lo_y, hi_y) = poly.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v.y), b.max(v.y)));
    let (wx, wy) = (hi_x - lo_x, hi_y - lo_y);
    let xi = (2.0 * x - lo_x - hi_x) / wx;
    let eta = (2.0 * y - lo_y - hi_y) / wy;
    ((2 * i + 1) as f64 * (2 * j + 1) as f64 / (wx * wy)).sqrt() * legendre(i, xi) * legendre(j, eta)
}

fn pentagon() -> (Vec<Vec2>, Mesh) {
    let v = vec![
        Vec2::new(0.1, -0.2),
        Vec2::new(1.2, 0.15),
        Vec2::new(1.35, 0.95),
        Vec2::new(0.45, 1.3),
        Vec2::new(-0.25, 0.6),
    ];
    let mesh = Mesh::new(v.clone(), vec![vec![0, 1, 2, 3, 4]], vec![0]).unwrap();
    (v, mesh)
}

#[test]
fn polygon_quadrature_matches_green_oracle() {
    let (poly, mesh) = pentagon();
    let geom = mesh.geometry(0);
    let area = green_integral(&poly, |_, _| 1.0, 4);
    assert!((geom.area - area).abs() < 1e-13 * area);
    let tri_sum: f64 = geom.sub_triangles.iter().map(|t| 0.5 * (t[1] - t[0]).perp(&(t[2] - t[0])).abs()).sum();
    assert!((tri_sum - area).abs() < 1e-12 * area);
    let diam = poly.iter().flat_map(|a| poly.iter().map(move |b| (a - b).norm())).fold(0.0, f64::max);
    assert_eq!(geom.diameter, diam);
    for (a, b) in [(2, 3), (0, 5), (4, 4), (7, 1)] {
        let f = |x: f64, y: f64| x.powi(a) * y.powi(b);
        let exact = green_integral(&poly, f, 8);
        let rule = quadrature(geom, a as usize + b as usize);
        let q: f64 = rule.points.iter().zip(&rule.weights).map(|(p, w)| w * f(p.x, p.y)).sum();
        assert!(rule.weights.iter().all(|&w| w > 0.0));
        assert!((q - exact).abs() <= 1e-12 * exact.abs(), "x^{a} y^{b}: {q} vs {exact}");
    }
}

#[test]
fn pentagon_mass_block_matches_oracle() {
    let (poly, mesh) = pentagon();
    for p in [2, 3] {
        let disc = Discretization::new(mesh.clone(), vec![isotropic(1.0)], p, 10.0);
        let ops = assemble_operators(&disc, &DegreeField::uniform(1, p));
        let md = modes(p);
        let oracle = DMatrix::from_fn(md.len(), md.len(), |a, b| {
            let ((i, j), (k, l)) = (md[a], md[b]);
            green_integral(&poly, |x, y| mode(&poly, i, j, x, y) * mode(&poly, k, l, x, y), 8)
        });
        assert!((&ops.mass[0] - &oracle).amax() < 1e-12, "p = {p}");
    }
}

#[test]
fn cubic_load_of_linear_field_matches_oracle() {
    let (poly, mesh) = pentagon();
    let p = 2;
    let disc = Discretization::new(mesh, vec![isotropic(1.0)], p, 10.0);
    let ops = assemble_operators(&disc, &DegreeField::uniform(1, p));
    let cubic = CubicParams::default();
    // u_h = -60 + 25 φ_(1,0) - 10 φ_(0,1)
    let md = modes(p);
    let mut c = DVector::zeros(md.len());
    let area_box = {
        let b = disc.mesh.geometry(0).bbox;
        b.area()
    };
    c[0] = -60.0 * area_box.sqrt();
    c[md.iter().position(|&m| m == (1, 0)).unwrap()] = 25.0;
    c[md.iter().position(|&m| m == (0, 1)).unwrap()] = -10.0;
    let u_h = |x: f64, y: f64| -60.0 + 25.0 * mode(&poly, 1, 0, x, y) - 10.0 * mode(&poly, 0, 1, x, y);
    let (load, _) = assemble_ionic(&disc, &ops.dofmap, &c, &[], &IonicModel::Cubic(cubic)).unwrap();
    for (m, &(i, j)) in md.iter().enumerate() {
        let exact = green_integral(&poly, |x, y| cubic_f(u_h(x, y), &cubic) * mode(&poly, i, j, x, y), 8);
        assert!((load[m] - exact).abs() <= 1e-11 * exact.abs().max(1.0), "mode {m}: {} vs {exact}", load[m]);
    }
}

#[test]
fn stiffness_is_positive_semidefinite() {
    let mesh = voronoi_rectangle(&RectMeshSpec {
        min: Vec2::zeros(),
        max: Vec2::new(1.0, 1.0),
        n_cells: 16,
        interfaces: vec![],
        lloyd: 10,
        seed: 3,
    })
    .unwrap();
    let n = mesh.num_cells();
    let disc = Discretization::new(mesh, vec![isotropic(0.5); n], 3, 10.0);
    let ops = assemble_operators(&disc, &DegreeField::new((0..n).map(|k| 1 + k % 3).collect()).unwrap());
    let a = ops.dense_stiffness(&disc, false);
    let eig = a.symmetric_eigenvalues();
    assert!(eig.min() >= -1e-10 * a.norm(), "{}", eig.min());
}

#[test]
fn lowering_a_degree_keeps_the_leading_mass_block() {
    let (_, mesh) = pentagon();
    let disc = Discretization::new(mesh, vec![isotropic(1.0)], 2, 10.0);
    let hi = assemble_operators(&disc, &DegreeField::uniform(1, 2));
    let lo = update_operators(&disc, &hi, &DegreeField::uniform(1, 1)).unwrap();
    assert_eq!(lo.mass[0], hi.mass[0].view((0, 0), (3, 3)).clone_owned());
    let back = update_operators(&disc, &lo, &DegreeField::uniform(1, 2)).unwrap();
    assert_eq!(back, hi);
}
