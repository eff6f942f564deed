//! Gauss–Legendre rules on segments and collapsed (Duffy) rules on triangles.
//!
//! Volume rules on polygons are composed over the sub-triangulation stored in
//! [`ElementGeometry`](crate::mesh::ElementGeometry).

use crate::Vec2;

/// Points and positive weights of a quadrature rule in physical coordinates.
#[derive(Debug, Clone, Default)]
pub struct QuadratureRule {
    pub points: Vec<Vec2>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn integrate<F: Fn(Vec2) -> f64>(&self, f: F) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(p, w)| w * f(*p))
            .sum()
    }
}

/// Gauss–Legendre nodes and weights on [-1, 1] with `n` points.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, z);
        if d != 0.0 {
            dp = d;
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, w)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 1..n {
        let k = k as f64;
        let p2 = ((2.0 * k + 1.0) * x * p1 - k * p0) / (k + 1.0);
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Gauss rule on the segment `[a, b]`, exact for polynomials of degree `order`.
pub fn segment_rule(a: Vec2, b: Vec2, order: usize) -> QuadratureRule {
    let n = order / 2 + 1;
    let (x, w) = gauss_legendre(n);
    let half = 0.5 * (b - a).norm();
    let mid = 0.5 * (a + b);
    let dir = 0.5 * (b - a);
    QuadratureRule {
        points: x.iter().map(|&t| mid + dir * t).collect(),
        weights: w.iter().map(|&wi| wi * half).collect(),
    }
}

/// Collapsed Gauss rule on the triangle `(p0, p1, p2)`, exact for total degree `order`.
pub fn triangle_rule(tri: &[Vec2; 3], order: usize, out: &mut QuadratureRule) {
    // The collapsed direction carries the (1 - s) Jacobian, one degree more.
    let ns = order.div_ceil(2) + 1;
    let nt = order / 2 + 1;
    let (xs, ws) = gauss_legendre(ns);
    let (xt, wt) = gauss_legendre(nt);
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let jac = (e1.x * e2.y - e1.y * e2.x).abs();
    for (s, ws) in xs.iter().zip(&ws) {
        let s = 0.5 * (s + 1.0);
        for (t, wt) in xt.iter().zip(&wt) {
            let t = 0.5 * (t + 1.0);
            let xi = s;
            let eta = t * (1.0 - s);
            out.points.push(tri[0] + e1 * xi + e2 * eta);
            out.weights.push(0.25 * ws * wt * (1.0 - s) * jac);
        }
    }
}
