//! Hierarchical modal basis: tensor Legendre polynomials of total degree ≤ p,
//! orthonormal over each element's bounding box.
//!
//! Mode ordering is graded: all modes of total degree d precede those of
//! degree d + 1, and within a degree the x-power decreases, so the degree-q
//! basis is always the leading `local_dim(q)` modes of the degree-p basis.

use nalgebra::{DMatrix, DVector};

use crate::error::SolverError;
use crate::mesh::ElementGeometry;
use crate::quadrature::QuadratureRule;
use crate::Vec2;

/// Highest polynomial degree supported by the fixed-size Legendre tables.
pub const MAX_DEGREE: usize = 12;

/// Number of modes of total degree ≤ p in two dimensions.
pub fn local_dim(p: usize) -> usize {
    (p + 1) * (p + 2) / 2
}

/// Exponent pairs (i, j) of the modes of the degree-p basis, in basis order.
pub fn modes(p: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(local_dim(p));
    for d in 0..=p {
        for i in (0..=d).rev() {
            out.push((i, d - i));
        }
    }
    out
}

/// Per-element polynomial degrees, each in `1..=p_max`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DegreeField {
    degrees: Vec<usize>,
}

impl DegreeField {
    pub fn uniform(n: usize, p: usize) -> Self {
        assert!((1..=MAX_DEGREE).contains(&p), "degree {p} out of range");
        Self { degrees: vec![p; n] }
    }

    pub fn new(degrees: Vec<usize>) -> Result<Self, SolverError> {
        if let Some((k, p)) = degrees.iter().enumerate().find(|(_, &p)| p == 0 || p > MAX_DEGREE) {
            return Err(SolverError::InvalidArgument(format!(
                "element {k} has degree {p}; degrees must lie in 1..={MAX_DEGREE}"
            )));
        }
        Ok(Self { degrees })
    }

    pub fn len(&self) -> usize {
        self.degrees.len()
    }

    pub fn is_empty(&self) -> bool {
        self.degrees.is_empty()
    }

    pub fn get(&self, k: usize) -> usize {
        self.degrees[k]
    }

    pub fn set(&mut self, k: usize, p: usize) {
        assert!((1..=MAX_DEGREE).contains(&p));
        self.degrees[k] = p;
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.degrees
    }

    pub fn max(&self) -> usize {
        self.degrees.iter().copied().max().unwrap_or(0)
    }

    /// Number of elements at each degree 1..=p_max.
    pub fn counts(&self, p_max: usize) -> Vec<usize> {
        let mut c = vec![0; p_max];
        for &p in &self.degrees {
            if p >= 1 && p <= p_max {
                c[p - 1] += 1;
            }
        }
        c
    }
}

/// Contiguous element-major layout of the unknowns for a degree field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DofMap {
    degrees: DegreeField,
    offsets: Vec<usize>,
}

impl DofMap {
    pub fn degrees(&self) -> &DegreeField {
        &self.degrees
    }

    pub fn num_elements(&self) -> usize {
        self.degrees.len()
    }

    pub fn offset(&self, k: usize) -> usize {
        self.offsets[k]
    }

    pub fn size(&self, k: usize) -> usize {
        self.offsets[k + 1] - self.offsets[k]
    }

    pub fn range(&self, k: usize) -> std::ops::Range<usize> {
        self.offsets[k]..self.offsets[k + 1]
    }

    pub fn degree(&self, k: usize) -> usize {
        self.degrees.get(k)
    }

    /// Total number of unknowns N_h(p).
    pub fn total(&self) -> usize {
        *self.offsets.last().unwrap_or(&0)
    }

    pub fn sizes(&self) -> Vec<usize> {
        (0..self.num_elements()).map(|k| self.size(k)).collect()
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets[..self.num_elements()]
    }

    pub fn check_len(&self, len: usize) -> Result<(), SolverError> {
        if len == self.total() {
            Ok(())
        } else {
            Err(SolverError::LayoutMismatch { expected: self.total(), found: len })
        }
    }
}

pub fn build_dof_map(degrees: &DegreeField) -> DofMap {
    let mut offsets = Vec::with_capacity(degrees.len() + 1);
    let mut acc = 0;
    offsets.push(0);
    for &p in degrees.as_slice() {
        acc += local_dim(p);
        offsets.push(acc);
    }
    DofMap { degrees: degrees.clone(), offsets }
}

/// Scaled Legendre values L̂_n = √((2n+1)/2) P_n and their first two
/// derivatives with respect to ξ, for n = 0..=p.
#[derive(Clone, Copy)]
struct Legendre1d {
    v: [f64; MAX_DEGREE + 1],
    d1: [f64; MAX_DEGREE + 1],
    d2: [f64; MAX_DEGREE + 1],
}

fn legendre_1d(p: usize, xi: f64) -> Legendre1d {
    let mut v = [0.0; MAX_DEGREE + 1];
    let mut d1 = [0.0; MAX_DEGREE + 1];
    let mut d2 = [0.0; MAX_DEGREE + 1];
    v[0] = 1.0;
    if p >= 1 {
        v[1] = xi;
        d1[1] = 1.0;
    }
    for n in 1..p {
        let nf = n as f64;
        v[n + 1] = ((2.0 * nf + 1.0) * xi * v[n] - nf * v[n - 1]) / (nf + 1.0);
        d1[n + 1] = d1[n - 1] + (2.0 * nf + 1.0) * v[n];
        d2[n + 1] = d2[n - 1] + (2.0 * nf + 1.0) * d1[n];
    }
    for n in 0..=p {
        let s = ((2 * n + 1) as f64 / 2.0).sqrt();
        v[n] *= s;
        d1[n] *= s;
        d2[n] *= s;
    }
    Legendre1d { v, d1, d2 }
}

/// Basis values and physical derivatives at a set of points, mode-major:
/// entry `m * n_points + q` belongs to mode `m` at point `q`.
#[derive(Debug, Clone, Default)]
pub struct BasisValues {
    pub n_modes: usize,
    pub n_points: usize,
    pub val: Vec<f64>,
    pub dx: Vec<f64>,
    pub dy: Vec<f64>,
    pub dxx: Vec<f64>,
    pub dxy: Vec<f64>,
    pub dyy: Vec<f64>,
}

impl BasisValues {
    pub fn value(&self, m: usize, q: usize) -> f64 {
        self.val[m * self.n_points + q]
    }

    pub fn grad(&self, m: usize, q: usize) -> Vec2 {
        let i = m * self.n_points + q;
        Vec2::new(self.dx[i], self.dy[i])
    }

    /// Row of values of mode `m` over all points.
    pub fn row(&self, m: usize) -> &[f64] {
        &self.val[m * self.n_points..(m + 1) * self.n_points]
    }

    /// Evaluates Σ_m c_m φ_m at every point (uses the first `c.len()` modes).
    pub fn reconstruct(&self, c: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (m, &cm) in c.iter().enumerate() {
            if cm == 0.0 {
                continue;
            }
            for (o, v) in out.iter_mut().zip(self.row(m)) {
                *o += cm * v;
            }
        }
    }

    /// Evaluates the gradient of Σ_m c_m φ_m at every point.
    pub fn reconstruct_grad(&self, c: &[f64]) -> Vec<Vec2> {
        let mut out = vec![Vec2::zeros(); self.n_points];
        for (m, &cm) in c.iter().enumerate() {
            let base = m * self.n_points;
            for (q, o) in out.iter_mut().enumerate() {
                o.x += cm * self.dx[base + q];
                o.y += cm * self.dy[base + q];
            }
        }
        out
    }

    /// Evaluates the Hessian entries (xx, xy, yy) of Σ_m c_m φ_m.
    pub fn reconstruct_hessian(&self, c: &[f64]) -> Vec<[f64; 3]> {
        assert!(!self.dxx.is_empty(), "second derivatives were not evaluated");
        let mut out = vec![[0.0; 3]; self.n_points];
        for (m, &cm) in c.iter().enumerate() {
            let base = m * self.n_points;
            for (q, o) in out.iter_mut().enumerate() {
                o[0] += cm * self.dxx[base + q];
                o[1] += cm * self.dxy[base + q];
                o[2] += cm * self.dyy[base + q];
            }
        }
        out
    }
}

/// Which derivative orders to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Derivatives {
    None,
    First,
    Second,
}

/// Evaluates the degree-p basis of the element with bounding box taken from
/// `geom` at `points`.
pub fn eval_basis(geom: &ElementGeometry, p: usize, points: &[Vec2]) -> BasisValues {
    eval_basis_with(geom, p, points, Derivatives::Second)
}

pub fn eval_basis_with(
    geom: &ElementGeometry,
    p: usize,
    points: &[Vec2],
    deriv: Derivatives,
) -> BasisValues {
    assert!(p <= MAX_DEGREE);
    let ext = geom.bbox.extent();
    let ctr = geom.bbox.center();
    let (hx, hy) = (ext.x, ext.y);
    let scale = 2.0 / (hx * hy).sqrt();
    let (sx, sy) = (2.0 / hx, 2.0 / hy);
    let md = modes(p);
    let nm = md.len();
    let np = points.len();
    let mut out = BasisValues { n_modes: nm, n_points: np, val: vec![0.0; nm * np], ..Default::default() };
    if deriv != Derivatives::None {
        out.dx = vec![0.0; nm * np];
        out.dy = vec![0.0; nm * np];
    }
    if deriv == Derivatives::Second {
        out.dxx = vec![0.0; nm * np];
        out.dxy = vec![0.0; nm * np];
        out.dyy = vec![0.0; nm * np];
    }
    for (q, pt) in points.iter().enumerate() {
        let lx = legendre_1d(p, sx * (pt.x - ctr.x));
        let ly = legendre_1d(p, sy * (pt.y - ctr.y));
        for (m, &(i, j)) in md.iter().enumerate() {
            let idx = m * np + q;
            out.val[idx] = scale * lx.v[i] * ly.v[j];
            if deriv != Derivatives::None {
                out.dx[idx] = scale * sx * lx.d1[i] * ly.v[j];
                out.dy[idx] = scale * sy * lx.v[i] * ly.d1[j];
            }
            if deriv == Derivatives::Second {
                out.dxx[idx] = scale * sx * sx * lx.d2[i] * ly.v[j];
                out.dxy[idx] = scale * sx * sy * lx.d1[i] * ly.d1[j];
                out.dyy[idx] = scale * sy * sy * lx.v[i] * ly.d2[j];
            }
        }
    }
    out
}

/// Gram matrix of the degree-p basis on the polygon for a given rule.
pub fn local_mass(geom: &ElementGeometry, p: usize, rule: &QuadratureRule) -> DMatrix<f64> {
    let b = eval_basis_with(geom, p, &rule.points, Derivatives::None);
    gram(&b, &rule.weights, b.n_modes)
}

/// Σ_q w_q φ_i φ_j over the leading `n` modes of precomputed values.
pub fn gram(b: &BasisValues, weights: &[f64], n: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        let ri = b.row(i);
        for j in 0..=i {
            let rj = b.row(j);
            let s: f64 = ri.iter().zip(rj).zip(weights).map(|((a, c), w)| w * a * c).sum();
            m[(i, j)] = s;
            m[(j, i)] = s;
        }
    }
    m
}

/// L² projection of `f` onto ℙ^p(K), using a rule of order 2p + 2 unless the
/// caller provides one.
pub fn project_l2<F: Fn(Vec2) -> f64>(
    f: F,
    geom: &ElementGeometry,
    p: usize,
    rule: Option<&QuadratureRule>,
) -> Result<DVector<f64>, SolverError> {
    let owned;
    let rule = match rule {
        Some(r) => r,
        None => {
            owned = geom.quadrature(2 * p + 2);
            &owned
        }
    };
    let b = eval_basis_with(geom, p, &rule.points, Derivatives::None);
    let m = gram(&b, &rule.weights, b.n_modes);
    let fv: Vec<f64> = rule.points.iter().map(|&x| f(x)).collect();
    let mut rhs = DVector::zeros(b.n_modes);
    for i in 0..b.n_modes {
        rhs[i] = b.row(i).iter().zip(&fv).zip(&rule.weights).map(|((a, c), w)| w * a * c).sum();
    }
    let chol = m.cholesky().ok_or(SolverError::SingularLocalMatrix { element: usize::MAX })?;
    Ok(chol.solve(&rhs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Mesh;

    fn square_mesh(x0: f64, y0: f64, hx: f64, hy: f64) -> Mesh {
        let v = vec![
            Vec2::new(x0, y0),
            Vec2::new(x0 + hx, y0),
            Vec2::new(x0 + hx, y0 + hy),
            Vec2::new(x0, y0 + hy),
        ];
        Mesh::new(v, vec![vec![0, 1, 2, 3]], vec![0]).unwrap()
    }

    fn pentagon() -> Mesh {
        let v = vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(1.1, 0.1),
            Vec2::new(1.3, 0.9),
            Vec2::new(0.5, 1.4),
            Vec2::new(-0.2, 0.7),
        ];
        Mesh::new(v, vec![vec![0, 1, 2, 3, 4]], vec![0]).unwrap()
    }

    #[test]
    fn local_dims() {
        assert_eq!(local_dim(1), 3);
        assert_eq!(local_dim(2), 6);
        assert_eq!(local_dim(5), 21);
        assert_eq!(1500 * local_dim(5), 31500);
    }

    #[test]
    fn dof_map_layouts() {
        let d = build_dof_map(&DegreeField::new(vec![1, 3, 2]).unwrap());
        assert_eq!(d.sizes(), vec![3, 10, 6]);
        assert_eq!(d.offsets(), &[0, 3, 13]);
        assert_eq!(d.total(), 19);
        assert_eq!(build_dof_map(&DegreeField::uniform(1500, 1)).total(), 4500);
        assert_eq!(build_dof_map(&DegreeField::uniform(1500, 5)).total(), 31500);
        assert!(DegreeField::new(vec![0, 1]).is_err());
    }

    #[test]
    fn mode_order_is_graded() {
        assert_eq!(modes(2), vec![(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]);
    }

    #[test]
    fn constant_mode() {
        let m = square_mesh(0.3, -0.2, 0.5, 2.0);
        let g = m.geometry(0);
        let pts = [Vec2::new(0.4, 0.0), Vec2::new(0.7, 1.5)];
        let b = eval_basis(g, 3, &pts);
        for q in 0..2 {
            assert!((b.value(0, q) - 1.0 / 1.0f64.sqrt()).abs() < 1e-15);
            assert_eq!(b.grad(0, q), Vec2::zeros());
        }
    }

    #[test]
    fn gram_is_identity_on_box() {
        let m = square_mesh(-1.0, 2.0, 0.7, 0.3);
        let g = m.geometry(0);
        for p in 1..=6 {
            let rule = g.quadrature(2 * p + 2);
            let mm = local_mass(g, p, &rule);
            let err = (&mm - DMatrix::identity(mm.nrows(), mm.ncols())).amax();
            assert!(err < 1e-12, "p={p}: {err}");
        }
    }

    #[test]
    fn hierarchical_prefix() {
        let m = pentagon();
        let g = m.geometry(0);
        let pts = [Vec2::new(0.5, 0.5), Vec2::new(0.9, 0.3), Vec2::new(0.1, 0.8)];
        for q in 1..6 {
            let a = eval_basis(g, q, &pts);
            let b = eval_basis(g, q + 1, &pts);
            let n = local_dim(q) * pts.len();
            assert_eq!(a.val[..n], b.val[..n]);
            assert_eq!(a.dx[..n], b.dx[..n]);
            assert_eq!(a.dyy[..n], b.dyy[..n]);
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let m = pentagon();
        let g = m.geometry(0);
        let x = Vec2::new(0.41, 0.63);
        let h = 1e-5;
        let b = eval_basis(g, 5, &[x]);
        let bx = eval_basis(g, 5, &[x + Vec2::new(h, 0.0), x - Vec2::new(h, 0.0)]);
        let by = eval_basis(g, 5, &[x + Vec2::new(0.0, h), x - Vec2::new(0.0, h)]);
        for mm in 0..b.n_modes {
            let fdx = (bx.value(mm, 0) - bx.value(mm, 1)) / (2.0 * h);
            let fdy = (by.value(mm, 0) - by.value(mm, 1)) / (2.0 * h);
            assert!((fdx - b.dx[mm]).abs() < 1e-5 * (1.0 + fdx.abs()));
            assert!((fdy - b.dy[mm]).abs() < 1e-5 * (1.0 + fdy.abs()));
            let fdxx = (bx.dx[mm * 2] - bx.dx[mm * 2 + 1]) / (2.0 * h);
            let fdxy = (by.dx[mm * 2] - by.dx[mm * 2 + 1]) / (2.0 * h);
            let fdyy = (by.dy[mm * 2] - by.dy[mm * 2 + 1]) / (2.0 * h);
            assert!((fdxx - b.dxx[mm]).abs() < 1e-4 * (1.0 + fdxx.abs()));
            assert!((fdxy - b.dxy[mm]).abs() < 1e-4 * (1.0 + fdxy.abs()));
            assert!((fdyy - b.dyy[mm]).abs() < 1e-4 * (1.0 + fdyy.abs()));
        }
    }

    #[test]
    fn projection_of_constant_on_box() {
        let m = square_mesh(0.0, 0.0, 2.0, 0.5);
        let g = m.geometry(0);
        let c = project_l2(|_| 3.0, g, 2, None).unwrap();
        assert!((c[0] - 3.0 * 1.0f64.sqrt()).abs() < 1e-13);
        assert!(c.iter().skip(1).all(|v| v.abs() < 1e-13));
    }

    #[test]
    fn projection_reproduces_polynomials_and_is_idempotent() {
        let m = pentagon();
        let g = m.geometry(0);
        let f = |x: Vec2| 1.0 - 2.0 * x.x + 0.5 * x.x * x.y - x.y * x.y * x.y;
        let rule = g.quadrature(8);
        let c = project_l2(f, g, 3, Some(&rule)).unwrap();
        let b = eval_basis_with(g, 3, &rule.points, Derivatives::None);
        let mut rec = vec![0.0; rule.len()];
        b.reconstruct(c.as_slice(), &mut rec);
        for (q, x) in rule.points.iter().enumerate() {
            assert!((rec[q] - f(*x)).abs() < 1e-11);
        }
        let rec_at = |x: Vec2| {
            let bb = eval_basis_with(g, 3, &[x], Derivatives::None);
            (0..bb.n_modes).map(|mm| c[mm] * bb.value(mm, 0)).sum::<f64>()
        };
        let c2 = project_l2(rec_at, g, 3, Some(&rule)).unwrap();
        assert!((&c2 - &c).amax() < 1e-12);
    }
}
