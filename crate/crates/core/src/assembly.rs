//! Block-sparse DG operators: mass M, symmetric interior penalty stiffness
//! A = Ã + S, and the load vectors of the monodomain problem.
//!
//! Ã holds the volume, consistency and symmetry terms; S holds only the
//! jump-jump penalty and is stored per face, because the penalty depends on
//! the degrees of both neighbours. Every matrix entry is produced by a single
//! entry kernel that sums over quadrature points in a fixed order, so blocks
//! obtained by truncation or extension after a degree change are bit-identical
//! to a fresh assembly.

use std::collections::BTreeMap;
use std::ops::AddAssign;

use nalgebra::{DMatrix, DVector};

use crate::basis::{build_dof_map, eval_basis_with, BasisValues, DegreeField, Derivatives, DofMap};
use crate::error::{ConfigError, SolverError};
use crate::ionic::IonicModel;
use crate::mesh::{face_quadrature, Mesh};
use crate::quadrature::QuadratureRule;
use crate::{Mat2, Vec2};

/// Isotropic conductivity σ𝟙.
pub fn isotropic(sigma: f64) -> Mat2 {
    Mat2::new(sigma, 0.0, 0.0, sigma)
}

/// Fibre conductivity σ_l 𝟙 + (σ_n − σ_l) n ⊗ n.
pub fn fiber_tensor(sigma_l: f64, sigma_n: f64, n: Vec2) -> Mat2 {
    let n = n.normalize();
    Mat2::identity() * sigma_l + (n * n.transpose()) * (sigma_n - sigma_l)
}

fn sym_eigs(s: &Mat2) -> (f64, f64) {
    let tr = s[(0, 0)] + s[(1, 1)];
    let det = s[(0, 0)] * s[(1, 1)] - s[(0, 1)] * s[(1, 0)];
    let disc = (0.25 * tr * tr - det).max(0.0).sqrt();
    (0.5 * tr - disc, 0.5 * tr + disc)
}

/// Largest eigenvalue of a symmetric conductivity, used as the per-element
/// magnitude Σ_K in the penalty.
pub fn sigma_magnitude(s: &Mat2) -> f64 {
    sym_eigs(s).1
}

pub fn sigma_min_eigenvalue(s: &Mat2) -> f64 {
    sym_eigs(s).0
}

/// Label → conductivity tensor.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MaterialTable {
    pub sigma: BTreeMap<u32, Mat2>,
}

impl MaterialTable {
    pub fn uniform(s: Mat2) -> Self {
        let mut sigma = BTreeMap::new();
        sigma.insert(0, s);
        Self { sigma }
    }

    /// Per-cell tensors; fails on labels absent from the table.
    pub fn per_cell(&self, mesh: &Mesh) -> Result<Vec<Mat2>, ConfigError> {
        mesh.cell_material
            .iter()
            .map(|m| self.sigma.get(m).copied().ok_or(ConfigError::MissingMaterial(*m)))
            .collect()
    }

    pub fn validate(&self) -> Result<(), String> {
        for (m, s) in &self.sigma {
            if (s[(0, 1)] - s[(1, 0)]).abs() > 1e-14 * s.amax() {
                return Err(format!("conductivity of material {m} is not symmetric"));
            }
            if sigma_min_eigenvalue(s) <= 0.0 {
                return Err(format!("conductivity of material {m} is not positive definite"));
            }
        }
        Ok(())
    }
}

/// χ_m (mm⁻¹) and C_m (μF/mm²).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelCoefficients {
    pub chi: f64,
    pub cm: f64,
}

impl Default for ModelCoefficients {
    fn default() -> Self {
        Self { chi: 140.0, cm: 0.01 }
    }
}

/// η = η₀ {Σ_K}_A {p²}_A / {h}_H on an interior face.
pub fn penalty_on_face(
    p_plus: usize,
    p_minus: usize,
    h_plus: f64,
    h_minus: f64,
    sig_plus: f64,
    sig_minus: f64,
    eta0: f64,
) -> f64 {
    let sig = 0.5 * (sig_plus + sig_minus);
    let p2 = 0.5 * ((p_plus * p_plus) as f64 + (p_minus * p_minus) as f64);
    let h = 2.0 * h_plus * h_minus / (h_plus + h_minus);
    eta0 * sig * p2 / h
}

/// Face quadrature with both sides' basis values and gradients at p_max.
#[derive(Debug, Clone)]
pub struct FaceCache {
    pub rule: QuadratureRule,
    pub left: BasisValues,
    pub right: Option<BasisValues>,
}

/// Mesh, materials and quadrature data shared by all operators.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub mesh: Mesh,
    pub p_max: usize,
    pub eta0: f64,
    pub sigma: Vec<Mat2>,
    pub sigma_mag: Vec<f64>,
    pub elem_rules: Vec<QuadratureRule>,
    /// Basis values (no derivatives) at each element's volume points, at p_max.
    pub elem_vals: Vec<BasisValues>,
    pub faces: Vec<FaceCache>,
}

impl Discretization {
    /// Builds caches with quadrature order 2 p_max + 2 on volumes and faces.
    pub fn new(mesh: Mesh, sigma: Vec<Mat2>, p_max: usize, eta0: f64) -> Self {
        Self::with_order(mesh, sigma, p_max, eta0, 2 * p_max + 2)
    }

    pub fn with_order(mesh: Mesh, sigma: Vec<Mat2>, p_max: usize, eta0: f64, order: usize) -> Self {
        assert_eq!(sigma.len(), mesh.num_cells());
        let sigma_mag = sigma.iter().map(sigma_magnitude).collect();
        let mut elem_rules = Vec::with_capacity(mesh.num_cells());
        let mut elem_vals = Vec::with_capacity(mesh.num_cells());
        for k in 0..mesh.num_cells() {
            let g = mesh.geometry(k);
            let r = g.quadrature(order);
            elem_vals.push(eval_basis_with(g, p_max, &r.points, Derivatives::None));
            elem_rules.push(r);
        }
        let faces = (0..mesh.faces.len())
            .map(|f| {
                let rule = face_quadrature(&mesh, f, order);
                let fc = &mesh.faces[f];
                let left = eval_basis_with(mesh.geometry(fc.left), p_max, &rule.points, Derivatives::First);
                let right = fc
                    .right
                    .map(|r| eval_basis_with(mesh.geometry(r), p_max, &rule.points, Derivatives::First));
                FaceCache { rule, left, right }
            })
            .collect();
        Self { mesh, p_max, eta0, sigma, sigma_mag, elem_rules, elem_vals, faces }
    }

    pub fn num_elements(&self) -> usize {
        self.mesh.num_cells()
    }

    /// Basis values of `cell` on face `f` (whichever side it is).
    pub fn face_side(&self, f: usize, cell: usize) -> &BasisValues {
        let fc = &self.faces[f];
        if self.mesh.faces[f].left == cell {
            &fc.left
        } else {
            fc.right.as_ref().expect("cell is not adjacent to face")
        }
    }

    pub fn penalty(&self, f: usize, degrees: &DegreeField) -> f64 {
        let fc = &self.mesh.faces[f];
        let r = fc.right.expect("penalty requested on a boundary face");
        let l = fc.left;
        penalty_on_face(
            degrees.get(l),
            degrees.get(r),
            self.mesh.geometry(l).diameter,
            self.mesh.geometry(r).diameter,
            self.sigma_mag[l],
            self.sigma_mag[r],
            self.eta0,
        )
    }

    /// Volume basis values and gradients of degree `p` on element `k`.
    pub fn volume_gradients(&self, k: usize, p: usize) -> BasisValues {
        eval_basis_with(self.mesh.geometry(k), p, &self.elem_rules[k].points, Derivatives::First)
    }

    /// Volume basis with second derivatives of degree `p` on element `k`.
    pub fn volume_hessians(&self, k: usize, p: usize) -> BasisValues {
        eval_basis_with(self.mesh.geometry(k), p, &self.elem_rules[k].points, Derivatives::Second)
    }

    /// Smallest conductivity eigenvalue over the domain.
    pub fn sigma_min(&self) -> f64 {
        self.sigma.iter().map(sigma_min_eigenvalue).fold(f64::INFINITY, f64::min)
    }
}

/// Jump-jump penalty blocks of one interior face.
#[derive(Debug, Clone, PartialEq)]
pub struct FacePenalty {
    pub eta: f64,
    pub ll: DMatrix<f64>,
    pub lr: DMatrix<f64>,
    pub rr: DMatrix<f64>,
}

/// Assembled operators bound to one degree layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Operators {
    pub dofmap: DofMap,
    pub mass: Vec<DMatrix<f64>>,
    /// Diagonal blocks of Ã.
    pub a_diag: Vec<DMatrix<f64>>,
    /// Ã coupling block per interior face, rows = left cell, cols = right cell.
    pub a_face: Vec<Option<DMatrix<f64>>>,
    /// S per interior face.
    pub s_face: Vec<Option<FacePenalty>>,
}

fn dot3(a: &[f64], b: &[f64], w: &[f64]) -> f64 {
    a.iter().zip(b).zip(w).map(|((x, y), z)| x * y * z).sum()
}

fn mass_entry(b: &BasisValues, w: &[f64], i: usize, j: usize) -> f64 {
    dot3(b.row(i), b.row(j), w)
}

/// Σ∇φ_m · n at every face point.
fn flux_row(b: &BasisValues, m: usize, s: &Mat2, n: Vec2) -> Vec<f64> {
    let sn = s * n;
    let base = m * b.n_points;
    (0..b.n_points).map(|q| b.dx[base + q] * sn.x + b.dy[base + q] * sn.y).collect()
}

fn a_diag_entry(disc: &Discretization, k: usize, vol: &BasisValues, i: usize, j: usize) -> f64 {
    let s = &disc.sigma[k];
    let w = &disc.elem_rules[k].weights;
    let np = vol.n_points;
    let (bi, bj) = (i * np, j * np);
    let mut acc = 0.0;
    for q in 0..np {
        let gx = s[(0, 0)] * vol.dx[bj + q] + s[(0, 1)] * vol.dy[bj + q];
        let gy = s[(1, 0)] * vol.dx[bj + q] + s[(1, 1)] * vol.dy[bj + q];
        acc += w[q] * (gx * vol.dx[bi + q] + gy * vol.dy[bi + q]);
    }
    for &f in &disc.mesh.cell_faces[k] {
        let face = &disc.mesh.faces[f];
        if !face.is_interior() {
            continue;
        }
        let n = face.normal_for(k);
        let b = disc.face_side(f, k);
        let fw = &disc.faces[f].rule.weights;
        let fj = flux_row(b, j, s, n);
        let fi = flux_row(b, i, s, n);
        let mut t = 0.0;
        for q in 0..b.n_points {
            t += fw[q] * (fj[q] * b.value(i, q) + b.value(j, q) * fi[q]);
        }
        acc -= 0.5 * t;
    }
    acc
}

fn a_face_entry(disc: &Discretization, f: usize, i: usize, j: usize) -> f64 {
    let face = &disc.mesh.faces[f];
    let (l, r) = (face.left, face.right.unwrap());
    let fc = &disc.faces[f];
    let (bl, br) = (&fc.left, fc.right.as_ref().unwrap());
    let n = face.normal;
    let fj = flux_row(br, j, &disc.sigma[r], n);
    let fi = flux_row(bl, i, &disc.sigma[l], n);
    let w = &fc.rule.weights;
    let mut t = 0.0;
    for q in 0..w.len() {
        t += w[q] * (-fj[q] * bl.value(i, q) + br.value(j, q) * fi[q]);
    }
    0.5 * t
}

fn penalty_blocks(disc: &Discretization, f: usize, nl: usize, nr: usize, eta: f64) -> FacePenalty {
    let fc = &disc.faces[f];
    let (bl, br) = (&fc.left, fc.right.as_ref().unwrap());
    let w = &fc.rule.weights;
    let ll = DMatrix::from_fn(nl, nl, |i, j| eta * dot3(bl.row(i), bl.row(j), w));
    let rr = DMatrix::from_fn(nr, nr, |i, j| eta * dot3(br.row(i), br.row(j), w));
    let lr = DMatrix::from_fn(nl, nr, |i, j| -eta * dot3(bl.row(i), br.row(j), w));
    FacePenalty { eta, ll, lr, rr }
}

/// Fills entries (i, j) of `m` with `i >= r0 || j >= c0`.
fn fill_outside<F: FnMut(usize, usize) -> f64>(m: &mut DMatrix<f64>, r0: usize, c0: usize, mut f: F) {
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if i >= r0 || j >= c0 {
                m[(i, j)] = f(i, j);
            }
        }
    }
}

/// Resizes keeping the leading block; new entries are zero.
fn resized(m: &DMatrix<f64>, r: usize, c: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(r, c);
    let (rr, cc) = (r.min(m.nrows()), c.min(m.ncols()));
    out.view_mut((0, 0), (rr, cc)).copy_from(&m.view((0, 0), (rr, cc)));
    out
}

fn mass_block(disc: &Discretization, k: usize, n: usize, old: Option<&DMatrix<f64>>) -> DMatrix<f64> {
    let b = &disc.elem_vals[k];
    let w = &disc.elem_rules[k].weights;
    let n0 = old.map_or(0, |m| m.nrows().min(n));
    let mut m = match old {
        Some(o) => resized(o, n, n),
        None => DMatrix::zeros(n, n),
    };
    fill_outside(&mut m, n0, n0, |i, j| mass_entry(b, w, i, j));
    m
}

fn a_diag_block(disc: &Discretization, k: usize, p: usize, old: Option<&DMatrix<f64>>) -> DMatrix<f64> {
    let n = crate::basis::local_dim(p);
    let n0 = old.map_or(0, |m| m.nrows().min(n));
    let mut m = match old {
        Some(o) => resized(o, n, n),
        None => DMatrix::zeros(n, n),
    };
    if n0 < n {
        let vol = disc.volume_gradients(k, p);
        fill_outside(&mut m, n0, n0, |i, j| a_diag_entry(disc, k, &vol, i, j));
    }
    m
}

fn a_face_block(disc: &Discretization, f: usize, nl: usize, nr: usize, old: Option<&DMatrix<f64>>) -> DMatrix<f64> {
    let (r0, c0) = old.map_or((0, 0), |m| (m.nrows().min(nl), m.ncols().min(nr)));
    let mut m = match old {
        Some(o) => resized(o, nl, nr),
        None => DMatrix::zeros(nl, nr),
    };
    fill_outside(&mut m, r0, c0, |i, j| a_face_entry(disc, f, i, j));
    m
}

pub fn assemble_mass(disc: &Discretization, dofmap: &DofMap) -> Vec<DMatrix<f64>> {
    (0..disc.num_elements()).map(|k| mass_block(disc, k, dofmap.size(k), None)).collect()
}

/// Returns Ã (diagonal and face blocks) and S (per-face penalty blocks).
#[allow(clippy::type_complexity)]
pub fn assemble_stiffness(
    disc: &Discretization,
    dofmap: &DofMap,
) -> (Vec<DMatrix<f64>>, Vec<Option<DMatrix<f64>>>, Vec<Option<FacePenalty>>) {
    let degrees = dofmap.degrees();
    let a_diag = (0..disc.num_elements()).map(|k| a_diag_block(disc, k, degrees.get(k), None)).collect();
    let mut a_face = Vec::with_capacity(disc.mesh.faces.len());
    let mut s_face = Vec::with_capacity(disc.mesh.faces.len());
    for (f, face) in disc.mesh.faces.iter().enumerate() {
        match face.right {
            Some(r) => {
                let (nl, nr) = (dofmap.size(face.left), dofmap.size(r));
                a_face.push(Some(a_face_block(disc, f, nl, nr, None)));
                s_face.push(Some(penalty_blocks(disc, f, nl, nr, disc.penalty(f, degrees))));
            }
            None => {
                a_face.push(None);
                s_face.push(None);
            }
        }
    }
    (a_diag, a_face, s_face)
}

pub fn assemble_operators(disc: &Discretization, degrees: &DegreeField) -> Operators {
    let dofmap = build_dof_map(degrees);
    let mass = assemble_mass(disc, &dofmap);
    let (a_diag, a_face, s_face) = assemble_stiffness(disc, &dofmap);
    Operators { dofmap, mass, a_diag, a_face, s_face }
}

/// Moves the operators to a new degree field: blocks of unchanged elements are
/// reused, blocks of changed ones truncated or extended, and S is rebuilt on
/// every face touching a changed element.
pub fn update_operators(
    disc: &Discretization,
    ops: &Operators,
    new: &DegreeField,
) -> Result<Operators, SolverError> {
    let old = ops.dofmap.degrees();
    if old.len() != new.len() || new.len() != disc.num_elements() {
        return Err(SolverError::LayoutMismatch { expected: old.len(), found: new.len() });
    }
    let dofmap = build_dof_map(new);
    let changed: Vec<bool> = (0..new.len()).map(|k| old.get(k) != new.get(k)).collect();
    let mut mass = ops.mass.clone();
    let mut a_diag = ops.a_diag.clone();
    for k in (0..new.len()).filter(|&k| changed[k]) {
        mass[k] = mass_block(disc, k, dofmap.size(k), Some(&ops.mass[k]));
        a_diag[k] = a_diag_block(disc, k, new.get(k), Some(&ops.a_diag[k]));
    }
    let mut a_face = ops.a_face.clone();
    let mut s_face = ops.s_face.clone();
    for (f, face) in disc.mesh.faces.iter().enumerate() {
        let Some(r) = face.right else { continue };
        if !(changed[face.left] || changed[r]) {
            continue;
        }
        let (nl, nr) = (dofmap.size(face.left), dofmap.size(r));
        a_face[f] = Some(a_face_block(disc, f, nl, nr, ops.a_face[f].as_ref()));
        s_face[f] = Some(penalty_blocks(disc, f, nl, nr, disc.penalty(f, new)));
    }
    Ok(Operators { dofmap, mass, a_diag, a_face, s_face })
}

impl Operators {
    /// Diagonal block of A = Ã + S for element `k`.
    pub fn stiffness_diag(&self, disc: &Discretization, k: usize) -> DMatrix<f64> {
        let mut d = self.a_diag[k].clone();
        for &f in &disc.mesh.cell_faces[k] {
            if let Some(s) = &self.s_face[f] {
                if disc.mesh.faces[f].left == k {
                    d += &s.ll;
                } else {
                    d += &s.rr;
                }
            }
        }
        d
    }

    /// Coupling block of A on face `f` (rows left, cols right).
    pub fn stiffness_face(&self, f: usize) -> Option<DMatrix<f64>> {
        match (&self.a_face[f], &self.s_face[f]) {
            (Some(a), Some(s)) => Some(a + &s.lr),
            _ => None,
        }
    }

    /// y = A x.
    pub fn apply_stiffness(&self, disc: &Discretization, x: &DVector<f64>) -> DVector<f64> {
        let dm = &self.dofmap;
        let mut y = DVector::zeros(dm.total());
        for k in 0..dm.num_elements() {
            let r = dm.range(k);
            let d = self.stiffness_diag(disc, k);
            let v = &d * x.rows(r.start, r.len());
            y.rows_mut(r.start, r.len()).add_assign(&v);
        }
        for (f, face) in disc.mesh.faces.iter().enumerate() {
            let (Some(r), Some(b)) = (face.right, self.stiffness_face(f)) else { continue };
            let (rl, rr) = (dm.range(face.left), dm.range(r));
            let yl = &b * x.rows(rr.start, rr.len());
            let yr = b.transpose() * x.rows(rl.start, rl.len());
            y.rows_mut(rl.start, rl.len()).add_assign(&yl);
            y.rows_mut(rr.start, rr.len()).add_assign(&yr);
        }
        y
    }

    /// y = M x.
    pub fn apply_mass(&self, x: &DVector<f64>) -> DVector<f64> {
        let dm = &self.dofmap;
        let mut y = DVector::zeros(dm.total());
        for k in 0..dm.num_elements() {
            let r = dm.range(k);
            let v = &self.mass[k] * x.rows(r.start, r.len());
            y.rows_mut(r.start, r.len()).copy_from(&v);
        }
        y
    }

    pub fn dense_mass(&self) -> DMatrix<f64> {
        let dm = &self.dofmap;
        let mut m = DMatrix::zeros(dm.total(), dm.total());
        for k in 0..dm.num_elements() {
            let r = dm.range(k);
            m.view_mut((r.start, r.start), (r.len(), r.len())).copy_from(&self.mass[k]);
        }
        m
    }

    /// Dense A, or only its penalty part S when `penalty_only`.
    pub fn dense_stiffness(&self, disc: &Discretization, penalty_only: bool) -> DMatrix<f64> {
        let dm = &self.dofmap;
        let mut m = DMatrix::zeros(dm.total(), dm.total());
        for k in 0..dm.num_elements() {
            let r = dm.range(k);
            if !penalty_only {
                let mut v = m.view_mut((r.start, r.start), (r.len(), r.len()));
                v += &self.a_diag[k];
            }
        }
        for (f, face) in disc.mesh.faces.iter().enumerate() {
            let Some(rc) = face.right else { continue };
            let (rl, rr) = (dm.range(face.left), dm.range(rc));
            let s = self.s_face[f].as_ref().unwrap();
            let mut blk = s.lr.clone();
            if !penalty_only {
                blk += self.a_face[f].as_ref().unwrap();
            }
            m.view_mut((rl.start, rr.start), (rl.len(), rr.len())).add_assign(&blk);
            m.view_mut((rr.start, rl.start), (rr.len(), rl.len())).add_assign(&blk.transpose());
            m.view_mut((rl.start, rl.start), (rl.len(), rl.len())).add_assign(&s.ll);
            m.view_mut((rr.start, rr.start), (rr.len(), rr.len())).add_assign(&s.rr);
        }
        m
    }

    /// Coefficients of the constant function `c` in this layout.
    pub fn constant_vector(&self, disc: &Discretization, c: f64) -> DVector<f64> {
        let dm = &self.dofmap;
        let mut v = DVector::zeros(dm.total());
        for k in 0..dm.num_elements() {
            v[dm.offset(k)] = c * disc.mesh.geometry(k).bbox.area().sqrt();
        }
        v
    }
}

/// Coordinate-format text dump (`row col value` per nonzero) of a dense matrix.
pub fn to_coordinate_text(m: &DMatrix<f64>) -> String {
    use std::fmt::Write as _;
    let mut s = String::new();
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if m[(i, j)] != 0.0 {
                let _ = writeln!(s, "{i} {j} {:.17e}", m[(i, j)]);
            }
        }
    }
    s
}

/// Load vectors of one time level.
#[derive(Debug, Clone, PartialEq)]
pub struct Loads {
    /// (I_ext, φ_j); `None` when no forcing is active.
    pub forcing: Option<DVector<f64>>,
    /// (f(u_h, y_h), φ_j).
    pub ionic: DVector<f64>,
    /// (m_l(u_h, y_h), φ_j) for each ionic variable, as dy/dt.
    pub state: Vec<DVector<f64>>,
}

/// Evaluates the field with local coefficients `c` at the volume points of `k`.
pub fn eval_at_volume(disc: &Discretization, k: usize, c: &[f64], out: &mut [f64]) {
    disc.elem_vals[k].reconstruct(c, out);
}

/// Adds (g, φ_i) for i < n to `out`.
fn integrate_against(b: &BasisValues, w: &[f64], g: &[f64], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        *o = dot3(b.row(i), g, w);
    }
}

/// Ionic load and state-rate loads of one element.
#[allow(clippy::too_many_arguments)]
pub fn element_ionic_loads(
    disc: &Discretization,
    dofmap: &DofMap,
    k: usize,
    u: &DVector<f64>,
    y: &[DVector<f64>],
    model: &IonicModel,
    ionic_out: &mut [f64],
    state_out: &mut [&mut [f64]],
) -> Result<(), SolverError> {
    let r = dofmap.range(k);
    let b = &disc.elem_vals[k];
    let w = &disc.elem_rules[k].weights;
    let np = b.n_points;
    let mut uq = vec![0.0; np];
    b.reconstruct(&u.as_slice()[r.clone()], &mut uq);
    let ns = model.n_state();
    let mut yq = vec![vec![0.0; np]; ns];
    for (l, yl) in y.iter().enumerate().take(ns) {
        b.reconstruct(&yl.as_slice()[r.clone()], &mut yq[l]);
    }
    let mut fq = vec![0.0; np];
    let mut mq = vec![vec![0.0; np]; ns];
    let mut yp = [0.0; 6];
    let mut rate = [0.0; 6];
    for q in 0..np {
        for l in 0..ns {
            yp[l] = yq[l][q];
        }
        fq[q] = model.reaction(uq[q], &yp[..ns])?;
        if ns > 0 {
            model.state_rate(uq[q], &yp[..ns], &mut rate[..ns])?;
            for l in 0..ns {
                mq[l][q] = rate[l];
            }
        }
    }
    integrate_against(b, w, &fq, ionic_out);
    for l in 0..ns {
        integrate_against(b, w, &mq[l], state_out[l]);
    }
    Ok(())
}

/// (g(x), φ_i) on element `k` for a point function.
pub fn element_source_load<F: Fn(Vec2) -> f64>(disc: &Discretization, k: usize, n: usize, g: F) -> Vec<f64> {
    let rule = &disc.elem_rules[k];
    let gq: Vec<f64> = rule.points.iter().map(|&x| g(x)).collect();
    let mut out = vec![0.0; n];
    integrate_against(&disc.elem_vals[k], &rule.weights, &gq, &mut out);
    out
}

/// Source load vector (I_ext(·, t), φ_j) over all elements.
pub fn assemble_source<F: Fn(Vec2) -> f64>(disc: &Discretization, dofmap: &DofMap, g: F) -> DVector<f64> {
    let mut v = DVector::zeros(dofmap.total());
    for k in 0..dofmap.num_elements() {
        let r = dofmap.range(k);
        let loc = element_source_load(disc, k, r.len(), &g);
        v.as_mut_slice()[r].copy_from_slice(&loc);
    }
    v
}

/// Ionic load I and state loads G_l for the whole mesh.
pub fn assemble_ionic(
    disc: &Discretization,
    dofmap: &DofMap,
    u: &DVector<f64>,
    y: &[DVector<f64>],
    model: &IonicModel,
) -> Result<(DVector<f64>, Vec<DVector<f64>>), SolverError> {
    dofmap.check_len(u.len())?;
    for yl in y {
        dofmap.check_len(yl.len())?;
    }
    let n = dofmap.total();
    let ns = model.n_state();
    let mut ionic = DVector::zeros(n);
    let mut state: Vec<DVector<f64>> = vec![DVector::zeros(n); ns];
    for k in 0..dofmap.num_elements() {
        let r = dofmap.range(k);
        let io = &mut ionic.as_mut_slice()[r.clone()];
        let mut so: Vec<&mut [f64]> = state.iter_mut().map(|s| &mut s.as_mut_slice()[r.clone()]).collect();
        element_ionic_loads(disc, dofmap, k, u, y, model, io, &mut so)?;
    }
    Ok((ionic, state))
}

/// F, I and G_1..G_n at one time level.
pub fn assemble_loads<F: Fn(Vec2) -> f64>(
    disc: &Discretization,
    dofmap: &DofMap,
    u: &DVector<f64>,
    y: &[DVector<f64>],
    model: &IonicModel,
    forcing: Option<F>,
) -> Result<Loads, SolverError> {
    let (ionic, state) = assemble_ionic(disc, dofmap, u, y, model)?;
    let forcing = forcing.map(|g| assemble_source(disc, dofmap, g));
    Ok(Loads { forcing, ionic, state })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{local_dim, project_l2};
    use crate::ionic::CubicParams;
    use crate::meshgen::structured_quads;

    fn grid(nx: usize, ny: usize) -> Mesh {
        structured_quads(Vec2::new(0.0, 0.0), Vec2::new(1.0, 1.0), nx, ny)
    }

    #[test]
    fn penalty_examples() {
        assert!((penalty_on_face(2, 2, 0.1, 0.1, 1.0, 1.0, 10.0) - 400.0).abs() < 1e-10);
        assert!((penalty_on_face(2, 4, 0.1, 0.3, 1.0, 1.0, 10.0) - 2000.0 / 3.0).abs() < 1e-9);
        let a = penalty_on_face(3, 1, 0.2, 0.1, 0.5, 0.7, 10.0);
        let b = penalty_on_face(3, 1, 0.2, 0.1, 0.5, 0.7, 20.0);
        assert!((b - 2.0 * a).abs() < 1e-12 * b);
    }

    #[test]
    fn fiber_tensor_eigenvalues() {
        let s = fiber_tensor(0.62, 0.17, Vec2::new(1.0, 1.0));
        assert!((sigma_magnitude(&s) - 0.62).abs() < 1e-14);
        assert!((sigma_min_eigenvalue(&s) - 0.17).abs() < 1e-14);
    }

    #[test]
    fn mass_is_identity_on_boxes_and_block_diagonal() {
        let mesh = grid(2, 2);
        let disc = Discretization::new(mesh, vec![isotropic(1.0); 4], 3, 10.0);
        let ops = assemble_operators(&disc, &DegreeField::uniform(4, 3));
        let m = ops.dense_mass();
        let err = (&m - DMatrix::identity(m.nrows(), m.ncols())).amax();
        assert!(err < 1e-12);
    }

    #[test]
    fn constants_in_kernel_and_symmetric() {
        let mesh = grid(3, 2);
        let n = mesh.num_cells();
        let disc = Discretization::new(mesh, vec![fiber_tensor(0.6, 0.2, Vec2::new(1.0, 0.3)); n], 3, 10.0);
        let ops = assemble_operators(&disc, &DegreeField::new(vec![1, 2, 3, 3, 2, 1]).unwrap());
        let a = ops.dense_stiffness(&disc, false);
        assert!((&a - a.transpose()).amax() <= 1e-12 * a.amax());
        let one = ops.constant_vector(&disc, 1.0);
        let r = ops.apply_stiffness(&disc, &one);
        assert!(r.amax() <= 1e-10 * a.amax());
        let r2 = &a * &one;
        assert!((r2 - r).amax() <= 1e-12 * a.amax());
    }

    #[test]
    fn update_matches_fresh_assembly() {
        let mesh = grid(3, 3);
        let disc = Discretization::new(mesh, vec![isotropic(0.3); 9], 4, 10.0);
        let d0 = DegreeField::new(vec![1, 2, 3, 4, 1, 2, 3, 4, 2]).unwrap();
        let d1 = DegreeField::new(vec![2, 2, 2, 4, 1, 3, 4, 3, 1]).unwrap();
        let ops0 = assemble_operators(&disc, &d0);
        let up = update_operators(&disc, &ops0, &d1).unwrap();
        let fresh = assemble_operators(&disc, &d1);
        assert_eq!(up, fresh);
        let back = update_operators(&disc, &up, &d0).unwrap();
        assert_eq!(back, ops0);
    }

    #[test]
    fn patch_test_linear_function() {
        // A U equals the boundary flux load ∫_∂Ω (Σ∇u·n) φ_i for a global linear u
        let mesh = grid(3, 3);
        let s = Mat2::new(0.7, 0.1, 0.1, 0.4);
        let disc = Discretization::new(mesh, vec![s; 9], 2, 10.0);
        let deg = DegreeField::uniform(9, 2);
        let ops = assemble_operators(&disc, &deg);
        let g = Vec2::new(1.5, -0.5);
        let lin = |x: Vec2| 2.0 + g.dot(&x);
        let mut u = DVector::zeros(ops.dofmap.total());
        for k in 0..9 {
            let c = project_l2(lin, disc.mesh.geometry(k), 2, None).unwrap();
            u.rows_mut(ops.dofmap.offset(k), local_dim(2)).copy_from(&c);
        }
        let au = ops.apply_stiffness(&disc, &u);
        let mut flux = DVector::zeros(ops.dofmap.total());
        for (f, face) in disc.mesh.faces.iter().enumerate() {
            if face.is_interior() {
                continue;
            }
            let k = face.left;
            let b = &disc.faces[f].left;
            let sn = (s * g).dot(&face.normal);
            for i in 0..local_dim(2) {
                let v: f64 = (0..b.n_points).map(|q| disc.faces[f].rule.weights[q] * sn * b.value(i, q)).sum();
                flux[ops.dofmap.offset(k) + i] += v;
            }
        }
        assert!((au - flux).amax() < 1e-10);
    }

    #[test]
    fn cubic_load_at_rest_vanishes() {
        let mesh = grid(2, 1);
        let disc = Discretization::new(mesh, vec![isotropic(1.0); 2], 2, 10.0);
        let ops = assemble_operators(&disc, &DegreeField::uniform(2, 2));
        let u = ops.constant_vector(&disc, -85.0);
        let model = IonicModel::Cubic(CubicParams::default());
        let l = assemble_loads(&disc, &ops.dofmap, &u, &[], &model, None::<fn(Vec2) -> f64>).unwrap();
        assert!(l.ionic.amax() < 1e-12);
        assert!(l.forcing.is_none());
        let z = assemble_source(&disc, &ops.dofmap, |_| 0.0);
        assert_eq!(z.amax(), 0.0);
    }
}
