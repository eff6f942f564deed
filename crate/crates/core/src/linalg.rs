//! Symmetric block-sparse systems and a block-Jacobi preconditioned conjugate
//! gradient solver.

use std::ops::AddAssign;

use nalgebra::{DMatrix, DVector};

use crate::error::SolverError;

/// Symmetric matrix with dense diagonal blocks and upper off-diagonal blocks;
/// each off-diagonal block (i, j, B) also represents its transpose at (j, i).
#[derive(Debug, Clone)]
pub struct BlockSystem {
    pub offsets: Vec<usize>,
    pub diag: Vec<DMatrix<f64>>,
    pub off: Vec<(usize, usize, DMatrix<f64>)>,
}

impl BlockSystem {
    pub fn new(sizes: &[usize]) -> Self {
        let mut offsets = vec![0];
        for s in sizes {
            offsets.push(offsets.last().unwrap() + s);
        }
        Self { offsets, diag: sizes.iter().map(|&s| DMatrix::zeros(s, s)).collect(), off: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    fn range(&self, k: usize) -> (usize, usize) {
        (self.offsets[k], self.offsets[k + 1] - self.offsets[k])
    }

    pub fn matvec(&self, x: &DVector<f64>, y: &mut DVector<f64>) {
        for (k, d) in self.diag.iter().enumerate() {
            let (o, n) = self.range(k);
            let mut yk = y.rows_mut(o, n);
            yk.gemv(1.0, d, &x.rows(o, n), 0.0);
        }
        for (i, j, b) in &self.off {
            let (oi, ni) = self.range(*i);
            let (oj, nj) = self.range(*j);
            y.rows_mut(oi, ni).gemv(1.0, b, &x.rows(oj, nj), 1.0);
            y.rows_mut(oj, nj).gemv_tr(1.0, b, &x.rows(oi, ni), 1.0);
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        for (k, d) in self.diag.iter().enumerate() {
            let (o, s) = self.range(k);
            m.view_mut((o, o), (s, s)).copy_from(d);
        }
        for (i, j, b) in &self.off {
            let (oi, ni) = self.range(*i);
            let (oj, nj) = self.range(*j);
            m.view_mut((oi, oj), (ni, nj)).add_assign(b);
            m.view_mut((oj, oi), (nj, ni)).add_assign(&b.transpose());
        }
        m
    }
}

/// Block-Jacobi preconditioner holding the inverses of the diagonal blocks
/// (computed through Cholesky, so a non-SPD block is reported).
#[derive(Debug, Clone)]
pub struct BlockJacobi {
    offsets: Vec<usize>,
    inverses: Vec<DMatrix<f64>>,
}

impl BlockJacobi {
    pub fn new(sys: &BlockSystem) -> Result<Self, SolverError> {
        let inverses = sys
            .diag
            .iter()
            .enumerate()
            .map(|(k, d)| {
                d.clone().cholesky().map(|c| c.inverse()).ok_or(SolverError::SingularLocalMatrix { element: k })
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { offsets: sys.offsets.clone(), inverses })
    }

    pub fn apply(&self, r: &DVector<f64>, z: &mut DVector<f64>) {
        for (k, inv) in self.inverses.iter().enumerate() {
            let (o, n) = (self.offsets[k], self.offsets[k + 1] - self.offsets[k]);
            z.rows_mut(o, n).gemv(1.0, inv, &r.rows(o, n), 0.0);
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SolveStats {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Preconditioned CG for an SPD block system; `x` holds the initial guess and
/// receives the solution.
pub fn pcg(
    sys: &BlockSystem,
    pre: &BlockJacobi,
    b: &DVector<f64>,
    x: &mut DVector<f64>,
    rel_tol: f64,
    max_iter: usize,
) -> Result<SolveStats, SolverError> {
    let n = sys.dim();
    if b.len() != n || x.len() != n {
        return Err(SolverError::LayoutMismatch { expected: n, found: b.len().min(x.len()) });
    }
    let bnorm = b.norm();
    if bnorm == 0.0 {
        x.fill(0.0);
        return Ok(SolveStats { iterations: 0, relative_residual: 0.0 });
    }
    let mut ax = DVector::zeros(n);
    sys.matvec(x, &mut ax);
    let mut r = b - &ax;
    let mut z = DVector::zeros(n);
    pre.apply(&r, &mut z);
    let mut p = z.clone();
    let mut rz = r.dot(&z);
    let mut ap = DVector::zeros(n);
    for it in 0..=max_iter {
        let res = r.norm() / bnorm;
        if res <= rel_tol {
            return Ok(SolveStats { iterations: it, relative_residual: res });
        }
        if it == max_iter || !res.is_finite() {
            return Err(SolverError::NoConvergence { iterations: it, residual: res });
        }
        sys.matvec(&p, &mut ap);
        let pap = p.dot(&ap);
        if !(pap > 0.0) {
            return Err(SolverError::NoConvergence { iterations: it, residual: res });
        }
        let alpha = rz / pap;
        x.axpy(alpha, &p, 1.0);
        r.axpy(-alpha, &ap, 1.0);
        pre.apply(&r, &mut z);
        let rz_new = r.dot(&z);
        let beta = rz_new / rz;
        rz = rz_new;
        p.axpy(1.0, &z, beta);
    }
    unreachable!()
}

/// Solves an SPD block system from a zero initial guess to relative residual 1e-12.
pub fn solve_linear(sys: &BlockSystem, b: &DVector<f64>) -> Result<DVector<f64>, SolverError> {
    let pre = BlockJacobi::new(sys)?;
    let mut x = DVector::zeros(b.len());
    pcg(sys, &pre, b, &mut x, 1e-12, 10 * b.len().max(100))?;
    Ok(x)
}
