//! Residual-based a-posteriori error indicator
//!
//! ```text
//! τ_K² = τ_r² + τ_n² + τ_j² + τ_t² + O²
//! τ_r = ‖h_K R‖_K,   R = χ f(u, y) − ∇·(Σ∇u) + χ C (u^k − u^{k−1})/Δt − Π I_ext
//! τ_n² = Σ_F h_K ‖⟦Σ∇u·n⟧‖²_F     (Neumann faces contribute h_K ‖Σ∇u·n‖²)
//! τ_j² = Σ_F η_F ‖⟦u⟧‖²_F
//! τ_t² = Σ_F h_K ‖⟦Σ∇u·t⟧‖²_F
//! O    = ‖h_K (Π I_ext − I_ext)‖_K
//! ```
//!
//! Jump sums for τ_j and τ_t run over interior faces of K only.

use nalgebra::DVector;

use crate::assembly::{Discretization, ModelCoefficients, Operators};
use crate::error::SolverError;
use crate::ionic::IonicModel;
use crate::Vec2;

/// Indicator used to drive degree selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MarkingIndicator {
    #[default]
    Full,
    JumpOnly,
    ResidualOnly,
}

/// Indicator components of one element: residual, normal-flux jump, value jump,
/// tangential-flux jump and data oscillation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Components {
    pub r: f64,
    pub n: f64,
    pub j: f64,
    pub t: f64,
    pub osc: f64,
}

impl Components {
    pub fn combine(&self) -> f64 {
        combine(&[self.r, self.n, self.j, self.t, self.osc])
    }

    pub fn marking_value(&self, m: MarkingIndicator) -> f64 {
        match m {
            MarkingIndicator::Full => self.combine(),
            MarkingIndicator::JumpOnly => self.j,
            MarkingIndicator::ResidualOnly => self.r,
        }
    }
}

/// Root-sum-square of indicator components.
pub fn combine(c: &[f64]) -> f64 {
    c.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Everything needed to evaluate the indicator at time level k.
pub struct IndicatorInputs<'a> {
    pub disc: &'a Discretization,
    pub ops: &'a Operators,
    pub model: &'a IonicModel,
    pub coeffs: ModelCoefficients,
    pub u: &'a DVector<f64>,
    pub u_prev: &'a DVector<f64>,
    pub y: &'a [DVector<f64>],
    pub dt: f64,
    /// I_ext(·, t^k), if any.
    pub source: Option<&'a dyn Fn(Vec2) -> f64>,
}

impl IndicatorInputs<'_> {
    fn check(&self) -> Result<(), SolverError> {
        let dm = &self.ops.dofmap;
        dm.check_len(self.u.len())?;
        dm.check_len(self.u_prev.len())?;
        for y in self.y {
            dm.check_len(y.len())?;
        }
        Ok(())
    }
}

/// Π I_ext at the volume points of `k` and the raw values.
fn projected_source(inp: &IndicatorInputs, k: usize, n: usize) -> Result<(Vec<f64>, Vec<f64>), SolverError> {
    let disc = inp.disc;
    let rule = &disc.elem_rules[k];
    let np = rule.len();
    let Some(src) = inp.source else {
        return Ok((vec![0.0; np], vec![0.0; np]));
    };
    let raw: Vec<f64> = rule.points.iter().map(|&x| src(x)).collect();
    let b = &disc.elem_vals[k];
    let mass = inp.ops.mass[k].clone();
    let rhs = DVector::from_fn(n, |i, _| {
        b.row(i).iter().zip(&raw).zip(&rule.weights).map(|((a, c), w)| a * c * w).sum::<f64>()
    });
    let coef = mass.cholesky().ok_or(SolverError::SingularLocalMatrix { element: k })?.solve(&rhs);
    let mut proj = vec![0.0; np];
    b.reconstruct(coef.as_slice(), &mut proj);
    Ok((proj, raw))
}

/// τ_r and O on element `k`.
pub fn residual_and_oscillation(inp: &IndicatorInputs, k: usize) -> Result<(f64, f64), SolverError> {
    let disc = inp.disc;
    let dm = &inp.ops.dofmap;
    let r = dm.range(k);
    let p = dm.degree(k);
    let n = r.len();
    let h = disc.mesh.geometry(k).diameter;
    let w = &disc.elem_rules[k].weights;
    let np = w.len();
    let hb = disc.volume_hessians(k, p);
    let uk = &inp.u.as_slice()[r.clone()];
    let mut uq = vec![0.0; np];
    let mut upq = vec![0.0; np];
    hb.reconstruct(uk, &mut uq);
    hb.reconstruct(&inp.u_prev.as_slice()[r.clone()], &mut upq);
    let hess = hb.reconstruct_hessian(uk);
    let s = &disc.sigma[k];
    let ns = inp.model.n_state();
    let mut yq = vec![vec![0.0; np]; ns];
    for l in 0..ns {
        hb.reconstruct(&inp.y[l].as_slice()[r.clone()], &mut yq[l]);
    }
    let (proj, raw) = projected_source(inp, k, n)?;
    let (chi, cm) = (inp.coeffs.chi, inp.coeffs.cm);
    let mut res2 = 0.0;
    let mut osc2 = 0.0;
    let mut yp = [0.0; 6];
    for q in 0..np {
        for l in 0..ns {
            yp[l] = yq[l][q];
        }
        let f = inp.model.reaction(uq[q], &yp[..ns])?;
        let div = s[(0, 0)] * hess[q][0] + (s[(0, 1)] + s[(1, 0)]) * hess[q][1] + s[(1, 1)] * hess[q][2];
        let rq = chi * f - div + chi * cm * (uq[q] - upq[q]) / inp.dt - proj[q];
        res2 += w[q] * rq * rq;
        let o = proj[q] - raw[q];
        osc2 += w[q] * o * o;
    }
    Ok((h * res2.sqrt(), h * osc2.sqrt()))
}

/// (τ_n, τ_j, τ_t) on element `k`.
pub fn jump_components(inp: &IndicatorInputs, k: usize) -> (f64, f64, f64) {
    let disc = inp.disc;
    let dm = &inp.ops.dofmap;
    let h = disc.mesh.geometry(k).diameter;
    let (mut n2, mut j2, mut t2) = (0.0, 0.0, 0.0);
    let eval = |cell: usize, f: usize| {
        let b = disc.face_side(f, cell);
        let c = &inp.u.as_slice()[dm.range(cell)];
        let mut v = vec![0.0; b.n_points];
        b.reconstruct(c, &mut v);
        let g = b.reconstruct_grad(c);
        (v, g)
    };
    for &f in &disc.mesh.cell_faces[k] {
        let face = &disc.mesh.faces[f];
        let w = &disc.faces[f].rule.weights;
        let nk = face.normal_for(k);
        let tk = face.tangent;
        let sk = &disc.sigma[k];
        let (vk, gk) = eval(k, f);
        match face.neighbor_of(k) {
            None => {
                for q in 0..w.len() {
                    let fl = (sk * gk[q]).dot(&nk);
                    n2 += h * w[q] * fl * fl;
                }
            }
            Some(o) => {
                let so = &disc.sigma[o];
                let (vo, go) = eval(o, f);
                let eta = inp.ops.s_face[f].as_ref().map_or(0.0, |s| s.eta);
                for q in 0..w.len() {
                    let (fk, fo) = (sk * gk[q], so * go[q]);
                    let jn = fk.dot(&nk) - fo.dot(&nk);
                    let jt = (fk - fo).dot(&tk);
                    let ju = vk[q] - vo[q];
                    n2 += h * w[q] * jn * jn;
                    t2 += h * w[q] * jt * jt;
                    j2 += eta * w[q] * ju * ju;
                }
            }
        }
    }
    (n2.sqrt(), j2.sqrt(), t2.sqrt())
}

pub fn element_components(inp: &IndicatorInputs, k: usize) -> Result<Components, SolverError> {
    let (r, osc) = residual_and_oscillation(inp, k)?;
    let (n, j, t) = jump_components(inp, k);
    Ok(Components { r, n, j, t, osc })
}

/// τ_r per element.
pub fn residual_term(inp: &IndicatorInputs) -> Result<Vec<f64>, SolverError> {
    inp.check()?;
    (0..inp.disc.num_elements()).map(|k| residual_and_oscillation(inp, k).map(|v| v.0)).collect()
}

/// (τ_n, τ_j, τ_t) per element.
pub fn jump_terms(inp: &IndicatorInputs) -> Result<Vec<(f64, f64, f64)>, SolverError> {
    inp.check()?;
    Ok((0..inp.disc.num_elements()).map(|k| jump_components(inp, k)).collect())
}

/// O per element.
pub fn oscillation_term(inp: &IndicatorInputs) -> Result<Vec<f64>, SolverError> {
    inp.check()?;
    (0..inp.disc.num_elements()).map(|k| residual_and_oscillation(inp, k).map(|v| v.1)).collect()
}

/// Per-element indicator with staleness bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct IndicatorField {
    pub tau: Vec<f64>,
    pub components: Vec<Components>,
    /// Step at which each element was last refreshed.
    pub updated_at: Vec<Option<usize>>,
}

impl IndicatorField {
    pub fn new(n: usize) -> Self {
        Self { tau: vec![0.0; n], components: vec![Components::default(); n], updated_at: vec![None; n] }
    }

    /// Recomputes the listed elements; the others keep their previous values.
    pub fn refresh(&mut self, inp: &IndicatorInputs, elements: &[usize], step: usize) -> Result<(), SolverError> {
        inp.check()?;
        for &k in elements {
            let c = element_components(inp, k)?;
            self.components[k] = c;
            self.tau[k] = c.combine();
            self.updated_at[k] = Some(step);
        }
        Ok(())
    }

    pub fn marking_values(&self, m: MarkingIndicator) -> Vec<f64> {
        self.components.iter().map(|c| c.marking_value(m)).collect()
    }
}
