//! Crank–Nicolson advance of the potential with second-order extrapolation of
//! the ionic current, and forward-Euler update of the ionic state:
//!
//! ```text
//! (χC M + Δt/2 A) U^{k+1} = (χC M − Δt/2 A) U^k − χ Δt I^{k+1} + Δt F^{k+1}
//! I^{k+1} = 3/2 I^k − 1/2 I^{k−1}
//! Y^{k+1} = Y^k + Δt M⁻¹ G^k        (G^k = (dy/dt(u_h^k, y_h^k), φ))
//! ```
//!
//! The first step uses I^{−1} := I^0 and is therefore only first order in the
//! reaction term.
//!
//! A fresh stepper (start of the run, or after a degree change) takes its
//! first step with TR-BDF2 (γ = 2 − √2, both stages with χC M + (γ/2)Δt A),
//! which is second order and L-stable. Crank–Nicolson maps stiff modes to
//! amplification ≈ −1, so the modes excited by projecting steep data or by
//! truncating coefficients would otherwise ring for many steps.

use nalgebra::{Cholesky, DVector, Dyn};

use crate::assembly::{element_ionic_loads, assemble_ionic, assemble_source, Discretization, ModelCoefficients, Operators};
use crate::basis::DofMap;
use crate::error::SolverError;
use crate::ionic::IonicModel;
use crate::linalg::{pcg, BlockJacobi, BlockSystem, SolveStats};
use crate::Vec2;

/// Relative residual target of the Crank–Nicolson solves.
pub const SOLVE_TOL: f64 = 1e-12;

/// Damped (TR-BDF2) steps taken by a fresh stepper.
pub const DAMPED_STEPS: usize = 1;

const GAMMA: f64 = 2.0 - std::f64::consts::SQRT_2;

pub fn extrapolate_ionic(ik: &DVector<f64>, ikm1: &DVector<f64>) -> Result<DVector<f64>, SolverError> {
    if ik.len() != ikm1.len() {
        return Err(SolverError::LayoutMismatch { expected: ik.len(), found: ikm1.len() });
    }
    Ok(ik * 1.5 - ikm1 * 0.5)
}

/// Uniform time grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub dt: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(dt: f64, t_end: f64) -> Result<Self, SolverError> {
        if !(dt > 0.0) || !(t_end >= 0.0) {
            return Err(SolverError::InvalidArgument("dt must be positive and T non-negative".into()));
        }
        let steps = (t_end / dt).round() as usize;
        Ok(Self { dt, steps })
    }

    pub fn t_end(&self) -> f64 {
        self.dt * self.steps as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        self.dt * k as f64
    }
}

/// Coefficient vectors of the current and previous time level.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub u: DVector<f64>,
    pub y: Vec<DVector<f64>>,
    pub u_prev: DVector<f64>,
    pub y_prev: Vec<DVector<f64>>,
    /// Ionic load of the previous level, `None` before the first step.
    pub i_prev: Option<DVector<f64>>,
    pub step: usize,
}

impl SolverState {
    pub fn new(u: DVector<f64>, y: Vec<DVector<f64>>) -> Self {
        Self { u_prev: u.clone(), y_prev: y.clone(), u, y, i_prev: None, step: 0 }
    }

    pub fn check(&self, dm: &DofMap) -> Result<(), SolverError> {
        dm.check_len(self.u.len())?;
        dm.check_len(self.u_prev.len())?;
        for v in self.y.iter().chain(&self.y_prev) {
            dm.check_len(v.len())?;
        }
        if let Some(i) = &self.i_prev {
            dm.check_len(i.len())?;
        }
        Ok(())
    }
}

/// Cached Crank–Nicolson system and mass factorisations for one operator set.
pub struct CnStepper {
    pub coeffs: ModelCoefficients,
    pub dt: f64,
    system: BlockSystem,
    explicit: BlockSystem,
    pre: BlockJacobi,
    mass_chol: Vec<Cholesky<f64, Dyn>>,
    pub last_solve: Option<SolveStats>,
    /// Remaining damped steps.
    pub smoothing: usize,
}

impl CnStepper {
    pub fn new(disc: &Discretization, ops: &Operators, coeffs: ModelCoefficients, dt: f64) -> Result<Self, SolverError> {
        let (system, explicit) = split_systems(disc, ops, coeffs, 0.5 * dt);
        let pre = BlockJacobi::new(&system)?;
        let mass_chol = ops
            .mass
            .iter()
            .enumerate()
            .map(|(k, m)| m.clone().cholesky().ok_or(SolverError::SingularLocalMatrix { element: k }))
            .collect::<Result<_, _>>()?;
        Ok(Self { coeffs, dt, system, explicit, pre, mass_chol, last_solve: None, smoothing: DAMPED_STEPS })
    }

    /// Solves M x = b blockwise.
    pub fn mass_solve(&self, dm: &DofMap, b: &DVector<f64>) -> DVector<f64> {
        let mut x = b.clone();
        for (k, c) in self.mass_chol.iter().enumerate() {
            let r = dm.range(k);
            let mut v = x.rows(r.start, r.len()).clone_owned();
            c.solve_mut(&mut v);
            x.rows_mut(r.start, r.len()).copy_from(&v);
        }
        x
    }

    /// Advances `state` from t^k to t^{k+1} = t^k + Δt. `forcing` is evaluated at t^{k+1}
    /// (and at t^k + Δt/2 during damped steps).
    pub fn step<F: Fn(Vec2, f64) -> f64>(
        &mut self,
        disc: &Discretization,
        ops: &Operators,
        model: &IonicModel,
        state: &mut SolverState,
        t_k: f64,
        forcing: Option<&F>,
    ) -> Result<(), SolverError> {
        let dm = &ops.dofmap;
        state.check(dm)?;
        let (i_k, g_k) = assemble_ionic(disc, dm, &state.u, &state.y, model)?;
        let step = state.step + 1;
        let (u_new, y_new) = if self.smoothing > 0 {
            self.smoothing -= 1;
            let u_new = self.tr_bdf2(disc, ops, model, state, &i_k, t_k, forcing)?;
            let y_new = state.y.iter().zip(&g_k).map(|(yl, gl)| yl + self.mass_solve(dm, gl) * self.dt).collect();
            (u_new, y_new)
        } else {
            let i_next = match &state.i_prev {
                Some(ip) => extrapolate_ionic(&i_k, ip)?,
                None => i_k.clone(),
            };
            let dt = self.dt;
            let mut rhs = DVector::zeros(dm.total());
            self.explicit.matvec(&state.u, &mut rhs);
            rhs.axpy(-self.coeffs.chi * dt, &i_next, 1.0);
            if let Some(f) = forcing {
                let t1 = t_k + dt;
                let fv = assemble_source(disc, dm, |x| f(x, t1));
                rhs.axpy(dt, &fv, 1.0);
            }
            // linear extrapolation in time as initial guess
            let mut u_new = if state.i_prev.is_some() { &state.u * 2.0 - &state.u_prev } else { state.u.clone() };
            self.last_solve = Some(pcg(&self.system, &self.pre, &rhs, &mut u_new, SOLVE_TOL, 2000)?);
            let mut y_new = Vec::with_capacity(state.y.len());
            for (yl, gl) in state.y.iter().zip(&g_k) {
                y_new.push(yl + self.mass_solve(dm, gl) * dt);
            }
            (u_new, y_new)
        };
        if u_new.iter().any(|v| !v.is_finite()) {
            return Err(SolverError::NonFinite { step });
        }
        state.u_prev = std::mem::replace(&mut state.u, u_new);
        state.y_prev = std::mem::replace(&mut state.y, y_new);
        state.i_prev = Some(i_k);
        state.step = step;
        Ok(())
    }

    /// TR-BDF2 step for the potential. The ionic load is extrapolated linearly
    /// to the stage times (I^k alone on the very first step).
    #[allow(clippy::too_many_arguments)]
    fn tr_bdf2<F: Fn(Vec2, f64) -> f64>(
        &mut self,
        disc: &Discretization,
        ops: &Operators,
        model: &IonicModel,
        state: &SolverState,
        i_k: &DVector<f64>,
        t_k: f64,
        forcing: Option<&F>,
    ) -> Result<DVector<f64>, SolverError> {
        let dm = &ops.dofmap;
        let (dt, chi) = (self.dt, self.coeffs.chi);
        let d = 0.5 * GAMMA * dt;
        let (system, explicit) = split_systems(disc, ops, self.coeffs, d);
        let pre = BlockJacobi::new(&system)?;
        let source = |t: f64| forcing.map(|f| assemble_source(disc, dm, |x| f(x, t)));

        // trapezoidal stage to t_k + γΔt
        let i_mid = match &state.i_prev {
            Some(ip) => i_k + (i_k - ip) * (0.5 * GAMMA),
            None => i_k.clone(),
        };
        let mut rhs = DVector::zeros(dm.total());
        explicit.matvec(&state.u, &mut rhs);
        rhs.axpy(-chi * GAMMA * dt, &i_mid, 1.0);
        if let Some(fv) = source(t_k + 0.5 * GAMMA * dt) {
            rhs.axpy(GAMMA * dt, &fv, 1.0);
        }
        let mut u_g = state.u.clone();
        let s1 = pcg(&system, &pre, &rhs, &mut u_g, SOLVE_TOL, 2000)?;

        // BDF2 stage to t_k + Δt
        let (i_g, _) = assemble_ionic(disc, dm, &u_g, &state.y, model)?;
        let i_end = &i_g + (&i_g - i_k) * ((1.0 - GAMMA) / GAMMA);
        let scale = GAMMA * (2.0 - GAMMA);
        let hist = &u_g * (1.0 / scale) - &state.u * ((1.0 - GAMMA).powi(2) / scale);
        let mut rhs = ops.apply_mass(&hist) * (chi * self.coeffs.cm);
        rhs.axpy(-chi * d, &i_end, 1.0);
        if let Some(fv) = source(t_k + dt) {
            rhs.axpy(d, &fv, 1.0);
        }
        let mut u_new = &state.u + (&u_g - &state.u) * (1.0 / GAMMA);
        let s2 = pcg(&system, &pre, &rhs, &mut u_new, SOLVE_TOL, 2000)?;
        self.last_solve = Some(SolveStats { iterations: s1.iterations + s2.iterations, ..s2 });
        Ok(u_new)
    }
}

/// (χC M + c A, χC M − c A) as block systems.
fn split_systems(disc: &Discretization, ops: &Operators, coeffs: ModelCoefficients, c: f64) -> (BlockSystem, BlockSystem) {
    let dm = &ops.dofmap;
    let sizes = dm.sizes();
    let mut system = BlockSystem::new(&sizes);
    let mut explicit = BlockSystem::new(&sizes);
    let cm = coeffs.chi * coeffs.cm;
    for k in 0..dm.num_elements() {
        let a = ops.stiffness_diag(disc, k);
        system.diag[k] = &ops.mass[k] * cm + &a * c;
        explicit.diag[k] = &ops.mass[k] * cm - &a * c;
    }
    for (f, face) in disc.mesh.faces.iter().enumerate() {
        let (Some(r), Some(b)) = (face.right, ops.stiffness_face(f)) else { continue };
        system.off.push((face.left, r, &b * c));
        explicit.off.push((face.left, r, &b * -c));
    }
    (system, explicit)
}

/// Recomputes the previous-level ionic load on the listed elements from
/// `u_prev`, `y_prev` (used after a degree change).
pub fn refresh_ionic_history(
    disc: &Discretization,
    dm: &DofMap,
    model: &IonicModel,
    state: &mut SolverState,
    elements: &[usize],
) -> Result<(), SolverError> {
    let Some(ip) = state.i_prev.as_mut() else { return Ok(()) };
    let ns = model.n_state();
    for &k in elements {
        let r = dm.range(k);
        let mut scratch: Vec<Vec<f64>> = vec![vec![0.0; r.len()]; ns];
        let mut so: Vec<&mut [f64]> = scratch.iter_mut().map(|v| v.as_mut_slice()).collect();
        element_ionic_loads(
            disc,
            dm,
            k,
            &state.u_prev,
            &state.y_prev,
            model,
            &mut ip.as_mut_slice()[r.clone()],
            &mut so,
        )?;
    }
    Ok(())
}
