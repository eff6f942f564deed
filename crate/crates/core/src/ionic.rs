//! Ionic reaction models: the cubic benchmark nonlinearity and the six-variable
//! Barreto–Cressman neuron model, a 0D forward-Euler integrator and the
//! periodic external forcing.
//!
//! Barreto–Cressman currents are in μA/cm², voltages in mV, time in ms and
//! concentrations in mM. Auxiliary relations (Nernst potentials, pump, glial
//! buffering, bath diffusion, gating rates) follow the original
//! Cressman/Barreto formulation:
//!
//! ```text
//! E_Na = 26.64 ln(Na_o / s),   Na_o = 144 − β (s − 18)
//! E_K  = 26.64 ln(k / K_i),    K_i  = 140 + (18 − s)
//! E_Cl = 26.64 ln(6 / 130)
//! I_pump = ρ / (1 + exp((25 − s)/3)) / (1 + exp(5.5 − k))
//! I_glia = G_glia / (1 + exp((18 − k)/2.5))
//! I_diff = ε (k − K_bath)
//! dg/dt  = φ (α_g (1 − g) − β_g g),  φ = 3
//! ```

use crate::error::SolverError;
use crate::Vec2;

/// Cubic reaction f(u) = a (u − V_rest)(u − V_thres)(u − V_depol).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CubicParams {
    pub a: f64,
    pub v_rest: f64,
    pub v_thres: f64,
    pub v_depol: f64,
}

impl Default for CubicParams {
    fn default() -> Self {
        Self { a: 1.4e-5, v_rest: -85.0, v_thres: -57.6, v_depol: 30.0 }
    }
}

impl CubicParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.a > 0.0) {
            return Err("a must be positive".into());
        }
        if !(self.v_rest <= self.v_thres && self.v_thres <= self.v_depol) {
            return Err("require v_rest <= v_thres <= v_depol".into());
        }
        Ok(())
    }
}

pub fn cubic_f(u: f64, p: &CubicParams) -> f64 {
    p.a * (u - p.v_rest) * (u - p.v_thres) * (u - p.v_depol)
}

/// Form of the potassium and sodium concentration equations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConcentrationForm {
    /// dk/dt = −(I_diff − 2β I_pump − I_glia + β γ I_K)/τ,
    /// ds/dt = −(γ I_Na − 3 I_pump)/τ.
    Printed,
    /// dk/dt = (β γ I_K − 2β I_pump − I_glia − I_diff)/τ,
    /// ds/dt = (−γ I_Na − 3 I_pump)/τ.
    Cited,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarretoCressmanParams {
    pub g_nal: f64,
    pub g_na: f64,
    pub g_k: f64,
    pub g_ahp: f64,
    pub g_kl: f64,
    pub g_cll: f64,
    pub g_ca: f64,
    pub g_glia: f64,
    pub k_bath: f64,
    /// Membrane capacitance of the 0D model, μF/cm².
    pub c_m: f64,
    pub rho: f64,
    pub eps_diff: f64,
    pub gamma: f64,
    pub beta: f64,
    pub tau: f64,
    pub phi: f64,
    pub e_ca: f64,
    pub form: ConcentrationForm,
}

impl Default for BarretoCressmanParams {
    fn default() -> Self {
        Self {
            g_nal: 0.0175,
            g_na: 100.0,
            g_k: 40.0,
            g_ahp: 0.01,
            g_kl: 0.05,
            g_cll: 0.05,
            g_ca: 0.1,
            g_glia: 66.66,
            k_bath: 8.0,
            c_m: 1.0,
            rho: 1.25,
            eps_diff: 1.2,
            gamma: 0.0445,
            beta: 7.0,
            tau: 1000.0,
            phi: 3.0,
            e_ca: 120.0,
            form: ConcentrationForm::Printed,
        }
    }
}

impl BarretoCressmanParams {
    pub fn validate(&self) -> Result<(), String> {
        let g = [self.g_nal, self.g_na, self.g_k, self.g_ahp, self.g_kl, self.g_cll, self.g_ca, self.g_glia];
        if g.iter().any(|&v| !(v >= 0.0)) {
            return Err("conductances must be non-negative".into());
        }
        if !(self.k_bath > 0.0) {
            return Err("k_bath must be positive".into());
        }
        if !(self.c_m > 0.0 && self.tau > 0.0) {
            return Err("c_m and tau must be positive".into());
        }
        Ok(())
    }
}

/// Ionic state y = [s, k, c, g^s, g^k, g^c]: intracellular sodium,
/// extracellular potassium, intracellular calcium, and the sodium activation,
/// sodium inactivation and potassium activation gates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IonicState {
    pub s: f64,
    pub k: f64,
    pub c: f64,
    pub gs: f64,
    pub gk: f64,
    pub gc: f64,
}

impl Default for IonicState {
    fn default() -> Self {
        Self { s: 15.5, k: 7.8, c: 0.0, gs: 0.0936, gk: 0.96859, gc: 0.08553 }
    }
}

impl IonicState {
    pub fn to_array(self) -> [f64; 6] {
        [self.s, self.k, self.c, self.gs, self.gk, self.gc]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self { s: a[0], k: a[1], c: a[2], gs: a[3], gk: a[4], gc: a[5] }
    }

    /// Clamps the gates to [0, 1]; returns the number of gates moved.
    pub fn clamp_gates(&mut self) -> usize {
        let mut n = 0;
        for g in [&mut self.gs, &mut self.gk, &mut self.gc] {
            let c = g.clamp(0.0, 1.0);
            if c != *g {
                *g = c;
                n += 1;
            }
        }
        n
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Currents {
    pub i_na: f64,
    pub i_k: f64,
    pub i_cl: f64,
    pub e_na: f64,
    pub e_k: f64,
    pub e_cl: f64,
}

impl Currents {
    pub fn total(&self) -> f64 {
        self.i_na + self.i_k + self.i_cl
    }
}

const NERNST: f64 = 26.64;

pub fn reversal_potentials(y: &IonicState, p: &BarretoCressmanParams) -> Result<(f64, f64, f64), SolverError> {
    let na_o = 144.0 - p.beta * (y.s - 18.0);
    let k_i = 140.0 + (18.0 - y.s);
    let e_na = NERNST * (na_o / y.s).ln();
    let e_k = NERNST * (y.k / k_i).ln();
    let e_cl = NERNST * (6.0f64 / 130.0).ln();
    if !e_na.is_finite() {
        return Err(SolverError::NonFiniteReversal { which: "E_Na" });
    }
    if !e_k.is_finite() {
        return Err(SolverError::NonFiniteReversal { which: "E_K" });
    }
    Ok((e_na, e_k, e_cl))
}

pub fn bc_currents(u: f64, y: &IonicState, p: &BarretoCressmanParams) -> Result<Currents, SolverError> {
    let (e_na, e_k, e_cl) = reversal_potentials(y, p)?;
    let i_na = (p.g_nal + p.g_na * y.gs.powi(3) * y.gk) * (u - e_na);
    let i_k = (p.g_k * y.gc.powi(4) + p.g_ahp * y.c / (1.0 + y.c) + p.g_kl) * (u - e_k);
    let i_cl = p.g_cll * (u - e_cl);
    Ok(Currents { i_na, i_k, i_cl, e_na, e_k, e_cl })
}

/// Opening and closing rates (α, β) of the three gates at potential `u`.
pub fn gate_rates(u: f64) -> [(f64, f64); 3] {
    let vtrap = |x: f64, k: f64| {
        // x / (1 − e^{−x/k}) with the removable singularity at x = 0
        if x.abs() < 1e-9 {
            k
        } else {
            x / (1.0 - (-x / k).exp())
        }
    };
    let am = 0.1 * vtrap(u + 30.0, 10.0);
    let bm = 4.0 * (-(u + 55.0) / 18.0).exp();
    let ah = 0.07 * (-(u + 44.0) / 20.0).exp();
    let bh = 1.0 / (1.0 + (-0.1 * (u + 14.0)).exp());
    let an = 0.01 * vtrap(u + 34.0, 10.0);
    let bn = 0.125 * (-(u + 44.0) / 80.0).exp();
    [(am, bm), (ah, bh), (an, bn)]
}

/// Steady state g_∞ = α/(α+β) and time constant τ_g = 1/(α+β) of each gate.
pub fn gate_steady_states(u: f64) -> [(f64, f64); 3] {
    gate_rates(u).map(|(a, b)| (a / (a + b), 1.0 / (a + b)))
}

/// Time derivatives dy/dt of the six ionic variables.
pub fn bc_rhs(u: f64, y: &IonicState, p: &BarretoCressmanParams) -> Result<[f64; 6], SolverError> {
    let cur = bc_currents(u, y, p)?;
    let i_pump = p.rho / (1.0 + ((25.0 - y.s) / 3.0).exp()) / (1.0 + (5.5 - y.k).exp());
    let i_glia = p.g_glia / (1.0 + ((18.0 - y.k) / 2.5).exp());
    let i_diff = p.eps_diff * (y.k - p.k_bath);
    let dc = -y.c / 80.0 - p.g_ca * 0.002 * (u - p.e_ca) / (1.0 + (-(25.0 + u) / 2.5).exp());
    let (dk, ds) = match p.form {
        ConcentrationForm::Printed => (
            -(i_diff - 2.0 * p.beta * i_pump - i_glia + p.beta * p.gamma * cur.i_k) / p.tau,
            -(p.gamma * cur.i_na - 3.0 * i_pump) / p.tau,
        ),
        ConcentrationForm::Cited => (
            (p.beta * p.gamma * cur.i_k - 2.0 * p.beta * i_pump - i_glia - i_diff) / p.tau,
            (-p.gamma * cur.i_na - 3.0 * i_pump) / p.tau,
        ),
    };
    let ss = gate_steady_states(u);
    let g = [y.gs, y.gk, y.gc];
    let dg: [f64; 3] = std::array::from_fn(|i| p.phi * (ss[i].0 - g[i]) / ss[i].1);
    let out = [ds, dk, dc, dg[0], dg[1], dg[2]];
    if out.iter().any(|v| !v.is_finite()) {
        return Err(SolverError::InvalidArgument(format!("non-finite ionic right-hand side at u = {u}")));
    }
    Ok(out)
}

/// Spatial support of the forcing term.
#[derive(Debug, Clone, PartialEq)]
pub enum Region {
    Everywhere,
    Nowhere,
    Rect { min: Vec2, max: Vec2 },
    Disk { center: Vec2, radius: f64 },
    Polygon(Vec<Vec2>),
}

impl Region {
    pub fn contains(&self, x: Vec2) -> bool {
        match self {
            Region::Everywhere => true,
            Region::Nowhere => false,
            Region::Rect { min, max } => x.x >= min.x && x.x <= max.x && x.y >= min.y && x.y <= max.y,
            Region::Disk { center, radius } => (x - center).norm() <= *radius,
            Region::Polygon(p) => crate::mesh::point_in_polygon(x, p),
        }
    }
}

/// External stimulus A / (1 + e^{sin t}) on a region.
#[derive(Debug, Clone, PartialEq)]
pub struct ForcingSpec {
    pub amplitude: f64,
    pub region: Region,
}

impl ForcingSpec {
    pub fn none() -> Self {
        Self { amplitude: 0.0, region: Region::Nowhere }
    }
}

pub fn forcing_value(t: f64, x: Vec2, spec: &ForcingSpec) -> f64 {
    if spec.amplitude == 0.0 || !spec.region.contains(x) {
        return 0.0;
    }
    spec.amplitude / (1.0 + t.sin().exp())
}

/// Reaction model selected for a simulation.
#[derive(Debug, Clone, PartialEq)]
pub enum IonicModel {
    Cubic(CubicParams),
    BarretoCressman {
        params: BarretoCressmanParams,
        /// Factor converting model currents (μA/cm²) to the PDE current density.
        current_scale: f64,
    },
}

impl IonicModel {
    /// Number of ionic state variables carried alongside u.
    pub fn n_state(&self) -> usize {
        match self {
            IonicModel::Cubic(_) => 0,
            IonicModel::BarretoCressman { .. } => 6,
        }
    }

    /// Reaction f(u, y) at a point. Gates are clamped to [0, 1] before use.
    pub fn reaction(&self, u: f64, y: &[f64]) -> Result<f64, SolverError> {
        match self {
            IonicModel::Cubic(p) => Ok(cubic_f(u, p)),
            IonicModel::BarretoCressman { params, current_scale } => {
                let st = point_state(y);
                Ok(current_scale * bc_currents(u, &st, params)?.total())
            }
        }
    }

    /// dy/dt at a point, written into `out` (length `n_state`).
    pub fn state_rate(&self, u: f64, y: &[f64], out: &mut [f64]) -> Result<(), SolverError> {
        match self {
            IonicModel::Cubic(_) => Ok(()),
            IonicModel::BarretoCressman { params, .. } => {
                let st = point_state(y);
                out.copy_from_slice(&bc_rhs(u, &st, params)?);
                Ok(())
            }
        }
    }
}

fn point_state(y: &[f64]) -> IonicState {
    let mut st = IonicState::from_array([y[0], y[1], y[2], y[3], y[4], y[5]]);
    st.clamp_gates();
    st
}

/// Result of a 0D integration.
#[derive(Debug, Clone)]
pub struct Trace0d {
    pub t: Vec<f64>,
    pub u: Vec<f64>,
    pub y: Vec<IonicState>,
    pub spikes: Vec<f64>,
    pub clamp_events: usize,
}

/// Refractory window of the spike detector, ms.
pub const SPIKE_REFRACTORY: f64 = 1.0;

/// Forward-Euler integration of C_m du/dt = −f(u, y) + I_ext(t), dy/dt = rhs.
/// Records every `record_every`-th step; spikes are upward zero crossings.
pub fn integrate_0d(
    params: &BarretoCressmanParams,
    u0: f64,
    y0: IonicState,
    dt: f64,
    t_end: f64,
    forcing_amplitude: f64,
    record_every: usize,
) -> Result<Trace0d, SolverError> {
    if !(dt > 0.0) {
        return Err(SolverError::InvalidArgument("dt must be positive".into()));
    }
    let n = (t_end / dt).round() as usize;
    let record_every = record_every.max(1);
    let spec = ForcingSpec { amplitude: forcing_amplitude, region: Region::Everywhere };
    let mut u = u0;
    let mut y = y0;
    let mut tr = Trace0d { t: vec![0.0], u: vec![u], y: vec![y], spikes: vec![], clamp_events: 0 };
    let mut last_spike = f64::NEG_INFINITY;
    for step in 0..n {
        let t = step as f64 * dt;
        let cur = bc_currents(u, &y, params)?;
        let dy = bc_rhs(u, &y, params)?;
        let i_ext = forcing_value(t, Vec2::zeros(), &spec);
        let u_new = u + dt * (-cur.total() + i_ext) / params.c_m;
        let mut a = y.to_array();
        for (ai, di) in a.iter_mut().zip(dy) {
            *ai += dt * di;
        }
        y = IonicState::from_array(a);
        tr.clamp_events += y.clamp_gates();
        let t_new = (step + 1) as f64 * dt;
        if !u_new.is_finite() {
            return Err(SolverError::NonFinite { step: step + 1 });
        }
        if u_new.abs() > 500.0 {
            return Err(SolverError::BlowUp { step: step + 1, value: u_new });
        }
        if u < 0.0 && u_new >= 0.0 && t_new - last_spike > SPIKE_REFRACTORY {
            tr.spikes.push(t_new);
            last_spike = t_new;
        }
        u = u_new;
        if (step + 1) % record_every == 0 {
            tr.t.push(t_new);
            tr.u.push(u);
            tr.y.push(y);
        }
    }
    Ok(tr)
}
