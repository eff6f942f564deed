//! Exact traveling-wave solutions, error norms and the energy-norm accumulator.

use nalgebra::DVector;

use crate::adaptivity::AdaptConfig;
use crate::assembly::{isotropic, Discretization, MaterialTable, ModelCoefficients, Operators};
use crate::basis::{build_dof_map, eval_basis_with, BasisValues, Derivatives, DofMap};
use crate::config::{ForcingConfig, InitialCondition, MeshSource, ModelConfig, OutputConfig, RunConfig};
use crate::error::Error;
use crate::ionic::{cubic_f, CubicParams};
use crate::mesh::Mesh;
use crate::meshgen::{voronoi_rectangle, RectMeshSpec};
use crate::output::fmt_sig;
use crate::quadrature::QuadratureRule;
use crate::simulation::{build_mesh, Recorded, RunSummary, Simulation};
use crate::{Mat2, Vec2};

/// Planar tanh front
/// `u = (V_dep − V_rest)/2 · [1 − tanh((d·x − x0 − |c| t)/ε)] + V_rest`
/// moving with speed |c| along the unit direction d.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TravelingWave {
    pub v_rest: f64,
    pub v_depol: f64,
    pub eps: f64,
    pub speed: f64,
    pub direction: Vec2,
    /// Front position along `direction` at t = 0.
    pub x0: f64,
}

impl TravelingWave {
    pub fn along_x(v_rest: f64, v_depol: f64, eps: f64, speed: f64) -> Self {
        Self { v_rest, v_depol, eps, speed, direction: Vec2::new(1.0, 0.0), x0: 0.0 }
    }

    /// Front solving the cubic monodomain equation exactly for isotropic
    /// conductivity `sigma`: ε = 2√(2σ/(χa))/(V_dep − V_rest) and
    /// c = √(aσ/(2χ))/C · (V_rest + V_dep − 2 V_thres).
    pub fn compatible(sigma: f64, p: &CubicParams, chi: f64, cm: f64) -> Self {
        let span = p.v_depol - p.v_rest;
        let eps = 2.0 * (2.0 * sigma / (chi * p.a)).sqrt() / span;
        let speed = (p.a * sigma / (2.0 * chi)).sqrt() / cm * (p.v_rest + p.v_depol - 2.0 * p.v_thres);
        Self::along_x(p.v_rest, p.v_depol, eps, speed)
    }

    fn z(&self, x: Vec2, t: f64) -> f64 {
        (self.direction.dot(&x) - self.x0 - self.speed * t) / self.eps
    }

    fn half_span(&self) -> f64 {
        0.5 * (self.v_depol - self.v_rest)
    }

    pub fn value(&self, x: Vec2, t: f64) -> f64 {
        self.half_span() * (1.0 - self.z(x, t).tanh()) + self.v_rest
    }

    /// du/dz and d²u/dz².
    fn dz(&self, x: Vec2, t: f64) -> (f64, f64) {
        let th = self.z(x, t).tanh();
        let sech2 = 1.0 - th * th;
        (-self.half_span() * sech2, 2.0 * self.half_span() * sech2 * th)
    }

    pub fn gradient(&self, x: Vec2, t: f64) -> Vec2 {
        self.direction * (self.dz(x, t).0 / self.eps)
    }

    pub fn time_derivative(&self, x: Vec2, t: f64) -> f64 {
        -self.dz(x, t).0 * self.speed / self.eps
    }

    /// ∇·(Σ∇u) for constant Σ.
    pub fn flux_divergence(&self, x: Vec2, t: f64, sigma: &Mat2) -> f64 {
        let d = self.direction;
        self.dz(x, t).1 / (self.eps * self.eps) * d.dot(&(sigma * d))
    }

    /// Position of the front (u = midpoint) along `direction` at time t.
    pub fn front_position(&self, t: f64) -> f64 {
        self.x0 + self.speed * t
    }
}

/// Two opposing fronts along x:
/// `u = (V_dep − V_rest)/2 · [tanh((x + x2)/ε2) − tanh((x + x1)/ε1)] + V_dep`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DoubleWave {
    pub v_rest: f64,
    pub v_depol: f64,
    pub x1: f64,
    pub x2: f64,
    pub eps1: f64,
    pub eps2: f64,
}

impl DoubleWave {
    pub fn value(&self, x: Vec2) -> f64 {
        0.5 * (self.v_depol - self.v_rest) * (((x.x + self.x2) / self.eps2).tanh() - ((x.x + self.x1) / self.eps1).tanh())
            + self.v_depol
    }
}

/// Source that makes a [`TravelingWave`] an exact solution of the cubic
/// monodomain equation: `I = χC ∂_t u − ∇·(Σ∇u) + χ f(u)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ManufacturedForcing {
    pub wave: TravelingWave,
    pub sigma: Mat2,
    pub cubic: CubicParams,
    pub chi: f64,
    pub cm: f64,
}

impl ManufacturedForcing {
    pub fn value(&self, x: Vec2, t: f64) -> f64 {
        let w = &self.wave;
        self.chi * self.cm * w.time_derivative(x, t) - w.flux_divergence(x, t, &self.sigma)
            + self.chi * cubic_f(w.value(x, t), &self.cubic)
    }
}

/// Per-element quadrature with basis values and gradients at p_max, used to
/// integrate errors against a non-polynomial reference.
#[derive(Debug, Clone)]
pub struct ErrorEvaluator {
    pub rules: Vec<QuadratureRule>,
    vals: Vec<BasisValues>,
}

impl ErrorEvaluator {
    pub fn new(disc: &Discretization, order: usize) -> Self {
        let mesh = &disc.mesh;
        let rules: Vec<QuadratureRule> = (0..mesh.num_cells()).map(|k| mesh.geometry(k).quadrature(order)).collect();
        let vals = rules
            .iter()
            .enumerate()
            .map(|(k, r)| eval_basis_with(mesh.geometry(k), disc.p_max, &r.points, Derivatives::First))
            .collect();
        Self { rules, vals }
    }

    /// Element-wise (‖e‖², ‖∇e‖², ‖e‖⁴_{L⁴}) of e = u_h − reference.
    pub fn element_errors<F, G>(&self, dm: &DofMap, u: &DVector<f64>, k: usize, value: F, grad: G) -> (f64, f64, f64)
    where
        F: Fn(Vec2) -> f64,
        G: Fn(Vec2) -> Vec2,
    {
        let rule = &self.rules[k];
        let b = &self.vals[k];
        let c = &u.as_slice()[dm.range(k)];
        let mut v = vec![0.0; rule.len()];
        b.reconstruct(c, &mut v);
        let g = b.reconstruct_grad(c);
        let (mut l2, mut h1, mut l4) = (0.0, 0.0, 0.0);
        for (q, (&x, &w)) in rule.points.iter().zip(&rule.weights).enumerate() {
            let e = v[q] - value(x);
            let ge = g[q] - grad(x);
            l2 += w * e * e;
            l4 += w * e * e * e * e;
            h1 += w * ge.norm_squared();
        }
        (l2, h1, l4)
    }

    /// Squared L² error over the domain.
    pub fn l2_error_sq<F: Fn(Vec2) -> f64>(&self, dm: &DofMap, u: &DVector<f64>, value: F) -> f64 {
        (0..dm.num_elements())
            .map(|k| {
                let rule = &self.rules[k];
                let mut v = vec![0.0; rule.len()];
                self.vals[k].reconstruct(&u.as_slice()[dm.range(k)], &mut v);
                rule.points.iter().zip(&rule.weights).zip(&v).map(|((&x, w), vh)| w * (vh - value(x)).powi(2)).sum::<f64>()
            })
            .sum()
    }

    /// (‖e‖², ‖e‖²_DG, ‖e‖⁴_{L⁴}) for a continuous reference (its jumps vanish).
    pub fn errors<F, G>(&self, disc: &Discretization, ops: &Operators, u: &DVector<f64>, value: F, grad: G) -> Pointwise
    where
        F: Fn(Vec2) -> f64,
        G: Fn(Vec2) -> Vec2,
    {
        let dm = &ops.dofmap;
        let mut out = Pointwise::default();
        for k in 0..dm.num_elements() {
            let (a, b, c) = self.element_errors(dm, u, k, &value, &grad);
            out.l2_sq += a;
            out.dg_sq += b;
            out.l4_4 += c;
        }
        out.dg_sq += jump_seminorm_sq(disc, ops, u);
        out
    }
}

/// Squared norms of one field at one time.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pointwise {
    pub l2_sq: f64,
    pub dg_sq: f64,
    pub l4_4: f64,
}

/// Σ_F η_F ‖⟦v⟧‖²_F over interior faces.
pub fn jump_seminorm_sq(disc: &Discretization, ops: &Operators, v: &DVector<f64>) -> f64 {
    let dm = &ops.dofmap;
    let mut acc = 0.0;
    for (f, face) in disc.mesh.faces.iter().enumerate() {
        let (Some(r), Some(s)) = (face.right, ops.s_face[f].as_ref()) else { continue };
        let fc = &disc.faces[f];
        let n = fc.rule.len();
        let (mut vl, mut vr) = (vec![0.0; n], vec![0.0; n]);
        fc.left.reconstruct(&v.as_slice()[dm.range(face.left)], &mut vl);
        disc.face_side(f, r).reconstruct(&v.as_slice()[dm.range(r)], &mut vr);
        acc += s.eta * fc.rule.weights.iter().zip(vl.iter().zip(&vr)).map(|(w, (a, b))| w * (a - b).powi(2)).sum::<f64>();
    }
    acc
}

/// ‖v‖ of a discrete field via the mass matrix.
pub fn l2_norm(ops: &Operators, v: &DVector<f64>) -> f64 {
    v.dot(&ops.apply_mass(v)).max(0.0).sqrt()
}

/// ‖v‖_DG of a discrete field.
pub fn dg_norm(disc: &Discretization, ops: &Operators, v: &DVector<f64>) -> f64 {
    let dm = &ops.dofmap;
    let mut acc = 0.0;
    for k in 0..dm.num_elements() {
        let b = disc.volume_gradients(k, dm.degree(k));
        let g = b.reconstruct_grad(&v.as_slice()[dm.range(k)]);
        acc += g.iter().zip(&disc.elem_rules[k].weights).map(|(g, w)| w * g.norm_squared()).sum::<f64>();
    }
    (acc + jump_seminorm_sq(disc, ops, v)).sqrt()
}

/// ‖v‖²_E(t) = ‖v(t)‖² + ∫₀ᵗ [2μ/(Cχ) ‖v‖²_DG + a/C ‖v‖⁴_{L⁴}] ds with the
/// time integral accumulated by the trapezoidal rule.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyAccumulator {
    pub mu: f64,
    pub chi: f64,
    pub cm: f64,
    pub a: f64,
    last: Option<(f64, f64)>,
    pub integral: f64,
    pub l2_sq: f64,
}

impl EnergyAccumulator {
    pub fn new(mu: f64, chi: f64, cm: f64, a: f64) -> Self {
        Self { mu, chi, cm, a, last: None, integral: 0.0, l2_sq: 0.0 }
    }

    pub fn push(&mut self, t: f64, p: Pointwise) {
        let g = 2.0 * self.mu / (self.cm * self.chi) * p.dg_sq + self.a / self.cm * p.l4_4;
        if let Some((t0, g0)) = self.last {
            self.integral += 0.5 * (t - t0) * (g0 + g);
        }
        self.last = Some((t, g));
        self.l2_sq = p.l2_sq;
    }

    pub fn energy(&self) -> f64 {
        (self.l2_sq + self.integral).sqrt()
    }

    pub fn report(&self, dg_sq: f64) -> NormReport {
        NormReport { l2: self.l2_sq.sqrt(), dg: dg_sq.sqrt(), energy: self.energy(), integral: self.integral }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormReport {
    pub l2: f64,
    pub dg: f64,
    pub energy: f64,
    pub integral: f64,
}

/// Successive log-ratio rates log(e_i/e_{i+1}) / log(h_i/h_{i+1}).
pub fn observed_rates(h: &[f64], err: &[f64]) -> Vec<f64> {
    h.windows(2).zip(err.windows(2)).map(|(h, e)| (e[0] / e[1]).ln() / (h[0] / h[1]).ln()).collect()
}

/// Uniform-degree convergence runs of the manufactured traveling wave.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceConfig {
    pub min: Vec2,
    pub max: Vec2,
    /// Target element counts, coarse to fine.
    pub cells: Vec<usize>,
    pub degrees: Vec<usize>,
    pub sigma: f64,
    pub cubic: CubicParams,
    pub chi: f64,
    pub cm: f64,
    pub wave: TravelingWave,
    pub dt: f64,
    pub t_end: f64,
    pub eta0: f64,
    pub lloyd: usize,
    pub seed: u64,
}

impl Default for ConvergenceConfig {
    /// Test-1a setup: Ω = (−1, 2) × (−0.5, 0.5), Σ = 0.1336·𝟙, ε = 0.2,
    /// c = 0.5 mm/ms, T = 0.1 ms, Δt = 1e-3 ms.
    fn default() -> Self {
        Self {
            min: Vec2::new(-1.0, -0.5),
            max: Vec2::new(2.0, 0.5),
            cells: vec![70, 150, 350, 800],
            degrees: vec![1, 2, 3],
            sigma: 0.1336,
            cubic: CubicParams::default(),
            chi: 140.0,
            cm: 0.01,
            wave: TravelingWave::along_x(-85.0, 30.0, 0.2, 0.5),
            dt: 1e-3,
            t_end: 0.1,
            eta0: 10.0,
            lloyd: 40,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub p: usize,
    pub n_elements: usize,
    pub h: f64,
    pub ndof: usize,
    pub error: f64,
    /// Rate against the previous (coarser) row of the same degree.
    pub rate: Option<f64>,
}

/// Runs one uniform-degree solve and returns the energy-norm error at T.
pub fn energy_error_run(sim: &mut Simulation, wave: &TravelingWave, cubic: &CubicParams) -> Result<f64, Error> {
    let eval = ErrorEvaluator::new(&sim.disc, 2 * sim.disc.p_max + 4);
    let mu = sim.disc.sigma_min();
    let mut acc = EnergyAccumulator::new(mu, sim.cfg.coeffs.chi, sim.cfg.coeffs.cm, cubic.a);
    let push = |sim: &Simulation, acc: &mut EnergyAccumulator| {
        let t = sim.time();
        let p = eval.errors(&sim.disc, &sim.ops, &sim.state.u, |x| wave.value(x, t), |x| wave.gradient(x, t));
        acc.push(t, p);
    };
    push(sim, &mut acc);
    while !sim.is_finished() {
        sim.advance()?;
        push(sim, &mut acc);
    }
    Ok(acc.energy())
}

fn wave_config(c: &ConvergenceConfig, mesh: MeshSource, p: usize) -> RunConfig {
    RunConfig {
        mesh,
        materials: MaterialTable::uniform(isotropic(c.sigma)),
        model: ModelConfig::Cubic(c.cubic),
        coeffs: ModelCoefficients { chi: c.chi, cm: c.cm },
        initial: InitialCondition::Wave(c.wave),
        forcing: ForcingConfig::Manufactured,
        dt: c.dt,
        t_end: c.t_end,
        eta0: c.eta0,
        quad_order: None,
        p_init: None,
        adaptive: false,
        adapt: AdaptConfig { p_max: p, ..Default::default() },
        threshold: None,
        output: OutputConfig::default(),
    }
}

pub fn convergence_study(c: &ConvergenceConfig) -> Result<Vec<ConvergenceRow>, Error> {
    let mut rows = Vec::new();
    for &p in &c.degrees {
        let mut prev: Option<(f64, f64)> = None;
        for &n in &c.cells {
            let spec = RectMeshSpec { min: c.min, max: c.max, n_cells: n, interfaces: vec![], lloyd: c.lloyd, seed: c.seed };
            let mesh = voronoi_rectangle(&spec)?;
            let h = mesh.h_max();
            let n_elements = mesh.num_cells();
            let mut sim = Simulation::with_mesh(wave_config(c, MeshSource::Voronoi(spec), p), mesh)?;
            let ndof = sim.ops.dofmap.total();
            let error = energy_error_run(&mut sim, &c.wave, &c.cubic)?;
            let rate = prev.map(|(h0, e0)| observed_rates(&[h0, h], &[e0, error])[0]);
            prev = Some((h, error));
            rows.push(ConvergenceRow { p, n_elements, h, ndof, error, rate });
        }
    }
    Ok(rows)
}

pub fn convergence_csv(rows: &[ConvergenceRow]) -> String {
    let mut s = String::from("p,n_elements,h,ndof,error,rate\n");
    for r in rows {
        s += &format!(
            "{},{},{},{},{},{}\n",
            r.p,
            r.n_elements,
            fmt_sig(r.h),
            r.ndof,
            fmt_sig(r.error),
            r.rate.map(fmt_sig).unwrap_or_default()
        );
    }
    s
}

/// Adaptive run compared against a uniform-p_max run of the same configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub t: f64,
    pub ndof_adaptive: usize,
    pub ndof_uniform: usize,
    /// ‖u_ad − u_ex‖ and ‖u_un − u_ex‖ when an exact wave exists.
    pub err_adaptive: Option<f64>,
    pub err_uniform: Option<f64>,
    /// ‖u_ad − u_un‖.
    pub difference: f64,
    pub reduction: f64,
}

/// ‖u_a − u_b‖ for two coefficient vectors on different degree layouts of the
/// same discretization (exact, through the hierarchical embedding).
pub fn l2_difference(disc: &Discretization, a: &Recorded, b: &Recorded) -> f64 {
    let (da, db) = (build_dof_map(&a.degrees), build_dof_map(&b.degrees));
    let mut acc = 0.0;
    for k in 0..disc.num_elements() {
        let (ra, rb) = (da.range(k), db.range(k));
        let n = ra.len().max(rb.len());
        let mut d = vec![0.0; n];
        for (i, v) in a.u.as_slice()[ra].iter().enumerate() {
            d[i] += v;
        }
        for (i, v) in b.u.as_slice()[rb].iter().enumerate() {
            d[i] -= v;
        }
        let rule = &disc.elem_rules[k];
        let mut vals = vec![0.0; rule.len()];
        disc.elem_vals[k].reconstruct(&d, &mut vals);
        acc += vals.iter().zip(&rule.weights).map(|(v, w)| w * v * v).sum::<f64>();
    }
    acc.sqrt()
}

fn l2_vs_wave(eval: &ErrorEvaluator, r: &Recorded, w: &TravelingWave) -> f64 {
    eval.l2_error_sq(&build_dof_map(&r.degrees), &r.u, |x| w.value(x, r.t)).sqrt()
}

/// Runs `cfg` adaptively and with uniform p_max, comparing at `cfg.output.record_times`.
pub fn adaptive_vs_uniform_report(cfg: &RunConfig) -> Result<(Vec<ComparisonRow>, RunSummary, RunSummary), Error> {
    let mesh = build_mesh(&cfg.mesh)?;
    let mut ad_cfg = cfg.clone();
    ad_cfg.adaptive = true;
    ad_cfg.output.dir = None;
    let mut un_cfg = ad_cfg.clone();
    un_cfg.adaptive = false;
    un_cfg.p_init = None;
    let mut ad = Simulation::with_mesh(ad_cfg, mesh.clone())?;
    let mut un = Simulation::with_mesh(un_cfg, mesh)?;
    while !ad.is_finished() {
        ad.advance()?;
    }
    while !un.is_finished() {
        un.advance()?;
    }
    let eval = cfg.exact_wave().map(|_| ErrorEvaluator::new(&ad.disc, 2 * cfg.adapt.p_max + 4));
    let mut rows = Vec::new();
    for (a, b) in ad.records.iter().zip(&un.records) {
        let (ea, eb) = match (cfg.exact_wave(), &eval) {
            (Some(w), Some(ev)) => (Some(l2_vs_wave(ev, a, &w)), Some(l2_vs_wave(ev, b, &w))),
            _ => (None, None),
        };
        let na = build_dof_map(&a.degrees).total();
        let nb = build_dof_map(&b.degrees).total();
        rows.push(ComparisonRow {
            t: a.t,
            ndof_adaptive: na,
            ndof_uniform: nb,
            err_adaptive: ea,
            err_uniform: eb,
            difference: l2_difference(&ad.disc, a, b),
            reduction: 1.0 - na as f64 / nb as f64,
        });
    }
    Ok((rows, ad.summary(0.0), un.summary(0.0)))
}

pub fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut s = String::from("t,ndof_adaptive,ndof_uniform,err_adaptive,err_uniform,difference,reduction\n");
    let o = |v: Option<f64>| v.map(fmt_sig).unwrap_or_default();
    for r in rows {
        s += &format!(
            "{},{},{},{},{},{},{}\n",
            fmt_sig(r.t),
            r.ndof_adaptive,
            r.ndof_uniform,
            o(r.err_adaptive),
            o(r.err_uniform),
            fmt_sig(r.difference),
            fmt_sig(r.reduction)
        );
    }
    s
}

/// Face-connected components of the elements with degree ≥ `min_p`, each
/// sorted, ordered by smallest element index.
pub fn high_degree_clusters(mesh: &Mesh, degrees: &[usize], min_p: usize) -> Vec<Vec<usize>> {
    let mut seen = vec![false; mesh.num_cells()];
    let mut out = Vec::new();
    for start in 0..mesh.num_cells() {
        if seen[start] || degrees[start] < min_p {
            continue;
        }
        seen[start] = true;
        let mut comp = vec![start];
        let mut i = 0;
        while i < comp.len() {
            for nb in mesh.neighbors(comp[i]) {
                if !seen[nb] && degrees[nb] >= min_p {
                    seen[nb] = true;
                    comp.push(nb);
                }
            }
            i += 1;
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{assemble_operators, isotropic};
    use crate::basis::{project_l2, DegreeField};
    use crate::meshgen::structured_quads;

    fn table1() -> TravelingWave {
        TravelingWave::along_x(-85.0, 30.0, 0.2, 0.5)
    }

    #[test]
    fn wave_limits() {
        let w = table1();
        assert_eq!(w.value(Vec2::new(0.0, 3.0), 0.0), -27.5);
        assert!((w.value(Vec2::new(0.5, 0.0), 1.0) + 27.5).abs() < 1e-12);
        assert!((w.value(Vec2::new(50.0, 0.0), 0.0) + 85.0).abs() < 1e-12);
        assert!((w.value(Vec2::new(-50.0, 0.0), 0.0) - 30.0).abs() < 1e-12);
    }

    #[test]
    fn wave_derivatives_match_differences() {
        let w = TravelingWave { direction: Vec2::new(0.6, 0.8), x0: 0.1, ..table1() };
        let s = Mat2::new(0.3, 0.05, 0.05, 0.2);
        let (x, t, h) = (Vec2::new(0.13, -0.07), 0.2, 1e-5);
        let u = |x: Vec2, t: f64| w.value(x, t);
        let dt = (u(x, t + h) - u(x, t - h)) / (2.0 * h);
        assert!((dt - w.time_derivative(x, t)).abs() < 1e-5 * dt.abs().max(1.0));
        let ex = Vec2::new(h, 0.0);
        let ey = Vec2::new(0.0, h);
        let g = Vec2::new((u(x + ex, t) - u(x - ex, t)) / (2.0 * h), (u(x + ey, t) - u(x - ey, t)) / (2.0 * h));
        assert!((g - w.gradient(x, t)).norm() < 1e-5 * g.norm());
        let h = 1e-4;
        let ex = Vec2::new(h, 0.0);
        let ey = Vec2::new(0.0, h);
        let uxx = (u(x + ex, t) - 2.0 * u(x, t) + u(x - ex, t)) / (h * h);
        let uyy = (u(x + ey, t) - 2.0 * u(x, t) + u(x - ey, t)) / (h * h);
        let uxy = (u(x + ex + ey, t) - u(x + ex - ey, t) - u(x - ex + ey, t) + u(x - ex - ey, t)) / (4.0 * h * h);
        let div = s[(0, 0)] * uxx + 2.0 * s[(0, 1)] * uxy + s[(1, 1)] * uyy;
        assert!((div - w.flux_divergence(x, t, &s)).abs() < 1e-4 * div.abs().max(1.0));
    }

    #[test]
    fn compatible_wave_has_no_residual() {
        let p = CubicParams::default();
        let (chi, cm) = (140.0, 0.01);
        let w = TravelingWave::compatible(0.0081, &p, chi, cm);
        assert!((w.eps - 0.05).abs() < 1e-5);
        assert!((w.speed - 0.1212).abs() < 1e-4);
        let f = ManufacturedForcing { wave: w, sigma: isotropic(0.0081), cubic: p, chi, cm };
        let mesh = structured_quads(Vec2::new(-0.5, -0.5), Vec2::new(0.5, 0.5), 4, 4);
        let mut r2 = 0.0;
        for k in 0..mesh.num_cells() {
            r2 += mesh.geometry(k).quadrature(20).integrate(|x| f.value(x, 0.3).powi(2));
        }
        assert!(r2.sqrt() < 1e-8, "{}", r2.sqrt());
    }

    #[test]
    fn double_wave_plateaus() {
        let d = DoubleWave { v_rest: -85.0, v_depol: 30.0, x1: 1.5, x2: -2.5, eps1: 0.1, eps2: 0.4 };
        assert!((d.value(Vec2::new(-10.0, 0.0)) - 30.0).abs() < 1e-9);
        assert!((d.value(Vec2::new(10.0, 0.0)) - 30.0).abs() < 1e-9);
        assert!((d.value(Vec2::new(0.5, 0.0)) + 85.0).abs() < 1e-2);
        // midpoint at each front, with the other front's tanh saturated
        assert!((d.value(Vec2::new(-1.5, 0.0)) + 27.5).abs() < 1e-6);
        assert!((d.value(Vec2::new(2.5, 0.0)) + 27.5).abs() < 1e-6);
        let s = DoubleWave { x1: 1.5, x2: -3.0, eps1: 0.1, eps2: 0.1, ..d };
        let c = 0.75;
        for x in [0.1, 0.9, 2.0, 4.0] {
            let a = s.value(Vec2::new(c + x, 0.0));
            let b = s.value(Vec2::new(c - x, 0.0));
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn norm_examples() {
        let mesh = structured_quads(Vec2::zeros(), Vec2::new(1.0, 1.0), 3, 3);
        let disc = Discretization::new(mesh, vec![isotropic(1.0); 9], 2, 10.0);
        let ops = assemble_operators(&disc, &DegreeField::uniform(9, 2));
        let c = ops.constant_vector(&disc, 2.5);
        assert!((l2_norm(&ops, &c) - 2.5).abs() < 1e-12);
        assert!(dg_norm(&disc, &ops, &c) < 1e-12);
        let mut v = DVector::zeros(ops.dofmap.total());
        for k in 0..9 {
            let cf = project_l2(|x| x.x, disc.mesh.geometry(k), 2, None).unwrap();
            v.rows_mut(ops.dofmap.offset(k), cf.len()).copy_from(&cf);
        }
        assert!((dg_norm(&disc, &ops, &v) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn energy_accumulates() {
        let mut e = EnergyAccumulator::new(0.1, 140.0, 0.01, 1.4e-5);
        e.push(0.0, Pointwise { l2_sq: 4.0, dg_sq: 1.0, l4_4: 2.0 });
        assert_eq!(e.energy(), 2.0);
        let g = 2.0 * 0.1 / 1.4 + 1.4e-3 * 2.0;
        e.push(0.5, Pointwise { l2_sq: 4.0, dg_sq: 1.0, l4_4: 2.0 });
        assert!((e.integral - 0.5 * g).abs() < 1e-15);
        assert!(e.energy() >= 2.0);
    }

    #[test]
    fn rates_of_exact_power_law() {
        let h = [0.4, 0.2, 0.1];
        let e: Vec<f64> = h.iter().map(|h: &f64| 3.0 * h.powi(2)).collect();
        for r in observed_rates(&h, &e) {
            assert!((r - 2.0).abs() < 1e-12);
        }
    }
}
