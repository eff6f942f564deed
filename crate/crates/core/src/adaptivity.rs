//! Degree selection and the p-adaptive loop.
//!
//! Each adaptation refreshes τ_K on the active set, maps every element's
//! (possibly stale) indicator to a target degree
//! `⌈p_max·(2/π)·arctan(τ_K/τ_thr)⌉`, moves the degree at most one step
//! towards it, and then updates operators, coefficients and ionic history.

use std::f64::consts::FRAC_2_PI;

use nalgebra::DVector;

use crate::assembly::{update_operators, Discretization, ModelCoefficients, Operators};
use crate::basis::{DegreeField, DofMap};
use crate::error::SolverError;
use crate::indicator::{IndicatorField, IndicatorInputs, MarkingIndicator};
use crate::ionic::IonicModel;
use crate::mesh::Mesh;
use crate::timestepping::{refresh_ionic_history, SolverState};
use crate::Vec2;

/// How τ_thr is derived from the two k-means centroids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ThresholdMode {
    #[default]
    Min,
    Mean,
}

/// Two-cluster k-means on scalars. Returns the centroids in ascending order.
///
/// Lloyd's iteration started from (min, max) stalls in local minima on
/// heavy-tailed data, so the start is the sorted split of least
/// within-cluster sum of squares instead; Lloyd's iteration then runs to a
/// fixed assignment, with values equidistant from both centroids going to
/// the lower one.
pub fn kmeans2(values: &[f64]) -> (f64, f64) {
    assert!(!values.is_empty(), "kmeans2 needs at least one value");
    // sorting makes the result independent of input order
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    if v[0] == v[n - 1] {
        return (v[0], v[0]);
    }
    // prefix sums of centred data keep the SSE differences well conditioned
    let shift = mean(&v);
    let (mut s1, mut s2) = (vec![0.0; n + 1], vec![0.0; n + 1]);
    for (i, x) in v.iter().enumerate() {
        let d = x - shift;
        s1[i + 1] = s1[i] + d;
        s2[i + 1] = s2[i] + d * d;
    }
    let sse = |a: usize, b: usize| s2[b] - s2[a] - (s1[b] - s1[a]).powi(2) / (b - a) as f64;
    // on equal cost the larger lower cluster wins, matching the tie rule below
    let cost = |s: usize| sse(0, s) + sse(s, n);
    let best = (2..n).fold(1, |b, s| if cost(s) <= cost(b) { s } else { b });
    let (mut c1, mut c2) = (mean(&v[..best]), mean(&v[best..]));
    // with sorted data the assignment is a split index: v[..split] low, v[split..] high
    let mut split = usize::MAX;
    loop {
        let s = v.partition_point(|&x| (x - c1).abs() <= (c2 - x).abs());
        if s == split {
            break;
        }
        split = s;
        if split > 0 {
            c1 = mean(&v[..split]);
        }
        if split < v.len() {
            c2 = mean(&v[split..]);
        }
    }
    if c1 <= c2 {
        (c1, c2)
    } else {
        (c2, c1)
    }
}

pub fn threshold_from_centroids(c1: f64, c2: f64, mode: ThresholdMode) -> f64 {
    match mode {
        ThresholdMode::Min => c1.min(c2),
        ThresholdMode::Mean => 0.5 * (c1 + c2),
    }
}

/// Target degree from the arctan law, clamped to `[1, p_max]`.
/// A non-positive threshold sends every positive τ to `p_max`.
pub fn degree_from_indicator(tau: f64, threshold: f64, p_max: usize) -> usize {
    if !(tau > 0.0) {
        return 1;
    }
    if !(threshold > 0.0) {
        return p_max.max(1);
    }
    let raw = (p_max as f64 * FRAC_2_PI * (tau / threshold).atan()).ceil();
    (raw as usize).clamp(1, p_max.max(1))
}

/// Moves `p_old` one step towards `p_target`.
pub fn smooth_update(p_old: usize, p_target: usize) -> usize {
    if p_old <= p_target {
        (p_old + 1).min(p_target)
    } else {
        (p_old - 1).max(p_target)
    }
}

/// Elements whose indicator is refreshed at the next adaptation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActiveSet {
    pub elements: Vec<usize>,
    /// Degree changed at the previous adaptation.
    pub updated: Vec<bool>,
}

impl ActiveSet {
    pub fn all(n: usize) -> Self {
        Self { elements: (0..n).collect(), updated: vec![false; n] }
    }
}

/// Elements updated last time or sitting at `p_max`, together with their
/// neighbours. Sorted and deduplicated.
pub fn update_active_set(updated: &[bool], degrees: &DegreeField, mesh: &Mesh, p_max: usize) -> Vec<usize> {
    let n = degrees.len();
    let mut mark = vec![false; n];
    for k in 0..n {
        if updated[k] || degrees.get(k) >= p_max {
            mark[k] = true;
            for nb in mesh.neighbors(k) {
                mark[nb] = true;
            }
        }
    }
    (0..n).filter(|&k| mark[k]).collect()
}

/// Truncates or zero-pads each element block from `old` to `new`.
pub fn transfer_vector(v: &DVector<f64>, old: &DofMap, new: &DofMap) -> Result<DVector<f64>, SolverError> {
    old.check_len(v.len())?;
    if old.num_elements() != new.num_elements() {
        return Err(SolverError::LayoutMismatch { expected: old.num_elements(), found: new.num_elements() });
    }
    let mut out = DVector::zeros(new.total());
    for k in 0..old.num_elements() {
        let m = old.size(k).min(new.size(k));
        out.rows_mut(new.offset(k), m).copy_from(&v.rows(old.offset(k), m));
    }
    Ok(out)
}

/// Hierarchical transfer of the potential and every ionic state block.
pub fn transfer_solution(
    u: &DVector<f64>,
    y: &[DVector<f64>],
    old: &DofMap,
    new: &DofMap,
) -> Result<(DVector<f64>, Vec<DVector<f64>>), SolverError> {
    let u2 = transfer_vector(u, old, new)?;
    let y2 = y.iter().map(|b| transfer_vector(b, old, new)).collect::<Result<_, _>>()?;
    Ok((u2, y2))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptConfig {
    pub p_max: usize,
    /// Steps between adaptations (k̄).
    pub period: usize,
    /// Steps between forced sweeps over every element.
    pub full_sweep_period: usize,
    pub mode: ThresholdMode,
    pub marking: MarkingIndicator,
    /// Cluster indicators of the initial condition instead of after step 1.
    pub cluster_on_initial: bool,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            p_max: 5,
            period: 1,
            full_sweep_period: 200,
            mode: ThresholdMode::Min,
            marking: MarkingIndicator::Full,
            cluster_on_initial: false,
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        if self.p_max < 1 || self.p_max > crate::basis::MAX_DEGREE {
            return Err(SolverError::InvalidArgument(format!("p_max = {} out of range", self.p_max)));
        }
        if self.period < 1 || self.full_sweep_period < 1 {
            return Err(SolverError::InvalidArgument("adaptation periods must be at least 1".into()));
        }
        Ok(())
    }
}

/// Per-adaptation summary.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptStats {
    pub step: usize,
    pub ndof: usize,
    pub n_updated: usize,
    pub n_active: usize,
    /// Elements per degree, index 0 ↔ p = 1.
    pub counts: Vec<usize>,
    pub full_sweep: bool,
}

/// State carried across adaptations.
#[derive(Debug, Clone)]
pub struct Adaptor {
    pub config: AdaptConfig,
    pub threshold: Option<f64>,
    pub centroids: Option<(f64, f64)>,
    pub active: ActiveSet,
    pub indicator: IndicatorField,
    /// Adaptations performed so far.
    pub count: usize,
    last_full_sweep: usize,
}

/// Inputs that change from step to step.
pub struct StepContext<'a> {
    pub disc: &'a Discretization,
    pub model: &'a IonicModel,
    pub coeffs: ModelCoefficients,
    pub dt: f64,
    /// I_ext(·, t^k).
    pub source: Option<&'a dyn Fn(Vec2) -> f64>,
}

impl Adaptor {
    pub fn new(config: AdaptConfig, n_elements: usize) -> Result<Self, SolverError> {
        config.validate()?;
        Ok(Self {
            config,
            threshold: None,
            centroids: None,
            active: ActiveSet::all(n_elements),
            indicator: IndicatorField::new(n_elements),
            count: 0,
            last_full_sweep: 0,
        })
    }

    /// Fixes τ_thr explicitly, skipping the clustering.
    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = Some(threshold);
        self
    }

    pub fn is_adaptation_step(&self, step: usize) -> bool {
        step >= 1 && step % self.config.period == 0
    }

    fn cluster(&mut self) {
        let vals = self.indicator.marking_values(self.config.marking);
        let (c1, c2) = kmeans2(&vals);
        self.centroids = Some((c1, c2));
        self.threshold = Some(threshold_from_centroids(c1, c2, self.config.mode));
    }

    /// Evaluates the indicator on the initial condition and, if configured,
    /// fixes the threshold from it.
    pub fn initialize(&mut self, ctx: &StepContext, ops: &Operators, state: &SolverState) -> Result<(), SolverError> {
        let all: Vec<usize> = (0..ctx.disc.num_elements()).collect();
        let inp = inputs(ctx, ops, state);
        self.indicator.refresh(&inp, &all, 0)?;
        if self.config.cluster_on_initial && self.threshold.is_none() {
            self.cluster();
        }
        Ok(())
    }

    /// One pass of the adaptive loop after the solve reaching level `state.step`.
    /// Returns the stats and whether the degree field changed (which
    /// invalidates any cached time-stepping system).
    pub fn adapt_step(
        &mut self,
        ctx: &StepContext,
        ops: &mut Operators,
        state: &mut SolverState,
    ) -> Result<(AdaptStats, bool), SolverError> {
        let step = state.step;
        if step < 1 {
            return Err(SolverError::InvalidArgument("adaptation requires at least one completed step".into()));
        }
        state.check(&ops.dofmap)?;
        let n = ctx.disc.num_elements();
        let p_max = self.config.p_max;
        let first = self.count == 0;
        let full_sweep = first || step - self.last_full_sweep >= self.config.full_sweep_period;
        let elements: Vec<usize> = if full_sweep {
            self.last_full_sweep = step;
            (0..n).collect()
        } else {
            update_active_set(&self.active.updated, ops.dofmap.degrees(), &ctx.disc.mesh, p_max)
        };
        self.active.elements = elements;
        {
            let inp = inputs(ctx, ops, state);
            self.indicator.refresh(&inp, &self.active.elements, step)?;
        }
        if self.threshold.is_none() {
            self.cluster();
        }
        self.count += 1;
        let thr = self.threshold.expect("threshold set above");
        let marks = self.indicator.marking_values(self.config.marking);
        let old = ops.dofmap.degrees().clone();
        let mut new = old.clone();
        let mut changed = Vec::new();
        for k in 0..n {
            let target = degree_from_indicator(marks[k], thr, p_max);
            let p = smooth_update(old.get(k), target);
            if p != old.get(k) {
                new.set(k, p);
                changed.push(k);
            }
        }
        self.active.updated = vec![false; n];
        for &k in &changed {
            self.active.updated[k] = true;
        }
        if !changed.is_empty() {
            let new_ops = update_operators(ctx.disc, ops, &new)?;
            let (od, nd) = (&ops.dofmap, &new_ops.dofmap);
            let (u, y) = transfer_solution(&state.u, &state.y, od, nd)?;
            let (up, yp) = transfer_solution(&state.u_prev, &state.y_prev, od, nd)?;
            state.i_prev = state.i_prev.as_ref().map(|i| transfer_vector(i, od, nd)).transpose()?;
            state.u = u;
            state.y = y;
            state.u_prev = up;
            state.y_prev = yp;
            *ops = new_ops;
            refresh_ionic_history(ctx.disc, &ops.dofmap, ctx.model, state, &changed)?;
        }
        let stats = AdaptStats {
            step,
            ndof: ops.dofmap.total(),
            n_updated: changed.len(),
            n_active: self.active.elements.len(),
            counts: ops.dofmap.degrees().counts(p_max),
            full_sweep,
        };
        Ok((stats, !changed.is_empty()))
    }
}

fn inputs<'a>(ctx: &StepContext<'a>, ops: &'a Operators, state: &'a SolverState) -> IndicatorInputs<'a> {
    IndicatorInputs {
        disc: ctx.disc,
        ops,
        model: ctx.model,
        coeffs: ctx.coeffs,
        u: &state.u,
        u_prev: &state.u_prev,
        y: &state.y,
        dt: ctx.dt,
        source: ctx.source,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{assemble_operators, isotropic};
    use crate::basis::{build_dof_map, project_l2};
    use crate::ionic::CubicParams;
    use crate::meshgen::structured_quads;

    #[test]
    fn kmeans_examples() {
        assert_eq!(kmeans2(&[1.0, 1.0, 1.0, 9.0, 9.0]), (1.0, 9.0));
        assert_eq!(kmeans2(&[2.5; 4]), (2.5, 2.5));
        let (c1, c2) = kmeans2(&[0.1, 0.2, 0.15, 5.0, 4.8, 5.2, 0.12]);
        assert!((c1 - 0.1425).abs() < 1e-15 && (c2 - 5.0).abs() < 1e-15);
        // both splits cost 0.5; the tie goes low
        assert_eq!(kmeans2(&[0.0, 1.0, 2.0]), (0.5, 2.0));
    }

    #[test]
    fn threshold_examples() {
        assert_eq!(threshold_from_centroids(1.0, 9.0, ThresholdMode::Min), 1.0);
        assert_eq!(threshold_from_centroids(1.0, 9.0, ThresholdMode::Mean), 5.0);
        assert_eq!(threshold_from_centroids(3.0, 3.0, ThresholdMode::Mean), 3.0);
    }

    #[test]
    fn degree_law_examples() {
        assert_eq!(degree_from_indicator(0.7, 0.7, 5), 3);
        assert_eq!(degree_from_indicator(1e300, 1.0, 5), 5);
        assert_eq!(degree_from_indicator(0.0, 1.0, 5), 1);
        assert_eq!(smooth_update(5, 2), 4);
        assert_eq!(smooth_update(1, 4), 2);
        assert_eq!(smooth_update(3, 3), 3);
    }

    #[test]
    fn active_set_contains_neighbours() {
        let mesh = structured_quads(Vec2::zeros(), Vec2::new(1.0, 1.0), 4, 4);
        let deg = DegreeField::uniform(16, 2);
        let mut upd = vec![false; 16];
        upd[5] = true;
        let s = update_active_set(&upd, &deg, &mesh, 4);
        let mut expect = mesh.neighbors(5);
        expect.push(5);
        expect.sort();
        assert_eq!(s, expect);
        assert!(update_active_set(&[false; 16], &deg, &mesh, 4).is_empty());
    }

    #[test]
    fn transfer_round_trips() {
        let a = build_dof_map(&DegreeField::new(vec![1, 3, 2]).unwrap());
        let b = build_dof_map(&DegreeField::new(vec![2, 3, 1]).unwrap());
        let v = DVector::from_fn(a.total(), |i, _| (i as f64 + 0.5).sin());
        assert_eq!(transfer_vector(&v, &a, &a).unwrap(), v);
        let hi = build_dof_map(&DegreeField::uniform(3, 4));
        let back = transfer_vector(&transfer_vector(&v, &a, &hi).unwrap(), &hi, &a).unwrap();
        assert_eq!(back, v);
        assert!(transfer_vector(&v, &build_dof_map(&DegreeField::uniform(3, 2)), &a).is_err());
        assert!(transfer_vector(&v, &b, &build_dof_map(&DegreeField::uniform(2, 2))).is_err());
    }

    #[test]
    fn down_then_up_is_l2_projection() {
        // rectangular elements fill their bounding boxes, so the basis is orthonormal
        let mesh = structured_quads(Vec2::zeros(), Vec2::new(2.0, 1.0), 2, 1);
        let hi = build_dof_map(&DegreeField::uniform(2, 4));
        let lo = build_dof_map(&DegreeField::uniform(2, 2));
        let f = |x: Vec2| (x.x * 1.3).sin() * (0.4 + x.y).exp();
        let mut v = DVector::zeros(hi.total());
        for k in 0..2 {
            let c = project_l2(f, mesh.geometry(k), 4, None).unwrap();
            v.rows_mut(hi.offset(k), c.len()).copy_from(&c);
        }
        let t = transfer_vector(&transfer_vector(&v, &hi, &lo).unwrap(), &lo, &hi).unwrap();
        for k in 0..2 {
            // oracle: dense projection of the degree-4 field onto degree 2
            let g = mesh.geometry(k);
            let rule = g.quadrature(12);
            let b4 = crate::basis::eval_basis(g, 4, &rule.points);
            let mut vals = vec![0.0; rule.len()];
            b4.reconstruct(&v.as_slice()[hi.range(k)], &mut vals);
            let b2 = crate::basis::eval_basis(g, 2, &rule.points);
            let m = crate::basis::gram(&b2, &rule.weights, 6);
            let rhs = DVector::from_fn(6, |i, _| {
                b2.row(i).iter().zip(&vals).zip(&rule.weights).map(|((a, b), w)| a * b * w).sum::<f64>()
            });
            let oracle = m.lu().solve(&rhs).unwrap();
            let got = t.rows(hi.offset(k), 15);
            for i in 0..15 {
                let o = if i < 6 { oracle[i] } else { 0.0 };
                assert!((got[i] - o).abs() < 1e-12, "k={k} i={i}");
            }
        }
    }

    fn quiet_setup(p: usize) -> (Discretization, Operators, SolverState) {
        let mesh = structured_quads(Vec2::zeros(), Vec2::new(1.0, 1.0), 4, 4);
        let disc = Discretization::new(mesh, vec![isotropic(0.1); 16], 5, 10.0);
        let ops = assemble_operators(&disc, &DegreeField::uniform(16, p));
        let u = ops.constant_vector(&disc, -85.0);
        let mut st = SolverState::new(u, vec![]);
        st.step = 1;
        (disc, ops, st)
    }

    #[test]
    fn flat_state_decays_to_linear() {
        let (disc, mut ops, mut st) = quiet_setup(5);
        let model = IonicModel::Cubic(CubicParams::default());
        let ctx = StepContext { disc: &disc, model: &model, coeffs: ModelCoefficients::default(), dt: 0.01, source: None };
        let mut ad = Adaptor::new(AdaptConfig { p_max: 5, ..Default::default() }, 16).unwrap().with_threshold(1.0);
        for s in 1..=4 {
            st.step = s;
            let (stats, changed) = ad.adapt_step(&ctx, &mut ops, &mut st).unwrap();
            assert!(changed);
            assert_eq!(stats.counts[5 - s - 1], 16);
        }
        assert_eq!(ops.dofmap.total(), 3 * 16);
        assert_eq!(st.u, ops.constant_vector(&disc, -85.0));
    }

    #[test]
    fn hot_everywhere_rises_by_one() {
        let (disc, mut ops, mut st) = quiet_setup(1);
        let model = IonicModel::Cubic(CubicParams::default());
        let ctx = StepContext { disc: &disc, model: &model, coeffs: ModelCoefficients::default(), dt: 0.01, source: None };
        // the time-derivative term makes every residual positive
        st.u_prev = ops.constant_vector(&disc, -80.0);
        let mut ad = Adaptor::new(AdaptConfig { p_max: 4, ..Default::default() }, 16).unwrap().with_threshold(1e-12);
        for s in 1..=4 {
            st.step = s;
            ad.adapt_step(&ctx, &mut ops, &mut st).unwrap();
            let expect = (1 + s).min(4);
            assert!(ops.dofmap.degrees().as_slice().iter().all(|&p| p == expect), "step {s}");
        }
    }
}
