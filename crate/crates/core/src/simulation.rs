//! Time loop: builds the discretization from a [`RunConfig`], advances it with
//! Crank–Nicolson, adapts degrees and emits series and snapshots.

use std::fs;
use std::path::Path;
use std::time::Instant;

use nalgebra::DVector;

use crate::adaptivity::{AdaptStats, Adaptor, StepContext};
use crate::analysis::ManufacturedForcing;
use crate::assembly::{assemble_operators, Discretization, Operators};
use crate::basis::{project_l2, DegreeField};
use crate::config::{ForcingConfig, InitialCondition, MeshSource, ModelConfig, RunConfig};
use crate::error::{Error, Result, SolverError};
use crate::indicator::{IndicatorField, IndicatorInputs};
use crate::ionic::{forcing_value, ForcingSpec, IonicModel};
use crate::mesh::{load_mesh, Mesh};
use crate::meshgen::{structured_quads, voronoi_rectangle};
use crate::output::{self, CellFields, LINE_HEADER};
use crate::timestepping::{CnStepper, SolverState};
use crate::Vec2;

pub fn build_mesh(src: &MeshSource) -> Result<Mesh> {
    Ok(match src {
        MeshSource::File(p) => load_mesh(&fs::read_to_string(p)?)?,
        MeshSource::Voronoi(spec) => voronoi_rectangle(spec)?,
        MeshSource::Structured { min, max, nx, ny } => structured_quads(*min, *max, *nx, *ny),
    })
}

pub fn build_model(cfg: &RunConfig) -> IonicModel {
    match &cfg.model {
        ModelConfig::Cubic(p) => IonicModel::Cubic(*p),
        ModelConfig::BarretoCressman { params, current_scale, .. } => {
            IonicModel::BarretoCressman { params: *params, current_scale: *current_scale }
        }
    }
}

/// External current I_ext(x, t).
#[derive(Debug, Clone)]
pub enum Source {
    None,
    Pulse(ForcingSpec),
    Manufactured(ManufacturedForcing),
}

impl Source {
    pub fn from_config(cfg: &RunConfig) -> Self {
        match (&cfg.forcing, &cfg.initial, &cfg.model) {
            (ForcingConfig::None, ..) => Source::None,
            (ForcingConfig::Pulse(s), ..) => Source::Pulse(s.clone()),
            (ForcingConfig::Manufactured, InitialCondition::Wave(w), ModelConfig::Cubic(p)) => {
                let sigma = *cfg.materials.sigma.values().next().expect("validated: one material");
                Source::Manufactured(ManufacturedForcing { wave: *w, sigma, cubic: *p, chi: cfg.coeffs.chi, cm: cfg.coeffs.cm })
            }
            (ForcingConfig::Manufactured, ..) => unreachable!("rejected by the config parser"),
        }
    }

    pub fn is_none(&self) -> bool {
        matches!(self, Source::None)
    }

    pub fn value(&self, x: Vec2, t: f64) -> f64 {
        match self {
            Source::None => 0.0,
            Source::Pulse(s) => forcing_value(t, x, s),
            Source::Manufactured(m) => m.value(x, t),
        }
    }
}

fn initial_value(ic: &InitialCondition, x: Vec2) -> f64 {
    match ic {
        InitialCondition::Constant(v) => *v,
        InitialCondition::Wave(w) => w.value(x, 0.0),
        InitialCondition::DoubleWave(d) => d.value(x),
        InitialCondition::Region { region, inside, outside } => {
            if region.contains(x) {
                *inside
            } else {
                *outside
            }
        }
    }
}

/// Initial coefficients: L² projection of smooth profiles; region-valued data
/// is taken cell-wise constant from the value at the centroid.
pub fn initial_state(cfg: &RunConfig, disc: &Discretization, ops: &Operators) -> Result<SolverState, SolverError> {
    let dm = &ops.dofmap;
    let mut u = DVector::zeros(dm.total());
    let piecewise = matches!(cfg.initial, InitialCondition::Region { .. } | InitialCondition::Constant(_));
    for k in 0..dm.num_elements() {
        let g = disc.mesh.geometry(k);
        if piecewise {
            u[dm.offset(k)] = initial_value(&cfg.initial, g.centroid) * g.bbox.area().sqrt();
        } else {
            let c = project_l2(|x| initial_value(&cfg.initial, x), g, dm.degree(k), Some(&disc.elem_rules[k]))?;
            u.rows_mut(dm.offset(k), c.len()).copy_from(&c);
        }
    }
    let y = match &cfg.model {
        ModelConfig::Cubic(_) => Vec::new(),
        ModelConfig::BarretoCressman { initial, .. } => {
            initial.to_array().iter().map(|&v| ops.constant_vector(disc, v)).collect()
        }
    };
    Ok(SolverState::new(u, y))
}

/// Solution kept at a requested time.
#[derive(Debug, Clone)]
pub struct Recorded {
    pub t: f64,
    pub degrees: DegreeField,
    pub u: DVector<f64>,
}

/// Time series collected during a run.
#[derive(Debug, Clone, Default)]
pub struct Series {
    pub ndof: Vec<(f64, Vec<usize>)>,
    pub n_updated: Vec<(f64, Vec<usize>)>,
    pub counts: Vec<(f64, Vec<usize>)>,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub steps: usize,
    pub final_ndof: usize,
    pub u_min: f64,
    pub u_max: f64,
    pub wall_seconds: f64,
    pub threshold: Option<f64>,
    pub series: Series,
    pub records: Vec<Recorded>,
}

/// A running simulation; [`Simulation::advance`] performs one time step and,
/// when due, one adaptation.
pub struct Simulation {
    pub cfg: RunConfig,
    pub disc: Discretization,
    pub model: IonicModel,
    pub ops: Operators,
    pub state: SolverState,
    pub stepper: CnStepper,
    pub adaptor: Option<Adaptor>,
    pub source: Source,
    pub series: Series,
    pub records: Vec<Recorded>,
    pub last_adapt: Option<AdaptStats>,
}

impl Simulation {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        let mesh = build_mesh(&cfg.mesh)?;
        Self::with_mesh(cfg, mesh)
    }

    pub fn with_mesh(cfg: RunConfig, mesh: Mesh) -> Result<Self> {
        let sigma = cfg.materials.per_cell(&mesh)?;
        let p_max = cfg.adapt.p_max;
        let disc = match cfg.quad_order {
            Some(q) => Discretization::with_order(mesh, sigma, p_max, cfg.eta0, q),
            None => Discretization::new(mesh, sigma, p_max, cfg.eta0),
        };
        let model = build_model(&cfg);
        let n = disc.num_elements();
        let ops = assemble_operators(&disc, &DegreeField::uniform(n, cfg.initial_degree()));
        let state = initial_state(&cfg, &disc, &ops)?;
        let stepper = CnStepper::new(&disc, &ops, cfg.coeffs, cfg.dt)?;
        let source = Source::from_config(&cfg);
        let adaptor = if cfg.adaptive {
            let mut a = Adaptor::new(cfg.adapt, n)?;
            a.threshold = cfg.threshold;
            Some(a)
        } else {
            None
        };
        let mut sim = Self {
            cfg,
            disc,
            model,
            ops,
            state,
            stepper,
            adaptor,
            source,
            series: Series::default(),
            records: Vec::new(),
            last_adapt: None,
        };
        if sim.adaptor.as_ref().is_some_and(|a| a.config.cluster_on_initial) {
            let src = |x: Vec2| sim.source.value(x, 0.0);
            let ctx = StepContext {
                disc: &sim.disc,
                model: &sim.model,
                coeffs: sim.cfg.coeffs,
                dt: sim.cfg.dt,
                source: if sim.source.is_none() { None } else { Some(&src) },
            };
            let a = sim.adaptor.as_mut().expect("checked above");
            a.initialize(&ctx, &sim.ops, &sim.state)?;
        }
        sim.push_series(0);
        sim.maybe_record();
        Ok(sim)
    }

    pub fn time(&self) -> f64 {
        self.cfg.dt * self.state.step as f64
    }

    pub fn steps(&self) -> usize {
        self.cfg.steps()
    }

    pub fn is_finished(&self) -> bool {
        self.state.step >= self.steps()
    }

    fn push_series(&mut self, n_updated: usize) {
        let t = self.time();
        let dm = &self.ops.dofmap;
        self.series.ndof.push((t, vec![dm.total()]));
        self.series.n_updated.push((t, vec![n_updated]));
        self.series.counts.push((t, dm.degrees().counts(self.cfg.adapt.p_max)));
    }

    fn maybe_record(&mut self) {
        let t = self.time();
        let half = 0.5 * self.cfg.dt;
        if self.cfg.output.record_times.iter().any(|&r| (r - t).abs() < half) {
            self.records.push(Recorded { t, degrees: self.ops.dofmap.degrees().clone(), u: self.state.u.clone() });
        }
    }

    /// One time step followed by the adaptation scheduled at the new level.
    pub fn advance(&mut self) -> Result<()> {
        let t_k = self.time();
        let step = self.state.step + 1;
        let at = |e: SolverError| Error::AtStep { step, source: e };
        let src = &self.source;
        let f = |x: Vec2, t: f64| src.value(x, t);
        self.stepper
            .step(&self.disc, &self.ops, &self.model, &mut self.state, t_k, if src.is_none() { None } else { Some(&f) })
            .map_err(at)?;
        let mut n_updated = 0;
        self.last_adapt = None;
        if let Some(ad) = self.adaptor.as_mut() {
            if ad.is_adaptation_step(step) {
                let t1 = t_k + self.cfg.dt;
                let g = |x: Vec2| src.value(x, t1);
                let ctx = StepContext {
                    disc: &self.disc,
                    model: &self.model,
                    coeffs: self.cfg.coeffs,
                    dt: self.cfg.dt,
                    source: if src.is_none() { None } else { Some(&g) },
                };
                let (stats, changed) = ad.adapt_step(&ctx, &mut self.ops, &mut self.state).map_err(at)?;
                if changed {
                    self.stepper = CnStepper::new(&self.disc, &self.ops, self.cfg.coeffs, self.cfg.dt).map_err(at)?;
                }
                n_updated = stats.n_updated;
                self.last_adapt = Some(stats);
            }
        }
        self.push_series(n_updated);
        self.maybe_record();
        Ok(())
    }

    /// Current indicator field: the adaptor's (possibly stale) values, or a
    /// fresh full evaluation for non-adaptive runs.
    pub fn indicator(&self) -> Result<Vec<f64>, SolverError> {
        if let Some(a) = &self.adaptor {
            if a.count > 0 || a.config.cluster_on_initial {
                return Ok(a.indicator.tau.clone());
            }
        }
        let t = self.time();
        let g = |x: Vec2| self.source.value(x, t);
        let inp = IndicatorInputs {
            disc: &self.disc,
            ops: &self.ops,
            model: &self.model,
            coeffs: self.cfg.coeffs,
            u: &self.state.u,
            u_prev: &self.state.u_prev,
            y: &self.state.y,
            dt: self.cfg.dt,
            source: if self.source.is_none() { None } else { Some(&g) },
        };
        let mut f = IndicatorField::new(self.disc.num_elements());
        let all: Vec<usize> = (0..self.disc.num_elements()).collect();
        f.refresh(&inp, &all, self.state.step)?;
        Ok(f.tau)
    }

    pub fn cell_means(&self) -> Vec<f64> {
        output::cell_means(&self.disc, &self.ops.dofmap, &self.state.u)
    }

    pub fn write_snapshot(&self, dir: &Path) -> Result<()> {
        let step = self.state.step;
        let tau = self.indicator().map_err(|e| Error::AtStep { step, source: e })?;
        let means = self.cell_means();
        let fields = CellFields { degree: self.ops.dofmap.degrees().as_slice(), indicator: &tau, u_mean: &means };
        let title = format!("t = {}", output::fmt_sig(self.time()));
        output::write_snapshot(&dir.join(format!("snapshot_{step:06}.vtk")), &self.disc.mesh, &fields, &title)?;
        if let Some(l) = &self.cfg.output.line {
            let rows = output::sample_line(&self.disc, &self.ops.dofmap, &self.state.u, l.from, l.to, l.n);
            fs::write(dir.join(format!("line_{step:06}.csv")), output::csv_text(&LINE_HEADER, &rows))?;
        }
        Ok(())
    }

    pub fn write_series(&self, dir: &Path) -> Result<()> {
        fs::write(dir.join("ndof_evolution.csv"), output::csv_counts_text(&["t", "ndof"], &self.series.ndof))?;
        fs::write(dir.join("n_updated.csv"), output::csv_counts_text(&["t", "n_updated"], &self.series.n_updated))?;
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.cfg.adapt.p_max).map(|p| format!("count_p{p}")));
        let h: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
        fs::write(dir.join("degree_counts.csv"), output::csv_counts_text(&h, &self.series.counts))?;
        Ok(())
    }

    pub fn summary(&self, wall_seconds: f64) -> RunSummary {
        let means = self.cell_means();
        RunSummary {
            steps: self.state.step,
            final_ndof: self.ops.dofmap.total(),
            u_min: means.iter().copied().fold(f64::INFINITY, f64::min),
            u_max: means.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            wall_seconds,
            threshold: self.adaptor.as_ref().and_then(|a| a.threshold),
            series: self.series.clone(),
            records: self.records.clone(),
        }
    }
}

/// Runs a configuration to completion, writing outputs when `output.dir` is set.
pub fn run_simulation(cfg: &RunConfig) -> Result<RunSummary> {
    let start = Instant::now();
    let mut sim = Simulation::new(cfg.clone())?;
    let dir = cfg.output.dir.clone();
    let every = cfg.output.snapshot_every;
    if let Some(d) = &dir {
        fs::create_dir_all(d)?;
        if every > 0 {
            sim.write_snapshot(d)?;
        }
    }
    while !sim.is_finished() {
        sim.advance()?;
        if let (Some(d), true) = (&dir, every > 0 && sim.state.step % every == 0) {
            sim.write_snapshot(d)?;
        }
    }
    if let Some(d) = &dir {
        sim.write_series(d)?;
    }
    Ok(sim.summary(start.elapsed().as_secs_f64()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    const REST: &str = "
mesh.generator = structured
mesh.min = 0 0
mesh.max = 1 1
mesh.nx = 3
mesh.ny = 3
material.0 = 0.1
model = cubic
initial.kind = constant
initial.value = -85
time.dt = 0.01
time.t_end = 0.2
adapt.enabled = false
adapt.p_max = 2
";

    #[test]
    fn rest_state_is_stationary() {
        let cfg = parse_config(REST).unwrap();
        let mut sim = Simulation::new(cfg).unwrap();
        let u0 = sim.state.u.clone();
        while !sim.is_finished() {
            sim.advance().unwrap();
        }
        assert_eq!(sim.state.step, 20);
        assert!((&sim.state.u - u0).amax() < 1e-10);
    }

    #[test]
    fn snapshot_cadence() {
        let dir = tempfile::tempdir().unwrap();
        let text = REST.replace("time.t_end = 0.2", "time.t_end = 1")
            + &format!("output.dir = {}\noutput.snapshot_every = 10\noutput.line = 0 0.5 1 0.5 5\n", dir.path().display());
        let s = run_simulation(&parse_config(&text).unwrap()).unwrap();
        assert_eq!(s.steps, 100);
        let n_vtk = fs::read_dir(dir.path()).unwrap().filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "vtk")).count();
        assert_eq!(n_vtk, 11);
        let nd = fs::read_to_string(dir.path().join("ndof_evolution.csv")).unwrap();
        assert!(nd.starts_with("t,ndof\n"));
        assert_eq!(nd.lines().count(), 102);
        let dc = fs::read_to_string(dir.path().join("degree_counts.csv")).unwrap();
        assert!(dc.starts_with("t,count_p1,count_p2\n"));
    }
}
