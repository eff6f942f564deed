//! Run configuration: flat `key = value` text with dotted keys.
//!
//! ```text
//! # comment
//! mesh.generator = voronoi
//! mesh.min = -1 -0.5
//! mesh.max = 2 0.5
//! mesh.cells = 300
//! material.0 = 0.0081
//! model = cubic
//! initial.kind = wave
//! time.dt = 0.01
//! time.t_end = 12
//! adapt.p_max = 4
//! ```
//!
//! Every key is consumed exactly once; anything left over is reported as
//! unknown.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::adaptivity::{AdaptConfig, ThresholdMode};
use crate::analysis::{DoubleWave, TravelingWave};
use crate::assembly::{fiber_tensor, isotropic, MaterialTable, ModelCoefficients};
use crate::error::ConfigError;
use crate::indicator::MarkingIndicator;
use crate::ionic::{BarretoCressmanParams, ConcentrationForm, CubicParams, ForcingSpec, IonicState, Region};
use crate::meshgen::RectMeshSpec;
use crate::{Mat2, Vec2};

#[derive(Debug, Clone, PartialEq)]
pub enum MeshSource {
    File(PathBuf),
    Voronoi(RectMeshSpec),
    Structured { min: Vec2, max: Vec2, nx: usize, ny: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelConfig {
    Cubic(CubicParams),
    BarretoCressman { params: BarretoCressmanParams, current_scale: f64, initial: IonicState },
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialCondition {
    Constant(f64),
    Wave(TravelingWave),
    DoubleWave(DoubleWave),
    Region { region: Region, inside: f64, outside: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum ForcingConfig {
    None,
    /// A / (1 + e^{sin t}) on a region.
    Pulse(ForcingSpec),
    /// Source that makes the initial traveling wave exact.
    Manufactured,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineSample {
    pub from: Vec2,
    pub to: Vec2,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
    /// Steps between VTK snapshots; 0 disables them.
    pub snapshot_every: usize,
    pub line: Option<LineSample>,
    /// Times at which the solution is kept in memory for later comparison.
    pub record_times: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub mesh: MeshSource,
    pub materials: MaterialTable,
    pub model: ModelConfig,
    pub coeffs: ModelCoefficients,
    pub initial: InitialCondition,
    pub forcing: ForcingConfig,
    pub dt: f64,
    pub t_end: f64,
    pub eta0: f64,
    /// Element quadrature order; defaults to 2 p_max + 2.
    pub quad_order: Option<usize>,
    /// Initial degree everywhere; defaults to p_max.
    pub p_init: Option<usize>,
    pub adaptive: bool,
    pub adapt: AdaptConfig,
    pub threshold: Option<f64>,
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }

    pub fn initial_degree(&self) -> usize {
        self.p_init.unwrap_or(self.adapt.p_max)
    }

    /// The traveling wave used as exact solution, if the run has one.
    pub fn exact_wave(&self) -> Option<TravelingWave> {
        match (&self.initial, &self.model) {
            (InitialCondition::Wave(w), ModelConfig::Cubic(_)) => Some(*w),
            _ => None,
        }
    }
}

struct Entry {
    value: String,
    line: usize,
    used: bool,
}

struct Kv {
    map: BTreeMap<String, Entry>,
}

fn invalid(key: &str, msg: impl Into<String>) -> ConfigError {
    ConfigError::InvalidValue { key: key.to_string(), msg: msg.into() }
}

impl Kv {
    fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() || k.contains(char::is_whitespace) {
                return Err(ConfigError::Syntax { line: i + 1 });
            }
            if map.insert(k.to_string(), Entry { value: v.to_string(), line: i + 1, used: false }).is_some() {
                return Err(invalid(k, format!("duplicate key (line {})", i + 1)));
            }
        }
        Ok(Self { map })
    }

    fn raw(&mut self, key: &str) -> Option<String> {
        self.map.get_mut(key).map(|e| {
            e.used = true;
            e.value.clone()
        })
    }

    fn req_raw(&mut self, key: &str) -> Result<String, ConfigError> {
        self.raw(key).ok_or_else(|| ConfigError::MissingKey(key.to_string()))
    }

    fn opt<T: FromStr>(&mut self, key: &str) -> Result<Option<T>, ConfigError> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| invalid(key, format!("cannot parse `{v}`"))),
        }
    }

    fn get<T: FromStr>(&mut self, key: &str, default: T) -> Result<T, ConfigError> {
        Ok(self.opt(key)?.unwrap_or(default))
    }

    fn req<T: FromStr>(&mut self, key: &str) -> Result<T, ConfigError> {
        self.opt(key)?.ok_or_else(|| ConfigError::MissingKey(key.to_string()))
    }

    fn floats(&mut self, key: &str) -> Result<Option<Vec<f64>>, ConfigError> {
        let Some(v) = self.raw(key) else { return Ok(None) };
        v.split_whitespace()
            .map(|s| s.parse::<f64>().map_err(|_| invalid(key, format!("cannot parse `{s}`"))))
            .collect::<Result<Vec<_>, _>>()
            .map(Some)
    }

    fn point(&mut self, key: &str) -> Result<Option<Vec2>, ConfigError> {
        match self.floats(key)? {
            None => Ok(None),
            Some(v) if v.len() == 2 => Ok(Some(Vec2::new(v[0], v[1]))),
            Some(_) => Err(invalid(key, "expected two numbers")),
        }
    }

    fn req_point(&mut self, key: &str) -> Result<Vec2, ConfigError> {
        self.point(key)?.ok_or_else(|| ConfigError::MissingKey(key.to_string()))
    }

    fn positive(&mut self, key: &str, default: Option<f64>) -> Result<f64, ConfigError> {
        let v = match default {
            Some(d) => self.get(key, d)?,
            None => self.req(key)?,
        };
        if !(v > 0.0) || !v.is_finite() {
            return Err(invalid(key, "must be positive"));
        }
        Ok(v)
    }

    fn prefixed(&mut self, prefix: &str) -> Vec<(String, String)> {
        let mut out = Vec::new();
        for (k, e) in self.map.iter_mut() {
            if let Some(rest) = k.strip_prefix(prefix) {
                e.used = true;
                out.push((rest.to_string(), e.value.clone()));
            }
        }
        out
    }

    fn finish(self) -> Result<(), ConfigError> {
        match self.map.iter().filter(|(_, e)| !e.used).min_by_key(|(_, e)| e.line) {
            Some((k, _)) => Err(ConfigError::UnknownKey(k.clone())),
            None => Ok(()),
        }
    }
}

fn parse_region(key: &str, v: &str) -> Result<Region, ConfigError> {
    let mut it = v.split_whitespace();
    let kind = it.next().unwrap_or("");
    let nums: Vec<f64> =
        it.map(|s| s.parse().map_err(|_| invalid(key, format!("cannot parse `{s}`")))).collect::<Result<_, _>>()?;
    match (kind, nums.len()) {
        ("everywhere", 0) => Ok(Region::Everywhere),
        ("nowhere", 0) => Ok(Region::Nowhere),
        ("rect", 4) => Ok(Region::Rect { min: Vec2::new(nums[0], nums[1]), max: Vec2::new(nums[2], nums[3]) }),
        ("disk", 3) if nums[2] > 0.0 => Ok(Region::Disk { center: Vec2::new(nums[0], nums[1]), radius: nums[2] }),
        ("polygon", n) if n >= 6 && n % 2 == 0 => {
            Ok(Region::Polygon(nums.chunks(2).map(|c| Vec2::new(c[0], c[1])).collect()))
        }
        _ => Err(invalid(key, "expected `everywhere`, `nowhere`, `rect x0 y0 x1 y1`, `disk cx cy r` or `polygon x y ...`")),
    }
}

fn parse_sigma(key: &str, v: &str) -> Result<Mat2, ConfigError> {
    let nums: Vec<f64> = v
        .split_whitespace()
        .map(|s| s.parse().map_err(|_| invalid(key, format!("cannot parse `{s}`"))))
        .collect::<Result<_, _>>()?;
    let s = match nums.len() {
        1 => isotropic(nums[0]),
        3 => Mat2::new(nums[0], nums[1], nums[1], nums[2]),
        _ => return Err(invalid(key, "expected `s` or `sxx sxy syy`")),
    };
    let lo = crate::assembly::sigma_min_eigenvalue(&s);
    if !(lo > 0.0) {
        return Err(invalid(key, "conductivity must be symmetric positive definite"));
    }
    Ok(s)
}

fn parse_mesh(kv: &mut Kv, base: &Path) -> Result<MeshSource, ConfigError> {
    let gen = kv.raw("mesh.generator").unwrap_or_else(|| "file".into());
    match gen.as_str() {
        "file" => Ok(MeshSource::File(base.join(kv.req_raw("mesh.file")?))),
        "voronoi" => {
            let min = kv.req_point("mesh.min")?;
            let max = kv.req_point("mesh.max")?;
            if !(max.x > min.x && max.y > min.y) {
                return Err(invalid("mesh.max", "must exceed mesh.min"));
            }
            let n_cells: usize = kv.req("mesh.cells")?;
            if n_cells < 1 {
                return Err(invalid("mesh.cells", "must be at least 1"));
            }
            let interfaces = kv.floats("mesh.interfaces")?.unwrap_or_default();
            if interfaces.windows(2).any(|w| w[1] <= w[0]) {
                return Err(invalid("mesh.interfaces", "must be increasing"));
            }
            Ok(MeshSource::Voronoi(RectMeshSpec {
                min,
                max,
                n_cells,
                interfaces,
                lloyd: kv.get("mesh.lloyd", 30)?,
                seed: kv.get("mesh.seed", 1)?,
            }))
        }
        "structured" => {
            let min = kv.req_point("mesh.min")?;
            let max = kv.req_point("mesh.max")?;
            if !(max.x > min.x && max.y > min.y) {
                return Err(invalid("mesh.max", "must exceed mesh.min"));
            }
            let nx: usize = kv.req("mesh.nx")?;
            let ny: usize = kv.req("mesh.ny")?;
            if nx == 0 || ny == 0 {
                return Err(invalid("mesh.nx", "cell counts must be positive"));
            }
            Ok(MeshSource::Structured { min, max, nx, ny })
        }
        other => Err(invalid("mesh.generator", format!("unknown generator `{other}`"))),
    }
}

fn parse_materials(kv: &mut Kv) -> Result<MaterialTable, ConfigError> {
    let mut sigma = BTreeMap::new();
    for (label, v) in kv.prefixed("material.") {
        let key = format!("material.{label}");
        let (id, kind) = match label.split_once('.') {
            Some((id, kind)) => (id, Some(kind)),
            None => (label.as_str(), None),
        };
        let id: u32 = id.parse().map_err(|_| invalid(&key, "material labels are non-negative integers"))?;
        let s = match kind {
            None => parse_sigma(&key, &v)?,
            // material.<id>.fiber = sigma_l sigma_n nx ny
            Some("fiber") => {
                let n: Vec<f64> = v
                    .split_whitespace()
                    .map(|s| s.parse().map_err(|_| invalid(&key, format!("cannot parse `{s}`"))))
                    .collect::<Result<_, _>>()?;
                if n.len() != 4 || !(n[0] > 0.0 && n[1] > 0.0) || Vec2::new(n[2], n[3]).norm() == 0.0 {
                    return Err(invalid(&key, "expected `sigma_l sigma_n nx ny` with positive conductivities"));
                }
                fiber_tensor(n[0], n[1], Vec2::new(n[2], n[3]))
            }
            Some(_) => return Err(ConfigError::UnknownKey(key)),
        };
        if sigma.insert(id, s).is_some() {
            return Err(invalid(&key, "material defined twice"));
        }
    }
    if sigma.is_empty() {
        return Err(ConfigError::MissingKey("material.0".into()));
    }
    Ok(MaterialTable { sigma })
}

fn parse_model(kv: &mut Kv) -> Result<ModelConfig, ConfigError> {
    match kv.req_raw("model")?.as_str() {
        "cubic" => {
            let d = CubicParams::default();
            let p = CubicParams {
                a: kv.get("cubic.a", d.a)?,
                v_rest: kv.get("cubic.v_rest", d.v_rest)?,
                v_thres: kv.get("cubic.v_thres", d.v_thres)?,
                v_depol: kv.get("cubic.v_depol", d.v_depol)?,
            };
            p.validate().map_err(|m| invalid("cubic.a", m))?;
            Ok(ModelConfig::Cubic(p))
        }
        "barreto-cressman" => {
            let mut p = BarretoCressmanParams::default();
            p.k_bath = kv.get("bc.k_bath", p.k_bath)?;
            p.form = match kv.raw("bc.form").as_deref() {
                None | Some("printed") => ConcentrationForm::Printed,
                Some("cited") => ConcentrationForm::Cited,
                Some(o) => return Err(invalid("bc.form", format!("expected `printed` or `cited`, got `{o}`"))),
            };
            p.validate().map_err(|m| invalid("bc.k_bath", m))?;
            let current_scale = kv.positive("bc.current_scale", Some(0.01))?;
            let d = IonicState::default();
            let initial = IonicState {
                s: kv.get("bc.init.s", d.s)?,
                k: kv.get("bc.init.k", d.k)?,
                c: kv.get("bc.init.c", d.c)?,
                gs: kv.get("bc.init.gs", d.gs)?,
                gk: kv.get("bc.init.gk", d.gk)?,
                gc: kv.get("bc.init.gc", d.gc)?,
            };
            Ok(ModelConfig::BarretoCressman { params: p, current_scale, initial })
        }
        o => Err(invalid("model", format!("expected `cubic` or `barreto-cressman`, got `{o}`"))),
    }
}

fn parse_initial(kv: &mut Kv, model: &ModelConfig) -> Result<InitialCondition, ConfigError> {
    let (vr, vd) = match model {
        ModelConfig::Cubic(p) => (p.v_rest, p.v_depol),
        ModelConfig::BarretoCressman { .. } => (-85.0, 30.0),
    };
    match kv.req_raw("initial.kind")?.as_str() {
        "constant" => Ok(InitialCondition::Constant(kv.req("initial.value")?)),
        "wave" => {
            let eps = kv.positive("initial.eps", None)?;
            let speed: f64 = kv.req("initial.speed")?;
            let dir = kv.point("initial.direction")?.unwrap_or(Vec2::new(1.0, 0.0));
            if dir.norm() == 0.0 {
                return Err(invalid("initial.direction", "must be non-zero"));
            }
            Ok(InitialCondition::Wave(TravelingWave {
                v_rest: vr,
                v_depol: vd,
                eps,
                speed,
                direction: dir.normalize(),
                x0: kv.get("initial.x0", 0.0)?,
            }))
        }
        "double-wave" => Ok(InitialCondition::DoubleWave(DoubleWave {
            v_rest: vr,
            v_depol: vd,
            x1: kv.req("initial.x1")?,
            x2: kv.req("initial.x2")?,
            eps1: kv.positive("initial.eps1", None)?,
            eps2: kv.positive("initial.eps2", None)?,
        })),
        "region" => Ok(InitialCondition::Region {
            region: parse_region("initial.region", &kv.req_raw("initial.region")?)?,
            inside: kv.req("initial.inside")?,
            outside: kv.req("initial.outside")?,
        }),
        o => Err(invalid("initial.kind", format!("expected constant, wave, double-wave or region; got `{o}`"))),
    }
}

fn parse_bool(key: &str, v: Option<String>, default: bool) -> Result<bool, ConfigError> {
    match v.as_deref() {
        None => Ok(default),
        Some("true" | "on" | "yes") => Ok(true),
        Some("false" | "off" | "no") => Ok(false),
        Some(o) => Err(invalid(key, format!("expected a boolean, got `{o}`"))),
    }
}

/// Parses a configuration; relative mesh paths resolve against `base`.
pub fn parse_config_in(text: &str, base: &Path) -> Result<RunConfig, ConfigError> {
    let mut kv = Kv::parse(text)?;
    let mesh = parse_mesh(&mut kv, base)?;
    let materials = parse_materials(&mut kv)?;
    let model = parse_model(&mut kv)?;
    let coeffs = ModelCoefficients {
        chi: kv.positive("chi", Some(140.0))?,
        cm: kv.positive("cm", Some(0.01))?,
    };
    let initial = parse_initial(&mut kv, &model)?;
    let forcing = match kv.raw("forcing.kind").as_deref() {
        None | Some("none") => ForcingConfig::None,
        Some("pulse") => ForcingConfig::Pulse(ForcingSpec {
            amplitude: kv.req("forcing.amplitude")?,
            region: parse_region("forcing.region", &kv.raw("forcing.region").unwrap_or_else(|| "everywhere".into()))?,
        }),
        Some("manufactured") => {
            if !matches!((&initial, &model), (InitialCondition::Wave(_), ModelConfig::Cubic(_))) {
                return Err(invalid("forcing.kind", "manufactured forcing needs the cubic model and a wave initial condition"));
            }
            if materials.sigma.len() != 1 {
                return Err(invalid("forcing.kind", "manufactured forcing needs a single material"));
            }
            ForcingConfig::Manufactured
        }
        Some(o) => Err(invalid("forcing.kind", format!("expected none, pulse or manufactured; got `{o}`")))?,
    };
    let dt = kv.positive("time.dt", None)?;
    let t_end: f64 = kv.req("time.t_end")?;
    if !(t_end >= 0.0) {
        return Err(invalid("time.t_end", "must be non-negative"));
    }
    let n = (t_end / dt).round();
    if (n * dt - t_end).abs() > 1e-9 * t_end.max(1.0) {
        return Err(invalid("time.t_end", "must be an integer multiple of time.dt"));
    }
    let eta0 = kv.positive("dg.eta0", Some(10.0))?;
    let quad_order = kv.opt("dg.quad_order")?;
    let d = AdaptConfig::default();
    let adapt = AdaptConfig {
        p_max: kv.get("adapt.p_max", d.p_max)?,
        period: kv.get("adapt.period", d.period)?,
        full_sweep_period: kv.get("adapt.full_sweep", d.full_sweep_period)?,
        mode: match kv.raw("adapt.mode").as_deref() {
            None | Some("min") => ThresholdMode::Min,
            Some("mean") => ThresholdMode::Mean,
            Some(o) => return Err(invalid("adapt.mode", format!("expected `min` or `mean`, got `{o}`"))),
        },
        marking: match kv.raw("adapt.marking").as_deref() {
            None | Some("full") => MarkingIndicator::Full,
            Some("jump") => MarkingIndicator::JumpOnly,
            Some("residual") => MarkingIndicator::ResidualOnly,
            Some(o) => return Err(invalid("adapt.marking", format!("expected full, jump or residual; got `{o}`"))),
        },
        cluster_on_initial: parse_bool("adapt.cluster_on_initial", kv.raw("adapt.cluster_on_initial"), false)?,
    };
    if adapt.p_max < 1 || adapt.p_max > crate::basis::MAX_DEGREE {
        return Err(invalid("adapt.p_max", format!("must lie in 1..={}", crate::basis::MAX_DEGREE)));
    }
    if adapt.period < 1 {
        return Err(invalid("adapt.period", "must be at least 1"));
    }
    if adapt.full_sweep_period < 1 {
        return Err(invalid("adapt.full_sweep", "must be at least 1"));
    }
    let adaptive = parse_bool("adapt.enabled", kv.raw("adapt.enabled"), true)?;
    let threshold = match kv.opt::<f64>("adapt.threshold")? {
        Some(t) if !(t > 0.0) => return Err(invalid("adapt.threshold", "must be positive")),
        t => t,
    };
    let p_init: Option<usize> = kv.opt("adapt.p_init")?;
    if let Some(p) = p_init {
        if p < 1 || p > adapt.p_max {
            return Err(invalid("adapt.p_init", "must lie in 1..=adapt.p_max"));
        }
    }
    let line = match kv.floats("output.line")? {
        None => None,
        Some(v) if v.len() == 5 && v[4] >= 2.0 && v[4].fract() == 0.0 => {
            Some(LineSample { from: Vec2::new(v[0], v[1]), to: Vec2::new(v[2], v[3]), n: v[4] as usize })
        }
        Some(_) => return Err(invalid("output.line", "expected `x0 y0 x1 y1 n` with n >= 2")),
    };
    let output = OutputConfig {
        dir: kv.raw("output.dir").map(|d| base.join(d)),
        snapshot_every: kv.get("output.snapshot_every", 0)?,
        line,
        record_times: kv.floats("output.record_times")?.unwrap_or_default(),
    };
    kv.finish()?;
    Ok(RunConfig {
        mesh,
        materials,
        model,
        coeffs,
        initial,
        forcing,
        dt,
        t_end,
        eta0,
        quad_order,
        p_init,
        adaptive,
        adapt,
        threshold,
        output,
    })
}

pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    parse_config_in(text, Path::new("."))
}

fn fmt_f(v: f64) -> String {
    format!("{v:?}")
}

fn fmt_region(r: &Region) -> String {
    match r {
        Region::Everywhere => "everywhere".into(),
        Region::Nowhere => "nowhere".into(),
        Region::Rect { min, max } => format!("rect {:?} {:?} {:?} {:?}", min.x, min.y, max.x, max.y),
        Region::Disk { center, radius } => format!("disk {:?} {:?} {:?}", center.x, center.y, radius),
        Region::Polygon(p) => {
            let mut s = String::from("polygon");
            for q in p {
                s += &format!(" {:?} {:?}", q.x, q.y);
            }
            s
        }
    }
}

/// Writes a configuration back in the text format; `parse_config` of the
/// result reproduces `cfg` (mesh paths are written as given).
pub fn to_text(cfg: &RunConfig) -> String {
    let mut o = Vec::<String>::new();
    let mut kv = |k: &str, v: String| o.push(format!("{k} = {v}"));
    match &cfg.mesh {
        MeshSource::File(p) => {
            kv("mesh.generator", "file".into());
            kv("mesh.file", p.display().to_string());
        }
        MeshSource::Voronoi(s) => {
            kv("mesh.generator", "voronoi".into());
            kv("mesh.min", format!("{:?} {:?}", s.min.x, s.min.y));
            kv("mesh.max", format!("{:?} {:?}", s.max.x, s.max.y));
            kv("mesh.cells", s.n_cells.to_string());
            if !s.interfaces.is_empty() {
                kv("mesh.interfaces", s.interfaces.iter().map(|x| fmt_f(*x)).collect::<Vec<_>>().join(" "));
            }
            kv("mesh.lloyd", s.lloyd.to_string());
            kv("mesh.seed", s.seed.to_string());
        }
        MeshSource::Structured { min, max, nx, ny } => {
            kv("mesh.generator", "structured".into());
            kv("mesh.min", format!("{:?} {:?}", min.x, min.y));
            kv("mesh.max", format!("{:?} {:?}", max.x, max.y));
            kv("mesh.nx", nx.to_string());
            kv("mesh.ny", ny.to_string());
        }
    }
    for (id, s) in &cfg.materials.sigma {
        kv(&format!("material.{id}"), format!("{:?} {:?} {:?}", s[(0, 0)], s[(0, 1)], s[(1, 1)]));
    }
    match &cfg.model {
        ModelConfig::Cubic(p) => {
            kv("model", "cubic".into());
            kv("cubic.a", fmt_f(p.a));
            kv("cubic.v_rest", fmt_f(p.v_rest));
            kv("cubic.v_thres", fmt_f(p.v_thres));
            kv("cubic.v_depol", fmt_f(p.v_depol));
        }
        ModelConfig::BarretoCressman { params, current_scale, initial } => {
            kv("model", "barreto-cressman".into());
            kv("bc.k_bath", fmt_f(params.k_bath));
            let form = match params.form {
                ConcentrationForm::Printed => "printed",
                ConcentrationForm::Cited => "cited",
            };
            kv("bc.form", form.into());
            kv("bc.current_scale", fmt_f(*current_scale));
            for (n, v) in ["s", "k", "c", "gs", "gk", "gc"].iter().zip(initial.to_array()) {
                kv(&format!("bc.init.{n}"), fmt_f(v));
            }
        }
    }
    kv("chi", fmt_f(cfg.coeffs.chi));
    kv("cm", fmt_f(cfg.coeffs.cm));
    match &cfg.initial {
        InitialCondition::Constant(v) => {
            kv("initial.kind", "constant".into());
            kv("initial.value", fmt_f(*v));
        }
        InitialCondition::Wave(w) => {
            kv("initial.kind", "wave".into());
            kv("initial.eps", fmt_f(w.eps));
            kv("initial.speed", fmt_f(w.speed));
            kv("initial.direction", format!("{:?} {:?}", w.direction.x, w.direction.y));
            kv("initial.x0", fmt_f(w.x0));
        }
        InitialCondition::DoubleWave(d) => {
            kv("initial.kind", "double-wave".into());
            kv("initial.x1", fmt_f(d.x1));
            kv("initial.x2", fmt_f(d.x2));
            kv("initial.eps1", fmt_f(d.eps1));
            kv("initial.eps2", fmt_f(d.eps2));
        }
        InitialCondition::Region { region, inside, outside } => {
            kv("initial.kind", "region".into());
            kv("initial.region", fmt_region(region));
            kv("initial.inside", fmt_f(*inside));
            kv("initial.outside", fmt_f(*outside));
        }
    }
    match &cfg.forcing {
        ForcingConfig::None => kv("forcing.kind", "none".into()),
        ForcingConfig::Pulse(f) => {
            kv("forcing.kind", "pulse".into());
            kv("forcing.amplitude", fmt_f(f.amplitude));
            kv("forcing.region", fmt_region(&f.region));
        }
        ForcingConfig::Manufactured => kv("forcing.kind", "manufactured".into()),
    }
    kv("time.dt", fmt_f(cfg.dt));
    kv("time.t_end", fmt_f(cfg.t_end));
    kv("dg.eta0", fmt_f(cfg.eta0));
    if let Some(q) = cfg.quad_order {
        kv("dg.quad_order", q.to_string());
    }
    kv("adapt.enabled", cfg.adaptive.to_string());
    kv("adapt.p_max", cfg.adapt.p_max.to_string());
    if let Some(p) = cfg.p_init {
        kv("adapt.p_init", p.to_string());
    }
    kv("adapt.period", cfg.adapt.period.to_string());
    kv("adapt.full_sweep", cfg.adapt.full_sweep_period.to_string());
    kv("adapt.mode", if cfg.adapt.mode == ThresholdMode::Min { "min" } else { "mean" }.into());
    let marking = match cfg.adapt.marking {
        MarkingIndicator::Full => "full",
        MarkingIndicator::JumpOnly => "jump",
        MarkingIndicator::ResidualOnly => "residual",
    };
    kv("adapt.marking", marking.into());
    kv("adapt.cluster_on_initial", cfg.adapt.cluster_on_initial.to_string());
    if let Some(t) = cfg.threshold {
        kv("adapt.threshold", fmt_f(t));
    }
    if let Some(d) = &cfg.output.dir {
        kv("output.dir", d.display().to_string());
    }
    kv("output.snapshot_every", cfg.output.snapshot_every.to_string());
    if let Some(l) = &cfg.output.line {
        kv("output.line", format!("{:?} {:?} {:?} {:?} {}", l.from.x, l.from.y, l.to.x, l.to.y, l.n));
    }
    if !cfg.output.record_times.is_empty() {
        kv("output.record_times", cfg.output.record_times.iter().map(|x| fmt_f(*x)).collect::<Vec<_>>().join(" "));
    }
    o.join("\n") + "\n"
}
