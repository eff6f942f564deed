use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use padg::analysis::{adaptive_vs_uniform_report, comparison_csv, convergence_csv, convergence_study, ConvergenceConfig};
use padg::config::{parse_config_in, RunConfig};
use padg::ionic::{integrate_0d, BarretoCressmanParams, ConcentrationForm, IonicState};
use padg::output::fmt_sig;
use padg::scenarios::{self, Scale};
use padg::simulation::{build_mesh, run_simulation};

#[derive(Parser)]
#[command(name = "padg", version, about = "p-adaptive polygonal DG solver for the monodomain equation")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation and write its snapshots and time series.
    Run {
        #[command(flatten)]
        src: Source,
        /// Output directory (overrides `output.dir`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Steps between VTK snapshots (overrides `output.snapshot_every`).
        #[arg(long)]
        snapshot_every: Option<usize>,
    },
    /// Energy-norm convergence of the manufactured traveling wave under uniform refinement.
    Convergence {
        /// Target element counts, coarse to fine.
        #[arg(long, value_delimiter = ',', default_value = "70,150,350,800")]
        cells: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        degrees: Vec<usize>,
        /// CSV destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Adaptive run against a uniform p_max run at the configured record times.
    Compare {
        #[command(flatten)]
        src: Source,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// 0D Barreto-Cressman trace as `t,v` CSV.
    Ode {
        #[arg(long, default_value_t = 8.0)]
        k_bath: f64,
        /// Forcing amplitude A.
        #[arg(long, default_value_t = 0.0)]
        amplitude: f64,
        #[arg(long, default_value_t = -50.0, allow_hyphen_values = true)]
        u0: f64,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        #[arg(long, default_value_t = 100.0)]
        t_end: f64,
        #[arg(long, value_enum, default_value_t = Form::Printed)]
        form: Form,
        /// Keep every n-th step in the CSV.
        #[arg(long, default_value_t = 10)]
        every: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print mesh statistics of a mesh file or of the mesh a configuration builds.
    MeshInfo {
        /// Mesh file; takes precedence over the configuration options.
        #[arg(long, conflicts_with_all = ["config", "scenario"])]
        mesh: Option<PathBuf>,
        #[command(flatten)]
        src: Source,
    },
    /// List the shipped scenarios.
    Scenarios,
}

#[derive(Args)]
struct Source {
    /// Configuration file.
    #[arg(long, conflicts_with = "scenario")]
    config: Option<PathBuf>,
    /// Shipped scenario name (see `padg scenarios`).
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long, default_value = "desk")]
    scale: String,
}

#[derive(Clone, Copy, ValueEnum)]
enum Form {
    Printed,
    Cited,
}

impl Source {
    fn load(&self) -> Result<RunConfig> {
        match (&self.config, &self.scenario) {
            (Some(p), _) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                let base = p.parent().unwrap_or(Path::new("."));
                Ok(parse_config_in(&text, base).with_context(|| format!("in {}", p.display()))?)
            }
            (None, Some(name)) => Ok(scenarios::instantiate(name, self.scale.parse::<Scale>()?)?),
            (None, None) => bail!("either --config or --scenario is required"),
        }
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Command::Run { src, out, snapshot_every } => {
            let mut cfg = src.load()?;
            if out.is_some() {
                cfg.output.dir = out;
            }
            if let Some(n) = snapshot_every {
                cfg.output.snapshot_every = n;
            }
            let s = run_simulation(&cfg)?;
            println!("steps       {}", s.steps);
            println!("final ndof  {}", s.final_ndof);
            println!("u range     [{}, {}]", fmt_sig(s.u_min), fmt_sig(s.u_max));
            if let Some(t) = s.threshold {
                println!("threshold   {}", fmt_sig(t));
            }
            println!("wall time   {:.2} s", s.wall_seconds);
        }
        Command::Convergence { cells, degrees, out } => {
            let c = ConvergenceConfig { cells, degrees, ..Default::default() };
            let rows = convergence_study(&c)?;
            emit(out.as_deref(), &convergence_csv(&rows))?;
        }
        Command::Compare { src, out } => {
            let cfg = src.load()?;
            if cfg.output.record_times.is_empty() {
                bail!("the configuration has no output.record times to compare at");
            }
            let (rows, _, _) = adaptive_vs_uniform_report(&cfg)?;
            emit(out.as_deref(), &comparison_csv(&rows))?;
        }
        Command::Ode { k_bath, amplitude, u0, dt, t_end, form, every, out } => {
            let form = match form {
                Form::Printed => ConcentrationForm::Printed,
                Form::Cited => ConcentrationForm::Cited,
            };
            let p = BarretoCressmanParams { k_bath, form, ..Default::default() };
            let tr = integrate_0d(&p, u0, IonicState::default(), dt, t_end, amplitude, every)?;
            let mut s = String::from("t,v\n");
            for (t, v) in tr.t.iter().zip(&tr.u) {
                s += &format!("{},{}\n", fmt_sig(*t), fmt_sig(*v));
            }
            emit(out.as_deref(), &s)?;
            let spikes: Vec<String> = tr.spikes.iter().map(|t| format!("{t:.3}")).collect();
            eprintln!("spikes at [{}] ms; {} gate clamps", spikes.join(", "), tr.clamp_events);
        }
        Command::MeshInfo { mesh, src } => {
            let m = match mesh {
                Some(p) => padg::mesh::load_mesh(&fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?)?,
                None => build_mesh(&src.load()?.mesh)?,
            };
            let mut labels: Vec<u32> = m.cell_material.clone();
            labels.sort_unstable();
            labels.dedup();
            println!("cells              {}", m.num_cells());
            println!("vertices           {}", m.vertices.len());
            println!("faces              {} ({} interior)", m.faces.len(), m.interior_face_count());
            println!("area               {}", fmt_sig(m.total_area()));
            println!("h_max              {}", fmt_sig(m.h_max()));
            println!("min face/diameter  {}", fmt_sig(m.min_face_to_diameter_ratio()));
            println!("materials          {labels:?}");
        }
        Command::Scenarios => {
            for s in scenarios::CATALOG {
                println!("{:<14} {}", s.name, s.summary);
            }
        }
    }
    Ok(())
}
