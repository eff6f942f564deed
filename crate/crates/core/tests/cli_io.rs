use std::fs;
use std::path::Path;

use padg::config::parse_config;
use padg::scenarios::{instantiate, Scale};
use padg::simulation::run_simulation;
use padg::{ConfigError, Error};

fn read_series(path: &Path) -> Vec<(f64, usize)> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,ndof"));
    lines
        .map(|l| {
            let (t, n) = l.split_once(',').unwrap();
            (t.parse().unwrap(), n.parse().unwrap())
        })
        .collect()
}

/// NDoF falls while the front leaves the domain and settles at 3·Nel. Single
/// samples fluctuate with the adaptation period, so the property is stated on
/// 0.5 ms window maxima.
#[test]
fn ndof_evolution_decreases_as_the_wave_exits() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = instantiate("test1b", Scale::Desk).unwrap();
    cfg.output.dir = Some(dir.path().to_path_buf());
    cfg.output.line = None;
    let wave = cfg.exact_wave().unwrap();
    let s = run_simulation(&cfg).unwrap();
    let series = read_series(&dir.path().join("ndof_evolution.csv"));
    assert_eq!(series.len(), s.steps + 1);
    let n_el = 300;
    assert_eq!(series[0].1, 15 * n_el);

    let exit = (1.0 - wave.front_position(0.0)) / wave.speed;
    let mut maxima = Vec::new();
    let mut w = exit - 3.0;
    while w < cfg.t_end {
        let m = series.iter().filter(|(t, _)| *t >= w && *t < w + 0.5).map(|p| p.1).max().unwrap();
        maxima.push(m);
        w += 0.5;
    }
    let settled = maxima.iter().position(|&m| m == 3 * n_el).expect("NDoF reaches 3 Nel");
    assert!(maxima[..=settled].windows(2).all(|p| p[1] < p[0]), "{maxima:?}");
    assert!(maxima[settled..].iter().all(|&m| m == 3 * n_el), "{maxima:?}");
    assert_eq!(s.final_ndof, 3 * n_el);
}

#[test]
fn identical_runs_write_identical_files() {
    let mut cfg = instantiate("test2b", Scale::Desk).unwrap();
    cfg.t_end = 0.25;
    cfg.output.snapshot_every = 25;
    let mut outputs = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        cfg.output.dir = Some(dir.path().to_path_buf());
        run_simulation(&cfg).unwrap();
        let mut files: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().path()).collect();
        files.sort();
        let contents: Vec<_> = files.iter().map(|p| (p.file_name().unwrap().to_owned(), fs::read(p).unwrap())).collect();
        outputs.push(contents);
    }
    assert_eq!(outputs[0].len(), 3 + 3 + 3);
    assert!(outputs[0] == outputs[1]);
}

#[test]
fn missing_material_names_the_label() {
    let text = "
mesh.generator = voronoi
mesh.min = 0 0
mesh.max = 2 1
mesh.cells = 20
mesh.interfaces = 1
material.0 = 0.1
model = cubic
initial.kind = constant
initial.value = -85
time.dt = 0.01
time.t_end = 0.1
";
    let cfg = parse_config(text).unwrap();
    match run_simulation(&cfg) {
        Err(Error::Config(ConfigError::MissingMaterial(1))) => {}
        other => panic!("expected missing material 1, got {other:?}"),
    }
}

#[test]
fn every_csv_has_a_header() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = instantiate("two-material", Scale::Desk).unwrap();
    cfg.t_end = 0.05;
    cfg.output.dir = Some(dir.path().to_path_buf());
    cfg.output.snapshot_every = 10;
    run_simulation(&cfg).unwrap();
    for e in fs::read_dir(dir.path()).unwrap() {
        let p = e.unwrap().path();
        if p.extension().is_some_and(|x| x == "csv") {
            let text = fs::read_to_string(&p).unwrap();
            let header = text.lines().next().unwrap();
            assert!(header.starts_with("t,") || header.starts_with("s,"), "{}: {header}", p.display());
            let cols = header.split(',').count();
            assert!(text.lines().skip(1).all(|l| l.split(',').count() == cols), "{}", p.display());
        }
    }
}
