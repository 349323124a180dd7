//! The six subcommands. Each writes into one output directory and finishes
//! with `manifest.txt`: the resolved settings and a SHA-256 per artifact.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::result::Result;
use std::time::Instant;

use sha2::{Digest, Sha256};
use sicluster::clustering::write_cluster_map;
use sicluster::coding::{load_pattern, save_pattern};
use sicluster::datacube::save_labels;
use sicluster::lrsr::trace_csv;
use sicluster::metrics::{comparison_csv, comparison_table};
use sicluster::sensing::{load_measurements, save_measurements};
use sicluster::*;

use crate::failure::Failure;
use crate::settings::Settings;

/// Output directory plus the artifacts written to it, in order.
pub struct Run {
    mode: &'static str,
    dir: PathBuf,
    artifacts: Vec<String>,
}

impl Run {
    pub fn new(mode: &'static str, settings: &mut Settings) -> Result<Self, Failure> {
        let dir = PathBuf::from(settings.get("out", "out".to_string())?);
        fs::create_dir_all(&dir).map_err(|e| Failure::from(e).context(&dir))?;
        Ok(Self {
            mode,
            dir,
            artifacts: Vec::new(),
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.artifacts.push(name.to_string());
        self.dir.join(name)
    }

    fn text(&mut self, name: &str, contents: &str) -> Result<PathBuf, Failure> {
        let path = self.path(name);
        fs::write(&path, contents).map_err(|e| Failure::from(e).context(&path))?;
        Ok(path)
    }

    pub fn finish(self, settings: &Settings) -> Result<(), Failure> {
        let mut manifest = format!("# sicluster {}\n[config]\n", self.mode);
        for (key, value) in settings.resolved() {
            writeln!(manifest, "{key} = {value}").unwrap();
        }
        manifest.push_str("[artifacts]\n");
        for name in &self.artifacts {
            let bytes = fs::read(self.dir.join(name))?;
            writeln!(manifest, "{}  {name}", hex::encode(Sha256::digest(&bytes))).unwrap();
        }
        let path = self.dir.join("manifest.txt");
        fs::write(&path, manifest).map_err(|e| Failure::from(e).context(&path))?;
        Ok(())
    }
}

impl Failure {
    fn context(mut self, path: &Path) -> Self {
        self.message = format!("{}: {}", path.display(), self.message);
        self
    }
}

fn scene_spec(s: &mut Settings) -> Result<SyntheticSceneSpec, Failure> {
    Ok(SyntheticSceneSpec {
        rows: s.get("rows", 24)?,
        cols: s.get("cols", 24)?,
        bands: s.get("bands", 32)?,
        classes: s.get("kappa", 3)?,
        subspace_dim: s.get("subspace_dim", 2)?,
        snr_db: s.opt("snr_db")?,
        seed: s.get("seed", 0)?,
        layout: s.get("layout", Layout::Blocks)?,
    })
}

fn solver_config(s: &mut Settings) -> Result<SolverConfig, Failure> {
    let d = SolverConfig::default();
    let cfg = SolverConfig {
        lambda: s.get("lambda", d.lambda)?,
        alpha: s.get("alpha", d.alpha)?,
        mu0: s.get("mu0", d.mu0)?,
        rho: s.get("rho", d.rho)?,
        mu_max: s.get("mu_max", d.mu_max)?,
        c_step: s.get("c_step", d.c_step)?,
        eta: s.opt("eta")?,
        tol: s.get("tol", d.tol)?,
        max_iter: s.get("max_iter", d.max_iter)?,
        outer_iters: s.get("outer_iters", d.outer_iters)?,
        trace: s.get("trace", d.trace)?,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Top-left corner and size.
type Window = ((usize, usize), (usize, usize));

/// `row,col,rows,cols`
fn crop_window(s: &mut Settings) -> Result<Option<Window>, Failure> {
    let Some(raw) = s.opt::<String>("crop")? else {
        return Ok(None);
    };
    let parts: Vec<usize> = raw
        .split(',')
        .map(|t| t.trim().parse())
        .collect::<Result<_, _>>()
        .map_err(|_| Failure::config(format!("crop '{raw}' must be row,col,rows,cols")))?;
    match parts[..] {
        [r, c, h, w] => Ok(Some(((r, c), (h, w)))),
        _ => Err(Failure::config(format!(
            "crop '{raw}' must be row,col,rows,cols"
        ))),
    }
}

fn check_pixel_cap(s: &mut Settings, rows: usize, cols: usize) -> Result<(), Failure> {
    let cap: usize = s.get("max_pixels", 4096)?;
    let n = rows * cols;
    if n > cap {
        let mib = (5 * n * n * 8) >> 20;
        let side = (cap as f64).sqrt() as usize;
        return Err(Failure::too_large(format!(
            "{rows}x{cols} = {n} pixels exceeds max_pixels = {cap} (the solver keeps several dense {n}x{n} matrices, about {mib} MiB); \
             crop the scene, e.g. crop = 0,0,{side},{side}, or raise max_pixels"
        )));
    }
    Ok(())
}

/// Optional crop of a cube and its labels; unlabeled cubes get a dummy map.
fn apply_crop(
    s: &mut Settings,
    cube: SpectralCube,
    labels: Option<LabelMap>,
) -> Result<(SpectralCube, Option<LabelMap>), Failure> {
    let Some((origin, size)) = crop_window(s)? else {
        return Ok((cube, labels));
    };
    let map = match &labels {
        Some(l) => l.clone(),
        None => LabelMap::new(vec![0; cube.pixels()], 1, cube.rows(), cube.cols())?,
    };
    let (cube, map) = crop(&cube, &map, origin, size)?;
    Ok((cube, labels.map(|_| map)))
}

fn noise(s: &mut Settings, seed: u64) -> Result<NoiseSpec, Failure> {
    Ok(match s.opt("noise_db")? {
        Some(snr_db) => NoiseSpec::GaussianSnr { snr_db, seed },
        None => NoiseSpec::None,
    })
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len();
    if m % 2 == 1 {
        v[m / 2]
    } else {
        0.5 * (v[m / 2 - 1] + v[m / 2])
    }
}

/// Coherence of 50 random patterns of the same shape.
fn random_baseline(
    bands: usize,
    snapshots: usize,
    bandwidth: usize,
    seed: u64,
) -> Result<f64, Failure> {
    let values = (0..50u64)
        .map(|i| {
            let p = random_pattern(
                bands,
                snapshots,
                bandwidth,
                seed.wrapping_mul(1_000).wrapping_add(1 + i),
            )?;
            Ok(coherence_objective(&p))
        })
        .collect::<Result<Vec<_>, sicluster::Error>>()?;
    Ok(median(values))
}

pub fn synth(mut s: Settings) -> Result<(), Failure> {
    let spec = scene_spec(&mut s)?;
    let mut run = Run::new("synth", &mut s)?;
    let (cube, labels) = generate_synthetic_scene(&spec)?;
    save_cube(&cube, &run.path("cube.sic"))?;
    save_labels(&labels, &run.path("labels.sicl"))?;
    write_cluster_map(&labels, &run.path("truth.ppm"))?;
    println!(
        "scene {}x{}x{} with {} classes written to {}",
        spec.rows,
        spec.cols,
        spec.bands,
        spec.classes,
        run.dir.display()
    );
    run.finish(&s)
}

pub fn codegen(mut s: Settings) -> Result<(), Failure> {
    let bands: usize = match s.opt::<PathBuf>("cube")? {
        Some(_) => load_cube(&s.path("cube")?)?.bands(),
        None => s.get("bands", 32)?,
    };
    let snapshots: usize = s.get("snapshots", 8)?;
    let bandwidth: usize = s.get("bandwidth", 8)?;
    let mode: String = s.get("mode", "optimal".to_string())?;
    let seed: u64 = s.get("seed", 0)?;
    let pattern = match mode.as_str() {
        "optimal" => gp_optimize(bands, snapshots, bandwidth, seed)?,
        "random" => random_pattern(bands, snapshots, bandwidth, seed)?,
        other => {
            return Err(Failure::config(format!(
                "mode must be optimal or random, got '{other}'"
            )))
        }
    };
    pattern.validate()?;
    let mut run = Run::new("codegen", &mut s)?;
    save_pattern(&pattern, &run.path("pattern.sicp"))?;
    let f = coherence_objective(&pattern);
    let baseline = random_baseline(bands, snapshots, bandwidth, seed)?;
    let report = format!("f={f}\nrandom_median={baseline}\n");
    print!("{report}");
    run.text("coherence.txt", &report)?;
    run.finish(&s)
}

pub fn sense_cmd(mut s: Settings) -> Result<(), Failure> {
    let cube = load_cube(&s.path("cube")?)?;
    let pattern = load_pattern(&s.path("pattern")?)?;
    let labels = match s.opt::<PathBuf>("labels")? {
        Some(_) => Some(load_labels(&s.path("labels")?)?),
        None => None,
    };
    let (cube, labels) = apply_crop(&mut s, cube, labels)?;
    let seed: u64 = s.get("seed", 0)?;
    let noise = noise(&mut s, seed)?;
    let y = sense(&cube, &pattern, noise)?;
    let mut run = Run::new("sense", &mut s)?;
    save_measurements(&y, &run.path("measurements.sicy"))?;
    if let Some(labels) = labels {
        save_labels(&labels, &run.path("labels.sicl"))?;
    }
    println!(
        "{} snapshots x {} pixels (pattern {}) written to {}",
        y.snapshots(),
        y.pixels(),
        y.pattern_id(),
        run.dir.display()
    );
    run.finish(&s)
}

fn write_segmentation(
    run: &mut Run,
    prefix: &str,
    seg: &SegmentationResult,
) -> Result<(), Failure> {
    save_labels(&seg.labels, &run.path(&format!("{prefix}labels.sicl")))?;
    write_cluster_map(&seg.labels, &run.path(&format!("{prefix}clusters.ppm")))?;
    let last = seg
        .rounds
        .last()
        .expect("cluster_compressed reports every round");
    run.text(&format!("{prefix}trace.csv"), &trace_csv(&last.trace))?;
    let mut rounds = String::from("round,iterations,converged,r1,r2,objective,structured_norm\n");
    for (r, (report, norm)) in seg.rounds.iter().zip(&seg.objective_trace).enumerate() {
        writeln!(
            rounds,
            "{r},{},{},{:e},{:e},{:.12e},{:.12e}",
            report.iterations, report.converged, report.r1, report.r2, report.objective, norm
        )
        .unwrap();
    }
    run.text(&format!("{prefix}rounds.csv"), &rounds)?;
    Ok(())
}

pub fn cluster(mut s: Settings) -> Result<(), Failure> {
    let y = if s.has("measurements") || !s.has("cube") {
        load_measurements(&s.path("measurements")?)?
    } else {
        let cube = load_cube(&s.path("cube")?)?;
        let (cube, _) = apply_crop(&mut s, cube, None)?;
        Measurements::from_cube(&cube)
    };
    check_pixel_cap(&mut s, y.rows(), y.cols())?;
    let kappa: usize = s.required("kappa")?;
    let cfg = solver_config(&mut s)?;
    let seed: u64 = s.get("seed", 0)?;
    let mut run = Run::new("cluster", &mut s)?;
    let start = Instant::now();
    let seg = cluster_compressed(&y, kappa, &cfg, seed)?;
    let elapsed = start.elapsed().as_secs_f64();
    write_segmentation(&mut run, "", &seg)?;
    let last = seg.rounds.last().expect("at least one round");
    println!(
        "{} pixels into {kappa} clusters in {elapsed:.2} s; final round {} iterations, {}",
        y.pixels(),
        last.iterations,
        if last.converged {
            "converged"
        } else {
            "stopped at max_iter"
        }
    );
    run.finish(&s)
}

pub fn eval(mut s: Settings) -> Result<(), Failure> {
    let pred = load_labels(&s.path("pred")?)?;
    let truth = load_labels(&s.path("truth")?)?;
    let report = score(&pred, &truth)?;
    let mut run = Run::new("eval", &mut s)?;
    run.text("report.csv", &report.to_csv())?;
    print!("{}", comparison_table(&[("prediction", &report)]));
    run.finish(&s)
}

pub fn pipeline(mut s: Settings) -> Result<(), Failure> {
    let (cube, truth) = if s.has("cube") {
        let cube = load_cube(&s.path("cube")?)?;
        let labels = load_labels(&s.path("labels")?)?;
        let (cube, labels) = apply_crop(&mut s, cube, Some(labels))?;
        (cube, labels.expect("labels were supplied"))
    } else {
        let spec = scene_spec(&mut s)?;
        generate_synthetic_scene(&spec)?
    };
    check_pixel_cap(&mut s, cube.rows(), cube.cols())?;
    let kappa: usize = s.get("kappa", truth.classes())?;
    let snapshots: usize = s.get("snapshots", 8)?;
    let bandwidth: usize = s.get("bandwidth", 8.min(cube.bands()))?;
    let cfg = solver_config(&mut s)?;
    let seed: u64 = s.get("seed", 0)?;
    let noise = noise(&mut s, seed)?;
    let mut run = Run::new("pipeline", &mut s)?;
    write_cluster_map(&truth, &run.path("truth.ppm"))?;

    let mut reports = Vec::new();
    for (name, prefix) in [
        ("Random-codes-LRSR-SS", "random_"),
        ("Optimal-codes-LRSR-SS", "optimal_"),
        ("Full-data-LRSR-SS", "full_"),
    ] {
        let start = Instant::now();
        let y = match prefix {
            "full_" => Measurements::from_cube(&cube),
            _ => {
                let pattern = if prefix == "optimal_" {
                    gp_optimize(cube.bands(), snapshots, bandwidth, seed)?
                } else {
                    random_pattern(cube.bands(), snapshots, bandwidth, seed)?
                };
                save_pattern(&pattern, &run.path(&format!("{prefix}pattern.sicp")))?;
                sense(&cube, &pattern, noise)?
            }
        };
        let seg = cluster_compressed(&y, kappa, &cfg, seed)?;
        let elapsed = start.elapsed().as_secs_f64();
        write_segmentation(&mut run, prefix, &seg)?;
        let mut report = score(&seg.labels, &truth)?;
        report.elapsed_s = elapsed;
        println!("{name}: OA {:.2}% in {elapsed:.2} s", 100.0 * report.oa);
        reports.push((name, report));
    }
    let rows: Vec<(&str, &ScoreReport)> = reports.iter().map(|(n, r)| (*n, r)).collect();
    run.text("comparison.csv", &comparison_csv(&rows))?;
    let table = comparison_table(&rows);
    run.text("comparison.txt", &table)?;
    print!("{table}");
    run.finish(&s)
}
