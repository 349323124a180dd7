mod failure;
mod run;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use failure::Failure;
use settings::Settings;

/// Spectral-image pixel clustering from compressive measurements.
///
/// Every setting can also come from a flat `key = value` file given with
/// `--config`; flags override the file.
#[derive(Parser)]
#[command(name = "sicluster", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` settings file
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: out)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SolverFlags {
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    outer_iters: Option<usize>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    /// exact | linearized
    #[arg(long)]
    c_step: Option<String>,
    /// Largest scene the dense solver accepts (default 4096)
    #[arg(long)]
    max_pixels: Option<usize>,
    /// Record the objective at every solver iteration
    #[arg(long)]
    trace: bool,
}

#[derive(Args)]
struct SceneFlags {
    #[arg(long)]
    rows: Option<usize>,
    #[arg(long)]
    cols: Option<usize>,
    #[arg(long)]
    bands: Option<usize>,
    /// Number of classes / clusters
    #[arg(long)]
    kappa: Option<usize>,
    #[arg(long)]
    subspace_dim: Option<usize>,
    /// Noise added to the synthetic scene
    #[arg(long)]
    snr_db: Option<f64>,
    /// blocks | voronoi
    #[arg(long)]
    layout: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic union-of-subspaces scene with ground truth
    Synth {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        scene: SceneFlags,
    },
    /// Design a coding pattern and report its coherence
    Codegen {
        #[command(flatten)]
        common: Common,
        /// optimal | random
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        snapshots: Option<usize>,
        #[arg(long)]
        bandwidth: Option<usize>,
        #[arg(long)]
        bands: Option<usize>,
        /// Take the band count from this cube
        #[arg(long)]
        cube: Option<PathBuf>,
    },
    /// Apply a coding pattern to a cube
    Sense {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        cube: Option<PathBuf>,
        #[arg(long)]
        pattern: Option<PathBuf>,
        /// Ground truth to crop alongside the cube
        #[arg(long)]
        labels: Option<PathBuf>,
        /// row,col,rows,cols
        #[arg(long)]
        crop: Option<String>,
        /// Measurement noise level
        #[arg(long)]
        noise_db: Option<f64>,
    },
    /// Cluster measurements (or a full cube) into kappa groups
    Cluster {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        measurements: Option<PathBuf>,
        /// Cluster the full cube instead of measurements
        #[arg(long)]
        cube: Option<PathBuf>,
        #[arg(long)]
        crop: Option<String>,
        #[arg(long)]
        kappa: Option<usize>,
        #[command(flatten)]
        solver: SolverFlags,
    },
    /// Score a label map against ground truth
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        pred: Option<PathBuf>,
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Optimal codes vs random codes vs full data on one scene
    Pipeline {
        #[command(flatten)]
        common: Common,
        /// Use this cube instead of a synthetic scene
        #[arg(long)]
        cube: Option<PathBuf>,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        crop: Option<String>,
        #[command(flatten)]
        scene: SceneFlags,
        #[arg(long)]
        snapshots: Option<usize>,
        #[arg(long)]
        bandwidth: Option<usize>,
        #[arg(long)]
        noise_db: Option<f64>,
        #[command(flatten)]
        solver: SolverFlags,
    },
}

type Flags = Vec<(&'static str, Option<String>)>;

fn s<T: ToString>(v: Option<T>) -> Option<String> {
    v.map(|v| v.to_string())
}

fn p(v: Option<PathBuf>) -> Option<String> {
    v.map(|v| v.display().to_string())
}

impl Common {
    fn flags(self) -> (Option<PathBuf>, Flags) {
        (
            self.config,
            vec![("seed", s(self.seed)), ("out", p(self.out))],
        )
    }
}

impl SolverFlags {
    fn flags(self) -> Flags {
        vec![
            ("lambda", s(self.lambda)),
            ("alpha", s(self.alpha)),
            ("outer_iters", s(self.outer_iters)),
            ("rho", s(self.rho)),
            ("max_iter", s(self.max_iter)),
            ("tol", s(self.tol)),
            ("c_step", self.c_step),
            ("max_pixels", s(self.max_pixels)),
            ("trace", self.trace.then(|| "true".to_string())),
        ]
    }
}

impl SceneFlags {
    fn flags(self) -> Flags {
        vec![
            ("rows", s(self.rows)),
            ("cols", s(self.cols)),
            ("bands", s(self.bands)),
            ("kappa", s(self.kappa)),
            ("subspace_dim", s(self.subspace_dim)),
            ("snr_db", s(self.snr_db)),
            ("layout", self.layout),
        ]
    }
}

fn dispatch(command: Command) -> Result<(), Failure> {
    let with = |common: Common, mut extra: Flags| -> Result<Settings, Failure> {
        let (config, mut flags) = common.flags();
        flags.append(&mut extra);
        Settings::merge(config.as_deref(), flags)
    };
    match command {
        Command::Synth { common, scene } => run::synth(with(common, scene.flags())?),
        Command::Codegen {
            common,
            mode,
            snapshots,
            bandwidth,
            bands,
            cube,
        } => run::codegen(with(
            common,
            vec![
                ("mode", mode),
                ("snapshots", s(snapshots)),
                ("bandwidth", s(bandwidth)),
                ("bands", s(bands)),
                ("cube", p(cube)),
            ],
        )?),
        Command::Sense {
            common,
            cube,
            pattern,
            labels,
            crop,
            noise_db,
        } => run::sense_cmd(with(
            common,
            vec![
                ("cube", p(cube)),
                ("pattern", p(pattern)),
                ("labels", p(labels)),
                ("crop", crop),
                ("noise_db", s(noise_db)),
            ],
        )?),
        Command::Cluster {
            common,
            measurements,
            cube,
            crop,
            kappa,
            solver,
        } => {
            let mut flags = vec![
                ("measurements", p(measurements)),
                ("cube", p(cube)),
                ("crop", crop),
                ("kappa", s(kappa)),
            ];
            flags.extend(solver.flags());
            run::cluster(with(common, flags)?)
        }
        Command::Eval {
            common,
            pred,
            truth,
        } => run::eval(with(common, vec![("pred", p(pred)), ("truth", p(truth))])?),
        Command::Pipeline {
            common,
            cube,
            labels,
            crop,
            scene,
            snapshots,
            bandwidth,
            noise_db,
            solver,
        } => {
            let mut flags = vec![
                ("cube", p(cube)),
                ("labels", p(labels)),
                ("crop", crop),
                ("snapshots", s(snapshots)),
                ("bandwidth", s(bandwidth)),
                ("noise_db", s(noise_db)),
            ];
            flags.extend(scene.flags());
            flags.extend(solver.flags());
            run::pipeline(with(common, flags)?)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("{failure}");
            ExitCode::from(failure.code as u8)
        }
    }
}
