//! Clustering of spectral-image pixels straight from compressive
//! measurements.
//!
//! The pipeline: design binary spectral codes ([`coding`]), acquire
//! `y = H f` ([`sensing`]), solve a low-rank self-representation of the
//! measurement columns with an optional subspace-structured penalty
//! ([`lrsr`]), cluster the resulting affinity spectrally ([`clustering`]) and
//! score against ground truth ([`metrics`]). The full cube is never
//! reconstructed.

pub mod clustering;
pub mod coding;
pub mod datacube;
pub mod error;
mod io;
pub mod linalg;
pub mod lrsr;
pub mod metrics;
pub mod sensing;

pub use clustering::{
    affinity_from, build_affinity, cluster_compressed, spectral_cluster, update_theta, Affinity,
    SegmentationResult,
};
pub use coding::{coherence_objective, gp_optimize, random_pattern, CodingPattern};
pub use datacube::{
    crop, generate_synthetic_scene, load_cube, load_labels, save_cube, save_labels, LabelMap,
    Layout, SpectralCube, SyntheticSceneSpec,
};
pub use error::{Error, Result};
pub use lrsr::{
    prox_l21, prox_weighted_l1, solve_lrr, solve_lrsr_ss, svt, CStep, SolverConfig, SolverState,
    Theta,
};
pub use metrics::{align_labels, score, ScoreReport};
pub use sensing::{measured_snr, sense, sense_pixelwise, Measurements, NoiseSpec};
