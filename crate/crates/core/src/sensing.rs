//! Forward model of the spatial-spectral coded imager.
//!
//! Snapshot `s` integrates the coded spectrum of every pixel along the band
//! axis, so a whole acquisition is the matrix product `y = H f (+ e)` with one
//! measurement column per pixel.

use std::path::Path;

use ndarray::{Array2, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::coding::CodingPattern;
use crate::datacube::{add_calibrated_noise, SpectralCube};
use crate::error::{Error, Result};
use crate::io::{read_f32_file, write_f32_file};

const MEASUREMENT_MAGIC: &str = "SICY";

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseSpec {
    None,
    /// White Gaussian noise whose total energy sits `snr_db` below the signal.
    GaussianSnr {
        snr_db: f64,
        seed: u64,
    },
}

/// Compressed acquisitions: `S x (M*N)`, column `j` belongs to pixel `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurements {
    y: Array2<f64>,
    rows: usize,
    cols: usize,
    pattern_id: String,
}

impl Measurements {
    pub fn new(
        y: Array2<f64>,
        rows: usize,
        cols: usize,
        pattern_id: impl Into<String>,
    ) -> Result<Self> {
        if y.ncols() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} measurement columns for a {rows}x{cols} grid",
                y.ncols()
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("measurements must be finite".into()));
        }
        Ok(Self {
            y,
            rows,
            cols,
            pattern_id: pattern_id.into(),
        })
    }

    /// Treats the cube itself as the measurement set (no compression).
    pub fn from_cube(cube: &SpectralCube) -> Self {
        Self {
            y: cube.data().clone(),
            rows: cube.rows(),
            cols: cube.cols(),
            pattern_id: "full-data".into(),
        }
    }

    pub fn y(&self) -> &Array2<f64> {
        &self.y
    }

    pub fn snapshots(&self) -> usize {
        self.y.nrows()
    }

    pub fn pixels(&self) -> usize {
        self.y.ncols()
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn pattern_id(&self) -> &str {
        &self.pattern_id
    }
}

fn apply_noise(y: &mut Array2<f64>, noise: NoiseSpec) -> Result<()> {
    match noise {
        NoiseSpec::None => Ok(()),
        NoiseSpec::GaussianSnr { snr_db, seed } => {
            if !snr_db.is_finite() {
                return Err(Error::InvalidArgument("snr_db must be finite".into()));
            }
            // one sequential stream over the whole matrix, independent of threading
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            add_calibrated_noise(y, snr_db, &mut rng);
            Ok(())
        }
    }
}

/// Short provenance tag: a hash of the pattern's text form.
pub fn pattern_id(p: &CodingPattern) -> String {
    // FNV-1a, stable across platforms and releases
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in crate::coding::pattern_to_string(p).bytes() {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    format!("{hash:016x}")
}

/// Shared-code acquisition `y = H f` plus optional noise.
pub fn sense(
    cube: &SpectralCube,
    pattern: &CodingPattern,
    noise: NoiseSpec,
) -> Result<Measurements> {
    if pattern.bands() != cube.bands() {
        return Err(Error::Dimension(format!(
            "pattern has {} bands, cube has {}",
            pattern.bands(),
            cube.bands()
        )));
    }
    let mut y = pattern.to_f64().dot(cube.data());
    apply_noise(&mut y, noise)?;
    Measurements::new(y, cube.rows(), cube.cols(), pattern_id(pattern))
}

/// General per-pixel coded acquisition: `masks[s]` is an `L x (M*N)` binary
/// array and `y[s, j] = sum_k masks[s][k, j] * f[k, j]`.
pub fn sense_pixelwise(
    cube: &SpectralCube,
    masks: &[Array2<u8>],
    noise: NoiseSpec,
) -> Result<Measurements> {
    let shape = cube.data().dim();
    if let Some((s, m)) = masks.iter().enumerate().find(|(_, m)| m.dim() != shape) {
        return Err(Error::Dimension(format!(
            "mask {s} is {:?}, cube is {shape:?}",
            m.dim()
        )));
    }
    let mut y = Array2::zeros((masks.len(), cube.pixels()));
    for (s, mask) in masks.iter().enumerate() {
        let mut row = y.row_mut(s);
        Zip::from(&mut row)
            .and(mask.columns())
            .and(cube.data().columns())
            .par_for_each(|out, m, f| {
                *out = m
                    .iter()
                    .zip(f.iter())
                    .filter(|(&code, _)| code != 0)
                    .map(|(_, v)| v)
                    .sum();
            });
    }
    apply_noise(&mut y, noise)?;
    Measurements::new(y, cube.rows(), cube.cols(), "pixelwise")
}

/// `10 log10(|clean|^2 / |noisy - clean|^2)`; `+inf` when the two are identical.
pub fn measured_snr(clean: &Measurements, noisy: &Measurements) -> Result<f64> {
    if clean.y().dim() != noisy.y().dim() {
        return Err(Error::Dimension(format!(
            "clean is {:?}, noisy is {:?}",
            clean.y().dim(),
            noisy.y().dim()
        )));
    }
    let signal: f64 = clean.y().iter().map(|v| v * v).sum();
    if signal == 0.0 {
        return Err(Error::InvalidArgument(
            "clean signal has zero energy".into(),
        ));
    }
    let noise: f64 = clean
        .y()
        .iter()
        .zip(noisy.y().iter())
        .map(|(a, b)| (b - a) * (b - a))
        .sum();
    if noise == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (signal / noise).log10())
}

/// Writes `SICY <M> <N> <S>\n` + snapshot-major little-endian f32.
pub fn save_measurements(m: &Measurements, path: &Path) -> Result<()> {
    write_f32_file(
        path,
        MEASUREMENT_MAGIC,
        [m.rows(), m.cols(), m.snapshots()],
        m.y().iter().copied(),
    )
}

pub fn load_measurements(path: &Path) -> Result<Measurements> {
    let ([rows, cols, snapshots], values) =
        read_f32_file(path, MEASUREMENT_MAGIC, "measurement file")?;
    let y = Array2::from_shape_vec((snapshots, rows * cols), values)
        .map_err(|e| Error::format("measurement file", e.to_string()))?
        .mapv(f64::from);
    Measurements::new(y, rows, cols, "file")
}
