//! Spectral cubes, ground-truth label maps, and synthetic union-of-subspaces scenes.
//!
//! A cube of `M x N` pixels and `L` bands is stored as an `L x (M*N)` matrix:
//! every column is the spectral signature of one pixel, and pixels are ordered
//! row-major over the spatial grid. Every other module relies on that single
//! flattening.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{s, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::io::{parse_header, read_f32_file, write_f32_file};

const CUBE_MAGIC: &str = "SIC1";
const LABEL_MAGIC: &str = "SICL";

/// Spatial-spectral source density, one column per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralCube {
    data: Array2<f64>,
    rows: usize,
    cols: usize,
}

impl SpectralCube {
    /// Wraps an `L x (rows*cols)` matrix. Entries must be finite and nonnegative.
    pub fn new(data: Array2<f64>, rows: usize, cols: usize) -> Result<Self> {
        if data.ncols() != rows * cols {
            return Err(Error::Dimension(format!(
                "cube has {} columns but shape {rows}x{cols} needs {}",
                data.ncols(),
                rows * cols
            )));
        }
        if data.nrows() == 0 || rows == 0 || cols == 0 {
            return Err(Error::Dimension("cube dimensions must be positive".into()));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "cube entries must be finite and nonnegative, found {v}"
            )));
        }
        Ok(Self { data, rows, cols })
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array2<f64> {
        self.data
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn bands(&self) -> usize {
        self.data.nrows()
    }

    pub fn pixels(&self) -> usize {
        self.rows * self.cols
    }
}

/// Per-pixel class labels; masked pixels carry no ground truth.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    labels: Vec<usize>,
    classes: usize,
    mask: Option<Vec<bool>>,
    rows: usize,
    cols: usize,
}

impl LabelMap {
    pub fn new(labels: Vec<usize>, classes: usize, rows: usize, cols: usize) -> Result<Self> {
        Self::with_mask(labels, classes, None, rows, cols)
    }

    /// `mask[i] == true` marks pixel `i` as unlabeled; its label value is ignored.
    pub fn with_mask(
        labels: Vec<usize>,
        classes: usize,
        mask: Option<Vec<bool>>,
        rows: usize,
        cols: usize,
    ) -> Result<Self> {
        if classes == 0 {
            return Err(Error::InvalidArgument(
                "label map needs at least one class".into(),
            ));
        }
        if labels.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} labels for a {rows}x{cols} grid",
                labels.len()
            )));
        }
        if let Some(m) = &mask {
            if m.len() != labels.len() {
                return Err(Error::Dimension(format!(
                    "mask has {} entries, labels have {}",
                    m.len(),
                    labels.len()
                )));
            }
        }
        let masked = |i: usize| mask.as_ref().is_some_and(|m| m[i]);
        let mut labels = labels;
        for (i, l) in labels.iter_mut().enumerate() {
            if masked(i) {
                *l = 0;
            } else if *l >= classes {
                return Err(Error::InvalidArgument(format!(
                    "label {l} at pixel {i} outside [0, {classes})"
                )));
            }
        }
        Ok(Self {
            labels,
            classes,
            mask,
            rows,
            cols,
        })
    }

    /// Labels without a mask on a `1 x n` grid, handy for non-image data.
    pub fn from_vec(labels: Vec<usize>, classes: usize) -> Result<Self> {
        let n = labels.len();
        Self::new(labels, classes, 1, n)
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn mask(&self) -> Option<&[bool]> {
        self.mask.as_deref()
    }

    pub fn is_masked(&self, i: usize) -> bool {
        self.mask.as_ref().is_some_and(|m| m[i])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Same labels reinterpreted on another grid of equal pixel count.
    pub fn reshaped(mut self, rows: usize, cols: usize) -> Result<Self> {
        if rows * cols != self.labels.len() {
            return Err(Error::Dimension(format!(
                "cannot reshape {} labels to {rows}x{cols}",
                self.labels.len()
            )));
        }
        self.rows = rows;
        self.cols = cols;
        Ok(self)
    }
}

/// Spatial arrangement of classes in a synthetic scene.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    /// Classes occupy consecutive runs of the row-major pixel order.
    Blocks,
    /// Each class owns the Voronoi cell of a random seed pixel.
    Voronoi,
}

impl std::str::FromStr for Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "blocks" => Ok(Layout::Blocks),
            "voronoi" => Ok(Layout::Voronoi),
            other => Err(Error::InvalidArgument(format!("unknown layout {other:?}"))),
        }
    }
}

impl std::fmt::Display for Layout {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Layout::Blocks => "blocks",
            Layout::Voronoi => "voronoi",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSceneSpec {
    pub rows: usize,
    pub cols: usize,
    pub bands: usize,
    pub classes: usize,
    pub subspace_dim: usize,
    pub snr_db: Option<f64>,
    pub seed: u64,
    pub layout: Layout,
}

impl SyntheticSceneSpec {
    fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 || self.bands == 0 {
            return Err(Error::InvalidArgument(
                "scene dimensions must be positive".into(),
            ));
        }
        if self.subspace_dim == 0 || self.subspace_dim >= self.bands {
            return Err(Error::InvalidArgument(format!(
                "subspace_dim must lie in [1, {}), got {}",
                self.bands, self.subspace_dim
            )));
        }
        if self.classes == 0 || self.classes > self.rows * self.cols {
            return Err(Error::InvalidArgument(format!(
                "class count {} must lie in [1, {}]",
                self.classes,
                self.rows * self.cols
            )));
        }
        if let Some(snr) = self.snr_db {
            if !snr.is_finite() {
                return Err(Error::InvalidArgument("snr_db must be finite".into()));
            }
        }
        Ok(())
    }
}

/// Per-class orthonormal basis with nonnegative entries.
///
/// Orthonormal nonnegative vectors must have disjoint supports, so each
/// class splits a random permutation of the bands into `dim` groups. Any
/// nonnegative combination is then nonnegative and stays exactly in the span.
fn nonnegative_basis(bands: usize, dim: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let mut order: Vec<usize> = (0..bands).collect();
    order.shuffle(rng);
    let width = bands / dim;
    let mut basis = Array2::zeros((bands, dim));
    for d in 0..dim {
        let support = &order[d * width..(d + 1) * width];
        let mut norm = 0.0;
        for &k in support {
            let v: f64 = rng.sample::<f64, _>(StandardNormal).abs() + 1e-3;
            basis[[k, d]] = v;
            norm += v * v;
        }
        let norm = norm.sqrt();
        for &k in support {
            basis[[k, d]] /= norm;
        }
    }
    basis
}

fn layout_labels(spec: &SyntheticSceneSpec, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = spec.rows * spec.cols;
    match spec.layout {
        Layout::Blocks => (0..n).map(|j| j * spec.classes / n).collect(),
        Layout::Voronoi => {
            let mut pixels: Vec<usize> = (0..n).collect();
            pixels.shuffle(rng);
            let seeds: Vec<(f64, f64)> = pixels[..spec.classes]
                .iter()
                .map(|&p| ((p / spec.cols) as f64, (p % spec.cols) as f64))
                .collect();
            (0..n)
                .map(|j| {
                    let (r, c) = ((j / spec.cols) as f64, (j % spec.cols) as f64);
                    let mut best = (f64::INFINITY, 0);
                    for (k, &(sr, sc)) in seeds.iter().enumerate() {
                        let d = (r - sr).powi(2) + (c - sc).powi(2);
                        if d < best.0 {
                            best = (d, k);
                        }
                    }
                    best.1
                })
                .collect()
        }
    }
}

/// Draws a union-of-subspaces scene: every class is a `subspace_dim`
/// dimensional subspace of the band space, pixels are nonnegative combinations
/// with coefficients uniform in `[0.2, 1.0]`.
pub fn generate_synthetic_scene(spec: &SyntheticSceneSpec) -> Result<(SpectralCube, LabelMap)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let labels = layout_labels(spec, &mut rng);
    let bases: Vec<Array2<f64>> = (0..spec.classes)
        .map(|_| nonnegative_basis(spec.bands, spec.subspace_dim, &mut rng))
        .collect();

    let n = spec.rows * spec.cols;
    let mut data = Array2::<f64>::zeros((spec.bands, n));
    for (j, &class) in labels.iter().enumerate() {
        let basis = &bases[class];
        for d in 0..spec.subspace_dim {
            let coeff: f64 = rng.random_range(0.2..=1.0);
            let mut col = data.column_mut(j);
            col.scaled_add(coeff, &basis.column(d));
        }
    }
    data.mapv_inplace(|v| v.max(0.0));

    if let Some(snr_db) = spec.snr_db {
        add_calibrated_noise(&mut data, snr_db, &mut rng);
        data.mapv_inplace(|v| v.max(0.0));
    }

    let cube = SpectralCube::new(data, spec.rows, spec.cols)?;
    let labels = LabelMap::new(labels, spec.classes, spec.rows, spec.cols)?;
    Ok((cube, labels))
}

/// Adds white Gaussian noise scaled so that the signal-to-noise energy ratio
/// of the whole matrix is exactly `snr_db`.
pub(crate) fn add_calibrated_noise<R: Rng>(data: &mut Array2<f64>, snr_db: f64, rng: &mut R) {
    let signal: f64 = data.iter().map(|v| v * v).sum();
    let noise: Array2<f64> =
        Array2::from_shape_simple_fn(data.raw_dim(), || rng.sample(StandardNormal));
    let raw: f64 = noise.iter().map(|v| v * v).sum();
    if raw == 0.0 || signal == 0.0 {
        return;
    }
    let scale = (signal / raw / 10f64.powf(snr_db / 10.0)).sqrt();
    data.scaled_add(scale, &noise);
}

/// Cuts a `size = (rows, cols)` window at `origin = (row, col)` out of a cube and its labels.
pub fn crop(
    cube: &SpectralCube,
    labels: &LabelMap,
    origin: (usize, usize),
    size: (usize, usize),
) -> Result<(SpectralCube, LabelMap)> {
    if labels.len() != cube.pixels() || labels.rows() != cube.rows() {
        return Err(Error::Dimension(format!(
            "labels are {}x{}, cube is {}x{}",
            labels.rows(),
            labels.cols(),
            cube.rows(),
            cube.cols()
        )));
    }
    let (r0, c0) = origin;
    let (h, w) = size;
    if h == 0 || w == 0 || r0 + h > cube.rows() || c0 + w > cube.cols() {
        return Err(Error::InvalidArgument(format!(
            "crop window {h}x{w} at ({r0},{c0}) exceeds {}x{} image",
            cube.rows(),
            cube.cols()
        )));
    }
    let index = |r: usize, c: usize| (r0 + r) * cube.cols() + c0 + c;
    let mut data = Array2::zeros((cube.bands(), h * w));
    let mut lab = Vec::with_capacity(h * w);
    let mut mask = labels.mask().map(|_| Vec::with_capacity(h * w));
    for r in 0..h {
        for c in 0..w {
            let src = index(r, c);
            data.column_mut(r * w + c).assign(&cube.data().column(src));
            lab.push(labels.labels()[src]);
            if let Some(m) = mask.as_mut() {
                m.push(labels.is_masked(src));
            }
        }
    }
    Ok((
        SpectralCube::new(data, h, w)?,
        LabelMap::with_mask(lab, labels.classes(), mask, h, w)?,
    ))
}

/// Reads a cube file: `SIC1 <M> <N> <L>\n` then band-major little-endian f32.
pub fn load_cube(path: &Path) -> Result<SpectralCube> {
    let ([rows, cols, bands], values) = read_f32_file(path, CUBE_MAGIC, "cube file")?;
    if rows == 0 || cols == 0 || bands == 0 {
        return Err(Error::format("cube file", "zero dimension in header"));
    }
    if let Some(v) = values.iter().find(|v| **v < 0.0) {
        return Err(Error::format("cube file", format!("negative radiance {v}")));
    }
    let data = Array2::from_shape_vec((bands, rows * cols), values)
        .expect("payload length checked against header")
        .mapv(f64::from);
    SpectralCube::new(data, rows, cols)
}

/// Writes a cube in the `SIC1` format. Values are stored as f32, so the
/// round trip is bit-exact for any cube whose entries are f32-representable
/// (in particular any cube that was itself loaded from disk).
pub fn save_cube(cube: &SpectralCube, path: &Path) -> Result<()> {
    write_f32_file(
        path,
        CUBE_MAGIC,
        [cube.rows(), cube.cols(), cube.bands()],
        cube.data().iter().copied(),
    )
}

/// Reads `SICL <M> <N> <k>\n` followed by `M*N` integers; `-1` marks an unlabeled pixel.
pub fn load_labels(path: &Path) -> Result<LabelMap> {
    const WHAT: &str = "label file";
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.splitn(2, '\n');
    let header = lines.next().unwrap_or_default();
    let [rows, cols, classes] = parse_header(header, LABEL_MAGIC, WHAT)?;
    let body = lines.next().unwrap_or_default();
    let mut labels = Vec::with_capacity(rows * cols);
    let mut mask = vec![false; rows * cols];
    let mut any_masked = false;
    for tok in body.split_ascii_whitespace() {
        let v: i64 = tok
            .parse()
            .map_err(|_| Error::format(WHAT, format!("bad label {tok:?}")))?;
        if labels.len() == rows * cols {
            return Err(Error::format(WHAT, "more labels than the header declares"));
        }
        match v {
            -1 => {
                mask[labels.len()] = true;
                any_masked = true;
                labels.push(0);
            }
            v if v >= 0 && (v as usize) < classes => labels.push(v as usize),
            v => {
                return Err(Error::format(
                    WHAT,
                    format!("label {v} outside [0, {classes}) and not -1"),
                ))
            }
        }
    }
    if labels.len() != rows * cols {
        return Err(Error::format(
            WHAT,
            format!("{} labels, header declares {}", labels.len(), rows * cols),
        ));
    }
    LabelMap::with_mask(labels, classes, any_masked.then_some(mask), rows, cols)
}

pub fn save_labels(labels: &LabelMap, path: &Path) -> Result<()> {
    let mut out = format!(
        "{LABEL_MAGIC} {} {} {}\n",
        labels.rows(),
        labels.cols(),
        labels.classes()
    );
    for r in 0..labels.rows() {
        let row = (0..labels.cols()).map(|c| {
            let i = r * labels.cols() + c;
            if labels.is_masked(i) {
                -1
            } else {
                labels.labels()[i] as i64
            }
        });
        let mut first = true;
        for v in row {
            if !first {
                out.push(' ');
            }
            first = false;
            write!(out, "{v}").expect("writing to a String cannot fail");
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Columns of `data` belonging to `class`, in pixel order.
pub fn class_block(data: &Array2<f64>, labels: &LabelMap, class: usize) -> Array2<f64> {
    let idx: Vec<usize> = (0..labels.len())
        .filter(|&i| !labels.is_masked(i) && labels.labels()[i] == class)
        .collect();
    let mut block = Array2::zeros((data.nrows(), idx.len()));
    for (k, &j) in idx.iter().enumerate() {
        block.slice_mut(s![.., k]).assign(&data.column(j));
    }
    block
}
