//! Affinity construction, normalized spectral clustering, and the alternation
//! between segmentation and the structured representation solver.

use std::fs;
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::datacube::LabelMap;
use crate::error::{Error, Result};
use crate::linalg::symmetric_eigen;
use crate::lrsr::{solve_lrsr_ss, SolverConfig, SolverState, Theta, TraceRow, OBJECTIVE_TAIL};
use crate::sensing::Measurements;

const MAX_RESTARTS: usize = 100;
const MAX_LLOYD_ITERS: usize = 300;

/// Symmetric, nonnegative similarity graph with an empty diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct Affinity {
    w: Array2<f64>,
}

impl Affinity {
    pub fn new(w: Array2<f64>) -> Result<Self> {
        let n = w.nrows();
        if w.ncols() != n {
            return Err(Error::Dimension(format!(
                "affinity is {:?}, must be square",
                w.dim()
            )));
        }
        for i in 0..n {
            if w[[i, i]] != 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "affinity diagonal {i} is nonzero"
                )));
            }
            for j in 0..i {
                let v = w[[i, j]];
                if !(v >= 0.0 && v.is_finite()) || v != w[[j, i]] {
                    return Err(Error::InvalidArgument(format!(
                        "affinity must be finite, nonnegative and symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(Self { w })
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.w
    }

    pub fn len(&self) -> usize {
        self.w.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }
}

/// `w = |z| + |z|^T` with the diagonal cleared.
pub fn build_affinity(state: &SolverState) -> Affinity {
    affinity_from(&state.z)
}

pub fn affinity_from(z: &Array2<f64>) -> Affinity {
    let n = z.nrows();
    let mut w = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..i {
            let v = z[[i, j]].abs() + z[[j, i]].abs();
            w[[i, j]] = v;
            w[[j, i]] = v;
        }
    }
    let w = Affinity { w };
    debug_assert!(Affinity::new(w.w.clone()).is_ok());
    w
}

/// Summary of one solver call inside [`cluster_compressed`].
#[derive(Debug, Clone, PartialEq)]
pub struct RoundReport {
    pub iterations: usize,
    pub r1: f64,
    pub r2: f64,
    pub converged: bool,
    pub max_abs_diag_z: f64,
    pub objective: f64,
    /// Objective of the last iterations of the round, oldest first.
    pub objective_tail: Vec<f64>,
    pub trace: Vec<TraceRow>,
}

impl RoundReport {
    pub fn from_state(state: &SolverState) -> Self {
        let tail_start = state.trace.len().saturating_sub(OBJECTIVE_TAIL);
        Self {
            iterations: state.iter,
            r1: state.r1,
            r2: state.r2,
            converged: state.converged,
            max_abs_diag_z: state.z.diag().iter().fold(0.0, |m, v| m.max(v.abs())),
            objective: state.objective,
            objective_tail: state.trace[tail_start..]
                .iter()
                .filter_map(|r| r.objective)
                .collect(),
            trace: state.trace.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationResult {
    pub labels: LabelMap,
    /// Row-normalized spectral embedding, one row per pixel.
    pub embedding: Array2<f64>,
    /// `|Theta(labels_r) . c_r|_1` for every round `r`: the coefficient mass
    /// that crosses the round's own segmentation.
    pub objective_trace: Vec<f64>,
    pub rounds: Vec<RoundReport>,
}

/// Normalized spectral clustering of an affinity into `k` groups.
///
/// Builds `I - D^-1/2 W D^-1/2` (zero-degree vertices use `D_ii = 1`), embeds
/// each vertex by the eigenvectors of the `k` smallest eigenvalues, normalizes
/// rows, and runs k-means with farthest-point seeding from up to 100 random
/// first centers; the lowest inertia wins, ties to the earlier restart.
/// Cluster ids are then ordered by decreasing size (ties by decreasing total
/// degree), which makes the output independent of the vertex order whenever
/// the partition is.
pub fn spectral_cluster(w: &Affinity, k: usize, seed: u64) -> Result<SegmentationResult> {
    let n = w.len();
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!(
            "cluster count {k} outside [1, {n}]"
        )));
    }
    let degree: Vec<f64> = w.matrix().sum_axis(Axis(1)).to_vec();
    let inv_sqrt: Vec<f64> = degree
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 1.0 })
        .collect();
    let mut lap = Array2::<f64>::eye(n);
    for ((i, j), v) in lap.indexed_iter_mut() {
        *v -= inv_sqrt[i] * w.matrix()[[i, j]] * inv_sqrt[j];
    }
    let (_, vectors) = symmetric_eigen(&lap)?;
    let mut embedding = vectors.slice(ndarray::s![.., ..k]).to_owned();
    for mut row in embedding.rows_mut() {
        let norm = row.dot(&row).sqrt();
        if norm > 0.0 {
            row /= norm;
        }
    }

    let connected: Vec<usize> = (0..n).filter(|&i| degree[i] > 0.0).collect();
    let members: Vec<usize> = if connected.len() >= k {
        connected
    } else {
        (0..n).collect()
    };
    let points = embedding.select(Axis(0), &members);
    let (member_labels, _) = kmeans(&points, k, seed);

    let mut labels = vec![usize::MAX; n];
    for (&i, &l) in members.iter().zip(&member_labels) {
        labels[i] = l;
    }
    // isolated vertices follow their nearest connected neighbour in the embedding
    for i in 0..n {
        if labels[i] != usize::MAX {
            continue;
        }
        let row = embedding.row(i);
        let nearest = members
            .iter()
            .map(|&j| {
                let d: f64 = row
                    .iter()
                    .zip(embedding.row(j).iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                (d, j)
            })
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
            .map(|(_, j)| j)
            .expect("members is nonempty");
        labels[i] = labels[nearest];
    }

    let labels = canonical_relabel(&labels, k, &degree);
    Ok(SegmentationResult {
        labels: LabelMap::from_vec(labels, k)?,
        embedding,
        objective_trace: Vec::new(),
        rounds: Vec::new(),
    })
}

fn canonical_relabel(labels: &[usize], k: usize, degree: &[f64]) -> Vec<usize> {
    let mut size = vec![0usize; k];
    let mut mass = vec![0.0f64; k];
    for (i, &l) in labels.iter().enumerate() {
        size[l] += 1;
        mass[l] += degree[i];
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        size[b]
            .cmp(&size[a])
            .then(mass[b].total_cmp(&mass[a]))
            .then(a.cmp(&b))
    });
    let mut rename = vec![0; k];
    for (new, &old) in order.iter().enumerate() {
        rename[old] = new;
    }
    labels.iter().map(|&l| rename[l]).collect()
}

fn sq_dist(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Best-of-restarts Lloyd iterations; returns labels and inertia.
pub(crate) fn kmeans(points: &Array2<f64>, k: usize, seed: u64) -> (Vec<usize>, f64) {
    let m = points.nrows();
    let restarts = MAX_RESTARTS.min(m).max(1);
    (0..restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            let first = rng.random_range(0..m);
            let (labels, inertia) = lloyd(points, farthest_point_seeds(points, k, first));
            (inertia, r, labels)
        })
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .map(|(inertia, _, labels)| (labels, inertia))
        .expect("at least one restart")
}

fn farthest_point_seeds(points: &Array2<f64>, k: usize, first: usize) -> Array2<f64> {
    let m = points.nrows();
    let mut centers = Array2::zeros((k, points.ncols()));
    centers.row_mut(0).assign(&points.row(first));
    let mut nearest: Vec<f64> = (0..m)
        .map(|i| sq_dist(points.row(i), points.row(first)))
        .collect();
    for c in 1..k {
        let mut pick = 0;
        for i in 1..m {
            if nearest[i] > nearest[pick] {
                pick = i;
            }
        }
        centers.row_mut(c).assign(&points.row(pick));
        for i in 0..m {
            nearest[i] = nearest[i].min(sq_dist(points.row(i), points.row(pick)));
        }
    }
    centers
}

fn assign(points: &Array2<f64>, centers: &Array2<f64>, labels: &mut [usize]) -> (bool, f64) {
    let mut changed = false;
    let mut inertia = 0.0;
    for (i, label) in labels.iter_mut().enumerate() {
        let mut best = (f64::INFINITY, 0);
        for c in 0..centers.nrows() {
            let d = sq_dist(points.row(i), centers.row(c));
            // strict comparison keeps the lowest centroid index on ties
            if d < best.0 {
                best = (d, c);
            }
        }
        if *label != best.1 {
            *label = best.1;
            changed = true;
        }
        inertia += best.0;
    }
    (changed, inertia)
}

fn lloyd(points: &Array2<f64>, mut centers: Array2<f64>) -> (Vec<usize>, f64) {
    let (m, k) = (points.nrows(), centers.nrows());
    let mut labels = vec![usize::MAX; m];
    let mut inertia = assign(points, &centers, &mut labels).1;
    for _ in 0..MAX_LLOYD_ITERS {
        let mut sums = Array2::<f64>::zeros(centers.raw_dim());
        let mut counts = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            sums.row_mut(l).scaled_add(1.0, &points.row(i));
            counts[l] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                let mean = &sums.row(c) / counts[c] as f64;
                centers.row_mut(c).assign(&mean);
            } else {
                // re-seed an empty cluster at the point worst served by its centroid
                let far = (0..m)
                    .map(|i| (sq_dist(points.row(i), centers.row(labels[i])), i))
                    .max_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)))
                    .map(|(_, i)| i)
                    .expect("points is nonempty");
                centers.row_mut(c).assign(&points.row(far));
            }
        }
        let (changed, new_inertia) = assign(points, &centers, &mut labels);
        inertia = new_inertia;
        if !changed {
            break;
        }
    }
    (labels, inertia)
}

/// Pair mask of a segmentation: `t_ij = 1` iff pixels `i` and `j` carry different labels.
pub fn update_theta(labels: &LabelMap) -> Theta {
    let l = labels.labels();
    let t = Array2::from_shape_fn((l.len(), l.len()), |(i, j)| u8::from(l[i] != l[j]));
    Theta::new(t).expect("label-equality mask is binary, symmetric, zero-diagonal")
}

/// Full compressed-domain pipeline: an unstructured solve and segmentation,
/// then `cfg.outer_iters` rounds of structured re-solve with the mask of the
/// previous segmentation.
pub fn cluster_compressed(
    y: &Measurements,
    k: usize,
    cfg: &SolverConfig,
    seed: u64,
) -> Result<SegmentationResult> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least two clusters, got {k}"
        )));
    }
    if k > y.pixels() {
        return Err(Error::InvalidArgument(format!(
            "{k} clusters for {} pixels",
            y.pixels()
        )));
    }
    let mut theta = Theta::zeros(y.pixels());
    let mut trace = Vec::with_capacity(cfg.outer_iters + 1);
    let mut rounds = Vec::with_capacity(cfg.outer_iters + 1);
    let mut result = None;
    for _ in 0..=cfg.outer_iters {
        let state = solve_lrsr_ss(y, &theta, cfg)?;
        let seg = spectral_cluster(&build_affinity(&state), k, seed)?;
        let next = update_theta(&seg.labels);
        trace.push(next.structured_norm(&state.c));
        rounds.push(RoundReport::from_state(&state));
        result = Some(seg);
        if !theta.is_zero() && next == theta {
            // the solver is deterministic: every further round repeats this one
            while rounds.len() <= cfg.outer_iters {
                trace.push(trace[trace.len() - 1]);
                rounds.push(rounds[rounds.len() - 1].clone());
            }
            break;
        }
        theta = next;
    }
    let mut result = result.expect("at least one round runs");
    result.labels = result.labels.reshaped(y.rows(), y.cols())?;
    result.objective_trace = trace;
    result.rounds = rounds;
    Ok(result)
}

/// Sixteen well-separated colours; masked pixels are drawn black.
pub const PALETTE: [[u8; 3]; 16] = [
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
    [250, 190, 212],
    [0, 128, 128],
    [220, 190, 255],
    [170, 110, 40],
    [255, 250, 200],
    [128, 0, 0],
    [170, 255, 195],
];

/// Binary PPM (P6) rendering of a label map, one pixel per label.
pub fn cluster_map_ppm(labels: &LabelMap) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", labels.cols(), labels.rows()).into_bytes();
    for (i, &l) in labels.labels().iter().enumerate() {
        let rgb = if labels.is_masked(i) {
            [0, 0, 0]
        } else {
            PALETTE[l % PALETTE.len()]
        };
        out.extend_from_slice(&rgb);
    }
    out
}

pub fn write_cluster_map(labels: &LabelMap, path: &Path) -> Result<()> {
    fs::write(path, cluster_map_ppm(labels)).map_err(|e| crate::error::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn block_affinity(sizes: &[usize], noise: f64, seed: u64) -> (Affinity, Vec<usize>) {
        let truth: Vec<usize> = sizes
            .iter()
            .enumerate()
            .flat_map(|(b, &s)| std::iter::repeat_n(b, s))
            .collect();
        let n = truth.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..i {
                let v = if truth[i] == truth[j] {
                    1.0
                } else if rng.random_bool(0.05) {
                    noise
                } else {
                    0.0
                };
                w[[i, j]] = v;
                w[[j, i]] = v;
            }
        }
        (Affinity::new(w).unwrap(), truth)
    }

    fn same_partition(a: &[usize], b: &[usize]) -> bool {
        (0..a.len()).all(|i| (0..a.len()).all(|j| (a[i] == a[j]) == (b[i] == b[j])))
    }

    #[test]
    fn affinity_examples() {
        let zero = affinity_from(&Array2::zeros((3, 3)));
        assert!(zero.matrix().iter().all(|&v| v == 0.0));
        let w = affinity_from(&array![[0.0, 1.0], [-2.0, 0.0]]);
        assert_eq!(w.matrix(), &array![[0.0, 3.0], [3.0, 0.0]]);
    }

    #[test]
    fn affinity_is_symmetric_for_random_z() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z = Array2::from_shape_simple_fn((6, 6), || rng.random_range(-1.0..1.0));
        let w = affinity_from(&z);
        assert_eq!(w.matrix(), &w.matrix().t().to_owned());
        assert!(w.matrix().diag().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn affinity_validation() {
        assert!(Affinity::new(array![[0.0, 1.0], [2.0, 0.0]]).is_err());
        assert!(Affinity::new(array![[1.0, 0.0], [0.0, 0.0]]).is_err());
        assert!(Affinity::new(array![[0.0, -1.0], [-1.0, 0.0]]).is_err());
    }

    #[test]
    fn two_blocks_recovered_exactly() {
        let (w, truth) = block_affinity(&[6, 4], 0.0, 1);
        let seg = spectral_cluster(&w, 2, 0).unwrap();
        assert!(same_partition(seg.labels.labels(), &truth));
    }

    #[test]
    fn single_cluster_is_all_zero() {
        let (w, _) = block_affinity(&[5, 5], 0.0, 1);
        let seg = spectral_cluster(&w, 1, 0).unwrap();
        assert!(seg.labels.labels().iter().all(|&l| l == 0));
    }

    #[test]
    fn noisy_three_blocks_recovered() {
        let (w, truth) = block_affinity(&[12, 9, 15], 0.01, 7);
        let seg = spectral_cluster(&w, 3, 4).unwrap();
        assert!(same_partition(seg.labels.labels(), &truth));
    }

    #[test]
    fn zero_eigenvalue_multiplicity_counts_blocks() {
        let (w, _) = block_affinity(&[4, 5, 3, 6], 0.0, 2);
        let n = w.len();
        let degree = w.matrix().sum_axis(Axis(1));
        let lap = Array2::from_shape_fn((n, n), |(i, j)| {
            f64::from(u8::from(i == j)) - w.matrix()[[i, j]] / (degree[i] * degree[j]).sqrt()
        });
        let (vals, _) = symmetric_eigen(&lap).unwrap();
        assert_eq!(vals.iter().filter(|v| v.abs() < 1e-8).count(), 4);
    }

    #[test]
    fn isolated_vertex_gets_a_label() {
        let (w, _) = block_affinity(&[4, 4], 0.0, 1);
        let mut big = Array2::zeros((9, 9));
        big.slice_mut(ndarray::s![..8, ..8]).assign(w.matrix());
        let seg = spectral_cluster(&Affinity::new(big).unwrap(), 2, 0).unwrap();
        assert!(seg.labels.labels()[8] < 2);
        assert!(same_partition(
            &seg.labels.labels()[..8],
            &[0, 0, 0, 0, 1, 1, 1, 1]
        ));
    }

    #[test]
    fn cluster_count_is_validated() {
        let (w, _) = block_affinity(&[2, 2], 0.0, 1);
        assert!(spectral_cluster(&w, 0, 0).is_err());
        assert!(spectral_cluster(&w, 5, 0).is_err());
    }

    #[test]
    fn theta_examples() {
        let same = update_theta(&LabelMap::from_vec(vec![1, 1, 1], 2).unwrap());
        assert!(same.is_zero());
        let pair = update_theta(&LabelMap::from_vec(vec![0, 1], 2).unwrap());
        assert_eq!(pair.matrix(), &array![[0, 1], [1, 0]]);
    }

    #[test]
    fn ppm_header_and_size() {
        let labels = LabelMap::new(vec![0, 1, 2, 3, 4, 5], 6, 2, 3).unwrap();
        let ppm = cluster_map_ppm(&labels);
        let header = b"P6\n3 2\n255\n";
        assert_eq!(&ppm[..header.len()], header);
        assert_eq!(ppm.len(), header.len() + 18);
        assert_eq!(&ppm[header.len()..header.len() + 3], &PALETTE[0]);
    }
}
