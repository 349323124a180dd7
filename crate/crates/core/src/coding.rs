//! Binary spectral coding patterns for the multi-snapshot imager.
//!
//! Row `s` of the `S x L` matrix is the code applied to every pixel at
//! snapshot `s`; it is nonzero only inside a contiguous window of `bandwidth`
//! bands. The quality of a pattern is measured by its coherence objective,
//! the off-diagonal energy of both Gram matrices `H^T H` and `H H^T`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::io::parse_header;

const PATTERN_MAGIC: &str = "SICP";
const MAX_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodingPattern {
    h: Array2<u8>,
    windows: Vec<(usize, usize)>,
    bandwidth: usize,
}

impl CodingPattern {
    /// Builds a pattern and checks every invariant.
    pub fn new(h: Array2<u8>, windows: Vec<(usize, usize)>, bandwidth: usize) -> Result<Self> {
        let p = Self {
            h,
            windows,
            bandwidth,
        };
        p.validate()?;
        Ok(p)
    }

    /// `S = L`, `bandwidth = 1`: every snapshot reads exactly one band.
    pub fn identity(bands: usize) -> Self {
        Self {
            h: Array2::from_shape_fn((bands, bands), |(i, j)| u8::from(i == j)),
            windows: (0..bands).map(|k| (k, k)).collect(),
            bandwidth: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (snapshots, bands) = self.h.dim();
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.bandwidth == 0 || self.bandwidth > bands {
            return bad(format!("bandwidth {} outside [1, {bands}]", self.bandwidth));
        }
        if self.windows.len() != snapshots {
            return bad(format!(
                "{} windows for {snapshots} snapshots",
                self.windows.len()
            ));
        }
        for (s, &(lo, hi)) in self.windows.iter().enumerate() {
            if hi < lo || hi - lo + 1 != self.bandwidth || hi >= bands {
                return bad(format!(
                    "snapshot {s}: window [{lo}, {hi}] is not {} bands inside [0, {bands})",
                    self.bandwidth
                ));
            }
            for (k, &v) in self.h.row(s).iter().enumerate() {
                if v > 1 {
                    return bad(format!("snapshot {s}, band {k}: entry {v} is not binary"));
                }
                if v == 1 && (k < lo || k > hi) {
                    return bad(format!(
                        "snapshot {s}: band {k} is open outside window [{lo}, {hi}]"
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn matrix(&self) -> &Array2<u8> {
        &self.h
    }

    /// Code as a real matrix for the sensing product.
    pub fn to_f64(&self) -> Array2<f64> {
        self.h.mapv(f64::from)
    }

    pub fn windows(&self) -> &[(usize, usize)] {
        &self.windows
    }

    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    pub fn snapshots(&self) -> usize {
        self.h.nrows()
    }

    pub fn bands(&self) -> usize {
        self.h.ncols()
    }

    /// Number of snapshots that open each band.
    pub fn band_coverage(&self) -> Vec<u32> {
        (0..self.bands())
            .map(|k| self.h.column(k).iter().map(|&v| u32::from(v)).sum())
            .collect()
    }
}

/// Off-diagonal Frobenius energy of `H^T H` plus that of `H H^T`.
pub fn coherence_objective(p: &CodingPattern) -> f64 {
    let h = p.matrix().mapv(|v| v as i64);
    let band_gram = h.t().dot(&h);
    let snap_gram = h.dot(&h.t());
    let offdiag = |g: &Array2<i64>| -> i64 {
        g.indexed_iter()
            .filter(|((i, j), _)| i != j)
            .map(|(_, v)| v * v)
            .sum()
    };
    (offdiag(&band_gram) + offdiag(&snap_gram)) as f64
}

fn check_dims(bands: usize, snapshots: usize, bandwidth: usize) -> Result<()> {
    if bands == 0 || snapshots == 0 {
        return Err(Error::InvalidArgument(
            "pattern needs at least one band and one snapshot".into(),
        ));
    }
    if bandwidth == 0 || bandwidth > bands {
        return Err(Error::InvalidArgument(format!(
            "bandwidth {bandwidth} outside [1, {bands}]"
        )));
    }
    Ok(())
}

/// Uniform window start, Bernoulli(1/2) entries inside it, redrawn while empty.
fn random_row<R: Rng>(bands: usize, bandwidth: usize, rng: &mut R) -> (Vec<u8>, (usize, usize)) {
    loop {
        let start = rng.random_range(0..=bands - bandwidth);
        let mut row = vec![0u8; bands];
        for v in &mut row[start..start + bandwidth] {
            *v = u8::from(rng.random_bool(0.5));
        }
        if row.contains(&1) {
            return (row, (start, start + bandwidth - 1));
        }
    }
}

fn assemble(rows: Vec<Vec<u8>>, windows: Vec<(usize, usize)>, bandwidth: usize) -> CodingPattern {
    let bands = rows[0].len();
    let flat: Vec<u8> = rows.into_iter().flatten().collect();
    let h = Array2::from_shape_vec((windows.len(), bands), flat).expect("rows share one length");
    CodingPattern {
        h,
        windows,
        bandwidth,
    }
}

/// Conventional random code: every snapshot gets an independent random window
/// and Bernoulli(1/2) entries.
pub fn random_pattern(
    bands: usize,
    snapshots: usize,
    bandwidth: usize,
    seed: u64,
) -> Result<CodingPattern> {
    check_dims(bands, snapshots, bandwidth)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (rows, windows) = (0..snapshots)
        .map(|_| random_row(bands, bandwidth, &mut rng))
        .unzip();
    Ok(assemble(rows, windows, bandwidth))
}

/// How many distinct nonzero rows fit the window constraint, saturating.
fn distinct_row_capacity(bands: usize, bandwidth: usize) -> u128 {
    if bandwidth >= 100 {
        return u128::MAX;
    }
    let full = (1u128 << bandwidth) - 1;
    if bandwidth == bands {
        full
    } else {
        full.saturating_add(((bands - bandwidth) as u128).saturating_mul(1u128 << (bandwidth - 1)))
    }
}

/// Greedy-pursuit pattern design.
///
/// Snapshot 0 is a random windowed row. Each later snapshot places its window
/// where the bands opened so far are least covered (ties uniform at random),
/// then opens bands inside the window: the `ceil(bandwidth/2)` most covered
/// bands stay closed, and a Bernoulli(1/2) count of ones (at least one) is
/// placed on the least covered remaining bands. The result keeps band
/// coverage as even as the window allows.
///
/// Patterns with repeated rows (or, for `S <= L`, rank-deficient ones) are
/// redrawn, at most 100 times.
pub fn gp_optimize(
    bands: usize,
    snapshots: usize,
    bandwidth: usize,
    seed: u64,
) -> Result<CodingPattern> {
    check_dims(bands, snapshots, bandwidth)?;
    if (snapshots as u128) > distinct_row_capacity(bands, bandwidth) {
        return Err(Error::Infeasible(format!(
            "{snapshots} distinct nonzero rows do not exist for L={bands}, bandwidth={bandwidth}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_ATTEMPTS {
        let p = gp_attempt(bands, snapshots, bandwidth, &mut rng);
        if has_distinct_rows(&p) && (snapshots > bands || full_row_rank(&p)) {
            debug_assert!(p.validate().is_ok());
            return Ok(p);
        }
    }
    Err(Error::Infeasible(format!(
        "no pattern with {snapshots} distinct, independent rows after {MAX_ATTEMPTS} attempts \
         (L={bands}, bandwidth={bandwidth})"
    )))
}

fn gp_attempt(
    bands: usize,
    snapshots: usize,
    bandwidth: usize,
    rng: &mut ChaCha8Rng,
) -> CodingPattern {
    let (first, first_window) = random_row(bands, bandwidth, rng);
    let mut coverage: Vec<u32> = first.iter().map(|&v| u32::from(v)).collect();
    let mut rows = vec![first];
    let mut windows = vec![first_window];

    let closed = bandwidth.div_ceil(2);
    let open_slots = (bandwidth - closed).max(1);

    for _ in 1..snapshots {
        let scores: Vec<u32> = (0..=bands - bandwidth)
            .map(|start| coverage[start..start + bandwidth].iter().sum())
            .collect();
        let best = *scores.iter().min().expect("at least one window start");
        let ties: Vec<usize> = (0..scores.len()).filter(|&k| scores[k] == best).collect();
        let start = *ties.choose(rng).expect("argmin is nonempty");

        // least covered first, ties in random order
        let mut order: Vec<usize> = (start..start + bandwidth).collect();
        order.shuffle(rng);
        order.sort_by_key(|&k| coverage[k]);

        let ones = loop {
            let n = (0..open_slots).filter(|_| rng.random_bool(0.5)).count();
            if n > 0 {
                break n;
            }
        };
        let mut row = vec![0u8; bands];
        for &k in &order[..ones] {
            row[k] = 1;
            coverage[k] += 1;
        }
        rows.push(row);
        windows.push((start, start + bandwidth - 1));
    }
    assemble(rows, windows, bandwidth)
}

fn has_distinct_rows(p: &CodingPattern) -> bool {
    let h = p.matrix();
    (0..h.nrows()).all(|a| (a + 1..h.nrows()).all(|b| h.row(a) != h.row(b)))
}

fn full_row_rank(p: &CodingPattern) -> bool {
    let mut m = p.to_f64();
    let (rows, cols) = m.dim();
    let mut rank = 0;
    for col in 0..cols {
        if rank == rows {
            break;
        }
        let pivot = (rank..rows).max_by(|&a, &b| m[[a, col]].abs().total_cmp(&m[[b, col]].abs()));
        let Some(pivot) = pivot else { break };
        if m[[pivot, col]].abs() < 1e-9 {
            continue;
        }
        for j in 0..cols {
            m.swap([rank, j], [pivot, j]);
        }
        for r in rank + 1..rows {
            let f = m[[r, col]] / m[[rank, col]];
            if f != 0.0 {
                for j in col..cols {
                    m[[r, j]] -= f * m[[rank, j]];
                }
            }
        }
        rank += 1;
    }
    rank == rows
}

/// Writes `SICP <S> <L> <bandwidth>`, the rows as 0/1 strings, then the windows.
pub fn save_pattern(p: &CodingPattern, path: &Path) -> Result<()> {
    fs::write(path, pattern_to_string(p)).map_err(|e| Error::io(path, e))
}

pub fn pattern_to_string(p: &CodingPattern) -> String {
    let mut out = format!(
        "{PATTERN_MAGIC} {} {} {}\n",
        p.snapshots(),
        p.bands(),
        p.bandwidth()
    );
    for row in p.matrix().rows() {
        out.extend(row.iter().map(|&v| if v == 1 { '1' } else { '0' }));
        out.push('\n');
    }
    for &(lo, hi) in p.windows() {
        writeln!(out, "{lo} {hi}").expect("writing to a String cannot fail");
    }
    out
}

pub fn load_pattern(path: &Path) -> Result<CodingPattern> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pattern(&text)
}

pub fn parse_pattern(text: &str) -> Result<CodingPattern> {
    const WHAT: &str = "pattern file";
    let mut lines = text.lines();
    let [snapshots, bands, bandwidth] =
        parse_header(lines.next().unwrap_or_default(), PATTERN_MAGIC, WHAT)?;
    let mut flat = Vec::with_capacity(snapshots * bands);
    for s in 0..snapshots {
        let line = lines
            .next()
            .ok_or_else(|| Error::format(WHAT, format!("missing code row {s}")))?
            .trim();
        if line.len() != bands {
            return Err(Error::format(
                WHAT,
                format!("row {s} has {} characters, expected {bands}", line.len()),
            ));
        }
        for ch in line.chars() {
            flat.push(match ch {
                '0' => 0,
                '1' => 1,
                other => {
                    return Err(Error::format(
                        WHAT,
                        format!("row {s}: invalid symbol {other:?}"),
                    ))
                }
            });
        }
    }
    let mut windows = Vec::with_capacity(snapshots);
    for s in 0..snapshots {
        let line = lines
            .next()
            .ok_or_else(|| Error::format(WHAT, format!("missing window line {s}")))?;
        let nums: Vec<usize> = line
            .split_ascii_whitespace()
            .map(|t| t.parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::format(WHAT, format!("window line {s}: {line:?}")))?;
        match nums.as_slice() {
            &[lo, hi] => windows.push((lo, hi)),
            _ => return Err(Error::format(WHAT, format!("window line {s}: {line:?}"))),
        }
    }
    if lines.any(|l| !l.trim().is_empty()) {
        return Err(Error::format(WHAT, "trailing content"));
    }
    let h = Array2::from_shape_vec((snapshots, bands), flat).expect("row lengths checked");
    CodingPattern::new(h, windows, bandwidth).map_err(|e| Error::format(WHAT, e.to_string()))
}
