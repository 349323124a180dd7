//! Scoring of unsupervised segmentations against ground truth.
//!
//! Cluster ids are arbitrary, so predictions are first matched to the
//! ground-truth classes by a maximum-agreement assignment (Hungarian method)
//! and then summarised as overall accuracy, average per-class accuracy and
//! Cohen's kappa.

use std::fmt::Write as _;

use ndarray::Array2;

use crate::datacube::LabelMap;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreReport {
    /// Accuracy of each ground-truth class; `None` when the class has no pixels.
    pub per_class: Vec<Option<f64>>,
    pub oa: f64,
    pub aa: f64,
    pub kappa: f64,
    pub elapsed_s: f64,
    /// Rows: truth classes. Columns: aligned predictions, plus a trailing
    /// "no class" column when the prediction has surplus clusters.
    pub confusion: Array2<u64>,
}

/// Minimum-cost perfect matching on a square cost matrix; returns the column
/// assigned to every row.
pub fn hungarian(cost: &Array2<f64>) -> Vec<usize> {
    let n = cost.nrows();
    assert_eq!(n, cost.ncols(), "cost matrix must be square");
    if n == 0 {
        return Vec::new();
    }
    // potentials formulation, 1-based with a virtual column 0
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut owner = vec![0usize; n + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut col0 = 0;
        let mut min_to = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[col0] = true;
            let r = owner[col0];
            let mut delta = f64::INFINITY;
            let mut col1 = 0;
            for col in 1..=n {
                if used[col] {
                    continue;
                }
                let reduced = cost[[r - 1, col - 1]] - u[r] - v[col];
                if reduced < min_to[col] {
                    min_to[col] = reduced;
                    way[col] = col0;
                }
                if min_to[col] < delta {
                    delta = min_to[col];
                    col1 = col;
                }
            }
            for col in 0..=n {
                if used[col] {
                    u[owner[col]] += delta;
                    v[col] -= delta;
                } else {
                    min_to[col] -= delta;
                }
            }
            col0 = col1;
            if owner[col0] == 0 {
                break;
            }
        }
        loop {
            let prev = way[col0];
            owner[col0] = owner[prev];
            col0 = prev;
            if col0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for col in 1..=n {
        assignment[owner[col] - 1] = col - 1;
    }
    assignment
}

fn check_pair(pred: &LabelMap, truth: &LabelMap) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "prediction has {} pixels, ground truth {}",
            pred.len(),
            truth.len()
        )));
    }
    Ok(())
}

fn scored(pred: &LabelMap, truth: &LabelMap, i: usize) -> bool {
    !truth.is_masked(i) && !pred.is_masked(i)
}

/// Agreement counts `[pred class][truth class]` over pixels labeled in both maps.
pub fn agreement_matrix(pred: &LabelMap, truth: &LabelMap) -> Result<Array2<u64>> {
    check_pair(pred, truth)?;
    let mut a = Array2::zeros((pred.classes(), truth.classes()));
    for i in 0..pred.len() {
        if scored(pred, truth, i) {
            a[[pred.labels()[i], truth.labels()[i]]] += 1;
        }
    }
    Ok(a)
}

/// Relabels `pred` by the permutation that maximises agreement with `truth`.
///
/// Predicted clusters left without a truth class get ids `truth.classes()`,
/// `truth.classes() + 1`, ... and count as errors when scored.
pub fn align_labels(pred: &LabelMap, truth: &LabelMap) -> Result<LabelMap> {
    let agreement = agreement_matrix(pred, truth)?;
    let (kp, kt) = agreement.dim();
    let size = kp.max(kt);
    let best = agreement.iter().copied().max().unwrap_or(0) as f64;
    let cost = Array2::from_shape_fn((size, size), |(p, t)| {
        if p < kp && t < kt {
            best - agreement[[p, t]] as f64
        } else {
            best
        }
    });
    let assignment = hungarian(&cost);
    let mut map = vec![0usize; kp];
    let mut surplus = kt;
    for p in 0..kp {
        if assignment[p] < kt {
            map[p] = assignment[p];
        } else {
            map[p] = surplus;
            surplus += 1;
        }
    }
    let labels = pred.labels().iter().map(|&l| map[l]).collect();
    LabelMap::with_mask(
        labels,
        kt.max(surplus),
        pred.mask().map(<[bool]>::to_vec),
        pred.rows(),
        pred.cols(),
    )
}

/// Aligns `pred` to `truth` and scores it over the unmasked pixels.
pub fn score(pred: &LabelMap, truth: &LabelMap) -> Result<ScoreReport> {
    let aligned = align_labels(pred, truth)?;
    score_aligned(&aligned, truth)
}

/// Scores a prediction whose ids already name truth classes (ids at or above
/// `truth.classes()` mean "no class").
pub fn score_aligned(pred: &LabelMap, truth: &LabelMap) -> Result<ScoreReport> {
    check_pair(pred, truth)?;
    let kt = truth.classes();
    let extra = usize::from(pred.labels().iter().any(|&l| l >= kt));
    let mut confusion = Array2::<u64>::zeros((kt, kt + extra));
    for i in 0..pred.len() {
        if scored(pred, truth, i) {
            let p = pred.labels()[i].min(kt);
            confusion[[truth.labels()[i], p]] += 1;
        }
    }
    report_from_confusion(confusion)
}

/// Accuracy figures from a confusion matrix (rows truth, columns prediction).
pub fn report_from_confusion(confusion: Array2<u64>) -> Result<ScoreReport> {
    let kt = confusion.nrows();
    let total: u64 = confusion.sum();
    if total == 0 {
        return Err(Error::InvalidArgument("no labeled pixels to score".into()));
    }
    let row_sums: Vec<u64> = confusion.rows().into_iter().map(|r| r.sum()).collect();
    let col_sums: Vec<u64> = confusion.columns().into_iter().map(|c| c.sum()).collect();
    let hits: u64 = (0..kt).map(|i| confusion[[i, i]]).sum();
    let per_class: Vec<Option<f64>> = (0..kt)
        .map(|i| (row_sums[i] > 0).then(|| confusion[[i, i]] as f64 / row_sums[i] as f64))
        .collect();
    let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
    let aa = defined.iter().sum::<f64>() / defined.len() as f64;
    let total_f = total as f64;
    let oa = hits as f64 / total_f;
    let pe: f64 = (0..kt)
        .map(|i| row_sums[i] as f64 * col_sums[i] as f64)
        .sum::<f64>()
        / (total_f * total_f);
    let kappa = if pe < 1.0 {
        (oa - pe) / (1.0 - pe)
    } else {
        1.0
    };
    Ok(ScoreReport {
        per_class,
        oa,
        aa,
        kappa,
        elapsed_s: 0.0,
        confusion,
    })
}

fn pct(v: f64) -> String {
    format!("{:.2}", 100.0 * v)
}

impl ScoreReport {
    /// `metric,value` lines: per-class accuracies, OA, AA, Kappa (percent) and time.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        for (i, acc) in self.per_class.iter().enumerate() {
            let v = acc.map(pct).unwrap_or_else(|| "NA".into());
            writeln!(out, "class_{i},{v}").unwrap();
        }
        writeln!(out, "OA,{}", pct(self.oa)).unwrap();
        writeln!(out, "AA,{}", pct(self.aa)).unwrap();
        writeln!(out, "Kappa,{}", pct(self.kappa)).unwrap();
        writeln!(out, "Time_s,{:.2}", self.elapsed_s).unwrap();
        out
    }
}

/// Side-by-side comparison of several methods in the layout of a per-class
/// accuracy table: one row per class, then OA, AA, Kappa and time.
pub fn comparison_table(methods: &[(&str, &ScoreReport)]) -> String {
    let classes = methods
        .iter()
        .map(|(_, r)| r.per_class.len())
        .max()
        .unwrap_or(0);
    let width = methods
        .iter()
        .map(|(n, _)| n.len())
        .max()
        .unwrap_or(0)
        .max(8);
    let mut out = format!("{:<10}", "Class");
    for (name, _) in methods {
        write!(out, " {name:>width$}").unwrap();
    }
    out.push('\n');
    let mut line = |label: String, cell: &dyn Fn(&ScoreReport) -> String| {
        write!(out, "{label:<10}").unwrap();
        for (_, r) in methods {
            write!(out, " {:>width$}", cell(r)).unwrap();
        }
        out.push('\n');
    };
    for i in 0..classes {
        line(format!("{i}"), &|r| {
            r.per_class
                .get(i)
                .copied()
                .flatten()
                .map(pct)
                .unwrap_or_else(|| "-".into())
        });
    }
    line("OA".into(), &|r| pct(r.oa));
    line("AA".into(), &|r| pct(r.aa));
    line("Kappa".into(), &|r| pct(r.kappa));
    line("Time [s]".into(), &|r| format!("{:.2}", r.elapsed_s));
    out
}

/// Machine-readable comparison: one row per method.
pub fn comparison_csv(methods: &[(&str, &ScoreReport)]) -> String {
    let classes = methods
        .iter()
        .map(|(_, r)| r.per_class.len())
        .max()
        .unwrap_or(0);
    let mut out = String::from("method");
    for i in 0..classes {
        write!(out, ",class_{i}").unwrap();
    }
    out.push_str(",OA,AA,Kappa,Time_s\n");
    for (name, r) in methods {
        out.push_str(name);
        for i in 0..classes {
            let v = r
                .per_class
                .get(i)
                .copied()
                .flatten()
                .map(pct)
                .unwrap_or_else(|| "NA".into());
            write!(out, ",{v}").unwrap();
        }
        writeln!(
            out,
            ",{},{},{},{:.2}",
            pct(r.oa),
            pct(r.aa),
            pct(r.kappa),
            r.elapsed_s
        )
        .unwrap();
    }
    out
}
