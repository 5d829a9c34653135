//! Image-level decisions by patch-score fusion, ROC/AUC, FPR-calibrated
//! thresholds and quality-factor sweep reports.
//!
//! AUC is accumulated as an exact integer ratio over the threshold sweep
//! (ties move both classes simultaneously, i.e. the midpoint convention),
//! so the trapezoidal value coincides bit for bit with brute-force pair
//! counting `(#{h1>h0} + ½·#{h1=h0}) / (|h0|·|h1|)`.

use std::fmt::Write as _;

use crate::cnn::{infer_patch_scores, Net};
use crate::img::{tile_patches, ImageRgb};
use crate::jpeg::jpeg_roundtrip;
use crate::tonal::OperatorSpec;
use crate::{Error, Result};

/// Per-patch soft scores in grid order.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreVector {
    pub scores: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
}

/// The fused image-level statistic: the arithmetic mean of the patch scores.
pub fn image_statistic(scores: &ScoreVector) -> Result<f64> {
    if scores.scores.is_empty() {
        return Err(Error::Empty("score vector"));
    }
    Ok(scores.scores.iter().sum::<f64>() / scores.scores.len() as f64)
}

/// Image-level verdict.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decision {
    Pristine,
    Adjusted,
}

impl std::fmt::Display for Decision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Decision::Pristine => "pristine",
            Decision::Adjusted => "adjusted",
        })
    }
}

/// Adjusted iff the statistic strictly exceeds the threshold; a tie is
/// pristine.
pub fn decide(statistic: f64, threshold: f64) -> Decision {
    if statistic > threshold {
        Decision::Adjusted
    } else {
        Decision::Pristine
    }
}

/// The image-level report written by the `detect` command.
#[derive(Clone, Debug)]
pub struct DetectionReport {
    pub statistic: f64,
    pub threshold: f64,
    pub decision: Decision,
    pub scores: ScoreVector,
    /// Model provenance line, tying the report to the weights that made it.
    pub model: String,
}

impl DetectionReport {
    pub fn new(scores: ScoreVector, threshold: f64, model: String) -> Result<Self> {
        let statistic = image_statistic(&scores)?;
        Ok(Self {
            statistic,
            threshold,
            decision: decide(statistic, threshold),
            scores,
            model,
        })
    }

    /// Structured text record, fields in documented order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("tonedetect-detection v1\n");
        let _ = writeln!(out, "statistic {}", self.statistic);
        let _ = writeln!(out, "threshold {}", self.threshold);
        let _ = writeln!(out, "decision {}", self.decision);
        let _ = writeln!(out, "rows {}", self.scores.rows);
        let _ = writeln!(out, "cols {}", self.scores.cols);
        let _ = writeln!(out, "model {}", self.model);
        out.push_str("scores");
        for s in &self.scores.scores {
            let _ = write!(out, " {s}");
        }
        out.push('\n');
        out
    }
}

// ---------------------------------------------------------------------------
// ROC / AUC
// ---------------------------------------------------------------------------

/// ROC curve as cumulative integer counts at each distinct score, swept from
/// the highest threshold down. `(0, 0)` is implicit; the final step reaches
/// `(n0, n1)`.
#[derive(Clone, Debug)]
pub struct RocCurve {
    n0: u64,
    n1: u64,
    /// `(false positives, true positives, threshold)` after admitting each
    /// distinct score value.
    steps: Vec<(u64, u64, f64)>,
}

impl RocCurve {
    /// `(FPR, TPR)` points from `(0, 0)` to `(1, 1)`.
    pub fn points(&self) -> Vec<(f64, f64)> {
        let mut pts = Vec::with_capacity(self.steps.len() + 1);
        pts.push((0.0, 0.0));
        for &(fp, tp, _) in &self.steps {
            pts.push((fp as f64 / self.n0 as f64, tp as f64 / self.n1 as f64));
        }
        pts
    }

    pub fn class_sizes(&self) -> (u64, u64) {
        (self.n0, self.n1)
    }
}

/// Sweep a decision threshold over both statistic lists.
pub fn roc_curve(h0: &[f64], h1: &[f64]) -> Result<RocCurve> {
    if h0.is_empty() {
        return Err(Error::Empty("h0 statistics"));
    }
    if h1.is_empty() {
        return Err(Error::Empty("h1 statistics"));
    }
    let mut all: Vec<(f64, bool)> = h0
        .iter()
        .map(|&s| (s, false))
        .chain(h1.iter().map(|&s| (s, true)))
        .collect();
    // Descending by score; ties collapse into a single step below.
    all.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut steps = Vec::new();
    let (mut fp, mut tp) = (0u64, 0u64);
    let mut i = 0usize;
    while i < all.len() {
        let value = all[i].0;
        while i < all.len() && all[i].0 == value {
            if all[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        steps.push((fp, tp, value));
    }
    Ok(RocCurve {
        n0: h0.len() as u64,
        n1: h1.len() as u64,
        steps,
    })
}

/// Trapezoidal AUC via exact integer accumulation: one final float division.
pub fn auc(curve: &RocCurve) -> f64 {
    let mut num: u128 = 0;
    let (mut prev_fp, mut prev_tp) = (0u64, 0u64);
    for &(fp, tp, _) in &curve.steps {
        num += (fp - prev_fp) as u128 * (tp + prev_tp) as u128;
        prev_fp = fp;
        prev_tp = tp;
    }
    num as f64 / (2 * curve.n0 as u128 * curve.n1 as u128) as f64
}

/// Smallest observed H0 statistic `t` whose exceedance fraction
/// `#{h0 > t}/|h0|` is at most `target`.
pub fn threshold_at_fpr(h0: &[f64], target: f64) -> Result<f64> {
    if h0.is_empty() {
        return Err(Error::Empty("h0 statistics"));
    }
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "target false-positive rate {target} must be in (0, 1)"
        )));
    }
    let mut sorted = h0.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let budget = target * n as f64;
    let mut i = 0usize;
    while i < n {
        // Last index of this run of equal values.
        let mut j = i;
        while j + 1 < n && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let above = (n - j - 1) as f64;
        if above <= budget {
            return Ok(sorted[i]);
        }
        i = j + 1;
    }
    Ok(*sorted.last().expect("nonempty"))
}

// ---------------------------------------------------------------------------
// QF sweep report
// ---------------------------------------------------------------------------

/// One row of the sweep: an operator and its AUC per QF column.
#[derive(Clone, Debug)]
pub struct SweepRow {
    pub operator: OperatorSpec,
    pub auc_by_qf: Vec<f64>,
}

/// Detector performance swept over tonal operators and JPEG quality factors,
/// mirroring a table with one row per operator and one column per QF.
#[derive(Clone, Debug)]
pub struct SweepReport {
    /// Columns: `None` means "no JPEG".
    pub qfs: Vec<Option<u8>>,
    pub rows: Vec<SweepRow>,
    /// 5%-FPR threshold per QF column (computed from H0 statistics only, so
    /// it is operator-independent).
    pub thresholds: Vec<f64>,
    pub h0_images: usize,
    pub h1_images: usize,
    /// Free-form `# `-prefixed provenance lines.
    pub provenance: Vec<String>,
}

/// Target false-positive rate used for the calibration row of the report.
pub const REPORT_FPR: f64 = 0.05;

/// Score every (operator, QF) cell on a pristine test corpus.
///
/// For each cell the H1 class applies the operator to the whole image, then
/// both classes go through the JPEG round trip (unless the column is
/// `None`), are tiled, scored and fused.
pub fn qf_sweep_report(
    net: &Net<f32>,
    test_images: &[ImageRgb],
    operators: &[OperatorSpec],
    qfs: &[Option<u8>],
    provenance: Vec<String>,
) -> Result<SweepReport> {
    if test_images.is_empty() {
        return Err(Error::Empty("test corpus"));
    }
    let statistic_of = |img: &ImageRgb| -> Result<f64> {
        image_statistic(&infer_patch_scores(net, &tile_patches(img)?))
    };
    let maybe_compress = |img: &ImageRgb, qf: Option<u8>| -> Result<ImageRgb> {
        match qf {
            Some(q) => jpeg_roundtrip(img, q),
            None => Ok(img.clone()),
        }
    };

    // H0 statistics depend only on the QF column.
    let mut h0_by_qf: Vec<Vec<f64>> = Vec::with_capacity(qfs.len());
    for &qf in qfs {
        let mut stats = Vec::with_capacity(test_images.len());
        for img in test_images {
            stats.push(statistic_of(&maybe_compress(img, qf)?)?);
        }
        h0_by_qf.push(stats);
    }
    let thresholds = h0_by_qf
        .iter()
        .map(|h0| threshold_at_fpr(h0, REPORT_FPR))
        .collect::<Result<Vec<f64>>>()?;

    let mut rows = Vec::with_capacity(operators.len());
    for op in operators {
        let adjusted: Vec<ImageRgb> = test_images
            .iter()
            .map(|img| op.apply(img))
            .collect::<Result<_>>()?;
        let mut auc_by_qf = Vec::with_capacity(qfs.len());
        for (qi, &qf) in qfs.iter().enumerate() {
            let mut h1 = Vec::with_capacity(adjusted.len());
            for img in &adjusted {
                h1.push(statistic_of(&maybe_compress(img, qf)?)?);
            }
            auc_by_qf.push(auc(&roc_curve(&h0_by_qf[qi], &h1)?));
        }
        rows.push(SweepRow {
            operator: op.clone(),
            auc_by_qf,
        });
    }

    Ok(SweepReport {
        qfs: qfs.to_vec(),
        rows,
        thresholds,
        h0_images: test_images.len(),
        h1_images: test_images.len(),
        provenance,
    })
}

fn qf_label(qf: Option<u8>) -> String {
    match qf {
        Some(q) => q.to_string(),
        None => "none".into(),
    }
}

impl SweepReport {
    /// CSV with a provenance header: one `auc` row per operator, then the
    /// `threshold_fpr5` calibration row.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str("# tonedetect eval report v1\n");
        for line in &self.provenance {
            let _ = writeln!(out, "# {line}");
        }
        let _ = writeln!(
            out,
            "# h0_images {} h1_images_per_operator {}",
            self.h0_images, self.h1_images
        );
        let cols: Vec<String> = self.qfs.iter().map(|&q| qf_label(q)).collect();
        let _ = writeln!(out, "row,{}", cols.join(","));
        for row in &self.rows {
            let cells: Vec<String> = row.auc_by_qf.iter().map(|a| a.to_string()).collect();
            let _ = writeln!(out, "auc {},{}", row.operator.to_token(), cells.join(","));
        }
        let cells: Vec<String> = self.thresholds.iter().map(|t| t.to_string()).collect();
        let _ = writeln!(out, "threshold_fpr5,{}", cells.join(","));
        out
    }

    /// Read back the calibration row of a report CSV: `(qf, threshold)`
    /// pairs in column order.
    pub fn parse_calibration(csv: &str) -> Result<Vec<(Option<u8>, f64)>> {
        let mut qfs: Option<Vec<Option<u8>>> = None;
        for (ln, line) in csv.lines().enumerate() {
            if line.starts_with('#') || line.is_empty() {
                continue;
            }
            let cells: Vec<&str> = line.split(',').collect();
            if cells[0] == "row" {
                let parsed = cells[1..]
                    .iter()
                    .map(|c| {
                        if *c == "none" {
                            Ok(None)
                        } else {
                            c.parse::<u8>().map(Some).map_err(|_| Error::Parse {
                                kind: "report csv",
                                line: ln + 1,
                                reason: format!("bad qf column {c:?}"),
                            })
                        }
                    })
                    .collect::<Result<Vec<_>>>()?;
                qfs = Some(parsed);
            } else if cells[0] == "threshold_fpr5" {
                let qfs = qfs.ok_or(Error::Parse {
                    kind: "report csv",
                    line: ln + 1,
                    reason: "threshold row before header".into(),
                })?;
                if cells.len() != qfs.len() + 1 {
                    return Err(Error::Parse {
                        kind: "report csv",
                        line: ln + 1,
                        reason: "column count mismatch".into(),
                    });
                }
                return cells[1..]
                    .iter()
                    .zip(qfs)
                    .map(|(c, q)| {
                        c.parse::<f64>().map(|t| (q, t)).map_err(|_| Error::Parse {
                            kind: "report csv",
                            line: ln + 1,
                            reason: format!("bad threshold {c:?}"),
                        })
                    })
                    .collect();
            }
        }
        Err(Error::Parse {
            kind: "report csv",
            line: 0,
            reason: "no threshold_fpr5 row found".into(),
        })
    }
}
