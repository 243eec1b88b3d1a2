//! Classification metrics, ROC/PR curves and report export.
//!
//! Zero denominators yield 0. Multi-class aggregates are reported three ways:
//! macro (unweighted class mean), micro (pooled one-vs-rest counts) and, for
//! two-class problems, the positive-class ("binary") row.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rows are true labels, columns predictions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn n_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n_classes()).map(|i| self.counts[i][i]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.trace(), self.total())
    }

    /// `(tp, fp, fn, tn)` for class `c` against the rest.
    pub fn one_vs_rest(&self, c: usize) -> (u64, u64, u64, u64) {
        let tp = self.counts[c][c];
        let fp: u64 = (0..self.n_classes()).map(|r| self.counts[r][c]).sum::<u64>() - tp;
        let fn_: u64 = self.counts[c].iter().sum::<u64>() - tp;
        let tn = self.total() - tp - fp - fn_;
        (tp, fp, fn_, tn)
    }

    pub fn to_csv(&self, names: &[&str]) -> String {
        let mut out = String::from("true\\pred");
        for n in names {
            let _ = write!(out, ",{n}");
        }
        out.push('\n');
        for (name, row) in names.iter().zip(&self.counts) {
            out.push_str(name);
            for c in row {
                let _ = write!(out, ",{c}");
            }
            out.push('\n');
        }
        out
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn confusion(truth: &[usize], predicted: &[usize], n_classes: usize) -> Result<ConfusionMatrix> {
    if truth.len() != predicted.len() {
        return Err(Error::LengthMismatch(truth.len(), predicted.len()));
    }
    if truth.is_empty() {
        return Err(Error::NoSamples);
    }
    let mut counts = vec![vec![0u64; n_classes]; n_classes];
    for (&t, &p) in truth.iter().zip(predicted) {
        for label in [t, p] {
            if label >= n_classes {
                return Err(Error::LabelOutOfRange {
                    label,
                    classes: n_classes,
                });
            }
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix { counts })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RateSet {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub specificity: f64,
}

impl RateSet {
    pub fn from_counts(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            precision,
            recall,
            f1,
            specificity: ratio(tn, tn + fp),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub support: u64,
    #[serde(flatten)]
    pub rates: RateSet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    pub macro_avg: RateSet,
    pub micro_avg: RateSet,
    /// Positive-class row, present for two-class matrices.
    pub binary: Option<RateSet>,
}

pub fn class_metrics(cm: &ConfusionMatrix) -> MetricsSummary {
    let k = cm.n_classes();
    let mut per_class = Vec::with_capacity(k);
    let mut pooled = (0, 0, 0, 0);
    for c in 0..k {
        let (tp, fp, fn_, tn) = cm.one_vs_rest(c);
        pooled = (pooled.0 + tp, pooled.1 + fp, pooled.2 + fn_, pooled.3 + tn);
        per_class.push(ClassMetrics {
            support: tp + fn_,
            rates: RateSet::from_counts(tp, fp, fn_, tn),
        });
    }
    let mean = |f: fn(&RateSet) -> f64| {
        if k == 0 {
            0.0
        } else {
            per_class.iter().map(|m| f(&m.rates)).sum::<f64>() / k as f64
        }
    };
    let macro_avg = RateSet {
        precision: mean(|r| r.precision),
        recall: mean(|r| r.recall),
        f1: mean(|r| r.f1),
        specificity: mean(|r| r.specificity),
    };
    MetricsSummary {
        accuracy: cm.accuracy(),
        binary: (k == 2).then(|| per_class[1].rates),
        micro_avg: RateSet::from_counts(pooled.0, pooled.1, pooled.2, pooled.3),
        macro_avg,
        per_class,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub x: f64,
    pub y: f64,
    /// Scores at or above this value are called positive; `+inf` for the
    /// origin point of a ROC curve (serialised as `null`).
    pub threshold: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// `x` = false-positive rate, `y` = true-positive rate.
    pub points: Vec<CurvePoint>,
    pub auc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    /// `x` = recall, `y` = precision.
    pub points: Vec<CurvePoint>,
}

/// Cumulative `(threshold, tp, fp)` after each distinct score, descending.
fn sweep(scores: &[f64], labels: &[bool]) -> Result<Vec<(f64, u64, u64)>> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch(scores.len(), labels.len()));
    }
    if scores.is_empty() {
        return Err(Error::NoSamples);
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFiniteScore(i));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut steps: Vec<(f64, u64, u64)> = Vec::new();
    let (mut tp, mut fp) = (0u64, 0u64);
    for (pos, &i) in order.iter().enumerate() {
        if labels[i] {
            tp += 1;
        } else {
            fp += 1;
        }
        let last_of_group = order
            .get(pos + 1)
            .is_none_or(|&j| scores[j] != scores[i]);
        if last_of_group {
            steps.push((scores[i], tp, fp));
        }
    }
    Ok(steps)
}

pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<RocCurve> {
    let steps = sweep(scores, labels)?;
    let (p, n) = match steps.last() {
        Some(&(_, p, n)) if p > 0 && n > 0 => (p as f64, n as f64),
        _ => return Err(Error::AucUndefined),
    };
    let mut points = vec![CurvePoint {
        x: 0.0,
        y: 0.0,
        threshold: None,
    }];
    let mut auc = 0.0;
    for (t, tp, fp) in steps {
        let prev = points.last().expect("origin present");
        let (x, y) = (fp as f64 / n, tp as f64 / p);
        auc += (x - prev.x) * (y + prev.y) / 2.0;
        points.push(CurvePoint {
            x,
            y,
            threshold: Some(t),
        });
    }
    Ok(RocCurve { points, auc })
}

/// Precision-recall points for each distinct threshold, stopping at the first
/// threshold that reaches full recall.
pub fn pr_curve(scores: &[f64], labels: &[bool]) -> Result<PrCurve> {
    let steps = sweep(scores, labels)?;
    let positives = steps.last().map_or(0, |s| s.1);
    if positives == 0 {
        return Err(Error::NoPositives);
    }
    let mut points = Vec::new();
    for (t, tp, fp) in steps {
        points.push(CurvePoint {
            x: tp as f64 / positives as f64,
            y: tp as f64 / (tp + fp) as f64,
            threshold: Some(t),
        });
        if tp == positives {
            break;
        }
    }
    Ok(PrCurve { points })
}

pub fn curve_csv(points: &[CurvePoint], x: &str, y: &str) -> String {
    let mut out = format!("{x},{y}\n");
    for p in points {
        let _ = writeln!(out, "{},{}", p.x, p.y);
    }
    out
}

/// Per-sample model outputs fed to [`build_report`].
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredSample {
    pub variety: usize,
    pub variety_probs: Vec<f64>,
    pub spoiled: bool,
    pub spoil_score: f64,
    pub days: f64,
    pub predicted_days: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassCurves {
    pub class: String,
    /// `None` when the class is absent (or the only class) in the split.
    pub roc: Option<RocCurve>,
    pub pr: Option<PrCurve>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarietyReport {
    pub confusion: ConfusionMatrix,
    pub metrics: MetricsSummary,
    pub curves: Vec<ClassCurves>,
    /// Mean AUC over classes with a defined one-vs-rest curve.
    pub macro_auc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpoilageReport {
    pub threshold: f64,
    pub confusion: ConfusionMatrix,
    pub metrics: MetricsSummary,
    pub roc: Option<RocCurve>,
    pub pr: Option<PrCurve>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub samples: usize,
    pub variety: VarietyReport,
    pub spoilage: SpoilageReport,
    pub shelf_life_mae_days: f64,
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

pub fn build_report(
    samples: &[ScoredSample],
    class_names: &[&str],
    spoil_threshold: f64,
) -> Result<MetricsReport> {
    if samples.is_empty() {
        return Err(Error::NoSamples);
    }
    let k = class_names.len();
    if let Some(s) = samples.iter().find(|s| s.variety_probs.len() != k) {
        return Err(Error::LengthMismatch(k, s.variety_probs.len()));
    }
    let truth: Vec<usize> = samples.iter().map(|s| s.variety).collect();
    let pred: Vec<usize> = samples.iter().map(|s| argmax(&s.variety_probs)).collect();
    let confusion_v = confusion(&truth, &pred, k)?;

    let mut curves = Vec::with_capacity(k);
    let mut aucs = Vec::new();
    for (c, name) in class_names.iter().enumerate() {
        let scores: Vec<f64> = samples.iter().map(|s| s.variety_probs[c]).collect();
        let labels: Vec<bool> = truth.iter().map(|&t| t == c).collect();
        let roc = match roc_curve(&scores, &labels) {
            Ok(r) => Some(r),
            Err(Error::AucUndefined) => None,
            Err(e) => return Err(e),
        };
        let pr = match pr_curve(&scores, &labels) {
            Ok(r) => Some(r),
            Err(Error::NoPositives) => None,
            Err(e) => return Err(e),
        };
        if let Some(r) = &roc {
            aucs.push(r.auc);
        }
        curves.push(ClassCurves {
            class: name.to_string(),
            roc,
            pr,
        });
    }
    let macro_auc = if aucs.is_empty() {
        0.0
    } else {
        aucs.iter().sum::<f64>() / aucs.len() as f64
    };

    let spoil_truth: Vec<usize> = samples.iter().map(|s| s.spoiled as usize).collect();
    let spoil_pred: Vec<usize> = samples
        .iter()
        .map(|s| (s.spoil_score >= spoil_threshold) as usize)
        .collect();
    let confusion_s = confusion(&spoil_truth, &spoil_pred, 2)?;
    let scores: Vec<f64> = samples.iter().map(|s| s.spoil_score).collect();
    let labels: Vec<bool> = samples.iter().map(|s| s.spoiled).collect();
    let roc = roc_curve(&scores, &labels).ok();
    let pr = pr_curve(&scores, &labels).ok();

    let mae = samples
        .iter()
        .map(|s| (s.days - s.predicted_days).abs())
        .sum::<f64>()
        / samples.len() as f64;

    Ok(MetricsReport {
        samples: samples.len(),
        variety: VarietyReport {
            metrics: class_metrics(&confusion_v),
            confusion: confusion_v,
            curves,
            macro_auc,
        },
        spoilage: SpoilageReport {
            threshold: spoil_threshold,
            metrics: class_metrics(&confusion_s),
            confusion: confusion_s,
            roc,
            pr,
        },
        shelf_life_mae_days: mae,
    })
}

/// Write `report.json`, `confusion.csv`, `confusion_spoilage.csv` and the
/// per-class `roc_<class>.csv` / `pr_<class>.csv` files. Returns the paths
/// written, relative to `dir`.
pub fn write_report(dir: &Path, report: &MetricsReport) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files: Vec<(String, String)> = Vec::new();
    let mut json = serde_json::to_string_pretty(report)?;
    json.push('\n');
    files.push(("report.json".into(), json));
    let names: Vec<&str> = report.variety.curves.iter().map(|c| c.class.as_str()).collect();
    files.push(("confusion.csv".into(), report.variety.confusion.to_csv(&names)));
    files.push((
        "confusion_spoilage.csv".into(),
        report.spoilage.confusion.to_csv(&["EDIBLE", "SPOILED"]),
    ));
    for c in &report.variety.curves {
        if let Some(r) = &c.roc {
            files.push((format!("roc_{}.csv", c.class), curve_csv(&r.points, "fpr", "tpr")));
        }
        if let Some(p) = &c.pr {
            files.push((format!("pr_{}.csv", c.class), curve_csv(&p.points, "recall", "precision")));
        }
    }
    if let Some(r) = &report.spoilage.roc {
        files.push(("roc_SPOILED.csv".into(), curve_csv(&r.points, "fpr", "tpr")));
    }
    if let Some(p) = &report.spoilage.pr {
        files.push(("pr_SPOILED.csv".into(), curve_csv(&p.points, "recall", "precision")));
    }
    let mut written = Vec::with_capacity(files.len());
    for (name, text) in files {
        let path = dir.join(&name);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        written.push(PathBuf::from(name));
    }
    Ok(written)
}
