//! Detection metrics, the paired Wilcoxon signed-rank test and LODO summaries.

mod lodo;
mod wilcoxon;

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::windows::Context;

pub use lodo::{lodo_summary, LodoFold, LodoSummary};
pub use wilcoxon::{wilcoxon_one_sided, wilcoxon_exact_upper_tail, WilcoxonResult, EXACT_LIMIT};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Datasets with fewer test samples than this are not reported.
pub const MIN_REPORTABLE_SAMPLES: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPredictions {
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
    pub contexts: Vec<Context>,
}

impl ScoredPredictions {
    pub fn new(scores: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        let contexts = vec![Context { dataset: 0, device: 0 }; labels.len()];
        Self::with_contexts(scores, labels, contexts)
    }

    pub fn with_contexts(scores: Vec<f64>, labels: Vec<u8>, contexts: Vec<Context>) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::InvalidArgument("no predictions".into()));
        }
        if scores.len() != labels.len() || contexts.len() != labels.len() {
            return Err(Error::Shape("scores, labels and contexts differ in length".into()));
        }
        if let Some(i) = scores.iter().position(|s| !(0.0..=1.0).contains(s)) {
            return Err(Error::InvalidArgument(format!("score {i} = {} outside [0, 1]", scores[i])));
        }
        if let Some(i) = labels.iter().position(|&l| l > 1) {
            return Err(Error::InvalidArgument(format!("label {i} is not binary")));
        }
        Ok(ScoredPredictions { scores, labels, contexts })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    /// Reads a scores file with header `window_id,score,label,c_ds,c_dev`.
    pub fn from_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let err = |message: String| Error::Csv { path: path.to_path_buf(), message };
        let mut reader = csv::Reader::from_path(path).map_err(|e| err(e.to_string()))?;
        let headers = reader.headers().map_err(|e| err(e.to_string()))?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| err(format!("missing column {name:?}")))
        };
        let (si, li, di, vi) = (col("score")?, col("label")?, col("c_ds")?, col("c_dev")?);
        let (mut scores, mut labels, mut contexts) = (Vec::new(), Vec::new(), Vec::new());
        for (n, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| err(e.to_string()))?;
            let field = |i: usize| rec.get(i).map(str::trim).unwrap_or("");
            let bad = |what: &str| err(format!("record {}: bad {what}", n + 1));
            scores.push(field(si).parse::<f64>().map_err(|_| bad("score"))?);
            labels.push(field(li).parse::<u8>().map_err(|_| bad("label"))?);
            contexts.push(Context {
                dataset: field(di).parse().map_err(|_| bad("c_ds"))?,
                device: field(vi).parse().map_err(|_| bad("c_dev"))?,
            });
        }
        Self::with_contexts(scores, labels, contexts)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let err = |e: csv::Error| Error::Csv { path: path.to_path_buf(), message: e.to_string() };
        let mut w = csv::Writer::from_path(path).map_err(err)?;
        w.write_record(["window_id", "score", "label", "c_ds", "c_dev"]).map_err(err)?;
        for i in 0..self.len() {
            w.write_record([
                i.to_string(),
                format!("{:?}", self.scores[i]),
                self.labels[i].to_string(),
                self.contexts[i].dataset.to_string(),
                self.contexts[i].device.to_string(),
            ])
            .map_err(err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    fn subset(&self, keep: impl Fn(usize) -> bool) -> Option<ScoredPredictions> {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep(i)).collect();
        (!idx.is_empty()).then(|| ScoredPredictions {
            scores: idx.iter().map(|&i| self.scores[i]).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            contexts: idx.iter().map(|&i| self.contexts[i]).collect(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl Confusion {
    pub fn new(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        Confusion { tp, fp, tn, fn_ }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// Same matrix with the positive and negative classes exchanged.
    pub fn swapped(&self) -> Confusion {
        Confusion { tp: self.tn, fp: self.fn_, tn: self.tp, fn_: self.fp }
    }
}

/// Score `≥ threshold` counts as a predicted attack.
pub fn confusion_at(preds: &ScoredPredictions, threshold: f64) -> Confusion {
    let mut c = Confusion::default();
    for (&s, &l) in preds.scores.iter().zip(&preds.labels) {
        match (s >= threshold, l == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    c
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub false_alarm_rate: f64,
    pub mcc: f64,
}

/// Threshold metrics; every 0/0 ratio is 0.
pub fn classification_metrics(c: &Confusion) -> ClassificationMetrics {
    let (tp, fp, tn, fn_) = (c.tp as f64, c.fp as f64, c.tn as f64, c.fn_ as f64);
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let denom = ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt();
    ClassificationMetrics {
        precision,
        recall,
        f1: ratio(2.0 * tp, 2.0 * tp + fp + fn_),
        false_alarm_rate: ratio(fp, fp + tn),
        mcc: ratio(tp * tn - fp * fn_, denom),
    }
}

fn by_score(a: f64, b: f64) -> Ordering {
    a.total_cmp(&b)
}

/// Mann–Whitney form of ROC-AUC: the probability that a random attack
/// outscores a random benign sample, ties counting one half. Computed from
/// average ranks in `O(n log n)`.
pub fn roc_auc(preds: &ScoredPredictions) -> Result<f64> {
    let pos = preds.positives();
    let neg = preds.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Degenerate("ROC-AUC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| by_score(preds.scores[a], preds.scores[b]).then(a.cmp(&b)));
    let mut positive_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && preds.scores[order[j + 1]] == preds.scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1 ..= j+1 share their mean.
        let avg = (i + j + 2) as f64 / 2.0;
        let tied_pos = order[i..=j].iter().filter(|&&k| preds.labels[k] == 1).count();
        positive_rank_sum += avg * tied_pos as f64;
        i = j + 1;
    }
    let u = positive_rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}

/// Trapezoidal area under the precision–recall curve traced by lowering the
/// threshold through every distinct score. The curve starts at recall 0 with
/// the first point's precision.
pub fn pr_auc(preds: &ScoredPredictions) -> Result<f64> {
    let pos = preds.positives();
    if pos == 0 {
        return Err(Error::Degenerate("PR-AUC needs at least one positive".into()));
    }
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| by_score(preds.scores[b], preds.scores[a]).then(a.cmp(&b)));
    let mut points: Vec<(f64, f64)> = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = preds.scores[order[i]];
        while i < order.len() && preds.scores[order[i]] == s {
            if preds.labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((tp as f64 / pos as f64, tp as f64 / (tp + fp) as f64));
    }
    let mut area = 0.0;
    let mut prev = (0.0, points[0].1);
    for &p in &points {
        area += (p.0 - prev.0) * (p.1 + prev.1) / 2.0;
        prev = p;
    }
    Ok(area)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: usize,
    pub threshold: f64,
    pub f1: f64,
    pub precision: f64,
    /// Also the detection rate.
    pub recall: f64,
    pub false_alarm_rate: f64,
    pub roc_auc: f64,
    pub pr_auc: f64,
    pub mcc: f64,
    pub confusion: Confusion,
}

impl MetricsReport {
    pub fn detection_rate(&self) -> f64 {
        self.recall
    }
}

pub fn evaluate(preds: &ScoredPredictions, threshold: f64) -> Result<MetricsReport> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::InvalidArgument(format!("threshold {threshold} outside [0, 1]")));
    }
    let confusion = confusion_at(preds, threshold);
    let m = classification_metrics(&confusion);
    Ok(MetricsReport {
        n: preds.len(),
        threshold,
        f1: m.f1,
        precision: m.precision,
        recall: m.recall,
        false_alarm_rate: m.false_alarm_rate,
        roc_auc: roc_auc(preds)?,
        pr_auc: pr_auc(preds)?,
        mcc: m.mcc,
        confusion,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum DatasetMetrics {
    Reported(MetricsReport),
    NotReported { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRow {
    pub dataset_id: u8,
    pub n: usize,
    pub metrics: DatasetMetrics,
}

/// Metrics per source dataset. Datasets below [`MIN_REPORTABLE_SAMPLES`]
/// samples, or with a single class, are listed but not scored.
pub fn per_dataset_breakdown(preds: &ScoredPredictions, threshold: f64) -> Result<Vec<DatasetRow>> {
    let mut ids: Vec<u8> = preds.contexts.iter().map(|c| c.dataset).collect();
    ids.sort_unstable();
    ids.dedup();
    let mut rows = Vec::new();
    for d in ids {
        let sub = preds.subset(|i| preds.contexts[i].dataset == d).expect("id present");
        let metrics = if sub.len() < MIN_REPORTABLE_SAMPLES {
            DatasetMetrics::NotReported {
                reason: format!("not reported: unreliable (N = {} < {MIN_REPORTABLE_SAMPLES})", sub.len()),
            }
        } else {
            match evaluate(&sub, threshold) {
                Ok(m) => DatasetMetrics::Reported(m),
                Err(Error::Degenerate(why)) => DatasetMetrics::NotReported { reason: why },
                Err(e) => return Err(e),
            }
        };
        rows.push(DatasetRow { dataset_id: d, n: sub.len(), metrics });
    }
    Ok(rows)
}

pub struct MetricsTable<'a>(pub &'a [(String, MetricsReport)]);

impl fmt::Display for MetricsTable<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<12} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}",
            "split", "N", "F1", "AUC", "MCC", "PR-AUC", "DetRate", "FA"
        )?;
        for (name, m) in self.0 {
            writeln!(
                f,
                "{:<12} {:>8} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
                name, m.n, m.f1, m.roc_auc, m.mcc, m.pr_auc, m.recall, m.false_alarm_rate
            )?;
        }
        Ok(())
    }
}

pub fn render_breakdown(rows: &[DatasetRow]) -> String {
    let mut out = format!("{:<8} {:>8} {:>8} {:>8} {:>8}\n", "dataset", "N", "DetRate", "FA", "F1");
    for r in rows {
        match &r.metrics {
            DatasetMetrics::Reported(m) => out.push_str(&format!(
                "{:<8} {:>8} {:>8.4} {:>8.4} {:>8.4}\n",
                r.dataset_id, r.n, m.recall, m.false_alarm_rate, m.f1
            )),
            DatasetMetrics::NotReported { reason } => {
                out.push_str(&format!("{:<8} {:>8} {reason}\n", r.dataset_id, r.n))
            }
        }
    }
    out
}

/// Group rows by dataset id, preserving first-seen order inside each group.
pub fn group_by_dataset(preds: &ScoredPredictions) -> BTreeMap<u8, Vec<usize>> {
    let mut groups: BTreeMap<u8, Vec<usize>> = BTreeMap::new();
    for (i, c) in preds.contexts.iter().enumerate() {
        groups.entry(c.dataset).or_default().push(i);
    }
    groups
}
