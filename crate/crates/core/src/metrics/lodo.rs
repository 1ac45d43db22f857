use std::fmt;

use serde::{Deserialize, Serialize};

use super::MetricsReport;
use crate::error::{Error, Result};
use crate::windows::DATASET_IDS;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LodoFold {
    pub held_out: u8,
    pub f1: f64,
    #[serde(default)]
    pub roc_auc: Option<f64>,
    #[serde(default)]
    pub mcc: Option<f64>,
    #[serde(default)]
    pub pr_auc: Option<f64>,
}

impl LodoFold {
    pub fn from_report(held_out: u8, m: &MetricsReport) -> Self {
        LodoFold {
            held_out,
            f1: m.f1,
            roc_auc: Some(m.roc_auc),
            mcc: Some(m.mcc),
            pr_auc: Some(m.pr_auc),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LodoSummary {
    pub folds: Vec<LodoFold>,
    pub mean_f1: f64,
    pub mean_roc_auc: Option<f64>,
    pub mean_mcc: Option<f64>,
    pub mean_pr_auc: Option<f64>,
    pub in_dist_f1: f64,
    /// In-distribution F1 minus mean LODO F1.
    pub generalisation_gap: f64,
}

fn mean_of(folds: &[LodoFold], get: impl Fn(&LodoFold) -> Option<f64>) -> Option<f64> {
    let vals: Option<Vec<f64>> = folds.iter().map(get).collect();
    vals.map(|v| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn lodo_summary(folds: &[LodoFold], in_dist_f1: f64) -> Result<LodoSummary> {
    if folds.len() != DATASET_IDS as usize {
        return Err(Error::InvalidArgument(format!(
            "LODO summary needs {DATASET_IDS} folds, got {}",
            folds.len()
        )));
    }
    let mut sorted = folds.to_vec();
    sorted.sort_by_key(|f| f.held_out);
    if sorted.windows(2).any(|w| w[0].held_out == w[1].held_out) {
        return Err(Error::InvalidArgument("duplicate held-out dataset in LODO folds".into()));
    }
    let mean_f1 = sorted.iter().map(|f| f.f1).sum::<f64>() / sorted.len() as f64;
    Ok(LodoSummary {
        mean_roc_auc: mean_of(&sorted, |f| f.roc_auc),
        mean_mcc: mean_of(&sorted, |f| f.mcc),
        mean_pr_auc: mean_of(&sorted, |f| f.pr_auc),
        folds: sorted,
        mean_f1,
        in_dist_f1,
        generalisation_gap: in_dist_f1 - mean_f1,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into())
}

impl LodoSummary {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("held_out,f1,roc_auc,mcc,pr_auc\n");
        let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for f in &self.folds {
            out.push_str(&format!("{},{},{},{},{}\n", f.held_out, f.f1, cell(f.roc_auc), cell(f.mcc), cell(f.pr_auc)));
        }
        out.push_str(&format!(
            "mean,{},{},{},{}\n",
            self.mean_f1,
            cell(self.mean_roc_auc),
            cell(self.mean_mcc),
            cell(self.mean_pr_auc)
        ));
        out.push_str(&format!("gap,{},,,\n", self.generalisation_gap));
        out
    }
}

impl fmt::Display for LodoSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<10} {:>8} {:>8} {:>8} {:>8}", "held-out", "F1", "AUC", "MCC", "PR-AUC")?;
        for fold in &self.folds {
            writeln!(
                f,
                "{:<10} {:>8.4} {:>8} {:>8} {:>8}",
                fold.held_out,
                fold.f1,
                opt(fold.roc_auc),
                opt(fold.mcc),
                opt(fold.pr_auc)
            )?;
        }
        writeln!(
            f,
            "{:<10} {:>8.4} {:>8} {:>8} {:>8}",
            "MEAN",
            self.mean_f1,
            opt(self.mean_roc_auc),
            opt(self.mean_mcc),
            opt(self.mean_pr_auc)
        )?;
        writeln!(f, "generalisation gap (in-dist F1 {:.4} − LODO mean) = {:+.4}", self.in_dist_f1, self.generalisation_gap)
    }
}
