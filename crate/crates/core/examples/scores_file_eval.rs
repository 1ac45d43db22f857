//! Scoring an external model through the scores-file interface, then turning
//! per-fold F1 values into a LODO summary with its generalisation gap.

use bridge::metrics::{evaluate, lodo_summary, LodoFold, LodoSummary, ScoredPredictions};
use bridge::windows::Context;

pub fn run_example() -> bridge::Result<LodoSummary> {
    let dir = tempfile::tempdir().map_err(|e| bridge::Error::InvalidArgument(e.to_string()))?;
    let path = dir.path().join("scores.csv");
    let scores = vec![0.92, 0.15, 0.64, 0.48, 0.81, 0.05, 0.33, 0.71];
    let labels = vec![1, 0, 1, 1, 1, 0, 0, 0];
    let contexts = (0..8).map(|i| Context { dataset: i % 2, device: 0 }).collect();
    ScoredPredictions::with_contexts(scores, labels, contexts)?.write_csv(&path)?;

    let preds = ScoredPredictions::from_csv(&path)?;
    let m = evaluate(&preds, 0.5)?;
    println!("external model: F1 {:.4} MCC {:.4} ROC-AUC {:.4} PR-AUC {:.4}", m.f1, m.mcc, m.roc_auc, m.pr_auc);

    let folds: Vec<LodoFold> = [0.3128, 0.6013, 0.5934, 0.6791, 0.6021]
        .iter()
        .enumerate()
        .map(|(d, &f1)| LodoFold { held_out: d as u8, f1, roc_auc: None, mcc: None, pr_auc: None })
        .collect();
    let summary = lodo_summary(&folds, 0.8296)?;
    print!("{summary}");
    print!("{}", summary.to_csv());
    Ok(summary)
}

fn main() {
    run_example().expect("scores example");
}
