//! Threshold metrics, ROC/PR areas, the per-dataset breakdown and the exact
//! one-sided Wilcoxon signed-rank test over per-seed F1 values.

use bridge::metrics::{
    classification_metrics, evaluate, per_dataset_breakdown, render_breakdown, roc_auc, wilcoxon_one_sided, Confusion,
    ScoredPredictions, WilcoxonResult,
};
use bridge::windows::Context;

pub fn run_example() -> bridge::Result<WilcoxonResult> {
    let m = classification_metrics(&Confusion::new(3, 1, 4, 2));
    println!("TP3 FP1 TN4 FN2: precision {:.4} recall {:.4} F1 {:.4} FA {:.4} MCC {:.4}", m.precision, m.recall, m.f1, m.false_alarm_rate, m.mcc);

    let auc = |pos: &[f64], neg: &[f64]| {
        let scores = [pos, neg].concat();
        let labels = [vec![1; pos.len()], vec![0; neg.len()]].concat();
        roc_auc(&ScoredPredictions::new(scores, labels).unwrap())
    };
    println!("AUC separated {}, tied {}, interleaved {}", auc(&[0.9, 0.8], &[0.4, 0.3])?, auc(&[0.5; 2], &[0.5; 2])?, auc(&[0.9, 0.3], &[0.4, 0.8])?);

    // Two datasets of 150 and 40 samples; the second is too small to report.
    let n = 190;
    let scores: Vec<f64> = (0..n).map(|i| ((i * 37) % 100) as f64 / 100.0).collect();
    let labels: Vec<u8> = (0..n).map(|i| (((i * 37) % 100) as f64 / 100.0 + (i % 3) as f64 * 0.2 > 0.6) as u8).collect();
    let contexts: Vec<Context> = (0..n).map(|i| Context { dataset: (i >= 150) as u8 * 4, device: 0 }).collect();
    let preds = ScoredPredictions::with_contexts(scores, labels, contexts)?;
    let global = evaluate(&preds, 0.5)?;
    println!("global F1 {:.4} ROC-AUC {:.4} PR-AUC {:.4}", global.f1, global.roc_auc, global.pr_auc);
    print!("{}", render_breakdown(&per_dataset_breakdown(&preds, 0.5)?));

    let model = [0.8312, 0.8265, 0.8301, 0.8287, 0.8315];
    let baseline = [0.8101, 0.8133, 0.8090, 0.8122, 0.8117];
    let w = wilcoxon_one_sided(&model, &baseline)?;
    println!("Wilcoxon W+ = {} over {} pairs, exact p = {}", w.w_plus, w.n_used, w.p_value);
    Ok(w)
}

fn main() {
    run_example().expect("metrics example");
}
