//! Central-difference check of the hand-written CB-GAF + focal-loss backward
//! pass, at reduced width over every coordinate and at full width over a
//! sample of coordinates per tensor.

use bridge::tchnet::{cross_entropy, focal_loss, gradcheck_suite, LossConfig, ModelConfig, SuiteReport};

pub fn run_example() -> bridge::Result<SuiteReport> {
    let report = gradcheck_suite(&ModelConfig::default(), None, 2, 0, 8)?;
    for r in report.reduced.iter().chain(&report.full) {
        println!(
            "{:>6} coordinates over {:>2} tensors: max rel error {:.2e} (worst {}[{}])",
            r.coordinates, r.tensors, r.max_rel_error, r.worst_tensor, r.worst_index
        );
    }
    println!("passed: {}", report.passed);

    let probs = vec![vec![0.7, 0.3], vec![0.2, 0.8], vec![0.55, 0.45]];
    let labels = [0u8, 1, 1];
    let plain = LossConfig { gamma: 0.0, label_smoothing: 0.0, ..LossConfig::default() };
    let f = focal_loss(&probs, &labels, &[1.0, 1.0], &plain)?;
    let ce = cross_entropy(&probs, &labels);
    println!("γ = 0, ε = 0: focal {f:.12} vs cross-entropy {ce:.12}");
    Ok(report)
}

fn main() {
    run_example().expect("gradcheck example");
}
