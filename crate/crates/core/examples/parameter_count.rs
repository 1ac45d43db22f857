//! Parameter accounting of the default model under both conv-bias
//! conventions, with the per-component comparison against the reference.

use bridge::tchnet::{count_parameters, Conventions, ModelConfig, ParameterReport};

pub fn run_example() -> ParameterReport {
    let cfg = ModelConfig::default();
    let report = count_parameters(&cfg, Conventions::default());
    print!("{report}");
    for line in report.residual_explanation() {
        println!("  {line}");
    }
    let with_bias = count_parameters(&cfg, Conventions { conv_bias: true, ..Conventions::default() });
    println!("with conv biases: {} ({:+.3}%)", with_bias.total, 100.0 * with_bias.relative_residual);
    report
}

fn main() {
    run_example();
}
