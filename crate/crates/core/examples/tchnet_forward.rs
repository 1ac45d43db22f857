//! Inference with seeded random weights: the shape chain of one forward pass,
//! fusion gates and attention, a weight-file round trip, and bit-identical
//! outputs under one and four worker threads.

use bridge::digest::to_hex;
use bridge::parallel::with_threads;
use bridge::rng::SplitMix64;
use bridge::tchnet::{diagnostics_digest, model_forward, Conventions, ForwardDiagnostics, ModelConfig, WeightStore};
use bridge::windows::Context;

pub fn run_example() -> bridge::Result<Vec<ForwardDiagnostics>> {
    let cfg = ModelConfig::default();
    let weights = WeightStore::random(&cfg, Conventions::default(), 7)?;
    println!("{} tensors, fusion dim {}, classifier input {}", weights.tensors.len(), cfg.fusion_dim, cfg.classifier_in());

    let batch = 4;
    let mut rng = SplitMix64::new(1);
    let x: Vec<f32> = (0..batch * cfg.window * cfg.features).map(|_| rng.uniform(-2.0, 2.0) as f32).collect();
    let ctx: Vec<Context> = (0..batch).map(|i| Context { dataset: i as u8, device: (i % 3) as u8 }).collect();

    let one = with_threads(1, || model_forward(&weights, &x, &ctx))?;
    let four = with_threads(4, || model_forward(&weights, &x, &ctx))?;
    let d = &one[0];
    println!(
        "h_T {} h_C {} h_H {} → fused {} → z {} → probs {:?}",
        d.h_t.len(),
        d.h_c.len(),
        d.h_h.len(),
        d.fused.len(),
        d.z.len(),
        d.probs
    );
    for (b, g) in ["T", "C", "H"].iter().zip(&d.gates) {
        let mean = g.iter().sum::<f32>() / g.len() as f32;
        println!("gate {b}: mean {mean:.4}, range [{:.4}, {:.4}]", g.iter().cloned().fold(1.0, f32::min), g.iter().cloned().fold(0.0, f32::max));
    }
    println!("cross-branch attention {:?}", d.fusion_attention);
    println!("digest 1 thread {} / 4 threads {}", to_hex(diagnostics_digest(&one)), to_hex(diagnostics_digest(&four)));
    assert_eq!(diagnostics_digest(&one), diagnostics_digest(&four));

    let bytes = weights.to_bytes()?;
    let back = WeightStore::from_bytes(&bytes)?;
    assert_eq!(model_forward(&back, &x, &ctx)?, one);
    println!("weight file {} bytes, reload reproduces every output", bytes.len());
    Ok(one)
}

fn main() {
    run_example().expect("forward example");
}
