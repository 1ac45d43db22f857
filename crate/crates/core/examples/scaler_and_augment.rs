//! Robust scaling fitted on one column of eleven points, clipping of an
//! outlier, and training-time Gaussian augmentation of whole windows.

use bridge::transform::{apply_scaler, augment, fit_scaler_columns, AugmentConfig, ScalerParams};

pub fn run_example() -> bridge::Result<ScalerParams> {
    let column: Vec<f32> = (0..=10).map(|i| 10.0 * i as f32).collect();
    let scaler = fit_scaler_columns(&column, 1)?;
    println!("center {} scale {} over {} rows", scaler.center[0], scaler.scale[0], scaler.fit_row_count);

    let scaled = apply_scaler(&scaler, &[50.0, 95.0, 10_000.0, -10_000.0])?;
    println!("50 → {}, 95 → {}, 10000 → {}, -10000 → {}", scaled[0], scaled[1], scaled[2], scaled[3]);

    let windows: Vec<f32> = (0..4 * 8).map(|i| (i % 8) as f32 * 0.1).collect();
    let cfg = AugmentConfig { seed: 3, ..AugmentConfig::default() };
    let noisy = augment(&windows, 8, &cfg)?;
    let touched = (0..4).filter(|w| noisy[w * 8..(w + 1) * 8] != windows[w * 8..(w + 1) * 8]).count();
    println!("augmentation (p = {}, σ = {}) perturbed {touched} of 4 windows", cfg.probability, cfg.sigma);
    Ok(scaler)
}

fn main() {
    run_example().expect("scaler example");
}
