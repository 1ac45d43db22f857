use super::config::LossConfig;
use crate::error::{Error, Result};

/// Probabilities are floored here before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// Inverse batch frequency per class, normalised so the classes present in
/// the batch average to 1. Absent classes get weight 1; no sample uses it.
pub fn class_weights(labels: &[u8], classes: usize) -> Result<Vec<f64>> {
    if labels.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let mut counts = vec![0usize; classes];
    for &y in labels {
        let y = y as usize;
        if y >= classes {
            return Err(Error::InvalidArgument(format!("label {y} outside {classes} classes")));
        }
        counts[y] += 1;
    }
    let inv: Vec<f64> = counts.iter().map(|&c| if c > 0 { 1.0 / c as f64 } else { 0.0 }).collect();
    let present = counts.iter().filter(|&&c| c > 0).count() as f64;
    let mean = inv.iter().sum::<f64>() / present;
    Ok(inv.iter().map(|&v| if v > 0.0 { v / mean } else { 1.0 }).collect())
}

fn smoothed_target(c: usize, y: usize, classes: usize, eps: f64) -> f64 {
    eps / classes as f64 + if c == y { 1.0 - eps } else { 0.0 }
}

/// `−α_y Σ_c t_c (1 − p_c)^γ log p_c` for one sample with smoothed target `t`.
pub fn focal_sample(p: &[f64], y: usize, alpha_y: f64, cfg: &LossConfig) -> f64 {
    let k = p.len();
    -alpha_y
        * (0..k)
            .map(|c| {
                let pc = p[c].max(PROB_FLOOR);
                smoothed_target(c, y, k, cfg.label_smoothing) * (1.0 - pc).powf(cfg.gamma) * pc.ln()
            })
            .sum::<f64>()
}

/// Gradient of [`focal_sample`] with respect to the logits that produced `p`
/// through a softmax.
pub fn focal_sample_grad_logits(p: &[f64], y: usize, alpha_y: f64, cfg: &LossConfig) -> Vec<f64> {
    let k = p.len();
    let g = cfg.gamma;
    let dp: Vec<f64> = (0..k)
        .map(|c| {
            if p[c] < PROB_FLOOR {
                return 0.0;
            }
            let pc = p[c];
            let t = smoothed_target(c, y, k, cfg.label_smoothing);
            let mut d = (1.0 - pc).powf(g) / pc;
            if g != 0.0 {
                d -= g * (1.0 - pc).powf(g - 1.0) * pc.ln();
            }
            -alpha_y * t * d
        })
        .collect();
    let dot: f64 = (0..k).map(|c| p[c] * dp[c]).sum();
    (0..k).map(|c| p[c] * (dp[c] - dot)).collect()
}

/// Batch-mean focal loss with label smoothing.
pub fn focal_loss(probs: &[Vec<f64>], labels: &[u8], alpha: &[f64], cfg: &LossConfig) -> Result<f64> {
    if probs.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if probs.len() != labels.len() {
        return Err(Error::Shape(format!("{} probability rows for {} labels", probs.len(), labels.len())));
    }
    let mut total = 0.0;
    for (p, &y) in probs.iter().zip(labels) {
        let y = y as usize;
        if y >= p.len() || alpha.len() != p.len() {
            return Err(Error::Shape(format!("label {y} against {} classes and {} weights", p.len(), alpha.len())));
        }
        total += focal_sample(p, y, alpha[y], cfg);
    }
    Ok(total / probs.len() as f64)
}

pub fn cross_entropy(probs: &[Vec<f64>], labels: &[u8]) -> f64 {
    let s: f64 = probs.iter().zip(labels).map(|(p, &y)| -p[y as usize].max(PROB_FLOOR).ln()).sum();
    s / probs.len() as f64
}

pub fn total_loss(cls: f64, aux: f64, aux_weight: f64) -> f64 {
    cls + aux_weight * aux
}
