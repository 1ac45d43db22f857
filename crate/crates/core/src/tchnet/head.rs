use super::branches::{bn, lin};
use super::config::ModelConfig;
use super::layers::{check_len, gelu, linear, map_inplace, softmax};
use super::weights::WeightStore;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutput {
    /// Raw-feature projection of the window mean.
    pub r: Vec<f32>,
    /// Classifier input `[fused ∥ r]`.
    pub z: Vec<f32>,
    pub logits: Vec<f32>,
    pub probs: Vec<f32>,
}

/// Residual classification head:
/// `z₁ = GELU(BN(W₁z))`, `z₂ = GELU(BN(W₂z₁)) + W_skip·z`, `softmax(W_out·z₂)`.
pub fn head(w: &WeightStore, cfg: &ModelConfig, fused: &[f32], xbar: &[f32]) -> Result<HeadOutput> {
    check_len("head fused input", fused.len(), cfg.fused_dim())?;
    check_len("head window mean", xbar.len(), cfg.features)?;
    let [h1, h2] = cfg.head_hidden;

    let (rw, rb) = lin(w, "head.raw")?;
    let mut r = linear(xbar, rw, rb, cfg.raw_dim);
    bn(w, "head.raw_bn")?.apply_vec(&mut r);
    map_inplace(&mut r, gelu);

    let z: Vec<f32> = fused.iter().chain(&r).copied().collect();
    let (w1, b1) = lin(w, "head.fc1")?;
    let mut z1 = linear(&z, w1, b1, h1);
    bn(w, "head.bn1")?.apply_vec(&mut z1);
    map_inplace(&mut z1, gelu);

    let (w2, b2) = lin(w, "head.fc2")?;
    let mut z2 = linear(&z1, w2, b2, h2);
    bn(w, "head.bn2")?.apply_vec(&mut z2);
    map_inplace(&mut z2, gelu);
    let (sw, sb) = lin(w, "head.skip")?;
    for (a, s) in z2.iter_mut().zip(linear(&z, sw, sb, h2)) {
        *a += s;
    }

    let (ow, ob) = lin(w, "head.out")?;
    let logits = linear(&z2, ow, ob, cfg.classes);
    let mut probs = logits.clone();
    softmax(&mut probs);
    Ok(HeadOutput { r, z, logits, probs })
}

/// `x̂ = W₂·GELU(W₁·fused)`; training-only, kept for loss evaluation.
pub fn aux_decoder(w: &WeightStore, cfg: &ModelConfig, fused: &[f32]) -> Result<Vec<f32>> {
    check_len("decoder input", fused.len(), cfg.fused_dim())?;
    let (w1, b1) = lin(w, "decoder.fc1")?;
    let (w2, b2) = lin(w, "decoder.fc2")?;
    let mut h = linear(fused, w1, b1, cfg.decoder_hidden);
    map_inplace(&mut h, gelu);
    Ok(linear(&h, w2, b2, cfg.features))
}

/// Mean squared reconstruction error over the feature axis.
pub fn aux_loss(recon: &[f32], xbar: &[f32]) -> Result<f64> {
    check_len("reconstruction", recon.len(), xbar.len())?;
    let s: f64 = recon.iter().zip(xbar).map(|(a, b)| (*a as f64 - *b as f64).powi(2)).sum();
    Ok(s / xbar.len() as f64)
}
