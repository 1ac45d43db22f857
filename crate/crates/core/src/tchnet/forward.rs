use rayon::prelude::*;
use serde::Serialize;

use super::branches::{c_branch, feat_proj, h_branch, t_branch};
use super::fusion::cbgaf;
use super::head::{aux_decoder, head};
use super::layers::Mat;
use super::weights::WeightStore;
use crate::digest::Fnv1a64;
use crate::error::{Error, Result};
use crate::transform::{CLIP_HI, CLIP_LO};
use crate::windows::{Context, WindowSet};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ForwardDiagnostics {
    pub h_t: Vec<f32>,
    pub h_c: Vec<f32>,
    pub h_h: Vec<f32>,
    /// Fusion gates for T, C and H.
    pub gates: [Vec<f32>; 3],
    pub fusion_attention: [[f32; 2]; 3],
    pub fused: Vec<f32>,
    pub z: Vec<f32>,
    pub recon: Vec<f32>,
    pub probs: Vec<f32>,
}

/// Full inference pass for one `window × features` sample.
pub fn forward_sample(w: &WeightStore, x: &[f32], ctx: Context) -> Result<ForwardDiagnostics> {
    let cfg = &w.config;
    if x.len() != cfg.window * cfg.features {
        return Err(Error::Shape(format!(
            "sample has {} values, expected {}×{}",
            x.len(),
            cfg.window,
            cfg.features
        )));
    }
    if let Some(v) = x.iter().find(|v| !(**v >= CLIP_LO && **v <= CLIP_HI)) {
        return Err(Error::InvalidArgument(format!("input value {v} outside the scaled range [{CLIP_LO}, {CLIP_HI}]")));
    }
    let xm = Mat::from_vec(cfg.window, cfg.features, x.to_vec())?;
    let xt = feat_proj(w, cfg, &xm)?;
    let xbar = xt.mean_rows();
    let t = t_branch(w, cfg, &xt)?;
    let h_c = c_branch(w, cfg, ctx.dataset, ctx.device)?;
    let h_h = h_branch(w, cfg, &xbar)?;
    let f = cbgaf(w, cfg, &t.h_t, &h_c, &h_h)?;
    let out = head(w, cfg, &f.fused, &xbar)?;
    let recon = aux_decoder(w, cfg, &f.fused)?;
    Ok(ForwardDiagnostics {
        h_t: t.h_t,
        h_c,
        h_h,
        gates: f.gates,
        fusion_attention: f.attention,
        fused: f.fused,
        z: out.z,
        recon,
        probs: out.probs,
    })
}

/// Batch forward over `B × window × features` values. Samples are independent
/// and evaluated in parallel on the current rayon pool.
pub fn model_forward(w: &WeightStore, features: &[f32], contexts: &[Context]) -> Result<Vec<ForwardDiagnostics>> {
    let per = w.config.window * w.config.features;
    if features.len() != contexts.len() * per {
        return Err(Error::Shape(format!(
            "{} values for {} samples of {per}",
            features.len(),
            contexts.len()
        )));
    }
    contexts
        .par_iter()
        .enumerate()
        .map(|(i, &ctx)| forward_sample(w, &features[i * per..(i + 1) * per], ctx))
        .collect()
}

pub fn forward_windows(w: &WeightStore, ws: &WindowSet) -> Result<Vec<ForwardDiagnostics>> {
    if ws.window != w.config.window {
        return Err(Error::Shape(format!("windows of {} steps, model expects {}", ws.window, w.config.window)));
    }
    model_forward(w, &ws.features, &ws.contexts)
}

/// FNV-1a over every diagnostic vector, in sample order.
pub fn diagnostics_digest(diags: &[ForwardDiagnostics]) -> u64 {
    let mut h = Fnv1a64::default();
    for d in diags {
        for v in [&d.h_t, &d.h_c, &d.h_h, &d.fused, &d.z, &d.recon, &d.probs] {
            h.update_f32(v);
        }
        for g in &d.gates {
            h.update_f32(g);
        }
        for a in &d.fusion_attention {
            h.update_f32(a);
        }
    }
    h.finish()
}
