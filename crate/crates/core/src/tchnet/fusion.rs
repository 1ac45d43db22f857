use super::branches::{lin, norm};
use super::config::ModelConfig;
use super::layers::{check_len, layer_norm, linear, sigmoid, softmax};
use super::weights::WeightStore;
use crate::error::Result;

pub const BRANCHES: [&str; 3] = ["t", "c", "h"];

/// The two branches each branch attends to, in key order.
pub const OTHERS: [[usize; 2]; 3] = [[1, 2], [0, 2], [0, 1]];

#[derive(Debug, Clone, PartialEq)]
pub struct FusionOutput {
    /// Layer-normed concatenation, `3·d_f`.
    pub fused: Vec<f32>,
    /// Per branch (T, C, H): projection to `d_f`.
    pub projected: [Vec<f32>; 3],
    pub attended: [Vec<f32>; 3],
    pub gates: [Vec<f32>; 3],
    /// Gated mix before the final layer-norm.
    pub mixed: [Vec<f32>; 3],
    pub attention: [[f32; 2]; 3],
}

/// Cross-branch gated attention fusion. Each branch queries the keys and
/// values of the other two, then a per-dimension sigmoid gate mixes its own
/// projection with what it attended to.
pub fn cbgaf(w: &WeightStore, cfg: &ModelConfig, h_t: &[f32], h_c: &[f32], h_h: &[f32]) -> Result<FusionOutput> {
    check_len("CB-GAF h_T", h_t.len(), cfg.t_merged())?;
    check_len("CB-GAF h_C", h_c.len(), cfg.c_out())?;
    check_len("CB-GAF h_H", h_h.len(), cfg.h_out)?;
    let df = cfg.fusion_dim;
    let inputs = [h_t, h_c, h_h];
    let mut projected: [Vec<f32>; 3] = Default::default();
    for (i, b) in BRANCHES.iter().enumerate() {
        let (pw, pb) = lin(w, &format!("fusion.proj_{b}"))?;
        projected[i] = linear(inputs[i], pw, pb, df);
    }
    let mut q: [Vec<f32>; 3] = Default::default();
    let mut k: [Vec<f32>; 3] = Default::default();
    let mut v: [Vec<f32>; 3] = Default::default();
    for (i, b) in BRANCHES.iter().enumerate() {
        let (qw, qb) = lin(w, &format!("fusion.{b}.q"))?;
        let (kw, kb) = lin(w, &format!("fusion.{b}.k"))?;
        let (vw, vb) = lin(w, &format!("fusion.{b}.v"))?;
        q[i] = linear(&projected[i], qw, qb, df);
        k[i] = linear(&projected[i], kw, kb, df);
        v[i] = linear(&projected[i], vw, vb, df);
    }

    let scale = 1.0 / (df as f32).sqrt();
    let mut attended: [Vec<f32>; 3] = Default::default();
    let mut gates: [Vec<f32>; 3] = Default::default();
    let mut mixed: [Vec<f32>; 3] = Default::default();
    let mut attention = [[0f32; 2]; 3];
    let mut fused = Vec::with_capacity(3 * df);
    for i in 0..3 {
        let [a, b] = OTHERS[i];
        let mut s = [a, b].map(|j| q[i].iter().zip(&k[j]).map(|(x, y)| x * y).sum::<f32>() * scale);
        softmax(&mut s);
        attention[i] = s;
        attended[i] = (0..df).map(|d| s[0] * v[a][d] + s[1] * v[b][d]).collect();

        let (gw, gb) = lin(w, &format!("fusion.{}.gate", BRANCHES[i]))?;
        let cat: Vec<f32> = projected[i].iter().chain(&attended[i]).copied().collect();
        let mut g = linear(&cat, gw, gb, df);
        g.iter_mut().for_each(|x| *x = sigmoid(*x));
        mixed[i] = (0..df).map(|d| g[d] * projected[i][d] + (1.0 - g[d]) * attended[i][d]).collect();
        fused.extend_from_slice(&mixed[i]);
        gates[i] = g;
    }
    let (lg, lb) = norm(w, "fusion.ln");
    layer_norm(&mut fused, lg, lb);
    Ok(FusionOutput { fused, projected, attended, gates, mixed, attention })
}
