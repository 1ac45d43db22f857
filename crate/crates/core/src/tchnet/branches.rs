use super::config::ModelConfig;
use super::layers::{
    adaptive_avg_pool, conv1d, gelu, gru_direction, layer_norm, layer_norm_rows, linear, linear_rows, map_inplace,
    max_pool2, relu, self_attention, sigmoid, BatchNorm, GruWeights, Mat,
};
use super::weights::WeightStore;
use crate::error::{Error, Result};

pub(crate) fn lin<'a>(w: &'a WeightStore, p: &str) -> Result<(&'a [f32], Option<&'a [f32]>)> {
    Ok((w.get(&format!("{p}.weight"))?, w.opt(&format!("{p}.bias"))))
}

pub(crate) fn norm<'a>(w: &'a WeightStore, p: &str) -> (Option<&'a [f32]>, Option<&'a [f32]>) {
    (w.opt(&format!("{p}.weight")), w.opt(&format!("{p}.bias")))
}

pub(crate) fn bn<'a>(w: &'a WeightStore, p: &str) -> Result<BatchNorm<'a>> {
    let (gamma, beta) = norm(w, p);
    Ok(BatchNorm {
        gamma,
        beta,
        mean: w.get(&format!("{p}.running_mean"))?,
        var: w.get(&format!("{p}.running_var"))?,
    })
}

fn in_path<T>(path: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Shape(m) => Error::Shape(format!("{path}: {m}")),
        other => other,
    })
}

/// Residual per-step projection `X + LN(W₂·GELU(LN(W₁·x)))`, applied to a
/// `window × features` matrix.
pub fn feat_proj(w: &WeightStore, cfg: &ModelConfig, x: &Mat) -> Result<Mat> {
    if x.rows != cfg.window || x.cols != cfg.features {
        return Err(Error::Shape(format!(
            "feat_proj expects {}×{}, got {}×{}",
            cfg.window, cfg.features, x.rows, x.cols
        )));
    }
    let (w1, b1) = lin(w, "feat.fc1")?;
    let (w2, b2) = lin(w, "feat.fc2")?;
    let (g1, s1) = norm(w, "feat.ln1");
    let (g2, s2) = norm(w, "feat.ln2");
    let mut out = x.clone();
    for t in 0..x.rows {
        let mut h = linear(x.row(t), w1, b1, 2 * cfg.features);
        layer_norm(&mut h, g1, s1);
        map_inplace(&mut h, gelu);
        let mut h = linear(&h, w2, b2, cfg.features);
        layer_norm(&mut h, g2, s2);
        for (o, v) in out.row_mut(t).iter_mut().zip(h) {
            *o += v;
        }
    }
    Ok(out)
}

fn ds_conv(w: &WeightStore, p: &str, u: &Mat, cout: usize) -> Result<Mat> {
    let cin = u.rows;
    let (dw, dwb) = lin(w, &format!("{p}.dw"))?;
    let (pw, pwb) = lin(w, &format!("{p}.pw"))?;
    let d = conv1d(u, dw, dwb, cin, 3, 1, 1, cin)?;
    let mut y = conv1d(&d, pw, pwb, cout, 1, 1, 0, 1)?;
    bn(w, &format!("{p}.bn"))?.apply_channels(&mut y);
    map_inplace(&mut y.data, relu);
    Ok(y)
}

/// `ReLU(SE(DSConv₂(DSConv₁(u))) + skip(u))` on a `channels × time` map.
pub fn resconvse_block(w: &WeightStore, prefix: &str, u: &Mat, cout: usize, reduction: usize) -> Result<Mat> {
    let cin = u.rows;
    let expected = w
        .tensors
        .get(&format!("{prefix}.ds1.dw.weight"))
        .map(|t| t.dims[0])
        .ok_or_else(|| Error::Weights(format!("missing tensor {prefix}.ds1.dw.weight")))?;
    if expected != cin {
        return Err(Error::Shape(format!("{prefix}: input has {cin} channels, weights expect {expected}")));
    }
    if u.cols == 0 {
        return Err(Error::Shape(format!("{prefix}: empty time axis")));
    }
    let y = ds_conv(w, &format!("{prefix}.ds1"), u, cout)?;
    let mut y = ds_conv(w, &format!("{prefix}.ds2"), &y, cout)?;

    let (f1, b1) = lin(w, &format!("{prefix}.se.fc1"))?;
    let (f2, b2) = lin(w, &format!("{prefix}.se.fc2"))?;
    let gap: Vec<f32> = (0..cout).map(|c| y.row(c).iter().sum::<f32>() / y.cols as f32).collect();
    let mut s = linear(&gap, f1, b1, cout / reduction);
    map_inplace(&mut s, relu);
    let mut s = linear(&s, f2, b2, cout);
    map_inplace(&mut s, sigmoid);
    for (c, g) in s.iter().enumerate() {
        for v in y.row_mut(c) {
            *v *= g;
        }
    }

    let skip = if cin != cout {
        let (sw, sb) = lin(w, &format!("{prefix}.skip.conv"))?;
        let mut k = conv1d(u, sw, sb, cout, 1, 1, 0, 1)?;
        bn(w, &format!("{prefix}.skip.bn"))?.apply_channels(&mut k);
        k
    } else {
        u.clone()
    };
    for (a, b) in y.data.iter_mut().zip(&skip.data) {
        *a = relu(*a + b);
    }
    Ok(y)
}

fn bigru(w: &WeightStore, prefix: &str, x: &Mat, hidden: usize, layers: usize) -> Result<Mat> {
    let mut cur = x.clone();
    for l in 0..layers {
        let mut dirs = Vec::with_capacity(2);
        for (dir, reverse) in [("fwd", false), ("bwd", true)] {
            let p = format!("{prefix}.l{l}.{dir}");
            let g = GruWeights {
                w_ih: w.get(&format!("{p}.w_ih"))?,
                w_hh: w.get(&format!("{p}.w_hh"))?,
                b_ih: w.opt(&format!("{p}.b_ih")),
                b_hh: w.opt(&format!("{p}.b_hh")),
                hidden,
            };
            dirs.push(gru_direction(&cur, &g, reverse)?);
        }
        cur = Mat::hcat(&[&dirs[0], &dirs[1]])?;
    }
    Ok(cur)
}

/// Pools a `time × dim` sequence onto `n` steps.
fn pool_time(x: &Mat, n: usize) -> Mat {
    adaptive_avg_pool(&x.transpose(), n).transpose()
}

fn pre_ln_encoder_layer(w: &WeightStore, p: &str, x: &mut Mat, heads: usize, ffn: usize) -> Result<()> {
    let (g1, s1) = norm(w, &format!("{p}.ln1"));
    let (g2, s2) = norm(w, &format!("{p}.ln2"));
    let (iw, ib) = lin(w, &format!("{p}.attn.in_proj"))?;
    let (ow, ob) = lin(w, &format!("{p}.attn.out_proj"))?;
    let (f1, fb1) = lin(w, &format!("{p}.ff1"))?;
    let (f2, fb2) = lin(w, &format!("{p}.ff2"))?;

    let mut h = x.clone();
    layer_norm_rows(&mut h, g1, s1);
    let (a, _) = self_attention(&h, iw, ib, ow, ob, heads)?;
    for (v, d) in x.data.iter_mut().zip(&a.data) {
        *v += d;
    }
    let mut h = x.clone();
    layer_norm_rows(&mut h, g2, s2);
    let mut h = linear_rows(&h, f1, fb1, ffn)?;
    map_inplace(&mut h.data, relu);
    let h = linear_rows(&h, f2, fb2, x.cols)?;
    for (v, d) in x.data.iter_mut().zip(&h.data) {
        *v += d;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TOutput {
    /// Path 1 on the shared grid, `grid × 2·gru1`.
    pub g1: Mat,
    /// Path 2, `grid × 2·gru2`.
    pub g2: Mat,
    /// Path 3, `grid × d_T`.
    pub g3: Mat,
    pub h_t: Vec<f32>,
    /// Merge attention rows, one per head and query step.
    pub merge_attention: Vec<Vec<f32>>,
}

pub fn path1(w: &WeightStore, cfg: &ModelConfig, xt: &Mat) -> Result<Mat> {
    let [c1, c2, c3] = cfg.conv_channels;
    let u = xt.transpose();
    let u = max_pool2(&resconvse_block(w, "t.p1.block0", &u, c1, cfg.se_reduction)?);
    let u = max_pool2(&resconvse_block(w, "t.p1.block1", &u, c2, cfg.se_reduction)?);
    let u = adaptive_avg_pool(&resconvse_block(w, "t.p1.block2", &u, c3, cfg.se_reduction)?, cfg.grid);
    bigru(w, "t.p1.gru", &u.transpose(), cfg.gru1_hidden, cfg.gru1_layers)
}

pub fn path2(w: &WeightStore, cfg: &ModelConfig, xt: &Mat) -> Result<Mat> {
    let c = cfg.conv_channels[0];
    let (cw, cb) = lin(w, "t.p2.conv")?;
    let mut v = conv1d(&xt.transpose(), cw, cb, c, 3, 2, 1, 1)?;
    bn(w, "t.p2.bn")?.apply_channels(&mut v);
    map_inplace(&mut v.data, relu);
    let g = bigru(w, "t.p2.gru", &v.transpose(), cfg.gru2_hidden, 1)?;
    Ok(pool_time(&g, cfg.grid))
}

pub fn path3(w: &WeightStore, cfg: &ModelConfig, xt: &Mat) -> Result<Mat> {
    let d = cfg.transformer_dim;
    let (pw, pb) = lin(w, "t.p3.proj")?;
    let pos = w.get("t.p3.pos")?;
    let cls = w.get("t.p3.cls")?;
    let mut tok = linear_rows(xt, pw, pb, d)?;
    for (v, p) in tok.data.iter_mut().zip(pos) {
        *v += p;
    }
    let mut seq = Mat::zeros(xt.rows + 1, d);
    seq.row_mut(0).copy_from_slice(cls);
    seq.data[d..].copy_from_slice(&tok.data);
    for l in 0..cfg.transformer_layers {
        pre_ln_encoder_layer(w, &format!("t.p3.layer{l}"), &mut seq, cfg.heads, cfg.ffn_dim)?;
    }
    let body = Mat::from_vec(xt.rows, d, seq.data[d..].to_vec())?;
    Ok(pool_time(&body, cfg.grid))
}

/// Three temporal paths, merged on the shared grid through layer-normed
/// self-attention and mean-pooled.
pub fn t_branch(w: &WeightStore, cfg: &ModelConfig, xt: &Mat) -> Result<TOutput> {
    let g1 = in_path("path 1", path1(w, cfg, xt))?;
    let g2 = in_path("path 2", path2(w, cfg, xt))?;
    let g3 = in_path("path 3", path3(w, cfg, xt))?;
    let mut g = in_path("merge", Mat::hcat(&[&g1, &g2, &g3]))?;
    let (lg, lb) = norm(w, "t.merge.ln");
    layer_norm_rows(&mut g, lg, lb);
    let (iw, ib) = lin(w, "t.merge.attn.in_proj")?;
    let (ow, ob) = lin(w, "t.merge.attn.out_proj")?;
    let (a, merge_attention) = in_path("merge", self_attention(&g, iw, ib, ow, ob, cfg.heads))?;
    Ok(TOutput { h_t: a.mean_rows(), g1, g2, g3, merge_attention })
}

/// Two-layer MLP on the window mean, batch-norm then GELU after each layer.
pub fn h_branch(w: &WeightStore, cfg: &ModelConfig, xbar: &[f32]) -> Result<Vec<f32>> {
    super::layers::check_len("H-branch input", xbar.len(), cfg.features)?;
    let (w1, b1) = lin(w, "h.fc1")?;
    let (w2, b2) = lin(w, "h.fc2")?;
    let mut h = linear(xbar, w1, b1, cfg.h_hidden);
    bn(w, "h.bn1")?.apply_vec(&mut h);
    map_inplace(&mut h, gelu);
    let mut h = linear(&h, w2, b2, cfg.h_out);
    bn(w, "h.bn2")?.apply_vec(&mut h);
    map_inplace(&mut h, gelu);
    Ok(h)
}

pub fn c_branch(w: &WeightStore, cfg: &ModelConfig, dataset: u8, device: u8) -> Result<Vec<f32>> {
    let (ds, dev) = (dataset as usize, device as usize);
    if ds >= cfg.datasets || dev >= cfg.devices {
        return Err(Error::InvalidArgument(format!(
            "context ({dataset}, {device}) outside {}×{} embedding tables",
            cfg.datasets, cfg.devices
        )));
    }
    let e = cfg.embed_dim;
    let mut out = w.get("c.ds_embed")?[ds * e..(ds + 1) * e].to_vec();
    out.extend_from_slice(&w.get("c.dev_embed")?[dev * e..(dev + 1) * e]);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tchnet::config::Conventions;
    use crate::tchnet::weights::{layer_inventory, Role};

    fn store() -> WeightStore {
        WeightStore::random(&ModelConfig::default(), Conventions::default(), 11).unwrap()
    }

    /// Unit scales, zero shifts and means, `var + eps ≈ 1`.
    fn neutral_norms(w: &mut WeightStore) {
        for spec in layer_inventory(&w.config.clone(), w.conventions) {
            let v = match spec.role {
                Role::NormScale => 1.0,
                Role::RunningVar => 1.0 - crate::tchnet::layers::NORM_EPS,
                Role::NormShift | Role::RunningMean => 0.0,
                _ => continue,
            };
            w.get_mut(&spec.name).unwrap().iter_mut().for_each(|x| *x = v);
        }
    }

    fn input(seed: u64) -> Mat {
        let mut rng = crate::rng::SplitMix64::new(seed);
        Mat::from_vec(32, 46, (0..32 * 46).map(|_| rng.uniform(-2.0, 2.0) as f32).collect()).unwrap()
    }

    #[test]
    fn feat_proj_zero_weights_is_identity() {
        let mut w = store();
        neutral_norms(&mut w);
        for p in ["feat.fc1", "feat.fc2"] {
            w.get_mut(&format!("{p}.weight")).unwrap().iter_mut().for_each(|x| *x = 0.0);
            w.get_mut(&format!("{p}.bias")).unwrap().iter_mut().for_each(|x| *x = 0.0);
        }
        let x = input(1);
        assert_eq!(feat_proj(&w, &w.config, &x).unwrap(), x);
        assert!(feat_proj(&w, &w.config, &Mat::zeros(31, 46)).is_err());
    }

    #[test]
    fn block_with_zero_convs_passes_relu_identity() {
        let mut w = store();
        neutral_norms(&mut w);
        let p = "t.p1.block2";
        for name in w.tensors.keys().cloned().collect::<Vec<_>>() {
            if name.starts_with(p) && (name.contains(".dw.") || name.contains(".pw.")) {
                w.get_mut(&name).unwrap().iter_mut().for_each(|x| *x = 0.0);
            }
        }
        let mut rng = crate::rng::SplitMix64::new(5);
        let u = Mat::from_vec(128, 8, (0..1024).map(|_| rng.uniform(-1.0, 1.0) as f32).collect()).unwrap();
        let y = resconvse_block(&w, p, &u, 128, 8).unwrap();
        let want: Vec<f32> = u.data.iter().map(|&v| relu(v)).collect();
        assert_eq!(y.data, want);
    }

    #[test]
    fn zero_se_halves_before_skip() {
        let mut w = store();
        neutral_norms(&mut w);
        let p = "t.p1.block2";
        for name in ["se.fc1.weight", "se.fc1.bias", "se.fc2.weight", "se.fc2.bias"] {
            w.get_mut(&format!("{p}.{name}")).unwrap().iter_mut().for_each(|x| *x = 0.0);
        }
        let u = Mat::zeros(128, 8);
        // with zero input the skip adds nothing, so the output is half the DSConv stack
        let full = resconvse_block(&w, p, &u, 128, 8).unwrap();
        let d1 = ds_conv(&w, &format!("{p}.ds1"), &u, 128).unwrap();
        let d2 = ds_conv(&w, &format!("{p}.ds2"), &d1, 128).unwrap();
        for (a, b) in full.data.iter().zip(&d2.data) {
            assert_eq!(*a, 0.5 * b);
        }
    }

    #[test]
    fn block_channel_mismatch() {
        let w = store();
        let e = resconvse_block(&w, "t.p1.block0", &Mat::zeros(40, 32), 64, 8).unwrap_err();
        assert!(e.to_string().contains("40 channels"));
    }

    #[test]
    fn stage_one_then_pool_is_64_by_16() {
        let w = store();
        let u = resconvse_block(&w, "t.p1.block0", &input(2).transpose(), 64, 8).unwrap();
        let p = max_pool2(&u);
        assert_eq!((p.rows, p.cols), (64, 16));
    }

    #[test]
    fn t_branch_shapes() {
        let w = store();
        let t = t_branch(&w, &w.config, &input(3)).unwrap();
        assert_eq!((t.g1.rows, t.g1.cols), (8, 256));
        assert_eq!((t.g2.rows, t.g2.cols), (8, 128));
        assert_eq!((t.g3.rows, t.g3.cols), (8, 128));
        assert_eq!(t.h_t.len(), 512);
        for row in &t.merge_attention {
            assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn constant_input_makes_path3_tokens_equal() {
        let mut w = store();
        w.get_mut("t.p3.pos").unwrap().iter_mut().for_each(|x| *x = 0.0);
        let row: Vec<f32> = (0..46).map(|i| (i as f32 * 0.37).sin()).collect();
        let x = Mat::from_vec(32, 46, row.repeat(32)).unwrap();
        let g3 = path3(&w, &w.config, &x).unwrap();
        for r in 1..g3.rows {
            for c in 0..g3.cols {
                assert!((g3.at(r, c) - g3.at(0, c)).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn h_branch_zero_input_zero_biases() {
        let mut w = store();
        neutral_norms(&mut w);
        for p in ["h.fc1.bias", "h.fc2.bias"] {
            w.get_mut(p).unwrap().iter_mut().for_each(|x| *x = 0.0);
        }
        let h = h_branch(&w, &w.config, &[0.0; 46]).unwrap();
        assert_eq!(h, vec![0.0; 64]);
        // a lone output bias of 0.5 passes through the unit batch-norm into GELU
        w.get_mut("h.fc2.bias").unwrap()[0] = 0.5;
        let h = h_branch(&w, &w.config, &[0.0; 46]).unwrap();
        assert!((h[0] - gelu(0.5)).abs() < 1e-7);
    }

    #[test]
    fn c_branch_rows() {
        let w = store();
        let c = c_branch(&w, &w.config, 0, 0).unwrap();
        assert_eq!(&c[..32], &w.get("c.ds_embed").unwrap()[..32]);
        assert_eq!(&c[32..], &w.get("c.dev_embed").unwrap()[..32]);
        assert_eq!(c_branch(&w, &w.config, 4, 5).unwrap().len(), 64);
        assert!(c_branch(&w, &w.config, 5, 0).is_err());
        assert!(c_branch(&w, &w.config, 0, 6).is_err());
    }
}
