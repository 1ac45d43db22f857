//! Double-precision CB-GAF with a linear softmax stub head and the focal
//! loss, with hand-written reverse-mode gradients checked against central
//! finite differences.

use serde::Serialize;

use super::config::{LossConfig, ModelConfig};
use super::fusion::{BRANCHES, OTHERS};
use super::loss::{class_weights, focal_sample, focal_sample_grad_logits};
use super::weights::WeightStore;
use crate::error::{Error, Result};
use crate::rng::{sample_sorted, SplitMix64};

pub const FD_STEP: f64 = 1e-5;
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
const LN_EPS: f64 = 1e-5;

const LN_G: usize = 30;
const LN_B: usize = 31;
const STUB_W: usize = 32;
const STUB_B: usize = 33;
const N_PARAMS: usize = 34;

fn proj_w(i: usize) -> usize {
    2 * i
}
fn base(i: usize) -> usize {
    6 + 8 * i
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct GafDims {
    pub t_in: usize,
    pub c_in: usize,
    pub h_in: usize,
    pub fusion_dim: usize,
    pub classes: usize,
}

impl GafDims {
    pub fn from_config(cfg: &ModelConfig) -> Self {
        GafDims {
            t_in: cfg.t_merged(),
            c_in: cfg.c_out(),
            h_in: cfg.h_out,
            fusion_dim: cfg.fusion_dim,
            classes: cfg.classes,
        }
    }

    /// Small enough to check every coordinate.
    pub fn reduced() -> Self {
        GafDims { t_in: 12, c_in: 6, h_in: 6, fusion_dim: 6, classes: 2 }
    }

    fn inputs(&self) -> [usize; 3] {
        [self.t_in, self.c_in, self.h_in]
    }

    fn param_layout(&self) -> Vec<(String, usize)> {
        let d = self.fusion_dim;
        let mut out = Vec::with_capacity(N_PARAMS);
        for (i, b) in BRANCHES.iter().enumerate() {
            out.push((format!("fusion.proj_{b}.weight"), d * self.inputs()[i]));
            out.push((format!("fusion.proj_{b}.bias"), d));
        }
        for b in BRANCHES {
            for m in ["q", "k", "v"] {
                out.push((format!("fusion.{b}.{m}.weight"), d * d));
                out.push((format!("fusion.{b}.{m}.bias"), d));
            }
            out.push((format!("fusion.{b}.gate.weight"), 2 * d * d));
            out.push((format!("fusion.{b}.gate.bias"), d));
        }
        out.push(("fusion.ln.weight".into(), 3 * d));
        out.push(("fusion.ln.bias".into(), 3 * d));
        out.push(("stub.weight".into(), self.classes * 3 * d));
        out.push(("stub.bias".into(), self.classes));
        out
    }
}

/// Parameters, then per-sample inputs `(h_T, h_C, h_H)`, as flat tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct GafFixture {
    pub dims: GafDims,
    pub names: Vec<String>,
    pub tensors: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
    pub loss: LossConfig,
}

struct Cache {
    t: [Vec<f64>; 3],
    q: [Vec<f64>; 3],
    k: [Vec<f64>; 3],
    v: [Vec<f64>; 3],
    a: [[f64; 2]; 3],
    att: [Vec<f64>; 3],
    cat: [Vec<f64>; 3],
    g: [Vec<f64>; 3],
    xhat: Vec<f64>,
    inv_sigma: f64,
    y: Vec<f64>,
    p: Vec<f64>,
}

fn mv(w: &[f64], x: &[f64], b: &[f64]) -> Vec<f64> {
    let n = x.len();
    b.iter()
        .enumerate()
        .map(|(o, bo)| bo + w[o * n..(o + 1) * n].iter().zip(x).map(|(a, c)| a * c).sum::<f64>())
        .collect()
}

fn mtv_add(w: &[f64], dy: &[f64], dx: &mut [f64]) {
    let n = dx.len();
    for (o, d) in dy.iter().enumerate() {
        for (i, x) in dx.iter_mut().enumerate() {
            *x += w[o * n + i] * d;
        }
    }
}

fn outer_add(dw: &mut [f64], dy: &[f64], x: &[f64]) {
    let n = x.len();
    for (o, d) in dy.iter().enumerate() {
        for (i, xi) in x.iter().enumerate() {
            dw[o * n + i] += d * xi;
        }
    }
}

fn add(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(a, b)| *a += b);
}

impl GafFixture {
    /// Weights uniform in `±1/√fan_in`, inputs standard normal, labels mixed.
    pub fn random(dims: GafDims, batch: usize, seed: u64, loss: LossConfig) -> Self {
        let mut rng = SplitMix64::new(seed);
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        let fan = |name: &str, d: &GafDims| -> f64 {
            if name.contains("proj_t") {
                d.t_in as f64
            } else if name.contains("proj_c") {
                d.c_in as f64
            } else if name.contains("proj_h") {
                d.h_in as f64
            } else if name.contains("gate") {
                2.0 * d.fusion_dim as f64
            } else if name.starts_with("stub") || name.contains(".ln.") {
                3.0 * d.fusion_dim as f64
            } else {
                d.fusion_dim as f64
            }
        };
        for (name, len) in dims.param_layout() {
            let r = 1.0 / fan(&name, &dims).sqrt();
            let offset = if name == "fusion.ln.weight" { 1.0 } else { 0.0 };
            tensors.push((0..len).map(|_| offset + rng.uniform(-r, r)).collect());
            names.push(name);
        }
        let mut labels = Vec::with_capacity(batch);
        for s in 0..batch {
            for (i, n) in dims.inputs().into_iter().enumerate() {
                tensors.push((0..n).map(|_| rng.normal()).collect());
                names.push(format!("input[{s}].{}", BRANCHES[i]));
            }
            // at least one of each class once the batch has two samples
            labels.push(if s < 2 { s as u8 } else { rng.below(2) as u8 });
        }
        GafFixture { dims, names, tensors, labels, loss }
    }

    /// CB-GAF weights taken from a store, with a seeded stub head and inputs.
    pub fn from_store(w: &WeightStore, batch: usize, seed: u64, loss: LossConfig) -> Result<Self> {
        if !w.conventions.linear_bias || !w.conventions.norm_affine {
            return Err(Error::InvalidArgument("gradcheck expects biased linears and affine norms".into()));
        }
        let dims = GafDims::from_config(&w.config);
        let mut fx = GafFixture::random(dims, batch, seed, loss);
        for k in 0..STUB_W {
            let src = w.get(&fx.names[k])?;
            fx.tensors[k] = src.iter().map(|&v| v as f64).collect();
        }
        Ok(fx)
    }

    pub fn batch(&self) -> usize {
        self.labels.len()
    }

    fn input(&self, s: usize, i: usize) -> &[f64] {
        &self.tensors[N_PARAMS + 3 * s + i]
    }

    fn forward(&self, s: usize) -> Cache {
        let p = &self.tensors;
        let df = self.dims.fusion_dim;
        let t: [Vec<f64>; 3] = std::array::from_fn(|i| mv(&p[proj_w(i)], self.input(s, i), &p[proj_w(i) + 1]));
        let q: [Vec<f64>; 3] = std::array::from_fn(|i| mv(&p[base(i)], &t[i], &p[base(i) + 1]));
        let k: [Vec<f64>; 3] = std::array::from_fn(|i| mv(&p[base(i) + 2], &t[i], &p[base(i) + 3]));
        let v: [Vec<f64>; 3] = std::array::from_fn(|i| mv(&p[base(i) + 4], &t[i], &p[base(i) + 5]));
        let scale = 1.0 / (df as f64).sqrt();
        let mut a = [[0.0; 2]; 3];
        let mut att: [Vec<f64>; 3] = Default::default();
        let mut cat: [Vec<f64>; 3] = Default::default();
        let mut g: [Vec<f64>; 3] = Default::default();
        let mut u = Vec::with_capacity(3 * df);
        for i in 0..3 {
            let [j0, j1] = OTHERS[i];
            let s0 = q[i].iter().zip(&k[j0]).map(|(x, y)| x * y).sum::<f64>() * scale;
            let s1 = q[i].iter().zip(&k[j1]).map(|(x, y)| x * y).sum::<f64>() * scale;
            let m = s0.max(s1);
            let (e0, e1) = ((s0 - m).exp(), (s1 - m).exp());
            a[i] = [e0 / (e0 + e1), e1 / (e0 + e1)];
            att[i] = (0..df).map(|d| a[i][0] * v[j0][d] + a[i][1] * v[j1][d]).collect();
            cat[i] = t[i].iter().chain(&att[i]).copied().collect();
            g[i] = mv(&p[base(i) + 6], &cat[i], &p[base(i) + 7])
                .into_iter()
                .map(|z| 1.0 / (1.0 + (-z).exp()))
                .collect();
            u.extend((0..df).map(|d| g[i][d] * t[i][d] + (1.0 - g[i][d]) * att[i][d]));
        }
        let n = u.len() as f64;
        let mean = u.iter().sum::<f64>() / n;
        let var = u.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let inv_sigma = 1.0 / (var + LN_EPS).sqrt();
        let xhat: Vec<f64> = u.iter().map(|x| (x - mean) * inv_sigma).collect();
        let y: Vec<f64> = xhat.iter().enumerate().map(|(c, x)| p[LN_G][c] * x + p[LN_B][c]).collect();
        let logits = mv(&p[STUB_W], &y, &p[STUB_B]);
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let z: f64 = e.iter().sum();
        let probs = e.iter().map(|x| x / z).collect();
        Cache { t, q, k, v, a, att, cat, g, xhat, inv_sigma, y, p: probs }
    }

    /// Batch-mean focal loss with batch inverse-frequency class weights.
    pub fn loss_value(&self) -> Result<f64> {
        let alpha = class_weights(&self.labels, self.dims.classes)?;
        let mut total = 0.0;
        for s in 0..self.batch() {
            let c = self.forward(s);
            let y = self.labels[s] as usize;
            total += focal_sample(&c.p, y, alpha[y], &self.loss);
        }
        Ok(total / self.batch() as f64)
    }

    /// Analytic gradient of [`Self::loss_value`] for every tensor.
    pub fn gradients(&self) -> Result<Vec<Vec<f64>>> {
        let alpha = class_weights(&self.labels, self.dims.classes)?;
        let p = &self.tensors;
        let df = self.dims.fusion_dim;
        let scale = 1.0 / (df as f64).sqrt();
        let mut grads: Vec<Vec<f64>> = p.iter().map(|t| vec![0.0; t.len()]).collect();
        let inv_b = 1.0 / self.batch() as f64;
        for s in 0..self.batch() {
            let c = self.forward(s);
            let y = self.labels[s] as usize;
            let dlogits: Vec<f64> =
                focal_sample_grad_logits(&c.p, y, alpha[y], &self.loss).iter().map(|d| d * inv_b).collect();

            outer_add(&mut grads[STUB_W], &dlogits, &c.y);
            add(&mut grads[STUB_B], &dlogits);
            let mut dy = vec![0.0; 3 * df];
            mtv_add(&p[STUB_W], &dlogits, &mut dy);

            for (cidx, d) in dy.iter().enumerate() {
                grads[LN_G][cidx] += d * c.xhat[cidx];
                grads[LN_B][cidx] += d;
            }
            let dxh: Vec<f64> = dy.iter().zip(&p[LN_G]).map(|(d, g)| d * g).collect();
            let n = dxh.len() as f64;
            let m1 = dxh.iter().sum::<f64>() / n;
            let m2 = dxh.iter().zip(&c.xhat).map(|(a, b)| a * b).sum::<f64>() / n;
            let du: Vec<f64> = dxh.iter().zip(&c.xhat).map(|(d, x)| c.inv_sigma * (d - m1 - x * m2)).collect();

            let mut dt: [Vec<f64>; 3] = std::array::from_fn(|_| vec![0.0; df]);
            let mut datt: [Vec<f64>; 3] = std::array::from_fn(|_| vec![0.0; df]);
            for i in 0..3 {
                let dmix = &du[i * df..(i + 1) * df];
                let mut dpre = vec![0.0; df];
                for d in 0..df {
                    let g = c.g[i][d];
                    dt[i][d] += dmix[d] * g;
                    datt[i][d] += dmix[d] * (1.0 - g);
                    dpre[d] = dmix[d] * (c.t[i][d] - c.att[i][d]) * g * (1.0 - g);
                }
                outer_add(&mut grads[base(i) + 6], &dpre, &c.cat[i]);
                add(&mut grads[base(i) + 7], &dpre);
                let mut dcat = vec![0.0; 2 * df];
                mtv_add(&p[base(i) + 6], &dpre, &mut dcat);
                add(&mut dt[i], &dcat[..df]);
                add(&mut datt[i], &dcat[df..]);
            }

            let mut dq: [Vec<f64>; 3] = std::array::from_fn(|_| vec![0.0; df]);
            let mut dk: [Vec<f64>; 3] = std::array::from_fn(|_| vec![0.0; df]);
            let mut dv: [Vec<f64>; 3] = std::array::from_fn(|_| vec![0.0; df]);
            for i in 0..3 {
                let js = OTHERS[i];
                let mut da = [0.0; 2];
                for (slot, &j) in js.iter().enumerate() {
                    for d in 0..df {
                        dv[j][d] += c.a[i][slot] * datt[i][d];
                        da[slot] += datt[i][d] * c.v[j][d];
                    }
                }
                let dot = c.a[i][0] * da[0] + c.a[i][1] * da[1];
                for (slot, &j) in js.iter().enumerate() {
                    let ds = c.a[i][slot] * (da[slot] - dot) * scale;
                    for d in 0..df {
                        dq[i][d] += ds * c.k[j][d];
                        dk[j][d] += ds * c.q[i][d];
                    }
                }
            }
            for i in 0..3 {
                for (off, dz) in [(0, &dq[i]), (2, &dk[i]), (4, &dv[i])] {
                    outer_add(&mut grads[base(i) + off], dz, &c.t[i]);
                    add(&mut grads[base(i) + off + 1], dz);
                    mtv_add(&p[base(i) + off], dz, &mut dt[i]);
                }
                outer_add(&mut grads[proj_w(i)], &dt[i], self.input(s, i));
                add(&mut grads[proj_w(i) + 1], &dt[i]);
                mtv_add(&p[proj_w(i)], &dt[i], &mut grads[N_PARAMS + 3 * s + i]);
            }
        }
        for (name, g) in self.names.iter().zip(&grads) {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient(name.clone()));
            }
        }
        Ok(grads)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coverage {
    All,
    /// Up to this many seeded coordinates per tensor.
    Sampled { per_tensor: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub max_rel_error: f64,
    pub worst_tensor: String,
    pub worst_index: usize,
    pub coordinates: usize,
    pub tensors: usize,
}

/// Max over checked coordinates of `|analytic − numeric| / max(1, |numeric|)`.
pub fn gradcheck_cbgaf_focal(fx: &GafFixture, coverage: Coverage) -> Result<GradcheckReport> {
    let analytic = fx.gradients()?;
    let mut work = fx.clone();
    let mut report = GradcheckReport {
        max_rel_error: 0.0,
        worst_tensor: String::new(),
        worst_index: 0,
        coordinates: 0,
        tensors: fx.tensors.len(),
    };
    for k in 0..fx.tensors.len() {
        let len = fx.tensors[k].len();
        let idx: Vec<usize> = match coverage {
            Coverage::All => (0..len).collect(),
            Coverage::Sampled { per_tensor, seed } => sample_sorted(len, per_tensor.min(len), seed ^ (k as u64 * 0x9e37)),
        };
        for i in idx {
            let orig = work.tensors[k][i];
            work.tensors[k][i] = orig + FD_STEP;
            let up = work.loss_value()?;
            work.tensors[k][i] = orig - FD_STEP;
            let down = work.loss_value()?;
            work.tensors[k][i] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            if !numeric.is_finite() {
                return Err(Error::NonFiniteGradient(format!("{} [{i}] (finite difference)", fx.names[k])));
            }
            let err = (analytic[k][i] - numeric).abs() / numeric.abs().max(1.0);
            report.coordinates += 1;
            if err > report.max_rel_error || report.worst_tensor.is_empty() {
                report.max_rel_error = err.max(report.max_rel_error);
                report.worst_tensor = fx.names[k].clone();
                report.worst_index = i;
            }
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub fixtures: usize,
    pub max_rel_error: f64,
    pub reduced: Vec<GradcheckReport>,
    pub full: Vec<GradcheckReport>,
    pub passed: bool,
}

/// Per seed: every coordinate of a reduced-width fixture, then sampled
/// coordinates of a fixture at the configured widths (weights from `store`
/// when given).
pub fn gradcheck_suite(
    cfg: &ModelConfig,
    store: Option<&WeightStore>,
    fixtures: usize,
    seed: u64,
    per_tensor: usize,
) -> Result<SuiteReport> {
    let loss = LossConfig::default();
    let mut reduced = Vec::new();
    let mut full = Vec::new();
    for f in 0..fixtures {
        let s = seed.wrapping_add(f as u64);
        reduced.push(gradcheck_cbgaf_focal(&GafFixture::random(GafDims::reduced(), 4, s, loss), Coverage::All)?);
        let fx = match store {
            Some(w) => GafFixture::from_store(w, 4, s, loss)?,
            None => GafFixture::random(GafDims::from_config(cfg), 4, s, loss),
        };
        full.push(gradcheck_cbgaf_focal(&fx, Coverage::Sampled { per_tensor, seed: s })?);
    }
    let max_rel_error = reduced.iter().chain(&full).map(|r| r.max_rel_error).fold(0.0, f64::max);
    Ok(SuiteReport { fixtures, max_rel_error, reduced, full, passed: max_rel_error <= GRADCHECK_TOLERANCE })
}
