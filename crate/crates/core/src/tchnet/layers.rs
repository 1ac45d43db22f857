//! Single-sample f32 building blocks. Every reduction runs in a fixed order so
//! results do not depend on how samples are scheduled across threads.

use statrs::function::erf::erf;

use crate::error::{Error, Result};

pub const NORM_EPS: f32 = 1e-5;

/// Row-major matrix. Sequences are `time × features`, convolution maps are
/// `channels × time`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!("{rows}×{cols} matrix from {} values", data.len())));
        }
        Ok(Mat { rows, cols, data })
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f32] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn at(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }

    pub fn transpose(&self) -> Mat {
        let mut out = Mat::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// Concatenates along columns.
    pub fn hcat(parts: &[&Mat]) -> Result<Mat> {
        let rows = parts[0].rows;
        if parts.iter().any(|p| p.rows != rows) {
            return Err(Error::Shape("hcat of matrices with different row counts".into()));
        }
        let cols = parts.iter().map(|p| p.cols).sum();
        let mut out = Mat::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for p in parts {
                out.data[r * cols + off..r * cols + off + p.cols].copy_from_slice(p.row(r));
                off += p.cols;
            }
        }
        Ok(out)
    }

    pub fn mean_rows(&self) -> Vec<f32> {
        let mut acc = vec![0f64; self.cols];
        for r in 0..self.rows {
            for (a, v) in acc.iter_mut().zip(self.row(r)) {
                *a += *v as f64;
            }
        }
        acc.iter().map(|a| (a / self.rows as f64) as f32).collect()
    }
}

pub fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::Shape(format!("{what}: expected {want} values, got {got}")));
    }
    Ok(())
}

/// `y = W x + b` with `W` stored `out × in`.
pub fn linear(x: &[f32], w: &[f32], b: Option<&[f32]>, out: usize) -> Vec<f32> {
    let inp = x.len();
    debug_assert_eq!(w.len(), out * inp);
    (0..out)
        .map(|o| {
            let row = &w[o * inp..(o + 1) * inp];
            let mut s = 0f32;
            for (wi, xi) in row.iter().zip(x) {
                s += wi * xi;
            }
            s + b.map_or(0.0, |b| b[o])
        })
        .collect()
}

pub fn linear_rows(x: &Mat, w: &[f32], b: Option<&[f32]>, out: usize) -> Result<Mat> {
    check_len("linear weight", w.len(), out * x.cols)?;
    let mut data = Vec::with_capacity(x.rows * out);
    for r in 0..x.rows {
        data.extend(linear(x.row(r), w, b, out));
    }
    Mat::from_vec(x.rows, out, data)
}

pub fn layer_norm(x: &mut [f32], gamma: Option<&[f32]>, beta: Option<&[f32]>) {
    let n = x.len() as f64;
    let mean = x.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = x.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    let inv = 1.0 / (var + NORM_EPS as f64).sqrt();
    for (i, v) in x.iter_mut().enumerate() {
        let mut y = ((*v as f64 - mean) * inv) as f32;
        if let Some(g) = gamma {
            y *= g[i];
        }
        if let Some(b) = beta {
            y += b[i];
        }
        *v = y;
    }
}

pub fn layer_norm_rows(x: &mut Mat, gamma: Option<&[f32]>, beta: Option<&[f32]>) {
    for r in 0..x.rows {
        layer_norm(x.row_mut(r), gamma, beta);
    }
}

/// Inference-mode batch-norm parameters for one feature axis.
pub struct BatchNorm<'a> {
    pub gamma: Option<&'a [f32]>,
    pub beta: Option<&'a [f32]>,
    pub mean: &'a [f32],
    pub var: &'a [f32],
}

impl BatchNorm<'_> {
    pub fn apply(&self, c: usize, v: f32) -> f32 {
        let mut y = (v - self.mean[c]) / (self.var[c] + NORM_EPS).sqrt();
        if let Some(g) = self.gamma {
            y *= g[c];
        }
        if let Some(b) = self.beta {
            y += b[c];
        }
        y
    }

    pub fn apply_vec(&self, x: &mut [f32]) {
        for (c, v) in x.iter_mut().enumerate() {
            *v = self.apply(c, *v);
        }
    }

    /// Normalises a `channels × time` map per channel.
    pub fn apply_channels(&self, x: &mut Mat) {
        for c in 0..x.rows {
            for v in x.row_mut(c) {
                *v = self.apply(c, *v);
            }
        }
    }
}

pub fn gelu(v: f32) -> f32 {
    let x = v as f64;
    (0.5 * x * (1.0 + erf(x / std::f64::consts::SQRT_2))) as f32
}

pub fn relu(v: f32) -> f32 {
    v.max(0.0)
}

pub fn sigmoid(v: f32) -> f32 {
    1.0 / (1.0 + (-v).exp())
}

pub fn softmax(x: &mut [f32]) {
    let m = x.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let mut s = 0f32;
    for v in x.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in x.iter_mut() {
        *v /= s;
    }
}

pub fn map_inplace(x: &mut [f32], f: fn(f32) -> f32) {
    for v in x.iter_mut() {
        *v = f(*v);
    }
}

/// 1-D convolution over a `channels × time` map. `w` is
/// `out × (in/groups) × k`; zero padding on both ends.
pub fn conv1d(
    x: &Mat,
    w: &[f32],
    b: Option<&[f32]>,
    out_ch: usize,
    k: usize,
    stride: usize,
    pad: usize,
    groups: usize,
) -> Result<Mat> {
    let cin = x.rows;
    if cin % groups != 0 || out_ch % groups != 0 {
        return Err(Error::Shape(format!("conv groups {groups} do not divide channels {cin}→{out_ch}")));
    }
    let cpg = cin / groups;
    let opg = out_ch / groups;
    check_len("conv weight", w.len(), out_ch * cpg * k)?;
    let len = x.cols;
    if len + 2 * pad < k {
        return Err(Error::Shape(format!("conv input length {len} shorter than kernel {k}")));
    }
    let lout = (len + 2 * pad - k) / stride + 1;
    let mut out = Mat::zeros(out_ch, lout);
    for o in 0..out_ch {
        let g = o / opg;
        for t in 0..lout {
            let mut s = b.map_or(0.0, |b| b[o]);
            for ci in 0..cpg {
                let ch = g * cpg + ci;
                let wrow = &w[(o * cpg + ci) * k..(o * cpg + ci + 1) * k];
                for (j, wj) in wrow.iter().enumerate() {
                    let pos = (t * stride + j) as isize - pad as isize;
                    if pos >= 0 && (pos as usize) < len {
                        s += wj * x.at(ch, pos as usize);
                    }
                }
            }
            out.data[o * lout + t] = s;
        }
    }
    Ok(out)
}

/// Non-overlapping max-pool of width 2 along time.
pub fn max_pool2(x: &Mat) -> Mat {
    let lout = x.cols / 2;
    let mut out = Mat::zeros(x.rows, lout);
    for c in 0..x.rows {
        for t in 0..lout {
            out.data[c * lout + t] = x.at(c, 2 * t).max(x.at(c, 2 * t + 1));
        }
    }
    out
}

/// Adaptive average pool along columns: bin `i` covers
/// `[⌊i·L/n⌋, ⌈(i+1)·L/n⌉)`.
pub fn adaptive_avg_pool(x: &Mat, n: usize) -> Mat {
    let len = x.cols;
    let mut out = Mat::zeros(x.rows, n);
    for i in 0..n {
        let start = i * len / n;
        let end = ((i + 1) * len).div_ceil(n);
        for r in 0..x.rows {
            let s: f32 = (start..end).map(|t| x.at(r, t)).sum();
            out.data[r * n + i] = s / (end - start) as f32;
        }
    }
    out
}

pub struct GruWeights<'a> {
    pub w_ih: &'a [f32],
    pub w_hh: &'a [f32],
    pub b_ih: Option<&'a [f32]>,
    pub b_hh: Option<&'a [f32]>,
    pub hidden: usize,
}

/// One GRU direction over a `time × in` sequence, gate order (r, z, n):
/// `n = tanh(W_in x + b_in + r ⊙ (W_hn h + b_hn))`, `h' = (1 − z) ⊙ n + z ⊙ h`.
pub fn gru_direction(x: &Mat, g: &GruWeights<'_>, reverse: bool) -> Result<Mat> {
    let h = g.hidden;
    check_len("GRU w_ih", g.w_ih.len(), 3 * h * x.cols)?;
    check_len("GRU w_hh", g.w_hh.len(), 3 * h * h)?;
    let mut state = vec![0f32; h];
    let mut out = Mat::zeros(x.rows, h);
    let steps: Vec<usize> = if reverse { (0..x.rows).rev().collect() } else { (0..x.rows).collect() };
    for t in steps {
        let gi = linear(x.row(t), g.w_ih, g.b_ih, 3 * h);
        let gh = linear(&state, g.w_hh, g.b_hh, 3 * h);
        for j in 0..h {
            let r = sigmoid(gi[j] + gh[j]);
            let z = sigmoid(gi[h + j] + gh[h + j]);
            let n = (gi[2 * h + j] + r * gh[2 * h + j]).tanh();
            state[j] = (1.0 - z) * n + z * state[j];
        }
        out.row_mut(t).copy_from_slice(&state);
    }
    Ok(out)
}

/// Multi-head self-attention with packed `3d × d` input projection. Returns
/// the output and the per-head attention rows.
pub fn self_attention(
    x: &Mat,
    in_w: &[f32],
    in_b: Option<&[f32]>,
    out_w: &[f32],
    out_b: Option<&[f32]>,
    heads: usize,
) -> Result<(Mat, Vec<Vec<f32>>)> {
    let d = x.cols;
    if d % heads != 0 {
        return Err(Error::Shape(format!("{heads} heads do not divide width {d}")));
    }
    let qkv = linear_rows(x, in_w, in_b, 3 * d)?;
    let dh = d / heads;
    let scale = 1.0 / (dh as f32).sqrt();
    let n = x.rows;
    let mut ctx = Mat::zeros(n, d);
    let mut weights = Vec::with_capacity(heads * n);
    for hd in 0..heads {
        let qo = hd * dh;
        let ko = d + hd * dh;
        let vo = 2 * d + hd * dh;
        for i in 0..n {
            let qi = &qkv.row(i)[qo..qo + dh];
            let mut s: Vec<f32> = (0..n)
                .map(|j| {
                    let kj = &qkv.row(j)[ko..ko + dh];
                    qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f32>() * scale
                })
                .collect();
            softmax(&mut s);
            for c in 0..dh {
                let mut acc = 0f32;
                for (j, a) in s.iter().enumerate() {
                    acc += a * qkv.at(j, vo + c);
                }
                ctx.data[i * d + qo + c] = acc;
            }
            weights.push(s);
        }
    }
    Ok((linear_rows(&ctx, out_w, out_b, d)?, weights))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adaptive_pool_of_sixteen_is_pair_means() {
        let x = Mat::from_vec(1, 16, (0..16).map(|v| v as f32).collect()).unwrap();
        let p = adaptive_avg_pool(&x, 8);
        let want: Vec<f32> = (0..8).map(|i| (2 * i) as f32 + 0.5).collect();
        assert_eq!(p.data, want);
        let same = adaptive_avg_pool(&p, 8);
        assert_eq!(same, p);
    }

    #[test]
    fn adaptive_pool_uneven_bins_overlap() {
        let x = Mat::from_vec(1, 5, vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        // bins [0,3) and [2,5)
        assert_eq!(adaptive_avg_pool(&x, 2).data, vec![2.0, 4.0]);
    }

    #[test]
    fn conv_output_length_and_padding() {
        let x = Mat::from_vec(1, 32, vec![1.0; 32]).unwrap();
        let y = conv1d(&x, &[1.0, 1.0, 1.0], None, 1, 3, 2, 1, 1).unwrap();
        assert_eq!(y.cols, 16);
        assert_eq!(y.at(0, 0), 2.0);
        assert_eq!(y.at(0, 1), 3.0);
        let dw = conv1d(&Mat::zeros(4, 8), &[0.0; 12], None, 4, 3, 1, 1, 4).unwrap();
        assert_eq!((dw.rows, dw.cols), (4, 8));
    }

    #[test]
    fn gru_zero_weights() {
        // r = z = 0.5, n = 0 every step: h halves from zero, stays zero.
        let x = Mat::from_vec(3, 2, vec![1.0; 6]).unwrap();
        let g = GruWeights { w_ih: &[0.0; 12], w_hh: &[0.0; 12], b_ih: None, b_hh: None, hidden: 2 };
        assert!(gru_direction(&x, &g, false).unwrap().data.iter().all(|&v| v == 0.0));
        // candidate bias 1 → n = tanh(1), h_t = 0.5·tanh(1) + 0.5·h_{t−1}
        let mut b = vec![0.0; 6];
        b[4] = 1.0;
        b[5] = 1.0;
        let g = GruWeights { b_ih: Some(&b), ..g };
        let out = gru_direction(&x, &g, false).unwrap();
        let n = 1f32.tanh();
        let h1 = 0.5 * n;
        let h2 = 0.5 * n + 0.5 * h1;
        assert!((out.at(0, 0) - h1).abs() < 1e-7 && (out.at(1, 1) - h2).abs() < 1e-7);
        let rev = gru_direction(&x, &g, true).unwrap();
        assert!((rev.at(2, 0) - h1).abs() < 1e-7);
    }

    #[test]
    fn attention_on_identical_tokens() {
        let x = Mat::from_vec(3, 4, [0.3f32, -0.2, 0.5, 0.1].repeat(3)).unwrap();
        let in_w: Vec<f32> = (0..48).map(|i| ((i * 7 % 11) as f32 - 5.0) * 0.05).collect();
        let out_w: Vec<f32> = (0..16).map(|i| ((i * 3 % 5) as f32 - 2.0) * 0.1).collect();
        let (y, w) = self_attention(&x, &in_w, None, &out_w, None, 2).unwrap();
        for row in &w {
            assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|&a| (a - 1.0 / 3.0).abs() < 1e-6));
        }
        assert_eq!(y.row(0), y.row(2));
    }

    #[test]
    fn gelu_reference_points() {
        assert_eq!(gelu(0.0), 0.0);
        assert!((gelu(1.0) - 0.841_344_7).abs() < 1e-6);
        assert!((gelu(-1.0) + 0.158_655_3).abs() < 1e-6);
    }

    #[test]
    fn layer_norm_zero_vector() {
        let mut x = vec![0.0f32; 5];
        layer_norm(&mut x, None, Some(&[1.0, 2.0, 3.0, 4.0, 5.0]));
        assert_eq!(x, vec![1.0, 2.0, 3.0, 4.0, 5.0]);
    }
}
