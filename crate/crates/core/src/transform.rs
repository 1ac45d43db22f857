//! Shared robust scaler and training-time Gaussian input noise.
//!
//! Percentiles use linear interpolation at position `p/100 · (n − 1)` over the
//! sorted column. Scale is `P95 − P5`; a spread below [`SCALE_FLOOR`] (typical
//! for zero-filled slots) is replaced by 1.0.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::digest;
use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::vocab::SLOT_COUNT;

pub const SCALE_FLOOR: f64 = 1e-9;
pub const CLIP_LO: f32 = -10.0;
pub const CLIP_HI: f32 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
    pub fit_row_count: usize,
    /// FNV-1a 64 of the fit matrix as little-endian f32 bytes, hex encoded.
    #[serde(with = "hex_u64")]
    pub fit_hash: u64,
}

mod hex_u64 {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&crate::digest::to_hex(*v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        let s = String::deserialize(d)?;
        crate::digest::from_hex(&s).ok_or_else(|| D::Error::custom(format!("bad hex digest {s:?}")))
    }
}

impl ScalerParams {
    pub fn columns(&self) -> usize {
        self.center.len()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scaler serializes")
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let p: ScalerParams = serde_json::from_str(text).map_err(|e| Error::json("scaler", e))?;
        if p.center.len() != p.scale.len() {
            return Err(Error::Shape("scaler center/scale length differ".into()));
        }
        if let Some(j) = p.scale.iter().position(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidArgument(format!("scale[{j}] must be positive")));
        }
        Ok(p)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }
}

/// Linear-interpolation percentile of an ascending slice.
pub fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = p / 100.0 * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

pub fn median_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Fits on a row-major matrix with `columns` columns. Only training data may
/// be passed here.
pub fn fit_scaler_columns(values: &[f32], columns: usize) -> Result<ScalerParams> {
    if columns == 0 || values.len() % columns != 0 {
        return Err(Error::Shape(format!(
            "{} values do not form rows of {columns}",
            values.len()
        )));
    }
    let rows = values.len() / columns;
    if rows < 2 {
        return Err(Error::InvalidArgument(format!(
            "scaler needs at least 2 training rows, got {rows}"
        )));
    }
    let stats: Vec<(f64, f64)> = (0..columns)
        .into_par_iter()
        .map(|j| {
            let mut col: Vec<f64> = values.iter().skip(j).step_by(columns).map(|&v| v as f64).collect();
            col.sort_by(f64::total_cmp);
            let spread = percentile_sorted(&col, 95.0) - percentile_sorted(&col, 5.0);
            let scale = if spread < SCALE_FLOOR { 1.0 } else { spread };
            (median_sorted(&col), scale)
        })
        .collect();
    Ok(ScalerParams {
        center: stats.iter().map(|s| s.0).collect(),
        scale: stats.iter().map(|s| s.1).collect(),
        fit_row_count: rows,
        fit_hash: digest::fnv1a64_f32(values),
    })
}

/// Fits on canonical 46-column rows.
pub fn fit_scaler(values: &[f32]) -> Result<ScalerParams> {
    fit_scaler_columns(values, SLOT_COUNT)
}

pub fn scale_value(x: f32, center: f64, scale: f64) -> f32 {
    (((x as f64 - center) / scale) as f32).clamp(CLIP_LO, CLIP_HI)
}

/// `(x − center) / scale` clipped to `[−10, 10]`, column-wise over a row-major
/// buffer. Never touches `params`.
pub fn apply_scaler(params: &ScalerParams, values: &[f32]) -> Result<Vec<f32>> {
    let cols = params.columns();
    if cols == 0 || values.len() % cols != 0 {
        return Err(Error::Shape(format!(
            "column count mismatch: scaler has {cols} columns, buffer of {} values",
            values.len()
        )));
    }
    Ok(values
        .par_chunks(cols)
        .flat_map_iter(|row| {
            row.iter()
                .zip(params.center.iter().zip(&params.scale))
                .map(|(&x, (&c, &s))| scale_value(x, c, s))
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub probability: f64,
    pub sigma: f64,
    pub clip_lo: f32,
    pub clip_hi: f32,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            probability: 0.30,
            sigma: 0.010,
            clip_lo: CLIP_LO,
            clip_hi: CLIP_HI,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.probability) {
            return Err(Error::InvalidArgument("augment probability outside [0, 1]".into()));
        }
        if !(self.sigma >= 0.0) {
            return Err(Error::InvalidArgument("augment sigma must be ≥ 0".into()));
        }
        if !(self.clip_lo < self.clip_hi) {
            return Err(Error::InvalidArgument("clip_lo must be < clip_hi".into()));
        }
        Ok(())
    }
}

/// Adds clipped Gaussian noise to whole windows of `window_len` values, each
/// window independently with probability `cfg.probability`. One generator
/// stream: per window a Bernoulli draw, then (if selected) one normal per
/// element in order.
pub fn augment(features: &[f32], window_len: usize, cfg: &AugmentConfig) -> Result<Vec<f32>> {
    cfg.validate()?;
    if window_len == 0 || features.len() % window_len != 0 {
        return Err(Error::Shape(format!(
            "{} values do not form windows of {window_len}",
            features.len()
        )));
    }
    let mut out = features.to_vec();
    if cfg.probability == 0.0 || cfg.sigma == 0.0 {
        return Ok(out);
    }
    let mut rng = SplitMix64::new(cfg.seed);
    for window in out.chunks_mut(window_len) {
        if rng.unit_f64() >= cfg.probability {
            continue;
        }
        for v in window.iter_mut() {
            let noisy = *v as f64 + cfg.sigma * rng.normal();
            *v = (noisy as f32).clamp(cfg.clip_lo, cfg.clip_hi);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn eleven_point_column() {
        let col: Vec<f32> = (0..=10).map(|i| (i * 10) as f32).collect();
        let p = fit_scaler_columns(&col, 1).unwrap();
        assert_eq!(p.center, vec![50.0]);
        assert_eq!(p.scale, vec![90.0]);
        let sorted: Vec<f64> = col.iter().map(|&v| v as f64).collect();
        assert_eq!(percentile_sorted(&sorted, 5.0), 5.0);
        assert_eq!(percentile_sorted(&sorted, 95.0), 95.0);
        assert_eq!(p.fit_row_count, 11);
    }

    #[test]
    fn constant_column_floor() {
        let p = fit_scaler_columns(&[7.0, 7.0, 7.0, 7.0], 1).unwrap();
        assert_eq!(p.center, vec![7.0]);
        assert_eq!(p.scale, vec![1.0]);
    }

    #[test]
    fn two_rows() {
        let p = fit_scaler_columns(&[0.0, 10.0], 1).unwrap();
        assert_eq!(p.center, vec![5.0]);
        assert!((p.scale[0] - 9.0).abs() < 1e-12);
    }

    #[test]
    fn too_few_rows() {
        assert!(fit_scaler_columns(&[1.0], 1).is_err());
        assert!(fit_scaler_columns(&[], 1).is_err());
    }

    #[test]
    fn apply_cases() {
        let p = ScalerParams {
            center: vec![50.0, 0.0],
            scale: vec![90.0, 1.0],
            fit_row_count: 2,
            fit_hash: 0,
        };
        let out = apply_scaler(&p, &[50.0, 10_000.0, 100.0, -3.0]).unwrap();
        assert_eq!(out[0], 0.0);
        assert_eq!(out[1], 10.0);
        assert!((out[2] - 0.5556).abs() < 1e-4);
        assert_eq!(out[3], -3.0);
        assert!(apply_scaler(&p, &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn fit_hash_binds_training_bytes() {
        let train = [1.0f32, 2.0, 3.0, 4.0];
        let p = fit_scaler_columns(&train, 2).unwrap();
        assert_eq!(p.fit_hash, digest::fnv1a64_f32(&train));
        let before = p.clone();
        apply_scaler(&p, &[9.0, 9.0]).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn json_round_trip_is_exact() {
        let p = fit_scaler_columns(&[0.1, 0.7, 0.3, 1e-7, 5.5, 2.0], 2).unwrap();
        let back = ScalerParams::from_json_str(&p.to_json()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn augment_identity_cases() {
        let x = vec![0.5f32; 64];
        let mut cfg = AugmentConfig { probability: 0.0, ..Default::default() };
        assert_eq!(augment(&x, 32, &cfg).unwrap(), x);
        cfg.probability = 1.0;
        cfg.sigma = 0.0;
        assert_eq!(augment(&x, 32, &cfg).unwrap(), x);
    }

    #[test]
    fn augment_noise_moments() {
        let x = vec![0.0f32; 32 * 46 * 10];
        let cfg = AugmentConfig { probability: 1.0, sigma: 0.01, seed: 11, ..Default::default() };
        let y = augment(&x, 32 * 46, &cfg).unwrap();
        assert!(y.iter().all(|v| (-10.0..=10.0).contains(v)));
        let n = y.len() as f64;
        let mean = y.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = y.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((var.sqrt() - 0.01).abs() < 0.001, "std {}", var.sqrt());
        assert_eq!(y, augment(&x, 32 * 46, &cfg).unwrap());
    }

    #[test]
    fn augment_reclips() {
        let x = vec![10.0f32; 8];
        let cfg = AugmentConfig { probability: 1.0, sigma: 1.0, seed: 3, ..Default::default() };
        assert!(augment(&x, 8, &cfg).unwrap().iter().all(|&v| v <= 10.0));
    }

    #[test]
    fn augment_rejects_bad_config() {
        let cfg = AugmentConfig { probability: 1.5, ..Default::default() };
        assert!(augment(&[0.0], 1, &cfg).is_err());
    }

    proptest! {
        #[test]
        fn scaled_values_in_range(vals in proptest::collection::vec(-1e6f32..1e6, 4..60)) {
            let rows = vals.len() / 2 * 2;
            let p = fit_scaler_columns(&vals[..rows], 2).unwrap();
            let out = apply_scaler(&p, &vals[..rows]).unwrap();
            prop_assert!(out.iter().all(|v| (-10.0..=10.0).contains(v)));
            prop_assert!(p.scale.iter().all(|&s| s > 0.0));
            // Centre maps to zero.
            let centre: Vec<f32> = p.center.iter().map(|&c| c as f32).collect();
            let z = apply_scaler(&p, &centre).unwrap();
            for (zj, (&c, &s)) in z.iter().zip(p.center.iter().zip(&p.scale)) {
                prop_assert!(((*zj as f64)).abs() <= ((c as f32) as f64 - c).abs() / s + 1e-6);
            }
        }
    }
}
