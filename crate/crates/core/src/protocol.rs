//! Train/test partitioning (stratified, temporal, leave-one-dataset-out) and
//! leakage verification.

use std::collections::{BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::digest;
use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::transform::ScalerParams;
use crate::windows::{WindowSet, DATASET_IDS};

/// Largest accepted gap between train and test benign fractions.
pub const RATIO_TOLERANCE: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SplitMode {
    StratifiedRandom,
    Temporal,
    Lodo { held_out: u8 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    #[serde(flatten)]
    pub mode: SplitMode,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_train_fraction() -> f64 {
    0.8
}

impl SplitSpec {
    pub fn stratified(seed: u64) -> Self {
        SplitSpec {
            mode: SplitMode::StratifiedRandom,
            train_fraction: 0.8,
            seed,
        }
    }

    pub fn temporal() -> Self {
        SplitSpec {
            mode: SplitMode::Temporal,
            train_fraction: 0.8,
            seed: 0,
        }
    }

    pub fn lodo(held_out: u8) -> Self {
        SplitSpec {
            mode: SplitMode::Lodo { held_out },
            train_fraction: 0.8,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "train_fraction {} outside (0, 1)",
                self.train_fraction
            )));
        }
        Ok(())
    }
}

fn train_size(n: usize, fraction: f64) -> usize {
    ((n as f64 * fraction).round() as usize).min(n)
}

fn partition(ws: &WindowSet, in_train: &[bool]) -> (WindowSet, WindowSet) {
    (ws.filter(|i| in_train[i]), ws.filter(|i| !in_train[i]))
}

/// Splits a window set. Both partitions keep the input order.
pub fn split(ws: &WindowSet, spec: &SplitSpec) -> Result<(WindowSet, WindowSet)> {
    spec.validate()?;
    if ws.is_empty() {
        return Err(Error::InvalidArgument("cannot split an empty window set".into()));
    }
    let mut in_train = vec![false; ws.len()];
    match spec.mode {
        SplitMode::StratifiedRandom => {
            let mut rng = SplitMix64::new(spec.seed);
            for label in [0u8, 1] {
                let mut idx: Vec<usize> = (0..ws.len()).filter(|&i| ws.labels[i] == label).collect();
                if idx.is_empty() {
                    return Err(Error::Degenerate(format!(
                        "label class {label} is empty; stratified split impossible"
                    )));
                }
                rng.shuffle(&mut idx);
                for &i in &idx[..train_size(idx.len(), spec.train_fraction)] {
                    in_train[i] = true;
                }
            }
        }
        SplitMode::Temporal => {
            ws.validate()?;
            for d in ws.dataset_ids() {
                let mut idx: Vec<usize> = (0..ws.len()).filter(|&i| ws.origins[i].dataset_id == d).collect();
                idx.sort_by_key(|&i| ws.origins[i].start_row);
                for &i in &idx[..train_size(idx.len(), spec.train_fraction)] {
                    in_train[i] = true;
                }
            }
        }
        SplitMode::Lodo { held_out } => {
            if !ws.contexts.iter().any(|c| c.dataset == held_out) {
                return Err(Error::DatasetsAbsent(vec![held_out]));
            }
            for (i, c) in ws.contexts.iter().enumerate() {
                in_train[i] = c.dataset != held_out;
            }
        }
    }
    Ok(partition(ws, &in_train))
}

/// One fold per dataset id, in id order.
pub fn lodo_folds(ws: &WindowSet) -> Result<Vec<(WindowSet, WindowSet)>> {
    let present: BTreeSet<u8> = ws.contexts.iter().map(|c| c.dataset).collect();
    let absent: Vec<u8> = (0..DATASET_IDS).filter(|d| !present.contains(d)).collect();
    if !absent.is_empty() {
        return Err(Error::DatasetsAbsent(absent));
    }
    (0..DATASET_IDS).map(|d| split(ws, &SplitSpec::lodo(d))).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakageReport {
    pub scaler_order_ok: bool,
    pub overlap_count: usize,
    pub train_benign_fraction: f64,
    pub test_benign_fraction: f64,
    pub ratio_ok: bool,
    pub passed: bool,
}

pub fn window_fingerprint(values: &[f32]) -> u64 {
    digest::fnv1a64_f32(values)
}

pub fn ratio_consistent(train_benign: f64, test_benign: f64) -> bool {
    (train_benign - test_benign).abs() <= RATIO_TOLERANCE + 1e-12
}

/// Number of test windows whose features are byte-identical to some training
/// window. Hash hits are confirmed by comparing the raw values.
pub fn overlap_count(train: &WindowSet, test: &WindowSet) -> usize {
    let train_hashes: Vec<u64> = (0..train.len())
        .into_par_iter()
        .map(|i| window_fingerprint(train.sample(i)))
        .collect();
    let mut buckets: HashMap<u64, Vec<usize>> = HashMap::new();
    for (i, h) in train_hashes.into_iter().enumerate() {
        buckets.entry(h).or_default().push(i);
    }
    (0..test.len())
        .into_par_iter()
        .filter(|&j| {
            let x = test.sample(j);
            buckets.get(&window_fingerprint(x)).is_some_and(|cands| {
                cands
                    .iter()
                    .any(|&i| train.sample(i).iter().zip(x).all(|(a, b)| a.to_bits() == b.to_bits()))
            })
        })
        .count()
}

/// Runs the three leakage checks. `train` and `test` are the partitions the
/// scaler was fitted on and will be applied to, before scaling.
pub fn verify_leakage(train: &WindowSet, test: &WindowSet, scaler: &ScalerParams) -> LeakageReport {
    let scaler_order_ok = digest::fnv1a64_f32(&train.features) == scaler.fit_hash;
    let overlap = overlap_count(train, test);
    let train_benign_fraction = train.benign_fraction();
    let test_benign_fraction = test.benign_fraction();
    let ratio_ok = ratio_consistent(train_benign_fraction, test_benign_fraction);
    LeakageReport {
        scaler_order_ok,
        overlap_count: overlap,
        train_benign_fraction,
        test_benign_fraction,
        ratio_ok,
        passed: scaler_order_ok && overlap == 0 && ratio_ok,
    }
}
