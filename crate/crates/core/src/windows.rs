//! Sliding-window sequence construction over time-sorted canonical matrices.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{CanonicalMatrix, ATTACK};
use crate::rng;
use crate::vocab::SLOT_COUNT;

pub const WINDOW: usize = 32;
pub const STRIDE: usize = 4;
pub const TRAIN_CAP: usize = 800_000;
pub const TEST_CAP: usize = 200_000;
pub const DATASET_IDS: u8 = 5;
pub const DEVICE_CATEGORIES: u8 = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Context {
    pub dataset: u8,
    pub device: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Origin {
    pub dataset_id: u8,
    pub start_row: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowConfig {
    pub window: usize,
    pub stride: usize,
    pub train_cap: usize,
    pub test_cap: usize,
    /// Device category per dataset id.
    pub device_category_map: BTreeMap<u8, u8>,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            window: WINDOW,
            stride: STRIDE,
            train_cap: TRAIN_CAP,
            test_cap: TEST_CAP,
            device_category_map: BTreeMap::new(),
        }
    }
}

impl WindowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.stride == 0 {
            return Err(Error::InvalidArgument("window and stride must be ≥ 1".into()));
        }
        if let Some((d, c)) = self
            .device_category_map
            .iter()
            .find(|(&d, &c)| d >= DATASET_IDS || c >= DEVICE_CATEGORIES)
        {
            return Err(Error::InvalidArgument(format!(
                "device category map entry {d} → {c} out of range"
            )));
        }
        Ok(())
    }

    pub fn device_for(&self, dataset_id: u8) -> u8 {
        self.device_category_map.get(&dataset_id).copied().unwrap_or(0)
    }
}

/// `N × window × 46` tensor with per-window label, context and origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSet {
    pub window: usize,
    pub features: Vec<f32>,
    pub labels: Vec<u8>,
    pub contexts: Vec<Context>,
    pub origins: Vec<Origin>,
}

impl WindowSet {
    pub fn empty(window: usize) -> Self {
        WindowSet {
            window,
            features: Vec::new(),
            labels: Vec::new(),
            contexts: Vec::new(),
            origins: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn window_values(&self) -> usize {
        self.window * SLOT_COUNT
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        let w = self.window_values();
        &self.features[i * w..(i + 1) * w]
    }

    pub fn benign_fraction(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.labels.iter().filter(|&&l| l != ATTACK).count() as f64 / self.len() as f64
    }

    pub fn dataset_ids(&self) -> Vec<u8> {
        let mut ids: Vec<u8> = self.contexts.iter().map(|c| c.dataset).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// Windows at `indices`, in the given order.
    pub fn gather(&self, indices: &[usize]) -> WindowSet {
        let w = self.window_values();
        let mut features = Vec::with_capacity(indices.len() * w);
        for &i in indices {
            features.extend_from_slice(self.sample(i));
        }
        WindowSet {
            window: self.window,
            features,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            contexts: indices.iter().map(|&i| self.contexts[i]).collect(),
            origins: indices.iter().map(|&i| self.origins[i]).collect(),
        }
    }

    pub fn filter(&self, keep: impl Fn(usize) -> bool) -> WindowSet {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep(i)).collect();
        self.gather(&idx)
    }

    /// Concatenates sets and orders windows by `(dataset_id, start_row)`.
    pub fn concat(sets: &[WindowSet]) -> Result<WindowSet> {
        let window = sets.first().map(|s| s.window).unwrap_or(WINDOW);
        if sets.iter().any(|s| s.window != window) {
            return Err(Error::Shape("cannot concatenate different window lengths".into()));
        }
        let mut refs: Vec<(Origin, usize, usize)> = sets
            .iter()
            .enumerate()
            .flat_map(|(s, set)| set.origins.iter().enumerate().map(move |(i, o)| (*o, s, i)))
            .collect();
        refs.sort();
        if refs.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::InvalidArgument("duplicate window origin in concatenation".into()));
        }
        let mut out = WindowSet::empty(window);
        for (_, s, i) in refs {
            let set = &sets[s];
            out.features.extend_from_slice(set.sample(i));
            out.labels.push(set.labels[i]);
            out.contexts.push(set.contexts[i]);
            out.origins.push(set.origins[i]);
        }
        Ok(out)
    }

    /// Checks shape, context ranges and the per-dataset sorted-origin contract.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.features.len() != n * self.window_values() || self.contexts.len() != n || self.origins.len() != n {
            return Err(Error::Shape(format!("window set of {n} windows has inconsistent buffers")));
        }
        for (i, c) in self.contexts.iter().enumerate() {
            if c.dataset >= DATASET_IDS || c.device >= DEVICE_CATEGORIES {
                return Err(Error::InvalidArgument(format!("window {i}: context {c:?} out of range")));
            }
            if c.dataset != self.origins[i].dataset_id {
                return Err(Error::InvalidArgument(format!("window {i}: context/origin dataset differ")));
            }
        }
        let mut last: BTreeMap<u8, usize> = BTreeMap::new();
        for o in &self.origins {
            if let Some(&prev) = last.get(&o.dataset_id) {
                if o.start_row <= prev {
                    return Err(Error::InvalidArgument(format!(
                        "dataset {}: origins not strictly increasing ({prev} then {})",
                        o.dataset_id, o.start_row
                    )));
                }
            }
            last.insert(o.dataset_id, o.start_row);
        }
        Ok(())
    }
}

pub fn window_count(rows: usize, window: usize, stride: usize) -> usize {
    if rows < window {
        0
    } else {
        (rows - window) / stride + 1
    }
}

/// Majority vote: attack when attack rows are at least half the window.
pub fn majority_label(labels: &[u8]) -> u8 {
    let attack = labels.iter().filter(|&&l| l == ATTACK).count();
    u8::from(2 * attack >= labels.len())
}

/// Rows of `matrix` must be sorted by flow arrival time.
pub fn build_windows(matrix: &CanonicalMatrix, cfg: &WindowConfig) -> Result<WindowSet> {
    cfg.validate()?;
    if matrix.dataset_id >= DATASET_IDS {
        return Err(Error::InvalidArgument(format!("dataset id {} out of range", matrix.dataset_id)));
    }
    let rows = matrix.rows();
    let count = window_count(rows, cfg.window, cfg.stride);
    if count == 0 {
        log::warn!(
            "dataset {}: {rows} rows is shorter than one window of {}; no windows built",
            matrix.dataset_id,
            cfg.window
        );
        return Ok(WindowSet::empty(cfg.window));
    }
    let context = Context {
        dataset: matrix.dataset_id,
        device: cfg.device_for(matrix.dataset_id),
    };
    let span = cfg.window * SLOT_COUNT;
    let features: Vec<f32> = (0..count)
        .into_par_iter()
        .flat_map_iter(|w| {
            let start = w * cfg.stride * SLOT_COUNT;
            matrix.values[start..start + span].iter().copied()
        })
        .collect();
    let labels = (0..count)
        .map(|w| majority_label(&matrix.labels[w * cfg.stride..w * cfg.stride + cfg.window]))
        .collect();
    Ok(WindowSet {
        window: cfg.window,
        features,
        labels,
        contexts: vec![context; count],
        origins: (0..count)
            .map(|w| Origin {
                dataset_id: matrix.dataset_id,
                start_row: w * cfg.stride,
            })
            .collect(),
    })
}

/// Uniform seeded subsample to at most `cap` windows, original order kept.
pub fn cap_windows(ws: &WindowSet, cap: usize, seed: u64) -> WindowSet {
    if ws.len() <= cap {
        return ws.clone();
    }
    ws.gather(&rng::sample_sorted(ws.len(), cap, seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(labels: Vec<u8>, dataset_id: u8) -> CanonicalMatrix {
        let n = labels.len();
        CanonicalMatrix {
            dataset_id,
            values: (0..n * SLOT_COUNT).map(|v| v as f32).collect(),
            labels,
            sanitation_count: 0,
        }
    }

    /// Brute-force enumeration of admissible window starts.
    fn enumerate_starts(rows: usize, window: usize, stride: usize) -> Vec<usize> {
        (0..rows).filter(|s| s % stride == 0 && s + window <= rows).collect()
    }

    #[test]
    fn hundred_rows_eighteen_windows() {
        assert_eq!(enumerate_starts(100, 32, 4).len(), 18);
        let ws = build_windows(&matrix(vec![0; 100], 0), &WindowConfig::default()).unwrap();
        assert_eq!(ws.len(), 18);
        assert_eq!(
            ws.origins.iter().map(|o| o.start_row).collect::<Vec<_>>(),
            enumerate_starts(100, 32, 4)
        );
        ws.validate().unwrap();
    }

    #[test]
    fn count_matches_enumeration() {
        for rows in 0..120 {
            for (w, s) in [(32, 4), (5, 3), (1, 1), (8, 8)] {
                assert_eq!(window_count(rows, w, s), enumerate_starts(rows, w, s).len());
            }
        }
    }

    #[test]
    fn single_window_covers_all_rows() {
        let m = matrix(vec![0; 32], 1);
        let ws = build_windows(&m, &WindowConfig::default()).unwrap();
        assert_eq!(ws.len(), 1);
        assert_eq!(ws.sample(0), &m.values[..]);
    }

    #[test]
    fn short_matrix_gives_empty_set() {
        let ws = build_windows(&matrix(vec![0; 31], 0), &WindowConfig::default()).unwrap();
        assert!(ws.is_empty());
    }

    #[test]
    fn majority_vote() {
        let mut l = vec![0u8; 32];
        assert_eq!(majority_label(&l), 0);
        for x in l.iter_mut().take(17) {
            *x = 1;
        }
        assert_eq!(majority_label(&l), 1);
        let tie: Vec<u8> = (0..32).map(|i| (i % 2) as u8).collect();
        assert_eq!(majority_label(&tie), 1);
        let fifteen: Vec<u8> = (0..32).map(|i| u8::from(i < 15)).collect();
        assert_eq!(majority_label(&fifteen), 0);
        assert_eq!(majority_label(&[1; 32]), 1);
    }

    #[test]
    fn stride_overlap_is_twenty_eight_rows() {
        let m = matrix(vec![0; 64], 0);
        let ws = build_windows(&m, &WindowConfig::default()).unwrap();
        let shift = STRIDE * SLOT_COUNT;
        assert_eq!(&ws.sample(0)[shift..], &ws.sample(1)[..28 * SLOT_COUNT]);
    }

    #[test]
    fn context_from_config() {
        let mut cfg = WindowConfig::default();
        cfg.device_category_map.insert(3, 5);
        let ws = build_windows(&matrix(vec![1; 40], 3), &cfg).unwrap();
        assert!(ws.contexts.iter().all(|c| *c == Context { dataset: 3, device: 5 }));
        cfg.device_category_map.insert(3, 6);
        assert!(build_windows(&matrix(vec![1; 40], 3), &cfg).is_err());
    }

    #[test]
    fn caps() {
        let ws = build_windows(&matrix(vec![0; 100], 0), &WindowConfig::default()).unwrap();
        assert_eq!(cap_windows(&ws, 800_000, 1), ws);
        assert!(cap_windows(&ws, 0, 1).is_empty());
        let big = build_windows(&matrix(vec![0; 428], 0), &WindowConfig::default()).unwrap();
        assert_eq!(big.len(), 100);
        let a = cap_windows(&big, 10, 7);
        assert_eq!(a.len(), 10);
        assert_eq!(a, cap_windows(&big, 10, 7));
        a.validate().unwrap();
    }

    #[test]
    fn concat_orders_by_dataset_then_start() {
        let cfg = WindowConfig::default();
        let a = build_windows(&matrix(vec![0; 40], 2), &cfg).unwrap();
        let b = build_windows(&matrix(vec![1; 40], 0), &cfg).unwrap();
        let c = WindowSet::concat(&[a.clone(), b]).unwrap();
        assert_eq!(c.dataset_ids(), vec![0, 2]);
        assert_eq!(c.contexts[0].dataset, 0);
        c.validate().unwrap();
        assert!(WindowSet::concat(&[a.clone(), a]).is_err());
    }
}
