//! `BRIDGE-TENSOR v1` container: a magic line, a little-endian `u32` rank, one
//! little-endian `u32` per dimension, then the raw little-endian `f32` payload.
//!
//! Window sets and canonical matrices are stored as a `.bt` tensor plus a JSON
//! sidecar holding everything that is not a feature value.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::CanonicalMatrix;
use crate::vocab::SLOT_COUNT;
use crate::windows::{Context, Origin, WindowSet};

pub const TENSOR_MAGIC: &[u8] = b"BRIDGE-TENSOR v1\n";

pub fn encode_tensor(dims: &[usize], data: &[f32]) -> Result<Vec<u8>> {
    let numel: usize = dims.iter().product();
    if numel != data.len() {
        return Err(Error::Shape(format!("dims {dims:?} hold {numel} values, got {}", data.len())));
    }
    let mut out = Vec::with_capacity(TENSOR_MAGIC.len() + 4 * (1 + dims.len() + data.len()));
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        let d = u32::try_from(d).map_err(|_| Error::Container(format!("dimension {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_tensor(bytes: &[u8]) -> Result<(Vec<usize>, Vec<f32>)> {
    let rest = bytes
        .strip_prefix(TENSOR_MAGIC)
        .ok_or_else(|| Error::Container("bad magic line".into()))?;
    let word = |i: usize| -> Result<u32> {
        rest.get(4 * i..4 * i + 4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
            .ok_or_else(|| Error::Container("truncated header".into()))
    };
    let rank = word(0)? as usize;
    let dims = (0..rank).map(|i| word(1 + i).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
    let numel = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
    let numel = numel.ok_or_else(|| Error::Container(format!("dims {dims:?} overflow")))?;
    let payload = &rest[4 * (1 + rank)..];
    if payload.len() != 4 * numel {
        return Err(Error::Container(format!(
            "payload has {} bytes, dims {dims:?} need {}",
            payload.len(),
            4 * numel
        )));
    }
    let data = payload.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
    Ok((dims, data))
}

pub fn write_tensor(path: impl AsRef<Path>, dims: &[usize], data: &[f32]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_tensor(dims, data)?).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<(Vec<usize>, Vec<f32>)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes).map_err(|e| Error::Container(format!("{}: {e}", path.display())))
}

/// Sidecar path for a tensor file: `x.bt` → `x.json`.
pub fn sidecar_path(tensor: &Path) -> PathBuf {
    tensor.with_extension("json")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct WindowSidecar {
    count: usize,
    window: usize,
    labels: Vec<u8>,
    contexts: Vec<Context>,
    origins: Vec<Origin>,
    /// Free-form provenance (caps, seeds, config echo).
    #[serde(default)]
    meta: serde_json::Value,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path.display().to_string(), e))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
}

/// Writes `path` (tensor `N × window × 46`) and its sidecar. Returns both paths.
pub fn save_windows(path: impl AsRef<Path>, ws: &WindowSet, meta: serde_json::Value) -> Result<[PathBuf; 2]> {
    ws.validate()?;
    let path = path.as_ref();
    write_tensor(path, &[ws.len(), ws.window, SLOT_COUNT], &ws.features)?;
    let side = sidecar_path(path);
    write_json(
        &side,
        &WindowSidecar {
            count: ws.len(),
            window: ws.window,
            labels: ws.labels.clone(),
            contexts: ws.contexts.clone(),
            origins: ws.origins.clone(),
            meta,
        },
    )?;
    Ok([path.to_path_buf(), side])
}

pub fn load_windows(path: impl AsRef<Path>) -> Result<WindowSet> {
    let path = path.as_ref();
    let (dims, features) = read_tensor(path)?;
    let side: WindowSidecar = read_json(&sidecar_path(path))?;
    if dims != [side.count, side.window, SLOT_COUNT] {
        return Err(Error::Container(format!(
            "{}: dims {dims:?} disagree with sidecar ({} × {} × {SLOT_COUNT})",
            path.display(),
            side.count,
            side.window
        )));
    }
    let ws = WindowSet {
        window: side.window,
        features,
        labels: side.labels,
        contexts: side.contexts,
        origins: side.origins,
    };
    ws.validate()?;
    Ok(ws)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MatrixSidecar {
    dataset_id: u8,
    rows: usize,
    labels: Vec<u8>,
    sanitation_count: u64,
}

pub fn save_matrix(path: impl AsRef<Path>, m: &CanonicalMatrix) -> Result<[PathBuf; 2]> {
    let path = path.as_ref();
    write_tensor(path, &[m.rows(), SLOT_COUNT], &m.values)?;
    let side = sidecar_path(path);
    write_json(
        &side,
        &MatrixSidecar {
            dataset_id: m.dataset_id,
            rows: m.rows(),
            labels: m.labels.clone(),
            sanitation_count: m.sanitation_count,
        },
    )?;
    Ok([path.to_path_buf(), side])
}

pub fn load_matrix(path: impl AsRef<Path>) -> Result<CanonicalMatrix> {
    let path = path.as_ref();
    let (dims, values) = read_tensor(path)?;
    let side: MatrixSidecar = read_json(&sidecar_path(path))?;
    if dims != [side.rows, SLOT_COUNT] || side.labels.len() != side.rows {
        return Err(Error::Container(format!("{}: dims {dims:?} disagree with sidecar", path.display())));
    }
    Ok(CanonicalMatrix {
        dataset_id: side.dataset_id,
        values,
        labels: side.labels,
        sanitation_count: side.sanitation_count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layout_is_exact() {
        let b = encode_tensor(&[2, 1], &[1.0, -2.5]).unwrap();
        assert_eq!(&b[..17], b"BRIDGE-TENSOR v1\n");
        assert_eq!(&b[17..21], &[2, 0, 0, 0]);
        assert_eq!(&b[21..29], &[2, 0, 0, 0, 1, 0, 0, 0]);
        assert_eq!(&b[29..33], &1.0f32.to_le_bytes());
        assert_eq!(b.len(), 37);
    }

    #[test]
    fn rejects_corruption() {
        let b = encode_tensor(&[3], &[1.0, 2.0, 3.0]).unwrap();
        assert!(decode_tensor(&b[..b.len() - 1]).is_err());
        assert!(decode_tensor(&b[1..]).is_err());
        assert!(decode_tensor(&b[..19]).is_err());
        assert!(encode_tensor(&[2], &[1.0]).is_err());
    }

    #[test]
    fn window_set_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ws = WindowSet {
            window: 2,
            features: (0..2 * 2 * SLOT_COUNT).map(|v| v as f32 * 0.5).collect(),
            labels: vec![0, 1],
            contexts: vec![Context { dataset: 1, device: 2 }, Context { dataset: 3, device: 0 }],
            origins: vec![Origin { dataset_id: 1, start_row: 0 }, Origin { dataset_id: 3, start_row: 4 }],
        };
        let [t, s] = save_windows(dir.path().join("w.bt"), &ws, serde_json::json!({"seed": 7})).unwrap();
        assert!(t.exists() && s.exists());
        assert_eq!(load_windows(&t).unwrap(), ws);

        let m = CanonicalMatrix { dataset_id: 2, values: vec![1.5; 3 * SLOT_COUNT], labels: vec![0, 1, 1], sanitation_count: 4 };
        let [t, _] = save_matrix(dir.path().join("m.bt"), &m).unwrap();
        assert_eq!(load_matrix(&t).unwrap(), m);
    }

    proptest! {
        #[test]
        fn encode_decode_identity(dims in prop::collection::vec(0usize..5, 0..4), seed in any::<u64>()) {
            let n: usize = dims.iter().product();
            let mut rng = crate::rng::SplitMix64::new(seed);
            let data: Vec<f32> = (0..n).map(|_| rng.normal() as f32).collect();
            let (d, v) = decode_tensor(&encode_tensor(&dims, &data).unwrap()).unwrap();
            prop_assert_eq!(d, dims);
            prop_assert_eq!(v.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), data.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
        }
    }
}
