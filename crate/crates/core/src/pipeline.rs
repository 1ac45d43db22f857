//! Stage orchestration from raw CSV files to scaled, leakage-checked window
//! partitions.
//!
//! Order: ingest → align → balance → matrix → windows → concat → split → cap →
//! fit scaler (train only) → verify → apply. The scaler is fitted on the raw
//! train windows and the leakage check runs on the same raw partitions, so its
//! fit-hash comparison is meaningful.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::digest::{fnv1a64, to_hex};
use crate::error::{Error, Result};
use crate::ingest::{balance_classes, build_canonical_matrix, parse_csv, CanonicalMatrix, DatasetTable, IngestConfig};
use crate::protocol::{lodo_folds, split, verify_leakage, LeakageReport, SplitMode, SplitSpec};
use crate::rng::SplitMix64;
use crate::transform::{apply_scaler, fit_scaler, ScalerParams};
use crate::vocab::{load_vocabulary, match_columns, AliasMap, CanonicalVocabulary, MappingReport};
use crate::windows::{build_windows, cap_windows, WindowConfig, WindowSet};

pub const STAGES: [&str; 11] = [
    "ingest", "align", "balance", "matrix", "windows", "concat", "split", "cap", "fit_scaler", "verify", "apply",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSource {
    pub ingest: IngestConfig,
    pub csv: PathBuf,
    #[serde(default)]
    pub alias_map: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Built-in vocabulary when absent.
    #[serde(default)]
    pub vocabulary: Option<PathBuf>,
    pub datasets: Vec<DatasetSource>,
    #[serde(default)]
    pub windows: WindowConfig,
    #[serde(default = "default_split")]
    pub split: SplitSpec,
    #[serde(default)]
    pub seed: u64,
}

fn default_split() -> SplitSpec {
    SplitSpec::stratified(0)
}

impl PipelineConfig {
    /// Reads a config file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: PipelineConfig = serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(v) = cfg.vocabulary.as_mut() {
            resolve(v);
        }
        for d in &mut cfg.datasets {
            resolve(&mut d.csv);
            if let Some(a) = d.alias_map.as_mut() {
                resolve(a);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.datasets.is_empty() {
            return Err(Error::InvalidArgument("pipeline config lists no datasets".into()));
        }
        let mut ids: Vec<u8> = self.datasets.iter().map(|d| d.ingest.dataset_id).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument(format!("dataset_id {} listed twice", w[0])));
        }
        if let Some(&id) = ids.iter().find(|&&id| id > 4) {
            return Err(Error::InvalidArgument(format!("dataset_id {id} outside 0..=4")));
        }
        self.windows.validate()?;
        self.split.validate()
    }

    pub fn vocabulary(&self) -> Result<CanonicalVocabulary> {
        match &self.vocabulary {
            Some(p) => load_vocabulary(p),
            None => Ok(CanonicalVocabulary::bridge_default()),
        }
    }

    /// Every file the config reads, in config order.
    pub fn input_files(&self) -> Vec<PathBuf> {
        let mut out: Vec<PathBuf> = self.vocabulary.iter().cloned().collect();
        for d in &self.datasets {
            out.push(d.csv.clone());
            out.extend(d.alias_map.iter().cloned());
        }
        out
    }
}

/// Independent per-purpose seed derived from the master seed.
pub fn derive_seed(master: u64, purpose: &str, index: u64) -> u64 {
    SplitMix64::new(master ^ fnv1a64(purpose.as_bytes()) ^ index.rotate_left(32)).next_u64()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetPrep {
    pub dataset_id: u8,
    pub report: MappingReport,
    pub rows_read: usize,
    pub rows_rejected: usize,
    pub rows_balanced: usize,
    pub balance_seed: u64,
    pub window_count: usize,
    #[serde(skip)]
    pub matrix: CanonicalMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub datasets: Vec<DatasetPrep>,
    /// Unscaled windows of every dataset, concatenated in config order.
    pub windows: WindowSet,
}

fn staged<T>(stage: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::stage(stage, e))
}

/// align → balance → matrix → windows for one table.
pub fn prepare_table(
    vocab: &CanonicalVocabulary,
    alias: &AliasMap,
    table: &DatasetTable,
    wcfg: &WindowConfig,
    seed: u64,
) -> Result<(DatasetPrep, WindowSet)> {
    if alias.dataset_id != table.dataset_id {
        return Err(Error::stage(
            "align",
            Error::AliasMap(format!("alias map for dataset {} applied to dataset {}", alias.dataset_id, table.dataset_id)),
        ));
    }
    let report = match_columns(vocab, alias, &table.headers);
    let balance_seed = derive_seed(seed, "balance", table.dataset_id as u64);
    let balanced = staged("balance", balance_classes(table, balance_seed))?;
    let matrix = staged("matrix", build_canonical_matrix(&balanced, &report))?;
    let ws = staged("windows", build_windows(&matrix, wcfg))?;
    log::info!(
        "dataset {}: {} rows read, {} after balancing, coverage {}%, {} windows",
        table.dataset_id,
        table.len(),
        balanced.len(),
        report.coverage_percent,
        ws.len()
    );
    Ok((
        DatasetPrep {
            dataset_id: table.dataset_id,
            report,
            rows_read: table.len(),
            rows_rejected: table.rejected.len(),
            rows_balanced: balanced.len(),
            balance_seed,
            window_count: ws.len(),
            matrix,
        },
        ws,
    ))
}

pub fn prepare_tables(
    vocab: &CanonicalVocabulary,
    inputs: &[(DatasetTable, AliasMap)],
    wcfg: &WindowConfig,
    seed: u64,
) -> Result<Prepared> {
    staged("windows", wcfg.validate())?;
    let mut datasets = Vec::new();
    let mut sets = Vec::new();
    for (table, alias) in inputs {
        let (prep, ws) = prepare_table(vocab, alias, table, wcfg, seed)?;
        datasets.push(prep);
        sets.push(ws);
    }
    let windows = staged("concat", WindowSet::concat(&sets))?;
    Ok(Prepared { datasets, windows })
}

/// Reads every CSV and alias map of the config, then runs [`prepare_tables`].
pub fn prepare(cfg: &PipelineConfig, seed: u64) -> Result<Prepared> {
    let vocab = staged("align", cfg.vocabulary())?;
    let mut inputs = Vec::new();
    for d in &cfg.datasets {
        let table = staged("ingest", parse_csv(&d.csv, &d.ingest))?;
        let alias = match &d.alias_map {
            Some(p) => staged("align", AliasMap::load(p))?,
            None => AliasMap::empty(d.ingest.dataset_id),
        };
        inputs.push((table, alias));
    }
    prepare_tables(&vocab, &inputs, &cfg.windows, seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScaledSplit {
    pub train: WindowSet,
    pub test: WindowSet,
    pub scaler: ScalerParams,
    /// Computed on the unscaled partitions.
    pub leakage: LeakageReport,
}

/// fit scaler on `train` → verify → apply to both partitions.
pub fn scale_partitions(train: &WindowSet, test: &WindowSet) -> Result<ScaledSplit> {
    let scaler = staged("fit_scaler", fit_scaler(&train.features))?;
    let leakage = verify_leakage(train, test, &scaler);
    if !leakage.passed {
        log::debug!(
            "leakage check failed: scaler order {}, overlap {}, ratio {}",
            leakage.scaler_order_ok,
            leakage.overlap_count,
            leakage.ratio_ok
        );
    }
    let apply = |ws: &WindowSet| -> Result<WindowSet> {
        Ok(WindowSet { features: apply_scaler(&scaler, &ws.features)?, ..ws.clone() })
    };
    let train = staged("apply", apply(train))?;
    let test = staged("apply", apply(test))?;
    Ok(ScaledSplit { train, test, scaler, leakage })
}

/// split → cap → [`scale_partitions`].
pub fn split_and_scale(ws: &WindowSet, spec: &SplitSpec, wcfg: &WindowConfig, seed: u64) -> Result<ScaledSplit> {
    let (train, test) = staged("split", split(ws, spec))?;
    let (train, test) = cap_pair(&train, &test, wcfg, seed, 0);
    scale_partitions(&train, &test)
}

fn cap_pair(train: &WindowSet, test: &WindowSet, wcfg: &WindowConfig, seed: u64, fold: u64) -> (WindowSet, WindowSet) {
    (
        cap_windows(train, wcfg.train_cap, derive_seed(seed, "cap-train", fold)),
        cap_windows(test, wcfg.test_cap, derive_seed(seed, "cap-test", fold)),
    )
}

/// One scaled split per held-out dataset, in id order.
pub fn run_lodo(ws: &WindowSet, wcfg: &WindowConfig, seed: u64) -> Result<Vec<(u8, ScaledSplit)>> {
    let folds = staged("split", lodo_folds(ws))?;
    folds
        .iter()
        .enumerate()
        .map(|(d, (train, test))| {
            let (train, test) = cap_pair(train, test, wcfg, seed, d as u64);
            Ok((d as u8, scale_partitions(&train, &test)?))
        })
        .collect()
}

/// Whether the class-ratio check gates a split of this mode. Held-out
/// datasets and later time ranges differ in class mix by construction, so
/// for LODO and temporal splits the ratio is reported but not enforced.
pub fn ratio_enforced(mode: SplitMode) -> bool {
    matches!(mode, SplitMode::StratifiedRandom)
}

/// Pass/fail of a split's leakage checks under [`ratio_enforced`].
pub fn leakage_gate(mode: SplitMode, l: &LeakageReport) -> bool {
    l.scaler_order_ok && l.overlap_count == 0 && (l.ratio_ok || !ratio_enforced(mode))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldManifest {
    pub mode: SplitMode,
    pub seed: u64,
    pub train_count: usize,
    pub test_count: usize,
    pub train_datasets: Vec<u8>,
    pub test_datasets: Vec<u8>,
    pub leakage: LeakageReport,
    pub ratio_enforced: bool,
    pub gate_passed: bool,
    pub fit_hash: String,
}

impl FoldManifest {
    pub fn new(mode: SplitMode, seed: u64, s: &ScaledSplit) -> Self {
        FoldManifest {
            mode,
            seed,
            train_count: s.train.len(),
            test_count: s.test.len(),
            train_datasets: s.train.dataset_ids(),
            test_datasets: s.test.dataset_ids(),
            leakage: s.leakage.clone(),
            ratio_enforced: ratio_enforced(mode),
            gate_passed: leakage_gate(mode, &s.leakage),
            fit_hash: to_hex(s.scaler.fit_hash),
        }
    }
}
