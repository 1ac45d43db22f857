//! Seeded synthetic flow datasets shaped like the five real sources: distinct
//! header dialects, partial vocabulary coverage, time-ordered attack bursts and
//! a sprinkling of unparseable cells.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::ingest::{DatasetTable, IngestConfig};
use crate::pipeline::{DatasetSource, PipelineConfig};
use crate::protocol::SplitSpec;
use crate::rng::SplitMix64;
use crate::vocab::{CanonicalVocabulary, MIN_SUBSTRING_ALIAS, SLOT_COUNT};
use crate::windows::{WindowConfig, WindowSet};

/// Genuinely matched slots per dataset id.
pub const FIXTURE_COVERAGE: [usize; 5] = [43, 40, 18, 10, 7];

/// Attack-row fraction per dataset id.
pub const ATTACK_FRACTION: [f64; 5] = [0.30, 0.45, 0.25, 0.55, 0.35];

/// First slot of each dataset's contiguous run of matched slots.
const FIRST_SLOT: [usize; 5] = [0, 3, 17, 36, 0];

pub const LABEL_COLUMN: &str = "Label";
pub const BENIGN_VALUE: &str = "BENIGN";
const ATTACK_VALUES: [&str; 3] = ["DDoS", "PortScan", "Recon"];

/// Device category per dataset id used by fixture configs.
pub const FIXTURE_DEVICES: [u8; 5] = [0, 1, 2, 2, 3];

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureSpec {
    pub datasets: Vec<u8>,
    pub rows: usize,
    pub seed: u64,
}

impl FixtureSpec {
    /// 600 rows per dataset: well under the balancing floor, so balancing
    /// keeps every row.
    pub fn small(datasets: &[u8]) -> Self {
        FixtureSpec { datasets: datasets.to_vec(), rows: 600, seed: 17 }
    }

    /// Enough rows that the benign majority exceeds the balancing floor and
    /// is subsampled.
    pub fn balancing(datasets: &[u8]) -> Self {
        FixtureSpec { datasets: datasets.to_vec(), rows: 12_000, seed: 17 }
    }
}

/// Slots the fixture header set for `dataset_id` populates.
pub fn fixture_slots(dataset_id: u8) -> Vec<usize> {
    let d = dataset_id as usize;
    (FIRST_SLOT[d]..FIRST_SLOT[d] + FIXTURE_COVERAGE[d]).map(|s| s % SLOT_COUNT).collect()
}

/// Header for `slot` in the dialect a dataset uses; rotates through the three
/// matching stages so every stage gets exercised.
fn header_for(vocab: &CanonicalVocabulary, slot: usize, dataset_id: u8) -> String {
    let s = &vocab.slots[slot];
    let long = s.aliases.iter().find(|a| a.chars().count() >= MIN_SUBSTRING_ALIAS);
    match (slot + dataset_id as usize) % 3 {
        0 => s.name.to_uppercase(),
        1 if !s.aliases.is_empty() => s.aliases[0].clone(),
        2 if long.is_some() => format!("d{dataset_id}_{}_v", long.unwrap()),
        _ => s.name.to_lowercase(),
    }
}

/// Feature headers followed by the two non-feature columns.
pub fn fixture_headers(vocab: &CanonicalVocabulary, dataset_id: u8) -> Vec<String> {
    let mut slots = fixture_slots(dataset_id);
    slots.sort_unstable();
    let mut h: Vec<String> = slots.iter().map(|&s| header_for(vocab, s, dataset_id)).collect();
    h.push("Timestamp".into());
    h.push(LABEL_COLUMN.into());
    h
}

pub fn fixture_ingest(dataset_id: u8) -> IngestConfig {
    IngestConfig::new(dataset_id, LABEL_COLUMN, &[BENIGN_VALUE])
}

/// Alternating benign gaps and attack bursts; burst length averages 40 rows.
fn burst_labels(rows: usize, attack_fraction: f64, rng: &mut SplitMix64) -> Vec<u8> {
    let burst = 40.0;
    let gap = burst * (1.0 - attack_fraction) / attack_fraction;
    let mut labels = Vec::with_capacity(rows);
    let mut attack = false;
    while labels.len() < rows {
        let mean = if attack { burst } else { gap };
        let len = (mean * rng.uniform(0.5, 1.5)).round().max(1.0) as usize;
        labels.extend(std::iter::repeat(attack as u8).take(len.min(rows - labels.len())));
        attack = !attack;
    }
    labels
}

fn cell(slot: usize, attack: bool, rng: &mut SplitMix64) -> String {
    let u = rng.unit_f64();
    if u < 0.001 {
        return ["NaN", "Infinity", ""][rng.below(3)].to_string();
    }
    if (38..=43).contains(&slot) {
        let p = if attack { 0.6 } else { 0.2 };
        return ((rng.unit_f64() < p) as u8).to_string();
    }
    let mu = (slot % 7) as f64 + if attack { 1.2 } else { 0.0 };
    format!("{:.4}", (mu + 1.5 * rng.normal()).exp())
}

/// In-memory table for one dataset; identical to parsing its CSV file.
pub fn fixture_table(vocab: &CanonicalVocabulary, dataset_id: u8, rows: usize, seed: u64) -> Result<DatasetTable> {
    if dataset_id > 4 {
        return Err(Error::InvalidArgument(format!("fixture dataset {dataset_id} outside 0..=4")));
    }
    let mut rng = SplitMix64::new(seed ^ (dataset_id as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut slots = fixture_slots(dataset_id);
    slots.sort_unstable();
    let labels = burst_labels(rows, ATTACK_FRACTION[dataset_id as usize], &mut rng);
    let records = labels
        .iter()
        .enumerate()
        .map(|(t, &l)| {
            let mut r: Vec<String> = slots.iter().map(|&s| cell(s, l == 1, &mut rng)).collect();
            r.push((1_600_000_000 + t).to_string());
            r.push(if l == 1 { ATTACK_VALUES[rng.below(3)].to_string() } else { BENIGN_VALUE.to_string() });
            r
        })
        .collect();
    DatasetTable::from_records(&fixture_ingest(dataset_id), fixture_headers(vocab, dataset_id), records)
}

pub fn fixture_tables(vocab: &CanonicalVocabulary, spec: &FixtureSpec) -> Result<Vec<DatasetTable>> {
    spec.datasets.iter().map(|&d| fixture_table(vocab, d, spec.rows, spec.seed)).collect()
}

pub fn write_table_csv(path: impl AsRef<Path>, table: &DatasetTable) -> Result<()> {
    let path = path.as_ref();
    let csv_err = |e: csv::Error| Error::Csv { path: path.to_path_buf(), message: e.to_string() };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(&table.headers).map_err(csv_err)?;
    for r in &table.rows {
        w.write_record(r).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn fixture_window_config() -> WindowConfig {
    let mut wcfg = WindowConfig::default();
    wcfg.device_category_map = (0..5u8).map(|d| (d, FIXTURE_DEVICES[d as usize])).collect();
    wcfg
}

/// Writes one CSV per dataset plus `pipeline.json` into `dir`; returns the
/// config path. Paths inside the config are relative to `dir`.
pub fn write_fixture(dir: impl AsRef<Path>, spec: &FixtureSpec) -> Result<PathBuf> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let vocab = CanonicalVocabulary::bridge_default();
    let mut datasets = Vec::new();
    for table in fixture_tables(&vocab, spec)? {
        let name = format!("dataset{}.csv", table.dataset_id);
        write_table_csv(dir.join(&name), &table)?;
        datasets.push(DatasetSource { ingest: fixture_ingest(table.dataset_id), csv: name.into(), alias_map: None });
    }
    let cfg = PipelineConfig {
        vocabulary: None,
        datasets,
        windows: fixture_window_config(),
        split: SplitSpec::stratified(0),
        seed: spec.seed,
    };
    let path = dir.join("pipeline.json");
    let text = serde_json::to_string_pretty(&cfg).map_err(|e| Error::json("pipeline config", e))?;
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Copies train window `from` over test window `into`, planting exactly one
/// cross-partition duplicate.
pub fn plant_duplicate(train: &WindowSet, test: &mut WindowSet, from: usize, into: usize) {
    let n = train.window_values();
    test.features[into * n..(into + 1) * n].copy_from_slice(train.sample(from));
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::parse_csv;
    use crate::vocab::{coverage_summary, match_columns, AliasMap, MatchStage, SlotOutcome};

    #[test]
    fn headers_reach_target_coverage_through_all_stages() {
        let vocab = CanonicalVocabulary::bridge_default();
        let mut reports = Vec::new();
        let mut stages = std::collections::BTreeSet::new();
        for d in 0..5u8 {
            let headers = fixture_headers(&vocab, d);
            let r = match_columns(&vocab, &AliasMap::empty(d), &headers);
            assert_eq!(r.matched_count, FIXTURE_COVERAGE[d as usize], "dataset {d}");
            for s in fixture_slots(d) {
                match &r.outcomes[s] {
                    SlotOutcome::Matched { column, stage, .. } => {
                        assert_eq!(column, &header_for(&vocab, s, d), "slot {s} of dataset {d}");
                        stages.insert(*stage);
                    }
                    SlotOutcome::ZeroFilled => panic!("slot {s} of dataset {d} unmatched"),
                }
            }
            reports.push(r);
        }
        assert_eq!(stages.len(), 3);
        assert!(stages.contains(&MatchStage::AliasSubstring));
        let pct: Vec<u32> = coverage_summary(&reports).unwrap().rows.iter().map(|r| r.coverage_percent).collect();
        assert_eq!(pct, vec![93, 87, 39, 22, 15]);
    }

    #[test]
    fn labels_come_in_bursts_near_the_target_fraction() {
        let vocab = CanonicalVocabulary::bridge_default();
        for d in 0..5u8 {
            let t = fixture_table(&vocab, d, 4000, 3).unwrap();
            let (_, attack) = t.class_counts();
            let frac = attack as f64 / t.len() as f64;
            assert!((frac - ATTACK_FRACTION[d as usize]).abs() < 0.08, "dataset {d}: {frac}");
            let switches = t.labels.windows(2).filter(|w| w[0] != w[1]).count();
            assert!(switches < t.len() / 10);
        }
    }

    #[test]
    fn csv_round_trip_matches_in_memory_table() {
        let vocab = CanonicalVocabulary::bridge_default();
        let dir = tempfile::tempdir().unwrap();
        let t = fixture_table(&vocab, 3, 300, 9).unwrap();
        let p = dir.path().join("d.csv");
        write_table_csv(&p, &t).unwrap();
        let back = parse_csv(&p, &fixture_ingest(3)).unwrap();
        assert_eq!(back.labels, t.labels);
        assert_eq!(back.rows, t.rows);
        assert_eq!(back.headers.len(), t.headers.len());
    }
}
