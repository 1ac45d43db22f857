//! CSV ingestion, binary label normalization, class balancing and projection
//! onto the canonical feature matrix.

use std::collections::BTreeSet;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::vocab::{MappingReport, SLOT_COUNT};

/// Subsampling never cuts the majority class below this many rows.
pub const MIN_ROWS_PER_CLASS: usize = 5000;

/// Fraction of malformed rows above which parsing aborts.
pub const MAX_MALFORMED_FRACTION: f64 = 0.01;

pub const BENIGN: u8 = 0;
pub const ATTACK: u8 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestConfig {
    pub dataset_id: u8,
    pub label_column: String,
    pub benign_values: Vec<String>,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
}

fn default_delimiter() -> char {
    ','
}

impl IngestConfig {
    pub fn new(dataset_id: u8, label_column: &str, benign_values: &[&str]) -> Self {
        IngestConfig {
            dataset_id,
            label_column: label_column.to_string(),
            benign_values: benign_values.iter().map(|s| s.to_string()).collect(),
            delimiter: ',',
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedRow {
    /// 1-based line number in the source file.
    pub line: u64,
    pub cells: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetTable {
    pub dataset_id: u8,
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub labels: Vec<u8>,
    pub label_column: String,
    pub benign_values: BTreeSet<String>,
    pub rejected: Vec<RejectedRow>,
}

impl DatasetTable {
    /// Builds a table from in-memory records, applying the same label rule as
    /// [`parse_csv`]. Rows must already match the header arity.
    pub fn from_records(
        cfg: &IngestConfig,
        headers: Vec<String>,
        rows: Vec<Vec<String>>,
    ) -> Result<Self> {
        let label_idx = headers
            .iter()
            .position(|h| h.trim() == cfg.label_column.trim())
            .ok_or_else(|| Error::MissingLabelColumn(cfg.label_column.clone()))?;
        if let Some(bad) = rows.iter().position(|r| r.len() != headers.len()) {
            return Err(Error::Shape(format!(
                "row {bad} has {} cells, expected {}",
                rows[bad].len(),
                headers.len()
            )));
        }
        let benign: BTreeSet<String> = cfg.benign_values.iter().map(|b| b.trim().to_string()).collect();
        let labels = rows
            .iter()
            .map(|r| if benign.contains(r[label_idx].trim()) { BENIGN } else { ATTACK })
            .collect();
        Ok(DatasetTable {
            dataset_id: cfg.dataset_id,
            headers,
            rows,
            labels,
            label_column: cfg.label_column.clone(),
            benign_values: benign,
            rejected: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn class_counts(&self) -> (usize, usize) {
        let attack = self.labels.iter().filter(|&&l| l == ATTACK).count();
        (self.labels.len() - attack, attack)
    }

    fn select(&self, keep: &[bool]) -> DatasetTable {
        let mut out = DatasetTable {
            rows: Vec::new(),
            labels: Vec::new(),
            ..self.clone()
        };
        for (i, &k) in keep.iter().enumerate() {
            if k {
                out.rows.push(self.rows[i].clone());
                out.labels.push(self.labels[i]);
            }
        }
        out
    }
}

pub fn parse_csv(path: impl AsRef<Path>, cfg: &IngestConfig) -> Result<DatasetTable> {
    let path = path.as_ref();
    let csv_err = |message: String| Error::Csv {
        path: path.to_path_buf(),
        message,
    };
    let delimiter = u8::try_from(cfg.delimiter)
        .map_err(|_| Error::InvalidArgument(format!("delimiter {:?} is not ASCII", cfg.delimiter)))?;
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .flexible(true)
        .has_headers(true)
        .from_reader(file);

    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| csv_err(e.to_string()))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if headers.is_empty() || headers.iter().all(|h| h.is_empty()) {
        return Err(csv_err("empty file".into()));
    }
    if !headers.iter().any(|h| h == cfg.label_column.trim()) {
        return Err(Error::MissingLabelColumn(cfg.label_column.clone()));
    }

    let mut rows = Vec::new();
    let mut rejected = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_err(e.to_string()))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != headers.len() {
            log::warn!(
                "{}: line {line} has {} cells, expected {}; row rejected",
                path.display(),
                record.len(),
                headers.len()
            );
            rejected.push(RejectedRow {
                line,
                cells: record.len(),
            });
            continue;
        }
        rows.push(record.iter().map(str::to_string).collect());
    }
    let total = rows.len() + rejected.len();
    if total > 0 && rejected.len() as f64 > MAX_MALFORMED_FRACTION * total as f64 {
        let lines: Vec<String> = rejected.iter().take(10).map(|r| r.line.to_string()).collect();
        return Err(csv_err(format!(
            "{} of {total} rows malformed (> 1%), first at lines {}",
            rejected.len(),
            lines.join(", ")
        )));
    }
    let mut table = DatasetTable::from_records(cfg, headers, rows)?;
    table.rejected = rejected;
    Ok(table)
}

/// Target size for the majority class given both class counts.
pub fn balanced_majority_size(majority: usize, minority: usize) -> usize {
    majority.min(minority.max(MIN_ROWS_PER_CLASS))
}

/// Subsamples the majority class towards 1:1, never below
/// [`MIN_ROWS_PER_CLASS`] and never touching the minority class. Surviving rows
/// keep their original order.
pub fn balance_classes(table: &DatasetTable, seed: u64) -> Result<DatasetTable> {
    let (benign, attack) = table.class_counts();
    if benign == 0 || attack == 0 {
        return Err(Error::Degenerate("single-class dataset".into()));
    }
    let (majority_label, majority, minority) = if benign >= attack {
        (BENIGN, benign, attack)
    } else {
        (ATTACK, attack, benign)
    };
    let target = balanced_majority_size(majority, minority);
    if target >= majority {
        return Ok(table.clone());
    }
    let positions: Vec<usize> = table
        .labels
        .iter()
        .enumerate()
        .filter(|(_, &l)| l == majority_label)
        .map(|(i, _)| i)
        .collect();
    let mut keep = vec![true; table.len()];
    for &p in &positions {
        keep[p] = false;
    }
    for s in rng::sample_sorted(positions.len(), target, seed) {
        keep[positions[s]] = true;
    }
    Ok(table.select(&keep))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CanonicalMatrix {
    pub dataset_id: u8,
    /// Row-major `rows × 46`.
    pub values: Vec<f32>,
    pub labels: Vec<u8>,
    pub sanitation_count: u64,
}

impl CanonicalMatrix {
    pub fn rows(&self) -> usize {
        self.labels.len()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * SLOT_COUNT..(i + 1) * SLOT_COUNT]
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = f32> + '_ {
        self.values.iter().skip(j).step_by(SLOT_COUNT).copied()
    }
}

/// Parses one cell; `None` means the cell had to be sanitized to zero.
pub fn parse_cell(cell: &str) -> Option<f32> {
    let v: f64 = cell.trim().parse().ok()?;
    let narrowed = v as f32;
    narrowed.is_finite().then_some(narrowed)
}

pub fn build_canonical_matrix(table: &DatasetTable, report: &MappingReport) -> Result<CanonicalMatrix> {
    if report.dataset_id != table.dataset_id {
        return Err(Error::InvalidArgument(format!(
            "mapping report is for dataset {}, table is dataset {}",
            report.dataset_id, table.dataset_id
        )));
    }
    let columns: Vec<Option<usize>> = report.outcomes.iter().map(|o| o.column_index()).collect();
    if let Some(&Some(c)) = columns.iter().find(|c| matches!(c, Some(c) if *c >= table.headers.len())) {
        return Err(Error::Shape(format!("mapping references column {c} beyond the table")));
    }
    let per_row: Vec<(Vec<f32>, u64)> = table
        .rows
        .par_iter()
        .map(|row| {
            let mut out = vec![0.0f32; SLOT_COUNT];
            let mut sanitized = 0u64;
            for (slot, col) in columns.iter().enumerate() {
                if let Some(c) = col {
                    match parse_cell(&row[*c]) {
                        Some(v) => out[slot] = v,
                        None => sanitized += 1,
                    }
                }
            }
            (out, sanitized)
        })
        .collect();
    let mut values = Vec::with_capacity(table.len() * SLOT_COUNT);
    let mut sanitation_count = 0;
    for (row, s) in per_row {
        values.extend_from_slice(&row);
        sanitation_count += s;
    }
    Ok(CanonicalMatrix {
        dataset_id: table.dataset_id,
        values,
        labels: table.labels.clone(),
        sanitation_count,
    })
}

pub fn attack_fraction(m: &CanonicalMatrix) -> Result<f64> {
    if m.labels.is_empty() {
        return Err(Error::InvalidArgument("attack fraction of an empty matrix".into()));
    }
    Ok(m.labels.iter().filter(|&&l| l == ATTACK).count() as f64 / m.labels.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::{match_columns, AliasMap, CanonicalVocabulary};
    use proptest::prelude::*;
    use std::io::Write;

    fn write_csv(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    fn labelled(benign: usize, attack: usize) -> DatasetTable {
        let cfg = IngestConfig::new(0, "Label", &["BENIGN"]);
        let headers = vec!["x".to_string(), "Label".to_string()];
        let rows = (0..benign + attack)
            .map(|i| {
                let label = if i % (benign + attack) < benign { "BENIGN" } else { "DoS" };
                vec![i.to_string(), label.to_string()]
            })
            .collect();
        DatasetTable::from_records(&cfg, headers, rows).unwrap()
    }

    #[test]
    fn labels_map_to_binary() {
        let f = write_csv("a,b,Label\n1,2,BENIGN\n3,4,DoS\n5,6,BENIGN\n");
        let t = parse_csv(f.path(), &IngestConfig::new(0, "Label", &["BENIGN"])).unwrap();
        assert_eq!(t.labels, vec![0, 1, 0]);
        assert_eq!(t.headers, vec!["a", "b", "Label"]);
    }

    #[test]
    fn missing_label_column_named() {
        let f = write_csv("a,b\n1,2\n");
        let err = parse_csv(f.path(), &IngestConfig::new(0, "Label", &["BENIGN"])).unwrap_err();
        assert!(err.to_string().contains("Label"));
    }

    #[test]
    fn short_row_rejected_with_line() {
        let mut text = String::from("a,b,c,d,e,Label\n");
        for i in 0..200 {
            text.push_str(&format!("{i},1,1,1,1,BENIGN\n"));
        }
        text.push_str("1,1,1,1,DoS\n");
        let f = write_csv(&text);
        let t = parse_csv(f.path(), &IngestConfig::new(0, "Label", &["BENIGN"])).unwrap();
        assert_eq!(t.len(), 200);
        assert_eq!(t.rejected, vec![RejectedRow { line: 202, cells: 5 }]);
    }

    #[test]
    fn too_many_malformed_rows_abort() {
        let f = write_csv("a,b,Label\n1,2,BENIGN\n1,DoS\n");
        let err = parse_csv(f.path(), &IngestConfig::new(0, "Label", &["BENIGN"])).unwrap_err();
        assert!(err.to_string().contains("malformed"), "{err}");
    }

    #[test]
    fn empty_file_errors() {
        let f = write_csv("");
        assert!(parse_csv(f.path(), &IngestConfig::new(0, "Label", &[])).is_err());
    }

    #[test]
    fn semicolon_delimiter() {
        let f = write_csv("a;Label\n\"1,5\";BENIGN\n");
        let mut cfg = IngestConfig::new(0, "Label", &["BENIGN"]);
        cfg.delimiter = ';';
        let t = parse_csv(f.path(), &cfg).unwrap();
        assert_eq!(t.rows[0][0], "1,5");
    }

    #[test]
    fn balance_floor_keeps_five_thousand() {
        let t = labelled(10_000, 2_000);
        let b = balance_classes(&t, 42).unwrap();
        assert_eq!(b.class_counts(), (5_000, 2_000));
        // Original order preserved.
        let xs: Vec<usize> = b.rows.iter().map(|r| r[0].parse().unwrap()).collect();
        assert!(xs.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn balance_small_and_equal_unchanged() {
        let t = labelled(22, 16);
        assert_eq!(balance_classes(&t, 1).unwrap(), t);
        let t = labelled(6_000, 6_000);
        assert_eq!(balance_classes(&t, 1).unwrap(), t);
    }

    #[test]
    fn balance_large_goes_one_to_one() {
        let t = labelled(20_000, 8_000);
        assert_eq!(balance_classes(&t, 5).unwrap().class_counts(), (8_000, 8_000));
    }

    #[test]
    fn balance_degenerate() {
        let t = labelled(10, 0);
        assert!(balance_classes(&t, 1).unwrap_err().to_string().contains("single-class"));
    }

    #[test]
    fn balance_seed_changes_selection() {
        let t = labelled(7_000, 100);
        let a = balance_classes(&t, 1).unwrap();
        let b = balance_classes(&t, 2).unwrap();
        assert_eq!(a.len(), b.len());
        assert_ne!(a.rows, b.rows);
        assert_eq!(a, balance_classes(&t, 1).unwrap());
    }

    #[test]
    fn balance_idempotent() {
        for (b, a) in [(10_000, 2_000), (22, 16), (1_000, 9_000), (30_000, 12_000)] {
            let t = labelled(b, a);
            let once = balance_classes(&t, 9).unwrap();
            assert_eq!(balance_classes(&once, 9).unwrap(), once);
        }
    }

    fn table_for(headers: &[&str], rows: &[&[&str]]) -> (DatasetTable, MappingReport) {
        let cfg = IngestConfig::new(0, "Label", &["BENIGN"]);
        let t = DatasetTable::from_records(
            &cfg,
            headers.iter().map(|s| s.to_string()).collect(),
            rows.iter().map(|r| r.iter().map(|s| s.to_string()).collect()).collect(),
        )
        .unwrap();
        let v = CanonicalVocabulary::bridge_default();
        let r = match_columns(&v, &AliasMap::empty(0), &t.headers);
        (t, r)
    }

    #[test]
    fn sanitation_of_inf_and_exact_parse() {
        let (t, r) = table_for(
            &["Flow Duration", "Flow Bytes/s", "Label"],
            &[&["3.5", "inf", "BENIGN"], &["NaN", "abc", "DoS"]],
        );
        let m = build_canonical_matrix(&t, &r).unwrap();
        assert_eq!(m.row(0)[0], 3.5);
        assert_eq!(m.row(0)[5], 0.0);
        assert_eq!(m.row(1)[0], 0.0);
        assert_eq!(m.sanitation_count, 3);
        assert_eq!(m.labels, vec![0, 1]);
    }

    #[test]
    fn overflow_on_narrowing_is_sanitized() {
        assert_eq!(parse_cell("1e300"), None);
        assert_eq!(parse_cell(" 2 "), Some(2.0));
    }

    #[test]
    fn all_zero_filled_matrix() {
        let (t, r) = table_for(&["foo", "Label"], &[&["1", "BENIGN"], &["2", "DoS"]]);
        assert_eq!(r.matched_count, 0);
        let m = build_canonical_matrix(&t, &r).unwrap();
        assert!(m.values.iter().all(|&v| v == 0.0));
        assert_eq!(m.sanitation_count, 0);
    }

    #[test]
    fn mismatched_report_rejected() {
        let (t, mut r) = table_for(&["foo", "Label"], &[&["1", "BENIGN"]]);
        r.dataset_id = 3;
        assert!(build_canonical_matrix(&t, &r).is_err());
    }

    #[test]
    fn attack_fraction_cases() {
        let m = |labels: Vec<u8>| CanonicalMatrix {
            dataset_id: 0,
            values: vec![0.0; labels.len() * SLOT_COUNT],
            labels,
            sanitation_count: 0,
        };
        assert_eq!(attack_fraction(&m(vec![1, 0, 0, 1])).unwrap(), 0.5);
        assert_eq!(attack_fraction(&m(vec![0, 0])).unwrap(), 0.0);
        let mut labels = vec![1u8; 14_350];
        labels.extend(vec![0u8; 33_671 - 14_350]);
        assert!((attack_fraction(&m(labels)).unwrap() - 0.4262).abs() < 5e-5);
        assert!(attack_fraction(&m(vec![])).is_err());
    }

    proptest! {
        #[test]
        fn matrix_always_finite(cells in proptest::collection::vec(".{0,12}", 1..40)) {
            let headers = ["Flow Duration", "Flow Bytes/s", "Fwd IAT Mean", "Label"];
            let rows: Vec<Vec<String>> = cells
                .chunks(3)
                .filter(|c| c.len() == 3)
                .map(|c| {
                    let mut r: Vec<String> = c.to_vec();
                    r.push("BENIGN".into());
                    r
                })
                .collect();
            let cfg = IngestConfig::new(0, "Label", &["BENIGN"]);
            let t = DatasetTable::from_records(&cfg, headers.iter().map(|s| s.to_string()).collect(), rows).unwrap();
            let r = match_columns(&CanonicalVocabulary::bridge_default(), &AliasMap::empty(0), &t.headers);
            let m = build_canonical_matrix(&t, &r).unwrap();
            prop_assert!(m.values.iter().all(|v| v.is_finite()));
            for slot in r.zero_filled_slots() {
                prop_assert!(m.column(slot).all(|v| v == 0.0));
            }
        }
    }
}
