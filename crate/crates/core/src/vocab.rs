//! Canonical 46-slot flow-feature vocabulary and alias-based column alignment.
//!
//! Every source dataset is projected onto the same ordered set of slots. A
//! header is assigned to a slot by one of three stages, in priority order:
//!
//! 1. case-insensitive equality with the slot name,
//! 2. case-insensitive equality with one of the slot's aliases,
//! 3. case-insensitive containment of an alias of at least
//!    [`MIN_SUBSTRING_ALIAS`] characters.
//!
//! Stages run globally: every slot gets a chance at stage 1 before any slot
//! considers stage 2. Within a stage, slots are visited in index order and a
//! slot takes the earliest unclaimed header in file order. A header claims at
//! most one slot. Competing candidates are recorded in the report so the
//! choice can be audited.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SLOT_COUNT: usize = 46;

/// Minimum alias length (in characters) eligible for substring matching.
pub const MIN_SUBSTRING_ALIAS: usize = 5;

/// Inclusive index ranges of the four semantic groups.
pub const GROUP_RANGES: [(usize, usize); 4] = [(0, 16), (17, 37), (38, 43), (44, 45)];

const DEFAULT_VOCABULARY: &str = include_str!("../data/vocabulary.json");

/// Group (1-based) that owns a slot index.
pub fn group_of(index: usize) -> Option<u8> {
    GROUP_RANGES
        .iter()
        .position(|&(lo, hi)| (lo..=hi).contains(&index))
        .map(|g| g as u8 + 1)
}

fn fold(s: &str) -> String {
    s.trim().to_lowercase()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanonicalSlot {
    pub index: usize,
    pub name: String,
    pub group: u8,
    #[serde(default)]
    pub aliases: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanonicalVocabulary {
    pub version: String,
    pub slots: Vec<CanonicalSlot>,
}

impl CanonicalVocabulary {
    /// The vocabulary shipped with the crate.
    pub fn bridge_default() -> Self {
        Self::from_json_str(DEFAULT_VOCABULARY).expect("shipped vocabulary is valid")
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let vocab: CanonicalVocabulary =
            serde_json::from_str(text).map_err(|e| Error::json("vocabulary", e))?;
        vocab.validate(Some(text))?;
        Ok(vocab)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.slots.iter().map(|s| s.name.as_str())
    }

    pub fn group_sizes(&self) -> [usize; 4] {
        let mut sizes = [0; 4];
        for slot in &self.slots {
            sizes[slot.group as usize - 1] += 1;
        }
        sizes
    }

    /// Checks every structural invariant. `source` is used only to attach a
    /// line number to slot-level errors.
    pub fn validate(&self, source: Option<&str>) -> Result<()> {
        let at = |slot: &CanonicalSlot| match source.and_then(|s| line_of(s, &slot.name)) {
            Some(line) => format!("slot {} (line {line})", slot.index),
            None => format!("slot {}", slot.index),
        };
        if self.slots.len() != SLOT_COUNT {
            return Err(Error::Vocabulary(format!(
                "slot count {} ≠ {SLOT_COUNT}",
                self.slots.len()
            )));
        }
        let mut seen = BTreeMap::new();
        for (position, slot) in self.slots.iter().enumerate() {
            if slot.index != position {
                return Err(Error::Vocabulary(format!(
                    "{}: non-contiguous index, expected {position}",
                    at(slot)
                )));
            }
            let expected = group_of(slot.index).expect("index < 46");
            if slot.group != expected {
                return Err(Error::Vocabulary(format!(
                    "{}: group {} but index belongs to group {expected}",
                    at(slot),
                    slot.group
                )));
            }
            if slot.name.trim().is_empty() {
                return Err(Error::Vocabulary(format!("{}: empty name", at(slot))));
            }
            if let Some(first) = seen.insert(fold(&slot.name), slot.index) {
                return Err(Error::Vocabulary(format!(
                    "{}: duplicate name {:?} (case-insensitive clash with slot {first})",
                    at(slot),
                    slot.name
                )));
            }
            let mut aliases = HashSet::new();
            for alias in &slot.aliases {
                if alias.trim().is_empty() {
                    return Err(Error::Vocabulary(format!("{}: empty alias", at(slot))));
                }
                if !aliases.insert(fold(alias)) {
                    return Err(Error::Vocabulary(format!(
                        "{}: duplicate alias {alias:?}",
                        at(slot)
                    )));
                }
            }
        }
        Ok(())
    }
}

fn line_of(source: &str, needle: &str) -> Option<usize> {
    let quoted = format!("\"{needle}\"");
    source
        .lines()
        .position(|l| l.contains(&quoted))
        .map(|i| i + 1)
}

pub fn load_vocabulary(path: impl AsRef<Path>) -> Result<CanonicalVocabulary> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    CanonicalVocabulary::from_json_str(&text).map_err(|e| match e {
        Error::Json { source, .. } => Error::json(path.display().to_string(), source),
        other => other,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AliasOverride {
    pub slot: usize,
    /// Extra aliases for this dataset.
    #[serde(default)]
    pub aliases: Vec<String>,
    /// Strings barred for this slot: removed from its aliases and never
    /// accepted as a matching header.
    #[serde(default)]
    pub exclude: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AliasMap {
    pub dataset_id: u8,
    #[serde(default)]
    pub overrides: Vec<AliasOverride>,
}

impl AliasMap {
    pub fn empty(dataset_id: u8) -> Self {
        AliasMap {
            dataset_id,
            overrides: Vec::new(),
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let map: AliasMap = serde_json::from_str(text).map_err(|e| Error::json("alias map", e))?;
        map.validate()?;
        Ok(map)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dataset_id > 4 {
            return Err(Error::AliasMap(format!(
                "dataset_id {} outside 0..=4",
                self.dataset_id
            )));
        }
        for o in &self.overrides {
            if o.slot >= SLOT_COUNT {
                return Err(Error::AliasMap(format!("slot {} outside 0..46", o.slot)));
            }
            if o.aliases.iter().chain(&o.exclude).any(|a| a.trim().is_empty()) {
                return Err(Error::AliasMap(format!("slot {}: empty alias", o.slot)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MatchStage {
    ExactName = 1,
    ExactAlias = 2,
    AliasSubstring = 3,
}

impl MatchStage {
    pub fn number(self) -> u8 {
        self as u8
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum SlotOutcome {
    Matched {
        column: String,
        column_index: usize,
        stage: MatchStage,
    },
    ZeroFilled,
}

impl SlotOutcome {
    pub fn column_index(&self) -> Option<usize> {
        match self {
            SlotOutcome::Matched { column_index, .. } => Some(*column_index),
            SlotOutcome::ZeroFilled => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AmbiguityFlag {
    pub slot: usize,
    pub stage: MatchStage,
    /// Every candidate at the winning stage, the selected column first.
    pub competing: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MappingReport {
    pub dataset_id: u8,
    pub outcomes: Vec<SlotOutcome>,
    pub matched_count: usize,
    pub coverage_percent: u32,
    pub ambiguity_flags: Vec<AmbiguityFlag>,
}

impl MappingReport {
    pub fn zero_filled_slots(&self) -> impl Iterator<Item = usize> + '_ {
        self.outcomes
            .iter()
            .enumerate()
            .filter(|(_, o)| matches!(o, SlotOutcome::ZeroFilled))
            .map(|(i, _)| i)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// `round(100 · matched / 46)`, half-up, in integer arithmetic.
pub fn coverage_percent(matched: usize) -> u32 {
    ((200 * matched + SLOT_COUNT) / (2 * SLOT_COUNT)) as u32
}

struct SlotKeys {
    name: String,
    aliases: Vec<String>,
    exclude: BTreeSet<String>,
}

fn slot_keys(vocab: &CanonicalVocabulary, alias_map: &AliasMap) -> Vec<SlotKeys> {
    let mut keys: Vec<SlotKeys> = vocab
        .slots
        .iter()
        .map(|s| SlotKeys {
            name: fold(&s.name),
            aliases: s.aliases.iter().map(|a| fold(a)).collect(),
            exclude: BTreeSet::new(),
        })
        .collect();
    for o in &alias_map.overrides {
        let k = &mut keys[o.slot];
        for a in &o.aliases {
            let a = fold(a);
            if !k.aliases.contains(&a) {
                k.aliases.push(a);
            }
        }
        k.exclude.extend(o.exclude.iter().map(|e| fold(e)));
    }
    for k in &mut keys {
        let exclude = &k.exclude;
        k.aliases.retain(|a| !exclude.contains(a));
    }
    keys
}

fn stage_matches(keys: &SlotKeys, header: &str, stage: MatchStage) -> bool {
    if keys.exclude.contains(header) {
        return false;
    }
    match stage {
        MatchStage::ExactName => header == keys.name,
        MatchStage::ExactAlias => keys.aliases.iter().any(|a| a == header),
        MatchStage::AliasSubstring => keys
            .aliases
            .iter()
            .any(|a| a.chars().count() >= MIN_SUBSTRING_ALIAS && header.contains(a.as_str())),
    }
}

pub fn match_columns(
    vocab: &CanonicalVocabulary,
    alias_map: &AliasMap,
    headers: &[String],
) -> MappingReport {
    let keys = slot_keys(vocab, alias_map);
    let folded: Vec<String> = headers.iter().map(|h| fold(h)).collect();
    let mut claimed = vec![false; headers.len()];
    let mut outcomes = vec![SlotOutcome::ZeroFilled; SLOT_COUNT];
    let mut flags = Vec::new();

    for stage in [
        MatchStage::ExactName,
        MatchStage::ExactAlias,
        MatchStage::AliasSubstring,
    ] {
        for (slot, k) in keys.iter().enumerate() {
            if outcomes[slot] != SlotOutcome::ZeroFilled {
                continue;
            }
            let candidates: Vec<usize> = folded
                .iter()
                .enumerate()
                .filter(|&(i, h)| !claimed[i] && stage_matches(k, h, stage))
                .map(|(i, _)| i)
                .collect();
            let Some(&first) = candidates.first() else {
                continue;
            };
            claimed[first] = true;
            outcomes[slot] = SlotOutcome::Matched {
                column: headers[first].clone(),
                column_index: first,
                stage,
            };
            if candidates.len() > 1 {
                flags.push(AmbiguityFlag {
                    slot,
                    stage,
                    competing: candidates.iter().map(|&i| headers[i].clone()).collect(),
                });
            }
        }
    }
    flags.sort_by_key(|f| f.slot);

    let matched_count = outcomes
        .iter()
        .filter(|o| matches!(o, SlotOutcome::Matched { .. }))
        .count();
    MappingReport {
        dataset_id: alias_map.dataset_id,
        outcomes,
        matched_count,
        coverage_percent: coverage_percent(matched_count),
        ambiguity_flags: flags,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub dataset_id: u8,
    pub matched: usize,
    pub coverage_percent: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageSummary {
    pub rows: Vec<CoverageRow>,
}

impl fmt::Display for CoverageSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<8} {:>12} {:>9}", "dataset", "matched/46", "coverage")?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<8} {:>12} {:>8}%",
                r.dataset_id,
                format!("{}/{SLOT_COUNT}", r.matched),
                r.coverage_percent
            )?;
        }
        Ok(())
    }
}

pub fn coverage_summary(reports: &[MappingReport]) -> Result<CoverageSummary> {
    let mut rows = BTreeMap::new();
    for r in reports {
        let row = CoverageRow {
            dataset_id: r.dataset_id,
            matched: r.matched_count,
            coverage_percent: coverage_percent(r.matched_count),
        };
        if rows.insert(r.dataset_id, row).is_some() {
            return Err(Error::InvalidArgument(format!(
                "duplicate dataset_id {} in coverage summary",
                r.dataset_id
            )));
        }
    }
    Ok(CoverageSummary {
        rows: rows.into_values().collect(),
    })
}

/// Human-readable per-slot table for one report.
pub fn render_report(vocab: &CanonicalVocabulary, report: &MappingReport) -> String {
    let mut out = format!(
        "dataset {}: {}/{SLOT_COUNT} matched ({}%)\n",
        report.dataset_id, report.matched_count, report.coverage_percent
    );
    for (slot, outcome) in vocab.slots.iter().zip(&report.outcomes) {
        let detail = match outcome {
            SlotOutcome::Matched { column, stage, .. } => {
                format!("stage {} <- {column}", stage.number())
            }
            SlotOutcome::ZeroFilled => "zero-filled".to_string(),
        };
        out.push_str(&format!(
            "  [{:>2}] g{} {:<28} {detail}\n",
            slot.index, slot.group, slot.name
        ));
    }
    for flag in &report.ambiguity_flags {
        out.push_str(&format!(
            "  ambiguous slot {} at stage {}: {}\n",
            flag.slot,
            flag.stage.number(),
            flag.competing.join(", ")
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn headers(h: &[&str]) -> Vec<String> {
        h.iter().map(|s| s.to_string()).collect()
    }

    fn tiny_vocab_json(slots: usize, dup: bool) -> String {
        let mut v = CanonicalVocabulary::bridge_default();
        v.slots.truncate(slots);
        if dup {
            v.slots[1].name = v.slots[0].name.to_lowercase();
        }
        serde_json::to_string_pretty(&v).unwrap()
    }

    #[test]
    fn default_vocabulary_shape() {
        let v = CanonicalVocabulary::bridge_default();
        assert_eq!(v.slots.len(), 46);
        assert_eq!(v.group_sizes(), [17, 21, 6, 2]);
    }

    #[test]
    fn wrong_slot_count_rejected() {
        let err = CanonicalVocabulary::from_json_str(&tiny_vocab_json(45, false)).unwrap_err();
        assert!(err.to_string().contains("slot count 45 ≠ 46"), "{err}");
    }

    #[test]
    fn case_fold_duplicate_rejected() {
        let err = CanonicalVocabulary::from_json_str(&tiny_vocab_json(46, true)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("duplicate name"), "{msg}");
        assert!(msg.contains("slot 1"), "{msg}");
        assert!(msg.contains("line"), "{msg}");
    }

    #[test]
    fn non_contiguous_index_rejected() {
        let mut v = CanonicalVocabulary::bridge_default();
        v.slots[10].index = 11;
        let err = v.validate(None).unwrap_err();
        assert!(err.to_string().contains("non-contiguous"));
    }

    #[test]
    fn malformed_json_reports_position() {
        let err = CanonicalVocabulary::from_json_str("{ \"version\": 1,\n").unwrap_err();
        assert!(err.to_string().contains("line"), "{err}");
    }

    #[test]
    fn stage_one_case_insensitive() {
        let v = CanonicalVocabulary::bridge_default();
        let r = match_columns(&v, &AliasMap::empty(0), &headers(&["flow duration"]));
        assert_eq!(
            r.outcomes[0],
            SlotOutcome::Matched {
                column: "flow duration".into(),
                column_index: 0,
                stage: MatchStage::ExactName
            }
        );
        assert_eq!(r.matched_count, 1);
    }

    #[test]
    fn stage_three_substring() {
        let v = CanonicalVocabulary::bridge_default();
        let r = match_columns(&v, &AliasMap::empty(0), &headers(&["total_fwd_pkts_count"]));
        match &r.outcomes[1] {
            SlotOutcome::Matched { stage, .. } => assert_eq!(*stage, MatchStage::AliasSubstring),
            o => panic!("{o:?}"),
        }
    }

    #[test]
    fn short_alias_never_substring() {
        // "dur" is an alias of slot 0 but is shorter than the substring minimum.
        let v = CanonicalVocabulary::bridge_default();
        let r = match_columns(&v, &AliasMap::empty(0), &headers(&["duration_x"]));
        assert_eq!(r.matched_count, 0);
        let r = match_columns(&v, &AliasMap::empty(0), &headers(&["DUR"]));
        assert_eq!(r.matched_count, 1);
    }

    #[test]
    fn tie_break_earliest_and_flagged() {
        let v = CanonicalVocabulary::bridge_default();
        let r = match_columns(
            &v,
            &AliasMap::empty(0),
            &headers(&["a_fwd_pkts", "b_fwd_pkts"]),
        );
        assert_eq!(r.outcomes[1].column_index(), Some(0));
        assert_eq!(r.ambiguity_flags.len(), 1);
        assert_eq!(r.ambiguity_flags[0].slot, 1);
        assert_eq!(r.ambiguity_flags[0].competing, headers(&["a_fwd_pkts", "b_fwd_pkts"]));
        // The second header is free for another slot, but none wants it.
        assert_eq!(r.matched_count, 1);
    }

    #[test]
    fn header_claims_one_slot() {
        let v = CanonicalVocabulary::bridge_default();
        // "subflow_fwd_pkts" contains the slot-1 alias "fwd_pkts" but is the exact
        // alias of slot 9; the exact stage runs first everywhere.
        let r = match_columns(&v, &AliasMap::empty(0), &headers(&["subflow_fwd_pkts"]));
        assert_eq!(r.outcomes[9].column_index(), Some(0));
        assert_eq!(r.outcomes[1], SlotOutcome::ZeroFilled);
        assert_eq!(r.matched_count, 1);
    }

    #[test]
    fn overrides_and_exclusions() {
        let v = CanonicalVocabulary::bridge_default();
        let map = AliasMap::from_json_str(
            r#"{ "dataset_id": 2, "overrides": [
                { "slot": 0, "aliases": ["ltime_span"], "exclude": [] },
                { "slot": 6, "exclude": ["rate"] } ] }"#,
        )
        .unwrap();
        let r = match_columns(&v, &map, &headers(&["ltime_span", "rate"]));
        assert_eq!(r.dataset_id, 2);
        assert_eq!(r.outcomes[0].column_index(), Some(0));
        assert_eq!(r.outcomes[6], SlotOutcome::ZeroFilled);
    }

    #[test]
    fn alias_map_rejects_bad_slot() {
        let err = AliasMap::from_json_str(r#"{ "dataset_id": 0, "overrides": [ { "slot": 46 } ] }"#)
            .unwrap_err();
        assert!(err.to_string().contains("slot 46"));
    }

    #[test]
    fn coverage_rounding() {
        assert_eq!(coverage_percent(43), 93);
        assert_eq!(coverage_percent(40), 87);
        assert_eq!(coverage_percent(18), 39);
        assert_eq!(coverage_percent(10), 22);
        assert_eq!(coverage_percent(7), 15);
        assert_eq!(coverage_percent(0), 0);
        assert_eq!(coverage_percent(23), 50);
        assert_eq!(coverage_percent(46), 100);
    }

    #[test]
    fn coverage_summary_orders_and_rejects_duplicates() {
        let v = CanonicalVocabulary::bridge_default();
        let a = match_columns(&v, &AliasMap::empty(3), &headers(&["x"]));
        let b = match_columns(&v, &AliasMap::empty(1), &headers(&["flow duration"]));
        let s = coverage_summary(&[a.clone(), b]).unwrap();
        assert_eq!(s.rows.iter().map(|r| r.dataset_id).collect::<Vec<_>>(), vec![1, 3]);
        assert_eq!(s.rows[1].coverage_percent, 0);
        assert!(coverage_summary(&[a.clone(), a]).is_err());
    }
}
