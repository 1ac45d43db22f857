//! Aligns five header dialects onto the 46-slot vocabulary and prints the
//! coverage table, then shows how a per-dataset alias map redirects a column.

use bridge::fixtures::{fixture_headers, FIXTURE_COVERAGE};
use bridge::vocab::{coverage_summary, match_columns, render_report, AliasMap, AliasOverride, CanonicalVocabulary, CoverageSummary};

pub fn run_example() -> bridge::Result<CoverageSummary> {
    let vocab = CanonicalVocabulary::bridge_default();
    println!("vocabulary {}: groups {:?}", vocab.version, vocab.group_sizes());

    let mut reports = Vec::new();
    for d in 0..5u8 {
        let headers = fixture_headers(&vocab, d);
        let report = match_columns(&vocab, &AliasMap::empty(d), &headers);
        assert_eq!(report.matched_count, FIXTURE_COVERAGE[d as usize]);
        reports.push(report);
    }
    let summary = coverage_summary(&reports)?;
    print!("{summary}");

    // An Argus-style export where "dur" is a session total, not the flow
    // duration: exclude it and point the slot at a better column.
    let headers: Vec<String> = ["dur", "sess_time_us", "spkts", "Label"].iter().map(|s| s.to_string()).collect();
    let alias = AliasMap {
        dataset_id: 2,
        overrides: vec![AliasOverride { slot: 0, aliases: vec!["sess_time_us".into()], exclude: vec!["dur".into()] }],
    };
    let report = match_columns(&vocab, &alias, &headers);
    let shown: String = render_report(&vocab, &report).lines().take(4).map(|l| format!("{l}\n")).collect();
    print!("{shown}");
    Ok(summary)
}

fn main() {
    run_example().expect("alignment example");
}
