//! End-to-end preprocessing of the synthetic five-dataset fixture: CSV files
//! on disk → balanced canonical matrices → windows → stratified split →
//! train-only scaler → leakage checks → tensor files.

use bridge::digest::to_hex;
use bridge::fixtures::{write_fixture, FixtureSpec};
use bridge::pipeline::{prepare, split_and_scale, PipelineConfig, ScaledSplit};
use bridge::tensorio::{load_windows, save_windows};

pub fn run_example() -> bridge::Result<ScaledSplit> {
    let dir = tempfile::tempdir().map_err(|e| bridge::Error::InvalidArgument(e.to_string()))?;
    let config_path = write_fixture(dir.path(), &FixtureSpec::small(&[0, 1, 2, 3, 4]))?;
    let cfg = PipelineConfig::load(&config_path)?;

    let prepared = prepare(&cfg, cfg.seed)?;
    for d in &prepared.datasets {
        println!(
            "dataset {}: {} rows, {} after balancing, coverage {}%, {} windows",
            d.dataset_id, d.rows_read, d.rows_balanced, d.report.coverage_percent, d.window_count
        );
    }

    let s = split_and_scale(&prepared.windows, &cfg.split, &cfg.windows, cfg.seed)?;
    println!(
        "train {} / test {} windows; fit_hash {}; overlap {}; benign {:.3} / {:.3}; passed {}",
        s.train.len(),
        s.test.len(),
        to_hex(s.scaler.fit_hash),
        s.leakage.overlap_count,
        s.leakage.train_benign_fraction,
        s.leakage.test_benign_fraction,
        s.leakage.passed
    );

    let [tensor, sidecar] = save_windows(dir.path().join("train.bt"), &s.train, serde_json::json!({ "seed": cfg.seed }))?;
    let bytes = std::fs::metadata(&tensor).map(|m| m.len()).unwrap_or(0);
    println!("wrote {} ({bytes} bytes) and {}", tensor.display(), sidecar.display());
    assert_eq!(load_windows(&tensor)?, s.train);
    Ok(s)
}

fn main() {
    run_example().expect("pipeline example");
}
