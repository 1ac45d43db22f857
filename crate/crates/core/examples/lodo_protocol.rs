//! Split modes, the leakage checks with a planted duplicate, and the five
//! leave-one-dataset-out folds.

use bridge::fixtures::{fixture_tables, fixture_window_config, plant_duplicate, FixtureSpec};
use bridge::pipeline::{prepare_tables, run_lodo, FoldManifest, Prepared};
use bridge::protocol::{ratio_consistent, split, verify_leakage, SplitMode, SplitSpec};
use bridge::transform::fit_scaler;
use bridge::vocab::{AliasMap, CanonicalVocabulary};

fn fixture() -> bridge::Result<Prepared> {
    let vocab = CanonicalVocabulary::bridge_default();
    let inputs: Vec<_> = fixture_tables(&vocab, &FixtureSpec::small(&[0, 1, 2, 3, 4]))?
        .into_iter()
        .map(|t| {
            let a = AliasMap::empty(t.dataset_id);
            (t, a)
        })
        .collect();
    prepare_tables(&vocab, &inputs, &fixture_window_config(), 17)
}

pub fn run_example() -> bridge::Result<Vec<FoldManifest>> {
    let p = fixture()?;
    let ws = &p.windows;

    for spec in [SplitSpec::stratified(1), SplitSpec::temporal(), SplitSpec::lodo(2)] {
        let (train, test) = split(ws, &spec)?;
        let scaler = fit_scaler(&train.features)?;
        let r = verify_leakage(&train, &test, &scaler);
        println!(
            "{:<40} train {:>3} test {:>3} overlap {} benign {:.3}/{:.3}",
            format!("{:?}", spec.mode),
            train.len(),
            test.len(),
            r.overlap_count,
            r.train_benign_fraction,
            r.test_benign_fraction
        );
    }

    let (train, mut test) = split(ws, &SplitSpec::stratified(1))?;
    plant_duplicate(&train, &mut test, 0, 0);
    let r = verify_leakage(&train, &test, &fit_scaler(&train.features)?);
    println!("planted duplicate: overlap {}, passed {}", r.overlap_count, r.passed);
    println!("0.758 vs 0.750 consistent: {}", ratio_consistent(0.758, 0.750));

    let mut manifests = Vec::new();
    for (d, s) in run_lodo(ws, &fixture_window_config(), 17)? {
        let m = FoldManifest::new(SplitMode::Lodo { held_out: d }, 17, &s);
        println!("fold {d}: train datasets {:?}, test {:?}, {} test windows, gate {}", m.train_datasets, m.test_datasets, m.test_count, m.gate_passed);
        manifests.push(m);
    }
    Ok(manifests)
}

fn main() {
    run_example().expect("protocol example");
}
