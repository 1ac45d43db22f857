//! Acceptance checks, one line per criterion. Runs without the libtest
//! harness so the lines always reach the console; exits nonzero on any failure.

use std::path::Path;
use std::time::{Duration, Instant};

use bridge::cli::{main_with_args, RunManifest, EXIT_CHECK_FAILED, EXIT_OK};
use bridge::fixtures::{fixture_headers, fixture_tables, plant_duplicate, FixtureSpec, write_fixture};
use bridge::ingest::CanonicalMatrix;
use bridge::metrics::{
    classification_metrics, evaluate, lodo_summary, per_dataset_breakdown, roc_auc, wilcoxon_one_sided, Confusion, LodoFold,
    ScoredPredictions,
};
use bridge::parallel::{with_env_threads, THREADS_ENV};
use bridge::pipeline::{prepare_tables, split_and_scale};
use bridge::protocol::{ratio_consistent, split, verify_leakage, SplitSpec};
use bridge::rng::SplitMix64;
use bridge::tchnet::fusion::cbgaf;
use bridge::tchnet::{
    count_parameters, cross_entropy, diagnostics_digest, focal_loss, gradcheck_suite, model_forward, Conventions, LossConfig,
    ModelConfig, WeightStore, REFERENCE_TOTAL,
};
use bridge::transform::{apply_scaler, fit_scaler, fit_scaler_columns, percentile_sorted};
use bridge::vocab::{coverage_summary, match_columns, AliasMap, CanonicalVocabulary, SLOT_COUNT};
use bridge::windows::{build_windows, Context, WindowConfig};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn c1_vocabulary() -> Outcome {
    let vocab = CanonicalVocabulary::bridge_default();
    ensure!(vocab.slots.len() == 46, "{} slots", vocab.slots.len());
    ensure!(vocab.group_sizes() == [17, 21, 6, 2], "groups {:?}", vocab.group_sizes());
    let reports: Vec<_> = (0..5u8).map(|d| match_columns(&vocab, &AliasMap::empty(d), &fixture_headers(&vocab, d))).collect();
    let summary = coverage_summary(&reports).map_err(err)?;
    let matched: Vec<usize> = summary.rows.iter().map(|r| r.matched).collect();
    let pct: Vec<u32> = summary.rows.iter().map(|r| r.coverage_percent).collect();
    ensure!(matched == [43, 40, 18, 10, 7], "matched {matched:?}");
    ensure!(pct == [93, 87, 39, 22, 15], "coverage {pct:?}");
    Ok(format!("groups 17/21/6/2, coverage {pct:?}%"))
}

fn c2_scaler() -> Outcome {
    let column: Vec<f32> = (0..=10).map(|i| 10.0 * i as f32).collect();
    let s = fit_scaler_columns(&column, 1).map_err(err)?;
    let sorted: Vec<f64> = column.iter().map(|&v| v as f64).collect();
    let (p5, p95) = (percentile_sorted(&sorted, 5.0), percentile_sorted(&sorted, 95.0));
    ensure!(s.center[0] == 50.0 && p5 == 5.0 && p95 == 95.0 && s.scale[0] == 90.0, "center {} P5 {p5} P95 {p95} scale {}", s.center[0], s.scale[0]);
    let clipped = apply_scaler(&s, &[10_000.0]).map_err(err)?[0];
    ensure!(clipped == 10.0, "10000 → {clipped}");
    Ok("median 50, P5 5, P95 95, scale 90; 10000 → 10".into())
}

fn files_under(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(dir).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn c3_pipeline() -> Outcome {
    let tmp = tempfile::tempdir().map_err(err)?;
    let cfg = write_fixture(tmp.path().join("fx"), &FixtureSpec::small(&[0, 1, 2, 3, 4])).map_err(err)?;
    let mut manifests = Vec::new();
    for run in ["a", "b"] {
        let out = tmp.path().join(run);
        let code = main_with_args(["bridge", "preprocess", "--config", cfg.to_str().unwrap(), "--seed", "17", "--out-dir", out.to_str().unwrap()]);
        ensure!(code == EXIT_OK, "preprocess run {run} exited {code}");
        manifests.push(RunManifest::load(out.join("manifest.json")).map_err(err)?);
    }
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let files = files_under(&a);
    ensure!(files == files_under(&b), "different file sets");
    let mut compared = 0;
    for f in files.iter().filter(|f| f.file_name().unwrap() != "manifest.json") {
        ensure!(std::fs::read(a.join(f)).unwrap() == std::fs::read(b.join(f)).unwrap(), "{} differs", f.display());
        compared += 1;
    }
    ensure!(manifests[0].outputs == manifests[1].outputs, "manifest output digests differ");
    ensure!(manifests[0].verify_outputs(&a).is_empty(), "manifest digests do not match files");

    let vocab = CanonicalVocabulary::bridge_default();
    let inputs: Vec<_> = fixture_tables(&vocab, &FixtureSpec::small(&[0, 1])).map_err(err)?.into_iter().map(|t| {
        let a = AliasMap::empty(t.dataset_id);
        (t, a)
    }).collect();
    let p = prepare_tables(&vocab, &inputs, &WindowConfig::default(), 3).map_err(err)?;
    let clean = split_and_scale(&p.windows, &SplitSpec::stratified(3), &WindowConfig::default(), 3).map_err(err)?;
    ensure!(clean.leakage.passed, "clean split failed: {:?}", clean.leakage);
    let (train, mut test) = split(&p.windows, &SplitSpec::stratified(3)).map_err(err)?;
    plant_duplicate(&train, &mut test, 5, 2);
    let planted = verify_leakage(&train, &test, &fit_scaler(&train.features).map_err(err)?);
    ensure!(planted.overlap_count == 1 && !planted.passed, "planted: {planted:?}");
    ensure!(ratio_consistent(0.758, 0.750), "0.758/0.750 rejected");

    let dir = tmp.path().join("verify");
    let (tr, te) = (dir.join("train.bt"), dir.join("test.bt"));
    std::fs::create_dir_all(&dir).map_err(err)?;
    bridge::tensorio::save_windows(&tr, &train, serde_json::Value::Null).map_err(err)?;
    bridge::tensorio::save_windows(&te, &test, serde_json::Value::Null).map_err(err)?;
    let code = main_with_args(["bridge", "verify", "--train", tr.to_str().unwrap(), "--test", te.to_str().unwrap(), "--out-dir", dir.join("out").to_str().unwrap()]);
    ensure!(code == EXIT_CHECK_FAILED, "verify on planted duplicate exited {code}");
    Ok(format!("{compared} artifacts byte-identical; planted overlap 1 fails; clean split passes; 0.758/0.750 accepted"))
}

fn c4_windows() -> Outcome {
    let m = CanonicalMatrix { dataset_id: 0, values: vec![0.0; 100 * SLOT_COUNT], labels: vec![0; 100], sanitation_count: 0 };
    let ws = build_windows(&m, &WindowConfig::default()).map_err(err)?;
    ensure!(ws.len() == 18, "{} windows", ws.len());
    ensure!(ws.labels[0] == 0, "all-benign window labelled {}", ws.labels[0]);
    let mut m17 = m.clone();
    m17.labels = (0..100).map(|r| (r < 17) as u8).collect();
    let w17 = build_windows(&m17, &WindowConfig::default()).map_err(err)?;
    ensure!(w17.labels[0] == 1, "17/32 attack window labelled {}", w17.labels[0]);
    Ok("18 windows; all-benign → 0; 17/32 attack → 1".into())
}

/// Brute-force one-sided p over all 2^m sign patterns of the average ranks.
fn wilcoxon_enumeration(d: &[f64]) -> f64 {
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let ranks: Vec<f64> = abs
        .iter()
        .map(|&a| {
            let less = abs.iter().filter(|&&b| b < a).count() as f64;
            let eq = abs.iter().filter(|&&b| b == a).count() as f64;
            less + (eq + 1.0) / 2.0
        })
        .collect();
    let observed: f64 = ranks.iter().zip(d).filter(|(_, &v)| v > 0.0).map(|(r, _)| r).sum();
    let m = d.len();
    let hits = (0..1u32 << m)
        .filter(|mask| (0..m).filter(|i| mask & (1 << i) != 0).map(|i| ranks[i]).sum::<f64>() >= observed - 1e-9)
        .count();
    hits as f64 / (1u64 << m) as f64
}

fn c5_metrics() -> Outcome {
    let m = classification_metrics(&Confusion::new(3, 1, 4, 2));
    ensure!((m.mcc - 0.4082).abs() <= 1e-4, "MCC {}", m.mcc);
    ensure!((m.f1 - 0.6667).abs() <= 1e-4, "F1 {}", m.f1);
    let auc = |pos: &[f64], neg: &[f64]| -> Result<f64, String> {
        let p = ScoredPredictions::new([pos, neg].concat(), [vec![1; pos.len()], vec![0; neg.len()]].concat()).map_err(err)?;
        roc_auc(&p).map_err(err)
    };
    let cases = [auc(&[0.9, 0.8], &[0.4, 0.3])?, auc(&[0.5; 2], &[0.5; 2])?, auc(&[0.9, 0.3], &[0.4, 0.8])?];
    ensure!(cases == [1.0, 0.5, 0.5], "AUC cases {cases:?}");
    let w = wilcoxon_one_sided(&[2.0, 3.0, 4.0, 5.0, 6.0], &[1.0; 5]).map_err(err)?;
    ensure!(w.exact && w.p_value == 0.03125, "p {}", w.p_value);

    let mut rng = SplitMix64::new(2024);
    let mut worst = 0f64;
    for _ in 0..1000 {
        let m = 1 + rng.below(10);
        // Small integer grid so ties and zero differences occur.
        let x: Vec<f64> = (0..m).map(|_| rng.below(7) as f64).collect();
        let y: Vec<f64> = (0..m).map(|_| rng.below(7) as f64).collect();
        let d: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a - b).filter(|v| *v != 0.0).collect();
        match wilcoxon_one_sided(&x, &y) {
            Ok(r) => {
                ensure!(r.exact, "m = {} not exact", d.len());
                worst = worst.max((r.p_value - wilcoxon_enumeration(&d)).abs());
            }
            Err(_) => ensure!(d.is_empty(), "unexpected error with {} nonzero pairs", d.len()),
        }
    }
    ensure!(worst <= 1e-12, "exact vs enumeration differ by {worst:e}");
    Ok(format!("MCC {:.4}, F1 {:.4}, AUC 1/0.5/0.5, p 0.03125, 1000 fixtures max |Δp| {worst:.1e}", m.mcc, m.f1))
}

fn c6_lodo() -> Outcome {
    let folds: Vec<LodoFold> = [0.3128, 0.6013, 0.5934, 0.6791, 0.6021]
        .iter()
        .enumerate()
        .map(|(d, &f1)| LodoFold { held_out: d as u8, f1, roc_auc: None, mcc: None, pr_auc: None })
        .collect();
    let s = lodo_summary(&folds, 0.8296).map_err(err)?;
    ensure!((s.mean_f1 - 0.5577).abs() <= 5e-5, "mean {}", s.mean_f1);
    ensure!((s.generalisation_gap - 0.2719).abs() <= 5e-5, "gap {}", s.generalisation_gap);
    Ok(format!("mean {:.5}, gap {:+.5}", s.mean_f1, s.generalisation_gap))
}

fn c7_shapes() -> Outcome {
    let cfg = ModelConfig::default();
    let w = WeightStore::random(&cfg, Conventions::default(), 11).map_err(err)?;
    let mut rng = SplitMix64::new(12);
    let n = 3;
    let x: Vec<f32> = (0..n * 32 * 46).map(|_| rng.uniform(-4.0, 4.0) as f32).collect();
    let ctx: Vec<Context> = (0..n).map(|i| Context { dataset: i as u8, device: i as u8 }).collect();
    for d in model_forward(&w, &x, &ctx).map_err(err)? {
        ensure!(d.h_t.len() == 512 && d.fused.len() == 384 && d.z.len() == 448 && d.probs.len() == 2, "shape chain broken");
        let sum: f32 = d.probs.iter().sum();
        ensure!((sum - 1.0).abs() <= 1e-6 && d.probs.iter().all(|&p| p >= 0.0), "probs {:?}", d.probs);
    }
    let mut checked = 0;
    for _ in 0..1000 {
        let scale = rng.uniform(0.1, 5.0);
        let mut draw = |k: usize| (0..k).map(|_| (scale * rng.normal()) as f32).collect::<Vec<_>>();
        let (ht, hc, hh) = (draw(512), draw(64), draw(64));
        let f = cbgaf(&w, &cfg, &ht, &hc, &hh).map_err(err)?;
        for b in 0..3 {
            for d in 0..cfg.fusion_dim {
                let g = f.gates[b][d];
                ensure!(g > 0.0 && g < 1.0, "gate {g} outside (0, 1)");
                let (p, a, m) = (f.projected[b][d], f.attended[b][d], f.mixed[b][d]);
                let tol = 1e-5 * (1.0 + p.abs().max(a.abs()));
                ensure!(m >= p.min(a) - tol && m <= p.max(a) + tol, "mix {m} outside [{p}, {a}]");
                checked += 1;
            }
        }
    }
    Ok(format!("h_T 512 → fused 384 → z 448 → Δ²; {checked} gate coordinates convex and in (0, 1)"))
}

fn c8_gradients() -> Outcome {
    let r = gradcheck_suite(&ModelConfig::default(), None, 10, 0, 24).map_err(err)?;
    ensure!(r.fixtures == 10 && r.max_rel_error <= 1e-4, "max relative error {:e}", r.max_rel_error);
    let mut rng = SplitMix64::new(8);
    let plain = LossConfig { gamma: 0.0, label_smoothing: 0.0, ..LossConfig::default() };
    let mut worst = 0f64;
    for _ in 0..200 {
        let b = 1 + rng.below(16);
        let probs: Vec<Vec<f64>> = (0..b).map(|_| { let p = rng.uniform(0.001, 0.999); vec![p, 1.0 - p] }).collect();
        let labels: Vec<u8> = (0..b).map(|_| rng.below(2) as u8).collect();
        let f = focal_loss(&probs, &labels, &[1.0, 1.0], &plain).map_err(err)?;
        worst = worst.max((f - cross_entropy(&probs, &labels)).abs());
    }
    ensure!(worst <= 1e-10, "γ = 0 focal vs cross-entropy differ by {worst:e}");
    Ok(format!("10 fixtures max rel error {:.2e}; γ = 0 vs CE max |Δ| {worst:.1e}", r.max_rel_error))
}

fn c9_params() -> Outcome {
    let a = count_parameters(&ModelConfig::default(), Conventions::default());
    let b = count_parameters(&ModelConfig::default(), Conventions::default());
    ensure!(a == b, "count not deterministic");
    ensure!(a.components.len() == 11 && a.components.iter().map(|c| c.count).sum::<u64>() == a.total, "breakdown does not sum");
    ensure!(a.within_tolerance && a.relative_residual.abs() <= 0.03, "total {} vs {REFERENCE_TOTAL}", a.total);
    ensure!(a.embedding_tables == 352, "embeddings {}", a.embedding_tables);
    ensure!(a.residual_explanation().len() == a.components.len() + 1, "residual explanation incomplete");
    Ok(format!("total {} ({:+.3}%), embeddings 352", a.total, 100.0 * a.relative_residual))
}

fn c10_threads() -> Outcome {
    let cfg = ModelConfig::default();
    let w = WeightStore::random(&cfg, Conventions::default(), 5).map_err(err)?;
    let mut rng = SplitMix64::new(6);
    let n = 12;
    let x: Vec<f32> = (0..n * 32 * 46).map(|_| rng.uniform(-3.0, 3.0) as f32).collect();
    let ctx: Vec<Context> = (0..n).map(|i| Context { dataset: (i % 5) as u8, device: (i % 6) as u8 }).collect();
    let scores: Vec<f64> = (0..5000).map(|_| rng.unit_f64()).collect();
    let labels: Vec<u8> = scores.iter().map(|s| (rng.unit_f64() < *s) as u8).collect();
    let sctx: Vec<Context> = (0..5000).map(|i| Context { dataset: (i % 5) as u8, device: 0 }).collect();
    let preds = ScoredPredictions::with_contexts(scores, labels, sctx).map_err(err)?;

    let run = |threads: &str| -> Result<(u64, String), String> {
        std::env::set_var(THREADS_ENV, threads);
        with_env_threads(|| {
            ensure!(rayon::current_num_threads() == threads.parse::<usize>().unwrap(), "pool has {} threads", rayon::current_num_threads());
            let d = model_forward(&w, &x, &ctx).map_err(err)?;
            let m = evaluate(&preds, 0.5).map_err(err)?;
            let rows = per_dataset_breakdown(&preds, 0.5).map_err(err)?;
            Ok((diagnostics_digest(&d), serde_json::to_string(&(m, rows)).map_err(err)?))
        })
    };
    let one = run("1")?;
    let four = run("4")?;
    std::env::remove_var(THREADS_ENV);
    ensure!(one.0 == four.0, "forward digests differ");
    ensure!(one.1 == four.1, "metric values differ");
    Ok(format!("forward digest {:016x} and metrics identical for 1 and 4 threads", one.0))
}

fn main() {
    let criteria: [(&str, Duration, fn() -> Outcome); 10] = [
        ("vocabulary integrity", Duration::from_secs(1), c1_vocabulary),
        ("scaler oracle", Duration::from_secs(1), c2_scaler),
        ("pipeline determinism + leakage", Duration::from_secs(5), c3_pipeline),
        ("windowing", Duration::from_secs(1), c4_windows),
        ("metric oracles", Duration::from_secs(30), c5_metrics),
        ("LODO summary arithmetic", Duration::from_secs(1), c6_lodo),
        ("kernel shape chain + gates", Duration::from_secs(10), c7_shapes),
        ("gradient verification", Duration::from_secs(30), c8_gradients),
        ("parameter accounting", Duration::from_secs(1), c9_params),
        ("determinism under parallelism", Duration::from_secs(10), c10_threads),
    ];
    let mut failed = 0;
    for (i, (name, budget, check)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let outcome = check();
        let elapsed = t.elapsed();
        let (status, detail) = match outcome {
            Ok(d) if elapsed <= *budget => ("PASS", d),
            Ok(d) => ("FAIL", format!("{d}; over time budget")),
            Err(e) => ("FAIL", e),
        };
        if status == "FAIL" {
            failed += 1;
        }
        println!("{status} criterion {:>2} {name} ({:.2}s / {}s): {detail}", i + 1, elapsed.as_secs_f64(), budget.as_secs());
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
