//! `bridge` command-line surface. Each subcommand delegates to the library and
//! writes a [`RunManifest`] next to its outputs.
//!
//! Exit codes: 0 every invoked check passed, 1 a check failed, 2 bad
//! configuration or unreadable input, 3 runtime failure.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::digest::to_hex;
use crate::error::Error;
use crate::fixtures::{write_fixture, FixtureSpec};
use crate::metrics::{evaluate, lodo_summary, per_dataset_breakdown, render_breakdown, LodoFold, MetricsTable, ScoredPredictions, DEFAULT_THRESHOLD};
use crate::parallel;
use crate::pipeline::{leakage_gate, prepare, run_lodo, split_and_scale, FoldManifest, PipelineConfig, ScaledSplit, STAGES};
use crate::protocol::{verify_leakage, SplitMode, SplitSpec};
use crate::tchnet::{count_parameters, diagnostics_digest, forward_windows, gradcheck_suite, Conventions, ModelConfig, WeightStore};
use crate::tensorio::{load_windows, save_matrix, save_windows};
use crate::transform::{fit_scaler, ScalerParams};
use crate::vocab::{load_vocabulary, match_columns, render_report, AliasMap, CanonicalVocabulary};
use crate::windows::{WindowConfig, TEST_CAP, TRAIN_CAP};

pub const EXIT_OK: u8 = 0;
pub const EXIT_CHECK_FAILED: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_RUNTIME: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "bridge", version, about = "Flow-feature alignment, leakage-checked evaluation and TCH-Net inference")]
pub struct Cli {
    /// Worker threads; overrides BRIDGE_THREADS.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Match dataset headers against the canonical vocabulary.
    Align(AlignArgs),
    /// Full pipeline: balanced matrices, windows, split, train-only scaler.
    Preprocess(PreprocessArgs),
    /// Unscaled windows for every dataset of a pipeline config.
    Windows(WindowsArgs),
    /// Split a window file, fit the scaler on train and check leakage.
    Split(SplitArgs),
    /// Leakage checks on an unscaled train/test pair.
    Verify(VerifyArgs),
    /// Five leave-one-dataset-out folds.
    Lodo(LodoArgs),
    /// Metrics from a scores file, or a LODO summary from fold F1 values.
    Eval(EvalArgs),
    /// Parameter accounting for the default model.
    Params(ParamsArgs),
    /// Finite-difference check of the fusion and focal-loss gradients.
    Gradcheck(GradcheckArgs),
    /// Forward pass over a scaled window file; writes a scores file.
    Infer(InferArgs),
    /// Seeded random weights in the weight container format.
    InitWeights(InitWeightsArgs),
    /// Write the synthetic five-dataset fixture and its pipeline config.
    Fixture(FixtureArgs),
}

#[derive(Debug, Args)]
pub struct AlignArgs {
    /// Vocabulary JSON; the built-in vocabulary when omitted.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub alias: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub dataset_id: u8,
    /// Comma-separated header list.
    #[arg(long, conflicts_with = "csv", required_unless_present = "csv")]
    pub headers: Option<String>,
    /// CSV file whose header row is matched.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Report JSON; the manifest goes to `<out>.manifest.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct WindowsArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Stratified,
    Temporal,
    Lodo,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    /// Unscaled window file (`.bt` with JSON sidecar).
    #[arg(long)]
    pub windows: PathBuf,
    #[arg(long, value_enum, default_value = "stratified")]
    pub mode: ModeArg,
    /// Held-out dataset for `--mode lodo`.
    #[arg(long, required_if_eq("mode", "lodo"))]
    pub held_out: Option<u8>,
    #[arg(long, default_value_t = 0.8)]
    pub train_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = TRAIN_CAP)]
    pub train_cap: usize,
    #[arg(long, default_value_t = TEST_CAP)]
    pub test_cap: usize,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Unscaled train windows.
    #[arg(long)]
    pub train: PathBuf,
    /// Unscaled test windows.
    #[arg(long)]
    pub test: PathBuf,
    /// Scaler to check; fitted on `--train` when omitted.
    #[arg(long)]
    pub scaler: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct LodoArgs {
    #[arg(long)]
    pub windows: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = TRAIN_CAP)]
    pub train_cap: usize,
    #[arg(long, default_value_t = TEST_CAP)]
    pub test_cap: usize,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Scores CSV with columns window_id, score, label, c_ds, c_dev.
    #[arg(long, conflicts_with = "fold_f1")]
    pub scores: Option<PathBuf>,
    /// Five LODO fold F1 values, held-out dataset 0 first.
    #[arg(long, value_delimiter = ',', num_args = 1.., requires = "in_dist_f1")]
    pub fold_f1: Option<Vec<f64>>,
    /// One scores file per held-out dataset, in dataset order.
    #[arg(long, value_delimiter = ',', num_args = 1.., conflicts_with_all = ["scores", "fold_f1"], requires = "in_dist_f1")]
    pub fold_scores: Option<Vec<PathBuf>>,
    #[arg(long)]
    pub in_dist_f1: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ParamsArgs {
    /// Count biases on convolutions that feed a batch norm.
    #[arg(long)]
    pub conv_bias: bool,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 10)]
    pub fixtures: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Coordinates sampled per tensor at full width.
    #[arg(long, default_value_t = 24)]
    pub per_tensor: usize,
    /// Take the fusion weights from a weight file instead of random draws.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub weights: PathBuf,
    /// Scaled window file.
    #[arg(long)]
    pub windows: PathBuf,
    /// Also write every per-sample diagnostic vector as JSON.
    #[arg(long)]
    pub diagnostics: bool,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct InitWeightsArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub conv_bias: bool,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct FixtureArgs {
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
    pub datasets: Vec<u8>,
    #[arg(long, default_value_t = 600)]
    pub rows: usize,
    #[arg(long, default_value_t = 17)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

/// Failure carrying its exit class.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Runtime(m) => m,
        }
    }
}

fn is_config_error(e: &Error) -> bool {
    match e {
        Error::Io { .. }
        | Error::Json { .. }
        | Error::Vocabulary(_)
        | Error::AliasMap(_)
        | Error::Csv { .. }
        | Error::MissingLabelColumn(_)
        | Error::InvalidArgument(_)
        | Error::DatasetsAbsent(_)
        | Error::Container(_)
        | Error::Weights(_) => true,
        Error::Stage { source, .. } => is_config_error(source),
        Error::Degenerate(_) | Error::Shape(_) | Error::NonFiniteGradient(_) => false,
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        if is_config_error(&e) {
            CliError::Config(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn runtime(e: Error) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

pub fn sha256_file(path: &Path) -> crate::Result<FileDigest> {
    let bytes = std::fs::read(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
    let digest = Sha256::digest(&bytes);
    Ok(FileDigest {
        path: path.display().to_string(),
        sha256: digest.iter().map(|b| format!("{b:02x}")).collect(),
        bytes: bytes.len() as u64,
    })
}

/// Provenance record of one command run. Everything except `wall_clock_ms`
/// is a function of the inputs, the config and the seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub toolkit_version: String,
    pub config: Value,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<FileDigest>,
    /// Paths relative to the manifest's directory.
    pub outputs: Vec<FileDigest>,
    pub checks: BTreeMap<String, bool>,
    pub exit_code: u8,
    pub wall_clock_ms: u64,
}

impl RunManifest {
    pub fn load(path: impl AsRef<Path>) -> crate::Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
        serde_json::from_str(&text).map_err(|e| Error::Json { context: path.display().to_string(), source: e })
    }

    /// Re-hashes every listed output relative to `dir`; returns the
    /// mismatching or missing paths.
    pub fn verify_outputs(&self, dir: &Path) -> Vec<String> {
        self.outputs
            .iter()
            .filter(|o| match sha256_file(&dir.join(&o.path)) {
                Ok(d) => d.sha256 != o.sha256 || d.bytes != o.bytes,
                Err(_) => true,
            })
            .map(|o| o.path.clone())
            .collect()
    }
}

/// Collects inputs, outputs and checks while a command runs.
struct Run {
    command: &'static str,
    dir: PathBuf,
    manifest_path: PathBuf,
    config: Value,
    seeds: BTreeMap<String, u64>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    checks: BTreeMap<String, bool>,
    started: Instant,
}

impl Run {
    fn in_dir(command: &'static str, dir: &Path, config: Value) -> CliResult<Self> {
        std::fs::create_dir_all(dir).map_err(|e| runtime(Error::Io { path: dir.to_path_buf(), source: e }))?;
        Ok(Run {
            command,
            dir: dir.to_path_buf(),
            manifest_path: dir.join("manifest.json"),
            config,
            seeds: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            checks: BTreeMap::new(),
            started: Instant::now(),
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn input(&mut self, p: &Path) {
        self.inputs.push(p.to_path_buf());
    }

    fn seed(&mut self, name: &str, v: u64) {
        self.seeds.insert(name.to_string(), v);
    }

    fn check(&mut self, name: &str, ok: bool) {
        self.checks.insert(name.to_string(), ok);
    }

    fn write_text(&mut self, name: &str, text: &str) -> CliResult<()> {
        let p = self.path(name);
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent).map_err(|e| runtime(Error::Io { path: parent.to_path_buf(), source: e }))?;
        }
        std::fs::write(&p, text).map_err(|e| runtime(Error::Io { path: p.clone(), source: e }))?;
        self.outputs.push(p);
        Ok(())
    }

    fn write_json(&mut self, name: &str, value: &impl Serialize) -> CliResult<()> {
        let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
        self.write_text(name, &(text + "\n"))
    }

    fn write_windows(&mut self, name: &str, ws: &crate::windows::WindowSet, meta: Value) -> CliResult<()> {
        let p = self.path(name);
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent).map_err(|e| runtime(Error::Io { path: parent.to_path_buf(), source: e }))?;
        }
        self.outputs.extend(save_windows(&p, ws, meta).map_err(runtime)?);
        Ok(())
    }

    fn exit_code(&self) -> u8 {
        if self.checks.values().all(|&ok| ok) {
            EXIT_OK
        } else {
            EXIT_CHECK_FAILED
        }
    }

    fn finish(self) -> CliResult<u8> {
        let digest_all = |paths: &[PathBuf], relative_to: Option<&Path>| -> CliResult<Vec<FileDigest>> {
            paths
                .iter()
                .map(|p| {
                    let mut d = sha256_file(p).map_err(runtime)?;
                    if let Some(base) = relative_to {
                        if let Ok(rel) = p.strip_prefix(base) {
                            d.path = rel.display().to_string();
                        }
                    }
                    Ok(d)
                })
                .collect()
        };
        let base = self.manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();
        let code = self.exit_code();
        let manifest = RunManifest {
            command: self.command.to_string(),
            toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
            config: self.config.clone(),
            seeds: self.seeds.clone(),
            inputs: digest_all(&self.inputs, None)?,
            outputs: digest_all(&self.outputs, Some(&base))?,
            checks: self.checks.clone(),
            exit_code: code,
            wall_clock_ms: self.started.elapsed().as_millis() as u64,
        };
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Runtime(e.to_string()))?;
        std::fs::write(&self.manifest_path, text + "\n")
            .map_err(|e| runtime(Error::Io { path: self.manifest_path.clone(), source: e }))?;
        Ok(code)
    }
}

fn echo(value: &impl Serialize) -> Value {
    serde_json::to_value(value).unwrap_or(Value::Null)
}

fn load_vocab(path: Option<&Path>) -> CliResult<CanonicalVocabulary> {
    Ok(match path {
        Some(p) => load_vocabulary(p)?,
        None => CanonicalVocabulary::bridge_default(),
    })
}

fn csv_headers(path: &Path) -> CliResult<Vec<String>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::Config(format!("csv {}: {e}", path.display())))?;
    let h = r.headers().map_err(|e| CliError::Config(format!("csv {}: {e}", path.display())))?;
    Ok(h.iter().map(|s| s.trim().to_string()).collect())
}

fn cmd_align(a: &AlignArgs) -> CliResult<u8> {
    let vocab = load_vocab(a.vocab.as_deref())?;
    let alias = match &a.alias {
        Some(p) => AliasMap::load(p)?,
        None => AliasMap::empty(a.dataset_id),
    };
    let headers = match (&a.headers, &a.csv) {
        (Some(h), _) => h.split(',').map(|s| s.trim().to_string()).collect(),
        (None, Some(p)) => csv_headers(p)?,
        (None, None) => return Err(CliError::Config("one of --headers or --csv is required".into())),
    };
    let report = match_columns(&vocab, &alias, &headers);
    let text = render_report(&vocab, &report);
    print!("{text}");

    let out_dir = a.out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut run = Run::in_dir("align", out_dir, json!({ "dataset_id": alias.dataset_id, "headers": headers }))?;
    run.manifest_path = a.out.with_extension("manifest.json");
    for p in a.vocab.iter().chain(&a.alias).chain(&a.csv) {
        run.input(p);
    }
    let name = a.out.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "alignment.json".into());
    run.write_text(&name, &(report.to_json() + "\n"))?;
    run.write_text(&format!("{name}.txt"), &text)?;
    run.finish()
}

fn load_config(path: &Path, seed: Option<u64>) -> CliResult<(PipelineConfig, u64)> {
    let cfg = PipelineConfig::load(path)?;
    let seed = seed.unwrap_or(cfg.seed);
    Ok((cfg, seed))
}

fn config_run(command: &'static str, cfg_path: &Path, cfg: &PipelineConfig, seed: u64, out: &Path) -> CliResult<Run> {
    let mut run = Run::in_dir(command, out, echo(cfg))?;
    run.input(cfg_path);
    for p in cfg.input_files() {
        run.input(&p);
    }
    run.seed("master", seed);
    Ok(run)
}

fn split_meta(kind: &str, seed: u64, s: &ScaledSplit) -> Value {
    json!({ "partition": kind, "seed": seed, "scaled": true, "fit_hash": to_hex(s.scaler.fit_hash) })
}

fn write_split(run: &mut Run, prefix: &str, seed: u64, s: &ScaledSplit) -> CliResult<()> {
    run.write_windows(&format!("{prefix}train.bt"), &s.train, split_meta("train", seed, s))?;
    run.write_windows(&format!("{prefix}test.bt"), &s.test, split_meta("test", seed, s))?;
    run.write_text(&format!("{prefix}scaler.json"), &(s.scaler.to_json() + "\n"))?;
    run.write_json(&format!("{prefix}leakage.json"), &s.leakage)
}

fn cmd_preprocess(a: &PreprocessArgs) -> CliResult<u8> {
    let (cfg, seed) = load_config(&a.config, a.seed)?;
    let mut run = config_run("preprocess", &a.config, &cfg, seed, &a.out_dir)?;
    let prepared = prepare(&cfg, seed)?;
    for d in &prepared.datasets {
        run.seed(&format!("balance.dataset{}", d.dataset_id), d.balance_seed);
        run.write_text(&format!("alignment/dataset{}.json", d.dataset_id), &(d.report.to_json() + "\n"))?;
        let p = run.path(&format!("matrices/dataset{}.bt", d.dataset_id));
        std::fs::create_dir_all(p.parent().unwrap()).map_err(|e| runtime(Error::Io { path: p.clone(), source: e }))?;
        run.outputs.extend(save_matrix(&p, &d.matrix).map_err(runtime)?);
    }
    let s = split_and_scale(&prepared.windows, &cfg.split, &cfg.windows, seed)?;
    write_split(&mut run, "", seed, &s)?;
    run.write_json(
        "preprocess.json",
        &json!({
            "stages": STAGES,
            "datasets": prepared.datasets,
            "windows": prepared.windows.len(),
            "train_windows": s.train.len(),
            "test_windows": s.test.len(),
            "fit_hash": to_hex(s.scaler.fit_hash),
        }),
    )?;
    println!(
        "{} datasets, {} windows → train {} / test {}; fit_hash {}; leakage {}",
        prepared.datasets.len(),
        prepared.windows.len(),
        s.train.len(),
        s.test.len(),
        to_hex(s.scaler.fit_hash),
        if leakage_gate(cfg.split.mode, &s.leakage) { "passed" } else { "FAILED" }
    );
    run.check("leakage", leakage_gate(cfg.split.mode, &s.leakage));
    run.finish()
}

fn cmd_windows(a: &WindowsArgs) -> CliResult<u8> {
    let (cfg, seed) = load_config(&a.config, a.seed)?;
    let mut run = config_run("windows", &a.config, &cfg, seed, &a.out_dir)?;
    let prepared = prepare(&cfg, seed)?;
    for d in &prepared.datasets {
        run.seed(&format!("balance.dataset{}", d.dataset_id), d.balance_seed);
    }
    let meta = json!({ "scaled": false, "seed": seed, "window": cfg.windows.window, "stride": cfg.windows.stride });
    run.write_windows("windows.bt", &prepared.windows, meta)?;
    println!("{} windows from {} datasets", prepared.windows.len(), prepared.datasets.len());
    run.finish()
}

fn caps(train_cap: usize, test_cap: usize) -> WindowConfig {
    WindowConfig { train_cap, test_cap, ..WindowConfig::default() }
}

fn print_leakage(l: &crate::protocol::LeakageReport) {
    println!(
        "scaler order {}, overlap {}, benign fraction train {:.4} / test {:.4} ({}), {}",
        if l.scaler_order_ok { "ok" } else { "VIOLATED" },
        l.overlap_count,
        l.train_benign_fraction,
        l.test_benign_fraction,
        if l.ratio_ok { "consistent" } else { "INCONSISTENT" },
        if l.passed { "passed" } else { "FAILED" }
    );
}

fn cmd_split(a: &SplitArgs) -> CliResult<u8> {
    let mode = match a.mode {
        ModeArg::Stratified => SplitMode::StratifiedRandom,
        ModeArg::Temporal => SplitMode::Temporal,
        ModeArg::Lodo => SplitMode::Lodo { held_out: a.held_out.unwrap_or(0) },
    };
    let spec = SplitSpec { mode, train_fraction: a.train_fraction, seed: a.seed };
    let wcfg = caps(a.train_cap, a.test_cap);
    let mut run = Run::in_dir("split", &a.out_dir, json!({ "split": spec, "train_cap": a.train_cap, "test_cap": a.test_cap }))?;
    run.input(&a.windows);
    run.seed("split", a.seed);
    let ws = load_windows(&a.windows)?;
    let s = split_and_scale(&ws, &spec, &wcfg, a.seed)?;
    write_split(&mut run, "", a.seed, &s)?;
    run.write_json("fold_manifest.json", &FoldManifest::new(mode, a.seed, &s))?;
    print_leakage(&s.leakage);
    run.check("leakage", leakage_gate(mode, &s.leakage));
    run.finish()
}

fn cmd_verify(a: &VerifyArgs) -> CliResult<u8> {
    let mut run = Run::in_dir("verify", &a.out_dir, json!({ "scaler_given": a.scaler.is_some() }))?;
    run.input(&a.train);
    run.input(&a.test);
    let train = load_windows(&a.train)?;
    let test = load_windows(&a.test)?;
    let scaler = match &a.scaler {
        Some(p) => {
            run.input(p);
            ScalerParams::load(p)?
        }
        None => fit_scaler(&train.features)?,
    };
    let report = verify_leakage(&train, &test, &scaler);
    run.write_json("leakage.json", &report)?;
    print_leakage(&report);
    run.check("scaler_order", report.scaler_order_ok);
    run.check("overlap", report.overlap_count == 0);
    run.check("ratio", report.ratio_ok);
    run.finish()
}

fn cmd_lodo(a: &LodoArgs) -> CliResult<u8> {
    let wcfg = caps(a.train_cap, a.test_cap);
    let mut run = Run::in_dir("lodo", &a.out_dir, json!({ "train_cap": a.train_cap, "test_cap": a.test_cap }))?;
    run.input(&a.windows);
    run.seed("lodo", a.seed);
    let ws = load_windows(&a.windows)?;
    let folds = run_lodo(&ws, &wcfg, a.seed)?;
    for (d, s) in &folds {
        let prefix = format!("fold{d}/");
        write_split(&mut run, &prefix, a.seed, s)?;
        run.write_json(&format!("{prefix}fold_manifest.json"), &FoldManifest::new(SplitMode::Lodo { held_out: *d }, a.seed, s))?;
        let ok = leakage_gate(SplitMode::Lodo { held_out: *d }, &s.leakage);
        println!(
            "fold {d}: train {} / test {} windows, overlap {}, leakage {}",
            s.train.len(),
            s.test.len(),
            s.leakage.overlap_count,
            if ok { "passed" } else { "FAILED" }
        );
        run.check(&format!("fold{d}.leakage"), ok);
    }
    run.finish()
}

fn scores_report(run: &mut Run, prefix: &str, path: &Path, threshold: f64) -> CliResult<crate::metrics::MetricsReport> {
    run.input(path);
    let preds = ScoredPredictions::from_csv(path)?;
    let report = evaluate(&preds, threshold)?;
    let rows = per_dataset_breakdown(&preds, threshold)?;
    run.write_json(&format!("{prefix}metrics.json"), &json!({ "global": report, "per_dataset": rows }))?;
    let table = format!("{}\n{}", MetricsTable(&[("all".to_string(), report.clone())]), render_breakdown(&rows));
    run.write_text(&format!("{prefix}metrics.txt"), &table)?;
    print!("{table}");
    Ok(report)
}

fn cmd_eval(a: &EvalArgs) -> CliResult<u8> {
    let mut run = Run::in_dir("eval", &a.out_dir, json!({ "threshold": a.threshold, "in_dist_f1": a.in_dist_f1 }))?;
    let folds: Vec<LodoFold> = if let Some(p) = &a.scores {
        scores_report(&mut run, "", p, a.threshold)?;
        return run.finish();
    } else if let Some(f1) = &a.fold_f1 {
        f1.iter()
            .enumerate()
            .map(|(d, &f1)| LodoFold { held_out: d as u8, f1, roc_auc: None, mcc: None, pr_auc: None })
            .collect()
    } else if let Some(files) = &a.fold_scores {
        let mut folds = Vec::new();
        for (d, p) in files.iter().enumerate() {
            let m = scores_report(&mut run, &format!("fold{d}/"), p, a.threshold)?;
            folds.push(LodoFold::from_report(d as u8, &m));
        }
        folds
    } else {
        return Err(CliError::Config("one of --scores, --fold-f1 or --fold-scores is required".into()));
    };
    let in_dist = a.in_dist_f1.ok_or_else(|| CliError::Config("--in-dist-f1 is required for a LODO summary".into()))?;
    let summary = lodo_summary(&folds, in_dist)?;
    run.write_json("lodo_summary.json", &summary)?;
    run.write_text("lodo_summary.csv", &summary.to_csv())?;
    run.write_text("lodo_summary.txt", &summary.to_string())?;
    print!("{summary}");
    run.finish()
}

fn cmd_params(a: &ParamsArgs) -> CliResult<u8> {
    let conv = Conventions { conv_bias: a.conv_bias, ..Conventions::default() };
    let mut run = Run::in_dir("params", &a.out_dir, json!({ "conventions": conv, "model": ModelConfig::default() }))?;
    let report = count_parameters(&ModelConfig::default(), conv);
    let mut text = report.to_string();
    text.push_str("\nresidual by component:\n");
    for line in report.residual_explanation() {
        text.push_str(&format!("  {line}\n"));
    }
    run.write_text("params.json", &(report.to_json() + "\n"))?;
    run.write_text("params.txt", &text)?;
    print!("{text}");
    run.check("within_tolerance", report.within_tolerance);
    run.finish()
}

fn cmd_gradcheck(a: &GradcheckArgs) -> CliResult<u8> {
    let mut run = Run::in_dir("gradcheck", &a.out_dir, json!({ "fixtures": a.fixtures, "per_tensor": a.per_tensor }))?;
    run.seed("gradcheck", a.seed);
    let store = match &a.weights {
        Some(p) => {
            run.input(p);
            Some(WeightStore::load(p)?)
        }
        None => None,
    };
    let cfg = store.as_ref().map(|w| w.config.clone()).unwrap_or_default();
    let report = gradcheck_suite(&cfg, store.as_ref(), a.fixtures, a.seed, a.per_tensor)?;
    run.write_json("gradcheck.json", &report)?;
    println!(
        "{} fixtures, max relative error {:.3e} ({})",
        report.fixtures,
        report.max_rel_error,
        if report.passed { "passed" } else { "FAILED" }
    );
    run.check("gradcheck", report.passed);
    run.finish()
}

fn cmd_infer(a: &InferArgs) -> CliResult<u8> {
    let mut run = Run::in_dir("infer", &a.out_dir, json!({ "diagnostics": a.diagnostics }))?;
    run.input(&a.weights);
    run.input(&a.windows);
    let w = WeightStore::load(&a.weights)?;
    let ws = load_windows(&a.windows)?;
    let diags = forward_windows(&w, &ws)?;
    let scores: Vec<f64> = diags.iter().map(|d| d.probs[1] as f64).collect();
    let preds = ScoredPredictions::with_contexts(scores, ws.labels.clone(), ws.contexts.clone()).map_err(runtime)?;
    let p = run.path("scores.csv");
    preds.write_csv(&p).map_err(runtime)?;
    run.outputs.push(p);
    run.config["diagnostics_digest"] = Value::String(to_hex(diagnostics_digest(&diags)));
    if a.diagnostics {
        run.write_json("diagnostics.json", &diags)?;
    }
    println!("{} windows scored; diagnostics digest {}", diags.len(), to_hex(diagnostics_digest(&diags)));
    run.finish()
}

fn cmd_init_weights(a: &InitWeightsArgs) -> CliResult<u8> {
    let conv = Conventions { conv_bias: a.conv_bias, ..Conventions::default() };
    let mut run = Run::in_dir("init-weights", &a.out_dir, json!({ "conventions": conv }))?;
    run.seed("weights", a.seed);
    let w = WeightStore::random(&ModelConfig::default(), conv, a.seed)?;
    let p = run.path("weights.bin");
    w.save(&p).map_err(runtime)?;
    run.outputs.push(p);
    println!("{} tensors written", w.tensors.len());
    run.finish()
}

fn cmd_fixture(a: &FixtureArgs) -> CliResult<u8> {
    let spec = FixtureSpec { datasets: a.datasets.clone(), rows: a.rows, seed: a.seed };
    let mut run = Run::in_dir("fixture", &a.out_dir, json!({ "datasets": a.datasets, "rows": a.rows }))?;
    run.seed("fixture", a.seed);
    let cfg = write_fixture(&a.out_dir, &spec)?;
    run.outputs.push(cfg.clone());
    for d in &a.datasets {
        run.outputs.push(a.out_dir.join(format!("dataset{d}.csv")));
    }
    println!("fixture config at {}", cfg.display());
    run.finish()
}

/// Runs one parsed invocation and returns the process exit code.
pub fn run(cli: Cli) -> u8 {
    let threads = cli.threads.or_else(parallel::threads_from_env);
    let outcome = parallel::pool(threads).install(|| match &cli.command {
        Command::Align(a) => cmd_align(a),
        Command::Preprocess(a) => cmd_preprocess(a),
        Command::Windows(a) => cmd_windows(a),
        Command::Split(a) => cmd_split(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Lodo(a) => cmd_lodo(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Params(a) => cmd_params(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Infer(a) => cmd_infer(a),
        Command::InitWeights(a) => cmd_init_weights(a),
        Command::Fixture(a) => cmd_fixture(a),
    });
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}

/// Parses `args` (program name first) and runs. Usage errors exit with the
/// configuration code.
pub fn main_with_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(cli),
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            code
        }
    }
}
