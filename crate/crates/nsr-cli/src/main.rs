//! `nsr` — command-line driver for the robust-training toolkit.
//!
//! One binary, five subcommands: `prepare` (build train/val/test splits,
//! synthesizing a corpus when no CSV is supplied), `train` (fit a model from
//! a JSON run configuration), `attack` (sweep a robustness curve for a saved
//! model), `report` (aggregate curve CSVs into comparison tables and plots),
//! and `gradcheck` (the analytic property suite).
//!
//! Exit codes: 0 success, 1 validation error (bad flags, config, or input
//! data), 2 runtime failure. Errors are printed to stderr as a single
//! machine-parsable line: `error: <phase>: <reason>`.

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nsr_core::attacks::SpsaConfig;
use nsr_core::checks;
use nsr_core::data::{
    load_heartbeat_csv, split_train_val, upsample_balance, write_heartbeat_csv, HeartbeatSet,
    CLASS_NAMES, SIGNAL_LEN,
};
use nsr_core::losses::{LossConfig, LossKind};
use nsr_core::nn::{build_cnn, build_mlp, io_crc32, load_model, save_model, CnnConfig, Model};
use nsr_core::report::{emit_report, robustness_curve, AttackSpec, RobustnessReport};
use nsr_core::rng::RandStream;
use nsr_core::synth::SynthConfig;
use nsr_core::tensor::{set_threads, Dtype};
use nsr_core::trainer::{train, AdvMode, TrainConfig};

/// Every key of the `train` JSON config with its default. Defaults follow the
/// reference training setup: 50 epochs, learning rate 0.001, batch size 128,
/// beta1 0.2, beta2 0.5.
const TRAIN_CONFIG_KEYS: &str = "\
Config file keys (JSON object; unknown keys are rejected):
  train_csv     (required)   path to the training CSV (188 columns, no header)
  val_csv       (null)       optional held-out CSV; otherwise train_csv is split
  val_fraction  (0.2)        validation share when splitting train_csv
  balance       (true)       upsample every class to the largest before training
  arch          (\"mlp\")      \"mlp\" or \"cnn\"
  widths        ([187,128,128,128,32,5])  MLP layer widths, input to classes
  cnn           ({...})      CNN shape: blocks 5, channels 32, kernel 5,
                             pool_kernel 5, pool_stride 2, input_len 187,
                             hidden 32, class_count 5, bias true
  dtype         (\"f32\")      \"f32\" or \"f64\" arithmetic
  loss          (\"ce\")       ce | mse | msemargin | loss1 | loss2 | jacob | adv
  beta1         (0.2)        weight of the alignment regularizer in loss1
  beta2         (0.5)        weight of the noise-ratio regularizer in loss2
  gamma         (1.0)        target logit scale used by the alignment term
  eps_max       (1.0)        worst-case perturbation bound in the noise ratio
  lambda_jac    (0.01)       weight of the Jacobian penalty in jacob
  epochs        (50)         training epochs
  lr            (0.001)      Adamax learning rate
  batch_size    (128)        minibatch size
  seed          (1)          seed for init, shuffling, and balancing
  adv_eps       (0.1)        perturbation budget for adversarial training
  adv_steps     (10)         PGD steps per batch for adversarial training";

/// Every key of the `attack` JSON config with its default.
const ATTACK_CONFIG_KEYS: &str = "\
Config file keys (JSON object; unknown keys are rejected):
  data_csv     (required)  CSV of samples to attack
  eps_grid     ([0.0,0.01,0.02,0.03,0.05,0.1,0.2,0.3])  perturbation budgets
  steps        (100)       PGD iterations
  iterations   (100)       SPSA iterations
  pairs        (1024)      SPSA antithetic pairs per gradient estimate
  per_class    (0)         cap samples per class, 0 = use every row
  seed         (3)         attack randomness seed
  arch         (\"mlp\")     architecture label used in output file names
  method       (null)      method label; defaults to the model file stem";

#[derive(Parser)]
#[command(name = "nsr", version, about = "Noise-to-signal-ratio robust training toolkit")]
struct Cli {
    /// Worker threads for matrix kernels (fallback: NSR_THREADS, then all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build balanced train/val/test splits; synthesizes a corpus when no CSV is given
    Prepare {
        /// Training CSV; omit to synthesize a corpus instead
        #[arg(long)]
        train_csv: Option<PathBuf>,
        /// Held-out test CSV; omit to synthesize when train_csv is also absent
        #[arg(long)]
        test_csv: Option<PathBuf>,
        /// Output directory for the splits and manifest
        #[arg(long)]
        out: PathBuf,
        /// Seed for splitting, balancing, and synthesis
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Validation share of the training rows
        #[arg(long, default_value_t = 0.2)]
        val_fraction: f64,
        /// Synthetic training beats per class (when no train_csv)
        #[arg(long, default_value_t = 1000)]
        per_class: usize,
        /// Synthetic test beats per class (when no test_csv)
        #[arg(long, default_value_t = 400)]
        test_per_class: usize,
    },
    /// Train a model from a JSON run configuration
    #[command(after_help = TRAIN_CONFIG_KEYS)]
    Train {
        /// JSON run configuration
        #[arg(long)]
        config: PathBuf,
        /// Output directory for model.json, train_log.csv, and manifest
        #[arg(long)]
        out: PathBuf,
        /// Override the config's epoch count
        #[arg(long)]
        epochs: Option<usize>,
        /// Override the config's learning rate
        #[arg(long)]
        lr: Option<f64>,
        /// Override the config's batch size
        #[arg(long)]
        batch_size: Option<usize>,
        /// Override the config's seed
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config's training CSV
        #[arg(long)]
        train_csv: Option<PathBuf>,
    },
    /// Sweep a robustness curve for a saved model
    #[command(after_help = ATTACK_CONFIG_KEYS)]
    Attack {
        /// Saved model file
        #[arg(long)]
        model: PathBuf,
        /// Attack family
        #[arg(long, value_parser = ["pgd", "spsa"])]
        method: String,
        /// JSON attack configuration
        #[arg(long)]
        config: PathBuf,
        /// Output CSV path (a .manifest.json sibling is written next to it)
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate robustness-curve CSVs into comparison tables and SVG plots
    Report {
        /// Directory containing {arch}_{method}_{attack}.csv curves
        #[arg(long = "in", value_name = "DIR")]
        in_dir: PathBuf,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the analytic property suite (linearity, gradients, bounds, attacks)
    Gradcheck {
        /// Architecture the suite must cover (both are always exercised)
        #[arg(long, value_parser = ["mlp", "cnn"], default_value = "mlp")]
        arch: String,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Trials for the bound and containment fuzzers
        #[arg(long, default_value_t = 10_000)]
        fuzz: usize,
    },
}

/// Errors carry the exit code they map to: 1 validation, 2 runtime.
struct CliError {
    code: i32,
    message: String,
}

type CliResult<T> = Result<T, CliError>;

fn validation(err: impl std::fmt::Display) -> CliError {
    CliError { code: 1, message: format!("validation: {err}") }
}

fn runtime(err: impl std::fmt::Display) -> CliError {
    CliError { code: 2, message: format!("runtime: {err}") }
}

fn main() {
    let cli = Cli::parse();
    let result = resolve_threads(cli.threads).and_then(|n| {
        set_threads(n).map_err(validation)?;
        match cli.command {
            Command::Prepare {
                train_csv,
                test_csv,
                out,
                seed,
                val_fraction,
                per_class,
                test_per_class,
            } => cmd_prepare(
                train_csv.as_deref(),
                test_csv.as_deref(),
                &out,
                seed,
                val_fraction,
                per_class,
                test_per_class,
            ),
            Command::Train { config, out, epochs, lr, batch_size, seed, train_csv } => {
                cmd_train(&config, &out, epochs, lr, batch_size, seed, train_csv.as_deref())
            }
            Command::Attack { model, method, config, out } => {
                cmd_attack(&model, &method, &config, &out)
            }
            Command::Report { in_dir, out } => cmd_report(&in_dir, &out),
            Command::Gradcheck { arch: _, seed, fuzz } => cmd_gradcheck(seed, fuzz),
        }
    });
    if let Err(e) = result {
        // Single line on stderr so scripts can parse the failure.
        eprintln!("error: {}", e.message.replace('\n', "; "));
        std::process::exit(e.code);
    }
}

fn resolve_threads(flag: Option<usize>) -> CliResult<usize> {
    if let Some(n) = flag {
        return Ok(n);
    }
    if let Ok(s) = std::env::var("NSR_THREADS") {
        return s.parse().map_err(|_| validation(format!("NSR_THREADS is not a count: {s:?}")));
    }
    Ok(std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

// ---------------------------------------------------------------------------
// manifests

fn file_digest(path: &Path) -> CliResult<u32> {
    let bytes = std::fs::read(path)
        .map_err(|e| runtime(format!("cannot digest {}: {e}", path.display())))?;
    Ok(io_crc32(&bytes))
}

/// Every command records enough in its manifest to re-run it bit-exactly:
/// the resolved configuration, its digest, the seeds, and input digests.
fn write_manifest(path: &Path, manifest: &serde_json::Value) -> CliResult<()> {
    let text = serde_json::to_string_pretty(manifest).expect("manifest is serializable");
    std::fs::write(path, text).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn config_digest(resolved: &impl Serialize) -> u32 {
    io_crc32(serde_json::to_string(resolved).expect("config is serializable").as_bytes())
}

// ---------------------------------------------------------------------------
// prepare

fn load_csv_strict(path: &Path) -> CliResult<HeartbeatSet> {
    load_heartbeat_csv(path).and_then(|o| o.strict()).map_err(validation)
}

fn class_count_map(set: &HeartbeatSet) -> BTreeMap<String, usize> {
    CLASS_NAMES.iter().zip(set.class_counts()).map(|(n, c)| (n.to_string(), c)).collect()
}

fn cmd_prepare(
    train_csv: Option<&Path>,
    test_csv: Option<&Path>,
    out: &Path,
    seed: u64,
    val_fraction: f64,
    per_class: usize,
    test_per_class: usize,
) -> CliResult<()> {
    if !(0.0 < val_fraction && val_fraction < 1.0) {
        return Err(validation(format!("val-fraction must be in (0,1), got {val_fraction}")));
    }
    let synthesizing = train_csv.is_none();
    let full = match train_csv {
        Some(p) => load_csv_strict(p)?,
        None => {
            if per_class == 0 {
                return Err(validation("per-class must be >= 1 when synthesizing"));
            }
            nsr_core::synth::generate(&SynthConfig { per_class, seed, ..SynthConfig::default() })
                .map_err(runtime)?
        }
    };
    let test = match test_csv {
        Some(p) => Some(load_csv_strict(p)?),
        None if synthesizing => Some(
            nsr_core::synth::generate(&SynthConfig {
                per_class: test_per_class,
                seed: seed ^ 0x7e57,
                ..SynthConfig::default()
            })
            .map_err(runtime)?,
        ),
        None => None,
    };

    let (train_split, val_split) =
        split_train_val(&full, 1.0 - val_fraction, seed).map_err(validation)?;
    let train_bal = upsample_balance(&train_split, seed).map_err(validation)?;

    std::fs::create_dir_all(out).map_err(|e| runtime(format!("{}: {e}", out.display())))?;
    write_heartbeat_csv(&train_bal, out.join("train.csv")).map_err(runtime)?;
    write_heartbeat_csv(&val_split, out.join("val.csv")).map_err(runtime)?;
    let mut splits = vec![
        ("train", class_count_map(&train_bal), train_bal.digest),
        ("val", class_count_map(&val_split), val_split.digest),
    ];
    if let Some(t) = &test {
        write_heartbeat_csv(t, out.join("test.csv")).map_err(runtime)?;
        splits.push(("test", class_count_map(t), t.digest));
    }

    let resolved = serde_json::json!({
        "seed": seed,
        "val_fraction": val_fraction,
        "source": if synthesizing { "synthetic" } else { "csv" },
        "per_class": if synthesizing { Some(per_class) } else { None },
        "test_per_class": if synthesizing { Some(test_per_class) } else { None },
        "train_csv": train_csv.map(|p| p.display().to_string()),
        "test_csv": test_csv.map(|p| p.display().to_string()),
    });
    let manifest = serde_json::json!({
        "command": "prepare",
        "config": resolved,
        "config_digest": config_digest(&resolved),
        "seeds": { "split": seed, "balance": seed, "synth": if synthesizing { Some(seed) } else { None } },
        "splits": splits
            .iter()
            .map(|(name, counts, digest)| {
                serde_json::json!({ "name": name, "file": format!("{name}.csv"), "class_counts": counts, "digest": digest })
            })
            .collect::<Vec<_>>(),
    });
    write_manifest(&out.join("manifest.json"), &manifest)?;
    for (name, counts, _) in &splits {
        let total: usize = counts.values().sum();
        println!("{name}: {total} rows {:?}", counts);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// train

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct CnnJson {
    blocks: usize,
    channels: usize,
    kernel: usize,
    pool_kernel: usize,
    pool_stride: usize,
    input_len: usize,
    hidden: usize,
    class_count: usize,
    bias: bool,
}

impl Default for CnnJson {
    fn default() -> Self {
        let c = CnnConfig::default();
        CnnJson {
            blocks: c.blocks,
            channels: c.channels,
            kernel: c.kernel,
            pool_kernel: c.pool_kernel,
            pool_stride: c.pool_stride,
            input_len: c.input_len,
            hidden: c.hidden,
            class_count: c.class_count,
            bias: c.bias,
        }
    }
}

impl From<&CnnJson> for CnnConfig {
    fn from(j: &CnnJson) -> CnnConfig {
        CnnConfig {
            blocks: j.blocks,
            channels: j.channels,
            kernel: j.kernel,
            pool_kernel: j.pool_kernel,
            pool_stride: j.pool_stride,
            input_len: j.input_len,
            hidden: j.hidden,
            class_count: j.class_count,
            bias: j.bias,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RunConfig {
    train_csv: String,
    val_csv: Option<String>,
    val_fraction: f64,
    balance: bool,
    arch: String,
    widths: Vec<usize>,
    cnn: CnnJson,
    dtype: String,
    loss: String,
    beta1: f64,
    beta2: f64,
    gamma: f64,
    eps_max: f64,
    lambda_jac: f64,
    epochs: usize,
    lr: f64,
    batch_size: usize,
    seed: u64,
    adv_eps: f64,
    adv_steps: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let loss = LossConfig::new(LossKind::Ce);
        RunConfig {
            train_csv: String::new(),
            val_csv: None,
            val_fraction: 0.2,
            balance: true,
            arch: "mlp".into(),
            widths: vec![SIGNAL_LEN, 128, 128, 128, 32, 5],
            cnn: CnnJson::default(),
            dtype: "f32".into(),
            loss: "ce".into(),
            beta1: loss.beta1,
            beta2: loss.beta2,
            gamma: loss.gamma,
            eps_max: loss.eps_max,
            lambda_jac: loss.lambda_jac,
            epochs: 50,
            lr: 0.001,
            batch_size: 128,
            seed: 1,
            adv_eps: 0.1,
            adv_steps: 10,
        }
    }
}

fn parse_loss_kind(name: &str) -> CliResult<LossKind> {
    serde_json::from_value(serde_json::Value::String(name.to_lowercase()))
        .map_err(|_| validation(format!("unknown loss {name:?}; expected one of ce, mse, msemargin, loss1, loss2, jacob, adv")))
}

fn parse_dtype(name: &str) -> CliResult<Dtype> {
    match name {
        "f32" => Ok(Dtype::F32),
        "f64" => Ok(Dtype::F64),
        other => Err(validation(format!("unknown dtype {other:?}; expected f32 or f64"))),
    }
}

fn read_json_config<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| validation(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| validation(format!("config {}: {e}", path.display())))
}

fn build_model(cfg: &RunConfig, dtype: Dtype, rng: &mut RandStream) -> CliResult<Model> {
    match cfg.arch.as_str() {
        "mlp" => build_mlp(&cfg.widths, true, dtype, rng).map_err(validation),
        "cnn" => build_cnn(&(&cfg.cnn).into(), dtype, rng).map_err(validation),
        other => Err(validation(format!("unknown arch {other:?}; expected mlp or cnn"))),
    }
}

fn cmd_train(
    config_path: &Path,
    out: &Path,
    epochs: Option<usize>,
    lr: Option<f64>,
    batch_size: Option<usize>,
    seed: Option<u64>,
    train_csv: Option<&Path>,
) -> CliResult<()> {
    let mut cfg: RunConfig = read_json_config(config_path)?;
    // Flags override the file.
    if let Some(v) = epochs {
        cfg.epochs = v;
    }
    if let Some(v) = lr {
        cfg.lr = v;
    }
    if let Some(v) = batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = seed {
        cfg.seed = v;
    }
    if let Some(p) = train_csv {
        cfg.train_csv = p.display().to_string();
    }
    if cfg.train_csv.is_empty() {
        return Err(validation("train_csv is required (config key or --train-csv)"));
    }
    let kind = parse_loss_kind(&cfg.loss)?;
    let dtype = parse_dtype(&cfg.dtype)?;
    let mut loss = LossConfig::new(kind);
    loss.beta1 = cfg.beta1;
    loss.beta2 = cfg.beta2;
    loss.gamma = cfg.gamma;
    loss.eps_max = cfg.eps_max;
    loss.lambda_jac = cfg.lambda_jac;
    let mut tc = TrainConfig::new(loss);
    tc.epochs = cfg.epochs;
    tc.lr = cfg.lr;
    tc.batch_size = cfg.batch_size;
    tc.seed = cfg.seed;
    if kind == LossKind::Adv {
        tc.adv = Some(AdvMode { eps: cfg.adv_eps, pgd_steps: cfg.adv_steps });
    }
    tc.validate().map_err(validation)?;

    let full = load_csv_strict(Path::new(&cfg.train_csv))?;
    let (train_set, val_set) = match &cfg.val_csv {
        Some(p) => (full, load_csv_strict(Path::new(p))?),
        None => split_train_val(&full, 1.0 - cfg.val_fraction, cfg.seed).map_err(validation)?,
    };
    let train_set = if cfg.balance {
        upsample_balance(&train_set, cfg.seed).map_err(validation)?
    } else {
        train_set
    };

    let mut init_rng = RandStream::new(cfg.seed, 0x90de1);
    let mut model = build_model(&cfg, dtype, &mut init_rng)?;
    let log = train(&mut model, &train_set, &val_set, &tc).map_err(runtime)?;

    std::fs::create_dir_all(out).map_err(|e| runtime(format!("{}: {e}", out.display())))?;
    let model_path = out.join("model.json");
    save_model(&model, &model_path).map_err(runtime)?;
    std::fs::write(out.join("train_log.csv"), log.to_csv())
        .map_err(|e| runtime(format!("train_log.csv: {e}")))?;

    let manifest = serde_json::json!({
        "command": "train",
        "config": cfg,
        "config_digest": config_digest(&cfg),
        "seeds": { "init": cfg.seed, "shuffle": cfg.seed, "balance": cfg.seed },
        "inputs": { "train_csv": file_digest(Path::new(&cfg.train_csv))? },
        "outputs": { "model": "model.json", "train_log": "train_log.csv" },
        "best_epoch": log.best_epoch,
        "best_val_accuracy": log.best_val_accuracy,
    });
    write_manifest(&out.join("manifest.json"), &manifest)?;
    println!(
        "trained {} epochs; best val accuracy {:.4} at epoch {}",
        tc.epochs, log.best_val_accuracy, log.best_epoch
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// attack

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct AttackRunConfig {
    data_csv: String,
    eps_grid: Vec<f64>,
    steps: usize,
    iterations: usize,
    pairs: usize,
    per_class: usize,
    seed: u64,
    arch: String,
    method: Option<String>,
}

impl Default for AttackRunConfig {
    fn default() -> Self {
        let spsa = SpsaConfig::paper(0.1);
        AttackRunConfig {
            data_csv: String::new(),
            eps_grid: vec![0.0, 0.01, 0.02, 0.03, 0.05, 0.1, 0.2, 0.3],
            steps: 100,
            iterations: spsa.iterations,
            pairs: spsa.pairs,
            per_class: 0,
            seed: 3,
            arch: "mlp".into(),
            method: None,
        }
    }
}

fn cmd_attack(model_path: &Path, method: &str, config_path: &Path, out: &Path) -> CliResult<()> {
    let cfg: AttackRunConfig = read_json_config(config_path)?;
    if cfg.data_csv.is_empty() {
        return Err(validation("data_csv is required in the attack config"));
    }
    let model = load_model(model_path).map_err(validation)?;
    let mut set = load_csv_strict(Path::new(&cfg.data_csv))?;
    if cfg.per_class > 0 {
        set = set.first_per_class(cfg.per_class).map_err(validation)?;
    }
    let spec = match method {
        "pgd" => AttackSpec::Pgd { steps: cfg.steps },
        "spsa" => AttackSpec::Spsa { iterations: cfg.iterations, pairs: cfg.pairs },
        other => return Err(validation(format!("unknown attack method {other:?}"))),
    };
    let label = cfg.method.clone().unwrap_or_else(|| {
        model_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or("model".into())
    });
    let report =
        robustness_curve(&model, &set, &cfg.arch, &label, &cfg.eps_grid, &spec, cfg.seed)
            .map_err(runtime)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(out, report.to_csv()).map_err(|e| runtime(format!("{}: {e}", out.display())))?;

    let manifest = serde_json::json!({
        "command": "attack",
        "config": cfg,
        "config_digest": config_digest(&cfg),
        "seeds": { "attack": cfg.seed },
        "inputs": {
            "model": file_digest(model_path)?,
            "data_csv": file_digest(Path::new(&cfg.data_csv))?,
        },
        "outputs": { "curve": out.display().to_string() },
    });
    write_manifest(&out.with_extension("manifest.json"), &manifest)?;
    for (e, a) in report.eps.iter().zip(&report.accuracy) {
        println!("eps {e}: accuracy {a:.4}");
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// report

/// Parse a curve CSV written by `attack` (or the experiment pipeline); the
/// arch/method/attack labels come from the `{arch}_{method}_{attack}` stem.
fn parse_curve_csv(path: &Path) -> Option<RobustnessReport> {
    let stem = path.file_stem()?.to_str()?;
    let parts: Vec<&str> = stem.split('_').collect();
    if parts.len() < 3 || parts.iter().any(|p| p.contains("comparison")) {
        return None;
    }
    let text = std::fs::read_to_string(path).ok()?;
    let mut lines = text.lines();
    if lines.next()? != "eps,accuracy" {
        return None;
    }
    let mut eps = Vec::new();
    let mut accuracy = Vec::new();
    for line in lines {
        let (e, a) = line.split_once(',')?;
        eps.push(e.trim().parse().ok()?);
        accuracy.push(a.trim().parse().ok()?);
    }
    Some(RobustnessReport {
        arch: parts[0].to_string(),
        method: parts[1..parts.len() - 1].join("_"),
        attack: parts[parts.len() - 1].to_string(),
        eps,
        accuracy,
    })
}

fn cmd_report(in_dir: &Path, out: &Path) -> CliResult<()> {
    let entries = std::fs::read_dir(in_dir)
        .map_err(|e| validation(format!("cannot read {}: {e}", in_dir.display())))?;
    let mut curves: Vec<RobustnessReport> = Vec::new();
    let mut inputs = BTreeMap::new();
    for entry in entries {
        let path = entry.map_err(|e| runtime(format!("{}: {e}", in_dir.display())))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("csv") {
            continue;
        }
        if let Some(r) = parse_curve_csv(&path) {
            inputs.insert(path.display().to_string(), file_digest(&path)?);
            curves.push(r);
        }
    }
    if curves.is_empty() {
        return Err(validation(format!("no robustness-curve CSVs found in {}", in_dir.display())));
    }
    curves.sort_by(|a, b| a.file_stem().cmp(&b.file_stem()));

    // One comparison per (arch, attack) group so grids stay compatible.
    let mut groups: BTreeMap<(String, String), Vec<&RobustnessReport>> = BTreeMap::new();
    for r in &curves {
        groups.entry((r.arch.clone(), r.attack.clone())).or_default().push(r);
    }
    let mut written = Vec::new();
    for group in groups.values() {
        written.extend(emit_report(out, group).map_err(runtime)?);
    }
    let manifest = serde_json::json!({
        "command": "report",
        "config": { "in": in_dir.display().to_string() },
        "config_digest": io_crc32(in_dir.display().to_string().as_bytes()),
        "seeds": {},
        "inputs": inputs,
        "outputs": written,
    });
    write_manifest(&out.join("manifest.json"), &manifest)?;
    println!("wrote {} files to {}", written.len(), out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// gradcheck

fn cmd_gradcheck(seed: u64, fuzz: usize) -> CliResult<()> {
    if fuzz == 0 {
        return Err(validation("fuzz trial count must be >= 1"));
    }
    let outcomes = checks::run_all(seed, fuzz).map_err(runtime)?;
    let mut all = true;
    for o in &outcomes {
        println!("[{}] {} — {}", if o.passed { "PASS" } else { "FAIL" }, o.name, o.detail);
        all &= o.passed;
    }
    if all {
        Ok(())
    } else {
        Err(runtime("property suite failed"))
    }
}
