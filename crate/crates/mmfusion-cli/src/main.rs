//! Command-line entry point: dataset generation and import, training,
//! evaluation, the ablation grid, hyperparameter sweeps, and the
//! end-to-end gradient check.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use mmfusion::checkpoint::{load_checkpoint, save_checkpoint};
use mmfusion::config::{parse_config_file, TrainConfig};
use mmfusion::data::{
    checksum_file, generate_synthetic, import_csv_split, load_dataset, Split, SyntheticSpec, Task,
};
use mmfusion::error::Error;
use mmfusion::training::{
    ablate, evaluate, gradcheck_config, model_grad_check, pct, sweep, sweep_table, train,
    SweepSpace,
};

const OUT_ROOT_ENV: &str = "MMFUSION_OUT";

#[derive(Parser)]
#[command(
    name = "mmfusion",
    version,
    about = "Dual-branch multimodal transformer classifier over image/text pairs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic conjunction-structured dataset.
    GenData(GenDataArgs),
    /// Convert the published CSV layout into the native record format.
    ImportMsed(ImportArgs),
    /// Train a model and evaluate it on the test split.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split.
    Eval(EvalArgs),
    /// Train and evaluate the full fusion/msd/branch ablation grid.
    Ablate(AblateArgs),
    /// Grid-search hyperparameters, ranked by validation macro-F1.
    Sweep(SweepArgs),
    /// Finite-difference gradient check of the full model.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long)]
    task: String,
    #[arg(long, default_value_t = 600)]
    n_train: usize,
    #[arg(long, default_value_t = 100)]
    n_val: usize,
    #[arg(long, default_value_t = 200)]
    n_test: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 0.0)]
    noise_rate: f64,
    #[arg(long, default_value_t = 16)]
    image_h: usize,
    #[arg(long, default_value_t = 16)]
    image_w: usize,
    /// Comma-separated relative class weights (uniform when omitted).
    #[arg(long)]
    balance: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ImportArgs {
    #[arg(long)]
    train_csv: PathBuf,
    #[arg(long)]
    val_csv: PathBuf,
    #[arg(long)]
    test_csv: PathBuf,
    /// Directory of pre-sized binary PGM images named after the CSV's
    /// image column stems.
    #[arg(long)]
    images_dir: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    task: String,
    /// Starting preset: desk (default), tuned, or tuned-low-lr.
    #[arg(long)]
    preset: Option<String>,
    /// Flat key=value config file applied over the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Inline overrides, e.g. --set train.lr=1e-3 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[arg(long)]
    fusion: Option<String>,
    #[arg(long)]
    branches: Option<String>,
    #[arg(long)]
    msd: Option<String>,
    #[arg(long)]
    modality: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    max_length: Option<usize>,
    #[arg(long)]
    d0: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    task: String,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    task: String,
    #[arg(long)]
    budget: usize,
    /// Search space: desk (default) or full.
    #[arg(long)]
    space: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 25)]
    samples: usize,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    #[arg(long, default_value_t = 1e-5)]
    h: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 3,
        Error::Format(_) | Error::Parse { .. } | Error::Label(_) => 4,
        Error::Numeric(_) | Error::Determinism(_) => 5,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => cmd_gen_data(a),
        Command::ImportMsed(a) => cmd_import(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

// ── run manifests ─────────────────────────────────────────────────────────

#[derive(Serialize)]
struct RunManifest {
    command: String,
    argv: Vec<String>,
    seed: u64,
    resolved_config: serde_json::Value,
    input_checksums: BTreeMap<String, String>,
    started_unix: u64,
    finished_unix: Option<u64>,
    status: String,
    outputs: Vec<String>,
}

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl RunManifest {
    fn start(command: &str, seed: u64, config: serde_json::Value) -> RunManifest {
        RunManifest {
            command: command.to_string(),
            argv: std::env::args().collect(),
            seed,
            resolved_config: config,
            input_checksums: BTreeMap::new(),
            started_unix: now_unix(),
            finished_unix: None,
            status: "running".to_string(),
            outputs: Vec::new(),
        }
    }

    fn checksum_inputs(&mut self, dataset_dir: &Path) -> mmfusion::Result<()> {
        for split in Split::all() {
            let p = dataset_dir.join(split.file_name());
            if p.is_file() {
                self.input_checksums
                    .insert(split.file_name().to_string(), checksum_file(&p)?);
            }
        }
        Ok(())
    }

    fn write(&self, out_dir: &Path) -> mmfusion::Result<()> {
        std::fs::create_dir_all(out_dir)?;
        std::fs::write(
            out_dir.join("run_manifest.json"),
            serde_json::to_string_pretty(self).expect("manifest serializes"),
        )?;
        Ok(())
    }

    fn finish(mut self, out_dir: &Path, status: &str, outputs: Vec<String>) -> mmfusion::Result<()> {
        self.finished_unix = Some(now_unix());
        self.status = status.to_string();
        self.outputs = outputs;
        self.write(out_dir)
    }
}

fn out_root() -> PathBuf {
    std::env::var_os(OUT_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("."))
}

fn resolve_out(explicit: Option<PathBuf>, default_name: String) -> PathBuf {
    explicit.unwrap_or_else(|| out_root().join(default_name))
}

// ── commands ──────────────────────────────────────────────────────────────

fn cmd_gen_data(a: GenDataArgs) -> mmfusion::Result<ExitCode> {
    let task = Task::parse(&a.task)?;
    let mut spec = SyntheticSpec::new(task, a.n_train, a.n_val, a.n_test, a.seed);
    spec.noise_rate = a.noise_rate;
    spec.image_h = a.image_h;
    spec.image_w = a.image_w;
    if let Some(b) = &a.balance {
        spec.class_balance = Some(
            b.split(',')
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Config(format!("bad balance weight `{s}`")))
                })
                .collect::<mmfusion::Result<Vec<f64>>>()?,
        );
    }
    let out = resolve_out(a.out, format!("dataset-{}-seed{}", task.name(), a.seed));
    std::fs::create_dir_all(&out)?;
    let manifest = RunManifest::start(
        "gen-data",
        a.seed,
        serde_json::to_value(&spec).expect("spec serializes"),
    );
    manifest.write(&out)?;
    generate_synthetic(&spec, &out)?;
    manifest.finish(&out, "ok", vec!["manifest.json".into()])?;
    println!("dataset written to {}", out.display());
    println!("manifest: {}", out.join("manifest.json").display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_import(a: ImportArgs) -> mmfusion::Result<ExitCode> {
    let out = resolve_out(a.out, "dataset-imported".to_string());
    std::fs::create_dir_all(&out)?;
    let manifest = RunManifest::start("import-msed", 0, serde_json::Value::Null);
    manifest.write(&out)?;
    let mut counts = Vec::new();
    for (csv, split) in [
        (&a.train_csv, Split::Train),
        (&a.val_csv, Split::Val),
        (&a.test_csv, Split::Test),
    ] {
        let exs = import_csv_split(csv, &a.images_dir, &out, split)?;
        counts.push((split.name(), exs.len()));
    }
    manifest.finish(
        &out,
        "ok",
        Split::all().iter().map(|s| s.file_name().to_string()).collect(),
    )?;
    for (name, n) in counts {
        println!("{name}: {n} records");
    }
    println!("imported dataset at {}", out.display());
    Ok(ExitCode::SUCCESS)
}

fn apply_pairs(cfg: &mut TrainConfig, pairs: &[(String, String)]) -> mmfusion::Result<()> {
    for (k, v) in pairs {
        cfg.apply_override(k, v)?;
    }
    Ok(())
}

fn parse_sets(sets: &[String]) -> mmfusion::Result<Vec<(String, String)>> {
    sets.iter()
        .map(|s| {
            s.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{s}`")))
        })
        .collect()
}

fn resolve_train_config(a: &TrainArgs) -> mmfusion::Result<TrainConfig> {
    let task = Task::parse(&a.task)?;
    let mut cfg = match a.preset.as_deref() {
        None | Some("desk") => TrainConfig::desk(task),
        Some("tuned") => TrainConfig::tuned_full_scale(task),
        Some("tuned-low-lr") => TrainConfig::tuned_full_scale_low_lr(task),
        Some(other) => return Err(Error::Config(format!("unknown preset `{other}`"))),
    };
    if let Some(path) = &a.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        apply_pairs(&mut cfg, &parse_config_file(&text)?)?;
    }
    apply_pairs(&mut cfg, &parse_sets(&a.sets)?)?;
    let typed: Vec<(&str, Option<String>)> = vec![
        ("head.fusion", a.fusion.clone()),
        ("model.branches", a.branches.clone()),
        ("head.msd", a.msd.clone()),
        ("model.modality", a.modality.clone()),
        ("train.seed", a.seed.map(|v| v.to_string())),
        ("train.epochs", a.epochs.map(|v| v.to_string())),
        ("train.lr", a.lr.map(|v| v.to_string())),
        ("train.batch", a.batch.map(|v| v.to_string())),
        ("train.max_length", a.max_length.map(|v| v.to_string())),
        ("head.d0_dropout", a.d0.map(|v| v.to_string())),
    ];
    for (k, v) in typed {
        if let Some(v) = v {
            cfg.apply_override(k, &v)?;
        }
    }
    Ok(cfg)
}

fn write_report(
    out: &Path,
    stem: &str,
    report: &mmfusion::training::MetricsReport,
) -> mmfusion::Result<()> {
    std::fs::write(
        out.join(format!("{stem}.json")),
        serde_json::to_string_pretty(report).expect("report serializes"),
    )?;
    std::fs::write(out.join(format!("{stem}.txt")), report.to_text())?;
    std::fs::write(
        out.join(format!("{stem}_confusion.txt")),
        report.confusion_to_text(),
    )?;
    Ok(())
}

fn print_report(report: &mmfusion::training::MetricsReport) {
    println!(
        "macro precision {}  macro recall {}  macro F1 {}  accuracy {}",
        pct(report.macro_precision),
        pct(report.macro_recall),
        pct(report.macro_f1),
        pct(report.accuracy)
    );
}

fn cmd_train(a: TrainArgs) -> mmfusion::Result<ExitCode> {
    let cfg = resolve_train_config(&a)?;
    let out = resolve_out(
        a.out.clone(),
        format!("train-{}-seed{}", cfg.task.name(), cfg.seed),
    );
    std::fs::create_dir_all(&out)?;
    let mut manifest = RunManifest::start(
        "train",
        cfg.seed,
        serde_json::to_value(&cfg).expect("config serializes"),
    );
    manifest.checksum_inputs(&a.data)?;
    manifest.write(&out)?;

    let dataset = load_dataset(&a.data, cfg.task)?;
    let outcome = train(cfg, &dataset)?;
    for flag in &outcome.config_flags {
        eprintln!("note: {flag}");
    }

    let mut log_lines = String::new();
    for log in &outcome.logs {
        log_lines.push_str(&serde_json::to_string(log).expect("log serializes"));
        log_lines.push('\n');
        println!(
            "epoch {}  train loss {:.6}  val loss {:.6}  val macro-F1 {}",
            log.epoch,
            log.train_loss,
            log.val_loss,
            pct(log.val_macro_f1)
        );
    }
    std::fs::write(out.join("epochs.jsonl"), log_lines)?;

    let ckpt_path = out.join("checkpoint.bin");
    save_checkpoint(
        &ckpt_path,
        &outcome.model,
        &outcome.rng,
        outcome.best_epoch,
        outcome.best_val_loss,
    )?;

    let report = evaluate(&outcome.model, &dataset, Split::Test)?;
    write_report(&out, "test_report", &report)?;
    println!(
        "best epoch {} (val loss {:.6})",
        outcome.best_epoch, outcome.best_val_loss
    );
    print_report(&report);
    manifest.finish(
        &out,
        "ok",
        vec![
            "checkpoint.bin".into(),
            "epochs.jsonl".into(),
            "test_report.json".into(),
        ],
    )?;
    println!("checkpoint: {}", ckpt_path.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_eval(a: EvalArgs) -> mmfusion::Result<ExitCode> {
    let split = match a.split.as_str() {
        "train" => Split::Train,
        "val" => Split::Val,
        "test" => Split::Test,
        other => return Err(Error::Config(format!("unknown split `{other}`"))),
    };
    let loaded = load_checkpoint(&a.checkpoint)?;
    let out = resolve_out(
        a.out.clone(),
        format!("eval-{}-{}", loaded.model.config.task.name(), a.split),
    );
    std::fs::create_dir_all(&out)?;
    let mut manifest = RunManifest::start(
        "eval",
        loaded.model.config.seed,
        serde_json::to_value(&loaded.model.config).expect("config serializes"),
    );
    manifest.checksum_inputs(&a.data)?;
    manifest.write(&out)?;
    let dataset = load_dataset(&a.data, loaded.model.config.task)?;
    let report = evaluate(&loaded.model, &dataset, split)?;
    write_report(&out, "report", &report)?;
    print_report(&report);
    println!("{}", report.to_text());
    manifest.finish(&out, "ok", vec!["report.json".into()])?;
    Ok(ExitCode::SUCCESS)
}

fn base_config_for(
    task: &str,
    seed: Option<u64>,
    epochs: Option<usize>,
    sets: &[String],
) -> mmfusion::Result<TrainConfig> {
    let mut cfg = TrainConfig::desk(Task::parse(task)?);
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(e) = epochs {
        cfg.epochs = e;
    }
    apply_pairs(&mut cfg, &parse_sets(sets)?)?;
    Ok(cfg)
}

fn cmd_ablate(a: AblateArgs) -> mmfusion::Result<ExitCode> {
    let cfg = base_config_for(&a.task, a.seed, a.epochs, &a.sets)?;
    let out = resolve_out(
        a.out.clone(),
        format!("ablate-{}-seed{}", cfg.task.name(), cfg.seed),
    );
    std::fs::create_dir_all(&out)?;
    let mut manifest = RunManifest::start(
        "ablate",
        cfg.seed,
        serde_json::to_value(&cfg).expect("config serializes"),
    );
    manifest.checksum_inputs(&a.data)?;
    manifest.write(&out)?;
    let dataset = load_dataset(&a.data, cfg.task)?;
    let report = ablate(&cfg, &dataset)?;
    std::fs::write(
        out.join("ablation.json"),
        serde_json::to_string_pretty(&report).expect("report serializes"),
    )?;
    std::fs::write(out.join("ablation.txt"), report.to_table())?;
    print!("{}", report.to_table());
    manifest.finish(&out, "ok", vec!["ablation.json".into(), "ablation.txt".into()])?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_sweep(a: SweepArgs) -> mmfusion::Result<ExitCode> {
    let cfg = base_config_for(&a.task, a.seed, None, &a.sets)?;
    let space = match a.space.as_deref() {
        None | Some("desk") => SweepSpace::desk(),
        Some("full") => SweepSpace::full(),
        Some(other) => return Err(Error::Config(format!("unknown sweep space `{other}`"))),
    };
    let out = resolve_out(
        a.out.clone(),
        format!("sweep-{}-seed{}", cfg.task.name(), cfg.seed),
    );
    std::fs::create_dir_all(&out)?;
    let mut manifest = RunManifest::start(
        "sweep",
        cfg.seed,
        serde_json::json!({ "base": cfg, "space": space, "budget": a.budget }),
    );
    manifest.checksum_inputs(&a.data)?;
    manifest.write(&out)?;
    let dataset = load_dataset(&a.data, cfg.task)?;
    let rows = sweep(&cfg, &space, a.budget, &dataset)?;
    std::fs::write(
        out.join("sweep.json"),
        serde_json::to_string_pretty(&rows).expect("rows serialize"),
    )?;
    std::fs::write(out.join("sweep.txt"), sweep_table(&rows))?;
    print!("{}", sweep_table(&rows));
    manifest.finish(&out, "ok", vec!["sweep.json".into(), "sweep.txt".into()])?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradcheck(a: GradcheckArgs) -> mmfusion::Result<ExitCode> {
    let cfg = gradcheck_config(a.seed);
    let report = model_grad_check(&cfg, a.seed, a.samples, a.h, a.tol)?;
    println!(
        "gradcheck: {} coordinates, max rel error {:.3e}, mean {:.3e}, tol {:.1e} -> {}",
        report.entries.len(),
        report.max_rel_error,
        report.mean_rel_error,
        report.tol,
        if report.pass { "PASS" } else { "FAIL" }
    );
    for e in report.entries.iter().take(5) {
        println!(
            "  {}[{}]: analytic {:.6e} numeric {:.6e} rel {:.3e}",
            e.param, e.coord, e.analytic, e.numeric, e.rel_error
        );
    }
    if report.pass {
        Ok(ExitCode::SUCCESS)
    } else {
        Err(Error::Numeric(format!(
            "gradient check failed: max rel error {:.3e} >= tol {:.1e}",
            report.max_rel_error, report.tol
        )))
    }
}
