//! The `aggbuf` command line.
//!
//! Every command writes into one output directory: the resolved config
//! (`config.txt`), a log, and its artifacts.

pub mod config;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::analysis::{analyze_model, bound_suite, condition_suite, witness_suite, AnalysisReport};
use crate::buffer::{attach, detach};
use crate::checkpoint::{load_any, load_model, save_buffers, save_model, AnyModel};
use crate::error::{Error, Result};
use crate::eval::{emit_report, evaluate, write_curves_csv, EvalOptions, Predictor};
use crate::graph::{generate_sbm, load_dataset, save_dataset, DatasetBundle};
use crate::models::{ModelConfig, ModelParams};
use crate::rng::derive_seed;
use crate::training::{base_sweep, buffer_sweep, pretrain, tune_buffer, History};
pub use config::{parse_config, render, resolve, RunConfig, KEYS, PRESETS};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "aggbuf", version, about = "Aggregation buffers for edge-robust GNNs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic block-model dataset.
    Generate(Flags),
    /// Train a base model.
    Pretrain(Flags),
    /// Attach buffers to a frozen base and train them.
    Tune(Flags),
    /// Accuracy, degree/homophily groups and edge-removal sweeps.
    Eval(Flags),
    /// Randomized bound, witness and buffer-condition checks.
    Analyze(Flags),
    /// Grid search over buffer or base hyperparameters.
    Sweep(Flags),
}

impl Command {
    fn parts(&self) -> (&'static str, &Flags) {
        match self {
            Self::Generate(f) => ("generate", f),
            Self::Pretrain(f) => ("pretrain", f),
            Self::Tune(f) => ("tune", f),
            Self::Eval(f) => ("eval", f),
            Self::Analyze(f) => ("analyze", f),
            Self::Sweep(f) => ("sweep", f),
        }
    }
}

/// Flags are shorthands for config keys of the same name.
#[derive(Debug, Default, Args)]
struct Flags {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Any config key, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    data: Option<String>,
    #[arg(long)]
    sbm: Option<String>,
    #[arg(long)]
    split: Option<String>,
    #[arg(long)]
    arch: Option<String>,
    #[arg(long)]
    hidden: Option<String>,
    #[arg(long)]
    layers: Option<String>,
    #[arg(long)]
    base: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    lambda: Option<String>,
    #[arg(long = "drop-edge")]
    drop_edge: Option<String>,
    #[arg(long)]
    removal: Option<String>,
    #[arg(long)]
    trials: Option<String>,
}

impl Flags {
    fn overrides(&self) -> Result<BTreeMap<String, String>> {
        let mut map = BTreeMap::new();
        for item in &self.set {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{item}`")))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        let named = [
            ("preset", &self.preset),
            ("out", &self.out),
            ("seed", &self.seed),
            ("data", &self.data),
            ("sbm", &self.sbm),
            ("split", &self.split),
            ("arch", &self.arch),
            ("hidden", &self.hidden),
            ("layers", &self.layers),
            ("base", &self.base),
            ("model", &self.model),
            ("variant", &self.variant),
            ("lambda", &self.lambda),
            ("drop_edge", &self.drop_edge),
            ("removal", &self.removal),
            ("trials", &self.trials),
        ];
        for (k, v) in named {
            if let Some(v) = v {
                map.insert(k.to_string(), v.clone());
            }
        }
        Ok(map)
    }
}

/// Exit status for an error: configuration problems map to 2, everything
/// else to 3.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Unsupported(_) | Error::InvalidRate { .. } => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    }
}

/// Parses `argv` (including the program name), runs the command and
/// returns the process exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let (name, flags) = cli.command.parts();
    let prepared = prepare(name, flags);
    let (map, cfg) = match prepared {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    configure_threads();
    match execute(name, &map, &cfg) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn prepare(name: &str, flags: &Flags) -> Result<(BTreeMap<String, String>, RunConfig)> {
    let file = match &flags.config {
        Some(path) => config::read_config(path)?,
        None => BTreeMap::new(),
    };
    let mut map = resolve(file, flags.overrides()?)?;
    if map["out"].is_empty() {
        map.insert("out".into(), format!("runs/{name}"));
    }
    let cfg = RunConfig::from_map(&map)?;
    for (key, path) in [("data", &cfg.data), ("base", &cfg.base), ("model", &cfg.model_path)] {
        if let Some(p) = path {
            if !p.exists() {
                return Err(Error::Config(format!("`{key}` path {} does not exist", p.display())));
            }
        }
    }
    Ok((map, cfg))
}

/// Caps the global thread pool at `GB_THREADS` when set.
fn configure_threads() {
    if let Some(n) = std::env::var("GB_THREADS").ok().and_then(|v| v.parse::<usize>().ok()).filter(|&n| n > 0) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

/// Appends to `log.txt` in the output directory and mirrors to stderr.
struct RunLog {
    file: fs::File,
}

impl RunLog {
    fn open(dir: &Path) -> Result<Self> {
        Ok(Self { file: fs::File::create(dir.join("log.txt"))? })
    }

    fn line(&mut self, msg: impl AsRef<str>) -> Result<()> {
        let msg = msg.as_ref();
        eprintln!("{msg}");
        writeln!(self.file, "{msg}")?;
        Ok(())
    }
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn execute(name: &str, map: &BTreeMap<String, String>, cfg: &RunConfig) -> Result<()> {
    let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from(format!("runs/{name}")));
    fs::create_dir_all(&out)?;
    fs::write(out.join("config.txt"), render(map))?;
    let mut log = RunLog::open(&out)?;
    log.line(format!("{name}: writing to {}", out.display()))?;
    match name {
        "generate" => cmd_generate(cfg, &out, &mut log),
        "pretrain" => cmd_pretrain(cfg, &out, &mut log),
        "tune" => cmd_tune(cfg, &out, &mut log),
        "eval" => cmd_eval(cfg, &out, &mut log),
        "analyze" => cmd_analyze(cfg, &out, &mut log),
        "sweep" => cmd_sweep(cfg, &out, &mut log),
        other => Err(Error::Config(format!("unknown command `{other}`"))),
    }
}

/// Loads the configured dataset, or samples the configured block model.
pub fn load_data(cfg: &RunConfig) -> Result<DatasetBundle> {
    let mut data = match (&cfg.data, &cfg.sbm) {
        (Some(dir), _) => load_dataset(dir)?,
        (None, Some(sbm)) => generate_sbm(sbm)?,
        (None, None) => return Err(Error::Config("set `data` or `sbm`".into())),
    };
    if cfg.row_normalize {
        for i in 0..data.features.rows() {
            let row = data.features.row_mut(i);
            let s: f64 = row.iter().sum();
            if s != 0.0 {
                row.iter_mut().for_each(|v| *v /= s);
            }
        }
    }
    data.split(&cfg.split)?;
    Ok(data)
}

fn model_config(cfg: &RunConfig, data: &DatasetBundle) -> Result<ModelConfig> {
    let model = ModelConfig { in_dim: data.features.cols(), num_classes: data.num_classes, ..cfg.model.clone() };
    model.validate().map_err(|e| Error::Config(e.to_string()))?;
    Ok(model)
}

fn write_history(history: &History, out: &Path) -> Result<()> {
    history.write_jsonl(out.join("history.jsonl"))?;
    write_curves_csv(&history.records, out.join("curves.csv"))
}

fn require<'a>(path: &'a Option<PathBuf>, key: &str, command: &str) -> Result<&'a PathBuf> {
    path.as_ref().ok_or_else(|| Error::Config(format!("`{command}` requires `{key}`")))
}

#[derive(Serialize)]
struct TrainSummary {
    best_epoch: usize,
    best_val_acc: f64,
    epochs_run: usize,
    test_acc: f64,
    base_test_acc: Option<f64>,
}

fn cmd_generate(cfg: &RunConfig, out: &Path, log: &mut RunLog) -> Result<()> {
    let sbm = cfg.sbm.as_ref().ok_or_else(|| Error::Config("`generate` requires `sbm`".into()))?;
    let data = generate_sbm(sbm)?;
    save_dataset(&data, out)?;
    log.line(format!(
        "{} nodes, {} edges, {} features, {} classes, {} splits",
        data.num_nodes(),
        data.graph.num_edges(),
        data.features.cols(),
        data.num_classes,
        data.splits.len()
    ))
}

fn test_accuracy<P: Predictor + ?Sized>(model: &P, data: &DatasetBundle, split: &str) -> Result<f64> {
    Ok(evaluate(model, data, split, 0, &EvalOptions::default())?.overall)
}

fn cmd_pretrain(cfg: &RunConfig, out: &Path, log: &mut RunLog) -> Result<()> {
    let data = load_data(cfg)?;
    let model = model_config(cfg, &data)?;
    let split = data.split(&cfg.split)?;
    let (params, history) = pretrain(&model, &cfg.pretrain, &data, split)?;
    save_model(&params, out.join("model.ckpt"))?;
    write_history(&history, out)?;
    let summary = TrainSummary {
        best_epoch: history.best_epoch,
        best_val_acc: history.best_val_acc,
        epochs_run: history.records.len(),
        test_acc: test_accuracy(&params, &data, &cfg.split)?,
        base_test_acc: None,
    };
    write_json(&summary, &out.join("summary.json"))?;
    log.line(format!(
        "{}: best epoch {} (val {:.4}), test {:.4}, hash {}",
        model.arch,
        summary.best_epoch,
        summary.best_val_acc,
        summary.test_acc,
        params.content_hash()
    ))
}

fn cmd_tune(cfg: &RunConfig, out: &Path, log: &mut RunLog) -> Result<()> {
    let base_path = require(&cfg.base, "base", "tune")?;
    let data = load_data(cfg)?;
    let split = data.split(&cfg.split)?;
    let base = load_model(base_path)?;
    let bm = attach(base, cfg.variant);
    let (buffers, history) = tune_buffer(&bm, &cfg.tune, &data, split)?;
    let mut tuned = bm.clone();
    tuned.set_buffers(buffers)?;
    save_buffers(&tuned, Some(base_path), out.join("buffer.ckpt"))?;
    write_history(&history, out)?;
    let summary = TrainSummary {
        best_epoch: history.best_epoch,
        best_val_acc: history.best_val_acc,
        epochs_run: history.records.len(),
        test_acc: test_accuracy(&tuned, &data, &cfg.split)?,
        base_test_acc: Some(test_accuracy(&tuned.base, &data, &cfg.split)?),
    };
    write_json(&summary, &out.join("summary.json"))?;
    log.line(format!(
        "{} buffers: best epoch {} (val {:.4}), test {:.4} (base {:.4})",
        cfg.variant.name(),
        summary.best_epoch,
        summary.best_val_acc,
        summary.test_acc,
        summary.base_test_acc.unwrap_or(f64::NAN)
    ))
}

fn cmd_eval(cfg: &RunConfig, out: &Path, log: &mut RunLog) -> Result<()> {
    let path = require(&cfg.model_path, "model", "eval")?;
    let data = load_data(cfg)?;
    let opts = EvalOptions {
        removal_ratios: cfg.removal.clone(),
        removal_seeds: (0..cfg.removal_seeds as u64).map(|k| derive_seed(cfg.seed, k)).collect(),
    };
    let mut targets: Vec<(&str, Box<dyn Predictor>)> = Vec::new();
    match load_any(path)? {
        AnyModel::Base(p) => targets.push(("report.json", Box::new(p))),
        AnyModel::Buffered(bm) => {
            if cfg.compare {
                targets.push(("base_report.json", Box::new(detach(bm.clone()))));
            }
            targets.push(("report.json", Box::new(bm)));
        }
    }
    for (file, model) in targets {
        let metrics = evaluate(model.as_ref(), &data, &cfg.split, cfg.seed, &opts)?;
        let report = emit_report(vec![metrics], out.join(file))?;
        let r = &report.runs[0];
        log.line(format!(
            "{}: overall {:.4}, head {:.4}, tail {:.4}, homophilous {:.4}, heterophilous {:.4}",
            r.model, r.overall, r.head, r.tail, r.homophilous, r.heterophilous
        ))?;
        for p in &r.removal {
            log.line(format!("  keep {:.2}: {:.4} ± {:.4}", p.ratio, p.mean, p.std))?;
        }
    }
    Ok(())
}

fn cmd_analyze(cfg: &RunConfig, out: &Path, log: &mut RunLog) -> Result<()> {
    let opts = &cfg.suite;
    let model = match &cfg.model_path {
        None => None,
        Some(path) => {
            let params: ModelParams = match load_any(path)? {
                AnyModel::Base(p) => p,
                AnyModel::Buffered(bm) => detach(bm),
            };
            let data = load_data(cfg)?;
            Some(analyze_model(&params, &data.features, &data.graph, opts)?)
        }
    };
    let report = AnalysisReport {
        options: opts.clone(),
        bounds: bound_suite(opts)?,
        witness: witness_suite(opts)?,
        buffer_conditions: condition_suite(opts)?,
        model,
    };
    write_json(&report, &out.join("analysis.json"))?;
    log.line(format!("{:<22} {:>7} {:>10} {:>10}", "bound", "trials", "violations", "max ratio"))?;
    for b in &report.bounds {
        log.line(format!("{:<22} {:>7} {:>10} {:>10.4}", b.arch, b.trials, b.violations, b.max_ratio))?;
    }
    let w = &report.witness;
    log.line(format!("witness: {}/{} found, at most {} attempts", w.found, w.instances, w.max_attempts_used))?;
    for c in &report.buffer_conditions {
        log.line(format!(
            "{:<9} qualified {:>5}  C1 failures {:>5}  C2 failures {:>5}",
            c.variant.name(),
            c.qualified,
            c.c1_failures,
            c.c2_failures
        ))?;
    }
    if let Some(m) = &report.model {
        log.line(format!("model discrepancy per layer: {:?}", m.discrepancy))?;
    }
    Ok(())
}

fn cmd_sweep(cfg: &RunConfig, out: &Path, log: &mut RunLog) -> Result<()> {
    let data = load_data(cfg)?;
    let split = data.split(&cfg.split)?;
    if cfg.sweep_base {
        let model = model_config(cfg, &data)?;
        let ranked = base_sweep(&model, &cfg.pretrain, &cfg.base_space, &data, split, cfg.sweep_seeds, cfg.seed)?;
        write_json(&ranked, &out.join("sweep.json"))?;
        for e in ranked.iter().take(5) {
            let (m, t) = &e.point;
            log.line(format!(
                "{:.4}  hidden {} dropout {} wd {} lr {}",
                e.mean, m.hidden, m.dropout, t.weight_decay, t.lr
            ))?;
        }
    } else {
        let base = load_model(require(&cfg.base, "base", "sweep")?)?;
        let ranked = buffer_sweep(&base, cfg.variant, &cfg.tune, &cfg.buffer_space, &data, split, cfg.sweep_seeds, cfg.seed)?;
        write_json(&ranked, &out.join("sweep.json"))?;
        for e in ranked.iter().take(5) {
            let t = &e.point;
            log.line(format!("{:.4}  lambda {} drop_edge {} dropout {}", e.mean, t.lambda, t.drop_edge, t.dropout))?;
        }
    }
    Ok(())
}
