//! Flat `key = value` run configuration.
//!
//! Resolution order, lowest first: built-in defaults, the named preset, the
//! config file, command-line flags. The fully resolved map is echoed into
//! the output directory and can be fed back in as a config file.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::analysis::SuiteOptions;
use crate::buffer::BufferVariant;
use crate::error::{Error, Result};
use crate::graph::{NormKind, NormScheme, SbmConfig};
use crate::losses::ObjectiveKind;
use crate::models::{Arch, ModelConfig};
use crate::training::{BaseSpace, BufferSpace, TrainConfig};

/// Every accepted key with its default and a one-line description.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("preset", "none", "cora | citeseer | pubmed | none"),
    ("out", "", "output directory; empty means runs/<command>"),
    ("seed", "0", "master seed"),
    ("data", "", "dataset directory"),
    ("sbm", "", "synthetic dataset spec used when `data` is empty, e.g. n=1000,classes=4"),
    ("split", "split_0", "split name inside the dataset"),
    ("feature_norm", "none", "none | row"),
    ("arch", "gcn", "mlp | gcn | sgc | sage | gin"),
    ("hidden", "64", "hidden width"),
    ("layers", "2", "number of layers (SGC: propagation steps)"),
    ("activation", "relu", "relu | sigmoid | gelu | tanh | elu"),
    ("dropout", "0.5", "base-model dropout"),
    ("norm", "auto", "sym | rw | regular | auto (SAGE: rw, others: sym)"),
    ("self_loops", "auto", "true | false | auto (SAGE: false, others: true)"),
    ("gin_hidden", "0", "GIN inner MLP width; 0 means `hidden`"),
    ("lr", "0.01", "pretraining learning rate"),
    ("weight_decay", "0.0005", "pretraining weight decay"),
    ("max_epochs", "2000", "epoch cap for pretraining and tuning"),
    ("patience", "100", "early-stopping patience for pretraining and tuning"),
    ("pretrain_drop_edge", "0", "DropEdge rate during pretraining"),
    ("restore_best", "true", "keep the best-validation checkpoint instead of the last one"),
    ("base", "", "pretrained checkpoint for tune and sweep=buffer"),
    ("variant", "full", "full | single | jknet | residual | agg"),
    ("objective", "rc", "rc | rc_train_only | ce | pseudo | distill"),
    ("lambda", "1", "weight of the robustness term"),
    ("drop_edge", "0.5", "DropEdge rate for buffer tuning and analysis"),
    ("buffer_dropout", "0", "dropout on buffer inputs during tuning"),
    ("buffer_lr", "0.01", "buffer learning rate"),
    ("buffer_weight_decay", "0", "buffer weight decay"),
    ("stop_grad", "false", "detach the clean branch of the robustness term"),
    ("model", "", "checkpoint to evaluate or analyze (base or buffer)"),
    ("removal", "", "comma-separated keep ratios for the edge-removal sweep"),
    ("removal_seeds", "5", "number of mask seeds per keep ratio"),
    ("compare", "true", "eval: also report the base of a buffer checkpoint"),
    ("trials", "1000", "analyze: trials per bound family"),
    ("instances", "20", "analyze: random instances the trials are spread over"),
    ("max_nodes", "64", "analyze: largest random graph"),
    ("witness_instances", "50", "analyze: random GCN layers searched for a witness"),
    ("witness_attempts", "100", "analyze: attempts per witness search"),
    ("condition_trials", "1000", "analyze: trials per buffer variant"),
    ("sweep", "buffer", "buffer | base"),
    ("sweep_seeds", "1", "runs per grid point"),
    ("grid_lambda", "1,0.5,0.1", "buffer grid"),
    ("grid_drop_edge", "0.2,0.5,0.7,1.0", "buffer grid"),
    ("grid_buffer_dropout", "0,0.2,0.5,0.7", "buffer grid"),
    ("grid_hidden", "64,256,512", "base grid"),
    ("grid_dropout", "0.2,0.3,0.5,0.7", "base grid"),
    ("grid_weight_decay", "0,0.0005,0.00005", "base grid"),
    ("grid_lr", "0.01,0.001,0.005", "base grid"),
];

/// Per-dataset settings for a pretrained 2-layer GCN and its buffer.
pub const PRESETS: &[(&str, &[(&str, &str)])] = &[
    (
        "cora",
        &[
            ("arch", "gcn"), ("hidden", "512"), ("lr", "0.01"), ("weight_decay", "0.0005"), ("dropout", "0.5"),
            ("norm", "sym"), ("lambda", "0.5"), ("buffer_dropout", "0.7"), ("drop_edge", "0.5"),
        ],
    ),
    (
        "citeseer",
        &[
            ("arch", "gcn"), ("hidden", "512"), ("lr", "0.01"), ("weight_decay", "0.0005"), ("dropout", "0.7"),
            ("norm", "sym"), ("lambda", "1.0"), ("buffer_dropout", "0.7"), ("drop_edge", "0.2"),
        ],
    ),
    (
        "pubmed",
        &[
            ("arch", "gcn"), ("hidden", "512"), ("lr", "0.01"), ("weight_decay", "0.0005"), ("dropout", "0.7"),
            ("norm", "sym"), ("lambda", "0.5"), ("buffer_dropout", "0.0"), ("drop_edge", "0.2"),
        ],
    ),
];

/// Parses a flat config document: one `key = value` per line, `#` starts a
/// comment.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got `{line}`", i + 1)))?;
        let key = k.trim().to_string();
        if map.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key `{key}`", i + 1)));
        }
    }
    Ok(map)
}

pub fn read_config(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text)
}

/// Layers `file` and `flags` over the defaults and the selected preset.
pub fn resolve(file: BTreeMap<String, String>, flags: BTreeMap<String, String>) -> Result<BTreeMap<String, String>> {
    let mut user = file;
    user.extend(flags);
    if let Some(k) = user.keys().find(|k| !KEYS.iter().any(|(name, _, _)| name == k)) {
        return Err(Error::Config(format!("unknown key `{k}`")));
    }
    let mut map: BTreeMap<String, String> = KEYS.iter().map(|(k, v, _)| (k.to_string(), v.to_string())).collect();
    let preset = user.get("preset").map_or("none", String::as_str).to_ascii_lowercase();
    if preset != "none" {
        let (_, values) = PRESETS
            .iter()
            .find(|(name, _)| *name == preset)
            .ok_or_else(|| Error::Config(format!("unknown preset `{preset}`")))?;
        map.extend(values.iter().map(|(k, v)| (k.to_string(), v.to_string())));
    }
    map.extend(user);
    Ok(map)
}

/// The resolved map as a config document.
pub fn render(map: &BTreeMap<String, String>) -> String {
    let mut out = String::new();
    for (k, v) in map {
        let _ = writeln!(out, "{k} = {v}");
    }
    out
}

/// Typed view of a resolved map.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub out: Option<PathBuf>,
    pub seed: u64,
    pub data: Option<PathBuf>,
    pub sbm: Option<SbmConfig>,
    pub split: String,
    pub row_normalize: bool,
    /// Model settings; input and class counts are filled from the data.
    pub model: ModelConfig,
    pub pretrain: TrainConfig,
    pub base: Option<PathBuf>,
    pub variant: BufferVariant,
    pub tune: TrainConfig,
    pub model_path: Option<PathBuf>,
    pub removal: Vec<f64>,
    pub removal_seeds: usize,
    pub compare: bool,
    pub suite: SuiteOptions,
    pub sweep_base: bool,
    pub sweep_seeds: usize,
    pub buffer_space: BufferSpace,
    pub base_space: BaseSpace,
}

struct Reader<'a>(&'a BTreeMap<String, String>);

impl Reader<'_> {
    fn raw(&self, key: &str) -> &str {
        self.0.get(key).map_or("", |s| s.trim())
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<T> {
        let v = self.raw(key);
        v.parse().map_err(|_| Error::Config(format!("bad value `{v}` for `{key}`")))
    }

    fn parsed<T: FromStr<Err = Error>>(&self, key: &str) -> Result<T> {
        let v = self.raw(key);
        v.parse().map_err(|e: Error| Error::Config(format!("`{key}`: {e}")))
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        Some(self.raw(key)).filter(|s| !s.is_empty()).map(PathBuf::from)
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>> {
        self.raw(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|_| Error::Config(format!("bad list item `{s}` for `{key}`"))))
            .collect()
    }

    fn auto_bool(&self, key: &str, auto: bool) -> Result<bool> {
        match self.raw(key) {
            "auto" => Ok(auto),
            _ => self.get(key),
        }
    }
}

impl RunConfig {
    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self> {
        let r = Reader(map);
        let seed: u64 = r.get("seed")?;

        let sbm = match r.raw("sbm") {
            "" => None,
            spec => {
                let mut cfg = SbmConfig { seed, ..SbmConfig::default() };
                cfg.parse_overrides(spec)?;
                cfg.validate()?;
                Some(cfg)
            }
        };

        let arch: Arch = r.parsed("arch")?;
        let mut model = ModelConfig::new(arch, 0, r.get("hidden")?, 0, r.get("layers")?);
        model.activation = r.parsed("activation")?;
        model.dropout = r.get("dropout")?;
        if !(0.0..1.0).contains(&model.dropout) {
            return Err(Error::Config(format!("dropout must lie in [0, 1), got {}", model.dropout)));
        }
        let kind = match r.raw("norm") {
            "auto" => model.norm.kind,
            _ => r.parsed::<NormKind>("norm")?,
        };
        model.norm = NormScheme::new(kind, r.auto_bool("self_loops", model.norm.add_self_loops)?);
        let gin_hidden: usize = r.get("gin_hidden")?;
        model.gin_hidden = if gin_hidden == 0 { model.hidden } else { gin_hidden };

        let max_epochs = r.get("max_epochs")?;
        let patience = r.get("patience")?;
        let pretrain = TrainConfig {
            lr: r.get("lr")?,
            weight_decay: r.get("weight_decay")?,
            max_epochs,
            patience,
            seed,
            drop_edge: r.get("pretrain_drop_edge")?,
            restore_best: r.get("restore_best")?,
            ..TrainConfig::pretrain_default()
        };
        pretrain.validate()?;
        let tune = TrainConfig {
            lr: r.get("buffer_lr")?,
            weight_decay: r.get("buffer_weight_decay")?,
            max_epochs,
            patience,
            seed,
            drop_edge: r.get("drop_edge")?,
            lambda: r.get("lambda")?,
            dropout: r.get("buffer_dropout")?,
            objective: r.parsed::<ObjectiveKind>("objective")?,
            stop_grad_clean: r.get("stop_grad")?,
            restore_best: r.get("restore_best")?,
        };
        tune.validate()?;

        let removal: Vec<f64> = r.list("removal")?;
        if let Some(bad) = removal.iter().find(|x| !(0.0..=1.0).contains(*x)) {
            return Err(Error::Config(format!("removal keep ratio {bad} outside [0, 1]")));
        }

        let suite = SuiteOptions {
            trials: r.get("trials")?,
            instances: r.get("instances")?,
            max_nodes: r.get("max_nodes")?,
            drop_edge: tune.drop_edge,
            witness_instances: r.get("witness_instances")?,
            witness_attempts: r.get("witness_attempts")?,
            condition_trials: r.get("condition_trials")?,
            seed,
        };
        suite.validate()?;

        let sweep_base = match r.raw("sweep") {
            "buffer" => false,
            "base" => true,
            other => return Err(Error::Config(format!("sweep must be `buffer` or `base`, got `{other}`"))),
        };

        Ok(Self {
            out: r.path("out"),
            seed,
            data: r.path("data"),
            sbm,
            split: r.raw("split").to_string(),
            row_normalize: match r.raw("feature_norm") {
                "none" => false,
                "row" => true,
                other => return Err(Error::Config(format!("feature_norm must be `none` or `row`, got `{other}`"))),
            },
            model,
            pretrain,
            base: r.path("base"),
            variant: r.parsed("variant")?,
            tune,
            model_path: r.path("model"),
            removal,
            removal_seeds: r.get("removal_seeds")?,
            compare: r.get("compare")?,
            suite,
            sweep_base,
            sweep_seeds: r.get("sweep_seeds")?,
            buffer_space: BufferSpace {
                lambdas: r.list("grid_lambda")?,
                drop_edges: r.list("grid_drop_edge")?,
                dropouts: r.list("grid_buffer_dropout")?,
            },
            base_space: BaseSpace {
                hidden: r.list("grid_hidden")?,
                dropouts: r.list("grid_dropout")?,
                weight_decays: r.list("grid_weight_decay")?,
                lrs: r.list("grid_lr")?,
            },
        })
    }
}
