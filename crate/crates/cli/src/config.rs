//! Run configuration: a line-oriented `key = value` file with `#` comments.
//! One schema covers the benchmark, training and evaluation settings; every
//! key is optional and unknown keys are rejected.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use psa_core::{AuxLoss, BenchmarkSpec, Schedule, ScoreKind, ScoreMethod, Strategy, TrainConfig};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub bench: BenchmarkSpec,
    /// Scalars are held at double precision and cast at run time.
    pub train: TrainConfig<f64>,
    pub precision: Precision,
    pub out_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            bench: BenchmarkSpec::default(),
            train: TrainConfig::default(),
            precision: Precision::F64,
            out_dir: None,
        }
    }
}

/// Every accepted key, in the order [`RunConfig::render`] writes them.
pub const KEYS: &[&str] = &[
    "seed",
    "precision",
    "out_dir",
    "dim",
    "num_id_classes",
    "num_ood_clusters",
    "labeled_per_class",
    "pool_id_count",
    "pool_ood_count",
    "test_id_count",
    "test_ood_count",
    "separation",
    "cluster_std",
    "max_epochs",
    "warmup_epochs",
    "lr_init",
    "momentum",
    "weight_decay",
    "labeled_batch",
    "pool_batch",
    "gamma",
    "lambda",
    "tau_s",
    "aux_loss",
    "q_id",
    "q_ood",
    "schedule",
    "strategy",
    "softmax_delta_id",
    "softmax_delta_ood",
    "idf_k",
    "idf_tau",
    "idf_max_iters",
    "freeze_thresholds",
    "retraining",
    "retrain_warmup",
    "selection_score",
    "selection_temperature",
    "eval_score",
    "eval_temperature",
    "hidden_dims",
    "embed_dim",
];

fn parse_num<T: std::str::FromStr>(v: &str) -> Result<T, String> {
    v.parse()
        .map_err(|_| format!("cannot parse `{v}` as a number"))
}

fn parse_bool(v: &str) -> Result<bool, String> {
    match v {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(format!("expected on/off, got `{v}`")),
    }
}

fn parse_score(v: &str) -> Result<ScoreKind, String> {
    match v {
        "msp" => Ok(ScoreKind::Msp),
        "energy" => Ok(ScoreKind::NegativeEnergy),
        _ => Err(format!("expected msp or energy, got `{v}`")),
    }
}

fn score_name(k: ScoreKind) -> &'static str {
    match k {
        ScoreKind::Msp => "msp",
        ScoreKind::NegativeEnergy => "energy",
    }
}

fn on_off(b: bool) -> &'static str {
    if b {
        "on"
    } else {
        "off"
    }
}

impl RunConfig {
    /// Parses a whole config file; `origin` names the source in errors.
    pub fn parse(text: &str, origin: &Path) -> Result<Self, CliError> {
        let mut cfg = RunConfig::default();
        let mut seen: Vec<String> = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| CliError::Config {
                origin: origin.to_path_buf(),
                line: n + 1,
                msg,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(err(format!("unknown key `{key}`")));
            }
            if seen.iter().any(|k| k == key) {
                return Err(err(format!("duplicate key `{key}`")));
            }
            seen.push(key.to_string());
            cfg.set(key, value)
                .map_err(|m| err(format!("key `{key}`: {m}")))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config {
            origin: path.to_path_buf(),
            line: 0,
            msg: e.to_string(),
        })?;
        Self::parse(&text, path)
    }

    /// Sets one key; the key must be one of [`KEYS`].
    pub fn set(&mut self, key: &str, v: &str) -> Result<(), String> {
        let b = &mut self.bench;
        let t = &mut self.train;
        match key {
            "seed" => {
                let s = parse_num(v)?;
                b.seed = s;
                t.seed = s;
            }
            "precision" => {
                self.precision = match v {
                    "f32" => Precision::F32,
                    "f64" => Precision::F64,
                    _ => return Err(format!("expected f32 or f64, got `{v}`")),
                }
            }
            "out_dir" => self.out_dir = Some(PathBuf::from(v)),
            "dim" => b.dim = parse_num(v)?,
            "num_id_classes" => b.num_id_classes = parse_num(v)?,
            "num_ood_clusters" => b.num_ood_clusters = parse_num(v)?,
            "labeled_per_class" => b.labeled_per_class = parse_num(v)?,
            "pool_id_count" => b.pool_id_count = parse_num(v)?,
            "pool_ood_count" => b.pool_ood_count = parse_num(v)?,
            "test_id_count" => b.test_id_count = parse_num(v)?,
            "test_ood_count" => b.test_ood_count = parse_num(v)?,
            "separation" => b.separation = parse_num(v)?,
            "cluster_std" => b.cluster_std = parse_num(v)?,
            "max_epochs" => t.max_epochs = parse_num(v)?,
            "warmup_epochs" => t.warmup_epochs = parse_num(v)?,
            "lr_init" => t.lr_init = parse_num(v)?,
            "momentum" => t.momentum = parse_num(v)?,
            "weight_decay" => t.weight_decay = parse_num(v)?,
            "labeled_batch" => t.labeled_batch = parse_num(v)?,
            "pool_batch" => t.pool_batch = parse_num(v)?,
            "gamma" => t.weights.gamma = parse_num(v)?,
            "lambda" => t.weights.lambda = parse_num(v)?,
            "tau_s" => t.weights.tau_s = parse_num(v)?,
            "aux_loss" => {
                t.aux_loss = match v {
                    "ccl" => AuxLoss::Ccl,
                    "scl" => AuxLoss::Scl,
                    _ => return Err(format!("expected ccl or scl, got `{v}`")),
                }
            }
            "q_id" => t.q_id = parse_num(v)?,
            "q_ood" => t.q_ood = parse_num(v)?,
            "schedule" => {
                t.schedule = match v {
                    "cosine" => Schedule::CosineWithWarmup,
                    "warm_restarts" => Schedule::WarmRestarts,
                    _ => return Err(format!("expected cosine or warm_restarts, got `{v}`")),
                }
            }
            "strategy" => {
                t.strategy = match v {
                    "energy" => Strategy::Energy,
                    "softmax" => Strategy::SoftmaxFixed,
                    "sort" => Strategy::Sort,
                    "idf" => Strategy::Idf,
                    _ => return Err(format!("expected energy, softmax, sort or idf, got `{v}`")),
                }
            }
            "softmax_delta_id" => t.softmax_delta_id = parse_num(v)?,
            "softmax_delta_ood" => t.softmax_delta_ood = parse_num(v)?,
            "idf_k" => t.idf.k = parse_num(v)?,
            "idf_tau" => t.idf.tau = parse_num(v)?,
            "idf_max_iters" => t.idf.max_iters = parse_num(v)?,
            "freeze_thresholds" => t.freeze_thresholds_at_warmup = parse_bool(v)?,
            "retraining" => t.retrain = parse_bool(v)?,
            "retrain_warmup" => t.retrain_warmup = parse_bool(v)?,
            "selection_score" => t.selection_score.kind = parse_score(v)?,
            "selection_temperature" => t.selection_score.temperature = parse_num(v)?,
            "eval_score" => t.eval_score.kind = parse_score(v)?,
            "eval_temperature" => t.eval_score.temperature = parse_num(v)?,
            "hidden_dims" => {
                t.hidden_dims = if v.is_empty() {
                    Vec::new()
                } else {
                    v.split(',')
                        .map(|d| parse_num(d.trim()))
                        .collect::<Result<_, _>>()?
                }
            }
            "embed_dim" => t.embed_dim = parse_num(v)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Value of `key` as it would appear in a config file.
    pub fn get(&self, key: &str) -> Option<String> {
        let b = &self.bench;
        let t = &self.train;
        let s = |m: &ScoreMethod<f64>| score_name(m.kind).to_string();
        Some(match key {
            "seed" => t.seed.to_string(),
            "precision" => match self.precision {
                Precision::F32 => "f32".into(),
                Precision::F64 => "f64".into(),
            },
            "out_dir" => self.out_dir.as_ref()?.display().to_string(),
            "dim" => b.dim.to_string(),
            "num_id_classes" => b.num_id_classes.to_string(),
            "num_ood_clusters" => b.num_ood_clusters.to_string(),
            "labeled_per_class" => b.labeled_per_class.to_string(),
            "pool_id_count" => b.pool_id_count.to_string(),
            "pool_ood_count" => b.pool_ood_count.to_string(),
            "test_id_count" => b.test_id_count.to_string(),
            "test_ood_count" => b.test_ood_count.to_string(),
            "separation" => b.separation.to_string(),
            "cluster_std" => b.cluster_std.to_string(),
            "max_epochs" => t.max_epochs.to_string(),
            "warmup_epochs" => t.warmup_epochs.to_string(),
            "lr_init" => t.lr_init.to_string(),
            "momentum" => t.momentum.to_string(),
            "weight_decay" => t.weight_decay.to_string(),
            "labeled_batch" => t.labeled_batch.to_string(),
            "pool_batch" => t.pool_batch.to_string(),
            "gamma" => t.weights.gamma.to_string(),
            "lambda" => t.weights.lambda.to_string(),
            "tau_s" => t.weights.tau_s.to_string(),
            "aux_loss" => match t.aux_loss {
                AuxLoss::Ccl => "ccl".into(),
                AuxLoss::Scl => "scl".into(),
            },
            "q_id" => t.q_id.to_string(),
            "q_ood" => t.q_ood.to_string(),
            "schedule" => match t.schedule {
                Schedule::CosineWithWarmup => "cosine".into(),
                Schedule::WarmRestarts => "warm_restarts".into(),
            },
            "strategy" => match t.strategy {
                Strategy::Energy => "energy".into(),
                Strategy::SoftmaxFixed => "softmax".into(),
                Strategy::Sort => "sort".into(),
                Strategy::Idf => "idf".into(),
            },
            "softmax_delta_id" => t.softmax_delta_id.to_string(),
            "softmax_delta_ood" => t.softmax_delta_ood.to_string(),
            "idf_k" => t.idf.k.to_string(),
            "idf_tau" => t.idf.tau.to_string(),
            "idf_max_iters" => t.idf.max_iters.to_string(),
            "freeze_thresholds" => on_off(t.freeze_thresholds_at_warmup).into(),
            "retraining" => on_off(t.retrain).into(),
            "retrain_warmup" => on_off(t.retrain_warmup).into(),
            "selection_score" => s(&t.selection_score),
            "selection_temperature" => t.selection_score.temperature.to_string(),
            "eval_score" => s(&t.eval_score),
            "eval_temperature" => t.eval_score.temperature.to_string(),
            "hidden_dims" => t
                .hidden_dims
                .iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(","),
            "embed_dim" => t.embed_dim.to_string(),
            _ => return None,
        })
    }

    /// The fully resolved configuration in file syntax.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            if let Some(v) = self.get(key) {
                let _ = writeln!(out, "{key} = {v}");
            }
        }
        out
    }

    /// Checks every constituent before any output is written.
    pub fn validate(&self) -> Result<(), CliError> {
        let wrap = |e: psa_core::PsaError| CliError::Invalid(e.to_string());
        self.bench.validate().map_err(wrap)?;
        self.train.validate().map_err(wrap)
    }
}
