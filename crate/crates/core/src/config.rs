//! Run configuration in a flat `key = value` text format.
//!
//! Blank lines and lines starting with `#` are ignored. Every key is optional;
//! missing keys keep their defaults. Command-line flags carry the same names
//! and are applied after the file, so the effective configuration is
//! defaults < file < environment < flags.

use std::fmt::Write as _;
use std::path::PathBuf;

use crate::detect::{mlsd_candidate_count, MLSD_MAX_CANDIDATES};
use crate::error::{Error, Result};
use crate::harness::ChannelMix;
use crate::modem::ModulationScheme;
use crate::optim::{OptimizerConfig, OptimizerKind};

/// Environment variable that overrides `output_dir`.
pub const OUTPUT_DIR_ENV: &str = "OSGD_OUTPUT_DIR";

/// Every accepted key, in echo order.
pub const KEYS: &[&str] = &[
    "experiment",
    "optimizer",
    "eta_i",
    "eta_l",
    "lambda",
    "beta",
    "beta1",
    "beta2",
    "epsilon",
    "sgd_lr",
    "n_tx",
    "n_rx",
    "modulation",
    "schedule",
    "train_ebn0_db",
    "batch_size",
    "iterations",
    "eval_k",
    "ebn0_db",
    "min_bit_errors",
    "max_blocks",
    "eval_chunk",
    "seed",
    "workers",
    "output_dir",
    "checkpoint",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentId {
    Custom,
    /// Train on Rayleigh only, evaluate across K.
    Mismatch,
    /// Sequential K=0 then K=1 training with both optimizers.
    Sequential,
    /// Training on a K mixture with both optimizers.
    Mixture,
}

impl ExperimentId {
    pub fn tag(self) -> &'static str {
        match self {
            ExperimentId::Custom => "custom",
            ExperimentId::Mismatch => "1",
            ExperimentId::Sequential => "2",
            ExperimentId::Mixture => "3",
        }
    }

    pub fn from_tag(s: &str) -> Option<Self> {
        match s {
            "custom" => Some(ExperimentId::Custom),
            "1" => Some(ExperimentId::Mismatch),
            "2" => Some(ExperimentId::Sequential),
            "3" => Some(ExperimentId::Mixture),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub experiment: ExperimentId,
    pub optimizer: OptimizerKind,
    pub optim: OptimizerConfig,
    pub sgd_lr: f64,
    pub n_tx: usize,
    pub n_rx: usize,
    pub modulation: String,
    /// Training tasks in order; each is a fixed K or a uniform K range.
    pub schedule: Vec<ChannelMix>,
    pub train_ebn0_db: f64,
    pub batch_size: usize,
    /// Mini-batches per task.
    pub iterations: u64,
    pub eval_k: Vec<f64>,
    pub ebn0_db: Vec<f64>,
    pub min_bit_errors: u64,
    pub max_blocks: u64,
    /// Blocks per evaluation work unit.
    pub eval_chunk: u64,
    pub seed: u64,
    /// Evaluation threads; 0 picks the machine parallelism.
    pub workers: usize,
    pub output_dir: PathBuf,
    /// Empty means `<output_dir>/model.ckpt`.
    pub checkpoint: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            experiment: ExperimentId::Custom,
            optimizer: OptimizerKind::Osgd,
            optim: OptimizerConfig::default(),
            sgd_lr: 0.01,
            n_tx: 4,
            n_rx: 8,
            modulation: "qpsk".into(),
            schedule: vec![ChannelMix::Fixed(0.0)],
            train_ebn0_db: 8.0,
            batch_size: 500,
            iterations: 20_000,
            eval_k: vec![0.0, 1.0, 2.0, 3.0, 5.0],
            ebn0_db: (-2..=6).map(|i| 2.0 * i as f64).collect(),
            min_bit_errors: 200,
            max_blocks: 2_000_000,
            eval_chunk: 1000,
            seed: 2020,
            workers: 0,
            output_dir: PathBuf::from("runs"),
            checkpoint: None,
        }
    }
}

fn config_err<T>(key: &str, message: impl Into<String>) -> Result<T> {
    Err(Error::Config {
        key: key.to_string(),
        message: message.into(),
    })
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str, what: &str) -> Result<T> {
    value
        .parse()
        .or_else(|_| config_err(key, format!("expected {what}, got `{value}`")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_num::<f64>(key, s, "a comma-separated list of numbers"))
        .collect()
}

fn join<T: std::fmt::Display>(items: &[T]) -> String {
    items.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Parses config text on top of the defaults and validates the result.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies every `key = value` line of `text` without validating.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return config_err(line, format!("line {} is not `key = value`", lineno + 1));
            };
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "experiment" => {
                self.experiment = ExperimentId::from_tag(value)
                    .map_or_else(|| config_err(key, format!("expected 1, 2, 3 or custom, got `{value}`")), Ok)?
            }
            "optimizer" => {
                self.optimizer = OptimizerKind::from_tag(value)
                    .map_or_else(|| config_err(key, format!("expected osgd, adam or sgd, got `{value}`")), Ok)?
            }
            "eta_i" => self.optim.eta_i = parse_num(key, value, "a number")?,
            "eta_l" => self.optim.eta_l = parse_num(key, value, "a number")?,
            "lambda" => self.optim.lambda = parse_num(key, value, "a number")?,
            "beta" => self.optim.beta = parse_num(key, value, "a number")?,
            "beta1" => self.optim.beta1 = parse_num(key, value, "a number")?,
            "beta2" => self.optim.beta2 = parse_num(key, value, "a number")?,
            "epsilon" => self.optim.epsilon = parse_num(key, value, "a number")?,
            "sgd_lr" => self.sgd_lr = parse_num(key, value, "a number")?,
            "n_tx" => self.n_tx = parse_num(key, value, "a positive integer")?,
            "n_rx" => self.n_rx = parse_num(key, value, "a positive integer")?,
            "modulation" => self.modulation = value.to_ascii_lowercase(),
            "schedule" => {
                self.schedule = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| {
                        ChannelMix::parse(s).map_or_else(
                            || config_err(key, format!("expected K or Kmin:Kmax, got `{s}`")),
                            Ok,
                        )
                    })
                    .collect::<Result<_>>()?
            }
            "train_ebn0_db" => self.train_ebn0_db = parse_num(key, value, "a number")?,
            "batch_size" => self.batch_size = parse_num(key, value, "a positive integer")?,
            "iterations" => self.iterations = parse_num(key, value, "a positive integer")?,
            "eval_k" => self.eval_k = parse_list(key, value)?,
            "ebn0_db" => self.ebn0_db = parse_list(key, value)?,
            "min_bit_errors" => self.min_bit_errors = parse_num(key, value, "a positive integer")?,
            "max_blocks" => self.max_blocks = parse_num(key, value, "a positive integer")?,
            "eval_chunk" => self.eval_chunk = parse_num(key, value, "a positive integer")?,
            "seed" => self.seed = parse_num(key, value, "an unsigned 64-bit integer")?,
            "workers" => self.workers = parse_num(key, value, "a non-negative integer")?,
            "output_dir" => {
                if value.is_empty() {
                    return config_err(key, "must not be empty");
                }
                self.output_dir = PathBuf::from(value)
            }
            "checkpoint" => {
                self.checkpoint = if value.is_empty() {
                    None
                } else {
                    Some(PathBuf::from(value))
                }
            }
            _ => return config_err(key, "unknown key"),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if let Err((key, msg)) = self.optim.validate() {
            return config_err(key, msg);
        }
        if !(self.sgd_lr > 0.0 && self.sgd_lr.is_finite()) {
            return config_err("sgd_lr", "must be positive and finite");
        }
        if self.n_tx == 0 {
            return config_err("n_tx", "must be at least 1");
        }
        if self.n_rx < self.n_tx {
            return config_err("n_rx", format!("must be >= n_tx ({})", self.n_tx));
        }
        let scheme = match ModulationScheme::from_name(&self.modulation) {
            Ok(s) => s,
            Err(e) => return config_err("modulation", e.to_string()),
        };
        if mlsd_candidate_count(&scheme, self.n_tx) > MLSD_MAX_CANDIDATES as u128 {
            return config_err(
                "n_tx",
                format!("exhaustive detection over {} antennas exceeds the candidate cap", self.n_tx),
            );
        }
        if self.schedule.is_empty() {
            return config_err("schedule", "needs at least one task");
        }
        if let Some(bad) = self.schedule.iter().find(|m| !m.is_valid()) {
            return config_err("schedule", format!("invalid K specification {bad}"));
        }
        if !self.train_ebn0_db.is_finite() {
            return config_err("train_ebn0_db", "must be finite");
        }
        if self.batch_size == 0 {
            return config_err("batch_size", "must be at least 1");
        }
        if self.iterations == 0 {
            return config_err("iterations", "must be at least 1");
        }
        if self.eval_k.is_empty() || self.eval_k.iter().any(|k| !(*k >= 0.0 && k.is_finite())) {
            return config_err("eval_k", "needs one or more finite K >= 0");
        }
        if self.ebn0_db.is_empty() || self.ebn0_db.iter().any(|e| !e.is_finite()) {
            return config_err("ebn0_db", "needs one or more finite values");
        }
        if self.min_bit_errors == 0 {
            return config_err("min_bit_errors", "must be at least 1");
        }
        if self.max_blocks == 0 {
            return config_err("max_blocks", "must be at least 1");
        }
        if self.eval_chunk == 0 {
            return config_err("eval_chunk", "must be at least 1");
        }
        Ok(())
    }

    pub fn scheme(&self) -> ModulationScheme {
        ModulationScheme::from_name(&self.modulation).expect("validated modulation")
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint
            .clone()
            .unwrap_or_else(|| self.output_dir.join("model.ckpt"))
    }

    pub fn effective_workers(&self) -> usize {
        if self.workers > 0 {
            self.workers
        } else {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        }
    }

    fn value_of(&self, key: &str) -> String {
        match key {
            "experiment" => self.experiment.tag().into(),
            "optimizer" => self.optimizer.tag().into(),
            "eta_i" => self.optim.eta_i.to_string(),
            "eta_l" => self.optim.eta_l.to_string(),
            "lambda" => self.optim.lambda.to_string(),
            "beta" => self.optim.beta.to_string(),
            "beta1" => self.optim.beta1.to_string(),
            "beta2" => self.optim.beta2.to_string(),
            "epsilon" => self.optim.epsilon.to_string(),
            "sgd_lr" => self.sgd_lr.to_string(),
            "n_tx" => self.n_tx.to_string(),
            "n_rx" => self.n_rx.to_string(),
            "modulation" => self.modulation.clone(),
            "schedule" => join(&self.schedule),
            "train_ebn0_db" => self.train_ebn0_db.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "iterations" => self.iterations.to_string(),
            "eval_k" => join(&self.eval_k),
            "ebn0_db" => join(&self.ebn0_db),
            "min_bit_errors" => self.min_bit_errors.to_string(),
            "max_blocks" => self.max_blocks.to_string(),
            "eval_chunk" => self.eval_chunk.to_string(),
            "seed" => self.seed.to_string(),
            "workers" => self.workers.to_string(),
            "output_dir" => self.output_dir.display().to_string(),
            "checkpoint" => self
                .checkpoint
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default(),
            _ => unreachable!("unknown key {key}"),
        }
    }

    /// Every key with its effective value; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            writeln!(out, "{key} = {}", self.value_of(key)).expect("string write");
        }
        out
    }

    /// [`Self::to_text`] with every line prefixed by `# `, for embedding in
    /// CSV and SVG outputs.
    pub fn to_comment_block(&self) -> String {
        self.to_text().lines().map(|l| format!("# {l}\n")).collect()
    }
}
