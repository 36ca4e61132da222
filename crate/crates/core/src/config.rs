//! Flat key=value run configuration with CLI-flag overrides.
//!
//! Every knob of a run lives under one snake_case key; the same keys work
//! as `--kebab-case` flags, and flags win over the file named by
//! `--config`. The resolved config is echoed into every output artifact.

use std::fmt;
use std::fs;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapt::AdaptConfig;
use crate::data::{AffineShift, SynthConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    /// Every problem found, one per line; nothing was applied.
    #[error("{}", errors.join("\n"))]
    Invalid { errors: Vec<String> },
    #[error("cannot read config file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "gen-data")]
    GenData,
    #[serde(rename = "s")]
    S,
    #[serde(rename = "s+t")]
    SPlusT,
    #[serde(rename = "adapt")]
    Adapt,
    #[serde(rename = "ablate")]
    Ablate,
    #[serde(rename = "eval")]
    Eval,
    #[serde(rename = "report")]
    Report,
}

impl Mode {
    pub const ALL: [Mode; 7] = [
        Mode::GenData,
        Mode::S,
        Mode::SPlusT,
        Mode::Adapt,
        Mode::Ablate,
        Mode::Eval,
        Mode::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::GenData => "gen-data",
            Mode::S => "s",
            Mode::SPlusT => "s+t",
            Mode::Adapt => "adapt",
            Mode::Ablate => "ablate",
            Mode::Eval => "eval",
            Mode::Report => "report",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                format!(
                    "'{s}' is not a mode (expected one of {})",
                    Mode::ALL.map(Mode::name).join(", ")
                )
            })
    }
}

/// The fully resolved settings of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub mode: Mode,
    pub seed: u64,
    /// All outputs land under this directory.
    pub out: PathBuf,
    /// Existing dataset CSV; when set, synthesis is skipped.
    pub data: Option<PathBuf>,
    /// Checkpoint to score (`eval` mode).
    pub checkpoint: Option<PathBuf>,
    /// Metric files or run directories to aggregate (`report` mode),
    /// comma-separated on the command line.
    pub inputs: Vec<PathBuf>,

    // Synthetic data.
    pub classes: usize,
    pub dim: usize,
    pub n_max: usize,
    pub pareto_alpha: f64,
    pub class_separation: f64,
    pub noise_sigma: f64,
    pub shift_angle_deg: f64,
    /// Translation applied by the domain shift, in units of `noise_sigma`.
    pub shift_offset_sigmas: f64,
    pub labeled_fraction: f64,

    // Model shape.
    pub hidden_dim: usize,
    pub embed_dim: usize,

    // Clustering.
    pub k: usize,
    pub must_penalty: f64,
    pub kmeans_max_iter: usize,
    pub kmeans_restarts: usize,
    pub tol: f64,

    // Training.
    pub margin: f64,
    pub lambda: f64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size_ce: usize,
    pub triplets_per_step: usize,
    pub epochs_per_round: usize,

    // Adaptation loop.
    pub max_rounds: usize,
    pub patience: usize,
    pub val_fraction: f64,
    pub pretrain_multiplier: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let adapt = AdaptConfig::default();
        Self {
            mode: Mode::Adapt,
            seed: 0,
            out: PathBuf::from("runs"),
            data: None,
            checkpoint: None,
            inputs: Vec::new(),
            classes: 3,
            dim: 2,
            n_max: 600,
            pareto_alpha: 1.0,
            class_separation: 4.0,
            noise_sigma: 1.5,
            shift_angle_deg: 30.0,
            shift_offset_sigmas: 2.0,
            labeled_fraction: 0.02,
            hidden_dim: 64,
            embed_dim: 32,
            k: adapt.wsc.k,
            must_penalty: adapt.wsc.must_penalty,
            kmeans_max_iter: adapt.wsc.kmeans_max_iter,
            kmeans_restarts: adapt.wsc.kmeans_restarts,
            tol: adapt.wsc.tol,
            margin: adapt.train.margin,
            lambda: adapt.train.lambda,
            learning_rate: adapt.train.learning_rate,
            momentum: adapt.train.momentum,
            batch_size_ce: adapt.train.batch_size_ce,
            triplets_per_step: adapt.train.triplets_per_step,
            epochs_per_round: adapt.train.epochs_per_round,
            max_rounds: adapt.max_rounds,
            patience: adapt.patience,
            val_fraction: adapt.val_fraction,
            pretrain_multiplier: adapt.pretrain_multiplier,
        }
    }
}

/// All recognized keys, for suggestions on typos.
const KEYS: &[&str] = &[
    "mode",
    "seed",
    "out",
    "data",
    "checkpoint",
    "inputs",
    "classes",
    "dim",
    "n_max",
    "pareto_alpha",
    "class_separation",
    "noise_sigma",
    "shift_angle_deg",
    "shift_offset_sigmas",
    "labeled_fraction",
    "hidden_dim",
    "embed_dim",
    "k",
    "must_penalty",
    "kmeans_max_iter",
    "kmeans_restarts",
    "tol",
    "margin",
    "lambda",
    "learning_rate",
    "momentum",
    "batch_size_ce",
    "triplets_per_step",
    "epochs_per_round",
    "max_rounds",
    "patience",
    "val_fraction",
    "pretrain_multiplier",
];

fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    for (i, &ca) in a.iter().enumerate() {
        let mut row = vec![i + 1];
        for (j, &cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            row.push(sub.min(prev[j + 1] + 1).min(row[j] + 1));
        }
        prev = row;
    }
    prev[b.len()]
}

fn nearest_key(key: &str) -> &'static str {
    KEYS.iter()
        .copied()
        .min_by_key(|k| levenshtein(key, k))
        .expect("key table is nonempty")
}

fn parse_as<T: FromStr>(key: &str, value: &str, what: &str) -> Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("key '{key}': expected {what}, got '{value}'"))
}

impl RunConfig {
    fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        match key {
            "mode" => self.mode = value.parse()?,
            "seed" => self.seed = parse_as(key, value, "an unsigned integer")?,
            "out" => self.out = PathBuf::from(value),
            "data" => self.data = Some(PathBuf::from(value)),
            "checkpoint" => self.checkpoint = Some(PathBuf::from(value)),
            "inputs" => {
                self.inputs = value
                    .split(',')
                    .filter(|s| !s.is_empty())
                    .map(PathBuf::from)
                    .collect();
            }
            "classes" => self.classes = parse_as(key, value, "an unsigned integer")?,
            "dim" => self.dim = parse_as(key, value, "an unsigned integer")?,
            "n_max" => self.n_max = parse_as(key, value, "an unsigned integer")?,
            "pareto_alpha" => self.pareto_alpha = parse_as(key, value, "a number")?,
            "class_separation" => self.class_separation = parse_as(key, value, "a number")?,
            "noise_sigma" => self.noise_sigma = parse_as(key, value, "a number")?,
            "shift_angle_deg" => self.shift_angle_deg = parse_as(key, value, "a number")?,
            "shift_offset_sigmas" => {
                self.shift_offset_sigmas = parse_as(key, value, "a number")?;
            }
            "labeled_fraction" => self.labeled_fraction = parse_as(key, value, "a number")?,
            "hidden_dim" => self.hidden_dim = parse_as(key, value, "an unsigned integer")?,
            "embed_dim" => self.embed_dim = parse_as(key, value, "an unsigned integer")?,
            "k" => self.k = parse_as(key, value, "an unsigned integer")?,
            "must_penalty" => self.must_penalty = parse_as(key, value, "a number")?,
            "kmeans_max_iter" => {
                self.kmeans_max_iter = parse_as(key, value, "an unsigned integer")?;
            }
            "kmeans_restarts" => {
                self.kmeans_restarts = parse_as(key, value, "an unsigned integer")?;
            }
            "tol" => self.tol = parse_as(key, value, "a number")?,
            "margin" => self.margin = parse_as(key, value, "a number")?,
            "lambda" => self.lambda = parse_as(key, value, "a number")?,
            "learning_rate" => self.learning_rate = parse_as(key, value, "a number")?,
            "momentum" => self.momentum = parse_as(key, value, "a number")?,
            "batch_size_ce" => self.batch_size_ce = parse_as(key, value, "an unsigned integer")?,
            "triplets_per_step" => {
                self.triplets_per_step = parse_as(key, value, "an unsigned integer")?;
            }
            "epochs_per_round" => {
                self.epochs_per_round = parse_as(key, value, "an unsigned integer")?;
            }
            "max_rounds" => self.max_rounds = parse_as(key, value, "an unsigned integer")?,
            "patience" => self.patience = parse_as(key, value, "an unsigned integer")?,
            "val_fraction" => self.val_fraction = parse_as(key, value, "a number")?,
            "pretrain_multiplier" => {
                self.pretrain_multiplier = parse_as(key, value, "an unsigned integer")?;
            }
            _ => {
                return Err(format!(
                    "unknown key '{key}' (did you mean '{}'?)",
                    nearest_key(key)
                ));
            }
        }
        Ok(())
    }

    /// Parses a flat `key = value` file. `#` starts a comment; blank lines
    /// are skipped. All errors are collected before giving up.
    pub fn apply_file(&mut self, path: &std::path::Path) -> Result<(), ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut errors = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                errors.push(format!(
                    "{}:{}: expected 'key = value', got '{line}'",
                    path.display(),
                    lineno + 1
                ));
                continue;
            };
            if let Err(e) = self.set(key.trim(), value.trim()) {
                errors.push(format!("{}:{}: {e}", path.display(), lineno + 1));
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid { errors })
        }
    }

    /// Resolves a config from command-line arguments (without the program
    /// name): defaults, then the `--config` file if given, then the
    /// remaining flags in order. Flags use the kebab-case key names.
    pub fn from_args(args: &[String]) -> Result<Self, ConfigError> {
        let mut pairs: Vec<(String, String)> = Vec::new();
        let mut config_file: Option<PathBuf> = None;
        let mut errors = Vec::new();

        let mut it = args.iter();
        while let Some(arg) = it.next() {
            let Some(name) = arg.strip_prefix("--") else {
                errors.push(format!(
                    "unexpected argument '{arg}' (options look like --key value)"
                ));
                continue;
            };
            let (name, value) = match name.split_once('=') {
                Some((n, v)) => (n.to_string(), Some(v.to_string())),
                None => (name.to_string(), it.next().cloned()),
            };
            let Some(value) = value else {
                errors.push(format!("flag --{name} is missing a value"));
                continue;
            };
            if name == "config" {
                if config_file.is_some() {
                    errors.push("--config given more than once".into());
                }
                config_file = Some(PathBuf::from(value));
            } else {
                pairs.push((name.replace('-', "_"), value));
            }
        }

        let mut cfg = RunConfig::default();
        if let Some(path) = config_file {
            match cfg.apply_file(&path) {
                Ok(()) => {}
                Err(ConfigError::Invalid { errors: file_errors }) => errors.extend(file_errors),
                Err(io) => return Err(io),
            }
        }
        for (key, value) in &pairs {
            if let Err(e) = cfg.set(key, value) {
                errors.push(e);
            }
        }
        if errors.is_empty() {
            Ok(cfg)
        } else {
            Err(ConfigError::Invalid { errors })
        }
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            num_classes: self.classes,
            dim: self.dim,
            n_max: self.n_max,
            pareto_alpha: self.pareto_alpha,
            class_separation: self.class_separation,
            domain_shift: AffineShift::rotation(
                self.dim,
                self.shift_angle_deg,
                self.shift_offset_sigmas * self.noise_sigma,
            ),
            noise_sigma: self.noise_sigma,
            seed: self.seed,
        }
    }

    pub fn adapt_config(&self) -> AdaptConfig {
        let mut cfg = AdaptConfig::default();
        cfg.train.margin = self.margin;
        cfg.train.lambda = self.lambda;
        cfg.train.learning_rate = self.learning_rate;
        cfg.train.momentum = self.momentum;
        cfg.train.batch_size_ce = self.batch_size_ce;
        cfg.train.triplets_per_step = self.triplets_per_step;
        cfg.train.epochs_per_round = self.epochs_per_round;
        cfg.train.seed = self.seed;
        cfg.wsc.k = self.k;
        cfg.wsc.must_penalty = self.must_penalty;
        cfg.wsc.kmeans_max_iter = self.kmeans_max_iter;
        cfg.wsc.kmeans_restarts = self.kmeans_restarts;
        cfg.wsc.tol = self.tol;
        cfg.wsc.seed = self.seed;
        cfg.max_rounds = self.max_rounds;
        cfg.patience = self.patience;
        cfg.val_fraction = self.val_fraction;
        cfg.pretrain_multiplier = self.pretrain_multiplier;
        cfg
    }

    /// Encoder layer widths, input to embedding.
    pub fn model_dims(&self) -> Vec<usize> {
        vec![self.dim, self.hidden_dim, self.embed_dim]
    }
}
