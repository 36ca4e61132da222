//! The adaptation loop: source pretraining, the S+T baseline, triplet
//! mining, and the round-based clustering + training procedure with early
//! stopping on validation mDice.
//!
//! Each round embeds the target training pool with the current encoder,
//! re-clusters the embeddings, then runs a block of combined
//! cross-entropy + triplet epochs. The best model snapshot (by validation
//! mDice) is what a run returns.

mod mine;
mod rounds;
mod train;

pub use mine::{mine_triplets, Triplet};
pub use rounds::{adapt, adapt_with_variant, fine_tune_ce, validation_plan, ValidationPlan};
pub use train::{pretrain_source, train_s_plus_t};

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::DataError;
use crate::nn::{NnError, TrainConfig};
use crate::wsclust::{WscConfig, WscError};

#[derive(Debug, Error)]
pub enum AdaptError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("no cluster contains both labeled and unlabeled samples with unlabeled samples left elsewhere; cannot mine triplets")]
    NoEligibleCluster,
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Clustering(#[from] WscError),
    #[error(transparent)]
    Network(#[from] NnError),
    /// A failure inside the round loop; carries everything recorded up to
    /// the failure point.
    #[error("round {round} failed: {source}")]
    RoundFailed {
        round: usize,
        source: Box<AdaptError>,
        history: Box<RunHistory>,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Everything a full adaptation run needs on top of the training and
/// clustering knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptConfig {
    pub train: TrainConfig,
    pub wsc: WscConfig,
    /// Hard cap on adaptation rounds.
    pub max_rounds: usize,
    /// Rounds without a validation-mDice improvement before stopping.
    pub patience: usize,
    /// Fraction of the labeled target samples held out for validation;
    /// 0 forces the source-holdout fallback.
    pub val_fraction: f64,
    /// Source pretraining runs `epochs_per_round * pretrain_multiplier`
    /// epochs.
    pub pretrain_multiplier: usize,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            wsc: WscConfig::default(),
            max_rounds: 50,
            patience: 5,
            val_fraction: 0.5,
            pretrain_multiplier: 4,
        }
    }
}

impl AdaptConfig {
    pub(crate) fn validate(&self) -> Result<(), AdaptError> {
        self.train.validate()?;
        self.wsc.validate()?;
        if self.max_rounds < 1 {
            return Err(AdaptError::InvalidArgument("max_rounds must be >= 1".into()));
        }
        if self.patience < 1 {
            return Err(AdaptError::InvalidArgument("patience must be >= 1".into()));
        }
        if !(self.val_fraction >= 0.0 && self.val_fraction < 1.0) {
            return Err(AdaptError::InvalidArgument(format!(
                "val_fraction must be in [0, 1), got {}",
                self.val_fraction
            )));
        }
        if self.pretrain_multiplier < 1 {
            return Err(AdaptError::InvalidArgument(
                "pretrain_multiplier must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// One row of the per-round log. `loss_triplet`, `k` and `purity` are
/// absent for CE-only runs (and `purity` additionally requires ground
/// truth for the whole clustered pool).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub loss_ce: f64,
    pub loss_triplet: Option<f64>,
    pub val_mdice: f64,
    pub k: Option<usize>,
    pub purity: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    /// `patience` rounds passed without improvement.
    Patience,
    /// The `max_rounds` cap was reached.
    MaxRounds,
    /// The run failed; the history covers completed rounds only.
    Incomplete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHistory {
    pub rounds: Vec<RoundRecord>,
    /// 1-based round of the returned snapshot; 0 if no round completed.
    pub best_round: usize,
    pub best_val_mdice: f64,
    pub stop: StopReason,
}

impl RunHistory {
    fn fmt_opt<T: ToString>(v: &Option<T>) -> String {
        v.as_ref().map(T::to_string).unwrap_or_default()
    }

    /// Flat plot-ready form, one row per round.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("round,loss_ce,loss_triplet,val_mdice,k,purity\n");
        for r in &self.rounds {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.round,
                r.loss_ce,
                Self::fmt_opt(&r.loss_triplet),
                r.val_mdice,
                Self::fmt_opt(&r.k),
                Self::fmt_opt(&r.purity),
            ));
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), AdaptError> {
        let path = path.as_ref();
        fs::write(path, self.to_csv_string()).map_err(|source| AdaptError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}
