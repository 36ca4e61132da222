//! Cluster-guided semi-supervised domain adaptation for class-imbalanced
//! classification over feature vectors.
//!
//! The library covers the full experimental loop:
//!
//! - [`data`] — dataset representation, CSV ingestion, synthetic
//!   shifted-Gaussian generation with Pareto class imbalance, and
//!   labeled/unlabeled target splitting.
//! - [`wsclust`] — weakly-supervised clustering: k-means initialization,
//!   soft-constrained refinement of conflicting clusters, and
//!   proportion-based splitting.
//! - [`nn`] — a small MLP encoder + linear classifier with hand-written
//!   backpropagation, cross-entropy and cluster triplet losses, and
//!   momentum SGD.
//! - [`adapt`] — source pretraining, the S+T baseline, triplet mining and
//!   the clustering/training adaptation loop with early stopping.
//! - [`metrics`] — confusion matrix, per-class Dice, mDice/MiDice and
//!   cluster purity.
//! - [`config`] / [`driver`] — flat key-value configuration and the
//!   experiment driver behind the `cluster-adapt` binary.
//!
//! See the crate examples (`cargo run --release --example <name>`) for
//! runnable walkthroughs of each capability.

pub mod adapt;
pub mod config;
pub mod data;
pub mod driver;
pub mod metrics;
pub mod nn;
pub mod wsclust;

pub(crate) mod seeding;

pub use adapt::{AdaptConfig, RunHistory};
pub use config::{Mode, RunConfig};
pub use data::{
    AffineShift, ClassProportions, DataError, Dataset, Domain, EvalView, Sample, Split,
    SynthConfig,
};
pub use metrics::{ConfusionMatrix, MetricReport};
pub use nn::{Model, TrainConfig};
pub use wsclust::{Clustering, ClusteringVariant, ConstraintSet, SplitResult, WscConfig};
