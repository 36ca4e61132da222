//! The round loop: embed, cluster, train, validate, early-stop.

use std::collections::BTreeSet;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;

use super::mine::mine_triplets;
use super::train::{ce_epoch, labeled_pool};
use super::{AdaptConfig, AdaptError, RoundRecord, RunHistory, StopReason};
use crate::data::Dataset;
use crate::metrics::{purity, ConfusionMatrix};
use crate::nn::{triplet_backward_batch, Model, ModelGrads, SgdOptimizer};
use crate::seeding::{stream_rng, SALT_MINE, SALT_TRAIN, SALT_VALSPLIT};
use crate::wsclust::{run_pipeline, ClusteringVariant};
use crate::ClassProportions;

/// Which samples validation mDice is computed on.
///
/// Preferred: a stratified `val_fraction` share of the labeled target
/// samples. When those are too scarce (any class below two members) or
/// `val_fraction` is zero, a stratified 10% source holdout substitutes;
/// that holdout is then excluded from all training pools.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationPlan {
    /// Dataset indices scored for validation mDice.
    pub val: Vec<usize>,
    pub val_labels: Vec<usize>,
    /// False when the source-holdout fallback is active.
    pub from_target: bool,
}

const SOURCE_HOLDOUT_FRACTION: f64 = 0.1;

fn stratified_pick(
    ds: &Dataset,
    indices: &[usize],
    fraction: f64,
    seed: u64,
) -> Result<Vec<usize>, AdaptError> {
    let mut rng = stream_rng(seed, SALT_VALSPLIT, 0);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.num_classes()];
    for &i in indices {
        let label = ds.samples()[i].label.expect("stratified over labeled samples");
        by_class[label].push(i);
    }
    let mut picked = Vec::new();
    for members in &mut by_class {
        if members.is_empty() {
            continue;
        }
        members.shuffle(&mut rng);
        let want = (fraction * members.len() as f64).round() as usize;
        let take = want.min(members.len() - 1).max(usize::from(members.len() > 1));
        picked.extend(&members[..take]);
    }
    picked.sort_unstable();
    if picked.is_empty() {
        return Err(AdaptError::InvalidArgument(
            "not enough labeled samples to form a validation set".into(),
        ));
    }
    Ok(picked)
}

/// Resolves the validation split for a run. Deterministic in the dataset
/// and config, so every stage of a run (pretraining, baselines, the
/// adaptation loop) reconstructs the identical plan.
pub fn validation_plan(ds: &Dataset, cfg: &AdaptConfig) -> Result<ValidationPlan, AdaptError> {
    cfg.validate()?;
    let target = ds.target_labeled();
    let mut class_counts = vec![0usize; ds.num_classes()];
    for &i in &target {
        class_counts[ds.samples()[i].label.expect("target_labeled is labeled")] += 1;
    }
    let target_viable =
        cfg.val_fraction > 0.0 && class_counts.iter().all(|&c| c >= 2);

    let (val, from_target) = if target_viable {
        (
            stratified_pick(ds, &target, cfg.val_fraction, cfg.train.seed)?,
            true,
        )
    } else {
        (
            stratified_pick(
                ds,
                &ds.source_train(),
                SOURCE_HOLDOUT_FRACTION,
                cfg.train.seed,
            )?,
            false,
        )
    };
    let val_labels = ds
        .labels_of(&val)
        .into_iter()
        .map(|l| l.expect("validation samples are labeled"))
        .collect();
    Ok(ValidationPlan {
        val,
        val_labels,
        from_target,
    })
}

/// The clustered target pool: all target train samples minus held-out
/// validation rows, in dataset order.
struct TargetPool {
    indices: Vec<usize>,
    labels: Vec<Option<usize>>,
    features: Array2<f64>,
    unlabeled_count: usize,
}

fn target_pool(ds: &Dataset, exclude: &BTreeSet<usize>) -> TargetPool {
    let mut indices = ds.target_train();
    indices.retain(|i| !exclude.contains(i));
    let labels = ds.labels_of(&indices);
    let unlabeled_count = labels.iter().filter(|l| l.is_none()).count();
    TargetPool {
        features: ds.features_matrix(&indices),
        indices,
        labels,
        unlabeled_count,
    }
}

fn proportions_of(pool: &TargetPool, num_classes: usize) -> Result<ClassProportions, AdaptError> {
    let mut counts = vec![0usize; num_classes];
    for label in pool.labels.iter().flatten() {
        counts[*label] += 1;
    }
    Ok(ClassProportions::from_counts(&counts)?)
}

fn val_mdice(
    model: &Model,
    num_classes: usize,
    features: &Array2<f64>,
    labels: &[usize],
) -> Result<f64, AdaptError> {
    let preds = model.predict_batch(features)?;
    let cm = ConfusionMatrix::from_pairs(num_classes, labels.iter().copied().zip(preds))
        .map_err(|e| AdaptError::InvalidArgument(e.to_string()))?;
    Ok(cm.mdice().unwrap_or(0.0))
}

enum RoundMode {
    /// Clustering + CE + triplet rounds, with the given pipeline prefix.
    Adapt(ClusteringVariant),
    /// CE-only rounds; no clustering, no mining.
    CeOnly,
}

/// The adaptation loop. Per round: embed the target pool with the current
/// encoder, re-cluster, run `epochs_per_round` combined CE + triplet
/// epochs, then score validation mDice. Returns the best snapshot by
/// validation mDice together with the full per-round history.
pub fn adapt(
    model: &Model,
    ds: &Dataset,
    cfg: &AdaptConfig,
) -> Result<(Model, RunHistory), AdaptError> {
    run_rounds(model, ds, cfg, RoundMode::Adapt(ClusteringVariant::Full))
}

/// [`adapt`] with a truncated clustering pipeline, for ablation studies.
pub fn adapt_with_variant(
    model: &Model,
    ds: &Dataset,
    cfg: &AdaptConfig,
    variant: ClusteringVariant,
) -> Result<(Model, RunHistory), AdaptError> {
    run_rounds(model, ds, cfg, RoundMode::Adapt(variant))
}

/// The same round/early-stopping schedule as [`adapt`] but with plain
/// cross-entropy only: the S+T baseline trained under identical budgets.
pub fn fine_tune_ce(
    model: &Model,
    ds: &Dataset,
    cfg: &AdaptConfig,
) -> Result<(Model, RunHistory), AdaptError> {
    run_rounds(model, ds, cfg, RoundMode::CeOnly)
}

fn run_rounds(
    model: &Model,
    ds: &Dataset,
    cfg: &AdaptConfig,
    mode: RoundMode,
) -> Result<(Model, RunHistory), AdaptError> {
    cfg.validate()?;
    let mut model = model.clone();
    model.validate()?;
    if model.input_dim() != ds.dim() || model.num_classes() != ds.num_classes() {
        return Err(AdaptError::InvalidArgument(format!(
            "model is {}d/{} classes but the dataset is {}d/{} classes",
            model.input_dim(),
            model.num_classes(),
            ds.dim(),
            ds.num_classes()
        )));
    }

    let plan = validation_plan(ds, cfg)?;
    let exclude: BTreeSet<usize> = plan.val.iter().copied().collect();
    let val_features = ds.features_matrix(&plan.val);
    let ce = labeled_pool(ds, &exclude, true);
    if ce.len() == 0 {
        return Err(AdaptError::InvalidArgument(
            "no labeled training samples left after the validation holdout".into(),
        ));
    }

    let pool = target_pool(ds, &exclude);
    let variant = match mode {
        RoundMode::Adapt(v) => Some(v),
        RoundMode::CeOnly => None,
    };
    let proportions = if variant.is_some() {
        if pool.indices.is_empty() {
            return Err(AdaptError::InvalidArgument(
                "no target training samples to cluster".into(),
            ));
        }
        Some(proportions_of(&pool, ds.num_classes())?)
    } else {
        None
    };
    // Ground truth for purity diagnostics, only when the whole pool has it.
    let pool_truths: Option<Vec<usize>> = ds
        .eval_view()
        .truths_of(&pool.indices)
        .into_iter()
        .collect();

    let mut opt = SgdOptimizer::new(cfg.train.learning_rate, cfg.train.momentum);
    let mut rng_train = stream_rng(cfg.train.seed, SALT_TRAIN, 1);

    let mut rounds: Vec<RoundRecord> = Vec::new();
    let mut best: Option<(f64, Model, usize)> = None;
    let mut rounds_since_best = 0usize;
    let mut stop = StopReason::MaxRounds;

    let fail = |round: usize, source: AdaptError, rounds: Vec<RoundRecord>, best: &Option<(f64, Model, usize)>| {
        AdaptError::RoundFailed {
            round,
            source: Box::new(source),
            history: Box::new(RunHistory {
                rounds,
                best_round: best.as_ref().map_or(0, |(_, _, r)| *r),
                best_val_mdice: best.as_ref().map_or(0.0, |(m, _, _)| *m),
                stop: StopReason::Incomplete,
            }),
        }
    };

    for round in 1..=cfg.max_rounds {
        let clustering = if let Some(variant) = variant {
            let embeddings = match model.embed_batch(&pool.features) {
                Ok(e) => e,
                Err(e) => return Err(fail(round, e.into(), rounds, &best)),
            };
            let result = run_pipeline(
                variant,
                &embeddings,
                &pool.labels,
                proportions.as_ref().expect("proportions exist in adapt mode"),
                pool.unlabeled_count,
                &cfg.wsc,
            );
            match result {
                Ok(split) => Some(split.clustering),
                Err(e) => return Err(fail(round, e.into(), rounds, &best)),
            }
        } else {
            None
        };

        let round_purity = match (&clustering, &pool_truths) {
            (Some(c), Some(truths)) => purity(&c.assignments, truths).ok(),
            _ => None,
        };

        let mut rng_mine = stream_rng(cfg.train.seed, SALT_MINE, round as u64);
        let mut ce_losses = Vec::with_capacity(cfg.train.epochs_per_round);
        let mut triplet_losses = Vec::new();
        let mut epoch_error = None;
        for _ in 0..cfg.train.epochs_per_round {
            let hook = |m: &Model| -> Result<Option<(f64, ModelGrads)>, AdaptError> {
                let Some(clustering) = &clustering else {
                    return Ok(None);
                };
                if cfg.train.lambda == 0.0 {
                    return Ok(None);
                }
                let triplets = match mine_triplets(
                    clustering,
                    &pool.labels,
                    cfg.train.triplets_per_step,
                    &mut rng_mine,
                ) {
                    Ok(t) => t,
                    Err(AdaptError::NoEligibleCluster) => return Ok(None),
                    Err(e) => return Err(e),
                };
                let gather = |pick: fn(&super::Triplet) -> usize| {
                    let rows: Vec<usize> = triplets.iter().map(pick).collect();
                    pool.features.select(Axis(0), &rows)
                };
                let anchors = gather(|t| t.anchor);
                let positives = gather(|t| t.positive);
                let negatives = gather(|t| t.negative);
                let (loss, mut grads) =
                    triplet_backward_batch(m, &anchors, &positives, &negatives, cfg.train.margin)?;
                grads.scale(cfg.train.lambda);
                Ok(Some((loss, grads)))
            };
            match ce_epoch(
                &mut model,
                &mut opt,
                &ce,
                cfg.train.batch_size_ce,
                &mut rng_train,
                hook,
            ) {
                Ok((ce_loss, triplet_loss)) => {
                    ce_losses.push(ce_loss);
                    if let Some(t) = triplet_loss {
                        triplet_losses.push(t);
                    }
                }
                Err(e) => {
                    epoch_error = Some(e);
                    break;
                }
            }
        }
        if let Some(e) = epoch_error {
            return Err(fail(round, e, rounds, &best));
        }

        let mdice = match val_mdice(&model, ds.num_classes(), &val_features, &plan.val_labels) {
            Ok(m) => m,
            Err(e) => return Err(fail(round, e, rounds, &best)),
        };

        rounds.push(RoundRecord {
            round,
            loss_ce: mean(&ce_losses),
            loss_triplet: (!triplet_losses.is_empty()).then(|| mean(&triplet_losses)),
            val_mdice: mdice,
            k: clustering.as_ref().map(|c| c.k()),
            purity: round_purity,
        });

        if best.as_ref().is_none_or(|(b, _, _)| mdice > *b) {
            best = Some((mdice, model.clone(), round));
            rounds_since_best = 0;
        } else {
            rounds_since_best += 1;
            if rounds_since_best >= cfg.patience {
                stop = StopReason::Patience;
                break;
            }
        }
    }

    let (best_val_mdice, best_model, best_round) =
        best.expect("max_rounds >= 1 guarantees a completed round");
    Ok((
        best_model,
        RunHistory {
            rounds,
            best_round,
            best_val_mdice,
            stop,
        },
    ))
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}
