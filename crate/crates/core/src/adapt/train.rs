//! Cross-entropy training shared by pretraining, the S+T baseline, and the
//! adaptation rounds.

use std::collections::BTreeSet;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use super::rounds::validation_plan;
use super::{AdaptConfig, AdaptError};
use crate::data::Dataset;
use crate::nn::{cross_entropy, Model, ModelGrads, SgdOptimizer};
use crate::seeding::{stream_rng, SALT_TRAIN};

/// Materialized labeled training set for cross-entropy epochs.
pub(crate) struct CePool {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
}

impl CePool {
    pub fn len(&self) -> usize {
        self.labels.len()
    }
}

/// Gathers the labeled training rows: source train plus (optionally) the
/// labeled target train samples, minus any held-out validation indices.
pub(crate) fn labeled_pool(
    ds: &Dataset,
    exclude: &BTreeSet<usize>,
    include_target: bool,
) -> CePool {
    let mut idx = ds.source_train();
    if include_target {
        idx.extend(ds.target_labeled());
    }
    idx.retain(|i| !exclude.contains(i));
    let labels = ds
        .labels_of(&idx)
        .into_iter()
        .map(|l| l.expect("pool samples are labeled"))
        .collect();
    CePool {
        features: ds.features_matrix(&idx),
        labels,
    }
}

/// One shuffled pass over the pool. `step_extra` may add an extra
/// (already-scaled) gradient per step and report its raw loss; the return
/// value pairs the sample-weighted mean CE loss with the mean extra loss
/// over steps that produced one.
pub(crate) fn ce_epoch(
    model: &mut Model,
    opt: &mut SgdOptimizer,
    pool: &CePool,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
    mut step_extra: impl FnMut(&Model) -> Result<Option<(f64, ModelGrads)>, AdaptError>,
) -> Result<(f64, Option<f64>), AdaptError> {
    let n = pool.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);

    let mut ce_sum = 0.0;
    let mut extra_sum = 0.0;
    let mut extra_steps = 0usize;
    for chunk in order.chunks(batch_size) {
        let features = pool.features.select(Axis(0), chunk);
        let labels: Vec<usize> = chunk.iter().map(|&i| pool.labels[i]).collect();
        let (loss, mut grads) = cross_entropy(model, &features, &labels)?;
        ce_sum += loss * chunk.len() as f64;
        if let Some((extra_loss, extra_grads)) = step_extra(model)? {
            grads.axpy(1.0, &extra_grads);
            extra_sum += extra_loss;
            extra_steps += 1;
        }
        opt.step(model, &grads)?;
    }
    let extra = (extra_steps > 0).then(|| extra_sum / extra_steps as f64);
    Ok((ce_sum / n as f64, extra))
}

fn no_extra(_: &Model) -> Result<Option<(f64, ModelGrads)>, AdaptError> {
    Ok(None)
}

/// Cross-entropy pretraining on the labeled source domain, for
/// `epochs_per_round * pretrain_multiplier` epochs. Evaluated as-is this is
/// the S baseline; it is also the starting point for everything else. The
/// validation samples of the canonical plan are never trained on, so later
/// early stopping stays honest even under the source-holdout fallback.
pub fn pretrain_source(
    model: &Model,
    ds: &Dataset,
    cfg: &AdaptConfig,
) -> Result<(Model, Vec<f64>), AdaptError> {
    cfg.validate()?;
    let plan = validation_plan(ds, cfg)?;
    let exclude: BTreeSet<usize> = if plan.from_target {
        BTreeSet::new()
    } else {
        plan.val.iter().copied().collect()
    };
    let pool = labeled_pool(ds, &exclude, false);
    if pool.len() == 0 {
        return Err(AdaptError::InvalidArgument(
            "no labeled source training samples".into(),
        ));
    }

    let mut model = model.clone();
    let mut opt = SgdOptimizer::new(cfg.train.learning_rate, cfg.train.momentum);
    let mut rng = stream_rng(cfg.train.seed, SALT_TRAIN, 0);
    let epochs = cfg.train.epochs_per_round * cfg.pretrain_multiplier;
    let mut losses = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        let (loss, _) = ce_epoch(
            &mut model,
            &mut opt,
            &pool,
            cfg.train.batch_size_ce,
            &mut rng,
            no_extra,
        )?;
        losses.push(loss);
    }
    Ok((model, losses))
}

/// Plain cross-entropy training over the union of labeled source and
/// labeled target samples (the S+T baseline), for the given number of
/// epochs. Starting from a pretrained model, `rounds * epochs_per_round`
/// epochs here follow the exact same batch schedule as an adaptation run
/// with `lambda = 0`, which is what makes the two comparable
/// parameter-for-parameter.
pub fn train_s_plus_t(
    model: &Model,
    ds: &Dataset,
    cfg: &AdaptConfig,
    epochs: usize,
) -> Result<(Model, Vec<f64>), AdaptError> {
    cfg.validate()?;
    let plan = validation_plan(ds, cfg)?;
    let exclude: BTreeSet<usize> = plan.val.iter().copied().collect();
    let pool = labeled_pool(ds, &exclude, true);
    if ds.source_train().is_empty() || ds.target_labeled().is_empty() {
        return Err(AdaptError::InvalidArgument(
            "S+T needs labeled samples from both domains".into(),
        ));
    }

    let mut model = model.clone();
    let mut opt = SgdOptimizer::new(cfg.train.learning_rate, cfg.train.momentum);
    let mut rng = stream_rng(cfg.train.seed, SALT_TRAIN, 1);
    let mut losses = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        let (loss, _) = ce_epoch(
            &mut model,
            &mut opt,
            &pool,
            cfg.train.batch_size_ce,
            &mut rng,
            no_extra,
        )?;
        losses.push(loss);
    }
    Ok((model, losses))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Domain, Sample, Split};

    /// Two well-separated source classes plus a small labeled target set.
    fn two_class_dataset() -> Dataset {
        let mut samples = Vec::new();
        let mut id = 0;
        for c in 0..2usize {
            let center = if c == 0 { -2.0 } else { 2.0 };
            for i in 0..20 {
                let jitter = (i as f64) * 0.01;
                samples.push(Sample {
                    id,
                    features: vec![center + jitter, center - jitter],
                    label: Some(c),
                    domain: Domain::Source,
                    split: Split::Train,
                });
                id += 1;
            }
            for _ in 0..3 {
                samples.push(Sample {
                    id,
                    features: vec![center + 0.5, center],
                    label: Some(c),
                    domain: Domain::Target,
                    split: Split::Train,
                });
                id += 1;
            }
        }
        Dataset::new(samples, 2, 2).unwrap()
    }

    fn quick_cfg(seed: u64) -> AdaptConfig {
        let mut cfg = AdaptConfig::default();
        cfg.train.seed = seed;
        cfg.train.epochs_per_round = 2;
        cfg.pretrain_multiplier = 3;
        cfg.wsc.seed = seed;
        cfg
    }

    #[test]
    fn separable_source_reaches_high_train_accuracy() {
        let ds = two_class_dataset();
        let cfg = quick_cfg(9);
        let model = Model::new(&[2, 16, 8], 2, 9).unwrap();
        let (trained, _) = pretrain_source(&model, &ds, &cfg).unwrap();
        let idx = ds.source_train();
        let preds = trained
            .predict_batch(&ds.features_matrix(&idx))
            .unwrap();
        let labels = ds.labels_of(&idx);
        let correct = preds
            .iter()
            .zip(&labels)
            .filter(|(p, l)| Some(**p) == **l)
            .count();
        assert!(correct as f64 / idx.len() as f64 > 0.95);
    }

    #[test]
    fn pretraining_is_deterministic() {
        let ds = two_class_dataset();
        let cfg = quick_cfg(4);
        let model = Model::new(&[2, 8, 4], 2, 4).unwrap();
        let (a, la) = pretrain_source(&model, &ds, &cfg).unwrap();
        let (b, lb) = pretrain_source(&model, &ds, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(la, lb);
    }

    #[test]
    fn pretraining_loss_curve_trends_down() {
        let ds = two_class_dataset();
        let mut cfg = quick_cfg(11);
        cfg.train.epochs_per_round = 5;
        cfg.pretrain_multiplier = 4;
        let model = Model::new(&[2, 16, 8], 2, 11).unwrap();
        let (_, losses) = pretrain_source(&model, &ds, &cfg).unwrap();
        // Non-increasing within a 5% jitter allowance per step.
        for pair in losses.windows(2) {
            assert!(
                pair[1] <= pair[0] * 1.05 + 1e-12,
                "loss rose from {} to {}",
                pair[0],
                pair[1]
            );
        }
        assert!(losses.last().unwrap() < losses.first().unwrap());
    }

    #[test]
    fn s_plus_t_requires_both_domains() {
        let source_only: Vec<Sample> = two_class_dataset()
            .samples()
            .iter()
            .filter(|s| s.domain == Domain::Source)
            .cloned()
            .collect();
        let ds = Dataset::new(source_only, 2, 2).unwrap();
        let cfg = quick_cfg(0);
        let model = Model::new(&[2, 4], 2, 0).unwrap();
        assert!(matches!(
            train_s_plus_t(&model, &ds, &cfg, 1),
            Err(AdaptError::InvalidArgument(_))
        ));
    }

    #[test]
    fn s_plus_t_is_deterministic() {
        let ds = two_class_dataset();
        let cfg = quick_cfg(6);
        let model = Model::new(&[2, 8, 4], 2, 6).unwrap();
        let (a, _) = train_s_plus_t(&model, &ds, &cfg, 4).unwrap();
        let (b, _) = train_s_plus_t(&model, &ds, &cfg, 4).unwrap();
        assert_eq!(a, b);
    }
}
