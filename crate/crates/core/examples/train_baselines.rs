//! Trains the two supervised baselines and scores them on the target test
//! split: S (source-only pretraining) and S+T (pretraining followed by
//! fine-tuning on source plus the few labeled target samples).
//!
//!     cargo run --release --example train_baselines

use cluster_adapt::adapt::{fine_tune_ce, pretrain_source, AdaptConfig};
use cluster_adapt::data::{generate_synthetic, split_target, Dataset, Domain, Split, SynthConfig};
use cluster_adapt::metrics::{ConfusionMatrix, MetricReport};
use cluster_adapt::nn::Model;

fn target_test_report(
    method: &str,
    model: &Model,
    ds: &Dataset,
) -> Result<MetricReport, Box<dyn std::error::Error>> {
    let view = ds.eval_view();
    let scored: Vec<usize> = ds
        .split_of(Domain::Target, Split::Test)
        .into_iter()
        .filter(|&i| view.truth(i).is_some())
        .collect();
    let preds = model.predict_batch(&ds.features_matrix(&scored))?;
    let truths = scored.iter().map(|&i| view.truth(i).expect("filtered"));
    let cm = ConfusionMatrix::from_pairs(ds.num_classes(), truths.zip(preds))?;
    Ok(MetricReport::from_confusion(method, &cm))
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed = 3;
    let full = generate_synthetic(&SynthConfig::benchmark(seed))?;
    let ds = split_target(&full, 0.02, seed)?;
    println!(
        "{} source train, {} labeled target, {} unlabeled target",
        ds.source_train().len(),
        ds.target_labeled().len(),
        ds.target_unlabeled().len()
    );

    let mut cfg = AdaptConfig::default();
    cfg.train.seed = seed;
    cfg.wsc.seed = seed;

    let model = Model::new(&[ds.dim(), 64, 32], ds.num_classes(), seed)?;
    let (s_model, losses) = pretrain_source(&model, &ds, &cfg)?;
    println!(
        "\npretraining CE loss {:.4} -> {:.4} over {} epochs",
        losses.first().unwrap(),
        losses.last().unwrap(),
        losses.len()
    );
    println!("{}\n", target_test_report("S", &s_model, &ds)?);

    // Same round schedule and early stopping as full adaptation, but plain
    // cross-entropy only — the fair S+T comparison point.
    let (st_model, history) = fine_tune_ce(&s_model, &ds, &cfg)?;
    println!(
        "fine-tuned for {} rounds, best validation mdice {:.4} at round {}",
        history.rounds.len(),
        history.best_val_mdice,
        history.best_round
    );
    println!("{}", target_test_report("S+T", &st_model, &ds)?);
    Ok(())
}
