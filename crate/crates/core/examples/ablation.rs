//! Ablation over the clustering pipeline: adaptation with plain k-means
//! (KM), with soft-constrained refinement (SoftConst), and with the full
//! pipeline including proportion-based splitting (Full). Everything else —
//! pretrained weights, budgets, seeds — is held identical.
//!
//!     cargo run --release --example ablation

use cluster_adapt::adapt::{adapt_with_variant, pretrain_source, AdaptConfig};
use cluster_adapt::data::{generate_synthetic, split_target, Dataset, Domain, Split, SynthConfig};
use cluster_adapt::metrics::ConfusionMatrix;
use cluster_adapt::nn::Model;
use cluster_adapt::wsclust::ClusteringVariant;

fn target_test_scores(
    model: &Model,
    ds: &Dataset,
) -> Result<(f64, f64), Box<dyn std::error::Error>> {
    let view = ds.eval_view();
    let scored: Vec<usize> = ds
        .split_of(Domain::Target, Split::Test)
        .into_iter()
        .filter(|&i| view.truth(i).is_some())
        .collect();
    let preds = model.predict_batch(&ds.features_matrix(&scored))?;
    let truths = scored.iter().map(|&i| view.truth(i).expect("filtered"));
    let cm = ConfusionMatrix::from_pairs(ds.num_classes(), truths.zip(preds))?;
    Ok((cm.mdice().unwrap_or(0.0), cm.midice().unwrap_or(0.0)))
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed = 11;
    let full = generate_synthetic(&SynthConfig::benchmark(seed))?;
    let ds = split_target(&full, 0.02, seed)?;

    let mut cfg = AdaptConfig::default();
    cfg.train.seed = seed;
    cfg.wsc.seed = seed;

    let model = Model::new(&[ds.dim(), 64, 32], ds.num_classes(), seed)?;
    let (pretrained, _) = pretrain_source(&model, &ds, &cfg)?;

    println!("variant    rounds  best-val-mdice  test-mdice  test-midice  purity");
    for variant in ClusteringVariant::ALL {
        let (adapted, history) = adapt_with_variant(&pretrained, &ds, &cfg, variant)?;
        let (mdice, midice) = target_test_scores(&adapted, &ds)?;
        let purity = history
            .rounds
            .get(history.best_round.saturating_sub(1))
            .and_then(|r| r.purity)
            .map(|p| format!("{p:.3}"))
            .unwrap_or_else(|| "-".into());
        println!(
            "{:<9} {:>6} {:>15.4} {mdice:>11.4} {midice:>12.4}  {purity}",
            variant.tag(),
            history.rounds.len(),
            history.best_val_mdice,
        );
    }
    Ok(())
}
