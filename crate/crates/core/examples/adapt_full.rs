//! The full method end to end: source pretraining, then rounds of
//! embedding-space clustering feeding a triplet loss trained jointly with
//! cross-entropy, early-stopped on validation mDice.
//!
//!     cargo run --release --example adapt_full

use cluster_adapt::adapt::{adapt, pretrain_source, AdaptConfig};
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

    let mut cfg = AdaptConfig::default();
    cfg.train.seed = seed;
    cfg.wsc.seed = seed;

    let model = Model::new(&[ds.dim(), 64, 32], ds.num_classes(), seed)?;
    let (pretrained, _) = pretrain_source(&model, &ds, &cfg)?;
    let (adapted, history) = adapt(&pretrained, &ds, &cfg)?;

    println!("round    ce-loss   triplet-loss   val-mdice    k   purity");
    for r in &history.rounds {
        let triplet = r
            .loss_triplet
            .map(|l| format!("{l:>12.4}"))
            .unwrap_or_else(|| format!("{:>12}", "-"));
        let k = r.k.map(|k| format!("{k:>4}")).unwrap_or_else(|| format!("{:>4}", "-"));
        let purity = r
            .purity
            .map(|p| format!("{p:>8.3}"))
            .unwrap_or_else(|| format!("{:>8}", "-"));
        println!(
            "{:>5} {:>10.4} {triplet} {:>11.4} {k} {purity}",
            r.round, r.loss_ce, r.val_mdice
        );
    }
    println!(
        "\nbest round {} (val mdice {:.4}), stopped by {:?}",
        history.best_round, history.best_val_mdice, history.stop
    );
    println!("\n{}", target_test_report("Adapt", &adapted, &ds)?);
    Ok(())
}
