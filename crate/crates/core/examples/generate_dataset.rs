//! Synthesizes the imbalanced two-domain benchmark and saves it as CSV.
//!
//! Class sizes follow a Pareto power law, the target domain is a rotated
//! and shifted copy of the source, and only a small fraction of target
//! training samples keep their labels. Run with:
//!
//!     cargo run --example generate_dataset

use std::fs;
use std::path::Path;

use cluster_adapt::data::{
    generate_synthetic, pareto_counts, save_dataset, split_target, AffineShift, Domain, Split,
    SynthConfig,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = SynthConfig {
        num_classes: 3,
        dim: 2,
        n_max: 600,
        pareto_alpha: 1.0,
        class_separation: 3.0,
        domain_shift: AffineShift::rotation(2, 30.0, 2.0),
        noise_sigma: 1.0,
        seed: 7,
    };
    let counts = pareto_counts(cfg.n_max, cfg.num_classes, cfg.pareto_alpha)?;
    println!("per-class sample counts (majority first): {counts:?}");

    let full = generate_synthetic(&cfg)?;
    // Keep labels on 2% of the target training samples; hide the rest.
    let ds = split_target(&full, 0.02, cfg.seed)?;

    println!(
        "{} samples, {} classes, {} features",
        ds.len(),
        ds.num_classes(),
        ds.dim()
    );
    for (name, indices) in [
        ("source train", ds.source_train()),
        ("target labeled", ds.target_labeled()),
        ("target unlabeled", ds.target_unlabeled()),
        ("target test", ds.split_of(Domain::Target, Split::Test)),
    ] {
        let mut per_class = vec![0usize; ds.num_classes()];
        let view = ds.eval_view();
        for &i in &indices {
            if let Some(c) = view.truth(i) {
                per_class[c] += 1;
            }
        }
        println!("  {name:<16} {:>4} samples, by class {per_class:?}", indices.len());
    }

    let out = Path::new("target/examples/generate_dataset");
    fs::create_dir_all(out)?;
    let path = out.join("dataset.csv");
    save_dataset(&ds, &path)?;
    println!("saved to {}", path.display());
    Ok(())
}
