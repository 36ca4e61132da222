//! Saves a trained model as a versioned JSON checkpoint, reloads it, and
//! shows that the reloaded model is bit-identical — same parameters, same
//! predictions — then demonstrates the shape validation on load.
//!
//!     cargo run --example checkpoint_roundtrip

use std::fs;
use std::path::Path;

use cluster_adapt::adapt::{pretrain_source, AdaptConfig};
use cluster_adapt::data::{generate_synthetic, split_target, SynthConfig};
use cluster_adapt::nn::{load_checkpoint, save_checkpoint, Model};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed = 2;
    let full = generate_synthetic(&SynthConfig::benchmark(seed))?;
    let ds = split_target(&full, 0.05, seed)?;
    let mut cfg = AdaptConfig::default();
    cfg.train.seed = seed;
    cfg.wsc.seed = seed;
    let (model, _) = pretrain_source(&Model::new(&[2, 16, 8], 3, seed)?, &ds, &cfg)?;

    let out = Path::new("target/examples/checkpoint_roundtrip");
    fs::create_dir_all(out)?;
    let path = out.join("model.ckpt");
    save_checkpoint(&model, &path)?;
    println!("saved {} ({} bytes)", path.display(), fs::metadata(&path)?.len());

    let reloaded = load_checkpoint(&path)?;
    assert_eq!(reloaded, model, "reload is exact, down to the last bit");
    let probe = ds.features_matrix(&ds.target_train()[..5].to_vec());
    assert_eq!(
        reloaded.predict_batch(&probe)?,
        model.predict_batch(&probe)?
    );
    println!("reloaded model matches the original exactly");

    // Corrupt a declared dimension: the load must fail loudly.
    let mut tampered: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path)?)?;
    tampered["embed_dim"] = serde_json::json!(99);
    let bad_path = out.join("tampered.ckpt");
    fs::write(&bad_path, tampered.to_string())?;
    match load_checkpoint(&bad_path) {
        Err(e) => println!("tampered checkpoint rejected: {e}"),
        Ok(_) => unreachable!("shape mismatch must not load"),
    }
    Ok(())
}
