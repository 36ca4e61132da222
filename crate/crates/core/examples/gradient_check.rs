//! Validates the hand-written backpropagation against central finite
//! differences, for both the cross-entropy and the triplet loss.
//!
//!     cargo run --example gradient_check

use cluster_adapt::nn::{
    cross_entropy, fd_gradients, max_relative_gap, triplet_backward_batch, Model,
};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_batch(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    let mut m = Array2::zeros((rows, cols));
    for v in m.iter_mut() {
        *v = rng.random_range(-1.5..1.5);
    }
    m
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let model = Model::new(&[4, 16, 8], 3, 5)?;
    let step = 1e-5;

    let inputs = random_batch(&mut rng, 6, 4);
    let labels: Vec<usize> = (0..6).map(|_| rng.random_range(0..3)).collect();
    let (loss, analytic) = cross_entropy(&model, &inputs, &labels)?;
    let numeric = fd_gradients(&model, |m| cross_entropy(m, &inputs, &labels).unwrap().0, step);
    println!(
        "cross-entropy   loss {loss:.6}   worst relative gradient gap {:.3e}",
        max_relative_gap(&analytic, &numeric)
    );

    let anchors = random_batch(&mut rng, 5, 4);
    let positives = random_batch(&mut rng, 5, 4);
    let negatives = random_batch(&mut rng, 5, 4);
    let margin = 1.0;
    let (loss, analytic) =
        triplet_backward_batch(&model, &anchors, &positives, &negatives, margin)?;
    let numeric = fd_gradients(
        &model,
        |m| {
            triplet_backward_batch(m, &anchors, &positives, &negatives, margin)
                .unwrap()
                .0
        },
        step,
    );
    println!(
        "triplet         loss {loss:.6}   worst relative gradient gap {:.3e}",
        max_relative_gap(&analytic, &numeric)
    );
    Ok(())
}
