//! Cross-entropy and the cluster triplet loss, each with its exact
//! backward pass.

use ndarray::{Array2, Axis};

use super::{Model, ModelGrads, NnError};

/// Mean negative log-likelihood of the true classes, with gradients for
/// every parameter (head and encoder).
pub fn cross_entropy(
    model: &Model,
    inputs: &Array2<f64>,
    labels: &[usize],
) -> Result<(f64, ModelGrads), NnError> {
    if inputs.nrows() == 0 {
        return Err(NnError::InvalidArgument("empty batch".into()));
    }
    if labels.len() != inputs.nrows() {
        return Err(NnError::DimensionMismatch {
            what: "cross-entropy labels",
            expected: inputs.nrows(),
            got: labels.len(),
        });
    }
    let num_classes = model.num_classes();
    if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
        return Err(NnError::InvalidArgument(format!(
            "label {bad} out of range for {num_classes} classes"
        )));
    }

    let n = inputs.nrows();
    let cache = model.encoder_cache(inputs);
    let logits = model.head.forward(cache.embedding());

    // Row-wise stable log-softmax.
    let mut loss = 0.0;
    let mut d_logits = logits.clone();
    for (i, mut row) in d_logits.rows_mut().into_iter().enumerate() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_sum = row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln() + max;
        loss -= row[labels[i]] - log_sum;
        // Softmax probabilities, then subtract the one-hot truth.
        row.mapv_inplace(|v| (v - log_sum).exp());
        row[labels[i]] -= 1.0;
    }
    loss /= n as f64;
    d_logits /= n as f64;

    let mut grads = ModelGrads::zeros_like(model);
    grads.head.weights += &d_logits.t().dot(cache.embedding());
    grads.head.bias += &d_logits.sum_axis(Axis(0));
    let d_embedding = d_logits.dot(&model.head.weights);
    cache.backward(model, d_embedding, &mut grads);
    Ok((loss, grads))
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_same_dim(a: &[f64], b: &[f64], c: &[f64]) -> Result<(), NnError> {
    for other in [b, c] {
        if other.len() != a.len() {
            return Err(NnError::DimensionMismatch {
                what: "triplet embedding",
                expected: a.len(),
                got: other.len(),
            });
        }
    }
    Ok(())
}

/// The hinge `max(‖fa−fp‖₂² − ‖fa−fn‖₂² + margin, 0)` on embeddings: pull
/// the anchor towards the positive until the negative is at least `margin`
/// (in squared distance) further away.
pub fn triplet_loss(
    anchor: &[f64],
    positive: &[f64],
    negative: &[f64],
    margin: f64,
) -> Result<f64, NnError> {
    check_same_dim(anchor, positive, negative)?;
    Ok((dist2(anchor, positive) - dist2(anchor, negative) + margin).max(0.0))
}

/// Loss and its gradients w.r.t. the three embeddings; exactly zero when
/// the hinge is inactive.
#[allow(clippy::type_complexity)]
pub fn triplet_grad_embeddings(
    anchor: &[f64],
    positive: &[f64],
    negative: &[f64],
    margin: f64,
) -> Result<(f64, Vec<f64>, Vec<f64>, Vec<f64>), NnError> {
    let loss = triplet_loss(anchor, positive, negative, margin)?;
    let e = anchor.len();
    if loss <= 0.0 {
        return Ok((loss, vec![0.0; e], vec![0.0; e], vec![0.0; e]));
    }
    let mut d_anchor = vec![0.0; e];
    let mut d_positive = vec![0.0; e];
    let mut d_negative = vec![0.0; e];
    for i in 0..e {
        d_anchor[i] = 2.0 * (negative[i] - positive[i]);
        d_positive[i] = 2.0 * (positive[i] - anchor[i]);
        d_negative[i] = 2.0 * (anchor[i] - negative[i]);
    }
    Ok((loss, d_anchor, d_positive, d_negative))
}

/// Mean triplet loss over a batch of mined triplets, with parameter
/// gradients through the shared encoder. Rows of the three matrices are
/// matched by index: `(anchors[t], positives[t], negatives[t])`.
pub fn triplet_backward_batch(
    model: &Model,
    anchors: &Array2<f64>,
    positives: &Array2<f64>,
    negatives: &Array2<f64>,
    margin: f64,
) -> Result<(f64, ModelGrads), NnError> {
    let t = anchors.nrows();
    if t == 0 {
        return Err(NnError::InvalidArgument("empty triplet batch".into()));
    }
    for (what, m) in [("positives", positives), ("negatives", negatives)] {
        if m.nrows() != t {
            return Err(NnError::DimensionMismatch {
                what: "triplet batch rows",
                expected: t,
                got: m.nrows(),
            });
        }
        if m.ncols() != anchors.ncols() {
            return Err(NnError::DimensionMismatch {
                what: "triplet batch columns",
                expected: anchors.ncols(),
                got: m.ncols(),
            });
        }
        let _ = what;
    }

    let cache_a = model.encoder_cache(anchors);
    let cache_p = model.encoder_cache(positives);
    let cache_n = model.encoder_cache(negatives);
    let (fa, fp, fneg) = (cache_a.embedding(), cache_p.embedding(), cache_n.embedding());

    let e = fa.ncols();
    let mut d_fa = Array2::zeros((t, e));
    let mut d_fp = Array2::zeros((t, e));
    let mut d_fn = Array2::zeros((t, e));
    let mut total = 0.0;
    for i in 0..t {
        let (a, p, n) = (fa.row(i), fp.row(i), fneg.row(i));
        let raw = a
            .iter()
            .zip(&p)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            - a.iter().zip(&n).map(|(x, y)| (x - y) * (x - y)).sum::<f64>()
            + margin;
        if raw <= 0.0 {
            continue;
        }
        total += raw;
        let scale = 2.0 / t as f64;
        for j in 0..e {
            d_fa[[i, j]] = scale * (n[j] - p[j]);
            d_fp[[i, j]] = scale * (p[j] - a[j]);
            d_fn[[i, j]] = scale * (a[j] - n[j]);
        }
    }

    let mut grads = ModelGrads::zeros_like(model);
    cache_a.backward(model, d_fa, &mut grads);
    cache_p.backward(model, d_fp, &mut grads);
    cache_n.backward(model, d_fn, &mut grads);
    Ok((total / t as f64, grads))
}

/// Single-triplet convenience wrapper over [`triplet_backward_batch`].
pub fn triplet_backward(
    model: &Model,
    anchor: &[f64],
    positive: &[f64],
    negative: &[f64],
    margin: f64,
) -> Result<(f64, ModelGrads), NnError> {
    check_same_dim(anchor, positive, negative)?;
    let row = |v: &[f64]| {
        Array2::from_shape_vec((1, v.len()), v.to_vec()).expect("1 × n shape always fits")
    };
    triplet_backward_batch(model, &row(anchor), &row(positive), &row(negative), margin)
}

/// Central finite-difference gradient of `loss` over every parameter.
///
/// Slow — two forward passes per parameter — but assumption-free, which
/// makes it the reference the analytic backward passes are validated
/// against. Intended for small models only.
pub fn fd_gradients(model: &Model, loss: impl Fn(&Model) -> f64, step: f64) -> ModelGrads {
    let mut grads = ModelGrads::zeros_like(model);
    let depth = model.encoder.len();
    for layer in 0..=depth {
        for is_weight in [true, false] {
            let len = {
                let l = if layer < depth { &model.encoder[layer] } else { &model.head };
                if is_weight { l.weights.len() } else { l.bias.len() }
            };
            for idx in 0..len {
                let probe = |delta: f64| {
                    let mut m = model.clone();
                    let l = if layer < depth { &mut m.encoder[layer] } else { &mut m.head };
                    let flat = if is_weight {
                        l.weights.as_slice_mut().expect("contiguous layout")
                    } else {
                        l.bias.as_slice_mut().expect("contiguous layout")
                    };
                    flat[idx] += delta;
                    loss(&m)
                };
                let numeric = (probe(step) - probe(-step)) / (2.0 * step);
                let g = if layer < depth { &mut grads.encoder[layer] } else { &mut grads.head };
                let flat = if is_weight {
                    g.weights.as_slice_mut().expect("contiguous layout")
                } else {
                    g.bias.as_slice_mut().expect("contiguous layout")
                };
                flat[idx] = numeric;
            }
        }
    }
    grads
}

/// Worst relative disagreement between two gradient sets. Denominators are
/// floored at 1, so near-zero entries are compared absolutely.
pub fn max_relative_gap(a: &ModelGrads, b: &ModelGrads) -> f64 {
    let mut worst = 0.0f64;
    for (x, y) in a.layers().zip(b.layers()) {
        let pairs = x
            .weights
            .iter()
            .zip(y.weights.iter())
            .chain(x.bias.iter().zip(y.bias.iter()));
        for (&g, &h) in pairs {
            let rel = (g - h).abs() / g.abs().max(h.abs()).max(1.0);
            worst = worst.max(rel);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Layer};
    use crate::seeding::stream_rng;
    use ndarray::{array, Array1};
    use proptest::prelude::*;

    fn random_model(seed: u64) -> Model {
        Model::new(&[3, 5, 4], 3, seed).unwrap()
    }

    fn random_batch(seed: u64, rows: usize, cols: usize) -> Array2<f64> {
        let mut rng = stream_rng(seed, 0x50, 0);
        let mut m = Array2::zeros((rows, cols));
        for v in m.iter_mut() {
            *v = rng.random_range(-1.5..1.5);
        }
        m
    }

    /// Central finite differences over every parameter.
    fn fd_check(model: &Model, loss_fn: impl Fn(&Model) -> f64, analytic: &ModelGrads) {
        let numeric = fd_gradients(model, loss_fn, 1e-5);
        let worst = max_relative_gap(analytic, &numeric);
        assert!(worst < 1e-4, "worst relative gradient error {worst}");
    }

    #[test]
    fn triplet_loss_pinned_values() {
        let eps = 0.5;
        assert!(
            (triplet_loss(&[0.0, 0.0], &[0.0, 0.0], &[1.0, 0.0], eps).unwrap() - 0.0).abs()
                < 1e-12
        );
        // Identical positive and negative leave exactly the margin.
        let p = [0.3, -0.4, 0.9];
        assert!(
            (triplet_loss(&[1.0, 2.0, 3.0], &p, &p, eps).unwrap() - eps).abs() < 1e-12
        );
        assert!(
            (triplet_loss(&[0.0, 0.0], &[2.0, 0.0], &[1.0, 0.0], eps).unwrap() - 3.5).abs()
                < 1e-12
        );
    }

    #[test]
    fn triplet_embedding_grads_match_hand_derivation() {
        let (loss, da, dp, dn) =
            triplet_grad_embeddings(&[0.0, 0.0], &[2.0, 0.0], &[1.0, 0.0], 0.5).unwrap();
        assert!((loss - 3.5).abs() < 1e-12);
        assert_eq!(da, vec![-2.0, 0.0]);
        assert_eq!(dp, vec![4.0, 0.0]);
        assert_eq!(dn, vec![-2.0, 0.0]);
    }

    #[test]
    fn inactive_hinge_has_exactly_zero_grads() {
        let model = random_model(11);
        // Positive coincides with anchor, negative far: slack >> margin.
        let a = [0.2, -0.1, 0.4];
        let n = [50.0, 50.0, 50.0];
        let (loss, grads) = triplet_backward(&model, &a, &a, &n, 1.0).unwrap();
        assert_eq!(loss, 0.0);
        for g in grads.layers() {
            assert!(g.weights.iter().all(|&v| v == 0.0));
            assert!(g.bias.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn uniform_model_ce_is_log_c() {
        let mut model = random_model(3);
        model.head.weights.fill(0.0);
        model.head.bias.fill(0.0);
        let batch = random_batch(4, 6, 3);
        let labels = vec![0, 1, 2, 0, 1, 2];
        let (loss, _) = cross_entropy(&model, &batch, &labels).unwrap();
        assert!((loss - 3.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_model_ce_vanishes() {
        let model = Model {
            encoder: vec![Layer {
                weights: Array2::eye(2),
                bias: Array1::zeros(2),
                activation: Activation::Identity,
            }],
            head: Layer {
                weights: array![[40.0, 0.0], [0.0, 40.0]],
                bias: Array1::zeros(2),
                activation: Activation::Identity,
            },
        };
        let batch = array![[1.0, 0.0], [0.0, 1.0]];
        let (loss, _) = cross_entropy(&model, &batch, &[0, 1]).unwrap();
        assert!(loss < 1e-6);
    }

    #[test]
    fn ce_gradients_match_finite_differences() {
        let model = random_model(21);
        let batch = random_batch(22, 5, 3);
        let labels = vec![0, 2, 1, 1, 0];
        let (_, grads) = cross_entropy(&model, &batch, &labels).unwrap();
        fd_check(
            &model,
            |m| cross_entropy(m, &batch, &labels).unwrap().0,
            &grads,
        );
    }

    #[test]
    fn triplet_gradients_match_finite_differences() {
        let model = random_model(31);
        let anchors = random_batch(32, 4, 3);
        let positives = random_batch(33, 4, 3);
        let negatives = random_batch(34, 4, 3);
        let margin = 0.7;
        let (loss, grads) =
            triplet_backward_batch(&model, &anchors, &positives, &negatives, margin).unwrap();
        assert!(loss > 0.0, "want at least one active triplet in this fixture");
        fd_check(
            &model,
            |m| {
                triplet_backward_batch(m, &anchors, &positives, &negatives, margin)
                    .unwrap()
                    .0
            },
            &grads,
        );
    }

    #[test]
    fn combined_objective_matches_finite_differences() {
        let model = random_model(41);
        let batch = random_batch(42, 5, 3);
        let labels = vec![1, 0, 2, 2, 1];
        let anchors = random_batch(43, 3, 3);
        let positives = random_batch(44, 3, 3);
        let negatives = random_batch(45, 3, 3);
        let (margin, lambda) = (0.5, 0.7);

        let (_, ce_grads) = cross_entropy(&model, &batch, &labels).unwrap();
        let (_, tri_grads) =
            triplet_backward_batch(&model, &anchors, &positives, &negatives, margin).unwrap();
        let mut combined = ce_grads;
        combined.axpy(lambda, &tri_grads);

        fd_check(
            &model,
            |m| {
                let ce = cross_entropy(m, &batch, &labels).unwrap().0;
                let tri = triplet_backward_batch(m, &anchors, &positives, &negatives, margin)
                    .unwrap()
                    .0;
                ce + lambda * tri
            },
            &combined,
        );
    }

    #[test]
    fn bad_inputs_are_rejected() {
        let model = random_model(51);
        let batch = random_batch(52, 2, 3);
        assert!(cross_entropy(&model, &batch, &[0]).is_err());
        assert!(cross_entropy(&model, &batch, &[0, 7]).is_err());
        let empty = Array2::<f64>::zeros((0, 3));
        assert!(cross_entropy(&model, &empty, &[]).is_err());
        assert!(triplet_loss(&[0.0, 0.0], &[0.0], &[0.0, 0.0], 1.0).is_err());
    }

    proptest! {
        /// The hinge is non-negative, and zero exactly when the negative
        /// clears the margin.
        #[test]
        fn triplet_loss_hinge_semantics(
            a in proptest::collection::vec(-3.0f64..3.0, 3),
            p in proptest::collection::vec(-3.0f64..3.0, 3),
            n in proptest::collection::vec(-3.0f64..3.0, 3),
            margin in 0.01f64..2.0,
        ) {
            let loss = triplet_loss(&a, &p, &n, margin).unwrap();
            prop_assert!(loss >= 0.0);
            let slack = dist2(&a, &n) - dist2(&a, &p);
            if loss == 0.0 {
                prop_assert!(slack >= margin - 1e-12);
            } else {
                prop_assert!(slack < margin + 1e-12);
            }
        }

        /// Rotating and translating all three embeddings together does not
        /// change the loss.
        #[test]
        fn triplet_loss_is_rigid_invariant(
            a in proptest::collection::vec(-2.0f64..2.0, 2),
            p in proptest::collection::vec(-2.0f64..2.0, 2),
            n in proptest::collection::vec(-2.0f64..2.0, 2),
            angle in 0.0f64..std::f64::consts::TAU,
            shift in proptest::collection::vec(-5.0f64..5.0, 2),
        ) {
            let margin = 0.8;
            let transform = |v: &[f64]| {
                vec![
                    angle.cos() * v[0] - angle.sin() * v[1] + shift[0],
                    angle.sin() * v[0] + angle.cos() * v[1] + shift[1],
                ]
            };
            let before = triplet_loss(&a, &p, &n, margin).unwrap();
            let after =
                triplet_loss(&transform(&a), &transform(&p), &transform(&n), margin).unwrap();
            prop_assert!((before - after).abs() < 1e-9);
        }
    }
}
