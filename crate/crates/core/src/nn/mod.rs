//! A small, fully hand-written neural toolkit: MLP encoder, linear
//! classifier head, losses with exact backpropagation, and momentum SGD.
//!
//! Everything runs in `f64`. There is no autodiff — each loss ships its own
//! backward pass, which is what the finite-difference tests pin down.

mod checkpoint;
mod loss;
mod optim;

pub use checkpoint::{load_checkpoint, save_checkpoint, save_checkpoint_with_provenance};
pub use loss::{
    cross_entropy, fd_gradients, max_relative_gap, triplet_backward, triplet_backward_batch,
    triplet_grad_embeddings, triplet_loss,
};
pub use optim::SgdOptimizer;

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seeding::{stream_rng, SALT_INIT};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("{what}: expected dimension {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("gradient shapes do not match the model")]
    GradientShape,
    #[error("training diverged: non-finite gradient")]
    Diverged,
    #[error("invalid checkpoint: {0}")]
    BadCheckpoint(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, z: &mut Array2<f64>) {
        if self == Activation::Relu {
            z.mapv_inplace(|v| v.max(0.0));
        }
    }

    /// Derivative evaluated at the pre-activation value.
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// One dense layer computing `activation(x W^T + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `out × in`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Layer {
    fn forward(&self, input: &Array2<f64>) -> Array2<f64> {
        let mut z = input.dot(&self.weights.t()) + &self.bias;
        self.activation.apply(&mut z);
        z
    }

    fn out_dim(&self) -> usize {
        self.weights.nrows()
    }

    fn in_dim(&self) -> usize {
        self.weights.ncols()
    }
}

/// MLP encoder plus linear classifier head.
///
/// The encoder maps `d`-dimensional inputs to `e`-dimensional embeddings
/// (ReLU between hidden layers, identity at the embedding output); the head
/// maps embeddings to `C` class logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub encoder: Vec<Layer>,
    pub head: Layer,
}

impl Model {
    /// Fresh model with the given layer widths, e.g. `[d, 64, 32]` for a
    /// `d → 64 → 32` encoder. Weights are seeded uniform draws from
    /// ±√(6/(fan_in+fan_out)); biases start at zero.
    pub fn new(dims: &[usize], num_classes: usize, seed: u64) -> Result<Self, NnError> {
        if dims.len() < 2 {
            return Err(NnError::InvalidArgument(
                "need at least input and embedding dimensions".into(),
            ));
        }
        if dims.iter().any(|&d| d == 0) || num_classes < 2 {
            return Err(NnError::InvalidArgument(
                "layer widths must be positive and num_classes >= 2".into(),
            ));
        }
        let mut rng = stream_rng(seed, SALT_INIT, 0);
        let mut init_layer = |out: usize, input: usize, activation: Activation| {
            let bound = (6.0 / (input + out) as f64).sqrt();
            let mut weights = Array2::zeros((out, input));
            for v in weights.iter_mut() {
                *v = rng.random_range(-bound..bound);
            }
            Layer {
                weights,
                bias: Array1::zeros(out),
                activation,
            }
        };

        let last_hidden = dims.len() - 1;
        let encoder = dims
            .windows(2)
            .enumerate()
            .map(|(i, pair)| {
                let activation = if i + 1 < last_hidden {
                    Activation::Relu
                } else {
                    Activation::Identity
                };
                init_layer(pair[1], pair[0], activation)
            })
            .collect();
        let head = init_layer(num_classes, dims[last_hidden], Activation::Identity);
        let model = Self { encoder, head };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let mut dim = self.input_dim();
        for layer in &self.encoder {
            if layer.in_dim() != dim {
                return Err(NnError::DimensionMismatch {
                    what: "encoder layer input",
                    expected: dim,
                    got: layer.in_dim(),
                });
            }
            if layer.bias.len() != layer.out_dim() {
                return Err(NnError::GradientShape);
            }
            dim = layer.out_dim();
        }
        if self.head.in_dim() != dim {
            return Err(NnError::DimensionMismatch {
                what: "classifier input",
                expected: dim,
                got: self.head.in_dim(),
            });
        }
        if self.head.bias.len() != self.head.out_dim() {
            return Err(NnError::GradientShape);
        }
        let finite = self
            .encoder
            .iter()
            .chain(std::iter::once(&self.head))
            .all(|l| l.weights.iter().all(|v| v.is_finite()) && l.bias.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(NnError::InvalidArgument("non-finite parameter".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.encoder
            .first()
            .map_or_else(|| self.head.in_dim(), Layer::in_dim)
    }

    pub fn embed_dim(&self) -> usize {
        self.encoder
            .last()
            .map_or_else(|| self.head.in_dim(), Layer::out_dim)
    }

    pub fn num_classes(&self) -> usize {
        self.head.out_dim()
    }

    fn check_input(&self, what: &'static str, cols: usize) -> Result<(), NnError> {
        if cols != self.input_dim() {
            return Err(NnError::DimensionMismatch {
                what,
                expected: self.input_dim(),
                got: cols,
            });
        }
        Ok(())
    }

    /// Embeddings for a batch, one row per sample.
    pub fn embed_batch(&self, inputs: &Array2<f64>) -> Result<Array2<f64>, NnError> {
        self.check_input("embed input", inputs.ncols())?;
        Ok(self.encoder_cache(inputs).into_embedding())
    }

    pub fn embed(&self, input: &[f64]) -> Result<Array1<f64>, NnError> {
        let row = Array2::from_shape_vec((1, input.len()), input.to_vec())
            .expect("1 × n shape always fits");
        Ok(self.embed_batch(&row)?.row(0).to_owned())
    }

    /// Class probabilities via softmax over head logits, one row per
    /// sample; rows sum to 1 within 1e-9.
    pub fn classify_batch(&self, inputs: &Array2<f64>) -> Result<Array2<f64>, NnError> {
        let logits = self.logits_batch(inputs)?;
        Ok(softmax_rows(&logits))
    }

    pub fn classify(&self, input: &[f64]) -> Result<Array1<f64>, NnError> {
        let row = Array2::from_shape_vec((1, input.len()), input.to_vec())
            .expect("1 × n shape always fits");
        Ok(self.classify_batch(&row)?.row(0).to_owned())
    }

    /// Argmax class per sample; ties resolve to the lowest class id.
    pub fn predict_batch(&self, inputs: &Array2<f64>) -> Result<Vec<usize>, NnError> {
        let logits = self.logits_batch(inputs)?;
        Ok(logits
            .rows()
            .into_iter()
            .map(|row| {
                let mut best = (f64::NEG_INFINITY, 0);
                for (c, &v) in row.iter().enumerate() {
                    if v > best.0 {
                        best = (v, c);
                    }
                }
                best.1
            })
            .collect())
    }

    pub(crate) fn logits_batch(&self, inputs: &Array2<f64>) -> Result<Array2<f64>, NnError> {
        self.check_input("classify input", inputs.ncols())?;
        let embedding = self.encoder_cache(inputs).into_embedding();
        Ok(self.head.forward(&embedding))
    }

    pub(crate) fn encoder_cache(&self, inputs: &Array2<f64>) -> EncoderCache {
        let mut activations = vec![inputs.clone()];
        let mut pre_activations = Vec::with_capacity(self.encoder.len());
        for layer in &self.encoder {
            let z = activations.last().expect("non-empty").dot(&layer.weights.t()) + &layer.bias;
            let mut a = z.clone();
            layer.activation.apply(&mut a);
            pre_activations.push(z);
            activations.push(a);
        }
        EncoderCache {
            activations,
            pre_activations,
        }
    }
}

/// Intermediate values of one encoder forward pass, kept for backprop.
pub(crate) struct EncoderCache {
    /// `activations[0]` is the input batch; `activations[l+1]` the output
    /// of layer `l`.
    activations: Vec<Array2<f64>>,
    pre_activations: Vec<Array2<f64>>,
}

impl EncoderCache {
    pub(crate) fn embedding(&self) -> &Array2<f64> {
        self.activations.last().expect("non-empty")
    }

    fn into_embedding(mut self) -> Array2<f64> {
        self.activations.pop().expect("non-empty")
    }

    /// Backpropagates a gradient w.r.t. the embedding through the encoder,
    /// accumulating parameter gradients into `grads`.
    pub(crate) fn backward(&self, model: &Model, d_embedding: Array2<f64>, grads: &mut ModelGrads) {
        let mut d_out = d_embedding;
        for (l, layer) in model.encoder.iter().enumerate().rev() {
            let z = &self.pre_activations[l];
            let mut dz = d_out;
            dz.zip_mut_with(z, |g, &zv| *g *= layer.activation.derivative(zv));
            grads.encoder[l].weights += &dz.t().dot(&self.activations[l]);
            grads.encoder[l].bias += &dz.sum_axis(ndarray::Axis(0));
            d_out = dz.dot(&layer.weights);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Parameter gradients with the same shape as the model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub encoder: Vec<LayerGrads>,
    pub head: LayerGrads,
}

impl ModelGrads {
    pub fn zeros_like(model: &Model) -> Self {
        let of_layer = |l: &Layer| LayerGrads {
            weights: Array2::zeros(l.weights.raw_dim()),
            bias: Array1::zeros(l.bias.len()),
        };
        Self {
            encoder: model.encoder.iter().map(of_layer).collect(),
            head: of_layer(&model.head),
        }
    }

    pub fn matches(&self, model: &Model) -> bool {
        self.encoder.len() == model.encoder.len()
            && self
                .encoder
                .iter()
                .zip(&model.encoder)
                .all(|(g, l)| {
                    g.weights.raw_dim() == l.weights.raw_dim() && g.bias.len() == l.bias.len()
                })
            && self.head.weights.raw_dim() == model.head.weights.raw_dim()
            && self.head.bias.len() == model.head.bias.len()
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.layers_mut() {
            g.weights *= factor;
            g.bias *= factor;
        }
    }

    /// Adds `factor * other` into `self`.
    pub fn axpy(&mut self, factor: f64, other: &Self) {
        for (g, o) in self.layers_mut().zip(other.layers()) {
            g.weights.scaled_add(factor, &o.weights);
            g.bias.scaled_add(factor, &o.bias);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers()
            .all(|g| g.weights.iter().all(|v| v.is_finite()) && g.bias.iter().all(|v| v.is_finite()))
    }

    pub(crate) fn layers(&self) -> impl Iterator<Item = &LayerGrads> {
        self.encoder.iter().chain(std::iter::once(&self.head))
    }

    pub(crate) fn layers_mut(&mut self) -> impl Iterator<Item = &mut LayerGrads> {
        self.encoder.iter_mut().chain(std::iter::once(&mut self.head))
    }
}

/// Hyper-parameters for one training stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Triplet margin ε, in squared-distance units.
    pub margin: f64,
    /// Weight λ of the mean triplet loss against cross-entropy.
    pub lambda: f64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size_ce: usize,
    pub triplets_per_step: usize,
    pub epochs_per_round: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            margin: 1.0,
            lambda: 1.0,
            learning_rate: 1e-2,
            momentum: 0.9,
            batch_size_ce: 32,
            triplets_per_step: 32,
            epochs_per_round: 5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub(crate) fn validate(&self) -> Result<(), NnError> {
        let positive = [
            ("margin", self.margin),
            ("learning_rate", self.learning_rate),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(NnError::InvalidArgument(format!(
                    "{name} must be finite and > 0, got {v}"
                )));
            }
        }
        // λ = 0 is deliberately legal: it turns the adaptation loop into a
        // pure cross-entropy continuation.
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(NnError::InvalidArgument(format!(
                "lambda must be finite and >= 0, got {}",
                self.lambda
            )));
        }
        if !(self.momentum >= 0.0 && self.momentum < 1.0) {
            return Err(NnError::InvalidArgument(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        for (name, v) in [
            ("batch_size_ce", self.batch_size_ce),
            ("triplets_per_step", self.triplets_per_step),
            ("epochs_per_round", self.epochs_per_round),
        ] {
            if v == 0 {
                return Err(NnError::InvalidArgument(format!("{name} must be >= 1")));
            }
        }
        Ok(())
    }
}

fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn identity_encoder(dim: usize, num_classes: usize) -> Model {
        Model {
            encoder: vec![Layer {
                weights: Array2::eye(dim),
                bias: Array1::zeros(dim),
                activation: Activation::Identity,
            }],
            head: Layer {
                weights: Array2::zeros((num_classes, dim)),
                bias: Array1::zeros(num_classes),
                activation: Activation::Identity,
            },
        }
    }

    #[test]
    fn zero_weight_model_embeds_to_zero() {
        let mut model = Model::new(&[3, 4, 2], 2, 0).unwrap();
        for layer in &mut model.encoder {
            layer.weights.fill(0.0);
            layer.bias.fill(0.0);
        }
        let e = model.embed(&[1.0, -2.0, 3.0]).unwrap();
        assert!(e.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_layer_is_a_passthrough() {
        let model = identity_encoder(3, 2);
        let x = [0.5, -1.5, 2.0];
        let e = model.embed(&x).unwrap();
        assert_eq!(e.as_slice().unwrap(), &x);
    }

    #[test]
    fn batch_embed_matches_per_sample() {
        let model = Model::new(&[4, 8, 3], 3, 7).unwrap();
        let batch = array![
            [0.1, -0.2, 0.3, 0.4],
            [1.0, 2.0, -3.0, 0.0],
            [0.0, 0.0, 0.0, 1.0]
        ];
        let embedded = model.embed_batch(&batch).unwrap();
        for (i, row) in batch.rows().into_iter().enumerate() {
            let single = model.embed(row.as_slice().unwrap()).unwrap();
            for (a, b) in embedded.row(i).iter().zip(single.iter()) {
                assert_eq!(a, b, "sample {i} diverges between batch and single");
            }
        }
    }

    #[test]
    fn zero_logits_classify_uniformly() {
        let model = identity_encoder(3, 4);
        let p = model.classify(&[1.0, 2.0, 3.0]).unwrap();
        for &v in p.iter() {
            assert!((v - 0.25).abs() < 1e-12);
        }
        assert!((p.sum() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn probabilities_are_shift_invariant() {
        let mut model = Model::new(&[3, 5, 4], 3, 1).unwrap();
        let x = [0.3, -0.7, 1.1];
        let before = model.classify(&x).unwrap();
        model.head.bias += 17.5;
        let after = model.classify(&x).unwrap();
        for (a, b) in before.iter().zip(after.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn dominant_logit_dominates() {
        let mut model = identity_encoder(2, 3);
        model.head.bias = array![20.0, 0.0, 0.0];
        let p = model.classify(&[0.0, 0.0]).unwrap();
        assert!(p[0] > 0.999);
        assert!((p.sum() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let model = Model::new(&[3, 4, 2], 2, 0).unwrap();
        assert!(matches!(
            model.embed(&[1.0, 2.0]),
            Err(NnError::DimensionMismatch { expected: 3, got: 2, .. })
        ));
        assert!(model.classify(&[1.0; 5]).is_err());
    }

    #[test]
    fn init_is_seed_deterministic_and_bounded() {
        let a = Model::new(&[6, 8, 4], 3, 42).unwrap();
        let b = Model::new(&[6, 8, 4], 3, 42).unwrap();
        let c = Model::new(&[6, 8, 4], 3, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let bound = (6.0 / (6 + 8) as f64).sqrt();
        assert!(a.encoder[0].weights.iter().all(|v| v.abs() < bound));
        assert!(a.encoder[0].bias.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn degenerate_shapes_rejected() {
        assert!(Model::new(&[3], 2, 0).is_err());
        assert!(Model::new(&[3, 0, 2], 2, 0).is_err());
        assert!(Model::new(&[3, 4, 2], 1, 0).is_err());
    }
}
