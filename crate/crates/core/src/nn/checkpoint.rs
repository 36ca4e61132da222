//! Versioned JSON model checkpoints.
//!
//! The file stores every parameter verbatim plus the derived dimensions, so
//! a load can cross-check what the producer thought it was writing. Loads
//! reject unknown format versions, ragged matrices, and any shape that does
//! not chain into a valid model.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{Activation, Layer, Model, NnError};

const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct LayerFile {
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
    activation: Activation,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format_version: u32,
    input_dim: usize,
    embed_dim: usize,
    num_classes: usize,
    /// Free-form metadata about how the model was produced. Ignored on load.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<serde_json::Value>,
    encoder: Vec<LayerFile>,
    head: LayerFile,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> NnError + '_ {
    move |source| NnError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn layer_to_file(layer: &Layer) -> LayerFile {
    LayerFile {
        weights: layer
            .weights
            .rows()
            .into_iter()
            .map(|row| row.to_vec())
            .collect(),
        bias: layer.bias.to_vec(),
        activation: layer.activation,
    }
}

fn layer_from_file(file: LayerFile) -> Result<Layer, NnError> {
    let rows = file.weights.len();
    let cols = file.weights.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return Err(NnError::BadCheckpoint("empty weight matrix".into()));
    }
    let mut flat = Vec::with_capacity(rows * cols);
    for row in &file.weights {
        if row.len() != cols {
            return Err(NnError::BadCheckpoint("ragged weight matrix".into()));
        }
        flat.extend_from_slice(row);
    }
    let weights = Array2::from_shape_vec((rows, cols), flat).expect("shape matches construction");
    Ok(Layer {
        weights,
        bias: Array1::from_vec(file.bias),
        activation: file.activation,
    })
}

pub fn save_checkpoint(model: &Model, path: impl AsRef<Path>) -> Result<(), NnError> {
    save_checkpoint_with_provenance(model, path, None)
}

/// Like [`save_checkpoint`], but records metadata about the producing run
/// (resolved configuration, seed, ...) alongside the parameters.
pub fn save_checkpoint_with_provenance(
    model: &Model,
    path: impl AsRef<Path>,
    provenance: Option<serde_json::Value>,
) -> Result<(), NnError> {
    let path = path.as_ref();
    let file = CheckpointFile {
        format_version: FORMAT_VERSION,
        input_dim: model.input_dim(),
        embed_dim: model.embed_dim(),
        num_classes: model.num_classes(),
        provenance,
        encoder: model.encoder.iter().map(layer_to_file).collect(),
        head: layer_to_file(&model.head),
    };
    let mut text = serde_json::to_string_pretty(&file).expect("checkpoint serializes");
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model, NnError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let file: CheckpointFile =
        serde_json::from_str(&text).map_err(|e| NnError::BadCheckpoint(e.to_string()))?;
    if file.format_version != FORMAT_VERSION {
        return Err(NnError::BadCheckpoint(format!(
            "unsupported format version {} (expected {FORMAT_VERSION})",
            file.format_version
        )));
    }
    let encoder = file
        .encoder
        .into_iter()
        .map(layer_from_file)
        .collect::<Result<Vec<_>, _>>()?;
    let head = layer_from_file(file.head)?;
    let model = Model { encoder, head };
    model
        .validate()
        .map_err(|e| NnError::BadCheckpoint(e.to_string()))?;
    for (what, declared, actual) in [
        ("input_dim", file.input_dim, model.input_dim()),
        ("embed_dim", file.embed_dim, model.embed_dim()),
        ("num_classes", file.num_classes, model.num_classes()),
    ] {
        if declared != actual {
            return Err(NnError::BadCheckpoint(format!(
                "declared {what} {declared} does not match stored parameters ({actual})"
            )));
        }
    }
    Ok(model)
}
