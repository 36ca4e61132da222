//! Dataset representation and construction.
//!
//! A [`Dataset`] holds feature vectors from a labeled source domain and a
//! partially labeled target domain. The training-visible views are:
//!
//! - `D^s` — source train samples (always labeled),
//! - `D^t` — labeled target train samples,
//! - `D^u` — unlabeled target train samples.
//!
//! Ground-truth labels of unlabeled samples survive label hiding, but only
//! behind [`EvalView`]; training code works on [`Sample`]s, which never
//! carry the hidden truth.

mod io;
mod pareto;
mod split;
mod synth;

pub use io::{load_dataset, save_dataset};
pub use pareto::pareto_counts;
pub use split::{class_proportions, split_target};
pub use synth::generate_synthetic;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("class {class} has no labeled sample in the target train split")]
    MissingClass { class: usize },
    #[error("infeasible split: {0}")]
    Infeasible(String),
    #[error("{path}:{line}: parse error: {msg}")]
    Parse {
        path: String,
        line: u64,
        msg: String,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Which distribution a sample was drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

/// Train/validation/test partition tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// One feature vector with its training-visible metadata.
///
/// `label` is `None` for unlabeled target samples; their withheld ground
/// truth lives in the owning [`Dataset`] and is only reachable through
/// [`Dataset::eval_view`].
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: usize,
    pub features: Vec<f64>,
    pub label: Option<usize>,
    pub domain: Domain,
    pub split: Split,
}

/// A collection of samples with a fixed feature dimension and class count.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    /// Withheld ground truth, parallel to `samples`. Never exposed to
    /// training code; see [`EvalView`].
    truths: Vec<Option<usize>>,
    num_classes: usize,
    dim: usize,
}

impl Dataset {
    /// Builds a dataset with no withheld truth, validating the invariants.
    pub fn new(samples: Vec<Sample>, num_classes: usize, dim: usize) -> Result<Self, DataError> {
        let truths = vec![None; samples.len()];
        Self::from_parts(samples, truths, num_classes, dim)
    }

    pub(crate) fn from_parts(
        samples: Vec<Sample>,
        truths: Vec<Option<usize>>,
        num_classes: usize,
        dim: usize,
    ) -> Result<Self, DataError> {
        if num_classes < 2 {
            return Err(DataError::InvalidArgument(format!(
                "num_classes must be >= 2, got {num_classes}"
            )));
        }
        if dim < 1 {
            return Err(DataError::InvalidArgument("dim must be >= 1".into()));
        }
        if truths.len() != samples.len() {
            return Err(DataError::InvalidArgument(
                "truth column length does not match sample count".into(),
            ));
        }
        for s in &samples {
            if s.features.len() != dim {
                return Err(DataError::InvalidArgument(format!(
                    "sample {} has {} features, dataset dimension is {dim}",
                    s.id,
                    s.features.len()
                )));
            }
            if let Some(l) = s.label {
                if l >= num_classes {
                    return Err(DataError::InvalidArgument(format!(
                        "sample {} has label {l} >= num_classes {num_classes}",
                        s.id
                    )));
                }
            }
            if s.domain == Domain::Source && s.label.is_none() {
                return Err(DataError::InvalidArgument(format!(
                    "source sample {} is unlabeled",
                    s.id
                )));
            }
        }
        for (s, t) in samples.iter().zip(&truths) {
            if let Some(t) = t {
                if *t >= num_classes {
                    return Err(DataError::InvalidArgument(format!(
                        "sample {} has truth {t} >= num_classes {num_classes}",
                        s.id
                    )));
                }
            }
        }
        Ok(Self {
            samples,
            truths,
            num_classes,
            dim,
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    fn indices_where(&self, pred: impl Fn(&Sample) -> bool) -> Vec<usize> {
        self.samples
            .iter()
            .enumerate()
            .filter(|(_, s)| pred(s))
            .map(|(i, _)| i)
            .collect()
    }

    /// `D^s`: source train samples (all labeled).
    pub fn source_train(&self) -> Vec<usize> {
        self.indices_where(|s| s.domain == Domain::Source && s.split == Split::Train)
    }

    /// `D^t`: labeled target train samples.
    pub fn target_labeled(&self) -> Vec<usize> {
        self.indices_where(|s| {
            s.domain == Domain::Target && s.split == Split::Train && s.label.is_some()
        })
    }

    /// `D^u`: unlabeled target train samples.
    pub fn target_unlabeled(&self) -> Vec<usize> {
        self.indices_where(|s| {
            s.domain == Domain::Target && s.split == Split::Train && s.label.is_none()
        })
    }

    pub fn target_train(&self) -> Vec<usize> {
        self.indices_where(|s| s.domain == Domain::Target && s.split == Split::Train)
    }

    pub fn split_of(&self, domain: Domain, split: Split) -> Vec<usize> {
        self.indices_where(|s| s.domain == domain && s.split == split)
    }

    /// Stacks the features of the given samples into a row-per-sample matrix.
    pub fn features_matrix(&self, indices: &[usize]) -> Array2<f64> {
        let mut m = Array2::zeros((indices.len(), self.dim));
        for (row, &i) in indices.iter().enumerate() {
            for (col, &v) in self.samples[i].features.iter().enumerate() {
                m[[row, col]] = v;
            }
        }
        m
    }

    pub fn labels_of(&self, indices: &[usize]) -> Vec<Option<usize>> {
        indices.iter().map(|&i| self.samples[i].label).collect()
    }

    /// Evaluation-only access to withheld ground truth.
    pub fn eval_view(&self) -> EvalView<'_> {
        EvalView { ds: self }
    }

    pub(crate) fn truths(&self) -> &[Option<usize>] {
        &self.truths
    }
}

/// Read-only window onto the withheld ground-truth column.
///
/// Training code must never construct one; it exists for metrics and
/// diagnostics only.
#[derive(Clone, Copy)]
pub struct EvalView<'a> {
    ds: &'a Dataset,
}

impl EvalView<'_> {
    /// Ground truth of a sample: the withheld truth if present, otherwise
    /// the visible label.
    pub fn truth(&self, index: usize) -> Option<usize> {
        self.ds.truths[index].or(self.ds.samples[index].label)
    }

    pub fn truths_of(&self, indices: &[usize]) -> Vec<Option<usize>> {
        indices.iter().map(|&i| self.truth(i)).collect()
    }
}

/// Prior class probabilities inferred from labeled target samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassProportions {
    p: Vec<f64>,
}

impl ClassProportions {
    pub(crate) fn from_counts(counts: &[usize]) -> Result<Self, DataError> {
        let total: usize = counts.iter().sum();
        if let Some(class) = counts.iter().position(|&c| c == 0) {
            return Err(DataError::MissingClass { class });
        }
        Ok(Self {
            p: counts.iter().map(|&c| c as f64 / total as f64).collect(),
        })
    }

    pub fn get(&self, class: usize) -> f64 {
        self.p[class]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.p
    }

    pub fn num_classes(&self) -> usize {
        self.p.len()
    }
}

/// An affine map `x -> A x + b` modelling the source-to-target shift.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineShift {
    pub matrix: Array2<f64>,
    pub offset: Vec<f64>,
}

impl AffineShift {
    pub fn identity(dim: usize) -> Self {
        Self {
            matrix: Array2::eye(dim),
            offset: vec![0.0; dim],
        }
    }

    /// Rotation by `angle_deg` in the plane of the first two axes plus a
    /// uniform translation of magnitude `offset` along the diagonal
    /// direction. The diagonal keeps a deliberate balance: part of the
    /// translation runs along the class-mean axis of the synthetic
    /// benchmark (confusing a source-only model) and part runs orthogonal
    /// to it (displacement a handful of labeled target samples can
    /// correct). For `dim == 1` the rotation degenerates to identity.
    pub fn rotation(dim: usize, angle_deg: f64, offset: f64) -> Self {
        let mut matrix = Array2::eye(dim);
        if dim >= 2 {
            let a = angle_deg.to_radians();
            matrix[[0, 0]] = a.cos();
            matrix[[0, 1]] = -a.sin();
            matrix[[1, 0]] = a.sin();
            matrix[[1, 1]] = a.cos();
        }
        let component = offset / (dim as f64).sqrt();
        Self {
            matrix,
            offset: vec![component; dim],
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let d = self.offset.len();
        let mut out = self.offset.clone();
        for (i, o) in out.iter_mut().enumerate().take(d) {
            for j in 0..d {
                *o += self.matrix[[i, j]] * x[j];
            }
        }
        out
    }

    /// Crude invertibility guard: Gaussian elimination with partial
    /// pivoting, rejecting pivot ratios beyond 1e6.
    pub fn is_well_conditioned(&self) -> bool {
        let d = self.offset.len();
        if self.matrix.nrows() != d || self.matrix.ncols() != d {
            return false;
        }
        let mut m = self.matrix.clone();
        let mut max_pivot: f64 = 0.0;
        let mut min_pivot = f64::INFINITY;
        for col in 0..d {
            let (pivot_row, pivot) = (col..d)
                .map(|r| (r, m[[r, col]].abs()))
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap();
            if pivot == 0.0 {
                return false;
            }
            max_pivot = max_pivot.max(pivot);
            min_pivot = min_pivot.min(pivot);
            if pivot_row != col {
                for c in 0..d {
                    let tmp = m[[pivot_row, c]];
                    m[[pivot_row, c]] = m[[col, c]];
                    m[[col, c]] = tmp;
                }
            }
            for r in col + 1..d {
                let factor = m[[r, col]] / m[[col, col]];
                for c in col..d {
                    let v = m[[col, c]];
                    m[[r, c]] -= factor * v;
                }
            }
        }
        max_pivot / min_pivot < 1e6
    }
}

/// Configuration for [`generate_synthetic`].
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub num_classes: usize,
    pub dim: usize,
    /// Majority-class size; smaller classes follow [`pareto_counts`].
    pub n_max: usize,
    pub pareto_alpha: f64,
    /// Distance between adjacent class means.
    pub class_separation: f64,
    pub domain_shift: AffineShift,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SynthConfig {
    /// The default class-imbalanced benchmark: 3 classes in 2 dimensions,
    /// majority size 600, Pareto tail alpha 1, a 30-degree rotation plus
    /// a two-sigma translation as the domain shift.
    pub fn benchmark(seed: u64) -> Self {
        let noise_sigma = 1.5;
        Self {
            num_classes: 3,
            dim: 2,
            n_max: 600,
            pareto_alpha: 1.0,
            class_separation: 4.0,
            domain_shift: AffineShift::rotation(2, 30.0, 2.0 * noise_sigma),
            noise_sigma,
            seed,
        }
    }

    pub(crate) fn validate(&self) -> Result<(), DataError> {
        if self.num_classes < 2 {
            return Err(DataError::InvalidArgument(
                "num_classes must be >= 2".into(),
            ));
        }
        if self.dim < 1 {
            return Err(DataError::InvalidArgument("dim must be >= 1".into()));
        }
        if self.n_max < self.num_classes {
            return Err(DataError::InvalidArgument(format!(
                "n_max ({}) must be >= num_classes ({})",
                self.n_max, self.num_classes
            )));
        }
        if !(self.pareto_alpha > 0.0) {
            return Err(DataError::InvalidArgument("pareto_alpha must be > 0".into()));
        }
        if !(self.class_separation > 0.0) {
            return Err(DataError::InvalidArgument(
                "class_separation must be > 0".into(),
            ));
        }
        if !(self.noise_sigma > 0.0) {
            return Err(DataError::InvalidArgument("noise_sigma must be > 0".into()));
        }
        if self.domain_shift.offset.len() != self.dim
            || self.domain_shift.matrix.nrows() != self.dim
        {
            return Err(DataError::InvalidArgument(
                "domain_shift dimension does not match dim".into(),
            ));
        }
        if !self.domain_shift.is_well_conditioned() {
            return Err(DataError::InvalidArgument(
                "domain_shift matrix is singular or badly conditioned".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(id: usize, domain: Domain, split: Split, label: Option<usize>) -> Sample {
        Sample {
            id,
            features: vec![0.0, 0.0],
            label,
            domain,
            split,
        }
    }

    #[test]
    fn views_partition_train_samples() {
        let samples = vec![
            sample(0, Domain::Source, Split::Train, Some(0)),
            sample(1, Domain::Target, Split::Train, Some(1)),
            sample(2, Domain::Target, Split::Train, None),
            sample(3, Domain::Target, Split::Test, Some(0)),
        ];
        let ds = Dataset::new(samples, 2, 2).unwrap();
        assert_eq!(ds.source_train(), vec![0]);
        assert_eq!(ds.target_labeled(), vec![1]);
        assert_eq!(ds.target_unlabeled(), vec![2]);
        let mut all = ds.source_train();
        all.extend(ds.target_labeled());
        all.extend(ds.target_unlabeled());
        all.sort_unstable();
        assert_eq!(all, vec![0, 1, 2]);
    }

    #[test]
    fn unlabeled_source_rejected() {
        let samples = vec![
            sample(0, Domain::Source, Split::Train, None),
            sample(1, Domain::Target, Split::Train, Some(1)),
        ];
        assert!(matches!(
            Dataset::new(samples, 2, 2),
            Err(DataError::InvalidArgument(_))
        ));
    }

    #[test]
    fn label_out_of_range_rejected() {
        let samples = vec![sample(0, Domain::Source, Split::Train, Some(5))];
        assert!(Dataset::new(samples, 2, 2).is_err());
    }

    #[test]
    fn rotation_shift_is_rigid() {
        let shift = AffineShift::rotation(2, 30.0, 0.0);
        let a = shift.apply(&[1.0, 0.0]);
        let b = shift.apply(&[0.0, 1.0]);
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm(&a) - 1.0).abs() < 1e-12);
        assert!((norm(&b) - 1.0).abs() < 1e-12);
        assert!((a[0] - 30f64.to_radians().cos()).abs() < 1e-12);
        assert!(shift.is_well_conditioned());
    }

    #[test]
    fn singular_shift_detected() {
        let shift = AffineShift {
            matrix: Array2::zeros((2, 2)),
            offset: vec![0.0, 0.0],
        };
        assert!(!shift.is_well_conditioned());
    }
}
