//! Evaluation metrics: confusion matrix, per-class Dice, and cluster purity.
//!
//! Dice is tracked per class because the benchmark is imbalanced: the
//! headline numbers are the unweighted mean over classes (`mdice`) and the
//! Dice of the rarest class (`midice`), which a majority-biased model can
//! fail completely while accuracy still looks healthy.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("class {class} out of range for {num_classes} classes")]
    ClassOutOfRange { class: usize, num_classes: usize },
    #[error("{0}")]
    InvalidArgument(String),
}

/// Square count matrix with ground truth on rows and predictions on columns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    num_classes: usize,
    /// Row-major `num_classes * num_classes` counts.
    counts: Vec<usize>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_classes,
            counts: vec![0; num_classes * num_classes],
        }
    }

    pub fn from_pairs(
        num_classes: usize,
        pairs: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self, MetricsError> {
        let mut cm = Self::new(num_classes);
        for (truth, pred) in pairs {
            cm.record(truth, pred)?;
        }
        Ok(cm)
    }

    pub fn record(&mut self, truth: usize, pred: usize) -> Result<(), MetricsError> {
        for class in [truth, pred] {
            if class >= self.num_classes {
                return Err(MetricsError::ClassOutOfRange {
                    class,
                    num_classes: self.num_classes,
                });
            }
        }
        self.counts[truth * self.num_classes + pred] += 1;
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn count(&self, truth: usize, pred: usize) -> usize {
        self.counts[truth * self.num_classes + pred]
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn truth_count(&self, class: usize) -> usize {
        (0..self.num_classes).map(|p| self.count(class, p)).sum()
    }

    pub fn pred_count(&self, class: usize) -> usize {
        (0..self.num_classes).map(|t| self.count(t, class)).sum()
    }

    pub fn accuracy(&self) -> Option<f64> {
        let total = self.total();
        if total == 0 {
            return None;
        }
        let hits: usize = (0..self.num_classes).map(|c| self.count(c, c)).sum();
        Some(hits as f64 / total as f64)
    }

    /// Per-class Dice `2TP / (2TP + FP + FN)`; `None` where the class never
    /// occurs in either truth or prediction.
    pub fn dice(&self) -> Vec<Option<f64>> {
        (0..self.num_classes)
            .map(|c| {
                let tp = self.count(c, c);
                let fp = self.pred_count(c) - tp;
                let fn_ = self.truth_count(c) - tp;
                let denom = 2 * tp + fp + fn_;
                (denom > 0).then(|| 2.0 * tp as f64 / denom as f64)
            })
            .collect()
    }

    /// Unweighted mean of the defined per-class Dice scores.
    pub fn mdice(&self) -> Option<f64> {
        let defined: Vec<f64> = self.dice().into_iter().flatten().collect();
        if defined.is_empty() {
            None
        } else {
            Some(defined.iter().sum::<f64>() / defined.len() as f64)
        }
    }

    /// The class with the fewest ground-truth samples (ties go to the lower
    /// class id); `None` only when the matrix is empty.
    pub fn minor_class(&self) -> Option<usize> {
        if self.total() == 0 {
            return None;
        }
        (0..self.num_classes).min_by_key(|&c| (self.truth_count(c), c))
    }

    /// Dice of the minor class.
    pub fn midice(&self) -> Option<f64> {
        self.minor_class().and_then(|c| self.dice()[c])
    }
}

/// Fraction of samples agreeing with their cluster's majority class.
pub fn purity(clusters: &[usize], classes: &[usize]) -> Result<f64, MetricsError> {
    if clusters.len() != classes.len() {
        return Err(MetricsError::InvalidArgument(format!(
            "{} cluster assignments vs {} class labels",
            clusters.len(),
            classes.len()
        )));
    }
    if clusters.is_empty() {
        return Err(MetricsError::InvalidArgument(
            "purity of an empty assignment is undefined".into(),
        ));
    }
    let tallies = tally(clusters, classes);
    let agreeing: usize = tallies
        .iter()
        .map(|counts| counts.iter().copied().max().unwrap_or(0))
        .sum();
    Ok(agreeing as f64 / clusters.len() as f64)
}

/// Purity restricted to one class: over the clusters whose majority class is
/// `c` (majority ties go to the lower class id), the fraction of members
/// actually belonging to `c`. `None` for classes that dominate no cluster.
pub fn per_class_purity(
    clusters: &[usize],
    classes: &[usize],
    num_classes: usize,
) -> Result<Vec<Option<f64>>, MetricsError> {
    if clusters.len() != classes.len() {
        return Err(MetricsError::InvalidArgument(format!(
            "{} cluster assignments vs {} class labels",
            clusters.len(),
            classes.len()
        )));
    }
    if let Some(&class) = classes.iter().find(|&&c| c >= num_classes) {
        return Err(MetricsError::ClassOutOfRange { class, num_classes });
    }
    let tallies = tally(clusters, classes);
    let mut member = vec![0usize; num_classes];
    let mut agreeing = vec![0usize; num_classes];
    for counts in &tallies {
        let Some(majority) = (0..counts.len()).max_by(|&a, &b| {
            counts[a].cmp(&counts[b]).then(b.cmp(&a))
        }) else {
            continue;
        };
        if counts[majority] == 0 {
            continue;
        }
        member[majority] += counts.iter().sum::<usize>();
        agreeing[majority] += counts[majority];
    }
    Ok((0..num_classes)
        .map(|c| (member[c] > 0).then(|| agreeing[c] as f64 / member[c] as f64))
        .collect())
}

fn tally(clusters: &[usize], classes: &[usize]) -> Vec<Vec<usize>> {
    let num_clusters = clusters.iter().max().map_or(0, |&m| m + 1);
    let num_classes = classes.iter().max().map_or(0, |&m| m + 1);
    let mut tallies = vec![vec![0usize; num_classes]; num_clusters];
    for (&j, &c) in clusters.iter().zip(classes) {
        tallies[j][c] += 1;
    }
    tallies
}

/// Summary of a single evaluation run, ready for serialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub method: String,
    pub n_eval: usize,
    pub accuracy: Option<f64>,
    pub dice: Vec<Option<f64>>,
    pub mdice: Option<f64>,
    pub minor_class: Option<usize>,
    pub midice: Option<f64>,
    /// Clustering purity from the best training round, for methods that
    /// cluster during training; `None` for purely supervised baselines.
    #[serde(default)]
    pub purity: Option<f64>,
}

impl MetricReport {
    pub fn from_confusion(method: impl Into<String>, cm: &ConfusionMatrix) -> Self {
        Self {
            method: method.into(),
            n_eval: cm.total(),
            accuracy: cm.accuracy(),
            dice: cm.dice(),
            mdice: cm.mdice(),
            minor_class: cm.minor_class(),
            midice: cm.midice(),
            purity: None,
        }
    }
}

impl std::fmt::Display for MetricReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let or_dash = |v: Option<f64>| match v {
            Some(v) => format!("{v:.4}"),
            None => "-".into(),
        };
        writeln!(f, "method: {}  (n = {})", self.method, self.n_eval)?;
        writeln!(f, "  accuracy: {}", or_dash(self.accuracy))?;
        for (c, d) in self.dice.iter().enumerate() {
            let marker = if self.minor_class == Some(c) { "  (minor)" } else { "" };
            writeln!(f, "  dice[{c}]: {}{marker}", or_dash(*d))?;
        }
        writeln!(f, "  mdice: {}", or_dash(self.mdice))?;
        write!(f, "  midice: {}", or_dash(self.midice))?;
        if let Some(p) = self.purity {
            write!(f, "\n  purity: {p:.4}")?;
        }
        Ok(())
    }
}
