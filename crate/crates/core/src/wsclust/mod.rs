//! Weakly-supervised clustering of target-domain samples.
//!
//! The pipeline mirrors the three stages sketched in the crate docs:
//! plain k-means over all target samples, constraint-guided re-clustering
//! of clusters whose few labeled members disagree, and proportion-based
//! splitting of clusters that hold more unlabeled samples than their class
//! frequency warrants. Labeled samples are scarce by construction, so each
//! stage squeezes as much structure as possible out of a handful of pairs.

mod constraints;
mod kmeans;
mod refine;

pub use constraints::{conflicting_clusters, derive_constraints, ConstraintSet};
pub use kmeans::{kmeans, soft_constrained_kmeans};
pub use refine::{proportion_split, refine_conflicting};

use std::collections::BTreeSet;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::ClassProportions;

#[derive(Debug, Error)]
pub enum WscError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("constraints leave no admissible cluster for point {point}")]
    Infeasible { point: usize },
    #[error("constraint references point {index}, but only {n} points exist")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("pair ({a}, {b}) is both must- and cannot-linked")]
    ContradictoryPair { a: usize, b: usize },
    #[error("point {0} cannot be linked to itself")]
    SelfLink(usize),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Tuning knobs shared by every clustering stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WscConfig {
    /// Initial cluster count; must be at least the class count.
    pub k: usize,
    /// Penalty per violated must-link, in units of squared distance.
    pub must_penalty: f64,
    pub kmeans_max_iter: usize,
    pub kmeans_restarts: usize,
    /// Convergence threshold on the largest centroid displacement.
    pub tol: f64,
    pub seed: u64,
}

impl Default for WscConfig {
    fn default() -> Self {
        Self {
            k: 30,
            must_penalty: 1.0,
            kmeans_max_iter: 100,
            kmeans_restarts: 5,
            tol: 1e-6,
            seed: 0,
        }
    }
}

impl WscConfig {
    pub(crate) fn validate(&self) -> Result<(), WscError> {
        if self.k < 1 {
            return Err(WscError::InvalidArgument("k must be >= 1".into()));
        }
        if !(self.must_penalty >= 0.0 && self.must_penalty.is_finite()) {
            return Err(WscError::InvalidArgument(
                "must_penalty must be finite and >= 0".into(),
            ));
        }
        if self.kmeans_max_iter < 1 {
            return Err(WscError::InvalidArgument(
                "kmeans_max_iter must be >= 1".into(),
            ));
        }
        if self.kmeans_restarts < 1 {
            return Err(WscError::InvalidArgument(
                "kmeans_restarts must be >= 1".into(),
            ));
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(WscError::InvalidArgument("tol must be finite and > 0".into()));
        }
        Ok(())
    }
}

/// A hard partition of a point set.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    /// Per-point cluster id, each `< k()`.
    pub assignments: Vec<usize>,
    /// Row `j` is the mean of cluster `j`'s members; no cluster is empty.
    pub centroids: Array2<f64>,
}

impl Clustering {
    pub fn k(&self) -> usize {
        self.centroids.nrows()
    }

    /// Sum of squared distances from each point to its assigned centroid.
    pub fn objective(&self, points: &Array2<f64>) -> f64 {
        self.assignments
            .iter()
            .enumerate()
            .map(|(i, &j)| {
                points
                    .row(i)
                    .iter()
                    .zip(self.centroids.row(j))
                    .map(|(x, c)| (x - c) * (x - c))
                    .sum::<f64>()
            })
            .sum()
    }
}

/// Per-cluster label bookkeeping.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterStat {
    pub cluster_id: usize,
    /// The single class of the cluster's labeled members, when they agree.
    pub labeled_class: Option<usize>,
    pub labeled_count: usize,
    pub unlabeled_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterStats {
    pub k: usize,
    pub clusters: Vec<ClusterStat>,
}

impl ClusterStats {
    pub fn compute(clustering: &Clustering, labels: &[Option<usize>]) -> Result<Self, WscError> {
        if labels.len() != clustering.assignments.len() {
            return Err(WscError::InvalidArgument(format!(
                "{} labels for {} clustered samples",
                labels.len(),
                clustering.assignments.len()
            )));
        }
        let k = clustering.k();
        let mut clusters: Vec<ClusterStat> = (0..k)
            .map(|cluster_id| ClusterStat {
                cluster_id,
                labeled_class: None,
                labeled_count: 0,
                unlabeled_count: 0,
            })
            .collect();
        let mut mixed = vec![false; k];
        for (&j, label) in clustering.assignments.iter().zip(labels) {
            let stat = &mut clusters[j];
            match *label {
                None => stat.unlabeled_count += 1,
                Some(class) => {
                    stat.labeled_count += 1;
                    match stat.labeled_class {
                        None if !mixed[j] => stat.labeled_class = Some(class),
                        Some(existing) if existing != class => {
                            stat.labeled_class = None;
                            mixed[j] = true;
                        }
                        _ => {}
                    }
                }
            }
        }
        Ok(Self { k, clusters })
    }
}

/// Output of the splitting stage: the final clustering plus the clusters
/// that met the split condition but consist of coincident points and so
/// cannot be divided further.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitResult {
    pub clustering: Clustering,
    pub saturated: BTreeSet<usize>,
}

/// Which prefix of the pipeline to run; used by the ablation mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClusteringVariant {
    /// Plain k-means only.
    KmeansOnly,
    /// k-means plus constraint-guided refinement.
    SoftConstrained,
    /// The full pipeline including proportion-based splitting.
    Full,
}

impl ClusteringVariant {
    pub fn tag(self) -> &'static str {
        match self {
            Self::KmeansOnly => "KM",
            Self::SoftConstrained => "SoftConst",
            Self::Full => "Full",
        }
    }

    pub const ALL: [Self; 3] = [Self::KmeansOnly, Self::SoftConstrained, Self::Full];
}

/// The full pipeline: k-means, conflict refinement, proportion splitting.
///
/// `labels` carries the few visible target labels (`None` for unlabeled),
/// `proportions` the class prior estimated from them, and `m_u` the total
/// unlabeled count used by the split rule.
pub fn weakly_supervised_clustering(
    points: &Array2<f64>,
    labels: &[Option<usize>],
    proportions: &ClassProportions,
    m_u: usize,
    cfg: &WscConfig,
) -> Result<SplitResult, WscError> {
    run_pipeline(ClusteringVariant::Full, points, labels, proportions, m_u, cfg)
}

/// Runs a prefix of the pipeline, for ablation studies.
pub fn run_pipeline(
    variant: ClusteringVariant,
    points: &Array2<f64>,
    labels: &[Option<usize>],
    proportions: &ClassProportions,
    m_u: usize,
    cfg: &WscConfig,
) -> Result<SplitResult, WscError> {
    if labels.len() != points.nrows() {
        return Err(WscError::InvalidArgument(format!(
            "{} labels for {} points",
            labels.len(),
            points.nrows()
        )));
    }
    if cfg.k < proportions.num_classes() {
        return Err(WscError::InvalidArgument(format!(
            "k = {} is smaller than the class count {}",
            cfg.k,
            proportions.num_classes()
        )));
    }

    let initial = kmeans(points, cfg.k, cfg)?;
    if variant == ClusteringVariant::KmeansOnly {
        return Ok(SplitResult {
            clustering: initial,
            saturated: BTreeSet::new(),
        });
    }

    let refined = refine_conflicting(points, &initial, labels, cfg)?;
    if variant == ClusteringVariant::SoftConstrained {
        return Ok(SplitResult {
            clustering: refined,
            saturated: BTreeSet::new(),
        });
    }

    proportion_split(points, &refined, labels, proportions, m_u, cfg)
}

/// Writes `sample_id,cluster_id` rows plus a JSON stats sidecar.
pub fn export_clustering(
    clustering: &Clustering,
    labels: &[Option<usize>],
    sample_ids: &[usize],
    csv_path: impl AsRef<Path>,
    json_path: impl AsRef<Path>,
) -> Result<(), WscError> {
    if sample_ids.len() != clustering.assignments.len() {
        return Err(WscError::InvalidArgument(format!(
            "{} sample ids for {} clustered samples",
            sample_ids.len(),
            clustering.assignments.len()
        )));
    }
    let stats = ClusterStats::compute(clustering, labels)?;

    let csv_path = csv_path.as_ref();
    let io_err = |path: &Path, source: std::io::Error| WscError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut out = String::from("sample_id,cluster_id\n");
    for (&id, &cluster) in sample_ids.iter().zip(&clustering.assignments) {
        out.push_str(&format!("{id},{cluster}\n"));
    }
    std::fs::write(csv_path, out).map_err(|e| io_err(csv_path, e))?;

    let json_path = json_path.as_ref();
    let body = serde_json::to_string_pretty(&stats)
        .expect("cluster stats serialize infallibly");
    std::fs::write(json_path, body + "\n").map_err(|e| io_err(json_path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn blob_data(
        seed: u64,
        centers: &[[f64; 2]],
        sizes: &[usize],
        labels_per_blob: usize,
    ) -> (Array2<f64>, Vec<Option<usize>>) {
        let mut rng = crate::seeding::stream_rng(seed, 0x40, 0);
        let n: usize = sizes.iter().sum();
        let mut points = Array2::zeros((n, 2));
        let mut labels = vec![None; n];
        let mut row = 0;
        for (blob, (&center, &size)) in centers.iter().zip(sizes).enumerate() {
            for i in 0..size {
                points[[row, 0]] = center[0] + rng.random_range(-0.4..0.4);
                points[[row, 1]] = center[1] + rng.random_range(-0.4..0.4);
                if i < labels_per_blob {
                    labels[row] = Some(blob);
                }
                row += 1;
            }
        }
        (points, labels)
    }

    /// Partition equality irrespective of cluster numbering.
    fn same_partition(a: &[usize], b: &[usize]) -> bool {
        let canon = |v: &[usize]| {
            let mut remap = std::collections::BTreeMap::new();
            v.iter()
                .map(|&j| {
                    let next = remap.len();
                    *remap.entry(j).or_insert(next)
                })
                .collect::<Vec<usize>>()
        };
        canon(a) == canon(b)
    }

    #[test]
    fn clean_input_passes_through_up_to_relabeling() {
        // Widely separated pure blobs, plus one big unlabeled blob. The
        // unlabeled blob keeps every labeled cluster strictly below its
        // class share (the shares sum to m_u, so without it at least one
        // labeled cluster would always hit the inclusive split bound), and
        // the pipeline reduces to plain k-means.
        let (points, mut labels) = blob_data(
            1,
            &[[0.0, 0.0], [10.0, 0.0], [20.0, 0.0], [30.0, 0.0]],
            &[8, 8, 8, 12],
            2,
        );
        for label in labels.iter_mut().skip(24) {
            *label = None;
        }
        let p = ClassProportions::from_counts(&[2, 2, 2]).unwrap();
        let m_u = labels.iter().filter(|l| l.is_none()).count();
        let cfg = WscConfig {
            k: 4,
            seed: 1,
            ..WscConfig::default()
        };
        let plain = kmeans(&points, 4, &cfg).unwrap();
        let full = weakly_supervised_clustering(&points, &labels, &p, m_u, &cfg).unwrap();
        assert!(same_partition(&plain.assignments, &full.clustering.assignments));
        assert!(full.saturated.is_empty());
    }

    #[test]
    fn pipeline_never_mixes_labeled_classes() {
        let (points, labels) =
            blob_data(2, &[[0.0, 0.0], [1.5, 0.0], [10.0, 0.0]], &[12, 12, 6], 3);
        let p = ClassProportions::from_counts(&[3, 3, 3]).unwrap();
        let m_u = labels.iter().filter(|l| l.is_none()).count();
        // Deliberately small k so the first two blobs collide.
        let cfg = WscConfig {
            k: 3,
            seed: 2,
            ..WscConfig::default()
        };
        let result = weakly_supervised_clustering(&points, &labels, &p, m_u, &cfg).unwrap();
        assert!(conflicting_clusters(&result.clustering, &labels).is_empty());
    }

    #[test]
    fn k_below_class_count_is_rejected() {
        let (points, labels) = blob_data(3, &[[0.0, 0.0], [5.0, 0.0]], &[4, 4], 1);
        let p = ClassProportions::from_counts(&[1, 1]).unwrap();
        let cfg = WscConfig {
            k: 1,
            seed: 3,
            ..WscConfig::default()
        };
        assert!(matches!(
            weakly_supervised_clustering(&points, &labels, &p, 6, &cfg),
            Err(WscError::InvalidArgument(_))
        ));
    }

    #[test]
    fn stats_summarize_labels_per_cluster() {
        let clustering = Clustering {
            assignments: vec![0, 0, 0, 1, 1, 2],
            centroids: Array2::zeros((3, 1)),
        };
        let labels = vec![Some(1), Some(1), None, Some(0), Some(2), None];
        let stats = ClusterStats::compute(&clustering, &labels).unwrap();
        assert_eq!(stats.k, 3);
        assert_eq!(stats.clusters[0].labeled_class, Some(1));
        assert_eq!(stats.clusters[0].labeled_count, 2);
        assert_eq!(stats.clusters[0].unlabeled_count, 1);
        // Mixed labels leave the class undefined.
        assert_eq!(stats.clusters[1].labeled_class, None);
        assert_eq!(stats.clusters[1].labeled_count, 2);
        assert_eq!(stats.clusters[2].labeled_class, None);
        assert_eq!(stats.clusters[2].unlabeled_count, 1);
    }

    #[test]
    fn export_writes_csv_and_stats() {
        let (points, labels) = blob_data(4, &[[0.0, 0.0], [8.0, 0.0]], &[5, 5], 1);
        let cfg = WscConfig {
            k: 2,
            seed: 4,
            ..WscConfig::default()
        };
        let clustering = kmeans(&points, 2, &cfg).unwrap();
        let ids: Vec<usize> = (100..110).collect();
        let dir = tempfile::tempdir().unwrap();
        let csv_path = dir.path().join("clusters.csv");
        let json_path = dir.path().join("clusters.json");
        export_clustering(&clustering, &labels, &ids, &csv_path, &json_path).unwrap();

        let csv = std::fs::read_to_string(&csv_path).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("sample_id,cluster_id"));
        assert_eq!(csv.lines().count(), 11);
        assert!(csv.lines().nth(1).unwrap().starts_with("100,"));

        let stats: ClusterStats =
            serde_json::from_str(&std::fs::read_to_string(&json_path).unwrap()).unwrap();
        assert_eq!(stats.k, 2);
        let total: usize = stats
            .clusters
            .iter()
            .map(|c| c.labeled_count + c.unlabeled_count)
            .sum();
        assert_eq!(total, 10);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        /// End-to-end pipeline postconditions on randomized blob layouts.
        #[test]
        fn pipeline_postconditions_hold(
            seed in 0u64..1000,
            sizes in proptest::collection::vec(2usize..10, 2..4),
            k in 3usize..7,
        ) {
            let centers: Vec<[f64; 2]> = (0..sizes.len())
                .map(|i| [3.0 * i as f64, (i % 2) as f64])
                .collect();
            let (points, labels) = blob_data(seed, &centers, &sizes, 1);
            let counts = vec![1usize; sizes.len()];
            let p = ClassProportions::from_counts(&counts).unwrap();
            let m_u = labels.iter().filter(|l| l.is_none()).count();
            let cfg = WscConfig { k, seed, ..WscConfig::default() };

            let result = weakly_supervised_clustering(&points, &labels, &p, m_u, &cfg).unwrap();
            let clustering = &result.clustering;
            let k_out = clustering.k();

            // Assignments in range, no empty cluster.
            let mut counts = vec![0usize; k_out];
            for &j in &clustering.assignments {
                prop_assert!(j < k_out);
                counts[j] += 1;
            }
            prop_assert!(counts.iter().all(|&c| c > 0));

            // Centroids are the exact member means.
            for j in 0..k_out {
                let members: Vec<usize> = clustering
                    .assignments
                    .iter()
                    .enumerate()
                    .filter(|&(_, &a)| a == j)
                    .map(|(i, _)| i)
                    .collect();
                for col in 0..points.ncols() {
                    let mean: f64 = members.iter().map(|&i| points[[i, col]]).sum::<f64>()
                        / members.len() as f64;
                    prop_assert!((clustering.centroids[[j, col]] - mean).abs() < 1e-9);
                }
            }

            // No labeled conflicts survive.
            prop_assert!(conflicting_clusters(clustering, &labels).is_empty());

            // Every splittable, non-saturated labeled cluster is within its
            // class share.
            let stats = ClusterStats::compute(clustering, &labels).unwrap();
            for stat in &stats.clusters {
                if stat.labeled_count == 0
                    || stat.labeled_count + stat.unlabeled_count < 2
                    || result.saturated.contains(&stat.cluster_id)
                {
                    continue;
                }
                let class = stat.labeled_class.expect("conflict-free labeled cluster");
                prop_assert!(
                    m_u as f64 * p.get(class) > stat.unlabeled_count as f64,
                    "cluster {} still oversized", stat.cluster_id
                );
            }

            // Determinism.
            let again = weakly_supervised_clustering(&points, &labels, &p, m_u, &cfg).unwrap();
            prop_assert_eq!(&result, &again);
        }
    }
}
