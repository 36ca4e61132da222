//! Cluster-guided triplet mining.
//!
//! A triplet pulls a labeled target sample (anchor) toward an unlabeled
//! sample of its own cluster and pushes it away from an unlabeled sample of
//! a different cluster. No pseudo-labels are involved anywhere: cluster
//! membership is the only signal.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::AdaptError;
use crate::wsclust::Clustering;

/// Indices are positions in the clustered pool (the same order as the
/// assignment vector), not dataset rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triplet {
    /// A labeled pool member.
    pub anchor: usize,
    /// An unlabeled member of the anchor's cluster.
    pub positive: usize,
    /// An unlabeled member of some other cluster.
    pub negative: usize,
}

struct ClusterMembers {
    labeled: Vec<usize>,
    unlabeled: Vec<usize>,
}

/// Draws `n` triplets: anchor cluster uniform among eligible clusters (those
/// holding both labeled and unlabeled samples, with unlabeled samples left
/// elsewhere), then anchor / positive / negative each uniform within their
/// groups. Errors when no cluster is eligible, in which case the caller
/// skips the triplet loss for the round.
pub fn mine_triplets(
    clustering: &Clustering,
    labels: &[Option<usize>],
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Triplet>, AdaptError> {
    if labels.len() != clustering.assignments.len() {
        return Err(AdaptError::InvalidArgument(format!(
            "{} labels for {} clustered samples",
            labels.len(),
            clustering.assignments.len()
        )));
    }
    let k = clustering.k();
    let mut members: Vec<ClusterMembers> = (0..k)
        .map(|_| ClusterMembers {
            labeled: Vec::new(),
            unlabeled: Vec::new(),
        })
        .collect();
    for (i, (&cluster, label)) in clustering.assignments.iter().zip(labels).enumerate() {
        if label.is_some() {
            members[cluster].labeled.push(i);
        } else {
            members[cluster].unlabeled.push(i);
        }
    }
    let total_unlabeled: usize = members.iter().map(|m| m.unlabeled.len()).sum();
    let eligible: Vec<usize> = (0..k)
        .filter(|&j| {
            !members[j].labeled.is_empty()
                && !members[j].unlabeled.is_empty()
                && total_unlabeled > members[j].unlabeled.len()
        })
        .collect();
    if eligible.is_empty() {
        return Err(AdaptError::NoEligibleCluster);
    }

    let mut triplets = Vec::with_capacity(n);
    for _ in 0..n {
        let cluster = eligible[rng.random_range(0..eligible.len())];
        let m = &members[cluster];
        let anchor = m.labeled[rng.random_range(0..m.labeled.len())];
        let positive = m.unlabeled[rng.random_range(0..m.unlabeled.len())];
        // Uniform over the unlabeled samples of all *other* clusters.
        let mut skip = rng.random_range(0..total_unlabeled - m.unlabeled.len());
        let mut negative = None;
        'outer: for (j, other) in members.iter().enumerate() {
            if j == cluster {
                continue;
            }
            for &i in &other.unlabeled {
                if skip == 0 {
                    negative = Some(i);
                    break 'outer;
                }
                skip -= 1;
            }
        }
        triplets.push(Triplet {
            anchor,
            positive,
            negative: negative.expect("counted unlabeled sample exists"),
        });
    }
    Ok(triplets)
}
