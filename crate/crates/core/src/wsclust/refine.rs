//! The two cluster-refinement stages: constraint-guided re-clustering of
//! conflicting clusters, then proportion-based splitting of oversized ones.

use std::collections::{BTreeSet, VecDeque};

use ndarray::Array2;

use super::constraints::{conflicting_clusters, ConstraintSet};
use super::kmeans::cluster_with_rng;
use super::{Clustering, SplitResult, WscConfig, WscError};
use crate::data::ClassProportions;
use crate::seeding::{stream_rng, SALT_PROPSPLIT, SALT_REFINE};

fn rows_of(points: &Array2<f64>, members: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((members.len(), points.ncols()));
    for (row, &i) in members.iter().enumerate() {
        out.row_mut(row).assign(&points.row(i));
    }
    out
}

fn rebuild(points: &Array2<f64>, groups: &[Vec<usize>]) -> Clustering {
    let n: usize = groups.iter().map(Vec::len).sum();
    debug_assert_eq!(n, points.nrows());
    let mut assignments = vec![usize::MAX; n];
    let mut centroids = Array2::zeros((groups.len(), points.ncols()));
    for (j, members) in groups.iter().enumerate() {
        debug_assert!(!members.is_empty());
        for &i in members {
            assignments[i] = j;
            let mut row = centroids.row_mut(j);
            row += &points.row(i);
        }
        let mut row = centroids.row_mut(j);
        row /= members.len() as f64;
    }
    Clustering {
        assignments,
        centroids,
    }
}

fn members_by_cluster(clustering: &Clustering) -> Vec<Vec<usize>> {
    let mut groups = vec![Vec::new(); clustering.k()];
    for (i, &j) in clustering.assignments.iter().enumerate() {
        groups[j].push(i);
    }
    groups
}

/// Re-clusters every conflicting cluster — one whose labeled members carry
/// at least two distinct labels — over its own members, with must-links
/// between same-labeled and cannot-links between differently-labeled pairs.
///
/// The local cluster count is `max(2, round(k * n_i / n))` for a cluster of
/// size `n_i` among `n` points, raised further when the cluster holds more
/// distinct labels, and again if a constrained assignment turns out
/// infeasible (possible with greedy sweeps even at the label-count bound).
/// Non-conflicting clusters pass through untouched; ids are renumbered so
/// surviving clusters keep their relative order, with each conflicting
/// cluster replaced in place by its sub-clusters. In the output no cluster
/// mixes labels.
pub fn refine_conflicting(
    points: &Array2<f64>,
    clustering: &Clustering,
    labels: &[Option<usize>],
    cfg: &WscConfig,
) -> Result<Clustering, WscError> {
    if labels.len() != clustering.assignments.len() {
        return Err(WscError::InvalidArgument(format!(
            "{} labels for {} clustered samples",
            labels.len(),
            clustering.assignments.len()
        )));
    }
    let conflicts = conflicting_clusters(clustering, labels);
    if conflicts.is_empty() {
        return Ok(clustering.clone());
    }

    let groups = members_by_cluster(clustering);
    let mut refined: Vec<Vec<usize>> = Vec::with_capacity(groups.len());
    for (cluster_id, members) in groups.iter().enumerate() {
        if !conflicts.contains(&cluster_id) {
            refined.push(members.clone());
            continue;
        }
        let position = conflicts.range(..cluster_id).count();
        let sub_groups = split_conflicting(points, members, labels, cfg, position as u64)?;
        refined.extend(sub_groups);
    }

    let result = rebuild(points, &refined);
    debug_assert!(conflicting_clusters(&result, labels).is_empty());
    Ok(result)
}

fn split_conflicting(
    points: &Array2<f64>,
    members: &[usize],
    labels: &[Option<usize>],
    cfg: &WscConfig,
    position: u64,
) -> Result<Vec<Vec<usize>>, WscError> {
    let n = points.nrows();
    let n_i = members.len();

    let mut constraints = ConstraintSet::new();
    let labeled: Vec<(usize, usize)> = members
        .iter()
        .enumerate()
        .filter_map(|(local, &i)| labels[i].map(|l| (local, l)))
        .collect();
    for (pos, &(a, la)) in labeled.iter().enumerate() {
        for &(b, lb) in &labeled[pos + 1..] {
            if la == lb {
                constraints.add_must(a, b)?;
            } else {
                constraints.add_cannot(a, b)?;
            }
        }
    }
    let distinct = labeled
        .iter()
        .map(|&(_, l)| l)
        .collect::<BTreeSet<_>>()
        .len();

    let local_points = rows_of(points, members);
    let proportional = (cfg.k as f64 * n_i as f64 / n as f64).round() as usize;
    let mut k_i = proportional.max(2).max(distinct);
    loop {
        let mut rng = stream_rng(cfg.seed, SALT_REFINE, position);
        match cluster_with_rng(&local_points, k_i, &constraints, cfg, &mut rng) {
            Ok(local) => {
                let mut sub = vec![Vec::new(); local.k()];
                for (row, &j) in local.assignments.iter().enumerate() {
                    sub[j].push(members[row]);
                }
                return Ok(sub);
            }
            Err(WscError::Infeasible { .. }) if k_i < n_i => k_i += 1,
            Err(e) => return Err(e),
        }
    }
}

/// Splits clusters that hold more unlabeled samples than their class's fair
/// share: a labeled cluster of class `c` is halved by plain k-means
/// whenever `m_u * p_c <= u_i` (inclusive), where `m_u` is the total
/// unlabeled count, `p_c` the class proportion and `u_i` the cluster's
/// unlabeled count. Halves re-enter the worklist only while they keep at
/// least one labeled sample and two members; clusters of coincident points
/// cannot be halved and are reported as saturated instead.
///
/// Requires a conflict-free clustering, so each labeled cluster has a
/// single well-defined class.
pub fn proportion_split(
    points: &Array2<f64>,
    clustering: &Clustering,
    labels: &[Option<usize>],
    proportions: &ClassProportions,
    m_u: usize,
    cfg: &WscConfig,
) -> Result<SplitResult, WscError> {
    if labels.len() != clustering.assignments.len() {
        return Err(WscError::InvalidArgument(format!(
            "{} labels for {} clustered samples",
            labels.len(),
            clustering.assignments.len()
        )));
    }
    if !conflicting_clusters(clustering, labels).is_empty() {
        return Err(WscError::InvalidArgument(
            "proportion-based splitting requires a conflict-free clustering".into(),
        ));
    }
    if let Some(&class) = labels
        .iter()
        .flatten()
        .find(|&&l| l >= proportions.num_classes())
    {
        return Err(WscError::InvalidArgument(format!(
            "label {class} has no class proportion"
        )));
    }

    let mut groups = members_by_cluster(clustering);
    let mut saturated = BTreeSet::new();
    let mut worklist: VecDeque<usize> = (0..groups.len()).collect();
    let mut split_seq = 0u64;
    let mut splits = 0usize;

    while let Some(slot) = worklist.pop_front() {
        let members = &groups[slot];
        let labeled_class = members.iter().find_map(|&i| labels[i]);
        let Some(class) = labeled_class else {
            continue;
        };
        if members.len() < 2 {
            continue;
        }
        let u_i = members.iter().filter(|&&i| labels[i].is_none()).count();
        if m_u as f64 * proportions.get(class) > u_i as f64 {
            continue;
        }

        let first = members[0];
        if members
            .iter()
            .all(|&i| points.row(i) == points.row(first))
        {
            saturated.insert(slot);
            continue;
        }

        let local_points = rows_of(points, members);
        let mut rng = stream_rng(cfg.seed, SALT_PROPSPLIT, split_seq);
        split_seq += 1;
        let halves = cluster_with_rng(&local_points, 2, &ConstraintSet::new(), cfg, &mut rng)?;
        if halves.k() < 2 {
            saturated.insert(slot);
            continue;
        }
        let mut first_half = Vec::new();
        let mut second_half = Vec::new();
        for (row, &j) in halves.assignments.iter().enumerate() {
            let member = groups[slot][row];
            if j == 0 {
                first_half.push(member);
            } else {
                second_half.push(member);
            }
        }
        splits += 1;
        debug_assert!(splits <= points.nrows());

        let eligible = |g: &[usize]| g.len() >= 2 && g.iter().any(|&i| labels[i].is_some());
        let new_slot = groups.len();
        let requeue_first = eligible(&first_half);
        let requeue_second = eligible(&second_half);
        groups[slot] = first_half;
        groups.push(second_half);
        if requeue_first {
            worklist.push_back(slot);
        }
        if requeue_second {
            worklist.push_back(new_slot);
        }
    }

    Ok(SplitResult {
        clustering: rebuild(points, &groups),
        saturated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wsclust::kmeans;
    use ndarray::{array, Array2};
    use rand::Rng as _;

    fn cfg(seed: u64) -> WscConfig {
        WscConfig {
            seed,
            ..WscConfig::default()
        }
    }

    fn blob(rng: &mut rand_chacha::ChaCha8Rng, center: [f64; 2], n: usize) -> Vec<[f64; 2]> {
        (0..n)
            .map(|_| {
                [
                    center[0] + rng.random_range(-0.3..0.3),
                    center[1] + rng.random_range(-0.3..0.3),
                ]
            })
            .collect()
    }

    fn to_matrix(points: &[[f64; 2]]) -> Array2<f64> {
        let mut m = Array2::zeros((points.len(), 2));
        for (i, p) in points.iter().enumerate() {
            m[[i, 0]] = p[0];
            m[[i, 1]] = p[1];
        }
        m
    }

    #[test]
    fn conflict_free_input_passes_through() {
        let points = array![[0.0, 0.0], [0.1, 0.0], [5.0, 5.0], [5.1, 5.0]];
        let clustering = kmeans(&points, 2, &cfg(0)).unwrap();
        let labels = vec![Some(0), None, Some(1), None];
        let refined = refine_conflicting(&points, &clustering, &labels, &cfg(0)).unwrap();
        assert_eq!(refined, clustering);
    }

    #[test]
    fn conflicting_cluster_gets_label_pure_subclusters() {
        // Two tight blobs of different classes forced into one k-means
        // cluster by a third, far-away blob.
        let mut rng = crate::seeding::stream_rng(5, 0x31, 0);
        let mut pts = blob(&mut rng, [0.0, 0.0], 6);
        pts.extend(blob(&mut rng, [2.0, 0.0], 6));
        pts.extend(blob(&mut rng, [40.0, 0.0], 6));
        let points = to_matrix(&pts);
        let mut labels = vec![None; 18];
        labels[0] = Some(0);
        labels[1] = Some(0);
        labels[6] = Some(1);
        labels[7] = Some(1);
        labels[12] = Some(0);

        let mut config = cfg(3);
        config.k = 2;
        let clustering = kmeans(&points, 2, &config).unwrap();
        assert!(!conflicting_clusters(&clustering, &labels).is_empty());

        let refined = refine_conflicting(&points, &clustering, &labels, &config).unwrap();
        assert!(conflicting_clusters(&refined, &labels).is_empty());
        // Differently-labeled points are now separated.
        assert_ne!(refined.assignments[0], refined.assignments[6]);
        assert_ne!(refined.assignments[1], refined.assignments[7]);
    }

    #[test]
    fn local_cluster_count_follows_size_ratio() {
        // One conflicting cluster of 30 points out of 300 with k = 30
        // should be re-clustered into round(30 * 30/300) = 3 parts.
        let mut rng = crate::seeding::stream_rng(8, 0x32, 0);
        let mut pts = Vec::new();
        for i in 0..9 {
            pts.extend(blob(&mut rng, [10.0 * (i + 1) as f64, 50.0], 30));
        }
        pts.extend(blob(&mut rng, [0.0, 0.0], 10));
        pts.extend(blob(&mut rng, [0.0, 2.0], 10));
        pts.extend(blob(&mut rng, [0.0, 4.0], 10));
        let points = to_matrix(&pts);
        let mut labels = vec![None; 300];
        labels[270] = Some(0);
        labels[280] = Some(1);
        labels[290] = Some(0);

        // Build the conflicting cluster by hand: the last 30 points.
        let mut groups: Vec<Vec<usize>> = (0..9)
            .map(|g| (g * 30..(g + 1) * 30).collect())
            .collect();
        groups.push((270..300).collect());
        let clustering = rebuild(&points, &groups);
        assert_eq!(
            conflicting_clusters(&clustering, &labels).into_iter().collect::<Vec<_>>(),
            vec![9]
        );

        let refined = refine_conflicting(&points, &clustering, &labels, &cfg(8)).unwrap();
        // Nine untouched clusters plus three sub-clusters.
        assert_eq!(refined.k(), 12);
        assert!(conflicting_clusters(&refined, &labels).is_empty());
    }

    #[test]
    fn proportion_split_requires_conflict_free_input() {
        let points = array![[0.0, 0.0], [0.1, 0.0]];
        let clustering = rebuild(&points, &[vec![0, 1]]);
        let labels = vec![Some(0), Some(1)];
        let p = ClassProportions::from_counts(&[1, 1]).unwrap();
        assert!(matches!(
            proportion_split(&points, &clustering, &labels, &p, 0, &cfg(0)),
            Err(WscError::InvalidArgument(_))
        ));
    }

    #[test]
    fn oversized_cluster_is_split_until_proportionate() {
        // One labeled cluster hoards all 40 unlabeled points while its
        // class only warrants a fifth of them.
        let mut rng = crate::seeding::stream_rng(21, 0x33, 0);
        let mut pts = blob(&mut rng, [0.0, 0.0], 20);
        pts.extend(blob(&mut rng, [3.0, 0.0], 21));
        let points = to_matrix(&pts);
        let mut labels = vec![None; 41];
        labels[40] = Some(0);
        let p = ClassProportions::from_counts(&[1, 4]).unwrap();

        let clustering = rebuild(&points, &[(0..41).collect()]);
        let result =
            proportion_split(&points, &clustering, &labels, &p, 40, &cfg(21)).unwrap();

        // The labeled cluster was split at least once, and the surviving
        // labeled cluster is within its share: 40 * 0.2 = 8 > u_i.
        assert!(result.clustering.k() >= 2);
        let labeled_cluster = result.clustering.assignments[40];
        let u = result
            .clustering
            .assignments
            .iter()
            .zip(&labels)
            .filter(|&(&j, l)| j == labeled_cluster && l.is_none())
            .count();
        assert!(
            result.saturated.contains(&labeled_cluster) || (u as f64) < 40.0 * 0.2,
            "cluster still holds {u} unlabeled points"
        );
    }

    #[test]
    fn split_condition_is_inclusive() {
        // Single class, so p = 1.0 and m_u * p = 4 equals u_i = 4 exactly:
        // the inclusive bound must trigger a split.
        let mut rng = crate::seeding::stream_rng(22, 0x34, 0);
        let mut pts = blob(&mut rng, [0.0, 0.0], 2);
        pts.extend(blob(&mut rng, [6.0, 0.0], 2));
        pts.push([3.0, 0.0]);
        let points = to_matrix(&pts);
        let mut labels = vec![None; 5];
        labels[4] = Some(0);

        let p = ClassProportions::from_counts(&[5]).unwrap();
        let clustering = rebuild(&points, &[(0..5).collect()]);
        let result = proportion_split(&points, &clustering, &labels, &p, 4, &cfg(22)).unwrap();
        assert!(result.clustering.k() >= 2, "inclusive bound must trigger a split");

        // One unlabeled point fewer and the strict side of the bound holds:
        // 4 * 1.0 > 3, so nothing is split.
        let labels_fewer = vec![None, None, None, Some(0), Some(0)];
        let no_split =
            proportion_split(&points, &clustering, &labels_fewer, &p, 4, &cfg(22)).unwrap();
        assert_eq!(no_split.clustering.k(), 1);
    }

    #[test]
    fn coincident_cluster_is_saturated_not_split() {
        let points = array![
            [1.0, 1.0],
            [1.0, 1.0],
            [1.0, 1.0],
            [9.0, 9.0],
            [9.5, 9.0]
        ];
        let labels = vec![Some(0), None, None, Some(1), None];
        let clustering = rebuild(&points, &[vec![0, 1, 2], vec![3, 4]]);
        let p = ClassProportions::from_counts(&[1, 99]).unwrap();
        let result = proportion_split(&points, &clustering, &labels, &p, 3, &cfg(1)).unwrap();
        // m_u * p_0 = 0.03 <= u_0 = 2, but the members coincide.
        assert!(result.saturated.contains(&0));
        let members: Vec<usize> = result
            .clustering
            .assignments
            .iter()
            .enumerate()
            .filter(|&(_, &j)| j == result.clustering.assignments[0])
            .map(|(i, _)| i)
            .collect();
        assert_eq!(members, vec![0, 1, 2]);
    }

    #[test]
    fn unlabeled_clusters_never_split() {
        let points = array![[0.0, 0.0], [0.2, 0.0], [8.0, 0.0], [8.2, 0.0], [4.0, 3.0]];
        let labels = vec![None, None, None, None, Some(0)];
        let clustering = rebuild(&points, &[vec![0, 1, 2, 3], vec![4]]);
        let p = ClassProportions::from_counts(&[1]).unwrap();
        let result = proportion_split(&points, &clustering, &labels, &p, 4, &cfg(2)).unwrap();
        // The big cluster has no label, so it stays whole even though it
        // holds every unlabeled point.
        assert_eq!(result.clustering.k(), 2);
        assert!(result.saturated.is_empty());
    }
}
