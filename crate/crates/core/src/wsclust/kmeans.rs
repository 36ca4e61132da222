//! Lloyd's algorithm with k-means++ seeding, optionally under pairwise
//! constraints.
//!
//! One engine serves both the plain and the constrained variant: with an
//! empty [`ConstraintSet`] the constrained sweep degenerates to
//! nearest-centroid assignment, so `soft_constrained_kmeans` with no
//! constraints is bit-identical to `kmeans` at the same seed.

use ndarray::{Array2, ArrayView1};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::constraints::Adjacency;
use super::{Clustering, ConstraintSet, WscConfig, WscError};
use crate::seeding::{stream_rng, SALT_CLUSTER};

fn dist2(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Plain k-means: k-means++ seeding, Lloyd iterations, best of
/// `cfg.kmeans_restarts` restarts by final objective.
///
/// `k` may exceed the number of points; empty clusters are compacted away,
/// so the result can come back with fewer than `k` clusters.
pub fn kmeans(points: &Array2<f64>, k: usize, cfg: &WscConfig) -> Result<Clustering, WscError> {
    let mut rng = stream_rng(cfg.seed, SALT_CLUSTER, 0);
    cluster_with_rng(points, k, &ConstraintSet::new(), cfg, &mut rng)
}

/// Penalized k-means: each violated must-link costs `cfg.must_penalty` in
/// the assignment objective, while cannot-links are enforced outright — a
/// point is never assigned to a cluster already holding one of its
/// cannot-link partners.
///
/// The assignment sweep processes constrained points first, in ascending
/// index order, then the rest by nearest centroid. Errors with the
/// offending point index if every cluster is excluded for some point.
pub fn soft_constrained_kmeans(
    points: &Array2<f64>,
    k: usize,
    constraints: &ConstraintSet,
    cfg: &WscConfig,
) -> Result<Clustering, WscError> {
    let mut rng = stream_rng(cfg.seed, SALT_CLUSTER, 0);
    cluster_with_rng(points, k, constraints, cfg, &mut rng)
}

/// Restart loop over the shared engine. Infeasible restarts are skipped;
/// the error surfaces only if no restart finds an admissible assignment.
pub(crate) fn cluster_with_rng(
    points: &Array2<f64>,
    k: usize,
    constraints: &ConstraintSet,
    cfg: &WscConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Clustering, WscError> {
    if k < 1 {
        return Err(WscError::InvalidArgument("k must be >= 1".into()));
    }
    if points.nrows() == 0 {
        return Err(WscError::InvalidArgument("no points to cluster".into()));
    }
    cfg.validate()?;
    let adjacency = constraints.adjacency(points.nrows())?;

    let mut best: Option<(Clustering, f64)> = None;
    let mut infeasible = None;
    for _ in 0..cfg.kmeans_restarts {
        match run_once(points, k, &adjacency, cfg, rng) {
            Ok((clustering, objective)) => {
                if best.as_ref().is_none_or(|(_, b)| objective < *b) {
                    best = Some((clustering, objective));
                }
            }
            Err(e @ WscError::Infeasible { .. }) => infeasible = Some(e),
            Err(e) => return Err(e),
        }
    }
    match best {
        Some((clustering, _)) => Ok(clustering),
        None => Err(infeasible.expect("restarts > 0, so failure implies an infeasibility")),
    }
}

fn run_once(
    points: &Array2<f64>,
    k: usize,
    adjacency: &Adjacency,
    cfg: &WscConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Clustering, f64), WscError> {
    let mut centroids = kmeanspp_seeds(points, k, rng);
    let mut assignments: Vec<usize> = vec![usize::MAX; points.nrows()];
    let mut prev_objective = f64::INFINITY;

    for _ in 0..cfg.kmeans_max_iter {
        let new_assignments = assign_sweep(points, &centroids, adjacency, cfg.must_penalty)?;
        let movement = update_centroids(points, &new_assignments, &mut centroids);
        let objective = penalized_objective(points, &new_assignments, &centroids, adjacency, cfg);
        if adjacency.is_empty() {
            debug_assert!(
                objective <= prev_objective * (1.0 + 1e-12) + 1e-12,
                "k-means objective increased: {prev_objective} -> {objective}"
            );
        }
        let stable = new_assignments == assignments;
        assignments = new_assignments;
        prev_objective = objective;
        if stable || movement < cfg.tol {
            break;
        }
    }

    let clustering = compact(points, assignments);
    let objective =
        penalized_objective(points, &clustering.assignments, &clustering.centroids, adjacency, cfg);
    Ok((clustering, objective))
}

/// k-means++: first seed uniform, every further seed drawn with probability
/// proportional to squared distance from the nearest seed so far. When all
/// mass is zero (fewer distinct points than seeds) the draw falls back to
/// uniform, which duplicates centroids; the resulting empty clusters are
/// compacted after Lloyd.
fn kmeanspp_seeds(points: &Array2<f64>, k: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let n = points.nrows();
    let mut centroids = Array2::zeros((k, points.ncols()));
    let first = rng.random_range(0..n);
    centroids.row_mut(0).assign(&points.row(first));

    let mut nearest: Vec<f64> = (0..n)
        .map(|i| dist2(points.row(i), centroids.row(0)))
        .collect();
    for c in 1..k {
        let total: f64 = nearest.iter().sum();
        let chosen = if total > 0.0 {
            let mut t = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in nearest.iter().enumerate() {
                if t < w {
                    chosen = i;
                    break;
                }
                t -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(c).assign(&points.row(chosen));
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(dist2(points.row(i), centroids.row(c)));
        }
    }
    centroids
}

fn assign_sweep(
    points: &Array2<f64>,
    centroids: &Array2<f64>,
    adjacency: &Adjacency,
    must_penalty: f64,
) -> Result<Vec<usize>, WscError> {
    let k = centroids.nrows();
    let mut assignments = vec![usize::MAX; points.nrows()];

    for &i in &adjacency.constrained {
        let mut best: Option<(f64, usize)> = None;
        'clusters: for j in 0..k {
            for &partner in &adjacency.cannot[i] {
                if assignments[partner] == j {
                    continue 'clusters;
                }
            }
            let mut cost = dist2(points.row(i), centroids.row(j));
            for &partner in &adjacency.must[i] {
                if assignments[partner] != usize::MAX && assignments[partner] != j {
                    cost += must_penalty;
                }
            }
            if best.is_none_or(|(b, _)| cost < b) {
                best = Some((cost, j));
            }
        }
        match best {
            Some((_, j)) => assignments[i] = j,
            None => return Err(WscError::Infeasible { point: i }),
        }
    }

    for (i, slot) in assignments.iter_mut().enumerate() {
        if *slot != usize::MAX {
            continue;
        }
        let mut best = (f64::INFINITY, 0);
        for j in 0..k {
            let d = dist2(points.row(i), centroids.row(j));
            if d < best.0 {
                best = (d, j);
            }
        }
        *slot = best.1;
    }
    Ok(assignments)
}

/// Means update; clusters left empty keep their previous centroid so they
/// can recapture points later. Returns the largest centroid displacement.
fn update_centroids(
    points: &Array2<f64>,
    assignments: &[usize],
    centroids: &mut Array2<f64>,
) -> f64 {
    let k = centroids.nrows();
    let d = centroids.ncols();
    let mut sums = Array2::<f64>::zeros((k, d));
    let mut counts = vec![0usize; k];
    for (i, &j) in assignments.iter().enumerate() {
        counts[j] += 1;
        let mut row = sums.row_mut(j);
        row += &points.row(i);
    }
    let mut movement: f64 = 0.0;
    for j in 0..k {
        if counts[j] == 0 {
            continue;
        }
        let mean = sums.row(j).mapv(|v| v / counts[j] as f64);
        movement = movement.max(dist2(centroids.row(j), mean.view()).sqrt());
        centroids.row_mut(j).assign(&mean);
    }
    movement
}

fn penalized_objective(
    points: &Array2<f64>,
    assignments: &[usize],
    centroids: &Array2<f64>,
    adjacency: &Adjacency,
    cfg: &WscConfig,
) -> f64 {
    let sse: f64 = assignments
        .iter()
        .enumerate()
        .map(|(i, &j)| dist2(points.row(i), centroids.row(j)))
        .sum();
    let violated: usize = adjacency
        .constrained
        .iter()
        .map(|&i| {
            adjacency.must[i]
                .iter()
                .filter(|&&p| p > i && assignments[p] != assignments[i])
                .count()
        })
        .sum();
    sse + cfg.must_penalty * violated as f64
}

/// Drops empty clusters, renumbers the rest in ascending id order, and
/// recomputes every centroid as the exact mean of its members.
fn compact(points: &Array2<f64>, assignments: Vec<usize>) -> Clustering {
    let max_id = assignments.iter().max().copied().unwrap_or(0);
    let mut counts = vec![0usize; max_id + 1];
    for &j in &assignments {
        counts[j] += 1;
    }
    let mut remap = vec![usize::MAX; max_id + 1];
    let mut next = 0;
    for (j, &c) in counts.iter().enumerate() {
        if c > 0 {
            remap[j] = next;
            next += 1;
        }
    }
    let assignments: Vec<usize> = assignments.into_iter().map(|j| remap[j]).collect();

    let mut centroids = Array2::zeros((next, points.ncols()));
    let mut members = vec![0usize; next];
    for (i, &j) in assignments.iter().enumerate() {
        members[j] += 1;
        let mut row = centroids.row_mut(j);
        row += &points.row(i);
    }
    for (j, &m) in members.iter().enumerate() {
        let mut row = centroids.row_mut(j);
        row /= m as f64;
    }
    Clustering {
        assignments,
        centroids,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn cfg(seed: u64) -> WscConfig {
        WscConfig {
            seed,
            ..WscConfig::default()
        }
    }

    #[test]
    fn separates_two_obvious_groups() {
        let points = array![[0.0, 0.0], [0.1, 0.0], [10.0, 0.0], [10.1, 0.0]];
        let c = kmeans(&points, 2, &cfg(0)).unwrap();
        assert_eq!(c.k(), 2);
        assert_eq!(c.assignments[0], c.assignments[1]);
        assert_eq!(c.assignments[2], c.assignments[3]);
        assert_ne!(c.assignments[0], c.assignments[2]);
        assert!(c.objective(&points) < 0.011);
    }

    #[test]
    fn k_equals_n_reaches_zero_objective() {
        let points = array![[0.0, 0.0], [1.0, 0.0], [2.0, 5.0], [-3.0, 1.0]];
        let c = kmeans(&points, 4, &cfg(1)).unwrap();
        assert_eq!(c.k(), 4);
        assert!(c.objective(&points) < 1e-24);
    }

    #[test]
    fn k_larger_than_n_compacts() {
        let points = array![[0.0, 0.0], [5.0, 0.0]];
        let c = kmeans(&points, 6, &cfg(2)).unwrap();
        assert_eq!(c.k(), 2);
        assert!(c.assignments.iter().all(|&j| j < 2));
    }

    #[test]
    fn deterministic_per_seed() {
        let points = array![
            [0.3, 1.0],
            [0.9, -0.2],
            [4.0, 4.1],
            [4.2, 3.8],
            [-2.0, 0.5],
            [0.0, 0.0]
        ];
        let a = kmeans(&points, 3, &cfg(9)).unwrap();
        let b = kmeans(&points, 3, &cfg(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn matches_brute_force_on_tiny_instances() {
        // Deterministic pseudo-random instances; the exhaustive optimum
        // enumerates every 2-partition.
        use rand::Rng as _;
        let mut rng = crate::seeding::stream_rng(77, 0x30, 0);
        for trial in 0..10 {
            let n = 4 + (trial % 5);
            let mut points = Array2::zeros((n, 2));
            for mut row in points.rows_mut() {
                row[0] = rng.random_range(-3.0..3.0);
                row[1] = rng.random_range(-3.0..3.0);
            }
            let mut best = f64::INFINITY;
            for mask in 1u32..(1 << (n - 1)) {
                let groups: Vec<usize> =
                    (0..n).map(|i| ((mask >> i) & 1) as usize).collect();
                let mut sse = 0.0;
                for g in 0..2 {
                    let members: Vec<usize> =
                        (0..n).filter(|&i| groups[i] == g).collect();
                    if members.is_empty() {
                        continue;
                    }
                    let mut mean = vec![0.0; 2];
                    for &i in &members {
                        mean[0] += points[[i, 0]];
                        mean[1] += points[[i, 1]];
                    }
                    mean[0] /= members.len() as f64;
                    mean[1] /= members.len() as f64;
                    for &i in &members {
                        sse += (points[[i, 0]] - mean[0]).powi(2)
                            + (points[[i, 1]] - mean[1]).powi(2);
                    }
                }
                best = best.min(sse);
            }
            let mut config = cfg(trial as u64);
            config.kmeans_restarts = 20;
            let c = kmeans(&points, 2, &config).unwrap();
            assert!(
                c.objective(&points) <= best * (1.0 + 1e-9) + 1e-9,
                "trial {trial}: {} vs optimum {best}",
                c.objective(&points)
            );
        }
    }

    #[test]
    fn empty_constraints_bit_identical_to_plain() {
        let points = array![
            [0.0, 0.0],
            [0.4, 0.1],
            [3.0, 3.0],
            [3.3, 2.9],
            [-1.0, 2.0],
            [7.0, 0.2]
        ];
        let plain = kmeans(&points, 3, &cfg(4)).unwrap();
        let constrained =
            soft_constrained_kmeans(&points, 3, &ConstraintSet::new(), &cfg(4)).unwrap();
        assert_eq!(plain, constrained);
    }

    #[test]
    fn zero_penalty_without_cannot_links_equals_plain() {
        let points = array![
            [0.0, 0.0],
            [0.4, 0.1],
            [3.0, 3.0],
            [3.3, 2.9],
            [-1.0, 2.0],
            [7.0, 0.2]
        ];
        let mut constraints = ConstraintSet::new();
        constraints.add_must(0, 5).unwrap();
        constraints.add_must(1, 4).unwrap();
        let mut config = cfg(6);
        config.must_penalty = 0.0;
        let plain = kmeans(&points, 3, &config).unwrap();
        let constrained = soft_constrained_kmeans(&points, 3, &constraints, &config).unwrap();
        assert_eq!(plain, constrained);
    }

    #[test]
    fn must_link_respected_only_when_penalty_dominates() {
        let points = array![[0.0, 0.0], [0.1, 0.0], [5.0, 0.0]];
        let mut constraints = ConstraintSet::new();
        constraints.add_must(0, 2).unwrap();

        let mut weak = cfg(3);
        weak.must_penalty = 0.01;
        let c = soft_constrained_kmeans(&points, 2, &constraints, &weak).unwrap();
        assert_ne!(c.assignments[0], c.assignments[2]);
        assert_eq!(c.assignments[0], c.assignments[1]);

        let mut strong = cfg(3);
        strong.must_penalty = 100.0;
        let c = soft_constrained_kmeans(&points, 2, &constraints, &strong).unwrap();
        assert_eq!(c.assignments[0], c.assignments[2]);
    }

    #[test]
    fn cannot_link_separates_coincident_points() {
        let points = array![[1.0, 1.0], [1.0, 1.0], [1.0, 1.0], [4.0, 4.0]];
        let mut constraints = ConstraintSet::new();
        constraints.add_cannot(0, 1).unwrap();
        for seed in 0..5 {
            let c = soft_constrained_kmeans(&points, 2, &constraints, &cfg(seed)).unwrap();
            assert_ne!(c.assignments[0], c.assignments[1]);
        }
    }

    #[test]
    fn overconstrained_instance_reports_a_point() {
        // Three mutually cannot-linked points cannot fit in two clusters.
        let points = array![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]];
        let mut constraints = ConstraintSet::new();
        constraints.add_cannot(0, 1).unwrap();
        constraints.add_cannot(0, 2).unwrap();
        constraints.add_cannot(1, 2).unwrap();
        match soft_constrained_kmeans(&points, 2, &constraints, &cfg(0)) {
            Err(WscError::Infeasible { point }) => assert_eq!(point, 2),
            other => panic!("expected infeasibility, got {other:?}"),
        }
    }

    #[test]
    fn rejects_degenerate_input() {
        let points = Array2::<f64>::zeros((0, 2));
        assert!(kmeans(&points, 2, &cfg(0)).is_err());
        let points = array![[0.0, 0.0]];
        assert!(kmeans(&points, 0, &cfg(0)).is_err());
    }
}
