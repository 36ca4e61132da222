//! Pairwise must-link / cannot-link constraints between samples.

use std::collections::BTreeSet;

use super::{Clustering, WscError};

/// Unordered index pairs that should (must-link) or may not (cannot-link)
/// share a cluster. Must-links are advisory — clustering may violate them at
/// a penalty — while cannot-links are enforced.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConstraintSet {
    must: BTreeSet<(usize, usize)>,
    cannot: BTreeSet<(usize, usize)>,
}

impl ConstraintSet {
    pub fn new() -> Self {
        Self::default()
    }

    fn normalize(a: usize, b: usize) -> Result<(usize, usize), WscError> {
        if a == b {
            return Err(WscError::SelfLink(a));
        }
        Ok((a.min(b), a.max(b)))
    }

    pub fn add_must(&mut self, a: usize, b: usize) -> Result<(), WscError> {
        let pair = Self::normalize(a, b)?;
        if self.cannot.contains(&pair) {
            return Err(WscError::ContradictoryPair { a: pair.0, b: pair.1 });
        }
        self.must.insert(pair);
        Ok(())
    }

    pub fn add_cannot(&mut self, a: usize, b: usize) -> Result<(), WscError> {
        let pair = Self::normalize(a, b)?;
        if self.must.contains(&pair) {
            return Err(WscError::ContradictoryPair { a: pair.0, b: pair.1 });
        }
        self.cannot.insert(pair);
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.must.is_empty() && self.cannot.is_empty()
    }

    pub fn must_links(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.must.iter().copied()
    }

    pub fn cannot_links(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.cannot.iter().copied()
    }

    pub fn num_must(&self) -> usize {
        self.must.len()
    }

    pub fn num_cannot(&self) -> usize {
        self.cannot.len()
    }

    /// Per-point neighbour lists, validated against the sample count.
    pub(crate) fn adjacency(&self, n: usize) -> Result<Adjacency, WscError> {
        let mut adj = Adjacency {
            must: vec![Vec::new(); n],
            cannot: vec![Vec::new(); n],
            constrained: Vec::new(),
        };
        for (&(a, b), is_must) in self
            .must
            .iter()
            .map(|p| (p, true))
            .chain(self.cannot.iter().map(|p| (p, false)))
        {
            for i in [a, b] {
                if i >= n {
                    return Err(WscError::IndexOutOfRange { index: i, n });
                }
            }
            let lists = if is_must { &mut adj.must } else { &mut adj.cannot };
            lists[a].push(b);
            lists[b].push(a);
        }
        adj.constrained = (0..n)
            .filter(|&i| !adj.must[i].is_empty() || !adj.cannot[i].is_empty())
            .collect();
        Ok(adj)
    }
}

pub(crate) struct Adjacency {
    pub must: Vec<Vec<usize>>,
    pub cannot: Vec<Vec<usize>>,
    /// Ascending indices of points that appear in at least one link.
    pub constrained: Vec<usize>,
}

impl Adjacency {
    pub fn is_empty(&self) -> bool {
        self.constrained.is_empty()
    }
}

/// Links all co-clustered labeled pairs: equal labels become must-links,
/// different labels cannot-links. Pairs in different clusters generate
/// nothing.
pub fn derive_constraints(
    clustering: &Clustering,
    labels: &[Option<usize>],
) -> Result<ConstraintSet, WscError> {
    if labels.len() != clustering.assignments.len() {
        return Err(WscError::InvalidArgument(format!(
            "{} labels for {} clustered samples",
            labels.len(),
            clustering.assignments.len()
        )));
    }
    let mut by_cluster: Vec<Vec<(usize, usize)>> = vec![Vec::new(); clustering.k()];
    for (i, (&cluster, label)) in clustering.assignments.iter().zip(labels).enumerate() {
        if let Some(label) = *label {
            by_cluster[cluster].push((i, label));
        }
    }
    let mut set = ConstraintSet::new();
    for members in &by_cluster {
        for (pos, &(i, li)) in members.iter().enumerate() {
            for &(j, lj) in &members[pos + 1..] {
                if li == lj {
                    set.add_must(i, j)?;
                } else {
                    set.add_cannot(i, j)?;
                }
            }
        }
    }
    Ok(set)
}

/// Ids of clusters whose labeled members carry at least two distinct labels.
pub fn conflicting_clusters(
    clustering: &Clustering,
    labels: &[Option<usize>],
) -> BTreeSet<usize> {
    let mut seen: Vec<Option<usize>> = vec![None; clustering.k()];
    let mut conflicting = BTreeSet::new();
    for (&cluster, label) in clustering.assignments.iter().zip(labels) {
        if let Some(label) = *label {
            match seen[cluster] {
                None => seen[cluster] = Some(label),
                Some(first) if first != label => {
                    conflicting.insert(cluster);
                }
                Some(_) => {}
            }
        }
    }
    conflicting
}
