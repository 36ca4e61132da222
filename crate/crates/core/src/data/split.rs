//! Few-shot label withholding for the target domain.

use rand::seq::SliceRandom;

use super::{ClassProportions, DataError, Dataset, Domain, Split};
use crate::seeding::{stream_rng, SALT_DATA};

/// Keeps labels on a small stratified subset of the target train split and
/// withholds the rest.
///
/// The labeled budget is `max(num_classes, round(labeled_fraction * m))`
/// where `m` is the target train size, clamped to `m`; every class keeps at
/// least one labeled sample, with the remainder allocated proportionally to
/// class size. Withheld labels move into the hidden truth column, so the
/// returned dataset evaluates exactly like the input but trains with most
/// target labels invisible.
pub fn split_target(
    ds: &Dataset,
    labeled_fraction: f64,
    seed: u64,
) -> Result<Dataset, DataError> {
    if !(labeled_fraction > 0.0 && labeled_fraction <= 1.0) {
        return Err(DataError::InvalidArgument(format!(
            "labeled_fraction must be in (0, 1], got {labeled_fraction}"
        )));
    }
    let num_classes = ds.num_classes();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, s) in ds.samples().iter().enumerate() {
        if s.domain == Domain::Target && s.split == Split::Train {
            let label = s.label.ok_or_else(|| {
                DataError::InvalidArgument(format!(
                    "sample {} is already unlabeled; labels can only be withheld once",
                    s.id
                ))
            })?;
            by_class[label].push(i);
        }
    }
    if let Some(class) = by_class.iter().position(|v| v.is_empty()) {
        return Err(DataError::MissingClass { class });
    }
    let m: usize = by_class.iter().map(Vec::len).sum();
    if m < num_classes {
        return Err(DataError::Infeasible(format!(
            "target train split has {m} samples, fewer than {num_classes} classes"
        )));
    }
    let budget = ((labeled_fraction * m as f64).round() as usize)
        .max(num_classes)
        .min(m);

    // One guaranteed slot per class, the rest greedily towards the
    // proportional share; ties break on the lower class id.
    let mut quota = vec![1usize; num_classes];
    for _ in num_classes..budget {
        let next = (0..num_classes)
            .filter(|&c| quota[c] < by_class[c].len())
            .max_by(|&a, &b| {
                let deficit = |c: usize| {
                    by_class[c].len() as f64 / m as f64 * budget as f64 - quota[c] as f64
                };
                deficit(a)
                    .total_cmp(&deficit(b))
                    .then(b.cmp(&a))
            })
            .expect("budget <= m guarantees a class with spare capacity");
        quota[next] += 1;
    }

    let mut rng = stream_rng(seed, SALT_DATA, 1);
    let mut keep = vec![false; ds.len()];
    for (class, indices) in by_class.iter().enumerate() {
        let mut shuffled = indices.clone();
        shuffled.shuffle(&mut rng);
        for &i in shuffled.iter().take(quota[class]) {
            keep[i] = true;
        }
    }

    let mut samples = ds.samples().to_vec();
    let mut truths = ds.truths().to_vec();
    for (i, s) in samples.iter_mut().enumerate() {
        let hide = s.domain == Domain::Target && s.split == Split::Train && !keep[i];
        if hide {
            truths[i] = s.label.take();
        }
    }
    Dataset::from_parts(samples, truths, num_classes, ds.dim())
}

/// Class prior estimated from the labeled target train samples.
///
/// Errors if any class has no labeled representative, since a zero prior
/// would silence that class everywhere downstream.
pub fn class_proportions(ds: &Dataset) -> Result<ClassProportions, DataError> {
    let mut counts = vec![0usize; ds.num_classes()];
    for &i in &ds.target_labeled() {
        counts[ds.samples()[i].label.expect("target_labeled yields labeled samples")] += 1;
    }
    ClassProportions::from_counts(&counts)
}
