//! Power-law class size schedule.

use super::DataError;

/// Per-class sample counts following a Pareto-style power law.
///
/// Class `c` (zero-based, class 0 is the majority) receives
/// `max(1, floor(n_max * (c + 1)^-(alpha + 1)))` samples, so every class
/// keeps at least one sample no matter how steep the tail.
///
/// ```
/// use cluster_adapt::data::pareto_counts;
/// assert_eq!(pareto_counts(1000, 3, 1.0).unwrap(), vec![1000, 250, 111]);
/// assert_eq!(pareto_counts(4, 3, 5.0).unwrap(), vec![4, 1, 1]);
/// ```
pub fn pareto_counts(
    n_max: usize,
    num_classes: usize,
    alpha: f64,
) -> Result<Vec<usize>, DataError> {
    if num_classes == 0 {
        return Err(DataError::InvalidArgument(
            "num_classes must be >= 1".into(),
        ));
    }
    if n_max == 0 {
        return Err(DataError::InvalidArgument("n_max must be >= 1".into()));
    }
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(DataError::InvalidArgument(format!(
            "alpha must be finite and > 0, got {alpha}"
        )));
    }
    Ok((0..num_classes)
        .map(|c| {
            let raw = n_max as f64 * ((c + 1) as f64).powf(-(alpha + 1.0));
            (raw.floor() as usize).max(1)
        })
        .collect())
}
