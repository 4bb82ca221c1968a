use super::RawSeries;
use crate::error::{Error, Result};

pub const DEFAULT_K: usize = 4;

/// Fills every missing cell from the `k` temporally nearest observed values of
/// the same node and feature, weighted by inverse time distance. Category
/// columns take the nearest observed code instead. Only originally observed
/// values serve as neighbours.
///
/// Returns the completed series and the number of cells filled.
pub fn impute_knn(series: &RawSeries, k: usize) -> Result<(RawSeries, usize)> {
    if k == 0 {
        return Err(Error::Contract("k must be at least 1".into()));
    }
    let mut out = series.clone();
    let mut filled = 0;
    let len = series.len();
    for node in 0..series.node_count {
        for feature in 0..series.feature_count() {
            let observed: Vec<usize> = (0..len)
                .filter(|&t| series.get(node, t, feature).is_some())
                .collect();
            if observed.len() == len {
                continue;
            }
            let needed = if series.categorical[feature] { 1 } else { k };
            if observed.len() < needed {
                return Err(Error::Imputation {
                    node,
                    feature: series.feature_names[feature].clone(),
                    observed: observed.len(),
                    required: needed,
                });
            }
            for t in (0..len).filter(|&t| series.get(node, t, feature).is_none()) {
                let nearest = nearest_observed(series, &observed, t, needed);
                let value = if series.categorical[feature] {
                    series.get(node, nearest[0].0, feature).unwrap()
                } else {
                    let (mut num, mut den) = (0.0, 0.0);
                    for &(idx, dist) in &nearest {
                        let w = 1.0 / dist;
                        num += w * series.get(node, idx, feature).unwrap();
                        den += w;
                    }
                    num / den
                };
                out.set(node, t, feature, Some(value));
                filled += 1;
            }
        }
    }
    Ok((out, filled))
}

/// The `k` observed positions closest in time to `t`, as `(index, distance in
/// intervals)`. Ties go to the earlier position.
fn nearest_observed(series: &RawSeries, observed: &[usize], t: usize, k: usize) -> Vec<(usize, f64)> {
    let interval = f64::from(series.interval_minutes);
    let at = series.minutes(t);
    let dist = |i: usize| (series.minutes(i) - at).abs() as f64 / interval;
    let split = observed.partition_point(|&i| i < t);
    let (mut lo, mut hi) = (split, split);
    let mut picked = Vec::with_capacity(k);
    while picked.len() < k {
        let left = (lo > 0).then(|| observed[lo - 1]);
        let right = (hi < observed.len()).then(|| observed[hi]);
        let take_left = match (left, right) {
            (Some(l), Some(r)) => dist(l) <= dist(r),
            (Some(_), None) => true,
            (None, Some(_)) => false,
            (None, None) => break,
        };
        if take_left {
            let l = left.unwrap();
            picked.push((l, dist(l)));
            lo -= 1;
        } else {
            let r = right.unwrap();
            picked.push((r, dist(r)));
            hi += 1;
        }
    }
    picked
}
