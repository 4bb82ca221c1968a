use std::collections::BTreeSet;

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::SampleSet;
use crate::error::{Error, Result};
use crate::numerics::seeded_rng;

/// Seeded k-way partition of sample indices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub seed: u64,
    pub folds: Vec<Vec<usize>>,
}

impl FoldSplit {
    pub fn k(&self) -> usize {
        self.folds.len()
    }

    pub fn split(&self, fold: usize) -> Result<Split> {
        if fold >= self.k() {
            return Err(Error::Validation(format!("fold {fold} outside 0..{}", self.k())));
        }
        let mut train: Vec<usize> = self
            .folds
            .iter()
            .enumerate()
            .filter(|(k, _)| *k != fold)
            .flat_map(|(_, f)| f.iter().copied())
            .collect();
        train.sort_unstable();
        let mut test = self.folds[fold].clone();
        test.sort_unstable();
        Ok(Split { train, test })
    }
}

/// Train/test partition of sample indices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffles `0..n` with `seed`, then cuts it into `k` contiguous folds whose
/// sizes differ by at most one (the first `n % k` folds get the extra sample).
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<FoldSplit> {
    if k == 0 || n < k {
        return Err(Error::Contract(format!("cannot split {n} samples into {k} folds")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded_rng(seed));
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut at = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        folds.push(order[at..at + size].to_vec());
        at += size;
    }
    Ok(FoldSplit { seed, folds })
}

/// Test set = samples whose target window starts on one of `days`.
pub fn split_by_days(set: &SampleSet, days: &[NaiveDate], interval_minutes: u32) -> Result<Split> {
    let days: BTreeSet<NaiveDate> = days.iter().copied().collect();
    let lead = chrono::Duration::minutes(i64::from(interval_minutes) * set.layout.lags as i64);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (i, s) in set.samples().iter().enumerate() {
        if days.contains(&(s.start + lead).date()) {
            test.push(i);
        } else {
            train.push(i);
        }
    }
    if train.is_empty() || test.is_empty() {
        return Err(Error::Validation(format!(
            "test-day split leaves {} training and {} test samples",
            train.len(),
            test.len()
        )));
    }
    Ok(Split { train, test })
}
