//! Flow data ingestion, imputation, windowing and fold splitting.

mod cache;
mod impute;
mod ingest;
mod split;
mod window;

use std::cell::RefCell;
use std::collections::BTreeSet;
use std::ops::Range;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

pub use cache::{read_cache, write_cache, CACHE_MAGIC, CACHE_VERSION};
pub use impute::{impute_knn, DEFAULT_K};
pub use ingest::{convert_wide_csv, ingest_csv, ingest_str, IngestOptions, OPTIONAL_COLUMNS};
pub use split::{kfold_split, split_by_days, FoldSplit, Split};
pub use window::{sliding_window, window_count, WindowConfig};

use crate::encoding::Vocabulary;

/// Per-node time-aligned feature values on a shared timeline.
#[derive(Clone, Debug, PartialEq)]
pub struct RawSeries {
    pub node_count: usize,
    /// Feature columns in file order, `flow` first.
    pub feature_names: Vec<String>,
    /// Marks columns holding category codes rather than measurements.
    pub categorical: Vec<bool>,
    pub vocabulary: Vocabulary,
    pub timestamps: Vec<NaiveDateTime>,
    /// Maximal runs of the timeline spaced exactly one interval apart.
    pub spans: Vec<Range<usize>>,
    pub interval_minutes: u32,
    /// `[node][t][feature]`, flattened.
    values: Vec<Option<f64>>,
}

impl RawSeries {
    pub fn feature_count(&self) -> usize {
        self.feature_names.len()
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    fn index(&self, node: usize, t: usize, feature: usize) -> usize {
        (node * self.timestamps.len() + t) * self.feature_names.len() + feature
    }

    pub fn get(&self, node: usize, t: usize, feature: usize) -> Option<f64> {
        self.values[self.index(node, t, feature)]
    }

    pub fn set(&mut self, node: usize, t: usize, feature: usize, value: Option<f64>) {
        let k = self.index(node, t, feature);
        self.values[k] = value;
    }

    pub fn missing_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_none()).count()
    }

    /// Number of (node, timestamp) records with at least one observed value.
    pub fn record_count(&self) -> usize {
        let f = self.feature_count();
        self.values.chunks(f).filter(|r| r.iter().any(Option::is_some)).count()
    }

    /// Timeline position in minutes, for distance computations.
    pub(crate) fn minutes(&self, t: usize) -> i64 {
        self.timestamps[t].and_utc().timestamp() / 60
    }
}

pub const TRIG_FEATURES: [&str; 4] = ["moment_sin", "moment_cos", "hour_sin", "hour_cos"];

/// One training instance. `input` is `[N, lags, F]`, `target` is raw flow
/// shaped `[N, horizon]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub start: NaiveDateTime,
    pub input: Vec<f64>,
    pub target: Vec<f64>,
}

/// Sample metadata stored next to the binary cache.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleLayout {
    pub node_count: usize,
    pub lags: usize,
    pub horizon: usize,
    pub feature_names: Vec<String>,
}

impl SampleLayout {
    pub fn feature_count(&self) -> usize {
        self.feature_names.len()
    }

    pub fn input_len(&self) -> usize {
        self.node_count * self.lags * self.feature_count()
    }

    pub fn target_len(&self) -> usize {
        self.node_count * self.horizon
    }
}

/// Samples plus an optional record of which ones were read, used to prove
/// that fitting never touches held-out rows.
#[derive(Debug)]
pub struct SampleSet {
    pub layout: SampleLayout,
    samples: Vec<Sample>,
    access: RefCell<Option<BTreeSet<usize>>>,
}

impl Clone for SampleSet {
    fn clone(&self) -> Self {
        SampleSet::new(self.layout.clone(), self.samples.clone())
    }
}

impl PartialEq for SampleSet {
    fn eq(&self, other: &Self) -> bool {
        self.layout == other.layout && self.samples == other.samples
    }
}

impl SampleSet {
    pub fn new(layout: SampleLayout, samples: Vec<Sample>) -> Self {
        SampleSet {
            layout,
            samples,
            access: RefCell::new(None),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn get(&self, i: usize) -> &Sample {
        if let Some(log) = self.access.borrow_mut().as_mut() {
            log.insert(i);
        }
        &self.samples[i]
    }

    /// Starts recording accessed indices, discarding any previous record.
    pub fn record_access(&self) {
        *self.access.borrow_mut() = Some(BTreeSet::new());
    }

    /// Stops recording and returns the indices read since [`Self::record_access`].
    pub fn take_access(&self) -> BTreeSet<usize> {
        self.access.borrow_mut().take().unwrap_or_default()
    }

    /// Unrecorded view of all samples, for serialization.
    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn subset(&self, indices: &[usize]) -> SampleSet {
        SampleSet::new(
            self.layout.clone(),
            indices.iter().map(|&i| self.get(i).clone()).collect(),
        )
    }
}
