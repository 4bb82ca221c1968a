//! On-disk prepared dataset: `samples.bin` plus a JSON description.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use locgclstm::data::{read_cache, split_by_days, kfold_split, SampleSet, Split};
use locgclstm::encoding::{CalendarConfig, Vocabulary};
use locgclstm::graph::RoadGraph;
use locgclstm::io::write_atomic;
use locgclstm::{Error, Result};

use crate::config::SplitPlan;

pub const SAMPLES_FILE: &str = "samples.bin";
pub const DATASET_FILE: &str = "dataset.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub node_count: usize,
    pub feature_names: Vec<String>,
    pub lags: usize,
    pub horizon: usize,
    pub stride: usize,
    pub calendar: CalendarConfig,
    pub vocabulary: Vocabulary,
    /// `adjacency[i][j] == 1` when node `j` feeds node `i`.
    pub adjacency: Vec<Vec<u8>>,
    pub sample_count: usize,
    pub timesteps: usize,
    pub spans: usize,
    pub imputed: usize,
}

pub struct Dataset {
    pub info: DatasetInfo,
    pub set: SampleSet,
    pub graph: RoadGraph,
    pub dir: PathBuf,
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Self> {
        let info_path = dir.join(DATASET_FILE);
        let text = std::fs::read_to_string(&info_path).map_err(|e| Error::io(&info_path, e))?;
        let info: DatasetInfo = serde_json::from_str(&text).map_err(|e| Error::Format {
            path: info_path.clone(),
            message: e.to_string(),
        })?;
        let set = read_cache(&dir.join(SAMPLES_FILE), info.feature_names.clone())?;
        let l = &set.layout;
        if (l.node_count, l.lags, l.horizon, set.len()) != (info.node_count, info.lags, info.horizon, info.sample_count) {
            return Err(Error::Validation(format!(
                "{} disagrees with {}",
                info_path.display(),
                SAMPLES_FILE
            )));
        }
        let graph = RoadGraph::from_matrix(&info.adjacency)?;
        Ok(Dataset {
            info,
            set,
            graph,
            dir: dir.to_path_buf(),
        })
    }

    pub fn split(&self, plan: &SplitPlan) -> Result<Split> {
        match plan {
            SplitPlan::KFold { folds, fold, seed } => kfold_split(self.set.len(), *folds, *seed)?.split(*fold),
            SplitPlan::TestDays(days) => split_by_days(&self.set, days, self.info.calendar.interval_minutes),
        }
    }

    pub fn files(&self) -> [PathBuf; 2] {
        [self.dir.join(DATASET_FILE), self.dir.join(SAMPLES_FILE)]
    }
}

pub fn write_info(dir: &Path, info: &DatasetInfo) -> Result<()> {
    let json = serde_json::to_string_pretty(info).expect("dataset info serializes");
    write_atomic(&dir.join(DATASET_FILE), json.as_bytes())
}
