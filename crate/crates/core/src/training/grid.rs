use serde::{Deserialize, Serialize};

use super::{evaluate_model, fit, TrainConfig};
use crate::data::SampleSet;
use crate::error::{Error, Result};
use crate::graph::RoadGraph;
use crate::metrics::MetricsReport;

/// Lattice of batch sizes, units and total layer counts. A model with `layers`
/// layers has one GCN layer, `layers − 2` LSTM layers and the dense head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub batch_sizes: Vec<usize>,
    pub units: Vec<usize>,
    pub layers: Vec<usize>,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            batch_sizes: vec![16, 32, 64, 128],
            units: vec![32, 64, 128, 256],
            layers: vec![3, 4],
        }
    }
}

impl GridSpec {
    pub fn len(&self) -> usize {
        self.batch_sizes.len() * self.units.len() * self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cells in layers-major, then units, then batch size order.
    pub fn combinations(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::with_capacity(self.len());
        for &layers in &self.layers {
            for &units in &self.units {
                for &batch in &self.batch_sizes {
                    out.push((layers, units, batch));
                }
            }
        }
        out
    }

    pub fn config_for(&self, base: &TrainConfig, layers: usize, units: usize, batch: usize) -> Result<TrainConfig> {
        if layers < 3 {
            return Err(Error::Validation(format!(
                "{layers} layers leaves no room for an LSTM between the GCN and dense layers"
            )));
        }
        Ok(TrainConfig {
            batch_size: batch,
            lstm_units: units,
            lstm_layers: layers - 2,
            ..base.clone()
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridCell {
    pub layers: usize,
    pub units: usize,
    pub batch_size: usize,
    /// Test metrics, or the failure message when the cell did not complete.
    pub outcome: std::result::Result<MetricsReport, String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridReport {
    pub cells: Vec<GridCell>,
    /// Index into `cells` of the best completed cell.
    pub best: Option<usize>,
}

impl GridReport {
    pub fn best_cell(&self) -> Option<&GridCell> {
        self.best.map(|i| &self.cells[i])
    }

    /// One row per cell with all metrics in MSE, RMSE, MAE, MAPE, MdAE, MdAPE order.
    pub fn to_csv(&self) -> String {
        let mut out = format!("layers,units,batch_size,{},status,best\n", MetricsReport::COLUMNS.join(","));
        for (i, c) in self.cells.iter().enumerate() {
            let (metrics, status) = match &c.outcome {
                Ok(r) => (r.csv_fields().join(","), "ok".to_owned()),
                Err(e) => (vec![""; 6].join(","), format!("failed: {}", e.replace([',', '\n'], ";"))),
            };
            let best = if self.best == Some(i) { "*" } else { "" };
            out.push_str(&format!("{},{},{},{metrics},{status},{best}\n", c.layers, c.units, c.batch_size));
        }
        out
    }
}

/// Indices of completed cells from best to worst: lower MAE first, then
/// lower RMSE, then grid order.
pub fn rank_cells(cells: &[GridCell]) -> Vec<usize> {
    let mut ok: Vec<(usize, &MetricsReport)> = cells
        .iter()
        .enumerate()
        .filter_map(|(i, c)| c.outcome.as_ref().ok().map(|r| (i, r)))
        .collect();
    ok.sort_by(|(i, a), (j, b)| {
        a.mae
            .total_cmp(&b.mae)
            .then(a.rmse.total_cmp(&b.rmse))
            .then(i.cmp(j))
    });
    ok.into_iter().map(|(i, _)| i).collect()
}

/// Trains and evaluates every combination of `spec` on top of `base`. A cell
/// that fails is recorded and the search moves on.
pub fn grid_search(
    base: &TrainConfig,
    spec: &GridSpec,
    graph: &RoadGraph,
    set: &SampleSet,
    train: &[usize],
    test: &SampleSet,
) -> Result<GridReport> {
    if spec.is_empty() {
        return Err(Error::Validation("grid has no combinations".into()));
    }
    let mut cells = Vec::with_capacity(spec.len());
    for (layers, units, batch_size) in spec.combinations() {
        let outcome = spec
            .config_for(base, layers, units, batch_size)
            .and_then(|cfg| fit(&cfg, graph, set, train, Some(test)))
            .and_then(|out| evaluate_model(&out.best.model, test))
            .map_err(|e| {
                log::warn!("grid cell layers={layers} units={units} batch={batch_size} failed: {e}");
                e.to_string()
            });
        cells.push(GridCell {
            layers,
            units,
            batch_size,
            outcome,
        });
    }
    let best = rank_cells(&cells).first().copied();
    Ok(GridReport { cells, best })
}
