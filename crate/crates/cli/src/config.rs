//! Flat TOML configuration, layered under command-line flags.
//!
//! Every key is optional; unknown keys are rejected.
//!
//! ```toml
//! model = "loc-gclstm"      # loc-gclstm | gclstm | lstm
//! epochs = 600
//! batch_size = 64
//! lr_max = 2.4e-5
//! lr_min = 1.5e-5
//! calra_cycles = 4
//! bias_l2_lambda = 0.01
//! seed = 0
//! normalization = "dynamic" # dynamic | static
//! gcn_units = 128
//! gcn_steps = 1
//! lstm_units = 256
//! lstm_layers = 2
//! rmsprop_rho = 0.9
//! rmsprop_eps = 1e-7
//! folds = 5
//! fold = 0
//! test_days = ["2024-01-25"] # replaces k-fold when non-empty
//! lr_mode = "per-node"       # per-node | global
//! grid_batch_sizes = [16, 32, 64, 128]
//! grid_units = [32, 64, 128, 256]
//! grid_layers = [3, 4]
//! ```

use std::path::Path;

use chrono::NaiveDate;
use clap::Args;
use serde::{Deserialize, Serialize};

use locgclstm::baselines::LrMode;
use locgclstm::graph::NormalizationMode;
use locgclstm::model::ModelKind;
use locgclstm::training::{GridSpec, TrainConfig};
use locgclstm::Error;

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub model: Option<ModelKind>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr_max: Option<f64>,
    pub lr_min: Option<f64>,
    pub calra_cycles: Option<usize>,
    pub bias_l2_lambda: Option<f64>,
    pub seed: Option<u64>,
    pub normalization: Option<NormalizationMode>,
    pub gcn_units: Option<usize>,
    pub gcn_steps: Option<usize>,
    pub lstm_units: Option<usize>,
    pub lstm_layers: Option<usize>,
    pub rmsprop_rho: Option<f64>,
    pub rmsprop_eps: Option<f64>,
    pub folds: Option<usize>,
    pub fold: Option<usize>,
    pub test_days: Option<Vec<NaiveDate>>,
    pub lr_mode: Option<LrMode>,
    pub grid_batch_sizes: Option<Vec<usize>>,
    pub grid_units: Option<Vec<usize>>,
    pub grid_layers: Option<Vec<usize>>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, Error> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))
    }
}

/// Training hyperparameters settable from the command line.
#[derive(Args, Clone, Debug, Default)]
pub struct HyperArgs {
    /// Network variant: loc-gclstm, gclstm or lstm.
    #[arg(long)]
    pub model: Option<ModelKind>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr_max: Option<f64>,
    #[arg(long)]
    pub lr_min: Option<f64>,
    /// Warm-restart cycles over the whole run.
    #[arg(long)]
    pub calra_cycles: Option<usize>,
    /// L2 weight on the LSTM biases.
    #[arg(long)]
    pub bias_l2_lambda: Option<f64>,
    /// dynamic: degree of the masked matrix; static: degree of A+E.
    #[arg(long)]
    pub normalization: Option<NormalizationMode>,
    #[arg(long)]
    pub gcn_units: Option<usize>,
    #[arg(long)]
    pub gcn_steps: Option<usize>,
    #[arg(long)]
    pub lstm_units: Option<usize>,
    #[arg(long)]
    pub lstm_layers: Option<usize>,
}

/// How samples are divided into training and test sets.
#[derive(Args, Clone, Debug, Default)]
pub struct SplitArgs {
    /// Number of cross-validation folds.
    #[arg(long)]
    pub folds: Option<usize>,
    /// Held-out fold index.
    #[arg(long)]
    pub fold: Option<usize>,
    /// Comma-separated test dates (YYYY-MM-DD); replaces k-fold.
    #[arg(long, value_delimiter = ',')]
    pub test_days: Vec<NaiveDate>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum SplitPlan {
    KFold { folds: usize, fold: usize, seed: u64 },
    TestDays(Vec<NaiveDate>),
}

#[derive(Clone, Debug, Serialize)]
pub struct Resolved {
    pub train: TrainConfig,
    pub split: SplitPlan,
    pub lr_mode: LrMode,
    pub grid: GridSpec,
}

/// Merges defaults, the config file, then flags (last wins). `seed` is the
/// global `--seed`.
pub fn resolve(file: &FileConfig, hyper: &HyperArgs, split: &SplitArgs, seed: Option<u64>) -> Resolved {
    let d = TrainConfig::default();
    let train = TrainConfig {
        model: hyper.model.or(file.model).unwrap_or(d.model),
        epochs: hyper.epochs.or(file.epochs).unwrap_or(d.epochs),
        batch_size: hyper.batch_size.or(file.batch_size).unwrap_or(d.batch_size),
        lr_max: hyper.lr_max.or(file.lr_max).unwrap_or(d.lr_max),
        lr_min: hyper.lr_min.or(file.lr_min).unwrap_or(d.lr_min),
        calra_cycles: hyper.calra_cycles.or(file.calra_cycles).unwrap_or(d.calra_cycles),
        bias_l2_lambda: hyper.bias_l2_lambda.or(file.bias_l2_lambda).unwrap_or(d.bias_l2_lambda),
        seed: seed.or(file.seed).unwrap_or(d.seed),
        normalization: hyper.normalization.or(file.normalization).unwrap_or(d.normalization),
        gcn_units: hyper.gcn_units.or(file.gcn_units).unwrap_or(d.gcn_units),
        gcn_steps: hyper.gcn_steps.or(file.gcn_steps).unwrap_or(d.gcn_steps),
        lstm_units: hyper.lstm_units.or(file.lstm_units).unwrap_or(d.lstm_units),
        lstm_layers: hyper.lstm_layers.or(file.lstm_layers).unwrap_or(d.lstm_layers),
        rmsprop_rho: file.rmsprop_rho.unwrap_or(d.rmsprop_rho),
        rmsprop_eps: file.rmsprop_eps.unwrap_or(d.rmsprop_eps),
    };
    let days = if split.test_days.is_empty() {
        file.test_days.clone().unwrap_or_default()
    } else {
        split.test_days.clone()
    };
    let split = if days.is_empty() {
        SplitPlan::KFold {
            folds: split.folds.or(file.folds).unwrap_or(5),
            fold: split.fold.or(file.fold).unwrap_or(0),
            seed: train.seed,
        }
    } else {
        SplitPlan::TestDays(days)
    };
    let g = GridSpec::default();
    Resolved {
        split,
        lr_mode: file.lr_mode.unwrap_or_default(),
        grid: GridSpec {
            batch_sizes: file.grid_batch_sizes.clone().unwrap_or(g.batch_sizes),
            units: file.grid_units.clone().unwrap_or(g.units),
            layers: file.grid_layers.clone().unwrap_or(g.layers),
        },
        train,
    }
}
