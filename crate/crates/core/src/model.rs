//! The assembled forecaster: Location-GCN per time step, a shared stacked
//! LSTM per node, and a dense head mapping each node's last hidden state to
//! its own horizon.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Sample, SampleLayout, SampleSet};
use crate::encoding::StandardizationParams;
use crate::error::{Error, Result};
use crate::graph::{gcn_forward_on_tape, location_support_on_tape, normalized_support, NormalizationMode, RoadGraph};
use crate::numerics::{Bindings, ParameterSet, Tape, Tensor, Var};
use crate::temporal::{dense_forward_on_tape, lstm_sequence_on_tape, LstmCellParams, LstmCellVars};

pub const GCN_WEIGHT: &str = "gcn.weight";
pub const GCN_MASK: &str = "gcn.mask";
pub const DENSE_WEIGHT: &str = "dense.weight";
pub const DENSE_BIAS: &str = "dense.bias";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    /// Location-GCN with the learnable mask, then LSTM.
    #[default]
    LocGclstm,
    /// Classical `D⁻¹(A+E)` GCN, then LSTM.
    Gclstm,
    /// LSTM only; the graph layer is bypassed.
    Lstm,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::LocGclstm => "loc-gclstm",
            ModelKind::Gclstm => "gclstm",
            ModelKind::Lstm => "lstm",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "loc-gclstm" => Ok(ModelKind::LocGclstm),
            "gclstm" => Ok(ModelKind::Gclstm),
            "lstm" => Ok(ModelKind::Lstm),
            other => Err(Error::Validation(format!("unknown model `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub node_count: usize,
    pub feature_count: usize,
    pub lags: usize,
    pub horizon: usize,
    pub gcn_units: usize,
    pub gcn_steps: usize,
    pub lstm_units: Vec<usize>,
    pub normalization: NormalizationMode,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("node_count", self.node_count),
            ("feature_count", self.feature_count),
            ("lags", self.lags),
            ("horizon", self.horizon),
            ("gcn_units", self.gcn_units),
            ("gcn_steps", self.gcn_steps),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Validation(format!("{name} must be positive")));
        }
        if self.lstm_units.is_empty() || self.lstm_units.contains(&0) {
            return Err(Error::Validation("need at least one LSTM layer with positive units".into()));
        }
        if self.gcn_steps > 1 && self.kind != ModelKind::Lstm && self.gcn_units != self.feature_count {
            return Err(Error::Validation(
                "gcn_steps > 1 reuses one square weight, so gcn_units must equal the feature count".into(),
            ));
        }
        Ok(())
    }

    fn lstm_input_width(&self) -> usize {
        match self.kind {
            ModelKind::Lstm => self.feature_count,
            _ => self.gcn_units,
        }
    }

    pub fn matches(&self, layout: &SampleLayout) -> bool {
        self.node_count == layout.node_count
            && self.feature_count == layout.feature_count()
            && self.lags == layout.lags
            && self.horizon == layout.horizon
    }
}

/// Input and target standardization, fitted on training samples only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub input: StandardizationParams,
    pub target: StandardizationParams,
}

impl Scaler {
    pub fn identity(features: usize) -> Self {
        Scaler {
            input: StandardizationParams::identity(features),
            target: StandardizationParams::identity(1),
        }
    }

    /// Fits on the samples at `indices`, touching nothing else in `set`.
    pub fn fit(set: &SampleSet, indices: &[usize]) -> Result<Self> {
        let width = set.layout.feature_count();
        let samples: Vec<&Sample> = indices.iter().map(|&i| set.get(i)).collect();
        let input = StandardizationParams::fit(samples.iter().flat_map(|s| s.input.chunks(width)))?;
        let target = StandardizationParams::fit(samples.iter().flat_map(|s| s.target.chunks(1)))?;
        Ok(Scaler { input, target })
    }
}

/// One mini-batch in node-major layout: row `node * B + b`.
pub struct Batch {
    /// One `[N·B, F]` tensor per lag, standardized.
    pub steps: Vec<Tensor>,
    /// `[N·B, horizon]`, standardized.
    pub targets: Tensor,
    pub size: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocGcLstmModel {
    pub config: ModelConfig,
    pub graph: RoadGraph,
    pub params: ParameterSet,
    pub scaler: Scaler,
}

impl LocGcLstmModel {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, graph: RoadGraph, scaler: Scaler, rng: &mut R) -> Result<Self> {
        config.validate()?;
        if graph.node_count() != config.node_count {
            return Err(Error::Validation(format!(
                "graph has {} nodes, model expects {}",
                graph.node_count(),
                config.node_count
            )));
        }
        if scaler.input.width() != config.feature_count {
            return Err(Error::shape("scaler", &[scaler.input.width()], &[config.feature_count]));
        }
        let n = config.node_count;
        let mut params = ParameterSet::new();
        if config.kind != ModelKind::Lstm {
            params.insert_fan_in(GCN_WEIGHT, &[config.feature_count, config.gcn_units], config.feature_count, rng);
        }
        if config.kind == ModelKind::LocGclstm {
            params.insert(GCN_MASK, Tensor::uniform(&[n, n], 0.5, 1.5, rng));
        }
        let mut width = config.lstm_input_width();
        for (l, &units) in config.lstm_units.iter().enumerate() {
            LstmCellParams::register_random(&mut params, &lstm_prefix(l), width, units, rng);
            width = units;
        }
        params.insert_fan_in(DENSE_WEIGHT, &[width, config.horizon], width, rng);
        params.insert_fan_in(DENSE_BIAS, &[config.horizon], width, rng);
        Ok(LocGcLstmModel {
            config,
            graph,
            params,
            scaler,
        })
    }

    /// Names of the LSTM bias vectors (the L2-regularized set).
    pub fn lstm_bias_names(&self) -> Vec<String> {
        self.params
            .names()
            .filter(|n| n.starts_with("lstm.") && n.contains(".b_"))
            .map(str::to_owned)
            .collect()
    }

    pub fn make_batch(&self, samples: &[&Sample]) -> Result<Batch> {
        let c = &self.config;
        let (n, lags, f, h) = (c.node_count, c.lags, c.feature_count, c.horizon);
        let b = samples.len();
        if b == 0 {
            return Err(Error::Contract("empty batch".into()));
        }
        for s in samples {
            if s.input.len() != n * lags * f || s.target.len() != n * h {
                return Err(Error::shape("make_batch", &[s.input.len(), s.target.len()], &[n * lags * f, n * h]));
            }
        }
        let mut steps = Vec::with_capacity(lags);
        for t in 0..lags {
            let mut data = Vec::with_capacity(n * b * f);
            for node in 0..n {
                for s in samples {
                    let at = (node * lags + t) * f;
                    data.extend(
                        s.input[at..at + f]
                            .iter()
                            .enumerate()
                            .map(|(k, &v)| self.scaler.input.apply_value(k, v)),
                    );
                }
            }
            steps.push(Tensor::matrix(n * b, f, data)?);
        }
        let mut targets = Vec::with_capacity(n * b * h);
        for node in 0..n {
            for s in samples {
                targets.extend(s.target[node * h..(node + 1) * h].iter().map(|&v| self.scaler.target.apply_value(0, v)));
            }
        }
        Ok(Batch {
            steps,
            targets: Tensor::matrix(n * b, h, targets)?,
            size: b,
        })
    }

    /// Standardized predictions `[N·B, horizon]` for a batch.
    pub fn forward_on_tape(&self, tape: &mut Tape, bindings: &Bindings, batch: &Batch) -> Result<Var> {
        let c = &self.config;
        let steps: Vec<Var> = batch.steps.iter().map(|s| tape.constant(s.clone())).collect();
        let lstm_inputs = match c.kind {
            ModelKind::Lstm => steps,
            kind => {
                let support = if kind == ModelKind::LocGclstm {
                    let structure = tape.constant(self.graph.with_self_loops());
                    location_support_on_tape(tape, structure, bindings.get(GCN_MASK), c.normalization)?
                } else {
                    tape.constant(normalized_support(&self.graph))
                };
                let w = bindings.get(GCN_WEIGHT);
                steps
                    .into_iter()
                    .map(|x| gcn_forward_on_tape(tape, x, c.node_count, support, w, c.gcn_steps))
                    .collect::<Result<Vec<_>>>()?
            }
        };
        let cells: Vec<LstmCellVars> = (0..c.lstm_units.len())
            .map(|l| LstmCellVars::bind(bindings, &lstm_prefix(l)))
            .collect();
        let last = lstm_sequence_on_tape(tape, &lstm_inputs, &cells)?;
        dense_forward_on_tape(tape, last, bindings.get(DENSE_WEIGHT), bindings.get(DENSE_BIAS))
    }

    /// Raw-unit predictions, one `[N × horizon]` vector per sample.
    pub fn predict(&self, samples: &[&Sample]) -> Result<Vec<Vec<f64>>> {
        let batch = self.make_batch(samples)?;
        let mut tape = Tape::new();
        let bindings = self.params.bind(&mut tape);
        let out = self.forward_on_tape(&mut tape, &bindings, &batch)?;
        let pred = tape.value(out);
        let (n, h, b) = (self.config.node_count, self.config.horizon, samples.len());
        let mut result = vec![Vec::with_capacity(n * h); b];
        for node in 0..n {
            for (k, r) in result.iter_mut().enumerate() {
                r.extend(pred.row(node * b + k).iter().map(|&z| self.scaler.target.invert_value(0, z)));
            }
        }
        if result.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("model produced non-finite predictions".into()));
        }
        Ok(result)
    }

    /// Predictions for every sample in `indices`, chunked to bound memory.
    pub fn predict_indices(&self, set: &SampleSet, indices: &[usize]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(indices.len());
        for chunk in indices.chunks(256) {
            let samples: Vec<&Sample> = chunk.iter().map(|&i| set.get(i)).collect();
            out.extend(self.predict(&samples)?);
        }
        Ok(out)
    }
}

/// Raw-unit `[N × horizon]` prediction for a single sample.
pub fn model_forward(sample: &Sample, model: &LocGcLstmModel) -> Result<Vec<f64>> {
    Ok(model.predict(&[sample])?.remove(0))
}

pub fn lstm_prefix(layer: usize) -> String {
    format!("lstm.{layer}")
}
