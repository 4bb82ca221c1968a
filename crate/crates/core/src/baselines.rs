//! Reference predictors: least-squares linear regression and last-value
//! persistence.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{Sample, SampleLayout, SampleSet};
use crate::error::{Error, Result};

pub const LR_RIDGE: f64 = 1e-8;

/// `y = W x + b` with one weight row per output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<Vec<f64>>,
    pub intercept: Vec<f64>,
}

impl LinearModel {
    pub fn inputs(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    pub fn outputs(&self) -> usize {
        self.intercept.len()
    }

    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.intercept)
            .map(|(w, b)| b + w.iter().zip(x).map(|(w, x)| w * x).sum::<f64>())
            .collect()
    }
}

/// In-place Cholesky of a symmetric positive-definite `n × n` matrix.
fn cholesky(a: &mut [f64], n: usize) -> Result<()> {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::Numeric(format!(
                "normal equations are singular at column {j} even with ridge {LR_RIDGE}"
            )));
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
    }
    Ok(())
}

fn cholesky_solve(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let s: f64 = (0..i).map(|k| l[i * n + k] * b[k]).sum();
        b[i] = (b[i] - s) / l[i * n + i];
    }
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| l[k * n + i] * b[k]).sum();
        b[i] = (b[i] - s) / l[i * n + i];
    }
}

/// Least squares with an unpenalized intercept: solves the centered normal
/// equations `(XᵀX + λI) w = Xᵀy`, then `b = ȳ − w·x̄`.
pub fn fit_linear(x: &[Vec<f64>], y: &[Vec<f64>]) -> Result<LinearModel> {
    if x.len() != y.len() {
        return Err(Error::shape("fit_linear", &[x.len()], &[y.len()]));
    }
    if x.len() < 2 {
        return Err(Error::Contract("linear regression needs at least 2 samples".into()));
    }
    let (p, m) = (x[0].len(), y[0].len());
    if x.iter().any(|r| r.len() != p) || y.iter().any(|r| r.len() != m) {
        return Err(Error::Contract("ragged regression rows".into()));
    }
    let count = x.len() as f64;
    let mean = |rows: &[Vec<f64>], w: usize| -> Vec<f64> {
        let mut mu = vec![0.0; w];
        for r in rows {
            for (m, v) in mu.iter_mut().zip(r) {
                *m += v;
            }
        }
        mu.iter().map(|s| s / count).collect()
    };
    let (x_mean, y_mean) = (mean(x, p), mean(y, m));

    let mut gram = vec![0.0; p * p];
    let mut rhs = vec![vec![0.0; p]; m];
    let mut xc = vec![0.0; p];
    for (xr, yr) in x.iter().zip(y) {
        for (c, (v, mu)) in xc.iter_mut().zip(xr.iter().zip(&x_mean)) {
            *c = v - mu;
        }
        for i in 0..p {
            if xc[i] == 0.0 {
                continue;
            }
            for j in 0..=i {
                gram[i * p + j] += xc[i] * xc[j];
            }
        }
        for (o, r) in rhs.iter_mut().enumerate() {
            let yc = yr[o] - y_mean[o];
            for (acc, c) in r.iter_mut().zip(&xc) {
                *acc += c * yc;
            }
        }
    }
    for i in 0..p {
        gram[i * p + i] += LR_RIDGE;
        for j in 0..i {
            gram[j * p + i] = gram[i * p + j];
        }
    }
    cholesky(&mut gram, p)?;
    let mut weights = Vec::with_capacity(m);
    let mut intercept = Vec::with_capacity(m);
    for (o, mut w) in rhs.into_iter().enumerate() {
        cholesky_solve(&gram, p, &mut w);
        intercept.push(y_mean[o] - w.iter().zip(&x_mean).map(|(w, x)| w * x).sum::<f64>());
        weights.push(w);
    }
    if weights.iter().flatten().chain(&intercept).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("linear regression produced non-finite coefficients".into()));
    }
    Ok(LinearModel { weights, intercept })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LrMode {
    /// One model per node on that node's `lags × F` block.
    #[default]
    PerNode,
    /// One model on the whole flattened `N × lags × F` input.
    Global,
}

impl FromStr for LrMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-node" => Ok(LrMode::PerNode),
            "global" => Ok(LrMode::Global),
            other => Err(Error::Validation(format!("unknown LR mode `{other}` (per-node|global)"))),
        }
    }
}

impl fmt::Display for LrMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LrMode::PerNode => "per-node",
            LrMode::Global => "global",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrBaseline {
    pub mode: LrMode,
    pub node_count: usize,
    pub horizon: usize,
    /// One per node, or a single global model.
    pub models: Vec<LinearModel>,
}

fn node_block<'a>(layout: &SampleLayout, s: &'a Sample, node: usize) -> &'a [f64] {
    let w = layout.lags * layout.feature_count();
    &s.input[node * w..(node + 1) * w]
}

/// Fits on the samples at `indices`.
pub fn lr_fit(set: &SampleSet, indices: &[usize], mode: LrMode) -> Result<LrBaseline> {
    let l = &set.layout;
    let (n, h) = (l.node_count, l.horizon);
    let samples: Vec<&Sample> = indices.iter().map(|&i| set.get(i)).collect();
    let models = match mode {
        LrMode::Global => {
            let x: Vec<Vec<f64>> = samples.iter().map(|s| s.input.clone()).collect();
            let y: Vec<Vec<f64>> = samples.iter().map(|s| s.target.clone()).collect();
            vec![fit_linear(&x, &y)?]
        }
        LrMode::PerNode => (0..n)
            .map(|node| {
                let x: Vec<Vec<f64>> = samples.iter().map(|s| node_block(l, s, node).to_vec()).collect();
                let y: Vec<Vec<f64>> = samples.iter().map(|s| s.target[node * h..(node + 1) * h].to_vec()).collect();
                fit_linear(&x, &y)
            })
            .collect::<Result<_>>()?,
    };
    Ok(LrBaseline {
        mode,
        node_count: n,
        horizon: h,
        models,
    })
}

/// `[N × horizon]` prediction for one sample.
pub fn lr_predict(model: &LrBaseline, layout: &SampleLayout, sample: &Sample) -> Vec<f64> {
    match model.mode {
        LrMode::Global => model.models[0].predict(&sample.input),
        LrMode::PerNode => (0..model.node_count)
            .flat_map(|node| model.models[node].predict(node_block(layout, sample, node)))
            .collect(),
    }
}

/// Repeats each node's last observed flow (feature 0) across the horizon.
pub fn persistence_predict(layout: &SampleLayout, sample: &Sample) -> Vec<f64> {
    let f = layout.feature_count();
    (0..layout.node_count)
        .flat_map(|node| {
            let last = sample.input[(node * layout.lags + layout.lags - 1) * f];
            std::iter::repeat(last).take(layout.horizon)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    #[test]
    fn exact_linear_recovery() {
        let x: Vec<Vec<f64>> = (0..40).map(|i| vec![(i as f64 * 0.37).sin() * 5.0, (i * i % 17) as f64]).collect();
        let y: Vec<Vec<f64>> = x.iter().map(|r| vec![2.0 * r[0] - r[1] + 3.0]).collect();
        let m = fit_linear(&x, &y).unwrap();
        assert!((m.weights[0][0] - 2.0).abs() < 1e-8);
        assert!((m.weights[0][1] + 1.0).abs() < 1e-8);
        assert!((m.intercept[0] - 3.0).abs() < 1e-8);
    }

    #[test]
    fn degenerate_fits() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let c: Vec<Vec<f64>> = vec![vec![7.5]; 10];
        let m = fit_linear(&x, &c).unwrap();
        assert!(m.weights[0][0].abs() < 1e-6 && (m.intercept[0] - 7.5).abs() < 1e-6);
        let m = fit_linear(&x, &x).unwrap();
        assert!((m.weights[0][0] - 1.0).abs() < 1e-8 && m.intercept[0].abs() < 1e-8);
        assert!(fit_linear(&x[..1], &x[..1]).is_err());
    }

    #[test]
    fn constant_column_gets_zero_weight() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 4.0]).collect();
        let y: Vec<Vec<f64>> = x.iter().map(|r| vec![r[0] * 3.0]).collect();
        let m = fit_linear(&x, &y).unwrap();
        assert_eq!(m.weights[0][1], 0.0);
    }

    fn ramp_sample(slope: f64) -> (SampleLayout, Sample) {
        let layout = SampleLayout {
            node_count: 1,
            lags: 12,
            horizon: 12,
            feature_names: vec!["flow".into()],
        };
        let start = NaiveDate::from_ymd_opt(2024, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
        let sample = Sample {
            start,
            input: (0..12).map(|t| slope * t as f64).collect(),
            target: (12..24).map(|t| slope * t as f64).collect(),
        };
        (layout, sample)
    }

    #[test]
    fn persistence_on_ramp() {
        let (layout, sample) = ramp_sample(2.0);
        let pred = persistence_predict(&layout, &sample);
        assert!(pred.iter().all(|&v| v == 22.0));
        let mae = pred.iter().zip(&sample.target).map(|(p, t)| (p - t).abs()).sum::<f64>() / 12.0;
        assert!((mae - 6.5 * 2.0).abs() < 1e-12);
    }
}
