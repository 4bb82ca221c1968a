//! RMSE, MAE, MAPE, MdAE and MdAPE over pooled predictions.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ground-truth magnitudes below this are left out of the percentage metrics.
pub const MAPE_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub count: usize,
    pub mse: f64,
    pub rmse: f64,
    pub mae: f64,
    /// Percent. `None` when every truth value was excluded.
    pub mape: Option<f64>,
    pub mdae: f64,
    pub mdape: Option<f64>,
    /// Entries dropped from MAPE/MdAPE because `|truth| < MAPE_EPS`.
    pub excluded: usize,
}

/// Median with the even-count convention of averaging the two middle values.
/// Sorts `values` in place.
pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

pub fn evaluate(pred: &[f64], truth: &[f64]) -> Result<MetricsReport> {
    if pred.len() != truth.len() {
        return Err(Error::shape("evaluate", &[pred.len()], &[truth.len()]));
    }
    if pred.is_empty() {
        return Err(Error::Contract("cannot evaluate an empty prediction set".into()));
    }
    let n = pred.len() as f64;
    let mut abs_err: Vec<f64> = pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).collect();
    let mut pct_err: Vec<f64> = pred
        .iter()
        .zip(truth)
        .filter(|(_, t)| t.abs() >= MAPE_EPS)
        .map(|(p, t)| ((p - t) / t * 100.0).abs())
        .collect();
    let mse = abs_err.iter().map(|e| e * e).sum::<f64>() / n;
    let mae = abs_err.iter().sum::<f64>() / n;
    let mape = (!pct_err.is_empty()).then(|| pct_err.iter().sum::<f64>() / pct_err.len() as f64);
    let excluded = pred.len() - pct_err.len();
    Ok(MetricsReport {
        count: pred.len(),
        mse,
        rmse: mse.sqrt(),
        mae,
        mape,
        mdae: median(&mut abs_err).expect("non-empty"),
        mdape: median(&mut pct_err),
        excluded,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_owned(), |x| format!("{x:.3}"))
}

impl MetricsReport {
    /// Column order used by every tabular report.
    pub const COLUMNS: [&'static str; 6] = ["MSE", "RMSE", "MAE", "MAPE", "MdAE", "MdAPE"];

    /// Values in [`Self::COLUMNS`] order, `undefined` for missing percentages.
    pub fn csv_fields(&self) -> Vec<String> {
        vec![
            format!("{}", self.mse),
            format!("{}", self.rmse),
            format!("{}", self.mae),
            self.mape.map_or_else(|| "undefined".into(), |v| v.to_string()),
            format!("{}", self.mdae),
            self.mdape.map_or_else(|| "undefined".into(), |v| v.to_string()),
        ]
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "RMSE {:.3}  MAPE(%) {}  MAE {:.3}  MdAPE(%) {}  MdAE {:.3}",
            self.rmse,
            fmt_opt(self.mape),
            self.mae,
            fmt_opt(self.mdape),
            self.mdae
        )?;
        if self.excluded > 0 {
            write!(f, "  ({} near-zero truths excluded from percentages)", self.excluded)?;
        }
        Ok(())
    }
}

/// Renders named reports side by side with one metric per row.
pub fn render_table(columns: &[(String, MetricsReport)]) -> String {
    let mut out = String::new();
    let width = columns.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(10);
    out.push_str(&format!("{:<10}", "Metric"));
    for (name, _) in columns {
        out.push_str(&format!(" {name:>width$}"));
    }
    out.push('\n');
    let rows: [(&str, fn(&MetricsReport) -> String); 5] = [
        ("RMSE", |r| format!("{:.3}", r.rmse)),
        ("MAPE(%)", |r| fmt_opt(r.mape)),
        ("MAE", |r| format!("{:.3}", r.mae)),
        ("MdAPE(%)", |r| fmt_opt(r.mdape)),
        ("MdAE", |r| format!("{:.3}", r.mdae)),
    ];
    for (label, get) in rows {
        out.push_str(&format!("{label:<10}"));
        for (_, r) in columns {
            out.push_str(&format!(" {:>width$}", get(r)));
        }
        out.push('\n');
    }
    out
}
