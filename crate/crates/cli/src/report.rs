use std::fmt::Write;

use locgclstm::data::{SampleLayout, SampleSet};
use locgclstm::metrics::{evaluate, MetricsReport};
use locgclstm::Result;

pub fn metrics_csv(rows: &[(String, MetricsReport)]) -> String {
    let mut out = format!("model,count,{},excluded\n", MetricsReport::COLUMNS.join(","));
    for (name, r) in rows {
        let _ = writeln!(out, "{name},{},{},{}", r.count, r.csv_fields().join(","), r.excluded);
    }
    out
}

/// One metrics row per node.
pub fn per_road_csv(layout: &SampleLayout, pred: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<String> {
    let h = layout.horizon;
    let mut out = format!("node,count,{},excluded\n", MetricsReport::COLUMNS.join(","));
    for node in 0..layout.node_count {
        let pick = |rows: &[Vec<f64>]| -> Vec<f64> { rows.iter().flat_map(|r| r[node * h..(node + 1) * h].to_vec()).collect() };
        let r = evaluate(&pick(pred), &pick(truth))?;
        let _ = writeln!(out, "{node},{},{},{}", r.count, r.csv_fields().join(","), r.excluded);
    }
    Ok(out)
}

pub fn predictions_csv(set: &SampleSet, indices: &[usize], pred: &[Vec<f64>]) -> String {
    let h = set.layout.horizon;
    let mut out = String::from("sample,start,node,horizon,prediction,truth\n");
    for (&i, p) in indices.iter().zip(pred) {
        let s = &set.samples()[i];
        let start = s.start.format("%Y-%m-%dT%H:%M:%S");
        for (k, (&pv, &tv)) in p.iter().zip(&s.target).enumerate() {
            let _ = writeln!(out, "{i},{start},{},{},{pv},{tv}", k / h, k % h + 1);
        }
    }
    out
}

/// Line chart of predicted against observed flow for one node and horizon,
/// samples in index order.
pub fn line_chart_svg(title: &str, predicted: &[f64], observed: &[f64]) -> String {
    const W: f64 = 900.0;
    const H: f64 = 320.0;
    const PAD: f64 = 40.0;
    let all = predicted.iter().chain(observed);
    let lo = all.clone().copied().fold(f64::INFINITY, f64::min);
    let hi = all.copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let n = predicted.len().max(observed.len()).max(2);
    let path = |ys: &[f64]| -> String {
        ys.iter()
            .enumerate()
            .map(|(i, y)| {
                let x = PAD + (W - 2.0 * PAD) * i as f64 / (n - 1) as f64;
                let y = H - PAD - (H - 2.0 * PAD) * (y - lo) / span;
                format!("{}{x:.1},{y:.1}", if i == 0 { "M" } else { " L" })
            })
            .collect()
    };
    let mut svg = format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n");
    let _ = writeln!(svg, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");
    let _ = writeln!(svg, "<text x=\"{PAD}\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\">{title}</text>");
    let _ = writeln!(
        svg,
        "<line x1=\"{PAD}\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"#888\"/><line x1=\"{PAD}\" y1=\"{PAD}\" x2=\"{PAD}\" y2=\"{0}\" stroke=\"#888\"/>",
        H - PAD,
        W - PAD
    );
    let _ = writeln!(svg, "<text x=\"4\" y=\"{}\" font-size=\"10\">{hi:.1}</text>", PAD + 4.0);
    let _ = writeln!(svg, "<text x=\"4\" y=\"{}\" font-size=\"10\">{lo:.1}</text>", H - PAD);
    let _ = writeln!(svg, "<path d=\"{}\" fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1.2\"/>", path(observed));
    let _ = writeln!(svg, "<path d=\"{}\" fill=\"none\" stroke=\"#d62728\" stroke-width=\"1.2\"/>", path(predicted));
    let _ = writeln!(
        svg,
        "<text x=\"{0}\" y=\"{1}\" font-size=\"11\" fill=\"#1f77b4\">observed</text><text x=\"{2}\" y=\"{1}\" font-size=\"11\" fill=\"#d62728\">predicted</text>",
        W - 200.0,
        24,
        W - 120.0
    );
    svg.push_str("</svg>\n");
    svg
}

/// Field-wise mean of reports, e.g. over cross-validation folds.
pub fn mean_report(reports: &[MetricsReport]) -> MetricsReport {
    let k = reports.len() as f64;
    let avg = |f: fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / k;
    let avg_opt = |f: fn(&MetricsReport) -> Option<f64>| -> Option<f64> {
        reports.iter().map(f).collect::<Option<Vec<f64>>>().map(|v| v.iter().sum::<f64>() / k)
    };
    MetricsReport {
        count: reports.iter().map(|r| r.count).sum(),
        mse: avg(|r| r.mse),
        rmse: avg(|r| r.rmse),
        mae: avg(|r| r.mae),
        mape: avg_opt(|r| r.mape),
        mdae: avg(|r| r.mdae),
        mdape: avg_opt(|r| r.mdape),
        excluded: reports.iter().map(|r| r.excluded).sum(),
    }
}
