#![allow(dead_code)]

use chrono::{Duration, NaiveDate, NaiveDateTime};
use rand::Rng;
use rand_distr::StandardNormal;

use locgclstm::data::{impute_knn, ingest_str, sliding_window, IngestOptions, SampleSet, WindowConfig};
use locgclstm::encoding::CalendarConfig;
use locgclstm::graph::RoadGraph;
use locgclstm::numerics::seeded_rng;

pub const STEPS_PER_DAY: usize = 288;
/// Steps node 0 trails its upstream pair, and node 1 trails node 0.
pub const UPSTREAM_LAG: usize = 6;
/// Generator weights of nodes 2 and 3 in node 0's flow.
pub const MIX: (f64, f64) = (2.0 / 3.0, 1.0 / 3.0);

pub fn origin() -> NaiveDateTime {
    NaiveDate::from_ymd_opt(2024, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap()
}

/// Edges 2→0, 3→0, 0→1.
pub fn chain_graph() -> RoadGraph {
    RoadGraph::from_influences(4, &[(2, 0), (3, 0), (0, 1)]).unwrap()
}

/// Flow per node `[node][t]` for the coupled four-node chain.
pub fn chain_flows(days: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = seeded_rng(seed);
    let len = days * STEPS_PER_DAY;
    let warm = 2 * UPSTREAM_LAG;
    let total = len + warm;
    let ar = |phi: f64, sigma: f64, rng: &mut rand_chacha::ChaCha8Rng| {
        let mut a = 0.0;
        (0..total)
            .map(|_| {
                a = phi * a + sigma * rng.sample::<f64, _>(StandardNormal);
                a
            })
            .collect::<Vec<f64>>()
    };
    let daily = |t: usize, phase: f64| (2.0 * std::f64::consts::PI * t as f64 / STEPS_PER_DAY as f64 + phase).sin();
    let a2 = ar(0.97, 4.0, &mut rng);
    let a3 = ar(0.97, 4.0, &mut rng);
    let x2: Vec<f64> = (0..total).map(|t| 100.0 + 40.0 * daily(t, 0.0) + a2[t]).collect();
    let x3: Vec<f64> = (0..total).map(|t| 90.0 + 35.0 * daily(t, 2.0) + a3[t]).collect();
    let noise = |level: f64, rng: &mut rand_chacha::ChaCha8Rng| 0.05 * level * rng.sample::<f64, _>(StandardNormal);
    let mut x0 = vec![0.0; total];
    let mut x1 = vec![0.0; total];
    for t in UPSTREAM_LAG..total {
        let mix = MIX.0 * x2[t - UPSTREAM_LAG] + MIX.1 * x3[t - UPSTREAM_LAG];
        x0[t] = mix + 10.0 * daily(t, 1.0) + noise(mix, &mut rng);
    }
    for t in UPSTREAM_LAG..total {
        x1[t] = x0[t - UPSTREAM_LAG] + noise(x0[t - UPSTREAM_LAG].abs(), &mut rng);
    }
    [x0, x1, x2, x3].into_iter().map(|x| x[warm..].to_vec()).collect()
}

pub fn flows_to_csv(flows: &[Vec<f64>]) -> String {
    let mut out = String::from("timestamp,node_id,flow\n");
    let start = origin();
    for t in 0..flows[0].len() {
        let ts = start + Duration::minutes(5 * t as i64);
        for (node, f) in flows.iter().enumerate() {
            out.push_str(&format!("{},{node},{:.4}\n", ts.format("%Y-%m-%dT%H:%M:%S"), f[t]));
        }
    }
    out
}

/// Ingest, impute and window a long-format flow CSV.
pub fn samples_from_csv(text: &str) -> SampleSet {
    let series = ingest_str(text, "synthetic", &IngestOptions::default()).unwrap();
    let (series, _) = impute_knn(&series, 4).unwrap();
    sliding_window(&series, &WindowConfig::default(), &CalendarConfig::default()).unwrap()
}

pub fn chain_samples(days: usize, seed: u64) -> SampleSet {
    samples_from_csv(&flows_to_csv(&chain_flows(days, seed)))
}

pub fn last_days(days: usize, count: usize) -> Vec<NaiveDate> {
    (days - count..days).map(|d| origin().date() + Duration::days(d as i64)).collect()
}
