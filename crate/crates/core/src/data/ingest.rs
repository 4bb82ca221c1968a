use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use chrono::NaiveDateTime;

use super::RawSeries;
use crate::encoding::Vocabulary;
use crate::error::{Error, Result};

/// Columns allowed after `timestamp,node_id,flow`.
pub const OPTIONAL_COLUMNS: [&str; 5] = ["speed", "density", "heavy_ratio", "lane_count", "weather"];

#[derive(Clone, Debug)]
pub struct IngestOptions {
    pub interval_minutes: u32,
    /// Timeline gaps of up to this many whole intervals stay inside a span as
    /// missing rows; longer gaps start a new span.
    pub max_fill_gap: usize,
    /// Expected node count; node ids at or above it are rejected. When unset,
    /// the count is `max id + 1` and every id below it must appear.
    pub node_count: Option<usize>,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            interval_minutes: 5,
            max_fill_gap: 3,
            node_count: None,
        }
    }
}

const TIMESTAMP_FORMATS: [&str; 4] = [
    "%Y-%m-%dT%H:%M:%S",
    "%Y-%m-%d %H:%M:%S",
    "%Y-%m-%dT%H:%M",
    "%Y-%m-%d %H:%M",
];

pub(crate) fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim().trim_end_matches('Z');
    TIMESTAMP_FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
}

pub fn ingest_csv(path: &Path, opts: &IngestOptions) -> Result<RawSeries> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ingest_str(&text, &path.display().to_string(), opts)
}

/// Parses flow CSV text. `origin` labels errors.
pub fn ingest_str(text: &str, origin: &str, opts: &IngestOptions) -> Result<RawSeries> {
    let parse_err = |line: u64, message: String| Error::Parse {
        path: origin.to_owned(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    let cols: Vec<&str> = header.iter().collect();
    if cols.len() < 3 || cols[..3] != ["timestamp", "node_id", "flow"] {
        return Err(Error::Validation(format!(
            "{origin}: header must start with timestamp,node_id,flow (got {})",
            cols.join(",")
        )));
    }
    let mut seen = BTreeSet::new();
    for c in &cols[3..] {
        if !OPTIONAL_COLUMNS.contains(c) {
            return Err(Error::Validation(format!("{origin}: unknown column `{c}`")));
        }
        if !seen.insert(*c) {
            return Err(Error::Validation(format!("{origin}: duplicate column `{c}`")));
        }
    }
    let feature_names: Vec<String> = cols[2..].iter().map(|s| s.to_string()).collect();
    let categorical: Vec<bool> = feature_names.iter().map(|n| n == "weather").collect();
    let f = feature_names.len();

    let mut vocabulary = Vocabulary::default();
    let mut rows: BTreeMap<(usize, NaiveDateTime), Vec<Option<f64>>> = BTreeMap::new();
    let mut max_node = 0usize;
    for rec in reader.records() {
        let rec = rec.map_err(|e| parse_err(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != cols.len() {
            return Err(parse_err(line, format!("expected {} fields, got {}", cols.len(), rec.len())));
        }
        let ts = parse_timestamp(&rec[0])
            .ok_or_else(|| parse_err(line, format!("bad timestamp `{}`", &rec[0])))?;
        let node: usize = rec[1]
            .parse()
            .map_err(|_| parse_err(line, format!("bad node id `{}`", &rec[1])))?;
        if let Some(n) = opts.node_count {
            if node >= n {
                return Err(Error::Validation(format!(
                    "{origin}:{line}: unknown node id {node} (expected 0..{n})"
                )));
            }
        }
        max_node = max_node.max(node);
        let mut values = Vec::with_capacity(f);
        for (k, field) in rec.iter().skip(2).enumerate() {
            if field.is_empty() {
                values.push(None);
            } else if categorical[k] {
                values.push(Some(f64::from(vocabulary.observe(field))));
            } else {
                let v: f64 = field
                    .parse()
                    .map_err(|_| parse_err(line, format!("bad number `{field}` in `{}`", feature_names[k])))?;
                if !v.is_finite() {
                    return Err(parse_err(line, format!("non-finite value in `{}`", feature_names[k])));
                }
                values.push(Some(v));
            }
        }
        if rows.insert((node, ts), values).is_some() {
            return Err(Error::Validation(format!(
                "{origin}:{line}: duplicate record for node {node} at {ts}"
            )));
        }
    }
    if rows.is_empty() {
        return Err(Error::Validation(format!("{origin}: no data rows")));
    }
    let node_count = opts.node_count.unwrap_or(max_node + 1);
    let present: BTreeSet<usize> = rows.keys().map(|(n, _)| *n).collect();
    if let Some(absent) = (0..node_count).find(|n| !present.contains(n)) {
        return Err(Error::Validation(format!("{origin}: node {absent} has no records")));
    }

    let distinct: BTreeSet<NaiveDateTime> = rows.keys().map(|(_, t)| *t).collect();
    let (timestamps, spans) = build_timeline(&distinct, opts, origin)?;
    let position: HashMap<NaiveDateTime, usize> =
        timestamps.iter().enumerate().map(|(i, t)| (*t, i)).collect();

    let mut series = RawSeries {
        node_count,
        feature_names,
        categorical,
        vocabulary,
        values: vec![None; node_count * timestamps.len() * f],
        timestamps,
        spans,
        interval_minutes: opts.interval_minutes,
    };
    for ((node, ts), values) in rows {
        let t = position[&ts];
        for (k, v) in values.into_iter().enumerate() {
            series.set(node, t, k, v);
        }
    }
    Ok(series)
}

/// Sorted timeline with short gaps filled and long gaps split into spans.
fn build_timeline(
    distinct: &BTreeSet<NaiveDateTime>,
    opts: &IngestOptions,
    origin: &str,
) -> Result<(Vec<NaiveDateTime>, Vec<std::ops::Range<usize>>)> {
    let step = chrono::Duration::minutes(i64::from(opts.interval_minutes));
    let mut timeline: Vec<NaiveDateTime> = Vec::with_capacity(distinct.len());
    let mut spans = Vec::new();
    let mut span_start = 0;
    for &ts in distinct {
        if let Some(&prev) = timeline.last() {
            let gap = ts - prev;
            if gap.num_seconds() % step.num_seconds() != 0 {
                return Err(Error::Validation(format!(
                    "{origin}: timestamp {ts} is not on the {}-minute grid started at {prev}",
                    opts.interval_minutes
                )));
            }
            let missing = (gap.num_seconds() / step.num_seconds()) as usize - 1;
            if missing > opts.max_fill_gap {
                spans.push(span_start..timeline.len());
                span_start = timeline.len();
            } else {
                for k in 1..=missing {
                    timeline.push(prev + step * k as i32);
                }
            }
        }
        timeline.push(ts);
    }
    spans.push(span_start..timeline.len());
    Ok((timeline, spans))
}

/// Converts a wide export (`timestamp,<sensor>,<sensor>,...`, one column per
/// sensor, as commonly distributed for METR-LA) into the long flow schema.
/// Returns the CSV text and the sensor column names in node-id order.
pub fn convert_wide_csv(text: &str, origin: &str) -> Result<(String, Vec<String>)> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| Error::Parse {
            path: origin.into(),
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    if header.len() < 2 {
        return Err(Error::Validation(format!("{origin}: expected a timestamp column and sensors")));
    }
    let sensors: Vec<String> = header.iter().skip(1).map(str::to_owned).collect();
    let mut out = String::from("timestamp,node_id,flow\n");
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Parse {
            path: origin.into(),
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let ts = parse_timestamp(&rec[0]).ok_or_else(|| Error::Parse {
            path: origin.into(),
            line,
            message: format!("bad timestamp `{}`", &rec[0]),
        })?;
        for (node, v) in rec.iter().skip(1).enumerate() {
            // Exports mark missing readings as 0.
            let v = match v.parse::<f64>() {
                Ok(x) if x != 0.0 && x.is_finite() => x.to_string(),
                _ => String::new(),
            };
            out.push_str(&format!("{},{node},{v}\n", ts.format("%Y-%m-%dT%H:%M:%S")));
        }
    }
    Ok((out, sensors))
}
