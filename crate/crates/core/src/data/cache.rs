//! Binary sample cache.
//!
//! ```text
//! magic   8 bytes  "LGCSAMPL"
//! version u32
//! sample_num, node_num, time_lags, feature_nums, horizon   u64 each
//! start   sample_num × i64 (unix seconds)
//! inputs  sample_num × node_num × time_lags × feature_nums f64
//! targets sample_num × node_num × horizon f64
//! ```
//! All integers and floats little-endian. Feature names live in the JSON
//! dataset description written alongside.

use std::path::Path;

use chrono::DateTime;

use super::{Sample, SampleLayout, SampleSet};
use crate::error::{Error, Result};
use crate::io::{put_f64s, write_atomic, Reader};

pub const CACHE_MAGIC: &[u8; 8] = b"LGCSAMPL";
pub const CACHE_VERSION: u32 = 1;

pub fn encode_cache(set: &SampleSet) -> Vec<u8> {
    let l = &set.layout;
    let samples = set.samples();
    let mut out = Vec::with_capacity(64 + samples.len() * 8 * (1 + l.input_len() + l.target_len()));
    out.extend_from_slice(CACHE_MAGIC);
    out.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    for v in [samples.len(), l.node_count, l.lags, l.feature_count(), l.horizon] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    for s in samples {
        out.extend_from_slice(&s.start.and_utc().timestamp().to_le_bytes());
    }
    for s in samples {
        put_f64s(&mut out, &s.input);
    }
    for s in samples {
        put_f64s(&mut out, &s.target);
    }
    out
}

pub fn write_cache(path: &Path, set: &SampleSet) -> Result<()> {
    write_atomic(path, &encode_cache(set))
}

/// Reads a cache written by [`write_cache`]; `feature_names` must match the
/// stored feature count.
pub fn read_cache(path: &Path, feature_names: Vec<String>) -> Result<SampleSet> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader::new(&bytes, path);
    if r.take(8)? != CACHE_MAGIC {
        return Err(r.error("not a sample cache (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != CACHE_VERSION {
        return Err(r.error(format!("unsupported cache version {version}")));
    }
    let mut dims = [0usize; 5];
    for d in &mut dims {
        *d = r.u64()? as usize;
    }
    let [count, node_count, lags, features, horizon] = dims;
    if features != feature_names.len() {
        return Err(r.error(format!(
            "cache holds {features} features but {} names were given",
            feature_names.len()
        )));
    }
    let layout = SampleLayout {
        node_count,
        lags,
        horizon,
        feature_names,
    };
    let mut starts = Vec::with_capacity(count);
    for _ in 0..count {
        let secs = r.u64()? as i64;
        let ts = DateTime::from_timestamp(secs, 0)
            .ok_or_else(|| r.error(format!("bad timestamp {secs}")))?
            .naive_utc();
        starts.push(ts);
    }
    let inputs = r.f64s(count * layout.input_len())?;
    let targets = r.f64s(count * layout.target_len())?;
    r.finish()?;
    let samples = starts
        .into_iter()
        .enumerate()
        .map(|(i, start)| Sample {
            start,
            input: inputs[i * layout.input_len()..(i + 1) * layout.input_len()].to_vec(),
            target: targets[i * layout.target_len()..(i + 1) * layout.target_len()].to_vec(),
        })
        .collect();
    Ok(SampleSet::new(layout, samples))
}
