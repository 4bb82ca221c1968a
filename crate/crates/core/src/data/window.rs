use super::{RawSeries, Sample, SampleLayout, SampleSet, TRIG_FEATURES};
use crate::encoding::{trig_encode, CalendarConfig};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowConfig {
    pub lags: usize,
    pub horizon: usize,
    pub stride: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            lags: 12,
            horizon: 12,
            stride: 1,
        }
    }
}

impl WindowConfig {
    pub fn window(&self) -> usize {
        self.lags + self.horizon
    }
}

/// Samples a span of `span_len` steps yields.
pub fn window_count(span_len: usize, cfg: &WindowConfig) -> usize {
    if span_len < cfg.window() {
        0
    } else {
        (span_len - cfg.window()) / cfg.stride + 1
    }
}

/// Cuts every span into uninterrupted windows. The input block carries all
/// series features plus the four calendar encodings; the target is raw flow.
pub fn sliding_window(series: &RawSeries, cfg: &WindowConfig, calendar: &CalendarConfig) -> Result<SampleSet> {
    if cfg.lags == 0 || cfg.horizon == 0 || cfg.stride == 0 {
        return Err(Error::Contract("lags, horizon and stride must be positive".into()));
    }
    calendar.validate()?;
    if series.missing_count() > 0 {
        return Err(Error::Contract(format!(
            "sliding_window needs an imputed series ({} cells missing)",
            series.missing_count()
        )));
    }
    let base = series.feature_count();
    let width = base + TRIG_FEATURES.len();
    let n = series.node_count;

    let encodings = series
        .timestamps
        .iter()
        .map(|&ts| trig_encode(calendar.index_of(ts)?, calendar))
        .collect::<Result<Vec<[f64; 4]>>>()?;

    let mut samples = Vec::new();
    for span in &series.spans {
        for k in 0..window_count(span.len(), cfg) {
            let s = span.start + k * cfg.stride;
            let mut input = Vec::with_capacity(n * cfg.lags * width);
            let mut target = Vec::with_capacity(n * cfg.horizon);
            for node in 0..n {
                for t in s..s + cfg.lags {
                    for f in 0..base {
                        input.push(series.get(node, t, f).unwrap());
                    }
                    input.extend_from_slice(&encodings[t]);
                }
                for t in s + cfg.lags..s + cfg.window() {
                    target.push(series.get(node, t, 0).unwrap());
                }
            }
            samples.push(Sample {
                start: series.timestamps[s],
                input,
                target,
            });
        }
    }
    let mut feature_names = series.feature_names.clone();
    feature_names.extend(TRIG_FEATURES.iter().map(|s| s.to_string()));
    Ok(SampleSet::new(
        SampleLayout {
            node_count: n,
            lags: cfg.lags,
            horizon: cfg.horizon,
            feature_names,
        },
        samples,
    ))
}
