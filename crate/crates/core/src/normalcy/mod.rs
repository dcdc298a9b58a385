//! Per-key baseline statistics, z-scores and corpus-normalized scores.

mod shapiro;

use std::collections::BTreeMap;
use std::io::{Read, Write};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::csvio::{self, parse_f64, CsvError, Parsed};
use crate::ingest::{Calendar, SeriesKey, SeriesMap, Source};
use crate::time::Daytype;

pub use shapiro::{shapiro_wilk, ShapiroWilk};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum NormalcyError {
    #[error("model has {0} samples; z-scores need at least 2")]
    Degenerate(usize),
    #[error("zero variance: score undefined")]
    ZeroVariance,
    #[error("sample size {0} outside the supported range 3..=5000")]
    UnsupportedSize(usize),
    #[error("non-finite sample")]
    NonFinite,
}

/// Baseline statistics of one series key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalcyModel {
    pub key: SeriesKey,
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator).
    pub std: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub iqr: f64,
}

impl NormalcyModel {
    pub fn from_samples(key: SeriesKey, samples: &[f64]) -> Option<Self> {
        let n = samples.len();
        if n == 0 {
            return None;
        }
        let mean = samples.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let q1 = quantile_sorted(&sorted, 0.25);
        let median = quantile_sorted(&sorted, 0.5);
        let q3 = quantile_sorted(&sorted, 0.75);
        Some(NormalcyModel { key, n, mean, std, median, q1, q3, iqr: q3 - q1 })
    }

    pub fn is_degenerate(&self) -> bool {
        self.n < 2
    }

    pub fn is_zero_variance(&self) -> bool {
        self.std == 0.0
    }
}

/// Inclusive linear-interpolation quantile of sorted data (`p` in [0, 1]).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub type ModelMap = BTreeMap<SeriesKey, NormalcyModel>;

/// Fits one model per series, leaving holiday dates out of the baseline.
/// Series with no remaining samples get no model.
pub fn fit(series: &SeriesMap, calendar: &Calendar) -> ModelMap {
    series
        .iter()
        .filter_map(|(key, s)| {
            let values: Vec<f64> =
                s.samples.iter().filter(|(d, _)| !calendar.is_holiday(*d)).map(|s| s.1).collect();
            NormalcyModel::from_samples(key.clone(), &values).map(|m| (key.clone(), m))
        })
        .collect()
}

pub fn z_score(model: &NormalcyModel, value: f64) -> Result<f64, NormalcyError> {
    if model.is_degenerate() {
        return Err(NormalcyError::Degenerate(model.n));
    }
    if model.is_zero_variance() {
        return Err(NormalcyError::ZeroVariance);
    }
    Ok((value - model.mean) / model.std)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredObservation {
    pub key: SeriesKey,
    pub date: NaiveDate,
    pub value: f64,
    pub z: f64,
    /// |z| over the source's corpus maximum; 0 until [`normalize_scores`] runs.
    pub normalized_z: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Scoring {
    pub observations: Vec<ScoredObservation>,
    /// Keys without a usable model (missing, degenerate or zero variance).
    pub skipped: Vec<SeriesKey>,
}

/// Scores every sample against its key's model and normalizes per source.
pub fn score_series(series: &SeriesMap, models: &ModelMap) -> Scoring {
    let mut out = Scoring::default();
    for (key, s) in series {
        let Some(model) = models.get(key) else {
            out.skipped.push(key.clone());
            continue;
        };
        if model.is_degenerate() || model.is_zero_variance() {
            out.skipped.push(key.clone());
            continue;
        }
        for &(date, value) in &s.samples {
            let z = (value - model.mean) / model.std;
            out.observations.push(ScoredObservation { key: key.clone(), date, value, z, normalized_z: 0.0 });
        }
    }
    normalize_scores(&mut out.observations);
    out
}

/// Sets `normalized_z = |z| / max|z|` per source; an all-zero source maps to 0.
pub fn normalize_scores(observations: &mut [ScoredObservation]) {
    let mut max_abs: BTreeMap<Source, f64> = BTreeMap::new();
    for o in observations.iter() {
        let m = max_abs.entry(o.key.source).or_insert(0.0);
        *m = m.max(o.z.abs());
    }
    for o in observations.iter_mut() {
        let m = max_abs[&o.key.source];
        o.normalized_z = if m > 0.0 { o.z.abs() / m } else { 0.0 };
    }
}

/// Normality diagnostic for one weekday series.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalityResult {
    pub key: SeriesKey,
    pub n: usize,
    pub result: Result<ShapiroWilk, NormalcyError>,
}

/// Runs Shapiro-Wilk on every weekday series (one test per location and bin,
/// pooling all weekdays).
pub fn normality_diagnostics(series: &SeriesMap) -> Vec<NormalityResult> {
    series
        .iter()
        .filter(|(k, _)| k.daytype == Daytype::Weekday)
        .map(|(k, s)| {
            let values: Vec<f64> = s.values().collect();
            NormalityResult { key: k.clone(), n: values.len(), result: shapiro_wilk(&values) }
        })
        .collect()
}

/// Fraction of successful tests per source with p > `alpha`.
pub fn normality_summary(results: &[NormalityResult], alpha: f64) -> BTreeMap<Source, (usize, f64)> {
    let mut acc: BTreeMap<Source, (usize, usize)> = BTreeMap::new();
    for r in results {
        if let Ok(sw) = &r.result {
            let e = acc.entry(r.key.source).or_default();
            e.0 += 1;
            if sw.p_value > alpha {
                e.1 += 1;
            }
        }
    }
    acc.into_iter().map(|(s, (n, pass))| (s, (n, pass as f64 / n as f64))).collect()
}

pub const MODEL_HEADER: &[&str] =
    &["source", "location_id", "bin_of_day", "daytype", "n", "mean", "std", "median", "q1", "q3"];

pub fn write_models<W: Write>(writer: W, models: &ModelMap) -> std::io::Result<()> {
    csvio::write_csv(
        writer,
        MODEL_HEADER,
        models.values().map(|m| {
            vec![
                m.key.source.to_string(),
                m.key.location_id.clone(),
                m.key.bin_of_day.to_string(),
                m.key.daytype.to_string(),
                m.n.to_string(),
                m.mean.to_string(),
                m.std.to_string(),
                m.median.to_string(),
                m.q1.to_string(),
                m.q3.to_string(),
            ]
        }),
    )
}

pub fn read_models<R: Read>(reader: R) -> Result<Parsed<NormalcyModel>, CsvError> {
    csvio::read_rows(reader, MODEL_HEADER, |f| {
        let key = SeriesKey {
            source: f[0].parse()?,
            location_id: f[1].to_string(),
            bin_of_day: f[2].parse().map_err(|_| format!("bad bin_of_day `{}`", f[2]))?,
            daytype: f[3].parse()?,
        };
        let q1 = parse_f64(f[8], "q1")?;
        let q3 = parse_f64(f[9], "q3")?;
        Ok(NormalcyModel {
            key,
            n: f[4].parse().map_err(|_| format!("bad n `{}`", f[4]))?,
            mean: parse_f64(f[5], "mean")?,
            std: parse_f64(f[6], "std")?,
            median: parse_f64(f[7], "median")?,
            q1,
            q3,
            iqr: q3 - q1,
        })
    })
}
