//! Outlier detectors over scored observations.

mod esd;
mod shesd;

use std::io::{Read, Write};
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::csvio::{self, parse_f64, CsvError, Parsed};
use crate::ingest::SeriesKey;
use crate::normalcy::{ModelMap, NormalcyModel, ScoredObservation};
use crate::time::{parse_date, Daytype};

pub use esd::{esd_critical_value, generalized_esd, t_quantile, EsdOutcome, MAD_SCALE};
pub use shesd::{detect_shesd, seasonal_residual, shesd, shesd_indices, EsdConfig, ShesdDetection, SkippedGroup};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum DetectError {
    #[error("series of length {n} is too short (need at least {required})")]
    TooShort { n: usize, required: usize },
    #[error("invalid detector configuration: {0}")]
    InvalidConfig(String),
    #[error("series contains non-finite values")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Detector {
    Zscore,
    Iqr,
    Shesd,
}

impl Detector {
    pub const ALL: [Detector; 3] = [Detector::Zscore, Detector::Iqr, Detector::Shesd];

    pub fn as_str(self) -> &'static str {
        match self {
            Detector::Zscore => "ZSCORE",
            Detector::Iqr => "IQR",
            Detector::Shesd => "SHESD",
        }
    }
}

impl std::fmt::Display for Detector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Detector {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let up = s.trim().to_ascii_uppercase().replace(['-', '_'], "");
        Detector::ALL
            .into_iter()
            .find(|d| d.as_str() == up)
            .ok_or_else(|| format!("unknown detector `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Direction {
    High,
    Low,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::High => "HIGH",
            Direction::Low => "LOW",
        }
    }
}

impl FromStr for Direction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "HIGH" => Ok(Direction::High),
            "LOW" => Ok(Direction::Low),
            _ => Err(format!("unknown direction `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyDecision {
    pub key: SeriesKey,
    pub date: NaiveDate,
    /// The observation's z-score.
    pub score: f64,
    pub is_anomaly: bool,
    pub detector: Detector,
    pub direction: Direction,
}

/// Deterministic order: source, location, date, bin, then detector.
pub fn sort_decisions(decisions: &mut [AnomalyDecision]) {
    decisions.sort_by(|a, b| {
        (a.key.source, &a.key.location_id, a.date, a.key.bin_of_day, a.detector).cmp(&(
            b.key.source,
            &b.key.location_id,
            b.date,
            b.key.bin_of_day,
            b.detector,
        ))
    });
}

/// Two-sided static threshold, inclusive: `|z| >= threshold`.
pub fn detect_zscore(observations: &[ScoredObservation], threshold: f64) -> Vec<AnomalyDecision> {
    let mut out: Vec<AnomalyDecision> = observations
        .iter()
        .map(|o| AnomalyDecision {
            key: o.key.clone(),
            date: o.date,
            score: o.z,
            is_anomaly: o.z.abs() >= threshold,
            detector: Detector::Zscore,
            direction: if o.z > 0.0 { Direction::High } else { Direction::Low },
        })
        .collect();
    sort_decisions(&mut out);
    out
}

/// Tukey fences with strict inequality. Returns the flag and the side of the
/// median the value lies on.
pub fn detect_iqr(model: &NormalcyModel, value: f64, multiplier: f64) -> (bool, Direction) {
    let lo = model.q1 - multiplier * model.iqr;
    let hi = model.q3 + multiplier * model.iqr;
    let direction = if value > model.median { Direction::High } else { Direction::Low };
    (value < lo || value > hi, direction)
}

/// Applies [`detect_iqr`] to every observation that has a model.
pub fn detect_iqr_series(
    observations: &[ScoredObservation],
    models: &ModelMap,
    multiplier: f64,
) -> Vec<AnomalyDecision> {
    let mut out: Vec<AnomalyDecision> = observations
        .iter()
        .filter_map(|o| {
            let model = models.get(&o.key)?;
            let (is_anomaly, direction) = detect_iqr(model, o.value, multiplier);
            Some(AnomalyDecision {
                key: o.key.clone(),
                date: o.date,
                score: o.z,
                is_anomaly,
                detector: Detector::Iqr,
                direction,
            })
        })
        .collect();
    sort_decisions(&mut out);
    out
}

pub const DECISION_HEADER: &[&str] =
    &["detector", "source", "location_id", "date", "bin_of_day", "score", "direction", "is_anomaly"];

pub fn write_decisions<W: Write>(writer: W, decisions: &[AnomalyDecision]) -> std::io::Result<()> {
    csvio::write_csv(
        writer,
        DECISION_HEADER,
        decisions.iter().map(|d| {
            vec![
                d.detector.to_string(),
                d.key.source.to_string(),
                d.key.location_id.clone(),
                d.date.to_string(),
                d.key.bin_of_day.to_string(),
                d.score.to_string(),
                d.direction.as_str().to_string(),
                d.is_anomaly.to_string(),
            ]
        }),
    )
}

/// Reads a decision dump; the day type is recovered from the date.
pub fn read_decisions<R: Read>(reader: R) -> Result<Parsed<AnomalyDecision>, CsvError> {
    csvio::read_rows(reader, DECISION_HEADER, |f| {
        let date = parse_date(f[3])?;
        Ok(AnomalyDecision {
            key: SeriesKey {
                source: f[1].parse()?,
                location_id: csvio::non_empty(f[2], "location_id")?.to_string(),
                bin_of_day: f[4].parse().map_err(|_| format!("bad bin_of_day `{}`", f[4]))?,
                daytype: Daytype::of(date),
            },
            date,
            score: parse_f64(f[5], "score")?,
            is_anomaly: match f[7].to_ascii_lowercase().as_str() {
                "true" | "1" => true,
                "false" | "0" => false,
                other => return Err(format!("bad is_anomaly `{other}`")),
            },
            detector: f[0].parse()?,
            direction: f[6].parse()?,
        })
    })
}
