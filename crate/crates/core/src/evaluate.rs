//! Recall of detections against ground-truth events, as a function of
//! localization radius, time offset and fusion threshold.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::str::FromStr;

use chrono::{Duration, NaiveDate, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::csvio::{self, parse_f64, CsvError, Parsed};
use crate::detect::AnomalyDecision;
use crate::fuse::{fuse, AlignedTable, FuseError, FusedDecision, FusionPolicy};
use crate::geo::{haversine_m, GeoPoint, ZoneSet};
use crate::ingest::Source;
use crate::time::{format_timestamp, parse_timestamp, Binning};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum EvalError {
    #[error("no eligible events ({excluded} outside the observation period)")]
    NoEligibleEvents { excluded: usize },
    #[error("invalid radius grid: {0}")]
    InvalidGrid(String),
    #[error(transparent)]
    Fuse(#[from] FuseError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Scale {
    Small,
    Medium,
    Large,
}

impl Scale {
    pub fn as_str(self) -> &'static str {
        match self {
            Scale::Small => "SMALL",
            Scale::Medium => "MEDIUM",
            Scale::Large => "LARGE",
        }
    }
}

impl FromStr for Scale {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "SMALL" => Ok(Scale::Small),
            "MEDIUM" => Ok(Scale::Medium),
            "LARGE" => Ok(Scale::Large),
            _ => Err(format!("unknown scale `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthEvent {
    pub event_id: String,
    pub name: String,
    pub venue: GeoPoint,
    pub start: NaiveDateTime,
    pub end: NaiveDateTime,
    pub scale: Scale,
}

pub const EVENT_HEADER: &[&str] = &["event_id", "name", "lat", "lon", "start_ts", "end_ts", "scale"];

pub fn read_events<R: Read>(reader: R) -> Result<Parsed<GroundTruthEvent>, CsvError> {
    csvio::read_rows(reader, EVENT_HEADER, |f| {
        let lat = parse_f64(f[2], "lat")?;
        let lon = parse_f64(f[3], "lon")?;
        let venue = GeoPoint::new(lon, lat).map_err(|e| e.to_string())?;
        let start = parse_timestamp(f[4])?;
        let end = parse_timestamp(f[5])?;
        if end < start {
            return Err(format!("end {} precedes start {}", f[5], f[4]));
        }
        Ok(GroundTruthEvent {
            event_id: csvio::non_empty(f[0], "event_id")?.to_string(),
            name: f[1].to_string(),
            venue,
            start,
            end,
            scale: f[6].parse()?,
        })
    })
}

pub fn write_events<W: Write>(writer: W, events: &[GroundTruthEvent]) -> std::io::Result<()> {
    csvio::write_csv(
        writer,
        EVENT_HEADER,
        events.iter().map(|e| {
            vec![
                e.event_id.clone(),
                e.name.clone(),
                format!("{:.7}", e.venue.lat),
                format!("{:.7}", e.venue.lon),
                format_timestamp(e.start),
                format_timestamp(e.end),
                e.scale.as_str().to_string(),
            ]
        }),
    )
}

/// An anomalous window resolved to a zone.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Hit {
    pub zone_id: String,
    pub date: NaiveDate,
    /// Minutes since midnight, half-open.
    pub start_min: u32,
    pub end_min: u32,
}

/// Anomalous per-source decisions as hits; bus stops map through `stop_zone`
/// and stops outside every zone are dropped.
pub fn hits_from_decisions(
    decisions: &[AnomalyDecision],
    binning: impl Fn(Source) -> Binning,
    stop_zone: &BTreeMap<String, String>,
) -> Vec<Hit> {
    decisions
        .iter()
        .filter(|d| d.is_anomaly)
        .filter_map(|d| {
            let zone = if d.key.source == Source::Bus {
                stop_zone.get(&d.key.location_id)?.clone()
            } else {
                d.key.location_id.clone()
            };
            let (start_min, end_min) = binning(d.key.source).window(d.key.bin_of_day);
            Some(Hit { zone_id: zone, date: d.date, start_min, end_min })
        })
        .collect()
}

pub fn hits_from_fused(decisions: &[FusedDecision], binning: Binning) -> Vec<Hit> {
    decisions
        .iter()
        .filter(|d| d.is_anomaly)
        .map(|d| {
            let (start_min, end_min) = binning.window(d.bin_of_day);
            Hit { zone_id: d.zone_id.clone(), date: d.date, start_min, end_min }
        })
        .collect()
}

/// The clock hour containing `start + offset_hours`: its date and minute range.
pub fn target_hour(event: &GroundTruthEvent, offset_hours: i32) -> (NaiveDate, u32, u32) {
    let t = event.start + Duration::hours(offset_hours as i64);
    let h = t.hour() * 60;
    (t.date(), h, h + 60)
}

fn hit_matches_time(hit: &Hit, date: NaiveDate, lo: u32, hi: u32) -> bool {
    hit.date == date && hit.start_min < hi && hit.end_min > lo
}

/// True iff some hit on the target date overlaps the target hour and its zone
/// centroid lies within `radius_m` of the venue (inclusive).
pub fn event_recalled(event: &GroundTruthEvent, hits: &[Hit], zones: &ZoneSet, radius_m: f64, offset_hours: i32) -> bool {
    let (date, lo, hi) = target_hour(event, offset_hours);
    hits.iter().any(|h| {
        hit_matches_time(h, date, lo, hi)
            && zones.centroid(&h.zone_id).is_some_and(|c| haversine_m(c, event.venue) <= radius_m)
    })
}

/// The matching hit nearest to the venue and its distance, if any. Ties go
/// to the smaller zone id.
pub fn nearest_hit<'a>(
    event: &GroundTruthEvent,
    hits: &'a [Hit],
    zones: &ZoneSet,
    offset_hours: i32,
) -> Option<(&'a Hit, f64)> {
    let (date, lo, hi) = target_hour(event, offset_hours);
    hits.iter()
        .filter(|h| hit_matches_time(h, date, lo, hi))
        .filter_map(|h| zones.centroid(&h.zone_id).map(|c| (h, haversine_m(c, event.venue))))
        .min_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.zone_id.cmp(&b.0.zone_id)))
}

/// Distance from the venue to the nearest matching hit, if any.
pub fn nearest_hit_distance(event: &GroundTruthEvent, hits: &[Hit], zones: &ZoneSet, offset_hours: i32) -> Option<f64> {
    nearest_hit(event, hits, zones, offset_hours).map(|(_, d)| d)
}

/// Largest number of radii a grid may hold.
pub const MAX_GRID_POINTS: usize = 10_000;

/// `start, start + step, ...` up to and including `end`.
pub fn radius_grid(start: f64, end: f64, step: f64) -> Result<Vec<f64>, EvalError> {
    if !(start.is_finite() && end.is_finite() && step.is_finite()) || start < 0.0 || end < start || step <= 0.0 {
        return Err(EvalError::InvalidGrid(format!("{start}:{end}:{step}")));
    }
    let span = ((end - start) / step + 1e-9).floor();
    if !(span < MAX_GRID_POINTS as f64) {
        return Err(EvalError::InvalidGrid(format!("{start}:{end}:{step} has more than {MAX_GRID_POINTS} points")));
    }
    let n = span as usize;
    Ok((0..=n).map(|i| start + i as f64 * step).collect())
}

pub fn default_radius_grid() -> Vec<f64> {
    radius_grid(0.0, 4000.0, 250.0).expect("valid default grid")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallCurve {
    pub label: String,
    pub offset_hours: i32,
    /// (radius in meters, recall), radius ascending.
    pub points: Vec<(f64, f64)>,
    pub eligible: usize,
    /// Event ids dropped because their date is outside the observation period.
    pub excluded: Vec<String>,
}

/// Splits events into those whose start date lies in `period` and the ids of
/// the rest.
pub fn eligible_events<'a>(
    events: &'a [GroundTruthEvent],
    period: (NaiveDate, NaiveDate),
) -> (Vec<&'a GroundTruthEvent>, Vec<String>) {
    let mut keep = Vec::new();
    let mut excluded = Vec::new();
    for e in events {
        let d = e.start.date();
        if d >= period.0 && d <= period.1 {
            keep.push(e);
        } else {
            excluded.push(e.event_id.clone());
        }
    }
    (keep, excluded)
}

pub fn recall_curve(
    label: &str,
    events: &[GroundTruthEvent],
    hits: &[Hit],
    zones: &ZoneSet,
    radii: &[f64],
    offset_hours: i32,
    period: (NaiveDate, NaiveDate),
) -> Result<RecallCurve, EvalError> {
    let mut sorted = radii.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (eligible, excluded) = eligible_events(events, period);
    if eligible.is_empty() {
        return Err(EvalError::NoEligibleEvents { excluded: excluded.len() });
    }
    let nearest: Vec<Option<f64>> = eligible.iter().map(|e| nearest_hit_distance(e, hits, zones, offset_hours)).collect();
    let n = eligible.len() as f64;
    let points = sorted
        .iter()
        .map(|&r| (r, nearest.iter().filter(|d| d.is_some_and(|d| d <= r)).count() as f64 / n))
        .collect();
    Ok(RecallCurve { label: label.to_string(), offset_hours, points, eligible: eligible.len(), excluded })
}

pub const CURVE_HEADER: &[&str] = &["label", "offset_hours", "R_m", "recall"];

pub fn write_curves<W: Write>(writer: W, curves: &[RecallCurve]) -> std::io::Result<()> {
    csvio::write_csv(
        writer,
        CURVE_HEADER,
        curves.iter().flat_map(|c| {
            c.points.iter().map(move |(r, recall)| {
                vec![c.label.clone(), c.offset_hours.to_string(), r.to_string(), recall.to_string()]
            })
        }),
    )
}

/// Rows of a curve dump as (label, offset, R, recall).
pub fn read_curves<R: Read>(reader: R) -> Result<Parsed<(String, i32, f64, f64)>, CsvError> {
    csvio::read_rows(reader, CURVE_HEADER, |f| {
        Ok((
            csvio::non_empty(f[0], "label")?.to_string(),
            f[1].parse().map_err(|_| format!("bad offset_hours `{}`", f[1]))?,
            parse_f64(f[2], "R_m")?,
            parse_f64(f[3], "recall")?,
        ))
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub method: String,
    pub radius_m: f64,
    pub score_threshold: f64,
    pub recall: f64,
}

/// Recall for every (policy, S, R) combination; each policy's own S is
/// replaced by the swept value.
#[allow(clippy::too_many_arguments)]
pub fn sweep(
    events: &[GroundTruthEvent],
    table: &AlignedTable,
    zones: &ZoneSet,
    policies: &[(String, FusionPolicy)],
    radii: &[f64],
    thresholds: &[f64],
    offset_hours: i32,
    period: (NaiveDate, NaiveDate),
) -> Result<Vec<SweepCell>, EvalError> {
    let mut out = Vec::new();
    for (label, policy) in policies {
        for &s in thresholds {
            let p = FusionPolicy { score_threshold: s, ..policy.clone() };
            let fused = fuse(table, &p)?;
            let hits = hits_from_fused(&fused, table.binning);
            let curve = recall_curve(label, events, &hits, zones, radii, offset_hours, period)?;
            out.extend(curve.points.into_iter().map(|(r, recall)| SweepCell {
                method: label.clone(),
                radius_m: r,
                score_threshold: s,
                recall,
            }));
        }
    }
    Ok(out)
}

pub const SWEEP_HEADER: &[&str] = &["method", "R_m", "S", "recall"];

pub fn write_sweep<W: Write>(writer: W, cells: &[SweepCell]) -> std::io::Result<()> {
    csvio::write_csv(
        writer,
        SWEEP_HEADER,
        cells.iter().map(|c| {
            vec![c.method.clone(), c.radius_m.to_string(), c.score_threshold.to_string(), c.recall.to_string()]
        }),
    )
}
