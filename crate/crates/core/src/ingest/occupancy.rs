use std::collections::{BTreeMap, BTreeSet, HashSet};

use chrono::{NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::records::Records;
use super::{OccupancySeries, SeriesKey, SeriesMap, Source};
use crate::geo::ZoneSet;
use crate::time::{coarse_bin_of_hour, Binning, Daytype};

#[derive(Debug, Error, PartialEq)]
pub enum IngestError {
    #[error("bin width {0} min does not divide a day")]
    BinWidth(u32),
    #[error("CDR data is hourly; bin width must be 60 min, got {0}")]
    CdrBinWidth(u32),
    #[error("coarse rebinning needs hourly series, `{0}` is not")]
    NotHourly(String),
}

/// Observation period and holiday list.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Calendar {
    /// Inclusive first/last date. Derived from the records when absent.
    pub period: Option<(NaiveDate, NaiveDate)>,
    /// Dates excluded from baseline fitting.
    #[serde(default)]
    pub holidays: BTreeSet<NaiveDate>,
}

impl Calendar {
    pub fn with_period(start: NaiveDate, end: NaiveDate) -> Self {
        Calendar { period: Some((start, end)), holidays: BTreeSet::new() }
    }

    pub fn contains(&self, date: NaiveDate) -> bool {
        self.period.is_none_or(|(a, b)| date >= a && date <= b)
    }

    pub fn is_holiday(&self, date: NaiveDate) -> bool {
        self.holidays.contains(&date)
    }
}

/// Which definition produced check-in occupancy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckinDefinition {
    UniqueUsers,
    RecordCount,
    /// Distinct users where present plus one per anonymous record.
    Mixed,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OccupancyReport {
    pub accepted: BTreeMap<Source, u64>,
    pub outside_zones: BTreeMap<Source, u64>,
    pub outside_period: BTreeMap<Source, u64>,
    pub checkin_definition: Option<CheckinDefinition>,
    pub period: Option<(NaiveDate, NaiveDate)>,
}

impl OccupancyReport {
    pub fn merge(&mut self, other: OccupancyReport) {
        for (k, v) in other.accepted {
            *self.accepted.entry(k).or_default() += v;
        }
        for (k, v) in other.outside_zones {
            *self.outside_zones.entry(k).or_default() += v;
        }
        for (k, v) in other.outside_period {
            *self.outside_period.entry(k).or_default() += v;
        }
        self.checkin_definition = self.checkin_definition.or(other.checkin_definition);
        self.period = match (self.period, other.period) {
            (Some((a, b)), Some((c, d))) => Some((a.min(c), b.max(d))),
            (p, q) => p.or(q),
        };
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Occupancy {
    pub series: SeriesMap,
    pub report: OccupancyReport,
}

type Cell = (String, NaiveDate, u32);

#[derive(Default)]
struct CheckinCell {
    users: HashSet<String>,
    anonymous: u64,
}

/// Aggregates one file's records into occupancy series.
///
/// `bin_width` applies to every source except CDR, which must be called with
/// 60. Count sources are zero-filled over every zone and date of the period;
/// bus series only carry observed bins.
pub fn compute_occupancy(
    records: &Records,
    zones: &ZoneSet,
    bin_width: u32,
    calendar: &Calendar,
) -> Result<Occupancy, IngestError> {
    let binning = Binning::Minutes(bin_width);
    if !binning.is_valid() {
        return Err(IngestError::BinWidth(bin_width));
    }
    if matches!(records, Records::Cdr(_)) && bin_width != 60 {
        return Err(IngestError::CdrBinWidth(bin_width));
    }

    let mut report = OccupancyReport::default();
    let mut out = SeriesMap::new();
    let period = calendar.period.or_else(|| record_period(records));
    report.period = period;
    let Some(period) = period else {
        return Ok(Occupancy { series: out, report });
    };
    let cal = Calendar { period: Some(period), holidays: calendar.holidays.clone() };

    let cell_of = |loc: &str, ts: NaiveDateTime| -> Cell { (loc.to_string(), ts.date(), binning.bin_of(ts)) };

    match records {
        Records::Cdr(recs) => {
            let mut counts: BTreeMap<Cell, f64> = BTreeMap::new();
            let mut locations: BTreeSet<String> = zones.ids().map(str::to_string).collect();
            for r in recs {
                if !cal.contains(r.timestamp.date()) {
                    bump(&mut report.outside_period, Source::Cdr);
                    continue;
                }
                bump(&mut report.accepted, Source::Cdr);
                locations.insert(r.zone_id.clone());
                *counts.entry(cell_of(&r.zone_id, r.timestamp)).or_default() += r.visitors as f64;
            }
            fill_counts(&mut out, Source::Cdr, &locations, binning, period, &counts);
        }
        Records::Bus(recs) => {
            let mut sums: BTreeMap<Cell, (f64, u32)> = BTreeMap::new();
            for r in recs {
                if !cal.contains(r.timestamp.date()) {
                    bump(&mut report.outside_period, Source::Bus);
                    continue;
                }
                bump(&mut report.accepted, Source::Bus);
                let e = sums.entry(cell_of(&r.bus_stop_id, r.timestamp)).or_default();
                e.0 += r.loading as f64;
                e.1 += 1;
            }
            let means = sums.into_iter().map(|(c, (s, n))| (c, s / n as f64));
            push_observed(&mut out, Source::Bus, binning, means);
        }
        Records::Taxi(recs) => {
            let locations: BTreeSet<String> = zones.ids().map(str::to_string).collect();
            let mut pickups: BTreeMap<Cell, f64> = BTreeMap::new();
            let mut dropoffs: BTreeMap<Cell, f64> = BTreeMap::new();
            for r in recs {
                for (source, p, ts, counts) in [
                    (Source::TaxiPickup, r.pickup, r.pickup_ts, &mut pickups),
                    (Source::TaxiDropoff, r.dropoff, r.dropoff_ts, &mut dropoffs),
                ] {
                    if !cal.contains(ts.date()) {
                        bump(&mut report.outside_period, source);
                        continue;
                    }
                    match zones.point_to_zone(p) {
                        Some(z) => {
                            bump(&mut report.accepted, source);
                            *counts.entry(cell_of(z, ts)).or_default() += 1.0;
                        }
                        None => bump(&mut report.outside_zones, source),
                    }
                }
            }
            fill_counts(&mut out, Source::TaxiPickup, &locations, binning, period, &pickups);
            fill_counts(&mut out, Source::TaxiDropoff, &locations, binning, period, &dropoffs);
        }
        Records::Checkin(recs) => {
            let locations: BTreeSet<String> = zones.ids().map(str::to_string).collect();
            let mut cells: BTreeMap<Cell, CheckinCell> = BTreeMap::new();
            let (mut with_user, mut without_user) = (false, false);
            for r in recs {
                if !cal.contains(r.timestamp.date()) {
                    bump(&mut report.outside_period, Source::Checkin);
                    continue;
                }
                let Some(z) = zones.point_to_zone(r.location) else {
                    bump(&mut report.outside_zones, Source::Checkin);
                    continue;
                };
                bump(&mut report.accepted, Source::Checkin);
                let cell = cells.entry(cell_of(z, r.timestamp)).or_default();
                match &r.user_id {
                    Some(u) => {
                        with_user = true;
                        cell.users.insert(u.clone());
                    }
                    None => {
                        without_user = true;
                        cell.anonymous += 1;
                    }
                }
            }
            report.checkin_definition = Some(match (with_user, without_user) {
                (true, true) => CheckinDefinition::Mixed,
                (false, true) => CheckinDefinition::RecordCount,
                _ => CheckinDefinition::UniqueUsers,
            });
            let counts: BTreeMap<Cell, f64> = cells
                .into_iter()
                .map(|(c, v)| (c, (v.users.len() as u64 + v.anonymous) as f64))
                .collect();
            fill_counts(&mut out, Source::Checkin, &locations, binning, period, &counts);
        }
    }
    Ok(Occupancy { series: out, report })
}

fn bump(map: &mut BTreeMap<Source, u64>, source: Source) {
    *map.entry(source).or_default() += 1;
}

/// First and last date touched by any timestamp of the records.
pub fn record_period(records: &Records) -> Option<(NaiveDate, NaiveDate)> {
    let dates: Vec<NaiveDate> = match records {
        Records::Cdr(v) => v.iter().map(|r| r.timestamp.date()).collect(),
        Records::Bus(v) => v.iter().map(|r| r.timestamp.date()).collect(),
        Records::Taxi(v) => v.iter().flat_map(|r| [r.pickup_ts.date(), r.dropoff_ts.date()]).collect(),
        Records::Checkin(v) => v.iter().map(|r| r.timestamp.date()).collect(),
    };
    Some((*dates.iter().min()?, *dates.iter().max()?))
}

fn fill_counts(
    out: &mut SeriesMap,
    source: Source,
    locations: &BTreeSet<String>,
    binning: Binning,
    (start, end): (NaiveDate, NaiveDate),
    counts: &BTreeMap<Cell, f64>,
) {
    for loc in locations {
        for bin in 0..binning.bins_per_day() {
            for date in start.iter_days().take_while(|d| *d <= end) {
                let key = SeriesKey {
                    source,
                    location_id: loc.clone(),
                    bin_of_day: bin,
                    daytype: Daytype::of(date),
                };
                let v = counts.get(&(loc.clone(), date, bin)).copied().unwrap_or(0.0);
                out.entry(key.clone())
                    .or_insert_with(|| OccupancySeries { key, binning, samples: Vec::new() })
                    .samples
                    .push((date, v));
            }
        }
    }
}

fn push_observed(out: &mut SeriesMap, source: Source, binning: Binning, cells: impl Iterator<Item = (Cell, f64)>) {
    // BTreeMap cell order is (location, date, bin), so per-key samples arrive date-sorted
    for ((loc, date, bin), v) in cells {
        let key = SeriesKey { source, location_id: loc, bin_of_day: bin, daytype: Daytype::of(date) };
        out.entry(key.clone())
            .or_insert_with(|| OccupancySeries { key, binning, samples: Vec::new() })
            .samples
            .push((date, v));
    }
}

/// Merges series maps from different files. Keys must not collide.
pub fn merge_series(into: &mut SeriesMap, other: SeriesMap) {
    for (k, v) in other {
        into.insert(k, v);
    }
}

/// Sums 24 hourly values into the five multi-hour bins.
pub fn coarse_day(hourly: &[f64; 24]) -> [f64; 5] {
    let mut out = [0.0; 5];
    for (h, v) in hourly.iter().enumerate() {
        out[coarse_bin_of_hour(h as u32) as usize] += v;
    }
    out
}

/// Re-bins hourly series into the five multi-hour bins. Each coarse value is
/// the sum of its member hours present on that date.
pub fn coarse_rebin(series: &SeriesMap) -> Result<SeriesMap, IngestError> {
    let mut sums: BTreeMap<SeriesKey, BTreeMap<NaiveDate, f64>> = BTreeMap::new();
    for s in series.values() {
        if s.binning != Binning::hourly() {
            return Err(IngestError::NotHourly(format!(
                "{}/{}/{}",
                s.key.source, s.key.location_id, s.key.bin_of_day
            )));
        }
        let key = SeriesKey { bin_of_day: coarse_bin_of_hour(s.key.bin_of_day), ..s.key.clone() };
        let per_date = sums.entry(key).or_default();
        for &(date, v) in &s.samples {
            *per_date.entry(date).or_default() += v;
        }
    }
    Ok(sums
        .into_iter()
        .map(|(key, per_date)| {
            let s = OccupancySeries { key: key.clone(), binning: Binning::Coarse, samples: per_date.into_iter().collect() };
            (key, s)
        })
        .collect())
}
