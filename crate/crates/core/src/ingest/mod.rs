//! Raw record parsing and aggregation into occupancy series.

mod occupancy;
mod records;

use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::time::{Binning, Daytype};

pub use occupancy::{
    coarse_day, coarse_rebin, compute_occupancy, merge_series, Calendar, CheckinDefinition, IngestError,
    Occupancy, OccupancyReport, record_period,
};
pub use records::{
    parse_source, parse_stops, records_to_rows, stop_index, BusArrivalRecord, CdrRecord, CheckinRecord,
    RecordKind, Records, StopIndex, TaxiTripRecord, BUS_HEADER, CDR_HEADER, CHECKIN_HEADER, STOPS_HEADER,
    TAXI_HEADER,
};

/// Sensor channel an occupancy series comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Source {
    Cdr,
    Bus,
    TaxiPickup,
    TaxiDropoff,
    Checkin,
}

impl Source {
    pub const ALL: [Source; 5] =
        [Source::Cdr, Source::Bus, Source::TaxiPickup, Source::TaxiDropoff, Source::Checkin];

    pub fn as_str(self) -> &'static str {
        match self {
            Source::Cdr => "CDR",
            Source::Bus => "BUS",
            Source::TaxiPickup => "TAXI_PICKUP",
            Source::TaxiDropoff => "TAXI_DROPOFF",
            Source::Checkin => "CHECKIN",
        }
    }

    /// Count-based sources get absent bins filled with zero.
    pub fn is_count(self) -> bool {
        self != Source::Bus
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Source {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_uppercase().replace('-', "_");
        Source::ALL
            .into_iter()
            .find(|src| src.as_str() == norm)
            .ok_or_else(|| format!("unknown source `{s}`"))
    }
}

/// Identifies one occupancy series: a location's bin of day on one day type.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SeriesKey {
    pub source: Source,
    /// Zone id, or bus stop id for [`Source::Bus`].
    pub location_id: String,
    pub bin_of_day: u32,
    pub daytype: Daytype,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancySeries {
    pub key: SeriesKey,
    pub binning: Binning,
    /// Strictly increasing dates, all of `key.daytype`.
    pub samples: Vec<(NaiveDate, f64)>,
}

impl OccupancySeries {
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(|s| s.1)
    }
}

pub type SeriesMap = std::collections::BTreeMap<SeriesKey, OccupancySeries>;
