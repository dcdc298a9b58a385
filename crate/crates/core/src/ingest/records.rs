use std::collections::BTreeMap;
use std::io::Read;

use chrono::{NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::csvio::{non_empty, parse_f64, read_rows, CsvError, Parsed, Rejection};
use crate::geo::GeoPoint;
use crate::time::{format_timestamp, parse_timestamp};

pub const CDR_HEADER: &[&str] = &["zone_id", "timestamp", "visitors"];
pub const BUS_HEADER: &[&str] = &["bus_stop_id", "service_id", "timestamp", "loading"];
pub const TAXI_HEADER: &[&str] =
    &["pickup_lon", "pickup_lat", "pickup_ts", "dropoff_lon", "dropoff_lat", "dropoff_ts"];
pub const CHECKIN_HEADER: &[&str] = &["venue_id", "timestamp", "lat", "lon", "category", "user_id"];
pub const STOPS_HEADER: &[&str] = &["bus_stop_id", "lat", "lon"];

/// Raw file schema.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordKind {
    Cdr,
    Bus,
    Taxi,
    Checkin,
}

impl RecordKind {
    pub const ALL: [RecordKind; 4] = [RecordKind::Cdr, RecordKind::Bus, RecordKind::Taxi, RecordKind::Checkin];

    pub fn header(self) -> &'static [&'static str] {
        match self {
            RecordKind::Cdr => CDR_HEADER,
            RecordKind::Bus => BUS_HEADER,
            RecordKind::Taxi => TAXI_HEADER,
            RecordKind::Checkin => CHECKIN_HEADER,
        }
    }

    pub fn file_name(self) -> &'static str {
        match self {
            RecordKind::Cdr => "cdr.csv",
            RecordKind::Bus => "bus.csv",
            RecordKind::Taxi => "taxi.csv",
            RecordKind::Checkin => "checkins.csv",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CdrRecord {
    pub zone_id: String,
    pub timestamp: NaiveDateTime,
    pub visitors: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BusArrivalRecord {
    pub bus_stop_id: String,
    pub service_id: String,
    pub timestamp: NaiveDateTime,
    pub loading: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaxiTripRecord {
    pub pickup: GeoPoint,
    pub pickup_ts: NaiveDateTime,
    pub dropoff: GeoPoint,
    pub dropoff_ts: NaiveDateTime,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckinRecord {
    pub venue_id: String,
    pub timestamp: NaiveDateTime,
    pub location: GeoPoint,
    pub category: String,
    pub user_id: Option<String>,
}

/// Typed records of one file.
#[derive(Debug, Clone, PartialEq)]
pub enum Records {
    Cdr(Vec<CdrRecord>),
    Bus(Vec<BusArrivalRecord>),
    Taxi(Vec<TaxiTripRecord>),
    Checkin(Vec<CheckinRecord>),
}

impl Records {
    pub fn kind(&self) -> RecordKind {
        match self {
            Records::Cdr(_) => RecordKind::Cdr,
            Records::Bus(_) => RecordKind::Bus,
            Records::Taxi(_) => RecordKind::Taxi,
            Records::Checkin(_) => RecordKind::Checkin,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Records::Cdr(v) => v.len(),
            Records::Bus(v) => v.len(),
            Records::Taxi(v) => v.len(),
            Records::Checkin(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn point(lon: &str, lat: &str) -> Result<GeoPoint, String> {
    let lon = parse_f64(lon, "lon")?;
    let lat = parse_f64(lat, "lat")?;
    GeoPoint::new(lon, lat).map_err(|e| e.to_string())
}

fn parse_cdr(f: &[&str]) -> Result<CdrRecord, String> {
    let zone_id = non_empty(f[0], "zone_id")?.to_string();
    let timestamp = parse_timestamp(f[1])?;
    if timestamp.minute() != 0 || timestamp.second() != 0 || timestamp.nanosecond() != 0 {
        return Err(format!("timestamp `{}` is not hour-aligned", f[1]));
    }
    let visitors = f[2]
        .parse::<u64>()
        .map_err(|_| format!("visitors: `{}` is not a non-negative integer", f[2]))?;
    Ok(CdrRecord { zone_id, timestamp, visitors })
}

fn parse_bus(f: &[&str]) -> Result<BusArrivalRecord, String> {
    let loading = f[3].parse::<u8>().map_err(|_| format!("loading: `{}` is not an integer", f[3]))?;
    if !(1..=3).contains(&loading) {
        return Err(format!("loading {loading} outside 1..=3"));
    }
    Ok(BusArrivalRecord {
        bus_stop_id: non_empty(f[0], "bus_stop_id")?.to_string(),
        service_id: non_empty(f[1], "service_id")?.to_string(),
        timestamp: parse_timestamp(f[2])?,
        loading,
    })
}

fn parse_taxi(f: &[&str]) -> Result<TaxiTripRecord, String> {
    let rec = TaxiTripRecord {
        pickup: point(f[0], f[1])?,
        pickup_ts: parse_timestamp(f[2])?,
        dropoff: point(f[3], f[4])?,
        dropoff_ts: parse_timestamp(f[5])?,
    };
    if rec.dropoff_ts < rec.pickup_ts {
        return Err("dropoff_ts precedes pickup_ts".into());
    }
    Ok(rec)
}

fn parse_checkin(f: &[&str]) -> Result<CheckinRecord, String> {
    Ok(CheckinRecord {
        venue_id: non_empty(f[0], "venue_id")?.to_string(),
        timestamp: parse_timestamp(f[1])?,
        location: point(f[3], f[2])?,
        category: non_empty(f[4], "category")?.to_string(),
        user_id: (!f[5].is_empty()).then(|| f[5].to_string()),
    })
}

/// Parses one raw file. Invalid rows are rejected with their line number;
/// a missing or wrong header is fatal.
pub fn parse_source<R: Read>(kind: RecordKind, reader: R) -> Result<(Records, Vec<Rejection>), CsvError> {
    let header = kind.header();
    Ok(match kind {
        RecordKind::Cdr => {
            let p = read_rows(reader, header, parse_cdr)?;
            (Records::Cdr(p.records), p.rejections)
        }
        RecordKind::Bus => {
            let p = read_rows(reader, header, parse_bus)?;
            (Records::Bus(p.records), p.rejections)
        }
        RecordKind::Taxi => {
            let p = read_rows(reader, header, parse_taxi)?;
            (Records::Taxi(p.records), p.rejections)
        }
        RecordKind::Checkin => {
            let p = read_rows(reader, header, parse_checkin)?;
            (Records::Checkin(p.records), p.rejections)
        }
    })
}

/// Bus stop coordinates keyed by stop id.
pub type StopIndex = BTreeMap<String, GeoPoint>;

/// Parses `stops.csv`; a repeated stop id is rejected on its second line.
pub fn parse_stops<R: Read>(reader: R) -> Result<Parsed<(String, GeoPoint)>, CsvError> {
    let mut seen = std::collections::BTreeSet::new();
    read_rows(reader, STOPS_HEADER, |f| {
        let id = non_empty(f[0], "bus_stop_id")?;
        let p = point(f[2], f[1])?;
        if !seen.insert(id.to_string()) {
            return Err(format!("duplicate bus_stop_id `{id}`"));
        }
        Ok((id.to_string(), p))
    })
}

pub fn stop_index(parsed: &Parsed<(String, GeoPoint)>) -> StopIndex {
    parsed.records.iter().cloned().collect()
}

/// Serializes records back into their CSV schema.
pub fn records_to_rows(records: &Records) -> Vec<Vec<String>> {
    match records {
        Records::Cdr(v) => v
            .iter()
            .map(|r| vec![r.zone_id.clone(), format_timestamp(r.timestamp), r.visitors.to_string()])
            .collect(),
        Records::Bus(v) => v
            .iter()
            .map(|r| {
                vec![
                    r.bus_stop_id.clone(),
                    r.service_id.clone(),
                    format_timestamp(r.timestamp),
                    r.loading.to_string(),
                ]
            })
            .collect(),
        Records::Taxi(v) => v
            .iter()
            .map(|r| {
                vec![
                    fmt_coord(r.pickup.lon),
                    fmt_coord(r.pickup.lat),
                    format_timestamp(r.pickup_ts),
                    fmt_coord(r.dropoff.lon),
                    fmt_coord(r.dropoff.lat),
                    format_timestamp(r.dropoff_ts),
                ]
            })
            .collect(),
        Records::Checkin(v) => v
            .iter()
            .map(|r| {
                vec![
                    r.venue_id.clone(),
                    format_timestamp(r.timestamp),
                    fmt_coord(r.location.lat),
                    fmt_coord(r.location.lon),
                    r.category.clone(),
                    r.user_id.clone().unwrap_or_default(),
                ]
            })
            .collect(),
    }
}

pub(crate) fn fmt_coord(v: f64) -> String {
    format!("{v:.7}")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bus(rows: &str) -> (Records, Vec<Rejection>) {
        let doc = format!("bus_stop_id,service_id,timestamp,loading\n{rows}");
        parse_source(RecordKind::Bus, doc.as_bytes()).unwrap()
    }

    #[test]
    fn bus_row_parses() {
        let (recs, rej) = bus("S1,svc7,2017-06-30T19:02:00,2\n");
        assert!(rej.is_empty());
        match recs {
            Records::Bus(v) => {
                assert_eq!(v.len(), 1);
                assert_eq!(v[0].loading, 2);
                assert_eq!(v[0].bus_stop_id, "S1");
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn bus_loading_out_of_range_rejected() {
        let (recs, rej) = bus("S1,svc7,2017-06-30T19:02:00,4\nS1,svc7,2017-06-30T19:03:00,0\n");
        assert!(recs.is_empty());
        assert_eq!(rej.len(), 2);
        assert_eq!(rej[0].line, 2);
    }

    #[test]
    fn header_only_file() {
        for kind in RecordKind::ALL {
            let doc = format!("{}\n", kind.header().join(","));
            let (recs, rej) = parse_source(kind, doc.as_bytes()).unwrap();
            assert!(recs.is_empty() && rej.is_empty());
            assert_eq!(recs.kind(), kind);
        }
    }

    #[test]
    fn missing_header_is_fatal() {
        assert!(parse_source(RecordKind::Cdr, "".as_bytes()).is_err());
        assert!(parse_source(RecordKind::Cdr, "A,2017-06-30T19:00:00,3\n".as_bytes()).is_err());
    }

    #[test]
    fn cdr_requires_hour_alignment() {
        let doc = "zone_id,timestamp,visitors\nA,2017-06-30T19:00:00,3\nA,2017-06-30T19:30:00,3\nA,2017-06-30T20:00:00,-1\n";
        let (recs, rej) = parse_source(RecordKind::Cdr, doc.as_bytes()).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(rej.len(), 2);
    }

    #[test]
    fn taxi_dropoff_before_pickup_rejected() {
        let doc = "pickup_lon,pickup_lat,pickup_ts,dropoff_lon,dropoff_lat,dropoff_ts\n\
                   -73.9,40.7,2017-06-30T19:00:00,-73.95,40.75,2017-06-30T18:50:00\n\
                   -73.9,40.7,2017-06-30T19:00:00,-73.95,40.75,2017-06-30T19:10:00\n\
                   -73.9,95.0,2017-06-30T19:00:00,-73.95,40.75,2017-06-30T19:10:00\n";
        let (recs, rej) = parse_source(RecordKind::Taxi, doc.as_bytes()).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(rej.iter().map(|r| r.line).collect::<Vec<_>>(), vec![2, 4]);
    }

    #[test]
    fn checkin_optional_user_and_required_category() {
        let doc = "venue_id,timestamp,lat,lon,category,user_id\n\
                   v1,2017-06-30T19:00:00,1.3,103.8,Stadium,\n\
                   v1,2017-06-30T19:00:00,1.3,103.8,,u1\n";
        let (recs, rej) = parse_source(RecordKind::Checkin, doc.as_bytes()).unwrap();
        assert_eq!(rej.len(), 1);
        match recs {
            Records::Checkin(v) => {
                assert_eq!(v[0].user_id, None);
                assert_eq!(v[0].location, GeoPoint { lon: 103.8, lat: 1.3 });
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn stops_parse_and_dedupe() {
        let doc = "bus_stop_id,lat,lon\nS1,1.3,103.8\nS3,x,103.8\nS1,1.4,103.8\nS2,1.31,103.81\n";
        let p = parse_stops(doc.as_bytes()).unwrap();
        assert_eq!(p.records.len(), 2);
        assert_eq!(p.rejections.iter().map(|r| r.line).collect::<Vec<_>>(), vec![3, 4]);
        assert_eq!(stop_index(&p)["S1"].lat, 1.3);
    }

    #[test]
    fn rows_round_trip() {
        let doc = "zone_id,timestamp,visitors\nA,2017-06-30T19:00:00,3\n";
        let (recs, _) = parse_source(RecordKind::Cdr, doc.as_bytes()).unwrap();
        let rows = records_to_rows(&recs);
        assert_eq!(rows, vec![vec!["A".to_string(), "2017-06-30T19:00:00".into(), "3".into()]]);
    }
}
