//! Fuzz harness bodies, shared by the libFuzzer targets and the corpus replay
//! test. Every parser must return without panicking; where a writer exists the
//! accepted records must survive a write and re-read unchanged.

use std::str::FromStr;

use eventscope::csvio::{write_csv, Parsed};
use eventscope::detect::{read_decisions, write_decisions, Detector};
use eventscope::evaluate::{read_curves, read_events, write_events};
use eventscope::fuse::{read_fused, write_fused, FusionMethod};
use eventscope::ingest::{parse_source, parse_stops, records_to_rows, RecordKind};
use eventscope::normalcy::{read_models, write_models, ModelMap};
use eventscope::pipeline::{read_series, write_series, PipelineConfig};
use eventscope::simulate::SimConfig;
use eventscope::time::{parse_date, parse_timestamp};
use eventscope::{load_zones, Binning, SeriesMap, Source};

fn debug_eq<T: std::fmt::Debug>(a: &T, b: &T, what: &str) {
    // Debug equality also treats NaN as equal to itself
    assert_eq!(format!("{a:?}"), format!("{b:?}"), "{what} changed on round trip");
}

fn rejections_in_range<T>(p: &Parsed<T>, data: &[u8]) {
    let lines = (0..data.len())
        .filter(|&i| data[i] == b'\n' || (data[i] == b'\r' && data.get(i + 1) != Some(&b'\n')))
        .count() as u64
        + 1;
    for r in &p.rejections {
        assert!(r.line >= 2 && r.line <= lines.max(2), "rejection line {} outside 2..={lines}", r.line);
    }
}

pub fn zones(data: &[u8]) {
    let Ok(z) = load_zones(data) else { return };
    let doc = serde_json::to_vec(&z.to_geojson()).unwrap();
    let again = load_zones(&doc).expect("own GeoJSON reloads");
    assert_eq!(again.to_geojson(), z.to_geojson());
    for zone in z.iter() {
        let c = z.centroid(&zone.zone_id).expect("centroid");
        assert!(c.lat.is_finite() && c.lon.is_finite());
    }
}

fn records(kind: RecordKind, data: &[u8]) {
    let Ok((recs, rejections)) = parse_source(kind, data) else { return };
    rejections_in_range(&Parsed { records: Vec::<()>::new(), rejections }, data);
    // coordinates are written to seven decimals, so the written form is the
    // fixed point rather than the parsed records
    let write = |recs| {
        let mut buf = Vec::new();
        write_csv(&mut buf, kind.header(), records_to_rows(recs)).unwrap();
        buf
    };
    let first = write(&recs);
    let (again, rejected) = parse_source(kind, first.as_slice()).expect("own output parses");
    assert!(rejected.is_empty(), "own output rejected: {rejected:?}");
    assert_eq!(write(&again), first, "written records are not a fixed point");
}

pub fn records_cdr(data: &[u8]) {
    records(RecordKind::Cdr, data)
}

pub fn records_bus(data: &[u8]) {
    records(RecordKind::Bus, data)
}

pub fn records_taxi(data: &[u8]) {
    records(RecordKind::Taxi, data)
}

pub fn records_checkin(data: &[u8]) {
    records(RecordKind::Checkin, data)
}

pub fn stops(data: &[u8]) {
    let Ok(p) = parse_stops(data) else { return };
    rejections_in_range(&p, data);
    let ids: std::collections::BTreeSet<&str> = p.records.iter().map(|r| r.0.as_str()).collect();
    assert_eq!(ids.len(), p.records.len(), "duplicate stop ids survived");
}

pub fn events(data: &[u8]) {
    let Ok(p) = read_events(data) else { return };
    rejections_in_range(&p, data);
    let mut buf = Vec::new();
    write_events(&mut buf, &p.records).unwrap();
    let again = read_events(buf.as_slice()).expect("own output parses");
    assert!(again.rejections.is_empty(), "own output rejected: {:?}", again.rejections);
    // coordinates are written to seven decimals
    assert_eq!(again.records.len(), p.records.len());
    for (a, b) in again.records.iter().zip(&p.records) {
        assert_eq!((&a.event_id, a.start, a.end, a.scale), (&b.event_id, b.start, b.end, b.scale));
        assert!((a.venue.lat - b.venue.lat).abs() <= 1e-7 && (a.venue.lon - b.venue.lon).abs() <= 1e-7);
    }
}

pub fn messages(data: &[u8]) {
    let Ok(p) = eventscope::annotate::read_messages(data) else { return };
    rejections_in_range(&p, data);
    let mut buf = Vec::new();
    eventscope::annotate::write_messages(&mut buf, &p.records).unwrap();
    let again = eventscope::annotate::read_messages(buf.as_slice()).expect("own output parses");
    assert_eq!(again.records.len(), p.records.len());
    for (a, b) in again.records.iter().zip(&p.records) {
        assert_eq!((a.timestamp, &a.text), (b.timestamp, &b.text));
    }
    for m in &p.records {
        for tag in eventscope::annotate::hashtags(&m.text) {
            assert_eq!(eventscope::annotate::normalize_token(&tag), tag);
        }
    }
}

pub fn pipeline_config(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(c) = PipelineConfig::from_yaml(text) else { return };
    let again = PipelineConfig::from_yaml(&serde_yaml::to_string(&c).unwrap()).expect("own YAML reloads");
    debug_eq(&again, &c, "config");
    if c.validate().is_ok() {
        let _ = c.radii();
        let _ = c.policies();
    }
}

pub fn sim_config(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(c) = serde_yaml::from_str::<SimConfig>(text) else { return };
    let _ = c.validate();
    let again: SimConfig = serde_yaml::from_str(&serde_yaml::to_string(&c).unwrap()).expect("own YAML reloads");
    debug_eq(&again, &c, "simulator config");
}

pub fn models(data: &[u8]) {
    let Ok(p) = read_models(data) else { return };
    rejections_in_range(&p, data);
    let map: ModelMap = p.records.into_iter().map(|m| (m.key.clone(), m)).collect();
    let mut buf = Vec::new();
    write_models(&mut buf, &map).unwrap();
    let again = read_models(buf.as_slice()).expect("own output parses");
    assert!(again.rejections.is_empty(), "own output rejected: {:?}", again.rejections);
    let back: ModelMap = again.records.into_iter().map(|m| (m.key.clone(), m)).collect();
    debug_eq(&back, &map, "models");
}

pub fn decisions(data: &[u8]) {
    let Ok(p) = read_decisions(data) else { return };
    rejections_in_range(&p, data);
    let mut buf = Vec::new();
    write_decisions(&mut buf, &p.records).unwrap();
    let again = read_decisions(buf.as_slice()).expect("own output parses");
    assert!(again.rejections.is_empty(), "own output rejected: {:?}", again.rejections);
    debug_eq(&again.records, &p.records, "decisions");
}

pub fn fused(data: &[u8]) {
    let Ok(p) = read_fused(data) else { return };
    rejections_in_range(&p, data);
    let mut buf = Vec::new();
    write_fused(&mut buf, &p.records).unwrap();
    let again = read_fused(buf.as_slice()).expect("own output parses");
    assert!(again.rejections.is_empty(), "own output rejected: {:?}", again.rejections);
    debug_eq(&again.records, &p.records, "fused decisions");
}

pub fn series(data: &[u8]) {
    let Ok(p) = read_series(data) else { return };
    rejections_in_range(&p, data);
    let map: SeriesMap = p.records.into_iter().map(|s| (s.key.clone(), s)).collect();
    let mut buf = Vec::new();
    write_series(&mut buf, &map).unwrap();
    let again = read_series(buf.as_slice()).expect("own output parses");
    assert!(again.rejections.is_empty(), "own output rejected: {:?}", again.rejections);
    let back: SeriesMap = again.records.into_iter().map(|s| (s.key.clone(), s)).collect();
    debug_eq(&back, &map, "series");
}

pub fn curves(data: &[u8]) {
    if let Ok(p) = read_curves(data) {
        rejections_in_range(&p, data);
    }
}

fn parses_back<T: FromStr + ToString + PartialEq + std::fmt::Debug>(s: &str) {
    if let Ok(v) = s.parse::<T>() {
        let text = v.to_string();
        assert_eq!(text.parse::<T>().ok(), Some(v), "`{s}` -> `{text}`");
    }
}

pub fn scalars(data: &[u8]) {
    let Ok(s) = std::str::from_utf8(data) else { return };
    if let Ok(ts) = parse_timestamp(s) {
        assert_eq!(parse_timestamp(&eventscope::time::format_timestamp(ts)), Ok(ts));
    }
    if let Ok(d) = parse_date(s) {
        assert_eq!(parse_date(&d.to_string()), Ok(d));
    }
    if let Ok(b) = s.parse::<Binning>() {
        assert!(b.is_valid() && b.bins_per_day() > 0);
    }
    parses_back::<Binning>(s);
    parses_back::<Source>(s);
    parses_back::<Detector>(s);
    parses_back::<FusionMethod>(s);
}
