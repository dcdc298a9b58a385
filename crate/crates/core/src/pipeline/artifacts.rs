use std::collections::BTreeMap;
use std::io::{Read, Write};

use crate::annotate::Cell;
use crate::csvio::{self, parse_f64, CsvError, Parsed};
use crate::normalcy::NormalityResult;
use crate::time::{parse_date, Binning, Daytype};
use crate::{OccupancySeries, SeriesKey, SeriesMap};

pub const SERIES_HEADER: &[&str] = &["source", "location_id", "bin_of_day", "daytype", "binning", "date", "value"];

/// One row per sample, in key then date order.
pub fn write_series<W: Write>(writer: W, series: &SeriesMap) -> std::io::Result<()> {
    csvio::write_csv(
        writer,
        SERIES_HEADER,
        series.values().flat_map(|s| {
            s.samples.iter().map(move |(date, v)| {
                vec![
                    s.key.source.to_string(),
                    s.key.location_id.clone(),
                    s.key.bin_of_day.to_string(),
                    s.key.daytype.to_string(),
                    s.binning.label(),
                    date.to_string(),
                    v.to_string(),
                ]
            })
        }),
    )
}

/// Rebuilds a series map. Rows whose daytype disagrees with their date, that
/// repeat a (key, date) pair, or whose binning disagrees with earlier rows of
/// the key are rejected.
pub fn read_series<R: Read>(reader: R) -> Result<Parsed<OccupancySeries>, CsvError> {
    let mut map: BTreeMap<SeriesKey, OccupancySeries> = BTreeMap::new();
    let parsed = csvio::read_rows(reader, SERIES_HEADER, |f| {
        let key = SeriesKey {
            source: f[0].parse()?,
            location_id: csvio::non_empty(f[1], "location_id")?.to_string(),
            bin_of_day: f[2].trim().parse().map_err(|_| format!("bad bin_of_day `{}`", f[2]))?,
            daytype: f[3].parse()?,
        };
        let binning: Binning = f[4].parse()?;
        if key.bin_of_day >= binning.bins_per_day() {
            return Err(format!("bin_of_day {} outside {}", key.bin_of_day, binning.label()));
        }
        let date = parse_date(f[5])?;
        if Daytype::of(date) != key.daytype {
            return Err(format!("{date} is not a {}", key.daytype));
        }
        let value = parse_f64(f[6], "value")?;
        let s = map.entry(key.clone()).or_insert_with(|| OccupancySeries { key, binning, samples: Vec::new() });
        if s.binning != binning {
            return Err(format!("binning {binning} conflicts with {}", s.binning));
        }
        if s.samples.iter().any(|x| x.0 == date) {
            return Err(format!("duplicate sample for {date}"));
        }
        s.samples.push((date, value));
        Ok(())
    })?;
    for s in map.values_mut() {
        s.samples.sort_by_key(|x| x.0);
    }
    Ok(Parsed { records: map.into_values().collect(), rejections: parsed.rejections })
}

pub const NORMALITY_HEADER: &[&str] = &["source", "location_id", "bin_of_day", "n", "w", "p_value", "error"];

pub fn write_normality<W: Write>(writer: W, results: &[NormalityResult]) -> std::io::Result<()> {
    csvio::write_csv(
        writer,
        NORMALITY_HEADER,
        results.iter().map(|r| {
            let (w, p, e) = match &r.result {
                Ok(sw) => (sw.w.to_string(), sw.p_value.to_string(), String::new()),
                Err(e) => (String::new(), String::new(), e.to_string()),
            };
            vec![r.key.source.to_string(), r.key.location_id.clone(), r.key.bin_of_day.to_string(), r.n.to_string(), w, p, e]
        }),
    )
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AnnotationRow {
    pub cell: Cell,
    /// 1-based.
    pub rank: usize,
    pub term: String,
    pub score: f64,
}

pub const ANNOTATION_HEADER: &[&str] = &["zone_id", "date", "bin_of_day", "rank", "term", "score"];

pub fn write_annotations<W: Write>(writer: W, rows: &[AnnotationRow]) -> std::io::Result<()> {
    csvio::write_csv(
        writer,
        ANNOTATION_HEADER,
        rows.iter().map(|r| {
            vec![
                r.cell.zone_id.clone(),
                r.cell.date.to_string(),
                r.cell.bin_of_day.to_string(),
                r.rank.to_string(),
                r.term.clone(),
                r.score.to_string(),
            ]
        }),
    )
}
