//! Semantic labels for (zone, date, bin) cells from message hashtags and
//! check-in venue categories, ranked by TF-IDF.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use chrono::{NaiveDate, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::csvio::{self, parse_f64, CsvError, Parsed};
use crate::geo::{GeoPoint, ZoneSet};
use crate::ingest::CheckinRecord;
use crate::time::{format_timestamp, parse_timestamp, Binning};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum AnnotateError {
    #[error("k must be positive")]
    InvalidK,
    #[error("no document for cell {0:?}")]
    UnknownCell(Cell),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MessageRecord {
    pub timestamp: NaiveDateTime,
    pub location: GeoPoint,
    pub text: String,
}

pub const MESSAGE_HEADER: &[&str] = &["timestamp", "lat", "lon", "text"];

pub fn read_messages<R: Read>(reader: R) -> Result<Parsed<MessageRecord>, CsvError> {
    csvio::read_rows(reader, MESSAGE_HEADER, |f| {
        let lat = parse_f64(f[1], "lat")?;
        let lon = parse_f64(f[2], "lon")?;
        Ok(MessageRecord {
            timestamp: parse_timestamp(f[0])?,
            location: GeoPoint::new(lon, lat).map_err(|e| e.to_string())?,
            text: f[3].to_string(),
        })
    })
}

pub fn write_messages<W: Write>(writer: W, messages: &[MessageRecord]) -> std::io::Result<()> {
    csvio::write_csv(
        writer,
        MESSAGE_HEADER,
        messages.iter().map(|m| {
            vec![
                format_timestamp(m.timestamp),
                format!("{:.7}", m.location.lat),
                format!("{:.7}", m.location.lon),
                m.text.clone(),
            ]
        }),
    )
}

/// (zone, date, bin of day).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub zone_id: String,
    pub date: NaiveDate,
    pub bin_of_day: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationDoc {
    pub cell: Cell,
    pub token_counts: BTreeMap<String, u64>,
}

/// Lowercases and strips surrounding whitespace and leading '#'.
pub fn normalize_token(raw: &str) -> String {
    raw.trim_start_matches(|c: char| c == '#' || c.is_whitespace()).trim_end().to_lowercase()
}

/// Whitespace-delimited terms starting with '#', trailing punctuation removed.
pub fn hashtags(text: &str) -> Vec<String> {
    text.split_whitespace()
        .filter(|w| w.starts_with('#'))
        .map(|w| normalize_token(w.trim_end_matches(|c: char| !(c.is_alphanumeric() || c == '_'))))
        .filter(|t| !t.is_empty())
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DocCorpus {
    pub docs: BTreeMap<Cell, AnnotationDoc>,
    pub messages_outside_zones: usize,
    pub checkins_outside_zones: usize,
}

impl DocCorpus {
    /// Number of documents containing each term.
    pub fn document_frequency(&self) -> BTreeMap<&str, usize> {
        let mut df = BTreeMap::new();
        for doc in self.docs.values() {
            for term in doc.token_counts.keys() {
                *df.entry(term.as_str()).or_insert(0) += 1;
            }
        }
        df
    }
}

fn cell_of(zones: &ZoneSet, p: GeoPoint, ts: NaiveDateTime, binning: Binning) -> Option<Cell> {
    let zone = zones.point_to_zone(p)?;
    Some(Cell { zone_id: zone.to_string(), date: ts.date(), bin_of_day: binning.bin_of_minute(ts.hour() * 60 + ts.minute()) })
}

/// One document per cell holding at least one token.
pub fn build_docs(messages: &[MessageRecord], checkins: &[CheckinRecord], zones: &ZoneSet, binning: Binning) -> DocCorpus {
    let mut corpus = DocCorpus::default();
    let add = |corpus: &mut DocCorpus, cell: Cell, token: String| {
        *corpus
            .docs
            .entry(cell.clone())
            .or_insert_with(|| AnnotationDoc { cell, token_counts: BTreeMap::new() })
            .token_counts
            .entry(token)
            .or_insert(0) += 1;
    };
    for m in messages {
        let Some(cell) = cell_of(zones, m.location, m.timestamp, binning) else {
            corpus.messages_outside_zones += 1;
            continue;
        };
        for tag in hashtags(&m.text) {
            add(&mut corpus, cell.clone(), tag);
        }
    }
    for c in checkins {
        let Some(cell) = cell_of(zones, c.location, c.timestamp, binning) else {
            corpus.checkins_outside_zones += 1;
            continue;
        };
        let token = normalize_token(&c.category);
        if !token.is_empty() {
            add(&mut corpus, cell, token);
        }
    }
    corpus
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermScore {
    pub term: String,
    pub score: f64,
}

/// `count * ln(N / df)` for every term of the target document, best first,
/// ties broken lexicographically.
pub fn tfidf_top_k(corpus: &DocCorpus, target: &Cell, k: usize) -> Result<Vec<TermScore>, AnnotateError> {
    if k == 0 {
        return Err(AnnotateError::InvalidK);
    }
    let doc = corpus.docs.get(target).ok_or_else(|| AnnotateError::UnknownCell(target.clone()))?;
    let df = corpus.document_frequency();
    let n = corpus.docs.len() as f64;
    let mut scored: Vec<TermScore> = doc
        .token_counts
        .iter()
        .map(|(term, &count)| TermScore { term: term.clone(), score: count as f64 * (n / df[term.as_str()] as f64).ln() })
        .collect();
    scored.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.term.cmp(&b.term)));
    scored.truncate(k);
    Ok(scored)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::Zone;
    use proptest::prelude::*;

    fn zones() -> ZoneSet {
        let sq = |id: &str, x0: f64| {
            Zone::new(id, vec![vec![vec![[x0, 0.0], [x0 + 1.0, 0.0], [x0 + 1.0, 1.0], [x0, 1.0], [x0, 0.0]]]]).unwrap()
        };
        ZoneSet::new(vec![sq("A", 0.0), sq("B", 1.0)]).unwrap()
    }

    fn ts(h: u32) -> NaiveDateTime {
        NaiveDate::from_ymd_opt(2017, 6, 28).unwrap().and_hms_opt(h, 10, 0).unwrap()
    }

    fn msg(x: f64, h: u32, text: &str) -> MessageRecord {
        MessageRecord { timestamp: ts(h), location: GeoPoint::new(x, 0.5).unwrap(), text: text.into() }
    }

    fn checkin(x: f64, h: u32, category: &str) -> CheckinRecord {
        CheckinRecord {
            venue_id: "v".into(),
            timestamp: ts(h),
            location: GeoPoint::new(x, 0.5).unwrap(),
            category: category.into(),
            user_id: None,
        }
    }

    fn cell(zone: &str, h: u32) -> Cell {
        Cell { zone_id: zone.into(), date: ts(h).date(), bin_of_day: h }
    }

    #[test]
    fn hashtag_extraction() {
        assert_eq!(hashtags("great show #BritneySpears"), vec!["britneyspears"]);
        assert_eq!(hashtags("#a, #B! no#tag # "), vec!["a", "b"]);
    }

    #[test]
    fn categories_counted_per_checkin() {
        let c = build_docs(&[], &vec![checkin(0.5, 20, "Stadium"); 3], &zones(), Binning::hourly());
        assert_eq!(c.docs[&cell("A", 20)].token_counts["stadium"], 3);
        assert_eq!(c.docs.len(), 1);
    }

    #[test]
    fn outside_messages_are_counted() {
        let c = build_docs(&[msg(5.0, 20, "#x"), msg(0.5, 20, "no tags")], &[], &zones(), Binning::hourly());
        assert_eq!(c.messages_outside_zones, 1);
        assert!(c.docs.is_empty());
    }

    #[test]
    fn tfidf_examples() {
        // ten documents; "everywhere" in all, "unique" twice in the target only
        let mut messages = vec![msg(0.5, 0, "#unique #unique #everywhere #zeta #alpha")];
        for h in 1..10 {
            messages.push(msg(1.5, h, "#everywhere"));
        }
        let c = build_docs(&messages, &[], &zones(), Binning::hourly());
        assert_eq!(c.docs.len(), 10);
        let top = tfidf_top_k(&c, &cell("A", 0), 10).unwrap();
        assert_eq!(top[0].term, "unique");
        assert!((top[0].score - 2.0 * 10f64.ln()).abs() < 1e-12);
        assert_eq!(top[1].term, "alpha");
        assert_eq!(top[2].term, "zeta");
        assert_eq!(top[3].term, "everywhere");
        assert_eq!(top[3].score, 0.0);
        assert_eq!(tfidf_top_k(&c, &cell("A", 0), 2).unwrap().len(), 2);
        assert_eq!(tfidf_top_k(&c, &cell("A", 0), 0), Err(AnnotateError::InvalidK));
        assert!(matches!(tfidf_top_k(&c, &cell("B", 0), 1), Err(AnnotateError::UnknownCell(_))));
    }

    #[test]
    fn message_round_trip() {
        let m = vec![msg(0.5, 3, "hello, \"world\" #x")];
        let mut buf = Vec::new();
        write_messages(&mut buf, &m).unwrap();
        assert_eq!(read_messages(buf.as_slice()).unwrap().records, m);
    }

    proptest! {
        #[test]
        fn normalization_idempotent(s in "[#A-Za-z0-9_ ]{0,12}") {
            let once = normalize_token(&s);
            prop_assert_eq!(normalize_token(&once), once.clone());
        }

        #[test]
        fn scores_non_negative_and_bounded(texts in prop::collection::vec(("[a-d ]{0,3}", 0u32..4, 0.1f64..1.9), 1..20), k in 1usize..5) {
            let messages: Vec<_> = texts
                .iter()
                .map(|(t, h, x)| msg(*x, *h, &t.split(' ').map(|w| format!("#{w}")).collect::<Vec<_>>().join(" ")))
                .collect();
            let c = build_docs(&messages, &[], &zones(), Binning::hourly());
            for (cell, doc) in &c.docs {
                let top = tfidf_top_k(&c, cell, k).unwrap();
                prop_assert!(top.len() <= k && top.len() <= doc.token_counts.len());
                prop_assert!(top.iter().all(|t| t.score >= 0.0));
            }
        }
    }
}
