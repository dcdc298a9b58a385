//! Multimodal urban event detection.
//!
//! Raw mobility records (telecom visitor counts, bus arrivals, taxi trips and
//! venue check-ins) are aggregated into per-zone occupancy series, scored
//! against per-key baselines, flagged by several outlier detectors, fused
//! across sources and evaluated against ground-truth events.

pub mod annotate;
pub mod csvio;
pub mod detect;
pub mod evaluate;
pub mod fuse;
pub mod geo;
pub mod ingest;
pub mod normalcy;
pub mod pipeline;
pub mod simulate;
pub mod stats;
pub mod time;

pub use geo::{haversine_m, load_zones, GeoPoint, Zone, ZoneSet};
pub use ingest::{OccupancySeries, SeriesKey, SeriesMap, Source};
pub use time::{Binning, Daytype};
