//! Seeded synthetic city: a grid of square zones with baseline activity in
//! every channel and planted events whose attendees arrive ahead of the start
//! time and scatter around the venue.

mod scenarios;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use chrono::{Duration, NaiveDate, NaiveDateTime, Timelike};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Gamma, Poisson};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::annotate::{write_messages, MessageRecord};
use crate::csvio;
use crate::evaluate::{write_events, GroundTruthEvent, Scale};
use crate::geo::{GeoPoint, Zone, ZoneSet, EARTH_RADIUS_M};
use crate::ingest::{
    records_to_rows, BusArrivalRecord, CdrRecord, CheckinRecord, RecordKind, Records, TaxiTripRecord, STOPS_HEADER,
};

pub use scenarios::{scenario, scenario_library, SCENARIO_NAMES};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// The four record channels an attendee can show up in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Cdr,
    Bus,
    Taxi,
    Checkin,
}

impl Channel {
    pub const ALL: [Channel; 4] = [Channel::Cdr, Channel::Bus, Channel::Taxi, Channel::Checkin];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub rows: u32,
    pub cols: u32,
    pub edge_m: f64,
    /// South-west corner.
    pub origin_lat: f64,
    pub origin_lon: f64,
}

/// Peak-hour means; the diurnal profile scales them hour by hour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    /// Visitors per zone-hour.
    pub cdr: f64,
    /// Bus arrivals per stop-hour.
    pub bus: f64,
    /// Taxi pickups per zone-hour.
    pub taxi: f64,
    /// Check-ins per zone-hour.
    pub checkin: f64,
    /// Geotagged messages per zone-hour.
    pub messages: f64,
    /// 24 hourly multipliers.
    pub profile: Vec<f64>,
    pub weekend_factor: f64,
    /// Zone multipliers are drawn from `1 ± heterogeneity`.
    pub zone_heterogeneity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HolidayConfig {
    pub date: NaiveDate,
    /// Multiplier on every channel's baseline for the whole day.
    pub factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventConfig {
    pub event_id: String,
    pub name: String,
    pub row: u32,
    pub col: u32,
    /// Must fall on the hour.
    pub start: NaiveDateTime,
    pub duration_hours: u32,
    pub attendance: u64,
    pub scale: Scale,
    /// Minutes before the start over which each channel's attendees arrive.
    pub lead_minutes: BTreeMap<Channel, u32>,
    /// Relative share of attendees per channel.
    pub shares: BTreeMap<Channel, f64>,
    /// Mean distance of an attendee record from the venue.
    pub decay_m: f64,
    pub hashtag: String,
    pub category: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub seed: u64,
    pub start_date: NaiveDate,
    pub days: u32,
    pub grid: GridConfig,
    pub stops_per_zone: u32,
    pub venues_per_zone: u32,
    pub baseline: BaselineConfig,
    /// Gamma-mixing variance on Poisson means; 0 gives pure Poisson counts.
    pub dispersion: f64,
    pub holidays: Vec<HolidayConfig>,
    pub events: Vec<EventConfig>,
}

impl SimConfig {
    pub fn end_date(&self) -> NaiveDate {
        self.start_date + Duration::days(self.days as i64 - 1)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let mut bad = Vec::new();
        let mut check = |ok: bool, msg: String| {
            if !ok {
                bad.push(msg);
            }
        };
        let nonneg = |v: f64| v.is_finite() && v >= 0.0;
        check(self.days >= 1, "days must be at least 1".into());
        check(self.grid.rows >= 1 && self.grid.cols >= 1, "grid needs at least one row and column".into());
        check(self.grid.rows <= 99 && self.grid.cols <= 99, "grid is limited to 99x99 zones".into());
        check(self.grid.edge_m.is_finite() && self.grid.edge_m > 0.0, "grid.edge_m must be positive".into());
        check(
            GeoPoint::new(self.grid.origin_lon, self.grid.origin_lat).is_ok(),
            "grid origin is not a valid coordinate".into(),
        );
        check(self.stops_per_zone >= 1, "stops_per_zone must be at least 1".into());
        check(self.venues_per_zone >= 1, "venues_per_zone must be at least 1".into());
        let b = &self.baseline;
        for (name, v) in [
            ("cdr", b.cdr),
            ("bus", b.bus),
            ("taxi", b.taxi),
            ("checkin", b.checkin),
            ("messages", b.messages),
            ("weekend_factor", b.weekend_factor),
        ] {
            check(nonneg(v), format!("baseline.{name} must be a non-negative number"));
        }
        check((0.0..1.0).contains(&b.zone_heterogeneity), "baseline.zone_heterogeneity must be in [0, 1)".into());
        check(b.profile.len() == 24, format!("baseline.profile has {} entries, expected 24", b.profile.len()));
        check(b.profile.iter().all(|v| nonneg(*v)), "baseline.profile entries must be non-negative".into());
        check(nonneg(self.dispersion), "dispersion must be non-negative".into());
        for h in &self.holidays {
            check(nonneg(h.factor), format!("holiday {} factor must be non-negative", h.date));
        }
        let mut ids = std::collections::BTreeSet::new();
        for e in &self.events {
            let id = &e.event_id;
            check(!id.is_empty() && ids.insert(id.clone()), format!("event id `{id}` is empty or repeated"));
            check(e.row < self.grid.rows && e.col < self.grid.cols, format!("event {id} venue is outside the grid"));
            check(
                e.start.minute() == 0 && e.start.second() == 0 && e.start.nanosecond() == 0,
                format!("event {id} does not start on the hour"),
            );
            check(
                e.start.date() >= self.start_date && e.start.date() <= self.end_date(),
                format!("event {id} starts outside the simulated period"),
            );
            check(e.decay_m.is_finite() && e.decay_m > 0.0, format!("event {id} decay_m must be positive"));
            check(e.shares.values().all(|v| nonneg(*v)), format!("event {id} shares must be non-negative"));
            check(
                e.attendance == 0 || e.shares.values().sum::<f64>() > 0.0,
                format!("event {id} has attendance but no channel shares"),
            );
            check(
                e.lead_minutes.values().all(|l| *l <= 24 * 60),
                format!("event {id} lead_minutes exceeds one day"),
            );
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(SimError::Invalid(bad))
        }
    }

    /// SHA-256 of the config's JSON form.
    pub fn sha256(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex(&Sha256::digest(bytes))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Random stream keyed on the seed and a label, independent of generation order.
fn stream(seed: u64, parts: &[&str]) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    ChaCha8Rng::from_seed(h.finalize().into())
}

fn poisson(rng: &mut ChaCha8Rng, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("positive mean").sample(rng) as u64
}

/// Splits `total` proportionally to `weights` with largest-remainder rounding;
/// ties go to the earlier entry.
pub fn largest_remainder(total: u64, weights: &[f64]) -> Vec<u64> {
    let sum: f64 = weights.iter().sum();
    if total == 0 || sum <= 0.0 {
        return vec![0; weights.len()];
    }
    let quotas: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut out: Vec<u64> = quotas.iter().map(|q| q.floor() as u64).collect();
    let assigned: u64 = out.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| (quotas[b] - quotas[b].floor()).total_cmp(&(quotas[a] - quotas[a].floor())).then(a.cmp(&b)));
    for &i in order.iter().take((total - assigned) as usize) {
        out[i] += 1;
    }
    out
}

/// Planar approximation around the grid origin.
#[derive(Debug, Clone, Copy)]
struct Frame {
    lat0: f64,
    lon0: f64,
    m_per_deg_lat: f64,
    m_per_deg_lon: f64,
    width_m: f64,
    height_m: f64,
}

impl Frame {
    fn new(g: &GridConfig) -> Self {
        let m_per_deg_lat = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;
        let height_m = g.rows as f64 * g.edge_m;
        let mid_lat = g.origin_lat + height_m / 2.0 / m_per_deg_lat;
        Frame {
            lat0: g.origin_lat,
            lon0: g.origin_lon,
            m_per_deg_lat,
            m_per_deg_lon: m_per_deg_lat * mid_lat.to_radians().cos(),
            width_m: g.cols as f64 * g.edge_m,
            height_m,
        }
    }

    fn point(&self, x_m: f64, y_m: f64) -> GeoPoint {
        GeoPoint { lon: self.lon0 + x_m / self.m_per_deg_lon, lat: self.lat0 + y_m / self.m_per_deg_lat }
    }

    fn inside(&self, x_m: f64, y_m: f64) -> bool {
        (0.0..self.width_m).contains(&x_m) && (0.0..self.height_m).contains(&y_m)
    }
}

pub fn zone_id(row: u32, col: u32) -> String {
    format!("Z{row:02}{col:02}")
}

/// Square zones, row-major from the south-west corner.
pub fn grid_zones(g: &GridConfig) -> ZoneSet {
    let f = Frame::new(g);
    let mut zones = Vec::new();
    for r in 0..g.rows {
        for c in 0..g.cols {
            let (x0, y0) = (c as f64 * g.edge_m, r as f64 * g.edge_m);
            let corner = |dx: f64, dy: f64| {
                let p = f.point(x0 + dx, y0 + dy);
                [p.lon, p.lat]
            };
            let e = g.edge_m;
            let ring = vec![corner(0.0, 0.0), corner(e, 0.0), corner(e, e), corner(0.0, e), corner(0.0, 0.0)];
            zones.push(Zone::new(zone_id(r, c), vec![vec![ring]]).expect("square ring is valid"));
        }
    }
    ZoneSet::new(zones).expect("grid ids are distinct")
}

const CATEGORIES: [&str; 8] = [
    "Food",
    "Nightlife Spot",
    "Shop & Service",
    "Arts & Entertainment",
    "Outdoors & Recreation",
    "College & University",
    "Travel & Transport",
    "Professional & Other Places",
];
const CHATTER: [&str; 10] =
    ["food", "traffic", "weather", "coffee", "work", "sg", "weekend", "mrt", "shopping", "gym"];

#[derive(Debug, Clone)]
struct Venue {
    id: String,
    x: f64,
    y: f64,
    category: &'static str,
}

#[derive(Debug, Clone)]
struct Stop {
    id: String,
    x: f64,
    y: f64,
}

/// Extra records each event contributed, per channel.
pub type Attribution = BTreeMap<String, BTreeMap<Channel, u64>>;

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub config: SimConfig,
    pub zones: ZoneSet,
    pub stops: Vec<(String, GeoPoint)>,
    pub cdr: Vec<CdrRecord>,
    pub bus: Vec<BusArrivalRecord>,
    pub taxi: Vec<TaxiTripRecord>,
    pub checkins: Vec<CheckinRecord>,
    pub messages: Vec<MessageRecord>,
    pub events: Vec<GroundTruthEvent>,
    pub attribution: Attribution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub config_sha256: String,
    pub files: Vec<String>,
}

pub const ZONES_FILE: &str = "zones.geojson";
pub const STOPS_FILE: &str = "stops.csv";
pub const MESSAGES_FILE: &str = "messages.csv";
pub const EVENTS_FILE: &str = "events.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

struct EventPlan<'a> {
    cfg: &'a EventConfig,
    x: f64,
    y: f64,
}

fn arrival_time(rng: &mut ChaCha8Rng, start: NaiveDateTime, lead_min: u32) -> NaiveDateTime {
    if lead_min == 0 {
        return start;
    }
    // density rises linearly towards start - lead: offset = lead * sqrt(U)
    let u: f64 = 1.0 - rng.random::<f64>();
    let secs = ((lead_min as f64 * 60.0) * u.sqrt()).ceil().max(1.0) as i64;
    start - Duration::seconds(secs)
}

fn scatter(rng: &mut ChaCha8Rng, f: &Frame, x: f64, y: f64, decay_m: f64) -> (f64, f64) {
    let exp = Exp::new(1.0 / decay_m).expect("positive decay");
    for _ in 0..10_000 {
        let d: f64 = exp.sample(rng);
        let theta = rng.random::<f64>() * std::f64::consts::TAU;
        let (px, py) = (x + d * theta.cos(), y + d * theta.sin());
        if f.inside(px, py) {
            return (px, py);
        }
    }
    (x, y)
}

fn uniform_in_zone(rng: &mut ChaCha8Rng, g: &GridConfig, r: u32, c: u32) -> (f64, f64) {
    let e = g.edge_m;
    (c as f64 * e + rng.random::<f64>() * e, r as f64 * e + rng.random::<f64>() * e)
}

fn ts_in_hour(rng: &mut ChaCha8Rng, date: NaiveDate, hour: u32) -> NaiveDateTime {
    date.and_hms_opt(hour, 0, 0).expect("valid hour") + Duration::seconds(rng.random_range(0..3600))
}

pub fn generate(config: &SimConfig) -> Result<SimOutput, SimError> {
    config.validate()?;
    let g = &config.grid;
    let f = Frame::new(g);
    let zones = grid_zones(g);
    let seed = config.seed;
    let b = &config.baseline;

    let cells: Vec<(u32, u32)> = (0..g.rows).flat_map(|r| (0..g.cols).map(move |c| (r, c))).collect();
    let zone_factor: BTreeMap<(u32, u32), f64> = cells
        .iter()
        .map(|&(r, c)| {
            let mut rng = stream(seed, &["zone-factor", &zone_id(r, c)]);
            ((r, c), 1.0 + b.zone_heterogeneity * (2.0 * rng.random::<f64>() - 1.0))
        })
        .collect();
    let mut stops: Vec<Stop> = Vec::new();
    let mut venues: BTreeMap<(u32, u32), Vec<Venue>> = BTreeMap::new();
    for &(r, c) in &cells {
        let zid = zone_id(r, c);
        let mut rng = stream(seed, &["stops", &zid]);
        for k in 0..config.stops_per_zone {
            let (x, y) = uniform_in_zone(&mut rng, g, r, c);
            stops.push(Stop { id: format!("S{r:02}{c:02}{k:02}"), x, y });
        }
        let mut rng = stream(seed, &["venues", &zid]);
        let vs = (0..config.venues_per_zone)
            .map(|k| {
                let (x, y) = uniform_in_zone(&mut rng, g, r, c);
                Venue { id: format!("V{r:02}{c:02}{k:02}"), x, y, category: CATEGORIES[rng.random_range(0..CATEGORIES.len())] }
            })
            .collect();
        venues.insert((r, c), vs);
    }
    let stops_by_zone: BTreeMap<(u32, u32), Vec<&Stop>> = cells
        .iter()
        .map(|&(r, c)| {
            let prefix = format!("S{r:02}{c:02}");
            ((r, c), stops.iter().filter(|s| s.id.starts_with(&prefix)).collect())
        })
        .collect();

    let plans: Vec<EventPlan> = config
        .events
        .iter()
        .map(|e| EventPlan { cfg: e, x: (e.col as f64 + 0.5) * g.edge_m, y: (e.row as f64 + 0.5) * g.edge_m })
        .collect();
    let holiday: BTreeMap<NaiveDate, f64> = config.holidays.iter().map(|h| (h.date, h.factor)).collect();
    let dates: Vec<NaiveDate> = config.start_date.iter_days().take(config.days as usize).collect();
    let day_factor = |d: NaiveDate| {
        let w = if crate::time::Daytype::of(d) == crate::time::Daytype::Weekend { b.weekend_factor } else { 1.0 };
        w * holiday.get(&d).copied().unwrap_or(1.0)
    };
    let gamma = (config.dispersion > 0.0)
        .then(|| Gamma::new(1.0 / config.dispersion, config.dispersion).expect("positive dispersion"));
    let noisy = |rng: &mut ChaCha8Rng, mean: f64| match &gamma {
        Some(gm) if mean > 0.0 => mean * gm.sample(rng),
        _ => mean,
    };

    // event records first: CDR extras are merged into the hourly baseline counts
    let mut attribution = Attribution::new();
    let mut cdr_extra: BTreeMap<(String, NaiveDateTime), u64> = BTreeMap::new();
    let mut bus = Vec::new();
    let mut taxi = Vec::new();
    let mut checkins = Vec::new();
    let mut messages = Vec::new();
    for (idx, p) in plans.iter().enumerate() {
        let e = p.cfg;
        let mut rng = stream(seed, &["event", &idx.to_string(), &e.event_id]);
        let weights: Vec<f64> = Channel::ALL.iter().map(|ch| e.shares.get(ch).copied().unwrap_or(0.0)).collect();
        let units = largest_remainder(e.attendance, &weights);
        let att = attribution.entry(e.event_id.clone()).or_default();
        for (ch, &n) in Channel::ALL.iter().zip(&units) {
            let lead = e.lead_minutes.get(ch).copied().unwrap_or(0);
            att.insert(*ch, n);
            for i in 0..n {
                let t = arrival_time(&mut rng, e.start, lead);
                let (x, y) = scatter(&mut rng, &f, p.x, p.y, e.decay_m);
                match ch {
                    Channel::Cdr => {
                        let (r, c) = ((y / g.edge_m) as u32, (x / g.edge_m) as u32);
                        let hour = t.date().and_hms_opt(t.hour(), 0, 0).expect("valid hour");
                        *cdr_extra.entry((zone_id(r.min(g.rows - 1), c.min(g.cols - 1)), hour)).or_default() += 1;
                    }
                    Channel::Bus => {
                        let stop = stops
                            .iter()
                            .min_by(|a, b| {
                                let da = (a.x - x).powi(2) + (a.y - y).powi(2);
                                let db = (b.x - x).powi(2) + (b.y - y).powi(2);
                                da.total_cmp(&db)
                            })
                            .expect("at least one stop");
                        bus.push(BusArrivalRecord {
                            bus_stop_id: stop.id.clone(),
                            service_id: format!("EV{idx}"),
                            timestamp: t,
                            loading: 3,
                        });
                    }
                    Channel::Taxi => {
                        let (ox, oy) = (rng.random::<f64>() * f.width_m, rng.random::<f64>() * f.height_m);
                        let dur = Duration::seconds(rng.random_range(300..1800));
                        taxi.push(TaxiTripRecord {
                            pickup: f.point(ox, oy),
                            pickup_ts: t - dur,
                            dropoff: f.point(x, y),
                            dropoff_ts: t,
                        });
                    }
                    Channel::Checkin => checkins.push(CheckinRecord {
                        venue_id: format!("E{idx:03}"),
                        timestamp: t,
                        location: f.point(x, y),
                        category: e.category.clone(),
                        user_id: Some(format!("e{idx:03}u{i:05}")),
                    }),
                }
            }
        }
        let n_msgs = e.attendance.div_ceil(20);
        let window_s = (e.duration_hours as i64 + 1) * 3600;
        for _ in 0..n_msgs {
            let t = e.start - Duration::hours(1) + Duration::seconds(rng.random_range(0..window_s.max(1)));
            let (x, y) = scatter(&mut rng, &f, p.x, p.y, e.decay_m);
            let chatter = CHATTER[rng.random_range(0..CHATTER.len())];
            messages.push(MessageRecord {
                timestamp: t,
                location: f.point(x, y),
                text: format!("at {} #{} #{}", e.name, e.hashtag, chatter),
            });
        }
    }

    let boost_radius_sq = |e: &EventConfig| (2.0 * e.decay_m).powi(2);
    let mut cdr = Vec::new();
    for &(r, c) in &cells {
        let zid = zone_id(r, c);
        let zf = zone_factor[&(r, c)];
        for &date in &dates {
            let df = day_factor(date) * zf;
            let ds = date.to_string();
            let mut rng = stream(seed, &["cdr", &zid, &ds]);
            for h in 0..24 {
                let lam = noisy(&mut rng, b.cdr * b.profile[h as usize] * df);
                let hour = date.and_hms_opt(h, 0, 0).expect("valid hour");
                let extra = cdr_extra.get(&(zid.clone(), hour)).copied().unwrap_or(0);
                cdr.push(CdrRecord { zone_id: zid.clone(), timestamp: hour, visitors: poisson(&mut rng, lam) + extra });
            }

            for stop in &stops_by_zone[&(r, c)] {
                let mut rng = stream(seed, &["bus", &stop.id, &ds]);
                for h in 0..24 {
                    let shape = b.profile[h as usize];
                    let lam = noisy(&mut rng, b.bus * shape * df);
                    let p3 = 0.1 + 0.15 * shape.min(1.0);
                    for _ in 0..poisson(&mut rng, lam) {
                        let t = ts_in_hour(&mut rng, date, h);
                        let u: f64 = rng.random();
                        let mut loading: u8 = if u < p3 { 3 } else if u < p3 + 0.35 { 2 } else { 1 };
                        let near_event = plans.iter().any(|p| {
                            let lead = p.cfg.lead_minutes.get(&Channel::Bus).copied().unwrap_or(0) as i64;
                            t >= p.cfg.start - Duration::minutes(lead)
                                && t < p.cfg.start
                                && (stop.x - p.x).powi(2) + (stop.y - p.y).powi(2) <= boost_radius_sq(p.cfg)
                        });
                        if near_event {
                            loading = (loading + 1).min(3);
                        }
                        bus.push(BusArrivalRecord {
                            bus_stop_id: stop.id.clone(),
                            service_id: format!("{}", 10 + rng.random_range(0..8) * 7),
                            timestamp: t,
                            loading,
                        });
                    }
                }
            }

            let mut rng = stream(seed, &["taxi", &zid, &ds]);
            for h in 0..24 {
                let lam = noisy(&mut rng, b.taxi * b.profile[h as usize] * df);
                for _ in 0..poisson(&mut rng, lam) {
                    let t = ts_in_hour(&mut rng, date, h);
                    let (ox, oy) = uniform_in_zone(&mut rng, g, r, c);
                    let (dx, dy) = (rng.random::<f64>() * f.width_m, rng.random::<f64>() * f.height_m);
                    taxi.push(TaxiTripRecord {
                        pickup: f.point(ox, oy),
                        pickup_ts: t,
                        dropoff: f.point(dx, dy),
                        dropoff_ts: t + Duration::seconds(rng.random_range(300..1800)),
                    });
                }
            }

            let mut rng = stream(seed, &["checkin", &zid, &ds]);
            let vs = &venues[&(r, c)];
            for h in 0..24 {
                let lam = noisy(&mut rng, b.checkin * b.profile[h as usize] * df);
                for i in 0..poisson(&mut rng, lam) {
                    let v = &vs[rng.random_range(0..vs.len())];
                    checkins.push(CheckinRecord {
                        venue_id: v.id.clone(),
                        timestamp: ts_in_hour(&mut rng, date, h),
                        location: f.point(v.x, v.y),
                        category: v.category.to_string(),
                        user_id: Some(format!("u{zid}{}{h:02}{i:03}", date.format("%Y%m%d"))),
                    });
                }
            }

            let mut rng = stream(seed, &["messages", &zid, &ds]);
            for h in 0..24 {
                let lam = noisy(&mut rng, b.messages * b.profile[h as usize] * df);
                for _ in 0..poisson(&mut rng, lam) {
                    let (x, y) = uniform_in_zone(&mut rng, g, r, c);
                    let a = CHATTER[rng.random_range(0..CHATTER.len())];
                    messages.push(MessageRecord {
                        timestamp: ts_in_hour(&mut rng, date, h),
                        location: f.point(x, y),
                        text: format!("out and about #{a}"),
                    });
                }
            }
        }
    }

    cdr.sort_by(|a, b| (a.timestamp, &a.zone_id).cmp(&(b.timestamp, &b.zone_id)));
    bus.sort_by(|a, b| (a.timestamp, &a.bus_stop_id).cmp(&(b.timestamp, &b.bus_stop_id)));
    taxi.sort_by_key(|t| t.pickup_ts);
    checkins.sort_by(|a, b| (a.timestamp, &a.venue_id).cmp(&(b.timestamp, &b.venue_id)));
    messages.sort_by_key(|m| m.timestamp);

    let events = plans
        .iter()
        .map(|p| GroundTruthEvent {
            event_id: p.cfg.event_id.clone(),
            name: p.cfg.name.clone(),
            venue: f.point(p.x, p.y),
            start: p.cfg.start,
            end: p.cfg.start + Duration::hours(p.cfg.duration_hours as i64),
            scale: p.cfg.scale,
        })
        .collect();

    Ok(SimOutput {
        config: config.clone(),
        zones,
        stops: stops.iter().map(|s| (s.id.clone(), f.point(s.x, s.y))).collect(),
        cdr,
        bus,
        taxi,
        checkins,
        messages,
        events,
        attribution,
    })
}

impl SimOutput {
    /// Writes every file into `dir` (created if needed) and the manifest.
    pub fn write_to(&self, dir: &Path) -> Result<Manifest, SimError> {
        fs::create_dir_all(dir)?;
        let mut files = Vec::new();
        let mut put = |name: &str, bytes: Vec<u8>| -> std::io::Result<()> {
            fs::write(dir.join(name), bytes)?;
            files.push(name.to_string());
            Ok(())
        };
        let mut geo = serde_json::to_vec_pretty(&self.zones.to_geojson()).expect("geojson serializes");
        geo.push(b'\n');
        put(ZONES_FILE, geo)?;

        let mut buf = Vec::new();
        csvio::write_csv(
            &mut buf,
            STOPS_HEADER,
            self.stops.iter().map(|(id, p)| vec![id.clone(), format!("{:.7}", p.lat), format!("{:.7}", p.lon)]),
        )?;
        put(STOPS_FILE, buf)?;

        for records in [
            Records::Cdr(self.cdr.clone()),
            Records::Bus(self.bus.clone()),
            Records::Taxi(self.taxi.clone()),
            Records::Checkin(self.checkins.clone()),
        ] {
            let kind: RecordKind = records.kind();
            let mut buf = Vec::new();
            csvio::write_csv(&mut buf, kind.header(), records_to_rows(&records))?;
            put(kind.file_name(), buf)?;
        }

        let mut buf = Vec::new();
        write_messages(&mut buf, &self.messages)?;
        put(MESSAGES_FILE, buf)?;
        let mut buf = Vec::new();
        write_events(&mut buf, &self.events)?;
        put(EVENTS_FILE, buf)?;

        let manifest = Manifest { seed: self.config.seed, config_sha256: self.config.sha256(), files };
        let mut m = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
        m.push(b'\n');
        fs::write(dir.join(MANIFEST_FILE), m)?;
        Ok(manifest)
    }
}
