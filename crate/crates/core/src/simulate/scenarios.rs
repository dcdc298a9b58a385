//! Named scenario configurations.

use std::collections::BTreeMap;

use chrono::{NaiveDate, NaiveDateTime};

use super::{BaselineConfig, Channel, EventConfig, GridConfig, HolidayConfig, SimConfig};
use crate::evaluate::Scale;

pub const SCENARIO_NAMES: [&str; 5] = ["baseline-quiet", "concert-large", "multi-scale", "holiday-low", "lead-time-split"];

/// Hourly multipliers with morning and evening peaks.
const URBAN_PROFILE: [f64; 24] = [
    0.45, 0.4, 0.4, 0.4, 0.45, 0.55, 0.7, 0.9, 1.0, 0.9, 0.75, 0.75, 0.8, 0.75, 0.7, 0.75, 0.85, 0.95, 1.0, 0.9,
    0.75, 0.65, 0.55, 0.5,
];

fn date(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).expect("valid date")
}

fn at(d: NaiveDate, hour: u32) -> NaiveDateTime {
    d.and_hms_opt(hour, 0, 0).expect("valid hour")
}

fn base(seed: u64) -> SimConfig {
    SimConfig {
        seed,
        // a Monday; 35 days give 25 weekdays per series
        start_date: date(2017, 6, 5),
        days: 35,
        grid: GridConfig { rows: 6, cols: 6, edge_m: 600.0, origin_lat: 1.28, origin_lon: 103.8 },
        stops_per_zone: 2,
        venues_per_zone: 3,
        baseline: BaselineConfig {
            cdr: 40.0,
            bus: 6.0,
            taxi: 10.0,
            checkin: 3.0,
            messages: 4.0,
            profile: URBAN_PROFILE.to_vec(),
            weekend_factor: 0.8,
            zone_heterogeneity: 0.3,
        },
        dispersion: 0.02,
        holidays: Vec::new(),
        events: Vec::new(),
    }
}

fn channel_map<T: Copy>(cdr: T, bus: T, taxi: T, checkin: T) -> BTreeMap<Channel, T> {
    [(Channel::Cdr, cdr), (Channel::Bus, bus), (Channel::Taxi, taxi), (Channel::Checkin, checkin)].into()
}

fn event(id: &str, name: &str, (row, col): (u32, u32), start: NaiveDateTime, scale: Scale) -> EventConfig {
    let (attendance, decay_m) = match scale {
        Scale::Small => (300, 250.0),
        Scale::Medium => (1000, 350.0),
        Scale::Large => (4000, 500.0),
    };
    EventConfig {
        event_id: id.to_string(),
        name: name.to_string(),
        row,
        col,
        start,
        duration_hours: 3,
        attendance,
        scale,
        lead_minutes: channel_map(60, 60, 45, 45),
        shares: channel_map(0.45, 0.25, 0.2, 0.1),
        decay_m,
        hashtag: name.to_lowercase().replace(' ', ""),
        category: "Arts & Entertainment".to_string(),
    }
}

pub fn scenario(name: &str, seed: u64) -> Option<SimConfig> {
    let mut c = base(seed);
    match name {
        "baseline-quiet" => {
            c.dispersion = 0.0;
            c.baseline.checkin = 12.0;
            c.baseline.taxi = 16.0;
            c.baseline.bus = 8.0;
        }
        "concert-large" => {
            c.events.push(event("E1", "Britney Spears Live", (3, 2), at(date(2017, 6, 21), 20), Scale::Large));
        }
        "multi-scale" => {
            c.events = vec![
                event("S1", "Jazz Night", (1, 1), at(date(2017, 6, 7), 19), Scale::Small),
                event("S2", "Poetry Slam", (4, 2), at(date(2017, 6, 13), 20), Scale::Small),
                event("S3", "Food Fair", (2, 4), at(date(2017, 6, 21), 18), Scale::Small),
                event("M1", "Comedy Gala", (3, 3), at(date(2017, 6, 9), 19), Scale::Medium),
                event("M2", "Indie Fest", (1, 5), at(date(2017, 6, 15), 20), Scale::Medium),
                event("M3", "Symphony Evening", (4, 0), at(date(2017, 6, 27), 19), Scale::Medium),
                event("L1", "Stadium Concert", (2, 1), at(date(2017, 6, 20), 20), Scale::Large),
                event("L2", "Football Derby", (4, 4), at(date(2017, 6, 29), 19), Scale::Large),
                event("L3", "Pop Tour", (0, 3), at(date(2017, 7, 5), 20), Scale::Large),
            ];
        }
        "holiday-low" => {
            c.holidays.push(HolidayConfig { date: date(2017, 6, 26), factor: 0.4 });
            c.events.push(event("M1", "Harbour Fest", (2, 3), at(date(2017, 6, 14), 19), Scale::Medium));
        }
        "lead-time-split" => {
            let days = [(6, 6), (6, 12), (6, 16), (6, 22), (6, 28), (7, 4)];
            c.events = days
                .iter()
                .enumerate()
                .map(|(i, &(m, d))| {
                    let mut e =
                        event(&format!("T{}", i + 1), "Arena Night", (2, 2), at(date(2017, m, d), 19), Scale::Medium);
                    e.lead_minutes = channel_map(60, 60, 15, 30);
                    e
                })
                .collect();
        }
        _ => return None,
    }
    Some(c)
}

/// Every named scenario at one seed.
pub fn scenario_library(seed: u64) -> BTreeMap<&'static str, SimConfig> {
    SCENARIO_NAMES.iter().map(|&n| (n, scenario(n, seed).expect("known scenario"))).collect()
}
