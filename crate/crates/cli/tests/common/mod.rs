#![allow(dead_code)]

use std::path::Path;

use chrono::NaiveDate;
use eventscope::simulate::scenario;

/// A 3x3 city over three weeks with one large concert in the middle zone.
pub fn write_sim_config(path: &Path) {
    let mut c = scenario("concert-large", 3).unwrap();
    c.grid.rows = 3;
    c.grid.cols = 3;
    c.days = 21;
    c.events[0].row = 1;
    c.events[0].col = 1;
    c.events[0].start = NaiveDate::from_ymd_opt(2017, 6, 14).unwrap().and_hms_opt(20, 0, 0).unwrap();
    std::fs::write(path, serde_yaml::to_string(&c).unwrap()).unwrap();
}

pub fn cli(args: &[&str]) -> i32 {
    eventscope_cli::run(std::iter::once("eventscope").chain(args.iter().copied()))
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Simulated small city in `dir`.
pub fn small_city(dir: &Path) {
    let yaml = dir.join("sim.yaml");
    write_sim_config(&yaml);
    assert_eq!(cli(&["simulate", "--sim-config", s(&yaml), "--out", s(dir)]), 0);
}
