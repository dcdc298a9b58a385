//! Calendar helpers: day types, time binning and timestamp parsing.

use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate, NaiveDateTime, Timelike, Weekday};
use serde::{Deserialize, Serialize};

pub const MINUTES_PER_DAY: u32 = 1440;

/// Weekday/weekend partition used to fit separate baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Daytype {
    Weekday,
    Weekend,
}

impl Daytype {
    pub fn of(date: NaiveDate) -> Self {
        match date.weekday() {
            Weekday::Sat | Weekday::Sun => Daytype::Weekend,
            _ => Daytype::Weekday,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Daytype::Weekday => "WEEKDAY",
            Daytype::Weekend => "WEEKEND",
        }
    }

    /// Number of calendar days of this type in one week.
    pub fn days_per_week(self) -> usize {
        match self {
            Daytype::Weekday => 5,
            Daytype::Weekend => 2,
        }
    }

    /// Position of `date` within the week restricted to this day type
    /// (Mon..Fri -> 0..4, Sat/Sun -> 0/1).
    pub fn ordinal_in_week(date: NaiveDate) -> usize {
        match date.weekday() {
            Weekday::Sat => 0,
            Weekday::Sun => 1,
            wd => wd.num_days_from_monday() as usize,
        }
    }
}

impl fmt::Display for Daytype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Daytype {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "WEEKDAY" => Ok(Daytype::Weekday),
            "WEEKEND" => Ok(Daytype::Weekend),
            other => Err(format!("unknown daytype `{other}`")),
        }
    }
}

/// Start hours (inclusive) of the five multi-hour bins: night, AM peak,
/// off-peak, PM peak, late evening.
const COARSE_STARTS: [u32; 5] = [0, 7, 11, 18, 21];
pub const COARSE_LABELS: [&str; 5] = ["00-06", "AM-Peak", "Off-Peak", "PM-Peak", "21-23"];

/// How a day is cut into bins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Binning {
    /// Uniform bins of the given width in minutes; width divides 1440.
    Minutes(u32),
    /// The five named multi-hour bins.
    Coarse,
}

impl Binning {
    pub fn hourly() -> Self {
        Binning::Minutes(60)
    }

    pub fn is_valid(self) -> bool {
        match self {
            Binning::Minutes(w) => w > 0 && MINUTES_PER_DAY.is_multiple_of(w),
            Binning::Coarse => true,
        }
    }

    pub fn bins_per_day(self) -> u32 {
        match self {
            Binning::Minutes(w) => MINUTES_PER_DAY / w,
            Binning::Coarse => COARSE_STARTS.len() as u32,
        }
    }

    /// Bin index containing the given minute of day.
    pub fn bin_of_minute(self, minute: u32) -> u32 {
        match self {
            Binning::Minutes(w) => minute / w,
            Binning::Coarse => coarse_bin_of_hour(minute / 60),
        }
    }

    pub fn bin_of(self, ts: NaiveDateTime) -> u32 {
        self.bin_of_minute(ts.hour() * 60 + ts.minute())
    }

    /// Half-open minute-of-day window `[start, end)` covered by `bin`.
    pub fn window(self, bin: u32) -> (u32, u32) {
        match self {
            Binning::Minutes(w) => (bin * w, (bin + 1) * w),
            Binning::Coarse => {
                let i = bin as usize;
                let start = COARSE_STARTS[i] * 60;
                let end = COARSE_STARTS.get(i + 1).map_or(MINUTES_PER_DAY, |h| h * 60);
                (start, end)
            }
        }
    }

    pub fn label(self) -> String {
        match self {
            Binning::Minutes(w) => format!("{w}min"),
            Binning::Coarse => "coarse".to_string(),
        }
    }
}

impl fmt::Display for Binning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for Binning {
    type Err = String;

    /// Accepts the forms produced by [`Binning::label`].
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let b = if s.eq_ignore_ascii_case("coarse") {
            Binning::Coarse
        } else {
            let w = s.strip_suffix("min").and_then(|w| w.parse().ok()).ok_or_else(|| format!("bad binning `{s}`"))?;
            Binning::Minutes(w)
        };
        if b.is_valid() {
            Ok(b)
        } else {
            Err(format!("bin width must divide a day: `{s}`"))
        }
    }
}

pub fn coarse_bin_of_hour(hour: u32) -> u32 {
    COARSE_STARTS.iter().rposition(|&s| hour >= s).unwrap_or(0) as u32
}

/// Parses a local ISO-8601 timestamp without offset. Accepts `T` or a space
/// as the date/time separator and optional seconds.
pub fn parse_timestamp(s: &str) -> Result<NaiveDateTime, String> {
    let s = s.trim();
    for fmt in [
        "%Y-%m-%dT%H:%M:%S%.f",
        "%Y-%m-%d %H:%M:%S%.f",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
    ] {
        if let Ok(ts) = NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(ts);
        }
    }
    Err(format!("invalid timestamp `{s}`"))
}

pub fn format_timestamp(ts: NaiveDateTime) -> String {
    ts.format("%Y-%m-%dT%H:%M:%S").to_string()
}

pub fn parse_date(s: &str) -> Result<NaiveDate, String> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d").map_err(|_| format!("invalid date `{s}`"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binning_labels_parse_back() {
        for b in [Binning::Minutes(15), Binning::hourly(), Binning::Coarse] {
            assert_eq!(b.label().parse::<Binning>(), Ok(b));
        }
        assert!("7min".parse::<Binning>().is_err());
        assert!("min".parse::<Binning>().is_err());
    }

    #[test]
    fn coarse_bins_cover_the_day() {
        let hours: Vec<u32> = (0..24).map(coarse_bin_of_hour).collect();
        let counts: Vec<usize> = (0..5).map(|b| hours.iter().filter(|&&h| h == b).count()).collect();
        assert_eq!(counts, vec![7, 4, 7, 3, 3]);
        assert_eq!(Binning::Coarse.window(3), (18 * 60, 21 * 60));
        assert_eq!(Binning::Coarse.window(4), (21 * 60, 1440));
    }

    #[test]
    fn minute_binning() {
        let b = Binning::Minutes(15);
        assert_eq!(b.bins_per_day(), 96);
        let ts = parse_timestamp("2017-06-30T19:02:00").unwrap();
        assert_eq!(b.bin_of(ts), 76);
        assert_eq!(b.window(76), (1140, 1155));
        assert!(!Binning::Minutes(7).is_valid());
    }

    #[test]
    fn daytype_from_date() {
        let sat = NaiveDate::from_ymd_opt(2017, 7, 1).unwrap();
        assert_eq!(Daytype::of(sat), Daytype::Weekend);
        assert_eq!(Daytype::of(sat.pred_opt().unwrap()), Daytype::Weekday);
        assert_eq!(Daytype::ordinal_in_week(sat), 0);
    }

    #[test]
    fn timestamp_formats() {
        assert!(parse_timestamp("2017-06-30 19:02").is_ok());
        assert!(parse_timestamp("2017-06-30T19:02:00.5").is_ok());
        assert!(parse_timestamp("30/06/2017").is_err());
    }
}
