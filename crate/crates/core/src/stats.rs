//! Granger-causality F tests between occupancy series.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor};
use thiserror::Error;

use crate::csvio;
use crate::ingest::{SeriesMap, Source};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum StatsError {
    #[error("series lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("{n} samples is too few for lag {lag} (need more than {})", 3 * lag + 2)]
    TooShort { n: usize, lag: usize },
    #[error("lag must be at least 1")]
    ZeroLag,
    #[error("degenerate regression: {0}")]
    Degenerate(String),
    #[error("at least two series are required")]
    TooFewSeries,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrangerResult {
    pub x_label: String,
    pub y_label: String,
    pub lag: usize,
    pub f_statistic: f64,
    pub p_value: f64,
    pub n_effective: usize,
    pub rss_restricted: f64,
    pub rss_unrestricted: f64,
}

/// Residual sum of squares of the least-squares fit of `y` on `design`.
/// Fails when the design is numerically rank deficient.
pub fn ols_rss(design: &DMatrix<f64>, y: &DVector<f64>) -> Result<f64, StatsError> {
    let qr = design.clone().qr();
    let r = qr.r();
    let diag: Vec<f64> = (0..r.ncols()).map(|i| r[(i, i)].abs()).collect();
    let scale = diag.iter().copied().fold(0.0, f64::max);
    if !(scale > 0.0) || diag.iter().any(|d| *d <= scale * 1e-10) {
        return Err(StatsError::Degenerate("design matrix is rank deficient".into()));
    }
    let qty = qr.q().transpose() * y;
    let beta = r.solve_upper_triangular(&qty).ok_or_else(|| StatsError::Degenerate("singular R".into()))?;
    let resid = y - design * beta;
    Ok(resid.norm_squared())
}

fn is_constant(v: &[f64]) -> bool {
    v.iter().all(|x| *x == v[0])
}

/// Does the past of `x` improve the prediction of `y` beyond `y`'s own past?
pub fn granger_test(x: &[f64], y: &[f64], lag: usize) -> Result<GrangerResult, StatsError> {
    granger_labeled("x", x, "y", y, lag)
}

pub fn granger_labeled(x_label: &str, x: &[f64], y_label: &str, y: &[f64], lag: usize) -> Result<GrangerResult, StatsError> {
    if lag == 0 {
        return Err(StatsError::ZeroLag);
    }
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len();
    if n <= 3 * lag + 2 {
        return Err(StatsError::TooShort { n, lag });
    }
    if is_constant(x) || is_constant(y) {
        return Err(StatsError::Degenerate("constant series".into()));
    }
    let n_eff = n - lag;
    let target = DVector::from_iterator(n_eff, (lag..n).map(|t| y[t]));
    let restricted = DMatrix::from_fn(n_eff, 1 + lag, |row, col| {
        let t = row + lag;
        if col == 0 { 1.0 } else { y[t - col] }
    });
    let unrestricted = DMatrix::from_fn(n_eff, 1 + 2 * lag, |row, col| {
        let t = row + lag;
        match col {
            0 => 1.0,
            c if c <= lag => y[t - c],
            c => x[t - (c - lag)],
        }
    });
    let rss_r = ols_rss(&restricted, &target)?;
    let rss_u = ols_rss(&unrestricted, &target)?;
    let df2 = n_eff - 2 * lag - 1;
    if !(rss_u > 0.0) {
        return Err(StatsError::Degenerate("unrestricted model fits exactly".into()));
    }
    let f = (((rss_r - rss_u) / lag as f64) / (rss_u / df2 as f64)).max(0.0);
    let dist = FisherSnedecor::new(lag as f64, df2 as f64).map_err(|e| StatsError::Degenerate(e.to_string()))?;
    Ok(GrangerResult {
        x_label: x_label.to_string(),
        y_label: y_label.to_string(),
        lag,
        f_statistic: f,
        p_value: dist.sf(f).clamp(0.0, 1.0),
        n_effective: n_eff,
        rss_restricted: rss_r,
        rss_unrestricted: rss_u,
    })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PairwiseGranger {
    pub results: Vec<GrangerResult>,
    /// (x, y, reason) for pairs that could not be tested.
    pub failures: Vec<(String, String, String)>,
}

/// Every ordered pair (x, y) with x != y.
pub fn pairwise_granger(series: &[(String, Vec<f64>)], lag: usize) -> Result<PairwiseGranger, StatsError> {
    if series.len() < 2 {
        return Err(StatsError::TooFewSeries);
    }
    let mut out = PairwiseGranger::default();
    for (xi, (xl, xv)) in series.iter().enumerate() {
        for (yi, (yl, yv)) in series.iter().enumerate() {
            if xi == yi {
                continue;
            }
            match granger_labeled(xl, xv, yl, yv, lag) {
                Ok(r) => out.results.push(r),
                Err(e) => out.failures.push((xl.clone(), yl.clone(), e.to_string())),
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrangerSummary {
    pub x_label: String,
    pub y_label: String,
    pub mean_p: f64,
    /// Sample standard deviation; 0 for a single result.
    pub std_p: f64,
    pub count: usize,
}

/// Mean and standard deviation of p-values per ordered pair, e.g. across zones.
pub fn summarize(results: &[GrangerResult]) -> Vec<GrangerSummary> {
    let mut by_pair: BTreeMap<(&str, &str), Vec<f64>> = BTreeMap::new();
    for r in results {
        by_pair.entry((&r.x_label, &r.y_label)).or_default().push(r.p_value);
    }
    by_pair
        .into_iter()
        .map(|((x, y), ps)| {
            let n = ps.len() as f64;
            let mean = ps.iter().sum::<f64>() / n;
            let std = if ps.len() > 1 {
                (ps.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            GrangerSummary { x_label: x.to_string(), y_label: y.to_string(), mean_p: mean, std_p: std, count: ps.len() }
        })
        .collect()
}

/// One source's occupancy as a chronological series ordered by (date, bin),
/// summed over the locations accepted by `keep`.
pub fn chronological(series: &SeriesMap, source: Source, keep: impl Fn(&str) -> bool) -> BTreeMap<(NaiveDate, u32), f64> {
    let mut out = BTreeMap::new();
    for (key, s) in series {
        if key.source != source || !keep(&key.location_id) {
            continue;
        }
        for &(date, v) in &s.samples {
            *out.entry((date, key.bin_of_day)).or_insert(0.0) += v;
        }
    }
    out
}

/// Aligns chronological series on the union of their time stamps; a series
/// missing a stamp takes its own mean there.
pub fn align_series(series: Vec<(String, BTreeMap<(NaiveDate, u32), f64>)>) -> Vec<(String, Vec<f64>)> {
    let stamps: BTreeSet<(NaiveDate, u32)> = series.iter().flat_map(|(_, m)| m.keys().copied()).collect();
    series
        .into_iter()
        .map(|(label, m)| {
            let mean = if m.is_empty() { 0.0 } else { m.values().sum::<f64>() / m.len() as f64 };
            (label, stamps.iter().map(|k| m.get(k).copied().unwrap_or(mean)).collect())
        })
        .collect()
}

pub const GRANGER_HEADER: &[&str] = &["x", "y", "lag", "f", "p", "n_effective"];
pub const GRANGER_SUMMARY_HEADER: &[&str] = &["x", "y", "mean_p", "std_p"];

pub fn write_granger<W: Write>(writer: W, results: &[GrangerResult]) -> std::io::Result<()> {
    csvio::write_csv(
        writer,
        GRANGER_HEADER,
        results.iter().map(|r| {
            vec![
                r.x_label.clone(),
                r.y_label.clone(),
                r.lag.to_string(),
                r.f_statistic.to_string(),
                r.p_value.to_string(),
                r.n_effective.to_string(),
            ]
        }),
    )
}

pub fn write_granger_summary<W: Write>(writer: W, rows: &[GrangerSummary]) -> std::io::Result<()> {
    csvio::write_csv(
        writer,
        GRANGER_SUMMARY_HEADER,
        rows.iter()
            .map(|r| vec![r.x_label.clone(), r.y_label.clone(), r.mean_p.to_string(), r.std_p.to_string()]),
    )
}
