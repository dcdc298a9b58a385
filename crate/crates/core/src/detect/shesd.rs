//! Seasonal hybrid ESD: per-phase median deseasonalization followed by a
//! robust generalized ESD on the residual.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::esd::{generalized_esd, median_in_place, EsdOutcome};
use super::{AnomalyDecision, DetectError, Detector, Direction};
use crate::ingest::Source;
use crate::normalcy::ScoredObservation;
use crate::time::{Binning, Daytype};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EsdConfig {
    pub alpha: f64,
    pub max_anoms_fraction: f64,
    /// Bins per season. `None` uses one week of the day type's bins, with the
    /// phase taken from the calendar.
    pub period: Option<usize>,
}

impl Default for EsdConfig {
    fn default() -> Self {
        EsdConfig { alpha: 0.05, max_anoms_fraction: 0.02, period: None }
    }
}

impl EsdConfig {
    pub fn validate(&self) -> Result<(), DetectError> {
        let mut bad = Vec::new();
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            bad.push(format!("alpha {} outside (0, 1)", self.alpha));
        }
        if !(self.max_anoms_fraction > 0.0 && self.max_anoms_fraction <= 0.49) {
            bad.push(format!("max_anoms_fraction {} outside (0, 0.49]", self.max_anoms_fraction));
        }
        if matches!(self.period, Some(p) if p < 2) {
            bad.push("period must be at least 2".into());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(DetectError::InvalidConfig(bad.join("; ")))
        }
    }

    /// `ceil(fraction * n)`, at least 1.
    pub fn max_anoms(&self, n: usize) -> usize {
        // the epsilon keeps products like 0.02 * 300 from rounding up to 7
        (((self.max_anoms_fraction * n as f64) - 1e-9).ceil() as usize).max(1)
    }
}

/// Residual after removing per-phase medians and the global median.
pub fn seasonal_residual(values: &[f64], phases: &[usize], period: usize) -> Vec<f64> {
    let mut by_phase: Vec<Vec<f64>> = vec![Vec::new(); period];
    for (&v, &ph) in values.iter().zip(phases) {
        by_phase[ph].push(v);
    }
    let seasonal: Vec<f64> =
        by_phase.iter_mut().map(|v| if v.is_empty() { 0.0 } else { median_in_place(v) }).collect();
    let mut all = values.to_vec();
    let global = median_in_place(&mut all);
    values.iter().zip(phases).map(|(&v, &ph)| v - seasonal[ph] - global).collect()
}

/// Seasonal hybrid ESD over a series with explicit phases in `0..period`.
pub fn shesd_indices(
    values: &[f64],
    phases: &[usize],
    period: usize,
    config: &EsdConfig,
) -> Result<(EsdOutcome, Vec<f64>), DetectError> {
    config.validate()?;
    let n = values.len();
    if n < 2 * period {
        return Err(DetectError::TooShort { n, required: 2 * period });
    }
    let residual = seasonal_residual(values, phases, period);
    let outcome = generalized_esd(&residual, config.max_anoms(n), config.alpha, true)?;
    Ok((outcome, residual))
}

/// Seasonal hybrid ESD with phase = position modulo `period`.
pub fn shesd(values: &[f64], period: usize, config: &EsdConfig) -> Result<EsdOutcome, DetectError> {
    let phases: Vec<usize> = (0..values.len()).map(|i| i % period).collect();
    shesd_indices(values, &phases, period, config).map(|r| r.0)
}

/// A series group that could not be tested.
#[derive(Debug, Clone, PartialEq)]
pub struct SkippedGroup {
    pub source: Source,
    pub location_id: String,
    pub daytype: Daytype,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ShesdDetection {
    pub decisions: Vec<AnomalyDecision>,
    pub skipped: Vec<SkippedGroup>,
    pub truncated_groups: usize,
}

/// Runs S-H-ESD on the z-score series of each (source, location, daytype),
/// ordered by date then bin of day.
pub fn detect_shesd(
    observations: &[ScoredObservation],
    binning: impl Fn(Source) -> Binning,
    config: &EsdConfig,
) -> Result<ShesdDetection, DetectError> {
    config.validate()?;
    let mut groups: BTreeMap<(Source, &str, Daytype), Vec<(NaiveDate, u32, &ScoredObservation)>> =
        BTreeMap::new();
    for o in observations {
        groups
            .entry((o.key.source, o.key.location_id.as_str(), o.key.daytype))
            .or_default()
            .push((o.date, o.key.bin_of_day, o));
    }

    let mut out = ShesdDetection::default();
    for ((source, location, daytype), mut rows) in groups {
        rows.sort_by_key(|r| (r.0, r.1));
        let values: Vec<f64> = rows.iter().map(|r| r.2.z).collect();
        let (period, phases) = match config.period {
            Some(p) => (p, (0..rows.len()).map(|i| i % p).collect::<Vec<_>>()),
            None => {
                let bpd = binning(source).bins_per_day() as usize;
                let phases = rows
                    .iter()
                    .map(|(d, bin, _)| Daytype::ordinal_in_week(*d) * bpd + *bin as usize)
                    .collect();
                (daytype.days_per_week() * bpd, phases)
            }
        };
        let (outcome, residual) = match shesd_indices(&values, &phases, period, config) {
            Ok(r) => r,
            Err(e) => {
                out.skipped.push(SkippedGroup {
                    source,
                    location_id: location.to_string(),
                    daytype,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        if outcome.truncated {
            out.truncated_groups += 1;
        }
        let mut flagged = vec![false; rows.len()];
        for &i in &outcome.anomalies {
            flagged[i] = true;
        }
        for (i, (date, _, o)) in rows.iter().enumerate() {
            out.decisions.push(AnomalyDecision {
                key: o.key.clone(),
                date: *date,
                score: o.z,
                is_anomaly: flagged[i],
                detector: Detector::Shesd,
                direction: if residual[i] > 0.0 { Direction::High } else { Direction::Low },
            });
        }
    }
    super::sort_decisions(&mut out.decisions);
    Ok(out)
}
