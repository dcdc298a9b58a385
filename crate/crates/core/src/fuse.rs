//! Cross-source fusion on a common (zone, date, bin) grid.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::csvio::{self, parse_f64, CsvError, Parsed};
use crate::geo::ZoneSet;
use crate::ingest::{Source, StopIndex};
use crate::normalcy::ScoredObservation;
use crate::time::{parse_date, Binning};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum FuseError {
    #[error("invalid fusion policy: {0}")]
    InvalidPolicy(String),
    #[error("bus observations present but no bus stop coordinates were supplied")]
    MissingStops,
    #[error("bin widths cannot be harmonized: {0}")]
    IncompatibleBins(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum FusionMethod {
    Weighted,
    Mean,
    Majority,
}

impl FusionMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            FusionMethod::Weighted => "WEIGHTED",
            FusionMethod::Mean => "MEAN",
            FusionMethod::Majority => "MAJORITY",
        }
    }
}

impl std::fmt::Display for FusionMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FusionMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "WEIGHTED" => Ok(FusionMethod::Weighted),
            "MEAN" => Ok(FusionMethod::Mean),
            "MAJORITY" => Ok(FusionMethod::Majority),
            _ => Err(format!("unknown fusion method `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionPolicy {
    pub method: FusionMethod,
    /// Enabled sources, sorted and distinct.
    pub sources: Vec<Source>,
    /// Per-source weight; only read by WEIGHTED and MEAN.
    pub weights: BTreeMap<Source, f64>,
    /// Threshold on normalized scores, for the fused score and for each
    /// source's individual vote.
    pub score_threshold: f64,
    pub k: usize,
    pub n_required: usize,
}

fn sorted_sources(sources: impl IntoIterator<Item = Source>) -> Vec<Source> {
    sources.into_iter().collect::<BTreeSet<_>>().into_iter().collect()
}

impl FusionPolicy {
    pub fn weighted(weights: BTreeMap<Source, f64>, score_threshold: f64) -> Self {
        let sources = sorted_sources(weights.keys().copied());
        let n = sources.len();
        FusionPolicy { method: FusionMethod::Weighted, sources, weights, score_threshold, k: 1, n_required: n }
    }

    pub fn mean(sources: impl IntoIterator<Item = Source>, score_threshold: f64) -> Self {
        let sources = sorted_sources(sources);
        let n = sources.len();
        let w = 1.0 / n.max(1) as f64;
        let weights = sources.iter().map(|&s| (s, w)).collect();
        FusionPolicy { method: FusionMethod::Mean, sources, weights, score_threshold, k: 1, n_required: n }
    }

    pub fn majority(sources: impl IntoIterator<Item = Source>, k: usize, score_threshold: f64) -> Self {
        let sources = sorted_sources(sources);
        let n = sources.len();
        FusionPolicy { method: FusionMethod::Majority, sources, weights: BTreeMap::new(), score_threshold, k, n_required: n }
    }

    /// The same policy restricted to `enabled`; MEAN weights are recomputed
    /// and N follows the surviving source count.
    pub fn restricted_to(&self, enabled: &BTreeSet<Source>) -> Self {
        let sources: Vec<Source> = self.sources.iter().copied().filter(|s| enabled.contains(s)).collect();
        match self.method {
            FusionMethod::Mean => FusionPolicy::mean(sources, self.score_threshold),
            FusionMethod::Majority => FusionPolicy::majority(sources, self.k, self.score_threshold),
            FusionMethod::Weighted => {
                let mut weights: BTreeMap<Source, f64> =
                    sources.iter().map(|s| (*s, self.weights.get(s).copied().unwrap_or(0.0))).collect();
                let total: f64 = weights.values().sum();
                if total > 0.0 {
                    weights.values_mut().for_each(|w| *w /= total);
                }
                FusionPolicy::weighted(weights, self.score_threshold)
            }
        }
    }

    pub fn validate(&self) -> Result<(), FuseError> {
        let mut bad = Vec::new();
        if self.sources.is_empty() {
            bad.push("no sources enabled".to_string());
        }
        if !(0.0..=1.0).contains(&self.score_threshold) {
            bad.push(format!("S = {} outside [0, 1]", self.score_threshold));
        }
        if self.n_required != self.sources.len() {
            bad.push(format!("N = {} but {} sources enabled", self.n_required, self.sources.len()));
        }
        match self.method {
            FusionMethod::Majority => {
                if self.k < 1 || self.k > self.n_required {
                    bad.push(format!("k = {} outside 1..={}", self.k, self.n_required));
                }
            }
            FusionMethod::Weighted | FusionMethod::Mean => {
                for s in &self.sources {
                    match self.weights.get(s) {
                        Some(w) if w.is_finite() && *w >= 0.0 => {}
                        Some(w) => bad.push(format!("weight {w} for {s} is negative or non-finite")),
                        None => bad.push(format!("no weight for {s}")),
                    }
                }
                let total: f64 = self.sources.iter().filter_map(|s| self.weights.get(s)).sum();
                if (total - 1.0).abs() > 1e-9 {
                    bad.push(format!("weights sum to {total}, not 1"));
                }
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(FuseError::InvalidPolicy(bad.join("; ")))
        }
    }
}

/// Assigns every bus stop to the zone containing it; stops outside all zones
/// are left out.
pub fn stop_zones(stops: &StopIndex, zones: &ZoneSet) -> BTreeMap<String, String> {
    stops
        .iter()
        .filter_map(|(id, p)| zones.point_to_zone(*p).map(|z| (id.clone(), z.to_string())))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedCell {
    pub zone_id: String,
    pub date: NaiveDate,
    pub bin_of_day: u32,
    /// Max-pooled normalized score per source observed in the cell.
    pub scores: BTreeMap<Source, f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignedTable {
    pub binning: Binning,
    /// Sorted by (zone, date, bin).
    pub cells: Vec<AlignedCell>,
    /// Bus observations dropped because their stop lies outside every zone.
    pub unmapped_stop_observations: usize,
}

/// Chooses the coarsest binning among `binnings`, checking that every finer
/// bin nests inside it.
pub fn coarsest_binning(binnings: &[Binning]) -> Result<Binning, FuseError> {
    let Some(first) = binnings.first() else {
        return Ok(Binning::hourly());
    };
    let target = if binnings.contains(&Binning::Coarse) {
        Binning::Coarse
    } else {
        *binnings
            .iter()
            .max_by_key(|b| match b {
                Binning::Minutes(w) => *w,
                Binning::Coarse => u32::MAX,
            })
            .unwrap_or(first)
    };
    for b in binnings {
        let nests = match (b, target) {
            (Binning::Coarse, Binning::Coarse) => true,
            (Binning::Minutes(w), Binning::Coarse) => 60 % w == 0,
            (Binning::Minutes(w), Binning::Minutes(t)) => t % w == 0,
            (Binning::Coarse, Binning::Minutes(_)) => false,
        };
        if !nests {
            return Err(FuseError::IncompatibleBins(format!("{} does not nest in {}", b.label(), target.label())));
        }
    }
    Ok(target)
}

/// Pools normalized scores of the enabled sources onto zones and the coarsest
/// participating bin. Bus stops are pooled into their containing zone.
pub fn align_to_zones(
    observations: &[ScoredObservation],
    binning: impl Fn(Source) -> Binning,
    enabled: &[Source],
    stop_zone: &BTreeMap<String, String>,
) -> Result<AlignedTable, FuseError> {
    let enabled: BTreeSet<Source> = enabled.iter().copied().collect();
    let present: BTreeSet<Source> =
        observations.iter().map(|o| o.key.source).filter(|s| enabled.contains(s)).collect();
    if present.contains(&Source::Bus) && stop_zone.is_empty() {
        return Err(FuseError::MissingStops);
    }
    let target = coarsest_binning(&present.iter().map(|&s| binning(s)).collect::<Vec<_>>())?;

    let mut cells: BTreeMap<(&str, NaiveDate, u32), BTreeMap<Source, f64>> = BTreeMap::new();
    let mut unmapped = 0;
    for o in observations {
        let source = o.key.source;
        if !enabled.contains(&source) {
            continue;
        }
        let zone = if source == Source::Bus {
            match stop_zone.get(&o.key.location_id) {
                Some(z) => z.as_str(),
                None => {
                    unmapped += 1;
                    continue;
                }
            }
        } else {
            o.key.location_id.as_str()
        };
        let (start, _) = binning(source).window(o.key.bin_of_day);
        let bin = target.bin_of_minute(start);
        let slot = cells.entry((zone, o.date, bin)).or_default().entry(source).or_insert(f64::NEG_INFINITY);
        *slot = slot.max(o.normalized_z);
    }
    Ok(AlignedTable {
        binning: target,
        cells: cells
            .into_iter()
            .map(|((zone, date, bin), scores)| AlignedCell { zone_id: zone.to_string(), date, bin_of_day: bin, scores })
            .collect(),
        unmapped_stop_observations: unmapped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedDecision {
    pub method: FusionMethod,
    pub zone_id: String,
    pub date: NaiveDate,
    pub bin_of_day: u32,
    /// Absent for MAJORITY.
    pub fused_score: Option<f64>,
    /// Enabled sources present in the cell whose own score reaches S.
    pub votes: usize,
    pub is_anomaly: bool,
    pub contributing_sources: Vec<Source>,
}

fn votes(cell: &AlignedCell, policy: &FusionPolicy) -> usize {
    policy
        .sources
        .iter()
        .filter(|s| cell.scores.get(s).is_some_and(|v| *v >= policy.score_threshold))
        .count()
}

fn present_sources(cell: &AlignedCell, policy: &FusionPolicy) -> Vec<Source> {
    policy.sources.iter().copied().filter(|s| cell.scores.contains_key(s)).collect()
}

/// Weighted linear combination, renormalized over the sources present in each
/// cell. Cells whose present weight is zero are skipped. MEAN policies take
/// this path with equal weights.
pub fn fuse_weighted(table: &AlignedTable, policy: &FusionPolicy) -> Result<Vec<FusedDecision>, FuseError> {
    policy.validate()?;
    if policy.method == FusionMethod::Majority {
        return Err(FuseError::InvalidPolicy("majority policy passed to score fusion".into()));
    }
    let mut out = Vec::new();
    for cell in &table.cells {
        let present = present_sources(cell, policy);
        let wsum: f64 = present.iter().map(|s| policy.weights[s]).sum();
        if !(wsum > 0.0) {
            continue;
        }
        let fused = present.iter().map(|s| policy.weights[s] * cell.scores[s]).sum::<f64>() / wsum;
        out.push(FusedDecision {
            method: policy.method,
            zone_id: cell.zone_id.clone(),
            date: cell.date,
            bin_of_day: cell.bin_of_day,
            fused_score: Some(fused),
            votes: votes(cell, policy),
            is_anomaly: fused >= policy.score_threshold,
            contributing_sources: present,
        });
    }
    Ok(out)
}

/// k-of-N voting on per-source `score >= S` decisions; a missing source is a
/// no-vote. Cells without any enabled source are skipped.
pub fn fuse_majority(table: &AlignedTable, policy: &FusionPolicy) -> Result<Vec<FusedDecision>, FuseError> {
    policy.validate()?;
    let mut out = Vec::new();
    for cell in &table.cells {
        let present = present_sources(cell, policy);
        if present.is_empty() {
            continue;
        }
        let v = votes(cell, policy);
        out.push(FusedDecision {
            method: FusionMethod::Majority,
            zone_id: cell.zone_id.clone(),
            date: cell.date,
            bin_of_day: cell.bin_of_day,
            fused_score: None,
            votes: v,
            is_anomaly: v >= policy.k,
            contributing_sources: present,
        });
    }
    Ok(out)
}

pub fn fuse(table: &AlignedTable, policy: &FusionPolicy) -> Result<Vec<FusedDecision>, FuseError> {
    match policy.method {
        FusionMethod::Majority => fuse_majority(table, policy),
        FusionMethod::Weighted | FusionMethod::Mean => fuse_weighted(table, policy),
    }
}

pub const FUSED_HEADER: &[&str] = &["method", "zone_id", "date", "bin_of_day", "fused_score", "votes", "is_anomaly"];

pub fn write_fused<W: Write>(writer: W, decisions: &[FusedDecision]) -> std::io::Result<()> {
    csvio::write_csv(
        writer,
        FUSED_HEADER,
        decisions.iter().map(|d| {
            vec![
                d.method.to_string(),
                d.zone_id.clone(),
                d.date.to_string(),
                d.bin_of_day.to_string(),
                d.fused_score.map(|s| s.to_string()).unwrap_or_default(),
                d.votes.to_string(),
                d.is_anomaly.to_string(),
            ]
        }),
    )
}

/// Reads a fused dump. Contributing sources are not part of the format and
/// come back empty.
pub fn read_fused<R: Read>(reader: R) -> Result<Parsed<FusedDecision>, CsvError> {
    csvio::read_rows(reader, FUSED_HEADER, |f| {
        let method: FusionMethod = f[0].parse()?;
        let fused_score = if f[4].is_empty() { None } else { Some(parse_f64(f[4], "fused_score")?) };
        if fused_score.is_none() != (method == FusionMethod::Majority) {
            return Err(format!("fused_score presence does not match method {method}"));
        }
        Ok(FusedDecision {
            method,
            zone_id: csvio::non_empty(f[1], "zone_id")?.to_string(),
            date: parse_date(f[2])?,
            bin_of_day: f[3].parse().map_err(|_| format!("bad bin_of_day `{}`", f[3]))?,
            fused_score,
            votes: f[5].parse().map_err(|_| format!("bad votes `{}`", f[5]))?,
            is_anomaly: match f[6] {
                "true" => true,
                "false" => false,
                other => return Err(format!("bad is_anomaly `{other}`")),
            },
            contributing_sources: Vec::new(),
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::GeoPoint;
    use crate::ingest::SeriesKey;
    use crate::time::Daytype;
    use proptest::prelude::*;

    const A: Source = Source::Cdr;
    const B: Source = Source::Bus;
    const C: Source = Source::Checkin;

    fn date() -> NaiveDate {
        NaiveDate::from_ymd_opt(2017, 6, 28).unwrap()
    }

    fn cell(scores: &[(Source, f64)]) -> AlignedCell {
        AlignedCell { zone_id: "Z".into(), date: date(), bin_of_day: 0, scores: scores.iter().copied().collect() }
    }

    fn table(cells: Vec<AlignedCell>) -> AlignedTable {
        AlignedTable { binning: Binning::hourly(), cells, unmapped_stop_observations: 0 }
    }

    fn obs(source: Source, loc: &str, bin: u32, nz: f64) -> ScoredObservation {
        ScoredObservation {
            key: SeriesKey { source, location_id: loc.into(), bin_of_day: bin, daytype: Daytype::Weekday },
            date: date(),
            value: 0.0,
            z: nz,
            normalized_z: nz,
        }
    }

    fn binning_of(s: Source) -> Binning {
        if s == Source::Cdr { Binning::hourly() } else { Binning::Minutes(15) }
    }

    #[test]
    fn weighted_examples() {
        let p = FusionPolicy::weighted([(A, 0.8), (B, 0.1), (C, 0.1)].into(), 0.8);
        let out = fuse_weighted(&table(vec![cell(&[(A, 1.0), (B, 0.0), (C, 0.0)])]), &p).unwrap();
        assert!((out[0].fused_score.unwrap() - 0.8).abs() < 1e-12);
        assert!(out[0].is_anomaly);

        let m = FusionPolicy::mean([A, B, C], 0.5);
        let out = fuse_weighted(&table(vec![cell(&[(A, 0.3), (B, 0.3), (C, 0.3)])]), &m).unwrap();
        assert!((out[0].fused_score.unwrap() - 0.3).abs() < 1e-12);

        let out = fuse_weighted(&table(vec![cell(&[(A, 0.9)])]), &p).unwrap();
        assert!((out[0].fused_score.unwrap() - 0.9).abs() < 1e-12);
    }

    #[test]
    fn zero_present_weight_skips_cell() {
        let p = FusionPolicy::weighted([(A, 1.0), (B, 0.0)].into(), 0.5);
        assert!(fuse_weighted(&table(vec![cell(&[(B, 0.9)])]), &p).unwrap().is_empty());
        assert!(fuse_weighted(&table(vec![cell(&[])]), &p).unwrap().is_empty());
    }

    #[test]
    fn majority_examples() {
        let p = FusionPolicy::majority([A, B, C], 2, 0.5);
        let t = table(vec![
            cell(&[(A, 0.9), (B, 0.9), (C, 0.1)]),
            cell(&[(A, 0.9), (B, 0.1), (C, 0.1)]),
            cell(&[(A, 0.9), (B, 0.9), (C, 0.9)]),
        ]);
        let out = fuse_majority(&t, &p).unwrap();
        assert_eq!(out.iter().map(|d| (d.votes, d.is_anomaly)).collect::<Vec<_>>(), vec![(2, true), (1, false), (3, true)]);
        assert!(out.iter().all(|d| d.fused_score.is_none()));
    }

    #[test]
    fn policy_validation() {
        assert!(FusionPolicy::majority([A, B, C], 4, 0.5).validate().is_err());
        assert!(FusionPolicy::majority([A, B, C], 0, 0.5).validate().is_err());
        assert!(FusionPolicy::weighted([(A, 0.5), (B, 0.4)].into(), 0.5).validate().is_err());
        assert!(FusionPolicy::weighted([(A, 1.5), (B, -0.5)].into(), 0.5).validate().is_err());
        assert!(FusionPolicy::mean([A], 1.2).validate().is_err());
        assert!(FusionPolicy::mean([A, B], 0.6).validate().is_ok());
    }

    #[test]
    fn restriction_drops_a_channel() {
        let p = FusionPolicy::majority([A, B, C], 2, 0.5).restricted_to(&[A, B].into());
        assert_eq!(p.n_required, 2);
        let w = FusionPolicy::weighted([(A, 0.8), (B, 0.1), (C, 0.1)].into(), 0.5).restricted_to(&[A, C].into());
        assert!(w.validate().is_ok());
        assert!((w.weights[&A] - 8.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn alignment_pools_stops_and_bins() {
        let observations = vec![
            obs(B, "s1", 40, 0.2),
            obs(B, "s2", 41, 0.9),
            obs(B, "s3", 40, 0.95),
            obs(C, "Z", 36, 0.1),
            obs(C, "Z", 37, 0.8),
            obs(C, "Z", 38, 0.3),
            obs(C, "Z", 39, 0.2),
            obs(A, "Z", 10, 0.4),
        ];
        let stop_zone: BTreeMap<String, String> =
            [("s1".to_string(), "Z".to_string()), ("s2".to_string(), "Z".to_string())].into();
        let t = align_to_zones(&observations, binning_of, &[A, B, C], &stop_zone).unwrap();
        assert_eq!(t.binning, Binning::hourly());
        assert_eq!(t.unmapped_stop_observations, 1);
        let scores: Vec<_> = t.cells.iter().map(|c| (c.bin_of_day, c.scores.clone())).collect();
        assert_eq!(scores, vec![(9, [(C, 0.8)].into()), (10, [(A, 0.4), (B, 0.9)].into())]);
    }

    #[test]
    fn bus_requires_stops() {
        let observations = vec![obs(B, "s1", 40, 0.2)];
        assert_eq!(align_to_zones(&observations, binning_of, &[B], &BTreeMap::new()), Err(FuseError::MissingStops));
        // disabled bus needs no stops
        assert!(align_to_zones(&observations, binning_of, &[A], &BTreeMap::new()).is_ok());
    }

    #[test]
    fn coarsest_binning_rules() {
        assert_eq!(coarsest_binning(&[Binning::Minutes(15), Binning::Minutes(60)]), Ok(Binning::hourly()));
        assert_eq!(coarsest_binning(&[Binning::Minutes(15), Binning::Coarse]), Ok(Binning::Coarse));
        assert!(coarsest_binning(&[Binning::Minutes(45), Binning::Minutes(60)]).is_err());
    }

    #[test]
    fn stops_assigned_to_zones() {
        let ring = vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [0.0, 0.0]];
        let zones = ZoneSet::new(vec![crate::geo::Zone::new("Z", vec![vec![ring]]).unwrap()]).unwrap();
        let stops: StopIndex = [
            ("in".to_string(), GeoPoint::new(0.5, 0.5).unwrap()),
            ("out".to_string(), GeoPoint::new(5.0, 5.0).unwrap()),
        ]
        .into();
        assert_eq!(stop_zones(&stops, &zones), [("in".to_string(), "Z".to_string())].into());
    }

    #[test]
    fn fused_round_trip() {
        let t = table(vec![cell(&[(A, 0.9), (B, 0.25)])]);
        for p in [FusionPolicy::mean([A, B], 0.5), FusionPolicy::majority([A, B], 1, 0.5)] {
            let mut d = fuse(&t, &p).unwrap();
            let mut buf = Vec::new();
            write_fused(&mut buf, &d).unwrap();
            let back = read_fused(buf.as_slice()).unwrap();
            assert!(back.rejections.is_empty());
            d.iter_mut().for_each(|x| x.contributing_sources.clear());
            assert_eq!(back.records, d);
        }
    }

    fn arb_cell() -> impl Strategy<Value = AlignedCell> {
        prop::collection::vec(prop::option::of(0.0f64..=1.0), 3).prop_map(|v| {
            let scores = [A, B, C].into_iter().zip(v).filter_map(|(s, x)| x.map(|x| (s, x))).collect();
            AlignedCell { zone_id: "Z".into(), date: date(), bin_of_day: 0, scores }
        })
    }

    proptest! {
        #[test]
        fn weighted_monotone_in_one_score(c in arb_cell(), w in prop::collection::vec(0.01f64..1.0, 3), s in 0.0f64..=1.0, bump in 0.0f64..1.0, which in 0usize..3) {
            let total: f64 = w.iter().sum();
            let p = FusionPolicy::weighted([(A, w[0] / total), (B, w[1] / total), (C, w[2] / total)].into(), s);
            prop_assume!(p.validate().is_ok());
            let before = fuse_weighted(&table(vec![c.clone()]), &p).unwrap();
            let mut raised = c;
            let src = [A, B, C][which];
            if let Some(v) = raised.scores.get_mut(&src) {
                *v = (*v + bump).min(1.0);
            }
            let after = fuse_weighted(&table(vec![raised]), &p).unwrap();
            if let (Some(b), Some(a)) = (before.first(), after.first()) {
                prop_assert!(!b.is_anomaly || a.is_anomaly);
            }
        }

        #[test]
        fn weighted_flags_non_increasing_in_threshold(cells in prop::collection::vec(arb_cell(), 1..30), s in 0.0f64..0.9, ds in 0.0f64..0.1) {
            let t = table(cells);
            let count = |s: f64| fuse_weighted(&t, &FusionPolicy::mean([A, B, C], s)).unwrap().iter().filter(|d| d.is_anomaly).count();
            prop_assert!(count(s + ds) <= count(s));
        }
    }
}
