//! Batch runs over a data directory: configuration, stage composition and
//! artifact files.

mod artifacts;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotate::{build_docs, read_messages, DocCorpus, MessageRecord};
use crate::csvio::{CsvError, Rejection};
use crate::detect::{
    detect_iqr_series, detect_shesd, detect_zscore, DetectError, Detector, EsdConfig, SkippedGroup,
};
use crate::evaluate::{
    hits_from_decisions, hits_from_fused, radius_grid, read_events, recall_curve, EvalError, GroundTruthEvent,
    RecallCurve,
};
use crate::fuse::{align_to_zones, fuse, stop_zones, AlignedTable, FuseError, FusedDecision, FusionPolicy};
use crate::geo::{load_zones, GeoError, ZoneSet};
use crate::ingest::{
    coarse_rebin, compute_occupancy, merge_series, parse_source, parse_stops, record_period, stop_index, Calendar,
    IngestError,
    Occupancy, OccupancyReport, RecordKind, Records, StopIndex,
};
use crate::normalcy::{fit, score_series, ModelMap, Scoring};
use crate::simulate::{EVENTS_FILE, MESSAGES_FILE, STOPS_FILE, ZONES_FILE};
use crate::stats::{align_series, pairwise_granger, summarize, GrangerResult, GrangerSummary, StatsError};
use crate::time::Binning;
use crate::{SeriesMap, Source};

pub use artifacts::{
    read_series, write_annotations, write_normality, write_series, AnnotationRow, ANNOTATION_HEADER,
    NORMALITY_HEADER, SERIES_HEADER,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: CsvError },
    #[error("{path}: {source}")]
    Geo { path: PathBuf, source: GeoError },
    #[error("{path}: {message}")]
    Artifact { path: PathBuf, message: String },
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error(transparent)]
    Fuse(#[from] FuseError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.to_path_buf(), source }
}

/// Every tunable of a batch run. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Bin width for every source except CDR, which is always hourly.
    pub bin_width_minutes: u32,
    /// Aggregate every source into the five multi-hour bins instead.
    pub coarse_bins: bool,
    pub z_threshold: f64,
    pub iqr_multiplier: f64,
    pub esd_alpha: f64,
    pub esd_max_anoms: f64,
    /// Detectors run by `detect`.
    pub detectors: Vec<Detector>,
    /// Fusion score threshold S on normalized scores.
    pub score_threshold: f64,
    /// Sources taking part in fusion.
    pub sources: Vec<Source>,
    /// Weights for weighted fusion; missing sources weigh 0.
    pub weights: BTreeMap<Source, f64>,
    /// Votes needed by majority fusion.
    pub k: usize,
    pub period_start: Option<NaiveDate>,
    pub period_end: Option<NaiveDate>,
    /// Dates left out of baseline fitting.
    pub holidays: Vec<NaiveDate>,
    pub radius_start_m: f64,
    pub radius_end_m: f64,
    pub radius_step_m: f64,
    pub offsets: Vec<i32>,
    pub sweep_thresholds: Vec<f64>,
    pub granger_lag: usize,
    pub annotate_k: usize,
    /// Simulator seed used when none is given on the command line.
    pub seed: u64,
}

pub const DEFAULT_SOURCES: [Source; 3] = [Source::Cdr, Source::Bus, Source::Checkin];

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            bin_width_minutes: 15,
            coarse_bins: false,
            z_threshold: 3.0,
            iqr_multiplier: 1.5,
            esd_alpha: 0.05,
            esd_max_anoms: 0.02,
            detectors: Detector::ALL.to_vec(),
            score_threshold: 0.6,
            sources: DEFAULT_SOURCES.to_vec(),
            weights: DEFAULT_SOURCES.iter().map(|&s| (s, 1.0 / 3.0)).collect(),
            k: 2,
            period_start: None,
            period_end: None,
            holidays: Vec::new(),
            radius_start_m: 0.0,
            radius_end_m: 4000.0,
            radius_step_m: 250.0,
            offsets: vec![0, -1],
            sweep_thresholds: (1..=9).map(|i| i as f64 / 10.0).collect(),
            granger_lag: 1,
            annotate_k: 5,
            seed: 7,
        }
    }
}

impl PipelineConfig {
    pub fn from_yaml(text: &str) -> Result<Self, PipelineError> {
        let c: PipelineConfig = serde_yaml::from_str(text).map_err(|e| PipelineError::Config(vec![e.to_string()]))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        Self::from_yaml(&fs::read_to_string(path).map_err(io_err(path))?)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let mut bad = Vec::new();
        if !Binning::Minutes(self.bin_width_minutes).is_valid() {
            bad.push(format!("bin_width_minutes {} does not divide a day", self.bin_width_minutes));
        } else if !self.coarse_bins && 60 % self.bin_width_minutes != 0 {
            bad.push(format!("bin_width_minutes {} does not nest in the hourly CDR bins", self.bin_width_minutes));
        }
        if !(self.z_threshold.is_finite() && self.z_threshold >= 0.0) {
            bad.push(format!("z_threshold {} must be non-negative", self.z_threshold));
        }
        if !(self.iqr_multiplier.is_finite() && self.iqr_multiplier >= 0.0) {
            bad.push(format!("iqr_multiplier {} must be non-negative", self.iqr_multiplier));
        }
        if let Err(e) = self.esd_config().validate() {
            bad.push(e.to_string());
        }
        if !(0.0..=1.0).contains(&self.score_threshold) {
            bad.push(format!("score_threshold {} outside [0, 1]", self.score_threshold));
        }
        if self.sources.is_empty() {
            bad.push("sources is empty".into());
        }
        if self.k == 0 || self.k > self.sources.len() {
            bad.push(format!("k = {} must lie in 1..={}", self.k, self.sources.len()));
        }
        if self.weights.values().any(|w| !(w.is_finite() && *w >= 0.0)) {
            bad.push("weights must be finite and non-negative".into());
        }
        if let (Some(a), Some(b)) = (self.period_start, self.period_end) {
            if a > b {
                bad.push(format!("period_start {a} after period_end {b}"));
            }
        }
        if let Err(e) = self.radii() {
            bad.push(e.to_string());
        }
        if self.offsets.is_empty() {
            bad.push("offsets is empty".into());
        }
        if self.sweep_thresholds.iter().any(|s| !(0.0..=1.0).contains(s)) {
            bad.push("sweep_thresholds must lie in [0, 1]".into());
        }
        if self.granger_lag == 0 {
            bad.push("granger_lag must be positive".into());
        }
        if self.annotate_k == 0 {
            bad.push("annotate_k must be positive".into());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(PipelineError::Config(bad))
        }
    }

    pub fn binning(&self, source: Source) -> Binning {
        match (self.coarse_bins, source) {
            (true, _) => Binning::Coarse,
            (false, Source::Cdr) => Binning::hourly(),
            (false, _) => Binning::Minutes(self.bin_width_minutes),
        }
    }

    pub fn calendar(&self) -> Calendar {
        let period = match (self.period_start, self.period_end) {
            (Some(a), Some(b)) => Some((a, b)),
            _ => None,
        };
        Calendar { period, holidays: self.holidays.iter().copied().collect() }
    }

    pub fn esd_config(&self) -> EsdConfig {
        EsdConfig { alpha: self.esd_alpha, max_anoms_fraction: self.esd_max_anoms, period: None }
    }

    pub fn radii(&self) -> Result<Vec<f64>, EvalError> {
        radius_grid(self.radius_start_m, self.radius_end_m, self.radius_step_m)
    }

    /// The three fusion policies, labelled by method.
    pub fn policies(&self) -> Vec<(String, FusionPolicy)> {
        let weights = self.sources.iter().map(|s| (*s, self.weights.get(s).copied().unwrap_or(0.0))).collect();
        vec![
            ("weighted".to_string(), FusionPolicy::weighted(weights, self.score_threshold)),
            ("mean".to_string(), FusionPolicy::mean(self.sources.iter().copied(), self.score_threshold)),
            ("majority".to_string(), FusionPolicy::majority(self.sources.iter().copied(), self.k, self.score_threshold)),
        ]
    }
}

/// Raw inputs of a data directory. Only the zone file is mandatory.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub zones: ZoneSet,
    pub stops: StopIndex,
    pub records: Vec<Records>,
    pub events: Vec<GroundTruthEvent>,
    pub messages: Vec<MessageRecord>,
    /// Rejected rows per file name.
    pub rejections: BTreeMap<String, Vec<Rejection>>,
}

fn open_optional(path: &Path) -> Result<Option<fs::File>, PipelineError> {
    match fs::File::open(path) {
        Ok(f) => Ok(Some(f)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(io_err(path)(e)),
    }
}

fn csv_err(path: &Path) -> impl FnOnce(CsvError) -> PipelineError + '_ {
    move |source| PipelineError::Csv { path: path.to_path_buf(), source }
}

pub fn load_inputs(dir: &Path) -> Result<Inputs, PipelineError> {
    let zones_path = dir.join(ZONES_FILE);
    let zones = load_zones(&fs::read(&zones_path).map_err(io_err(&zones_path))?)
        .map_err(|source| PipelineError::Geo { path: zones_path.clone(), source })?;
    let mut rejections = BTreeMap::new();

    let mut stops = StopIndex::new();
    let path = dir.join(STOPS_FILE);
    if let Some(f) = open_optional(&path)? {
        let parsed = parse_stops(f).map_err(csv_err(&path))?;
        stops = stop_index(&parsed);
        rejections.insert(STOPS_FILE.to_string(), parsed.rejections);
    }

    let mut records = Vec::new();
    for kind in RecordKind::ALL {
        let path = dir.join(kind.file_name());
        if let Some(f) = open_optional(&path)? {
            let (r, rej) = parse_source(kind, f).map_err(csv_err(&path))?;
            records.push(r);
            rejections.insert(kind.file_name().to_string(), rej);
        }
    }

    let mut events = Vec::new();
    let path = dir.join(EVENTS_FILE);
    if let Some(f) = open_optional(&path)? {
        let parsed = read_events(f).map_err(csv_err(&path))?;
        events = parsed.records;
        rejections.insert(EVENTS_FILE.to_string(), parsed.rejections);
    }

    let mut messages = Vec::new();
    let path = dir.join(MESSAGES_FILE);
    if let Some(f) = open_optional(&path)? {
        let parsed = read_messages(f).map_err(csv_err(&path))?;
        messages = parsed.records;
        rejections.insert(MESSAGES_FILE.to_string(), parsed.rejections);
    }
    Ok(Inputs { zones, stops, records, events, messages, rejections })
}

impl Inputs {
    pub fn rejected_rows(&self) -> usize {
        self.rejections.values().map(Vec::len).sum()
    }

    pub fn stop_zone(&self) -> BTreeMap<String, String> {
        stop_zones(&self.stops, &self.zones)
    }

    pub fn checkins(&self) -> &[crate::ingest::CheckinRecord] {
        self.records
            .iter()
            .find_map(|r| match r {
                Records::Checkin(c) => Some(c.as_slice()),
                _ => None,
            })
            .unwrap_or(&[])
    }
}

/// The observation period: configured, else the dates covered by every
/// record file.
pub fn common_period(inputs: &Inputs, config: &PipelineConfig) -> Option<(NaiveDate, NaiveDate)> {
    config.calendar().period.or_else(|| {
        inputs
            .records
            .iter()
            .filter_map(record_period)
            .reduce(|(a, b), (c, d)| (a.max(c), b.min(d)))
            .filter(|(a, b)| a <= b)
    })
}

/// Aggregates every record file into occupancy series over the common period.
pub fn ingest(inputs: &Inputs, config: &PipelineConfig) -> Result<Occupancy, PipelineError> {
    let calendar = Calendar { period: common_period(inputs, config), ..config.calendar() };
    let mut series = SeriesMap::new();
    let mut report = OccupancyReport::default();
    for records in &inputs.records {
        let width = match (config.coarse_bins, records.kind()) {
            (true, _) | (false, RecordKind::Cdr) => 60,
            _ => config.bin_width_minutes,
        };
        let occ = compute_occupancy(records, &inputs.zones, width, &calendar)?;
        merge_series(&mut series, occ.series);
        report.merge(occ.report);
    }
    if config.coarse_bins {
        series = coarse_rebin(&series)?;
    }
    Ok(Occupancy { series, report })
}

/// First and last sample date over all series.
pub fn series_period(series: &SeriesMap) -> Option<(NaiveDate, NaiveDate)> {
    let mut dates = series.values().flat_map(|s| s.samples.iter().map(|x| x.0));
    let first = dates.next()?;
    Some(dates.fold((first, first), |(lo, hi), d| (lo.min(d), hi.max(d))))
}

pub fn fit_models(series: &SeriesMap, config: &PipelineConfig) -> ModelMap {
    fit(series, &config.calendar())
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Detections {
    pub by_detector: BTreeMap<Detector, Vec<crate::detect::AnomalyDecision>>,
    pub shesd_skipped: Vec<SkippedGroup>,
}

impl Detections {
    pub fn all(&self) -> Vec<crate::detect::AnomalyDecision> {
        let mut out: Vec<_> = self.by_detector.values().flatten().cloned().collect();
        crate::detect::sort_decisions(&mut out);
        out
    }
}

pub fn detect(
    scoring: &Scoring,
    models: &ModelMap,
    config: &PipelineConfig,
    detectors: &[Detector],
) -> Result<Detections, PipelineError> {
    let mut out = Detections::default();
    for &d in detectors.iter().collect::<BTreeSet<_>>() {
        let decisions = match d {
            Detector::Zscore => detect_zscore(&scoring.observations, config.z_threshold),
            Detector::Iqr => detect_iqr_series(&scoring.observations, models, config.iqr_multiplier),
            Detector::Shesd => {
                let r = detect_shesd(&scoring.observations, |s| config.binning(s), &config.esd_config())?;
                out.shesd_skipped = r.skipped;
                r.decisions
            }
        };
        out.by_detector.insert(d, decisions);
    }
    Ok(out)
}

pub fn align(
    scoring: &Scoring,
    config: &PipelineConfig,
    sources: &[Source],
    stop_zone: &BTreeMap<String, String>,
) -> Result<AlignedTable, PipelineError> {
    Ok(align_to_zones(&scoring.observations, |s| config.binning(s), sources, stop_zone)?)
}

pub fn fuse_all(
    table: &AlignedTable,
    policies: &[(String, FusionPolicy)],
) -> Result<Vec<(String, Vec<FusedDecision>)>, PipelineError> {
    policies.iter().map(|(label, p)| Ok((label.clone(), fuse(table, p)?))).collect()
}

/// Label of a single-source recall curve.
pub fn source_label(source: Source, detector: Detector) -> String {
    format!("{source}/{detector}")
}

/// Label of the curve pooling every source of one detector.
pub fn union_label(detector: Detector) -> String {
    format!("ANY/{detector}")
}

pub fn fused_label(policy: &str) -> String {
    format!("fused/{policy}")
}

/// Recall curves per (source, detector), per detector over all sources, and
/// per fusion policy, at every configured offset.
#[allow(clippy::too_many_arguments)]
pub fn recall_curves(
    events: &[GroundTruthEvent],
    zones: &ZoneSet,
    detections: &Detections,
    fused: &[(String, Vec<FusedDecision>)],
    fused_binning: Binning,
    stop_zone: &BTreeMap<String, String>,
    config: &PipelineConfig,
    period: (NaiveDate, NaiveDate),
) -> Result<Vec<RecallCurve>, PipelineError> {
    let radii = config.radii()?;
    let mut labelled: Vec<(String, Vec<crate::evaluate::Hit>)> = Vec::new();
    for (detector, decisions) in &detections.by_detector {
        let sources: BTreeSet<Source> = decisions.iter().map(|d| d.key.source).collect();
        for source in sources {
            let own: Vec<_> = decisions.iter().filter(|d| d.key.source == source).cloned().collect();
            labelled.push((source_label(source, *detector), hits_from_decisions(&own, |s| config.binning(s), stop_zone)));
        }
        labelled.push((union_label(*detector), hits_from_decisions(decisions, |s| config.binning(s), stop_zone)));
    }
    for (label, decisions) in fused {
        labelled.push((fused_label(label), hits_from_fused(decisions, fused_binning)));
    }
    let mut out = Vec::new();
    for &offset in &config.offsets {
        for (label, hits) in &labelled {
            out.push(recall_curve(label, events, hits, zones, &radii, offset, period)?);
        }
    }
    Ok(out)
}

/// Everything a full run produces.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub config: PipelineConfig,
    pub occupancy: Occupancy,
    pub period: Option<(NaiveDate, NaiveDate)>,
    pub models: ModelMap,
    pub scoring: Scoring,
    pub detections: Detections,
    pub stop_zone: BTreeMap<String, String>,
    pub table: AlignedTable,
    pub fused: Vec<(String, Vec<FusedDecision>)>,
    /// Empty when the data directory has no events.
    pub curves: Vec<RecallCurve>,
}

/// Ingest, fit, score, detect, fuse and evaluate in one pass.
pub fn run(inputs: &Inputs, config: &PipelineConfig) -> Result<Analysis, PipelineError> {
    config.validate()?;
    let occupancy = ingest(inputs, config)?;
    let period = series_period(&occupancy.series);
    let models = fit_models(&occupancy.series, config);
    let scoring = score_series(&occupancy.series, &models);
    let detections = detect(&scoring, &models, config, &config.detectors)?;
    let stop_zone = inputs.stop_zone();
    let table = align(&scoring, config, &config.sources, &stop_zone)?;
    let fused = fuse_all(&table, &config.policies())?;
    let curves = match period {
        Some(p) if !inputs.events.is_empty() => recall_curves(
            &inputs.events,
            &inputs.zones,
            &detections,
            &fused,
            table.binning,
            &stop_zone,
            config,
            p,
        )?,
        _ => Vec::new(),
    };
    Ok(Analysis { config: config.clone(), occupancy, period, models, scoring, detections, stop_zone, table, fused, curves })
}

/// Sums one source's occupancy per zone onto `target` bins, ordered by
/// (date, bin). Bus stops pool into their zone.
pub fn zone_series(
    series: &SeriesMap,
    source: Source,
    zone: &str,
    target: Binning,
    stop_zone: &BTreeMap<String, String>,
) -> BTreeMap<(NaiveDate, u32), f64> {
    let mut out = BTreeMap::new();
    for s in series.values() {
        if s.key.source != source {
            continue;
        }
        let z = if source == Source::Bus { stop_zone.get(&s.key.location_id).map(String::as_str) } else { Some(s.key.location_id.as_str()) };
        if z != Some(zone) {
            continue;
        }
        let bin = target.bin_of_minute(s.binning.window(s.key.bin_of_day).0);
        for &(date, v) in &s.samples {
            *out.entry((date, bin)).or_insert(0.0) += v;
        }
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GrangerReport {
    pub results: Vec<GrangerResult>,
    pub summary: Vec<GrangerSummary>,
    /// (zone, x, y, reason) for pairs that could not be tested.
    pub failures: Vec<(String, String, String, String)>,
}

/// Pairwise tests per zone on the coarsest common bin of `sources`; zones
/// where fewer than two sources have data are skipped.
pub fn granger_by_zone(
    series: &SeriesMap,
    zones: &[String],
    sources: &[Source],
    config: &PipelineConfig,
    stop_zone: &BTreeMap<String, String>,
    lag: usize,
) -> Result<GrangerReport, PipelineError> {
    let target = crate::fuse::coarsest_binning(&sources.iter().map(|&s| config.binning(s)).collect::<Vec<_>>())?;
    let mut report = GrangerReport::default();
    for zone in zones {
        let per_source: Vec<(String, BTreeMap<(NaiveDate, u32), f64>)> = sources
            .iter()
            .map(|&s| (s.to_string(), zone_series(series, s, zone, target, stop_zone)))
            .filter(|(_, m)| !m.is_empty())
            .collect();
        if per_source.len() < 2 {
            continue;
        }
        let aligned = align_series(per_source);
        let pg = pairwise_granger(&aligned, lag)?;
        report.results.extend(pg.results);
        report.failures.extend(pg.failures.into_iter().map(|(x, y, e)| (zone.clone(), x, y, e)));
    }
    report.summary = summarize(&report.results);
    Ok(report)
}

/// Top terms for every cell flagged by any fused policy.
pub fn annotate_flagged(
    corpus: &DocCorpus,
    fused: &[(String, Vec<FusedDecision>)],
    k: usize,
) -> Vec<AnnotationRow> {
    let cells: BTreeSet<crate::annotate::Cell> = fused
        .iter()
        .flat_map(|(_, ds)| ds.iter().filter(|d| d.is_anomaly))
        .map(|d| crate::annotate::Cell { zone_id: d.zone_id.clone(), date: d.date, bin_of_day: d.bin_of_day })
        .collect();
    let mut out = Vec::new();
    for cell in cells {
        if let Ok(terms) = crate::annotate::tfidf_top_k(corpus, &cell, k) {
            out.extend(terms.into_iter().enumerate().map(|(i, t)| AnnotationRow {
                cell: cell.clone(),
                rank: i + 1,
                term: t.term,
                score: t.score,
            }));
        }
    }
    out
}

pub fn corpus(inputs: &Inputs, binning: Binning) -> DocCorpus {
    build_docs(&inputs.messages, inputs.checkins(), &inputs.zones, binning)
}

pub const SERIES_FILE: &str = "occupancy.csv";
pub const INGEST_REPORT_FILE: &str = "ingest_report.json";
pub const MODELS_FILE: &str = "models.csv";
pub const DECISIONS_FILE: &str = "decisions.csv";
pub const FUSED_FILE: &str = "fused.csv";
pub const RECALL_FILE: &str = "recall.csv";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const GRANGER_FILE: &str = "granger.csv";
pub const GRANGER_SUMMARY_FILE: &str = "granger_summary.csv";
pub const NORMALITY_FILE: &str = "normality.csv";
pub const ANNOTATIONS_FILE: &str = "annotations.csv";

/// Machine-readable summary of what ingestion accepted and rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub occupancy: OccupancyReport,
    pub series: usize,
    pub rejections: BTreeMap<String, Vec<Rejection>>,
}

/// Creates `path` with the bytes produced by `f`.
pub fn write_file(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<(), PipelineError> {
    let mut buf = Vec::new();
    f(&mut buf).map_err(io_err(path))?;
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(path, buf).map_err(io_err(path))
}

/// Writes the series, model, decision, fused and recall files of `analysis`.
pub fn write_analysis(analysis: &Analysis, dir: &Path) -> Result<Vec<String>, PipelineError> {
    write_file(&dir.join(SERIES_FILE), |w| write_series(w, &analysis.occupancy.series))?;
    write_file(&dir.join(MODELS_FILE), |w| crate::normalcy::write_models(w, &analysis.models))?;
    write_file(&dir.join(DECISIONS_FILE), |w| crate::detect::write_decisions(w, &analysis.detections.all()))?;
    let fused: Vec<FusedDecision> = analysis.fused.iter().flat_map(|(_, d)| d.iter().cloned()).collect();
    write_file(&dir.join(FUSED_FILE), |w| crate::fuse::write_fused(w, &fused))?;
    let mut files = vec![SERIES_FILE, MODELS_FILE, DECISIONS_FILE, FUSED_FILE];
    if !analysis.curves.is_empty() {
        write_file(&dir.join(RECALL_FILE), |w| crate::evaluate::write_curves(w, &analysis.curves))?;
        files.push(RECALL_FILE);
    }
    Ok(files.into_iter().map(String::from).collect())
}
