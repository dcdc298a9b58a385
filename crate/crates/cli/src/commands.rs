//! Subcommand implementations. Each reads and writes the documented files.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use eventscope::detect::{read_decisions, AnomalyDecision, Detector};
use eventscope::evaluate::{self, radius_grid, RecallCurve};
use eventscope::fuse::{coarsest_binning, read_fused, FusedDecision, FusionMethod, FusionPolicy};
use eventscope::normalcy::{normality_diagnostics, read_models, score_series, ModelMap};
use eventscope::pipeline::{self as pl, PipelineConfig};
use eventscope::simulate::{self, SimConfig};
use eventscope::{SeriesMap, Source};

#[derive(Debug, Parser)]
#[command(name = "eventscope", version, about = "Multimodal urban event detection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic city with ground-truth events.
    Simulate(SimulateArgs),
    /// Aggregate raw records into occupancy series.
    Ingest(IngestArgs),
    /// Fit per-key baseline models.
    Fit(Common),
    /// Flag anomalous observations.
    Detect(DetectArgs),
    /// Fuse per-source scores into zone-level decisions.
    Fuse(FuseArgs),
    /// Recall against ground-truth events over a radius grid.
    Eval(EvalArgs),
    /// Recall of every fusion policy over thresholds and radii.
    Sweep(SweepArgs),
    /// Pairwise Granger-causality tests per zone.
    Granger(GrangerArgs),
    /// Shapiro-Wilk test of every weekday series.
    Normality(Common),
    /// Top TF-IDF terms for fused anomalous cells.
    Annotate(AnnotateArgs),
    /// Serve the HTTP API over a data directory.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Directory holding zones.geojson and the raw record files.
    #[arg(long)]
    pub data: PathBuf,
    /// Artifact directory; defaults to the data directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// YAML configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

impl Common {
    pub fn out_dir(&self) -> &Path {
        self.out.as_deref().unwrap_or(&self.data)
    }

    pub fn load_config(&self) -> Result<PipelineConfig> {
        load_config(self.config.as_deref())
    }
}

pub fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    Ok(match path {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    })
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Named scenario.
    #[arg(long, conflicts_with = "sim_config")]
    pub scenario: Option<String>,
    /// YAML simulator configuration.
    #[arg(long)]
    pub sim_config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[command(flatten)]
    pub common: Common,
    /// Fail when any row is rejected.
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[command(flatten)]
    pub common: Common,
    /// zscore, iqr, shesd or all; defaults to the configured detectors.
    #[arg(long)]
    pub method: Option<String>,
    /// z-score threshold.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub iqr_multiplier: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub max_anoms: Option<f64>,
}

#[derive(Debug, Args)]
pub struct FusionArgs {
    /// weighted, mean, majority or all.
    #[arg(long, default_value = "all")]
    pub method: String,
    /// Score threshold on normalized scores.
    #[arg(long = "S", allow_negative_numbers = true)]
    pub score_threshold: Option<f64>,
    #[arg(long)]
    pub k: Option<usize>,
    /// Comma-separated source list.
    #[arg(long, value_delimiter = ',')]
    pub sources: Option<Vec<String>>,
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub fusion: FusionArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    /// Radius grid `start:end:step` in meters.
    #[arg(long = "R")]
    pub radii: Option<String>,
    /// Hours relative to event start; repeatable.
    #[arg(long, allow_negative_numbers = true)]
    pub offset: Vec<i32>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long = "R")]
    pub radii: Option<String>,
    /// Comma-separated thresholds.
    #[arg(long = "S", value_delimiter = ',')]
    pub thresholds: Option<Vec<f64>>,
    #[arg(long, allow_negative_numbers = true)]
    pub offset: Option<i32>,
    /// weighted, mean, majority or all.
    #[arg(long, default_value = "all")]
    pub method: String,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub sources: Option<Vec<String>>,
}

#[derive(Debug, Args)]
pub struct GrangerArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub lag: Option<usize>,
    /// Comma-separated source list; defaults to every ingested source.
    #[arg(long, value_delimiter = ',')]
    pub sources: Option<Vec<String>>,
    /// Comma-separated zone ids; defaults to every zone.
    #[arg(long, value_delimiter = ',')]
    pub zones: Option<Vec<String>>,
}

#[derive(Debug, Args)]
pub struct AnnotateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub k: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub data_dir: PathBuf,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

pub fn parse_grid(grid: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = grid.split(':').collect();
    let [a, b, c] = parts.as_slice() else {
        bail!("radius grid must be start:end:step, got `{grid}`");
    };
    let num = |s: &str| s.trim().parse::<f64>().with_context(|| format!("bad number `{s}` in `{grid}`"));
    Ok(radius_grid(num(a)?, num(b)?, num(c)?)?)
}

pub fn parse_sources(list: &[String]) -> Result<Vec<Source>> {
    let set: BTreeSet<Source> = list.iter().map(|s| s.parse::<Source>().map_err(anyhow::Error::msg)).collect::<Result<_>>()?;
    if set.is_empty() {
        bail!("empty source list");
    }
    Ok(set.into_iter().collect())
}

fn artifact<T>(path: &Path, what: &str, f: impl FnOnce(fs::File) -> Result<T>) -> Result<T> {
    let file = fs::File::open(path).with_context(|| format!("{} missing; run `{what}` first", path.display()))?;
    f(file)
}

pub fn read_series_file(dir: &Path) -> Result<SeriesMap> {
    let path = dir.join(pl::SERIES_FILE);
    artifact(&path, "ingest", |f| {
        let parsed = pl::read_series(f).with_context(|| path.display().to_string())?;
        reject_any(&path, parsed.rejections.len())?;
        Ok(parsed.records.into_iter().map(|s| (s.key.clone(), s)).collect())
    })
}

pub fn read_models_file(dir: &Path) -> Result<ModelMap> {
    let path = dir.join(pl::MODELS_FILE);
    artifact(&path, "fit", |f| {
        let parsed = read_models(f).with_context(|| path.display().to_string())?;
        reject_any(&path, parsed.rejections.len())?;
        Ok(parsed.records.into_iter().map(|m| (m.key.clone(), m)).collect())
    })
}

pub fn read_decisions_file(dir: &Path) -> Result<Vec<AnomalyDecision>> {
    let path = dir.join(pl::DECISIONS_FILE);
    artifact(&path, "detect", |f| {
        let parsed = read_decisions(f).with_context(|| path.display().to_string())?;
        reject_any(&path, parsed.rejections.len())?;
        Ok(parsed.records)
    })
}

pub fn read_fused_file(dir: &Path) -> Result<Vec<FusedDecision>> {
    let path = dir.join(pl::FUSED_FILE);
    artifact(&path, "fuse", |f| {
        let parsed = read_fused(f).with_context(|| path.display().to_string())?;
        reject_any(&path, parsed.rejections.len())?;
        Ok(parsed.records)
    })
}

fn reject_any(path: &Path, n: usize) -> Result<()> {
    if n > 0 {
        bail!("{}: {n} malformed artifact rows", path.display());
    }
    Ok(())
}

/// Successful outcome: files written plus a one-line summary.
#[derive(Debug, Default)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub summary: String,
}

fn write(path: PathBuf, f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<PathBuf> {
    pl::write_file(&path, f)?;
    Ok(path)
}

pub fn simulate(args: &SimulateArgs) -> Result<Outcome> {
    let mut config: SimConfig = match (&args.scenario, &args.sim_config) {
        (Some(name), None) => simulate::scenario(name, args.seed.unwrap_or(7)).with_context(|| {
            format!("unknown scenario `{name}`; known: {}", simulate::SCENARIO_NAMES.join(", "))
        })?,
        (None, Some(path)) => {
            let text = fs::read_to_string(path).with_context(|| path.display().to_string())?;
            serde_yaml::from_str(&text).with_context(|| path.display().to_string())?
        }
        _ => bail!("give exactly one of --scenario or --sim-config"),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let manifest = simulate::generate(&config)?.write_to(&args.out)?;
    Ok(Outcome {
        files: manifest.files.iter().map(|f| args.out.join(f)).chain([args.out.join(simulate::MANIFEST_FILE)]).collect(),
        summary: format!("seed {} config {}", manifest.seed, manifest.config_sha256),
    })
}

pub fn ingest(args: &IngestArgs) -> Result<Outcome> {
    let c = &args.common;
    let config = c.load_config()?;
    let inputs = pl::load_inputs(&c.data)?;
    let occ = pl::ingest(&inputs, &config)?;
    let report = pl::IngestReport { occupancy: occ.report.clone(), series: occ.series.len(), rejections: inputs.rejections.clone() };
    let out = c.out_dir();
    let report_path = write(out.join(pl::INGEST_REPORT_FILE), |w| {
        serde_json::to_writer_pretty(&mut *w, &report)?;
        w.push(b'\n');
        Ok(())
    })?;
    let rejected = inputs.rejected_rows();
    if args.strict && rejected > 0 {
        bail!(DataError { message: format!("{rejected} rows rejected"), report: report_path });
    }
    let series = write(out.join(pl::SERIES_FILE), |w| pl::write_series(w, &occ.series))?;
    Ok(Outcome {
        files: vec![series, report_path],
        summary: format!("{} series, {rejected} rejected rows", occ.series.len()),
    })
}

pub fn fit(c: &Common) -> Result<Outcome> {
    let config = c.load_config()?;
    let series = read_series_file(c.out_dir())?;
    let models = pl::fit_models(&series, &config);
    let path = write(c.out_dir().join(pl::MODELS_FILE), |w| eventscope::normalcy::write_models(w, &models))?;
    Ok(Outcome { files: vec![path], summary: format!("{} models", models.len()) })
}

pub fn detect(args: &DetectArgs) -> Result<Outcome> {
    let c = &args.common;
    let mut config = c.load_config()?;
    if let Some(t) = args.threshold {
        config.z_threshold = t;
    }
    if let Some(m) = args.iqr_multiplier {
        config.iqr_multiplier = m;
    }
    if let Some(a) = args.alpha {
        config.esd_alpha = a;
    }
    if let Some(m) = args.max_anoms {
        config.esd_max_anoms = m;
    }
    config.validate()?;
    let detectors = match args.method.as_deref() {
        None => config.detectors.clone(),
        Some("all") => Detector::ALL.to_vec(),
        Some(m) => vec![m.parse::<Detector>().map_err(anyhow::Error::msg)?],
    };
    let series = read_series_file(c.out_dir())?;
    let models = read_models_file(c.out_dir())?;
    let scoring = score_series(&series, &models);
    let detections = pl::detect(&scoring, &models, &config, &detectors)?;
    let all = detections.all();
    let path = write(c.out_dir().join(pl::DECISIONS_FILE), |w| eventscope::detect::write_decisions(w, &all))?;
    let flagged = all.iter().filter(|d| d.is_anomaly).count();
    Ok(Outcome { files: vec![path], summary: format!("{flagged} of {} observations flagged", all.len()) })
}

/// Applies fusion overrides and returns the selected labelled policies.
pub fn fusion_setup(config: &mut PipelineConfig, f: &FusionArgs) -> Result<Vec<(String, FusionPolicy)>> {
    if let Some(s) = f.score_threshold {
        config.score_threshold = s;
    }
    if let Some(k) = f.k {
        config.k = k;
    }
    if let Some(list) = &f.sources {
        config.sources = parse_sources(list)?;
    }
    config.validate()?;
    let policies = config.policies();
    Ok(match f.method.as_str() {
        "all" => policies,
        m => {
            let method: FusionMethod = m.parse().map_err(anyhow::Error::msg)?;
            policies.into_iter().filter(|(_, p)| p.method == method).collect()
        }
    })
}

pub fn fuse(args: &FuseArgs) -> Result<Outcome> {
    let c = &args.common;
    let mut config = c.load_config()?;
    let policies = fusion_setup(&mut config, &args.fusion)?;
    let inputs = pl::load_inputs(&c.data)?;
    let scoring = score_series(&read_series_file(c.out_dir())?, &read_models_file(c.out_dir())?);
    let table = pl::align(&scoring, &config, &config.sources, &inputs.stop_zone())?;
    let fused: Vec<FusedDecision> = pl::fuse_all(&table, &policies)?.into_iter().flat_map(|(_, d)| d).collect();
    let path = write(c.out_dir().join(pl::FUSED_FILE), |w| eventscope::fuse::write_fused(w, &fused))?;
    let flagged = fused.iter().filter(|d| d.is_anomaly).count();
    Ok(Outcome {
        files: vec![path],
        summary: format!("{flagged} anomalous cells over {} policies on {} bins", policies.len(), table.binning),
    })
}

/// Recall curves from the decision and fused artifacts, whichever exist.
pub fn eval_curves(
    inputs: &pl::Inputs,
    config: &PipelineConfig,
    decisions: Option<Vec<AnomalyDecision>>,
    fused: Option<Vec<FusedDecision>>,
    period: (chrono::NaiveDate, chrono::NaiveDate),
) -> Result<Vec<RecallCurve>> {
    let mut detections = pl::Detections::default();
    for d in decisions.unwrap_or_default() {
        detections.by_detector.entry(d.detector).or_default().push(d);
    }
    let mut by_method: BTreeMap<String, Vec<FusedDecision>> = BTreeMap::new();
    for d in fused.unwrap_or_default() {
        by_method.entry(d.method.as_str().to_ascii_lowercase()).or_default().push(d);
    }
    let fused_binning = coarsest_binning(&config.sources.iter().map(|&s| config.binning(s)).collect::<Vec<_>>())?;
    let fused: Vec<(String, Vec<FusedDecision>)> = by_method.into_iter().collect();
    Ok(pl::recall_curves(&inputs.events, &inputs.zones, &detections, &fused, fused_binning, &inputs.stop_zone(), config, period)?)
}

fn optional<T>(r: Result<T>) -> Option<T> {
    r.ok()
}

fn eval_period(c: &Common, inputs: &pl::Inputs, config: &PipelineConfig) -> Result<(chrono::NaiveDate, chrono::NaiveDate)> {
    match config.calendar().period {
        Some(p) => Ok(p),
        None => {
            let series = read_series_file(c.out_dir());
            match series.ok().and_then(|s| pl::series_period(&s)) {
                Some(p) => Ok(p),
                None => pl::common_period(inputs, config).context("no observation period: run `ingest` first"),
            }
        }
    }
}

pub fn eval(args: &EvalArgs) -> Result<Outcome> {
    let c = &args.common;
    let mut config = c.load_config()?;
    if let Some(grid_text) = &args.radii {
        let grid = parse_grid(grid_text)?;
        config.radius_start_m = grid[0];
        config.radius_end_m = *grid.last().expect("non-empty grid");
        config.radius_step_m = if grid.len() > 1 { grid[1] - grid[0] } else { 1.0 };
    }
    if !args.offset.is_empty() {
        config.offsets = args.offset.clone();
    }
    config.validate()?;
    let inputs = pl::load_inputs(&c.data)?;
    if inputs.events.is_empty() {
        bail!("no ground-truth events in {}", c.data.display());
    }
    let decisions = optional(read_decisions_file(c.out_dir()));
    let fused = optional(read_fused_file(c.out_dir()));
    if decisions.is_none() && fused.is_none() {
        bail!("neither {} nor {} found; run `detect` or `fuse` first", pl::DECISIONS_FILE, pl::FUSED_FILE);
    }
    let period = eval_period(c, &inputs, &config)?;
    let curves = eval_curves(&inputs, &config, decisions, fused, period)?;
    let path = write(c.out_dir().join(pl::RECALL_FILE), |w| evaluate::write_curves(w, &curves))?;
    let points = curves.first().map_or(0, |c| c.points.len());
    Ok(Outcome { files: vec![path], summary: format!("{} curves of {points} points", curves.len()) })
}

pub fn sweep(args: &SweepArgs) -> Result<Outcome> {
    let c = &args.common;
    let mut config = c.load_config()?;
    let fusion = FusionArgs { method: args.method.clone(), score_threshold: None, k: args.k, sources: args.sources.clone() };
    let policies = fusion_setup(&mut config, &fusion)?;
    let radii = match &args.radii {
        Some(grid_text) => parse_grid(grid_text)?,
        None => config.radii()?,
    };
    let thresholds = args.thresholds.clone().unwrap_or_else(|| config.sweep_thresholds.clone());
    if thresholds.iter().any(|s| !(0.0..=1.0).contains(s)) {
        bail!("thresholds must lie in [0, 1]");
    }
    let offset = args.offset.unwrap_or(config.offsets[0]);
    let inputs = pl::load_inputs(&c.data)?;
    let series = read_series_file(c.out_dir())?;
    let scoring = score_series(&series, &read_models_file(c.out_dir())?);
    let table = pl::align(&scoring, &config, &config.sources, &inputs.stop_zone())?;
    let period = eval_period(c, &inputs, &config)?;
    let cells = evaluate::sweep(&inputs.events, &table, &inputs.zones, &policies, &radii, &thresholds, offset, period)?;
    let path = write(c.out_dir().join(pl::SWEEP_FILE), |w| evaluate::write_sweep(w, &cells))?;
    Ok(Outcome { files: vec![path], summary: format!("{} cells", cells.len()) })
}

pub fn granger(args: &GrangerArgs) -> Result<Outcome> {
    let c = &args.common;
    let config = c.load_config()?;
    let lag = args.lag.unwrap_or(config.granger_lag);
    if lag == 0 {
        bail!("lag must be positive");
    }
    let inputs = pl::load_inputs(&c.data)?;
    let series = read_series_file(c.out_dir())?;
    let sources = match &args.sources {
        Some(list) => parse_sources(list)?,
        None => series.keys().map(|k| k.source).collect::<BTreeSet<_>>().into_iter().collect(),
    };
    let zones: Vec<String> = match &args.zones {
        Some(z) => {
            for id in z {
                if inputs.zones.get(id).is_none() {
                    bail!("unknown zone `{id}`");
                }
            }
            z.clone()
        }
        None => inputs.zones.ids().map(String::from).collect(),
    };
    let report = pl::granger_by_zone(&series, &zones, &sources, &config, &inputs.stop_zone(), lag)?;
    let out = c.out_dir();
    let a = write(out.join(pl::GRANGER_FILE), |w| eventscope::stats::write_granger(w, &report.results))?;
    let b = write(out.join(pl::GRANGER_SUMMARY_FILE), |w| eventscope::stats::write_granger_summary(w, &report.summary))?;
    Ok(Outcome {
        files: vec![a, b],
        summary: format!("{} tests, {} skipped pairs (F-test, lag {lag})", report.results.len(), report.failures.len()),
    })
}

pub fn normality(c: &Common) -> Result<Outcome> {
    let series = read_series_file(c.out_dir())?;
    let results = normality_diagnostics(&series);
    let path = write(c.out_dir().join(pl::NORMALITY_FILE), |w| pl::write_normality(w, &results))?;
    let summary = eventscope::normalcy::normality_summary(&results, 0.05)
        .iter()
        .map(|(s, (n, frac))| format!("{s}: {:.1}% of {n} normal", 100.0 * frac))
        .collect::<Vec<_>>()
        .join(", ");
    Ok(Outcome { files: vec![path], summary })
}

pub fn annotate(args: &AnnotateArgs) -> Result<Outcome> {
    let c = &args.common;
    let config = c.load_config()?;
    let k = args.k.unwrap_or(config.annotate_k);
    if k == 0 {
        bail!("k must be positive");
    }
    let inputs = pl::load_inputs(&c.data)?;
    let fused = read_fused_file(c.out_dir())?;
    let binning = coarsest_binning(&config.sources.iter().map(|&s| config.binning(s)).collect::<Vec<_>>())?;
    let corpus = pl::corpus(&inputs, binning);
    let rows = pl::annotate_flagged(&corpus, &[(String::new(), fused)], k);
    let path = write(c.out_dir().join(pl::ANNOTATIONS_FILE), |w| pl::write_annotations(w, &rows))?;
    Ok(Outcome { files: vec![path], summary: format!("{} terms over {} documents", rows.len(), corpus.docs.len()) })
}

/// A data problem with a written report the user should read.
#[derive(Debug)]
pub struct DataError {
    pub message: String,
    pub report: PathBuf,
}

impl std::fmt::Display for DataError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.message)
    }
}

impl std::error::Error for DataError {}
