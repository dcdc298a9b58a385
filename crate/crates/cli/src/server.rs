//! Read-mostly HTTP API over an immutable, atomically swapped snapshot.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;
use std::sync::{Arc, RwLock};

use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, put};
use axum::{Json, Router};
use chrono::{Datelike, NaiveDate};
use serde::Deserialize;
use serde_json::{json, Value};

use eventscope::annotate::{tfidf_top_k, Cell, DocCorpus};
use eventscope::detect::{AnomalyDecision, Detector};
use eventscope::evaluate::{hits_from_decisions, hits_from_fused, nearest_hit, recall_curve, Hit};
use eventscope::fuse::{fuse, AlignedTable, FusedDecision, FusionMethod, FusionPolicy};
use eventscope::pipeline::{self as pl, Analysis, Inputs, PipelineConfig};
use eventscope::{Binning, Daytype, Source};

use crate::commands::{load_config, ServeArgs};

/// Per-source results shared by every snapshot version.
pub struct Base {
    pub inputs: Inputs,
    pub analysis: Analysis,
    pub corpus: DocCorpus,
    pub zones_geojson: Value,
}

/// One immutable view of the results.
pub struct Snapshot {
    pub version: u64,
    pub config: PipelineConfig,
    pub enabled: Vec<Source>,
    pub base: Arc<Base>,
    pub table: AlignedTable,
    pub policies: Vec<(String, FusionPolicy)>,
    pub fused: Vec<(String, Vec<FusedDecision>)>,
}

pub struct AppState {
    current: RwLock<Arc<Snapshot>>,
    /// Held while a re-fusion builds its snapshot.
    pub refusion: tokio::sync::Mutex<()>,
}

impl AppState {
    pub fn load(data_dir: &Path, config: PipelineConfig) -> anyhow::Result<Self> {
        let inputs = pl::load_inputs(data_dir)?;
        let analysis = pl::run(&inputs, &config)?;
        let corpus = pl::corpus(&inputs, analysis.table.binning);
        let zones_geojson = inputs.zones.to_geojson();
        let table = analysis.table.clone();
        let fused = analysis.fused.clone();
        let base = Arc::new(Base { inputs, analysis, corpus, zones_geojson });
        let snapshot = Snapshot {
            version: 1,
            enabled: config.sources.clone(),
            policies: config.policies(),
            config,
            base,
            table,
            fused,
        };
        Ok(AppState { current: RwLock::new(Arc::new(snapshot)), refusion: tokio::sync::Mutex::new(()) })
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.current.read().expect("snapshot lock").clone()
    }

    fn swap(&self, next: Snapshot) {
        *self.current.write().expect("snapshot lock") = Arc::new(next);
    }
}

/// Builds the snapshot that fuses over `enabled` only.
pub fn refuse(prev: &Snapshot, enabled: Vec<Source>) -> Result<Snapshot, String> {
    let base = prev.base.clone();
    let set: BTreeSet<Source> = enabled.iter().copied().collect();
    let policies: Vec<(String, FusionPolicy)> =
        prev.config.policies().into_iter().map(|(l, p)| (l, p.restricted_to(&set))).collect();
    for (_, p) in &policies {
        p.validate().map_err(|e| e.to_string())?;
    }
    let a = &base.analysis;
    let table = pl::align(&a.scoring, &prev.config, &enabled, &a.stop_zone).map_err(|e| e.to_string())?;
    let fused = pl::fuse_all(&table, &policies).map_err(|e| e.to_string())?;
    Ok(Snapshot { version: prev.version + 1, config: prev.config.clone(), enabled, base, table, policies, fused })
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/zones", get(zones))
        .route("/anomalies", get(anomalies))
        .route("/fused", get(fused))
        .route("/recall", get(recall))
        .route("/sunburst", get(sunburst))
        .route("/annotations", get(annotations))
        .route("/events", get(events))
        .route("/config/sources", put(put_sources))
        .with_state(state)
}

pub async fn serve(args: &ServeArgs) -> anyhow::Result<()> {
    let config = load_config(args.config.as_deref())?;
    let data_dir = args.data_dir.clone();
    let state = tokio::task::spawn_blocking(move || AppState::load(&data_dir, config)).await??;
    let listener = tokio::net::TcpListener::bind(("0.0.0.0", args.port)).await?;
    eprintln!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(Arc::new(state))).await?;
    Ok(())
}

pub struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

fn bad(msg: impl Into<String>) -> ApiError {
    ApiError(StatusCode::BAD_REQUEST, msg.into())
}

fn not_found(msg: impl Into<String>) -> ApiError {
    ApiError(StatusCode::NOT_FOUND, msg.into())
}

type Params = Query<HashMap<String, String>>;
type ApiResult = Result<Json<Value>, ApiError>;

fn param<T: std::str::FromStr>(q: &HashMap<String, String>, name: &str) -> Result<Option<T>, ApiError>
where
    T::Err: std::fmt::Display,
{
    q.get(name).map(|v| v.parse::<T>().map_err(|e| bad(format!("{name}: {e}")))).transpose()
}

fn date_param(q: &HashMap<String, String>, snap: &Snapshot) -> Result<Option<NaiveDate>, ApiError> {
    let Some(date) = param::<NaiveDate>(q, "date")? else {
        return Ok(None);
    };
    match snap.base.analysis.period {
        Some((a, b)) if date >= a && date <= b => Ok(Some(date)),
        _ => Err(not_found(format!("date {date} outside the observation period"))),
    }
}

fn zone_param(q: &HashMap<String, String>, snap: &Snapshot) -> Result<Option<String>, ApiError> {
    match q.get("zone") {
        Some(z) if snap.base.inputs.zones.get(z).is_none() => Err(not_found(format!("unknown zone `{z}`"))),
        other => Ok(other.cloned()),
    }
}

fn detector_decisions(snap: &Snapshot, detector: Detector) -> Result<&[AnomalyDecision], ApiError> {
    snap.base
        .analysis
        .detections
        .by_detector
        .get(&detector)
        .map(Vec::as_slice)
        .ok_or_else(|| not_found(format!("detector {detector} was not run")))
}

fn zone_of<'a>(snap: &'a Snapshot, d: &'a AnomalyDecision) -> Option<&'a str> {
    if d.key.source == Source::Bus {
        snap.base.analysis.stop_zone.get(&d.key.location_id).map(String::as_str)
    } else {
        Some(&d.key.location_id)
    }
}

fn window_label(b: Binning, bin: u32) -> String {
    let (s, e) = b.window(bin);
    format!("{:02}:{:02}-{:02}:{:02}", s / 60, s % 60, e / 60, e % 60)
}

async fn zones(State(state): State<Arc<AppState>>) -> Json<Value> {
    Json(state.snapshot().base.zones_geojson.clone())
}

async fn anomalies(State(state): State<Arc<AppState>>, Query(q): Params) -> ApiResult {
    let snap = state.snapshot();
    let detector = param::<Detector>(&q, "detector")?.unwrap_or(Detector::Zscore);
    let source = param::<Source>(&q, "source")?;
    let date = date_param(&q, &snap)?;
    let cfg = &snap.config;
    let rows: Vec<Value> = detector_decisions(&snap, detector)?
        .iter()
        .filter(|d| d.is_anomaly && source.is_none_or(|s| d.key.source == s) && date.is_none_or(|x| d.date == x))
        .map(|d| {
            let (start, end) = cfg.binning(d.key.source).window(d.key.bin_of_day);
            json!({
                "source": d.key.source,
                "location_id": d.key.location_id,
                "zone_id": zone_of(&snap, d),
                "date": d.date,
                "bin_of_day": d.key.bin_of_day,
                "window_start_min": start,
                "window_end_min": end,
                "score": d.score,
                "direction": d.direction,
            })
        })
        .collect();
    Ok(Json(json!({ "version": snap.version, "detector": detector, "count": rows.len(), "anomalies": rows })))
}

/// The snapshot's policy for `method` with optional S and k overrides.
fn policy_for(snap: &Snapshot, q: &HashMap<String, String>) -> Result<FusionPolicy, ApiError> {
    let method = param::<FusionMethod>(q, "method")?.unwrap_or(FusionMethod::Majority);
    let mut policy = snap
        .policies
        .iter()
        .find(|(_, p)| p.method == method)
        .map(|(_, p)| p.clone())
        .ok_or_else(|| not_found(format!("no {method} policy")))?;
    if let Some(s) = param::<f64>(q, "S")? {
        policy.score_threshold = s;
    }
    if let Some(k) = param::<usize>(q, "k")? {
        policy.k = k;
    }
    policy.validate().map_err(|e| bad(e.to_string()))?;
    Ok(policy)
}

async fn fused(State(state): State<Arc<AppState>>, Query(q): Params) -> ApiResult {
    let snap = state.snapshot();
    let policy = policy_for(&snap, &q)?;
    let decisions = fuse(&snap.table, &policy).map_err(|e| bad(e.to_string()))?;
    let rows: Vec<Value> = decisions
        .iter()
        .filter(|d| d.is_anomaly)
        .map(|d| {
            json!({
                "zone_id": d.zone_id,
                "date": d.date,
                "bin_of_day": d.bin_of_day,
                "fused_score": d.fused_score,
                "votes": d.votes,
                "sources": d.contributing_sources,
            })
        })
        .collect();
    Ok(Json(json!({
        "version": snap.version,
        "method": policy.method,
        "S": policy.score_threshold,
        "k": policy.k,
        "n": policy.n_required,
        "sources": policy.sources,
        "binning": snap.table.binning.label(),
        "cells": decisions.len(),
        "count": rows.len(),
        "decisions": rows,
    })))
}

/// Hits for a curve label: a fusion method, `SOURCE/DETECTOR` or
/// `ANY/DETECTOR`.
fn hits_for(snap: &Snapshot, method: &str) -> Result<(String, Vec<Hit>), ApiError> {
    let cfg = &snap.config;
    if let Ok(m) = method.parse::<FusionMethod>() {
        let (label, decisions) = snap
            .policies
            .iter()
            .find(|(_, p)| p.method == m)
            .and_then(|(l, _)| snap.fused.iter().find(|(fl, _)| fl == l))
            .ok_or_else(|| not_found(format!("no fused results for {m}")))?;
        return Ok((pl::fused_label(label), hits_from_fused(decisions, snap.table.binning)));
    }
    let (who, det) = method.split_once('/').ok_or_else(|| bad(format!("unknown method `{method}`")))?;
    let detector: Detector = det.parse().map_err(|e: String| bad(e))?;
    let decisions = detector_decisions(snap, detector)?;
    let stop_zone = &snap.base.analysis.stop_zone;
    if who.eq_ignore_ascii_case("any") {
        return Ok((pl::union_label(detector), hits_from_decisions(decisions, |s| cfg.binning(s), stop_zone)));
    }
    let source: Source = who.parse().map_err(|e: String| bad(e))?;
    let own: Vec<AnomalyDecision> = decisions.iter().filter(|d| d.key.source == source).cloned().collect();
    Ok((pl::source_label(source, detector), hits_from_decisions(&own, |s| cfg.binning(s), stop_zone)))
}

async fn recall(State(state): State<Arc<AppState>>, Query(q): Params) -> ApiResult {
    let snap = state.snapshot();
    let offset = param::<i32>(&q, "offset")?.unwrap_or(0);
    let radii = match param::<f64>(&q, "R")? {
        Some(r) if r.is_finite() && r >= 0.0 => vec![r],
        Some(r) => return Err(bad(format!("R must be a non-negative number, got {r}"))),
        None => snap.config.radii().map_err(|e| bad(e.to_string()))?,
    };
    let method = q.get("method").map(String::as_str).unwrap_or("majority");
    let (label, hits) = hits_for(&snap, method)?;
    let base = &snap.base;
    let period = base.analysis.period.ok_or_else(|| not_found("no observations"))?;
    if base.inputs.events.is_empty() {
        return Err(not_found("no ground-truth events"));
    }
    let curve = recall_curve(&label, &base.inputs.events, &hits, &base.inputs.zones, &radii, offset, period)
        .map_err(|e| not_found(e.to_string()))?;
    let points: Vec<Value> = curve.points.iter().map(|(r, v)| json!({ "R": r, "recall": v })).collect();
    let mut body = json!({
        "version": snap.version,
        "label": curve.label,
        "offset_hours": offset,
        "eligible": curve.eligible,
        "excluded": curve.excluded,
        "points": points,
    });
    if radii.len() == 1 {
        body["recall"] = json!(curve.points[0].1);
    }
    Ok(Json(body))
}

async fn sunburst(State(state): State<Arc<AppState>>, Query(q): Params) -> ApiResult {
    let snap = state.snapshot();
    let detector = param::<Detector>(&q, "detector")?.unwrap_or(Detector::Zscore);
    type Tree = BTreeMap<String, BTreeMap<Daytype, BTreeMap<String, BTreeMap<String, u64>>>>;
    let mut tree: Tree = BTreeMap::new();
    let mut total = 0u64;
    for d in detector_decisions(&snap, detector)?.iter().filter(|d| d.is_anomaly) {
        let month = format!("{:04}-{:02}", d.date.year(), d.date.month());
        let bin = window_label(snap.config.binning(d.key.source), d.key.bin_of_day);
        let zone = zone_of(&snap, d).unwrap_or(&d.key.location_id).to_string();
        *tree.entry(month).or_default().entry(d.key.daytype).or_default().entry(bin).or_default().entry(zone).or_default() += 1;
        total += 1;
    }
    let node = |name: String, children: Vec<Value>| {
        let value: u64 = children.iter().map(|c| c["value"].as_u64().unwrap_or(0)).sum();
        json!({ "name": name, "value": value, "children": children })
    };
    let months = tree
        .into_iter()
        .map(|(m, days)| {
            let days = days
                .into_iter()
                .map(|(dt, bins)| {
                    let bins = bins
                        .into_iter()
                        .map(|(b, zones)| {
                            let leaves = zones.into_iter().map(|(z, n)| json!({ "name": z, "value": n })).collect();
                            node(b, leaves)
                        })
                        .collect();
                    node(dt.to_string(), bins)
                })
                .collect();
            node(m, days)
        })
        .collect();
    let mut root = node("anomalies".into(), months);
    root["version"] = json!(snap.version);
    root["detector"] = json!(detector);
    root["total"] = json!(total);
    Ok(Json(root))
}

async fn annotations(State(state): State<Arc<AppState>>, Query(q): Params) -> ApiResult {
    let snap = state.snapshot();
    let zone = zone_param(&q, &snap)?.ok_or_else(|| bad("zone is required"))?;
    let date = date_param(&q, &snap)?.ok_or_else(|| bad("date is required"))?;
    let binning = snap.base.analysis.table.binning;
    let bin = param::<u32>(&q, "bin")?.ok_or_else(|| bad("bin is required"))?;
    if bin >= binning.bins_per_day() {
        return Err(bad(format!("bin {bin} outside {}", binning.label())));
    }
    let k = param::<usize>(&q, "k")?.unwrap_or(snap.config.annotate_k);
    if k == 0 {
        return Err(bad("k must be positive"));
    }
    let cell = Cell { zone_id: zone, date, bin_of_day: bin };
    let terms = if snap.base.corpus.docs.contains_key(&cell) {
        tfidf_top_k(&snap.base.corpus, &cell, k).map_err(|e| bad(e.to_string()))?
    } else {
        Vec::new()
    };
    Ok(Json(json!({
        "version": snap.version,
        "zone_id": cell.zone_id,
        "date": cell.date,
        "bin_of_day": cell.bin_of_day,
        "binning": binning.label(),
        "terms": terms,
    })))
}

async fn events(State(state): State<Arc<AppState>>, Query(q): Params) -> ApiResult {
    let snap = state.snapshot();
    let offset = param::<i32>(&q, "offset")?.unwrap_or(0);
    let detector = param::<Detector>(&q, "detector")?.unwrap_or(Detector::Zscore);
    let decisions = detector_decisions(&snap, detector)?;
    let cfg = &snap.config;
    let base = &snap.base;
    let sources: BTreeSet<Source> = decisions.iter().map(|d| d.key.source).collect();
    let per_source: Vec<(Source, Vec<Hit>)> = sources
        .into_iter()
        .map(|s| {
            let own: Vec<AnomalyDecision> = decisions.iter().filter(|d| d.key.source == s).cloned().collect();
            (s, hits_from_decisions(&own, |x| cfg.binning(x), &base.analysis.stop_zone))
        })
        .collect();
    let rows: Vec<Value> = base
        .inputs
        .events
        .iter()
        .map(|e| {
            let nearest: BTreeMap<String, Value> = per_source
                .iter()
                .map(|(s, hits)| {
                    let v = nearest_hit(e, hits, &base.inputs.zones, offset)
                        .map_or(Value::Null, |(h, d)| json!({ "zone_id": h.zone_id, "distance_m": d }));
                    (s.to_string(), v)
                })
                .collect();
            json!({
                "event_id": e.event_id,
                "name": e.name,
                "lat": e.venue.lat,
                "lon": e.venue.lon,
                "start": e.start,
                "end": e.end,
                "scale": e.scale,
                "nearest": nearest,
            })
        })
        .collect();
    Ok(Json(json!({ "version": snap.version, "detector": detector, "offset_hours": offset, "events": rows })))
}

#[derive(Deserialize)]
struct SourcesBody {
    enabled: Vec<String>,
}

async fn put_sources(State(state): State<Arc<AppState>>, body: Result<Json<SourcesBody>, axum::extract::rejection::JsonRejection>) -> ApiResult {
    let Json(body) = body.map_err(|e| bad(e.body_text()))?;
    let enabled: BTreeSet<Source> =
        body.enabled.iter().map(|s| s.parse::<Source>()).collect::<Result<_, _>>().map_err(bad)?;
    if enabled.is_empty() {
        return Err(bad("at least one source must stay enabled"));
    }
    let Ok(guard) = state.refusion.try_lock() else {
        return Err(ApiError(StatusCode::CONFLICT, "a re-fusion is already in progress".into()));
    };
    let prev = state.snapshot();
    let enabled: Vec<Source> = enabled.into_iter().collect();
    let next = tokio::task::spawn_blocking(move || refuse(&prev, enabled))
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map_err(bad)?;
    let body = json!({ "version": next.version, "enabled": next.enabled, "binning": next.table.binning.label() });
    state.swap(next);
    drop(guard);
    Ok(Json(body))
}
