mod common;

use std::sync::{Arc, OnceLock};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use eventscope::evaluate::read_curves;
use eventscope::pipeline::{self as pl, PipelineConfig};
use eventscope::Source;
use eventscope_cli::server::{router, AppState};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use common::{cli, s, small_city};

struct Fixture {
    dir: tempfile::TempDir,
}

/// One simulated city shared by every test; states are built per test so
/// re-fusion in one test cannot leak into another.
fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        small_city(dir.path());
        Fixture { dir }
    })
}

fn state() -> Arc<AppState> {
    Arc::new(AppState::load(fixture().dir.path(), PipelineConfig::default()).unwrap())
}

async fn call(state: &Arc<AppState>, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req.header("content-type", "application/json").body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = router(state.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

async fn get(state: &Arc<AppState>, uri: &str) -> (StatusCode, Value) {
    call(state, "GET", uri, None).await
}

fn leaf_sum(node: &Value) -> u64 {
    match node.get("children").and_then(Value::as_array) {
        Some(children) => children.iter().map(leaf_sum).sum(),
        None => node["value"].as_u64().unwrap(),
    }
}

#[tokio::test]
async fn zones_are_geojson() {
    let st = state();
    let (code, body) = get(&st, "/zones").await;
    assert_eq!(code, StatusCode::OK);
    assert_eq!(body["type"], "FeatureCollection");
    assert_eq!(body["features"].as_array().unwrap().len(), 9);
}

#[tokio::test]
async fn sunburst_leaves_sum_to_the_total() {
    let st = state();
    for detector in ["ZSCORE", "IQR", "SHESD"] {
        let (code, body) = get(&st, &format!("/sunburst?detector={detector}")).await;
        assert_eq!(code, StatusCode::OK);
        let total = body["total"].as_u64().unwrap();
        assert!(total > 0, "{detector}");
        assert_eq!(leaf_sum(&body), total, "{detector}");
        assert_eq!(body["value"].as_u64().unwrap(), total);
    }
    let flagged = st.snapshot().base.analysis.detections.by_detector[&eventscope::detect::Detector::Zscore]
        .iter()
        .filter(|d| d.is_anomaly)
        .count() as u64;
    let (_, body) = get(&st, "/sunburst").await;
    assert_eq!(body["total"].as_u64().unwrap(), flagged);
    let month = &body["children"][0];
    assert_eq!(month["name"], "2017-06");
    let bin = &month["children"][0]["children"][0]["name"];
    assert!(bin.as_str().unwrap().contains('-'), "{bin}");
}

#[tokio::test]
async fn anomalies_filter_and_validate() {
    let st = state();
    let (code, body) = get(&st, "/anomalies?source=CDR&date=2017-06-14").await;
    assert_eq!(code, StatusCode::OK);
    let rows = body["anomalies"].as_array().unwrap();
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|r| r["source"] == "CDR" && r["date"] == "2017-06-14"));
    assert!(rows.iter().any(|r| r["zone_id"] == "Z0101"));

    let (code, _) = get(&st, "/anomalies?source=BUS").await;
    assert_eq!(code, StatusCode::OK);
    assert_eq!(get(&st, "/anomalies?source=PLANE").await.0, StatusCode::BAD_REQUEST);
    assert_eq!(get(&st, "/anomalies?date=2017-13-01").await.0, StatusCode::BAD_REQUEST);
    let (code, body) = get(&st, "/anomalies?date=2030-01-01").await;
    assert_eq!(code, StatusCode::NOT_FOUND);
    assert!(body["error"].is_string());
}

#[tokio::test]
async fn fused_on_demand_matches_the_snapshot() {
    let st = state();
    let (code, body) = get(&st, "/fused").await;
    assert_eq!(code, StatusCode::OK);
    assert_eq!(body["method"], "MAJORITY");
    assert_eq!(body["n"], 3);
    let snap = st.snapshot();
    let stored = &snap.fused.iter().find(|(l, _)| l == "majority").unwrap().1;
    assert_eq!(body["count"].as_u64().unwrap() as usize, stored.iter().filter(|d| d.is_anomaly).count());

    let (_, strict) = get(&st, "/fused?method=weighted&S=0.95").await;
    let (_, loose) = get(&st, "/fused?method=weighted&S=0.1").await;
    assert!(strict["count"].as_u64() <= loose["count"].as_u64());
    assert_eq!(get(&st, "/fused?k=9").await.0, StatusCode::BAD_REQUEST);
    assert_eq!(get(&st, "/fused?S=abc").await.0, StatusCode::BAD_REQUEST);
    assert_eq!(get(&st, "/fused?method=median").await.0, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn recall_matches_the_command_line() {
    let st = state();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let data = s(fixture().dir.path());
    for args in [
        vec!["ingest", "--data", data, "--out", s(out)],
        vec!["fit", "--data", data, "--out", s(out)],
        vec!["detect", "--data", data, "--out", s(out)],
        vec!["fuse", "--data", data, "--out", s(out)],
        vec!["eval", "--data", data, "--out", s(out), "--R", "0:4000:250", "--offset", "0", "--offset", "-1"],
    ] {
        assert_eq!(cli(&args), 0, "{args:?}");
    }
    let curves = read_curves(std::fs::File::open(out.join(pl::RECALL_FILE)).unwrap()).unwrap().records;
    for (method, label) in [("majority", "fused/majority"), ("weighted", "fused/weighted"), ("CDR/ZSCORE", "CDR/ZSCORE"), ("ANY/SHESD", "ANY/SHESD")] {
        for offset in [0, -1] {
            let want = curves.iter().find(|r| r.0 == label && r.1 == offset && r.2 == 1500.0).unwrap().3;
            let (code, body) = get(&st, &format!("/recall?R=1500&offset={offset}&method={method}")).await;
            assert_eq!(code, StatusCode::OK, "{body}");
            assert_eq!(body["recall"].as_f64().unwrap(), want, "{label} {offset}");
            assert_eq!(body["label"], label);
        }
    }
    let (_, body) = get(&st, "/recall?method=ANY/ZSCORE&offset=-1").await;
    assert_eq!(body["points"].as_array().unwrap().len(), 17);
    assert_eq!(get(&st, "/recall?R=-5").await.0, StatusCode::BAD_REQUEST);
    assert_eq!(get(&st, "/recall?method=nothing").await.0, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn annotations_and_events() {
    let st = state();
    let (code, body) = get(&st, "/annotations?zone=Z0101&date=2017-06-14&bin=20").await;
    assert_eq!(code, StatusCode::OK, "{body}");
    let terms = body["terms"].as_array().unwrap();
    assert!(terms.iter().any(|t| t["term"] == "britneyspearslive"), "{body}");
    let snap = st.snapshot();
    let (start, _) = snap.base.analysis.period.unwrap();
    let empty = (0..24)
        .map(|bin| eventscope::annotate::Cell { zone_id: "Z0000".into(), date: start, bin_of_day: bin })
        .find(|c| !snap.base.corpus.docs.contains_key(c))
        .expect("some quiet hour");
    let (code, body) = get(&st, &format!("/annotations?zone=Z0000&date={start}&bin={}", empty.bin_of_day)).await;
    assert_eq!(code, StatusCode::OK);
    assert_eq!(body["terms"], json!([]));
    assert_eq!(get(&st, "/annotations?zone=Z0101&date=2017-06-14").await.0, StatusCode::BAD_REQUEST);
    assert_eq!(get(&st, "/annotations?zone=Z0101&date=2017-06-14&bin=99").await.0, StatusCode::BAD_REQUEST);
    assert_eq!(get(&st, "/annotations?zone=Z9999&date=2017-06-14&bin=1").await.0, StatusCode::NOT_FOUND);
    assert_eq!(get(&st, "/annotations?zone=Z0101&date=2016-01-01&bin=1").await.0, StatusCode::NOT_FOUND);

    let (code, body) = get(&st, "/events?offset=-1").await;
    assert_eq!(code, StatusCode::OK);
    let events = body["events"].as_array().unwrap();
    assert_eq!(events.len(), 1);
    let cdr = &events[0]["nearest"]["CDR"];
    assert_eq!(cdr["zone_id"], "Z0101", "{body}");
    assert!(cdr["distance_m"].as_f64().unwrap() < 1.0);
}

#[tokio::test]
async fn source_toggle_refuses_and_bumps_the_version() {
    let st = state();
    let before = get(&st, "/anomalies?detector=ZSCORE").await.1;
    let (code, body) = call(&st, "PUT", "/config/sources", Some(json!({ "enabled": ["CDR", "BUS"] }))).await;
    assert_eq!(code, StatusCode::OK, "{body}");
    assert_eq!(body["version"], 2);
    assert_eq!(body["enabled"], json!(["CDR", "BUS"]));

    let (_, fused) = get(&st, "/fused?method=majority&k=2").await;
    assert_eq!(fused["n"], 2);
    assert_eq!(fused["sources"], json!(["CDR", "BUS"]));
    assert_eq!(fused["version"], 2);
    assert!(fused["decisions"]
        .as_array()
        .unwrap()
        .iter()
        .all(|d| d["votes"].as_u64().unwrap() >= 2 && !d["sources"].as_array().unwrap().contains(&json!("CHECKIN"))));
    assert_eq!(get(&st, "/fused?method=majority&k=3").await.0, StatusCode::BAD_REQUEST);

    // per-source decisions do not depend on the enabled set
    let mut after = get(&st, "/anomalies?detector=ZSCORE").await.1;
    assert_eq!(after["version"], 2);
    after["version"] = before["version"].clone();
    assert_eq!(after, before);

    let snap = st.snapshot();
    assert!(snap.table.cells.iter().all(|c| !c.scores.contains_key(&Source::Checkin)));

    assert_eq!(call(&st, "PUT", "/config/sources", Some(json!({ "enabled": [] }))).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(call(&st, "PUT", "/config/sources", Some(json!({ "enabled": ["CDR", "UFO"] }))).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(call(&st, "PUT", "/config/sources", Some(json!({ "nope": 1 }))).await.0, StatusCode::BAD_REQUEST);
    // k = 2 cannot be met with one source
    assert_eq!(call(&st, "PUT", "/config/sources", Some(json!({ "enabled": ["CDR"] }))).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(st.snapshot().version, 2);
}

#[tokio::test]
async fn concurrent_refusion_is_a_conflict() {
    let st = state();
    let guard = st.refusion.lock().await;
    let (code, body) = call(&st, "PUT", "/config/sources", Some(json!({ "enabled": ["CDR", "BUS"] }))).await;
    assert_eq!(code, StatusCode::CONFLICT, "{body}");
    // reads continue on the old snapshot
    let (code, fused) = get(&st, "/fused").await;
    assert_eq!(code, StatusCode::OK);
    assert_eq!(fused["version"], 1);
    drop(guard);
    let (code, _) = call(&st, "PUT", "/config/sources", Some(json!({ "enabled": ["CDR", "BUS"] }))).await;
    assert_eq!(code, StatusCode::OK);
}

#[tokio::test]
async fn repeated_reads_are_identical() {
    let st = state();
    for uri in ["/zones", "/anomalies?source=TAXI_DROPOFF", "/fused?method=mean", "/recall?method=weighted", "/sunburst", "/events"] {
        let (c1, a) = get(&st, uri).await;
        let (c2, b) = get(&st, uri).await;
        assert_eq!(c1, StatusCode::OK, "{uri}");
        assert_eq!((c1, a), (c2, b), "{uri}");
    }
}
