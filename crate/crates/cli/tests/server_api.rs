//! The HTTP API, driven in-process.

mod common;

use std::fs;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use ctpack::server::router;
use ctpack::session::{Session, TiersSidecar};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req.header("content-type", "application/json").body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

fn api_session(out: &std::path::Path) -> Session {
    Session::open(out, Some(common::scan().settings())).unwrap()
}

fn alignment_json() -> Value {
    serde_json::to_value(common::scan().truth.alignment).unwrap()
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn decisions_through_api_match_config_byte_for_byte() {
    let scan = common::scan();
    let via_config = tempfile::tempdir().unwrap();
    let mut s = scan.session(via_config.path(), true);
    s.run(ctpack::Step::Surface).unwrap();

    let via_api = tempfile::tempdir().unwrap();
    let app = router(api_session(via_api.path()));
    let (st, _) = call(&app, "POST", "/api/alignment", Some(alignment_json())).await;
    assert_eq!(st, StatusCode::OK);
    let t = &scan.truth.thresholds;
    let (st, _) = call(
        &app,
        "POST",
        "/api/thresholds",
        Some(json!({"a_divider": t.a_divider, "b_divider": t.b_divider, "a_object": t.a_object})),
    )
    .await;
    assert_eq!(st, StatusCode::OK);
    let (st, report) = call(&app, "POST", "/api/run", Some(json!({}))).await;
    assert_eq!(st, StatusCode::OK, "{report}");
    assert_eq!(report["meshes"].as_array().unwrap().len(), 30);

    for sub in ["decisions", "meta", "meshes", "subvolumes"] {
        let a = common::tree_bytes(&via_config.path().join(sub));
        let b = common::tree_bytes(&via_api.path().join(sub));
        assert!(!a.is_empty());
        assert_eq!(a.iter().map(|f| &f.0).collect::<Vec<_>>(), b.iter().map(|f| &f.0).collect::<Vec<_>>());
        for (fa, fb) in a.iter().zip(&b) {
            assert!(fa.1 == fb.1, "{sub}/{} differs", fa.0);
        }
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn histogram_and_z_profile_views() {
    let out = tempfile::tempdir().unwrap();
    let app = router(api_session(out.path()));
    let (st, err) = call(&app, "GET", "/api/histogram", None).await;
    assert_eq!(st, StatusCode::CONFLICT, "{err}");

    call(&app, "POST", "/api/alignment", Some(alignment_json())).await;
    let (st, _) = call(&app, "POST", "/api/run", Some(json!({"through": "subsample"}))).await;
    assert_eq!(st, StatusCode::OK);

    let (st, h) = call(&app, "GET", "/api/histogram?bins=500", None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(h["counts"].as_array().unwrap().len(), 500);
    assert_eq!(h["edges"].as_array().unwrap().len(), 501);
    let total: u64 = h["counts"].as_array().unwrap().iter().map(|c| c.as_u64().unwrap()).sum();
    assert_eq!(total, 225 * 225 * 80);
    let (_, h2) = call(&app, "GET", "/api/histogram?bins=64", None).await;
    assert_eq!(h2["counts"].as_array().unwrap().len(), 64);

    let (st, view) = call(&app, "GET", "/api/z-profile", None).await;
    assert_eq!(st, StatusCode::OK);
    let t = &common::scan().truth.thresholds;
    call(
        &app,
        "POST",
        "/api/thresholds",
        Some(json!({"a_divider": t.a_divider, "b_divider": t.b_divider})),
    )
    .await;
    let (st, _) = call(&app, "POST", "/api/run", Some(json!({"through": "tiers"}))).await;
    assert_eq!(st, StatusCode::OK);
    let recorded: TiersSidecar =
        serde_json::from_str(&fs::read_to_string(out.path().join("meta/tiers.json")).unwrap()).unwrap();
    let shown: TiersSidecar = serde_json::from_value(view).unwrap();
    assert_eq!(shown, recorded);
    assert_eq!(shown.profile.len(), 80);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn previews_and_divider_view() {
    let out = tempfile::tempdir().unwrap();
    let app = router(api_session(out.path()));
    let (st, v) = call(&app, "GET", "/api/slice?z=400", None).await;
    assert_eq!(st, StatusCode::OK, "{v}");
    assert_eq!((v["image"]["width"].as_u64(), v["image"]["height"].as_u64()), (Some(300), Some(300)));
    assert_eq!(v["alignment"]["angle_deg"].as_f64(), Some(0.0));

    let a = common::scan().truth.alignment;
    let uri = format!(
        "/api/slice?z=1&angle={}&row0={}&row1={}&col0={}&col1={}&max=64",
        a.angle_deg, a.row_range.0, a.row_range.1, a.col_range.0, a.col_range.1
    );
    let (st, v) = call(&app, "GET", &uri, None).await;
    assert_eq!(st, StatusCode::OK, "{v}");
    let (w, h) = (v["image"]["width"].as_u64().unwrap(), v["image"]["height"].as_u64().unwrap());
    assert!(w.max(h) == 64);
    assert!(!v["image"]["png_base64"].as_str().unwrap().is_empty());
    // trial alignments are not recorded
    assert!(!out.path().join("decisions/alignment.txt").exists());

    let (st, _) = call(&app, "GET", "/api/slice?z=0", None).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
    let (st, _) = call(&app, "GET", "/api/slice?z=1&angle=2", None).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);

    let t = &common::scan().truth.thresholds;
    call(&app, "POST", "/api/alignment", Some(alignment_json())).await;
    call(&app, "POST", "/api/thresholds", Some(json!({"a_divider": t.a_divider, "b_divider": t.b_divider}))).await;
    call(&app, "POST", "/api/run", Some(json!({"through": "tiers"}))).await;
    let (st, d) = call(&app, "GET", "/api/divider?tier=2", None).await;
    assert_eq!(st, StatusCode::OK, "{d}");
    assert_eq!(d["grid"]["tier"].as_u64(), Some(2));
    assert_eq!(d["grid"]["cuts"]["row_cuts"].as_array().unwrap().len(), 4);
    let (st, _) = call(&app, "GET", "/api/divider?tier=9", None).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn api_rejects_bad_decisions_and_reports_state() {
    let out = tempfile::tempdir().unwrap();
    let app = router(api_session(out.path()));
    let (st, _) = call(&app, "POST", "/api/thresholds", Some(json!({"a_divider": 9, "b_divider": 3}))).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
    let (st, _) = call(
        &app,
        "POST",
        "/api/alignment",
        Some(json!({"angle_deg": 1.0, "row_range": [0, 5000], "col_range": [0, 10]})),
    )
    .await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
    let (st, _) = call(&app, "POST", "/api/tiers", Some(json!({"cuts": [10]}))).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
    let (st, err) = call(&app, "POST", "/api/run", Some(json!({}))).await;
    assert_eq!(st, StatusCode::CONFLICT);
    assert!(err["error"].as_str().unwrap().contains("align"), "{err}");

    let (st, v) = call(&app, "GET", "/api/session", None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(v["state"]["steps"]["align"]["status"], "pending");
    assert_eq!(v["layout"]["tiers"].as_array().unwrap().len(), 3);
    assert!(v["thresholds"].is_null());

    call(&app, "POST", "/api/tiers", Some(json!({"cuts": [20, 50]}))).await;
    let (_, v) = call(&app, "GET", "/api/session", None).await;
    assert_eq!(v["state"]["steps"]["tiers"]["status"], "ratified");
    assert_eq!(v["tier_cuts"], json!([20, 50]));
}
