use std::sync::Arc;
use std::time::Duration;

use axum::body::{to_bytes, Body};
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use serde_json::{json, Value};
use tower::ServiceExt;

use xqd_core::angle::to_degrees;
use xqd_core::codec;
use xqd_core::synth::{synthesize, Preset, SynthConfig};
use xqd_core::{evaluate_xqd_field, GridSpec, XqdModel};
use xqd_service::{load_snapshot, router, save_snapshot, AppState};

async fn send(
    app: &Router,
    method: Method,
    uri: &str,
    body: Option<Value>,
) -> (StatusCode, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header(header::CONTENT_TYPE, "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    (
        status,
        to_bytes(resp.into_body(), usize::MAX)
            .await
            .unwrap()
            .to_vec(),
    )
}

async fn send_json(
    app: &Router,
    method: Method,
    uri: &str,
    body: Option<Value>,
) -> (StatusCode, Value) {
    let (status, bytes) = send(app, method, uri, body).await;
    (
        status,
        serde_json::from_slice(&bytes).unwrap_or(Value::Null),
    )
}

async fn create(app: &Router, cols: usize, rows: usize, spacing: u32) -> String {
    let body = json!({ "grid": { "cols": cols, "rows": rows, "spacing_px": spacing } });
    let (status, v) = send_json(app, Method::POST, "/sessions", Some(body)).await;
    assert_eq!(status, StatusCode::CREATED);
    v["id"].as_str().unwrap().to_string()
}

fn setup() -> (Arc<AppState>, Router) {
    let state = AppState::new();
    (state.clone(), router(state))
}

/// Loop-preset model without anchors and its full-grid marks.
fn synthetic(cols: usize, rows: usize, anchors: usize, seed: u64) -> (XqdModel, Vec<Value>) {
    let grid = GridSpec::new(cols, rows, 12).unwrap();
    let s = synthesize(&SynthConfig {
        preset: Preset::Loop,
        anchors,
        seed,
        grid,
    })
    .unwrap();
    let marks = s
        .field
        .foreground()
        .map(|(_, x, y, t)| json!({ "x": x, "y": y, "theta_deg": to_degrees(t) }))
        .collect();
    (s.model, marks)
}

async fn post_singular(app: &Router, id: &str, model: &XqdModel) {
    for (kind, pts) in [
        ("core", model.qd.cores_world()),
        ("delta", model.qd.deltas_world()),
    ] {
        for (x, y) in pts {
            let body = json!({ "kind": kind, "x": x, "y": y });
            let (status, _) = send_json(
                app,
                Method::POST,
                &format!("/sessions/{id}/singular-points"),
                Some(body),
            )
            .await;
            assert_eq!(status, StatusCode::OK);
        }
    }
}

#[tokio::test]
async fn create_sessions() {
    let (state, app) = setup();
    let a = create(&app, 4, 4, 12).await;
    let b = create(&app, 4, 4, 12).await;
    assert_ne!(a, b);
    assert_eq!(state.len(), 2);
    let (status, _) = send_json(&app, Method::POST, "/sessions", Some(json!({}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = send(&app, Method::POST, "/sessions", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let bad = json!({ "grid": { "cols": 0, "rows": 4, "spacing_px": 12 } });
    let (status, _) = send_json(&app, Method::POST, "/sessions", Some(bad)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn singular_point_limits() {
    let (_, app) = setup();
    let id = create(&app, 4, 4, 12).await;
    let uri = format!("/sessions/{id}/singular-points");
    let (status, v) = send_json(
        &app,
        Method::POST,
        &uri,
        Some(json!({ "kind": "core", "x": 10.0, "y": 12.0 })),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["cores"], 1);
    assert_eq!(v["deltas"], 0);
    for expected in [StatusCode::OK, StatusCode::OK, StatusCode::CONFLICT] {
        let (status, _) = send_json(
            &app,
            Method::POST,
            &uri,
            Some(json!({ "kind": "delta", "x": 1.0, "y": 2.0 })),
        )
        .await;
        assert_eq!(status, expected);
    }
    let (status, _) = send_json(
        &app,
        Method::POST,
        &uri,
        Some(json!({ "kind": "whorl", "x": 1.0, "y": 2.0 })),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = send_json(
        &app,
        Method::POST,
        "/sessions/nope/singular-points",
        Some(json!({ "kind": "core", "x": 1.0, "y": 2.0 })),
    )
    .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn marks_convert_degrees() {
    let (state, app) = setup();
    let id = create(&app, 4, 4, 12).await;
    let uri = format!("/sessions/{id}/marks");
    let body = json!([{ "x": 5.0, "y": 6.0, "theta_deg": 45.0 }, { "x": 7.0, "y": 8.0, "theta_deg": 180.0 }]);
    let (status, v) = send_json(&app, Method::POST, &uri, Some(body)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["marks"], 2);
    {
        let s = state.get(&id).unwrap();
        let s = s.read().await;
        assert!((s.marks[0].theta - std::f64::consts::FRAC_PI_4).abs() < 1e-15);
        assert_eq!(s.marks[1].theta, 0.0);
    }
    for bad in [
        json!([{ "x": 5.0, "y": 6.0, "theta_deg": "NaN" }]),
        json!([{ "x": 5.0, "y": 6.0 }]),
    ] {
        let (status, _) = send_json(&app, Method::POST, &uri, Some(bad)).await;
        assert_eq!(status, StatusCode::BAD_REQUEST);
    }
    let (status, _) = send(&app, Method::POST, &uri, Some(json!(null))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = send(&app, Method::POST, "/sessions/x/marks", Some(json!([]))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn fit_pure_model_then_inspect_and_export() {
    let (_, app) = setup();
    let (truth, marks) = synthetic(20, 20, 0, 3);
    let id = create(&app, 20, 20, 12).await;

    let (status, _) = send_json(
        &app,
        Method::POST,
        &format!("/sessions/{id}/fit"),
        Some(json!({ "strategy": "S1" })),
    )
    .await;
    assert_eq!(status, StatusCode::CONFLICT, "no marks yet");
    let (status, _) = send_json(&app, Method::GET, &format!("/sessions/{id}/field"), None).await;
    assert_eq!(status, StatusCode::CONFLICT, "no model yet");
    let (status, _) = send(&app, Method::GET, &format!("/sessions/{id}/export"), None).await;
    assert_eq!(status, StatusCode::CONFLICT);

    post_singular(&app, &id, &truth).await;
    send_json(
        &app,
        Method::POST,
        &format!("/sessions/{id}/marks"),
        Some(json!(marks)),
    )
    .await;
    let (status, _) = send_json(
        &app,
        Method::POST,
        &format!("/sessions/{id}/fit"),
        Some(json!({ "strategy": "S9" })),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let body = json!({ "strategy": "S1", "wait": true });
    let (status, v) = send_json(
        &app,
        Method::POST,
        &format!("/sessions/{id}/fit"),
        Some(body),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["status"], "done");
    assert!(v["report"]["deviation_deg"].as_f64().unwrap() < 0.1, "{v}");
    assert_eq!(v["report"]["anchors_used"], 0, "{v}");
    assert_eq!(v["model"]["stale"], false);

    // Field feed against the elementwise evaluation of the exported model.
    let (status, bytes) = send(&app, Method::GET, &format!("/sessions/{id}/export"), None).await;
    assert_eq!(status, StatusCode::OK);
    let model = codec::decode(&bytes).unwrap();
    assert_eq!(bytes.len(), 17 + 4 * model.parameter_count());
    let grid = GridSpec::new(20, 20, 12).unwrap();
    let oracle = evaluate_xqd_field(&model, &grid, &vec![true; grid.len()]);
    let (status, v) = send_json(
        &app,
        Method::GET,
        &format!("/sessions/{id}/field?stride=1"),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    let samples = v["samples"].as_array().unwrap();
    assert_eq!(samples.len(), 400);
    for (i, s) in samples.iter().enumerate() {
        let want = to_degrees(oracle.angles()[i]);
        let got = s["theta_deg"].as_f64().unwrap();
        let d = (got - want).abs();
        assert!(d.min(180.0 - d) < 1e-4, "cell {i}: {got} vs {want}");
    }
    let (_, v) = send_json(
        &app,
        Method::GET,
        &format!("/sessions/{id}/field?stride=5"),
        None,
    )
    .await;
    assert_eq!(v["samples"].as_array().unwrap().len(), 16);
    let (status, _) = send_json(
        &app,
        Method::GET,
        &format!("/sessions/{id}/field?stride=0"),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    // Any later mutation marks the model stale.
    assert_eq!(v["stale"], false);
    send_json(
        &app,
        Method::POST,
        &format!("/sessions/{id}/marks"),
        Some(json!([{ "x": 1.0, "y": 1.0, "theta_deg": 3.0 }])),
    )
    .await;
    let (_, v) = send_json(
        &app,
        Method::GET,
        &format!("/sessions/{id}/field?stride=4"),
        None,
    )
    .await;
    assert_eq!(v["stale"], true);
}

#[tokio::test]
async fn s1_on_noisy_marks_respects_anchor_cap() {
    let (_, app) = setup();
    let (truth, mut marks) = synthetic(16, 16, 6, 8);
    for (k, m) in marks.iter_mut().enumerate() {
        let noise = ((k * 37) % 11) as f64 - 5.0;
        let t = m["theta_deg"].as_f64().unwrap() + noise;
        m["theta_deg"] = json!(t.rem_euclid(180.0));
    }
    let id = create(&app, 16, 16, 12).await;
    post_singular(&app, &id, &truth).await;
    send_json(
        &app,
        Method::POST,
        &format!("/sessions/{id}/marks"),
        Some(json!(marks)),
    )
    .await;
    let body = json!({ "strategy": "S1", "wait": true });
    let (status, v) = send_json(
        &app,
        Method::POST,
        &format!("/sessions/{id}/fit"),
        Some(body),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert!(v["report"]["anchors_used"].as_u64().unwrap() <= 3, "{v}");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn concurrent_fit_is_rejected_and_polling_finishes() {
    let (_, app) = setup();
    let (truth, marks) = synthetic(24, 24, 10, 5);
    let id = create(&app, 24, 24, 12).await;
    post_singular(&app, &id, &truth).await;
    send_json(
        &app,
        Method::POST,
        &format!("/sessions/{id}/marks"),
        Some(json!(marks)),
    )
    .await;
    let uri = format!("/sessions/{id}/fit");
    let body = json!({ "strategy": "S3", "max_seconds": 3.0 });
    let (status, v) = send_json(&app, Method::POST, &uri, Some(body.clone())).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    assert_eq!(v["status"], "running");
    let (status, _) = send_json(&app, Method::POST, &uri, Some(body)).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let anchor = json!({ "a": 10.0, "b": 10.0, "theta_deg": 0.0, "sigma1": 30.0, "sigma2": 30.0 });
    let (status, _) = send_json(
        &app,
        Method::POST,
        &format!("/sessions/{id}/anchors"),
        Some(anchor),
    )
    .await;
    assert_eq!(status, StatusCode::CONFLICT);

    let mut last = Value::Null;
    for _ in 0..200 {
        let (status, v) = send_json(&app, Method::GET, &uri, None).await;
        assert_eq!(status, StatusCode::OK);
        if v["status"] != "running" {
            last = v;
            break;
        }
        tokio::time::sleep(Duration::from_millis(100)).await;
    }
    assert_eq!(last["status"], "done", "{last}");
    assert!(last["report"]["budget_exhausted"].is_boolean());
}

#[tokio::test]
async fn anchors_insert_exactly_and_validate() {
    let (state, app) = setup();
    let (truth, marks) = synthetic(12, 12, 0, 1);
    let id = create(&app, 12, 12, 12).await;
    let uri = format!("/sessions/{id}/anchors");
    let anchor = |theta: f64, sigma: f64, optimize: bool| json!({ "a": 66.0, "b": 54.0, "theta_deg": theta, "sigma1": sigma, "sigma2": 40.0, "optimize": optimize });
    let (status, _) = send_json(&app, Method::POST, &uri, Some(anchor(30.0, 40.0, false))).await;
    assert_eq!(status, StatusCode::CONFLICT, "no model yet");

    post_singular(&app, &id, &truth).await;
    send_json(
        &app,
        Method::POST,
        &format!("/sessions/{id}/marks"),
        Some(json!(marks)),
    )
    .await;
    let (status, _) = send_json(
        &app,
        Method::POST,
        &format!("/sessions/{id}/fit"),
        Some(json!({ "strategy": "S1", "wait": true })),
    )
    .await;
    assert_eq!(status, StatusCode::OK);

    for sigma in [0.0, -3.0] {
        let (status, _) =
            send_json(&app, Method::POST, &uri, Some(anchor(30.0, sigma, false))).await;
        assert_eq!(status, StatusCode::BAD_REQUEST);
    }
    let (status, v) = send_json(&app, Method::POST, &uri, Some(anchor(30.0, 40.0, false))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["stale"], false);
    let anchors_before = v["anchors_used"].as_u64().unwrap();
    // (66, 54) is the centre of cell (5, 4).
    let (_, v) = send_json(
        &app,
        Method::GET,
        &format!("/sessions/{id}/field?stride=1"),
        None,
    )
    .await;
    let s = &v["samples"][4 * 12 + 5];
    assert_eq!(
        (s["x"].as_f64().unwrap(), s["y"].as_f64().unwrap()),
        (66.0, 54.0)
    );
    let d = (s["theta_deg"].as_f64().unwrap() - 30.0).abs();
    assert!(d.min(180.0 - d) < 0.5, "{s}");

    let (status, v) = send_json(&app, Method::POST, &uri, Some(anchor(10.0, 40.0, true))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["anchors_used"].as_u64().unwrap(), anchors_before + 1);

    {
        let handle = state.get(&id).unwrap();
        let mut s = handle.write().await;
        let m = s.model.as_mut().unwrap();
        let p = m.anchors[0];
        m.anchors.resize(xqd_core::xqd::MAX_ANCHORS, p);
    }
    let (status, _) = send_json(&app, Method::POST, &uri, Some(anchor(30.0, 40.0, false))).await;
    assert_eq!(status, StatusCode::CONFLICT);
}

#[tokio::test]
async fn snapshot_round_trip() {
    let (state, app) = setup();
    let (truth, marks) = synthetic(10, 10, 0, 2);
    let id = create(&app, 10, 10, 12).await;
    post_singular(&app, &id, &truth).await;
    send_json(
        &app,
        Method::POST,
        &format!("/sessions/{id}/marks"),
        Some(json!(marks)),
    )
    .await;
    send_json(
        &app,
        Method::POST,
        &format!("/sessions/{id}/fit"),
        Some(json!({ "strategy": "S1", "wait": true })),
    )
    .await;
    let (_, exported) = send(&app, Method::GET, &format!("/sessions/{id}/export"), None).await;

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sessions.json");
    save_snapshot(&state, &path).await.unwrap();
    let restored = load_snapshot(&path).unwrap();
    let app2 = router(restored.clone());
    let (status, again) = send(&app2, Method::GET, &format!("/sessions/{id}/export"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(again, exported);
    let (a, b) = (state.get(&id).unwrap(), restored.get(&id).unwrap());
    let (a, b) = (a.read().await, b.read().await);
    assert_eq!(a.marks, b.marks);
    assert_eq!(a.revision, b.revision);
    assert_eq!(
        (a.cores.clone(), a.deltas.clone()),
        (b.cores.clone(), b.deltas.clone())
    );
}

#[tokio::test]
async fn cors_headers_present() {
    let (_, app) = setup();
    let req = Request::builder()
        .method(Method::OPTIONS)
        .uri("/sessions")
        .header(header::ORIGIN, "http://localhost:5173")
        .header(header::ACCESS_CONTROL_REQUEST_METHOD, "POST")
        .body(Body::empty())
        .unwrap();
    let resp = app.oneshot(req).await.unwrap();
    assert_eq!(resp.headers()[header::ACCESS_CONTROL_ALLOW_ORIGIN], "*");
}
