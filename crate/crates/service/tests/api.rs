use std::time::Duration;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use takecut::pipeline::{decode_label_png, Engine, Stage};
use takecut::seamcut::Label;
use takecut::synth::Texture;
use takecut::video::{Frame, VideoClip};
use takecut_service::{router, AppState};
use tower::ServiceExt;

fn takes(w: usize, h: usize, frames: usize) -> (VideoClip, VideoClip) {
    let tex = Texture::new(11);
    let a = (0..frames).map(|t| tex.render(w, h, t as f64, 0.0)).collect();
    let b = (0..frames)
        .map(|t| {
            let f = tex.render(w, h, t as f64 + 2.0, 1.0);
            Frame::from_fn(w, h, |x, y| f.pixel(x, y).map(|v| (v * 0.9 + 10.0).min(255.0)))
        })
        .collect();
    (VideoClip::new(a).unwrap(), VideoClip::new(b).unwrap())
}

fn app_with(w: usize, h: usize, frames: usize) -> (Router, tempfile::TempDir) {
    let (a, b) = takes(w, h, frames);
    let mut engine = Engine::from_clips(a, b, 0).unwrap();
    engine.update(|p| p.params.align.match_p.level = 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let state = AppState::new(engine, Some(dir.path().join("p.json")), dir.path().join("export"));
    (router(state), dir)
}

fn app() -> (Router, tempfile::TempDir) {
    app_with(48, 32, 4)
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(v) => req
            .header("content-type", "application/json")
            .body(Body::from(v.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

async fn call_json(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (s, b) = call(app, method, uri, body).await;
    (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
}

fn png_dims(bytes: &[u8]) -> (u32, u32) {
    assert_eq!(&bytes[1..4], b"PNG");
    let be = |i: usize| u32::from_be_bytes(bytes[i..i + 4].try_into().unwrap());
    (be(16), be(20))
}

async fn paint_both(app: &Router) {
    let a: Vec<Value> = (0..32).map(|y| json!({"t": 1, "x": 0, "y": y, "label": "A"})).collect();
    let b: Vec<Value> = (0..32).map(|y| json!({"t": 2, "x": 47, "y": y, "label": "B"})).collect();
    assert_eq!(call(app, Method::PUT, "/strokes/1", Some(json!({"deltas": a}))).await.0, StatusCode::OK);
    assert_eq!(call(app, Method::PUT, "/strokes/2", Some(json!({"deltas": b}))).await.0, StatusCode::OK);
}

async fn wait_job(app: &Router, id: u64) -> (StatusCode, Value) {
    for _ in 0..2000 {
        let (s, v) = call_json(app, Method::GET, &format!("/job/{id}"), None).await;
        if v["status"] != "running" {
            return (s, v);
        }
        tokio::time::sleep(Duration::from_millis(5)).await;
    }
    panic!("job {id} did not finish");
}

async fn run(app: &Router, stage: &str) -> Value {
    let (s, v) = call_json(app, Method::POST, &format!("/run/{stage}"), None).await;
    assert_eq!(s, StatusCode::ACCEPTED, "{v}");
    let (s, job) = wait_job(app, v["job"].as_u64().unwrap()).await;
    assert_eq!(s, StatusCode::OK, "{job}");
    assert_eq!(job["status"], "done");
    job
}

fn stages(v: &Value) -> Vec<String> {
    v.as_array().unwrap().iter().map(|s| s.as_str().unwrap().to_string()).collect()
}

#[tokio::test]
async fn offset_round_trips_and_bumps_revision() {
    let (app, _dir) = app();
    let (_, before) = call_json(&app, Method::GET, "/project", None).await;
    assert_eq!(before["revision"], 0);
    let (s, v) = call_json(&app, Method::PUT, "/offset", Some(json!({"offset": -1}))).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["revision"], 1);
    let (_, after) = call_json(&app, Method::GET, "/project", None).await;
    assert_eq!(after["offset"], -1);
    assert_eq!(after["revision"], 1);
    assert_eq!(after["overlap"], json!([0, 3]));
}

#[tokio::test]
async fn offset_without_overlap_is_rejected_unchanged() {
    let (app, _dir) = app();
    let (s, v) = call_json(&app, Method::PUT, "/offset", Some(json!({"offset": 9}))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(v["error"].as_str().unwrap().contains("overlap"));
    let (_, p) = call_json(&app, Method::GET, "/project", None).await;
    assert_eq!((p["offset"].as_i64(), p["revision"].as_u64()), (Some(0), Some(0)));
}

#[tokio::test]
async fn stale_revision_conflicts() {
    let (app, _dir) = app();
    call(&app, Method::PUT, "/offset", Some(json!({"offset": 1, "revision": 0}))).await;
    let (s, v) = call_json(&app, Method::PUT, "/offset", Some(json!({"offset": 0, "revision": 0}))).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(v["revision"], 1);
}

#[tokio::test]
async fn cut_without_both_labels_is_422() {
    let (app, _dir) = app();
    let one = json!({"deltas": [{"t": 0, "x": 3, "y": 3, "label": "A"}]});
    call(&app, Method::PUT, "/strokes/0", Some(one)).await;
    let (s, v) = call_json(&app, Method::POST, "/run/cut", None).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["stage"], "cut");
    assert!(v["error"].as_str().unwrap().contains("both labels required"));
    // Stages before the cut still run.
    run(&app, "align").await;
}

#[tokio::test]
async fn stroke_edit_recomputes_only_the_cut_and_after() {
    let (app, _dir) = app();
    paint_both(&app).await;
    let first = run(&app, "crop").await;
    assert_eq!(stages(&first["executed"]), ["align", "cut", "blend", "crop"]);
    let again = run(&app, "crop").await;
    assert!(stages(&again["plan"]).is_empty());
    let d = json!({"deltas": [{"t": 3, "x": 20, "y": 9, "label": "B"}]});
    call(&app, Method::PUT, "/strokes/3", Some(d)).await;
    let third = run(&app, "crop").await;
    assert_eq!(stages(&third["executed"]), ["cut", "blend", "crop"]);
    assert_eq!(third["timings"].as_array().unwrap().len(), 3);
}

#[tokio::test]
async fn stroke_deltas_set_and_erase() {
    let (app, _dir) = app();
    let d = json!({"deltas": [
        {"t": 1, "x": 2, "y": 2, "label": "A"},
        {"t": 1, "x": 2, "y": 2, "label": "B"},
        {"t": 1, "x": 3, "y": 2, "label": "A"},
        {"t": 1, "x": 3, "y": 2, "erase": true}
    ]});
    let (s, v) = call_json(&app, Method::PUT, "/strokes/1", Some(d)).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["revision"], 1);
    let (_, p) = call_json(&app, Method::GET, "/project", None).await;
    assert_eq!(p["strokes"], json!([{"frame": 1, "x": 2, "y": 2, "label": "B"}]));
    let wrong_frame = json!({"deltas": [{"t": 0, "x": 2, "y": 2, "label": "A"}]});
    assert_eq!(call(&app, Method::PUT, "/strokes/1", Some(wrong_frame)).await.0, StatusCode::BAD_REQUEST);
    let outside = json!({"deltas": [{"t": 1, "x": 48, "y": 2, "label": "A"}]});
    assert_eq!(call(&app, Method::PUT, "/strokes/1", Some(outside)).await.0, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn frames_are_png_with_optional_half_size() {
    let (app, _dir) = app();
    let (s, full) = call(&app, Method::GET, "/frame/a/2", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(png_dims(&full), (48, 32));
    let (_, half) = call(&app, Method::GET, "/frame/b/2?half=true", None).await;
    assert_eq!(png_dims(&half), (24, 16));
    assert_eq!(call(&app, Method::GET, "/frame/c/0", None).await.0, StatusCode::NOT_FOUND);
    assert_eq!(call(&app, Method::GET, "/frame/a/4", None).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn preview_matches_export_and_seam_mask() {
    let (app, dir) = app();
    paint_both(&app).await;
    let (s, v) = call_json(&app, Method::POST, "/export", Some(json!({"overlay": true}))).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["files"].as_array().unwrap().len(), 8);
    let exported = std::fs::read(dir.path().join("export/out_0002.png")).unwrap();
    let (_, full) = call(&app, Method::GET, "/preview/2?half=false", None).await;
    assert_eq!(full, exported);
    let (_, half) = call(&app, Method::GET, "/preview/2", None).await;
    let (w, h) = png_dims(&full);
    assert_eq!(png_dims(&half), (w.div_ceil(2), h.div_ceil(2)));
    let (_, tinted) = call(&app, Method::GET, "/preview/2?half=false&overlay=true", None).await;
    assert_ne!(tinted, full);
    let (s, seam) = call(&app, Method::GET, "/seam/2", None).await;
    assert_eq!(s, StatusCode::OK);
    let (_, _, labels) = decode_label_png(&seam).unwrap();
    assert!(labels.contains(&Label::A) && labels.contains(&Label::B));
    assert_eq!(call(&app, Method::GET, "/seam/9", None).await.0, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn running_job_locks_the_session() {
    let (app, _dir) = app_with(192, 128, 6);
    let (s, v) = call_json(&app, Method::POST, "/run/align", None).await;
    assert_eq!(s, StatusCode::ACCEPTED);
    let (s, _) = call(&app, Method::PUT, "/offset", Some(json!({"offset": 1}))).await;
    assert_eq!(s, StatusCode::LOCKED);
    assert_eq!(call(&app, Method::POST, "/run/align", None).await.0, StatusCode::LOCKED);
    // Reads that do not need the engine still work.
    assert_eq!(call(&app, Method::GET, "/project", None).await.0, StatusCode::OK);
    assert_eq!(call(&app, Method::GET, "/frame/a/0", None).await.0, StatusCode::OK);
    let (_, job) = wait_job(&app, v["job"].as_u64().unwrap()).await;
    assert_eq!(job["status"], "done");
    assert_eq!(stages(&job["completed"]), ["align"]);
    assert_eq!(call(&app, Method::PUT, "/offset", Some(json!({"offset": 1}))).await.0, StatusCode::OK);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_writes_apply_once_per_revision() {
    let (app, _dir) = app();
    let tasks: Vec<_> = (0..16)
        .map(|i| {
            let app = app.clone();
            tokio::spawn(async move {
                let d = json!({"revision": 0, "deltas": [{"t": 0, "x": i, "y": 0, "label": "A"}]});
                call(&app, Method::PUT, "/strokes/0", Some(d)).await.0
            })
        })
        .collect();
    let mut codes = Vec::new();
    for t in tasks {
        codes.push(t.await.unwrap());
    }
    assert_eq!(codes.iter().filter(|&&c| c == StatusCode::OK).count(), 1);
    assert_eq!(codes.iter().filter(|&&c| c == StatusCode::CONFLICT).count(), 15);

    // Unconditional writes all land, each on its own revision.
    let tasks: Vec<_> = (0..16)
        .map(|i| {
            let app = app.clone();
            tokio::spawn(async move {
                let d = json!({"deltas": [{"t": 1, "x": i, "y": 1, "label": "B"}]});
                call_json(&app, Method::PUT, "/strokes/1", Some(d)).await.1["revision"].as_u64().unwrap()
            })
        })
        .collect();
    let mut revs = Vec::new();
    for t in tasks {
        revs.push(t.await.unwrap());
    }
    revs.sort();
    assert_eq!(revs, (2..=17).collect::<Vec<u64>>());
    let (_, p) = call_json(&app, Method::GET, "/project", None).await;
    assert_eq!(p["strokes"].as_array().unwrap().len(), 17);
}

#[tokio::test]
async fn unknown_routes_and_params() {
    let (app, dir) = app();
    assert_eq!(call(&app, Method::POST, "/run/paint", None).await.0, StatusCode::NOT_FOUND);
    assert_eq!(call(&app, Method::GET, "/job/42", None).await.0, StatusCode::NOT_FOUND);
    let (_, p) = call_json(&app, Method::GET, "/project", None).await;
    let mut params = p["params"].clone();
    params["seam"]["lambda"] = json!(-1.0);
    let (s, _) = call(&app, Method::PUT, "/params", Some(json!({"params": params.clone()}))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    params["seam"]["lambda"] = json!(2.0);
    let (s, v) = call_json(&app, Method::PUT, "/params", Some(json!({"params": params}))).await;
    assert_eq!((s, v["revision"].as_u64()), (StatusCode::OK, Some(1)));
    assert_eq!(call(&app, Method::POST, "/save", None).await.0, StatusCode::OK);
    assert!(dir.path().join("p.json").exists());
    let _ = Stage::ALL;
}
