use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use base64::Engine as _;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tempfile::TempDir;
use tower::ServiceExt;
use unbend_core::{
    export_volume, load_volume, make_bent_cylinder, rig_endpoints, straighten, CylinderSpec, LogEvent, PipelineParams, Rig,
    Sess, StraightVolumeSpec, Vec3, Volume, VolumeRef,
};
use unbend_service::{router, ServiceState};

struct Fixture {
    dir: TempDir,
    app: Router,
    state: Arc<ServiceState>,
    rig: Rig,
    volume: Volume,
}

fn fixture() -> Fixture {
    let spec = CylinderSpec::fitted([40, 40, 64], 4.0, 5.0, 1.0).unwrap();
    let gt = make_bent_cylinder::<f64>(&spec).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (data, meta) = (dir.path().join("bent.raw"), dir.path().join("bent.json"));
    export_volume(&gt.bent, &data, &meta).unwrap();
    let session = Sess::new(
        VolumeRef::from_paths(&data, &meta).unwrap(),
        rig_endpoints(&gt.true_rig).unwrap(),
        gt.true_rig.clone(),
    );
    let volume: Volume = load_volume(&data, &meta).unwrap();
    let state = Arc::new(ServiceState::new(session, volume.clone(), None, PipelineParams::default()));
    Fixture {
        dir,
        app: router(state.clone()),
        state,
        rig: gt.true_rig,
        volume,
    }
}

async fn call(app: &Router, req: Request<Body>) -> (StatusCode, Option<u64>, Vec<u8>) {
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let version = res
        .headers()
        .get("x-rig-version")
        .map(|v| v.to_str().unwrap().parse().unwrap());
    let bytes = res.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, version, bytes)
}

async fn get(app: &Router, uri: &str) -> (StatusCode, Option<u64>, Vec<u8>) {
    call(app, Request::get(uri).body(Body::empty()).unwrap()).await
}

async fn post(app: &Router, uri: &str, body: Value) -> (StatusCode, Value) {
    post_raw(app, uri, body.to_string()).await
}

async fn post_raw(app: &Router, uri: &str, body: String) -> (StatusCode, Value) {
    let req = Request::post(uri)
        .header("content-type", "application/json")
        .body(Body::from(body))
        .unwrap();
    let (status, _, bytes) = call(app, req).await;
    (status, serde_json::from_slice(&bytes).unwrap())
}

async fn get_json(app: &Router, uri: &str) -> Value {
    let (status, _, bytes) = get(app, uri).await;
    assert_eq!(status, StatusCode::OK, "{}", String::from_utf8_lossy(&bytes));
    serde_json::from_slice(&bytes).unwrap()
}

async fn current_rig(app: &Router) -> Rig {
    serde_json::from_value(get_json(app, "/rig").await).unwrap()
}

fn decode_png(bytes: &[u8]) -> image::GrayImage {
    image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .unwrap()
        .into_luma8()
}

fn mean_abs_pixel_diff(a: &image::GrayImage, b: &image::GrayImage) -> f64 {
    assert_eq!(a.dimensions(), b.dimensions());
    let sum: f64 = a
        .as_raw()
        .iter()
        .zip(b.as_raw())
        .map(|(&x, &y)| (x as f64 - y as f64).abs())
        .sum();
    sum / a.as_raw().len() as f64 / 255.0
}

#[tokio::test]
async fn rig_endpoint_matches_the_session() {
    let f = fixture();
    assert_eq!(current_rig(&f.app).await, f.rig);
    assert_eq!(&current_rig(&f.app).await, f.state.session().await.rig());
}

#[tokio::test]
async fn full_turn_leaves_the_slice_byte_identical() {
    let f = fixture();
    for i in [0, 17, f.rig.len() - 1] {
        let uri = format!("/slice?t={}&w=48&h=40", f.rig.cum_arclength()[i]);
        let (status, _, before) = get(&f.app, &uri).await;
        assert_eq!(status, StatusCode::OK);
        let (status, _) = post(&f.app, "/keyframe/rotate", json!({"i": i, "angle": std::f64::consts::TAU})).await;
        assert_eq!(status, StatusCode::OK);
        let (_, _, after) = get(&f.app, &uri).await;
        assert_eq!(before, after, "keyframe {i}");
        assert_eq!(decode_png(&after).dimensions(), (48, 40));
    }
}

#[tokio::test]
async fn slice_shows_the_tube_cross_section() {
    let f = fixture();
    let t = f.rig.total_length() / 2.0;
    let (_, _, png) = get(&f.app, &format!("/slice?t={t}&w=61&h=61")).await;
    let img = decode_png(&png);
    // extent is radius + 2, so the disk of radius 4 covers the center and misses the corners
    assert!(img.get_pixel(30, 30).0[0] > 240);
    assert_eq!(img.get_pixel(0, 0).0[0], 0);
}

#[tokio::test]
async fn insert_keeps_the_preview() {
    let f = fixture();
    let before = get_json(&f.app, "/preview").await;
    let t = 0.37 * f.rig.total_length();
    let (status, body) = post(&f.app, "/keyframe/insert", json!({ "t": t })).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["rig"]["keyframes"].as_array().unwrap().len(), f.rig.len() + 1);
    let after = get_json(&f.app, "/preview").await;
    for axis in ["x", "y", "z"] {
        let png = |v: &Value| {
            let b64 = v[axis].as_str().unwrap();
            decode_png(&base64::engine::general_purpose::STANDARD.decode(b64).unwrap())
        };
        let d = mean_abs_pixel_diff(&png(&before), &png(&after));
        assert!(d <= 1.0 / 255.0, "{axis}: mean abs diff {d}");
    }
    assert_eq!(after["version"], 1);
}

#[tokio::test]
async fn preview_projects_the_straightened_tube() {
    let f = fixture();
    let body = get_json(&f.app, "/preview").await;
    let z = body["z"].as_str().unwrap();
    let img = decode_png(&base64::engine::general_purpose::STANDARD.decode(z).unwrap());
    let (w, h) = img.dimensions();
    assert!(img.get_pixel(w / 2, h / 2).0[0] > 240);
    assert_eq!(img.get_pixel(0, 0).0[0], 0);
}

#[tokio::test]
async fn center_edit_moves_the_keyframe_along_u() {
    let f = fixture();
    let i = 9;
    let (status, _) = post(&f.app, "/keyframe/center", json!({"i": i, "dx": 1.0, "dy": 0.0})).await;
    assert_eq!(status, StatusCode::OK);
    let rig = current_rig(&f.app).await;
    let (old, new) = (&f.rig.keyframes()[i], &rig.keyframes()[i]);
    let moved = new.position - old.position - old.frame.u;
    assert!(moved.norm() < 1e-12, "{moved:?}");
}

#[tokio::test]
async fn every_mutation_bumps_the_version_and_the_log() {
    let f = fixture();
    let edits = [
        ("/keyframe/insert", json!({"t": 3.0})),
        ("/keyframe/remove", json!({"i": 5})),
        ("/keyframe/rotate", json!({"i": 2, "angle": 0.3})),
        ("/keyframe/center", json!({"i": 4, "dx": 0.2, "dy": -0.1})),
        ("/keyframe/extent", json!({"i": 6, "rx": 7.0, "ry": 5.5})),
    ];
    for (n, (uri, body)) in edits.into_iter().enumerate() {
        let (status, reply) = post(&f.app, uri, body).await;
        assert_eq!(status, StatusCode::OK, "{reply}");
        assert_eq!(reply["version"], n as u64 + 1);
        let (_, version, _) = get(&f.app, "/rig").await;
        assert_eq!(version, Some(n as u64 + 1));
    }
    let session = f.state.session().await;
    assert_eq!(session.edit_log().len(), 6);
    assert_eq!(session.rig().keyframes()[6].extent, [7.0, 5.5]);
}

#[tokio::test]
async fn bad_requests_get_json_errors_and_change_nothing() {
    let f = fixture();
    let cases = [
        ("/keyframe/remove", json!({"i": 10_000}).to_string()),
        ("/keyframe/insert", json!({"t": -1.0}).to_string()),
        ("/keyframe/extent", json!({"i": 0, "rx": -1.0, "ry": 1.0}).to_string()),
        ("/keyframe/rotate", json!({"i": 0}).to_string()),
        ("/keyframe/rotate", json!({"i": 0, "angle": 1.0, "extra": 1}).to_string()),
        ("/keyframe/center", "{not json".to_string()),
        ("/endpoints", json!({"points": [[1.0, 2.0, 3.0]]}).to_string()),
    ];
    for (uri, body) in cases {
        let (status, reply) = post_raw(&f.app, uri, body.clone()).await;
        assert!(status.is_client_error(), "{uri} {body}: {status}");
        assert!(reply["error"].is_string(), "{reply}");
    }
    for uri in ["/slice?t=1e6", "/slice?t=abc", "/slice?t=1&w=0", "/export?path=x.json"] {
        let (status, _, bytes) = get(&f.app, uri).await;
        assert!(status.is_client_error(), "{uri}: {status}");
        let reply: Value = serde_json::from_slice(&bytes).unwrap();
        assert!(reply["error"].is_string());
    }
    assert_eq!(f.state.version().await, 0);
    assert_eq!(f.state.session().await.edit_log().len(), 1);
    assert_eq!(current_rig(&f.app).await, f.rig);
}

#[tokio::test]
async fn save_writes_the_canonical_session() {
    let f = fixture();
    post(&f.app, "/keyframe/rotate", json!({"i": 3, "angle": 0.5})).await;
    let path = f.dir.path().join("session.json");
    let (status, _) = post(&f.app, "/save", json!({ "path": path })).await;
    assert_eq!(status, StatusCode::OK);
    let loaded = Sess::load(&path).unwrap();
    assert_eq!(loaded, f.state.session().await);
    assert_eq!(std::fs::read_to_string(&path).unwrap(), loaded.to_canonical_json());
    assert!(loaded.check_provenance().is_empty());
}

#[tokio::test]
async fn export_writes_the_straight_volume() {
    let f = fixture();
    let path = f.dir.path().join("straight.raw");
    let reply = get_json(&f.app, &format!("/export?path={}", path.display())).await;
    let out: Volume = load_volume(&path, f.dir.path().join("straight.json")).unwrap();
    let dims: [usize; 3] = serde_json::from_value(reply["dims"].clone()).unwrap();
    assert_eq!(out.dims, dims);
    let spec = StraightVolumeSpec::from_rig(&f.rig, Vec3::new(1.0, 1.0, 1.0));
    let direct = straighten(&f.rig, &f.volume, &spec);
    assert_eq!(out.dims, direct.dims);
    let worst = out
        .data
        .iter()
        .zip(&direct.data)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(worst <= 1e-6, "{worst}");
}

#[tokio::test]
async fn new_endpoints_rebuild_the_rig_and_curve() {
    let f = fixture();
    assert!(get_json(&f.app, "/curve").await["skeleton"].is_null());
    let ends: Vec<[f64; 3]> = rig_endpoints(&f.rig)
        .unwrap()
        .points
        .iter()
        .map(|p| [p.x, p.y, p.z])
        .collect();
    let (status, reply) = post(&f.app, "/endpoints", json!({ "points": ends })).await;
    assert_eq!(status, StatusCode::OK, "{reply}");
    let curve = get_json(&f.app, "/curve").await;
    let skeleton = curve["skeleton"]["vertices"].as_array().unwrap();
    assert!(skeleton.len() > 10);
    let rig = current_rig(&f.app).await;
    assert_eq!(curve["keyframes"].as_array().unwrap().len(), rig.len());
    assert!(rig.len() < f.rig.len());
    let session = f.state.session().await;
    assert!(matches!(session.edit_log().last().unwrap().event, LogEvent::Initialize { .. }));
    // the fresh skeleton runs head to tail between the clicked points
    let first = &skeleton[0];
    let head = Vec3::new(ends[0][0], ends[0][1], ends[0][2]);
    let start = Vec3::new(first[0].as_f64().unwrap(), first[1].as_f64().unwrap(), first[2].as_f64().unwrap());
    assert!((start - head).norm() < 3.0);
}

#[tokio::test]
async fn open_loads_a_session_file() {
    let f = fixture();
    let path = f.dir.path().join("s.json");
    f.state.session().await.save(&path).unwrap();
    let state = ServiceState::open(&path, PipelineParams::default()).unwrap();
    let app = router(Arc::new(state));
    assert_eq!(current_rig(&app).await, f.rig);
    assert!(!get_json(&app, "/curve").await["skeleton"].is_null());
    assert!(ServiceState::open(Path::new("/nonexistent/session.json"), PipelineParams::default()).is_err());
}
