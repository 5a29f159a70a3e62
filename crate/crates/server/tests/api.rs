use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use axum::body::{to_bytes, Body, Bytes};
use axum::http::{Request, StatusCode};
use axum::Router;
use drivesim_core::bundle::{Bundle, LANE_MAP_FILE};
use drivesim_core::motion::FRAME_RATE;
use drivesim_core::orchestrator::{BackendError, LanguageBackend, RuleBackend};
use drivesim_core::raster::render_topdown;
use drivesim_core::scene::SceneGraph;
use drivesim_server::{router, AppState, CommandResponse, SessionCreated};
use serde_json::{json, Value};
use tower::ServiceExt;

const MIXED: &str = "Remove all cars in the scene and add a Porsche driving the wrong way toward me fast. Additionally, add a police car also driving the wrong way and chasing behind the Porsche. The view should be moved 5 meters ahead and 0.5 meters above.";
const ROUND_ONE: &str = "Ego vehicle drives ahead slowly. Add a car to the close front that is moving ahead.";
const ROUND_TWO: &str =
    "Modify the added car to turn left. Add a Chevrolet to the front of the added car. Add another vehicle to the left of the added Mini driving toward me.";

async fn send(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Bytes) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let req = req.body(body.map_or_else(Body::empty, |b| Body::from(b.to_string()))).unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    (status, to_bytes(res.into_body(), usize::MAX).await.unwrap())
}

fn json_of(bytes: &Bytes) -> Value {
    serde_json::from_slice(bytes).unwrap()
}

async fn new_session(app: &Router) -> String {
    let (status, body) = send(app, "POST", "/sessions", Some(json!({ "seed": 7 }))).await;
    assert_eq!(status, StatusCode::CREATED);
    serde_json::from_slice::<SessionCreated>(&body).unwrap().id
}

async fn command(app: &Router, id: &str, text: &str) -> (StatusCode, Value) {
    let (status, body) = send(app, "POST", &format!("/sessions/{id}/command"), Some(json!({ "text": text }))).await;
    (status, json_of(&body))
}

async fn scene_of(app: &Router, id: &str) -> SceneGraph {
    let (status, body) = send(app, "GET", &format!("/sessions/{id}/scene"), None).await;
    assert_eq!(status, StatusCode::OK);
    SceneGraph::from_json(std::str::from_utf8(&body).unwrap()).unwrap()
}

#[tokio::test]
async fn health_and_session_creation() {
    let app = router(AppState::default());
    let (status, body) = send(&app, "GET", "/healthz", None).await;
    assert_eq!((status, json_of(&body)), (StatusCode::OK, json!({ "status": "ok" })));
    let a = new_session(&app).await;
    let b = new_session(&app).await;
    assert_ne!(a, b);
    let (status, body) = send(&app, "POST", "/sessions", Some(json!({ "backend": "carrier-pigeon" }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(json_of(&body)["error"], "backend_config");
}

#[tokio::test]
async fn bundle_directories_load_and_missing_files_are_named() {
    let dir = tempfile::tempdir().unwrap();
    Bundle::demo().write(dir.path()).unwrap();
    let app = router(AppState::default());
    let (status, _) = send(&app, "POST", "/sessions", Some(json!({ "bundle": dir.path() }))).await;
    assert_eq!(status, StatusCode::CREATED);
    std::fs::remove_file(dir.path().join(LANE_MAP_FILE)).unwrap();
    let (status, body) = send(&app, "POST", "/sessions", Some(json!({ "bundle": dir.path() }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let body = json_of(&body);
    assert_eq!(body["file"], LANE_MAP_FILE);
    assert!(body["message"].as_str().unwrap().contains(LANE_MAP_FILE));
}

#[tokio::test]
async fn unknown_session_is_404_everywhere() {
    let app = router(AppState::default());
    for (method, path) in [("GET", "log"), ("GET", "scene"), ("GET", "render?kind=topdown")] {
        let (status, body) = send(&app, method, &format!("/sessions/nope/{path}"), None).await;
        assert_eq!(status, StatusCode::NOT_FOUND);
        assert_eq!(json_of(&body)["error"], "not_found");
    }
    assert_eq!(command(&app, "nope", "Add a car.").await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn mixed_command_lists_four_instructions() {
    let app = router(AppState::default());
    let id = new_session(&app).await;
    let (status, body) = command(&app, &id, MIXED).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let resp: CommandResponse = serde_json::from_value(body).unwrap();
    let agents: Vec<_> = resp.instructions.iter().map(|i| i.agent.as_str()).collect();
    assert_eq!(agents, ["vehicle_delete", "motion", "motion", "view_adjust"]);
    assert_eq!(resp.round, 1);
    assert_eq!(resp.scene_digest, scene_of(&app, &id).await.digest());
    assert_eq!(resp.renders.topdown, format!("/sessions/{id}/render?kind=topdown&frame=0"));
}

#[tokio::test]
async fn log_mirrors_two_rounds() {
    let app = router(AppState::default());
    let id = new_session(&app).await;
    let (_, r1) = command(&app, &id, ROUND_ONE).await;
    let (_, r2) = command(&app, &id, ROUND_TWO).await;
    let (status, body) = send(&app, "GET", &format!("/sessions/{id}/log"), None).await;
    assert_eq!(status, StatusCode::OK);
    let log = json_of(&body);
    let log = log.as_array().unwrap();
    let listed: Vec<&Value> = r1["instructions"].as_array().unwrap().iter().chain(r2["instructions"].as_array().unwrap()).collect();
    assert_eq!(log.len(), listed.len());
    let rounds: Vec<u64> = log.iter().map(|e| e["round"].as_u64().unwrap()).collect();
    assert!(rounds.windows(2).all(|w| w[0] <= w[1]));
    assert_eq!((rounds[0], *rounds.last().unwrap()), (1, 2));
    for (entry, shown) in log.iter().zip(listed) {
        assert_eq!(entry["instruction"]["text"], shown["text"]);
        assert_eq!(entry["config"]["entries"], shown["config"]);
    }
}

#[tokio::test]
async fn failed_round_is_422_with_unchanged_digest() {
    let app = router(AppState::default());
    let id = new_session(&app).await;
    command(&app, &id, ROUND_ONE).await;
    let before = scene_of(&app, &id).await.digest();
    let (status, body) = command(&app, &id, "Add a car to the front. Modify the added truck to turn left.").await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"], "unresolved_reference");
    assert_eq!(body["scene_digest"], before.as_str());
    assert_eq!(scene_of(&app, &id).await.digest(), before);
}

#[tokio::test]
async fn gibberish_is_a_no_op_round() {
    let app = router(AppState::default());
    let id = new_session(&app).await;
    let (status, body) = command(&app, &id, "florp wibble zonk").await;
    assert_eq!(status, StatusCode::OK, "{body}");
}

#[tokio::test]
async fn scene_json_round_trips_byte_identically() {
    let app = router(AppState::default());
    let id = new_session(&app).await;
    command(&app, &id, MIXED).await;
    let (_, body) = send(&app, "GET", &format!("/sessions/{id}/scene"), None).await;
    let text = std::str::from_utf8(&body).unwrap();
    assert_eq!(SceneGraph::from_json(text).unwrap().to_canonical_json(), text);
}

fn decode(png: &[u8]) -> image::RgbImage {
    image::load_from_memory(png).unwrap().to_rgb8()
}

#[tokio::test]
async fn topdown_is_stable_and_shows_the_added_vehicle() {
    let app = router(AppState::default());
    let id = new_session(&app).await;
    let url = format!("/sessions/{id}/render?kind=topdown&frame=0");
    let (status, empty) = send(&app, "GET", &url, None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(&empty[..8], b"\x89PNG\r\n\x1a\n");
    assert_eq!(send(&app, "GET", &url, None).await.1, empty);

    command(&app, &id, "Add a red car to the close front.").await;
    let scene = scene_of(&app, &id).await;
    let vehicle = scene.vehicles_by_seq()[0];
    let k = 12.min(scene.horizon() - 1);
    let (_, png) = send(&app, "GET", &format!("/sessions/{id}/render?kind=topdown&frame={k}"), None).await;
    let img = decode(&png);
    let raster = render_topdown(&scene, k);
    assert_eq!((img.width(), img.height()), (raster.width, raster.height));
    let pose = vehicle.trajectory.at_frame(k).unwrap();
    let (u, v) = raster.world_to_pixel(&pose.position()).unwrap();
    let color = vehicle.color_override.unwrap_or(scene.asset(&vehicle.asset_id).unwrap().color);
    assert_eq!(raster.get(u, v), color);
    assert_eq!(img.get_pixel(u, v).0, color.map(|c| (c * 255.0).round() as u8));

    let (status, _) = send(&app, "GET", &format!("/sessions/{id}/render?kind=topdown&frame={}", scene.horizon()), None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = send(&app, "GET", &format!("/sessions/{id}/render?kind=fisheye"), None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn camera_render_matches_the_compositor() {
    let app = router(AppState::default());
    let id = new_session(&app).await;
    command(&app, &id, ROUND_ONE).await;
    let scene = scene_of(&app, &id).await;
    let (status, png) = send(&app, "GET", &format!("/sessions/{id}/render?kind=camera&frame=3&camera=1"), None).await;
    assert_eq!(status, StatusCode::OK);
    let bundle = Bundle::demo();
    let px = drivesim_core::compositor::render_camera_view(&scene, &bundle.grid, &bundle.rig.exposure, 1, 3, FRAME_RATE, Default::default()).unwrap();
    let want = drivesim_core::io::encode_png(scene.rig[1].width, scene.rig[1].height, &px).unwrap();
    assert_eq!(png.as_ref(), want.as_slice());
    let (status, _) = send(&app, "GET", &format!("/sessions/{id}/render?kind=camera&camera=9"), None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

/// Rule backend that parks its first call until released.
struct Gated {
    inner: RuleBackend,
    entered: AtomicBool,
    gate: (Mutex<bool>, Condvar),
}

impl LanguageBackend for Gated {
    fn complete(&self, prompt: &str, command: &str) -> Result<String, BackendError> {
        if !self.entered.swap(true, Ordering::SeqCst) {
            let (lock, cv) = &self.gate;
            let _open = cv.wait_while(lock.lock().unwrap(), |open| !*open).unwrap();
        }
        self.inner.complete(prompt, command)
    }

    fn name(&self) -> &str {
        "gated"
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn concurrent_command_gets_409() {
    let gated = Arc::new(Gated { inner: RuleBackend::default(), entered: AtomicBool::new(false), gate: (Mutex::new(false), Condvar::new()) });
    let shared = gated.clone();
    let app = router(AppState::new(Arc::new(move |_: &str| Ok(shared.clone() as Arc<dyn LanguageBackend>))));
    let id = new_session(&app).await;
    let digest = scene_of(&app, &id).await.digest();

    let first = tokio::spawn({
        let (app, id) = (app.clone(), id.clone());
        async move { command(&app, &id, ROUND_ONE).await }
    });
    while !gated.entered.load(Ordering::SeqCst) {
        tokio::time::sleep(Duration::from_millis(5)).await;
    }
    let (status, body) = command(&app, &id, "Add a car to the back.").await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error"], "busy");
    assert_eq!(scene_of(&app, &id).await.digest(), digest);

    *gated.gate.0.lock().unwrap() = true;
    gated.gate.1.notify_all();
    let (status, body) = first.await.unwrap();
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["round"], 1);
    assert_eq!(command(&app, &id, "Add a car to the back.").await.0, StatusCode::OK);
}
