use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use drivesim_core::demo::demo_scene;
use drivesim_core::motion::Action;
use drivesim_core::orchestrator::*;
use drivesim_core::scene::BackgroundVehicle;
use serde::Deserialize;
use serde_json::{Map, Value};

#[derive(Deserialize)]
struct CorpusEntry {
    command: String,
    instructions: Vec<CorpusInstruction>,
}

#[derive(Deserialize)]
struct CorpusInstruction {
    agent: AgentKind,
    text: String,
    config: Map<String, Value>,
}

fn corpus() -> Vec<CorpusEntry> {
    serde_json::from_str(include_str!("data/corpus.json")).unwrap()
}

#[test]
fn corpus_configs_match_exactly() {
    let scene = demo_scene(7);
    let backend = RuleBackend::default();
    let entries = corpus();
    assert_eq!(entries.len(), 40);
    let mut failures = Vec::new();
    for e in &entries {
        let got = decompose(&e.command, &backend, &scene, 1).unwrap();
        let same_shape = got.len() == e.instructions.len()
            && got.iter().zip(&e.instructions).all(|(g, want)| {
                g.agent == want.agent
                    && g.text == want.text
                    && parse_to_config(g, &backend, &scene).map(|c| c.entries == want.config).unwrap_or(false)
            });
        if !same_shape {
            failures.push(e.command.clone());
        }
    }
    assert!(failures.is_empty(), "mismatched commands: {failures:#?}");
}

#[test]
fn corpus_covers_every_category() {
    let entries = corpus();
    let agents: Vec<AgentKind> = entries.iter().flat_map(|e| e.instructions.iter().map(|i| i.agent)).collect();
    for a in [AgentKind::VehicleDelete, AgentKind::Motion, AgentKind::ViewAdjust, AgentKind::AssetManage, AgentKind::BackgroundRender] {
        assert!(agents.contains(&a), "{a:?}");
    }
    assert!(entries.iter().any(|e| e.command.contains("traffic jam") && e.instructions.len() == 8));
    assert!(entries.iter().any(|e| e.command.starts_with("Remove all cars in the scene and add a Porsche")));
    assert!(entries.iter().any(|e| e.command.starts_with("Modify the added car to turn left.")));
}

#[test]
fn mixed_command_decomposes_into_four_ordered_instructions() {
    let scene = demo_scene(7);
    let cmd = "Remove all cars in the scene and add a Porsche driving the wrong way toward me fast. Additionally, add a police car also driving the wrong way and chasing behind the Porsche. The view should be moved 5 meters ahead and 0.5 meters above.";
    let got = decompose(cmd, &RuleBackend::default(), &scene, 1).unwrap();
    let agents: Vec<_> = got.iter().map(|i| i.agent).collect();
    assert_eq!(agents, [AgentKind::VehicleDelete, AgentKind::Motion, AgentKind::Motion, AgentKind::ViewAdjust]);
    assert!(matches!(decompose("", &RuleBackend::default(), &scene, 1), Err(OrchestratorError::EmptyDecomposition)));
}

#[test]
fn mixed_command_executes_end_to_end() {
    let scene = demo_scene(7);
    let cmd = "Remove all cars in the scene and add a Porsche driving the wrong way toward me fast. Additionally, add a police car also driving the wrong way and chasing behind the Porsche. The view should be moved 5 meters ahead and 0.5 meters above.";
    let r = execute_round(cmd, &scene, &RuleBackend::default()).unwrap();
    assert_eq!(r.scene.deleted_background_ids.len(), scene.background_vehicles.len());
    assert_eq!(r.scene.vehicles.len(), 2);
    assert_eq!(r.scene.view.delta_position, [5.0, 0.0, 0.5]);
    let police = r.scene.vehicles.values().find(|v| v.asset_id == "car-004").unwrap();
    assert!(police.crazy_mode);
    let Value::Object(m) = &r.executed[2].config.entries["placement"] else { panic!() };
    assert_eq!(m["reference_id"], Value::String("veh-001".into()));
}

const ROUND_ONE: &str = "Ego vehicle drives ahead slowly. Add a car to the close front that is moving ahead.";
const ROUND_TWO: &str =
    "Modify the added car to turn left. Add a Chevrolet to the front of the added car. Add another vehicle to the left of the added Mini driving toward me.";

#[test]
fn two_round_scenario_binds_round_two_to_round_one() {
    let backend = RuleBackend::default();
    let s0 = demo_scene(7);
    let r1 = execute_round(ROUND_ONE, &s0, &backend).unwrap();
    assert_eq!(r1.scene.view.ego_speed, 3.0);
    assert_eq!(r1.scene.vehicles.len(), 1);
    let first = r1.scene.vehicles.values().next().unwrap().clone();
    assert_eq!(first.created_in_round, 1);
    assert_eq!(first.asset_id, "car-001");

    let r2 = execute_round(ROUND_TWO, &r1.scene, &backend).unwrap();
    assert_eq!(r2.round, 2);
    let modify = &r2.executed[0].config.entries;
    assert_eq!(modify["target_id"], Value::String(first.instance_id.clone()));
    assert_eq!(modify["mode"], Value::String("modify".into()));
    let turned = &r2.scene.vehicles[&first.instance_id];
    assert_eq!(turned.movement.action, Action::TurnLeft);
    assert_ne!(turned.trajectory, first.trajectory);

    for e in &r2.executed[1..] {
        assert_eq!(e.config.entries["placement"]["reference_id"], Value::String(first.instance_id.clone()));
    }
    assert_eq!(r2.scene.vehicles.len(), 3);
    assert!(r2.scene.vehicles.values().any(|v| v.asset_id == "car-003" && v.created_in_round == 2));
    assert_eq!(r2.scene.edit_log().len(), 2 + 3);
}

#[test]
fn recency_wins_when_two_instances_match() {
    let backend = RuleBackend::default();
    let r1 = execute_round("Add a Mini to the front.", &demo_scene(3), &backend).unwrap();
    let r2 = execute_round("Add a Mini to the back.", &r1.scene, &backend).unwrap();
    let newest = r2.scene.vehicles.values().max_by_key(|v| v.created_in_round).unwrap();
    assert_eq!(resolve_descriptor(&r2.scene, "mini").unwrap().instance_id, newest.instance_id);
    assert!(matches!(resolve_descriptor(&r2.scene, "truck"), Err(OrchestratorError::UnresolvedReference(d)) if d == "truck"));
}

#[test]
fn delete_all_hides_every_background_vehicle() {
    let mut scene = demo_scene(1);
    scene.background_vehicles.push(BackgroundVehicle { id: "bg-003".into(), ..scene.background_vehicles[0].clone() });
    let r = execute_round("Remove all cars in the scene.", &scene, &RuleBackend::default()).unwrap();
    assert_eq!(r.scene.deleted_background_ids.len(), 3);
}

#[test]
fn single_delete_removes_one_vehicle() {
    let backend = RuleBackend::default();
    let r1 = execute_round("Add two cars to the front.", &demo_scene(5), &backend).unwrap();
    assert_eq!(r1.scene.vehicles.len(), 2);
    let r2 = execute_round("Delete the car.", &r1.scene, &backend).unwrap();
    assert_eq!(r2.scene.vehicles.len(), 1);
    assert!(r2.scene.vehicles.contains_key("veh-001"));
    assert!(r2.scene.deleted_background_ids.is_empty());
}

#[test]
fn same_command_same_seed_gives_identical_scene() {
    let backend = RuleBackend::default();
    let a = execute_round(ROUND_ONE, &demo_scene(11), &backend).unwrap();
    let b = execute_round(ROUND_ONE, &demo_scene(11), &backend).unwrap();
    assert_eq!(a.scene.to_canonical_json(), b.scene.to_canonical_json());
}

// ---------------------------------------------------------------------------
// Atomicity

/// Rule backend that fails on its `fail_at`-th call.
struct FlakyBackend {
    inner: RuleBackend,
    calls: AtomicUsize,
    fail_at: usize,
    error: BackendError,
}

impl LanguageBackend for FlakyBackend {
    fn complete(&self, prompt: &str, command: &str) -> Result<String, BackendError> {
        if self.calls.fetch_add(1, Ordering::SeqCst) == self.fail_at {
            return Err(self.error.clone());
        }
        self.inner.complete(prompt, command)
    }

    fn name(&self) -> &str {
        "flaky"
    }
}

struct FixedBackend(String);

impl LanguageBackend for FixedBackend {
    fn complete(&self, _: &str, _: &str) -> Result<String, BackendError> {
        Ok(self.0.clone())
    }

    fn name(&self) -> &str {
        "fixed"
    }
}

#[test]
fn failures_at_every_backend_call_leave_the_scene_untouched() {
    let s0 = demo_scene(7);
    let r1 = execute_round(ROUND_ONE, &s0, &RuleBackend::default()).unwrap();
    let digest = r1.scene.digest();
    // One decomposition call plus one per instruction.
    for fail_at in 0..4 {
        for error in [BackendError::Network("down".into()), BackendError::Auth("401".into())] {
            let b = FlakyBackend { inner: RuleBackend::default(), calls: AtomicUsize::new(0), fail_at, error: error.clone() };
            let err = execute_round(ROUND_TWO, &r1.scene, &b).unwrap_err();
            assert!(matches!(err, OrchestratorError::Backend(e) if e == error));
            assert_eq!(r1.scene.digest(), digest);
        }
    }
}

#[test]
fn schema_and_resolution_failures_are_atomic() {
    let scene = demo_scene(2);
    let digest = scene.digest();
    let bad = FixedBackend(r#"{"instructions":[{"agent":"project_manager","text":"x"}]}"#.into());
    assert_eq!(execute_round("anything", &scene, &bad).unwrap_err().kind(), "schema_violation");
    let err = execute_round("Add a car to the front. Modify the added truck to turn left.", &scene, &RuleBackend::default()).unwrap_err();
    assert!(matches!(err, OrchestratorError::UnresolvedReference(ref d) if d == "truck"), "{err}");
    assert_eq!(scene.digest(), digest);
}

// ---------------------------------------------------------------------------
// Remote backend against a local mock

/// Serves `responses` (status, body) in order, one per connection, and counts
/// requests.
fn mock_server(responses: Vec<(u16, String)>) -> (String, Arc<AtomicUsize>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let count = Arc::new(AtomicUsize::new(0));
    let seen = count.clone();
    std::thread::spawn(move || {
        for (status, body) in responses {
            let Ok((stream, _)) = listener.accept() else { return };
            let mut reader = BufReader::new(stream);
            let mut len = 0usize;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                if line == "\r\n" || line.is_empty() {
                    break;
                }
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            seen.fetch_add(1, Ordering::SeqCst);
            let mut stream = reader.into_inner();
            let reply = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
            stream.write_all(reply.as_bytes()).unwrap();
        }
    });
    (format!("http://{addr}/v1/chat/completions"), count)
}

fn envelope(content: &str) -> String {
    serde_json::json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string()
}

#[test]
fn remote_passes_a_valid_config_through() {
    let (url, count) = mock_server(vec![(200, envelope(r#"{"delta_position":[2,0,0]}"#))]);
    let b = RemoteBackend::new(url, "key");
    let v = complete_json(&b, "prompt", "move view 2 meters ahead").unwrap();
    assert_eq!(v["delta_position"], serde_json::json!([2, 0, 0]));
    assert_eq!(count.load(Ordering::SeqCst), 1);
}

#[test]
fn remote_maps_401_to_auth_error() {
    let (url, _) = mock_server(vec![(401, r#"{"error":"bad key"}"#.into())]);
    let err = complete_json(&RemoteBackend::new(url, "wrong"), "p", "c").unwrap_err();
    assert!(matches!(err, BackendError::Auth(_)), "{err}");
}

#[test]
fn remote_retries_malformed_json_exactly_once() {
    let (url, count) = mock_server(vec![(200, envelope("not json")), (200, envelope("{still not")), (200, envelope("{}"))]);
    let err = complete_json(&RemoteBackend::new(url, "k"), "p", "c").unwrap_err();
    assert!(matches!(err, BackendError::MalformedResponse(_)), "{err}");
    assert_eq!(count.load(Ordering::SeqCst), 2);
}

#[test]
fn remote_unreachable_is_a_network_error() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let err = complete_json(&RemoteBackend::new(format!("http://127.0.0.1:{port}/"), ""), "p", "c").unwrap_err();
    assert!(matches!(err, BackendError::Network(_)), "{err}");
}
