//! Command decomposition and per-agent execution: a language backend turns a
//! command into instructions and each instruction into a structured config;
//! role functions then apply the configs to a scene graph, one round at a
//! time, all or nothing.

pub mod backend;
pub mod config;
pub mod prompts;
pub mod rules;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::motion::{plan_motion, place_vehicles, AdjustParams, Anchor, MotionError, MovementAttributes, PlacementContext};
use crate::scene::{colors_match, select_asset, EditEntry, Point2, SceneError, SceneGraph, VehicleInstance};
pub use backend::{complete_json, BackendError, LanguageBackend, RemoteBackend};
use config::{AgentConfig, AssetConfig, DeleteConfig, MotionConfig, MotionMode, RenderConfig, ViewConfig};
pub use rules::RuleBackend;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    ProjectManager,
    ViewAdjust,
    BackgroundRender,
    VehicleDelete,
    AssetManage,
    Motion,
    ForegroundRender,
}

impl AgentKind {
    pub const ALL: [AgentKind; 7] = [
        AgentKind::ProjectManager,
        AgentKind::ViewAdjust,
        AgentKind::BackgroundRender,
        AgentKind::VehicleDelete,
        AgentKind::AssetManage,
        AgentKind::Motion,
        AgentKind::ForegroundRender,
    ];

    /// Dispatch order within a round: delete, then add/modify, then view,
    /// then renders.
    pub fn dispatch_rank(self) -> u8 {
        match self {
            AgentKind::VehicleDelete => 0,
            AgentKind::AssetManage | AgentKind::Motion => 1,
            AgentKind::ViewAdjust => 2,
            AgentKind::BackgroundRender | AgentKind::ForegroundRender => 3,
            AgentKind::ProjectManager => 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Instruction {
    pub agent: AgentKind,
    pub text: String,
    pub round: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructuredConfig {
    pub agent: AgentKind,
    pub entries: Map<String, Value>,
}

impl StructuredConfig {
    pub fn from_typed(agent: AgentKind, cfg: &AgentConfig) -> Self {
        StructuredConfig { agent, entries: cfg.to_entries() }
    }

    pub fn typed(&self) -> Result<AgentConfig, OrchestratorError> {
        AgentConfig::parse(self.agent, &self.entries)
    }
}

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("command produced no actionable instruction")]
    EmptyDecomposition,
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("{agent:?} config violates its schema: {message}")]
    SchemaViolation { agent: AgentKind, message: String },
    #[error("no vehicle matches {0:?}")]
    UnresolvedReference(String),
    #[error(transparent)]
    Motion(#[from] MotionError),
    #[error(transparent)]
    Scene(#[from] SceneError),
}

impl OrchestratorError {
    /// Stable machine-readable kind.
    pub fn kind(&self) -> &'static str {
        match self {
            OrchestratorError::EmptyDecomposition => "empty_decomposition",
            OrchestratorError::Backend(BackendError::Network(_)) => "network_error",
            OrchestratorError::Backend(BackendError::Auth(_)) => "auth_error",
            OrchestratorError::Backend(BackendError::MalformedResponse(_)) => "malformed_response",
            OrchestratorError::Backend(BackendError::Config(_)) => "backend_config",
            OrchestratorError::SchemaViolation { .. } => "schema_violation",
            OrchestratorError::UnresolvedReference(_) => "unresolved_reference",
            OrchestratorError::Motion(MotionError::NoCandidate(_)) => "no_candidate",
            OrchestratorError::Motion(_) => "motion_error",
            OrchestratorError::Scene(SceneError::NoMatch) => "no_match",
            OrchestratorError::Scene(_) => "scene_error",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RenderKind {
    Background,
    Foreground,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderJob {
    pub kind: RenderKind,
    pub frame_start: usize,
    /// Inclusive.
    pub frame_end: usize,
}

#[derive(Clone, Debug)]
pub struct RoundResult {
    pub scene: SceneGraph,
    pub round: u64,
    /// Entries appended to the edit log this round.
    pub executed: Vec<EditEntry>,
    pub render_jobs: Vec<RenderJob>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Decomposition {
    instructions: Vec<RawInstruction>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInstruction {
    agent: AgentKind,
    text: String,
}

/// Splits a command into single-agent instructions, in command order.
pub fn decompose(command: &str, backend: &dyn LanguageBackend, scene: &SceneGraph, round: u64) -> Result<Vec<Instruction>, OrchestratorError> {
    if command.trim().is_empty() {
        return Err(OrchestratorError::EmptyDecomposition);
    }
    let prompt = prompts::with_memory(AgentKind::ProjectManager, scene);
    let raw = complete_json(backend, &prompt, command)?;
    let d: Decomposition = serde_json::from_value(raw).map_err(|e| OrchestratorError::SchemaViolation {
        agent: AgentKind::ProjectManager,
        message: e.to_string(),
    })?;
    let mut out = Vec::with_capacity(d.instructions.len());
    for r in d.instructions {
        if r.agent == AgentKind::ProjectManager {
            return Err(OrchestratorError::SchemaViolation {
                agent: AgentKind::ProjectManager,
                message: "instruction targets the project manager".into(),
            });
        }
        if r.text.trim().is_empty() {
            return Err(OrchestratorError::SchemaViolation { agent: r.agent, message: "empty instruction text".into() });
        }
        out.push(Instruction { agent: r.agent, text: r.text.trim().to_string(), round });
    }
    if out.is_empty() {
        return Err(OrchestratorError::EmptyDecomposition);
    }
    Ok(out)
}

/// Asks the backend for `instr`'s config and validates it.
pub fn parse_to_config(instr: &Instruction, backend: &dyn LanguageBackend, scene: &SceneGraph) -> Result<StructuredConfig, OrchestratorError> {
    if instr.agent == AgentKind::ProjectManager {
        return Err(OrchestratorError::SchemaViolation { agent: instr.agent, message: "not an executing agent".into() });
    }
    let prompt = prompts::with_memory(instr.agent, scene);
    let raw = complete_json(backend, &prompt, &instr.text)?;
    let Value::Object(entries) = raw else { unreachable!("complete_json returns objects") };
    let typed = AgentConfig::parse(instr.agent, &entries)?;
    Ok(StructuredConfig::from_typed(instr.agent, &typed))
}

// ---------------------------------------------------------------------------
// References

fn vehicle_matches(scene: &SceneGraph, veh: &VehicleInstance, descriptor: &str) -> bool {
    let vocab = rules::Vocabulary::builtin();
    let Ok(asset) = scene.asset(&veh.asset_id) else { return false };
    let color = veh.color_override.unwrap_or(asset.color);
    descriptor.split_whitespace().all(|w| {
        let w = w.to_lowercase();
        if vocab.generic_nouns.contains(&w) {
            true
        } else if let Some(c) = vocab.colors.get(&w) {
            colors_match(c, &color)
        } else if let Some(t) = vocab.types.get(&w) {
            asset.is_type(t)
        } else {
            asset.has_brand(&w) || asset.is_type(&w)
        }
    })
}

/// Most recently added vehicle matching `descriptor` (later round, then later
/// creation).
pub fn resolve_descriptor<'a>(scene: &'a SceneGraph, descriptor: &str) -> Result<&'a VehicleInstance, OrchestratorError> {
    scene
        .vehicles
        .values()
        .filter(|v| vehicle_matches(scene, v, descriptor))
        .max_by_key(|v| (v.created_in_round, v.seq))
        .ok_or_else(|| OrchestratorError::UnresolvedReference(descriptor.to_string()))
}

fn resolve_id(scene: &SceneGraph, id: &Option<String>, descriptor: &Option<String>) -> Result<Option<String>, OrchestratorError> {
    if let Some(id) = id {
        return if scene.vehicles.contains_key(id) { Ok(Some(id.clone())) } else { Err(OrchestratorError::UnresolvedReference(id.clone())) };
    }
    match descriptor {
        Some(d) => Ok(Some(resolve_descriptor(scene, d)?.instance_id.clone())),
        None => Ok(None),
    }
}

fn resolve_config(cfg: &mut AgentConfig, scene: &SceneGraph) -> Result<(), OrchestratorError> {
    match cfg {
        AgentConfig::Delete(d) => d.reference_id = resolve_id(scene, &d.reference_id, &d.reference)?,
        AgentConfig::Asset(a) => a.target_id = resolve_id(scene, &a.target_id, &a.target)?,
        AgentConfig::Motion(m) => {
            m.target_id = resolve_id(scene, &m.target_id, &m.target)?;
            m.placement.reference_id = resolve_id(scene, &m.placement.reference_id, &m.placement.reference)?;
        }
        AgentConfig::View(_) | AgentConfig::Render(_) => {}
    }
    Ok(())
}

/// Binds descriptors ("the added Mini") to instance ids against `scene`.
pub fn resolve_references(configs: &[StructuredConfig], scene: &SceneGraph) -> Result<Vec<StructuredConfig>, OrchestratorError> {
    configs
        .iter()
        .map(|c| {
            let mut typed = c.typed()?;
            resolve_config(&mut typed, scene)?;
            Ok(StructuredConfig::from_typed(c.agent, &typed))
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Role functions

fn instruction_rng(seed: u64, round: u64, index: usize) -> ChaCha8Rng {
    let mixed = seed ^ round.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (index as u64 + 1).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    ChaCha8Rng::seed_from_u64(mixed)
}

fn start_anchor(veh: &VehicleInstance) -> Anchor {
    veh.trajectory.samples.first().map(|s| Anchor::new(s.x, s.y, s.heading)).unwrap_or(Anchor::new(0.0, 0.0, 0.0))
}

fn occupied(scene: &SceneGraph) -> Vec<Point2> {
    let mut out = vec![scene.ego.position2()];
    out.extend(scene.vehicles_by_seq().into_iter().map(|v| start_anchor(v).position));
    out.extend(scene.visible_background().map(|b| Point2::new(b.center[0], b.center[1])));
    out
}

fn apply_view(scene: &mut SceneGraph, c: &ViewConfig) {
    for k in 0..3 {
        scene.view.delta_position[k] += c.delta_position[k];
        scene.view.delta_angles[k] += c.delta_angles[k];
    }
    if let Some(s) = c.ego_speed {
        scene.view.ego_speed = s;
    }
}

fn apply_delete(scene: &mut SceneGraph, c: &mut DeleteConfig) -> Result<(), OrchestratorError> {
    let mut removed = Vec::new();
    if let Some(id) = &c.reference_id {
        scene.vehicles.remove(id);
        removed.push(id.clone());
    } else {
        let type_ok = |t: &str| c.type_label.as_deref().is_none_or(|want| t.eq_ignore_ascii_case(want));
        let color_ok = |col: &crate::scene::Rgb| c.color.as_ref().is_none_or(|want| colors_match(want, col));
        let mut bg: Vec<String> = scene
            .visible_background()
            .filter(|b| c.brand.is_none() && type_ok(&b.type_label) && color_ok(&b.color))
            .map(|b| b.id.clone())
            .collect();
        let mut added: Vec<String> = scene
            .vehicles_by_seq()
            .into_iter()
            .filter(|v| {
                let Ok(asset) = scene.asset(&v.asset_id) else { return false };
                let color = v.color_override.unwrap_or(asset.color);
                type_ok(&asset.type_label) && c.brand.as_deref().is_none_or(|b| asset.has_brand(b)) && color_ok(&color)
            })
            .map(|v| v.instance_id.clone())
            .collect();
        if !c.all {
            // One vehicle: the latest insertion, else the first reconstructed one.
            if let Some(last) = added.pop() {
                added = vec![last];
                bg.clear();
            } else {
                bg.truncate(1);
            }
        }
        for id in &bg {
            scene.deleted_background_ids.insert(id.clone());
        }
        for id in &added {
            scene.vehicles.remove(id);
        }
        removed.extend(bg);
        removed.extend(added);
    }
    c.removed = removed;
    Ok(())
}

fn apply_asset(scene: &mut SceneGraph, c: &AssetConfig) -> Result<(), OrchestratorError> {
    let id = c.target_id.clone().ok_or_else(|| OrchestratorError::UnresolvedReference(c.target.clone().unwrap_or_default()))?;
    let new_asset = if c.asset.is_empty() { None } else { Some(select_asset(&scene.asset_bank, &c.asset)?.id.clone()) };
    let veh = scene.vehicles.get_mut(&id).ok_or_else(|| OrchestratorError::UnresolvedReference(id.clone()))?;
    if let Some(a) = new_asset {
        veh.asset_id = a;
    }
    if let Some(color) = c.color {
        veh.color_override = Some(color);
    }
    Ok(())
}

fn apply_motion(scene: &mut SceneGraph, c: &mut MotionConfig, round: u64, rng: &mut ChaCha8Rng, params: AdjustParams) -> Result<(), OrchestratorError> {
    match c.mode {
        MotionMode::Modify => {
            let id = c.target_id.clone().ok_or_else(|| OrchestratorError::UnresolvedReference(c.target.clone().unwrap_or_default()))?;
            let veh = scene.vehicles.get(&id).ok_or_else(|| OrchestratorError::UnresolvedReference(id.clone()))?;
            let movement = c.movement.apply_to(&veh.movement);
            let planned = plan_motion(&scene.lane_map, start_anchor(veh), &movement, veh.crazy_mode, params, rng)?;
            let veh = scene.vehicles.get_mut(&id).expect("checked above");
            veh.trajectory = planned.trajectory;
            veh.movement = movement;
            c.instance_ids = vec![id];
        }
        MotionMode::Add => {
            let asset = select_asset(&scene.asset_bank, &c.asset)?.clone();
            let color_override = c.asset.color.filter(|col| !colors_match(col, &asset.color));
            let ego = Anchor::from_pose(&scene.ego);
            let (anchor, follow_heading) = match &c.placement.reference_id {
                Some(id) => {
                    let reference = scene.vehicles.get(id).ok_or_else(|| OrchestratorError::UnresolvedReference(id.clone()))?;
                    let a = start_anchor(reference);
                    (a, Some(a.heading))
                }
                None => (ego, None),
            };
            let ctx = PlacementContext { anchor, observer: ego.position, follow_heading, existing: occupied(scene) };
            let attrs = c.placement.attributes();
            let placements = place_vehicles(&scene.lane_map, &attrs, &ctx, rng)?;
            let movement = c.movement.apply_to(&MovementAttributes::default());
            let mut ids = Vec::new();
            for p in placements {
                let planned = plan_motion(&scene.lane_map, p.anchor(), &movement, attrs.crazy_mode, params, rng)?;
                let seq = scene.next_vehicle_seq;
                scene.next_vehicle_seq += 1;
                let instance_id = format!("veh-{:03}", seq + 1);
                scene.vehicles.insert(
                    instance_id.clone(),
                    VehicleInstance {
                        instance_id: instance_id.clone(),
                        asset_id: asset.id.clone(),
                        color_override,
                        trajectory: planned.trajectory,
                        created_in_round: round,
                        seq,
                        crazy_mode: attrs.crazy_mode,
                        movement: movement.clone(),
                    },
                );
                ids.push(instance_id);
            }
            c.instance_ids = ids;
        }
    }
    Ok(())
}

fn render_job(agent: AgentKind, c: &mut RenderConfig, horizon: usize) -> RenderJob {
    let last = horizon.saturating_sub(1);
    let end = c.frame_end.unwrap_or(last).min(last);
    c.frame_start = c.frame_start.min(end);
    c.frame_end = Some(end);
    let kind = if agent == AgentKind::BackgroundRender { RenderKind::Background } else { RenderKind::Foreground };
    RenderJob { kind, frame_start: c.frame_start, frame_end: end }
}

/// Runs one command against `scene`. The input scene is never modified; on
/// success the result carries the updated copy.
pub fn execute_round(command: &str, scene: &SceneGraph, backend: &dyn LanguageBackend) -> Result<RoundResult, OrchestratorError> {
    execute_round_with(command, scene, backend, AdjustParams::default())
}

pub fn execute_round_with(command: &str, scene: &SceneGraph, backend: &dyn LanguageBackend, params: AdjustParams) -> Result<RoundResult, OrchestratorError> {
    let round = scene.round + 1;
    let instructions = decompose(command, backend, scene, round)?;
    let mut parsed = Vec::with_capacity(instructions.len());
    for instr in instructions {
        let cfg = parse_to_config(&instr, backend, scene)?.typed()?;
        parsed.push((instr, cfg));
    }
    parsed.sort_by_key(|(i, _)| i.agent.dispatch_rank());

    let mut work = scene.clone();
    let mut executed = Vec::with_capacity(parsed.len());
    let mut jobs = Vec::new();
    let mut explicit_render = false;
    for (index, (instr, mut cfg)) in parsed.into_iter().enumerate() {
        let mut rng = instruction_rng(scene.seed, round, index);
        resolve_config(&mut cfg, &work)?;
        match &mut cfg {
            AgentConfig::View(c) => apply_view(&mut work, c),
            AgentConfig::Delete(c) => apply_delete(&mut work, c)?,
            AgentConfig::Asset(c) => apply_asset(&mut work, c)?,
            AgentConfig::Motion(c) => apply_motion(&mut work, c, round, &mut rng, params)?,
            AgentConfig::Render(c) => {
                explicit_render = true;
                jobs.push(render_job(instr.agent, c, work.horizon()));
            }
        }
        let entry = EditEntry { round, instruction: instr.clone(), config: StructuredConfig::from_typed(instr.agent, &cfg) };
        work.record(entry.clone());
        executed.push(entry);
    }
    if !explicit_render {
        let end = work.horizon() - 1;
        jobs.push(RenderJob { kind: RenderKind::Background, frame_start: 0, frame_end: end });
        jobs.push(RenderJob { kind: RenderKind::Foreground, frame_start: 0, frame_end: end });
    }
    work.round = round;
    Ok(RoundResult { scene: work, round, executed, render_jobs: jobs })
}
