//! Versioned prompt templates, one per agent. Each starts with an
//! `agent: <kind>` marker line, followed by role, actions, output schema and
//! few-shot examples.

use super::AgentKind;
use crate::scene::SceneGraph;

pub fn template(agent: AgentKind) -> &'static str {
    match agent {
        AgentKind::ProjectManager => include_str!("../../data/prompts/project_manager.txt"),
        AgentKind::ViewAdjust => include_str!("../../data/prompts/view_adjust.txt"),
        AgentKind::BackgroundRender => include_str!("../../data/prompts/background_render.txt"),
        AgentKind::VehicleDelete => include_str!("../../data/prompts/vehicle_delete.txt"),
        AgentKind::AssetManage => include_str!("../../data/prompts/asset_manage.txt"),
        AgentKind::Motion => include_str!("../../data/prompts/motion.txt"),
        AgentKind::ForegroundRender => include_str!("../../data/prompts/foreground_render.txt"),
    }
}

/// Agent named by the first `agent:` line of a prompt.
pub fn agent_marker(prompt: &str) -> Option<AgentKind> {
    let line = prompt.lines().find_map(|l| l.trim().strip_prefix("agent:"))?;
    serde_json::from_value(serde_json::Value::String(line.trim().to_string())).ok()
}

/// Template plus a summary of vehicles added so far, so a remote model can
/// see what "the added car" refers to.
pub fn with_memory(agent: AgentKind, scene: &SceneGraph) -> String {
    let mut out = template(agent).to_string();
    let vehicles = scene.vehicles_by_seq();
    if vehicles.is_empty() {
        return out;
    }
    out.push_str("\n# Scene memory\n");
    for veh in vehicles {
        let asset = scene.asset(&veh.asset_id).ok();
        let brand = asset.and_then(|a| a.brand_tags.first()).map(String::as_str).unwrap_or("");
        let kind = asset.map(|a| a.type_label.as_str()).unwrap_or("");
        out.push_str(&format!(
            "- {} added in round {}: {} {} (asset {})\n",
            veh.instance_id, veh.created_in_round, brand, kind, veh.asset_id
        ));
    }
    out
}
