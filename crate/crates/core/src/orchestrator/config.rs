//! Per-agent config schemas. A [`StructuredConfig`](super::StructuredConfig)
//! stores the normalized JSON form (every key present, defaults filled); these
//! types are the typed view used during execution.

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{AgentKind, OrchestratorError};
use crate::motion::{Action, DrivingDirection, MovementAttributes, PlacementAttributes, Sector};
use crate::motion::{SPEED_FAST, SPEED_NORMAL, SPEED_SLOW};
use crate::scene::{color_in_range, AssetQuery, Rgb};

pub const MAX_COUNT: u32 = 32;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewConfig {
    /// Meters in the ego frame: x ahead, y left, z up.
    #[serde(default)]
    pub delta_position: [f64; 3],
    /// Degrees: roll, pitch, yaw.
    #[serde(default)]
    pub delta_angles: [f64; 3],
    /// New ego speed in m/s; `None` keeps the current one.
    #[serde(default)]
    pub ego_speed: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeleteConfig {
    #[serde(default)]
    pub all: bool,
    #[serde(rename = "type", default)]
    pub type_label: Option<String>,
    #[serde(default)]
    pub brand: Option<String>,
    #[serde(default)]
    pub color: Option<Rgb>,
    /// Descriptor of a previously added vehicle ("porsche", "red car").
    #[serde(default)]
    pub reference: Option<String>,
    #[serde(default)]
    pub reference_id: Option<String>,
    /// Filled at execution: ids actually removed.
    #[serde(default)]
    pub removed: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssetConfig {
    #[serde(default)]
    pub target: Option<String>,
    #[serde(default)]
    pub target_id: Option<String>,
    #[serde(default)]
    pub color: Option<Rgb>,
    /// Non-empty: swap the target's asset for the best match.
    #[serde(default)]
    pub asset: AssetQuery,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionMode {
    #[default]
    Add,
    Modify,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeedClass {
    Slow,
    Normal,
    Fast,
}

impl SpeedClass {
    pub fn meters_per_second(self) -> f64 {
        match self {
            SpeedClass::Slow => SPEED_SLOW,
            SpeedClass::Normal => SPEED_NORMAL,
            SpeedClass::Fast => SPEED_FAST,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlacementConfig {
    #[serde(default = "one")]
    pub count: u32,
    #[serde(default)]
    pub distance_range: Option<(f64, f64)>,
    #[serde(default = "front")]
    pub sector: Sector,
    #[serde(default)]
    pub driving_direction: Option<DrivingDirection>,
    #[serde(default)]
    pub crazy_mode: bool,
    /// Sector and distance are relative to this vehicle when set.
    #[serde(default)]
    pub reference: Option<String>,
    #[serde(default)]
    pub reference_id: Option<String>,
}

fn one() -> u32 {
    1
}

fn front() -> Sector {
    Sector::Front
}

impl Default for PlacementConfig {
    fn default() -> Self {
        PlacementConfig {
            count: 1,
            distance_range: None,
            sector: Sector::Front,
            driving_direction: None,
            crazy_mode: false,
            reference: None,
            reference_id: None,
        }
    }
}

impl PlacementConfig {
    pub fn attributes(&self) -> PlacementAttributes {
        PlacementAttributes {
            count: self.count,
            distance_range: self.distance_range,
            sector: self.sector,
            driving_direction: self.driving_direction,
            crazy_mode: self.crazy_mode,
        }
    }
}

/// Movement request. `None` fields mean "default" for additions and
/// "unchanged" for modifications.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MovementConfig {
    #[serde(default)]
    pub speed_class: Option<SpeedClass>,
    /// Explicit m/s; wins over `speed_class`.
    #[serde(default)]
    pub speed: Option<f64>,
    #[serde(default)]
    pub action: Option<Action>,
    #[serde(default)]
    pub duration: Option<f64>,
    #[serde(default)]
    pub interval: Option<f64>,
    #[serde(default)]
    pub sample_rate: Option<f64>,
}

impl MovementConfig {
    pub fn apply_to(&self, base: &MovementAttributes) -> MovementAttributes {
        let speed = self.speed.or(self.speed_class.map(SpeedClass::meters_per_second)).unwrap_or(base.speed);
        MovementAttributes {
            speed,
            action: self.action.unwrap_or(base.action),
            duration: self.duration.unwrap_or(base.duration),
            interval: self.interval.or(base.interval),
            sample_rate: self.sample_rate.unwrap_or(base.sample_rate),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotionConfig {
    #[serde(default)]
    pub mode: MotionMode,
    /// Vehicle to modify (descriptor); required for `modify`.
    #[serde(default)]
    pub target: Option<String>,
    #[serde(default)]
    pub target_id: Option<String>,
    #[serde(default)]
    pub asset: AssetQuery,
    #[serde(default)]
    pub placement: PlacementConfig,
    #[serde(default)]
    pub movement: MovementConfig,
    /// Filled at execution: created or re-planned instance ids.
    #[serde(default)]
    pub instance_ids: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderConfig {
    #[serde(default)]
    pub frame_start: usize,
    /// Inclusive; `None` renders to the end of the scene horizon.
    #[serde(default)]
    pub frame_end: Option<usize>,
}

/// Typed config for one agent.
#[derive(Clone, Debug, PartialEq)]
pub enum AgentConfig {
    View(ViewConfig),
    Delete(DeleteConfig),
    Asset(AssetConfig),
    Motion(MotionConfig),
    Render(RenderConfig),
}

fn schema_err(agent: AgentKind, message: impl Into<String>) -> OrchestratorError {
    OrchestratorError::SchemaViolation { agent, message: message.into() }
}

fn typed<T: DeserializeOwned>(agent: AgentKind, entries: &Map<String, Value>) -> Result<T, OrchestratorError> {
    serde_json::from_value(Value::Object(entries.clone())).map_err(|e| schema_err(agent, e.to_string()))
}

fn check_color(agent: AgentKind, c: &Option<Rgb>) -> Result<(), OrchestratorError> {
    match c {
        Some(c) if !color_in_range(c) => Err(schema_err(agent, format!("color {c:?} outside [0,1]"))),
        _ => Ok(()),
    }
}

fn check_finite(agent: AgentKind, what: &str, v: &[f64]) -> Result<(), OrchestratorError> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(schema_err(agent, format!("{what} must be finite")))
    }
}

impl AgentConfig {
    /// Parses and validates raw entries against `agent`'s schema.
    pub fn parse(agent: AgentKind, entries: &Map<String, Value>) -> Result<Self, OrchestratorError> {
        let cfg = match agent {
            AgentKind::ProjectManager => return Err(schema_err(agent, "the project manager has no config schema")),
            AgentKind::ViewAdjust => AgentConfig::View(typed(agent, entries)?),
            AgentKind::VehicleDelete => AgentConfig::Delete(typed(agent, entries)?),
            AgentKind::AssetManage => AgentConfig::Asset(typed(agent, entries)?),
            AgentKind::Motion => AgentConfig::Motion(typed(agent, entries)?),
            AgentKind::BackgroundRender | AgentKind::ForegroundRender => AgentConfig::Render(typed(agent, entries)?),
        };
        cfg.validate(agent)?;
        Ok(cfg)
    }

    fn validate(&self, agent: AgentKind) -> Result<(), OrchestratorError> {
        match self {
            AgentConfig::View(v) => {
                check_finite(agent, "delta_position", &v.delta_position)?;
                check_finite(agent, "delta_angles", &v.delta_angles)?;
                if let Some(s) = v.ego_speed {
                    if !(s >= 0.0 && s.is_finite()) {
                        return Err(schema_err(agent, "ego_speed must be >= 0"));
                    }
                }
            }
            AgentConfig::Delete(d) => check_color(agent, &d.color)?,
            AgentConfig::Asset(a) => {
                check_color(agent, &a.color)?;
                check_color(agent, &a.asset.color)?;
                if a.target.is_none() && a.target_id.is_none() {
                    return Err(schema_err(agent, "asset edits need a target vehicle"));
                }
            }
            AgentConfig::Motion(m) => {
                check_color(agent, &m.asset.color)?;
                let p = &m.placement;
                if p.count == 0 || p.count > MAX_COUNT {
                    return Err(schema_err(agent, format!("count must be in 1..={MAX_COUNT}")));
                }
                if let Some((lo, hi)) = p.distance_range {
                    if !(lo >= 0.0 && lo < hi && hi.is_finite()) {
                        return Err(schema_err(agent, format!("distance_range ({lo}, {hi}) needs 0 <= min < max")));
                    }
                }
                let mv = &m.movement;
                if mv.speed.is_some_and(|s| !(s >= 0.0 && s.is_finite())) {
                    return Err(schema_err(agent, "speed must be >= 0"));
                }
                if mv.duration.is_some_and(|d| !(d > 0.0 && d.is_finite())) {
                    return Err(schema_err(agent, "duration must be > 0"));
                }
                if mv.sample_rate.is_some_and(|r| !(r > 0.0 && r.is_finite())) {
                    return Err(schema_err(agent, "sample_rate must be > 0"));
                }
                if m.mode == MotionMode::Modify && m.target.is_none() && m.target_id.is_none() {
                    return Err(schema_err(agent, "modify needs a target vehicle"));
                }
            }
            AgentConfig::Render(r) => {
                if r.frame_end.is_some_and(|e| e < r.frame_start) {
                    return Err(schema_err(agent, "frame_end before frame_start"));
                }
            }
        }
        Ok(())
    }

    /// Normalized JSON entries with every key present.
    pub fn to_entries(&self) -> Map<String, Value> {
        let v = match self {
            AgentConfig::View(c) => serde_json::to_value(c),
            AgentConfig::Delete(c) => serde_json::to_value(c),
            AgentConfig::Asset(c) => serde_json::to_value(c),
            AgentConfig::Motion(c) => serde_json::to_value(c),
            AgentConfig::Render(c) => serde_json::to_value(c),
        };
        match v.expect("configs serialize") {
            Value::Object(m) => m,
            _ => unreachable!("configs are structs"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn obj(v: Value) -> Map<String, Value> {
        v.as_object().unwrap().clone()
    }

    #[test]
    fn empty_view_config_fills_defaults() {
        let cfg = AgentConfig::parse(AgentKind::ViewAdjust, &Map::new()).unwrap();
        assert_eq!(cfg, AgentConfig::View(ViewConfig::default()));
        let entries = cfg.to_entries();
        assert_eq!(entries["delta_position"], json!([0.0, 0.0, 0.0]));
        assert_eq!(entries["delta_angles"], json!([0.0, 0.0, 0.0]));
        assert_eq!(entries["ego_speed"], Value::Null);
    }

    #[test]
    fn unknown_keys_are_schema_violations() {
        let err = AgentConfig::parse(AgentKind::ViewAdjust, &obj(json!({"zoom": 2}))).unwrap_err();
        assert!(matches!(err, OrchestratorError::SchemaViolation { agent: AgentKind::ViewAdjust, .. }));
    }

    #[test]
    fn motion_validation() {
        let bad_count = obj(json!({"placement": {"count": 0}}));
        assert!(AgentConfig::parse(AgentKind::Motion, &bad_count).is_err());
        let bad_range = obj(json!({"placement": {"distance_range": [10.0, 5.0]}}));
        assert!(AgentConfig::parse(AgentKind::Motion, &bad_range).is_err());
        let modify_without_target = obj(json!({"mode": "modify"}));
        assert!(AgentConfig::parse(AgentKind::Motion, &modify_without_target).is_err());
        let ok = obj(json!({"placement": {"sector": "left_front"}, "movement": {"speed_class": "fast"}}));
        let AgentConfig::Motion(m) = AgentConfig::parse(AgentKind::Motion, &ok).unwrap() else { panic!() };
        assert_eq!(m.placement.sector, Sector::LeftFront);
        assert_eq!(m.movement.apply_to(&MovementAttributes::default()).speed, 15.0);
    }

    #[test]
    fn normalization_round_trips() {
        let raw = obj(json!({"mode": "add", "asset": {"brand": "Porsche"}, "placement": {"crazy_mode": true}}));
        let cfg = AgentConfig::parse(AgentKind::Motion, &raw).unwrap();
        let again = AgentConfig::parse(AgentKind::Motion, &cfg.to_entries()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn out_of_range_color_rejected() {
        let raw = obj(json!({"target": "car", "color": [0.0, 0.0, 1.5]}));
        assert!(AgentConfig::parse(AgentKind::AssetManage, &raw).is_err());
    }
}
