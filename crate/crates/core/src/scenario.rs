//! Scenario data model, JSON ingestion and ground-truth intention labels.
//!
//! A scenario holds map polylines and per-agent tracks sampled at 10 Hz:
//! 11 history frames (index 10 is the current frame) and an optional
//! 80-frame future. All coordinates live in the scenario's global frame.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{wrap_angle, Vec2};

pub const HISTORY_FRAMES: usize = 11;
pub const FUTURE_FRAMES: usize = 80;
pub const CURRENT_FRAME: usize = HISTORY_FRAMES - 1;
/// Sampling period in seconds.
pub const DT: f64 = 0.1;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("value error: {0}")]
    Value(String),
    #[error("agent {0} not found")]
    UnknownAgent(String),
    #[error("agent {0} has no complete valid future")]
    MissingFuture(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub vx: f64,
    pub vy: f64,
    pub valid: bool,
}

impl AgentState {
    pub fn new(x: f64, y: f64, heading: f64, vx: f64, vy: f64) -> Self {
        AgentState { x, y, heading, vx, vy, valid: true }
    }

    pub fn invalid() -> Self {
        AgentState { x: 0.0, y: 0.0, heading: 0.0, vx: 0.0, vy: 0.0, valid: false }
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    pub fn speed(&self) -> f64 {
        self.vx.hypot(self.vy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AgentType {
    Vehicle,
    Pedestrian,
    Cyclist,
}

impl AgentType {
    pub const ALL: [AgentType; 3] = [AgentType::Vehicle, AgentType::Pedestrian, AgentType::Cyclist];

    pub fn index(self) -> usize {
        match self {
            AgentType::Vehicle => 0,
            AgentType::Pedestrian => 1,
            AgentType::Cyclist => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AgentType::Vehicle => "vehicle",
            AgentType::Pedestrian => "pedestrian",
            AgentType::Cyclist => "cyclist",
        }
    }
}

impl fmt::Display for AgentType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTrack {
    pub agent_id: String,
    pub agent_type: AgentType,
    pub history: Vec<AgentState>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub future: Option<Vec<AgentState>>,
}

impl AgentTrack {
    pub fn current(&self) -> &AgentState {
        &self.history[CURRENT_FRAME]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MapFeatureKind {
    LaneCenter,
    RoadEdge,
    Crosswalk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LaneTurnType {
    StraightLane,
    LeftTurnLane,
    RightTurnLane,
    UTurnLane,
}

impl LaneTurnType {
    pub const ALL: [LaneTurnType; 4] = [
        LaneTurnType::StraightLane,
        LaneTurnType::LeftTurnLane,
        LaneTurnType::RightTurnLane,
        LaneTurnType::UTurnLane,
    ];

    pub fn index(self) -> usize {
        match self {
            LaneTurnType::StraightLane => 0,
            LaneTurnType::LeftTurnLane => 1,
            LaneTurnType::RightTurnLane => 2,
            LaneTurnType::UTurnLane => 3,
        }
    }

    pub fn phrase(self) -> &'static str {
        match self {
            LaneTurnType::StraightLane => "straight lane",
            LaneTurnType::LeftTurnLane => "left-turn lane",
            LaneTurnType::RightTurnLane => "right-turn lane",
            LaneTurnType::UTurnLane => "U-turn lane",
        }
    }
}

/// A map element. Crosswalk polylines are polygon outlines and are treated
/// as closed whether or not the first point is repeated at the end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapFeature {
    pub feature_id: String,
    pub kind: MapFeatureKind,
    pub polyline: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lane_turn_type: Option<LaneTurnType>,
}

impl MapFeature {
    pub fn points(&self) -> impl Iterator<Item = Vec2> + '_ {
        self.polyline.iter().map(|p| Vec2::new(p[0], p[1]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub scenario_id: String,
    pub ego_agent_id: String,
    pub agents: Vec<AgentTrack>,
    pub map: Vec<MapFeature>,
}

impl Scenario {
    pub fn agent(&self, agent_id: &str) -> Option<&AgentTrack> {
        self.agents.iter().find(|a| a.agent_id == agent_id)
    }

    pub fn ego(&self) -> &AgentTrack {
        self.agent(&self.ego_agent_id)
            .expect("validated scenario always contains its ego agent")
    }

    /// Checks every type invariant of the scenario.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let mut seen = HashSet::new();
        for agent in &self.agents {
            if !seen.insert(agent.agent_id.as_str()) {
                return Err(ScenarioError::Schema(format!(
                    "duplicate agent_id {}",
                    agent.agent_id
                )));
            }
            if agent.history.len() != HISTORY_FRAMES {
                return Err(ScenarioError::Schema(format!(
                    "agent {}: history has {} frames, expected {}",
                    agent.agent_id,
                    agent.history.len(),
                    HISTORY_FRAMES
                )));
            }
            if let Some(future) = &agent.future {
                if future.len() != FUTURE_FRAMES {
                    return Err(ScenarioError::Schema(format!(
                        "agent {}: future has {} frames, expected {}",
                        agent.agent_id,
                        future.len(),
                        FUTURE_FRAMES
                    )));
                }
            }
            let states = agent.history.iter().chain(agent.future.iter().flatten());
            for (frame, st) in states.enumerate() {
                check_state(&agent.agent_id, frame, st)?;
            }
        }
        if !seen.contains(self.ego_agent_id.as_str()) {
            return Err(ScenarioError::Schema(format!(
                "ego_agent_id {} does not name an agent",
                self.ego_agent_id
            )));
        }
        if !self.ego().current().valid {
            return Err(ScenarioError::Value(format!(
                "ego agent {} has no valid current state",
                self.ego_agent_id
            )));
        }
        for feature in &self.map {
            let min_points = match feature.kind {
                MapFeatureKind::Crosswalk => 3,
                _ => 2,
            };
            if feature.polyline.len() < min_points {
                return Err(ScenarioError::Schema(format!(
                    "map feature {}: polyline needs at least {} points",
                    feature.feature_id, min_points
                )));
            }
            if feature.polyline.iter().flatten().any(|v| !v.is_finite()) {
                return Err(ScenarioError::Value(format!(
                    "map feature {}: non-finite coordinate",
                    feature.feature_id
                )));
            }
        }
        Ok(())
    }
}

fn check_state(agent_id: &str, frame: usize, st: &AgentState) -> Result<(), ScenarioError> {
    if !st.valid {
        return Ok(());
    }
    if ![st.x, st.y, st.heading, st.vx, st.vy].iter().all(|v| v.is_finite()) {
        return Err(ScenarioError::Value(format!(
            "agent {agent_id} frame {frame}: non-finite value"
        )));
    }
    if !(st.heading > -PI && st.heading <= PI) {
        return Err(ScenarioError::Value(format!(
            "agent {agent_id} frame {frame}: heading {} outside (-pi, pi]",
            st.heading
        )));
    }
    Ok(())
}

pub fn parse_scenario(bytes: &[u8]) -> Result<Scenario, ScenarioError> {
    let scenario: Scenario =
        serde_json::from_slice(bytes).map_err(|e| ScenarioError::Schema(e.to_string()))?;
    scenario.validate()?;
    Ok(scenario)
}

pub fn serialize_scenario(s: &Scenario) -> Vec<u8> {
    serde_json::to_vec_pretty(s).expect("scenario serialization is infallible")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum IntentionLabel {
    Stationary,
    Straight,
    StraightLeft,
    StraightRight,
    LeftTurn,
    RightTurn,
    LeftUTurn,
    RightUTurn,
}

impl IntentionLabel {
    pub const ALL: [IntentionLabel; 8] = [
        IntentionLabel::Stationary,
        IntentionLabel::Straight,
        IntentionLabel::StraightLeft,
        IntentionLabel::StraightRight,
        IntentionLabel::LeftTurn,
        IntentionLabel::RightTurn,
        IntentionLabel::LeftUTurn,
        IntentionLabel::RightUTurn,
    ];

    /// The word used for this label in prompts and LLM responses.
    pub fn word(self) -> &'static str {
        match self {
            IntentionLabel::Stationary => "Stationary",
            IntentionLabel::Straight => "Straight",
            IntentionLabel::StraightLeft => "Straight-Left",
            IntentionLabel::StraightRight => "Straight-Right",
            IntentionLabel::LeftTurn => "Left-Turn",
            IntentionLabel::RightTurn => "Right-Turn",
            IntentionLabel::LeftUTurn => "Left-U-Turn",
            IntentionLabel::RightUTurn => "Right-U-Turn",
        }
    }

    /// Folds the lane-change variants into `Straight`.
    pub fn merged(self) -> IntentionLabel {
        match self {
            IntentionLabel::StraightLeft | IntentionLabel::StraightRight => IntentionLabel::Straight,
            other => other,
        }
    }
}

impl fmt::Display for IntentionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.word())
    }
}

/// Thresholds of the trajectory-type rule used for ground-truth labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntentionThresholds {
    pub stationary_displacement_m: f64,
    pub stationary_speed_mps: f64,
    pub u_turn_deg: f64,
    pub turn_deg: f64,
    pub lane_change_lateral_m: f64,
}

impl Default for IntentionThresholds {
    fn default() -> Self {
        IntentionThresholds {
            stationary_displacement_m: 2.0,
            stationary_speed_mps: 0.5,
            u_turn_deg: 135.0,
            turn_deg: 30.0,
            lane_change_lateral_m: 3.5,
        }
    }
}

/// Labels the maneuver an agent performs over its future.
///
/// The heading change is accumulated frame by frame over valid states, so a
/// 180 degree turn keeps its direction. Lateral displacement is measured in
/// the frame of the current state, positive to the left.
pub fn label_gt_intention(
    s: &Scenario,
    agent_id: &str,
    th: &IntentionThresholds,
) -> Result<IntentionLabel, ScenarioError> {
    let agent = s
        .agent(agent_id)
        .ok_or_else(|| ScenarioError::UnknownAgent(agent_id.to_string()))?;
    let missing = || ScenarioError::MissingFuture(agent_id.to_string());
    let future = agent.future.as_ref().ok_or_else(missing)?;
    let start = agent.current();
    let end = future.last().ok_or_else(missing)?;
    if !start.valid || !end.valid {
        return Err(missing());
    }

    let mut max_speed = start.speed();
    let mut heading_change = 0.0;
    let mut prev_heading = start.heading;
    for st in future.iter().filter(|st| st.valid) {
        max_speed = max_speed.max(st.speed());
        heading_change += wrap_angle(st.heading - prev_heading);
        prev_heading = st.heading;
    }

    let delta = end.position() - start.position();
    if delta.norm() < th.stationary_displacement_m && max_speed < th.stationary_speed_mps {
        return Ok(IntentionLabel::Stationary);
    }

    let turn = heading_change.abs().to_degrees();
    let left = heading_change > 0.0;
    if turn > th.u_turn_deg {
        return Ok(if left { IntentionLabel::LeftUTurn } else { IntentionLabel::RightUTurn });
    }
    if turn > th.turn_deg {
        return Ok(if left { IntentionLabel::LeftTurn } else { IntentionLabel::RightTurn });
    }
    let lateral = delta.rotate(-start.heading).y;
    if lateral.abs() > th.lane_change_lateral_m {
        return Ok(if lateral > 0.0 {
            IntentionLabel::StraightLeft
        } else {
            IntentionLabel::StraightRight
        });
    }
    Ok(IntentionLabel::Straight)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn still_track(id: &str, n_future: Option<usize>) -> AgentTrack {
        AgentTrack {
            agent_id: id.into(),
            agent_type: AgentType::Vehicle,
            history: vec![AgentState::new(0.0, 0.0, 0.0, 0.0, 0.0); HISTORY_FRAMES],
            future: n_future.map(|n| vec![AgentState::new(0.0, 0.0, 0.0, 0.0, 0.0); n]),
        }
    }

    fn scenario_with(agents: Vec<AgentTrack>) -> Scenario {
        Scenario {
            scenario_id: "s".into(),
            ego_agent_id: agents[0].agent_id.clone(),
            agents,
            map: vec![],
        }
    }

    /// Builds a future from per-frame (speed, yaw-rate) pairs starting at the origin facing +x.
    fn drive(profile: impl Fn(usize) -> (f64, f64)) -> AgentTrack {
        let mut t = still_track("a", None);
        let (v0, _) = profile(0);
        for h in t.history.iter_mut() {
            h.vx = v0;
        }
        let (mut x, mut y, mut h) = (0.0f64, 0.0f64, 0.0f64);
        let mut fut = Vec::new();
        for i in 0..FUTURE_FRAMES {
            let (v, w) = profile(i);
            h = wrap_angle(h + w * DT);
            x += v * h.cos() * DT;
            y += v * h.sin() * DT;
            fut.push(AgentState::new(x, y, h, v * h.cos(), v * h.sin()));
        }
        t.future = Some(fut);
        t
    }

    #[test]
    fn minimal_file_parses() {
        let json = r#"{"scenario_id":"a","ego_agent_id":"1","map":[],
            "agents":[{"agent_id":"1","agent_type":"VEHICLE","history":["#;
        let state = r#"{"x":1.0,"y":2.0,"heading":0.5,"vx":0.0,"vy":0.0,"valid":true}"#;
        let body = vec![state; 11].join(",");
        let text = format!("{json}{body}]}}]}}");
        let s = parse_scenario(text.as_bytes()).unwrap();
        assert_eq!(s.agents.len(), 1);
        assert!(s.agents[0].future.is_none());
    }

    #[test]
    fn short_history_names_agent() {
        let mut t = still_track("veh-42", None);
        t.history.pop();
        let bytes = serde_json::to_vec(&scenario_with(vec![t])).unwrap();
        match parse_scenario(&bytes) {
            Err(ScenarioError::Schema(msg)) => assert!(msg.contains("veh-42"), "{msg}"),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn heading_out_of_range_rejected() {
        let mut t = still_track("a", None);
        t.history[3].heading = -PI;
        assert!(matches!(scenario_with(vec![t]).validate(), Err(ScenarioError::Value(_))));
    }

    #[test]
    fn invalid_ego_current_rejected() {
        let mut t = still_track("a", None);
        t.history[CURRENT_FRAME].valid = false;
        assert!(scenario_with(vec![t]).validate().is_err());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let s = scenario_with(vec![still_track("a", None), still_track("a", None)]);
        assert!(matches!(s.validate(), Err(ScenarioError::Schema(_))));
    }

    #[test]
    fn invalid_flags_survive_round_trip() {
        let mut t = still_track("a", Some(FUTURE_FRAMES));
        t.history[0] = AgentState { x: 3.0, y: -1.0, heading: 1.0, vx: 0.5, vy: 0.0, valid: false };
        t.future.as_mut().unwrap()[7].valid = false;
        let s = scenario_with(vec![t]);
        let back = parse_scenario(&serialize_scenario(&s)).unwrap();
        assert_eq!(back, s);
        assert!(!back.agents[0].history[0].valid);
    }

    #[test]
    fn constant_point_is_stationary() {
        let s = scenario_with(vec![still_track("a", Some(FUTURE_FRAMES))]);
        let label = label_gt_intention(&s, "a", &IntentionThresholds::default()).unwrap();
        assert_eq!(label, IntentionLabel::Stationary);
    }

    #[test]
    fn straight_twenty_metres() {
        let s = scenario_with(vec![drive(|_| (2.5, 0.0))]);
        let label = label_gt_intention(&s, "a", &IntentionThresholds::default()).unwrap();
        assert_eq!(label, IntentionLabel::Straight);
    }

    #[test]
    fn missing_future_reported() {
        let s = scenario_with(vec![still_track("a", None)]);
        assert!(matches!(
            label_gt_intention(&s, "a", &IntentionThresholds::default()),
            Err(ScenarioError::MissingFuture(_))
        ));
        let mut t = still_track("a", Some(FUTURE_FRAMES));
        t.future.as_mut().unwrap()[FUTURE_FRAMES - 1].valid = false;
        let s = scenario_with(vec![t]);
        assert!(label_gt_intention(&s, "a", &IntentionThresholds::default()).is_err());
    }

    /// Hand-executed rule on synthetic maneuvers: total heading change `turn`
    /// (degrees, spread over the middle 40 frames) plus optional lateral drift.
    #[test]
    fn synthetic_maneuvers_follow_threshold_rule() {
        // (speed m/s, turn deg, lateral m, expected)
        let cases: Vec<(f64, f64, f64, IntentionLabel)> = vec![
            (8.0, 0.0, 0.0, IntentionLabel::Straight),
            (2.0, 10.0, 0.0, IntentionLabel::Straight),
            (2.0, -20.0, 0.0, IntentionLabel::Straight),
            // 10 deg drift at speed: ~5.6 m lateral
            (8.0, 10.0, 0.0, IntentionLabel::StraightLeft),
            (8.0, 45.0, 0.0, IntentionLabel::LeftTurn),
            (8.0, 90.0, 0.0, IntentionLabel::LeftTurn),
            (8.0, 130.0, 0.0, IntentionLabel::LeftTurn),
            (8.0, -45.0, 0.0, IntentionLabel::RightTurn),
            (8.0, -90.0, 0.0, IntentionLabel::RightTurn),
            (1.5, -120.0, 0.0, IntentionLabel::RightTurn),
            (8.0, 140.0, 0.0, IntentionLabel::LeftUTurn),
            (8.0, 180.0, 0.0, IntentionLabel::LeftUTurn),
            (8.0, 200.0, 0.0, IntentionLabel::LeftUTurn),
            (8.0, -150.0, 0.0, IntentionLabel::RightUTurn),
            (1.2, -180.0, 0.0, IntentionLabel::RightUTurn),
            (8.0, 0.0, 4.0, IntentionLabel::StraightLeft),
            (8.0, 0.0, 6.0, IntentionLabel::StraightLeft),
            (8.0, 0.0, -4.0, IntentionLabel::StraightRight),
            (8.0, 0.0, 3.0, IntentionLabel::Straight),
            (8.0, 0.0, -2.0, IntentionLabel::Straight),
        ];
        for (speed, turn, lateral, expected) in cases {
            let track = if lateral == 0.0 {
                let rate = turn.to_radians() / (40.0 * DT);
                drive(move |i| (speed, if (20..60).contains(&i) { rate } else { 0.0 }))
            } else {
                // lane change: lateral offset follows a smooth ramp, heading restored at the end
                let mut t = drive(move |_| (speed, 0.0));
                for (i, st) in t.future.as_mut().unwrap().iter_mut().enumerate() {
                    let u = (i as f64 / (FUTURE_FRAMES - 1) as f64).clamp(0.0, 1.0);
                    st.y = lateral * (3.0 * u * u - 2.0 * u * u * u);
                    let dy = lateral * (6.0 * u - 6.0 * u * u) / ((FUTURE_FRAMES - 1) as f64 * DT);
                    st.heading = if i == FUTURE_FRAMES - 1 { 0.0 } else { dy.atan2(speed) };
                }
                t
            };
            let s = scenario_with(vec![track]);
            let label = label_gt_intention(&s, "a", &IntentionThresholds::default()).unwrap();
            assert_eq!(label, expected, "turn {turn} lateral {lateral}");
        }
    }
}
