//! Text half of the generation prompt: caption, lane-type rule, neighbor
//! dynamics, worked examples and the required answer format.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::ContextVocabulary;
use crate::geometry::{point_segment_distance, wrap_angle, Vec2};
use crate::raster::RasterImage;
use crate::render::{ego_view, render, EgoView, RenderConfig, RenderError};
use crate::scenario::{AgentState, AgentType, LaneTurnType, MapFeature, MapFeatureKind, Scenario};

const DEFAULT_CAPTION: &str = include_str!("../templates/caption.txt");
const DEFAULT_MANIFEST: &str = include_str!("../templates/caption.toml");

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("template error: {0}")]
    Template(String),
    #[error("no lane centre line within {0} m of the ego")]
    NoLaneFound(f64),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error("cannot read template {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NegativeExample {
    pub text: String,
    pub error_analysis: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct OutputSection {
    instructions: String,
}

/// On-disk layout of the sidecar manifest.
#[derive(Debug, Clone, Deserialize)]
struct Manifest {
    lane_sentence: String,
    lane_explanations: BTreeMap<LaneTurnType, String>,
    neighbor_heading: String,
    neighbor_line: String,
    no_neighbors: String,
    positive_heading: String,
    negative_heading: String,
    error_analysis_label: String,
    #[serde(default)]
    positive_examples: Vec<String>,
    #[serde(default)]
    negative_examples: Vec<NegativeExample>,
    output: OutputSection,
    #[serde(default)]
    vocab: Option<ContextVocabulary>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplate {
    pub caption_template: String,
    pub lane_sentence: String,
    pub lane_explanations: BTreeMap<LaneTurnType, String>,
    pub neighbor_heading: String,
    pub neighbor_line: String,
    pub no_neighbors: String,
    pub positive_heading: String,
    pub negative_heading: String,
    pub error_analysis_label: String,
    pub positive_examples: Vec<String>,
    pub negative_examples: Vec<NegativeExample>,
    pub output_instructions: String,
    pub vocab: ContextVocabulary,
    pub max_neighbors: usize,
    pub lane: LaneRule,
}

/// Parameters of the rule-based lane-type detection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LaneRule {
    pub search_radius_m: f64,
    /// Meters added to the distance score for a lane pointing opposite to the ego.
    pub misalignment_penalty_m: f64,
    pub straight_max_deg: f64,
    pub u_turn_min_deg: f64,
}

impl Default for LaneRule {
    fn default() -> Self {
        LaneRule { search_radius_m: 5.0, misalignment_penalty_m: 10.0, straight_max_deg: 20.0, u_turn_min_deg: 135.0 }
    }
}

const CAPTION_KEYS: [&str; 4] = ["ego_type", "ego_speed", "neighbor_count", "crop_m"];
const LANE_KEYS: [&str; 2] = ["ego_type", "lane_type"];
const NEIGHBOR_KEYS: [&str; 5] = ["label", "agent_type", "distance", "bearing", "speed"];
const OUTPUT_KEYS: [&str; 3] = ["intention_words", "affordance_words", "scenario_words"];

impl Default for PromptTemplate {
    fn default() -> Self {
        PromptTemplate::from_sources(DEFAULT_CAPTION, DEFAULT_MANIFEST).expect("bundled template is valid")
    }
}

impl PromptTemplate {
    pub fn from_sources(caption: &str, manifest: &str) -> Result<Self, PromptError> {
        let m: Manifest = toml::from_str(manifest).map_err(|e| PromptError::Template(e.to_string()))?;
        let t = PromptTemplate {
            caption_template: caption.trim_end().to_string(),
            lane_sentence: m.lane_sentence,
            lane_explanations: m.lane_explanations,
            neighbor_heading: m.neighbor_heading,
            neighbor_line: m.neighbor_line,
            no_neighbors: m.no_neighbors,
            positive_heading: m.positive_heading,
            negative_heading: m.negative_heading,
            error_analysis_label: m.error_analysis_label,
            positive_examples: m.positive_examples,
            negative_examples: m.negative_examples,
            output_instructions: m.output.instructions.trim().to_string(),
            vocab: m.vocab.unwrap_or_default(),
            max_neighbors: 8,
            lane: LaneRule::default(),
        };
        t.validate()?;
        Ok(t)
    }

    /// Loads `caption` and its sidecar manifest (same path, `.toml` extension).
    pub fn load(caption: &Path) -> Result<Self, PromptError> {
        let read = |p: &Path| {
            std::fs::read_to_string(p).map_err(|source| PromptError::Io { path: p.display().to_string(), source })
        };
        PromptTemplate::from_sources(&read(caption)?, &read(&caption.with_extension("toml"))?)
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        check_placeholders(&self.caption_template, &CAPTION_KEYS)?;
        check_placeholders(&self.lane_sentence, &LANE_KEYS)?;
        check_placeholders(&self.neighbor_line, &NEIGHBOR_KEYS)?;
        check_placeholders(&self.output_instructions, &OUTPUT_KEYS)?;
        for t in LaneTurnType::ALL {
            if self.lane_explanations.get(&t).is_none_or(|e| e.trim().is_empty()) {
                return Err(PromptError::Template(format!("missing lane explanation for {t:?}")));
            }
        }
        for (i, n) in self.negative_examples.iter().enumerate() {
            if n.error_analysis.trim().is_empty() {
                return Err(PromptError::Template(format!("negative example {} has no error analysis", i + 1)));
            }
        }
        self.vocab.validate().map_err(|e| PromptError::Template(e.to_string()))
    }
}

/// Placeholder names in `text`; `{{` and `}}` are literal braces.
fn placeholders(text: &str) -> Result<Vec<String>, PromptError> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(i) = rest.find(['{', '}']) {
        let tail = &rest[i..];
        if tail.starts_with("{{") || tail.starts_with("}}") {
            rest = &tail[2..];
        } else if let Some(body) = tail.strip_prefix('{') {
            let end = body
                .find('}')
                .ok_or_else(|| PromptError::Template("unclosed placeholder".into()))?;
            out.push(body[..end].to_string());
            rest = &body[end + 1..];
        } else {
            rest = &tail[1..];
        }
    }
    Ok(out)
}

fn check_placeholders(text: &str, known: &[&str]) -> Result<(), PromptError> {
    for p in placeholders(text)? {
        if !known.contains(&p.as_str()) {
            return Err(PromptError::Template(format!("unresolved placeholder {{{p}}}")));
        }
    }
    Ok(())
}

/// Substitutes `{name}` placeholders. Any placeholder without a value is an error.
pub fn fill(text: &str, values: &[(&str, String)]) -> Result<String, PromptError> {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(i) = rest.find(['{', '}']) {
        out.push_str(&rest[..i]);
        let tail = &rest[i..];
        if tail.starts_with("{{") || tail.starts_with("}}") {
            out.push_str(&tail[..1]);
            rest = &tail[2..];
        } else if let Some(body) = tail.strip_prefix('{') {
            let end = body
                .find('}')
                .ok_or_else(|| PromptError::Template("unclosed placeholder".into()))?;
            let name = &body[..end];
            let value = values
                .iter()
                .find(|(k, _)| *k == name)
                .ok_or_else(|| PromptError::Template(format!("unresolved placeholder {{{name}}}")))?;
            out.push_str(&value.1);
            rest = &body[end + 1..];
        } else {
            out.push('}');
            rest = &tail[1..];
        }
    }
    out.push_str(rest);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaneDetection {
    pub lane_type: LaneTurnType,
    pub feature_id: String,
    pub distance: f64,
    /// Absolute angle between lane tangent and ego heading, radians.
    pub misalignment: f64,
    /// True when the type came from the map rather than the geometry rule.
    pub from_map: bool,
}

fn segment_angle(a: Vec2, b: Vec2) -> Option<f64> {
    let d = b - a;
    (d.norm() > 1e-9).then(|| d.y.atan2(d.x))
}

/// Signed tangent-direction change along `pts` from segment `from` onwards,
/// radians, positive to the left.
pub fn tangent_sweep(pts: &[Vec2], from: usize) -> f64 {
    let mut total = 0.0;
    let mut prev: Option<f64> = None;
    for w in pts[from.min(pts.len())..].windows(2) {
        if let Some(a) = segment_angle(w[0], w[1]) {
            if let Some(p) = prev {
                total += wrap_angle(a - p);
            }
            prev = Some(a);
        }
    }
    total
}

pub fn classify_sweep(sweep: f64, rule: &LaneRule) -> LaneTurnType {
    let deg = sweep.abs().to_degrees();
    if deg <= rule.straight_max_deg {
        LaneTurnType::StraightLane
    } else if deg <= rule.u_turn_min_deg {
        if sweep > 0.0 {
            LaneTurnType::LeftTurnLane
        } else {
            LaneTurnType::RightTurnLane
        }
    } else {
        LaneTurnType::UTurnLane
    }
}

/// Picks the lane the ego is driving in and determines its turn type.
///
/// Each lane is scored by its perpendicular distance to the ego plus a
/// penalty proportional to the heading misalignment; the lowest score wins,
/// ties going to the earlier map feature.
pub fn detect_lane_type(map: &[MapFeature], ego: &AgentState, rule: &LaneRule) -> Result<LaneDetection, PromptError> {
    let p = ego.position();
    let mut best: Option<(f64, usize, usize, f64, f64)> = None;
    for (fi, f) in map.iter().enumerate() {
        if f.kind != MapFeatureKind::LaneCenter {
            continue;
        }
        let pts: Vec<Vec2> = f.points().collect();
        let mut nearest: Option<(f64, usize)> = None;
        for (si, w) in pts.windows(2).enumerate() {
            if segment_angle(w[0], w[1]).is_none() {
                continue;
            }
            let (d, _) = point_segment_distance(p, w[0], w[1]);
            if nearest.is_none_or(|(bd, _)| d < bd) {
                nearest = Some((d, si));
            }
        }
        let Some((dist, si)) = nearest else { continue };
        if dist > rule.search_radius_m {
            continue;
        }
        let angle = segment_angle(pts[si], pts[si + 1]).expect("non-degenerate segment");
        let misalignment = wrap_angle(angle - ego.heading).abs();
        let score = dist + rule.misalignment_penalty_m * misalignment / std::f64::consts::PI;
        if best.is_none_or(|b| score < b.0) {
            best = Some((score, fi, si, dist, misalignment));
        }
    }
    let (_, fi, si, distance, misalignment) = best.ok_or(PromptError::NoLaneFound(rule.search_radius_m))?;
    let f = &map[fi];
    let (lane_type, from_map) = match f.lane_turn_type {
        Some(t) => (t, true),
        None => {
            let pts: Vec<Vec2> = f.points().collect();
            (classify_sweep(tangent_sweep(&pts, si), rule), false)
        }
    };
    Ok(LaneDetection { lane_type, feature_id: f.feature_id.clone(), distance, misalignment, from_map })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Bearing {
    N,
    NE,
    E,
    SE,
    S,
    SW,
    W,
    NW,
}

impl Bearing {
    const ALL: [Bearing; 8] = [Bearing::N, Bearing::NE, Bearing::E, Bearing::SE, Bearing::S, Bearing::SW, Bearing::W, Bearing::NW];

    /// Sector of an ego-frame offset, where +y (straight ahead) is north.
    pub fn from_offset(v: Vec2) -> Bearing {
        let deg = v.x.atan2(v.y).to_degrees().rem_euclid(360.0);
        Bearing::ALL[((deg / 45.0).round() as usize) % 8]
    }
}

impl fmt::Display for Bearing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborSummary {
    /// Same label as drawn on the map.
    pub label: String,
    pub agent_type: AgentType,
    pub speed: f64,
    pub relative_bearing: Bearing,
    pub distance: f64,
}

/// Nearest `max_neighbors` agents of the cropped view, nearest first.
pub fn summarize_neighbors(view: &EgoView, max_neighbors: usize) -> Vec<NeighborSummary> {
    view.neighbors
        .iter()
        .take(max_neighbors)
        .map(|n| NeighborSummary {
            label: n.label.map(|l| l.to_string()).unwrap_or_default(),
            agent_type: n.agent_type,
            speed: n.velocity.norm(),
            relative_bearing: Bearing::from_offset(n.position),
            distance: n.distance,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextPrompt {
    pub text: String,
    /// `None` when no lane was found and the lane block was left out.
    pub lane: Option<LaneDetection>,
    pub neighbors: Vec<NeighborSummary>,
}

fn list(words: impl IntoIterator<Item = impl AsRef<str>>) -> String {
    words.into_iter().map(|w| w.as_ref().to_string()).collect::<Vec<_>>().join(", ")
}

/// Assembles the prompt text and reports the lane and neighbor facts used.
pub fn compose_prompt(s: &Scenario, tmpl: &PromptTemplate, render_cfg: &RenderConfig) -> Result<TextPrompt, PromptError> {
    let view = ego_view(s, render_cfg)?;
    let ego = s.ego();
    let ego_type = ego.agent_type.name().to_string();
    let neighbors = summarize_neighbors(&view, tmpl.max_neighbors);
    let mut sections = Vec::new();

    sections.push(fill(
        &tmpl.caption_template,
        &[
            ("ego_type", ego_type.clone()),
            ("ego_speed", format!("{:.1}", ego.current().speed())),
            ("neighbor_count", neighbors.len().to_string()),
            ("crop_m", format!("{}", render_cfg.crop_meters(ego.agent_type))),
        ],
    )?);

    let lane = match detect_lane_type(&s.map, ego.current(), &tmpl.lane) {
        Ok(d) => Some(d),
        Err(PromptError::NoLaneFound(_)) => None,
        Err(e) => return Err(e),
    };
    if let Some(d) = &lane {
        let sentence = fill(&tmpl.lane_sentence, &[("ego_type", ego_type.clone()), ("lane_type", d.lane_type.phrase().into())])?;
        sections.push(format!("{sentence} {}", tmpl.lane_explanations[&d.lane_type]));
    }

    if neighbors.is_empty() {
        sections.push(tmpl.no_neighbors.clone());
    } else {
        let mut block = tmpl.neighbor_heading.clone();
        for n in &neighbors {
            block.push('\n');
            block.push_str(&fill(
                &tmpl.neighbor_line,
                &[
                    ("label", n.label.clone()),
                    ("agent_type", n.agent_type.name().into()),
                    ("distance", format!("{:.1}", n.distance)),
                    ("bearing", n.relative_bearing.to_string()),
                    ("speed", format!("{:.1}", n.speed)),
                ],
            )?);
        }
        sections.push(block);
    }

    if !tmpl.positive_examples.is_empty() {
        let mut block = tmpl.positive_heading.clone();
        for (i, e) in tmpl.positive_examples.iter().enumerate() {
            block.push_str(&format!("\n{}. {}", i + 1, e.trim()));
        }
        sections.push(block);
    }
    if !tmpl.negative_examples.is_empty() {
        let mut block = tmpl.negative_heading.clone();
        for (i, e) in tmpl.negative_examples.iter().enumerate() {
            block.push_str(&format!("\n{}. {}\n{} {}", i + 1, e.text.trim(), tmpl.error_analysis_label, e.error_analysis.trim()));
        }
        sections.push(block);
    }

    let v = &tmpl.vocab;
    sections.push(fill(
        &tmpl.output_instructions,
        &[
            ("intention_words", list(v.active_intentions.iter().map(|l| l.word()))),
            ("affordance_words", list(&v.affordance_words)),
            ("scenario_words", list(&v.scenario_words)),
        ],
    )?);

    let mut text = sections.join("\n\n");
    text.push('\n');
    Ok(TextPrompt { text, lane, neighbors })
}

pub fn build_text_prompt(s: &Scenario, tmpl: &PromptTemplate, render_cfg: &RenderConfig) -> Result<String, PromptError> {
    compose_prompt(s, tmpl, render_cfg).map(|p| p.text)
}

/// Map image plus prompt text for one ego agent.
#[derive(Debug, Clone, PartialEq)]
pub struct Tcgp {
    pub image: RasterImage,
    pub text: String,
    pub lane: Option<LaneDetection>,
    pub neighbors: Vec<NeighborSummary>,
}

pub fn build_tcgp(s: &Scenario, tmpl: &PromptTemplate, render_cfg: &RenderConfig) -> Result<Tcgp, PromptError> {
    let image = render(s, render_cfg)?;
    let p = compose_prompt(s, tmpl, render_cfg)?;
    Ok(Tcgp { image, text: p.text, lane: p.lane, neighbors: p.neighbors })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{AgentTrack, HISTORY_FRAMES};
    use std::f64::consts::{FRAC_PI_2, PI};

    fn lane(id: &str, pts: &[(f64, f64)]) -> MapFeature {
        MapFeature {
            feature_id: id.into(),
            kind: MapFeatureKind::LaneCenter,
            polyline: pts.iter().map(|&(x, y)| [x, y]).collect(),
            lane_turn_type: None,
        }
    }

    fn arc(cx: f64, cy: f64, r: f64, a0: f64, a1: f64, n: usize) -> Vec<(f64, f64)> {
        (0..=n)
            .map(|i| {
                let a = a0 + (a1 - a0) * i as f64 / n as f64;
                (cx + r * a.cos(), cy + r * a.sin())
            })
            .collect()
    }

    fn track(id: &str, t: AgentType, x: f64, y: f64, h: f64, speed: f64) -> AgentTrack {
        let st = AgentState::new(x, y, h, speed * h.cos(), speed * h.sin());
        AgentTrack { agent_id: id.into(), agent_type: t, history: vec![st; HISTORY_FRAMES], future: None }
    }

    fn scene(agents: Vec<AgentTrack>, map: Vec<MapFeature>) -> Scenario {
        Scenario { scenario_id: "p".into(), ego_agent_id: agents[0].agent_id.clone(), agents, map }
    }

    #[test]
    fn straight_lane_under_ego() {
        let map = vec![lane("l", &[(-50.0, 0.0), (50.0, 0.0)])];
        let d = detect_lane_type(&map, &AgentState::new(0.0, 0.5, 0.0, 1.0, 0.0), &LaneRule::default()).unwrap();
        assert_eq!(d.lane_type, LaneTurnType::StraightLane);
        assert!(!d.from_map);
    }

    #[test]
    fn left_and_right_quarter_arcs() {
        // Left: centre to the left of travel direction (+x), counter-clockwise sweep.
        let left = lane("l", &arc(0.0, 20.0, 20.0, -FRAC_PI_2, 0.0, 32));
        let d = detect_lane_type(&[left], &AgentState::new(0.0, 0.0, 0.0, 1.0, 0.0), &LaneRule::default()).unwrap();
        assert_eq!(d.lane_type, LaneTurnType::LeftTurnLane);
        let right = lane("r", &arc(0.0, -20.0, 20.0, FRAC_PI_2, 0.0, 32));
        let d = detect_lane_type(&[right], &AgentState::new(0.0, 0.0, 0.0, 1.0, 0.0), &LaneRule::default()).unwrap();
        assert_eq!(d.lane_type, LaneTurnType::RightTurnLane);
    }

    #[test]
    fn sweep_of_sampled_arc_matches_chord_geometry() {
        // Chords of an n-segment arc of angle A turn by A/n each: total A(n-1)/n.
        for (a, n) in [(FRAC_PI_2, 8usize), (PI, 16), (-PI * 0.75, 5)] {
            let pts: Vec<Vec2> = arc(0.0, 0.0, 10.0, 0.0, a, n).into_iter().map(|(x, y)| Vec2::new(x, y)).collect();
            let want = a * (n as f64 - 1.0) / n as f64;
            assert!((tangent_sweep(&pts, 0) - want).abs() < 1e-9);
        }
    }

    #[test]
    fn aligned_lane_beats_perpendicular_at_equal_distance() {
        let perpendicular = lane("perp", &[(2.0, -50.0), (2.0, 50.0)]);
        let aligned = lane("aligned", &[(-50.0, -2.0), (50.0, -2.0)]);
        let d = detect_lane_type(&[perpendicular, aligned], &AgentState::new(0.0, 0.0, 0.0, 1.0, 0.0), &LaneRule::default()).unwrap();
        assert_eq!(d.feature_id, "aligned");
    }

    #[test]
    fn map_supplied_type_wins_and_far_lane_ignored() {
        let mut l = lane("l", &[(-50.0, 0.0), (50.0, 0.0)]);
        l.lane_turn_type = Some(LaneTurnType::UTurnLane);
        let d = detect_lane_type(&[l.clone()], &AgentState::new(0.0, 1.0, 0.0, 1.0, 0.0), &LaneRule::default()).unwrap();
        assert_eq!((d.lane_type, d.from_map), (LaneTurnType::UTurnLane, true));
        assert!(matches!(
            detect_lane_type(&[l], &AgentState::new(0.0, 5.5, 0.0, 1.0, 0.0), &LaneRule::default()),
            Err(PromptError::NoLaneFound(_))
        ));
    }

    #[test]
    fn bearing_sectors() {
        assert_eq!(Bearing::from_offset(Vec2::new(0.0, 10.0)), Bearing::N);
        assert_eq!(Bearing::from_offset(Vec2::new(10.0, 0.0)), Bearing::E);
        assert_eq!(Bearing::from_offset(Vec2::new(-3.0, -3.0)), Bearing::SW);
        assert_eq!(Bearing::from_offset(Vec2::new(-10.0, 1.0)), Bearing::W);
        assert_eq!(Bearing::from_offset(Vec2::new(1.0, 10.0)), Bearing::N);
    }

    #[test]
    fn neighbor_ahead_summary() {
        // Ego heading east; neighbor 10 m further east is straight ahead.
        let s = scene(
            vec![track("ego", AgentType::Vehicle, 0.0, 0.0, 0.0, 0.0), track("n", AgentType::Vehicle, 10.0, 0.0, 0.0, 5.0)],
            vec![],
        );
        let view = ego_view(&s, &RenderConfig::default()).unwrap();
        let n = summarize_neighbors(&view, 8);
        assert_eq!(n.len(), 1);
        assert_eq!((n[0].label.as_str(), n[0].relative_bearing), ("1", Bearing::N));
        assert!((n[0].distance - 10.0).abs() < 1e-6 && (n[0].speed - 5.0).abs() < 1e-6);
    }

    #[test]
    fn twelve_neighbors_keep_nearest_eight() {
        let mut agents = vec![track("ego", AgentType::Vehicle, 0.0, 0.0, 0.3, 1.0)];
        let dists = [31.0, 5.0, 17.0, 9.0, 44.0, 2.5, 12.0, 28.0, 7.0, 39.0, 21.0, 14.0];
        for (i, d) in dists.iter().enumerate() {
            let a = i as f64 * 0.5;
            agents.push(track(&format!("n{i}"), AgentType::Pedestrian, d * a.cos(), d * a.sin(), 0.0, 1.0));
        }
        let view = ego_view(&scene(agents, vec![]), &RenderConfig::default()).unwrap();
        let got: Vec<f64> = summarize_neighbors(&view, 8).iter().map(|n| (n.distance * 1e3).round() / 1e3).collect();
        let mut want = dists.to_vec();
        want.sort_by(f64::total_cmp);
        want.truncate(8);
        assert_eq!(got, want);
    }

    #[test]
    fn zero_speed_and_lane_block_toggle() {
        let tmpl = PromptTemplate::default();
        let cfg = RenderConfig::default();
        let with = scene(vec![track("ego", AgentType::Vehicle, 0.0, 0.0, 0.0, 0.0)], vec![lane("l", &[(-50.0, 0.0), (50.0, 0.0)])]);
        let without = scene(vec![track("ego", AgentType::Vehicle, 0.0, 0.0, 0.0, 0.0)], vec![lane("l", &[(-50.0, 30.0), (50.0, 30.0)])]);
        let a = compose_prompt(&with, &tmpl, &cfg).unwrap();
        let b = compose_prompt(&without, &tmpl, &cfg).unwrap();
        assert!(a.text.contains("moving at 0.0 m/s"));
        assert!(b.lane.is_none());
        let block = format!(
            "{} {}\n\n",
            fill(&tmpl.lane_sentence, &[("ego_type", "vehicle".into()), ("lane_type", "straight lane".into())]).unwrap(),
            tmpl.lane_explanations[&LaneTurnType::StraightLane]
        );
        assert_eq!(a.text.replacen(&block, "", 1), b.text);
    }

    #[test]
    fn sections_appear_in_order() {
        let tmpl = PromptTemplate::default();
        let s = scene(
            vec![track("ego", AgentType::Cyclist, 0.0, 0.0, 0.0, 4.0), track("n", AgentType::Vehicle, 5.0, 5.0, 0.0, 1.0)],
            vec![lane("l", &[(-50.0, 0.0), (50.0, 0.0)])],
        );
        let text = build_text_prompt(&s, &tmpl, &RenderConfig::default()).unwrap();
        let marks = ["moving at 4.0 m/s", "straight lane.", "Agent 1:", &tmpl.positive_heading, &tmpl.negative_heading, "Error analysis:", "INTENTIONS: [one or more", "REASONING:"];
        let pos: Vec<usize> = marks.iter().map(|m| text.find(m).unwrap_or_else(|| panic!("{m} missing"))).collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]), "{pos:?}");
    }

    #[test]
    fn unresolved_placeholder_rejected() {
        assert!(matches!(fill("a {b} c", &[]), Err(PromptError::Template(_))));
        assert_eq!(fill("{{x}} {y}", &[("y", "1".into())]).unwrap(), "{x} 1");
        let mut t = PromptTemplate::default();
        t.caption_template.push_str(" {weather}");
        assert!(t.validate().is_err());
    }

    #[test]
    fn negative_examples_need_analysis() {
        let mut t = PromptTemplate::default();
        t.negative_examples[0].error_analysis = " ".into();
        assert!(t.validate().is_err());
    }
}
