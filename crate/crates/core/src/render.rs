//! Ego-centric, north-normalized raster of a scenario (the TC-Map).
//!
//! The ego agent sits at the image center facing up. The visible window is a
//! square whose side depends on the ego type; everything outside is cropped.
//! Neighbors are ordered by distance to the ego and get 1-based labels and a
//! color from an 8-entry cycle in that order.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CenteredSquare, EgoFrame, Vec2};
use crate::raster::{text_width, Canvas, RasterImage, Rgba};
use crate::scenario::{AgentType, MapFeature, MapFeatureKind, Scenario, CURRENT_FRAME};

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("image side {side}px exceeds the configured maximum {max}px")]
    TooLarge { side: u32, max: u32 },
    #[error("invalid render config: {0}")]
    Config(String),
    #[error("ego agent {0} missing or without a valid current state")]
    InvalidEgo(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Footprint {
    pub length: f64,
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Palette {
    pub background: Rgba,
    pub ego: Rgba,
    pub neighbors: Vec<Rgba>,
    pub lane: Rgba,
    pub road_edge: Rgba,
    pub crosswalk: Rgba,
    pub arrow: Rgba,
    pub label: Rgba,
    pub north_icon: Rgba,
    pub trail: Rgba,
}

impl Default for Palette {
    fn default() -> Self {
        Palette {
            background: [255, 255, 255, 255],
            ego: [220, 20, 60, 255],
            neighbors: vec![
                [31, 119, 180, 255],
                [44, 160, 44, 255],
                [255, 127, 14, 255],
                [148, 103, 189, 255],
                [23, 190, 207, 255],
                [227, 119, 194, 255],
                [140, 86, 75, 255],
                [188, 189, 34, 255],
            ],
            lane: [170, 170, 170, 255],
            road_edge: [40, 40, 40, 255],
            crosswalk: [250, 215, 120, 255],
            arrow: [0, 0, 0, 255],
            label: [0, 0, 0, 255],
            north_icon: [60, 60, 60, 255],
            trail: [245, 160, 170, 255],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderConfig {
    pub crop_meters_by_type: BTreeMap<AgentType, f64>,
    /// Meters per pixel.
    pub resolution: f64,
    pub palette: Palette,
    pub draw_heading_arrows: bool,
    pub draw_labels: bool,
    pub draw_north_icon: bool,
    pub draw_ego_trail: bool,
    pub draw_neighbor_trails: bool,
    pub footprints: BTreeMap<AgentType, Footprint>,
    pub max_image_side: u32,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            crop_meters_by_type: BTreeMap::from([
                (AgentType::Vehicle, 120.0),
                (AgentType::Pedestrian, 80.0),
                (AgentType::Cyclist, 60.0),
            ]),
            resolution: 0.25,
            palette: Palette::default(),
            draw_heading_arrows: true,
            draw_labels: true,
            draw_north_icon: true,
            draw_ego_trail: true,
            draw_neighbor_trails: false,
            footprints: BTreeMap::from([
                (AgentType::Vehicle, Footprint { length: 4.5, width: 2.0 }),
                (AgentType::Pedestrian, Footprint { length: 0.8, width: 0.8 }),
                (AgentType::Cyclist, Footprint { length: 1.8, width: 0.6 }),
            ]),
            max_image_side: 4096,
        }
    }
}

impl RenderConfig {
    pub fn crop_meters(&self, t: AgentType) -> f64 {
        self.crop_meters_by_type.get(&t).copied().unwrap_or(120.0)
    }

    pub fn footprint(&self, t: AgentType) -> Footprint {
        self.footprints
            .get(&t)
            .copied()
            .unwrap_or(Footprint { length: 4.5, width: 2.0 })
    }

    /// Image side in pixels for an ego of type `t`.
    pub fn image_side(&self, t: AgentType) -> u32 {
        (self.crop_meters(t) / self.resolution).round() as u32
    }

    pub fn neighbor_color(&self, label: usize) -> Rgba {
        let cycle = &self.palette.neighbors;
        cycle[(label - 1) % cycle.len()]
    }

    pub fn validate(&self) -> Result<(), RenderError> {
        if !(self.resolution > 0.0 && self.resolution.is_finite()) {
            return Err(RenderError::Config("resolution must be positive".into()));
        }
        for (t, side) in &self.crop_meters_by_type {
            if !(*side > 0.0 && side.is_finite()) {
                return Err(RenderError::Config(format!("crop side for {t} must be positive")));
            }
        }
        if self.palette.neighbors.is_empty() {
            return Err(RenderError::Config("neighbor color cycle is empty".into()));
        }
        if self.palette.neighbors.contains(&self.palette.ego) {
            return Err(RenderError::Config("ego color must differ from neighbor colors".into()));
        }
        Ok(())
    }
}

/// An agent seen from the ego frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewAgent {
    pub agent_id: String,
    pub agent_type: AgentType,
    pub position: Vec2,
    pub heading: f64,
    pub velocity: Vec2,
    pub distance: f64,
    /// 1-based rank by distance; `None` for the ego.
    pub label: Option<usize>,
    pub trail: Vec<Vec2>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewFeature {
    pub feature_index: usize,
    pub kind: MapFeatureKind,
    /// Open polylines for lanes/edges; a single closed ring for crosswalks.
    pub pieces: Vec<Vec<Vec2>>,
}

/// The cropped scene in ego-frame coordinates, shared by the renderer and the
/// prompt builder so that labels agree between image and text.
#[derive(Debug, Clone, PartialEq)]
pub struct EgoView {
    pub frame: EgoFrame,
    pub half: f64,
    pub ego: ViewAgent,
    pub neighbors: Vec<ViewAgent>,
    pub features: Vec<ViewFeature>,
}

// Ego-frame coordinates are snapped to a 2^-20 m grid so rigidly transformed
// copies of a scenario rasterize identically.
const SNAP: f64 = 1_048_576.0;

fn snap(v: f64) -> f64 {
    (v * SNAP).round() / SNAP
}

fn snap_vec(p: Vec2) -> Vec2 {
    Vec2::new(snap(p.x), snap(p.y))
}

fn view_agent(frame: &EgoFrame, track: &crate::scenario::AgentTrack) -> ViewAgent {
    let cur = track.current();
    let position = snap_vec(frame.point(cur.position()));
    let trail = track
        .history
        .iter()
        .filter(|s| s.valid)
        .map(|s| snap_vec(frame.point(s.position())))
        .collect();
    ViewAgent {
        agent_id: track.agent_id.clone(),
        agent_type: track.agent_type,
        position,
        heading: (frame.heading(cur.heading) * SNAP).round() / SNAP,
        velocity: snap_vec(frame.vector(Vec2::new(cur.vx, cur.vy))),
        distance: position.norm(),
        label: None,
        trail,
    }
}

/// Builds the cropped ego-frame view of `s`.
pub fn ego_view(s: &Scenario, cfg: &RenderConfig) -> Result<EgoView, RenderError> {
    let ego_track = s
        .agent(&s.ego_agent_id)
        .filter(|a| a.history.len() > CURRENT_FRAME && a.current().valid)
        .ok_or_else(|| RenderError::InvalidEgo(s.ego_agent_id.clone()))?;
    let frame = EgoFrame::new(ego_track.current());
    let half = cfg.crop_meters(ego_track.agent_type) / 2.0;
    let square = CenteredSquare { half };

    let mut ego = view_agent(&frame, ego_track);
    ego.position = Vec2::default();
    ego.heading = FRAC_PI_2;
    ego.distance = 0.0;

    let mut neighbors: Vec<ViewAgent> = s
        .agents
        .iter()
        .filter(|a| a.agent_id != s.ego_agent_id && a.history.len() > CURRENT_FRAME && a.current().valid)
        .map(|a| view_agent(&frame, a))
        .filter(|a| square.contains(a.position))
        .collect();
    neighbors.sort_by(|a, b| {
        a.distance
            .total_cmp(&b.distance)
            .then_with(|| a.agent_id.cmp(&b.agent_id))
    });
    for (i, n) in neighbors.iter_mut().enumerate() {
        n.label = Some(i + 1);
    }

    let mut features = Vec::new();
    for (idx, f) in s.map.iter().enumerate() {
        let pts: Vec<Vec2> = f.points().map(|p| snap_vec(frame.point(p))).collect();
        let pieces = match f.kind {
            MapFeatureKind::Crosswalk => {
                let ring = square.clip_polygon(&pts);
                if ring.len() >= 3 {
                    vec![ring]
                } else {
                    vec![]
                }
            }
            _ => square.clip_polyline(&pts),
        };
        if !pieces.is_empty() {
            features.push(ViewFeature { feature_index: idx, kind: f.kind, pieces });
        }
    }

    Ok(EgoView { frame, half, ego, neighbors, features })
}

/// Restricts `s` to the ego window: agents whose current position lies in the
/// closed square, and map features clipped to it. Coordinates stay global.
pub fn crop_scenario(s: &Scenario, cfg: &RenderConfig) -> Result<Scenario, RenderError> {
    let view = ego_view(s, cfg)?;
    let keep: Vec<&str> = std::iter::once(s.ego_agent_id.as_str())
        .chain(view.neighbors.iter().map(|n| n.agent_id.as_str()))
        .collect();
    let agents = s
        .agents
        .iter()
        .filter(|a| keep.contains(&a.agent_id.as_str()))
        .cloned()
        .collect();
    let mut map = Vec::new();
    for vf in &view.features {
        let src = &s.map[vf.feature_index];
        let many = vf.pieces.len() > 1;
        for (k, piece) in vf.pieces.iter().enumerate() {
            let polyline = piece
                .iter()
                .map(|p| {
                    let g = view.frame.inverse_point(*p);
                    [g.x, g.y]
                })
                .collect();
            map.push(MapFeature {
                feature_id: if many { format!("{}#{}", src.feature_id, k) } else { src.feature_id.clone() },
                kind: src.kind,
                polyline,
                lane_turn_type: src.lane_turn_type,
            });
        }
    }
    Ok(Scenario {
        scenario_id: s.scenario_id.clone(),
        ego_agent_id: s.ego_agent_id.clone(),
        agents,
        map,
    })
}

struct PixelMap {
    center: f64,
    res: f64,
}

impl PixelMap {
    fn px(&self, p: Vec2) -> Vec2 {
        Vec2::new(self.center + p.x / self.res, self.center - p.y / self.res)
    }
}

fn footprint_corners(pos: Vec2, heading: f64, fp: Footprint) -> [Vec2; 4] {
    let fwd = Vec2::new(heading.cos(), heading.sin());
    let left = Vec2::new(-fwd.y, fwd.x);
    let (l, w) = (fp.length / 2.0, fp.width / 2.0);
    [
        pos + fwd * l + left * w,
        pos - fwd * l + left * w,
        pos - fwd * l - left * w,
        pos + fwd * l - left * w,
    ]
}

/// Renders the TC-Map of `s`.
///
/// Layers, bottom to top: background, road edges, lanes, crosswalks, trails,
/// neighbors, ego, heading arrows, labels, north icon. Layers above the ego
/// never overwrite ego pixels.
pub fn render(s: &Scenario, cfg: &RenderConfig) -> Result<RasterImage, RenderError> {
    cfg.validate()?;
    let view = ego_view(s, cfg)?;
    let side = cfg.image_side(view.ego.agent_type);
    if side == 0 {
        return Err(RenderError::Config("image side rounds to zero pixels".into()));
    }
    if side > cfg.max_image_side {
        return Err(RenderError::TooLarge { side, max: cfg.max_image_side });
    }
    let pal = &cfg.palette;
    let pm = PixelMap { center: side as f64 / 2.0, res: cfg.resolution };
    let mut cv = Canvas::new(side, side, pal.background);
    let line_px = (0.3 / cfg.resolution).max(1.0);

    for kind in [MapFeatureKind::RoadEdge, MapFeatureKind::LaneCenter, MapFeatureKind::Crosswalk] {
        for vf in view.features.iter().filter(|f| f.kind == kind) {
            for piece in &vf.pieces {
                let px: Vec<Vec2> = piece.iter().map(|p| pm.px(*p)).collect();
                match kind {
                    MapFeatureKind::Crosswalk => cv.fill_polygon(&px, pal.crosswalk),
                    MapFeatureKind::RoadEdge => cv.stroke_polyline(&px, line_px * 1.5, pal.road_edge),
                    MapFeatureKind::LaneCenter => cv.stroke_polyline(&px, line_px, pal.lane),
                }
            }
        }
    }

    let trail_px = (0.4 / cfg.resolution).max(1.0);
    if cfg.draw_neighbor_trails {
        for n in &view.neighbors {
            let px: Vec<Vec2> = n.trail.iter().map(|p| pm.px(*p)).collect();
            cv.stroke_polyline(&px, trail_px, pal.trail);
        }
    }
    if cfg.draw_ego_trail {
        let px: Vec<Vec2> = view.ego.trail.iter().map(|p| pm.px(*p)).collect();
        cv.stroke_polyline(&px, trail_px, pal.trail);
    }

    for n in &view.neighbors {
        let corners = footprint_corners(n.position, n.heading, cfg.footprint(n.agent_type));
        let px: Vec<Vec2> = corners.iter().map(|p| pm.px(*p)).collect();
        cv.fill_polygon(&px, cfg.neighbor_color(n.label.unwrap_or(1)));
    }

    cv.set_recording(true);
    let ego_fp = cfg.footprint(view.ego.agent_type);
    let corners = footprint_corners(Vec2::default(), FRAC_PI_2, ego_fp);
    let px: Vec<Vec2> = corners.iter().map(|p| pm.px(*p)).collect();
    cv.fill_polygon(&px, pal.ego);
    let c = (side / 2) as i64;
    cv.put(c, c, pal.ego);
    cv.set_recording(false);
    cv.set_protecting(true);

    if cfg.draw_heading_arrows {
        let agents = view.neighbors.iter().chain(std::iter::once(&view.ego));
        for a in agents {
            let fp = cfg.footprint(a.agent_type);
            draw_arrow(&mut cv, &pm, a.position, a.heading, fp.length / 2.0, cfg.resolution, pal.arrow);
        }
    }

    if cfg.draw_labels {
        for n in &view.neighbors {
            let label = n.label.unwrap_or(0).to_string();
            let p = pm.px(n.position);
            let fp = cfg.footprint(n.agent_type);
            let offset = (fp.length.max(fp.width) / 2.0) / cfg.resolution + 2.0;
            cv.draw_text(
                &label,
                (p.x + offset).round() as i64,
                (p.y - offset).round() as i64 - 10,
                2,
                pal.label,
            );
        }
    }

    if cfg.draw_north_icon {
        draw_north_icon(&mut cv, side, pal.north_icon);
    }

    Ok(cv.image)
}

fn draw_arrow(cv: &mut Canvas, pm: &PixelMap, pos: Vec2, heading: f64, start: f64, res: f64, c: Rgba) {
    let dir = Vec2::new(heading.cos(), heading.sin());
    let left = Vec2::new(-dir.y, dir.x);
    let length = (10.0 * res).max(2.0);
    let head = length * 0.4;
    let tail = pos + dir * start;
    let tip = tail + dir * length;
    let shaft_end = tip - dir * head;
    let width = (0.25 / res).max(2.0);
    cv.stroke_polyline(&[pm.px(tail), pm.px(shaft_end)], width, c);
    let tri = [tip, shaft_end + left * (head * 0.6), shaft_end - left * (head * 0.6)];
    let px: Vec<Vec2> = tri.iter().map(|p| pm.px(*p)).collect();
    cv.fill_polygon(&px, c);
}

/// Up arrow and "N" near the top-right corner; the corner pixels stay untouched.
fn draw_north_icon(cv: &mut Canvas, side: u32, c: Rgba) {
    let margin = 6i64;
    let scale = 2i64;
    let glyph_w = text_width("N", scale);
    let right = side as i64 - margin;
    let arrow_x = right - glyph_w / 2;
    let top = margin;
    let shaft = [Vec2::new(arrow_x as f64 + 0.5, (top + 6) as f64), Vec2::new(arrow_x as f64 + 0.5, (top + 20) as f64)];
    cv.stroke_polyline(&shaft, 2.0, c);
    let tri = [
        Vec2::new(arrow_x as f64 + 0.5, top as f64),
        Vec2::new(arrow_x as f64 - 4.5, (top + 8) as f64),
        Vec2::new(arrow_x as f64 + 5.5, (top + 8) as f64),
    ];
    cv.fill_polygon(&tri, c);
    cv.draw_text("N", right - glyph_w, top + 24, scale, c);
}
