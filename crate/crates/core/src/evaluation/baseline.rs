//! A kinematic multi-hypothesis predictor used to exercise the trajectory
//! metrics without a learned model. Each intention becomes one rolled-out
//! candidate; a transportation context, when given, ranks them.

use std::f64::consts::PI;

use crate::context::TransportationContext;
use crate::scenario::{AgentTrack, IntentionLabel, DT, FUTURE_FRAMES};

use super::trajectory::{Candidate, Point};

/// Yaw-rate profile (rad/s per frame) and whether the agent brakes to a stop.
fn profile(label: IntentionLabel, frame: usize) -> (f64, bool) {
    let t = frame as f64 * DT;
    match label {
        IntentionLabel::Stationary => (0.0, true),
        IntentionLabel::Straight => (0.0, false),
        IntentionLabel::LeftTurn | IntentionLabel::RightTurn => {
            let w = if t < 4.0 { (PI / 2.0) / 4.0 } else { 0.0 };
            (if label == IntentionLabel::LeftTurn { w } else { -w }, false)
        }
        IntentionLabel::LeftUTurn | IntentionLabel::RightUTurn => {
            let w = if t < 5.0 { PI / 5.0 } else { 0.0 };
            (if label == IntentionLabel::LeftUTurn { w } else { -w }, false)
        }
        IntentionLabel::StraightLeft | IntentionLabel::StraightRight => {
            let w = if t < 1.5 { 0.2 } else if t < 3.0 { -0.2 } else { 0.0 };
            (if label == IntentionLabel::StraightLeft { w } else { -w }, false)
        }
    }
}

pub fn rollout(track: &AgentTrack, label: IntentionLabel) -> Vec<Point> {
    let cur = track.current();
    let (mut x, mut y, mut h) = (cur.x, cur.y, cur.heading);
    let mut v = cur.speed();
    let mut pts = Vec::with_capacity(FUTURE_FRAMES);
    for f in 0..FUTURE_FRAMES {
        let (w, stop) = profile(label, f);
        if stop {
            v = (v - 3.0 * DT).max(0.0);
        }
        h += w * DT;
        x += v * h.cos() * DT;
        y += v * h.sin() * DT;
        pts.push([x, y]);
    }
    pts
}

/// Up to `k` candidates. Without a context all intentions are equally
/// likely; with one, the listed intentions are boosted by rank.
pub fn kinematic_candidates(track: &AgentTrack, context: Option<&TransportationContext>, k: usize) -> Vec<Candidate> {
    let mut scored: Vec<(f64, usize, IntentionLabel)> = IntentionLabel::ALL
        .iter()
        .enumerate()
        .map(|(order, &l)| {
            let boost = context
                .and_then(|c| c.intentions.iter().position(|&x| x == l).map(|i| (c.intentions.len() - i) as f64 * 2.0))
                .unwrap_or(0.0);
            (1.0 + boost, order, l)
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    scored.truncate(k.max(1));
    let total: f64 = scored.iter().map(|s| s.0).sum();
    scored
        .into_iter()
        .map(|(w, _, l)| Candidate { confidence: w / total, points: rollout(track, l) })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{AgentState, AgentType, HISTORY_FRAMES};

    fn mover(speed: f64) -> AgentTrack {
        AgentTrack {
            agent_id: "a".into(),
            agent_type: AgentType::Vehicle,
            history: vec![AgentState::new(0.0, 0.0, 0.0, speed, 0.0); HISTORY_FRAMES],
            future: None,
        }
    }

    #[test]
    fn straight_rollout_is_linear() {
        let p = rollout(&mover(10.0), IntentionLabel::Straight);
        assert_eq!(p.len(), FUTURE_FRAMES);
        assert!((p[79][0] - 80.0).abs() < 1e-9 && p[79][1].abs() < 1e-12);
    }

    #[test]
    fn left_turn_ends_heading_north() {
        let p = rollout(&mover(5.0), IntentionLabel::LeftTurn);
        let d = [p[79][0] - p[78][0], p[79][1] - p[78][1]];
        assert!(d[0].abs() < 1e-9 && d[1] > 0.0);
    }

    #[test]
    fn context_ranks_candidates() {
        let ctx = TransportationContext {
            intentions: vec![IntentionLabel::RightTurn, IntentionLabel::Straight],
            affordances: vec![],
            scenario_types: vec![],
            reasoning: String::new(),
        };
        let c = kinematic_candidates(&mover(5.0), Some(&ctx), 6);
        assert_eq!(c.len(), 6);
        assert_eq!(c[0].points, rollout(&mover(5.0), IntentionLabel::RightTurn));
        assert!(c[0].confidence > c[1].confidence && c[1].confidence > c[2].confidence);
        let sum: f64 = c.iter().map(|x| x.confidence).sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }
}
