//! Rigid-motion invariant descriptors of an agent's recent behaviour.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::geometry::{wrap_angle, CenteredSquare, EgoFrame};
use crate::prompt::{detect_lane_type, LaneRule};
use crate::scenario::{AgentState, AgentType, Scenario, CURRENT_FRAME, HISTORY_FRAMES};

use super::PropagationError;

/// 11 frames x [speed, heading delta, curvature] + 3 type + 4 lane type + 2 neighbor stats.
pub const FEATURE_DIM: usize = 42;
const KIN: usize = HISTORY_FRAMES * 3;
const TYPE_OFFSET: usize = KIN;
const LANE_OFFSET: usize = KIN + 3;
const NEIGHBOR_OFFSET: usize = KIN + 7;

pub type FeatureVector = [f64; FEATURE_DIM];

/// Which feature blocks are filled; a disabled block stays zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub kinematics: bool,
    pub agent_type: bool,
    pub lane_type: bool,
    pub neighbors: bool,
    /// Side of the square window, centred on the agent, in which neighbors are counted.
    pub window_m_by_type: BTreeMap<AgentType, f64>,
    /// Steps shorter than this contribute zero curvature.
    pub min_step_m: f64,
    pub lane_rule: LaneRule,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            kinematics: true,
            agent_type: true,
            lane_type: true,
            neighbors: true,
            window_m_by_type: BTreeMap::from([
                (AgentType::Vehicle, 120.0),
                (AgentType::Pedestrian, 80.0),
                (AgentType::Cyclist, 60.0),
            ]),
            min_step_m: 0.05,
            lane_rule: LaneRule::default(),
        }
    }
}

/// History with each invalid frame replaced by the nearest valid one
/// (the earlier one on a tie).
fn imputed_history(history: &[AgentState]) -> Option<Vec<AgentState>> {
    let valid: Vec<usize> = (0..history.len()).filter(|&i| history[i].valid).collect();
    if valid.is_empty() {
        return None;
    }
    Some(
        (0..history.len())
            .map(|i| {
                let j = *valid
                    .iter()
                    .min_by_key(|&&j| (j.abs_diff(i), j))
                    .expect("non-empty");
                history[j]
            })
            .collect(),
    )
}

pub fn encode_features(s: &Scenario, agent_id: &str, cfg: &FeatureConfig) -> Result<FeatureVector, PropagationError> {
    let agent = s
        .agent(agent_id)
        .ok_or_else(|| PropagationError::UnknownAgent(format!("{}/{agent_id}", s.scenario_id)))?;
    let hist = imputed_history(&agent.history[..HISTORY_FRAMES.min(agent.history.len())])
        .filter(|h| h.len() == HISTORY_FRAMES)
        .ok_or_else(|| PropagationError::NoValidHistory(format!("{}/{agent_id}", s.scenario_id)))?;
    let mut f = [0.0; FEATURE_DIM];

    if cfg.kinematics {
        for t in 0..HISTORY_FRAMES {
            let st = &hist[t];
            f[3 * t] = st.speed();
            if t > 0 {
                let prev = &hist[t - 1];
                let dh = wrap_angle(st.heading - prev.heading);
                let step = (st.position() - prev.position()).norm();
                f[3 * t + 1] = dh;
                f[3 * t + 2] = if step > cfg.min_step_m { dh / step } else { 0.0 };
            }
        }
    }
    if cfg.agent_type {
        f[TYPE_OFFSET + agent.agent_type.index()] = 1.0;
    }
    let current = &hist[CURRENT_FRAME];
    if cfg.lane_type {
        if let Ok(d) = detect_lane_type(&s.map, current, &cfg.lane_rule) {
            f[LANE_OFFSET + d.lane_type.index()] = 1.0;
        }
    }
    if cfg.neighbors {
        let frame = EgoFrame::new(current);
        let window = cfg.window_m_by_type.get(&agent.agent_type).copied().unwrap_or(120.0);
        let square = CenteredSquare { half: window / 2.0 };
        let dists: Vec<f64> = s
            .agents
            .iter()
            .filter(|a| a.agent_id != agent_id && a.history.len() > CURRENT_FRAME && a.current().valid)
            .map(|a| frame.point(a.current().position()))
            .filter(|p| square.contains(*p))
            .map(|p| p.norm())
            .collect();
        f[NEIGHBOR_OFFSET] = dists.len() as f64;
        if !dists.is_empty() {
            f[NEIGHBOR_OFFSET + 1] = dists.iter().sum::<f64>() / dists.len() as f64;
        }
    }
    Ok(f)
}

/// Per-dimension z-scoring; constant dimensions get unit scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[FeatureVector]) -> Self {
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; FEATURE_DIM];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; FEATURE_DIM];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 { sd } else { 1.0 }
            })
            .collect();
        Standardizer { mean, std }
    }

    pub fn apply(&self, f: &FeatureVector) -> FeatureVector {
        let mut out = [0.0; FEATURE_DIM];
        for i in 0..FEATURE_DIM {
            out[i] = (f[i] - self.mean[i]) / self.std[i];
        }
        out
    }
}
