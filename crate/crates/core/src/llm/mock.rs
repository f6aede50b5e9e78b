//! Deterministic stand-in for the model: answers from ground truth with
//! controllable, seeded label noise.

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::context::{ContextVocabulary, TransportationContext};
use crate::render::{ego_view, RenderConfig};
use crate::scenario::{label_gt_intention, AgentType, IntentionLabel, IntentionThresholds, MapFeatureKind, Scenario, ScenarioError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    /// Probability that the first intention is not the ground-truth label.
    pub noise: f64,
    pub seed: u64,
    /// Probability of appending a second, less likely intention.
    pub second_intention_prob: f64,
    /// Row per ground-truth label (in `IntentionLabel::ALL` order): relative
    /// weight of answering each label instead. The diagonal is ignored.
    pub confusion: [[f64; 8]; 8],
    pub thresholds: IntentionThresholds,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            noise: 0.0,
            seed: 0,
            second_intention_prob: 0.5,
            confusion: [
                [0.0, 5.0, 1.0, 1.0, 1.0, 1.0, 0.5, 0.5],
                [2.0, 0.0, 3.0, 3.0, 1.0, 1.0, 0.2, 0.2],
                [0.5, 4.0, 0.0, 1.0, 2.0, 0.5, 0.2, 0.2],
                [0.5, 4.0, 1.0, 0.0, 0.5, 2.0, 0.2, 0.2],
                [0.5, 2.0, 2.0, 0.2, 0.0, 0.5, 2.0, 0.2],
                [0.5, 2.0, 0.2, 2.0, 0.5, 0.0, 0.2, 1.0],
                [0.5, 0.5, 0.5, 0.2, 4.0, 0.2, 0.0, 1.0],
                [0.5, 0.5, 0.2, 0.5, 0.2, 4.0, 1.0, 0.0],
            ],
            thresholds: IntentionThresholds::default(),
        }
    }
}

fn rng_for(s: &Scenario, seed: u64) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(s.scenario_id.as_bytes());
    h.update([0]);
    h.update(s.ego_agent_id.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

fn label_index(l: IntentionLabel) -> usize {
    IntentionLabel::ALL.iter().position(|&x| x == l).expect("label in ALL")
}

/// Draws a label other than everything in `exclude`, weighted by the
/// confusion row of `truth`. `None` when no active label is left.
fn confuse(
    truth: IntentionLabel,
    exclude: &[IntentionLabel],
    cfg: &NoiseConfig,
    vocab: &ContextVocabulary,
    rng: &mut ChaCha8Rng,
) -> Option<IntentionLabel> {
    let candidates: Vec<IntentionLabel> = vocab
        .active_intentions
        .iter()
        .copied()
        .filter(|l| !exclude.contains(l))
        .collect();
    if candidates.is_empty() {
        return None;
    }
    let row = &cfg.confusion[label_index(truth)];
    let weights: Vec<f64> = candidates.iter().map(|&l| row[label_index(l)].max(0.0)).collect();
    let i = match WeightedIndex::new(&weights) {
        Ok(dist) => dist.sample(rng),
        Err(_) => rng.gen_range(0..candidates.len()),
    };
    Some(candidates[i])
}

fn speed_limit(t: AgentType) -> f64 {
    match t {
        AgentType::Vehicle => 15.0,
        AgentType::Pedestrian => 2.0,
        AgentType::Cyclist => 8.0,
    }
}

/// Answers for the ego agent of `s`. With `noise == 0` the first intention is
/// always the ground-truth label; the answer depends only on the scenario
/// and the seed.
pub fn mock_oracle(
    s: &Scenario,
    cfg: &NoiseConfig,
    vocab: &ContextVocabulary,
    render_cfg: &RenderConfig,
) -> Result<TransportationContext, ScenarioError> {
    let truth = label_gt_intention(s, &s.ego_agent_id, &cfg.thresholds)?;
    let mut rng = rng_for(s, cfg.seed);

    let flip = rng.gen::<f64>() < cfg.noise;
    let first = if flip || !vocab.active_intentions.contains(&truth) {
        confuse(truth, &[truth], cfg, vocab, &mut rng).unwrap_or(truth)
    } else {
        truth
    };
    let mut intentions = vec![first];
    if rng.gen::<f64>() < cfg.second_intention_prob {
        let second = if first != truth && vocab.active_intentions.contains(&truth) {
            Some(truth)
        } else {
            confuse(truth, &[truth, first], cfg, vocab, &mut rng)
        };
        intentions.extend(second);
    }

    let ego = s.ego();
    let speed = ego.current().speed();
    let mut affordances = Vec::new();
    if speed > 0.5 {
        affordances.push("Slow-Allow");
    }
    if speed < speed_limit(ego.agent_type) {
        affordances.push("Speed-up-Allow");
    }
    if speed < 3.0 {
        affordances.push("Stop-Allow");
    }
    use IntentionLabel::*;
    if intentions.iter().any(|l| matches!(l, StraightLeft | LeftTurn | LeftUTurn)) {
        affordances.push("Left-Allow");
    }
    if intentions.iter().any(|l| matches!(l, StraightRight | RightTurn | RightUTurn)) {
        affordances.push("Right-Allow");
    }

    let scenario = match ego_view(s, render_cfg) {
        Ok(view) if view.features.iter().any(|f| f.kind == MapFeatureKind::Crosswalk) => "Intersection",
        Ok(view) if !view.features.iter().any(|f| f.kind == MapFeatureKind::LaneCenter) => "Parking-Area",
        _ => "Straight-Road",
    };

    let affordances: Vec<&str> = affordances.into_iter().filter(|w| vocab.lookup_affordance(w).is_some()).collect();
    let scenarios: Vec<&str> = [scenario].into_iter().filter(|w| vocab.lookup_scenario(w).is_some()).collect();
    let reasoning = format!("The {} moves at {:.1} m/s.", ego.agent_type, speed);
    Ok(TransportationContext::new(intentions, &affordances, &scenarios, reasoning, vocab)
        .expect("mock answers use active labels and known words"))
}
