//! Scores a kinematic predictor with and without intention hints.
//!
//! `cargo run --example evaluate_metrics`

use std::collections::BTreeMap;

use motion_context::context::ContextVocabulary;
use motion_context::evaluation::{
    intention_accuracy, kinematic_candidates, report_text, trajectory_metrics, AgentPrediction, EvaluationReport,
};
use motion_context::llm::{mock_oracle, NoiseConfig};
use motion_context::render::RenderConfig;
use motion_context::scenario::{label_gt_intention, IntentionThresholds};
use motion_context::synth::synth_fixtures;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scenarios = synth_fixtures(240, 12)?;
    let vocab = ContextVocabulary::default();
    let noise = NoiseConfig { noise: 0.3, seed: 5, ..NoiseConfig::default() };
    let th = IntentionThresholds::default();

    let mut preds = Vec::new();
    let mut gts = Vec::new();
    let mut with_ctx = Vec::new();
    let mut without_ctx = Vec::new();
    for s in &scenarios {
        let ego = s.ego();
        let future = ego.future.as_ref().expect("fixtures carry a future");
        let gt_label = label_gt_intention(s, &ego.agent_id, &th)?;
        let ctx = mock_oracle(s, &noise, &vocab, &RenderConfig::default())?;
        preds.push(ctx.intentions.clone());
        gts.push(gt_label);
        let agent = |context| AgentPrediction {
            scenario_id: s.scenario_id.clone(),
            agent_id: ego.agent_id.clone(),
            agent_type: ego.agent_type,
            gt_intention: gt_label,
            candidates: kinematic_candidates(ego, context, 6),
            gt: future.iter().map(|st| [st.x, st.y]).collect(),
            valid: future.iter().map(|st| st.valid).collect(),
        };
        with_ctx.push(agent(Some(&ctx)));
        without_ctx.push(agent(None));
    }

    let report = EvaluationReport {
        intention: BTreeMap::from([("mock".to_string(), intention_accuracy(&preds, &gts)?)]),
        trajectory: Some(trajectory_metrics(&with_ctx, 2.0)?),
        trajectory_without_context: Some(trajectory_metrics(&without_ctx, 2.0)?),
        propagation_agreement: None,
    };
    print!("{}", report_text(&report));
    Ok(())
}
