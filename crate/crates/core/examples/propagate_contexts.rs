//! Annotates a small stratified subset with the mock oracle and copies its
//! contexts to the rest of the dataset by nearest neighbor.
//!
//! `cargo run --example propagate_contexts -- [n] [fraction]`

use std::collections::HashMap;

use motion_context::context::ContextVocabulary;
use motion_context::llm::{mock_oracle, NoiseConfig};
use motion_context::propagation::{
    encode_features, propagate, split_dataset, AgentKey, ContextSource, DatasetItem, FeatureConfig, SearchMethod,
    DEFAULT_TYPE_RATIO,
};
use motion_context::render::RenderConfig;
use motion_context::scenario::{label_gt_intention, IntentionThresholds};
use motion_context::synth::synth_fixtures;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map(|a| a.parse()).transpose()?.unwrap_or(600);
    let fraction: f64 = args.next().map(|a| a.parse()).transpose()?.unwrap_or(0.05);

    let scenarios = synth_fixtures(n, 8)?;
    let by_id: HashMap<&str, _> = scenarios.iter().map(|s| (s.scenario_id.as_str(), s)).collect();
    let items: Vec<DatasetItem> = scenarios
        .iter()
        .map(|s| DatasetItem { key: AgentKey::new(&s.scenario_id, &s.ego_agent_id), agent_type: s.ego().agent_type })
        .collect();
    let split = split_dataset(&items, fraction, 7, Some(DEFAULT_TYPE_RATIO))?;
    println!("{} agents: {} to annotate, {} to propagate to", n, split.t2.len(), split.t1.len());

    let features = FeatureConfig::default();
    let keyed = |keys: &[AgentKey]| -> Result<Vec<_>, Box<dyn std::error::Error>> {
        keys.iter()
            .map(|k| Ok((k.clone(), encode_features(by_id[k.scenario_id.as_str()], &k.agent_id, &features)?)))
            .collect()
    };
    let (t1, t2) = (keyed(&split.t1)?, keyed(&split.t2)?);

    let vocab = ContextVocabulary::default();
    let noise = NoiseConfig { noise: 0.1, seed: 1, ..NoiseConfig::default() };
    let contexts = split
        .t2
        .iter()
        .map(|k| mock_oracle(by_id[k.scenario_id.as_str()], &noise, &vocab, &RenderConfig::default()))
        .collect::<Result<Vec<_>, _>>()?;

    let records = propagate(&t1, &t2, &contexts, SearchMethod::KdTree)?;
    let th = IntentionThresholds::default();
    let (mut hits, mut total) = (0, 0);
    for r in records.iter().filter(|r| r.source == ContextSource::Propagated) {
        let truth = label_gt_intention(by_id[r.scenario_id.as_str()], &r.agent_id, &th)?;
        hits += usize::from(r.context.intentions[0] == truth);
        total += 1;
    }
    println!("{} records; propagated first intention matches ground truth for {hits}/{total}", records.len());
    for r in records.iter().take(5) {
        println!("  {} <- {} : {:?}", r.key(), r.neighbor_id.as_deref().unwrap_or("-"), r.context.intentions);
    }
    Ok(())
}
