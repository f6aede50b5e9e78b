//! Scaling a small annotated subset to a whole dataset by copying each
//! unannotated agent's context from its nearest annotated neighbor.

pub mod features;
pub mod kdtree;
pub mod split;

use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::TransportationContext;

pub use features::{encode_features, FeatureConfig, FeatureVector, Standardizer, FEATURE_DIM};
pub use kdtree::{brute_force_nearest, KdTree};
pub use split::{split_dataset, DatasetItem, DatasetSplit, DEFAULT_TYPE_RATIO};

#[derive(Debug, Error)]
pub enum PropagationError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("split fraction {0} is outside (0, 0.5)")]
    InvalidFraction(f64),
    #[error("{0} has no valid history frame")]
    NoValidHistory(String),
    #[error("unknown agent {0}")]
    UnknownAgent(String),
    #[error("{contexts} contexts for {members} annotated members")]
    SizeMismatch { members: usize, contexts: usize },
    #[error("no annotated member to propagate from")]
    NoAnnotated,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad record on line {line}: {message}")]
    Record { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AgentKey {
    pub scenario_id: String,
    pub agent_id: String,
}

impl AgentKey {
    pub fn new(scenario_id: impl Into<String>, agent_id: impl Into<String>) -> Self {
        AgentKey { scenario_id: scenario_id.into(), agent_id: agent_id.into() }
    }
}

impl fmt::Display for AgentKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.scenario_id, self.agent_id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ContextSource {
    Llm,
    Propagated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedRecord {
    pub scenario_id: String,
    pub agent_id: String,
    pub context: TransportationContext,
    pub source: ContextSource,
    /// `scenario_id/agent_id` of the annotated member the context was copied from.
    pub neighbor_id: Option<String>,
}

impl AugmentedRecord {
    pub fn key(&self) -> AgentKey {
        AgentKey::new(&self.scenario_id, &self.agent_id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchMethod {
    /// Linear scan.
    Exact,
    #[default]
    KdTree,
}

/// Nearest annotated index for every query row.
pub fn nearest_indices(queries: &[FeatureVector], annotated: &[FeatureVector], method: SearchMethod) -> Vec<usize> {
    match method {
        SearchMethod::Exact => queries.par_iter().map(|q| brute_force_nearest(q, annotated)).collect(),
        SearchMethod::KdTree => {
            let tree = KdTree::build(annotated);
            queries.par_iter().map(|q| tree.nearest(q)).collect()
        }
    }
}

/// Features are standardized with statistics of the annotated split, then
/// each member of `t1` takes the context of its nearest `t2` member.
/// Output lists `t1` records first, then `t2`, each in input order.
pub fn propagate(
    t1: &[(AgentKey, FeatureVector)],
    t2: &[(AgentKey, FeatureVector)],
    tc2: &[TransportationContext],
    method: SearchMethod,
) -> Result<Vec<AugmentedRecord>, PropagationError> {
    if t2.len() != tc2.len() {
        return Err(PropagationError::SizeMismatch { members: t2.len(), contexts: tc2.len() });
    }
    if t2.is_empty() && !t1.is_empty() {
        return Err(PropagationError::NoAnnotated);
    }
    let strip = |c: &TransportationContext| TransportationContext { reasoning: String::new(), ..c.clone() };
    let mut out = Vec::with_capacity(t1.len() + t2.len());
    if !t1.is_empty() {
        let f2: Vec<FeatureVector> = t2.iter().map(|(_, f)| *f).collect();
        let std = Standardizer::fit(&f2);
        let f2: Vec<FeatureVector> = f2.iter().map(|f| std.apply(f)).collect();
        let f1: Vec<FeatureVector> = t1.iter().map(|(_, f)| std.apply(f)).collect();
        for ((key, _), j) in t1.iter().zip(nearest_indices(&f1, &f2, method)) {
            out.push(AugmentedRecord {
                scenario_id: key.scenario_id.clone(),
                agent_id: key.agent_id.clone(),
                context: strip(&tc2[j]),
                source: ContextSource::Propagated,
                neighbor_id: Some(t2[j].0.to_string()),
            });
        }
    }
    for ((key, _), c) in t2.iter().zip(tc2) {
        out.push(AugmentedRecord {
            scenario_id: key.scenario_id.clone(),
            agent_id: key.agent_id.clone(),
            context: strip(c),
            source: ContextSource::Llm,
            neighbor_id: None,
        });
    }
    Ok(out)
}

pub fn write_jsonl(path: &Path, records: &[AugmentedRecord]) -> Result<(), PropagationError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(std::io::Error::other)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl(path: &Path) -> Result<Vec<AugmentedRecord>, PropagationError> {
    let r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| PropagationError::Record { line: i + 1, message: e.to_string() })?,
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::IntentionLabel;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ctx(l: IntentionLabel) -> TransportationContext {
        TransportationContext { intentions: vec![l], affordances: vec![], scenario_types: vec![], reasoning: "r".into() }
    }

    fn keyed(prefix: &str, rows: Vec<FeatureVector>) -> Vec<(AgentKey, FeatureVector)> {
        rows.into_iter().enumerate().map(|(i, f)| (AgentKey::new(format!("{prefix}{i}"), "ego"), f)).collect()
    }

    #[test]
    fn empty_t1_returns_annotated_only() {
        let t2 = keyed("b", vec![[0.0; FEATURE_DIM]]);
        let out = propagate(&[], &t2, &[ctx(IntentionLabel::Straight)], SearchMethod::KdTree).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].source, ContextSource::Llm);
        assert_eq!(out[0].context.reasoning, "");
    }

    #[test]
    fn identical_features_copy_that_member() {
        let mut a = [0.0; FEATURE_DIM];
        a[0] = 1.0;
        let mut b = [0.0; FEATURE_DIM];
        b[0] = 5.0;
        let t2 = keyed("b", vec![a, b]);
        let t1 = keyed("a", vec![b; 4]);
        let out = propagate(&t1, &t2, &[ctx(IntentionLabel::Straight), ctx(IntentionLabel::LeftTurn)], SearchMethod::KdTree).unwrap();
        assert_eq!(out.len(), 6);
        for r in &out[..4] {
            assert_eq!(r.context.intentions, vec![IntentionLabel::LeftTurn]);
            assert_eq!(r.neighbor_id.as_deref(), Some("b1/ego"));
        }
    }

    #[test]
    fn size_mismatch() {
        let t2 = keyed("b", vec![[0.0; FEATURE_DIM]]);
        assert!(matches!(propagate(&[], &t2, &[], SearchMethod::Exact), Err(PropagationError::SizeMismatch { .. })));
    }

    #[test]
    fn thousand_items_match_brute_force_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut row = || {
            let mut f = [0.0; FEATURE_DIM];
            f.iter_mut().for_each(|v| *v = rng.gen_range(-3.0..3.0));
            f
        };
        let t2 = keyed("b", (0..50).map(|_| row()).collect());
        let t1 = keyed("a", (0..950).map(|_| row()).collect());
        let tc2: Vec<_> = (0..50).map(|i| ctx(IntentionLabel::ALL[i % 8])).collect();
        let out = propagate(&t1, &t2, &tc2, SearchMethod::KdTree).unwrap();
        let std = Standardizer::fit(&t2.iter().map(|x| x.1).collect::<Vec<_>>());
        let f2: Vec<FeatureVector> = t2.iter().map(|x| std.apply(&x.1)).collect();
        for (r, (_, f)) in out.iter().zip(&t1) {
            let q = std.apply(f);
            let mut best = (f64::INFINITY, 0);
            for (j, p) in f2.iter().enumerate() {
                let d: f64 = q.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum();
                if d < best.0 {
                    best = (d, j);
                }
            }
            assert_eq!(r.neighbor_id.as_deref(), Some(format!("b{}/ego", best.1).as_str()));
            assert_eq!(r.context.intentions, tc2[best.1].intentions);
        }
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let t2 = keyed("b", vec![[0.0; FEATURE_DIM]]);
        let t1 = keyed("a", vec![[1.0; FEATURE_DIM]]);
        let out = propagate(&t1, &t2, &[ctx(IntentionLabel::RightUTurn)], SearchMethod::Exact).unwrap();
        let p = dir.path().join("t.jsonl");
        write_jsonl(&p, &out).unwrap();
        assert_eq!(read_jsonl(&p).unwrap(), out);
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.lines().next().unwrap().contains("\"source\":\"PROPAGATED\""));
    }
}
