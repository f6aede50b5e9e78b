//! Displacement metrics over multi-candidate trajectory predictions.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::scenario::{AgentType, IntentionLabel};

use super::EvalError;

pub type Point = [f64; 2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub confidence: f64,
    pub points: Vec<Point>,
}

/// Predictions and ground truth for one agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentPrediction {
    pub scenario_id: String,
    pub agent_id: String,
    pub agent_type: AgentType,
    pub gt_intention: IntentionLabel,
    pub candidates: Vec<Candidate>,
    pub gt: Vec<Point>,
    pub valid: Vec<bool>,
}

fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn check<P: AsRef<[Point]>>(cands: &[P], gt: &[Point], valid: &[bool]) -> Result<(), EvalError> {
    if cands.is_empty() {
        return Err(EvalError::NoCandidates);
    }
    if valid.len() != gt.len() || cands.iter().any(|c| c.as_ref().len() != gt.len()) {
        return Err(EvalError::Shape(format!(
            "ground truth has {} frames and {} mask entries; candidates must match",
            gt.len(),
            valid.len()
        )));
    }
    if !valid.iter().any(|&v| v) {
        return Err(EvalError::NoValidFrames);
    }
    Ok(())
}

/// Minimum over candidates of the mean distance over valid frames.
pub fn min_ade<P: AsRef<[Point]>>(cands: &[P], gt: &[Point], valid: &[bool]) -> Result<f64, EvalError> {
    check(cands, gt, valid)?;
    let n = valid.iter().filter(|&&v| v).count() as f64;
    Ok(cands
        .iter()
        .map(|c| {
            c.as_ref()
                .iter()
                .zip(gt)
                .zip(valid)
                .filter(|(_, &v)| v)
                .map(|((&p, &g), _)| dist(p, g))
                .sum::<f64>()
                / n
        })
        .fold(f64::INFINITY, f64::min))
}

fn last_valid(valid: &[bool]) -> usize {
    valid.iter().rposition(|&v| v).expect("checked non-empty")
}

/// Minimum over candidates of the distance at the last valid frame.
pub fn min_fde<P: AsRef<[Point]>>(cands: &[P], gt: &[Point], valid: &[bool]) -> Result<f64, EvalError> {
    check(cands, gt, valid)?;
    let t = last_valid(valid);
    Ok(cands.iter().map(|c| dist(c.as_ref()[t], gt[t])).fold(f64::INFINITY, f64::min))
}

fn is_miss(c: &[Point], gt: &[Point], t: usize, threshold: f64) -> bool {
    dist(c[t], gt[t]) > threshold
}

/// Fraction of agents with no candidate endpoint within `threshold` meters of
/// the ground-truth endpoint (the last valid frame).
pub fn miss_rate(agents: &[AgentPrediction], threshold: f64) -> Result<f64, EvalError> {
    if agents.is_empty() {
        return Ok(0.0);
    }
    let mut misses = 0usize;
    for a in agents {
        let pts: Vec<&[Point]> = a.candidates.iter().map(|c| c.points.as_slice()).collect();
        check(&pts, &a.gt, &a.valid)?;
        let t = last_valid(&a.valid);
        misses += usize::from(pts.iter().all(|c| is_miss(c, &a.gt, t, threshold)));
    }
    Ok(misses as f64 / agents.len() as f64)
}

/// Average precision per ground-truth intention bucket, averaged over
/// non-empty buckets. Candidates of a bucket are ranked by confidence; a
/// candidate is a true positive when it is not a miss and is the
/// highest-confidence non-miss of its agent. The area under the
/// precision-recall curve is integrated by trapezoids from (0, 1).
pub fn map_approx(agents: &[AgentPrediction], threshold: f64) -> Result<f64, EvalError> {
    let mut buckets: BTreeMap<IntentionLabel, Vec<usize>> = BTreeMap::new();
    for (i, a) in agents.iter().enumerate() {
        buckets.entry(a.gt_intention).or_default().push(i);
    }
    if buckets.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for members in buckets.values() {
        // (confidence, agent, candidate, true positive)
        let mut ranked = Vec::new();
        for &i in members {
            let a = &agents[i];
            let pts: Vec<&[Point]> = a.candidates.iter().map(|c| c.points.as_slice()).collect();
            check(&pts, &a.gt, &a.valid)?;
            let t = last_valid(&a.valid);
            let best_hit = a
                .candidates
                .iter()
                .enumerate()
                .filter(|(_, c)| !is_miss(&c.points, &a.gt, t, threshold))
                .max_by(|x, y| x.1.confidence.total_cmp(&y.1.confidence).then(y.0.cmp(&x.0)))
                .map(|(k, _)| k);
            for (k, c) in a.candidates.iter().enumerate() {
                ranked.push((c.confidence, i, k, best_hit == Some(k)));
            }
        }
        ranked.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
        let positives = members.len() as f64;
        let (mut tp, mut area, mut prev_r, mut prev_p) = (0usize, 0.0, 0.0, 1.0);
        for (rank, entry) in ranked.iter().enumerate() {
            tp += usize::from(entry.3);
            let r = tp as f64 / positives;
            let p = tp as f64 / (rank + 1) as f64;
            area += (r - prev_r) * (p + prev_p) / 2.0;
            prev_r = r;
            prev_p = p;
        }
        total += area;
    }
    Ok(total / buckets.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricBlock {
    pub n: usize,
    pub min_ade: f64,
    pub min_fde: f64,
    pub miss_rate: f64,
    pub map_approx: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMetrics {
    #[serde(flatten)]
    pub overall: MetricBlock,
    pub per_type: BTreeMap<AgentType, MetricBlock>,
}

fn block(agents: &[AgentPrediction], threshold: f64) -> Result<MetricBlock, EvalError> {
    let n = agents.len();
    let mut ade = 0.0;
    let mut fde = 0.0;
    for a in agents {
        let pts: Vec<&[Point]> = a.candidates.iter().map(|c| c.points.as_slice()).collect();
        ade += min_ade(&pts, &a.gt, &a.valid)?;
        fde += min_fde(&pts, &a.gt, &a.valid)?;
    }
    let mean = |s: f64| if n == 0 { 0.0 } else { s / n as f64 };
    Ok(MetricBlock {
        n,
        min_ade: mean(ade),
        min_fde: mean(fde),
        miss_rate: miss_rate(agents, threshold)?,
        map_approx: map_approx(agents, threshold)?,
    })
}

pub fn trajectory_metrics(agents: &[AgentPrediction], miss_threshold: f64) -> Result<TrajectoryMetrics, EvalError> {
    let mut per_type = BTreeMap::new();
    for t in AgentType::ALL {
        let subset: Vec<AgentPrediction> = agents.iter().filter(|a| a.agent_type == t).cloned().collect();
        if !subset.is_empty() {
            per_type.insert(t, block(&subset, miss_threshold)?);
        }
    }
    Ok(TrajectoryMetrics { overall: block(agents, miss_threshold)?, per_type })
}
