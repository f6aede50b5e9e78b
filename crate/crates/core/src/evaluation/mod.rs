//! Intention accuracy, trajectory metrics and their reports.

pub mod baseline;
pub mod intention;
pub mod report;
pub mod trajectory;

use thiserror::Error;

pub use baseline::{kinematic_candidates, rollout};
pub use intention::{intention_accuracy, IntentionEvalResult, CONFUSION_CLASSES};
pub use report::{confusion_heatmap, report_json, report_text, EvaluationReport};
pub use trajectory::{map_approx, min_ade, min_fde, miss_rate, trajectory_metrics, AgentPrediction, Candidate, TrajectoryMetrics};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("{predictions} predictions for {ground_truth} ground-truth labels")]
    LengthMismatch { predictions: usize, ground_truth: usize },
    #[error("prediction {0} has no intentions")]
    EmptyPrediction(usize),
    #[error("ground truth has no valid frame")]
    NoValidFrames,
    #[error("agent has no candidate trajectories")]
    NoCandidates,
    #[error("shape mismatch: {0}")]
    Shape(String),
}
