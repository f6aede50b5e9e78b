//! The single configuration file shared by every stage.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::context::ContextVocabulary;
use crate::llm::{EndpointConfig, NoiseConfig};
use crate::prompt::{LaneRule, PromptTemplate};
use crate::propagation::{FeatureConfig, SearchMethod, DEFAULT_TYPE_RATIO};
use crate::render::RenderConfig;
use crate::scenario::IntentionThresholds;

use super::PipelineError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptSection {
    /// Caption template file; its manifest sits beside it with a `.toml`
    /// extension. The bundled template is used when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub template: Option<PathBuf>,
    pub max_neighbors: usize,
    pub lane: LaneRule,
}

impl Default for PromptSection {
    fn default() -> Self {
        PromptSection { template: None, max_neighbors: 8, lane: LaneRule::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmSection {
    /// Response cache; defaults to `<output_dir>/cache`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
    pub endpoint: EndpointConfig,
}

impl Default for LlmSection {
    fn default() -> Self {
        LlmSection { cache_dir: None, endpoint: EndpointConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockSection {
    pub enabled: bool,
    pub noise: f64,
    pub seed: u64,
    pub second_intention_prob: f64,
}

impl Default for MockSection {
    fn default() -> Self {
        let n = NoiseConfig::default();
        MockSection { enabled: false, noise: n.noise, seed: n.seed, second_intention_prob: n.second_intention_prob }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PropagationSection {
    pub fraction: f64,
    pub seed: u64,
    pub stratified: bool,
    pub type_ratio: [u32; 3],
    pub method: SearchMethod,
    pub features: FeatureConfig,
}

impl Default for PropagationSection {
    fn default() -> Self {
        PropagationSection {
            fraction: 0.007,
            seed: 7,
            stratified: true,
            type_ratio: DEFAULT_TYPE_RATIO,
            method: SearchMethod::KdTree,
            features: FeatureConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluationSection {
    pub miss_threshold_m: f64,
    /// Candidates per agent for the kinematic baseline.
    pub candidates: usize,
    pub thresholds: IntentionThresholds,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        EvaluationSection { miss_threshold_m: 2.0, candidates: 6, thresholds: IntentionThresholds::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub dataset_dir: PathBuf,
    pub output_dir: PathBuf,
    pub render: RenderConfig,
    pub prompt: PromptSection,
    pub vocab: ContextVocabulary,
    pub llm: LlmSection,
    pub mock: MockSection,
    pub propagation: PropagationSection,
    pub evaluation: EvaluationSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            dataset_dir: PathBuf::from("dataset"),
            output_dir: PathBuf::from("out"),
            render: RenderConfig::default(),
            prompt: PromptSection::default(),
            vocab: ContextVocabulary::default(),
            llm: LlmSection::default(),
            mock: MockSection::default(),
            propagation: PropagationSection::default(),
            evaluation: EvaluationSection::default(),
        }
    }
}

fn invalid(key: &str, message: impl Into<String>) -> PipelineError {
    PipelineError::Config { key: key.to_string(), message: message.into() }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| invalid("config", format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| invalid("config", e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn noise(&self) -> NoiseConfig {
        NoiseConfig {
            noise: self.mock.noise,
            seed: self.mock.seed,
            second_intention_prob: self.mock.second_intention_prob,
            thresholds: self.evaluation.thresholds,
            ..NoiseConfig::default()
        }
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.llm.cache_dir.clone().unwrap_or_else(|| self.output_dir.join("cache"))
    }

    /// The prompt template with this config's vocabulary and limits applied.
    pub fn template(&self) -> Result<PromptTemplate, PipelineError> {
        let mut t = match &self.prompt.template {
            Some(p) => PromptTemplate::load(p).map_err(|e| invalid("prompt.template", e.to_string()))?,
            None => PromptTemplate::default(),
        };
        t.vocab = self.vocab.clone();
        t.max_neighbors = self.prompt.max_neighbors;
        t.lane = self.prompt.lane;
        t.validate().map_err(|e| invalid("prompt.template", e.to_string()))?;
        Ok(t)
    }

    /// Checks every key that can be checked before any stage runs.
    pub fn validate(&self) -> Result<(), PipelineError> {
        if !self.dataset_dir.is_dir() {
            return Err(invalid("dataset_dir", format!("{} is not a directory", self.dataset_dir.display())));
        }
        if let Some(p) = &self.prompt.template {
            if !p.is_file() {
                return Err(invalid("prompt.template", format!("{} does not exist", p.display())));
            }
        }
        let f = self.propagation.fraction;
        if !(f > 0.0 && f < 0.5) {
            return Err(invalid("propagation.fraction", format!("{f} is outside (0, 0.5)")));
        }
        if !(0.0..=1.0).contains(&self.mock.noise) {
            return Err(invalid("mock.noise", format!("{} is outside [0, 1]", self.mock.noise)));
        }
        if !(self.evaluation.miss_threshold_m > 0.0) {
            return Err(invalid("evaluation.miss_threshold_m", "must be positive"));
        }
        if self.evaluation.candidates == 0 {
            return Err(invalid("evaluation.candidates", "must be positive"));
        }
        if self.llm.endpoint.concurrency == 0 {
            return Err(invalid("llm.endpoint.concurrency", "must be positive"));
        }
        self.vocab.validate().map_err(|e| invalid("vocab", e.to_string()))?;
        self.render.validate().map_err(|e| invalid("render", e.to_string()))?;
        self.template()?;
        Ok(())
    }
}
