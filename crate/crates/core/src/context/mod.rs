//! Transportation context and its numeric encoding.
//!
//! Affordances and scenario types become multi-hot vectors over fixed
//! vocabularies. Intentions are ordered by likelihood; the word at position
//! `i` of a list of length `L` contributes weight `L - i` to its slot.

pub mod fusion;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scenario::IntentionLabel;

pub const INTENTION_DIM: usize = 5;
pub const AFFORDANCE_DIM: usize = 8;
pub const SCENARIO_DIM: usize = 4;
pub const CONTEXT_DIM: usize = INTENTION_DIM + AFFORDANCE_DIM + SCENARIO_DIM;

#[derive(Debug, Error, PartialEq)]
pub enum ContextError {
    #[error("unknown {kind} word '{word}'")]
    UnknownWord { kind: WordKind, word: String },
    #[error("intention list is empty")]
    EmptyIntentions,
    #[error("invalid vocabulary: {0}")]
    Vocabulary(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WordKind {
    Intention,
    Affordance,
    Scenario,
}

impl std::fmt::Display for WordKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            WordKind::Intention => "intention",
            WordKind::Affordance => "affordance",
            WordKind::Scenario => "scenario",
        })
    }
}

/// Case-, hyphen-, underscore- and space-insensitive form of a word.
pub fn normalize_word(w: &str) -> String {
    w.chars()
        .filter(|c| !matches!(c, '-' | '_' | ' ' | '\t'))
        .flat_map(char::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContextVocabulary {
    /// Names of the intention vector slots.
    pub intention_words: Vec<String>,
    pub affordance_words: Vec<String>,
    pub scenario_words: Vec<String>,
    /// Slot name for every intention label.
    pub intention_merge_map: BTreeMap<IntentionLabel, String>,
    /// Labels the model may answer with.
    pub active_intentions: Vec<IntentionLabel>,
}

impl Default for ContextVocabulary {
    fn default() -> Self {
        use IntentionLabel::*;
        let strs = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        ContextVocabulary {
            intention_words: strs(&["Stationary", "Straight", "Left-Turn", "Right-Turn", "U-Turn"]),
            affordance_words: strs(&[
                "Slow-Allow",
                "Speed-up-Allow",
                "Left-Allow",
                "Right-Allow",
                "Stop-Allow",
                "Reserved-1",
                "Reserved-2",
                "Reserved-3",
            ]),
            scenario_words: strs(&["Intersection", "Straight-Road", "Roundabout", "Parking-Area"]),
            intention_merge_map: BTreeMap::from([
                (Stationary, "Stationary".to_string()),
                (Straight, "Straight".to_string()),
                (StraightLeft, "Straight".to_string()),
                (StraightRight, "Straight".to_string()),
                (LeftTurn, "Left-Turn".to_string()),
                (RightTurn, "Right-Turn".to_string()),
                (LeftUTurn, "U-Turn".to_string()),
                (RightUTurn, "U-Turn".to_string()),
            ]),
            active_intentions: IntentionLabel::ALL.to_vec(),
        }
    }
}

impl ContextVocabulary {
    pub fn validate(&self) -> Result<(), ContextError> {
        let sizes = [
            ("intention", self.intention_words.len(), INTENTION_DIM),
            ("affordance", self.affordance_words.len(), AFFORDANCE_DIM),
            ("scenario", self.scenario_words.len(), SCENARIO_DIM),
        ];
        for (name, got, want) in sizes {
            if got != want {
                return Err(ContextError::Vocabulary(format!("{name} vocabulary has {got} words, expected {want}")));
            }
        }
        for list in [&self.intention_words, &self.affordance_words, &self.scenario_words] {
            let mut norm: Vec<String> = list.iter().map(|w| normalize_word(w)).collect();
            norm.sort();
            norm.dedup();
            if norm.len() != list.len() {
                return Err(ContextError::Vocabulary("vocabulary words collide after normalization".into()));
            }
        }
        for label in IntentionLabel::ALL {
            let slot = self
                .intention_merge_map
                .get(&label)
                .ok_or_else(|| ContextError::Vocabulary(format!("merge map lacks {label:?}")))?;
            if self.intention_slot_by_name(slot).is_none() {
                return Err(ContextError::Vocabulary(format!("merge map target '{slot}' is not an intention slot")));
            }
        }
        if self.active_intentions.is_empty() {
            return Err(ContextError::Vocabulary("no active intentions".into()));
        }
        Ok(())
    }

    fn intention_slot_by_name(&self, name: &str) -> Option<usize> {
        let n = normalize_word(name);
        self.intention_words.iter().position(|w| normalize_word(w) == n)
    }

    /// Vector slot of an intention label.
    pub fn intention_slot(&self, label: IntentionLabel) -> Option<usize> {
        self.intention_merge_map
            .get(&label)
            .and_then(|slot| self.intention_slot_by_name(slot))
    }

    pub fn lookup_intention(&self, word: &str) -> Option<IntentionLabel> {
        let n = normalize_word(word);
        self.active_intentions
            .iter()
            .copied()
            .find(|l| normalize_word(l.word()) == n)
    }

    pub fn lookup_affordance(&self, word: &str) -> Option<usize> {
        let n = normalize_word(word);
        self.affordance_words.iter().position(|w| normalize_word(w) == n)
    }

    pub fn lookup_scenario(&self, word: &str) -> Option<usize> {
        let n = normalize_word(word);
        self.scenario_words.iter().position(|w| normalize_word(w) == n)
    }
}

/// Parsed model output about one ego agent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransportationContext {
    /// Most probable first, no duplicates.
    pub intentions: Vec<IntentionLabel>,
    /// Canonical vocabulary words in vocabulary order.
    pub affordances: Vec<String>,
    /// Canonical vocabulary words in vocabulary order.
    pub scenario_types: Vec<String>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub reasoning: String,
}

impl TransportationContext {
    /// Builds a context with canonical word spelling and ordering.
    pub fn new<A: AsRef<str>, S: AsRef<str>>(
        intentions: Vec<IntentionLabel>,
        affordances: &[A],
        scenario_types: &[S],
        reasoning: impl Into<String>,
        vocab: &ContextVocabulary,
    ) -> Result<Self, ContextError> {
        if intentions.is_empty() {
            return Err(ContextError::EmptyIntentions);
        }
        let mut seen = Vec::new();
        for l in intentions {
            if !vocab.active_intentions.contains(&l) {
                return Err(ContextError::UnknownWord { kind: WordKind::Intention, word: l.word().into() });
            }
            if !seen.contains(&l) {
                seen.push(l);
            }
        }
        Ok(TransportationContext {
            intentions: seen,
            affordances: canonical_set(affordances, &vocab.affordance_words, WordKind::Affordance, |w| {
                vocab.lookup_affordance(w)
            })?,
            scenario_types: canonical_set(scenario_types, &vocab.scenario_words, WordKind::Scenario, |w| {
                vocab.lookup_scenario(w)
            })?,
            reasoning: reasoning.into(),
        })
    }
}

fn canonical_set<W: AsRef<str>>(
    words: &[W],
    vocab_words: &[String],
    kind: WordKind,
    lookup: impl Fn(&str) -> Option<usize>,
) -> Result<Vec<String>, ContextError> {
    let mut hit = vec![false; vocab_words.len()];
    for w in words {
        let i = lookup(w.as_ref()).ok_or_else(|| ContextError::UnknownWord { kind, word: w.as_ref().to_string() })?;
        hit[i] = true;
    }
    Ok(vocab_words
        .iter()
        .zip(hit)
        .filter(|(_, h)| *h)
        .map(|(w, _)| w.clone())
        .collect())
}

fn multi_hot<const N: usize, W: AsRef<str>>(
    words: &[W],
    kind: WordKind,
    lookup: impl Fn(&str) -> Option<usize>,
) -> Result<[f64; N], ContextError> {
    let mut v = [0.0; N];
    for w in words {
        let i = lookup(w.as_ref()).ok_or_else(|| ContextError::UnknownWord { kind, word: w.as_ref().to_string() })?;
        v[i] = 1.0;
    }
    Ok(v)
}

pub fn encode_affordance<W: AsRef<str>>(words: &[W], vocab: &ContextVocabulary) -> Result<[f64; AFFORDANCE_DIM], ContextError> {
    multi_hot(words, WordKind::Affordance, |w| vocab.lookup_affordance(w))
}

pub fn encode_scenario<W: AsRef<str>>(words: &[W], vocab: &ContextVocabulary) -> Result<[f64; SCENARIO_DIM], ContextError> {
    multi_hot(words, WordKind::Scenario, |w| vocab.lookup_scenario(w))
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntentionEncoding {
    pub vector: [f64; INTENTION_DIM],
    /// Entries that landed on an already-filled slot; the larger weight was kept.
    pub warnings: Vec<String>,
}

pub fn encode_intention_labels(
    labels: &[IntentionLabel],
    vocab: &ContextVocabulary,
) -> Result<IntentionEncoding, ContextError> {
    if labels.is_empty() {
        return Err(ContextError::EmptyIntentions);
    }
    let len = labels.len();
    let mut vector = [0.0f64; INTENTION_DIM];
    let mut warnings = Vec::new();
    for (i, label) in labels.iter().enumerate() {
        let slot = vocab
            .intention_slot(*label)
            .filter(|_| vocab.active_intentions.contains(label))
            .ok_or_else(|| ContextError::UnknownWord { kind: WordKind::Intention, word: label.word().into() })?;
        let weight = (len - i) as f64;
        if vector[slot] > 0.0 {
            warnings.push(format!(
                "{} maps to slot {} already holding weight {}; kept the larger weight",
                label.word(),
                vocab.intention_words[slot],
                vector[slot]
            ));
        }
        vector[slot] = vector[slot].max(weight);
    }
    Ok(IntentionEncoding { vector, warnings })
}

pub fn encode_intention<W: AsRef<str>>(words: &[W], vocab: &ContextVocabulary) -> Result<IntentionEncoding, ContextError> {
    let labels = words
        .iter()
        .map(|w| {
            vocab.lookup_intention(w.as_ref()).ok_or_else(|| ContextError::UnknownWord {
                kind: WordKind::Intention,
                word: w.as_ref().to_string(),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    encode_intention_labels(&labels, vocab)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedContext {
    #[serde(rename = "I")]
    pub intention: [f64; INTENTION_DIM],
    #[serde(rename = "A")]
    pub affordance: [f64; AFFORDANCE_DIM],
    #[serde(rename = "S")]
    pub scenario: [f64; SCENARIO_DIM],
}

impl EncodedContext {
    /// `[I, A, S]` as one vector.
    pub fn concat(&self) -> [f64; CONTEXT_DIM] {
        let mut out = [0.0; CONTEXT_DIM];
        out[..INTENTION_DIM].copy_from_slice(&self.intention);
        out[INTENTION_DIM..INTENTION_DIM + AFFORDANCE_DIM].copy_from_slice(&self.affordance);
        out[INTENTION_DIM + AFFORDANCE_DIM..].copy_from_slice(&self.scenario);
        out
    }
}

/// File record stored next to each scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedContextRecord {
    pub scenario_id: String,
    #[serde(flatten)]
    pub encoded: EncodedContext,
}

pub fn encode_context(
    ctx: &TransportationContext,
    vocab: &ContextVocabulary,
) -> Result<(EncodedContext, Vec<String>), ContextError> {
    let intention = encode_intention_labels(&ctx.intentions, vocab)?;
    Ok((
        EncodedContext {
            intention: intention.vector,
            affordance: encode_affordance(&ctx.affordances, vocab)?,
            scenario: encode_scenario(&ctx.scenario_types, vocab)?,
        },
        intention.warnings,
    ))
}
