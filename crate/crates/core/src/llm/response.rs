//! The structured answer format requested from the model, and its parser.
//!
//! ```text
//! INTENTIONS: [Straight, Right-Turn]
//! AFFORDANCES: [Slow-Allow, Right-Allow]
//! SCENARIO: [Intersection]
//! ```
//! followed by free-text reasoning. Labels are matched case-insensitively and
//! words are matched against the vocabulary after normalization.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::{normalize_word, ContextVocabulary, TransportationContext, WordKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParseMode {
    Strict,
    #[default]
    Lenient,
}

#[derive(Debug, Error, PartialEq)]
pub enum ParseError {
    #[error("response has no {0} line")]
    MissingLine(&'static str),
    #[error("intention list is empty")]
    EmptyIntentions,
    #[error("unknown {kind} word '{word}'")]
    UnknownWord { kind: WordKind, word: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedResponse {
    pub context: TransportationContext,
    /// Words dropped in lenient mode.
    pub unparsed_words: Vec<String>,
}

const INTENTIONS: &str = "INTENTIONS";
const AFFORDANCES: &str = "AFFORDANCES";
const SCENARIO: &str = "SCENARIO";

fn classify_label(label: &str) -> Option<&'static str> {
    match normalize_word(label).as_str() {
        "intentions" | "intention" => Some(INTENTIONS),
        "affordances" | "affordance" => Some(AFFORDANCES),
        "scenario" | "scenarios" | "scenariotype" | "scenariotypes" => Some(SCENARIO),
        _ => None,
    }
}

/// Splits `LABEL: [a, b]` into its label kind and items.
fn labelled_line(line: &str) -> Option<(&'static str, Vec<String>)> {
    let trimmed = line.trim().trim_start_matches(['*', '-', '#', '>', ' ']);
    let (label, rest) = trimmed.split_once(':')?;
    let kind = classify_label(label.trim_matches('*'))?;
    let rest = rest.trim().trim_start_matches('*').trim();
    let inner = rest.strip_prefix('[').unwrap_or(rest);
    let inner = inner.strip_suffix(']').unwrap_or(inner);
    let items = inner
        .split(',')
        .map(|w| w.trim().trim_matches(['"', '\'', '*', '`']).trim().to_string())
        .filter(|w| !w.is_empty())
        .collect();
    Some((kind, items))
}

fn strip_reasoning_prefix(line: &str) -> &str {
    let t = line.trim_start();
    match t.split_once(':') {
        Some((label, rest)) if normalize_word(label) == "reasoning" => rest.trim_start(),
        _ => line,
    }
}

pub fn parse_response(text: &str, vocab: &ContextVocabulary, mode: ParseMode) -> Result<ParsedResponse, ParseError> {
    let mut intentions: Option<Vec<String>> = None;
    let mut affordances: Option<Vec<String>> = None;
    let mut scenarios: Option<Vec<String>> = None;
    let mut reasoning_lines = Vec::new();

    for line in text.lines() {
        if line.trim_start().starts_with("```") {
            continue;
        }
        match labelled_line(line) {
            Some((INTENTIONS, items)) if intentions.is_none() => intentions = Some(items),
            Some((AFFORDANCES, items)) if affordances.is_none() => affordances = Some(items),
            Some((SCENARIO, items)) if scenarios.is_none() => scenarios = Some(items),
            _ => reasoning_lines.push(strip_reasoning_prefix(line)),
        }
    }

    let intentions = intentions.ok_or(ParseError::MissingLine(INTENTIONS))?;
    if mode == ParseMode::Strict {
        if affordances.is_none() {
            return Err(ParseError::MissingLine(AFFORDANCES));
        }
        if scenarios.is_none() {
            return Err(ParseError::MissingLine(SCENARIO));
        }
    }

    let mut unparsed = Vec::new();
    let mut unknown = |kind: WordKind, word: &str| -> Result<(), ParseError> {
        match mode {
            ParseMode::Strict => Err(ParseError::UnknownWord { kind, word: word.to_string() }),
            ParseMode::Lenient => {
                unparsed.push(word.to_string());
                Ok(())
            }
        }
    };

    let mut labels = Vec::new();
    for w in &intentions {
        match vocab.lookup_intention(w) {
            Some(l) if !labels.contains(&l) => labels.push(l),
            Some(_) => {}
            None => unknown(WordKind::Intention, w)?,
        }
    }
    let mut pick = |words: Option<Vec<String>>, kind: WordKind, lookup: &dyn Fn(&str) -> Option<usize>, names: &[String]| {
        let mut hit = vec![false; names.len()];
        for w in words.unwrap_or_default() {
            match lookup(&w) {
                Some(i) => hit[i] = true,
                None => unknown(kind, &w)?,
            }
        }
        Ok::<Vec<String>, ParseError>(
            names.iter().zip(hit).filter(|(_, h)| *h).map(|(n, _)| n.clone()).collect(),
        )
    };
    let affordances = pick(affordances, WordKind::Affordance, &|w| vocab.lookup_affordance(w), &vocab.affordance_words)?;
    let scenario_types = pick(scenarios, WordKind::Scenario, &|w| vocab.lookup_scenario(w), &vocab.scenario_words)?;

    if labels.is_empty() {
        return Err(ParseError::EmptyIntentions);
    }
    Ok(ParsedResponse {
        context: TransportationContext {
            intentions: labels,
            affordances,
            scenario_types,
            reasoning: reasoning_lines.join("\n").trim().to_string(),
        },
        unparsed_words: unparsed,
    })
}

/// Renders a context in the canonical answer format.
pub fn format_response(ctx: &TransportationContext) -> String {
    let intentions: Vec<&str> = ctx.intentions.iter().map(|l| l.word()).collect();
    format!(
        "```\nINTENTIONS: [{}]\nAFFORDANCES: [{}]\nSCENARIO: [{}]\n```\nREASONING: {}\n",
        intentions.join(", "),
        ctx.affordances.join(", "),
        ctx.scenario_types.join(", "),
        ctx.reasoning
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::IntentionLabel;

    #[test]
    fn figure_one_literal() {
        let v = ContextVocabulary::default();
        let text = "INTENTIONS: [Straight, Right-Turn]\nAFFORDANCES: [Slow-Allow, Right-Allow]\nSCENARIO: [Intersection]";
        let p = parse_response(text, &v, ParseMode::Strict).unwrap();
        assert_eq!(p.context.intentions, vec![IntentionLabel::Straight, IntentionLabel::RightTurn]);
        assert_eq!(p.context.affordances, vec!["Slow-Allow", "Right-Allow"]);
        assert_eq!(p.context.scenario_types, vec!["Intersection"]);
        assert_eq!(p.context.reasoning, "");
    }

    #[test]
    fn empty_intentions_rejected() {
        let v = ContextVocabulary::default();
        for mode in [ParseMode::Strict, ParseMode::Lenient] {
            let err = parse_response("INTENTIONS: []\nAFFORDANCES: []\nSCENARIO: []", &v, mode).unwrap_err();
            assert_eq!(err, ParseError::EmptyIntentions);
        }
    }

    #[test]
    fn lowercase_single_list() {
        let v = ContextVocabulary::default();
        let text = "intentions: [straight]";
        assert_eq!(parse_response(text, &v, ParseMode::Strict).unwrap_err(), ParseError::MissingLine("AFFORDANCES"));
        let p = parse_response(text, &v, ParseMode::Lenient).unwrap();
        assert_eq!(p.context.intentions, vec![IntentionLabel::Straight]);
        assert!(p.context.affordances.is_empty() && p.context.scenario_types.is_empty());
    }

    #[test]
    fn unknown_words_by_mode() {
        let v = ContextVocabulary::default();
        let text = "INTENTIONS: [Straight, Reverse]\nAFFORDANCES: [Honk-Allow]\nSCENARIO: [Intersection]";
        assert!(matches!(parse_response(text, &v, ParseMode::Strict), Err(ParseError::UnknownWord { .. })));
        let p = parse_response(text, &v, ParseMode::Lenient).unwrap();
        assert_eq!(p.unparsed_words, vec!["Reverse", "Honk-Allow"]);
        assert_eq!(p.context.intentions, vec![IntentionLabel::Straight]);
    }

    #[test]
    fn fenced_block_with_reasoning() {
        let v = ContextVocabulary::default();
        let text = "Here you go.\n```\n**INTENTIONS**: [left turn, STRAIGHT]\nAFFORDANCES: [stop allow]\nSCENARIO: [intersection]\n```\nREASONING: The ego waits at the stop line.";
        let p = parse_response(text, &v, ParseMode::Strict).unwrap();
        assert_eq!(p.context.intentions, vec![IntentionLabel::LeftTurn, IntentionLabel::Straight]);
        assert_eq!(p.context.affordances, vec!["Stop-Allow"]);
        assert_eq!(p.context.reasoning, "Here you go.\nThe ego waits at the stop line.");
    }
}
