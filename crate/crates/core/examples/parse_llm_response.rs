//! Parses model answers into transportation contexts in lenient and strict mode.
//!
//! `cargo run --example parse_llm_response`

use motion_context::context::ContextVocabulary;
use motion_context::llm::{format_response, parse_response, ParseMode};

const ANSWERS: [&str; 4] = [
    "```\nINTENTIONS: [Straight, Right-Turn]\nAFFORDANCES: [Slow-Allow, Right-Allow]\nSCENARIO: [Intersection]\n```\nREASONING: The lane bends right ahead.",
    "intentions: [left turn]\naffordances: [slow-allow, honk-allow]\nscenario: [intersection]",
    "INTENTIONS: [Stationary]",
    "I am not sure what the vehicle will do.",
];

fn main() {
    let vocab = ContextVocabulary::default();
    for (i, text) in ANSWERS.iter().enumerate() {
        println!("answer {}:", i + 1);
        for mode in [ParseMode::Lenient, ParseMode::Strict] {
            match parse_response(text, &vocab, mode) {
                Ok(p) => {
                    let words: Vec<&str> = p.context.intentions.iter().map(|l| l.word()).collect();
                    println!(
                        "  {mode:?}: intentions {words:?}, affordances {:?}, scenario {:?}, unparsed {:?}",
                        p.context.affordances, p.context.scenario_types, p.unparsed_words
                    );
                }
                Err(e) => println!("  {mode:?}: error: {e}"),
            }
        }
    }

    let parsed = parse_response(ANSWERS[0], &vocab, ParseMode::Strict).expect("first answer is canonical");
    println!("\ncanonical form:\n{}", format_response(&parsed.context));
}
