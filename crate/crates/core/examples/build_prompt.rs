//! Builds the image and text prompt for one scenario and shows the facts
//! the text was assembled from.
//!
//! `cargo run --example build_prompt -- [template.txt]`

use motion_context::prompt::{build_tcgp, PromptTemplate};
use motion_context::raster::encode_png;
use motion_context::render::RenderConfig;
use motion_context::synth::synth_fixtures;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let tmpl = match std::env::args().nth(1) {
        Some(path) => PromptTemplate::load(path.as_ref())?,
        None => PromptTemplate::default(),
    };
    let scenarios = synth_fixtures(8, 4)?;
    let s = scenarios.iter().max_by_key(|s| s.agents.len()).expect("fixtures are non-empty");

    let tcgp = build_tcgp(s, &tmpl, &RenderConfig::default())?;
    println!("scenario {} ({} agents)", s.scenario_id, s.agents.len());
    match &tcgp.lane {
        Some(d) => println!(
            "lane: {} from feature {} at {:.2} m ({})",
            d.lane_type.phrase(),
            d.feature_id,
            d.distance,
            if d.from_map { "map label" } else { "geometry rule" }
        ),
        None => println!("lane: none within the search radius"),
    }
    for n in &tcgp.neighbors {
        println!("neighbor {}: {} {:.1} m {}", n.label, n.agent_type, n.distance, n.relative_bearing);
    }
    println!("image: {}x{}, {} PNG bytes", tcgp.image.width, tcgp.image.height, encode_png(&tcgp.image)?.len());
    println!("\n{}", tcgp.text);
    Ok(())
}
