//! Renders ego-centric map images for a few synthetic scenarios.
//!
//! `cargo run --example render_tcmap -- [out_dir]`

use std::path::PathBuf;

use motion_context::raster::write_png;
use motion_context::render::{render, RenderConfig};
use motion_context::synth::{synth_fixtures, MANEUVERS};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("motion-context-examples/tcmap"));
    std::fs::create_dir_all(&out)?;

    let cfg = RenderConfig::default();
    // Fixture i performs MANEUVERS[i % 8]; 15 fixtures cover every agent type.
    for (i, s) in synth_fixtures(15, 1)?.iter().enumerate() {
        let img = render(s, &cfg)?;
        let path = out.join(format!("{}.png", s.scenario_id));
        write_png(&img, &path)?;
        let c = img.width / 2;
        println!(
            "{:<18} {:<10} {:<15} {}x{} px, centre pixel {:?}, {} neighbors",
            s.scenario_id,
            s.ego().agent_type.name(),
            MANEUVERS[i % MANEUVERS.len()].word(),
            img.width,
            img.height,
            img.get(c, c),
            s.agents.len() - 1
        );
    }
    println!("images written to {}", out.display());
    Ok(())
}
