//! Runs every pipeline stage on synthetic data with the mock oracle, then
//! runs it again to show that unchanged stages are skipped.
//!
//! `cargo run --example mock_pipeline -- [out_dir]`

use std::path::PathBuf;

use motion_context::pipeline::{run_pipeline, PipelineConfig};
use motion_context::synth::{synth_fixtures, write_dataset};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("motion-context-examples/pipeline"));
    let dataset = root.join("dataset");
    write_dataset(&dataset, &synth_fixtures(60, 3)?)?;

    let mut cfg = PipelineConfig { dataset_dir: dataset, output_dir: root.join("out"), ..PipelineConfig::default() };
    cfg.mock.enabled = true;
    cfg.mock.noise = 0.17;
    cfg.propagation.fraction = 0.2;

    for pass in ["first", "second"] {
        let summary = run_pipeline(&cfg)?;
        let stages: Vec<String> = summary.stages.iter().map(|(s, st)| format!("{s}={st:?}")).collect();
        println!("{pass} run: {}", stages.join(" "));
    }
    print!("\n{}", std::fs::read_to_string(cfg.output_dir.join("evaluate/report.txt"))?);
    println!("\nartifacts in {}", cfg.output_dir.display());
    Ok(())
}
