//! Transportation-context tooling for motion-prediction datasets.

pub mod context;
pub mod evaluation;
pub mod geometry;
pub mod llm;
pub mod pipeline;
pub mod prompt;
pub mod propagation;
pub mod raster;
pub mod render;
pub mod scenario;
pub mod synth;
