//! Synthetic scenes, file formats, configuration and the end-to-end run.

pub mod config;
pub mod io;
pub mod pipeline;
pub mod synth;

pub use config::PipelineConfig;
pub use pipeline::{run_pipeline, write_artifacts, PipelineRun};
pub use synth::{generate_dataset, generate_scene, Proposal, Scene, SyntheticSceneSpec};
