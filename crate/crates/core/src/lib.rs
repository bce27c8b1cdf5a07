//! Post-processing, objectness supervision and evaluation for open-world
//! detectors that score every query with an instance presence score (IPS).

pub mod assignment;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod ipp;
pub mod metrics;
pub mod postprocess;
pub mod prob;
pub mod selection;
pub mod supervision;

pub use error::{Error, Result};
pub use geometry::{diou, giou, iou, BBox};
pub use ipp::IppModel;
pub use metrics::{EvalReport, GroundTruthObject, Label};
pub use postprocess::{Detection, FinalPrediction, PostprocessConfig};
