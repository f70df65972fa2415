//! Stroke-guided hair synthesis.
//!
//! A two-stage conditional generator turns a segmentation mask plus sparse
//! RGBA guide strokes into hair composited into a photograph. Around it sit
//! the orientation-field machinery that derives strokes from images, a
//! procedural training-data generator, a small self-contained autodiff stack,
//! training schedules, evaluation metrics, and an editing session service.

pub mod error;
pub mod flowfield;
pub mod imagecore;
pub mod metrics;
pub mod neuralnet;
pub mod pipeline;
pub mod serve;
pub mod strokes;
pub mod synthdata;

pub use error::{Error, Result};
