//! Post-processing for per-frame detections from aerial survey video.
//!
//! Detections from any detector are chained into tubelets across adjacent
//! frames, re-scored with the tubelet's mean class scores, optionally linked
//! across short gaps, and scored against ground truth (probability of
//! detection, false-alarm density, probability of correct classification,
//! per-class tables and ROC sweeps). Frames can be registered into a common
//! mosaic where repeated detections from overlapping passes are merged and a
//! detection-density heatmap is rendered. A seeded survey generator supplies
//! data with known truth.

pub mod camera;
pub mod error;
pub mod ingest;
pub mod metrics;
pub mod mosaic;
pub mod pipeline;
pub mod simgen;
pub mod tubelet;
pub mod types;

pub use error::{Error, Result};
pub use ingest::{FrameMeta, Pose, RunDataset};
pub use metrics::{AssociationConfig, ConfusionMatrix, MetricsReport, RocPoint};
pub use pipeline::{MosaicConfig, RunConfig};
pub use tubelet::{MatchConfig, MatchMode, PipelineConfig};
pub use types::{BBox, ClassVocabulary, Detection, GroundTruthObject, ScoreVector, Tubelet};
