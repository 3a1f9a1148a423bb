//! Grid-point localization toolkit.
//!
//! Boxes are localized by predicting an `n x n` grid of points, each from its
//! own heatmap. This crate holds the non-learned parts of that design:
//!
//! - [`geometry`]: boxes, IoU, extended regions and per-point representation windows
//! - [`encoding`]: binary supervision targets and coverage of ground-truth points
//! - [`decoding`]: heatmap estimators, neighbour fusion and box assembly
//! - [`nms`]: per-class greedy NMS and the single- and double-NMS pipelines
//! - [`sampler`]: per-image versus batch-wide positive sampling
//! - [`headshape`]: shape propagation and MAC ledgers for the grid head
//! - [`simulator`]: synthetic heatmaps and scenes for end-to-end experiments
//! - [`eval`]: COCO-style AP

pub mod decoding;
pub mod encoding;
pub mod eval;
pub mod geometry;
pub mod headshape;
pub mod nms;
pub mod sampler;
pub mod simulator;

pub use decoding::{DecodeOptions, Estimator, FusionWeights, Heatmap};
pub use geometry::{iou, BBox, GridIndex, GridSpec, Point, RepresentationMode};
pub use nms::{PipelineConfig, ScoredBox};
pub use simulator::NoiseModel;
