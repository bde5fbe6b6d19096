//! Floating-anchor region proposals.
//!
//! Anchors are placed independently of the feature grid, scored with
//! position-sensitive RoI pooling, refined by pooled box offsets and pooled
//! again, then ranked and optionally passed through Soft-NMS. The [`synth`]
//! module builds feature maps with a known answer so the whole pipeline can
//! be checked end to end, and [`evalrec`] measures proposal recall.

pub mod anchors;
pub mod cli;
pub mod error;
pub mod evalrec;
pub mod geometry;
pub mod nms;
pub mod psroi;
pub mod refine;
pub mod synth;
pub mod targets;
pub mod tensor;

pub use error::{Error, Result};
pub use geometry::{BBox, Delta};
pub use tensor::FeatureMap;
