//! Slice-wise quality assessment of high b-value breast DWI.
//!
//! This crate holds the data-side of the toolkit: domain types and their
//! file codecs, a synthetic phantom generator with injected hyper- and
//! hypointense artifacts, the masking / projection / slice extraction
//! pipeline, label handling and case-level splitting, and the evaluation
//! metrics. The CNN family and Grad-CAM live in `dwiqa-classifier`.

pub mod codec;
pub mod dataset;
mod error;
pub mod metrics;
pub mod phantom;
pub mod preprocess;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    Artifact, ArtifactLabel, BoxScore, Dims, DwiVolume, MaskVolume, Plane, Side, SliceRecord,
    SplitManifest, Subset,
};
