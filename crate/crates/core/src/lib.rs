//! Auditing toolkit for gender inference from full-body pedestrian images.
//!
//! Extracts image and subject features per sample, labels each sample by
//! whether every model got it right, and explains that label with exact
//! Shapley attributions of a tree surrogate. Also crops head regions,
//! computes mean accuracy and face importance, and ranks datasets by image
//! quality.

pub mod config;
pub mod explain;
pub mod headroi;
pub mod imgfeat;
pub mod ingest;
pub mod metrics;
pub mod report;
pub mod subjfeat;
pub mod tiering;
pub mod pipeline;
pub mod synth;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/inputs.md")]
    mod inputs {}
    #[doc = include_str!("../../../book/src/features.md")]
    mod features {}
    #[doc = include_str!("../../../book/src/explain.md")]
    mod explain {}
    #[doc = include_str!("../../../book/src/head.md")]
    mod head {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/tiering.md")]
    mod tiering {}
}
