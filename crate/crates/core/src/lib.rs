//! Instance-level occupancy fields for two interacting shapes.

pub mod mesh;
pub mod metrics;
pub mod camera;
pub mod compose;
pub mod field;
pub mod fusion;
pub mod losses;
pub mod rawio;
pub mod spatial;
pub mod train;

/// Runs the guide's code listings as doc-tests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/meshes.md")]
    mod meshes {}
    #[doc = include_str!("../../../book/src/cameras.md")]
    mod cameras {}
    #[doc = include_str!("../../../book/src/field.md")]
    mod field {}
    #[doc = include_str!("../../../book/src/losses.md")]
    mod losses {}
    #[doc = include_str!("../../../book/src/composing.md")]
    mod composing {}
    #[doc = include_str!("../../../book/src/labeling.md")]
    mod labeling {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
}
