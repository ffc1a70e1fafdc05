//! Coarse-to-fine CRF refinement of segmentation score maps.
//!
//! The pipeline has two stages. A *context* CRF works on the coarse score
//! map: each pixel's potentials are corrected by a learned high-order
//! message (a two-layer convolution over the current probability map) and
//! by messages to and from per-category global presence nodes. A
//! *guidance* CRF then runs mean-field updates at full resolution, with
//! message passing implemented as a color-guided filter whose cost per
//! pixel is independent of the window size.
//!
//! Both stages have exact backward passes, so they can be trained jointly;
//! [`training`] provides the loss, optimizer, a synthetic dataset and
//! finite-difference gradient checks.

pub mod context;
pub mod dense;
pub mod error;
pub mod guidance;
pub mod guided;
pub mod io;
pub mod tensor;
pub mod training;
pub mod verify;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, FormatError, Result};
pub use context::{ContextCrf, ContextMessageNet, ContextState, GlobalCompatibility, GlobalTable};
pub use guidance::{potts_init, CompatibilityMatrix, GuidanceCrf, GuidanceParams};
pub use guided::{FastGuidedFilter, GuidedFilterConfig, GuidedFilterPlan};
pub use tensor::{GuideImage, LabelMap, ScoreMap, Tensor2D};
