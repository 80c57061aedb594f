//! Two-take video compositing along a minimum-visibility spatiotemporal
//! seam.
//!
//! The crate is organized by processing stage: [`video`] holds frame
//! buffers and resampling, [`align`] registers take B onto take A,
//! [`appearance`] equalizes blur and color, [`seamcut`] finds the seam by
//! coarse-to-fine graph cuts, [`composite`] blends and crops the result, and
//! [`pipeline`] ties the stages together with cached, invalidating state.

pub mod align;
pub mod appearance;
pub mod composite;
pub mod error;
pub mod homography;
pub mod pipeline;
pub mod seamcut;
pub mod synth;
pub mod video;

pub use error::{Error, Result};
pub use homography::Homography;
