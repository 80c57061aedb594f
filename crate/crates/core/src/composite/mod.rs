//! Final assembly: alpha blending across the seam and a greedy crop to the
//! region every frame covers.

mod blend;
mod crop;

pub use blend::{alpha_blend, assemble_output, missing_masks, own_weight, seam_distance, seam_overlay, DistanceField};
pub use crop::{greedy_crop, shrink_crop, CropRect};
