//! Blur and color equalization between the takes, run before the seam
//! search so the difference volume reflects content rather than capture
//! conditions.

mod blur;
mod color;

pub use blur::{
    blur_clip, blurriness, box_blur, estimate_blur_kernel, match_blur, BlurKernel, BlurMatch, Blurred, Blurriness,
};
pub use color::{
    apply_color_lut, apply_color_lut_frame, build_color_lut, fade_weight, level, match_histogram, paired_histograms,
    ColorLUT, ColorParams, Histograms, GAMMA_ALL,
};
