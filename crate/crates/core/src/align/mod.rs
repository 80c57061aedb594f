//! Video-to-video alignment: block matching by compass search, robust
//! homography fitting, and temporally propagated per-frame alignment.

mod blocks;
mod compass;
mod ransac;
mod track;

use serde::{Deserialize, Serialize};

pub use blocks::{effective_level, hierarchical_match, hierarchical_match_masked, BlockMatch};
pub use compass::{compass_search, compass_step, subpixel_refine, Rect};
pub use ransac::{fit_homography_ransac, RansacParams};
pub use track::{
    align_videos, estimate_temporal, propagate_alignment, realign_band, AlignParams,
    AlignmentTrack,
};

/// Per-pixel distance used when comparing blocks.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Psi {
    /// Sum of absolute RGB channel differences.
    #[default]
    L1,
    /// Squared Euclidean RGB distance.
    L2,
}

impl Psi {
    #[inline]
    pub(crate) fn eval(self, p: [f32; 3], q: [f32; 3]) -> f64 {
        match self {
            Psi::L1 => {
                ((p[0] - q[0]).abs() + (p[1] - q[1]).abs() + (p[2] - q[2]).abs()) as f64
            }
            Psi::L2 => {
                let d0 = (p[0] - q[0]) as f64;
                let d1 = (p[1] - q[1]) as f64;
                let d2 = (p[2] - q[2]) as f64;
                d0 * d0 + d1 * d1 + d2 * d2
            }
        }
    }
}

/// A shift `(dx, dy)` such that `B(x + dx, y + dy)` matches `A(x, y)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Displacement {
    pub dx: f64,
    pub dy: f64,
}

impl Displacement {
    pub const ZERO: Displacement = Displacement { dx: 0.0, dy: 0.0 };

    pub fn new(dx: f64, dy: f64) -> Self {
        Self { dx, dy }
    }
}

/// Hierarchical compass search parameters.
///
/// `level` is the number of subdivision steps (and pyramid halvings) below
/// the single full-frame block; `division` is the number of children per
/// side a block splits into at each step; `smooth` enlarges each block's
/// sampling support by that many block widths on every side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MatchParams {
    pub level: u32,
    pub division: u32,
    pub smooth: u32,
    #[serde(default)]
    pub psi: Psi,
}

impl MatchParams {
    pub const fn new(level: u32, division: u32, smooth: u32) -> Self {
        Self {
            level,
            division,
            smooth,
            psi: Psi::L1,
        }
    }

    /// Defaults for spatial view-to-view and temporal frame-to-frame matching.
    pub const fn matching_default() -> Self {
        Self::new(5, 5, 0)
    }

    /// Defaults for the drift-correcting pass after propagation.
    pub const fn refine_default() -> Self {
        Self::new(1, 4, 1)
    }

    pub fn validate(&self) -> crate::Result<()> {
        if self.level < 1 {
            return Err(crate::Error::Config("match level must be at least 1".into()));
        }
        if self.division < 1 {
            return Err(crate::Error::Config("match division must be at least 1".into()));
        }
        Ok(())
    }
}

impl Default for MatchParams {
    fn default() -> Self {
        Self::matching_default()
    }
}
