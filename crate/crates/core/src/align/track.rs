use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fit_homography_ransac, hierarchical_match_masked, MatchParams, RansacParams};
use crate::error::{Error, Result};
use crate::homography::Homography;
use crate::video::{warp_frame, Frame, ValidityMask, VideoClip};

/// Per-frame alignment of clip B onto clip A.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentTrack {
    /// `spatial[t]` maps points of `B_t` to points of `A_t`.
    pub spatial: Vec<Homography>,
    /// `temporal_a[t]` maps points of `A_{t+1}` to points of `A_t`.
    pub temporal_a: Vec<Homography>,
    /// `temporal_b[t]` maps points of `B_{t+1}` to points of `B_t`.
    pub temporal_b: Vec<Homography>,
    pub anchor: usize,
}

impl AlignmentTrack {
    /// Identity alignment for `len` frames.
    pub fn identity(len: usize) -> Self {
        let pairs = len.saturating_sub(1);
        Self {
            spatial: vec![Homography::identity(); len],
            temporal_a: vec![Homography::identity(); pairs],
            temporal_b: vec![Homography::identity(); pairs],
            anchor: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.spatial.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spatial.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.spatial.len();
        if n == 0 {
            return Err(Error::Structural("alignment track has no frames".into()));
        }
        if self.temporal_a.len() != n - 1 || self.temporal_b.len() != n - 1 {
            return Err(Error::Structural(format!(
                "alignment track has {n} frames but {} / {} temporal entries",
                self.temporal_a.len(),
                self.temporal_b.len()
            )));
        }
        if self.anchor >= n {
            return Err(Error::Structural(format!(
                "alignment anchor {} outside {n} frames",
                self.anchor
            )));
        }
        let all = self
            .spatial
            .iter()
            .chain(&self.temporal_a)
            .chain(&self.temporal_b);
        for h in all {
            if !h.is_finite() || h.determinant().abs() < 1e-12 {
                return Err(Error::Model("alignment track holds a singular homography".into()));
            }
        }
        Ok(())
    }
}

/// Parameters of [`align_videos`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignParams {
    /// Full matching at the anchor and between consecutive frames.
    pub match_p: MatchParams,
    /// Drift correction after each propagation step.
    pub refine_p: MatchParams,
    pub ransac: RansacParams,
    /// When false, frames other than the anchor use the propagated
    /// prediction as is.
    pub refine: bool,
}

impl Default for AlignParams {
    fn default() -> Self {
        Self {
            match_p: MatchParams::matching_default(),
            refine_p: MatchParams::refine_default(),
            ransac: RansacParams::default(),
            refine: true,
        }
    }
}

/// Fits the homography taking points of `b` to points of `a`, after
/// optionally pre-warping `b` by `init` (itself a B-to-A map).
fn fit_pair(
    a: &Frame,
    band: Option<&ValidityMask>,
    b: &Frame,
    init: Option<&Homography>,
    p: &MatchParams,
    ransac: &RansacParams,
) -> Result<Homography> {
    let matches = match init {
        Some(h) => {
            let (bw, valid) = warp_frame(b, h)?;
            hierarchical_match_masked(a, band, &bw, Some(&valid), p)?
        }
        None => hierarchical_match_masked(a, band, b, None, p)?,
    };
    let (a_to_b, _) = fit_homography_ransac(&matches, ransac)?;
    let b_to_a = a_to_b.inverse()?;
    Ok(match init {
        Some(h) => b_to_a * *h,
        None => b_to_a,
    })
}

/// Entry `t` maps points of frame `t + 1` to points of frame `t`.
pub fn estimate_temporal(
    clip: &VideoClip,
    p: &MatchParams,
    ransac: &RansacParams,
) -> Result<Vec<Homography>> {
    if clip.len() < 2 {
        return Err(Error::Structural(
            "temporal homographies need at least 2 frames".into(),
        ));
    }
    let frames = clip.frames();
    (0..frames.len() - 1)
        .into_par_iter()
        .map(|t| {
            fit_pair(&frames[t], None, &frames[t + 1], None, p, ransac)
                .map_err(|e| Error::Alignment(format!("frames {t} -> {}: {e}", t + 1)))
        })
        .collect()
}

/// Predicts `H_{t+1} = H_a^-1 H_t H_b`.
pub fn propagate_alignment(
    h_t: &Homography,
    h_a: &Homography,
    h_b: &Homography,
) -> Result<Homography> {
    Ok(h_a.inverse()? * *h_t * *h_b)
}

fn check_pair(a: &VideoClip, b: &VideoClip, anchor: usize) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Structural(format!(
            "aligned clips must overlap frame for frame: {} vs {} frames",
            a.len(),
            b.len()
        )));
    }
    if a.dims() != b.dims() {
        return Err(Error::Structural(format!(
            "clip sizes differ: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    if anchor >= a.len() {
        return Err(Error::Config(format!(
            "anchor frame {anchor} outside the {} overlapping frames",
            a.len()
        )));
    }
    Ok(())
}

struct Tracker<'a> {
    a: &'a VideoClip,
    b: &'a VideoClip,
    temporal_a: &'a [Homography],
    temporal_b: &'a [Homography],
    params: &'a AlignParams,
    band: Option<&'a [ValidityMask]>,
}

impl Tracker<'_> {
    fn correct(&self, t: usize, pred: Homography) -> Result<Homography> {
        if !self.params.refine {
            return Ok(pred);
        }
        let band = self.band.map(|b| &b[t]);
        let fitted = fit_pair(
            self.a.frame(t),
            band,
            self.b.frame(t),
            Some(&pred),
            &self.params.refine_p,
            &self.params.ransac,
        );
        match fitted {
            Ok(h) => Ok(h),
            Err(e) if self.band.is_some() => Err(Error::Alignment(format!(
                "band too small for a stable fit at frame {t}: {e}"
            ))),
            Err(e) => {
                log::warn!("drift correction failed at frame {t}, keeping prediction: {e}");
                Ok(pred)
            }
        }
    }

    fn forward(&self, anchor: usize, h: Homography) -> Result<Vec<Homography>> {
        let mut out = Vec::with_capacity(self.a.len() - anchor - 1);
        let mut cur = h;
        for t in anchor + 1..self.a.len() {
            let pred = propagate_alignment(&cur, &self.temporal_a[t - 1], &self.temporal_b[t - 1])?;
            cur = self.correct(t, pred)?;
            out.push(cur);
        }
        Ok(out)
    }

    fn backward(&self, anchor: usize, h: Homography) -> Result<Vec<Homography>> {
        let mut out = Vec::with_capacity(anchor);
        let mut cur = h;
        for t in (0..anchor).rev() {
            let pred = self.temporal_a[t] * cur * self.temporal_b[t].inverse()?;
            cur = self.correct(t, pred)?;
            out.push(cur);
        }
        out.reverse();
        Ok(out)
    }

    fn run(&self, anchor: usize, h_anchor: Homography) -> Result<Vec<Homography>> {
        let (back, fwd) = rayon::join(
            || self.backward(anchor, h_anchor),
            || self.forward(anchor, h_anchor),
        );
        let mut spatial = back?;
        spatial.push(h_anchor);
        spatial.extend(fwd?);
        Ok(spatial)
    }
}

/// Aligns every frame of `b` onto the same frame of `a`, starting from a
/// full match at `anchor` and propagating in both directions.
pub fn align_videos(
    a: &VideoClip,
    b: &VideoClip,
    anchor: usize,
    params: &AlignParams,
) -> Result<AlignmentTrack> {
    check_pair(a, b, anchor)?;
    let h_anchor = fit_pair(
        a.frame(anchor),
        None,
        b.frame(anchor),
        None,
        &params.match_p,
        &params.ransac,
    )
    .map_err(|e| {
        Error::Alignment(format!(
            "cannot align frame {anchor}; try an anchor where both takes show similar content ({e})"
        ))
    })?;

    let (temporal_a, temporal_b) = if a.len() > 1 {
        let (ta, tb) = rayon::join(
            || estimate_temporal(a, &params.match_p, &params.ransac),
            || estimate_temporal(b, &params.match_p, &params.ransac),
        );
        (ta?, tb?)
    } else {
        (Vec::new(), Vec::new())
    };

    let tracker = Tracker {
        a,
        b,
        temporal_a: &temporal_a,
        temporal_b: &temporal_b,
        params,
        band: None,
    };
    let spatial = tracker.run(anchor, h_anchor)?;
    Ok(AlignmentTrack {
        spatial,
        temporal_a,
        temporal_b,
        anchor,
    })
}

/// Re-runs alignment with block comparisons restricted to `band[t]` (in A's
/// coordinates), starting from `track`. Temporal homographies are reused.
pub fn realign_band(
    a: &VideoClip,
    b: &VideoClip,
    track: &AlignmentTrack,
    band: &[ValidityMask],
    params: &AlignParams,
) -> Result<AlignmentTrack> {
    track.validate()?;
    check_pair(a, b, track.anchor)?;
    if track.len() != a.len() || band.len() != a.len() {
        return Err(Error::Structural(format!(
            "realignment needs {} frames of track and band, got {} and {}",
            a.len(),
            track.len(),
            band.len()
        )));
    }
    for (t, m) in band.iter().enumerate() {
        if m.dims() != a.dims() {
            return Err(Error::Structural(format!(
                "band mask at frame {t} is {:?}, frames are {:?}",
                m.dims(),
                a.dims()
            )));
        }
        if m.count_valid() == 0 {
            return Err(Error::Alignment(format!("realignment band is empty at frame {t}")));
        }
    }

    let anchor = track.anchor;
    let h_anchor = fit_pair(
        a.frame(anchor),
        Some(&band[anchor]),
        b.frame(anchor),
        Some(&track.spatial[anchor]),
        &params.match_p,
        &params.ransac,
    )
    .map_err(|e| {
        Error::Alignment(format!(
            "band too small for a stable fit at frame {anchor}: {e}"
        ))
    })?;
    let tracker = Tracker {
        a,
        b,
        temporal_a: &track.temporal_a,
        temporal_b: &track.temporal_b,
        params,
        band: Some(band),
    };
    let spatial = tracker.run(anchor, h_anchor)?;
    Ok(AlignmentTrack {
        spatial,
        temporal_a: track.temporal_a.clone(),
        temporal_b: track.temporal_b.clone(),
        anchor,
    })
}
