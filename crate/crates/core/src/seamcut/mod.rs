//! Minimum-visibility seam between two aligned takes, found by graph cuts on
//! a motion-compensated space-time grid.

mod graph;
pub mod maxflow;
mod pyramid;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::homography::Homography;

pub use graph::{apply_keyframes, build_graph, min_cut, seam_energy, Cut, FlowNetwork};
pub use pyramid::{
    coarse_to_fine_cut, downsample_constraints, effective_seam_level, grow_band, upsample_labels,
    upsample_labels_to, CutStats, LevelStats,
};

/// Which take a pixel is drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    A,
    B,
}

impl Label {
    pub fn other(self) -> Label {
        match self {
            Label::A => Label::B,
            Label::B => Label::A,
        }
    }
}

/// One painted pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stroke {
    pub frame: usize,
    pub x: usize,
    pub y: usize,
    pub label: Label,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrokeSet {
    pub entries: Vec<Stroke>,
}

impl StrokeSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, frame: usize, x: usize, y: usize, label: Label) {
        self.entries.push(Stroke { frame, x, y, label });
    }

    /// Like `push`, but replaces any stroke already on that pixel.
    pub fn set(&mut self, frame: usize, x: usize, y: usize, label: Label) {
        self.erase(frame, x, y);
        self.push(frame, x, y, label);
    }

    /// Removes every stroke on one pixel.
    pub fn erase(&mut self, frame: usize, x: usize, y: usize) {
        self.entries.retain(|s| (s.frame, s.x, s.y) != (frame, x, y));
    }

    /// Strokes on one frame.
    pub fn on_frame(&self, frame: usize) -> impl Iterator<Item = &Stroke> {
        self.entries.iter().filter(move |s| s.frame == frame)
    }

    pub fn has_label(&self, label: Label) -> bool {
        self.entries.iter().any(|s| s.label == label)
    }

    /// Paints an axis-aligned rectangle `[x0, x1) x [y0, y1)` on `frame`.
    pub fn paint_rect(&mut self, frame: usize, x0: usize, y0: usize, x1: usize, y1: usize, label: Label) {
        for y in y0..y1 {
            for x in x0..x1 {
                self.push(frame, x, y, label);
            }
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Seam search parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeamParams {
    /// Weight of temporal links relative to spatial ones.
    pub lambda: f64,
    /// Number of 2x pyramid reductions; 0 runs a single full-resolution cut.
    pub level: u32,
    /// The band around the upsampled seam is `2^grow` pixels wide.
    pub grow: u32,
}

impl Default for SeamParams {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            level: 3,
            grow: 1,
        }
    }
}

impl SeamParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!(
                "lambda must be a finite non-negative number, got {}",
                self.lambda
            )));
        }
        if self.grow > 16 {
            return Err(Error::Config(format!("grow {} is unreasonably large", self.grow)));
        }
        Ok(())
    }
}

/// Dense per-pixel, per-frame values stored frame-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Volume<T> {
    width: usize,
    height: usize,
    frames: usize,
    data: Vec<T>,
}

impl<T: Clone> Volume<T> {
    pub fn filled(width: usize, height: usize, frames: usize, value: T) -> Self {
        Self {
            width,
            height,
            frames,
            data: vec![value; width * height * frames],
        }
    }

    pub fn from_vec(width: usize, height: usize, frames: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height * frames {
            return Err(Error::Structural(format!(
                "volume {width}x{height}x{frames} needs {} values, got {}",
                width * height * frames,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            frames,
            data,
        })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        frames: usize,
        f: impl Fn(usize, usize, usize) -> T,
    ) -> Self {
        let mut data = Vec::with_capacity(width * height * frames);
        for t in 0..frames {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(x, y, t));
                }
            }
        }
        Self {
            width,
            height,
            frames,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.width, self.height, self.frames)
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, t: usize) -> usize {
        (t * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, t: usize) -> T {
        self.data[self.index(x, y, t)].clone()
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, t: usize, v: T) {
        let i = self.index(x, y, t);
        self.data[i] = v;
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn frame(&self, t: usize) -> &[T] {
        let n = self.width * self.height;
        &self.data[t * n..(t + 1) * n]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [T] {
        let n = self.width * self.height;
        &mut self.data[t * n..(t + 1) * n]
    }
}

/// Per-pixel take assignment. The seam is where neighboring labels differ.
pub type LabelVolume = Volume<Label>;

/// Per-pixel hard constraint from strokes and keyframes.
pub type Constraints = Volume<Option<Label>>;

/// True where a pixel takes part in a band-restricted cut.
pub type BandMask = Volume<bool>;

impl LabelVolume {
    pub fn count(&self, label: Label) -> usize {
        self.data.iter().filter(|&&l| l == label).count()
    }
}

impl BandMask {
    pub fn count_set(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }
}

impl Constraints {
    /// Rasterizes strokes; a pixel painted with both labels is an error.
    pub fn from_strokes(strokes: &StrokeSet, width: usize, height: usize, frames: usize) -> Result<Self> {
        let mut c = Constraints::filled(width, height, frames, None);
        for s in &strokes.entries {
            if s.x >= width || s.y >= height || s.frame >= frames {
                return Err(Error::Config(format!(
                    "stroke at frame {}, pixel ({}, {}) lies outside the {width}x{height}x{frames} volume",
                    s.frame, s.x, s.y
                )));
            }
            c.constrain(s.x, s.y, s.frame, s.label, "painted with both labels")?;
        }
        Ok(c)
    }

    /// Fixes one pixel, failing if it already carries the other label.
    pub fn constrain(&mut self, x: usize, y: usize, t: usize, label: Label, reason: &str) -> Result<()> {
        let i = self.index(x, y, t);
        match self.data[i] {
            Some(l) if l != label => Err(Error::ConstraintConflict {
                frame: t,
                x,
                y,
                reason: reason.into(),
            }),
            _ => {
                self.data[i] = Some(label);
                Ok(())
            }
        }
    }

    pub fn count(&self, label: Label) -> usize {
        self.data.iter().filter(|&&l| l == Some(label)).count()
    }
}

/// A full labeling of one frame, enforced as a hard constraint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Keyframe {
    pub frame: usize,
    /// Row-major labels for every pixel of the frame.
    pub labels: Vec<Label>,
}

/// Index nearest to `v` (halves up) if it lies in `0..n`.
#[inline]
fn round_index(v: f64, n: usize) -> Option<usize> {
    let r = v + 0.5;
    // Also rejects NaN.
    if r >= 0.0 && r < n as f64 {
        Some(r as usize)
    } else {
        None
    }
}

/// Forward motion between consecutive frames: entry `t` maps pixel
/// coordinates of frame `t` to frame `t + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<Homography>", try_from = "Vec<Homography>")]
pub struct MotionLinks {
    forward: Vec<Homography>,
    backward: Vec<Homography>,
}

impl From<MotionLinks> for Vec<Homography> {
    fn from(m: MotionLinks) -> Self {
        m.forward
    }
}

impl TryFrom<Vec<Homography>> for MotionLinks {
    type Error = Error;

    fn try_from(forward: Vec<Homography>) -> Result<Self> {
        Self::new(forward)
    }
}

impl MotionLinks {
    pub fn new(forward: Vec<Homography>) -> Result<Self> {
        let backward = forward
            .iter()
            .enumerate()
            .map(|(t, h)| {
                if !h.is_finite() || h.determinant().abs() < 1e-12 {
                    return Err(Error::Model(format!("motion link {t} is singular")));
                }
                h.inverse()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { forward, backward })
    }

    /// Links for a static camera.
    pub fn identity(frames: usize) -> Self {
        let n = frames.saturating_sub(1);
        Self {
            forward: vec![Homography::identity(); n],
            backward: vec![Homography::identity(); n],
        }
    }

    /// Builds links from temporal homographies mapping frame `t + 1` into
    /// frame `t`.
    pub fn from_temporal(temporal: &[Homography]) -> Result<Self> {
        let forward = temporal
            .iter()
            .map(|h| h.inverse())
            .collect::<Result<Vec<_>>>()?;
        Self::new(forward)
    }

    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }

    pub fn forward(&self) -> &[Homography] {
        &self.forward
    }

    /// Rounded position in frame `t + 1` of pixel `(x, y)` of frame `t`, or
    /// `None` when it falls outside a `width x height` frame. Halves round
    /// up.
    #[inline]
    pub fn target(&self, t: usize, x: usize, y: usize, width: usize, height: usize) -> Option<(usize, usize)> {
        let (u, v) = self.forward[t].apply(x as f64, y as f64);
        Some((round_index(u, width)?, round_index(v, height)?))
    }

    /// [`target`](Self::target) for a whole row `y` of frame `t`, written as
    /// flat indices `v * width + u` into `out`, `u32::MAX` where the link
    /// leaves the frame.
    pub fn row_targets(&self, t: usize, y: usize, width: usize, height: usize, out: &mut [u32]) {
        let m = self.forward[t].to_row_major();
        let yf = y as f64;
        let (bx, by, bw) = (m[1] * yf + m[2] + 0.5, m[4] * yf + m[5] + 0.5, m[7] * yf + m[8]);
        let (wf, hf, w32) = (width as f64, height as f64, width as u32);
        let affine = m[6] == 0.0 && bw == 1.0;
        for (x, o) in out[..width].iter_mut().enumerate() {
            let xf = x as f64;
            // Offsets of one half are folded into bx, by; for projective maps
            // they are removed before dividing.
            let (ru, rv) = if affine {
                (m[0] * xf + bx, m[3] * xf + by)
            } else {
                let w = m[6] * xf + bw;
                ((m[0] * xf + bx - 0.5) / w + 0.5, (m[3] * xf + by - 0.5) / w + 0.5)
            };
            *o = if ru >= 0.0 && ru < wf && rv >= 0.0 && rv < hf {
                rv as u32 * w32 + ru as u32
            } else {
                u32::MAX
            };
        }
    }

    /// Targets of every pixel of frame `t`, as [`row_targets`](Self::row_targets)
    /// for all rows.
    pub fn frame_targets(&self, t: usize, width: usize, height: usize) -> Vec<u32> {
        let mut out = vec![u32::MAX; width * height];
        for (y, row) in out.chunks_mut(width).enumerate() {
            self.row_targets(t, y, width, height, row);
        }
        out
    }

    /// Every pixel of frame `t` whose [`target`](Self::target) is `(u, v)`.
    pub fn sources(&self, t: usize, u: usize, v: usize, width: usize, height: usize) -> Vec<(usize, usize)> {
        let inv = &self.backward[t];
        let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for (cx, cy) in [(-0.5, -0.5), (0.5, -0.5), (-0.5, 0.5), (0.5, 0.5)] {
            let (x, y) = inv.apply(u as f64 + cx, v as f64 + cy);
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
        }
        if !(x0.is_finite() && y0.is_finite() && x1.is_finite() && y1.is_finite()) {
            return Vec::new();
        }
        let xs = (x0.floor() as i64 - 1).max(0)..=(x1.ceil() as i64 + 1).min(width as i64 - 1);
        let ys = (y0.floor() as i64 - 1).max(0)..=(y1.ceil() as i64 + 1).min(height as i64 - 1);
        let mut out = Vec::new();
        for y in ys {
            for x in xs.clone() {
                let (x, y) = (x as usize, y as usize);
                if self.target(t, x, y, width, height) == Some((u, v)) {
                    out.push((x, y));
                }
            }
        }
        out
    }

    /// Links for the next coarser level: spatially conjugated by the 2x
    /// downscale and composed over merged frame pairs.
    pub fn downsampled(&self, fine_frames: usize) -> MotionLinks {
        let coarse_frames = fine_frames.div_ceil(2);
        let scaled: Vec<Homography> = self.forward.iter().map(|h| h.downscaled()).collect();
        let forward = (0..coarse_frames.saturating_sub(1))
            .map(|k| scaled[2 * k + 1] * scaled[2 * k])
            .collect();
        MotionLinks::new(forward).expect("products of invertible maps are invertible")
    }
}
