use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::video::{Frame, ValidityMask, VideoClip};

/// Largest possible RGB L1 distance between two 8-bit pixels. A threshold at
/// or above it accepts every pixel pair.
pub const GAMMA_ALL: f64 = 765.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColorParams {
    /// Pixel pairs whose RGB L1 distance reaches `gamma` are left out of the
    /// histograms.
    pub gamma: f64,
    /// Frames over which the correction fades out after the overlap ends.
    pub fade: usize,
}

impl Default for ColorParams {
    fn default() -> Self {
        Self {
            gamma: 200.0,
            fade: 30,
        }
    }
}

impl ColorParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(Error::Config(format!("gamma must be positive, got {}", self.gamma)));
        }
        Ok(())
    }
}

/// Per-channel lookup tables taking B's 8-bit levels onto A's.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "LutRepr", into = "LutRepr")]
pub struct ColorLUT {
    tables: [[u8; 256]; 3],
    fade: usize,
}

#[derive(Serialize, Deserialize)]
struct LutRepr {
    tables: [Vec<u8>; 3],
    fade: usize,
}

impl TryFrom<LutRepr> for ColorLUT {
    type Error = Error;

    fn try_from(r: LutRepr) -> Result<Self> {
        let mut tables = [[0u8; 256]; 3];
        for (dst, src) in tables.iter_mut().zip(&r.tables) {
            if src.len() != 256 {
                return Err(Error::Config(format!("LUT channel has {} entries, expected 256", src.len())));
            }
            dst.copy_from_slice(src);
        }
        ColorLUT::new(tables, r.fade)
    }
}

impl From<ColorLUT> for LutRepr {
    fn from(l: ColorLUT) -> Self {
        LutRepr {
            tables: l.tables.map(|t| t.to_vec()),
            fade: l.fade,
        }
    }
}

impl ColorLUT {
    pub fn new(tables: [[u8; 256]; 3], fade: usize) -> Result<Self> {
        for (c, t) in tables.iter().enumerate() {
            if let Some(i) = t.windows(2).position(|p| p[1] < p[0]) {
                return Err(Error::Config(format!(
                    "LUT channel {c} decreases at entry {}",
                    i + 1
                )));
            }
        }
        Ok(Self { tables, fade })
    }

    pub fn identity(fade: usize) -> Self {
        let mut t = [0u8; 256];
        for (i, v) in t.iter_mut().enumerate() {
            *v = i as u8;
        }
        Self {
            tables: [t; 3],
            fade,
        }
    }

    pub fn tables(&self) -> &[[u8; 256]; 3] {
        &self.tables
    }

    pub fn fade(&self) -> usize {
        self.fade
    }

    pub fn is_identity(&self) -> bool {
        self.tables == Self::identity(self.fade).tables
    }

    /// Largest `|lut[i] - i|` over all channels.
    pub fn max_deviation(&self) -> u8 {
        self.tables
            .iter()
            .flat_map(|t| t.iter().enumerate().map(|(i, &v)| (i as i32 - i32::from(v)).unsigned_abs() as u8))
            .max()
            .unwrap_or(0)
    }

    /// Maps one channel value, interpolating between table entries so
    /// fractional samples stay fractional.
    #[inline]
    pub fn map(&self, channel: usize, v: f32) -> f32 {
        let v = v.clamp(0.0, 255.0);
        let i = (v as usize).min(254);
        let t = &self.tables[channel];
        let (lo, hi) = (f32::from(t[i]), f32::from(t[i + 1]));
        lo + (hi - lo) * (v - i as f32)
    }
}

/// 8-bit channel level of a stored sample.
#[inline]
pub fn level(v: f32) -> usize {
    v.round().clamp(0.0, 255.0) as usize
}

/// Per-channel 256-bin histograms of 8-bit levels.
pub type Histograms = [[u64; 256]; 3];

/// Histograms of A and B over pixel pairs that are valid and whose RGB L1
/// level difference is below `gamma`.
pub fn paired_histograms(
    a: &VideoClip,
    b_warped: &VideoClip,
    masks: &[ValidityMask],
    gamma: f64,
) -> Result<(Histograms, Histograms)> {
    if a.len() != b_warped.len() || a.len() != masks.len() || a.dims() != b_warped.dims() {
        return Err(Error::Structural(format!(
            "color matching needs matching clips: {} frames {:?}, {} frames {:?}, {} masks",
            a.len(),
            a.dims(),
            b_warped.len(),
            b_warped.dims(),
            masks.len()
        )));
    }
    let all = gamma >= GAMMA_ALL;
    let empty = || ([[0u64; 256]; 3], [[0u64; 256]; 3]);
    let hists = a
        .frames()
        .par_iter()
        .zip(b_warped.frames())
        .zip(masks)
        .map(|((fa, fb), m)| {
            let (mut ha, mut hb) = empty();
            for ((p, q), &valid) in fa.data().chunks_exact(3).zip(fb.data().chunks_exact(3)).zip(m.bits()) {
                if !valid {
                    continue;
                }
                let lp = [level(p[0]), level(p[1]), level(p[2])];
                let lq = [level(q[0]), level(q[1]), level(q[2])];
                let d: usize = (0..3).map(|c| lp[c].abs_diff(lq[c])).sum();
                if all || (d as f64) < gamma {
                    for c in 0..3 {
                        ha[c][lp[c]] += 1;
                        hb[c][lq[c]] += 1;
                    }
                }
            }
            (ha, hb)
        })
        .reduce(empty, |mut x, y| {
            for c in 0..3 {
                for i in 0..256 {
                    x.0[c][i] += y.0[c][i];
                    x.1[c][i] += y.1[c][i];
                }
            }
            x
        });
    Ok(hists)
}

/// Histogram matching of one channel: each source level maps to the
/// smallest reference level whose cumulative share reaches the source
/// level's cumulative share. Levels absent from the source are interpolated
/// between their occupied neighbours, and continue with unit slope past the
/// ends, so fractional samples can be mapped by interpolation.
pub fn match_histogram(source: &[u64; 256], reference: &[u64; 256]) -> [u8; 256] {
    let (ns, nr): (u64, u64) = (source.iter().sum(), reference.iter().sum());
    let mut out = [0u8; 256];
    if ns == 0 || nr == 0 {
        for (i, v) in out.iter_mut().enumerate() {
            *v = i as u8;
        }
        return out;
    }
    let mut cref = [0u64; 256];
    let mut acc = 0;
    for (c, &h) in cref.iter_mut().zip(reference) {
        acc += h;
        *c = acc;
    }
    let (mut cs, mut j) = (0u64, 0usize);
    for (i, &h) in source.iter().enumerate() {
        cs += h;
        // Cross-multiplied to compare cs / ns with cref[j] / nr exactly.
        while j < 255 && u128::from(cref[j]) * u128::from(ns) < u128::from(cs) * u128::from(nr) {
            j += 1;
        }
        out[i] = j as u8;
    }
    fill_unused_levels(&mut out, source);
    out
}

fn fill_unused_levels(table: &mut [u8; 256], used: &[u64; 256]) {
    let occupied: Vec<usize> = (0..256).filter(|&i| used[i] > 0).collect();
    let (Some(&first), Some(&last)) = (occupied.first(), occupied.last()) else {
        return;
    };
    for i in 0..first {
        table[i] = (i as i32 + i32::from(table[first]) - first as i32).max(0) as u8;
    }
    for i in last + 1..256 {
        table[i] = (i as i32 + i32::from(table[last]) - last as i32).min(255) as u8;
    }
    for pair in occupied.windows(2) {
        let (lo, hi) = (pair[0], pair[1]);
        let (vlo, vhi) = (f64::from(table[lo]), f64::from(table[hi]));
        for i in lo + 1..hi {
            let s = (i - lo) as f64 / (hi - lo) as f64;
            table[i] = (vlo + (vhi - vlo) * s).round() as u8;
        }
    }
}

pub fn build_color_lut(
    a: &VideoClip,
    b_warped: &VideoClip,
    masks: &[ValidityMask],
    params: &ColorParams,
) -> Result<ColorLUT> {
    params.validate()?;
    let (ha, hb) = paired_histograms(a, b_warped, masks, params.gamma)?;
    if hb[0].iter().sum::<u64>() == 0 {
        return Err(Error::Appearance(format!(
            "no overlapping pixel pair is closer than gamma = {}; raise gamma (at most {GAMMA_ALL}) or check the alignment",
            params.gamma
        )));
    }
    let tables = [0, 1, 2].map(|c| match_histogram(&hb[c], &ha[c]));
    ColorLUT::new(tables, params.fade)
}

/// Weight of the correction on frame `t`: full through `overlap_end`, then
/// falling linearly to zero over the fade window.
pub fn fade_weight(t: usize, overlap_end: Option<usize>, fade: usize) -> f32 {
    match overlap_end {
        Some(end) if t > end => {
            if fade == 0 {
                0.0
            } else {
                (1.0 - (t - end) as f32 / fade as f32).max(0.0)
            }
        }
        _ => 1.0,
    }
}

pub fn apply_color_lut_frame(frame: &Frame, lut: &ColorLUT, alpha: f32) -> Frame {
    if alpha <= 0.0 {
        return frame.clone();
    }
    let (w, h) = frame.dims();
    let mut data = frame.data().to_vec();
    data.par_chunks_mut(w * 3).for_each(|row| {
        for px in row.chunks_exact_mut(3) {
            for (c, v) in px.iter_mut().enumerate() {
                let m = lut.map(c, *v);
                *v = if alpha >= 1.0 { m } else { alpha * m + (1.0 - alpha) * *v };
            }
        }
    });
    Frame::new(w, h, data).expect("dimensions unchanged")
}

/// Applies the LUT to every frame of `b`, fading it out after `overlap_end`.
pub fn apply_color_lut(b: &VideoClip, lut: &ColorLUT, overlap_end: Option<usize>) -> Result<VideoClip> {
    if let Some(end) = overlap_end {
        if end >= b.len() {
            return Err(Error::Config(format!(
                "overlap end {end} is past the clip's last frame {}",
                b.len().saturating_sub(1)
            )));
        }
    }
    if lut.is_identity() {
        return Ok(b.clone());
    }
    let frames = b
        .frames()
        .par_iter()
        .enumerate()
        .map(|(t, f)| apply_color_lut_frame(f, lut, fade_weight(t, overlap_end, lut.fade)))
        .collect();
    VideoClip::new(frames)
}
