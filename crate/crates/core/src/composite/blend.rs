use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::seamcut::{Label, LabelVolume};
use crate::video::{Frame, ValidityMask, VideoClip};

use super::CropRect;

/// Per-pixel L1 distance to the nearest pixel of the other label, for one
/// frame. Pixels with no opposite label anywhere hold [`DistanceField::FAR`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DistanceField {
    width: usize,
    height: usize,
    dist: Vec<u32>,
}

impl DistanceField {
    pub const FAR: u32 = u32::MAX;

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> u32 {
        self.dist[y * self.width + x]
    }

    pub fn data(&self) -> &[u32] {
        &self.dist
    }

    fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }
}

/// Exact L1 distance transform to the label boundary: the distance to the
/// nearest pixel of each label by two chamfer sweeps, read at the opposite
/// label.
pub fn seam_distance(labels: &[Label], width: usize, height: usize) -> DistanceField {
    assert_eq!(labels.len(), width * height, "label frame size");
    let to_a = chamfer(labels, Label::A, width, height);
    let to_b = chamfer(labels, Label::B, width, height);
    let dist = labels
        .iter()
        .zip(to_a.iter().zip(&to_b))
        .map(|(&l, (&da, &db))| if l == Label::A { db } else { da })
        .collect();
    DistanceField { width, height, dist }
}

/// L1 distance from every pixel to the nearest pixel labeled `target`.
fn chamfer(labels: &[Label], target: Label, width: usize, height: usize) -> Vec<u32> {
    let mut d: Vec<u32> = labels
        .iter()
        .map(|&l| if l == target { 0 } else { DistanceField::FAR })
        .collect();
    let step = |v: u32| v.saturating_add(1);
    for y in 0..height {
        for x in 0..width {
            let i = y * width + x;
            if x > 0 {
                d[i] = d[i].min(step(d[i - 1]));
            }
            if y > 0 {
                d[i] = d[i].min(step(d[i - width]));
            }
        }
    }
    for y in (0..height).rev() {
        for x in (0..width).rev() {
            let i = y * width + x;
            if x + 1 < width {
                d[i] = d[i].min(step(d[i + 1]));
            }
            if y + 1 < height {
                d[i] = d[i].min(step(d[i + width]));
            }
        }
    }
    d
}

/// Weight of a pixel's own source at L1 distance `d` from the other label:
/// half at the seam, rising linearly to one at `width` pixels.
pub fn own_weight(d: u32, width: u32) -> f32 {
    if width == 0 || d == DistanceField::FAR {
        return 1.0;
    }
    (0.5 + (d as f32 - 0.5) / (2.0 * width as f32)).min(1.0)
}

/// Blends `a` and `b` across the seam of one label frame. Where only one
/// source is valid that source is used whatever the label.
pub fn alpha_blend(
    a: &Frame,
    b: &Frame,
    b_valid: &ValidityMask,
    labels: &[Label],
    dist: &DistanceField,
    width: u32,
) -> Result<Frame> {
    let (w, h) = a.dims();
    if b.dims() != (w, h) || b_valid.dims() != (w, h) || labels.len() != w * h || dist.dims() != (w, h) {
        return Err(Error::Structural(format!(
            "blend inputs differ in size: A {:?}, B {:?}, mask {:?}, {} labels",
            a.dims(),
            b.dims(),
            b_valid.dims(),
            labels.len()
        )));
    }
    let mut out = vec![0.0f32; w * h * 3];
    out.par_chunks_mut(w * 3).enumerate().for_each(|(y, row)| {
        for x in 0..w {
            let i = y * w + x;
            let pa = &a.data()[i * 3..i * 3 + 3];
            let pb = &b.data()[i * 3..i * 3 + 3];
            let o = &mut row[x * 3..x * 3 + 3];
            if !b_valid.bits()[i] {
                o.copy_from_slice(pa);
                continue;
            }
            let (own, other) = match labels[i] {
                Label::A => (pa, pb),
                Label::B => (pb, pa),
            };
            let alpha = own_weight(dist.dist[i], width);
            if alpha >= 1.0 {
                o.copy_from_slice(own);
            } else {
                for c in 0..3 {
                    o[c] = alpha * own[c] + (1.0 - alpha) * other[c];
                }
            }
        }
    });
    Frame::new(w, h, out)
}

/// Validity of the composite: a pixel is missing when the source its label
/// selects has no data there. A is taken as valid everywhere.
pub fn missing_masks(labels: &LabelVolume, b_valid: &[ValidityMask]) -> Result<Vec<ValidityMask>> {
    let (w, h, f) = labels.dims();
    if b_valid.len() != f || b_valid.iter().any(|m| m.dims() != (w, h)) {
        return Err(Error::Structural(format!(
            "{} masks do not cover a {w}x{h}x{f} label volume",
            b_valid.len()
        )));
    }
    Ok((0..f)
        .map(|t| {
            let l = labels.frame(t);
            let m = &b_valid[t];
            ValidityMask::from_bits(
                w,
                h,
                l.iter().zip(m.bits()).map(|(&l, &v)| l == Label::A || v).collect(),
            )
            .expect("sizes checked")
        })
        .collect())
}

/// Tints pixels next to the seam red, for previews.
pub fn seam_overlay(frame: &Frame, dist: &DistanceField) -> Frame {
    let (w, h) = frame.dims();
    let mut data = frame.data().to_vec();
    for (px, &d) in data.chunks_exact_mut(3).zip(&dist.dist) {
        if d == 1 {
            px[0] = 0.5 * px[0] + 0.5 * 255.0;
            px[1] *= 0.5;
            px[2] *= 0.5;
        }
    }
    Frame::new(w, h, data).expect("dimensions unchanged")
}

/// Blends every frame across its seam, then crops.
pub fn assemble_output(
    a: &VideoClip,
    b: &VideoClip,
    b_valid: &[ValidityMask],
    labels: &LabelVolume,
    blend_width: u32,
    crop: &CropRect,
) -> Result<VideoClip> {
    let (w, h) = a.dims();
    if b.dims() != (w, h) || a.len() != b.len() || labels.dims() != (w, h, a.len()) || b_valid.len() != a.len() {
        return Err(Error::Structural(format!(
            "assembly inputs disagree: A {:?}x{}, B {:?}x{}, labels {:?}, {} masks",
            a.dims(),
            a.len(),
            b.dims(),
            b.len(),
            labels.dims(),
            b_valid.len()
        )));
    }
    crop.validate(w, h)?;
    let frames = (0..a.len())
        .into_par_iter()
        .map(|t| {
            let l = labels.frame(t);
            let dist = seam_distance(l, w, h);
            let f = alpha_blend(a.frame(t), b.frame(t), &b_valid[t], l, &dist, blend_width)?;
            Ok(crop.apply(&f))
        })
        .collect::<Result<Vec<_>>>()?;
    VideoClip::new(frames)
}
