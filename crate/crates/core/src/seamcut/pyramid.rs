use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::graph::{build_graph, min_cut, seam_energy};
use super::{BandMask, Constraints, Label, LabelVolume, MotionLinks, SeamParams};
use crate::error::{Error, Result};
use crate::video::{
    difference_volume, downsample2, downsample2_temporal, downsample_mask,
    downsample_masks_temporal, DifferenceVolume, ValidityMask, VideoClip,
};

/// Smallest coarse volume side the pyramid may reach.
const MIN_COARSE_SIDE: usize = 8;

/// Graph size and timing of one pyramid level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelStats {
    /// 0 is full resolution.
    pub level: u32,
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub nodes: usize,
    pub edges: usize,
    pub graph_bytes: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CutStats {
    /// Coarsest level first.
    pub levels: Vec<LevelStats>,
    /// Seam energy of the final labeling at full resolution.
    pub energy: f64,
    pub total_seconds: f64,
}

impl CutStats {
    pub fn peak_graph_bytes(&self) -> usize {
        self.levels.iter().map(|l| l.graph_bytes).max().unwrap_or(0)
    }

    pub fn total_nodes(&self) -> usize {
        self.levels.iter().map(|l| l.nodes).sum()
    }
}

/// Pyramid depth actually used: reduced until the coarsest level is at
/// least 8x8.
pub fn effective_seam_level(level: u32, width: usize, height: usize) -> u32 {
    let mut l = 0;
    let (mut w, mut h) = (width, height);
    while l < level && w.div_ceil(2) >= MIN_COARSE_SIDE && h.div_ceil(2) >= MIN_COARSE_SIDE {
        w = w.div_ceil(2);
        h = h.div_ceil(2);
        l += 1;
    }
    if l != level {
        log::warn!("seam level {level} too deep for {width}x{height}; using {l}");
    }
    l
}

/// Constraints for the next coarser level. A coarse pixel is constrained if
/// any of its fine pixels is; mixed blocks take the majority label and exact
/// ties stay free.
pub fn downsample_constraints(c: &Constraints) -> Constraints {
    let (w, h, f) = c.dims();
    let (cw, ch, cf) = (w.div_ceil(2), h.div_ceil(2), f.div_ceil(2));
    Constraints::from_fn(cw, ch, cf, |cx, cy, ct| {
        let (mut a, mut b) = (0u32, 0u32);
        for t in ct * 2..(ct * 2 + 2).min(f) {
            for y in cy * 2..(cy * 2 + 2).min(h) {
                for x in cx * 2..(cx * 2 + 2).min(w) {
                    match c.get(x, y, t) {
                        Some(Label::A) => a += 1,
                        Some(Label::B) => b += 1,
                        None => {}
                    }
                }
            }
        }
        match a.cmp(&b) {
            std::cmp::Ordering::Greater => Some(Label::A),
            std::cmp::Ordering::Less => Some(Label::B),
            std::cmp::Ordering::Equal => None,
        }
    })
}

/// Nearest-neighbor 2x expansion in x, y and t.
pub fn upsample_labels(labels: &LabelVolume) -> LabelVolume {
    let (w, h, f) = labels.dims();
    upsample_labels_to(labels, 2 * w, 2 * h, 2 * f)
}

/// Nearest-neighbor expansion to the given fine size: fine pixel `i` takes
/// coarse pixel `i / 2` on every axis.
pub fn upsample_labels_to(labels: &LabelVolume, width: usize, height: usize, frames: usize) -> LabelVolume {
    LabelVolume::from_fn(width, height, frames, |x, y, t| labels.get(x / 2, y / 2, t / 2))
}

/// Marks every pixel within Chebyshev distance `r` of a set pixel, per
/// frame.
fn dilate_frame(frame: &mut [bool], w: usize, h: usize, r: usize) {
    let mut rows = vec![false; w * h];
    let mut prefix = vec![0u32; w + 1];
    for y in 0..h {
        let row = &frame[y * w..(y + 1) * w];
        for x in 0..w {
            prefix[x + 1] = prefix[x] + row[x] as u32;
        }
        let out = &mut rows[y * w..(y + 1) * w];
        for (x, o) in out.iter_mut().enumerate() {
            *o = prefix[(x + r + 1).min(w)] > prefix[x.saturating_sub(r)];
        }
    }
    // Vertical pass as a sliding window of per-column counts, row by row.
    let mut count = vec![0u32; w];
    for y in 0..r.min(h) {
        for (c, &v) in count.iter_mut().zip(&rows[y * w..(y + 1) * w]) {
            *c += v as u32;
        }
    }
    for y in 0..h {
        if y + r < h {
            let add = &rows[(y + r) * w..(y + r + 1) * w];
            for (c, &v) in count.iter_mut().zip(add) {
                *c += v as u32;
            }
        }
        if y > r {
            let sub = &rows[(y - r - 1) * w..(y - r) * w];
            for (c, &v) in count.iter_mut().zip(sub) {
                *c -= v as u32;
            }
        }
        for (o, &c) in frame[y * w..(y + 1) * w].iter_mut().zip(&count) {
            *o = c > 0;
        }
    }
}

/// The optimization band around the seam of `labels`.
///
/// Seam pixels are those whose left or upper neighbor, or whose temporal
/// predecessor along `motion`, has the other label. They are dilated by
/// `2^grow` pixels in each frame, then by one step along the motion links
/// in both temporal directions.
pub fn grow_band(labels: &LabelVolume, grow: u32, motion: &MotionLinks) -> BandMask {
    const OUT: u32 = u32::MAX;
    let (w, h, f) = labels.dims();
    let r = 1usize << grow.min(16);
    let n = w * h;
    let targets: Vec<Vec<u32>> = (0..f.saturating_sub(1))
        .into_par_iter()
        .map(|t| motion.frame_targets(t, w, h))
        .collect();

    let mut seam = BandMask::filled(w, h, f, false);
    // Frame `s` collects its own spatial seam pixels and the targets of
    // label-changing links from frame `s - 1`.
    seam.data_mut()
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(s, out)| {
            let cur = labels.frame(s);
            for y in 0..h {
                let row = &cur[y * w..(y + 1) * w];
                let o = &mut out[y * w..(y + 1) * w];
                for x in 1..w {
                    o[x] = row[x - 1] != row[x];
                }
                if y > 0 {
                    let above = &cur[(y - 1) * w..y * w];
                    for x in 0..w {
                        o[x] |= above[x] != row[x];
                    }
                }
            }
            if s > 0 {
                let prev = labels.frame(s - 1);
                for (p, &q) in targets[s - 1].iter().enumerate() {
                    if q != OUT && cur[q as usize] != prev[p] {
                        out[q as usize] = true;
                    }
                }
            }
            dilate_frame(out, w, h, r);
        });

    let mut band = seam.clone();
    band.data_mut()
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(s, out)| {
            if s > 0 {
                let prev = seam.frame(s - 1);
                for (p, &q) in targets[s - 1].iter().enumerate() {
                    if q != OUT && prev[p] {
                        out[q as usize] = true;
                    }
                }
            }
            if s + 1 < f {
                let next = seam.frame(s + 1);
                for (p, &q) in targets[s].iter().enumerate() {
                    if q != OUT && next[q as usize] {
                        out[p] = true;
                    }
                }
            }
        });
    band
}

struct Level {
    d: DifferenceVolume,
    motion: MotionLinks,
    constraints: Constraints,
}

fn build_levels(
    a: &VideoClip,
    b_warped: &VideoClip,
    masks: &[ValidityMask],
    constraints: &Constraints,
    motion: &MotionLinks,
    depth: u32,
) -> Result<Vec<Level>> {
    let mut levels = vec![Level {
        d: difference_volume(a, b_warped, masks)?,
        motion: motion.clone(),
        constraints: constraints.clone(),
    }];
    if depth == 0 {
        return Ok(levels);
    }
    let shrink = |clip: &VideoClip| -> Result<VideoClip> {
        // Temporal pairing first halves the spatial work; the two box
        // averages commute.
        let paired = downsample2_temporal(clip);
        VideoClip::new(paired.frames().par_iter().map(downsample2).collect())
    };
    let mut ca = shrink(a)?;
    let mut cb = shrink(b_warped)?;
    let mut cm = downsample_masks_temporal(&masks.iter().map(downsample_mask).collect::<Vec<_>>());
    for l in 1..=depth as usize {
        if l > 1 {
            ca = shrink(&ca)?;
            cb = shrink(&cb)?;
            cm = downsample_masks_temporal(&cm.iter().map(downsample_mask).collect::<Vec<_>>());
        }
        let prev = &levels[l - 1];
        let level = Level {
            d: difference_volume(&ca, &cb, &cm)?,
            motion: prev.motion.downsampled(prev.d.len()),
            constraints: downsample_constraints(&prev.constraints),
        };
        levels.push(level);
    }
    Ok(levels)
}

/// Coarse-to-fine seam search.
///
/// Downsamples both clips, their overlap masks, the constraints and the
/// motion `params.level` times, cuts the coarsest volume completely, then at
/// each finer level cuts only a band around the upsampled seam with
/// everything else held at the upsampled labels. Constrained pixels whose
/// upsampled label is wrong always join the band.
pub fn coarse_to_fine_cut(
    a: &VideoClip,
    b_warped: &VideoClip,
    masks: &[ValidityMask],
    constraints: &Constraints,
    params: &SeamParams,
    motion: &MotionLinks,
) -> Result<(LabelVolume, CutStats)> {
    params.validate()?;
    let started = Instant::now();
    let (w, h) = a.dims();
    let frames = a.len();
    if constraints.dims() != (w, h, frames) {
        return Err(Error::Structural(format!(
            "constraints are {:?}, clips are {:?}",
            constraints.dims(),
            (w, h, frames)
        )));
    }
    let (na, nb) = (constraints.count(Label::A), constraints.count(Label::B));
    if na == 0 || nb == 0 {
        let only = if nb > 0 { Label::B } else { Label::A };
        log::warn!("strokes do not mark both takes; every pixel gets label {only:?}");
        let labels = LabelVolume::filled(w, h, frames, only);
        let d = difference_volume(a, b_warped, masks)?;
        let stats = CutStats {
            levels: Vec::new(),
            energy: seam_energy(&d, &labels, motion, params.lambda),
            total_seconds: started.elapsed().as_secs_f64(),
        };
        return Ok((labels, stats));
    }

    let depth = effective_seam_level(params.level, w, h);
    let levels = build_levels(a, b_warped, masks, constraints, motion, depth)?;

    let mut stats = CutStats::default();
    let mut current: Option<LabelVolume> = None;
    for (l, lv) in levels.iter().enumerate().rev() {
        let t0 = Instant::now();
        let (lw, lh, lf) = (lv.d.width(), lv.d.height(), lv.d.len());
        let mut ls = LevelStats {
            level: l as u32,
            width: lw,
            height: lh,
            frames: lf,
            nodes: 0,
            edges: 0,
            graph_bytes: 0,
            seconds: 0.0,
        };
        let labels = match current.take() {
            None => {
                let net = build_graph(&lv.d, &lv.constraints, params, &lv.motion, None)?;
                ls.nodes = net.node_count();
                ls.edges = net.edge_count();
                ls.graph_bytes = net.memory_bytes();
                min_cut(net).labels
            }
            Some(coarse) => {
                let up = upsample_labels_to(&coarse, lw, lh, lf);
                let mut band = grow_band(&up, params.grow, &lv.motion);
                for ((inside, &c), &u) in band
                    .data_mut()
                    .iter_mut()
                    .zip(lv.constraints.data())
                    .zip(up.data())
                {
                    if c.is_some_and(|c| c != u) {
                        *inside = true;
                    }
                }
                if band.count_set() == 0 {
                    up
                } else {
                    let net = build_graph(&lv.d, &lv.constraints, params, &lv.motion, Some((&band, &up)))?;
                    ls.nodes = net.node_count();
                    ls.edges = net.edge_count();
                    ls.graph_bytes = net.memory_bytes();
                    min_cut(net).labels
                }
            }
        };
        ls.seconds = t0.elapsed().as_secs_f64();
        log::debug!(
            "seam level {l}: {lw}x{lh}x{lf}, {} nodes, {} edges, {:.3}s",
            ls.nodes,
            ls.edges,
            ls.seconds
        );
        stats.levels.push(ls);
        current = Some(labels);
    }
    let labels = current.expect("at least one level");
    stats.energy = seam_energy(&levels[0].d, &labels, motion, params.lambda);
    stats.total_seconds = started.elapsed().as_secs_f64();
    Ok((labels, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::homography::Homography;
    use crate::seamcut::{build_graph, min_cut, StrokeSet};
    use crate::synth::Texture;
    use crate::video::Frame;
    use proptest::prelude::*;

    fn split_labels(w: usize, h: usize, f: usize, at: usize) -> LabelVolume {
        LabelVolume::from_fn(w, h, f, |x, _, _| if x < at { Label::A } else { Label::B })
    }

    #[test]
    fn uniform_labels_give_empty_band() {
        let l = LabelVolume::filled(6, 6, 2, Label::A);
        assert_eq!(grow_band(&l, 1, &MotionLinks::identity(2)).count_set(), 0);
    }

    #[test]
    fn band_around_vertical_seam() {
        let l = split_labels(10, 10, 1, 5);
        let band = grow_band(&l, 1, &MotionLinks::identity(1));
        for y in 0..10 {
            for x in 0..10 {
                assert_eq!(band.get(x, y, 0), (3..=7).contains(&x), "({x}, {y})");
            }
        }
        let band = grow_band(&l, 0, &MotionLinks::identity(1));
        for x in 0..10 {
            assert_eq!(band.get(x, 0, 0), (4..=6).contains(&x));
        }
    }

    #[test]
    fn band_follows_motion_links() {
        // Seam only in frame 0; frame 1 picks up the linked pixels.
        let mut l = LabelVolume::filled(12, 4, 2, Label::A);
        for y in 0..4 {
            for x in 6..12 {
                l.set(x, y, 0, Label::B);
            }
        }
        let m = MotionLinks::new(vec![Homography::translation(3.0, 0.0)]).unwrap();
        let band = grow_band(&l, 0, &m);
        // Spatial seam at x = 6 in frame 0; the temporal label changes land
        // on x = 9..11 of frame 1. After dilation and one step along the
        // links each way, both frames see the other's seam.
        for x in 0..12 {
            assert_eq!(band.get(x, 0, 0), (5..=8).contains(&x), "t0 x{x}");
            assert_eq!(band.get(x, 0, 1), (8..=11).contains(&x), "t1 x{x}");
        }
    }

    #[test]
    fn upsample_examples() {
        let one = LabelVolume::filled(1, 1, 1, Label::A);
        let up = upsample_labels(&one);
        assert_eq!(up.dims(), (2, 2, 2));
        assert_eq!(up.count(Label::A), 8);

        let two = LabelVolume::from_vec(2, 1, 1, vec![Label::A, Label::B]).unwrap();
        let up = upsample_labels(&two);
        assert_eq!(up.dims(), (4, 2, 2));
        for t in 0..2 {
            for y in 0..2 {
                let row: Vec<_> = (0..4).map(|x| up.get(x, y, t)).collect();
                assert_eq!(row, [Label::A, Label::A, Label::B, Label::B]);
            }
        }

        let three = LabelVolume::from_vec(3, 1, 1, vec![Label::A, Label::A, Label::B]).unwrap();
        let up = upsample_labels_to(&three, 5, 1, 1);
        assert_eq!(up.get(4, 0, 0), Label::B);
        assert_eq!(up.get(3, 0, 0), Label::A);
    }

    #[test]
    fn coarse_constraints_use_majority() {
        let mut c = Constraints::filled(2, 2, 2, None);
        c.set(0, 0, 0, Some(Label::A));
        let d = downsample_constraints(&c);
        assert_eq!(d.dims(), (1, 1, 1));
        assert_eq!(d.get(0, 0, 0), Some(Label::A));
        c.set(1, 1, 1, Some(Label::B));
        assert_eq!(downsample_constraints(&c).get(0, 0, 0), None);
        c.set(1, 0, 1, Some(Label::B));
        assert_eq!(downsample_constraints(&c).get(0, 0, 0), Some(Label::B));
    }

    #[test]
    fn level_is_bounded_by_coarse_size() {
        assert_eq!(effective_seam_level(3, 1920, 1080), 3);
        assert_eq!(effective_seam_level(3, 32, 32), 2);
        assert_eq!(effective_seam_level(3, 8, 100), 0);
    }

    fn scene(w: usize, h: usize, f: usize, seed: u64) -> (VideoClip, VideoClip, Vec<ValidityMask>) {
        let ta = Texture::new(seed);
        let tb = Texture::new(seed + 1);
        let a = VideoClip::new((0..f).map(|t| ta.render(w, h, t as f64, 0.0)).collect()).unwrap();
        // B agrees with A in a vertical strip, elsewhere different content.
        let b = VideoClip::new(
            (0..f)
                .map(|t| {
                    Frame::from_fn(w, h, |x, y| {
                        if (w / 3..2 * w / 3).contains(&x) {
                            ta.sample(x as f64 + t as f64, y as f64)
                        } else {
                            tb.sample(x as f64, y as f64 + t as f64)
                        }
                    })
                })
                .collect(),
        )
        .unwrap();
        (a, b, vec![ValidityMask::new(w, h, true); f])
    }

    fn side_strokes(w: usize, h: usize, f: usize) -> Constraints {
        let mut s = StrokeSet::new();
        for t in 0..f {
            s.paint_rect(t, 0, 0, 2, h, Label::A);
            s.paint_rect(t, w - 2, 0, w, h, Label::B);
        }
        Constraints::from_strokes(&s, w, h, f).unwrap()
    }

    #[test]
    fn level_zero_equals_single_scale_cut() {
        let (w, h, f) = (24, 16, 3);
        let (a, b, m) = scene(w, h, f, 3);
        let c = side_strokes(w, h, f);
        let p = SeamParams { level: 0, ..SeamParams::default() };
        let motion = MotionLinks::identity(f);
        let (labels, stats) = coarse_to_fine_cut(&a, &b, &m, &c, &p, &motion).unwrap();
        let d = difference_volume(&a, &b, &m).unwrap();
        let direct = min_cut(build_graph(&d, &c, &p, &motion, None).unwrap());
        assert_eq!(labels, direct.labels);
        assert_eq!(stats.levels.len(), 1);
        assert!((stats.energy - direct.flow).abs() < 1e-6 * direct.flow.max(1.0));
    }

    #[test]
    fn one_sided_strokes_give_uniform_labels() {
        let (a, b, m) = scene(16, 16, 2, 4);
        let mut s = StrokeSet::new();
        s.push(0, 3, 3, Label::B);
        let c = Constraints::from_strokes(&s, 16, 16, 2).unwrap();
        let (labels, _) =
            coarse_to_fine_cut(&a, &b, &m, &c, &SeamParams::default(), &MotionLinks::identity(2)).unwrap();
        assert_eq!(labels.count(Label::B), 16 * 16 * 2);
    }

    #[test]
    fn fixed_pixels_outside_band_are_upsampled_labels() {
        let (w, h, f) = (40, 32, 4);
        let (a, b, m) = scene(w, h, f, 8);
        let c = side_strokes(w, h, f);
        let motion = MotionLinks::identity(f);
        let p = SeamParams { level: 1, grow: 0, ..SeamParams::default() };
        let (fine, _) = coarse_to_fine_cut(&a, &b, &m, &c, &p, &motion).unwrap();

        // Recompute the coarse labels and band independently.
        let p0 = SeamParams { level: 0, ..p };
        let small = |clip: &VideoClip| {
            downsample2_temporal(&VideoClip::new(clip.frames().iter().map(downsample2).collect()).unwrap())
        };
        let cm = downsample_masks_temporal(&m.iter().map(downsample_mask).collect::<Vec<_>>());
        let cc = downsample_constraints(&c);
        let (coarse, _) =
            coarse_to_fine_cut(&small(&a), &small(&b), &cm, &cc, &p0, &motion.downsampled(f)).unwrap();
        let up = upsample_labels_to(&coarse, w, h, f);
        let band = grow_band(&up, 0, &motion);
        for i in 0..band.data().len() {
            if !band.data()[i] && c.data()[i].is_none_or(|l| l == up.data()[i]) {
                assert_eq!(fine.data()[i], up.data()[i]);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn coarse_to_fine_is_bounded_by_single_scale(
            seed in 0u64..1000,
            level in 1u32..=2,
            grow in 0u32..=2,
        ) {
            let (w, h, f) = (16, 16, 4);
            let (a, b, m) = scene(w, h, f, seed);
            let c = side_strokes(w, h, f);
            let motion = MotionLinks::identity(f);
            let p = SeamParams { level, grow, lambda: 1.0 };
            let (labels, stats) = coarse_to_fine_cut(&a, &b, &m, &c, &p, &motion).unwrap();
            let d = difference_volume(&a, &b, &m).unwrap();
            let opt = min_cut(build_graph(&d, &c, &p, &motion, None).unwrap()).flow;
            prop_assert!(stats.energy >= opt - 1e-6 * opt.max(1.0));
            for (l, k) in labels.data().iter().zip(c.data()) {
                if let Some(k) = k {
                    prop_assert_eq!(l, k);
                }
            }
        }
    }
}
