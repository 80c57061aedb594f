use std::collections::HashMap;

use crate::align::{Displacement, Psi};
use crate::error::{Error, Result};
use crate::video::{downsample2, downsample_mask, Frame, ValidityMask};

/// Iteration cap for a single compass descent.
pub(crate) const MAX_STEPS: usize = 64;

/// Half-open pixel rectangle `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub x0: i64,
    pub y0: i64,
    pub x1: i64,
    pub y1: i64,
}

impl Rect {
    pub fn new(x0: i64, y0: i64, x1: i64, y1: i64) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self::new(0, 0, width as i64, height as i64)
    }

    pub fn clipped(&self, width: usize, height: usize) -> Rect {
        Rect {
            x0: self.x0.max(0),
            y0: self.y0.max(0),
            x1: self.x1.min(width as i64),
            y1: self.y1.min(height as i64),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.x1 <= self.x0 || self.y1 <= self.y0
    }

    pub fn expanded(&self, dx: i64, dy: i64) -> Rect {
        Rect::new(self.x0 - dx, self.y0 - dy, self.x1 + dx, self.y1 + dy)
    }
}

/// An image with an optional validity mask; invalid pixels never count.
#[derive(Clone, Copy)]
pub(crate) struct View<'a> {
    pub frame: &'a Frame,
    pub mask: Option<&'a ValidityMask>,
}

impl<'a> View<'a> {
    pub fn new(frame: &'a Frame, mask: Option<&'a ValidityMask>) -> Self {
        Self { frame, mask }
    }

    #[inline]
    fn valid(&self, x: usize, y: usize) -> bool {
        self.mask.is_none_or(|m| m.get(x, y))
    }

    /// Number of valid pixels of `region` inside the image.
    pub fn support(&self, region: Rect) -> usize {
        let r = region.clipped(self.frame.width(), self.frame.height());
        if r.is_empty() {
            return 0;
        }
        match self.mask {
            None => ((r.x1 - r.x0) * (r.y1 - r.y0)) as usize,
            Some(m) => {
                let mut n = 0;
                for y in r.y0..r.y1 {
                    for x in r.x0..r.x1 {
                        n += m.get(x as usize, y as usize) as usize;
                    }
                }
                n
            }
        }
    }

    /// True when every valid pixel in `region` has the same color.
    pub fn is_flat(&self, region: Rect) -> bool {
        let r = region.clipped(self.frame.width(), self.frame.height());
        let mut lo = [f32::INFINITY; 3];
        let mut hi = [f32::NEG_INFINITY; 3];
        for y in r.y0.max(0)..r.y1 {
            for x in r.x0.max(0)..r.x1 {
                let (x, y) = (x as usize, y as usize);
                if !self.valid(x, y) {
                    continue;
                }
                let p = self.frame.pixel(x, y);
                for c in 0..3 {
                    lo[c] = lo[c].min(p[c]);
                    hi[c] = hi[c].max(p[c]);
                }
            }
        }
        (0..3).all(|c| !(hi[c] - lo[c] > 1e-3))
    }
}

/// Mean Ψ between `A(x, y)` and `B(x + dx, y + dy)` over the pixels of
/// `region` that are valid in both images, or `None` when fewer than
/// `min_count` pixels are compared.
pub(crate) fn block_cost(
    a: View<'_>,
    b: View<'_>,
    region: Rect,
    dx: i64,
    dy: i64,
    psi: Psi,
    min_count: usize,
) -> Option<f64> {
    let (wa, ha) = a.frame.dims();
    let (wb, hb) = b.frame.dims();
    let x0 = region.x0.max(0).max(-dx);
    let y0 = region.y0.max(0).max(-dy);
    let x1 = region.x1.min(wa as i64).min(wb as i64 - dx);
    let y1 = region.y1.min(ha as i64).min(hb as i64 - dy);
    if x1 <= x0 || y1 <= y0 {
        return None;
    }
    let mut sum = 0.0f64;
    let mut count = 0usize;
    let ad = a.frame.data();
    let bd = b.frame.data();
    for y in y0..y1 {
        let ya = y as usize;
        let yb = (y + dy) as usize;
        for x in x0..x1 {
            let xa = x as usize;
            let xb = (x + dx) as usize;
            if !(a.valid(xa, ya) && b.valid(xb, yb)) {
                continue;
            }
            let ia = (ya * wa + xa) * 3;
            let ib = (yb * wb + xb) * 3;
            sum += psi.eval(
                [ad[ia], ad[ia + 1], ad[ia + 2]],
                [bd[ib], bd[ib + 1], bd[ib + 2]],
            );
            count += 1;
        }
    }
    (count >= min_count.max(1)).then(|| sum / count as f64)
}

/// The nine candidate offsets in tie-break order: center first, then by
/// L1 length, then lexicographically by `(dx, dy)`.
const CANDIDATES: [(i64, i64); 9] = [
    (0, 0),
    (-1, 0),
    (0, -1),
    (0, 1),
    (1, 0),
    (-1, -1),
    (-1, 1),
    (1, -1),
    (1, 1),
];

/// Memoizing cost evaluator for one block.
pub(crate) struct CostCache<'a> {
    a: View<'a>,
    b: View<'a>,
    region: Rect,
    psi: Psi,
    min_count: usize,
    memo: HashMap<(i64, i64), Option<f64>>,
}

impl<'a> CostCache<'a> {
    pub fn new(a: View<'a>, b: View<'a>, region: Rect, psi: Psi, min_count: usize) -> Self {
        Self {
            a,
            b,
            region,
            psi,
            min_count,
            memo: HashMap::new(),
        }
    }

    pub fn cost(&mut self, dx: i64, dy: i64) -> Option<f64> {
        let (a, b, region, psi, min_count) = (self.a, self.b, self.region, self.psi, self.min_count);
        *self
            .memo
            .entry((dx, dy))
            .or_insert_with(|| block_cost(a, b, region, dx, dy, psi, min_count))
    }

    /// One compass step from `cur`; `None` when no candidate overlaps.
    pub fn step(&mut self, cur: (i64, i64)) -> Option<(i64, i64)> {
        let mut best: Option<((i64, i64), f64)> = None;
        for (ddx, ddy) in CANDIDATES {
            let cand = (cur.0 + ddx, cur.1 + ddy);
            if let Some(c) = self.cost(cand.0, cand.1) {
                if best.is_none_or(|(_, b)| c < b) {
                    best = Some((cand, c));
                }
            }
        }
        best.map(|(d, _)| d)
    }

    /// Runs compass steps until the center wins or the cap is hit.
    pub fn converge(&mut self, start: (i64, i64)) -> Option<(i64, i64)> {
        let mut cur = start;
        for _ in 0..MAX_STEPS {
            let next = self.step(cur)?;
            if next == cur {
                break;
            }
            cur = next;
        }
        Some(cur)
    }

    /// True when all nine candidates around `d` cost the same.
    pub fn is_flat_at(&mut self, d: (i64, i64)) -> bool {
        let costs: Vec<Option<f64>> = CANDIDATES
            .iter()
            .map(|(x, y)| self.cost(d.0 + x, d.1 + y))
            .collect();
        let first = costs[0];
        costs.iter().all(|c| match (c, first) {
            (Some(c), Some(f)) => (c - f).abs() <= 1e-12 * f.abs().max(1.0),
            _ => false,
        })
    }

    /// True when all nine candidates around `d` compare enough pixels.
    pub fn has_neighborhood(&mut self, d: (i64, i64)) -> bool {
        CANDIDATES
            .iter()
            .all(|(x, y)| self.cost(d.0 + x, d.1 + y).is_some())
    }

    /// Parabolic subpixel refinement around an integer minimum. An exact
    /// zero-cost match is left unrefined.
    pub fn refine(&mut self, d: (i64, i64)) -> Displacement {
        let center = self.cost(d.0, d.1);
        if center == Some(0.0) {
            return Displacement::new(d.0 as f64, d.1 as f64);
        }
        let offset = |m: Option<f64>, p: Option<f64>| match (m, center, p) {
            (Some(m), Some(c), Some(p)) => subpixel_refine(m, c, p),
            _ => 0.0,
        };
        let ox = offset(self.cost(d.0 - 1, d.1), self.cost(d.0 + 1, d.1));
        let oy = offset(self.cost(d.0, d.1 - 1), self.cost(d.0, d.1 + 1));
        Displacement::new(d.0 as f64 + ox, d.1 as f64 + oy)
    }
}

fn round_disp(d: Displacement) -> (i64, i64) {
    (d.dx.round() as i64, d.dy.round() as i64)
}

/// Tests the nine integer neighbours of `cur` and returns the one with the
/// lowest mean L1 cost over `region`.
pub fn compass_step(a: &Frame, b: &Frame, cur: Displacement, region: Rect) -> Result<Displacement> {
    let mut cache = CostCache::new(View::new(a, None), View::new(b, None), region, Psi::L1, 1);
    let d = cache
        .step(round_disp(cur))
        .ok_or_else(|| Error::Match(format!("region {region:?} has no overlap under any shift")))?;
    Ok(Displacement::new(d.0 as f64, d.1 as f64))
}

/// Vertex offset of the parabola through three equally spaced costs,
/// clamped to half a pixel. Degenerate parabolas give zero.
pub fn subpixel_refine(cost_minus: f64, cost_center: f64, cost_plus: f64) -> f64 {
    let curvature = cost_minus + cost_plus - 2.0 * cost_center;
    if !(curvature > 1e-12) {
        return 0.0;
    }
    ((cost_minus - cost_plus) / (2.0 * curvature)).clamp(-0.5, 0.5)
}

/// Single-block coarse-to-fine translation search over a `levels`-deep
/// pyramid, with subpixel refinement at full resolution.
pub fn compass_search(a: &Frame, b: &Frame, levels: u32) -> Result<Displacement> {
    if levels < 1 {
        return Err(Error::Config("compass search needs at least one level".into()));
    }
    if a.dims() != b.dims() {
        return Err(Error::Structural(format!(
            "compass search inputs differ in size: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    compass_search_masked(a, None, b, None, levels, Psi::L1)
}

pub(crate) fn compass_search_masked(
    a: &Frame,
    a_mask: Option<&ValidityMask>,
    b: &Frame,
    b_mask: Option<&ValidityMask>,
    levels: u32,
    psi: Psi,
) -> Result<Displacement> {
    let pa = pyramid(a, a_mask, levels as usize);
    let pb = pyramid(b, b_mask, levels as usize);
    let mut d = (0i64, 0i64);
    for l in (0..levels as usize).rev() {
        let (fa, ma) = &pa[l];
        let (fb, mb) = &pb[l];
        let region = Rect::full(fa.width(), fa.height());
        let va = View::new(fa, ma.as_ref());
        let mut cache = CostCache::new(va, View::new(fb, mb.as_ref()), region, psi, 1);
        d = cache
            .converge(d)
            .ok_or_else(|| Error::Match(format!("no overlap at pyramid level {l}")))?;
        if l == 0 {
            return Ok(cache.refine(d));
        }
        d = (d.0 * 2, d.1 * 2);
    }
    unreachable!("levels >= 1")
}

/// `levels` images, index 0 at full resolution.
pub(crate) fn pyramid(
    f: &Frame,
    mask: Option<&ValidityMask>,
    levels: usize,
) -> Vec<(Frame, Option<ValidityMask>)> {
    let mut out = Vec::with_capacity(levels);
    out.push((f.clone(), mask.cloned()));
    for _ in 1..levels {
        let (pf, pm) = out.last().expect("non-empty");
        let next = (downsample2(pf), pm.as_ref().map(downsample_mask));
        out.push(next);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{shifted_texture, Texture};

    #[test]
    fn parabola_vertex_cases() {
        assert_eq!(subpixel_refine(1.0, 0.0, 1.0), 0.0);
        assert_eq!(subpixel_refine(4.0, 1.0, 2.0), 0.25);
        assert_eq!(subpixel_refine(1.0, 1.0, 1.0), 0.0);
        assert_eq!(subpixel_refine(100.0, 0.0, 0.0), 0.5);
    }

    #[test]
    fn parabola_vertex_matches_dense_sampling() {
        // Oracle: sample the interpolating quadratic densely and take argmin.
        for &(m, c, p) in &[(4.0, 1.0, 2.0), (3.0, 0.5, 0.9), (7.0, 2.0, 6.5)] {
            let a = (m + p - 2.0 * c) / 2.0;
            let b = (p - m) / 2.0;
            let q = |x: f64| a * x * x + b * x + c;
            let mut best = (0.0, f64::INFINITY);
            for i in -5000..=5000 {
                let x = i as f64 / 10000.0;
                if q(x) < best.1 {
                    best = (x, q(x));
                }
            }
            assert!((subpixel_refine(m, c, p) - best.0).abs() < 1e-3);
        }
    }

    #[test]
    fn step_on_identical_images_stays() {
        let f = Texture::new(3).render(32, 24, 0.0, 0.0);
        let d = compass_step(&f, &f, Displacement::ZERO, Rect::full(32, 24)).unwrap();
        assert_eq!(d, Displacement::ZERO);
    }

    #[test]
    fn step_finds_one_pixel_shift() {
        let tex = Texture::new(5);
        let a = tex.render(40, 30, 0.0, 0.0);
        let b = shifted_texture(&tex, 40, 30, 1.0, 0.0);
        let region = Rect::new(4, 4, 36, 26);
        // Exhaustive oracle over the nine candidates.
        let mut best = ((0, 0), f64::INFINITY);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let c = block_cost(View::new(&a, None), View::new(&b, None), region, dx, dy, Psi::L1, 1)
                    .unwrap();
                if c < best.1 {
                    best = ((dx, dy), c);
                }
            }
        }
        assert_eq!(best.0, (1, 0));
        let d = compass_step(&a, &b, Displacement::ZERO, region).unwrap();
        assert_eq!(d, Displacement::new(1.0, 0.0));
    }

    #[test]
    fn step_on_constant_images_prefers_center() {
        let f = Frame::filled(16, 16, [80.0, 90.0, 100.0]);
        let d = compass_step(&f, &f, Displacement::new(2.0, -1.0), Rect::full(16, 16)).unwrap();
        assert_eq!(d, Displacement::new(2.0, -1.0));
    }

    #[test]
    fn step_without_overlap_is_an_error() {
        let f = Frame::filled(8, 8, [0.0; 3]);
        let err = compass_step(&f, &f, Displacement::new(50.0, 0.0), Rect::full(8, 8));
        assert!(matches!(err, Err(Error::Match(_))));
    }

    #[test]
    fn search_identical_is_zero() {
        let f = Texture::new(9).render(64, 48, 0.0, 0.0);
        let d = compass_search(&f, &f, 4).unwrap();
        assert_eq!(d, Displacement::ZERO);
    }

    #[test]
    fn search_recovers_integer_shift() {
        let tex = Texture::new(11);
        let a = tex.render(160, 120, 0.0, 0.0);
        let b = shifted_texture(&tex, 160, 120, 12.0, -7.0);
        let d = compass_search(&a, &b, 5).unwrap();
        assert!((d.dx - 12.0).abs() <= 0.5 && (d.dy + 7.0).abs() <= 0.5, "{d:?}");
    }

    #[test]
    fn search_recovers_subpixel_shift() {
        let tex = Texture::new(13);
        let a = tex.render(128, 96, 0.0, 0.0);
        let b = shifted_texture(&tex, 128, 96, 3.5, 0.0);
        let d = compass_search(&a, &b, 4).unwrap();
        assert!((d.dx - 3.5).abs() <= 0.25, "{d:?}");
        assert!(d.dy.abs() <= 0.25, "{d:?}");
    }

    #[test]
    fn steps_never_increase_cost() {
        let tex = Texture::new(21);
        let a = tex.render(48, 48, 0.0, 0.0);
        let b = shifted_texture(&tex, 48, 48, 4.0, 3.0);
        let region = Rect::new(8, 8, 40, 40);
        let mut cache = CostCache::new(View::new(&a, None), View::new(&b, None), region, Psi::L1, 1);
        let mut cur = (0, 0);
        let mut cost = cache.cost(0, 0).unwrap();
        for _ in 0..MAX_STEPS {
            let next = cache.step(cur).unwrap();
            let c = cache.cost(next.0, next.1).unwrap();
            assert!(c <= cost);
            if next == cur {
                break;
            }
            assert!(c < cost);
            cur = next;
            cost = c;
        }
    }
}
