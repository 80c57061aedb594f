use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::compass::{pyramid, CostCache, Rect, View};
use super::{Displacement, MatchParams};
use crate::error::Result;
use crate::homography::Homography;
use crate::video::{warp_frame, Frame, ValidityMask};

/// Smallest block side, in full-resolution pixels, at the finest step.
const MIN_BLOCK: usize = 4;

/// One matched block at the finest subdivision step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockMatch {
    /// Block center in A's pixel coordinates.
    pub center: (f64, f64),
    pub disp: Displacement,
    /// Mean Ψ at the chosen displacement; `f64::MAX` for degenerate blocks.
    pub cost: f64,
    /// Set when the block had no usable texture or overlap.
    pub degenerate: bool,
}

impl BlockMatch {
    /// The corresponding point in B.
    pub fn target(&self) -> (f64, f64) {
        (self.center.0 + self.disp.dx, self.center.1 + self.disp.dy)
    }
}

/// The subdivision depth actually used for a `width x height` frame: reduced
/// until the finest blocks are at least 4x4 pixels.
pub fn effective_level(p: &MatchParams, width: usize, height: usize) -> u32 {
    let fits = |l: u32| {
        let n = (p.division as usize).saturating_pow(l);
        let coarse_ok = (width >> l) >= MIN_BLOCK && (height >> l) >= MIN_BLOCK;
        width >= MIN_BLOCK * n && height >= MIN_BLOCK * n && coarse_ok
    };
    let mut l = p.level;
    while l > 0 && !fits(l) {
        l -= 1;
    }
    if l != p.level {
        log::warn!(
            "match level {} too deep for {width}x{height} with division {}; using {l}",
            p.level,
            p.division
        );
    }
    l
}

/// Hierarchical compass search of `b` against `a`. When `init` is given, `b`
/// is first warped by it and displacements are relative to the warped image.
pub fn hierarchical_match(
    a: &Frame,
    b: &Frame,
    p: &MatchParams,
    init: Option<&Homography>,
) -> Result<Vec<BlockMatch>> {
    match init {
        Some(h) => {
            let (bw, mask) = warp_frame(b, h)?;
            hierarchical_match_masked(a, None, &bw, Some(&mask), p)
        }
        None => hierarchical_match_masked(a, None, b, None, p),
    }
}

#[derive(Clone, Copy)]
struct BlockState {
    disp: (i64, i64),
    degenerate: bool,
}

fn block_rect(i: usize, j: usize, n: usize, w: usize, h: usize) -> Rect {
    Rect::new(
        (i * w / n) as i64,
        (j * h / n) as i64,
        ((i + 1) * w / n) as i64,
        ((j + 1) * h / n) as i64,
    )
}

/// Like [`hierarchical_match`], restricting comparisons to pixels valid in
/// `a_mask` (at A's location) and `b_mask` (at the shifted location).
pub fn hierarchical_match_masked(
    a: &Frame,
    a_mask: Option<&ValidityMask>,
    b: &Frame,
    b_mask: Option<&ValidityMask>,
    p: &MatchParams,
) -> Result<Vec<BlockMatch>> {
    p.validate()?;
    if a.dims() != b.dims() {
        return Err(crate::Error::Structural(format!(
            "matched frames differ in size: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    let (w, h) = a.dims();
    let levels = effective_level(p, w, h) as usize;
    let div = p.division as usize;
    let pa = pyramid(a, a_mask, levels + 1);
    let pb = pyramid(b, b_mask, levels + 1);

    let mut states = vec![BlockState {
        disp: (0, 0),
        degenerate: false,
    }];
    let mut n = 1usize;
    for step in 0..=levels {
        if step > 0 {
            let mut next = vec![
                BlockState {
                    disp: (0, 0),
                    degenerate: false
                };
                n * n * div * div
            ];
            let m = n * div;
            for (k, s) in next.iter_mut().enumerate() {
                let (ci, cj) = (k % m, k / m);
                let parent = states[(cj / div) * n + ci / div];
                s.disp = (parent.disp.0 * 2, parent.disp.1 * 2);
            }
            states = next;
            n = m;
        }
        let l = levels - step;
        let (fa, ma) = &pa[l];
        let (fb, mb) = &pb[l];
        let (lw, lh) = fa.dims();
        let va = View::new(fa, ma.as_ref());
        let vb = View::new(fb, mb.as_ref());
        let last = step == levels;

        let results: Vec<(BlockState, Option<Displacement>, f64)> = states
            .par_iter()
            .enumerate()
            .map(|(k, st)| {
                let rect = block_rect(k % n, k / n, n, lw, lh);
                let bw = rect.x1 - rect.x0;
                let bh = rect.y1 - rect.y0;
                let s = p.smooth as i64;
                let region = rect.expanded(s * bw, s * bh);
                let support = va.support(region);
                let mut out = BlockState {
                    disp: st.disp,
                    degenerate: true,
                };
                if support < MIN_BLOCK || va.is_flat(region) {
                    return (out, None, f64::MAX);
                }
                let mut cache = CostCache::new(va, vb, region, p.psi, (support / 4).max(MIN_BLOCK));
                let Some(d) = cache.converge(st.disp) else {
                    return (out, None, f64::MAX);
                };
                if cache.is_flat_at(d) || !cache.has_neighborhood(d) {
                    return (out, None, f64::MAX);
                }
                out.disp = d;
                out.degenerate = false;
                let cost = cache.cost(d.0, d.1).unwrap_or(f64::MAX);
                let refined = last.then(|| cache.refine(d));
                (out, refined, cost)
            })
            .collect();

        if last {
            return Ok(results
                .into_iter()
                .enumerate()
                .map(|(k, (st, refined, cost))| {
                    let rect = block_rect(k % n, k / n, n, w, h);
                    let center = (
                        (rect.x0 + rect.x1 - 1) as f64 / 2.0,
                        (rect.y0 + rect.y1 - 1) as f64 / 2.0,
                    );
                    BlockMatch {
                        center,
                        disp: refined
                            .unwrap_or(Displacement::new(st.disp.0 as f64, st.disp.1 as f64)),
                        cost,
                        degenerate: st.degenerate,
                    }
                })
                .collect());
        }
        states = results.into_iter().map(|(s, _, _)| s).collect();
    }
    unreachable!("loop returns at the last step")
}
