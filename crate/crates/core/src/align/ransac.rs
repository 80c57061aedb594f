use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::BlockMatch;
use crate::error::{Error, Result};
use crate::homography::{fit_dlt, Homography};

/// Robust fitting parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RansacParams {
    pub iterations: u32,
    /// Reprojection error below which a correspondence is an inlier.
    pub inlier_px: f64,
    pub seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            iterations: 500,
            inlier_px: 2.0,
            seed: 0x5EA4_C0DE,
        }
    }
}

const COLLINEAR_EPS: f64 = 1e-6;

fn collinear(p: (f64, f64), q: (f64, f64), r: (f64, f64)) -> bool {
    let (ux, uy) = (q.0 - p.0, q.1 - p.1);
    let (vx, vy) = (r.0 - p.0, r.1 - p.1);
    let lu = (ux * ux + uy * uy).sqrt();
    let lv = (vx * vx + vy * vy).sqrt();
    if lu < 1e-12 || lv < 1e-12 {
        return true;
    }
    ((ux * vy - uy * vx) / (lu * lv)).abs() < COLLINEAR_EPS
}

fn any_three_collinear(pts: &[(f64, f64); 4]) -> bool {
    const TRIPLES: [(usize, usize, usize); 4] = [(0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)];
    TRIPLES
        .iter()
        .any(|&(i, j, k)| collinear(pts[i], pts[j], pts[k]))
}

fn reprojection_error(h: &Homography, src: (f64, f64), dst: (f64, f64)) -> f64 {
    let (x, y) = h.apply(src.0, src.1);
    let e = ((x - dst.0).powi(2) + (y - dst.1).powi(2)).sqrt();
    if e.is_finite() {
        e
    } else {
        f64::INFINITY
    }
}

fn inliers_of(h: &Homography, src: &[(f64, f64)], dst: &[(f64, f64)], thr: f64) -> Vec<bool> {
    src.iter()
        .zip(dst)
        .map(|(&s, &d)| reprojection_error(h, s, d) < thr)
        .collect()
}

/// Fits `center -> center + disp` over the non-degenerate matches.
///
/// Returns the model refit on the best consensus set and per-match inlier
/// flags (degenerate matches are never inliers).
pub fn fit_homography_ransac(
    matches: &[BlockMatch],
    params: &RansacParams,
) -> Result<(Homography, Vec<bool>)> {
    let usable: Vec<usize> = (0..matches.len())
        .filter(|&i| !matches[i].degenerate)
        .collect();
    if usable.len() < 4 {
        return Err(Error::Model(format!(
            "homography needs at least 4 usable matches, got {}",
            usable.len()
        )));
    }
    let src: Vec<(f64, f64)> = usable.iter().map(|&i| matches[i].center).collect();
    let dst: Vec<(f64, f64)> = usable.iter().map(|&i| matches[i].target()).collect();
    let thr = params.inlier_px;

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut best: Option<(usize, Vec<bool>)> = None;
    for _ in 0..params.iterations.max(1) {
        let idx = sample(&mut rng, src.len(), 4);
        let s = [src[idx.index(0)], src[idx.index(1)], src[idx.index(2)], src[idx.index(3)]];
        let d = [dst[idx.index(0)], dst[idx.index(1)], dst[idx.index(2)], dst[idx.index(3)]];
        if any_three_collinear(&s) || any_three_collinear(&d) {
            continue;
        }
        let Ok(h) = fit_dlt(&s, &d) else { continue };
        let flags = inliers_of(&h, &src, &dst, thr);
        let count = flags.iter().filter(|&&f| f).count();
        if best.as_ref().is_none_or(|(c, _)| count > *c) {
            best = Some((count, flags));
            if count == src.len() {
                break;
            }
        }
    }
    let Some((_, mut flags)) = best else {
        return Err(Error::Model(
            "every minimal sample was degenerate (collinear points)".into(),
        ));
    };

    // Least-squares refit on the consensus set, repeated while it grows.
    let mut model = None;
    for _ in 0..4 {
        let (s, d): (Vec<_>, Vec<_>) = src
            .iter()
            .zip(&dst)
            .zip(&flags)
            .filter(|(_, &f)| f)
            .map(|((&s, &d), _)| (s, d))
            .unzip();
        if s.len() < 4 {
            break;
        }
        let h = fit_dlt(&s, &d)?;
        let refit_flags = inliers_of(&h, &src, &dst, thr);
        let grew = refit_flags.iter().filter(|&&f| f).count() > s.len();
        model = Some(h);
        if !grew {
            break;
        }
        flags = refit_flags;
    }
    let model = model.ok_or_else(|| Error::Model("fewer than 4 inliers".into()))?;
    let final_flags = inliers_of(&model, &src, &dst, thr);
    if final_flags.iter().filter(|&&f| f).count() < 4 {
        return Err(Error::Model("fewer than 4 inliers after refit".into()));
    }

    let mut out = vec![false; matches.len()];
    for (&i, f) in usable.iter().zip(final_flags) {
        out[i] = f;
    }
    Ok((model, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::align::Displacement;
    use rand::Rng;

    fn grid_matches(h: &Homography, n: usize, step: f64) -> Vec<BlockMatch> {
        let mut out = Vec::new();
        for j in 0..n {
            for i in 0..n {
                let c = (i as f64 * step + 5.0, j as f64 * step + 5.0);
                let (x, y) = h.apply(c.0, c.1);
                out.push(BlockMatch {
                    center: c,
                    disp: Displacement::new(x - c.0, y - c.1),
                    cost: 0.0,
                    degenerate: false,
                });
            }
        }
        out
    }

    #[test]
    fn zero_displacements_give_identity() {
        let m = grid_matches(&Homography::identity(), 5, 20.0);
        let (h, flags) = fit_homography_ransac(&m, &RansacParams::default()).unwrap();
        assert!(h.max_corner_distance(&Homography::identity(), 100, 100) < 1e-9);
        assert!(flags.iter().all(|&f| f));
    }

    #[test]
    fn outliers_are_rejected() {
        let truth =
            Homography::from_row_major([1.02, 0.04, 6.0, -0.03, 0.98, -3.0, 1e-4, 2e-4, 1.0]);
        let mut m = grid_matches(&truth, 5, 30.0);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for k in 0..5 {
            let i = k * 5 + (k % 3);
            m[i].disp = Displacement::new(rng.random_range(15.0..40.0), rng.random_range(-40.0..-15.0));
        }
        let (h, flags) = fit_homography_ransac(&m, &RansacParams::default()).unwrap();
        assert!(h.max_corner_distance(&truth, 130, 130) < 0.5);
        assert_eq!(flags.iter().filter(|&&f| !f).count(), 5);
    }

    #[test]
    fn noise_free_fit_is_exact() {
        let truth = Homography::from_row_major([0.9, -0.1, 3.0, 0.12, 1.1, 8.0, -2e-4, 1e-4, 1.0]);
        let m = grid_matches(&truth, 6, 25.0);
        let (h, _) = fit_homography_ransac(&m, &RansacParams::default()).unwrap();
        for bm in &m {
            let (x, y) = h.apply(bm.center.0, bm.center.1);
            let (tx, ty) = bm.target();
            assert!(((x - tx).powi(2) + (y - ty).powi(2)).sqrt() <= 1e-6);
        }
    }

    #[test]
    fn too_few_matches_fail() {
        let m = grid_matches(&Homography::identity(), 2, 10.0);
        assert!(matches!(
            fit_homography_ransac(&m[..3], &RansacParams::default()),
            Err(Error::Model(_))
        ));
    }

    #[test]
    fn collinear_matches_fail() {
        let m: Vec<BlockMatch> = (0..10)
            .map(|i| BlockMatch {
                center: (i as f64 * 3.0, 7.0),
                disp: Displacement::ZERO,
                cost: 0.0,
                degenerate: false,
            })
            .collect();
        assert!(matches!(
            fit_homography_ransac(&m, &RansacParams::default()),
            Err(Error::Model(_))
        ));
    }

    #[test]
    fn degenerate_matches_are_ignored() {
        let mut m = grid_matches(&Homography::translation(2.0, 1.0), 4, 20.0);
        m[0].degenerate = true;
        m[0].disp = Displacement::new(100.0, 100.0);
        let (h, flags) = fit_homography_ransac(&m, &RansacParams::default()).unwrap();
        assert!(!flags[0]);
        assert!(h.max_corner_distance(&Homography::translation(2.0, 1.0), 80, 80) < 1e-9);
    }
}
