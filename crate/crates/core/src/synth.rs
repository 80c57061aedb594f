//! Procedural test scenes with exactly known geometry.
//!
//! Frames are rendered by evaluating a continuous texture at transformed
//! coordinates, so shifted or warped views carry no resampling error. Used
//! by the benchmark commands and the test suites.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::homography::Homography;
use crate::video::{Frame, VideoClip};

/// Multi-octave value noise, RGB, roughly spanning 20..235.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Texture {
    seed: u64,
}

const OCTAVES: [(f64, f64); 4] = [(32.0, 0.4), (16.0, 0.3), (8.0, 0.2), (4.0, 0.1)];

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn lattice(seed: u64, octave: u64, channel: u64, ix: i64, iy: i64) -> f64 {
    let h = splitmix(
        seed ^ splitmix(octave.wrapping_mul(0x1000_0001) ^ channel.wrapping_mul(0x3_0000_0007))
            ^ splitmix((ix as u64).wrapping_mul(0x9E37_79B1) ^ (iy as u64).rotate_left(32)),
    );
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

impl Texture {
    pub const fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn sample(&self, x: f64, y: f64) -> [f32; 3] {
        let mut out = [0.0f32; 3];
        for (c, o) in out.iter_mut().enumerate() {
            let mut v = 0.0;
            for (k, &(spacing, amp)) in OCTAVES.iter().enumerate() {
                let u = x / spacing;
                let w = y / spacing;
                let (fx, fy) = (u.floor(), w.floor());
                let (tx, ty) = (smooth(u - fx), smooth(w - fy));
                let (ix, iy) = (fx as i64, fy as i64);
                let l = |dx: i64, dy: i64| lattice(self.seed, k as u64, c as u64, ix + dx, iy + dy);
                let top = l(0, 0) * (1.0 - tx) + l(1, 0) * tx;
                let bottom = l(0, 1) * (1.0 - tx) + l(1, 1) * tx;
                v += amp * (top * (1.0 - ty) + bottom * ty);
            }
            *o = (20.0 + 215.0 * v) as f32;
        }
        out
    }

    /// Pixel `(x, y)` shows texture point `(x + ox, y + oy)`.
    pub fn render(&self, width: usize, height: usize, ox: f64, oy: f64) -> Frame {
        Frame::from_fn(width, height, |x, y| self.sample(x as f64 + ox, y as f64 + oy))
    }

    /// Pixel `p` shows texture point `map(p)`.
    pub fn render_mapped(&self, width: usize, height: usize, map: &Homography) -> Frame {
        Frame::from_fn(width, height, |x, y| {
            let (u, v) = map.apply(x as f64, y as f64);
            self.sample(u, v)
        })
    }
}

/// A view of `tex` whose content is moved by `(dx, dy)` relative to
/// `tex.render(w, h, 0, 0)`, i.e. `B(x + dx, y + dy) = A(x, y)`.
pub fn shifted_texture(tex: &Texture, width: usize, height: usize, dx: f64, dy: f64) -> Frame {
    tex.render(width, height, -dx, -dy)
}

/// Frame-centered rotation, translation and perspective bounds for random
/// B-to-A homographies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WarpRange {
    pub max_shift: f64,
    pub max_degrees: f64,
    /// Bound on the projective row, in units of 1/pixel.
    pub max_perspective: f64,
}

impl WarpRange {
    /// Translations up to 30 px, rotations up to 5 degrees, perspective
    /// bending the frame edges by a few pixels.
    pub const RECOVERY: WarpRange = WarpRange {
        max_shift: 30.0,
        max_degrees: 5.0,
        max_perspective: 5e-5,
    };
}

/// Draws `T(c + t) P R T(-c)` with `c` the frame center.
pub fn random_homography(rng: &mut impl Rng, width: usize, height: usize, range: &WarpRange) -> Homography {
    let (cx, cy) = ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0);
    let mut u = || rng.random_range(-1.0..=1.0);
    let (tx, ty) = (u() * range.max_shift, u() * range.max_shift);
    let angle = (u() * range.max_degrees).to_radians();
    let (px, py) = (u() * range.max_perspective, u() * range.max_perspective);
    let (c, s) = (angle.cos(), angle.sin());
    let r = Homography::from_row_major([c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0]);
    let p = Homography::from_row_major([1.0, 0.0, 0.0, 0.0, 1.0, 0.0, px, py, 1.0]);
    Homography::translation(cx + tx, cy + ty) * p * r * Homography::translation(-cx, -cy)
}

/// Two views of `tex` related by `b_to_a`: `B(p) = A(b_to_a(p))`.
pub fn view_pair(tex: &Texture, width: usize, height: usize, b_to_a: &Homography) -> (Frame, Frame) {
    (tex.render(width, height, 0.0, 0.0), tex.render_mapped(width, height, b_to_a))
}

/// Two handheld takes of one textured plane with known per-frame alignment.
#[derive(Debug, Clone)]
pub struct ShakyScene {
    pub a: VideoClip,
    pub b: VideoClip,
    /// `truth[t]` maps points of `B_t` to points of `A_t`.
    pub truth: Vec<Homography>,
}

/// Each take pans slowly with per-frame jitter of up to 2 px and 1 degree;
/// B starts offset from A by up to 20 px.
pub fn shaky_scene(tex: &Texture, width: usize, height: usize, frames: usize, seed: u64) -> ShakyScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (cx, cy) = ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0);
    let mut camera = |pan: (f64, f64), start: (f64, f64)| -> Vec<Homography> {
        (0..frames)
            .map(|t| {
                let t = t as f64;
                let jx = rng.random_range(-2.0..=2.0);
                let jy = rng.random_range(-2.0..=2.0);
                let angle = rng.random_range(-1.0f64..=1.0).to_radians();
                Homography::translation(start.0 + pan.0 * t + jx, start.1 + pan.1 * t + jy)
                    * Homography::rotation_about(angle, cx, cy)
            })
            .collect()
    };
    let cam_a = camera((1.5, 0.5), (0.0, 0.0));
    let cam_b = camera((1.2, 0.8), (14.0, -9.0));
    let render = |cams: &[Homography]| {
        VideoClip::new(cams.par_iter().map(|m| tex.render_mapped(width, height, m)).collect())
            .expect("equal frame sizes")
    };
    let truth = cam_a
        .iter()
        .zip(&cam_b)
        .map(|(m, n)| m.inverse().expect("rigid camera") * *n)
        .collect();
    ShakyScene {
        a: render(&cam_a),
        b: render(&cam_b),
        truth,
    }
}
