//! 3x3 projective transforms and the normalized DLT solver.

use std::ops::Mul;

use nalgebra::{DMatrix, Matrix3, Vector3};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

const SINGULAR_EPS: f64 = 1e-12;

/// A plane-to-plane projective map with `h[2][2] == 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography(Matrix3<f64>);

impl Default for Homography {
    fn default() -> Self {
        Self::identity()
    }
}

impl Homography {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    pub fn translation(dx: f64, dy: f64) -> Self {
        Self(Matrix3::new(1.0, 0.0, dx, 0.0, 1.0, dy, 0.0, 0.0, 1.0))
    }

    pub fn scale(s: f64) -> Self {
        Self(Matrix3::new(s, 0.0, 0.0, 0.0, s, 0.0, 0.0, 0.0, 1.0))
    }

    /// Rotation by `angle` radians about `(cx, cy)`.
    pub fn rotation_about(angle: f64, cx: f64, cy: f64) -> Self {
        let (s, c) = angle.sin_cos();
        let r = Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0);
        Self::translation(cx, cy) * Self(r) * Self::translation(-cx, -cy)
    }

    /// Builds from nine row-major entries, renormalizing when possible.
    pub fn from_row_major(m: [f64; 9]) -> Self {
        Self(Matrix3::from_row_slice(&m)).normalized()
    }

    pub fn from_matrix(m: Matrix3<f64>) -> Self {
        Self(m).normalized()
    }

    pub fn to_row_major(&self) -> [f64; 9] {
        let m = &self.0;
        [
            m[(0, 0)],
            m[(0, 1)],
            m[(0, 2)],
            m[(1, 0)],
            m[(1, 1)],
            m[(1, 2)],
            m[(2, 0)],
            m[(2, 1)],
            m[(2, 2)],
        ]
    }

    #[inline]
    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    fn normalized(self) -> Self {
        let s = self.0[(2, 2)];
        if s.abs() > SINGULAR_EPS {
            Self(self.0 / s)
        } else {
            self
        }
    }

    pub fn determinant(&self) -> f64 {
        self.0.determinant()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn inverse(&self) -> Result<Self> {
        let det = self.determinant();
        if !det.is_finite() || det.abs() < SINGULAR_EPS {
            return Err(Error::Model(format!(
                "homography is not invertible (det = {det:e})"
            )));
        }
        self.0
            .try_inverse()
            .map(|m| Self(m).normalized())
            .ok_or_else(|| Error::Model("homography is not invertible".into()))
    }

    #[inline]
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let m = &self.0;
        let w = m[(2, 0)] * x + m[(2, 1)] * y + m[(2, 2)];
        (
            (m[(0, 0)] * x + m[(0, 1)] * y + m[(0, 2)]) / w,
            (m[(1, 0)] * x + m[(1, 1)] * y + m[(1, 2)]) / w,
        )
    }

    /// Conjugates by the 2x spatial downscale of a box-filter pyramid, so the
    /// result acts on coarse pixel coordinates. Coarse pixel `c` covers fine
    /// pixels `2c` and `2c + 1`, centered at `2c + 0.5`.
    pub fn downscaled(&self) -> Self {
        let s = Matrix3::new(0.5, 0.0, -0.25, 0.0, 0.5, -0.25, 0.0, 0.0, 1.0);
        let s_inv = Matrix3::new(2.0, 0.0, 0.5, 0.0, 2.0, 0.5, 0.0, 0.0, 1.0);
        Self(s * self.0 * s_inv).normalized()
    }

    /// Largest displacement between the images of the four frame corners.
    pub fn max_corner_distance(&self, other: &Homography, width: usize, height: usize) -> f64 {
        frame_corners(width, height)
            .iter()
            .map(|&(x, y)| {
                let (ax, ay) = self.apply(x, y);
                let (bx, by) = other.apply(x, y);
                ((ax - bx).powi(2) + (ay - by).powi(2)).sqrt()
            })
            .fold(0.0, f64::max)
    }
}

impl Mul for Homography {
    type Output = Homography;

    fn mul(self, rhs: Homography) -> Homography {
        Homography(self.0 * rhs.0).normalized()
    }
}

pub fn frame_corners(width: usize, height: usize) -> [(f64, f64); 4] {
    let w = (width.max(1) - 1) as f64;
    let h = (height.max(1) - 1) as f64;
    [(0.0, 0.0), (w, 0.0), (0.0, h), (w, h)]
}

impl Serialize for Homography {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_row_major().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Homography {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let m = <[f64; 9]>::deserialize(d)?;
        // Stored matrices are already normalized; keep the bits untouched.
        Ok(Self(Matrix3::from_row_slice(&m)))
    }
}

/// Similarity transform moving the centroid to the origin with mean
/// distance sqrt(2).
fn normalizing_transform(pts: &[(f64, f64)]) -> Option<Matrix3<f64>> {
    let n = pts.len() as f64;
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |(a, b), &(x, y)| (a + x, b + y));
    let (cx, cy) = (sx / n, sy / n);
    let mean_dist = pts
        .iter()
        .map(|&(x, y)| ((x - cx).powi(2) + (y - cy).powi(2)).sqrt())
        .sum::<f64>()
        / n;
    if mean_dist < 1e-12 {
        return None;
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    Some(Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0))
}

/// Least-squares homography with `dst ~ H src` by the normalized DLT.
pub fn fit_dlt(src: &[(f64, f64)], dst: &[(f64, f64)]) -> Result<Homography> {
    let n = src.len();
    if n < 4 || dst.len() != n {
        return Err(Error::Model(format!(
            "homography fit needs at least 4 correspondences, got {n}"
        )));
    }
    let ts = normalizing_transform(src)
        .ok_or_else(|| Error::Model("degenerate source points".into()))?;
    let td = normalizing_transform(dst)
        .ok_or_else(|| Error::Model("degenerate destination points".into()))?;

    let rows = (2 * n).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, (&(x, y), &(u, v))) in src.iter().zip(dst).enumerate() {
        let p = ts * Vector3::new(x, y, 1.0);
        let q = td * Vector3::new(u, v, 1.0);
        let (x, y) = (p.x, p.y);
        let (u, v) = (q.x, q.y);
        let r0 = 2 * i;
        let r1 = r0 + 1;
        a[(r0, 0)] = -x;
        a[(r0, 1)] = -y;
        a[(r0, 2)] = -1.0;
        a[(r0, 6)] = u * x;
        a[(r0, 7)] = u * y;
        a[(r0, 8)] = u;
        a[(r1, 3)] = -x;
        a[(r1, 4)] = -y;
        a[(r1, 5)] = -1.0;
        a[(r1, 6)] = v * x;
        a[(r1, 7)] = v * y;
        a[(r1, 8)] = v;
    }

    let svd = a.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::Model("SVD did not converge".into()))?;
    // nalgebra does not sort singular values; pick the smallest explicitly.
    let (k, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("nine singular values");
    let h = v_t.row(k);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let td_inv = td
        .try_inverse()
        .ok_or_else(|| Error::Model("degenerate normalization".into()))?;
    let m = td_inv * hn * ts;
    if m[(2, 2)].abs() < SINGULAR_EPS || m.determinant().abs() < SINGULAR_EPS {
        return Err(Error::Model("fitted homography is degenerate".into()));
    }
    let out = Homography(m).normalized();
    if !out.is_finite() {
        return Err(Error::Model("fitted homography is not finite".into()));
    }
    Ok(out)
}
