use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::video::{Frame, VideoClip};

/// Widest radius the kernel search will try on one axis.
const MAX_RADIUS: usize = 64;

/// Mean absolute forward difference per axis, averaged over channels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Blurriness {
    pub bx: f64,
    pub by: f64,
}

impl Blurriness {
    pub fn total(&self) -> f64 {
        self.bx + self.by
    }

    fn axis(&self, axis: Axis) -> f64 {
        match axis {
            Axis::X => self.bx,
            Axis::Y => self.by,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Axis {
    X,
    Y,
}

/// Two separable box passes. Each pass is `[width_x, width_y]`, odd and at
/// least 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "KernelRepr", into = "KernelRepr")]
pub struct BlurKernel {
    pass1: [usize; 2],
    pass2: [usize; 2],
}

#[derive(Serialize, Deserialize)]
struct KernelRepr {
    pass1: [usize; 2],
    pass2: [usize; 2],
}

impl TryFrom<KernelRepr> for BlurKernel {
    type Error = Error;

    fn try_from(r: KernelRepr) -> Result<Self> {
        BlurKernel::new(r.pass1, r.pass2)
    }
}

impl From<BlurKernel> for KernelRepr {
    fn from(k: BlurKernel) -> Self {
        KernelRepr {
            pass1: k.pass1,
            pass2: k.pass2,
        }
    }
}

impl Default for BlurKernel {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl BlurKernel {
    pub const IDENTITY: BlurKernel = BlurKernel {
        pass1: [1, 1],
        pass2: [1, 1],
    };

    pub fn new(pass1: [usize; 2], pass2: [usize; 2]) -> Result<Self> {
        for w in pass1.iter().chain(&pass2) {
            if *w == 0 || w % 2 == 0 {
                return Err(Error::Config(format!(
                    "box widths must be odd and at least 1, got {pass1:?} / {pass2:?}"
                )));
            }
        }
        Ok(Self { pass1, pass2 })
    }

    pub fn pass1(&self) -> [usize; 2] {
        self.pass1
    }

    pub fn pass2(&self) -> [usize; 2] {
        self.pass2
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::IDENTITY
    }

    fn axis(&self, axis: Axis) -> (usize, usize) {
        let i = axis as usize;
        (self.pass1[i], self.pass2[i])
    }

    fn with_axis(mut self, axis: Axis, (w1, w2): (usize, usize)) -> Self {
        let i = axis as usize;
        self.pass1[i] = w1;
        self.pass2[i] = w2;
        self
    }

    fn only(axis: Axis, widths: (usize, usize)) -> Self {
        Self::IDENTITY.with_axis(axis, widths)
    }
}

impl std::fmt::Display for BlurKernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}x{} then {}x{}",
            self.pass1[0], self.pass1[1], self.pass2[0], self.pass2[1]
        )
    }
}

pub fn blurriness(img: &Frame) -> Result<Blurriness> {
    let (w, h) = img.dims();
    if w < 2 || h < 2 {
        return Err(Error::Structural(format!(
            "blurriness needs at least 2x2 pixels, got {w}x{h}"
        )));
    }
    let data = img.data();
    let row = w * 3;
    let (sx, sy) = (0..h)
        .into_par_iter()
        .map(|y| {
            let r = &data[y * row..(y + 1) * row];
            let sx: f64 = r.windows(4).map(|p| f64::from((p[3] - p[0]).abs())).sum();
            let sy: f64 = if y + 1 < h {
                let below = &data[(y + 1) * row..(y + 2) * row];
                r.iter().zip(below).map(|(&p, &q)| f64::from((q - p).abs())).sum()
            } else {
                0.0
            };
            (sx, sy)
        })
        .reduce(|| (0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    Ok(Blurriness {
        bx: sx / ((w - 1) * h * 3) as f64,
        by: sy / (w * (h - 1) * 3) as f64,
    })
}

/// Box average of width `width` along one line of `n` samples spaced
/// `stride` apart, replicating the end samples.
fn box_line(src: &[f32], dst: &mut [f32], n: usize, stride: usize, width: usize) {
    let r = (width / 2) as isize;
    let at = |i: isize| f64::from(src[i.clamp(0, n as isize - 1) as usize * stride]);
    let mut acc: f64 = (-r..=r).map(at).sum();
    let norm = 1.0 / width as f64;
    for i in 0..n as isize {
        dst[i as usize * stride] = (acc * norm) as f32;
        acc += at(i + r + 1) - at(i - r);
    }
}

fn box_horizontal(img: &Frame, width: usize) -> Frame {
    if width == 1 {
        return img.clone();
    }
    let (w, h) = img.dims();
    let mut out = vec![0.0f32; w * h * 3];
    out.par_chunks_mut(w * 3)
        .zip(img.data().par_chunks(w * 3))
        .for_each(|(dst, src)| {
            for c in 0..3 {
                box_line(&src[c..], &mut dst[c..], w, 3, width);
            }
        });
    Frame::new(w, h, out).expect("dimensions unchanged")
}

fn box_vertical(img: &Frame, width: usize) -> Frame {
    if width == 1 {
        return img.clone();
    }
    let (w, h) = img.dims();
    let row = w * 3;
    let src = img.data();
    let r = (width / 2) as isize;
    let line = |y: isize| &src[y.clamp(0, h as isize - 1) as usize * row..][..row];
    let mut acc = vec![0.0f64; row];
    for y in -r..=r {
        for (a, &v) in acc.iter_mut().zip(line(y)) {
            *a += f64::from(v);
        }
    }
    let norm = 1.0 / width as f64;
    let mut out = vec![0.0f32; w * h * 3];
    for (y, dst) in out.chunks_mut(row).enumerate() {
        let y = y as isize;
        for (d, &a) in dst.iter_mut().zip(&acc) {
            *d = (a * norm) as f32;
        }
        let (add, sub) = (line(y + r + 1), line(y - r));
        for ((a, &p), &q) in acc.iter_mut().zip(add).zip(sub) {
            *a += f64::from(p) - f64::from(q);
        }
    }
    Frame::new(w, h, out).expect("dimensions unchanged")
}

/// Pass 1 (horizontal then vertical) followed by pass 2, replicate border.
pub fn box_blur(img: &Frame, kernel: &BlurKernel) -> Frame {
    let mut out = img.clone();
    for [wx, wy] in [kernel.pass1, kernel.pass2] {
        out = box_vertical(&box_horizontal(&out, wx), wy);
    }
    out
}

/// Applies one kernel to every frame.
pub fn blur_clip(clip: &VideoClip, kernel: &BlurKernel) -> VideoClip {
    if kernel.is_identity() {
        return clip.clone();
    }
    let frames = clip.frames().par_iter().map(|f| box_blur(f, kernel)).collect();
    VideoClip::new(frames).expect("frame sizes unchanged")
}

/// Finds the `(pass1, pass2)` widths along `axis` that bring `base` closest
/// to `target`. Iteration 1 grows equal widths until the target is reached,
/// iteration 2 holds pass 1 and tunes pass 2.
fn search_axis(base: &Frame, axis: Axis, target: f64) -> Result<(usize, usize)> {
    let measure = |widths: (usize, usize)| -> Result<f64> {
        Ok(blurriness(&box_blur(base, &BlurKernel::only(axis, widths)))?.axis(axis))
    };
    let start = measure((1, 1))?;
    if start <= target {
        return Ok((1, 1));
    }
    let mut best = ((start - target).abs(), (1, 1));
    let mut w1 = 1;
    for k in 1..=MAX_RADIUS {
        w1 = 2 * k + 1;
        let v = measure((w1, w1))?;
        if (v - target).abs() < best.0 {
            best = ((v - target).abs(), (w1, w1));
        }
        if v <= target {
            break;
        }
    }
    // Equal widths step coarsely near large kernels, so pass 1 may also
    // move one step either way while pass 2 is tuned.
    let firsts = [w1.saturating_sub(2), w1, w1 + 2];
    for p1 in firsts.into_iter().filter(|&p| p >= 1 && p <= 2 * MAX_RADIUS + 1) {
        for w2 in (1..=p1 + 2).step_by(2) {
            if w2 == p1 && p1 <= w1 {
                continue;
            }
            let v = measure((p1, w2))?;
            if (v - target).abs() < best.0 {
                best = ((v - target).abs(), (p1, w2));
            }
        }
    }
    Ok(best.1)
}

/// Searches the two-pass box kernel that makes `sharp` as blurry as
/// `blurry`, independently per axis. Blurring along one axis also lowers the
/// other axis' gradients, so the axes are searched alternately until the
/// widths settle.
pub fn estimate_blur_kernel(sharp: &Frame, blurry: &Frame) -> Result<BlurKernel> {
    if sharp.dims() != blurry.dims() {
        return Err(Error::Structural(format!(
            "blur matching needs equal frame sizes, got {:?} and {:?}",
            sharp.dims(),
            blurry.dims()
        )));
    }
    let target = blurriness(blurry)?;
    let have = blurriness(sharp)?;
    if have.bx <= target.bx && have.by <= target.by {
        if have != target {
            log::warn!("the sharper frame is already blurrier on both axes; leaving it unfiltered");
        }
        return Ok(BlurKernel::IDENTITY);
    }
    let mut kernel = BlurKernel::IDENTITY;
    for _ in 0..4 {
        let mut next = kernel;
        for axis in [Axis::X, Axis::Y] {
            let other = if axis == Axis::X { Axis::Y } else { Axis::X };
            let base = box_blur(sharp, &BlurKernel::only(other, next.axis(other)));
            next = next.with_axis(axis, search_axis(&base, axis, target.axis(axis))?);
        }
        if next == kernel {
            break;
        }
        kernel = next;
    }
    Ok(kernel)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Blurred {
    A,
    B,
    Neither,
}

#[derive(Debug, Clone)]
pub struct BlurMatch {
    pub a: Frame,
    pub b: Frame,
    pub kernel: BlurKernel,
    pub blurred: Blurred,
}

/// Blurs whichever frame is sharper (by combined blurriness) to match the
/// other.
pub fn match_blur(a: &Frame, b: &Frame) -> Result<BlurMatch> {
    let (ba, bb) = (blurriness(a)?, blurriness(b)?);
    let a_sharper = ba.total() > bb.total();
    let kernel = if a_sharper {
        estimate_blur_kernel(a, b)?
    } else {
        estimate_blur_kernel(b, a)?
    };
    let (mut a, mut b) = (a.clone(), b.clone());
    let blurred = if kernel.is_identity() {
        Blurred::Neither
    } else if a_sharper {
        a = box_blur(&a, &kernel);
        Blurred::A
    } else {
        b = box_blur(&b, &kernel);
        Blurred::B
    };
    Ok(BlurMatch {
        a,
        b,
        kernel,
        blurred,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::Texture;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(w: usize, h: usize, seed: u64) -> Frame {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Frame::new(w, h, (0..w * h * 3).map(|_| rng.random_range(0.0..255.0)).collect()).unwrap()
    }

    fn k(p1: [usize; 2], p2: [usize; 2]) -> BlurKernel {
        BlurKernel::new(p1, p2).unwrap()
    }

    #[test]
    fn constant_image_has_zero_blurriness() {
        let b = blurriness(&Frame::filled(7, 5, [40.0, 90.0, 200.0])).unwrap();
        assert_eq!((b.bx, b.by), (0.0, 0.0));
    }

    #[test]
    fn step_edge_counts_one_difference_per_row() {
        let w = 9;
        let img = Frame::from_fn(w, 6, |x, _| if x < 4 { [0.0; 3] } else { [255.0; 3] });
        let b = blurriness(&img).unwrap();
        assert!((b.bx - 255.0 / (w - 1) as f64).abs() < 1e-9);
        assert_eq!(b.by, 0.0);
    }

    #[test]
    fn transpose_swaps_axes() {
        let img = noise(13, 8, 3);
        let t = Frame::from_fn(8, 13, |x, y| img.pixel(y, x));
        let (a, b) = (blurriness(&img).unwrap(), blurriness(&t).unwrap());
        assert!((a.bx - b.by).abs() < 1e-9 && (a.by - b.bx).abs() < 1e-9);
    }

    #[test]
    fn tiny_frames_are_rejected() {
        assert!(blurriness(&Frame::filled(1, 5, [0.0; 3])).is_err());
    }

    #[test]
    fn kernel_widths_must_be_odd() {
        assert!(BlurKernel::new([2, 1], [1, 1]).is_err());
        assert!(BlurKernel::new([1, 1], [0, 1]).is_err());
        let j = serde_json::to_string(&k([13, 3], [13, 1])).unwrap();
        assert_eq!(j, r#"{"pass1":[13,3],"pass2":[13,1]}"#);
        assert_eq!(serde_json::from_str::<BlurKernel>(&j).unwrap(), k([13, 3], [13, 1]));
        assert!(serde_json::from_str::<BlurKernel>(r#"{"pass1":[4,3],"pass2":[1,1]}"#).is_err());
    }

    #[test]
    fn identity_kernel_is_a_no_op() {
        let img = noise(10, 7, 1);
        assert_eq!(box_blur(&img, &BlurKernel::IDENTITY), img);
    }

    #[test]
    fn two_width_three_passes_give_a_triangle() {
        let img = Frame::from_fn(11, 3, |x, _| if x == 5 { [9.0; 3] } else { [0.0; 3] });
        let out = box_blur(&img, &k([3, 1], [3, 1]));
        let row: Vec<f32> = (3..8).map(|x| out.pixel(x, 1)[0]).collect();
        for (got, want) in row.iter().zip([1.0, 2.0, 3.0, 2.0, 1.0]) {
            assert!((got - want).abs() < 1e-5, "{row:?}");
        }
        assert_eq!(out.pixel(2, 1)[0], 0.0);
    }

    #[test]
    fn anisotropic_kernel_is_applied() {
        let img = Frame::from_fn(31, 31, |x, y| if (x, y) == (15, 15) { [169.0; 3] } else { [0.0; 3] });
        let out = box_blur(&img, &k([13, 3], [13, 1]));
        // Horizontal support 25, vertical support 3.
        assert!(out.pixel(15 + 12, 15)[0] > 0.0 && out.pixel(15 + 13, 15)[0] == 0.0);
        assert!(out.pixel(15, 16)[0] > 0.0 && out.pixel(15, 17)[0] == 0.0);
        let sum: f32 = out.data().iter().sum::<f32>() / 3.0;
        assert!((sum - 169.0).abs() < 1e-3);
    }

    #[test]
    fn box_blur_preserves_mean() {
        let flat = Frame::filled(9, 9, [77.0, 3.0, 250.0]);
        assert_eq!(box_blur(&flat, &k([5, 7], [3, 9])), flat);
        let img = noise(64, 48, 9);
        let mean = |f: &Frame| f.data().iter().map(|&v| f64::from(v)).sum::<f64>() / f.data().len() as f64;
        let out = box_blur(&img, &k([9, 9], [9, 9]));
        assert!((mean(&out) - mean(&img)).abs() < 0.5);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn blurriness_falls_with_each_width(seed in 0u64..1000, axis in 0usize..2, part in 0usize..4) {
            let img = noise(40, 40, seed);
            let mut prev: Option<Blurriness> = None;
            for w in (1..=11).step_by(2) {
                let mut widths = [[1usize; 2]; 2];
                widths[part / 2][part % 2] = w;
                let b = blurriness(&box_blur(&img, &k(widths[0], widths[1]))).unwrap();
                if let Some(p) = prev {
                    let (now, before) = if axis == 0 { (b.bx, p.bx) } else { (b.by, p.by) };
                    prop_assert!(now <= before + 1e-9, "width {w}: {now} > {before}");
                }
                prev = Some(b);
            }
        }
    }

    #[test]
    fn same_image_needs_no_kernel() {
        let img = Texture::new(4).render(64, 48, 0.0, 0.0);
        assert!(estimate_blur_kernel(&img, &img).unwrap().is_identity());
    }

    #[test]
    fn blurrier_sharp_image_gets_identity() {
        let img = Texture::new(4).render(64, 48, 0.0, 0.0);
        let soft = box_blur(&img, &k([5, 5], [5, 5]));
        assert!(estimate_blur_kernel(&soft, &img).unwrap().is_identity());
    }

    #[test]
    fn recovers_synthetic_blur_per_axis() {
        let img = Texture::new(8).render(120, 90, 3.0, 1.0);
        for kstar in [k([5, 1], [5, 1]), k([9, 3], [9, 1]), k([3, 3], [3, 3])] {
            let target = box_blur(&img, &kstar);
            let est = estimate_blur_kernel(&img, &target).unwrap();
            let (got, want) = (
                blurriness(&box_blur(&img, &est)).unwrap(),
                blurriness(&target).unwrap(),
            );
            assert!((got.bx - want.bx).abs() <= 0.02 * want.bx, "{kstar} -> {est}");
            assert!((got.by - want.by).abs() <= 0.02 * want.by, "{kstar} -> {est}");
        }
    }

    #[test]
    fn match_blur_softens_the_sharper_frame() {
        let img = Texture::new(2).render(96, 64, 0.0, 0.0);
        let soft = box_blur(&img, &k([7, 1], [7, 1]));
        let m = match_blur(&img, &soft).unwrap();
        assert_eq!(m.blurred, Blurred::A);
        assert_eq!(m.b, soft);
        let (x, y) = (blurriness(&m.a).unwrap(), blurriness(&m.b).unwrap());
        assert!((x.total() - y.total()).abs() < 0.02 * y.total());

        let again = match_blur(&m.a, &m.b).unwrap();
        assert_eq!(again.blurred, Blurred::Neither);
        assert!(again.kernel.is_identity());

        let same = match_blur(&img, &img).unwrap();
        assert_eq!(same.blurred, Blurred::Neither);
        assert_eq!((same.a, same.b), (img.clone(), img));
    }

    #[test]
    fn match_blur_can_blur_b() {
        let img = Texture::new(2).render(64, 64, 0.0, 0.0);
        let soft = box_blur(&img, &k([1, 5], [1, 5]));
        let m = match_blur(&soft, &img).unwrap();
        assert_eq!(m.blurred, Blurred::B);
        assert_eq!(m.a, soft);
    }
}
