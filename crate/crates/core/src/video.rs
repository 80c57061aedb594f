//! Frame buffers, clips, pyramids, warps and difference maps.
//!
//! Pixels are stored as row-major interleaved RGB `f32` in the 0..=255
//! range. Conversion to 8-bit happens only when reading or writing files.

use std::path::{Path, PathBuf};

use image::{ImageReader, RgbImage};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::homography::Homography;

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Frame {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Structural(format!(
                "frame dimensions must be positive, got {width}x{height}"
            )));
        }
        if data.len() != width * height * 3 {
            return Err(Error::Structural(format!(
                "frame {width}x{height} needs {} samples, got {}",
                width * height * 3,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Structural("frame contains non-finite samples".into()));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        assert!(width > 0 && height > 0, "empty frame");
        let data = (0..width * height).flat_map(|_| rgb).collect();
        Self {
            width,
            height,
            data,
        }
    }

    /// Builds a frame by evaluating `f(x, y)` at every pixel.
    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> [f32; 3]) -> Self {
        assert!(width > 0 && height > 0, "empty frame");
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_rgb8(img: &RgbImage) -> Self {
        let (w, h) = img.dimensions();
        Self {
            width: w as usize,
            height: h as usize,
            data: img.as_raw().iter().map(|&v| f32::from(v)).collect(),
        }
    }

    pub fn to_rgb8(&self) -> RgbImage {
        let raw = self.data.iter().map(|&v| quantize(v)).collect();
        RgbImage::from_raw(self.width as u32, self.height as u32, raw)
            .expect("buffer length matches dimensions")
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Copies out the sub-rectangle `[left, right) x [top, bottom)`.
    pub fn crop(&self, left: usize, top: usize, right: usize, bottom: usize) -> Frame {
        assert!(left < right && right <= self.width && top < bottom && bottom <= self.height);
        let w = right - left;
        let mut data = Vec::with_capacity(w * (bottom - top) * 3);
        for y in top..bottom {
            let start = (y * self.width + left) * 3;
            data.extend_from_slice(&self.data[start..start + w * 3]);
        }
        Frame {
            width: w,
            height: bottom - top,
            data,
        }
    }

    /// Bilinear sample at continuous pixel coordinates (pixel centers sit on
    /// integers). Returns `None` outside `[0, w-1] x [0, h-1]`.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> Option<[f32; 3]> {
        const EPS: f64 = 1e-6;
        let max_x = (self.width - 1) as f64;
        let max_y = (self.height - 1) as f64;
        if !(x >= -EPS && y >= -EPS && x <= max_x + EPS && y <= max_y + EPS) {
            return None;
        }
        let x = x.clamp(0.0, max_x);
        let y = y.clamp(0.0, max_y);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = (x - x0 as f64) as f32;
        let fy = (y - y0 as f64) as f32;
        let p00 = self.pixel(x0, y0);
        let p10 = self.pixel(x1, y0);
        let p01 = self.pixel(x0, y1);
        let p11 = self.pixel(x1, y1);
        let mut out = [0.0f32; 3];
        for c in 0..3 {
            let top = p00[c] * (1.0 - fx) + p10[c] * fx;
            let bottom = p01[c] * (1.0 - fx) + p11[c] * fx;
            out[c] = top * (1.0 - fy) + bottom * fy;
        }
        Some(out)
    }
}

#[inline]
pub(crate) fn quantize(v: f32) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoClip {
    frames: Vec<Frame>,
}

impl VideoClip {
    pub fn new(frames: Vec<Frame>) -> Result<Self> {
        let Some(first) = frames.first() else {
            return Err(Error::Structural("a clip needs at least one frame".into()));
        };
        let dims = first.dims();
        if let Some((i, f)) = frames.iter().enumerate().find(|(_, f)| f.dims() != dims) {
            return Err(Error::Structural(format!(
                "frame {i} is {}x{}, expected {}x{}",
                f.width, f.height, dims.0, dims.1
            )));
        }
        Ok(Self { frames })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        self.frames[0].dims()
    }

    #[inline]
    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    #[inline]
    pub fn frame(&self, t: usize) -> &Frame {
        &self.frames[t]
    }

    pub fn into_frames(self) -> Vec<Frame> {
        self.frames
    }

    /// Frames `[start, end)` as a new clip.
    pub fn slice(&self, start: usize, end: usize) -> Result<VideoClip> {
        if start >= end || end > self.len() {
            return Err(Error::Structural(format!(
                "frame range {start}..{end} outside clip of {} frames",
                self.len()
            )));
        }
        VideoClip::new(self.frames[start..end].to_vec())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidityMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl ValidityMask {
    pub fn new(width: usize, height: usize, value: bool) -> Self {
        Self {
            width,
            height,
            bits: vec![value; width * height],
        }
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::Structural(format!(
                "mask {width}x{height} needs {} bits, got {}",
                width * height,
                bits.len()
            )));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            bits,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    #[inline]
    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count_valid(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn all_valid(&self) -> bool {
        self.bits.iter().all(|&b| b)
    }
}

/// Per-frame squared RGB distance between two aligned clips.
#[derive(Debug, Clone, PartialEq)]
pub struct DifferenceVolume {
    width: usize,
    height: usize,
    frames: Vec<Vec<f32>>,
}

impl DifferenceVolume {
    pub fn new(width: usize, height: usize, frames: Vec<Vec<f32>>) -> Result<Self> {
        if frames.is_empty() || frames.iter().any(|f| f.len() != width * height) {
            return Err(Error::Structural(
                "difference volume frames must be non-empty and match the dimensions".into(),
            ));
        }
        if frames.iter().flatten().any(|&v| !(v >= 0.0)) {
            return Err(Error::Structural(
                "difference values must be finite and non-negative".into(),
            ));
        }
        Ok(Self {
            width,
            height,
            frames,
        })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, t: usize) -> f32 {
        self.frames[t][y * self.width + x]
    }

    #[inline]
    pub fn frame(&self, t: usize) -> &[f32] {
        &self.frames[t]
    }

    pub fn frames(&self) -> &[Vec<f32>] {
        &self.frames
    }
}

/// Expands a printf-style integer pattern such as `frame_%04d.png`.
pub fn format_frame_path(pattern: &str, index: usize) -> Result<PathBuf> {
    let mut out = String::with_capacity(pattern.len() + 8);
    let mut chars = pattern.chars().peekable();
    let mut substituted = false;
    while let Some(c) = chars.next() {
        if c != '%' {
            out.push(c);
            continue;
        }
        if chars.peek() == Some(&'%') {
            chars.next();
            out.push('%');
            continue;
        }
        let mut zero = false;
        let mut width = 0usize;
        if chars.peek() == Some(&'0') {
            zero = true;
            chars.next();
        }
        while let Some(d) = chars.peek().and_then(|c| c.to_digit(10)) {
            width = width * 10 + d as usize;
            chars.next();
        }
        match chars.next() {
            Some('d') | Some('u') | Some('i') => {
                if zero {
                    out.push_str(&format!("{index:0width$}"));
                } else {
                    out.push_str(&format!("{index:width$}"));
                }
                substituted = true;
            }
            other => {
                return Err(Error::Config(format!(
                    "unsupported conversion {other:?} in frame pattern {pattern:?}"
                )))
            }
        }
    }
    if !substituted {
        return Err(Error::Config(format!(
            "frame pattern {pattern:?} has no integer conversion"
        )));
    }
    Ok(PathBuf::from(out))
}

pub fn load_frame(path: &Path) -> std::result::Result<Frame, String> {
    let img = ImageReader::open(path)
        .map_err(|e| e.to_string())?
        .with_guessed_format()
        .map_err(|e| e.to_string())?
        .decode()
        .map_err(|e| e.to_string())?;
    Ok(Frame::from_rgb8(&img.to_rgb8()))
}

/// Loads frames `first..=last` of a numbered image sequence.
pub fn load_frame_sequence(pattern: &str, first: usize, last: usize) -> Result<VideoClip> {
    if last < first {
        return Err(Error::Config(format!("empty frame range {first}..{last}")));
    }
    let paths = (first..=last)
        .map(|i| format_frame_path(pattern, i).map(|p| (i, p)))
        .collect::<Result<Vec<_>>>()?;
    let frames = paths
        .par_iter()
        .map(|(i, path)| {
            load_frame(path).map_err(|reason| Error::Ingestion {
                index: *i,
                path: path.clone(),
                reason,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    VideoClip::new(frames)
}

pub fn save_frame(frame: &Frame, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    frame.to_rgb8().save(path)?;
    Ok(())
}

/// PNG bytes of a frame, as [`save_frame`] would write them.
pub fn encode_png(frame: &Frame) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    frame
        .to_rgb8()
        .write_to(&mut std::io::Cursor::new(&mut out), image::ImageFormat::Png)?;
    Ok(out)
}

/// Writes a clip as a numbered sequence starting at `first`.
pub fn save_frame_sequence(clip: &VideoClip, pattern: &str, first: usize) -> Result<Vec<PathBuf>> {
    let paths = (0..clip.len())
        .map(|i| format_frame_path(pattern, first + i))
        .collect::<Result<Vec<_>>>()?;
    paths
        .par_iter()
        .zip(clip.frames().par_iter())
        .try_for_each(|(p, f)| save_frame(f, p))?;
    Ok(paths)
}

/// Halves both dimensions by 2x2 box averaging. Edge blocks average only the
/// pixels that exist, so odd sizes round up.
pub fn downsample2(frame: &Frame) -> Frame {
    let (w, h) = frame.dims();
    if w == 1 && h == 1 {
        return frame.clone();
    }
    let cw = w.div_ceil(2);
    let ch = h.div_ceil(2);
    let mut data = vec![0.0f32; cw * ch * 3];
    data.par_chunks_mut(cw * 3).enumerate().for_each(|(cy, row)| {
        let y0 = cy * 2;
        let y1 = (y0 + 2).min(h);
        for cx in 0..cw {
            let x0 = cx * 2;
            let x1 = (x0 + 2).min(w);
            let mut acc = [0.0f32; 3];
            for y in y0..y1 {
                for x in x0..x1 {
                    let p = frame.pixel(x, y);
                    for c in 0..3 {
                        acc[c] += p[c];
                    }
                }
            }
            let n = ((y1 - y0) * (x1 - x0)) as f32;
            for c in 0..3 {
                row[cx * 3 + c] = acc[c] / n;
            }
        }
    });
    Frame {
        width: cw,
        height: ch,
        data,
    }
}

/// Halves the frame count by averaging consecutive pairs; an unpaired last
/// frame passes through unchanged.
pub fn downsample2_temporal(clip: &VideoClip) -> VideoClip {
    let frames = clip
        .frames()
        .par_chunks(2)
        .map(|pair| match pair {
            [a, b] => Frame {
                width: a.width,
                height: a.height,
                data: a
                    .data
                    .iter()
                    .zip(&b.data)
                    .map(|(&p, &q)| (p + q) * 0.5)
                    .collect(),
            },
            [a] => a.clone(),
            _ => unreachable!(),
        })
        .collect();
    VideoClip { frames }
}

/// Spatial 2x downsampling of a mask: a coarse pixel is valid only if every
/// fine pixel it covers is valid.
pub fn downsample_mask(mask: &ValidityMask) -> ValidityMask {
    let (w, h) = mask.dims();
    let cw = w.div_ceil(2);
    let ch = h.div_ceil(2);
    ValidityMask::from_fn(cw, ch, |cx, cy| {
        let mut all = true;
        for y in cy * 2..(cy * 2 + 2).min(h) {
            for x in cx * 2..(cx * 2 + 2).min(w) {
                all &= mask.get(x, y);
            }
        }
        all
    })
}

/// Temporal pairing for masks, matching [`downsample2_temporal`].
pub fn downsample_masks_temporal(masks: &[ValidityMask]) -> Vec<ValidityMask> {
    masks
        .chunks(2)
        .map(|pair| match pair {
            [a, b] => ValidityMask {
                width: a.width,
                height: a.height,
                bits: a.bits.iter().zip(&b.bits).map(|(&p, &q)| p && q).collect(),
            },
            [a] => a.clone(),
            _ => unreachable!(),
        })
        .collect()
}

/// Warps `frame` so that `output(p) = frame(h^-1 p)`, with bilinear sampling.
/// Pixels whose preimage falls outside the input are zero and masked false.
pub fn warp_frame(frame: &Frame, h: &Homography) -> Result<(Frame, ValidityMask)> {
    let inv = h.inverse()?;
    let (w, hgt) = frame.dims();
    let mut data = vec![0.0f32; w * hgt * 3];
    let mut bits = vec![false; w * hgt];
    data.par_chunks_mut(w * 3)
        .zip(bits.par_chunks_mut(w))
        .enumerate()
        .for_each(|(y, (row, valid))| {
            for x in 0..w {
                let (sx, sy) = inv.apply(x as f64, y as f64);
                if let Some(p) = frame.sample_bilinear(sx, sy) {
                    row[x * 3..x * 3 + 3].copy_from_slice(&p);
                    valid[x] = true;
                }
            }
        });
    Ok((
        Frame {
            width: w,
            height: hgt,
            data,
        },
        ValidityMask {
            width: w,
            height: hgt,
            bits,
        },
    ))
}

/// Squared RGB distance where both inputs are valid, zero elsewhere.
pub fn difference_frame(a: &Frame, b: &Frame, mask: &ValidityMask) -> Result<Vec<f32>> {
    if a.dims() != b.dims() || a.dims() != mask.dims() {
        return Err(Error::Structural(format!(
            "difference inputs differ in size: {:?}, {:?}, mask {:?}",
            a.dims(),
            b.dims(),
            mask.dims()
        )));
    }
    Ok(a.data
        .chunks_exact(3)
        .zip(b.data.chunks_exact(3))
        .zip(&mask.bits)
        .map(|((p, q), &valid)| {
            if valid {
                let d0 = p[0] - q[0];
                let d1 = p[1] - q[1];
                let d2 = p[2] - q[2];
                d0 * d0 + d1 * d1 + d2 * d2
            } else {
                0.0
            }
        })
        .collect())
}

pub fn difference_volume(
    a: &VideoClip,
    b_warped: &VideoClip,
    masks: &[ValidityMask],
) -> Result<DifferenceVolume> {
    if a.len() != b_warped.len() || a.len() != masks.len() {
        return Err(Error::Structural(format!(
            "difference volume needs equal frame counts: {} / {} / {} masks",
            a.len(),
            b_warped.len(),
            masks.len()
        )));
    }
    let frames = a
        .frames()
        .par_iter()
        .zip(b_warped.frames().par_iter())
        .zip(masks.par_iter())
        .map(|((fa, fb), m)| difference_frame(fa, fb, m))
        .collect::<Result<Vec<_>>>()?;
    let (w, h) = a.dims();
    Ok(DifferenceVolume {
        width: w,
        height: h,
        frames,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gray(w: usize, h: usize, vals: &[f32]) -> Frame {
        Frame::new(w, h, vals.iter().flat_map(|&v| [v, v, v]).collect()).unwrap()
    }

    #[test]
    fn frame_rejects_bad_shapes() {
        assert!(Frame::new(0, 2, vec![]).is_err());
        assert!(Frame::new(2, 2, vec![0.0; 11]).is_err());
        assert!(Frame::new(1, 1, vec![f32::NAN, 0.0, 0.0]).is_err());
    }

    #[test]
    fn pattern_expansion() {
        assert_eq!(format_frame_path("f%04d.png", 7).unwrap(), PathBuf::from("f0007.png"));
        assert_eq!(format_frame_path("a_%d.ppm", 12).unwrap(), PathBuf::from("a_12.ppm"));
        assert_eq!(format_frame_path("x%3d", 5).unwrap(), PathBuf::from("x  5"));
        assert_eq!(format_frame_path("100%%_%02d", 3).unwrap(), PathBuf::from("100%_03"));
        assert!(format_frame_path("plain.png", 1).is_err());
        assert!(format_frame_path("f%s.png", 1).is_err());
    }

    #[test]
    fn load_single_frame_sequence() {
        let dir = tempfile::tempdir().unwrap();
        let pattern = dir.path().join("f%04d.png");
        let pattern = pattern.to_str().unwrap();
        let f = gray(2, 2, &[10.0, 20.0, 30.0, 40.0]);
        save_frame(&f, &format_frame_path(pattern, 0).unwrap()).unwrap();
        let clip = load_frame_sequence(pattern, 0, 0).unwrap();
        assert_eq!(clip.len(), 1);
        assert_eq!(clip.dims(), (2, 2));
        assert_eq!(clip.frame(0), &f);
    }

    #[test]
    fn load_sequence_reports_missing_index() {
        let dir = tempfile::tempdir().unwrap();
        let pattern = dir.path().join("f%04d.ppm");
        let pattern = pattern.to_str().unwrap();
        let f = gray(3, 2, &[1.0; 6]);
        for i in 0..10 {
            if i != 5 {
                save_frame(&f, &format_frame_path(pattern, i).unwrap()).unwrap();
            }
        }
        match load_frame_sequence(pattern, 0, 9) {
            Err(Error::Ingestion { index, .. }) => assert_eq!(index, 5),
            other => panic!("expected ingestion error, got {other:?}"),
        }
    }

    #[test]
    fn load_sequence_dimension_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let pattern = dir.path().join("f%02d.png");
        let pattern = pattern.to_str().unwrap();
        save_frame(&gray(2, 2, &[0.0; 4]), &format_frame_path(pattern, 0).unwrap()).unwrap();
        save_frame(&gray(3, 2, &[0.0; 6]), &format_frame_path(pattern, 1).unwrap()).unwrap();
        assert!(matches!(
            load_frame_sequence(pattern, 0, 1),
            Err(Error::Structural(_))
        ));
    }

    #[test]
    fn load_ten_hd_frames() {
        let dir = tempfile::tempdir().unwrap();
        let pattern = dir.path().join("hd_%03d.ppm");
        let pattern = pattern.to_str().unwrap();
        let f = Frame::filled(1920, 1080, [12.0, 34.0, 56.0]);
        let clip = VideoClip::new(vec![f; 10]).unwrap();
        save_frame_sequence(&clip, pattern, 0).unwrap();
        let loaded = load_frame_sequence(pattern, 0, 9).unwrap();
        assert_eq!(loaded.len(), 10);
        assert_eq!(loaded.dims(), (1920, 1080));
    }

    #[test]
    fn downsample_constant_and_mean() {
        let f = gray(2, 2, &[7.0; 4]);
        let d = downsample2(&f);
        assert_eq!(d.dims(), (1, 1));
        assert_eq!(d.pixel(0, 0), [7.0; 3]);

        let f = gray(2, 2, &[0.0, 0.0, 255.0, 255.0]);
        assert_eq!(downsample2(&f).pixel(0, 0), [127.5; 3]);

        let one = gray(1, 1, &[3.0]);
        assert_eq!(downsample2(&one), one);
    }

    #[test]
    fn downsample_odd_edges() {
        // 3x3 grid with values 0..9: output corners average whatever exists.
        let vals: Vec<f32> = (0..9).map(|v| v as f32).collect();
        let d = downsample2(&gray(3, 3, &vals));
        assert_eq!(d.dims(), (2, 2));
        assert_eq!(d.pixel(0, 0)[0], (0.0 + 1.0 + 3.0 + 4.0) / 4.0);
        assert_eq!(d.pixel(1, 0)[0], (2.0 + 5.0) / 2.0);
        assert_eq!(d.pixel(0, 1)[0], (6.0 + 7.0) / 2.0);
        assert_eq!(d.pixel(1, 1)[0], 8.0);
    }

    #[test]
    fn temporal_downsampling() {
        let c = |v: f32| gray(2, 2, &[v; 4]);
        let clip = VideoClip::new(vec![c(5.0), c(5.0)]).unwrap();
        let d = downsample2_temporal(&clip);
        assert_eq!(d.len(), 1);
        assert_eq!(d.frame(0), &c(5.0));

        let clip = VideoClip::new(vec![c(0.0); 4]).unwrap();
        assert_eq!(downsample2_temporal(&clip).len(), 2);

        let clip = VideoClip::new(vec![c(0.0), c(100.0), c(200.0)]).unwrap();
        let d = downsample2_temporal(&clip);
        assert_eq!(d.frames(), &[c(50.0), c(200.0)]);
    }

    #[test]
    fn identity_warp_is_exact() {
        let f = Frame::from_fn(7, 5, |x, y| [x as f32 * 3.1, y as f32 * 7.7, (x * y) as f32]);
        let (out, mask) = warp_frame(&f, &Homography::identity()).unwrap();
        assert_eq!(out, f);
        assert!(mask.all_valid());
    }

    #[test]
    fn translation_warp_masks_uncovered_columns() {
        let f = Frame::filled(10, 10, [1.0, 2.0, 3.0]);
        let (_, mask) = warp_frame(&f, &Homography::translation(5.0, 0.0)).unwrap();
        for y in 0..10 {
            for x in 0..10 {
                assert_eq!(mask.get(x, y), x >= 5, "({x},{y})");
            }
        }
    }

    #[test]
    fn scale_warp_matches_nearest_neighbour_at_integer_preimages() {
        let checker = Frame::from_fn(16, 16, |x, y| {
            let v = if (x / 2 + y / 2) % 2 == 0 { 255.0 } else { 0.0 };
            [v, v, v]
        });
        let h = Homography::scale(2.0);
        let (out, mask) = warp_frame(&checker, &h).unwrap();
        // Independent nearest-neighbour warp evaluated where the preimage is
        // an exact pixel center.
        for y in (0..16).step_by(2) {
            for x in (0..16).step_by(2) {
                let (sx, sy) = (x / 2, y / 2);
                assert!(mask.get(x, y));
                assert_eq!(out.pixel(x, y), checker.pixel(sx, sy));
            }
        }
    }

    #[test]
    fn singular_warp_fails() {
        let f = Frame::filled(4, 4, [0.0; 3]);
        let h = Homography::from_row_major([1.0, 2.0, 0.0, 2.0, 4.0, 0.0, 0.0, 0.0, 1.0]);
        assert!(matches!(warp_frame(&f, &h), Err(Error::Model(_))));
    }

    #[test]
    fn warp_round_trip_on_gradient() {
        let f = Frame::from_fn(64, 48, |x, y| {
            let v = x as f32 * 2.0 + y as f32 * 1.5;
            [v, 255.0 - v, v * 0.5]
        });
        let h = Homography::from_row_major([
            1.02, 0.03, 1.7, -0.02, 0.99, -2.3, 1e-4, -5e-5, 1.0,
        ]);
        let (fwd, _) = warp_frame(&f, &h).unwrap();
        let (back, mask) = warp_frame(&fwd, &h.inverse().unwrap()).unwrap();
        for y in 6..42 {
            for x in 6..58 {
                assert!(mask.get(x, y));
                let p = back.pixel(x, y);
                let q = f.pixel(x, y);
                for c in 0..3 {
                    assert!((p[c] - q[c]).abs() <= 2.0, "({x},{y}) {p:?} vs {q:?}");
                }
            }
        }
    }

    #[test]
    fn difference_cases() {
        let black = Frame::filled(3, 2, [0.0; 3]);
        let white = Frame::filled(3, 2, [255.0; 3]);
        let a = VideoClip::new(vec![black.clone()]).unwrap();
        let b = VideoClip::new(vec![white]).unwrap();
        let full = vec![ValidityMask::new(3, 2, true)];
        let none = vec![ValidityMask::new(3, 2, false)];

        let same = difference_volume(&a, &a, &full).unwrap();
        assert!(same.frame(0).iter().all(|&v| v == 0.0));

        let d = difference_volume(&a, &b, &full).unwrap();
        assert!(d.frame(0).iter().all(|&v| v == 195075.0));

        let d = difference_volume(&a, &b, &none).unwrap();
        assert!(d.frame(0).iter().all(|&v| v == 0.0));

        let short = VideoClip::new(vec![black.clone(), black]).unwrap();
        assert!(matches!(
            difference_volume(&a, &short, &full),
            Err(Error::Structural(_))
        ));
    }
}
