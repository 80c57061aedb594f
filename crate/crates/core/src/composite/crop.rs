use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::video::{Frame, ValidityMask};

/// Pixel bounds, left/top inclusive and right/bottom exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CropRect {
    pub left: usize,
    pub top: usize,
    pub right: usize,
    pub bottom: usize,
}

impl CropRect {
    pub fn new(left: usize, top: usize, right: usize, bottom: usize) -> Result<Self> {
        if left >= right || top >= bottom {
            return Err(Error::Crop(format!(
                "crop [{left}, {right}) x [{top}, {bottom}) is empty"
            )));
        }
        Ok(Self {
            left,
            top,
            right,
            bottom,
        })
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self {
            left: 0,
            top: 0,
            right: width,
            bottom: height,
        }
    }

    pub fn width(&self) -> usize {
        self.right - self.left
    }

    pub fn height(&self) -> usize {
        self.bottom - self.top
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        (self.left..self.right).contains(&x) && (self.top..self.bottom).contains(&y)
    }

    pub fn contains_rect(&self, other: &CropRect) -> bool {
        self.left <= other.left && self.top <= other.top && other.right <= self.right && other.bottom <= self.bottom
    }

    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        if self.left >= self.right || self.top >= self.bottom || self.right > width || self.bottom > height {
            return Err(Error::Crop(format!(
                "crop {self:?} does not fit a {width}x{height} frame"
            )));
        }
        Ok(())
    }

    pub fn apply(&self, frame: &Frame) -> Frame {
        frame.crop(self.left, self.top, self.right, self.bottom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Border {
    Left,
    Right,
    Top,
    Bottom,
}

/// Shrinks `rect` one line at a time until it holds no invalid pixel of
/// `mask`. Each round assigns every remaining empty pixel to its nearest
/// border (ties go left, right, top, bottom) and crops the border with the
/// most pixels.
pub fn shrink_crop(mask: &ValidityMask, mut rect: CropRect) -> Result<CropRect> {
    let (w, h) = mask.dims();
    rect.validate(w, h)?;
    let mut empty: Vec<(usize, usize)> = (rect.top..rect.bottom)
        .flat_map(|y| (rect.left..rect.right).map(move |x| (x, y)))
        .filter(|&(x, y)| !mask.get(x, y))
        .collect();
    loop {
        empty.retain(|&(x, y)| rect.contains(x, y));
        if empty.is_empty() {
            return Ok(rect);
        }
        let mut counts = [0usize; 4];
        for &(x, y) in &empty {
            let d = [x - rect.left, rect.right - 1 - x, y - rect.top, rect.bottom - 1 - y];
            let nearest = (0..4).min_by_key(|&i| d[i]).expect("four borders");
            counts[nearest] += 1;
        }
        let most = (0..4).rev().max_by_key(|&i| counts[i]).expect("four borders");
        match [Border::Left, Border::Right, Border::Top, Border::Bottom][most] {
            Border::Left => rect.left += 1,
            Border::Right => rect.right -= 1,
            Border::Top => rect.top += 1,
            Border::Bottom => rect.bottom -= 1,
        }
        if rect.left >= rect.right || rect.top >= rect.bottom {
            return Err(Error::Crop(
                "every crop of the sequence contains missing pixels; the frames share no fully covered region".into(),
            ));
        }
    }
}

/// Crop valid over the whole sequence: each frame shrinks the rectangle left
/// by the previous one. `masks` mark pixels that have data.
pub fn greedy_crop(masks: &[ValidityMask]) -> Result<CropRect> {
    let first = masks.first().ok_or_else(|| Error::Crop("no frames to crop".into()))?;
    let (w, h) = first.dims();
    let mut rect = CropRect::full(w, h);
    for (t, m) in masks.iter().enumerate() {
        if m.dims() != (w, h) {
            return Err(Error::Structural(format!(
                "mask {t} is {:?}, expected {:?}",
                m.dims(),
                (w, h)
            )));
        }
        rect = shrink_crop(m, rect).map_err(|e| match e {
            Error::Crop(msg) => Error::Crop(format!("frame {t}: {msg}")),
            other => other,
        })?;
    }
    Ok(rect)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_mask_keeps_the_frame() {
        let m = vec![ValidityMask::new(9, 4, true); 3];
        assert_eq!(greedy_crop(&m).unwrap(), CropRect::full(9, 4));
    }

    #[test]
    fn right_columns_are_removed() {
        let m = ValidityMask::from_fn(20, 10, |x, _| x < 17);
        assert_eq!(greedy_crop(&[m.clone(), m]).unwrap(), CropRect::new(0, 0, 17, 10).unwrap());
    }

    #[test]
    fn rectangle_only_shrinks_across_frames() {
        let a = ValidityMask::from_fn(12, 8, |x, _| x >= 2);
        let b = ValidityMask::from_fn(12, 8, |_, y| y < 6);
        let r1 = shrink_crop(&a, CropRect::full(12, 8)).unwrap();
        let r2 = greedy_crop(&[a, b]).unwrap();
        assert_eq!(r1, CropRect::new(2, 0, 12, 8).unwrap());
        assert_eq!(r2, CropRect::new(2, 0, 12, 6).unwrap());
        assert!(r1.contains_rect(&r2));
    }

    #[test]
    fn corner_tie_goes_left() {
        let mut m = ValidityMask::new(6, 6, true);
        m.set(0, 0, false);
        assert_eq!(greedy_crop(&[m]).unwrap(), CropRect::new(1, 0, 6, 6).unwrap());
    }

    #[test]
    fn interior_hole_is_cropped_away() {
        let mut m = ValidityMask::new(10, 10, true);
        m.set(2, 5, false);
        let r = greedy_crop(&[m.clone()]).unwrap();
        assert!(!r.contains(2, 5));
        assert_eq!(r, CropRect::new(3, 0, 10, 10).unwrap());
    }

    #[test]
    fn nothing_valid_is_a_crop_error() {
        let m = ValidityMask::new(4, 4, false);
        let err = greedy_crop(&[ValidityMask::new(4, 4, true), m]).unwrap_err();
        assert!(matches!(err, Error::Crop(_)));
        assert!(err.to_string().contains("frame 1"));
        assert!(greedy_crop(&[]).is_err());
    }

    #[test]
    fn rect_checks() {
        assert!(CropRect::new(3, 0, 3, 4).is_err());
        assert!(CropRect::new(0, 0, 5, 5).unwrap().validate(4, 5).is_err());
        let r = CropRect::new(1, 2, 4, 3).unwrap();
        assert_eq!((r.width(), r.height(), r.area()), (3, 1, 3));
        let f = Frame::from_fn(5, 4, |x, y| [x as f32, y as f32, 0.0]);
        let c = r.apply(&f);
        assert_eq!(c.dims(), (3, 1));
        assert_eq!(c.pixel(0, 0), [1.0, 2.0, 0.0]);
        let j = serde_json::to_string(&r).unwrap();
        assert_eq!(j, r#"{"left":1,"top":2,"right":4,"bottom":3}"#);
    }
}
