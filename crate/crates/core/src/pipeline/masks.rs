use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::seamcut::{Label, StrokeSet};
use crate::video::{format_frame_path, load_frame};

/// Hex SHA-256 of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// A sidecar file, relative to the project directory, with its content
/// hash.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRef {
    pub path: String,
    pub sha256: String,
}

impl FileRef {
    /// Writes `bytes` to `dir/path` and records their hash.
    pub fn write(dir: &Path, path: String, bytes: &[u8]) -> Result<Self> {
        let full = dir.join(&path);
        if let Some(parent) = full.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&full, bytes)?;
        Ok(Self {
            path,
            sha256: sha256_hex(bytes),
        })
    }

    /// Reads the file back, failing if its content changed.
    pub fn read(&self, dir: &Path) -> Result<Vec<u8>> {
        let full = dir.join(&self.path);
        let bytes = std::fs::read(&full).map_err(|e| {
            Error::Integrity(format!("cannot read sidecar {}: {e}", full.display()))
        })?;
        let got = sha256_hex(&bytes);
        if got != self.sha256 {
            return Err(Error::Integrity(format!(
                "sidecar {} has hash {got}, the project expects {}",
                full.display(),
                self.sha256
            )));
        }
        Ok(bytes)
    }
}

/// Encodes a row-major label frame as a 1-bit grayscale PNG, B white.
pub fn encode_label_png(labels: &[Label], width: usize, height: usize) -> Result<Vec<u8>> {
    assert_eq!(labels.len(), width * height, "label frame size");
    let stride = width.div_ceil(8);
    let mut packed = vec![0u8; stride * height];
    for (i, &l) in labels.iter().enumerate() {
        if l == Label::B {
            let (x, y) = (i % width, i / width);
            packed[y * stride + x / 8] |= 0x80 >> (x % 8);
        }
    }
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::One);
        let mut w = enc.write_header().map_err(png_error)?;
        w.write_image_data(&packed).map_err(png_error)?;
    }
    Ok(out)
}

fn png_error(e: impl std::fmt::Display) -> Error {
    Error::Integrity(format!("label mask PNG: {e}"))
}

pub fn decode_label_png(bytes: &[u8]) -> Result<(usize, usize, Vec<Label>)> {
    let dec = png::Decoder::new(std::io::Cursor::new(bytes));
    let mut reader = dec.read_info().map_err(png_error)?;
    let (width, height) = {
        let info = reader.info();
        if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::One {
            return Err(png_error(format!(
                "expected 1-bit grayscale, found {:?} {:?}",
                info.color_type, info.bit_depth
            )));
        }
        (info.width as usize, info.height as usize)
    };
    let mut buf = vec![0u8; reader.output_buffer_size().ok_or_else(|| png_error("image too large"))?];
    let out = reader.next_frame(&mut buf).map_err(png_error)?;
    let stride = out.line_size;
    let labels = (0..width * height)
        .map(|i| {
            let (x, y) = (i % width, i / width);
            if buf[y * stride + x / 8] & (0x80 >> (x % 8)) != 0 {
                Label::B
            } else {
                Label::A
            }
        })
        .collect();
    Ok((width, height, labels))
}

/// Reads per-frame stroke masks: pure red marks A, pure blue marks B, any
/// other color is ignored. Mask file `first + t` holds the strokes of frame
/// `t`; frames whose file does not exist carry no strokes.
pub fn import_stroke_masks(
    pattern: &str,
    first: usize,
    frames: usize,
    width: usize,
    height: usize,
) -> Result<StrokeSet> {
    let mut strokes = StrokeSet::new();
    let mut found = 0;
    for t in 0..frames {
        let path = format_frame_path(pattern, first + t)?;
        if !path.exists() {
            continue;
        }
        found += 1;
        let img = load_frame(&path).map_err(|reason| Error::Ingestion {
            index: t,
            path: path.clone(),
            reason,
        })?;
        if img.dims() != (width, height) {
            return Err(Error::Structural(format!(
                "stroke mask {} is {:?}, frames are {width}x{height}",
                path.display(),
                img.dims()
            )));
        }
        for y in 0..height {
            for x in 0..width {
                match img.pixel(x, y) {
                    [255.0, 0.0, 0.0] => strokes.set(t, x, y, Label::A),
                    [0.0, 0.0, 255.0] => strokes.set(t, x, y, Label::B),
                    _ => {}
                }
            }
        }
    }
    if found == 0 {
        log::warn!("no stroke mask matched {pattern}");
    }
    Ok(strokes)
}

/// Writes `value` as pretty JSON.
pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(f, value).map_err(|e| Error::Io(e.into()))
}

/// Reads JSON, reporting syntax and shape errors with their location.
pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let f = BufReader::new(File::open(path)?);
    serde_json::from_reader(f).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::video::{save_frame, Frame};

    #[test]
    fn label_png_round_trip() {
        let (w, h) = (13, 5);
        let labels: Vec<Label> = (0..w * h).map(|i| if (i * 7) % 5 < 2 { Label::B } else { Label::A }).collect();
        let bytes = encode_label_png(&labels, w, h).unwrap();
        assert_eq!(decode_label_png(&bytes).unwrap(), (w, h, labels));
    }

    #[test]
    fn label_png_is_one_bit() {
        let bytes = encode_label_png(&[Label::A; 64 * 64], 64, 64).unwrap();
        let img = image::load_from_memory(&bytes).unwrap();
        assert_eq!(img.color(), image::ColorType::L8);
        assert!(bytes.len() < 200);
    }

    #[test]
    fn rgb_png_is_rejected_as_label_mask() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.png");
        save_frame(&Frame::filled(2, 2, [0.0; 3]), &p).unwrap();
        assert!(decode_label_png(&std::fs::read(p).unwrap()).is_err());
    }

    #[test]
    fn sidecar_hash_is_checked() {
        let dir = tempfile::tempdir().unwrap();
        let r = FileRef::write(dir.path(), "sub/x.bin".into(), b"hello").unwrap();
        assert_eq!(r.read(dir.path()).unwrap(), b"hello");
        std::fs::write(dir.path().join("sub/x.bin"), b"hellO").unwrap();
        assert!(matches!(r.read(dir.path()), Err(Error::Integrity(_))));
    }

    #[test]
    fn stroke_masks_use_pure_red_and_blue() {
        let dir = tempfile::tempdir().unwrap();
        let f = Frame::from_fn(4, 2, |x, _| match x {
            0 => [255.0, 0.0, 0.0],
            1 => [0.0, 0.0, 255.0],
            2 => [250.0, 0.0, 0.0],
            _ => [0.0, 255.0, 0.0],
        });
        save_frame(&f, &dir.path().join("s_0001.png")).unwrap();
        let pattern = dir.path().join("s_%04d.png");
        let s = import_stroke_masks(pattern.to_str().unwrap(), 0, 3, 4, 2).unwrap();
        assert_eq!(s.len(), 4);
        assert!(s.entries.iter().all(|e| e.frame == 1 && e.x < 2));
        assert_eq!(s.entries.iter().filter(|e| e.label == Label::B).count(), 2);
        let shifted = import_stroke_masks(pattern.to_str().unwrap(), 1, 3, 4, 2).unwrap();
        assert!(shifted.entries.iter().all(|e| e.frame == 0));
        assert!(import_stroke_masks(pattern.to_str().unwrap(), 0, 3, 5, 2).is_err());
    }
}
