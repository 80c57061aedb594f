use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::masks::{decode_label_png, encode_label_png, read_json, write_json, FileRef};
use crate::align::{AlignParams, AlignmentTrack};
use crate::appearance::{BlurKernel, Blurred, ColorLUT, ColorParams};
use crate::composite::CropRect;
use crate::error::{Error, Result};
use crate::seamcut::{Keyframe, Label, LabelVolume, SeamParams, StrokeSet};
use crate::video::{format_frame_path, load_frame, Frame};

/// Newest project file layout this build reads and the one it writes.
pub const SCHEMA_VERSION: u32 = 1;

/// A numbered image sequence, frames `first..=last`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipSource {
    pub pattern: String,
    pub first: usize,
    pub last: usize,
}

impl ClipSource {
    pub fn len(&self) -> usize {
        self.last + 1 - self.first
    }

    pub fn is_empty(&self) -> bool {
        self.last < self.first
    }

    /// Finds the contiguous run of existing frames starting at index 0 or 1.
    pub fn discover(pattern: &str) -> Result<Self> {
        let exists = |i| format_frame_path(pattern, i).map(|p| p.exists());
        let first = if exists(0)? {
            0
        } else if exists(1)? {
            1
        } else {
            return Err(Error::Config(format!("no frame 0 or 1 matches {pattern:?}")));
        };
        let mut last = first;
        while exists(last + 1)? {
            last += 1;
        }
        Ok(Self {
            pattern: pattern.into(),
            first,
            last,
        })
    }

    /// Pattern resolved against the project directory.
    pub fn resolved(&self, base: &Path) -> String {
        if Path::new(&self.pattern).is_absolute() {
            self.pattern.clone()
        } else {
            base.join(&self.pattern).to_string_lossy().into_owned()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BlurSettings {
    pub enabled: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColorSettings {
    pub enabled: bool,
    #[serde(flatten)]
    pub params: ColorParams,
    /// Last output frame where the takes show the same content; the LUT
    /// fades out after it.
    #[serde(default)]
    pub overlap_end: Option<usize>,
}

impl Default for ColorSettings {
    fn default() -> Self {
        Self {
            enabled: false,
            params: ColorParams::default(),
            overlap_end: None,
        }
    }
}

pub const DEFAULT_BLEND_WIDTH: u32 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub align: AlignParams,
    /// Output frame used as the alignment anchor; the middle one if unset.
    pub anchor: Option<usize>,
    pub blur: BlurSettings,
    pub color: ColorSettings,
    pub seam: SeamParams,
    pub blend_width: u32,
}

impl Default for Params {
    fn default() -> Self {
        Self {
            align: AlignParams::default(),
            anchor: None,
            blur: BlurSettings::default(),
            color: ColorSettings::default(),
            seam: SeamParams::default(),
            blend_width: DEFAULT_BLEND_WIDTH,
        }
    }
}

/// A cached artifact with the stamp of the inputs it was computed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stamped<T> {
    pub stamp: String,
    pub value: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlurState {
    pub kernel: BlurKernel,
    pub blurred: Blurred,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Cache {
    pub track: Option<Stamped<AlignmentTrack>>,
    pub blur: Option<Stamped<BlurState>>,
    pub lut: Option<Stamped<ColorLUT>>,
    pub labels: Option<Stamped<LabelVolume>>,
    pub crop: Option<Stamped<CropRect>>,
}

/// Everything needed to reproduce a composite.
#[derive(Debug, Clone, PartialEq)]
pub struct Project {
    pub a: ClipSource,
    pub b: ClipSource,
    /// Frame size shared by both takes, `(width, height)`.
    pub frame_size: (usize, usize),
    /// B frame `j` lines up with A frame `j + offset`.
    pub offset: i64,
    /// Painted constraints; frame indices count A frames.
    pub strokes: StrokeSet,
    /// Frozen labelings; frame indices count A frames.
    pub keyframes: Vec<Keyframe>,
    pub params: Params,
    /// Alignment replacing the computed one, from a band realignment.
    pub realign: Option<AlignmentTrack>,
    pub cache: Cache,
}

impl Project {
    pub fn new(a: ClipSource, b: ClipSource, frame_size: (usize, usize), offset: i64) -> Self {
        Self {
            a,
            b,
            frame_size,
            offset,
            strokes: StrokeSet::new(),
            keyframes: Vec::new(),
            params: Params::default(),
            realign: None,
            cache: Cache::default(),
        }
    }

    /// Project over two image sequences on disk, reading the frame size
    /// from A's first frame. Patterns are stored as given.
    pub fn from_patterns(a_pattern: &str, b_pattern: &str, offset: i64, base: &Path) -> Result<Self> {
        let resolve = |p: &str| {
            if Path::new(p).is_absolute() {
                p.to_string()
            } else {
                base.join(p).to_string_lossy().into_owned()
            }
        };
        let mut a = ClipSource::discover(&resolve(a_pattern))?;
        let mut b = ClipSource::discover(&resolve(b_pattern))?;
        let first_frame = |c: &ClipSource| -> Result<Frame> {
            let path = format_frame_path(&c.pattern, c.first)?;
            load_frame(&path).map_err(|reason| Error::Ingestion {
                index: c.first,
                path,
                reason,
            })
        };
        let frame = first_frame(&a)?;
        let fb = first_frame(&b)?;
        if fb.dims() != frame.dims() {
            return Err(Error::Structural(format!(
                "take A frames are {:?}, take B frames are {:?}",
                frame.dims(),
                fb.dims()
            )));
        }
        a.pattern = a_pattern.into();
        b.pattern = b_pattern.into();
        let p = Self::new(a, b, frame.dims(), offset);
        p.overlap()?;
        Ok(p)
    }

    /// A frame range `lo..hi` that both takes cover at the current offset.
    pub fn overlap(&self) -> Result<(usize, usize)> {
        overlap(self.a.len(), self.b.len(), self.offset)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let side = sidecar_dir(path);
        let (w, h) = self.frame_size;
        let keyframes = self
            .keyframes
            .iter()
            .map(|k| {
                let png = encode_label_png(&k.labels, w, h)?;
                let mask = FileRef::write(dir, format!("{side}/keyframe_{:05}.png", k.frame), &png)?;
                Ok(KeyframeFile { frame: k.frame, mask })
            })
            .collect::<Result<Vec<_>>>()?;
        let realign = self
            .realign
            .as_ref()
            .map(|t| FileRef::write(dir, format!("{side}/realign.json"), &to_json(t)?))
            .transpose()?;
        let c = &self.cache;
        let track = c
            .track
            .as_ref()
            .map(|s| {
                let r = FileRef::write(dir, format!("{side}/track.json"), &to_json(&s.value)?)?;
                Ok::<_, Error>(Stamped {
                    stamp: s.stamp.clone(),
                    value: r,
                })
            })
            .transpose()?;
        let labels = c
            .labels
            .as_ref()
            .map(|s| {
                let v = &s.value;
                let masks = (0..v.frames())
                    .map(|t| {
                        let png = encode_label_png(v.frame(t), v.width(), v.height())?;
                        FileRef::write(dir, format!("{side}/labels_{t:05}.png"), &png)
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok::<_, Error>(Stamped {
                    stamp: s.stamp.clone(),
                    value: LabelsFile {
                        width: v.width(),
                        height: v.height(),
                        masks,
                    },
                })
            })
            .transpose()?;
        let file = ProjectFile {
            schema_version: SCHEMA_VERSION,
            a: self.a.clone(),
            b: self.b.clone(),
            frame_size: [w, h],
            offset: self.offset,
            strokes: StrokeRun::encode(&self.strokes),
            keyframes,
            params: self.params,
            realign,
            cache: CacheFile {
                track,
                blur: c.blur.clone(),
                lut: c.lut.clone(),
                labels,
                crop: c.crop.clone(),
            },
        };
        write_json(path, &file)
    }

    /// Reads a project, verifying every sidecar. Nothing is returned unless
    /// the whole file loads.
    pub fn load(path: &Path) -> Result<Self> {
        let probe: VersionProbe = read_json(path)?;
        let found = probe.schema_version.ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            column: 1,
            message: "missing schemaVersion".into(),
        })?;
        if found > SCHEMA_VERSION {
            return Err(Error::Upgrade {
                found,
                supported: SCHEMA_VERSION,
            });
        }
        let file: ProjectFile = read_json(path)?;
        let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let [w, h] = file.frame_size;
        let keyframes = file
            .keyframes
            .iter()
            .map(|k| {
                let (kw, kh, labels) = decode_label_png(&k.mask.read(dir)?)?;
                if (kw, kh) != (w, h) {
                    return Err(Error::Integrity(format!(
                        "keyframe {} mask is {kw}x{kh}, frames are {w}x{h}",
                        k.frame
                    )));
                }
                Ok(Keyframe { frame: k.frame, labels })
            })
            .collect::<Result<Vec<_>>>()?;
        let realign = file.realign.as_ref().map(|r| from_json(r, dir)).transpose()?;
        let c = file.cache;
        let track = c
            .track
            .map(|s| {
                Ok::<_, Error>(Stamped {
                    value: from_json(&s.value, dir)?,
                    stamp: s.stamp,
                })
            })
            .transpose()?;
        let labels = c
            .labels
            .map(|s| {
                let f = &s.value;
                let mut data = Vec::with_capacity(f.width * f.height * f.masks.len());
                for m in &f.masks {
                    let (mw, mh, l) = decode_label_png(&m.read(dir)?)?;
                    if (mw, mh) != (f.width, f.height) {
                        return Err(Error::Integrity(format!(
                            "label mask {} is {mw}x{mh}, expected {}x{}",
                            m.path, f.width, f.height
                        )));
                    }
                    data.extend(l);
                }
                Ok(Stamped {
                    value: LabelVolume::from_vec(f.width, f.height, f.masks.len(), data)?,
                    stamp: s.stamp,
                })
            })
            .transpose()?;
        Ok(Self {
            a: file.a,
            b: file.b,
            frame_size: (w, h),
            offset: file.offset,
            strokes: StrokeRun::decode(&file.strokes),
            keyframes,
            params: file.params,
            realign,
            cache: Cache {
                track,
                blur: c.blur,
                lut: c.lut,
                labels,
                crop: c.crop,
            },
        })
    }
}

/// Frames of A, `lo..hi`, that have a B partner `t - offset`.
pub fn overlap(a_len: usize, b_len: usize, offset: i64) -> Result<(usize, usize)> {
    let lo = offset.max(0);
    let hi = (a_len as i64).min(b_len as i64 + offset);
    if lo >= hi {
        return Err(Error::Config(format!(
            "offset {offset} leaves no overlap between {a_len} frames of A and {b_len} of B"
        )));
    }
    Ok((lo as usize, hi as usize))
}

fn sidecar_dir(path: &Path) -> String {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "project".into());
    format!("{stem}.data")
}

fn to_json<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    serde_json::to_vec(v).map_err(|e| Error::Io(e.into()))
}

fn from_json<T: serde::de::DeserializeOwned>(r: &FileRef, dir: &Path) -> Result<T> {
    let bytes = r.read(dir)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Parse {
        path: PathBuf::from(&r.path),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

#[derive(Deserialize)]
struct VersionProbe {
    #[serde(rename = "schemaVersion")]
    schema_version: Option<u32>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProjectFile {
    #[serde(rename = "schemaVersion")]
    schema_version: u32,
    a: ClipSource,
    b: ClipSource,
    frame_size: [usize; 2],
    offset: i64,
    strokes: Vec<StrokeRun>,
    keyframes: Vec<KeyframeFile>,
    params: Params,
    realign: Option<FileRef>,
    cache: CacheFile,
}

#[derive(Serialize, Deserialize)]
struct KeyframeFile {
    frame: usize,
    mask: FileRef,
}

#[derive(Serialize, Deserialize)]
struct LabelsFile {
    width: usize,
    height: usize,
    masks: Vec<FileRef>,
}

#[derive(Serialize, Deserialize)]
struct CacheFile {
    track: Option<Stamped<FileRef>>,
    blur: Option<Stamped<BlurState>>,
    lut: Option<Stamped<ColorLUT>>,
    labels: Option<Stamped<LabelsFile>>,
    crop: Option<Stamped<CropRect>>,
}

/// Consecutive strokes on one row with increasing x, stored as
/// `[frame, y, x0, x1, label]` with `x1` exclusive. Entry order is kept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct StrokeRun(usize, usize, usize, usize, Label);

impl StrokeRun {
    fn encode(s: &StrokeSet) -> Vec<StrokeRun> {
        let mut out: Vec<StrokeRun> = Vec::new();
        for e in &s.entries {
            match out.last_mut() {
                Some(r) if r.0 == e.frame && r.1 == e.y && r.3 == e.x && r.4 == e.label => r.3 += 1,
                _ => out.push(StrokeRun(e.frame, e.y, e.x, e.x + 1, e.label)),
            }
        }
        out
    }

    fn decode(runs: &[StrokeRun]) -> StrokeSet {
        let mut s = StrokeSet::new();
        for r in runs {
            for x in r.2..r.3 {
                s.push(r.0, x, r.1, r.4);
            }
        }
        s
    }
}
