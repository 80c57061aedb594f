use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::masks::encode_label_png;
use super::project::{BlurState, ClipSource, Project, Stamped};
use super::Stage;
use crate::align::{align_videos, realign_band, AlignmentTrack};
use crate::appearance::{
    apply_color_lut, blur_clip, build_color_lut, match_blur, BlurKernel, Blurred, ColorLUT,
};
use crate::composite::{assemble_output, greedy_crop, missing_masks, seam_distance, seam_overlay, CropRect, DistanceField};
use crate::error::{Error, Result};
use crate::seamcut::{
    apply_keyframes, coarse_to_fine_cut, Constraints, CutStats, Keyframe, Label, LabelVolume, MotionLinks,
};
use crate::video::{
    downsample2, load_frame_sequence, save_frame_sequence, warp_frame, Frame, ValidityMask, VideoClip,
};

/// Output of the align stage, restricted to the overlapping frames.
#[derive(Debug)]
pub struct AlignOutput {
    pub track: AlignmentTrack,
    pub a: Arc<VideoClip>,
    /// B frames paired with `a`, before warping.
    pub b_raw: Arc<VideoClip>,
    /// B warped into A's coordinates.
    pub b: Arc<VideoClip>,
    /// Where warped B has data.
    pub masks: Arc<Vec<ValidityMask>>,
}

#[derive(Debug)]
pub struct BlurOutput {
    pub state: BlurState,
    pub a: Arc<VideoClip>,
    pub b: Arc<VideoClip>,
}

#[derive(Debug)]
pub struct ColorOutput {
    /// None when color matching is off.
    pub lut: Option<ColorLUT>,
    pub b: Arc<VideoClip>,
}

#[derive(Debug)]
pub struct CutOutput {
    pub labels: Arc<LabelVolume>,
    /// None when the labels came from the project cache.
    pub stats: Option<CutStats>,
}

#[derive(Debug)]
pub struct BlendOutput {
    /// Uncropped composite.
    pub frames: Arc<VideoClip>,
    /// Pixels of the composite that have data.
    pub valid: Vec<ValidityMask>,
}

#[derive(Debug)]
pub struct CropOutput {
    pub rect: CropRect,
    pub frames: Arc<VideoClip>,
}

struct Slot<T> {
    stamp: String,
    out: Arc<T>,
}

#[derive(Default)]
struct Slots {
    align: Option<Slot<AlignOutput>>,
    blur: Option<Slot<BlurOutput>>,
    color: Option<Slot<ColorOutput>>,
    cut: Option<Slot<CutOutput>>,
    blend: Option<Slot<BlendOutput>>,
    crop: Option<Slot<CropOutput>>,
}

impl Slots {
    fn stamp(&self, s: Stage) -> Option<&str> {
        match s {
            Stage::Align => self.align.as_ref().map(|x| x.stamp.as_str()),
            Stage::Blur => self.blur.as_ref().map(|x| x.stamp.as_str()),
            Stage::Color => self.color.as_ref().map(|x| x.stamp.as_str()),
            Stage::Cut => self.cut.as_ref().map(|x| x.stamp.as_str()),
            Stage::Blend => self.blend.as_ref().map(|x| x.stamp.as_str()),
            Stage::Crop => self.crop.as_ref().map(|x| x.stamp.as_str()),
        }
    }
}

/// Wall time and memory of the last run of one stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: Stage,
    pub seconds: f64,
    /// Estimated peak working memory: the max-flow graph for the cut, the
    /// produced frames otherwise.
    pub peak_bytes: usize,
    pub executions: usize,
    pub restored: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub stages: Vec<StageTiming>,
}

/// Computes project stages on demand. Every stage output is keyed by a
/// stamp hashing its parameters, its inputs and the stamps of its
/// dependencies, so an edit reruns exactly the stages downstream of it.
pub struct Engine {
    project: Project,
    a_full: Arc<VideoClip>,
    b_full: Arc<VideoClip>,
    clips_hash: String,
    slots: Slots,
    timings: BTreeMap<Stage, StageTiming>,
}

fn hash_clips(a: &VideoClip, b: &VideoClip) -> String {
    let mut h = Sha256::new();
    for clip in [a, b] {
        h.update((clip.len() as u64).to_le_bytes());
        let (w, hh) = clip.dims();
        h.update((w as u64).to_le_bytes());
        h.update((hh as u64).to_le_bytes());
        for f in clip.frames() {
            for v in f.data() {
                h.update(v.to_le_bytes());
            }
        }
    }
    hex::encode(h.finalize())
}

fn clip_bytes(c: &VideoClip) -> usize {
    let (w, h) = c.dims();
    c.len() * w * h * 3 * std::mem::size_of::<f32>()
}

fn warp_clip(b: &VideoClip, track: &AlignmentTrack) -> Result<(VideoClip, Vec<ValidityMask>)> {
    let (frames, masks): (Vec<_>, Vec<_>) = b
        .frames()
        .par_iter()
        .zip(track.spatial.par_iter())
        .map(|(f, h)| warp_frame(f, h))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .unzip();
    Ok((VideoClip::new(frames)?, masks))
}

impl Engine {
    /// Loads the frames a project refers to. Relative patterns resolve
    /// against `base`, normally the project file's directory.
    pub fn open(project: Project, base: &Path) -> Result<Self> {
        let load = |c: &ClipSource| load_frame_sequence(&c.resolved(base), c.first, c.last);
        let (a, b) = rayon::join(|| load(&project.a), || load(&project.b));
        let (a, b) = (a?, b?);
        for (name, clip) in [("A", &a), ("B", &b)] {
            if clip.dims() != project.frame_size {
                return Err(Error::Structural(format!(
                    "take {name} frames are {:?}, the project expects {:?}",
                    clip.dims(),
                    project.frame_size
                )));
            }
        }
        Self::with_clips(project, a, b)
    }

    /// Engine over in-memory takes; the project records no frame files.
    pub fn from_clips(a: VideoClip, b: VideoClip, offset: i64) -> Result<Self> {
        let src = |c: &VideoClip| ClipSource {
            pattern: String::new(),
            first: 0,
            last: c.len() - 1,
        };
        if a.is_empty() || b.is_empty() {
            return Err(Error::Structural("both takes need at least one frame".into()));
        }
        let project = Project::new(src(&a), src(&b), a.dims(), offset);
        Self::with_clips(project, a, b)
    }

    /// Like [`Engine::from_clips`] but keeping the given project state.
    pub fn with_clips(project: Project, a: VideoClip, b: VideoClip) -> Result<Self> {
        if a.dims() != b.dims() {
            return Err(Error::Structural(format!(
                "takes differ in frame size: {:?} and {:?}",
                a.dims(),
                b.dims()
            )));
        }
        if a.len() != project.a.len() || b.len() != project.b.len() {
            return Err(Error::Structural(format!(
                "project lists {} and {} frames, takes have {} and {}",
                project.a.len(),
                project.b.len(),
                a.len(),
                b.len()
            )));
        }
        project.overlap()?;
        let clips_hash = hash_clips(&a, &b);
        Ok(Self {
            project,
            a_full: Arc::new(a),
            b_full: Arc::new(b),
            clips_hash,
            slots: Slots::default(),
            timings: BTreeMap::new(),
        })
    }

    pub fn project(&self) -> &Project {
        &self.project
    }

    pub fn take_a(&self) -> &Arc<VideoClip> {
        &self.a_full
    }

    pub fn take_b(&self) -> &Arc<VideoClip> {
        &self.b_full
    }

    /// Applies an edit to the project. Stages pick the change up through
    /// their stamps. Clip sources and frame size are fixed for the life of
    /// an engine; an edit leaving no overlap is rejected and rolled back.
    pub fn update<R>(&mut self, edit: impl FnOnce(&mut Project) -> R) -> Result<R> {
        let before = self.project.clone();
        let r = edit(&mut self.project);
        let p = &self.project;
        let check = if (p.a != before.a) || (p.b != before.b) || p.frame_size != before.frame_size {
            Err(Error::Config("clip sources cannot change on an open project".into()))
        } else {
            p.overlap().map(|_| ())
        };
        if let Err(e) = check {
            self.project = before;
            return Err(e);
        }
        if self.project.offset != before.offset {
            // A band realignment only describes the pairing it came from.
            self.project.realign = None;
        }
        Ok(r)
    }

    pub fn set_offset(&mut self, offset: i64) -> Result<()> {
        self.update(|p| p.offset = offset)
    }

    /// Frames of A that enter the composite.
    pub fn overlap(&self) -> (usize, usize) {
        self.project.overlap().expect("overlap checked on every edit")
    }

    pub fn output_len(&self) -> usize {
        let (lo, hi) = self.overlap();
        hi - lo
    }

    fn anchor(&self) -> Result<usize> {
        let n = self.output_len();
        match self.project.params.anchor {
            Some(a) if a >= n => Err(Error::Config(format!(
                "anchor frame {a} outside the {n} overlapping frames"
            ))),
            Some(a) => Ok(a),
            None => Ok(n / 2),
        }
    }

    /// Current stamp of every stage.
    pub fn stamps(&self) -> Result<BTreeMap<Stage, String>> {
        let p = &self.project;
        let json = |v: &dyn erased::Json| v.to_json();
        let mut out: BTreeMap<Stage, String> = BTreeMap::new();
        for s in Stage::ALL {
            let own = match s {
                Stage::Align => {
                    let realign = p.realign.as_ref().map(|t| json(t)).transpose()?;
                    format!(
                        "{}|{}|{:?}|{}|{}",
                        self.clips_hash,
                        p.offset,
                        p.params.anchor,
                        json(&p.params.align)?,
                        realign.unwrap_or_default()
                    )
                }
                Stage::Blur => json(&p.params.blur)?,
                Stage::Color => json(&p.params.color)?,
                Stage::Cut => format!(
                    "{}|{}|{}",
                    json(&p.strokes)?,
                    json(&p.keyframes)?,
                    json(&p.params.seam)?
                ),
                Stage::Blend => p.params.blend_width.to_string(),
                Stage::Crop => String::new(),
            };
            let mut h = Sha256::new();
            h.update(s.name());
            h.update([0]);
            h.update(own);
            for d in s.deps() {
                h.update([0]);
                h.update(&out[d]);
            }
            out.insert(s, hex::encode(h.finalize()));
        }
        Ok(out)
    }

    /// Stages whose cached output is missing or stale.
    pub fn dirty_stages(&self) -> Result<BTreeSet<Stage>> {
        let stamps = self.stamps()?;
        Ok(Stage::ALL
            .into_iter()
            .filter(|s| self.slots.stamp(*s) != Some(stamps[s].as_str()))
            .collect())
    }

    /// Stages that computing `stage` would run, in order.
    pub fn plan(&self, stage: Stage) -> Result<Vec<Stage>> {
        let dirty = self.dirty_stages()?;
        let mut need = BTreeSet::from([stage]);
        for s in Stage::ALL.into_iter().rev() {
            if need.contains(&s) {
                need.extend(s.deps());
            }
        }
        Ok(Stage::ALL
            .into_iter()
            .filter(|s| need.contains(s) && dirty.contains(s))
            .collect())
    }

    /// Brings `stage` and everything it depends on up to date.
    pub fn compute(&mut self, stage: Stage) -> Result<()> {
        let stamps = self.stamps()?;
        for s in self.plan(stage)? {
            let started = Instant::now();
            let (ran, bytes) = self.run(s, &stamps[&s]).map_err(|e| e.in_stage(s))?;
            let t = self.timings.entry(s).or_insert(StageTiming {
                stage: s,
                seconds: 0.0,
                peak_bytes: 0,
                executions: 0,
                restored: 0,
            });
            match ran {
                Ran::Executed => {
                    t.executions += 1;
                    t.seconds = started.elapsed().as_secs_f64();
                    t.peak_bytes = bytes;
                }
                Ran::Restored => t.restored += 1,
                Ran::Passthrough => {}
            }
        }
        Ok(())
    }

    /// How often each stage actually computed (restores and bypassed
    /// optional stages excluded).
    pub fn executions(&self, stage: Stage) -> usize {
        self.timings.get(&stage).map_or(0, |t| t.executions)
    }

    pub fn restorations(&self, stage: Stage) -> usize {
        self.timings.get(&stage).map_or(0, |t| t.restored)
    }

    pub fn execution_counts(&self) -> BTreeMap<Stage, usize> {
        Stage::ALL.into_iter().map(|s| (s, self.executions(s))).collect()
    }

    pub fn reset_counters(&mut self) {
        self.timings.clear();
    }

    pub fn timing_report(&self) -> TimingReport {
        TimingReport {
            stages: self.timings.values().cloned().collect(),
        }
    }

    fn run(&mut self, s: Stage, stamp: &str) -> Result<(Ran, usize)> {
        let stamp = stamp.to_string();
        match s {
            Stage::Align => {
                let (out, ran) = self.run_align(&stamp)?;
                let bytes = clip_bytes(&out.b) * 3;
                self.project.cache.track = Some(Stamped {
                    stamp: stamp.clone(),
                    value: out.track.clone(),
                });
                self.slots.align = Some(Slot { stamp, out: Arc::new(out) });
                Ok((ran, bytes))
            }
            Stage::Blur => {
                let (out, ran) = self.run_blur(&stamp)?;
                let bytes = clip_bytes(&out.a) + clip_bytes(&out.b);
                if ran != Ran::Passthrough {
                    self.project.cache.blur = Some(Stamped {
                        stamp: stamp.clone(),
                        value: out.state,
                    });
                }
                self.slots.blur = Some(Slot { stamp, out: Arc::new(out) });
                Ok((ran, bytes))
            }
            Stage::Color => {
                let (out, ran) = self.run_color(&stamp)?;
                let bytes = clip_bytes(&out.b);
                if let Some(lut) = &out.lut {
                    self.project.cache.lut = Some(Stamped {
                        stamp: stamp.clone(),
                        value: lut.clone(),
                    });
                }
                self.slots.color = Some(Slot { stamp, out: Arc::new(out) });
                Ok((ran, bytes))
            }
            Stage::Cut => {
                let (out, ran) = self.run_cut(&stamp)?;
                let bytes = out.stats.as_ref().map_or(0, |s| s.peak_graph_bytes());
                self.project.cache.labels = Some(Stamped {
                    stamp: stamp.clone(),
                    value: (*out.labels).clone(),
                });
                self.slots.cut = Some(Slot { stamp, out: Arc::new(out) });
                Ok((ran, bytes))
            }
            Stage::Blend => {
                let out = self.run_blend()?;
                let bytes = clip_bytes(&out.frames);
                self.slots.blend = Some(Slot { stamp, out: Arc::new(out) });
                Ok((Ran::Executed, bytes))
            }
            Stage::Crop => {
                let (out, ran) = self.run_crop(&stamp)?;
                let bytes = clip_bytes(&out.frames);
                self.project.cache.crop = Some(Stamped {
                    stamp: stamp.clone(),
                    value: out.rect,
                });
                self.slots.crop = Some(Slot { stamp, out: Arc::new(out) });
                Ok((ran, bytes))
            }
        }
    }

    fn cached<'a, T>(entry: &'a Option<Stamped<T>>, stamp: &str) -> Option<&'a T> {
        entry.as_ref().filter(|s| s.stamp == stamp).map(|s| &s.value)
    }

    fn run_align(&self, stamp: &str) -> Result<(AlignOutput, Ran)> {
        let (lo, hi) = self.overlap();
        let o = self.project.offset;
        let a = self.a_full.slice(lo, hi)?;
        let b_raw = self.b_full.slice((lo as i64 - o) as usize, (hi as i64 - o) as usize)?;
        let anchor = self.anchor()?;
        let (track, ran) = if let Some(t) = &self.project.realign {
            t.validate()?;
            if t.len() != a.len() {
                return Err(Error::Structural(format!(
                    "stored realignment covers {} frames, the overlap has {}",
                    t.len(),
                    a.len()
                )));
            }
            (t.clone(), Ran::Executed)
        } else if let Some(t) = Self::cached(&self.project.cache.track, stamp) {
            (t.clone(), Ran::Restored)
        } else {
            (align_videos(&a, &b_raw, anchor, &self.project.params.align)?, Ran::Executed)
        };
        let (b, masks) = warp_clip(&b_raw, &track)?;
        Ok((
            AlignOutput {
                track,
                a: Arc::new(a),
                b_raw: Arc::new(b_raw),
                b: Arc::new(b),
                masks: Arc::new(masks),
            },
            ran,
        ))
    }

    fn align_out(&self) -> &Arc<AlignOutput> {
        &self.slots.align.as_ref().expect("align computed before its dependents").out
    }

    fn blur_out(&self) -> &Arc<BlurOutput> {
        &self.slots.blur.as_ref().expect("blur computed before its dependents").out
    }

    fn color_out(&self) -> &Arc<ColorOutput> {
        &self.slots.color.as_ref().expect("color computed before its dependents").out
    }

    fn cut_out(&self) -> &Arc<CutOutput> {
        &self.slots.cut.as_ref().expect("cut computed before its dependents").out
    }

    fn blend_out(&self) -> &Arc<BlendOutput> {
        &self.slots.blend.as_ref().expect("blend computed before its dependents").out
    }

    fn run_blur(&self, stamp: &str) -> Result<(BlurOutput, Ran)> {
        let al = self.align_out();
        if !self.project.params.blur.enabled {
            let state = BlurState {
                kernel: BlurKernel::IDENTITY,
                blurred: Blurred::Neither,
            };
            return Ok((
                BlurOutput {
                    state,
                    a: al.a.clone(),
                    b: al.b.clone(),
                },
                Ran::Passthrough,
            ));
        }
        let (state, ran) = match Self::cached(&self.project.cache.blur, stamp) {
            Some(s) => (*s, Ran::Restored),
            None => {
                // Estimate on the anchor frame, inside the region where
                // warped B has data.
                let t = self.anchor()?;
                let rect = greedy_crop(std::slice::from_ref(&al.masks[t]))?;
                let m = match_blur(&rect.apply(al.a.frame(t)), &rect.apply(al.b.frame(t)))?;
                (
                    BlurState {
                        kernel: m.kernel,
                        blurred: m.blurred,
                    },
                    Ran::Executed,
                )
            }
        };
        let (a, b) = match state.blurred {
            Blurred::Neither => (al.a.clone(), al.b.clone()),
            Blurred::A => (Arc::new(blur_clip(&al.a, &state.kernel)), al.b.clone()),
            Blurred::B => {
                // Blur B in its own frame, then warp, so the kernel acts on
                // the content it was estimated for.
                let (b, _) = warp_clip(&blur_clip(&al.b_raw, &state.kernel), &al.track)?;
                (al.a.clone(), Arc::new(b))
            }
        };
        Ok((BlurOutput { state, a, b }, ran))
    }

    fn run_color(&self, stamp: &str) -> Result<(ColorOutput, Ran)> {
        let bl = self.blur_out();
        let settings = self.project.params.color;
        if !settings.enabled {
            return Ok((ColorOutput { lut: None, b: bl.b.clone() }, Ran::Passthrough));
        }
        let (lut, ran) = match Self::cached(&self.project.cache.lut, stamp) {
            Some(l) => (l.clone(), Ran::Restored),
            None => (
                build_color_lut(&bl.a, &bl.b, &self.align_out().masks, &settings.params)?,
                Ran::Executed,
            ),
        };
        let b = apply_color_lut(&bl.b, &lut, settings.overlap_end)?;
        Ok((
            ColorOutput {
                lut: Some(lut),
                b: Arc::new(b),
            },
            ran,
        ))
    }

    /// Hard constraints for the cut, in output frame indices: strokes and
    /// keyframes inside the overlap, plus take A wherever warped B has no
    /// data and nothing was painted.
    pub fn constraints(&self) -> Result<Constraints> {
        let (lo, hi) = self.overlap();
        let (w, h) = self.project.frame_size;
        let n = hi - lo;
        let mut c = Constraints::filled(w, h, n, None);
        for s in &self.project.strokes.entries {
            if !(lo..hi).contains(&s.frame) {
                continue;
            }
            if s.x >= w || s.y >= h {
                return Err(Error::Config(format!(
                    "stroke at ({}, {}) on frame {} lies outside the {w}x{h} frame",
                    s.x, s.y, s.frame
                )));
            }
            c.constrain(s.x, s.y, s.frame - lo, s.label, "painted with both labels")?;
        }
        let keyframes: Vec<Keyframe> = self
            .project
            .keyframes
            .iter()
            .filter(|k| (lo..hi).contains(&k.frame))
            .map(|k| Keyframe {
                frame: k.frame - lo,
                labels: k.labels.clone(),
            })
            .collect();
        apply_keyframes(&mut c, &keyframes)?;
        if c.count(Label::A) == 0 || c.count(Label::B) == 0 {
            return Err(missing_label());
        }
        let masks = &self.align_out().masks;
        for (t, m) in masks.iter().enumerate() {
            for y in 0..h {
                for x in 0..w {
                    if !m.get(x, y) && c.get(x, y, t).is_none() {
                        c.set(x, y, t, Some(Label::A));
                    }
                }
            }
        }
        Ok(c)
    }

    /// Cheap check that the cut has strokes or keyframes of both labels in
    /// the overlap, without computing anything.
    pub fn check_labels(&self) -> Result<()> {
        let (lo, hi) = self.overlap();
        let p = &self.project;
        let has = |l: Label| {
            p.strokes.entries.iter().any(|s| s.label == l && (lo..hi).contains(&s.frame))
                || p.keyframes.iter().any(|k| (lo..hi).contains(&k.frame) && k.labels.contains(&l))
        };
        if has(Label::A) && has(Label::B) {
            Ok(())
        } else {
            Err(missing_label().in_stage(Stage::Cut))
        }
    }

    fn run_cut(&self, stamp: &str) -> Result<(CutOutput, Ran)> {
        if let Some(l) = Self::cached(&self.project.cache.labels, stamp) {
            let (w, h) = self.project.frame_size;
            if l.dims() == (w, h, self.output_len()) {
                return Ok((
                    CutOutput {
                        labels: Arc::new(l.clone()),
                        stats: None,
                    },
                    Ran::Restored,
                ));
            }
        }
        let al = self.align_out();
        let c = self.constraints()?;
        let motion = MotionLinks::from_temporal(&al.track.temporal_a)?;
        let (labels, stats) = coarse_to_fine_cut(
            &self.blur_out().a,
            &self.color_out().b,
            &al.masks,
            &c,
            &self.project.params.seam,
            &motion,
        )?;
        Ok((
            CutOutput {
                labels: Arc::new(labels),
                stats: Some(stats),
            },
            Ran::Executed,
        ))
    }

    fn run_blend(&self) -> Result<BlendOutput> {
        let al = self.align_out();
        let labels = &self.cut_out().labels;
        let a = &self.blur_out().a;
        let (w, h) = a.dims();
        let frames = assemble_output(
            a,
            &self.color_out().b,
            &al.masks,
            labels,
            self.project.params.blend_width,
            &CropRect::full(w, h),
        )?;
        let valid = missing_masks(labels, &al.masks)?;
        Ok(BlendOutput {
            frames: Arc::new(frames),
            valid,
        })
    }

    fn run_crop(&self, stamp: &str) -> Result<(CropOutput, Ran)> {
        let bl = self.blend_out();
        let (rect, ran) = match Self::cached(&self.project.cache.crop, stamp) {
            Some(r) => (*r, Ran::Restored),
            None => (greedy_crop(&bl.valid)?, Ran::Executed),
        };
        let (w, h) = bl.frames.dims();
        rect.validate(w, h)?;
        let frames = bl.frames.frames().par_iter().map(|f| rect.apply(f)).collect();
        Ok((
            CropOutput {
                rect,
                frames: Arc::new(VideoClip::new(frames)?),
            },
            ran,
        ))
    }

    pub fn alignment(&mut self) -> Result<Arc<AlignOutput>> {
        self.compute(Stage::Align)?;
        Ok(self.align_out().clone())
    }

    pub fn blur(&mut self) -> Result<Arc<BlurOutput>> {
        self.compute(Stage::Blur)?;
        Ok(self.blur_out().clone())
    }

    pub fn color(&mut self) -> Result<Arc<ColorOutput>> {
        self.compute(Stage::Color)?;
        Ok(self.color_out().clone())
    }

    pub fn cut(&mut self) -> Result<Arc<CutOutput>> {
        self.compute(Stage::Cut)?;
        Ok(self.cut_out().clone())
    }

    pub fn blend(&mut self) -> Result<Arc<BlendOutput>> {
        self.compute(Stage::Blend)?;
        Ok(self.blend_out().clone())
    }

    /// The final composite.
    pub fn output(&mut self) -> Result<Arc<CropOutput>> {
        self.compute(Stage::Crop)?;
        Ok(self.slots.crop.as_ref().expect("crop computed").out.clone())
    }

    fn check_frame(&self, t: usize) -> Result<()> {
        let n = self.output_len();
        if t >= n {
            return Err(Error::Config(format!("frame {t} outside the {n} output frames")));
        }
        Ok(())
    }

    /// Composite frame `t`, optionally with the seam tinted and at half
    /// resolution. Without either option it equals the exported frame.
    pub fn preview(&mut self, t: usize, overlay: bool, half: bool) -> Result<Frame> {
        self.check_frame(t)?;
        let out = self.output()?;
        let mut f = if overlay {
            let blended = self.blend_out().frames.frame(t).clone();
            let (w, h) = blended.dims();
            let dist = seam_distance(self.cut_out().labels.frame(t), w, h);
            out.rect.apply(&seam_overlay(&blended, &dist))
        } else {
            out.frames.frame(t).clone()
        };
        if half {
            f = downsample2(&f);
        }
        Ok(f)
    }

    /// Label mask of output frame `t` as a 1-bit PNG, B white.
    pub fn seam_png(&mut self, t: usize) -> Result<Vec<u8>> {
        self.check_frame(t)?;
        let labels = self.cut()?.labels.clone();
        encode_label_png(labels.frame(t), labels.width(), labels.height())
    }

    /// Writes the composite as `out_%04d.png` (and tinted `seam_%04d.png`
    /// frames with `overlay`) into `dir`.
    pub fn export(&mut self, dir: &Path, overlay: bool) -> Result<Vec<PathBuf>> {
        let out = self.output()?;
        let pattern = dir.join("out_%04d.png");
        let mut paths = save_frame_sequence(&out.frames, &pattern.to_string_lossy(), 0)?;
        if overlay {
            let frames = (0..out.frames.len())
                .map(|t| self.preview(t, true, false))
                .collect::<Result<Vec<_>>>()?;
            let pattern = dir.join("seam_%04d.png");
            paths.extend(save_frame_sequence(&VideoClip::new(frames)?, &pattern.to_string_lossy(), 0)?);
        }
        Ok(paths)
    }

    /// Writes the cut's label masks as `labels_%04d.png` into `dir`.
    pub fn export_labels(&mut self, dir: &Path) -> Result<Vec<PathBuf>> {
        let n = self.cut()?.labels.frames();
        std::fs::create_dir_all(dir)?;
        (0..n)
            .map(|t| {
                let p = dir.join(format!("labels_{t:04}.png"));
                std::fs::write(&p, self.seam_png(t)?)?;
                Ok(p)
            })
            .collect()
    }

    /// Re-aligns using only pixels within `radius` of the current seam and
    /// stores the result as the project's alignment. Frames without a seam
    /// match over the whole frame.
    pub fn realign_around_cut(&mut self, radius: u32) -> Result<()> {
        let labels = self.cut()?.labels.clone();
        let al = self.align_out().clone();
        let (w, h) = al.a.dims();
        let band: Vec<ValidityMask> = (0..labels.frames())
            .into_par_iter()
            .map(|t| {
                let d = seam_distance(labels.frame(t), w, h);
                if d.data().iter().all(|&v| v == DistanceField::FAR) {
                    return ValidityMask::new(w, h, true);
                }
                ValidityMask::from_fn(w, h, |x, y| d.get(x, y) <= radius)
            })
            .collect();
        let track = realign_band(&al.a, &al.b_raw, &al.track, &band, &self.project.params.align)
            .map_err(|e| e.in_stage(Stage::Align))?;
        self.project.realign = Some(track);
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.project.save(path)
    }
}

fn missing_label() -> Error {
    Error::Config("both labels required: paint at least one A and one B stroke inside the overlapping frames".into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Ran {
    Executed,
    Restored,
    Passthrough,
}

mod erased {
    use crate::error::{Error, Result};

    /// Object-safe JSON encoding for stamp inputs.
    pub trait Json {
        fn to_json(&self) -> Result<String>;
    }

    impl<T: serde::Serialize> Json for T {
        fn to_json(&self) -> Result<String> {
            serde_json::to_string(self).map_err(|e| Error::Io(e.into()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::Texture;

    /// Two shifted views of one texture with a brightness offset on B.
    fn tiny(frames: usize) -> (VideoClip, VideoClip) {
        let tex = Texture::new(7);
        let a = (0..frames).map(|t| tex.render(48, 32, t as f64, 0.0)).collect();
        let b = (0..frames)
            .map(|t| {
                let f = tex.render(48, 32, t as f64 + 2.0, 1.0);
                Frame::from_fn(48, 32, |x, y| f.pixel(x, y).map(|v| (v + 12.0).min(255.0)))
            })
            .collect();
        (VideoClip::new(a).unwrap(), VideoClip::new(b).unwrap())
    }

    fn engine() -> Engine {
        let (a, b) = tiny(4);
        let mut e = Engine::from_clips(a, b, 0).unwrap();
        e.update(|p| {
            p.params.align.match_p.level = 2;
            p.strokes.paint_rect(1, 0, 0, 6, 32, Label::A);
            p.strokes.paint_rect(2, 42, 0, 48, 32, Label::B);
        })
        .unwrap();
        e
    }

    fn counts(e: &Engine) -> Vec<usize> {
        Stage::ALL.iter().map(|&s| e.executions(s)).collect()
    }

    #[test]
    fn cold_then_warm() {
        let mut e = engine();
        e.output().unwrap();
        assert_eq!(counts(&e), [1, 0, 0, 1, 1, 1]);
        e.output().unwrap();
        assert_eq!(counts(&e), [1, 0, 0, 1, 1, 1]);
        assert!(e.dirty_stages().unwrap().is_empty());
    }

    #[test]
    fn lambda_edit_reruns_from_cut() {
        let mut e = engine();
        e.output().unwrap();
        e.reset_counters();
        e.update(|p| p.params.seam.lambda = 3.0).unwrap();
        assert_eq!(
            e.dirty_stages().unwrap(),
            BTreeSet::from([Stage::Cut, Stage::Blend, Stage::Crop])
        );
        e.output().unwrap();
        assert_eq!(counts(&e), [0, 0, 0, 1, 1, 1]);
    }

    #[test]
    fn optional_stages_run_when_enabled() {
        let mut e = engine();
        e.output().unwrap();
        e.reset_counters();
        e.update(|p| p.params.color.enabled = true).unwrap();
        e.output().unwrap();
        assert_eq!(counts(&e), [0, 0, 1, 1, 1, 1]);
        let lut = e.color().unwrap().lut.clone().unwrap();
        // B is 12 levels brighter.
        assert!((lut.map(0, 112.0) - 100.0).abs() <= 2.0);
    }

    #[test]
    fn missing_label_is_a_cut_error() {
        let (a, b) = tiny(3);
        let mut e = Engine::from_clips(a, b, 0).unwrap();
        e.update(|p| p.strokes.push(0, 1, 1, Label::A)).unwrap();
        let err = e.output().unwrap_err();
        assert_eq!(err.stage(), Some(Stage::Cut));
        assert!(err.to_string().contains("both labels required"));
        assert_eq!(e.check_labels().unwrap_err().stage(), Some(Stage::Cut));
        assert_eq!(e.executions(Stage::Align), 1);
    }

    #[test]
    fn offset_edit_is_checked_and_rolled_back() {
        let mut e = engine();
        assert!(e.set_offset(4).is_err());
        assert_eq!(e.project().offset, 0);
        e.set_offset(-1).unwrap();
        assert_eq!(e.overlap(), (0, 3));
        assert_eq!(e.output().unwrap().frames.len(), 3);
    }

    #[test]
    fn saved_artifacts_restore_without_executing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        let mut e = engine();
        let first = e.output().unwrap().frames.clone();
        e.save(&path).unwrap();
        let p = Project::load(&path).unwrap();
        assert_eq!(&p, e.project());
        let (a, b) = tiny(4);
        let mut e2 = Engine::with_clips(p, a, b).unwrap();
        let again = e2.output().unwrap().frames.clone();
        assert_eq!(again.frames(), first.frames());
        assert_eq!(counts(&e2), [0, 0, 0, 0, 1, 0]);
        assert_eq!(e2.restorations(Stage::Cut), 1);
    }

    #[test]
    fn preview_matches_output_and_overlay_tints() {
        let mut e = engine();
        let out = e.output().unwrap();
        // Frame 2 holds the seam; frame 1 is stroked A throughout.
        let plain = e.preview(2, false, false).unwrap();
        assert_eq!(&plain, out.frames.frame(2));
        assert_ne!(e.preview(2, true, false).unwrap(), plain);
        assert_eq!(e.preview(1, true, false).unwrap(), *out.frames.frame(1));
        let half = e.preview(2, false, true).unwrap();
        assert_eq!(half.dims(), (plain.width().div_ceil(2), plain.height().div_ceil(2)));
        assert!(e.preview(9, false, false).is_err());
        let png = e.seam_png(0).unwrap();
        assert_eq!(crate::pipeline::decode_label_png(&png).unwrap().2, e.cut().unwrap().labels.frame(0));
    }

    #[test]
    fn realignment_becomes_an_input() {
        let mut e = engine();
        e.output().unwrap();
        e.reset_counters();
        e.realign_around_cut(6).unwrap();
        assert!(e.project().realign.is_some());
        assert_eq!(e.dirty_stages().unwrap(), Stage::ALL.into_iter().collect());
        e.output().unwrap();
        assert_eq!(counts(&e), [1, 0, 0, 1, 1, 1]);
    }
}
