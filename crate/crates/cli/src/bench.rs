use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Args;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use takecut::align::{align_videos, compass_search, AlignParams};
use takecut::pipeline::{Engine, Project};
use takecut::seamcut::{coarse_to_fine_cut, MotionLinks, SeamParams};
use takecut::synth::{random_homography, shifted_texture, view_pair, Texture, WarpRange};
use takecut::video::VideoClip;
use takecut::{Error, Result};

use crate::project_dir;

/// Parses "a..b" (inclusive) or a single number.
fn parse_range(s: &str) -> std::result::Result<RangeInclusive<u32>, String> {
    let num = |v: &str| v.trim().parse::<u32>().map_err(|e| format!("{v:?}: {e}"));
    let r = match s.split_once("..") {
        Some((a, b)) => num(a)?..=num(b.trim_start_matches('='))?,
        None => num(s)?..=num(s)?,
    };
    if r.is_empty() {
        return Err(format!("empty range {s}"));
    }
    Ok(r)
}

#[derive(Args)]
pub struct BenchCutArgs {
    project: PathBuf,
    /// Pyramid reductions to try, inclusive, e.g. 0..4.
    #[arg(long, default_value = "0..4", value_parser = parse_range)]
    levels: RangeInclusive<u32>,
    /// Band growth exponents to try, inclusive.
    #[arg(long, default_value = "1..3", value_parser = parse_range)]
    grows: RangeInclusive<u32>,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
pub struct BenchAlignArgs {
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 320)]
    width: usize,
    #[arg(long, default_value_t = 240)]
    height: usize,
    /// Recovery threshold on the worst corner error, in pixels.
    #[arg(long, default_value_t = 0.5)]
    tolerance: f64,
    /// Largest translation tried by the compass search check.
    #[arg(long, default_value_t = 20)]
    compass_max: i32,
    #[arg(long, default_value_t = 5)]
    compass_step: usize,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Serialize)]
struct CutRun {
    level: u32,
    grow: u32,
    seconds: f64,
    peak_graph_bytes: usize,
    nodes: usize,
    energy: f64,
    /// Level-0 time over this run's time.
    speedup: f64,
    /// Level-0 peak graph memory over this run's.
    memory_ratio: f64,
}

#[derive(Serialize)]
struct AlignReport {
    trials: usize,
    tolerance: f64,
    recovered: usize,
    errors: Vec<f64>,
    median_error: f64,
    max_error: f64,
    seconds: f64,
    compass_shifts: usize,
    compass_exact: usize,
    compass_failures: Vec<(i32, i32, f64, f64)>,
}

fn emit(report: &impl Serialize, path: Option<&Path>) -> Result<()> {
    let json = serde_json::to_string_pretty(report).map_err(|e| Error::Io(e.into()))?;
    match path {
        Some(p) => std::fs::write(p, json)?,
        None => println!("{json}"),
    }
    Ok(())
}

pub fn bench_cut(args: &BenchCutArgs, seed: Option<u64>) -> Result<()> {
    let project = Project::load(&args.project)?;
    let mut engine = Engine::open(project, &project_dir(&args.project))?;
    if let Some(s) = seed {
        engine.update(|p| p.params.align.ransac.seed = s)?;
    }
    let al = engine.alignment()?;
    let a = engine.blur()?.a.clone();
    let b = engine.color()?.b.clone();
    let constraints = engine.constraints()?;
    let motion = MotionLinks::from_temporal(&al.track.temporal_a)?;
    let lambda = engine.project().params.seam.lambda;

    let mut combos = Vec::new();
    for level in args.levels.clone() {
        if level == 0 {
            combos.push((0, 0));
        } else {
            combos.extend(args.grows.clone().map(|g| (level, g)));
        }
    }
    let mut runs: Vec<CutRun> = Vec::new();
    for (level, grow) in combos {
        let p = SeamParams { lambda, level, grow };
        let (_, st) = coarse_to_fine_cut(&a, &b, &al.masks, &constraints, &p, &motion)?;
        log::info!("level {level} grow {grow}: {:.3}s", st.total_seconds);
        runs.push(CutRun {
            level,
            grow,
            seconds: st.total_seconds,
            peak_graph_bytes: st.peak_graph_bytes(),
            nodes: st.total_nodes(),
            energy: st.energy,
            speedup: f64::NAN,
            memory_ratio: f64::NAN,
        });
    }
    if let Some(base) = runs.iter().find(|r| r.level == 0).map(|r| (r.seconds, r.peak_graph_bytes)) {
        for r in &mut runs {
            r.speedup = base.0 / r.seconds.max(1e-9);
            r.memory_ratio = base.1 as f64 / r.peak_graph_bytes.max(1) as f64;
        }
    }
    emit(&runs, args.report.as_deref())
}

pub fn bench_align(args: &BenchAlignArgs, seed: Option<u64>) -> Result<()> {
    let seed = seed.unwrap_or(0);
    let (w, h) = (args.width, args.height);
    let started = Instant::now();
    let params = AlignParams::default();
    let errors: Vec<f64> = (0..args.trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
            let truth = random_homography(&mut rng, w, h, &WarpRange::RECOVERY);
            let (fa, fb) = view_pair(&Texture::new(seed.wrapping_add(1000 + i as u64)), w, h, &truth);
            let a = VideoClip::new(vec![fa])?;
            let b = VideoClip::new(vec![fb])?;
            let track = align_videos(&a, &b, 0, &params)?;
            Ok(track.spatial[0].max_corner_distance(&truth, w, h))
        })
        .collect::<Result<_>>()?;
    let mut sorted = errors.clone();
    sorted.sort_by(f64::total_cmp);

    let tex = Texture::new(seed.wrapping_add(7));
    let (cw, ch) = (128, 96);
    let a = tex.render(cw, ch, 0.0, 0.0);
    let shifts: Vec<(i32, i32)> = (-args.compass_max..=args.compass_max)
        .step_by(args.compass_step.max(1))
        .flat_map(|dx| {
            (-args.compass_max..=args.compass_max)
                .step_by(args.compass_step.max(1))
                .map(move |dy| (dx, dy))
        })
        .collect();
    let found: Vec<(i32, i32, f64, f64)> = shifts
        .par_iter()
        .map(|&(dx, dy)| {
            let b = shifted_texture(&tex, cw, ch, dx as f64, dy as f64);
            let d = compass_search(&a, &b, 4)?;
            Ok((dx, dy, d.dx, d.dy))
        })
        .collect::<Result<_>>()?;
    let failures: Vec<_> = found
        .into_iter()
        .filter(|&(dx, dy, fx, fy)| (fx - dx as f64).abs() > 0.5 || (fy - dy as f64).abs() > 0.5)
        .collect();

    let report = AlignReport {
        trials: args.trials,
        tolerance: args.tolerance,
        recovered: errors.iter().filter(|&&e| e < args.tolerance).count(),
        median_error: sorted.get(sorted.len() / 2).copied().unwrap_or(f64::NAN),
        max_error: sorted.last().copied().unwrap_or(f64::NAN),
        errors,
        seconds: started.elapsed().as_secs_f64(),
        compass_shifts: shifts.len(),
        compass_exact: shifts.len() - failures.len(),
        compass_failures: failures,
    };
    emit(&report, args.report.as_deref())
}
