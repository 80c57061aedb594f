mod bench;

use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgAction, Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use takecut::pipeline::{import_stroke_masks, Engine, Project};
use takecut::Error;

const EXIT_CODES: &str = "\
Exit codes:
   0  success
   1  internal error
   2  invalid command line
   3  a frame could not be read
   4  inputs differ in size or frame count
   5  homography fit failed
   6  block matching failed
   7  alignment failed
   8  strokes or keyframes conflict
   9  blur or color matching failed
  10  no crop without missing pixels
  11  invalid parameter or project edit
  12  project written by a newer version
  13  project file does not parse
  14  project sidecar missing or modified
  15  image encoding failed
  16  file system error";

/// Exit status for an error, by its root cause.
fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::Ingestion { .. } => 3,
        Error::Structural(_) => 4,
        Error::Model(_) => 5,
        Error::Match(_) => 6,
        Error::Alignment(_) => 7,
        Error::ConstraintConflict { .. } => 8,
        Error::Appearance(_) => 9,
        Error::Crop(_) => 10,
        Error::Config(_) => 11,
        Error::Upgrade { .. } => 12,
        Error::Parse { .. } => 13,
        Error::Integrity(_) => 14,
        Error::Image(_) => 15,
        Error::Io(_) => 16,
        Error::Stage { .. } => 1,
    }
}

/// Composite two takes of a scene along a hidden spatiotemporal seam.
#[derive(Parser)]
#[command(name = "takecut", version, after_help = EXIT_CODES)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// RANSAC seed; runs with the same seed are bit-identical.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Show the full parameter surface in --help.
    #[arg(long, global = true)]
    advanced: bool,
    /// More log output; repeat for debug.
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Create a project from two numbered frame sequences.
    Init(InitArgs),
    /// Align take B onto take A.
    Align(StageArgs),
    /// Find the seam and write per-frame label masks.
    Cut(CutArgs),
    /// Blend, crop and write the output frames.
    Composite(CompositeArgs),
    /// Time the seam search over a grid of pyramid settings.
    BenchCut(bench::BenchCutArgs),
    /// Measure alignment recovery on synthetic warps.
    BenchAlign(bench::BenchAlignArgs),
    /// Serve the project to the editing frontend.
    Serve(ServeArgs),
}

#[derive(Args)]
struct InitArgs {
    /// Frame pattern of take A, e.g. "a_%04d.png".
    #[arg(long = "a")]
    a: String,
    /// Frame pattern of take B.
    #[arg(long = "b")]
    b: String,
    /// B frame j lines up with A frame j + offset.
    #[arg(long, default_value_t = 0, allow_hyphen_values = true)]
    offset: i64,
    /// Two-color stroke masks numbered like A: pure red keeps A, pure blue
    /// keeps B.
    #[arg(long)]
    strokes: Option<String>,
    /// Project file to create.
    project: PathBuf,
}

/// Parameter overrides. They apply to this run only unless --save is given.
#[derive(Args, Clone, Default)]
pub struct Overrides {
    /// Keep overrides in the project file.
    #[arg(long)]
    save: bool,
    #[arg(long, allow_hyphen_values = true)]
    offset: Option<i64>,
    /// Replace the strokes with two-color masks (red A, blue B).
    #[arg(long)]
    strokes: Option<String>,
    /// Blend width in pixels on each side of the seam.
    #[arg(long)]
    blend_width: Option<u32>,
    /// Match blurriness between the takes.
    #[arg(long, overrides_with = "no_blur")]
    blur: bool,
    #[arg(long)]
    no_blur: bool,
    /// Match colors of B to A.
    #[arg(long, overrides_with = "no_color")]
    color: bool,
    #[arg(long)]
    no_color: bool,
    /// Temporal link weight of the seam energy.
    #[arg(long)]
    lambda: Option<f64>,
    /// Pyramid reductions of the seam search.
    #[arg(long)]
    level: Option<u32>,
    /// Band width around the upsampled seam is 2^grow pixels.
    #[arg(long)]
    grow: Option<u32>,
    /// Alignment anchor, as an output frame index.
    #[arg(long)]
    anchor: Option<usize>,
    #[arg(long)]
    match_level: Option<u32>,
    #[arg(long)]
    match_division: Option<u32>,
    #[arg(long)]
    match_smooth: Option<u32>,
    #[arg(long)]
    refine_level: Option<u32>,
    #[arg(long)]
    refine_division: Option<u32>,
    #[arg(long)]
    refine_smooth: Option<u32>,
    /// Propagate the anchor alignment without drift correction.
    #[arg(long)]
    no_refine: bool,
    #[arg(long)]
    ransac_iterations: Option<u32>,
    #[arg(long)]
    inlier_px: Option<f64>,
    /// Color pairs differing by at least this RGB L1 distance are ignored.
    #[arg(long)]
    gamma: Option<f64>,
    /// Frames over which color correction fades out after the overlap.
    #[arg(long)]
    fade: Option<usize>,
    #[arg(long)]
    overlap_end: Option<usize>,
}

/// Flags hidden from --help unless --advanced is given.
const ADVANCED: [&str; 13] = [
    "anchor",
    "match_level",
    "match_division",
    "match_smooth",
    "refine_level",
    "refine_division",
    "refine_smooth",
    "no_refine",
    "ransac_iterations",
    "inlier_px",
    "gamma",
    "fade",
    "overlap_end",
];

#[derive(Args)]
struct StageArgs {
    project: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
    /// Write the per-stage timing report as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct CutArgs {
    #[command(flatten)]
    stage: StageArgs,
    /// Directory for labels_%04d.png (default: <project>_labels).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompositeArgs {
    #[command(flatten)]
    stage: StageArgs,
    /// Directory for out_%04d.png (default: <project>_out).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write seam_%04d.png with the seam tinted red.
    #[arg(long)]
    overlay: bool,
}

#[derive(Args)]
struct ServeArgs {
    project: PathBuf,
    #[arg(long, default_value_t = 8321)]
    port: u16,
    /// Listen address; loopback unless you mean otherwise.
    #[arg(long, default_value_t = IpAddr::V4(Ipv4Addr::LOCALHOST))]
    bind: IpAddr,
    /// Directory for POST /export (default: <project>_out).
    #[arg(long)]
    export: Option<PathBuf>,
}

fn project_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

/// `<dir>/<stem><suffix>` next to the project file.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    project_dir(path).join(format!("{stem}{suffix}"))
}

impl Overrides {
    fn apply(&self, engine: &mut Engine, seed: Option<u64>) -> takecut::Result<()> {
        let strokes = match &self.strokes {
            Some(pattern) => {
                let p = engine.project();
                let (w, h) = p.frame_size;
                Some(import_stroke_masks(pattern, p.a.first, p.a.len(), w, h)?)
            }
            None => None,
        };
        let o = self.clone();
        engine.update(|p| {
            let q = &mut p.params;
            if let Some(v) = o.offset {
                p.offset = v;
            }
            if let Some(s) = strokes {
                p.strokes = s;
            }
            if let Some(v) = o.blend_width {
                q.blend_width = v;
            }
            if o.blur || o.no_blur {
                q.blur.enabled = o.blur;
            }
            if o.color || o.no_color {
                q.color.enabled = o.color;
            }
            if let Some(v) = o.lambda {
                q.seam.lambda = v;
            }
            if let Some(v) = o.level {
                q.seam.level = v;
            }
            if let Some(v) = o.grow {
                q.seam.grow = v;
            }
            if o.anchor.is_some() {
                q.anchor = o.anchor;
            }
            let set = |dst: &mut u32, v: Option<u32>| {
                if let Some(v) = v {
                    *dst = v;
                }
            };
            set(&mut q.align.match_p.level, o.match_level);
            set(&mut q.align.match_p.division, o.match_division);
            set(&mut q.align.match_p.smooth, o.match_smooth);
            set(&mut q.align.refine_p.level, o.refine_level);
            set(&mut q.align.refine_p.division, o.refine_division);
            set(&mut q.align.refine_p.smooth, o.refine_smooth);
            set(&mut q.align.ransac.iterations, o.ransac_iterations);
            if o.no_refine {
                q.align.refine = false;
            }
            if let Some(v) = o.inlier_px {
                q.align.ransac.inlier_px = v;
            }
            if let Some(v) = seed {
                q.align.ransac.seed = v;
            }
            if let Some(v) = o.gamma {
                q.color.params.gamma = v;
            }
            if let Some(v) = o.fade {
                q.color.params.fade = v;
            }
            if o.overlap_end.is_some() {
                q.color.overlap_end = o.overlap_end;
            }
        })?;
        let q = &engine.project().params;
        q.seam.validate()?;
        q.align.match_p.validate()?;
        q.align.refine_p.validate()?;
        q.color.params.validate()
    }
}

/// Same inputs and parameters, ignoring cached artifacts.
fn same_inputs(a: &Project, b: &Project) -> bool {
    a.offset == b.offset && a.strokes == b.strokes && a.keyframes == b.keyframes && a.params == b.params && a.realign == b.realign
}

fn open(args: &StageArgs, seed: Option<u64>) -> takecut::Result<(Engine, Project)> {
    let original = Project::load(&args.project)?;
    let mut engine = Engine::open(original.clone(), &project_dir(&args.project))?;
    args.overrides.apply(&mut engine, seed)?;
    Ok((engine, original))
}

/// Stores computed artifacts. Overridden parameters only reach the file
/// with --save.
fn finish(engine: &Engine, original: &Project, args: &StageArgs) -> takecut::Result<()> {
    if let Some(path) = &args.report {
        let json = serde_json::to_string_pretty(&engine.timing_report()).map_err(|e| Error::Io(e.into()))?;
        std::fs::write(path, json)?;
    }
    if args.overrides.save || same_inputs(engine.project(), original) {
        engine.save(&args.project)
    } else {
        eprintln!("overrides not saved; pass --save to keep them");
        Ok(())
    }
}

fn init(args: &InitArgs) -> takecut::Result<()> {
    let mut p = Project::from_patterns(&args.a, &args.b, args.offset, Path::new("."))?;
    let dir = project_dir(&args.project);
    if dir != Path::new(".") {
        // Patterns were given relative to the working directory; the
        // project resolves them relative to its own directory.
        let abs = |pat: &str| -> takecut::Result<String> {
            let p = Path::new(pat);
            Ok(if p.is_absolute() {
                pat.to_string()
            } else {
                std::env::current_dir()?.join(p).to_string_lossy().into_owned()
            })
        };
        p.a.pattern = abs(&args.a)?;
        p.b.pattern = abs(&args.b)?;
    }
    if let Some(pattern) = &args.strokes {
        let (w, h) = p.frame_size;
        p.strokes = import_stroke_masks(pattern, p.a.first, p.a.len(), w, h)?;
    }
    p.save(&args.project)?;
    let (lo, hi) = p.overlap()?;
    println!(
        "created {}: A {} frames, B {} frames, {}x{}, offset {}, {} overlapping frames, {} stroke pixels",
        args.project.display(),
        p.a.len(),
        p.b.len(),
        p.frame_size.0,
        p.frame_size.1,
        p.offset,
        hi - lo,
        p.strokes.len()
    );
    Ok(())
}

fn align(args: &StageArgs, seed: Option<u64>) -> takecut::Result<()> {
    let (mut engine, original) = open(args, seed)?;
    let out = engine.alignment()?;
    let t = &out.track;
    let (w, h) = out.a.dims();
    let valid: usize = out.masks.iter().map(|m| m.count_valid()).sum();
    println!(
        "aligned {} frames from anchor {}; warped B covers {:.1}% of A",
        t.len(),
        t.anchor,
        100.0 * valid as f64 / (w * h * t.len()) as f64
    );
    finish(&engine, &original, args)
}

fn cut(args: &CutArgs, seed: Option<u64>) -> takecut::Result<()> {
    let (mut engine, original) = open(&args.stage, seed)?;
    let out = engine.cut()?;
    let dir = args.out.clone().unwrap_or_else(|| sibling(&args.stage.project, "_labels"));
    let files = engine.export_labels(&dir)?;
    match &out.stats {
        Some(s) => println!(
            "seam energy {:.1} over {} levels in {:.2}s, peak graph {:.1} MiB",
            s.energy,
            s.levels.len(),
            s.total_seconds,
            s.peak_graph_bytes() as f64 / (1 << 20) as f64
        ),
        None => println!("labels restored from the project cache"),
    }
    println!("wrote {} label masks to {}", files.len(), dir.display());
    finish(&engine, &original, &args.stage)
}

fn composite(args: &CompositeArgs, seed: Option<u64>) -> takecut::Result<()> {
    let (mut engine, original) = open(&args.stage, seed)?;
    let dir = args.out.clone().unwrap_or_else(|| sibling(&args.stage.project, "_out"));
    std::fs::create_dir_all(&dir)?;
    let files = engine.export(&dir, args.overlay)?;
    let r = engine.output()?.rect;
    println!(
        "wrote {} frames to {}; crop x {}..{}, y {}..{}",
        files.len(),
        dir.display(),
        r.left,
        r.right,
        r.top,
        r.bottom
    );
    finish(&engine, &original, &args.stage)
}

fn serve(args: &ServeArgs) -> takecut::Result<()> {
    let project = Project::load(&args.project)?;
    let engine = Engine::open(project, &project_dir(&args.project))?;
    let export = args.export.clone().unwrap_or_else(|| sibling(&args.project, "_out"));
    let state = takecut_service::AppState::new(engine, Some(args.project.clone()), export);
    let addr = SocketAddr::new(args.bind, args.port);
    let rt = tokio::runtime::Runtime::new()?;
    println!("serving {} on http://{addr}", args.project.display());
    rt.block_on(takecut_service::serve(state, addr))?;
    Ok(())
}

fn parse() -> Cli {
    let advanced = std::env::args().any(|a| a == "--advanced");
    let mut cmd = Cli::command();
    if !advanced {
        let names: Vec<String> = cmd.get_subcommands().map(|s| s.get_name().to_string()).collect();
        for name in names {
            cmd = cmd.mut_subcommand(name, |mut sc| {
                for id in ADVANCED {
                    if sc.get_arguments().any(|a| a.get_id() == id) {
                        sc = sc.mut_arg(id, |a| a.hide(true));
                    }
                }
                sc
            });
        }
    }
    let matches = cmd.get_matches();
    Cli::from_arg_matches(&matches).unwrap_or_else(|e| e.exit())
}

fn main() -> ExitCode {
    let cli = parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot size the thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    let r = match &cli.cmd {
        Cmd::Init(a) => init(a),
        Cmd::Align(a) => align(a, cli.seed),
        Cmd::Cut(a) => cut(a, cli.seed),
        Cmd::Composite(a) => composite(a, cli.seed),
        Cmd::BenchCut(a) => bench::bench_cut(a, cli.seed),
        Cmd::BenchAlign(a) => bench::bench_align(a, cli.seed),
        Cmd::Serve(a) => serve(a),
    };
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code(&e);
            match e.stage() {
                Some(s) => eprintln!("error in {s} stage: {}", e.root()),
                None => eprintln!("error: {e}"),
            }
            ExitCode::from(code)
        }
    }
}
