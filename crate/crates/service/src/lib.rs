//! Local HTTP API over one open project, driven by the editing frontend.
//!
//! Mutations are serialized through the session lock and bump the revision.
//! Stage runs borrow the engine on a blocking thread; while one is in
//! flight, requests that need the engine answer 423.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, MutexGuard};

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use takecut::pipeline::{Engine, Params, Project, Stage, StageTiming};
use takecut::seamcut::{Label, Stroke};
use takecut::video::{downsample2, encode_png, Frame, VideoClip};

/// Error body: the message and, for pipeline failures, the stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ApiError {
    pub error: String,
    pub stage: Option<Stage>,
    pub revision: u64,
}

#[derive(Debug)]
pub struct Failure {
    status: StatusCode,
    body: ApiError,
}

impl Failure {
    fn new(status: StatusCode, error: impl Into<String>, revision: u64) -> Self {
        Self {
            status,
            body: ApiError {
                error: error.into(),
                stage: None,
                revision,
            },
        }
    }

    fn pipeline(e: takecut::Error, revision: u64) -> Self {
        Self {
            status: StatusCode::UNPROCESSABLE_ENTITY,
            body: ApiError {
                stage: e.stage(),
                error: e.to_string(),
                revision,
            },
        }
    }

    fn locked(revision: u64) -> Self {
        Self::new(StatusCode::LOCKED, "a stage run is in progress", revision)
    }
}

impl IntoResponse for Failure {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<T, Failure>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobStatus {
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Job {
    pub id: u64,
    pub stage: Stage,
    pub status: JobStatus,
    /// Project revision the run started from.
    pub revision: u64,
    /// Stages the run had to bring up to date, in order.
    pub plan: Vec<Stage>,
    pub completed: Vec<Stage>,
    /// Stages that actually computed, as opposed to restored from the
    /// project cache or bypassed.
    pub executed: Vec<Stage>,
    pub timings: Vec<StageTiming>,
    pub error: Option<ApiError>,
}

struct Session {
    /// None while a job has it.
    engine: Option<Engine>,
    /// Project as of the last mutation, readable during jobs.
    snapshot: Project,
    revision: u64,
    jobs: BTreeMap<u64, Job>,
    next_job: u64,
    take_a: Arc<VideoClip>,
    take_b: Arc<VideoClip>,
}

struct Shared {
    session: Mutex<Session>,
    project_path: Option<PathBuf>,
    export_dir: PathBuf,
}

/// Cloneable handle to one session.
#[derive(Clone)]
pub struct AppState(Arc<Shared>);

impl AppState {
    /// `project_path` is where POST /save writes; exports go under
    /// `export_dir`.
    pub fn new(engine: Engine, project_path: Option<PathBuf>, export_dir: PathBuf) -> Self {
        let session = Session {
            snapshot: engine.project().clone(),
            take_a: engine.take_a().clone(),
            take_b: engine.take_b().clone(),
            engine: Some(engine),
            revision: 0,
            jobs: BTreeMap::new(),
            next_job: 1,
        };
        Self(Arc::new(Shared {
            session: Mutex::new(session),
            project_path,
            export_dir,
        }))
    }

    fn lock(&self) -> MutexGuard<'_, Session> {
        // A panicking job leaves the session usable; its engine is gone and
        // later requests report 423.
        self.0.session.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn revision(&self) -> u64 {
        self.lock().revision
    }

    /// Applies `edit` to the project if `expected` (when given) is the
    /// current revision, returning the new revision.
    fn mutate(&self, expected: Option<u64>, edit: impl FnOnce(&mut Engine) -> takecut::Result<()>) -> ApiResult<u64> {
        let mut s = self.lock();
        let rev = s.revision;
        if let Some(e) = expected.filter(|&e| e != rev) {
            return Err(Failure::new(
                StatusCode::CONFLICT,
                format!("write based on revision {e}, the project is at {rev}"),
                rev,
            ));
        }
        let engine = s.engine.as_mut().ok_or_else(|| Failure::locked(rev))?;
        edit(engine).map_err(|e| Failure::pipeline(e, rev))?;
        s.snapshot = engine.project().clone();
        s.revision += 1;
        Ok(s.revision)
    }

    /// Runs `f` on the engine off the async executor.
    async fn with_engine<T: Send + 'static>(
        &self,
        f: impl FnOnce(&mut Engine) -> takecut::Result<T> + Send + 'static,
    ) -> ApiResult<T> {
        let (mut engine, rev) = {
            let mut s = self.lock();
            let rev = s.revision;
            (s.engine.take().ok_or_else(|| Failure::locked(rev))?, rev)
        };
        let (engine, r) = tokio::task::spawn_blocking(move || {
            let r = f(&mut engine);
            (engine, r)
        })
        .await
        .map_err(|e| Failure::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string(), rev))?;
        let mut s = self.lock();
        s.snapshot = engine.project().clone();
        s.engine = Some(engine);
        r.map_err(|e| Failure::pipeline(e, rev))
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/project", get(get_project))
        .route("/offset", put(put_offset))
        .route("/params", put(put_params))
        .route("/frame/{clip}/{t}", get(get_frame))
        .route("/strokes/{t}", put(put_strokes))
        .route("/run/{stage}", post(post_run))
        .route("/job/{id}", get(get_job))
        .route("/preview/{t}", get(get_preview))
        .route("/seam/{t}", get(get_seam))
        .route("/export", post(post_export))
        .route("/save", post(post_save))
        .with_state(state)
}

/// Serves until the process ends. Binds where told; callers pass a loopback
/// address unless they mean otherwise.
pub async fn serve(state: AppState, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ProjectView {
    pub revision: u64,
    pub a: takecut::pipeline::ClipSource,
    pub b: takecut::pipeline::ClipSource,
    pub frame_size: (usize, usize),
    pub offset: i64,
    /// A frames `lo..hi` that enter the composite.
    pub overlap: (usize, usize),
    pub strokes: Vec<Stroke>,
    pub keyframes: Vec<usize>,
    pub params: Params,
    pub realigned: bool,
    pub running_job: Option<u64>,
}

async fn get_project(State(st): State<AppState>) -> ApiResult<Json<ProjectView>> {
    let s = st.lock();
    let p = &s.snapshot;
    let running_job = s.jobs.values().find(|j| j.status == JobStatus::Running).map(|j| j.id);
    Ok(Json(ProjectView {
        revision: s.revision,
        a: p.a.clone(),
        b: p.b.clone(),
        frame_size: p.frame_size,
        offset: p.offset,
        overlap: p.overlap().map_err(|e| Failure::pipeline(e, s.revision))?,
        strokes: p.strokes.entries.clone(),
        keyframes: p.keyframes.iter().map(|k| k.frame).collect(),
        params: p.params,
        realigned: p.realign.is_some(),
        running_job,
    }))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Revision {
    pub revision: u64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct OffsetBody {
    pub offset: i64,
    pub revision: Option<u64>,
}

async fn put_offset(State(st): State<AppState>, Json(body): Json<OffsetBody>) -> ApiResult<Json<Revision>> {
    let revision = st.mutate(body.revision, |e| e.set_offset(body.offset))?;
    Ok(Json(Revision { revision }))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ParamsBody {
    pub params: Params,
    pub revision: Option<u64>,
}

async fn put_params(State(st): State<AppState>, Json(body): Json<ParamsBody>) -> ApiResult<Json<Revision>> {
    let revision = st.mutate(body.revision, |e| {
        body.params.seam.validate()?;
        body.params.align.match_p.validate()?;
        body.params.align.refine_p.validate()?;
        body.params.color.params.validate()?;
        e.update(|p| p.params = body.params)
    })?;
    Ok(Json(Revision { revision }))
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct StrokeDelta {
    pub t: usize,
    pub x: usize,
    pub y: usize,
    #[serde(default)]
    pub label: Option<Label>,
    #[serde(default)]
    pub erase: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct StrokesBody {
    pub deltas: Vec<StrokeDelta>,
    pub revision: Option<u64>,
}

async fn put_strokes(
    State(st): State<AppState>,
    Path(t): Path<usize>,
    Json(body): Json<StrokesBody>,
) -> ApiResult<Json<Revision>> {
    let rev = st.revision();
    let bad = |msg: String| Failure::new(StatusCode::BAD_REQUEST, msg, rev);
    let (frames, (w, h)) = {
        let s = st.lock();
        (s.take_a.len(), s.snapshot.frame_size)
    };
    if t >= frames {
        return Err(bad(format!("frame {t} outside the {frames} frames of take A")));
    }
    for d in &body.deltas {
        if d.t != t {
            return Err(bad(format!("delta for frame {} sent to /strokes/{t}", d.t)));
        }
        if d.x >= w || d.y >= h {
            return Err(bad(format!("stroke ({}, {}) outside the {w}x{h} frame", d.x, d.y)));
        }
        if !d.erase && d.label.is_none() {
            return Err(bad("a delta needs a label unless it erases".into()));
        }
    }
    let revision = st.mutate(body.revision, |e| {
        e.update(|p| {
            for d in &body.deltas {
                match (d.erase, d.label) {
                    (true, _) => p.strokes.erase(d.t, d.x, d.y),
                    (false, Some(l)) => p.strokes.set(d.t, d.x, d.y, l),
                    (false, None) => unreachable!("checked above"),
                }
            }
        })
    })?;
    Ok(Json(Revision { revision }))
}

#[derive(Debug, Default, Deserialize)]
pub struct ImageQuery {
    pub half: Option<bool>,
    pub overlay: Option<bool>,
}

fn png(frame: &Frame) -> Response {
    match encode_png(frame) {
        Ok(bytes) => ([(header::CONTENT_TYPE, "image/png")], bytes).into_response(),
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
    }
}

async fn get_frame(
    State(st): State<AppState>,
    Path((clip, t)): Path<(String, usize)>,
    Query(q): Query<ImageQuery>,
) -> ApiResult<Response> {
    let (take, rev) = {
        let s = st.lock();
        let take = match clip.as_str() {
            "a" | "A" => s.take_a.clone(),
            "b" | "B" => s.take_b.clone(),
            _ => return Err(Failure::new(StatusCode::NOT_FOUND, format!("no clip {clip:?}; use a or b"), s.revision)),
        };
        (take, s.revision)
    };
    if t >= take.len() {
        return Err(Failure::new(
            StatusCode::NOT_FOUND,
            format!("clip {clip} has {} frames", take.len()),
            rev,
        ));
    }
    let half = q.half.unwrap_or(false);
    let out = tokio::task::spawn_blocking(move || {
        let f = take.frame(t);
        if half {
            png(&downsample2(f))
        } else {
            png(f)
        }
    })
    .await
    .map_err(|e| Failure::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string(), rev))?;
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct JobStarted {
    pub job: u64,
    pub revision: u64,
    pub plan: Vec<Stage>,
}

async fn post_run(State(st): State<AppState>, Path(stage): Path<String>) -> ApiResult<Response> {
    let (id, mut engine, plan, rev) = {
        let mut s = st.lock();
        let rev = s.revision;
        let stage: Stage = stage
            .parse()
            .map_err(|e: takecut::Error| Failure::new(StatusCode::NOT_FOUND, e.to_string(), rev))?;
        let engine = s.engine.take().ok_or_else(|| Failure::locked(rev))?;
        let plan = match engine.plan(stage).and_then(|p| {
            if p.contains(&Stage::Cut) {
                engine.check_labels()?;
            }
            Ok(p)
        }) {
            Ok(p) => p,
            Err(e) => {
                s.engine = Some(engine);
                return Err(Failure::pipeline(e, rev));
            }
        };
        let id = s.next_job;
        s.next_job += 1;
        s.jobs.insert(
            id,
            Job {
                id,
                stage,
                status: JobStatus::Running,
                revision: rev,
                plan: plan.clone(),
                completed: Vec::new(),
                executed: Vec::new(),
                timings: Vec::new(),
                error: None,
            },
        );
        (id, engine, plan, rev)
    };
    let worker = st.clone();
    let steps = plan.clone();
    tokio::task::spawn_blocking(move || {
        let mut failure = None;
        for s in steps {
            let before = engine.executions(s);
            let r = engine.compute(s);
            let ran = engine.executions(s) > before;
            let timing = engine.timing_report().stages.into_iter().find(|t| t.stage == s);
            let mut sess = worker.lock();
            let job = sess.jobs.get_mut(&id).expect("job registered");
            match r {
                Ok(()) => {
                    job.completed.push(s);
                    if ran {
                        job.executed.push(s);
                    }
                    job.timings.extend(timing);
                }
                Err(e) => {
                    failure = Some(ApiError {
                        stage: e.stage(),
                        error: e.to_string(),
                        revision: rev,
                    });
                    break;
                }
            }
        }
        let mut sess = worker.lock();
        sess.snapshot = engine.project().clone();
        sess.engine = Some(engine);
        let job = sess.jobs.get_mut(&id).expect("job registered");
        job.status = if failure.is_some() {
            JobStatus::Failed
        } else {
            JobStatus::Done
        };
        job.error = failure;
    });
    Ok((
        StatusCode::ACCEPTED,
        Json(JobStarted {
            job: id,
            revision: rev,
            plan,
        }),
    )
        .into_response())
}

async fn get_job(State(st): State<AppState>, Path(id): Path<u64>) -> ApiResult<Response> {
    let s = st.lock();
    let job = s
        .jobs
        .get(&id)
        .ok_or_else(|| Failure::new(StatusCode::NOT_FOUND, format!("no job {id}"), s.revision))?;
    // A failed job reports its stage error with the pipeline status code.
    let status = if job.status == JobStatus::Failed {
        StatusCode::UNPROCESSABLE_ENTITY
    } else {
        StatusCode::OK
    };
    Ok((status, Json(job.clone())).into_response())
}

async fn get_preview(
    State(st): State<AppState>,
    Path(t): Path<usize>,
    Query(q): Query<ImageQuery>,
) -> ApiResult<Response> {
    let half = q.half.unwrap_or(true);
    let overlay = q.overlay.unwrap_or(false);
    let f = st.with_engine(move |e| e.preview(t, overlay, half)).await?;
    Ok(png(&f))
}

async fn get_seam(State(st): State<AppState>, Path(t): Path<usize>) -> ApiResult<Response> {
    let bytes = st.with_engine(move |e| e.seam_png(t)).await?;
    Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response())
}

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct ExportBody {
    #[serde(default)]
    pub overlay: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Exported {
    pub files: Vec<PathBuf>,
    pub revision: u64,
}

async fn post_export(State(st): State<AppState>, body: Option<Json<ExportBody>>) -> ApiResult<Json<Exported>> {
    let overlay = body.map(|b| b.overlay).unwrap_or(false);
    let dir = st.0.export_dir.clone();
    let files = st.with_engine(move |e| e.export(&dir, overlay)).await?;
    Ok(Json(Exported {
        files,
        revision: st.revision(),
    }))
}

async fn post_save(State(st): State<AppState>) -> ApiResult<Json<Revision>> {
    let path = st
        .0
        .project_path
        .clone()
        .ok_or_else(|| Failure::new(StatusCode::CONFLICT, "session has no project file", st.revision()))?;
    st.with_engine(move |e| e.save(&path)).await?;
    Ok(Json(Revision {
        revision: st.revision(),
    }))
}
