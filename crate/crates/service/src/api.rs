//! Resource-oriented HTTP API over [`Platform`].
//!
//! Store access is blocking, so every handler hops onto the blocking pool.
//! Writes accept an optional `expected_version`; a stale one yields 409.

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{FromRequest, FromRequestParts, Path, Request, State};
use axum::http::header::CONTENT_TYPE;
use axum::http::request::Parts;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::NaiveDate;
use cvsa_core::cvs::{default_checklist, CvsAssessment};
use cvsa_core::export::{encode_mask, ExportOptions};
use cvsa_core::identity::{Annotator, Role};
use cvsa_core::ingestion::{ExclusionFlag, Fps};
use cvsa_core::qa::{AgreementScope, BatchRequest, KappaCriterion};
use cvsa_core::sampling::Roi;
use cvsa_core::segmentation::{PolygonAnnotation, Submission, Verdict};
use cvsa_core::{AnnotatorId, FrameId, Platform, ProjectId, Target, VideoId};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::auth::{Caller, TokenTable};
use crate::error::ApiError;

#[derive(Clone)]
pub struct AppState {
    pub platform: Platform,
    pub tokens: Arc<TokenTable>,
    /// Exports are written to `<export_root>/<name>`.
    pub export_root: PathBuf,
}

type ApiResult<T = Json<Value>> = Result<T, ApiError>;

/// JSON body whose rejections use the API error format.
pub struct Body<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for Body<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        match Json::<T>::from_request(req, state).await {
            Ok(Json(v)) => Ok(Body(v)),
            Err(JsonRejection::MissingJsonContentType(e)) => Err(ApiError::new(
                StatusCode::UNSUPPORTED_MEDIA_TYPE,
                "content_type",
                e.body_text(),
            )),
            Err(JsonRejection::JsonSyntaxError(e)) => {
                Err(ApiError::new(StatusCode::BAD_REQUEST, "malformed_json", e.body_text()))
            }
            Err(e) => Err(ApiError::unprocessable(e.body_text())),
        }
    }
}

/// Like [`Body`], but an empty body means `T::default()`.
pub struct OptBody<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned + Default> FromRequest<S> for OptBody<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        let bytes = axum::body::Bytes::from_request(req, state)
            .await
            .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "body", e.body_text()))?;
        if bytes.iter().all(u8::is_ascii_whitespace) {
            return Ok(OptBody(T::default()));
        }
        serde_json::from_slice(&bytes)
            .map(OptBody)
            .map_err(|e| ApiError::unprocessable(e.to_string()))
    }
}

/// Query string with API-format rejections.
pub struct Q<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequestParts<S> for Q<T> {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, _: &S) -> Result<Self, Self::Rejection> {
        axum::extract::Query::<T>::try_from_uri(&parts.uri)
            .map(|q| Q(q.0))
            .map_err(|e| ApiError::unprocessable(e.body_text()))
    }
}

fn parse<T>(raw: &str) -> Result<T, ApiError>
where
    T: std::str::FromStr<Err = cvsa_core::Error>,
{
    raw.parse().map_err(ApiError::from)
}

async fn run<T, F>(state: &AppState, f: F) -> ApiResult<T>
where
    F: FnOnce(&Platform) -> cvsa_core::Result<T> + Send + 'static,
    T: Send + 'static,
{
    let platform = state.platform.clone();
    tokio::task::spawn_blocking(move || f(&platform))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "panic", e.to_string()))?
        .map_err(ApiError::from)
}

fn to_json<T: Serialize>(value: &T) -> Json<Value> {
    Json(serde_json::to_value(value).expect("API types serialize"))
}

fn versioned<T: Serialize>(version: u64, record: &T) -> Json<Value> {
    Json(json!({ "version": version, "record": record }))
}

fn require(platform: &Platform, who: &AnnotatorId, roles: &[Role]) -> cvsa_core::Result<()> {
    platform.annotator(who)?.require(roles)
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/healthz", get(|| async { "ok" }))
        .route("/me", get(me))
        .route("/checklist", get(checklist))
        .route("/annotators", get(list_annotators).post(upsert_annotator))
        .route("/projects", get(list_projects).post(create_project))
        .route("/projects/{id}", get(get_project))
        .route("/projects/{id}/gate", get(gate))
        .route("/projects/{id}/export", post(export))
        .route("/videos", get(list_videos).post(register_video))
        .route("/videos/{id}", get(get_video))
        .route("/videos/{id}/screening", post(screen_video))
        .route("/videos/{id}/roi", get(get_roi).put(put_roi))
        .route(
            "/videos/{id}/sampling",
            get(get_plan).post(sample).delete(delete_plan),
        )
        .route("/videos/{id}/sampling/materialize", post(materialize))
        .route("/videos/{id}/stream", get(stream))
        .route("/videos/{id}/cvs", get(get_video_cvs).post(post_video_cvs))
        .route("/videos/{id}/consensus", get(video_consensus))
        .route("/videos/{id}/review-queue", get(review_queue))
        .route("/frames/{id}", get(get_frame))
        .route("/frames/{id}/image", get(frame_image))
        .route("/frames/{id}/cvs", get(get_frame_cvs).post(post_frame_cvs))
        .route("/frames/{id}/consensus", get(frame_consensus))
        .route(
            "/frames/{id}/segmentation",
            get(get_segmentation).post(post_segmentation),
        )
        .route("/frames/{id}/mask", get(frame_mask))
        .route("/segmentations/{id}", get(get_segmentation_record))
        .route("/segmentations/{id}/start-review", post(start_review))
        .route("/segmentations/{id}/review", post(review))
        .route("/segmentations/{id}/lint", get(lint))
        .route("/assignments", post(assign))
        .route("/work-queue", get(work_queue))
        .route("/qa/kappa", get(kappa))
        .route("/qa/batches", post(batch))
        .route("/audit", get(audit))
        .with_state(state)
}

async fn me(State(s): State<AppState>, Caller(who): Caller) -> ApiResult {
    run(&s, move |p| p.annotator(&who)).await.map(|a| to_json(&a))
}

async fn checklist(_: Caller) -> Json<Value> {
    to_json(&default_checklist())
}

async fn list_annotators(State(s): State<AppState>, Caller(who): Caller) -> ApiResult {
    run(&s, move |p| {
        require(p, &who, &[Role::Admin])?;
        p.annotators()
    })
    .await
    .map(|a| to_json(&a))
}

async fn upsert_annotator(
    State(s): State<AppState>,
    Caller(who): Caller,
    Body(a): Body<Annotator>,
) -> ApiResult {
    run(&s, move |p| p.upsert_annotator(&who, a)).await.map(|a| to_json(&a))
}

#[derive(Deserialize)]
struct NewProject {
    project_id: ProjectId,
    name: String,
    #[serde(default)]
    interval_ms: Option<u64>,
}

async fn list_projects(State(s): State<AppState>, _: Caller) -> ApiResult {
    run(&s, |p| p.projects()).await.map(|v| to_json(&v))
}

async fn create_project(
    State(s): State<AppState>,
    Caller(who): Caller,
    Body(req): Body<NewProject>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    run(&s, move |p| p.create_project(&who, req.project_id, &req.name, req.interval_ms))
        .await
        .map(|v| (StatusCode::CREATED, to_json(&v)))
}

async fn get_project(State(s): State<AppState>, _: Caller, Path(id): Path<String>) -> ApiResult {
    let id: ProjectId = parse(&id)?;
    run(&s, move |p| p.project(&id)).await.map(|v| to_json(&v))
}

async fn gate(State(s): State<AppState>, _: Caller, Path(id): Path<String>) -> ApiResult {
    let id: ProjectId = parse(&id)?;
    run(&s, move |p| p.check_export_gate(&id)).await.map(|v| to_json(&v))
}

#[derive(Deserialize)]
struct ExportRequest {
    /// Directory name under the export root.
    name: String,
    #[serde(default)]
    partial: bool,
    #[serde(default)]
    materialize_frames: bool,
}

async fn export(
    State(s): State<AppState>,
    Caller(who): Caller,
    Path(id): Path<String>,
    Body(req): Body<ExportRequest>,
) -> ApiResult {
    let id: ProjectId = parse(&id)?;
    // same character rules as ids, so the name can never leave the root
    let name: ProjectId = parse(&req.name)?;
    if name.as_str().starts_with('.') {
        return Err(ApiError::unprocessable("export name must not start with '.'"));
    }
    let out = s.export_root.join(name.as_str());
    let options = ExportOptions {
        partial: req.partial,
        materialize_frames: req.materialize_frames,
    };
    let path = out.clone();
    let manifest = run(&s, move |p| p.export_dataset(&who, &id, &path, options)).await?;
    Ok(Json(json!({
        "path": out,
        "export_checksum": manifest.export_checksum,
        "frames": manifest.frames.len(),
        "omitted": manifest.omitted,
    })))
}

#[derive(Deserialize)]
struct NewVideo {
    project_id: ProjectId,
    source_uri: String,
    duration_ms: u64,
    fps: Fps,
}

async fn register_video(
    State(s): State<AppState>,
    Caller(who): Caller,
    Body(req): Body<NewVideo>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let v = run(&s, move |p| {
        let video = p.register_video(&who, &req.project_id, &req.source_uri, req.duration_ms, req.fps)?;
        p.video(&video.video_id)
    })
    .await?;
    Ok((StatusCode::CREATED, versioned(v.version, &v.record)))
}

#[derive(Deserialize)]
struct VideoFilter {
    project: Option<ProjectId>,
}

async fn list_videos(State(s): State<AppState>, _: Caller, Q(f): Q<VideoFilter>) -> ApiResult {
    run(&s, move |p| p.videos(f.project.as_ref())).await.map(|v| to_json(&v))
}

async fn get_video(State(s): State<AppState>, _: Caller, Path(id): Path<String>) -> ApiResult {
    let id: VideoId = parse(&id)?;
    let v = run(&s, move |p| p.video(&id)).await?;
    Ok(versioned(v.version, &v.record))
}

#[derive(Deserialize)]
struct Screening {
    #[serde(default)]
    flags: BTreeSet<ExclusionFlag>,
    #[serde(default)]
    expected_version: Option<u64>,
}

async fn screen_video(
    State(s): State<AppState>,
    Caller(who): Caller,
    Path(id): Path<String>,
    Body(req): Body<Screening>,
) -> ApiResult {
    let id: VideoId = parse(&id)?;
    let v = run(&s, move |p| {
        p.screen_video(&who, &id, req.flags, req.expected_version)?;
        p.video(&id)
    })
    .await?;
    Ok(versioned(v.version, &v.record))
}

#[derive(Deserialize)]
struct RoiBody {
    t_start_ms: u64,
    t_end_ms: u64,
    #[serde(default)]
    t_evaluable_ms: Option<u64>,
    #[serde(default)]
    expected_version: Option<u64>,
}

async fn put_roi(
    State(s): State<AppState>,
    Caller(who): Caller,
    Path(id): Path<String>,
    Body(req): Body<RoiBody>,
) -> ApiResult {
    let id: VideoId = parse(&id)?;
    let roi = Roi::new(req.t_start_ms, req.t_end_ms, req.t_evaluable_ms)?;
    let v = run(&s, move |p| {
        p.set_roi(&who, &id, roi, req.expected_version)?;
        p.roi(&id)
    })
    .await?;
    Ok(versioned(v.version, &v.record))
}

async fn get_roi(State(s): State<AppState>, _: Caller, Path(id): Path<String>) -> ApiResult {
    let id: VideoId = parse(&id)?;
    let v = run(&s, move |p| p.roi(&id)).await?;
    Ok(versioned(v.version, &v.record))
}

#[derive(Deserialize, Default)]
struct SampleBody {
    /// Defaults to the project's interval.
    #[serde(default)]
    interval_ms: Option<u64>,
}

async fn sample(
    State(s): State<AppState>,
    Caller(who): Caller,
    Path(id): Path<String>,
    OptBody(req): OptBody<SampleBody>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let id: VideoId = parse(&id)?;
    run(&s, move |p| {
        let interval = match req.interval_ms {
            Some(i) => i,
            None => p.project(&p.video(&id)?.record.project_id)?.interval_ms,
        };
        p.sample_keyframes(&who, &id, interval)
    })
    .await
    .map(|plan| (StatusCode::CREATED, to_json(&plan)))
}

async fn get_plan(State(s): State<AppState>, _: Caller, Path(id): Path<String>) -> ApiResult {
    let id: VideoId = parse(&id)?;
    run(&s, move |p| p.plan(&id)).await.map(|v| to_json(&v))
}

async fn delete_plan(
    State(s): State<AppState>,
    Caller(who): Caller,
    Path(id): Path<String>,
) -> ApiResult<StatusCode> {
    let id: VideoId = parse(&id)?;
    run(&s, move |p| p.delete_plan(&who, &id)).await?;
    Ok(StatusCode::NO_CONTENT)
}

async fn materialize(State(s): State<AppState>, Caller(who): Caller, Path(id): Path<String>) -> ApiResult {
    let id: VideoId = parse(&id)?;
    run(&s, move |p| p.materialize_plan(&who, &id)).await.map(|v| to_json(&v))
}

#[derive(Deserialize)]
struct StreamQuery {
    t: u64,
    #[serde(default)]
    format: Option<String>,
}

/// Time-addressed access: a playback descriptor anchored at `t`, or the
/// decoded frame nearest to `t` with `format=png`.
async fn stream(
    State(s): State<AppState>,
    _: Caller,
    Path(id): Path<String>,
    Q(q): Q<StreamQuery>,
) -> ApiResult<Response> {
    let id: VideoId = parse(&id)?;
    let t = q.t;
    match q.format.as_deref() {
        None | Some("json") => {
            let video = run(&s, move |p| {
                let v = p.video(&id)?.record;
                v.check_timestamp(t)?;
                Ok(v)
            })
            .await?;
            let fragment = format!("{}#t={}.{:03}", video.source_uri, t / 1000, t % 1000);
            Ok(Json(json!({
                "video_id": video.video_id,
                "source_uri": video.source_uri,
                "fps": video.fps,
                "duration_ms": video.duration_ms,
                "anchor_ms": t,
                "anchor_seconds": t as f64 / 1000.0,
                "media_fragment": fragment,
            }))
            .into_response())
        }
        Some("png") => {
            let (image, decoded) = run(&s, move |p| p.decode_frame(&id, t)).await?;
            Ok((
                [
                    (CONTENT_TYPE, "image/png".to_owned()),
                    ("x-frame-id".parse().unwrap(), image.frame_id.to_string()),
                    ("x-anchor-ms".parse().unwrap(), t.to_string()),
                ],
                decoded.png,
            )
                .into_response())
        }
        Some(other) => Err(ApiError::unprocessable(format!("unknown format {other:?}"))),
    }
}

/// The three criteria; all are required so partial forms are rejected.
#[derive(Deserialize)]
struct CvsBody {
    c1: bool,
    c2: bool,
    c3: bool,
    #[serde(default)]
    expected_version: Option<u64>,
}

#[derive(Deserialize, Default)]
struct CvsQuery {
    /// Every rater's assessment; reviewers and admins only.
    #[serde(default)]
    all: bool,
}

async fn submit_cvs(s: &AppState, who: AnnotatorId, target: Target, req: CvsBody) -> ApiResult<(StatusCode, Json<Value>)> {
    run(s, move |p| p.submit_assessment(&who, &target, [req.c1, req.c2, req.c3], req.expected_version))
        .await
        .map(|a| (StatusCode::CREATED, to_json(&a)))
}

async fn read_cvs(s: &AppState, who: AnnotatorId, target: Target, all: bool) -> ApiResult {
    run(s, move |p| {
        if all {
            require(p, &who, &[Role::Reviewer, Role::Admin])?;
            return Ok(serde_json::to_value(p.assessments(&target)?).expect("serialize"));
        }
        let own: CvsAssessment = p
            .own_assessment(&who, &target)?
            .ok_or_else(|| cvsa_core::Error::not_found("assessment", format!("{target} by {who}")))?;
        Ok(serde_json::to_value(own).expect("serialize"))
    })
    .await
    .map(Json)
}

async fn post_frame_cvs(
    State(s): State<AppState>,
    Caller(who): Caller,
    Path(id): Path<String>,
    Body(req): Body<CvsBody>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let target = Target::Frame(parse(&id)?);
    submit_cvs(&s, who, target, req).await
}

async fn get_frame_cvs(
    State(s): State<AppState>,
    Caller(who): Caller,
    Path(id): Path<String>,
    Q(q): Q<CvsQuery>,
) -> ApiResult {
    let target = Target::Frame(parse(&id)?);
    read_cvs(&s, who, target, q.all).await
}

async fn post_video_cvs(
    State(s): State<AppState>,
    Caller(who): Caller,
    Path(id): Path<String>,
    Body(req): Body<CvsBody>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let target = Target::Video(parse(&id)?);
    submit_cvs(&s, who, target, req).await
}

async fn get_video_cvs(
    State(s): State<AppState>,
    Caller(who): Caller,
    Path(id): Path<String>,
    Q(q): Q<CvsQuery>,
) -> ApiResult {
    let target = Target::Video(parse(&id)?);
    read_cvs(&s, who, target, q.all).await
}

async fn frame_consensus(State(s): State<AppState>, Caller(who): Caller, Path(id): Path<String>) -> ApiResult {
    let id: FrameId = parse(&id)?;
    run(&s, move |p| {
        require(p, &who, &[Role::Reviewer, Role::Admin])?;
        p.frame_label(&id)
    })
    .await
    .map(|v| to_json(&v))
}

async fn video_consensus(State(s): State<AppState>, Caller(who): Caller, Path(id): Path<String>) -> ApiResult {
    let target = Target::Video(parse(&id)?);
    run(&s, move |p| {
        require(p, &who, &[Role::Reviewer, Role::Admin])?;
        p.compute_consensus(&target)
    })
    .await
    .map(|v| to_json(&v))
}

async fn review_queue(State(s): State<AppState>, Caller(who): Caller, Path(id): Path<String>) -> ApiResult {
    let id: VideoId = parse(&id)?;
    run(&s, move |p| p.sequential_review_queue(&id, &who)).await.map(|v| to_json(&v))
}

/// The frame record plus its neighbours in plan order.
async fn get_frame(State(s): State<AppState>, _: Caller, Path(id): Path<String>) -> ApiResult {
    let id: FrameId = parse(&id)?;
    run(&s, move |p| {
        let frame = p.frame(&id)?;
        let plan = p.plan(&frame.video_id)?;
        let order: Vec<FrameId> = plan.frames().map(|f| f.frame_id()).collect();
        let pos = order.iter().position(|f| *f == id);
        let previous = pos.and_then(|i| i.checked_sub(1)).map(|i| order[i].clone());
        let next = pos.and_then(|i| order.get(i + 1).cloned());
        Ok(json!({ "frame": frame, "previous": previous, "next": next }))
    })
    .await
    .map(Json)
}

async fn frame_image(State(s): State<AppState>, _: Caller, Path(id): Path<String>) -> ApiResult<Response> {
    let id: FrameId = parse(&id)?;
    let decoded = run(&s, move |p| {
        let frame = p.frame(&id)?;
        Ok(p.decode_frame(&frame.video_id, frame.timestamp_ms)?.1)
    })
    .await?;
    Ok(([(CONTENT_TYPE, "image/png")], decoded.png).into_response())
}

#[derive(Deserialize)]
struct SegmentationBody {
    polygons: Vec<PolygonAnnotation>,
    #[serde(default)]
    image_width: Option<u32>,
    #[serde(default)]
    image_height: Option<u32>,
    /// Save without submitting for review.
    #[serde(default)]
    draft: bool,
    #[serde(default)]
    expected_version: Option<u64>,
}

async fn post_segmentation(
    State(s): State<AppState>,
    Caller(who): Caller,
    Path(id): Path<String>,
    Body(req): Body<SegmentationBody>,
) -> ApiResult {
    let id: FrameId = parse(&id)?;
    let v = run(&s, move |p| {
        let submission = Submission {
            polygons: req.polygons,
            image_width: req.image_width,
            image_height: req.image_height,
        };
        if req.draft {
            p.save_segmentation_draft(&who, &id, submission, req.expected_version)?;
        } else {
            p.submit_segmentation(&who, &id, submission, req.expected_version)?;
        }
        p.segmentation(&id)?
            .ok_or_else(|| cvsa_core::Error::not_found("segmentation", &id))
    })
    .await?;
    Ok(versioned(v.version, &v.record))
}

async fn get_segmentation(State(s): State<AppState>, _: Caller, Path(id): Path<String>) -> ApiResult {
    let id: FrameId = parse(&id)?;
    let v = run(&s, move |p| {
        p.segmentation(&id)?
            .ok_or_else(|| cvsa_core::Error::not_found("segmentation", &id))
    })
    .await?;
    Ok(versioned(v.version, &v.record))
}

async fn get_segmentation_record(State(s): State<AppState>, _: Caller, Path(id): Path<String>) -> ApiResult {
    let v = run(&s, move |p| p.segmentation_by_record(&id)).await?;
    Ok(versioned(v.version, &v.record))
}

async fn frame_mask(State(s): State<AppState>, _: Caller, Path(id): Path<String>) -> ApiResult<Response> {
    let id: FrameId = parse(&id)?;
    let mask = run(&s, move |p| p.segmentation_mask(&id)).await?;
    Ok(([(CONTENT_TYPE, "image/png")], encode_mask(&mask)).into_response())
}

#[derive(Deserialize, Default)]
struct StartReview {
    #[serde(default)]
    expected_version: Option<u64>,
}

async fn start_review(
    State(s): State<AppState>,
    Caller(who): Caller,
    Path(id): Path<String>,
    OptBody(req): OptBody<StartReview>,
) -> ApiResult {
    let v = run(&s, move |p| {
        p.start_review(&who, &id, req.expected_version)?;
        p.segmentation_by_record(&id)
    })
    .await?;
    Ok(versioned(v.version, &v.record))
}

#[derive(Deserialize)]
struct ReviewBody {
    verdict: Verdict,
    #[serde(default)]
    notes: Option<String>,
    #[serde(default)]
    expected_version: Option<u64>,
}

async fn review(
    State(s): State<AppState>,
    Caller(who): Caller,
    Path(id): Path<String>,
    Body(req): Body<ReviewBody>,
) -> ApiResult {
    let v = run(&s, move |p| {
        p.review_segmentation(&who, &id, req.verdict, req.notes, req.expected_version)?;
        p.segmentation_by_record(&id)
    })
    .await?;
    Ok(versioned(v.version, &v.record))
}

async fn lint(State(s): State<AppState>, _: Caller, Path(id): Path<String>) -> ApiResult {
    run(&s, move |p| p.lint_segmentation(&id)).await.map(|v| to_json(&v))
}

#[derive(Deserialize)]
struct AssignBody {
    target: Target,
    raters: Vec<AnnotatorId>,
}

async fn assign(State(s): State<AppState>, Caller(who): Caller, Body(req): Body<AssignBody>) -> ApiResult {
    run(&s, move |p| p.assign_raters(&who, &req.target, &req.raters))
        .await
        .map(|v| to_json(&v))
}

async fn work_queue(State(s): State<AppState>, Caller(who): Caller) -> ApiResult {
    run(&s, move |p| p.work_queue(&who)).await.map(|v| to_json(&v))
}

#[derive(Deserialize)]
#[serde(rename_all = "snake_case")]
enum ScopeKind {
    Project,
    Video,
}

#[derive(Deserialize)]
struct KappaQuery {
    scope: ScopeKind,
    id: String,
    criterion: String,
}

async fn kappa(State(s): State<AppState>, Caller(who): Caller, Q(q): Q<KappaQuery>) -> ApiResult {
    let scope = match q.scope {
        ScopeKind::Project => AgreementScope::Project(parse(&q.id)?),
        ScopeKind::Video => AgreementScope::Video(parse(&q.id)?),
    };
    let criterion: KappaCriterion = parse(&q.criterion)?;
    run(&s, move |p| {
        require(p, &who, &[Role::Reviewer, Role::Admin])?;
        p.agreement_report(scope, criterion)
    })
    .await
    .map(|v| to_json(&v))
}

async fn batch(State(s): State<AppState>, Caller(who): Caller, Body(req): Body<BatchRequest>) -> ApiResult<(StatusCode, Json<Value>)> {
    run(&s, move |p| p.create_review_batch(&who, &req))
        .await
        .map(|b| (StatusCode::CREATED, to_json(&b)))
}

#[derive(Deserialize)]
struct AuditQuery {
    collection: Option<String>,
    key: Option<String>,
    /// Only entries at or after this date.
    since: Option<NaiveDate>,
}

async fn audit(State(s): State<AppState>, Caller(who): Caller, Q(q): Q<AuditQuery>) -> ApiResult {
    run(&s, move |p| {
        require(p, &who, &[Role::Admin])?;
        let mut entries = p.audit_log(q.collection.as_deref(), q.key.as_deref())?;
        if let Some(day) = q.since {
            entries.retain(|e| e.at.date_naive() >= day);
        }
        Ok(entries)
    })
    .await
    .map(|v| to_json(&v))
}
