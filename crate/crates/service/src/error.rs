use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use cvsa_core::Error;
use serde_json::{json, Value};

/// HTTP status and stable error code for every platform error.
///
/// The match is exhaustive on purpose: adding a variant to the core error
/// type fails the build here until it has a status.
pub fn classify(e: &Error) -> (StatusCode, &'static str) {
    use Error::*;
    match e {
        NotFound { .. } => (StatusCode::NOT_FOUND, "not_found"),
        UnknownActor(_) => (StatusCode::UNAUTHORIZED, "unknown_actor"),
        Invalid(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid"),
        SourceUnreadable { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "source_unreadable"),
        RoiOrdering(_) => (StatusCode::UNPROCESSABLE_ENTITY, "roi_ordering"),
        TimestampOutOfRange { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "timestamp_out_of_range"),
        InsufficientRaters { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "insufficient_raters"),
        InsufficientAssessments { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "insufficient_assessments"),
        AutoNegativeTarget(_) => (StatusCode::UNPROCESSABLE_ENTITY, "auto_negative_target"),
        ManualKeyframe(_) => (StatusCode::UNPROCESSABLE_ENTITY, "manual_keyframe"),
        InvalidPolygon { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_polygon"),
        DimensionMismatch { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "dimension_mismatch"),
        NoSharedTargets => (StatusCode::UNPROCESSABLE_ENTITY, "no_shared_targets"),
        Kappa(_) => (StatusCode::UNPROCESSABLE_ENTITY, "kappa"),
        BatchTooLarge { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "batch_too_large"),
        GateBlocked(_) => (StatusCode::UNPROCESSABLE_ENTITY, "gate_blocked"),
        OutputNotEmpty(_) => (StatusCode::UNPROCESSABLE_ENTITY, "output_not_empty"),
        DuplicateVideo { .. } => (StatusCode::CONFLICT, "duplicate_video"),
        VideoState { .. } => (StatusCode::CONFLICT, "video_state"),
        ExcludedVideo(_) => (StatusCode::CONFLICT, "excluded_video"),
        AlreadySampled(_) => (StatusCode::CONFLICT, "already_sampled"),
        NotSampled(_) => (StatusCode::CONFLICT, "not_sampled"),
        PlanInUse { .. } => (StatusCode::CONFLICT, "plan_in_use"),
        SecondAuthor { .. } => (StatusCode::CONFLICT, "second_author"),
        SegmentationState { .. } => (StatusCode::CONFLICT, "segmentation_state"),
        VersionConflict { .. } => (StatusCode::CONFLICT, "version_conflict"),
        NotAssigned { .. } => (StatusCode::FORBIDDEN, "not_assigned"),
        SelfReview(_) => (StatusCode::FORBIDDEN, "self_review"),
        Forbidden { .. } => (StatusCode::FORBIDDEN, "forbidden"),
        // the source may simply lack the requested frame
        Decode(_) => (StatusCode::BAD_GATEWAY, "decode"),
        Materialize { .. } => (StatusCode::BAD_GATEWAY, "materialize"),
        ArchiveUnreadable { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "archive_unreadable"),
        Storage(_) => (StatusCode::INTERNAL_SERVER_ERROR, "storage"),
        Io(_) => (StatusCode::INTERNAL_SERVER_ERROR, "io"),
    }
}

fn details(e: &Error) -> Value {
    match e {
        Error::VersionConflict { expected, actual, .. } => json!({ "expected": expected, "actual": actual }),
        Error::GateBlocked(report) => serde_json::to_value(report).unwrap_or(Value::Null),
        Error::Materialize { failed, .. } => failed
            .iter()
            .map(|f| json!({ "timestamp_ms": f.timestamp_ms, "reason": f.reason }))
            .collect(),
        Error::DuplicateVideo { existing, .. } => json!({ "existing": existing }),
        _ => Value::Null,
    }
}

/// Error body: `{"error": code, "message": text, "details": ...}`.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    pub details: Value,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
            details: Value::Null,
        }
    }

    pub fn unauthorized(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNAUTHORIZED, "unauthorized", message)
    }

    pub fn unprocessable(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid", message)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let (status, code) = classify(&e);
        ApiError {
            status,
            code,
            details: details(&e),
            message: e.to_string(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if self.status.is_server_error() {
            tracing::error!(code = self.code, "{}", self.message);
        }
        let body = json!({ "error": self.code, "message": self.message, "details": self.details });
        (self.status, Json(body)).into_response()
    }
}
