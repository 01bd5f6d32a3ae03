use std::io;
use std::path::PathBuf;

use thiserror::Error;

use crate::export::ExportGateReport;
use crate::ids::{AnnotatorId, FrameId, Target, VideoId};
use crate::ingestion::{DecodeError, FrameImage, VideoStatus};
use crate::qa::KappaError;
use crate::store::StoreError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification used by the HTTP layer and the CLI exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    NotFound,
    Invalid,
    Conflict,
    Forbidden,
    Io,
}

/// A manual keyframe that could not be decoded during materialization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameFailure {
    pub timestamp_ms: u64,
    pub reason: String,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{kind} {id} not found")]
    NotFound { kind: &'static str, id: String },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("source {uri} is not readable: {source}")]
    SourceUnreadable {
        uri: String,
        #[source]
        source: io::Error,
    },

    #[error("video already registered as {existing} (checksum {checksum})")]
    DuplicateVideo { checksum: String, existing: VideoId },

    #[error("video {video} is {status:?}; cannot {action}")]
    VideoState {
        video: VideoId,
        status: VideoStatus,
        action: &'static str,
    },

    #[error("video {0} is excluded")]
    ExcludedVideo(VideoId),

    #[error("video {0} already has a sampling plan")]
    AlreadySampled(VideoId),

    #[error("video {0} has not been sampled")]
    NotSampled(VideoId),

    #[error("region of interest ordering violated: {0}")]
    RoiOrdering(String),

    #[error("timestamp {timestamp_ms} ms outside [0, {duration_ms}] ms")]
    TimestampOutOfRange { timestamp_ms: u64, duration_ms: u64 },

    #[error("frame decode failed: {0}")]
    Decode(#[from] DecodeError),

    #[error("{} of {} keyframes failed to decode (first at {} ms)", failed.len(), failed.len() + decoded.len(), failed.first().map(|f| f.timestamp_ms).unwrap_or_default())]
    Materialize {
        decoded: Vec<FrameImage>,
        failed: Vec<FrameFailure>,
    },

    #[error("plan for {video} cannot be deleted: {annotations} annotations reference its frames")]
    PlanInUse { video: VideoId, annotations: usize },

    #[error("at least {required} raters are required, got {got}")]
    InsufficientRaters { required: usize, got: usize },

    #[error("target {target} has {got} assessments, at least {required} required")]
    InsufficientAssessments {
        target: Target,
        required: usize,
        got: usize,
    },

    #[error("rater {rater} is not assigned to {target}")]
    NotAssigned { rater: AnnotatorId, target: Target },

    #[error("frame {0} is auto-negative and cannot be annotated by hand")]
    AutoNegativeTarget(FrameId),

    #[error("frame {0} is a manual keyframe; only auto-negative frames are labeled automatically")]
    ManualKeyframe(FrameId),

    #[error("frame {frame} is already segmented by {author}")]
    SecondAuthor { frame: FrameId, author: AnnotatorId },

    #[error("{0} cannot review their own segmentation")]
    SelfReview(AnnotatorId),

    #[error("segmentation {record} is {status}; cannot {action}")]
    SegmentationState {
        record: String,
        status: String,
        action: &'static str,
    },

    #[error("polygon {polygon}: {reason}")]
    InvalidPolygon { polygon: String, reason: String },

    #[error("mask dimensions {got_width}x{got_height} do not match frame {want_width}x{want_height}")]
    DimensionMismatch {
        want_width: u32,
        want_height: u32,
        got_width: u32,
        got_height: u32,
    },

    #[error("{actor} lacks role {required}")]
    Forbidden { actor: AnnotatorId, required: String },

    #[error("unknown annotator {0}")]
    UnknownActor(String),

    #[error("version conflict on {collection}/{key}: expected {expected}, found {actual}")]
    VersionConflict {
        collection: String,
        key: String,
        expected: u64,
        actual: u64,
    },

    #[error("no rater pair shares a target in scope")]
    NoSharedTargets,

    #[error(transparent)]
    Kappa(#[from] KappaError),

    #[error("review batch of {size} requested from a pool of {pool}")]
    BatchTooLarge { size: usize, pool: usize },

    #[error("export blocked by {} incomplete frames", .0.blocking.len())]
    GateBlocked(Box<ExportGateReport>),

    #[error("output directory {0} is not empty")]
    OutputNotEmpty(PathBuf),

    #[error("archive {path} is unreadable: {reason}")]
    ArchiveUnreadable { path: PathBuf, reason: String },

    #[error("storage failure: {0}")]
    Storage(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub fn not_found(kind: &'static str, id: impl ToString) -> Self {
        Error::NotFound {
            kind,
            id: id.to_string(),
        }
    }

    pub fn kind(&self) -> ErrorKind {
        use Error::*;
        match self {
            NotFound { .. } | UnknownActor(_) => ErrorKind::NotFound,
            Invalid(_)
            | SourceUnreadable { .. }
            | RoiOrdering(_)
            | TimestampOutOfRange { .. }
            | InsufficientRaters { .. }
            | InsufficientAssessments { .. }
            | AutoNegativeTarget(_)
            | ManualKeyframe(_)
            | InvalidPolygon { .. }
            | DimensionMismatch { .. }
            | NoSharedTargets
            | Kappa(_)
            | BatchTooLarge { .. }
            | GateBlocked(_)
            | OutputNotEmpty(_) => ErrorKind::Invalid,
            DuplicateVideo { .. }
            | VideoState { .. }
            | ExcludedVideo(_)
            | AlreadySampled(_)
            | NotSampled(_)
            | PlanInUse { .. }
            | SecondAuthor { .. }
            | SegmentationState { .. }
            | VersionConflict { .. } => ErrorKind::Conflict,
            NotAssigned { .. } | SelfReview(_) | Forbidden { .. } => ErrorKind::Forbidden,
            Decode(_)
            | Materialize { .. }
            | ArchiveUnreadable { .. }
            | Storage(_)
            | Io(_) => ErrorKind::Io,
        }
    }
}

impl From<StoreError> for Error {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Conflict {
                collection,
                key,
                expected,
                actual,
            } => Error::VersionConflict {
                collection,
                key,
                expected,
                actual,
            },
            StoreError::Missing { collection, key } => Error::NotFound {
                kind: "record",
                id: format!("{collection}/{key}"),
            },
            other => Error::Storage(other.to_string()),
        }
    }
}
