//! Annotation protocol engine for critical-view-of-safety datasets built from
//! laparoscopic cholecystectomy videos.
//!
//! The crate covers the whole pipeline a labeling team walks through:
//! screening videos, timestamping the region of interest, sampling keyframes,
//! collecting independent criterion assessments, polygon segmentation with
//! review, agreement metrics and a deterministic dataset export.
//!
//! Every mutating operation lives on [`Platform`], which binds a versioned
//! [`store::Store`], a [`ingestion::FrameDecoder`] and a [`clock::Clock`].
//! The pure pieces (keyframe planning, consensus, rasterization, kappa) are
//! exposed as free functions so they can be used without a store.

pub mod clock;
pub mod cvs;
pub mod error;
pub mod export;
pub mod identity;
pub mod ids;
pub mod ingestion;
pub mod qa;
pub mod sampling;
pub mod segmentation;
pub mod store;

mod platform;

pub use error::{Error, ErrorKind, Result};
pub use ids::{AnnotatorId, FrameId, ProjectId, Target, VideoId};
pub use platform::Platform;

#[cfg(any(test, feature = "testkit"))]
pub mod testkit;
