//! Polygon segmentation of manual keyframes.
//!
//! A frame is segmented by exactly one author and approved by a different
//! reviewer. Masks are derived from the polygons on demand.

pub mod geometry;
mod lint;
mod raster;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

pub use lint::{lint_segmentation, LintCode, LintFinding};
pub use raster::{rasterize, IndexMask};

use crate::error::{Error, Result};
use crate::identity::Role;
use crate::ids::{AnnotatorId, FrameId, Target};
use crate::ingestion::check_expected;
use crate::sampling::{frame_in, FrameOrigin, FrameRecord};
use crate::store::{ReadViewExt, Record, Versioned};
use crate::Platform;

/// Segmentation classes with their frozen mask indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum SegClass {
    Background = 0,
    Gallbladder = 1,
    CysticDuct = 2,
    CysticArtery = 3,
    CysticPlate = 4,
    HepatocysticTriangleDissection = 5,
    SurgicalInstrument = 6,
    Ignore = 7,
}

impl SegClass {
    pub const COUNT: usize = 8;
    pub const ALL: [SegClass; Self::COUNT] = [
        SegClass::Background,
        SegClass::Gallbladder,
        SegClass::CysticDuct,
        SegClass::CysticArtery,
        SegClass::CysticPlate,
        SegClass::HepatocysticTriangleDissection,
        SegClass::SurgicalInstrument,
        SegClass::Ignore,
    ];

    pub fn index(self) -> u8 {
        self as u8
    }

    pub fn from_index(i: u8) -> Option<Self> {
        Self::ALL.get(i as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            SegClass::Background => "Background",
            SegClass::Gallbladder => "Gallbladder",
            SegClass::CysticDuct => "CysticDuct",
            SegClass::CysticArtery => "CysticArtery",
            SegClass::CysticPlate => "CysticPlate",
            SegClass::HepatocysticTriangleDissection => "HepatocysticTriangleDissection",
            SegClass::SurgicalInstrument => "SurgicalInstrument",
            SegClass::Ignore => "Ignore",
        }
    }
}

impl fmt::Display for SegClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SegClass {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Invalid(format!("unknown class {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolygonAnnotation {
    pub polygon_id: String,
    pub seg_class: SegClass,
    pub vertices: Vec<geometry::Point>,
    pub draw_order: i64,
    /// Paints background over whatever lies below, e.g. the window of a
    /// fenestrated grasper jaw. `seg_class` names the class being cut.
    #[serde(default)]
    pub is_hole: bool,
}

impl PolygonAnnotation {
    pub fn painted_index(&self) -> u8 {
        if self.is_hole {
            SegClass::Background.index()
        } else {
            self.seg_class.index()
        }
    }

    pub fn validate(&self, width: u32, height: u32) -> Result<()> {
        let bad = |reason: String| Error::InvalidPolygon {
            polygon: self.polygon_id.clone(),
            reason,
        };
        if self.polygon_id.is_empty() {
            return Err(bad("polygon_id is empty".into()));
        }
        if self.seg_class == SegClass::Background {
            return Err(bad("Background is implicit and cannot be drawn".into()));
        }
        if self.vertices.len() < 3 {
            return Err(bad(format!("{} vertices, at least 3 required", self.vertices.len())));
        }
        for &[x, y] in &self.vertices {
            if !x.is_finite() || !y.is_finite() {
                return Err(bad("non-finite coordinate".into()));
            }
            if x < 0.0 || y < 0.0 || x > width as f64 || y > height as f64 {
                return Err(bad(format!("vertex ({x}, {y}) outside {width}x{height}")));
            }
        }
        if geometry::doubled_area(&self.vertices) == 0.0 {
            return Err(bad("polygon has zero area".into()));
        }
        Ok(())
    }
}

/// Validates a polygon set against image dimensions; ids must be unique.
pub fn validate_polygons(polygons: &[PolygonAnnotation], width: u32, height: u32) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::Invalid(format!("image dimensions {width}x{height}")));
    }
    let mut ids = BTreeSet::new();
    for p in polygons {
        p.validate(width, height)?;
        if !ids.insert(p.polygon_id.as_str()) {
            return Err(Error::InvalidPolygon {
                polygon: p.polygon_id.clone(),
                reason: "duplicate polygon_id".into(),
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegStatus {
    Draft,
    Submitted,
    InReview,
    Approved,
    ChangesRequested,
}

impl SegStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SegStatus::Draft => "draft",
            SegStatus::Submitted => "submitted",
            SegStatus::InReview => "in_review",
            SegStatus::Approved => "approved",
            SegStatus::ChangesRequested => "changes_requested",
        }
    }

    /// States in which the author may still change the polygons.
    pub fn is_editable(self) -> bool {
        matches!(self, SegStatus::Draft | SegStatus::ChangesRequested)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Approve,
    RequestChanges,
}

impl FromStr for Verdict {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "approve" => Ok(Verdict::Approve),
            "request_changes" | "request-changes" => Ok(Verdict::RequestChanges),
            other => Err(Error::Invalid(format!("unknown verdict {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationRecord {
    pub record_id: String,
    pub frame_id: FrameId,
    pub author_id: AnnotatorId,
    pub polygons: Vec<PolygonAnnotation>,
    pub status: SegStatus,
    pub reviewer_id: Option<AnnotatorId>,
    pub review_notes: Option<String>,
    pub image_width: u32,
    pub image_height: u32,
    pub version: u64,
    pub updated_at: DateTime<Utc>,
}

impl SegmentationRecord {
    pub fn record_id_for(frame_id: &FrameId) -> String {
        format!("seg-{frame_id}")
    }

    pub fn mask(&self) -> Result<IndexMask> {
        rasterize(&self.polygons, self.image_width, self.image_height)
    }

    /// Approved by someone other than the author.
    pub fn is_independently_approved(&self) -> bool {
        self.status == SegStatus::Approved
            && self.reviewer_id.as_ref().is_some_and(|r| *r != self.author_id)
    }
}

impl Record for SegmentationRecord {
    const COLLECTION: &'static str = "segmentations";
    fn key(&self) -> String {
        self.frame_id.to_string()
    }
}

/// Polygons plus the image size they were drawn on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Submission {
    pub polygons: Vec<PolygonAnnotation>,
    #[serde(default)]
    pub image_width: Option<u32>,
    #[serde(default)]
    pub image_height: Option<u32>,
}

impl Submission {
    pub fn new(polygons: Vec<PolygonAnnotation>, width: u32, height: u32) -> Self {
        Submission {
            polygons,
            image_width: Some(width),
            image_height: Some(height),
        }
    }
}

/// A manual keyframe with its annotations, in review order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewQueueEntry {
    pub frame_id: FrameId,
    pub timestamp_ms: u64,
    pub assessments: Vec<crate::cvs::CvsAssessment>,
    pub segmentation: Option<SegmentationRecord>,
    /// False when the reviewer authored the segmentation and so may not
    /// give it a verdict.
    pub reviewable: bool,
}

fn frame_dimensions(frame: &FrameRecord, submission: &Submission) -> Result<(u32, u32)> {
    let given = submission.image_width.zip(submission.image_height);
    match (frame.dimensions(), given) {
        (Some((w, h)), Some((gw, gh))) if (w, h) != (gw, gh) => Err(Error::DimensionMismatch {
            want_width: w,
            want_height: h,
            got_width: gw,
            got_height: gh,
        }),
        (Some(d), _) | (None, Some(d)) => Ok(d),
        (None, None) => Err(Error::Invalid(format!(
            "frame {} is not materialized; image_width and image_height are required",
            frame.frame_id
        ))),
    }
}

impl Platform {
    pub fn segmentation(&self, frame_id: &FrameId) -> Result<Option<Versioned<SegmentationRecord>>> {
        Ok(self.store().get::<SegmentationRecord>(frame_id.as_str())?)
    }

    pub fn segmentation_by_record(&self, record_id: &str) -> Result<Versioned<SegmentationRecord>> {
        let frame = record_id
            .strip_prefix("seg-")
            .and_then(|f| FrameId::parse(f).ok())
            .ok_or_else(|| Error::not_found("segmentation", record_id))?;
        self.segmentation(&frame)?
            .ok_or_else(|| Error::not_found("segmentation", record_id))
    }

    fn write_segmentation(
        &self,
        author: &AnnotatorId,
        frame_id: &FrameId,
        submission: Submission,
        expected_version: Option<u64>,
        status: SegStatus,
    ) -> Result<SegmentationRecord> {
        self.actor(author)?.require(&[Role::Segmenter])?;
        let frame = frame_in(self.store(), frame_id)?;
        if frame.origin == FrameOrigin::AutoNegative {
            return Err(Error::AutoNegativeTarget(frame_id.clone()));
        }
        let existing = self.segmentation(frame_id)?;
        let version = existing.as_ref().map_or(0, |v| v.version);
        if let Some(Versioned { record, .. }) = &existing {
            if record.author_id != *author {
                return Err(Error::SecondAuthor {
                    frame: frame_id.clone(),
                    author: record.author_id.clone(),
                });
            }
            if !record.status.is_editable() {
                return Err(Error::SegmentationState {
                    record: record.record_id.clone(),
                    status: record.status.as_str().into(),
                    action: "edit",
                });
            }
        }
        check_expected(SegmentationRecord::COLLECTION, frame_id.as_str(), expected_version, version)?;
        let (width, height) = frame_dimensions(&frame, &submission)?;
        validate_polygons(&submission.polygons, width, height)?;
        let record = SegmentationRecord {
            record_id: SegmentationRecord::record_id_for(frame_id),
            frame_id: frame_id.clone(),
            author_id: author.clone(),
            polygons: submission.polygons,
            status,
            reviewer_id: None,
            review_notes: existing.and_then(|v| v.record.review_notes),
            image_width: width,
            image_height: height,
            version: version + 1,
            updated_at: self.now(),
        };
        let action = match status {
            SegStatus::Draft => "save_segmentation_draft",
            _ => "submit_segmentation",
        };
        let mut tx = self.tx(author, action);
        tx.put(&record, version);
        self.commit(tx)?;
        Ok(record)
    }

    /// Saves work in progress without sending it to review.
    pub fn save_segmentation_draft(
        &self,
        author: &AnnotatorId,
        frame_id: &FrameId,
        submission: Submission,
        expected_version: Option<u64>,
    ) -> Result<SegmentationRecord> {
        self.write_segmentation(author, frame_id, submission, expected_version, SegStatus::Draft)
    }

    /// Stores the author's polygons for a manual keyframe and queues them
    /// for review. Only the original author may resubmit, and only while the
    /// record is a draft or has changes requested.
    pub fn submit_segmentation(
        &self,
        author: &AnnotatorId,
        frame_id: &FrameId,
        submission: Submission,
        expected_version: Option<u64>,
    ) -> Result<SegmentationRecord> {
        self.write_segmentation(author, frame_id, submission, expected_version, SegStatus::Submitted)
    }

    fn reviewable_record(
        &self,
        reviewer: &AnnotatorId,
        record_id: &str,
        expected_version: Option<u64>,
        action: &'static str,
    ) -> Result<Versioned<SegmentationRecord>> {
        let current = self.segmentation_by_record(record_id)?;
        if current.record.author_id == *reviewer {
            return Err(Error::SelfReview(reviewer.clone()));
        }
        self.actor(reviewer)?.require(&[Role::Reviewer])?;
        check_expected(
            SegmentationRecord::COLLECTION,
            current.record.frame_id.as_str(),
            expected_version,
            current.version,
        )?;
        if !matches!(current.record.status, SegStatus::Submitted | SegStatus::InReview) {
            return Err(Error::SegmentationState {
                record: record_id.to_owned(),
                status: current.record.status.as_str().into(),
                action,
            });
        }
        Ok(current)
    }

    /// Claims a submitted record for review.
    pub fn start_review(
        &self,
        reviewer: &AnnotatorId,
        record_id: &str,
        expected_version: Option<u64>,
    ) -> Result<SegmentationRecord> {
        let Versioned { version, record } =
            self.reviewable_record(reviewer, record_id, expected_version, "start review")?;
        let record = SegmentationRecord {
            status: SegStatus::InReview,
            reviewer_id: Some(reviewer.clone()),
            version: version + 1,
            updated_at: self.now(),
            ..record
        };
        let mut tx = self.tx(reviewer, "start_review");
        tx.put(&record, version);
        self.commit(tx)?;
        Ok(record)
    }

    /// Records an independent reviewer's verdict.
    pub fn review_segmentation(
        &self,
        reviewer: &AnnotatorId,
        record_id: &str,
        verdict: Verdict,
        notes: Option<String>,
        expected_version: Option<u64>,
    ) -> Result<SegmentationRecord> {
        let Versioned { version, record } =
            self.reviewable_record(reviewer, record_id, expected_version, "review")?;
        let record = SegmentationRecord {
            status: match verdict {
                Verdict::Approve => SegStatus::Approved,
                Verdict::RequestChanges => SegStatus::ChangesRequested,
            },
            reviewer_id: Some(reviewer.clone()),
            review_notes: notes,
            version: version + 1,
            updated_at: self.now(),
            ..record
        };
        let mut tx = self.tx(reviewer, "review_segmentation");
        tx.put(&record, version);
        self.commit(tx)?;
        Ok(record)
    }

    pub fn segmentation_mask(&self, frame_id: &FrameId) -> Result<IndexMask> {
        self.segmentation(frame_id)?
            .ok_or_else(|| Error::not_found("segmentation", frame_id))?
            .record
            .mask()
    }

    /// Lints a record against its neighbouring manual keyframes and the
    /// frame's consensus, when one can be computed.
    pub fn lint_segmentation(&self, record_id: &str) -> Result<Vec<LintFinding>> {
        let record = self.segmentation_by_record(record_id)?.record;
        let frame = frame_in(self.store(), &record.frame_id)?;
        let plan = self.plan(&frame.video_id)?;
        let keys: Vec<FrameId> = plan.manual_keyframes.iter().map(|f| f.frame_id()).collect();
        let pos = keys.iter().position(|f| *f == record.frame_id);
        let neighbour = |i: Option<usize>| -> Result<Option<SegmentationRecord>> {
            match i.and_then(|i| keys.get(i)) {
                Some(f) => Ok(self.segmentation(f)?.map(|v| v.record)),
                None => Ok(None),
            }
        };
        let prev = neighbour(pos.and_then(|p| p.checked_sub(1)))?;
        let next = neighbour(pos.map(|p| p + 1))?;
        let consensus = self.compute_consensus(&Target::Frame(record.frame_id.clone())).ok();
        Ok(lint_segmentation(&record, prev.as_ref(), next.as_ref(), consensus.as_ref()))
    }

    /// Manual keyframes of a video in timestamp order with their
    /// assessments and segmentation, for a sequential consistency pass.
    pub fn sequential_review_queue(
        &self,
        video_id: &crate::ids::VideoId,
        reviewer: &AnnotatorId,
    ) -> Result<Vec<ReviewQueueEntry>> {
        self.actor(reviewer)?.require(&[Role::Reviewer])?;
        self.video(video_id)?;
        let snapshot = self.store().snapshot()?;
        let plan = snapshot
            .get::<crate::sampling::SamplingPlan>(video_id.as_str())?
            .ok_or_else(|| Error::NotSampled(video_id.clone()))?
            .record;
        let mut keyframes = plan.manual_keyframes;
        keyframes.sort_by_key(|f| f.timestamp_ms);
        keyframes
            .into_iter()
            .map(|f| {
                let frame_id = f.frame_id();
                let segmentation = snapshot
                    .get::<SegmentationRecord>(frame_id.as_str())?
                    .map(|v| v.record);
                Ok(ReviewQueueEntry {
                    assessments: crate::cvs::assessments_in(&snapshot, &Target::Frame(frame_id.clone()))?,
                    reviewable: segmentation.as_ref().is_none_or(|s| s.author_id != *reviewer),
                    segmentation,
                    timestamp_ms: f.timestamp_ms,
                    frame_id,
                })
            })
            .collect()
    }
}
