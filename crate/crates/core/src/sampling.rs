//! Region-of-interest timestamps and keyframe sampling.
//!
//! A region of interest runs from the first incision on the hepatocystic
//! triangle (`t_start_ms`) to the first clip on the cystic duct or artery
//! (`t_end_ms`). The optional `t_evaluable_ms` marks the first moment any
//! criterion can be judged. Frames on the grid `t_start + k * interval`
//! before that moment are labeled negative automatically; frames on the grid
//! `t_evaluable + k * interval` up to `t_end` go to human annotators.

use serde::{Deserialize, Serialize};

use crate::error::{Error, FrameFailure, Result};
use crate::identity::Role;
use crate::ids::{AnnotatorId, FrameId, VideoId};
use crate::ingestion::{check_expected, FrameImage, ProcedureVideo, VideoStatus};
use crate::store::{ReadView, ReadViewExt, Record, Versioned};
use crate::Platform;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Roi {
    pub t_start_ms: u64,
    pub t_end_ms: u64,
    pub t_evaluable_ms: Option<u64>,
}

impl Roi {
    pub fn new(t_start_ms: u64, t_end_ms: u64, t_evaluable_ms: Option<u64>) -> Result<Self> {
        if t_start_ms >= t_end_ms {
            return Err(Error::RoiOrdering(format!(
                "start {t_start_ms} ms must precede end {t_end_ms} ms"
            )));
        }
        if let Some(e) = t_evaluable_ms {
            if e < t_start_ms || e > t_end_ms {
                return Err(Error::RoiOrdering(format!(
                    "evaluable {e} ms outside [{t_start_ms}, {t_end_ms}] ms"
                )));
            }
        }
        Ok(Roi {
            t_start_ms,
            t_end_ms,
            t_evaluable_ms,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionOfInterest {
    pub video_id: VideoId,
    #[serde(flatten)]
    pub roi: Roi,
}

impl Record for RegionOfInterest {
    const COLLECTION: &'static str = "rois";
    fn key(&self) -> String {
        self.video_id.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameOrigin {
    AutoNegative,
    ManualKeyframe,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameRef {
    pub video_id: VideoId,
    pub timestamp_ms: u64,
    pub origin: FrameOrigin,
}

impl FrameRef {
    pub fn frame_id(&self) -> FrameId {
        FrameId::new(&self.video_id, self.timestamp_ms)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub video_id: VideoId,
    pub interval_ms: u64,
    pub auto_negative: Vec<FrameRef>,
    pub manual_keyframes: Vec<FrameRef>,
    /// Set once every manual keyframe has been decoded.
    #[serde(default)]
    pub materialized: bool,
}

impl SamplingPlan {
    pub fn frames(&self) -> impl Iterator<Item = &FrameRef> {
        self.auto_negative.iter().chain(&self.manual_keyframes)
    }
}

impl Record for SamplingPlan {
    const COLLECTION: &'static str = "plans";
    fn key(&self) -> String {
        self.video_id.to_string()
    }
}

/// A sampled frame as stored, keyed by frame id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame_id: FrameId,
    pub video_id: VideoId,
    pub timestamp_ms: u64,
    pub origin: FrameOrigin,
    /// Known once the frame has been decoded.
    pub width: Option<u32>,
    pub height: Option<u32>,
    pub pixel_data_ref: Option<String>,
}

impl FrameRecord {
    fn from_ref(r: &FrameRef) -> Self {
        FrameRecord {
            frame_id: r.frame_id(),
            video_id: r.video_id.clone(),
            timestamp_ms: r.timestamp_ms,
            origin: r.origin,
            width: None,
            height: None,
            pixel_data_ref: None,
        }
    }

    pub fn frame_ref(&self) -> FrameRef {
        FrameRef {
            video_id: self.video_id.clone(),
            timestamp_ms: self.timestamp_ms,
            origin: self.origin,
        }
    }

    pub fn dimensions(&self) -> Option<(u32, u32)> {
        self.width.zip(self.height)
    }
}

impl Record for FrameRecord {
    const COLLECTION: &'static str = "frames";
    fn key(&self) -> String {
        self.frame_id.to_string()
    }
}

/// Builds the keyframe plan for a region of interest.
///
/// Manual keyframes are the arithmetic progression from `t_evaluable_ms`
/// (or `t_start_ms` when absent) in steps of `interval_ms`, up to and
/// including the last point not after `t_end_ms`. Auto-negative frames are
/// the progression from `t_start_ms` strictly before `t_evaluable_ms`.
pub fn plan_keyframes(video_id: &VideoId, roi: &Roi, interval_ms: u64) -> Result<SamplingPlan> {
    if interval_ms == 0 {
        return Err(Error::Invalid("interval_ms must be positive".into()));
    }
    let step = usize::try_from(interval_ms).unwrap_or(usize::MAX);
    let frame = |timestamp_ms, origin| FrameRef {
        video_id: video_id.clone(),
        timestamp_ms,
        origin,
    };
    let anchor = roi.t_evaluable_ms.unwrap_or(roi.t_start_ms);
    let manual_keyframes = (anchor..=roi.t_end_ms)
        .step_by(step)
        .map(|t| frame(t, FrameOrigin::ManualKeyframe))
        .collect();
    let auto_negative = match roi.t_evaluable_ms {
        Some(evaluable) => (roi.t_start_ms..evaluable)
            .step_by(step)
            .map(|t| frame(t, FrameOrigin::AutoNegative))
            .collect(),
        None => Vec::new(),
    };
    Ok(SamplingPlan {
        video_id: video_id.clone(),
        interval_ms,
        auto_negative,
        manual_keyframes,
        materialized: false,
    })
}

pub(crate) fn frame_in<V: ReadView + ?Sized>(view: &V, frame_id: &FrameId) -> Result<FrameRecord> {
    view.get::<FrameRecord>(frame_id.as_str())?
        .map(|v| v.record)
        .ok_or_else(|| Error::not_found("frame", frame_id))
}

/// Frames of one video in timestamp order (frame ids sort by timestamp).
pub(crate) fn frames_of<V: ReadView + ?Sized>(view: &V, video_id: &VideoId) -> Result<Vec<FrameRecord>> {
    let prefix = format!("{video_id}-t");
    Ok(view
        .scan_prefix::<FrameRecord>(&prefix)?
        .into_iter()
        .map(|v| v.record)
        .collect())
}

impl Platform {
    pub fn roi(&self, video_id: &VideoId) -> Result<Versioned<RegionOfInterest>> {
        self.store()
            .get::<RegionOfInterest>(video_id.as_str())?
            .ok_or_else(|| Error::not_found("region of interest", video_id))
    }

    pub fn plan(&self, video_id: &VideoId) -> Result<SamplingPlan> {
        self.store()
            .get::<SamplingPlan>(video_id.as_str())?
            .map(|v| v.record)
            .ok_or_else(|| Error::NotSampled(video_id.clone()))
    }

    pub fn frame(&self, frame_id: &FrameId) -> Result<FrameRecord> {
        frame_in(self.store(), frame_id)
    }

    /// Stores the three protocol timestamps. `expected_version` is the ROI
    /// version the caller last read (0 for none); `None` skips the check.
    pub fn set_roi(
        &self,
        actor: &AnnotatorId,
        video_id: &VideoId,
        roi: Roi,
        expected_version: Option<u64>,
    ) -> Result<RegionOfInterest> {
        self.actor(actor)?.require(&[Role::Screener, Role::Admin])?;
        let Versioned {
            version: video_version,
            record: video,
        } = self.video(video_id)?;
        match video.status {
            VideoStatus::Excluded => return Err(Error::ExcludedVideo(video_id.clone())),
            s if s.is_sampled() => return Err(Error::AlreadySampled(video_id.clone())),
            VideoStatus::Registered => {
                return Err(Error::VideoState {
                    video: video_id.clone(),
                    status: video.status,
                    action: "set the region of interest before screening",
                })
            }
            _ => {}
        }
        let roi = Roi::new(roi.t_start_ms, roi.t_end_ms, roi.t_evaluable_ms)?;
        video.check_timestamp(roi.t_end_ms)?;
        let roi_version = self.store().version_of::<RegionOfInterest>(video_id.as_str())?;
        check_expected("rois", video_id.as_str(), expected_version, roi_version)?;
        let record = RegionOfInterest {
            video_id: video_id.clone(),
            roi,
        };
        let mut tx = self.tx(actor, "set_roi");
        tx.put(&record, roi_version);
        if video.status != VideoStatus::RoiSet {
            let updated = ProcedureVideo {
                status: VideoStatus::RoiSet,
                ..video
            };
            tx.put(&updated, video_version);
        }
        self.commit(tx)?;
        Ok(record)
    }

    /// Computes and persists the keyframe plan; the video becomes `sampled`.
    pub fn sample_keyframes(
        &self,
        actor: &AnnotatorId,
        video_id: &VideoId,
        interval_ms: u64,
    ) -> Result<SamplingPlan> {
        self.actor(actor)?.require(&[Role::Screener, Role::Admin])?;
        let Versioned {
            version: video_version,
            record: video,
        } = self.video(video_id)?;
        match video.status {
            VideoStatus::Excluded => return Err(Error::ExcludedVideo(video_id.clone())),
            s if s.is_sampled() => return Err(Error::AlreadySampled(video_id.clone())),
            _ => {}
        }
        let roi = self.roi(video_id)?.record;
        let plan = plan_keyframes(video_id, &roi.roi, interval_ms)?;
        let mut tx = self.tx(actor, "sample_keyframes");
        tx.put(&plan, 0);
        for f in plan.frames() {
            tx.put(&FrameRecord::from_ref(f), 0);
        }
        tx.put(
            &ProcedureVideo {
                status: VideoStatus::Sampled,
                ..video
            },
            video_version,
        );
        self.commit(tx)?;
        Ok(plan)
    }

    /// Removes a plan and its frames so the video can be re-sampled. Refused
    /// once any assessment or segmentation references one of its frames.
    pub fn delete_plan(&self, actor: &AnnotatorId, video_id: &VideoId) -> Result<()> {
        self.actor(actor)?.require(&[Role::Admin])?;
        let Versioned {
            version: video_version,
            record: video,
        } = self.video(video_id)?;
        let plan_version = self.store().version_of::<SamplingPlan>(video_id.as_str())?;
        if plan_version == 0 {
            return Err(Error::NotSampled(video_id.clone()));
        }
        let frames = frames_of(self.store(), video_id)?;
        let mut annotations = 0;
        for f in &frames {
            let target = crate::ids::Target::Frame(f.frame_id.clone());
            annotations += crate::cvs::assessments_in(self.store(), &target)?.len();
            annotations += usize::from(
                self.store()
                    .get::<crate::segmentation::SegmentationRecord>(f.frame_id.as_str())?
                    .is_some(),
            );
            annotations += usize::from(
                self.store()
                    .get::<crate::cvs::Assignment>(&target.to_string())?
                    .is_some(),
            );
        }
        if annotations > 0 {
            return Err(Error::PlanInUse {
                video: video_id.clone(),
                annotations,
            });
        }
        let mut tx = self.tx(actor, "delete_plan");
        tx.delete::<SamplingPlan>(video_id.as_str(), plan_version);
        for f in &frames {
            let v = self.store().version_of::<FrameRecord>(f.frame_id.as_str())?;
            if v > 0 {
                tx.delete::<FrameRecord>(f.frame_id.as_str(), v);
            }
        }
        tx.put(
            &ProcedureVideo {
                status: VideoStatus::RoiSet,
                ..video
            },
            video_version,
        );
        self.commit(tx)?;
        Ok(())
    }

    /// Decodes every manual keyframe of the plan. Auto-negative frames are
    /// label-only and are not decoded. On any failure nothing is recorded and
    /// the error carries both the decoded frames and the failed timestamps.
    pub fn materialize_plan(&self, actor: &AnnotatorId, video_id: &VideoId) -> Result<Vec<FrameImage>> {
        self.actor(actor)?.require(&[Role::Screener, Role::Admin])?;
        let plan_version = self.store().version_of::<SamplingPlan>(video_id.as_str())?;
        let plan = self.plan(video_id)?;
        let mut decoded = Vec::new();
        let mut failed = Vec::new();
        for f in &plan.manual_keyframes {
            match self.decode_frame(video_id, f.timestamp_ms) {
                Ok((image, _)) => decoded.push(image),
                Err(e) => failed.push(FrameFailure {
                    timestamp_ms: f.timestamp_ms,
                    reason: e.to_string(),
                }),
            }
        }
        if !failed.is_empty() {
            return Err(Error::Materialize { decoded, failed });
        }
        let Versioned {
            version: video_version,
            record: video,
        } = self.video(video_id)?;
        let mut tx = self.tx(actor, "materialize_plan");
        for image in &decoded {
            let Versioned { version, record } = self
                .store()
                .get::<FrameRecord>(image.frame_id.as_str())?
                .ok_or_else(|| Error::not_found("frame", &image.frame_id))?;
            let updated = FrameRecord {
                width: Some(image.width),
                height: Some(image.height),
                pixel_data_ref: Some(image.pixel_data_ref.clone()),
                ..record
            };
            tx.put(&updated, version);
        }
        tx.put(
            &SamplingPlan {
                materialized: true,
                ..plan
            },
            plan_version,
        );
        if video.status != VideoStatus::Complete {
            tx.put(
                &ProcedureVideo {
                    status: VideoStatus::Complete,
                    ..video
                },
                video_version,
            );
        }
        self.commit(tx)?;
        Ok(decoded)
    }
}
