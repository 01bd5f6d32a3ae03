//! Inter-rater agreement and blind review batches.

mod batch;
mod kappa;
mod report;

use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

pub use batch::{make_review_batch, sample_indices, BatchItem, BatchRecord, PoolEntry, ReviewBatch};
pub use kappa::{cohen_kappa, Kappa, KappaError};
pub use report::{agreement_report, AgreementReport, AgreementScope, KappaCriterion, PairAgreement};

use crate::cvs::CvsAssessment;
use crate::error::Result;
use crate::identity::Role;
use crate::ids::{AnnotatorId, ProjectId, Target, VideoId};
use crate::ingestion::ProcedureVideo;
use crate::sampling::FrameRecord;
use crate::segmentation::{SegStatus, SegmentationRecord};
use crate::store::{ReadViewExt, Snapshot};
use crate::Platform;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchKind {
    Assessments,
    Segmentations,
}

/// Which annotations a review batch is drawn from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchRequest {
    pub kind: BatchKind,
    #[serde(default)]
    pub project_id: Option<ProjectId>,
    #[serde(default)]
    pub video_id: Option<VideoId>,
    pub size: usize,
    pub seed: u64,
    #[serde(default)]
    pub created_for: Option<NaiveDate>,
}

/// Resolves the video a target belongs to.
struct Owners {
    project_of: BTreeMap<VideoId, ProjectId>,
    video_of_frame: BTreeMap<String, VideoId>,
}

impl Owners {
    fn new(snapshot: &Snapshot) -> Result<Self> {
        Ok(Owners {
            project_of: snapshot
                .scan::<ProcedureVideo>()?
                .into_iter()
                .map(|v| (v.record.video_id, v.record.project_id))
                .collect(),
            video_of_frame: snapshot
                .scan::<FrameRecord>()?
                .into_iter()
                .map(|f| (f.record.frame_id.to_string(), f.record.video_id))
                .collect(),
        })
    }

    fn video<'a>(&'a self, target: &'a Target) -> Option<&'a VideoId> {
        match target {
            Target::Video(v) => Some(v),
            Target::Frame(f) => self.video_of_frame.get(f.as_str()),
        }
    }

    fn in_scope(&self, target: &Target, project: Option<&ProjectId>, video: Option<&VideoId>) -> bool {
        let Some(v) = self.video(target) else {
            return false;
        };
        video.is_none_or(|want| want == v)
            && project.is_none_or(|want| self.project_of.get(v) == Some(want))
    }
}

impl Platform {
    /// Pairwise kappa over every assessment in scope. Project scope covers
    /// video-level and frame-level targets of all its videos; video scope
    /// covers the video target and its frames.
    pub fn agreement_report(&self, scope: AgreementScope, criterion: KappaCriterion) -> Result<AgreementReport> {
        let snapshot = self.store().snapshot()?;
        let (project, video) = match &scope {
            AgreementScope::Project(p) => {
                self.project(p)?;
                (Some(p.clone()), None)
            }
            AgreementScope::Video(v) => {
                self.video(v)?;
                (None, Some(v.clone()))
            }
        };
        let owners = Owners::new(&snapshot)?;
        let assessments: Vec<CvsAssessment> = snapshot
            .scan::<CvsAssessment>()?
            .into_iter()
            .map(|v| v.record)
            .filter(|a| owners.in_scope(&a.target, project.as_ref(), video.as_ref()))
            .collect();
        agreement_report(scope, criterion, &assessments, self.now())
    }

    /// Draws a seeded blind batch and records where its items came from.
    pub fn create_review_batch(&self, actor: &AnnotatorId, request: &BatchRequest) -> Result<ReviewBatch> {
        self.actor(actor)?.require(&[Role::Reviewer, Role::Admin])?;
        let snapshot = self.store().snapshot()?;
        let owners = Owners::new(&snapshot)?;
        let (project, video) = (request.project_id.as_ref(), request.video_id.as_ref());
        let pool: Vec<PoolEntry> = match request.kind {
            BatchKind::Assessments => snapshot
                .scan::<CvsAssessment>()?
                .into_iter()
                .map(|v| v.record)
                .filter(|a| owners.in_scope(&a.target, project, video))
                .map(|a| PoolEntry {
                    source: format!("{}|{}", a.target, a.rater_id),
                    item: BatchItem::Assessment {
                        item_id: String::new(),
                        cvs: a.cvs(),
                        target: a.target,
                        c1: a.c1,
                        c2: a.c2,
                        c3: a.c3,
                    },
                })
                .collect(),
            BatchKind::Segmentations => snapshot
                .scan::<SegmentationRecord>()?
                .into_iter()
                .map(|v| v.record)
                .filter(|s| s.status != SegStatus::Draft)
                .filter(|s| owners.in_scope(&Target::Frame(s.frame_id.clone()), project, video))
                .map(|s| PoolEntry {
                    source: s.record_id,
                    item: BatchItem::Segmentation {
                        item_id: String::new(),
                        frame_id: s.frame_id,
                        status: s.status,
                        image_width: s.image_width,
                        image_height: s.image_height,
                        polygons: s.polygons,
                    },
                })
                .collect(),
        };
        let (batch, record) = make_review_batch(pool, request.size, request.seed, request.created_for)?;
        let version = self.store().version_of::<BatchRecord>(&record.batch_id)?;
        let mut tx = self.tx(actor, "create_review_batch");
        tx.put(&record, version);
        self.commit(tx)?;
        Ok(batch)
    }
}
