//! Binary criterion assessments, rater assignment and consensus.
//!
//! Each rater judges the three criteria independently; CVS holds only when
//! all three do. Consensus is a read-side fold over the stored assessments
//! (per-criterion majority, even splits resolve to "not achieved") and
//! never writes back to them.

mod checklist;

use std::collections::BTreeSet;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

pub use checklist::{default_checklist, ChecklistForm, CriterionChecklist, CHECKLIST_VERSION};

use crate::error::{Error, Result};
use crate::identity::Role;
use crate::ids::{AnnotatorId, FrameId, Target};
use crate::ingestion::check_expected;
use crate::sampling::{frame_in, FrameOrigin};
use crate::store::{ReadView, ReadViewExt, Record};
use crate::Platform;

/// Minimum number of independent raters per target.
pub const MIN_RATERS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    /// Two tubular structures connected to the gallbladder.
    C1,
    /// Hepatocystic triangle cleared.
    C2,
    /// Lower gallbladder separated from the liver bed, cystic plate exposed.
    C3,
}

impl Criterion {
    pub const ALL: [Criterion; 3] = [Criterion::C1, Criterion::C2, Criterion::C3];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CvsAssessment {
    pub assessment_id: String,
    pub rater_id: AnnotatorId,
    pub target: Target,
    pub c1: bool,
    pub c2: bool,
    pub c3: bool,
    pub version: u64,
    pub submitted_at: DateTime<Utc>,
}

impl CvsAssessment {
    pub fn criterion(&self, c: Criterion) -> bool {
        match c {
            Criterion::C1 => self.c1,
            Criterion::C2 => self.c2,
            Criterion::C3 => self.c3,
        }
    }

    /// CVS is achieved only when all three criteria are.
    pub fn cvs(&self) -> bool {
        self.c1 && self.c2 && self.c3
    }

    pub fn store_key(target: &Target, rater: &AnnotatorId) -> String {
        format!("{target}|{rater}")
    }
}

impl Record for CvsAssessment {
    const COLLECTION: &'static str = "assessments";
    fn key(&self) -> String {
        Self::store_key(&self.target, &self.rater_id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CriterionVotes {
    pub votes_yes: u32,
    pub votes_no: u32,
    pub consensus: bool,
}

impl CriterionVotes {
    /// Strict majority of yes votes; ties are "not achieved".
    pub fn tally(votes: impl IntoIterator<Item = bool>) -> Self {
        let (mut yes, mut no) = (0u32, 0u32);
        for v in votes {
            if v {
                yes += 1;
            } else {
                no += 1;
            }
        }
        CriterionVotes {
            votes_yes: yes,
            votes_no: no,
            consensus: yes > no,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    Voted,
    Automatic,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsensusLabel {
    pub target: Target,
    pub c1: CriterionVotes,
    pub c2: CriterionVotes,
    pub c3: CriterionVotes,
    pub cvs_consensus: bool,
    pub rater_count: u32,
    pub source: LabelSource,
}

impl ConsensusLabel {
    pub fn criterion(&self, c: Criterion) -> &CriterionVotes {
        match c {
            Criterion::C1 => &self.c1,
            Criterion::C2 => &self.c2,
            Criterion::C3 => &self.c3,
        }
    }

    /// All-negative label for frames before the evaluable timestamp.
    pub fn automatic_negative(target: Target) -> Self {
        let none = CriterionVotes {
            votes_yes: 0,
            votes_no: 0,
            consensus: false,
        };
        ConsensusLabel {
            target,
            c1: none,
            c2: none,
            c3: none,
            cvs_consensus: false,
            rater_count: 0,
            source: LabelSource::Automatic,
        }
    }
}

/// Per-criterion majority over at least [`MIN_RATERS`] assessments of
/// `target`. The assessments are only read.
pub fn majority_consensus(target: &Target, assessments: &[CvsAssessment]) -> Result<ConsensusLabel> {
    if assessments.len() < MIN_RATERS {
        return Err(Error::InsufficientAssessments {
            target: target.clone(),
            required: MIN_RATERS,
            got: assessments.len(),
        });
    }
    let votes = |c| CriterionVotes::tally(assessments.iter().map(|a| a.criterion(c)));
    let (c1, c2, c3) = (votes(Criterion::C1), votes(Criterion::C2), votes(Criterion::C3));
    Ok(ConsensusLabel {
        target: target.clone(),
        c1,
        c2,
        c3,
        cvs_consensus: c1.consensus && c2.consensus && c3.consensus,
        rater_count: assessments.len() as u32,
        source: LabelSource::Voted,
    })
}

/// Raters assigned to one target.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub target: Target,
    pub raters: BTreeSet<AnnotatorId>,
    pub assigned_at: DateTime<Utc>,
}

impl Record for Assignment {
    const COLLECTION: &'static str = "assignments";
    fn key(&self) -> String {
        self.target.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkStatus {
    Pending,
    Submitted,
}

/// One rater's share of an assignment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkItem {
    pub rater_id: AnnotatorId,
    pub target: Target,
    pub status: WorkStatus,
}

pub(crate) fn assessments_in<V: ReadView + ?Sized>(view: &V, target: &Target) -> Result<Vec<CvsAssessment>> {
    Ok(view
        .scan_prefix::<CvsAssessment>(&format!("{target}|"))?
        .into_iter()
        .map(|v| v.record)
        .collect())
}

impl Platform {
    /// Checks that `target` exists and may receive human assessments.
    fn check_assessable(&self, target: &Target) -> Result<()> {
        match target {
            Target::Video(v) => {
                let video = self.video(v)?.record;
                if video.is_excluded() {
                    return Err(Error::ExcludedVideo(v.clone()));
                }
            }
            Target::Frame(f) => {
                let frame = frame_in(self.store(), f)?;
                if frame.origin == FrameOrigin::AutoNegative {
                    return Err(Error::AutoNegativeTarget(f.clone()));
                }
            }
        }
        Ok(())
    }

    /// Gives each rater an independent work item on `target`. Raters added
    /// later are merged into the existing assignment.
    pub fn assign_raters(
        &self,
        actor: &AnnotatorId,
        target: &Target,
        raters: &[AnnotatorId],
    ) -> Result<Vec<WorkItem>> {
        self.actor(actor)?.require(&[Role::Admin])?;
        let distinct: BTreeSet<AnnotatorId> = raters.iter().cloned().collect();
        if distinct.len() < MIN_RATERS {
            return Err(Error::InsufficientRaters {
                required: MIN_RATERS,
                got: distinct.len(),
            });
        }
        for r in &distinct {
            self.actor(r)?.require(&[Role::CvsRater])?;
        }
        self.check_assessable(target)?;
        let existing = self.store().get::<Assignment>(&target.to_string())?;
        let (version, mut all) = match existing {
            Some(v) => (v.version, v.record.raters),
            None => (0, BTreeSet::new()),
        };
        all.extend(distinct.iter().cloned());
        let assignment = Assignment {
            target: target.clone(),
            raters: all,
            assigned_at: self.now(),
        };
        let mut tx = self.tx(actor, "assign_raters");
        tx.put(&assignment, version);
        self.commit(tx)?;
        self.work_items(target)
    }

    pub fn work_items(&self, target: &Target) -> Result<Vec<WorkItem>> {
        let Some(assignment) = self.store().get::<Assignment>(&target.to_string())? else {
            return Ok(Vec::new());
        };
        let submitted: BTreeSet<AnnotatorId> = assessments_in(self.store(), target)?
            .into_iter()
            .map(|a| a.rater_id)
            .collect();
        Ok(assignment
            .record
            .raters
            .into_iter()
            .map(|rater_id| WorkItem {
                status: if submitted.contains(&rater_id) {
                    WorkStatus::Submitted
                } else {
                    WorkStatus::Pending
                },
                rater_id,
                target: target.clone(),
            })
            .collect())
    }

    /// Work items of one rater across all targets.
    pub fn work_queue(&self, rater: &AnnotatorId) -> Result<Vec<WorkItem>> {
        let mut out = Vec::new();
        for a in self.store().scan::<Assignment>()? {
            if a.record.raters.contains(rater) {
                out.extend(
                    self.work_items(&a.record.target)?
                        .into_iter()
                        .filter(|w| &w.rater_id == rater),
                );
            }
        }
        Ok(out)
    }

    /// Stores a rater's judgment. A resubmission supersedes the rater's
    /// previous assessment with the next version; other raters' assessments
    /// are never touched.
    pub fn submit_assessment(
        &self,
        rater: &AnnotatorId,
        target: &Target,
        criteria: [bool; 3],
        expected_version: Option<u64>,
    ) -> Result<CvsAssessment> {
        self.actor(rater)?.require(&[Role::CvsRater])?;
        self.check_assessable(target)?;
        let assigned = self
            .store()
            .get::<Assignment>(&target.to_string())?
            .is_some_and(|a| a.record.raters.contains(rater));
        if !assigned {
            return Err(Error::NotAssigned {
                rater: rater.clone(),
                target: target.clone(),
            });
        }
        let key = CvsAssessment::store_key(target, rater);
        let version = self.store().version_of::<CvsAssessment>(&key)?;
        check_expected(CvsAssessment::COLLECTION, &key, expected_version, version)?;
        let [c1, c2, c3] = criteria;
        let assessment = CvsAssessment {
            assessment_id: format!("cvs-{}", hex_digest(&key)),
            rater_id: rater.clone(),
            target: target.clone(),
            c1,
            c2,
            c3,
            version: version + 1,
            submitted_at: self.now(),
        };
        let mut tx = self.tx(rater, "submit_assessment");
        tx.put(&assessment, version);
        self.commit(tx)?;
        Ok(assessment)
    }

    /// The rater's own assessment of `target`, if any. Raters only ever see
    /// their own answers through this call.
    pub fn own_assessment(&self, rater: &AnnotatorId, target: &Target) -> Result<Option<CvsAssessment>> {
        Ok(self
            .store()
            .get::<CvsAssessment>(&CvsAssessment::store_key(target, rater))?
            .map(|v| v.record))
    }

    pub fn assessments(&self, target: &Target) -> Result<Vec<CvsAssessment>> {
        assessments_in(self.store(), target)
    }

    pub fn compute_consensus(&self, target: &Target) -> Result<ConsensusLabel> {
        let snapshot = self.store().snapshot()?;
        majority_consensus(target, &assessments_in(&snapshot, target)?)
    }

    /// All-negative label for a frame before the evaluable timestamp.
    pub fn auto_label_negative(&self, frame_id: &FrameId) -> Result<ConsensusLabel> {
        let frame = frame_in(self.store(), frame_id)?;
        if frame.origin != FrameOrigin::AutoNegative {
            return Err(Error::ManualKeyframe(frame_id.clone()));
        }
        Ok(ConsensusLabel::automatic_negative(Target::Frame(frame_id.clone())))
    }

    /// Consensus for any sampled frame: automatic for auto-negative frames,
    /// voted otherwise.
    pub fn frame_label(&self, frame_id: &FrameId) -> Result<ConsensusLabel> {
        let frame = frame_in(self.store(), frame_id)?;
        match frame.origin {
            FrameOrigin::AutoNegative => self.auto_label_negative(frame_id),
            FrameOrigin::ManualKeyframe => self.compute_consensus(&Target::Frame(frame_id.clone())),
        }
    }
}

/// Short stable digest used for opaque identifiers.
pub(crate) fn hex_digest(input: &str) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(&Sha256::digest(input.as_bytes())[..8])
}
