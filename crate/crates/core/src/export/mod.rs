//! Gated, deterministic dataset export and archive validation.
//!
//! Archive layout:
//!
//! ```text
//! manifest.json
//! masks/<frame_id>.png     one per exported manual keyframe
//! frames/<frame_id>.png    only with `materialize_frames`
//! ```

mod manifest;
mod mask_png;
mod validate;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use manifest::{
    canonical_json, class_index_table, export_checksum, manifest_bytes_for_checksum, DatasetManifest,
    FrameStorage, ManifestCvs, ManifestFrame, ManifestSegmentation, ManifestVideo, OmittedFrame,
    MANIFEST_FILE, MANIFEST_VERSION,
};
pub use mask_png::{decode_mask, encode_indexed, encode_mask, MaskFile, PALETTE};
pub use validate::{validate_archive, Violation, ViolationCode};

use crate::cvs::{majority_consensus, ConsensusLabel, CvsAssessment, LabelSource, MIN_RATERS};
use crate::error::{Error, Result};
use crate::identity::{Project, Role};
use crate::ids::{AnnotatorId, FrameId, ProjectId, Target, VideoId};
use crate::ingestion::ProcedureVideo;
use crate::sampling::{frames_of, FrameOrigin, FrameRecord, RegionOfInterest, SamplingPlan};
use crate::segmentation::SegmentationRecord;
use crate::store::{ReadView, ReadViewExt, Record, Snapshot};
use crate::Platform;

/// Readiness of one manual keyframe.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameReadiness {
    pub frame_id: FrameId,
    pub video_id: VideoId,
    pub timestamp_ms: u64,
    pub assessments: usize,
    pub has_3_raters: bool,
    pub seg_status: Option<String>,
    pub seg_approved: bool,
}

impl FrameReadiness {
    pub fn reasons(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !self.has_3_raters {
            out.push(format!("needs ≥{MIN_RATERS} raters (has {})", self.assessments));
        }
        if !self.seg_approved {
            out.push(match &self.seg_status {
                None => "segmentation missing".to_owned(),
                Some(s) => format!("segmentation is {s}, not approved by an independent reviewer"),
            });
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockingItem {
    pub frame_id: FrameId,
    pub reasons: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportGateReport {
    pub project_id: ProjectId,
    pub frames: Vec<FrameReadiness>,
    pub blocking: Vec<BlockingItem>,
    /// Videos that are neither excluded nor sampled yet; they contribute
    /// no frames.
    pub unsampled_videos: Vec<VideoId>,
}

impl ExportGateReport {
    pub fn is_clean(&self) -> bool {
        self.blocking.is_empty()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportOptions {
    /// Export ready frames and list blocked ones under `omitted`.
    #[serde(default)]
    pub partial: bool,
    /// Copy decoded frame images into the archive.
    #[serde(default)]
    pub materialize_frames: bool,
}

fn project_videos(snapshot: &Snapshot, project: &ProjectId) -> Result<Vec<ProcedureVideo>> {
    Ok(snapshot
        .scan::<ProcedureVideo>()?
        .into_iter()
        .map(|v| v.record)
        .filter(|v| v.project_id == *project)
        .collect())
}

fn readiness<V: ReadView + ?Sized>(view: &V, frame: &FrameRecord) -> Result<FrameReadiness> {
    let assessments = crate::cvs::assessments_in(view, &Target::Frame(frame.frame_id.clone()))?.len();
    let seg = view.get::<SegmentationRecord>(frame.frame_id.as_str())?.map(|v| v.record);
    Ok(FrameReadiness {
        frame_id: frame.frame_id.clone(),
        video_id: frame.video_id.clone(),
        timestamp_ms: frame.timestamp_ms,
        assessments,
        has_3_raters: assessments >= MIN_RATERS,
        seg_status: seg.as_ref().map(|s| s.status.as_str().to_owned()),
        seg_approved: seg.as_ref().is_some_and(SegmentationRecord::is_independently_approved),
    })
}

/// Every manual keyframe of the project's sampled, non-excluded videos,
/// with the ones failing the rater or review rule listed as blocking.
pub fn gate_report(snapshot: &Snapshot, project: &ProjectId) -> Result<ExportGateReport> {
    let mut frames = Vec::new();
    let mut unsampled_videos = Vec::new();
    for video in project_videos(snapshot, project)? {
        if video.is_excluded() {
            continue;
        }
        if !video.status.is_sampled() {
            unsampled_videos.push(video.video_id);
            continue;
        }
        for f in frames_of(snapshot, &video.video_id)? {
            if f.origin == FrameOrigin::ManualKeyframe {
                frames.push(readiness(snapshot, &f)?);
            }
        }
    }
    frames.sort_by(|a, b| a.frame_id.cmp(&b.frame_id));
    let blocking = frames
        .iter()
        .filter_map(|r| {
            let reasons = r.reasons();
            (!reasons.is_empty()).then(|| BlockingItem {
                frame_id: r.frame_id.clone(),
                reasons,
            })
        })
        .collect();
    Ok(ExportGateReport {
        project_id: project.clone(),
        frames,
        blocking,
        unsampled_videos,
    })
}

fn raw_labels(snapshot: &Snapshot, target: &Target) -> Result<(Vec<serde_json::Value>, Vec<CvsAssessment>)> {
    let raw: Vec<serde_json::Value> = snapshot
        .scan_prefix_raw(CvsAssessment::COLLECTION, &format!("{target}|"))?
        .into_iter()
        .map(|r| r.body)
        .collect();
    let parsed = crate::cvs::assessments_in(snapshot, target)?;
    Ok((raw, parsed))
}

fn voted(target: &Target, raw: Vec<serde_json::Value>, parsed: &[CvsAssessment]) -> ManifestCvs {
    ManifestCvs {
        source: LabelSource::Voted,
        raw,
        consensus: majority_consensus(target, parsed).ok(),
    }
}

fn write_archive(out: &Path, files: &BTreeMap<String, Vec<u8>>, manifest: &[u8]) -> Result<()> {
    for (rel, bytes) in files {
        let path = out.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, bytes)?;
    }
    fs::write(out.join(MANIFEST_FILE), manifest)?;
    Ok(())
}

fn prepare_output(out: &Path) -> Result<()> {
    match fs::read_dir(out) {
        Ok(mut entries) => {
            if entries.next().is_some() {
                return Err(Error::OutputNotEmpty(out.to_owned()));
            }
            Ok(())
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(fs::create_dir_all(out)?),
        Err(e) => Err(e.into()),
    }
}

impl Platform {
    pub fn check_export_gate(&self, project: &ProjectId) -> Result<ExportGateReport> {
        self.project(project)?;
        gate_report(&self.store().snapshot()?, project)
    }

    /// Writes the project's dataset to `out`, which must be empty or absent.
    ///
    /// Everything is read from one snapshot, so concurrent annotation does
    /// not leak into a running export. Output bytes depend only on the
    /// snapshot contents and the options.
    pub fn export_dataset(
        &self,
        actor: &AnnotatorId,
        project_id: &ProjectId,
        out: &Path,
        options: ExportOptions,
    ) -> Result<DatasetManifest> {
        self.actor(actor)?.require(&[Role::Admin])?;
        let snapshot = self.store().snapshot()?;
        let project = snapshot
            .get::<Project>(project_id.as_str())?
            .ok_or_else(|| Error::not_found("project", project_id))?
            .record;
        let gate = gate_report(&snapshot, project_id)?;
        if !gate.is_clean() && !options.partial {
            return Err(Error::GateBlocked(Box::new(gate)));
        }
        let blocked: BTreeMap<&FrameId, &BlockingItem> =
            gate.blocking.iter().map(|b| (&b.frame_id, b)).collect();

        let mut files: BTreeMap<String, Vec<u8>> = BTreeMap::new();
        let mut videos = Vec::new();
        let mut frames = Vec::new();
        let mut omitted = Vec::new();
        let mut all_videos = project_videos(&snapshot, project_id)?;
        all_videos.sort_by(|a, b| a.video_id.cmp(&b.video_id));
        for video in all_videos {
            let roi = snapshot
                .get::<RegionOfInterest>(video.video_id.as_str())?
                .map(|v| v.record.roi);
            let plan = snapshot
                .get::<SamplingPlan>(video.video_id.as_str())?
                .map(|v| v.record);
            let video_target = Target::Video(video.video_id.clone());
            let (raw, parsed) = raw_labels(&snapshot, &video_target)?;
            videos.push(ManifestVideo {
                video_id: video.video_id.clone(),
                checksum: video.checksum.clone(),
                duration_ms: video.duration_ms,
                fps: video.fps.to_string(),
                status: video.status,
                excluded: video.is_excluded(),
                exclusion_flags: video.exclusion_flags.iter().copied().collect(),
                roi,
                interval_ms: plan.as_ref().map(|p| p.interval_ms),
                cvs: (!raw.is_empty()).then(|| voted(&video_target, raw, &parsed)),
            });
            if video.is_excluded() || plan.is_none() {
                continue;
            }
            for frame in frames_of(&snapshot, &video.video_id)? {
                if let Some(b) = blocked.get(&frame.frame_id) {
                    omitted.push(OmittedFrame {
                        frame_id: frame.frame_id.clone(),
                        reasons: b.reasons.clone(),
                    });
                    continue;
                }
                let target = Target::Frame(frame.frame_id.clone());
                let (mut width, mut height) = frame.dimensions().unzip();
                let (cvs, mask_file, segmentation) = match frame.origin {
                    FrameOrigin::AutoNegative => (
                        ManifestCvs {
                            source: LabelSource::Automatic,
                            raw: Vec::new(),
                            consensus: Some(ConsensusLabel::automatic_negative(target)),
                        },
                        None,
                        None,
                    ),
                    FrameOrigin::ManualKeyframe => {
                        let (raw, parsed) = raw_labels(&snapshot, &target)?;
                        let seg = snapshot
                            .get::<SegmentationRecord>(frame.frame_id.as_str())?
                            .map(|v| v.record)
                            .expect("gate guarantees an approved segmentation");
                        let mask = seg.mask()?;
                        let rel = format!("masks/{}.png", frame.frame_id);
                        files.insert(rel.clone(), encode_mask(&mask));
                        width = Some(mask.width);
                        height = Some(mask.height);
                        (
                            voted(&target, raw, &parsed),
                            Some(rel),
                            Some(ManifestSegmentation {
                                record_id: seg.record_id,
                                author_id: seg.author_id,
                                reviewer_id: seg.reviewer_id,
                                status: seg.status,
                                version: seg.version,
                            }),
                        )
                    }
                };
                let frame_file = if options.materialize_frames {
                    let (_, decoded) = self.decode_frame(&video.video_id, frame.timestamp_ms)?;
                    let rel = format!("frames/{}.png", frame.frame_id);
                    files.insert(rel.clone(), decoded.png);
                    width = width.or(Some(decoded.width));
                    height = height.or(Some(decoded.height));
                    Some(rel)
                } else {
                    None
                };
                frames.push(ManifestFrame {
                    frame_id: frame.frame_id.clone(),
                    video_id: frame.video_id.clone(),
                    timestamp_ms: frame.timestamp_ms,
                    origin: frame.origin,
                    width,
                    height,
                    frame_file,
                    mask_file,
                    segmentation,
                    cvs,
                });
            }
        }
        frames.sort_by(|a, b| a.frame_id.cmp(&b.frame_id));
        omitted.sort_by(|a, b| a.frame_id.cmp(&b.frame_id));

        let mut manifest = DatasetManifest {
            manifest_version: MANIFEST_VERSION,
            project_id: project.project_id.clone(),
            project_name: project.name.clone(),
            checklist_version: project.checklist_version.clone(),
            class_table_version: project.class_table_version,
            class_index_table: class_index_table(),
            frame_storage: if options.materialize_frames {
                FrameStorage::File
            } else {
                FrameStorage::Reference
            },
            videos,
            frames,
            omitted,
            export_checksum: String::new(),
        };
        let json = |m: &DatasetManifest| canonical_json(m).map_err(|e| Error::Invalid(e.to_string()));
        manifest.export_checksum = export_checksum(&files, &json(&manifest)?);
        prepare_output(out)?;
        write_archive(out, &files, &json(&manifest)?)?;
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testkit::{square, Fixture};
    use crate::segmentation::SegClass;

    fn read_manifest(dir: &Path) -> DatasetManifest {
        serde_json::from_slice(&fs::read(dir.join(MANIFEST_FILE)).unwrap()).unwrap()
    }

    #[test]
    fn gate_lists_each_missing_requirement() {
        let fx = Fixture::new();
        let v = fx.sampled_video("a.mp4", (0, 60_000, None), 30_000);
        let frames: Vec<FrameId> = fx.platform.plan(&v).unwrap().manual_keyframes.iter().map(|f| f.frame_id()).collect();
        let gb = || vec![square("gb", SegClass::Gallbladder, 0, [0.0, 0.0], 10.0)];
        // frame 0: two assessments, approved segmentation
        fx.assess(&Target::Frame(frames[0].clone()), &[[true; 3], [true; 3]]);
        fx.segment_and_approve(&frames[0], gb());
        // frame 1: three assessments, submitted but unreviewed
        fx.assess(&Target::Frame(frames[1].clone()), &[[true; 3]; 3]);
        fx.platform.submit_segmentation(&fx.segmenter(0), &frames[1], fx.submission(gb()), None).unwrap();
        // frame 2: complete
        fx.assess(&Target::Frame(frames[2].clone()), &[[false; 3]; 3]);
        fx.segment_and_approve(&frames[2], gb());

        let gate = fx.platform.check_export_gate(&fx.project).unwrap();
        assert_eq!(gate.frames.len(), 3);
        assert_eq!(gate.blocking.len(), 2);
        assert_eq!(gate.blocking[0].frame_id, frames[0]);
        assert_eq!(gate.blocking[0].reasons, vec!["needs ≥3 raters (has 2)".to_owned()]);
        assert_eq!(gate.blocking[1].frame_id, frames[1]);
        assert!(gate.blocking[1].reasons[0].contains("submitted"));

        let out = fx.path().join("out");
        match fx.platform.export_dataset(&fx.admin, &fx.project, &out, ExportOptions::default()) {
            Err(Error::GateBlocked(r)) => assert_eq!(r.blocking.len(), 2),
            other => panic!("{other:?}"),
        }
        assert!(!out.exists());

        let m = fx
            .platform
            .export_dataset(&fx.admin, &fx.project, &out, ExportOptions { partial: true, ..Default::default() })
            .unwrap();
        assert_eq!(m.frames.iter().map(|f| &f.frame_id).collect::<Vec<_>>(), vec![&frames[2]]);
        assert_eq!(m.omitted.iter().map(|o| &o.frame_id).collect::<Vec<_>>(), vec![&frames[0], &frames[1]]);
        assert!(validate_archive(&out).unwrap().is_empty());
    }

    #[test]
    fn clean_project_exports_and_validates() {
        let fx = Fixture::new();
        let v = fx.complete_video("a.mp4", (0, 120_000, Some(60_000)), 30_000);
        fx.screened_video("pending.mp4", 60_000);
        let ex = fx.screened_video("excluded.mp4", 60_000);
        fx.platform
            .screen_video(&fx.screener, &ex, [crate::ingestion::ExclusionFlag::ProcedureAborted].into(), None)
            .unwrap();
        let gate = fx.platform.check_export_gate(&fx.project).unwrap();
        assert!(gate.is_clean());
        assert_eq!(gate.unsampled_videos.len(), 1);

        let out = fx.path().join("out");
        let m = fx.platform.export_dataset(&fx.admin, &fx.project, &out, ExportOptions::default()).unwrap();
        assert_eq!(m.videos.len(), 3);
        assert_eq!(m.frames.len(), 5);
        assert!(m.videos.iter().any(|mv| mv.excluded && mv.video_id == ex));
        let autos: Vec<&ManifestFrame> = m.frames.iter().filter(|f| f.origin == FrameOrigin::AutoNegative).collect();
        assert_eq!(autos.len(), 2);
        for f in autos {
            assert_eq!(f.cvs.source, LabelSource::Automatic);
            assert!(f.mask_file.is_none());
            let c = f.cvs.consensus.as_ref().unwrap();
            assert!(!c.c1.consensus && !c.c2.consensus && !c.c3.consensus);
        }
        assert_eq!(read_manifest(&out), m);
        assert!(validate_archive(&out).unwrap().is_empty());

        // raw labels are the stored documents, byte for byte
        let snapshot = fx.platform.store().snapshot().unwrap();
        for f in m.frames.iter().filter(|f| f.origin == FrameOrigin::ManualKeyframe) {
            let stored: Vec<serde_json::Value> = snapshot
                .scan_prefix_raw("assessments", &format!("frame:{}|", f.frame_id))
                .unwrap()
                .into_iter()
                .map(|r| r.body)
                .collect();
            assert_eq!(f.cvs.raw, stored);
            assert_eq!(f.cvs.raw.len(), 3);
        }
        let _ = v;

        assert!(matches!(
            fx.platform.export_dataset(&fx.admin, &fx.project, &out, ExportOptions::default()),
            Err(Error::OutputNotEmpty(_))
        ));
        assert!(matches!(
            fx.platform.export_dataset(&fx.rater(0), &fx.project, &fx.path().join("o2"), ExportOptions::default()),
            Err(Error::Forbidden { .. })
        ));
    }

    #[test]
    fn export_is_byte_deterministic() {
        let fx = Fixture::new();
        fx.complete_video("a.mp4", (0, 90_000, Some(30_000)), 30_000);
        let a = fx.path().join("a");
        let b = fx.path().join("b");
        let ma = fx.platform.export_dataset(&fx.admin, &fx.project, &a, ExportOptions::default()).unwrap();
        let mb = fx.platform.export_dataset(&fx.admin, &fx.project, &b, ExportOptions::default()).unwrap();
        assert_eq!(ma.export_checksum, mb.export_checksum);
        assert_eq!(fs::read(a.join(MANIFEST_FILE)).unwrap(), fs::read(b.join(MANIFEST_FILE)).unwrap());
    }

    #[test]
    fn materialized_frames_are_files() {
        let fx = Fixture::new();
        fx.complete_video("a.mp4", (0, 60_000, Some(30_000)), 30_000);
        let out = fx.path().join("out");
        let m = fx
            .platform
            .export_dataset(&fx.admin, &fx.project, &out, ExportOptions { materialize_frames: true, ..Default::default() })
            .unwrap();
        assert_eq!(m.frame_storage, FrameStorage::File);
        for f in &m.frames {
            let rel = f.frame_file.as_ref().unwrap();
            assert!(out.join(rel).is_file());
            assert_eq!((f.width, f.height), (Some(fx.frame_width), Some(fx.frame_height)));
        }
        assert!(validate_archive(&out).unwrap().is_empty());
    }
}
