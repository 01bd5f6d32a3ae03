use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Component, Path};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::manifest::{
    class_index_table, export_checksum, manifest_bytes_for_checksum, DatasetManifest, ManifestCvs,
    ManifestFrame, MANIFEST_FILE, MANIFEST_VERSION,
};
use super::mask_png::decode_mask;
use crate::cvs::{majority_consensus, CvsAssessment, LabelSource, MIN_RATERS};
use crate::error::{Error, Result};
use crate::ids::{Target, VideoId};
use crate::sampling::FrameOrigin;
use crate::segmentation::{SegClass, SegStatus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationCode {
    MalformedManifest,
    UnsupportedVersion,
    ClassTableMismatch,
    UnsortedFrames,
    UnknownVideo,
    UnsafePath,
    DanglingMask,
    DanglingFrameFile,
    MaskUnreadable,
    MaskFormat,
    MaskDimensions,
    ClassIndexOutOfRange,
    MissingMask,
    MissingRaters,
    RawLabelInvalid,
    ConsensusMismatch,
    SegmentationNotApproved,
    AutoNegativeLabel,
    UnlistedFile,
    ChecksumMismatch,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub code: ViolationCode,
    pub subject: String,
    pub message: String,
}

struct Findings(Vec<Violation>);

impl Findings {
    fn add(&mut self, code: ViolationCode, subject: impl Into<String>, message: impl Into<String>) {
        self.0.push(Violation {
            code,
            subject: subject.into(),
            message: message.into(),
        });
    }
}

fn safe_relative(rel: &str) -> bool {
    let p = Path::new(rel);
    !rel.is_empty() && p.components().all(|c| matches!(c, Component::Normal(_)))
}

/// Every regular file under `root`, keyed by `/`-separated relative path.
fn archive_files(root: &Path) -> Result<BTreeMap<String, Vec<u8>>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path
                    .strip_prefix(root)
                    .expect("walk stays under root")
                    .components()
                    .map(|c| c.as_os_str().to_string_lossy().into_owned())
                    .collect::<Vec<_>>()
                    .join("/");
                out.insert(rel, fs::read(&path)?);
            }
        }
    }
    Ok(out)
}

fn check_mask(f: &mut Findings, frame: &ManifestFrame, rel: &str, files: &BTreeMap<String, Vec<u8>>) {
    let subject = frame.frame_id.to_string();
    if !safe_relative(rel) {
        f.add(ViolationCode::UnsafePath, &subject, format!("mask path {rel:?} leaves the archive"));
        return;
    }
    let Some(bytes) = files.get(rel) else {
        f.add(ViolationCode::DanglingMask, &subject, format!("dangling mask reference {rel}"));
        return;
    };
    let mask = match decode_mask(bytes) {
        Ok(m) => m,
        Err(e) => {
            f.add(ViolationCode::MaskUnreadable, &subject, format!("{rel}: {e}"));
            return;
        }
    };
    if !mask.indexed || !mask.palette_matches {
        f.add(ViolationCode::MaskFormat, &subject, format!("{rel} is not an indexed PNG with the class palette"));
    }
    if (Some(mask.width), Some(mask.height)) != (frame.width, frame.height) {
        f.add(
            ViolationCode::MaskDimensions,
            &subject,
            format!("{rel} is {}x{}, frame is {:?}x{:?}", mask.width, mask.height, frame.width, frame.height),
        );
    }
    let bad: BTreeSet<u8> = mask.pixels.iter().copied().filter(|&p| p as usize >= SegClass::COUNT).collect();
    if !bad.is_empty() {
        f.add(
            ViolationCode::ClassIndexOutOfRange,
            &subject,
            format!("class index out of range in {rel}: {bad:?}"),
        );
    }
}

fn check_voted(f: &mut Findings, subject: &str, target: &Target, cvs: &ManifestCvs, required: bool) {
    if cvs.source != LabelSource::Voted {
        f.add(ViolationCode::ConsensusMismatch, subject, "manually assessed target must have source voted");
    }
    let mut parsed = Vec::new();
    for raw in &cvs.raw {
        match serde_json::from_value::<CvsAssessment>(raw.clone()) {
            Ok(a) if a.target == *target => parsed.push(a),
            Ok(a) => f.add(ViolationCode::RawLabelInvalid, subject, format!("raw label for {} listed here", a.target)),
            Err(e) => f.add(ViolationCode::RawLabelInvalid, subject, format!("raw label unreadable: {e}")),
        }
    }
    let raters: BTreeSet<_> = parsed.iter().map(|a| &a.rater_id).collect();
    if raters.len() != parsed.len() {
        f.add(ViolationCode::RawLabelInvalid, subject, "a rater appears twice");
    }
    if required && raters.len() < MIN_RATERS {
        f.add(
            ViolationCode::MissingRaters,
            subject,
            format!("{} raw labels, at least {MIN_RATERS} required", raters.len()),
        );
    }
    let recomputed = majority_consensus(target, &parsed).ok();
    if recomputed != cvs.consensus {
        f.add(ViolationCode::ConsensusMismatch, subject, "consensus does not follow from the raw labels");
    }
}

fn check_frame(f: &mut Findings, frame: &ManifestFrame, files: &BTreeMap<String, Vec<u8>>) {
    let subject = frame.frame_id.to_string();
    if let Some(rel) = &frame.frame_file {
        if !safe_relative(rel) {
            f.add(ViolationCode::UnsafePath, &subject, format!("frame path {rel:?} leaves the archive"));
        } else if !files.contains_key(rel) {
            f.add(ViolationCode::DanglingFrameFile, &subject, format!("dangling frame reference {rel}"));
        }
    }
    if let Some(rel) = &frame.mask_file {
        check_mask(f, frame, rel, files);
    }
    match frame.origin {
        FrameOrigin::ManualKeyframe => {
            if frame.mask_file.is_none() {
                f.add(ViolationCode::MissingMask, &subject, "manual keyframe without mask");
            }
            check_voted(f, &subject, &Target::Frame(frame.frame_id.clone()), &frame.cvs, true);
            let approved = frame.segmentation.as_ref().is_some_and(|s| {
                s.status == SegStatus::Approved && s.reviewer_id.as_ref().is_some_and(|r| *r != s.author_id)
            });
            if !approved {
                f.add(ViolationCode::SegmentationNotApproved, &subject, "segmentation lacks an independent approval");
            }
        }
        FrameOrigin::AutoNegative => {
            let all_negative = frame.cvs.consensus.as_ref().is_some_and(|c| {
                !c.c1.consensus && !c.c2.consensus && !c.c3.consensus && !c.cvs_consensus && c.source == LabelSource::Automatic
            });
            if frame.cvs.source != LabelSource::Automatic || !all_negative || !frame.cvs.raw.is_empty() {
                f.add(ViolationCode::AutoNegativeLabel, &subject, "auto-negative frame must carry an automatic all-negative label");
            }
        }
    }
}

/// Re-checks an exported archive from its files alone. An empty result
/// means the archive is conformant.
pub fn validate_archive(root: &Path) -> Result<Vec<Violation>> {
    let unreadable = |reason: String| Error::ArchiveUnreadable {
        path: root.to_owned(),
        reason,
    };
    if !root.is_dir() {
        return Err(unreadable("not a directory".into()));
    }
    let manifest_bytes = fs::read(root.join(MANIFEST_FILE)).map_err(|e| unreadable(format!("{MANIFEST_FILE}: {e}")))?;
    let raw: Value = serde_json::from_slice(&manifest_bytes).map_err(|e| unreadable(format!("{MANIFEST_FILE}: {e}")))?;
    let mut files = archive_files(root)?;
    files.remove(MANIFEST_FILE);

    let mut f = Findings(Vec::new());
    let manifest: DatasetManifest = match serde_json::from_value(raw.clone()) {
        Ok(m) => m,
        Err(e) => {
            f.add(ViolationCode::MalformedManifest, MANIFEST_FILE, e.to_string());
            return Ok(f.0);
        }
    };
    if manifest.manifest_version != MANIFEST_VERSION {
        f.add(
            ViolationCode::UnsupportedVersion,
            MANIFEST_FILE,
            format!("manifest_version {}", manifest.manifest_version),
        );
    }
    if manifest.class_index_table != class_index_table() {
        f.add(ViolationCode::ClassTableMismatch, MANIFEST_FILE, "class index table differs from the frozen table");
    }
    if !manifest.frames.windows(2).all(|w| w[0].frame_id < w[1].frame_id) {
        f.add(ViolationCode::UnsortedFrames, MANIFEST_FILE, "frames are not strictly ordered by frame_id");
    }
    let videos: BTreeMap<&VideoId, bool> = manifest.videos.iter().map(|v| (&v.video_id, v.excluded)).collect();
    for v in &manifest.videos {
        if let Some(cvs) = &v.cvs {
            check_voted(&mut f, v.video_id.as_str(), &Target::Video(v.video_id.clone()), cvs, false);
        }
    }
    for frame in &manifest.frames {
        match videos.get(&frame.video_id) {
            Some(false) => {}
            Some(true) => f.add(ViolationCode::UnknownVideo, frame.frame_id.as_str(), "frame of an excluded video"),
            None => f.add(ViolationCode::UnknownVideo, frame.frame_id.as_str(), format!("video {} not listed", frame.video_id)),
        }
        check_frame(&mut f, frame, &files);
    }
    let listed: BTreeSet<&str> = manifest
        .frames
        .iter()
        .flat_map(|fr| fr.mask_file.iter().chain(fr.frame_file.iter()))
        .map(String::as_str)
        .collect();
    for path in files.keys() {
        if !listed.contains(path.as_str()) {
            f.add(ViolationCode::UnlistedFile, path, "file not referenced by the manifest");
        }
    }
    let blank = manifest_bytes_for_checksum(&raw).map_err(|e| unreadable(e.to_string()))?;
    let expected = export_checksum(&files, &blank);
    if expected != manifest.export_checksum {
        f.add(
            ViolationCode::ChecksumMismatch,
            MANIFEST_FILE,
            format!("export_checksum {} does not match contents ({expected})", manifest.export_checksum),
        );
    }
    Ok(f.0)
}
