use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::cvs::{ConsensusLabel, LabelSource};
use crate::ids::{AnnotatorId, FrameId, ProjectId, VideoId};
use crate::ingestion::{ExclusionFlag, VideoStatus};
use crate::sampling::{FrameOrigin, Roi};
use crate::segmentation::{SegClass, SegStatus};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameStorage {
    /// Frames are addressed by `video_id` and `timestamp_ms` only.
    Reference,
    /// Frames are copied to `frames/<frame_id>.png`.
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestCvs {
    pub source: LabelSource,
    /// Stored assessment documents, unchanged, ordered by rater.
    pub raw: Vec<Value>,
    pub consensus: Option<ConsensusLabel>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestSegmentation {
    pub record_id: String,
    pub author_id: AnnotatorId,
    pub reviewer_id: Option<AnnotatorId>,
    pub status: SegStatus,
    pub version: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestVideo {
    pub video_id: VideoId,
    pub checksum: String,
    pub duration_ms: u64,
    pub fps: String,
    pub status: VideoStatus,
    pub excluded: bool,
    pub exclusion_flags: Vec<ExclusionFlag>,
    pub roi: Option<Roi>,
    pub interval_ms: Option<u64>,
    /// Video-level assessments, when any were collected.
    pub cvs: Option<ManifestCvs>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestFrame {
    pub frame_id: FrameId,
    pub video_id: VideoId,
    pub timestamp_ms: u64,
    pub origin: FrameOrigin,
    pub width: Option<u32>,
    pub height: Option<u32>,
    pub frame_file: Option<String>,
    pub mask_file: Option<String>,
    pub segmentation: Option<ManifestSegmentation>,
    pub cvs: ManifestCvs,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OmittedFrame {
    pub frame_id: FrameId,
    pub reasons: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub manifest_version: u32,
    pub project_id: ProjectId,
    pub project_name: String,
    pub checklist_version: String,
    pub class_table_version: u32,
    pub class_index_table: BTreeMap<String, u8>,
    pub frame_storage: FrameStorage,
    pub videos: Vec<ManifestVideo>,
    pub frames: Vec<ManifestFrame>,
    pub omitted: Vec<OmittedFrame>,
    pub export_checksum: String,
}

pub fn class_index_table() -> BTreeMap<String, u8> {
    SegClass::ALL
        .iter()
        .map(|c| (c.name().to_owned(), c.index()))
        .collect()
}

/// Rebuilds every object with keys in byte order, whatever map type
/// serde_json was compiled with.
fn sorted(value: Value) -> Value {
    match value {
        Value::Object(map) => {
            let mut entries: Vec<(String, Value)> = map.into_iter().collect();
            entries.sort_by(|a, b| a.0.cmp(&b.0));
            let mut out = Map::new();
            for (k, v) in entries {
                out.insert(k, sorted(v));
            }
            Value::Object(out)
        }
        Value::Array(items) => Value::Array(items.into_iter().map(sorted).collect()),
        other => other,
    }
}

/// Canonical bytes: sorted keys, two-space indentation, trailing newline.
pub fn canonical_json<T: Serialize>(value: &T) -> serde_json::Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(&sorted(serde_json::to_value(value)?))?;
    out.push(b'\n');
    Ok(out)
}

/// Canonical form of a manifest with an empty checksum, the input of the
/// manifest part of [`export_checksum`].
pub fn manifest_bytes_for_checksum(manifest: &Value) -> serde_json::Result<Vec<u8>> {
    let mut blank = manifest.clone();
    if let Some(obj) = blank.as_object_mut() {
        obj.insert("export_checksum".into(), Value::String(String::new()));
    }
    canonical_json(&blank)
}

/// SHA-256 over every emitted file in path order (`path \n len \n bytes`)
/// followed by the manifest serialized with an empty checksum.
pub fn export_checksum(files: &BTreeMap<String, Vec<u8>>, blank_manifest: &[u8]) -> String {
    let mut h = Sha256::new();
    let mut feed = |path: &str, bytes: &[u8]| {
        h.update(path.as_bytes());
        h.update(b"\n");
        h.update(bytes.len().to_string().as_bytes());
        h.update(b"\n");
        h.update(bytes);
    };
    for (path, bytes) in files {
        feed(path, bytes);
    }
    feed(MANIFEST_FILE, blank_manifest);
    hex::encode(h.finalize())
}
