//! Video registration, exclusion screening and frame access.

mod decoder;

use std::collections::BTreeSet;
use std::fmt;
use std::fs::File;
use std::io::{self, Read};
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

pub use decoder::{
    nearest_index, png_dimensions, DecodeError, DecodedFrame, FfmpegDecoder, FrameDecoder,
    FrameDirectory, NoDecoder,
};

use crate::error::{Error, Result};
use crate::identity::{Project, Role};
use crate::ids::{AnnotatorId, FrameId, ProjectId, VideoId};
use crate::store::{ReadViewExt, Record, Versioned};
use crate::Platform;

/// Procedure deviations that exclude a video from the dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionFlag {
    FundusFirst,
    SubtotalOrPartial,
    IntraoperativeCholangiogram,
    ConversionToOpen,
    ProcedureAborted,
}

impl ExclusionFlag {
    pub const ALL: [ExclusionFlag; 5] = [
        ExclusionFlag::FundusFirst,
        ExclusionFlag::SubtotalOrPartial,
        ExclusionFlag::IntraoperativeCholangiogram,
        ExclusionFlag::ConversionToOpen,
        ExclusionFlag::ProcedureAborted,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExclusionFlag::FundusFirst => "fundus_first",
            ExclusionFlag::SubtotalOrPartial => "subtotal_or_partial",
            ExclusionFlag::IntraoperativeCholangiogram => "intraoperative_cholangiogram",
            ExclusionFlag::ConversionToOpen => "conversion_to_open",
            ExclusionFlag::ProcedureAborted => "procedure_aborted",
        }
    }
}

impl FromStr for ExclusionFlag {
    type Err = Error;

    /// Accepts `fundus_first`, `FundusFirst` or `fundus-first`.
    fn from_str(s: &str) -> Result<Self> {
        let folded: String = s
            .chars()
            .filter(|c| !matches!(c, '_' | '-'))
            .flat_map(char::to_lowercase)
            .collect();
        ExclusionFlag::ALL
            .into_iter()
            .find(|f| f.as_str().replace('_', "") == folded)
            .ok_or_else(|| Error::Invalid(format!("unknown exclusion flag {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VideoStatus {
    Registered,
    Excluded,
    RoiPending,
    RoiSet,
    Sampled,
    Complete,
}

impl VideoStatus {
    /// Sampling freezes screening and the region of interest.
    pub fn is_sampled(self) -> bool {
        matches!(self, VideoStatus::Sampled | VideoStatus::Complete)
    }
}

/// Frame rate as an exact rational, e.g. `25` or `30000/1001`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Fps {
    pub num: u32,
    pub den: u32,
}

impl fmt::Display for Fps {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

impl FromStr for Fps {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Invalid(format!("fps {s:?} must be a positive rational or decimal"));
        let (num, den) = if let Some((n, d)) = s.split_once('/') {
            (
                n.trim().parse::<u32>().map_err(|_| bad())?,
                d.trim().parse::<u32>().map_err(|_| bad())?,
            )
        } else if let Some((whole, frac)) = s.split_once('.') {
            if frac.is_empty() || frac.len() > 6 || !frac.bytes().all(|b| b.is_ascii_digit()) {
                return Err(bad());
            }
            let den = 10u32.pow(frac.len() as u32);
            let whole: u32 = whole.parse().map_err(|_| bad())?;
            let frac: u32 = frac.parse().map_err(|_| bad())?;
            let num = whole
                .checked_mul(den)
                .and_then(|w| w.checked_add(frac))
                .ok_or_else(bad)?;
            (num, den)
        } else {
            (s.trim().parse::<u32>().map_err(|_| bad())?, 1)
        };
        if num == 0 || den == 0 {
            return Err(bad());
        }
        let g = gcd(num, den);
        Ok(Fps {
            num: num / g,
            den: den / g,
        })
    }
}

fn gcd(mut a: u32, mut b: u32) -> u32 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

impl Serialize for Fps {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Fps {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Text(String),
            Int(u32),
        }
        match Raw::deserialize(d)? {
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
            Raw::Int(n) => n.to_string().parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcedureVideo {
    pub video_id: VideoId,
    pub project_id: ProjectId,
    pub source_uri: String,
    /// SHA-256 of the full source byte stream, lowercase hex.
    pub checksum: String,
    pub duration_ms: u64,
    pub fps: Fps,
    pub exclusion_flags: BTreeSet<ExclusionFlag>,
    pub status: VideoStatus,
    pub registered_at: DateTime<Utc>,
}

impl ProcedureVideo {
    pub fn is_excluded(&self) -> bool {
        self.status == VideoStatus::Excluded
    }

    pub fn check_timestamp(&self, timestamp_ms: u64) -> Result<()> {
        if timestamp_ms > self.duration_ms {
            return Err(Error::TimestampOutOfRange {
                timestamp_ms,
                duration_ms: self.duration_ms,
            });
        }
        Ok(())
    }
}

impl Record for ProcedureVideo {
    const COLLECTION: &'static str = "videos";
    fn key(&self) -> String {
        self.video_id.to_string()
    }
}

/// A decoded frame as handed to annotators.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameImage {
    pub frame_id: FrameId,
    pub video_id: VideoId,
    pub timestamp_ms: u64,
    pub width: u32,
    pub height: u32,
    pub pixel_data_ref: String,
}

/// Resolves `file://` URIs and bare paths; other schemes are unreadable.
fn open_source(uri: &str) -> Result<File> {
    let raw = uri.strip_prefix("file://").unwrap_or(uri);
    if raw.contains("://") {
        return Err(Error::SourceUnreadable {
            uri: uri.to_owned(),
            source: io::Error::new(io::ErrorKind::Unsupported, "only local files are supported"),
        });
    }
    File::open(Path::new(raw)).map_err(|source| Error::SourceUnreadable {
        uri: uri.to_owned(),
        source,
    })
}

/// Streams the source through SHA-256.
pub fn checksum_source(uri: &str) -> Result<String> {
    let mut file = open_source(uri)?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf).map_err(|source| Error::SourceUnreadable {
            uri: uri.to_owned(),
            source,
        })?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

impl Platform {
    pub fn video(&self, video_id: &VideoId) -> Result<Versioned<ProcedureVideo>> {
        self.store()
            .get::<ProcedureVideo>(video_id.as_str())?
            .ok_or_else(|| Error::not_found("video", video_id))
    }

    pub fn videos(&self, project: Option<&ProjectId>) -> Result<Vec<ProcedureVideo>> {
        Ok(self
            .store()
            .scan::<ProcedureVideo>()?
            .into_iter()
            .map(|v| v.record)
            .filter(|v| project.is_none_or(|p| &v.project_id == p))
            .collect())
    }

    pub fn register_video(
        &self,
        actor: &AnnotatorId,
        project_id: &ProjectId,
        source_uri: &str,
        duration_ms: u64,
        fps: Fps,
    ) -> Result<ProcedureVideo> {
        self.actor(actor)?.require(&[Role::Screener, Role::Admin])?;
        if duration_ms == 0 {
            return Err(Error::Invalid("duration_ms must be positive".into()));
        }
        if fps.num == 0 || fps.den == 0 {
            return Err(Error::Invalid("fps must be positive".into()));
        }
        self.store()
            .get::<Project>(project_id.as_str())?
            .ok_or_else(|| Error::not_found("project", project_id))?;
        let checksum = checksum_source(source_uri)?;
        if let Some(existing) = self
            .store()
            .scan::<ProcedureVideo>()?
            .into_iter()
            .find(|v| v.record.checksum == checksum)
        {
            return Err(Error::DuplicateVideo {
                checksum,
                existing: existing.record.video_id,
            });
        }
        let video = ProcedureVideo {
            video_id: VideoId::from_checksum(&checksum),
            project_id: project_id.clone(),
            source_uri: source_uri.to_owned(),
            checksum,
            duration_ms,
            fps,
            exclusion_flags: BTreeSet::new(),
            status: VideoStatus::Registered,
            registered_at: self.now(),
        };
        let mut tx = self.tx(actor, "register_video");
        tx.put(&video, 0);
        self.commit(tx).map_err(|e| match e {
            // lost a race against an identical registration
            Error::VersionConflict { .. } => Error::DuplicateVideo {
                checksum: video.checksum.clone(),
                existing: video.video_id.clone(),
            },
            other => other,
        })?;
        Ok(video)
    }

    /// Records the screener's exclusion decision. Replaces any earlier
    /// decision until the video is sampled.
    pub fn screen_video(
        &self,
        actor: &AnnotatorId,
        video_id: &VideoId,
        flags: BTreeSet<ExclusionFlag>,
        expected_version: Option<u64>,
    ) -> Result<ProcedureVideo> {
        self.actor(actor)?.require(&[Role::Screener])?;
        let Versioned { version, record } = self.video(video_id)?;
        check_expected("videos", video_id.as_str(), expected_version, version)?;
        if record.status.is_sampled() {
            return Err(Error::AlreadySampled(video_id.clone()));
        }
        let has_roi = self
            .store()
            .get::<crate::sampling::RegionOfInterest>(video_id.as_str())?
            .is_some();
        let status = if !flags.is_empty() {
            VideoStatus::Excluded
        } else if has_roi {
            VideoStatus::RoiSet
        } else {
            VideoStatus::RoiPending
        };
        let updated = ProcedureVideo {
            exclusion_flags: flags,
            status,
            ..record.clone()
        };
        if updated == record {
            return Ok(record);
        }
        let mut tx = self.tx(actor, "screen_video");
        tx.put(&updated, version);
        self.commit(tx)?;
        Ok(updated)
    }

    /// Decodes the frame nearest to `timestamp_ms` at native resolution.
    pub fn decode_frame(&self, video_id: &VideoId, timestamp_ms: u64) -> Result<(FrameImage, DecodedFrame)> {
        let video = self.video(video_id)?.record;
        if video.is_excluded() {
            return Err(Error::ExcludedVideo(video_id.clone()));
        }
        video.check_timestamp(timestamp_ms)?;
        let decoded = self.decoder().decode(&video, timestamp_ms)?;
        let image = FrameImage {
            frame_id: FrameId::new(video_id, timestamp_ms),
            video_id: video_id.clone(),
            timestamp_ms,
            width: decoded.width,
            height: decoded.height,
            pixel_data_ref: decoded.locator.clone(),
        };
        Ok((image, decoded))
    }
}

/// Optimistic check for callers that supply the version they last read.
pub(crate) fn check_expected(
    collection: &str,
    key: &str,
    expected: Option<u64>,
    actual: u64,
) -> Result<()> {
    match expected {
        Some(e) if e != actual => Err(Error::VersionConflict {
            collection: collection.to_owned(),
            key: key.to_owned(),
            expected: e,
            actual,
        }),
        _ => Ok(()),
    }
}
