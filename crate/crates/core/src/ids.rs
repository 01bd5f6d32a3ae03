//! Identifier newtypes.
//!
//! Identifiers are plain strings on the wire. Video and frame identifiers are
//! derived from content (checksum, timestamp) so that rebuilding the same
//! project from the same sources reproduces the same ids.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(try_from = "String", into = "String")]
        pub struct $name(String);

        impl FromStr for $name {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                Self::parse(s)
            }
        }

        impl TryFrom<String> for $name {
            type Error = Error;
            fn try_from(s: String) -> Result<Self> {
                Self::parse(&s)
            }
        }

        impl From<$name> for String {
            fn from(id: $name) -> String {
                id.0
            }
        }

        impl $name {
            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl AsRef<str> for $name {
            fn as_ref(&self) -> &str {
                &self.0
            }
        }
    };
}

string_id!(
    /// Identifier of a registered procedure video.
    VideoId
);
string_id!(
    /// Identifier of a frame: `<video_id>-t<timestamp_ms, 9 digits>`.
    FrameId
);
string_id!(
    /// Identifier of an annotator (rater, segmenter, reviewer, screener or admin).
    AnnotatorId
);
string_id!(ProjectId);

/// Characters allowed in caller-chosen identifiers. Keeps store keys and
/// archive paths unambiguous.
fn check_token(kind: &str, raw: &str) -> Result<()> {
    let ok = !raw.is_empty()
        && raw.len() <= 128
        && raw
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'));
    if ok {
        Ok(())
    } else {
        Err(Error::Invalid(format!(
            "{kind} id {raw:?} must be 1-128 chars of [A-Za-z0-9_.-]"
        )))
    }
}

impl VideoId {
    /// Video ids are derived from the first 16 hex digits of the content checksum.
    pub fn from_checksum(checksum: &str) -> Self {
        let prefix: String = checksum.chars().take(16).collect();
        VideoId(format!("vid-{prefix}"))
    }

    pub fn parse(raw: &str) -> Result<Self> {
        check_token("video", raw)?;
        Ok(VideoId(raw.to_owned()))
    }
}

impl FrameId {
    pub fn new(video: &VideoId, timestamp_ms: u64) -> Self {
        FrameId(format!("{video}-t{timestamp_ms:09}"))
    }

    pub fn parse(raw: &str) -> Result<Self> {
        check_token("frame", raw)?;
        Ok(FrameId(raw.to_owned()))
    }
}

impl AnnotatorId {
    pub fn parse(raw: &str) -> Result<Self> {
        check_token("annotator", raw)?;
        Ok(AnnotatorId(raw.to_owned()))
    }
}

impl ProjectId {
    pub fn parse(raw: &str) -> Result<Self> {
        check_token("project", raw)?;
        Ok(ProjectId(raw.to_owned()))
    }
}

/// What a CVS assessment is about: a whole video or a single keyframe.
///
/// Serialized as `video:<id>` or `frame:<id>`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Target {
    Video(VideoId),
    Frame(FrameId),
}

impl Target {
    pub fn video_id(&self) -> Option<&VideoId> {
        match self {
            Target::Video(v) => Some(v),
            Target::Frame(_) => None,
        }
    }

    pub fn frame_id(&self) -> Option<&FrameId> {
        match self {
            Target::Frame(f) => Some(f),
            Target::Video(_) => None,
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::Video(v) => write!(f, "video:{v}"),
            Target::Frame(fr) => write!(f, "frame:{fr}"),
        }
    }
}

impl FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            Some(("video", id)) => Ok(Target::Video(VideoId::parse(id)?)),
            Some(("frame", id)) => Ok(Target::Frame(FrameId::parse(id)?)),
            _ => Err(Error::Invalid(format!(
                "target {s:?} must be video:<id> or frame:<id>"
            ))),
        }
    }
}

impl Serialize for Target {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Target {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        raw.parse().map_err(serde::de::Error::custom)
    }
}
