//! Frame decoding adapters.
//!
//! [`FrameDirectory`] reads frames that were extracted ahead of time into
//! `<root>/<video_id>/<timestamp_ms:09>.png`. [`FfmpegDecoder`] runs an
//! external `ffmpeg` per request. Both resolve a request to the nearest
//! available frame, with exact ties going to the earlier frame.

use std::fs;
use std::io::{self, Cursor};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use thiserror::Error;

use super::{Fps, ProcedureVideo};
use crate::ids::VideoId;

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("no frames available for video {0}")]
    NoFrames(VideoId),
    #[error("source {0} is not a local file")]
    UnsupportedSource(String),
    #[error("decoder process failed: {0}")]
    Process(String),
    #[error("decoded image is not a valid PNG: {0}")]
    Image(String),
    #[error("no frame decoder configured")]
    Unconfigured,
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// PNG-encoded pixels of one decoded frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodedFrame {
    pub width: u32,
    pub height: u32,
    pub png: Vec<u8>,
    /// Where the pixels came from (file path or decoder invocation).
    pub locator: String,
}

pub trait FrameDecoder: Send + Sync {
    fn decode(&self, video: &ProcedureVideo, timestamp_ms: u64) -> Result<DecodedFrame, DecodeError>;
}

/// Placeholder used when a deployment has no access to pixels.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoDecoder;

impl FrameDecoder for NoDecoder {
    fn decode(&self, _: &ProcedureVideo, _: u64) -> Result<DecodedFrame, DecodeError> {
        Err(DecodeError::Unconfigured)
    }
}

pub fn png_dimensions(bytes: &[u8]) -> Result<(u32, u32), DecodeError> {
    let reader = png::Decoder::new(Cursor::new(bytes))
        .read_info()
        .map_err(|e| DecodeError::Image(e.to_string()))?;
    let info = reader.info();
    Ok((info.width, info.height))
}

/// Index of the candidate nearest to `target`; ties go to the earlier one.
/// `sorted` must be ascending and non-empty.
pub fn nearest_index(sorted: &[u64], target: u64) -> usize {
    let after = sorted.partition_point(|&t| t < target);
    if after == sorted.len() {
        return sorted.len() - 1;
    }
    if after == 0 || sorted[after] == target {
        return after;
    }
    let before = after - 1;
    if target - sorted[before] <= sorted[after] - target {
        before
    } else {
        after
    }
}

/// Reader for pre-extracted frame directories.
#[derive(Debug, Clone)]
pub struct FrameDirectory {
    root: PathBuf,
}

impl FrameDirectory {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        FrameDirectory { root: root.into() }
    }

    pub fn frame_path(&self, video: &VideoId, timestamp_ms: u64) -> PathBuf {
        self.root
            .join(video.as_str())
            .join(format!("{timestamp_ms:09}.png"))
    }

    /// Timestamps of every frame file present for `video`, ascending.
    pub fn timestamps(&self, video: &VideoId) -> Result<Vec<u64>, DecodeError> {
        let dir = self.root.join(video.as_str());
        let entries = match fs::read_dir(&dir) {
            Ok(entries) => entries,
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                return Err(DecodeError::NoFrames(video.clone()))
            }
            Err(e) => return Err(e.into()),
        };
        let mut out = Vec::new();
        for entry in entries {
            let name = entry?.file_name();
            let Some(stem) = name.to_str().and_then(|n| n.strip_suffix(".png")) else {
                continue;
            };
            if stem.len() == 9 && stem.bytes().all(|b| b.is_ascii_digit()) {
                out.push(stem.parse().expect("nine digits fit in u64"));
            }
        }
        out.sort_unstable();
        Ok(out)
    }
}

impl FrameDecoder for FrameDirectory {
    fn decode(&self, video: &ProcedureVideo, timestamp_ms: u64) -> Result<DecodedFrame, DecodeError> {
        let available = self.timestamps(&video.video_id)?;
        if available.is_empty() {
            return Err(DecodeError::NoFrames(video.video_id.clone()));
        }
        let chosen = available[nearest_index(&available, timestamp_ms)];
        let path = self.frame_path(&video.video_id, chosen);
        let png = fs::read(&path)?;
        let (width, height) = png_dimensions(&png)?;
        Ok(DecodedFrame {
            width,
            height,
            png,
            locator: path.display().to_string(),
        })
    }
}

/// Decodes single frames by invoking an external `ffmpeg` binary.
#[derive(Debug, Clone)]
pub struct FfmpegDecoder {
    program: PathBuf,
}

impl Default for FfmpegDecoder {
    fn default() -> Self {
        FfmpegDecoder::new("ffmpeg")
    }
}

impl FfmpegDecoder {
    pub fn new(program: impl Into<PathBuf>) -> Self {
        FfmpegDecoder {
            program: program.into(),
        }
    }

    /// Index of the frame whose presentation time is nearest to
    /// `timestamp_ms`, clamped to the last frame of the video.
    pub fn frame_index(fps: Fps, duration_ms: u64, timestamp_ms: u64) -> u64 {
        let scaled = u128::from(timestamp_ms) * u128::from(fps.num);
        let per = u128::from(fps.den) * 1000;
        let mut index = scaled / per;
        if 2 * (scaled % per) > per {
            index += 1;
        }
        let total = (u128::from(duration_ms) * u128::from(fps.num)).div_ceil(per);
        let last = total.saturating_sub(1);
        index.min(last) as u64
    }

    /// Seek position of frame `index` in seconds, microsecond precision.
    pub fn seek_arg(fps: Fps, index: u64) -> String {
        let micros = u128::from(index) * u128::from(fps.den) * 1_000_000 / u128::from(fps.num);
        format!("{}.{:06}", micros / 1_000_000, micros % 1_000_000)
    }
}

fn local_path(uri: &str) -> Option<&Path> {
    let raw = uri.strip_prefix("file://").unwrap_or(uri);
    if raw.contains("://") {
        None
    } else {
        Some(Path::new(raw))
    }
}

impl FrameDecoder for FfmpegDecoder {
    fn decode(&self, video: &ProcedureVideo, timestamp_ms: u64) -> Result<DecodedFrame, DecodeError> {
        let source = local_path(&video.source_uri)
            .ok_or_else(|| DecodeError::UnsupportedSource(video.source_uri.clone()))?;
        let index = Self::frame_index(video.fps, video.duration_ms, timestamp_ms);
        let seek = Self::seek_arg(video.fps, index);
        let output = Command::new(&self.program)
            .args(["-v", "error", "-nostdin", "-ss", &seek, "-i"])
            .arg(source)
            .args(["-frames:v", "1", "-f", "image2pipe", "-c:v", "png", "-"])
            .stdin(Stdio::null())
            .output()?;
        if !output.status.success() {
            return Err(DecodeError::Process(format!(
                "{} exited with {}: {}",
                self.program.display(),
                output.status,
                String::from_utf8_lossy(&output.stderr).trim()
            )));
        }
        let (width, height) = png_dimensions(&output.stdout)?;
        Ok(DecodedFrame {
            width,
            height,
            png: output.stdout,
            locator: format!("ffmpeg:{}@{seek}", source.display()),
        })
    }
}
