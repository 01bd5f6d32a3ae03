//! Test fixtures: an in-memory platform with a frame directory decoder, a
//! deterministic clock and a populated annotator roster.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use tempfile::TempDir;

use crate::clock::SteppingClock;
use crate::identity::{Annotator, Role};
use crate::ids::{AnnotatorId, FrameId, ProjectId, Target, VideoId};
use crate::ingestion::FrameDirectory;
use crate::sampling::Roi;
use crate::segmentation::{PolygonAnnotation, SegClass, Submission, Verdict};
use crate::store::{MemoryStore, Store};
use crate::Platform;

pub const FRAME_WIDTH: u32 = 64;
pub const FRAME_HEIGHT: u32 = 48;

/// Grayscale PNG of uniform shade.
pub fn tiny_png(width: u32, height: u32, shade: u8) -> Vec<u8> {
    let mut out = Vec::new();
    let mut enc = png::Encoder::new(&mut out, width, height);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let mut w = enc.write_header().expect("png header");
    w.write_image_data(&vec![shade; (width * height) as usize])
        .expect("png data");
    w.finish().expect("png finish");
    out
}

/// Axis-aligned square polygon.
pub fn square(id: &str, class: SegClass, draw_order: i64, at: [f64; 2], size: f64) -> PolygonAnnotation {
    let [x, y] = at;
    PolygonAnnotation {
        polygon_id: id.to_owned(),
        seg_class: class,
        vertices: vec![[x, y], [x + size, y], [x + size, y + size], [x, y + size]],
        draw_order,
        is_hole: false,
    }
}

fn id(raw: &str) -> AnnotatorId {
    AnnotatorId::parse(raw).expect("fixture id")
}

pub struct Fixture {
    pub platform: Platform,
    pub admin: AnnotatorId,
    pub screener: AnnotatorId,
    pub raters: Vec<AnnotatorId>,
    pub segmenters: Vec<AnnotatorId>,
    pub reviewers: Vec<AnnotatorId>,
    pub project: ProjectId,
    pub frame_width: u32,
    pub frame_height: u32,
    dir: TempDir,
}

impl Default for Fixture {
    fn default() -> Self {
        Self::new()
    }
}

impl Fixture {
    pub fn new() -> Self {
        Self::with_store(Arc::new(MemoryStore::new()))
    }

    pub fn with_store(store: Arc<dyn Store>) -> Self {
        let dir = tempfile::tempdir().expect("tempdir");
        std::fs::create_dir_all(dir.path().join("frames")).expect("frames dir");
        std::fs::create_dir_all(dir.path().join("sources")).expect("sources dir");
        let platform = Platform::new(store, Arc::new(FrameDirectory::new(dir.path().join("frames"))))
            .with_clock(Arc::new(SteppingClock::default()));
        let admin = id("admin");
        platform.bootstrap_admin(admin.clone(), "Admin").expect("bootstrap");
        let add = |name: String, roles: &[Role]| {
            let a = id(&name);
            platform
                .upsert_annotator(
                    &admin,
                    Annotator {
                        annotator_id: a.clone(),
                        display_name: name,
                        roles: roles.iter().copied().collect(),
                    },
                )
                .expect("annotator");
            a
        };
        let screener = add("screener".into(), &[Role::Screener]);
        let raters = (0..5).map(|i| add(format!("r{i}"), &[Role::CvsRater])).collect();
        let segmenters = (0..2).map(|i| add(format!("s{i}"), &[Role::Segmenter])).collect();
        let reviewers = (0..2).map(|i| add(format!("q{i}"), &[Role::Reviewer])).collect();
        let project = ProjectId::parse("default").unwrap();
        platform
            .create_project(&admin, project.clone(), "Default", None)
            .expect("project");
        Fixture {
            platform,
            admin,
            screener,
            raters,
            segmenters,
            reviewers,
            project,
            frame_width: FRAME_WIDTH,
            frame_height: FRAME_HEIGHT,
            dir,
        }
    }

    pub fn rater(&self, i: usize) -> AnnotatorId {
        self.raters[i].clone()
    }

    pub fn segmenter(&self, i: usize) -> AnnotatorId {
        self.segmenters[i].clone()
    }

    pub fn reviewer(&self, i: usize) -> AnnotatorId {
        self.reviewers[i].clone()
    }

    pub fn path(&self) -> &Path {
        self.dir.path()
    }

    pub fn frames_dir(&self) -> PathBuf {
        self.dir.path().join("frames")
    }

    /// Writes a source file and returns its path as a URI string.
    pub fn source_file(&self, name: &str, bytes: &[u8]) -> String {
        let path = self.dir.path().join("sources").join(name);
        std::fs::write(&path, bytes).expect("source file");
        path.to_string_lossy().into_owned()
    }

    /// Registers a video whose content is derived from `name`.
    pub fn video(&self, name: &str, duration_ms: u64) -> VideoId {
        let src = self.source_file(name, format!("video bytes of {name}").as_bytes());
        self.platform
            .register_video(&self.screener, &self.project, &src, duration_ms, "25".parse().unwrap())
            .expect("register")
            .video_id
    }

    pub fn screened_video(&self, name: &str, duration_ms: u64) -> VideoId {
        let v = self.video(name, duration_ms);
        self.platform
            .screen_video(&self.screener, &v, Default::default(), None)
            .expect("screen");
        v
    }

    /// Registered, screened, timestamped and sampled, with a decodable
    /// frame on disk for every planned timestamp.
    pub fn sampled_video(&self, name: &str, roi: (u64, u64, Option<u64>), interval_ms: u64) -> VideoId {
        let (start, end, evaluable) = roi;
        let v = self.screened_video(name, end + 60_000);
        self.platform
            .set_roi(&self.screener, &v, Roi::new(start, end, evaluable).expect("roi"), None)
            .expect("set roi");
        let plan = self
            .platform
            .sample_keyframes(&self.screener, &v, interval_ms)
            .expect("sample");
        let ts: Vec<u64> = plan.frames().map(|f| f.timestamp_ms).collect();
        self.write_frames(&v, &ts);
        v
    }

    pub fn write_frames(&self, video: &VideoId, timestamps: &[u64]) {
        let fd = FrameDirectory::new(self.frames_dir());
        std::fs::create_dir_all(self.frames_dir().join(video.as_str())).expect("video frames dir");
        for &t in timestamps {
            let shade = (t / 1000 % 251) as u8;
            std::fs::write(fd.frame_path(video, t), tiny_png(self.frame_width, self.frame_height, shade))
                .expect("frame");
        }
    }

    pub fn submission(&self, polygons: Vec<PolygonAnnotation>) -> Submission {
        Submission::new(polygons, self.frame_width, self.frame_height)
    }

    /// Assigns the first `max(3, votes.len())` raters and submits `votes`
    /// in rater order.
    pub fn assess(&self, target: &Target, votes: &[[bool; 3]]) {
        let n = votes.len().max(3);
        self.platform
            .assign_raters(&self.admin, target, &self.raters[..n])
            .expect("assign");
        for (i, v) in votes.iter().enumerate() {
            self.platform
                .submit_assessment(&self.raters[i], target, *v, None)
                .expect("assessment");
        }
    }

    /// Submits `polygons` by the first segmenter and approves them by the
    /// first reviewer.
    pub fn segment_and_approve(&self, frame: &FrameId, polygons: Vec<PolygonAnnotation>) {
        let rec = self
            .platform
            .submit_segmentation(&self.segmenters[0], frame, self.submission(polygons), None)
            .expect("segmentation");
        self.platform
            .review_segmentation(&self.reviewers[0], &rec.record_id, Verdict::Approve, None, None)
            .expect("approval");
    }

    /// A sampled video with every manual keyframe assessed by three raters
    /// and segmented with an approved review, so it passes the export gate.
    pub fn complete_video(&self, name: &str, roi: (u64, u64, Option<u64>), interval_ms: u64) -> VideoId {
        let v = self.sampled_video(name, roi, interval_ms);
        let plan = self.platform.plan(&v).expect("plan");
        for (k, f) in plan.manual_keyframes.iter().enumerate() {
            let frame = f.frame_id();
            let votes: Vec<[bool; 3]> = (0..3)
                .map(|r| {
                    let bits = (k + r) % 8;
                    [bits & 1 != 0, bits & 2 != 0, bits & 4 != 0]
                })
                .collect();
            self.assess(&Target::Frame(frame.clone()), &votes);
            let s = 8.0 + (k % 5) as f64;
            self.segment_and_approve(
                &frame,
                vec![
                    square("gb", SegClass::Gallbladder, 0, [1.0, 1.0], 30.0),
                    square("tool", SegClass::SurgicalInstrument, 1, [20.0, 20.0], s),
                ],
            );
        }
        v
    }
}
