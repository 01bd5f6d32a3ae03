//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Oracles here are written independently of the library code.

mod common;

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fs;
use std::io::{BufRead, BufReader};
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::{Arc, Barrier, Mutex};
use std::time::{Duration, Instant};

use chrono::{TimeZone, Utc};
use cvsa_core::cvs::{majority_consensus, CvsAssessment};
use cvsa_core::export::{encode_indexed, validate_archive, ExportGateReport, ExportOptions, ViolationCode};
use cvsa_core::identity::{Annotator, Role};
use cvsa_core::ingestion::{DecodeError, ExclusionFlag, FrameImage, VideoStatus};
use cvsa_core::qa::{cohen_kappa, Kappa, KappaError};
use cvsa_core::sampling::{plan_keyframes, FrameOrigin, Roi};
use cvsa_core::segmentation::{rasterize, PolygonAnnotation, SegClass, SegStatus, Verdict};
use cvsa_core::store::{ReadView, RedbStore, Store, Transaction};
use cvsa_core::testkit::{square, Fixture};
use cvsa_core::{AnnotatorId, Error, FrameId, ProjectId, Target, VideoId};
use cvsa_service::error::classify;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use common::{Http, Server};

type Outcome = Result<String, String>;
type Check = fn() -> Outcome;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if $cond {
        } else {
            return Err(format!($($msg)+));
        }
    };
}

fn main() {
    let criteria: [(u8, &str, Check); 8] = [
        (1, "sampling conformance", sampling_conformance),
        (2, "cvs truth table", cvs_truth_table),
        (3, "majority consensus", consensus_exhaustive),
        (4, "kappa oracle equivalence", kappa_oracle),
        (5, "rasterization", rasterization),
        (6, "workflow gating", workflow_gating),
        (7, "export determinism and round trip", export_round_trip),
        (8, "service integrity", service_integrity),
    ];
    let mut failed = 0;
    for (n, name, check) in criteria {
        let started = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let took = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {n} {name}: PASS ({detail}; {took:.2}s)"),
            Err(why) => {
                failed += 1;
                println!("criterion {n} {name}: FAIL ({why})");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}

fn fail<E: std::fmt::Debug>(e: E) -> String {
    format!("{e:?}")
}

// 1 ------------------------------------------------------------------------

fn sampling_conformance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5a3f1e_u64);
    let video = VideoId::parse("vid-acceptance").unwrap();
    let mut frames = 0usize;
    for case in 0..200 {
        let start = rng.random_range(0..120_000u64);
        let len = rng.random_range(1..=240_000u64);
        let end = start + len;
        let evaluable = rng.random_bool(0.75).then(|| rng.random_range(start..=end));
        let interval = match case % 4 {
            0 => rng.random_range(1..=200u64),
            1 => rng.random_range(200..=10_000u64),
            2 => 30_000,
            _ => rng.random_range(1..=2 * len),
        };
        let roi = Roi::new(start, end, evaluable).map_err(fail)?;
        let plan = plan_keyframes(&video, &roi, interval).map_err(fail)?;
        ensure!(plan == plan_keyframes(&video, &roi, interval).map_err(fail)?, "case {case}: rerun differs");

        // brute force over every millisecond of the region
        let anchor = evaluable.unwrap_or(start);
        let (mut want_manual, mut want_auto) = (Vec::new(), Vec::new());
        for t in start..=end {
            if t >= anchor && (t - anchor) % interval == 0 {
                want_manual.push(t);
            }
            if evaluable.is_some_and(|e| t < e) && (t - start) % interval == 0 {
                want_auto.push(t);
            }
        }
        let manual: Vec<u64> = plan.manual_keyframes.iter().map(|f| f.timestamp_ms).collect();
        let auto: Vec<u64> = plan.auto_negative.iter().map(|f| f.timestamp_ms).collect();
        ensure!(manual == want_manual, "case {case}: manual keyframes differ from oracle");
        ensure!(auto == want_auto, "case {case}: auto-negative frames differ from oracle");

        // spacing
        for w in manual.windows(2).chain(auto.windows(2)) {
            ensure!(w[1] - w[0] == interval, "case {case}: spacing {} != {interval}", w[1] - w[0]);
        }
        // partition
        if let Some(e) = evaluable {
            ensure!(auto.iter().all(|&t| t < e), "case {case}: auto frame at or after evaluable");
        }
        ensure!(manual.iter().all(|&t| t >= anchor), "case {case}: manual frame before anchor");
        ensure!(
            plan.auto_negative.iter().all(|f| f.origin == FrameOrigin::AutoNegative)
                && plan.manual_keyframes.iter().all(|f| f.origin == FrameOrigin::ManualKeyframe),
            "case {case}: origin mislabeled"
        );
        // boundaries
        ensure!(manual.first() == Some(&anchor), "case {case}: first keyframe is not the anchor");
        ensure!(manual.last().is_some_and(|&t| t <= end && t + interval > end), "case {case}: last keyframe");
        if let Some(e) = evaluable {
            ensure!(
                auto.first().is_none_or(|&t| t == start) && auto.last().is_none_or(|&t| t + interval >= e),
                "case {case}: auto-negative boundary"
            );
            ensure!(auto.is_empty() == (e == start), "case {case}: auto-negative presence");
        } else {
            ensure!(auto.is_empty(), "case {case}: auto-negative without evaluable");
        }
        frames += manual.len() + auto.len();
    }
    Ok(format!("200 configurations, {frames} frames match the oracle"))
}

// 2 ------------------------------------------------------------------------

fn bits(k: usize) -> [bool; 3] {
    [k & 1 != 0, k & 2 != 0, k & 4 != 0]
}

fn cvs_truth_table() -> Outcome {
    let fx = Fixture::new();
    let v = fx.sampled_video("truth.mp4", (0, 7_000, None), 1_000);
    let plan = fx.platform.plan(&v).map_err(fail)?;
    ensure!(plan.manual_keyframes.len() == 8, "expected 8 keyframes");
    for (k, f) in plan.manual_keyframes.iter().enumerate() {
        let [c1, c2, c3] = bits(k);
        let conj = c1 && c2 && c3;
        let target = Target::Frame(f.frame_id());
        fx.assess(&target, &[[c1, c2, c3]; 3]);
        for a in fx.platform.assessments(&target).map_err(fail)? {
            ensure!(a.cvs() == conj, "({c1},{c2},{c3}): assessment cvs {}", a.cvs());
        }
        let label = fx.platform.compute_consensus(&target).map_err(fail)?;
        ensure!(label.cvs_consensus == conj, "({c1},{c2},{c3}): consensus cvs {}", label.cvs_consensus);
    }
    Ok("8/8 combinations give the conjunction".into())
}

// 3 ------------------------------------------------------------------------

fn assessment(target: &Target, rater: usize, votes: [bool; 3]) -> CvsAssessment {
    CvsAssessment {
        assessment_id: format!("a{rater}"),
        rater_id: AnnotatorId::parse(&format!("r{rater}")).unwrap(),
        target: target.clone(),
        c1: votes[0],
        c2: votes[1],
        c3: votes[2],
        version: 1,
        submitted_at: Utc.timestamp_opt(1_700_000_000, 0).unwrap(),
    }
}

fn consensus_exhaustive() -> Outcome {
    let target: Target = "frame:vid-x-t000000000".parse().unwrap();
    let mut cases = 0;
    for raters in [3usize, 4] {
        for code in 0..(1usize << (3 * raters)) {
            let votes: Vec<[bool; 3]> = (0..raters).map(|r| bits(code >> (3 * r))).collect();
            let input: Vec<CvsAssessment> = votes.iter().enumerate().map(|(r, v)| assessment(&target, r, *v)).collect();
            let before = serde_json::to_vec(&input).unwrap();
            let label = majority_consensus(&target, &input).map_err(fail)?;
            ensure!(serde_json::to_vec(&input).unwrap() == before, "inputs changed");
            let mut all = true;
            for (c, got) in [&label.c1, &label.c2, &label.c3].into_iter().enumerate() {
                let yes = votes.iter().filter(|v| v[c]).count();
                let want = 2 * yes > raters;
                ensure!(got.consensus == want, "{raters} raters, code {code}, c{}: {} != {want}", c + 1, got.consensus);
                ensure!(got.votes_yes as usize == yes && got.votes_no as usize == raters - yes, "vote counts");
                all &= want;
            }
            ensure!(label.cvs_consensus == all, "{raters} raters, code {code}: cvs consensus");
            ensure!(label.rater_count as usize == raters, "rater count");
            cases += 1;
        }
    }

    // the same for every 3-rater combination through the store, checking
    // that stored labels are byte-identical afterwards
    let fx = Fixture::new();
    let v = fx.sampled_video("consensus.mp4", (0, 511_000, None), 1_000);
    let plan = fx.platform.plan(&v).map_err(fail)?;
    for (code, f) in plan.manual_keyframes.iter().enumerate() {
        let votes: Vec<[bool; 3]> = (0..3).map(|r| bits(code >> (3 * r))).collect();
        fx.assess(&Target::Frame(f.frame_id()), &votes);
    }
    let raw_before = fx.platform.store().scan_raw("assessments").map_err(fail)?;
    let audit_before = fx.platform.audit_log(None, None).map_err(fail)?.len();
    for (code, f) in plan.manual_keyframes.iter().enumerate() {
        let label = fx.platform.frame_label(&f.frame_id()).map_err(fail)?;
        for c in 0..3 {
            let yes = (0..3).filter(|r| bits(code >> (3 * r))[c]).count();
            let got = [&label.c1, &label.c2, &label.c3][c].consensus;
            ensure!(got == (yes >= 2), "stored code {code}: c{} mismatch", c + 1);
        }
    }
    let raw_after = fx.platform.store().scan_raw("assessments").map_err(fail)?;
    ensure!(raw_before.len() == 512 * 3, "expected 1536 stored assessments");
    ensure!(
        serde_json::to_vec(&raw_before).unwrap() == serde_json::to_vec(&raw_after).unwrap(),
        "raw labels changed"
    );
    ensure!(fx.platform.audit_log(None, None).map_err(fail)?.len() == audit_before, "consensus wrote to the store");
    Ok(format!("{cases} vote combinations; 1536 stored labels byte-unchanged"))
}

// 4 ------------------------------------------------------------------------

/// Contingency-table kappa computed from scratch.
fn kappa_reference(a: &[bool], b: &[bool]) -> Option<f64> {
    let n = a.len() as f64;
    let mut table = [[0f64; 2]; 2];
    for (&x, &y) in a.iter().zip(b) {
        table[x as usize][y as usize] += 1.0;
    }
    let po = (table[0][0] + table[1][1]) / n;
    let row = [table[0][0] + table[0][1], table[1][0] + table[1][1]];
    let col = [table[0][0] + table[1][0], table[0][1] + table[1][1]];
    let pe = (row[0] * col[0] + row[1] * col[1]) / (n * n);
    if pe == 1.0 {
        None
    } else {
        Some((po - pe) / (1.0 - pe))
    }
}

fn kappa_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0f64;
    let mut constant = 0;
    for case in 0..1000 {
        let len = rng.random_range(1..=50usize);
        let bias_a = rng.random_range(0.0..1.0);
        let bias_b = rng.random_range(0.0..1.0);
        let a: Vec<bool> = (0..len).map(|_| rng.random_bool(bias_a)).collect();
        let b: Vec<bool> = (0..len).map(|_| rng.random_bool(bias_b)).collect();
        let got = cohen_kappa(&a, &b).map_err(fail)?;
        match (kappa_reference(&a, &b), got) {
            (Some(want), Kappa::Value(v)) => {
                worst = worst.max((want - v).abs());
                ensure!((want - v).abs() <= 1e-12, "case {case}: {v} vs {want}");
            }
            (None, k) => {
                // chance agreement is certain only when both raters are the same constant
                constant += 1;
                ensure!(a == b && k == Kappa::Value(1.0), "case {case}: constant case gave {k:?}");
            }
            (Some(want), k) => return Err(format!("case {case}: expected {want}, got {k:?}")),
        }
        ensure!(cohen_kappa(&b, &a).map_err(fail)? == got, "case {case}: not symmetric");
        let na: Vec<bool> = a.iter().map(|x| !x).collect();
        let nb: Vec<bool> = b.iter().map(|x| !x).collect();
        let negated = cohen_kappa(&na, &nb).map_err(fail)?;
        match (negated, got) {
            (Kappa::Value(x), Kappa::Value(y)) => ensure!((x - y).abs() <= 1e-12, "case {case}: negation"),
            (x, y) => ensure!(x == y, "case {case}: negation"),
        }
        if a.iter().any(|&x| x) && a.iter().any(|&x| !x) {
            ensure!(cohen_kappa(&a, &a).map_err(fail)? == Kappa::Value(1.0), "case {case}: self agreement");
        }
    }
    let (t, f) = (true, false);
    ensure!(cohen_kappa(&[t, t, f, f], &[t, f, f, t]).map_err(fail)? == Kappa::Value(0.0), "anchor 0.0");
    ensure!(cohen_kappa(&[t, t, t, f], &[t, t, f, f]).map_err(fail)? == Kappa::Value(0.5), "anchor 0.5");
    ensure!(cohen_kappa(&[t; 5], &[t; 5]).map_err(fail)? == Kappa::Value(1.0), "same constant");
    ensure!(cohen_kappa(&[t; 5], &[f; 5]).map_err(fail)? == Kappa::Value(0.0), "opposite constants");
    ensure!(matches!(cohen_kappa(&[], &[]), Err(KappaError::Empty)), "empty");
    ensure!(matches!(cohen_kappa(&[t], &[t, f]), Err(KappaError::LengthMismatch { .. })), "length mismatch");
    Ok(format!("1000 pairs, max deviation {worst:.1e}, {constant} constant pairs; anchors hold"))
}

// 5 ------------------------------------------------------------------------

/// Even-odd membership of a pixel centre, ray towards +x.
fn inside(ring: &[[f64; 2]], px: f64, py: f64) -> bool {
    let mut odd = false;
    let mut j = ring.len() - 1;
    for i in 0..ring.len() {
        let ([xi, yi], [xj, yj]) = (ring[j], ring[i]);
        if (yi > py) != (yj > py) && px < xi + (py - yi) * (xj - xi) / (yj - yi) {
            odd = !odd;
        }
        j = i;
    }
    odd
}

fn reference_mask(polygons: &[PolygonAnnotation], w: u32, h: u32) -> Vec<u8> {
    let mut out = vec![0u8; (w * h) as usize];
    for y in 0..h {
        for x in 0..w {
            let (cx, cy) = (x as f64 + 0.5, y as f64 + 0.5);
            // highest draw_order wins, later list position breaks ties
            let top = polygons
                .iter()
                .enumerate()
                .filter(|(_, p)| inside(&p.vertices, cx, cy))
                .max_by_key(|(i, p)| (p.draw_order, *i));
            if let Some((_, p)) = top {
                out[(y * w + x) as usize] = if p.is_hole { 0 } else { p.seg_class as u8 };
            }
        }
    }
    out
}

fn random_polygon(rng: &mut ChaCha8Rng, id: usize) -> PolygonAnnotation {
    loop {
        let n = rng.random_range(3..=8);
        let vertices: Vec<[f64; 2]> = (0..n)
            .map(|_| {
                if rng.random_bool(0.3) {
                    // integer and half-integer vertices exercise exact hits
                    [rng.random_range(0..=128) as f64 / 2.0, rng.random_range(0..=128) as f64 / 2.0]
                } else {
                    [rng.random_range(0.0..=64.0), rng.random_range(0.0..=64.0)]
                }
            })
            .collect();
        let area: f64 = (0..n)
            .map(|i| vertices[i][0] * vertices[(i + 1) % n][1] - vertices[(i + 1) % n][0] * vertices[i][1])
            .sum();
        if area == 0.0 {
            continue;
        }
        return PolygonAnnotation {
            polygon_id: format!("p{id}"),
            seg_class: SegClass::from_index(rng.random_range(1..=7)).unwrap(),
            vertices,
            draw_order: rng.random_range(0..4),
            is_hole: rng.random_bool(0.15),
        };
    }
}

fn rasterization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (w, h) = (64, 64);
    let mut painted = 0u64;
    for case in 0..500 {
        let count = rng.random_range(1..=6);
        let polygons: Vec<PolygonAnnotation> = (0..count).map(|i| random_polygon(&mut rng, i)).collect();
        let mask = rasterize(&polygons, w, h).map_err(fail)?;
        let want = reference_mask(&polygons, w, h);
        if let Some(i) = mask.pixels.iter().zip(&want).position(|(a, b)| a != b) {
            return Err(format!("case {case}: pixel ({}, {}) is {} not {}", i as u32 % w, i as u32 / w, mask.pixels[i], want[i]));
        }
        ensure!(mask.histogram().iter().sum::<u64>() == u64::from(w * h), "case {case}: histogram sum");
        painted += mask.pixels.iter().filter(|&&p| p != 0).count() as u64;
    }
    let empty = rasterize(&[], w, h).map_err(fail)?;
    ensure!(empty.pixels.iter().all(|&p| p == 0), "empty record is not background");
    ensure!(empty.histogram()[0] == u64::from(w * h), "empty histogram");
    Ok(format!("500 random stacks match the per-pixel oracle ({painted} labeled pixels)"))
}

// 6 ------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Step {
    Assess,
    Draft,
    Submit,
    StartReview,
    Approve,
    RequestChanges,
}

const STEPS: [Step; 6] = [
    Step::Assess,
    Step::Draft,
    Step::Submit,
    Step::StartReview,
    Step::Approve,
    Step::RequestChanges,
];

type State = (usize, Option<SegStatus>);

struct Gating {
    fx: Fixture,
    frame: FrameId,
    author: AnnotatorId,
}

impl Gating {
    /// One video with a single manual keyframe. The author holds both the
    /// segmenter and reviewer roles so self-review is actually attempted.
    fn new() -> Self {
        let fx = Fixture::new();
        let author = AnnotatorId::parse("sr").unwrap();
        fx.platform
            .upsert_annotator(
                &fx.admin,
                Annotator {
                    annotator_id: author.clone(),
                    display_name: "sr".into(),
                    roles: [Role::Segmenter, Role::Reviewer].into(),
                },
            )
            .unwrap();
        let v = fx.sampled_video("gate.mp4", (0, 10_000, None), 30_000);
        let frame = fx.platform.plan(&v).unwrap().manual_keyframes[0].frame_id();
        fx.platform
            .assign_raters(&fx.admin, &Target::Frame(frame.clone()), &fx.raters[..4])
            .unwrap();
        Gating { fx, frame, author }
    }

    fn record_id(&self) -> String {
        format!("seg-{}", self.frame)
    }

    fn state(&self) -> State {
        let n = self.fx.platform.assessments(&Target::Frame(self.frame.clone())).unwrap().len();
        let seg = self.fx.platform.segmentation(&self.frame).unwrap().map(|v| v.record.status);
        (n, seg)
    }

    fn apply(&self, step: Step) {
        let p = &self.fx.platform;
        let polys = vec![square("gb", SegClass::Gallbladder, 0, [2.0, 2.0], 20.0)];
        let q0 = self.fx.reviewer(0);
        // inapplicable steps fail and leave the state alone
        let _ = match step {
            Step::Assess => {
                let n = self.state().0;
                if n < 4 {
                    let _ = p.submit_assessment(&self.fx.rater(n), &Target::Frame(self.frame.clone()), bits(n), None);
                }
                return;
            }
            Step::Draft => p.save_segmentation_draft(&self.author, &self.frame, self.fx.submission(polys), None),
            Step::Submit => p.submit_segmentation(&self.author, &self.frame, self.fx.submission(polys), None),
            Step::StartReview => p.start_review(&q0, &self.record_id(), None),
            Step::Approve => p.review_segmentation(&q0, &self.record_id(), Verdict::Approve, None, None),
            Step::RequestChanges => {
                p.review_segmentation(&q0, &self.record_id(), Verdict::RequestChanges, Some("redo".into()), None)
            }
        };
    }

    /// Checks every gating rule in the current state.
    fn check(&self, state: State, probe: usize) -> Result<(), String> {
        let p = &self.fx.platform;
        let (n, seg) = state;
        let ready = n >= 3 && seg == Some(SegStatus::Approved);
        let out = self.fx.path().join(format!("strict-{probe}"));
        let strict = p.export_dataset(&self.fx.admin, &self.fx.project, &out, ExportOptions::default());
        match (&strict, ready) {
            (Ok(m), true) => ensure!(m.frames.iter().any(|f| f.frame_id == self.frame), "{state:?}: ready frame missing"),
            (Err(Error::GateBlocked(_)), false) => {}
            (other, _) => return Err(format!("{state:?}: strict export gave {:?}", other.as_ref().map(|m| m.frames.len()))),
        }
        let out = self.fx.path().join(format!("partial-{probe}"));
        let partial = p
            .export_dataset(&self.fx.admin, &self.fx.project, &out, ExportOptions { partial: true, materialize_frames: false })
            .map_err(fail)?;
        let exported = partial.frames.iter().any(|f| f.frame_id == self.frame);
        let omitted = partial.omitted.iter().any(|f| f.frame_id == self.frame);
        ensure!(exported == ready && omitted == !ready, "{state:?}: partial export leaked the frame");

        if seg.is_some() {
            let audit = p.audit_log(None, None).map_err(fail)?.len();
            for attempt in [
                p.review_segmentation(&self.author, &self.record_id(), Verdict::Approve, None, None),
                p.review_segmentation(&self.author, &self.record_id(), Verdict::RequestChanges, None, None),
                p.start_review(&self.author, &self.record_id(), None),
            ] {
                ensure!(matches!(attempt, Err(Error::SelfReview(_))), "{state:?}: self-review gave {attempt:?}");
            }
            let other = self.fx.segmenter(1);
            let polys = vec![square("x", SegClass::CysticDuct, 0, [1.0, 1.0], 5.0)];
            for attempt in [
                p.submit_segmentation(&other, &self.frame, self.fx.submission(polys.clone()), None),
                p.save_segmentation_draft(&other, &self.frame, self.fx.submission(polys), None),
            ] {
                ensure!(matches!(attempt, Err(Error::SecondAuthor { .. })), "{state:?}: second author gave {attempt:?}");
            }
            ensure!(p.audit_log(None, None).map_err(fail)?.len() == audit, "{state:?}: rejected attempt wrote");
        }
        Ok(())
    }
}

fn workflow_gating() -> Outcome {
    let mut witness: BTreeMap<State, Vec<Step>> = BTreeMap::new();
    let mut queue: VecDeque<Vec<Step>> = VecDeque::from([Vec::new()]);
    let mut probes = 0;
    let mut transitions = 0;
    while let Some(path) = queue.pop_front() {
        let g = Gating::new();
        for s in &path {
            g.apply(*s);
        }
        let state = g.state();
        if witness.contains_key(&state) {
            continue;
        }
        g.check(state, probes)?;
        probes += 1;
        witness.insert(state, path.clone());
        for step in STEPS {
            let mut next = path.clone();
            next.push(step);
            queue.push_back(next);
            transitions += 1;
        }
    }
    let statuses: BTreeSet<Option<SegStatus>> = witness.keys().map(|s| s.1).collect();
    ensure!(statuses.len() == 6, "only {} segmentation states reached", statuses.len());
    ensure!(witness.keys().any(|s| s.0 == 4), "4 assessments never reached");
    Ok(format!("{} reachable states, {transitions} transitions explored", witness.len()))
}

// 7 ------------------------------------------------------------------------

fn synthetic_project() -> Fixture {
    let fx = Fixture::new();
    fx.complete_video("a.mp4", (0, 120_000, Some(30_000)), 30_000);
    fx.complete_video("b.mp4", (10_000, 100_000, None), 30_000);
    let c = fx.screened_video("c.mp4", 600_000);
    fx.platform
        .screen_video(&fx.screener, &c, [ExclusionFlag::ConversionToOpen].into(), None)
        .unwrap();
    let video_target = Target::Video(fx.platform.videos(None).unwrap()[0].video_id.clone());
    fx.assess(&video_target, &[[true, true, false], [true, true, true], [false, true, true]]);
    fx
}

fn files_under(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn export_round_trip() -> Outcome {
    let fx = synthetic_project();
    let export = |fx: &Fixture, name: &str| {
        let out = fx.path().join(name);
        let m = fx.platform.export_dataset(&fx.admin, &fx.project, &out, ExportOptions::default());
        m.map(|m| (out, m))
    };
    let (out1, m1) = export(&fx, "one").map_err(fail)?;
    let (out2, m2) = export(&fx, "two").map_err(fail)?;
    ensure!(m1.export_checksum == m2.export_checksum, "checksums differ");
    ensure!(files_under(&out1) == files_under(&out2), "archive bytes differ");
    let rebuilt = synthetic_project();
    let (out3, m3) = export(&rebuilt, "three").map_err(fail)?;
    ensure!(m3.export_checksum == m1.export_checksum, "rebuilt project exports differently");
    for out in [&out1, &out2, &out3] {
        let v = validate_archive(out).map_err(fail)?;
        ensure!(v.is_empty(), "fresh export has violations: {v:?}");
    }
    ensure!(m1.videos.iter().any(|v| v.excluded && v.status == VideoStatus::Excluded), "excluded video not listed");

    let codes = |out: &Path| -> Result<BTreeSet<ViolationCode>, String> {
        Ok(validate_archive(out).map_err(fail)?.into_iter().map(|v| v.code).collect())
    };
    let masked = m1.frames.iter().find(|f| f.mask_file.is_some()).unwrap();

    let (bad_index, _) = export(&fx, "fault-index").map_err(fail)?;
    let (w, h) = (masked.width.unwrap(), masked.height.unwrap());
    let mut pixels = vec![1u8; (w * h) as usize];
    pixels[(w * h / 2) as usize] = 11;
    let mask = encode_indexed(w, h, &pixels, 16).map_err(fail)?;
    fs::write(bad_index.join(masked.mask_file.as_ref().unwrap()), mask).map_err(fail)?;
    ensure!(codes(&bad_index)?.contains(&ViolationCode::ClassIndexOutOfRange), "bad class index not detected");

    let (dangling, _) = export(&fx, "fault-dangling").map_err(fail)?;
    fs::remove_file(dangling.join(masked.mask_file.as_ref().unwrap())).map_err(fail)?;
    ensure!(codes(&dangling)?.contains(&ViolationCode::DanglingMask), "dangling mask not detected");

    let (missing, _) = export(&fx, "fault-rater").map_err(fail)?;
    let manifest_path = missing.join("manifest.json");
    let mut manifest: Value = serde_json::from_slice(&fs::read(&manifest_path).map_err(fail)?).map_err(fail)?;
    let frame = manifest["frames"]
        .as_array_mut()
        .unwrap()
        .iter_mut()
        .find(|f| f["origin"] == "manual_keyframe")
        .unwrap();
    frame["cvs"]["raw"].as_array_mut().unwrap().pop();
    fs::write(&manifest_path, serde_json::to_vec_pretty(&manifest).unwrap()).map_err(fail)?;
    ensure!(codes(&missing)?.contains(&ViolationCode::MissingRaters), "missing rater not detected");

    Ok(format!(
        "checksum {} stable across 3 exports, {} frames, 0 violations; 3/3 faults detected",
        &m1.export_checksum[..12],
        m1.frames.len()
    ))
}

// 8 ------------------------------------------------------------------------

fn service_integrity() -> Outcome {
    let a = concurrent_writers()?;
    let b = kill_and_restart()?;
    let c = error_mapping()?;
    Ok(format!("{a}; {b}; {c}"))
}

fn concurrent_writers() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(fail)?;
    let store = Arc::new(RedbStore::open(dir.path().join("race.redb")).map_err(fail)?);
    let rounds = 50;
    for round in 0..rounds {
        let version = store.get_raw("annotators", "racer").map_err(fail)?.map_or(0, |r| r.version);
        let barrier = Arc::new(Barrier::new(2));
        let handles: Vec<_> = (0..2)
            .map(|w| {
                let (store, barrier) = (store.clone(), barrier.clone());
                std::thread::spawn(move || {
                    let mut tx = Transaction::new(format!("w{w}"), "race", Utc::now());
                    tx.put(
                        &Annotator {
                            annotator_id: AnnotatorId::parse("racer").unwrap(),
                            display_name: format!("round {round} writer {w}"),
                            roles: [Role::CvsRater].into(),
                        },
                        version,
                    );
                    barrier.wait();
                    store.commit(tx).is_ok()
                })
            })
            .collect();
        let wins = handles.into_iter().map(|h| h.join().unwrap()).filter(|ok| *ok).count();
        ensure!(wins == 1, "store round {round}: {wins} writers succeeded");
    }
    let audit = store.audit_log(Some("annotators"), Some("racer")).map_err(fail)?;
    ensure!(audit.len() == rounds, "audit has {} entries for {rounds} accepted writes", audit.len());

    // the same race over HTTP on the region of interest
    let fx = Fixture::with_store(Arc::new(RedbStore::open(dir.path().join("api.redb")).map_err(fail)?));
    let v = fx.screened_video("race.mp4", 600_000);
    let server = Server::for_fixture(&fx);
    let screener = server.client(&fx.screener);
    let path = format!("/videos/{v}/roi");
    let first = screener.put(&path, &json!({"t_start_ms": 0, "t_end_ms": 1_000}));
    ensure!(first.status == 200, "initial roi: {}", first.status);
    let http_rounds = 20;
    for round in 0..http_rounds {
        let version = screener.get(&path).json()["version"].as_u64().unwrap();
        let barrier = Arc::new(Barrier::new(2));
        let handles: Vec<_> = (0..2u64)
            .map(|w| {
                let (client, barrier, path) = (screener.clone(), barrier.clone(), path.clone());
                std::thread::spawn(move || {
                    let body = json!({"t_start_ms": w, "t_end_ms": 2_000 + round, "expected_version": version});
                    barrier.wait();
                    client.put(&path, &body).status
                })
            })
            .collect();
        let mut statuses: Vec<u16> = handles.into_iter().map(|h| h.join().unwrap()).collect();
        statuses.sort();
        ensure!(statuses == [200, 409], "http round {round}: statuses {statuses:?}");
    }
    Ok(format!("{rounds} store races and {http_rounds} HTTP races each admitted exactly one write"))
}

fn read_listen_line(child: &mut std::process::Child) -> Result<String, String> {
    let stdout = child.stdout.take().ok_or("no stdout")?;
    let mut line = String::new();
    BufReader::new(stdout).read_line(&mut line).map_err(fail)?;
    line.trim()
        .strip_prefix("listening on ")
        .map(|addr| format!("http://{addr}"))
        .ok_or_else(|| format!("unexpected server output {line:?}"))
}

fn spawn_server(store: &Path, tokens: &Path) -> Result<(std::process::Child, String), String> {
    let mut child = Command::new(env!("CARGO_BIN_EXE_cvsa"))
        .args(["--store", store.to_str().unwrap(), "serve", "--port", "0", "--tokens", tokens.to_str().unwrap()])
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .map_err(fail)?;
    let base = read_listen_line(&mut child)?;
    Ok((child, base))
}

fn kill_and_restart() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(fail)?;
    let store = dir.path().join("crash.redb");
    let tokens = dir.path().join("tokens.json");
    fs::write(&tokens, r#"{"tok-admin": "admin"}"#).map_err(fail)?;
    let init = Command::new(env!("CARGO_BIN_EXE_cvsa"))
        .args(["--store", store.to_str().unwrap(), "init", "--admin", "admin"])
        .output()
        .map_err(fail)?;
    ensure!(init.status.success(), "init failed: {}", String::from_utf8_lossy(&init.stderr));

    let mut all_acked: Vec<String> = Vec::new();
    let mut killed_at = Vec::new();
    for (round, kill_after) in [17usize, 50, 83].into_iter().enumerate() {
        let (mut child, base) = spawn_server(&store, &tokens)?;
        let acked = Arc::new(Mutex::new(Vec::<String>::new()));
        let writer = {
            let acked = acked.clone();
            let client = Http::new(&base, Some("tok-admin".into()));
            std::thread::spawn(move || {
                for i in 0..100 {
                    let id = format!("w{round}-{i:03}");
                    let body = json!({"annotator_id": id, "display_name": id, "roles": ["cvs_rater"]});
                    match client.try_send("POST", "/annotators", Some(&body)) {
                        Ok(r) if r.status == 200 => acked.lock().unwrap().push(id),
                        _ => break,
                    }
                }
            })
        };
        let deadline = Instant::now() + Duration::from_secs(60);
        while acked.lock().unwrap().len() < kill_after {
            ensure!(Instant::now() < deadline, "round {round}: writes stalled");
            std::thread::sleep(Duration::from_micros(200));
        }
        child.kill().map_err(fail)?;
        child.wait().map_err(fail)?;
        writer.join().unwrap();
        let acked = acked.lock().unwrap().clone();
        ensure!(acked.len() < 100, "round {round}: batch finished before the kill");
        killed_at.push(acked.len());
        all_acked.extend(acked);

        // restart and read everything back over the API
        let (mut child, base) = spawn_server(&store, &tokens)?;
        let listed = Http::new(&base, Some("tok-admin".into())).get("/annotators").json();
        child.kill().map_err(fail)?;
        child.wait().map_err(fail)?;
        let present: BTreeSet<&str> = listed
            .as_array()
            .ok_or("annotator list")?
            .iter()
            .filter_map(|a| a["annotator_id"].as_str())
            .collect();
        let lost: Vec<&String> = all_acked.iter().filter(|id| !present.contains(id.as_str())).collect();
        ensure!(lost.is_empty(), "round {round}: acknowledged writes lost: {lost:?}");
    }

    // every surviving write appears exactly once in the audit log
    let reopened = RedbStore::open(&store).map_err(fail)?;
    let audit = reopened.audit_log(Some("annotators"), None).map_err(fail)?;
    let records = reopened.scan_raw("annotators").map_err(fail)?;
    ensure!(audit.len() == records.len(), "{} audit entries for {} records", audit.len(), records.len());
    Ok(format!(
        "server killed after {killed_at:?} acks; all {} acknowledged writes survived restart",
        all_acked.len()
    ))
}

fn error_mapping() -> Result<String, String> {
    // every error the modules can raise, other than storage and I/O,
    // must map to a 4xx
    let vid = VideoId::parse("vid-x").unwrap();
    let fid = FrameId::parse("vid-x-t000000000").unwrap();
    let who = AnnotatorId::parse("someone").unwrap();
    let target = Target::Frame(fid.clone());
    let gate = ExportGateReport {
        project_id: ProjectId::parse("p").unwrap(),
        frames: vec![],
        blocking: vec![],
        unsampled_videos: vec![],
    };
    let image = FrameImage {
        frame_id: fid.clone(),
        video_id: vid.clone(),
        timestamp_ms: 0,
        width: 1,
        height: 1,
        pixel_data_ref: String::new(),
    };
    let validation = vec![
        Error::not_found("video", &vid),
        Error::Invalid("x".into()),
        Error::SourceUnreadable { uri: "u".into(), source: std::io::Error::other("x") },
        Error::DuplicateVideo { checksum: "c".into(), existing: vid.clone() },
        Error::VideoState { video: vid.clone(), status: VideoStatus::Registered, action: "x" },
        Error::ExcludedVideo(vid.clone()),
        Error::AlreadySampled(vid.clone()),
        Error::NotSampled(vid.clone()),
        Error::RoiOrdering("x".into()),
        Error::TimestampOutOfRange { timestamp_ms: 2, duration_ms: 1 },
        Error::PlanInUse { video: vid.clone(), annotations: 1 },
        Error::InsufficientRaters { required: 3, got: 2 },
        Error::InsufficientAssessments { target: target.clone(), required: 3, got: 2 },
        Error::NotAssigned { rater: who.clone(), target: target.clone() },
        Error::AutoNegativeTarget(fid.clone()),
        Error::ManualKeyframe(fid.clone()),
        Error::SecondAuthor { frame: fid.clone(), author: who.clone() },
        Error::SelfReview(who.clone()),
        Error::SegmentationState { record: "r".into(), status: "approved".into(), action: "x" },
        Error::InvalidPolygon { polygon: "p".into(), reason: "x".into() },
        Error::DimensionMismatch { want_width: 1, want_height: 1, got_width: 2, got_height: 2 },
        Error::Forbidden { actor: who.clone(), required: "admin".into() },
        Error::UnknownActor("x".into()),
        Error::VersionConflict { collection: "c".into(), key: "k".into(), expected: 1, actual: 2 },
        Error::NoSharedTargets,
        Error::Kappa(KappaError::Empty),
        Error::BatchTooLarge { size: 2, pool: 1 },
        Error::GateBlocked(Box::new(gate)),
        Error::OutputNotEmpty(PathBuf::from("x")),
        Error::ArchiveUnreadable { path: PathBuf::from("x"), reason: "x".into() },
    ];
    let infrastructure = [
        Error::Decode(DecodeError::Unconfigured),
        Error::Materialize { decoded: vec![image], failed: vec![] },
        Error::Storage("x".into()),
        Error::Io(std::io::Error::other("x")),
    ];
    let mut codes = BTreeSet::new();
    for e in &validation {
        let (status, code) = classify(e);
        ensure!(status.is_client_error(), "{e:?} maps to {status}");
        ensure!(codes.insert(code), "error code {code} is reused");
    }
    for e in &infrastructure {
        ensure!(codes.insert(classify(e).1), "error code reused");
    }

    // and the same through live requests
    let fx = Fixture::new();
    let done = fx.complete_video("ok.mp4", (0, 60_000, Some(30_000)), 30_000);
    let v = fx.sampled_video("open.mp4", (0, 60_000, None), 30_000);
    let fresh = fx.video("fresh.mp4", 600_000);
    let plan = fx.platform.plan(&v).map_err(fail)?;
    fx.platform.materialize_plan(&fx.screener, &v).map_err(fail)?;
    let frame = plan.manual_keyframes[0].frame_id();
    let auto_frame = fx.platform.plan(&done).map_err(fail)?.auto_negative[0].frame_id();
    fx.platform
        .assign_raters(&fx.admin, &Target::Frame(frame.clone()), &fx.raters[..3])
        .map_err(fail)?;
    let seg = fx
        .platform
        .submit_segmentation(&fx.segmenter(0), &frame, fx.submission(vec![square("gb", SegClass::Gallbladder, 0, [1.0, 1.0], 9.0)]), None)
        .map_err(fail)?;
    let server = Server::for_fixture(&fx);
    let admin = server.client(&fx.admin);
    let screener = server.client(&fx.screener);
    let r0 = server.client(&fx.rater(0));
    let r4 = server.client(&fx.rater(4));
    let s0 = server.client(&fx.segmenter(0));
    let s1 = server.client(&fx.segmenter(1));
    let q0 = server.client(&fx.reviewer(0));
    let anon = Http::new(&server.base, None);
    let stranger = Http::new(&server.base, Some("nope".into()));
    let polygon = |x: f64| json!({"polygons": [{"polygon_id": "a", "seg_class": "Gallbladder", "vertices": [[1.0, 1.0], [x, 1.0], [x, 9.0]], "draw_order": 0}]});

    let scenarios: Vec<(&str, u16, common::Reply)> = vec![
        ("no token", 401, anon.get("/me")),
        ("unknown token", 401, stranger.get("/me")),
        ("unknown frame", 404, r0.get("/frames/vid-none-t000000000")),
        ("malformed id", 422, r0.get("/frames/bad%20id")),
        ("unassigned rater", 403, r4.post(&format!("/frames/{frame}/cvs"), &json!({"c1": true, "c2": true, "c3": true}))),
        ("partial criteria", 422, r0.post(&format!("/frames/{frame}/cvs"), &json!({"c1": true, "c2": true}))),
        ("rater role on video", 403, r0.post("/videos", &json!({"project_id": "default", "source_uri": "/x", "duration_ms": 1, "fps": "25"}))),
        ("unreadable source", 422, screener.post("/videos", &json!({"project_id": "default", "source_uri": "/no/such/file", "duration_ms": 1, "fps": "25"}))),
        ("bad fps", 422, screener.post("/videos", &json!({"project_id": "default", "source_uri": "/x", "duration_ms": 1, "fps": "0"}))),
        ("roi ordering", 422, screener.put(&format!("/videos/{fresh}/roi"), &json!({"t_start_ms": 5, "t_end_ms": 1}))),
        ("roi before screening", 409, screener.put(&format!("/videos/{fresh}/roi"), &json!({"t_start_ms": 1, "t_end_ms": 5}))),
        ("roi after sampling", 409, screener.put(&format!("/videos/{v}/roi"), &json!({"t_start_ms": 1, "t_end_ms": 5}))),
        ("stale screening", 409, screener.post(&format!("/videos/{fresh}/screening"), &json!({"flags": [], "expected_version": 7}))),
        ("unknown exclusion flag", 422, screener.post(&format!("/videos/{fresh}/screening"), &json!({"flags": ["bleeding"]}))),
        ("sampling without roi", 404, screener.post_empty(&format!("/videos/{fresh}/sampling"))),
        ("resample", 409, screener.post(&format!("/videos/{v}/sampling"), &json!({"interval_ms": 1000}))),
        ("stream past end", 422, r0.get(&format!("/videos/{v}/stream?t=999999999"))),
        ("stream without decoder pixels", 502, r0.get(&format!("/videos/{fresh}/stream?t=1000&format=png"))),
        ("two raters", 422, admin.post("/assignments", &json!({"target": format!("frame:{frame}"), "raters": ["r0", "r1"]}))),
        ("assign auto-negative", 422, admin.post("/assignments", &json!({"target": format!("frame:{auto_frame}"), "raters": ["r0", "r1", "r2"]}))),
        ("consensus short", 422, q0.get(&format!("/frames/{frame}/consensus"))),
        ("second author", 409, s1.post(&format!("/frames/{frame}/segmentation"), &polygon(9.0))),
        ("vertex outside", 422, s1.post(&format!("/frames/{}/segmentation", plan.manual_keyframes[1].frame_id()), &polygon(900.0))),
        ("dimension mismatch", 422, s0.post(&format!("/frames/{}/segmentation", plan.manual_keyframes[1].frame_id()), &json!({"polygons": [], "image_width": 7, "image_height": 7, "draft": true}))),
        ("self review", 403, s0.post(&format!("/segmentations/{}/review", seg.record_id), &json!({"verdict": "approve"}))),
        ("unknown verdict", 422, q0.post(&format!("/segmentations/{}/review", seg.record_id), &json!({"verdict": "maybe"}))),
        ("segmenter reviewing", 403, s1.post(&format!("/segmentations/{}/review", seg.record_id), &json!({"verdict": "approve"}))),
        ("kappa scope", 422, q0.get("/qa/kappa?scope=site&id=default&criterion=c1")),
        ("kappa criterion", 422, q0.get("/qa/kappa?scope=project&id=default&criterion=c9")),
        ("batch too large", 422, q0.post("/qa/batches", &json!({"kind": "assessments", "size": 1000, "seed": 1}))),
        ("gate blocked", 422, admin.post("/projects/default/export", &json!({"name": "blocked"}))),
        ("export escape", 422, admin.post("/projects/default/export", &json!({"name": "../up", "partial": true}))),
        ("audit by rater", 403, r0.get("/audit")),
        ("missing body", 415, admin.try_send("POST", "/assignments", None).map_err(fail)?),
        ("malformed json", 400, admin.post_raw("/assignments", b"{\"target\": ")),
    ];
    let mut mismatched = Vec::new();
    for (name, want, reply) in &scenarios {
        ensure!(reply.status != 500, "{name}: 500 {}", String::from_utf8_lossy(&reply.bytes));
        if reply.status != *want {
            mismatched.push(format!("{name}: {} (wanted {want}) {}", reply.status, String::from_utf8_lossy(&reply.bytes)));
        }
    }
    ensure!(mismatched.is_empty(), "{}", mismatched.join("; "));
    Ok(format!(
        "{} error variants map to 4xx, {} live error scenarios returned their mapped status",
        validation.len(),
        scenarios.len()
    ))
}
