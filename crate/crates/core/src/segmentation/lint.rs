//! Advisory checks on a segmentation. Findings are shown to reviewers and
//! never block a submission or review.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::geometry::{contains, convex_hull, Point};
use super::raster::rasterize;
use super::{SegClass, SegmentationRecord};
use crate::cvs::ConsensusLabel;
use crate::ids::FrameId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LintCode {
    /// The frame contains Ignore polygons (unidentified anatomical variant).
    IgnoreClassPresent,
    /// A class drawn on both neighbouring keyframes is missing here.
    TemporalGap,
    /// C2 was judged achieved but nothing is labeled inside the triangle.
    TriangleUnlabeled,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LintFinding {
    pub code: LintCode,
    pub frame_id: FrameId,
    pub message: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub classes: Vec<SegClass>,
}

fn drawn_classes(record: &SegmentationRecord) -> BTreeSet<SegClass> {
    record
        .polygons
        .iter()
        .filter(|p| !p.is_hole)
        .map(|p| p.seg_class)
        .collect()
}

/// Runs every lint. `previous` and `next` are the records of the adjacent
/// manual keyframes in plan order; `consensus` is the frame's CVS label.
pub fn lint_segmentation(
    record: &SegmentationRecord,
    previous: Option<&SegmentationRecord>,
    next: Option<&SegmentationRecord>,
    consensus: Option<&ConsensusLabel>,
) -> Vec<LintFinding> {
    let mut out = Vec::new();
    let here = drawn_classes(record);

    let ignore = record
        .polygons
        .iter()
        .filter(|p| p.seg_class == SegClass::Ignore && !p.is_hole)
        .count();
    if ignore > 0 {
        out.push(LintFinding {
            code: LintCode::IgnoreClassPresent,
            frame_id: record.frame_id.clone(),
            message: format!("{ignore} Ignore polygon(s); check the anatomical variant"),
            classes: vec![SegClass::Ignore],
        });
    }

    if let (Some(prev), Some(next)) = (previous, next) {
        let missing: Vec<SegClass> = drawn_classes(prev)
            .intersection(&drawn_classes(next))
            .filter(|c| !here.contains(c))
            .copied()
            .collect();
        if !missing.is_empty() {
            let names: Vec<&str> = missing.iter().map(|c| c.name()).collect();
            out.push(LintFinding {
                code: LintCode::TemporalGap,
                frame_id: record.frame_id.clone(),
                message: format!(
                    "{} drawn on {} and {} but not here",
                    names.join(", "),
                    prev.frame_id,
                    next.frame_id
                ),
                classes: missing,
            });
        }
    }

    if consensus.is_some_and(|c| c.c2.consensus)
        && !here.contains(&SegClass::HepatocysticTriangleDissection)
        && !labeled_inside_triangle(record)
    {
        out.push(LintFinding {
            code: LintCode::TriangleUnlabeled,
            frame_id: record.frame_id.clone(),
            message: "C2 consensus is achieved but no class is labeled in the hepatocystic triangle".into(),
            classes: vec![SegClass::HepatocysticTriangleDissection],
        });
    }
    out
}

/// Approximates the triangle by the convex hull of the duct and artery
/// polygons and looks for any other labeled pixel inside it.
fn labeled_inside_triangle(record: &SegmentationRecord) -> bool {
    let corners: Vec<Point> = record
        .polygons
        .iter()
        .filter(|p| !p.is_hole && matches!(p.seg_class, SegClass::CysticDuct | SegClass::CysticArtery))
        .flat_map(|p| p.vertices.iter().copied())
        .collect();
    let hull = convex_hull(&corners);
    if hull.len() < 3 {
        return false;
    }
    let Ok(mask) = rasterize(&record.polygons, record.image_width, record.image_height) else {
        return false;
    };
    (0..mask.height).any(|y| {
        (0..mask.width).any(|x| {
            let v = mask.get(x, y);
            v != SegClass::Background.index()
                && v != SegClass::CysticDuct.index()
                && v != SegClass::CysticArtery.index()
                && contains(&hull, [x as f64 + 0.5, y as f64 + 0.5])
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cvs::{CriterionVotes, LabelSource};
    use crate::ids::Target;
    use crate::segmentation::{PolygonAnnotation, SegStatus};
    use chrono::Utc;

    fn square(class: SegClass, x: f64, y: f64, s: f64) -> PolygonAnnotation {
        PolygonAnnotation {
            polygon_id: format!("{}-{x}-{y}", class.name()),
            seg_class: class,
            vertices: vec![[x, y], [x + s, y], [x + s, y + s], [x, y + s]],
            draw_order: 0,
            is_hole: false,
        }
    }

    fn record(ts: u64, polygons: Vec<PolygonAnnotation>) -> SegmentationRecord {
        let frame_id = FrameId::parse(&format!("vid-x-t{ts:09}")).unwrap();
        SegmentationRecord {
            record_id: format!("seg-{frame_id}"),
            frame_id,
            author_id: "s0".parse().unwrap(),
            polygons,
            status: SegStatus::Submitted,
            reviewer_id: None,
            review_notes: None,
            image_width: 40,
            image_height: 40,
            version: 1,
            updated_at: Utc::now(),
        }
    }

    fn c2_yes(frame: &FrameId) -> ConsensusLabel {
        let yes = CriterionVotes { votes_yes: 3, votes_no: 0, consensus: true };
        ConsensusLabel {
            target: Target::Frame(frame.clone()),
            c1: yes,
            c2: yes,
            c3: yes,
            cvs_consensus: true,
            rater_count: 3,
            source: LabelSource::Voted,
        }
    }

    #[test]
    fn ignore_polygons_are_flagged() {
        let r = record(0, vec![square(SegClass::Ignore, 1.0, 1.0, 5.0)]);
        let f = lint_segmentation(&r, None, None, None);
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].code, LintCode::IgnoreClassPresent);
    }

    #[test]
    fn temporal_gap_needs_both_neighbours() {
        let gb = || square(SegClass::Gallbladder, 0.0, 0.0, 10.0);
        let prev = record(0, vec![gb()]);
        let next = record(60_000, vec![gb()]);
        let here = record(30_000, vec![square(SegClass::CysticDuct, 0.0, 0.0, 4.0)]);
        let f = lint_segmentation(&here, Some(&prev), Some(&next), None);
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].code, LintCode::TemporalGap);
        assert_eq!(f[0].classes, vec![SegClass::Gallbladder]);
        assert!(lint_segmentation(&here, Some(&prev), None, None).is_empty());
        let next_without = record(60_000, vec![]);
        assert!(lint_segmentation(&here, Some(&prev), Some(&next_without), None).is_empty());
    }

    #[test]
    fn triangle_advisory_only_when_c2_achieved_and_nothing_inside() {
        let duct = square(SegClass::CysticDuct, 0.0, 0.0, 4.0);
        let artery = square(SegClass::CysticArtery, 20.0, 20.0, 4.0);
        let bare = record(0, vec![duct.clone(), artery.clone()]);
        let label = c2_yes(&bare.frame_id);
        let f = lint_segmentation(&bare, None, None, Some(&label));
        assert_eq!(f.iter().map(|f| f.code).collect::<Vec<_>>(), vec![LintCode::TriangleUnlabeled]);
        assert!(lint_segmentation(&bare, None, None, None).is_empty());

        let mut plate = square(SegClass::CysticPlate, 8.0, 8.0, 6.0);
        plate.draw_order = 1;
        let through_window = record(0, vec![duct.clone(), artery.clone(), plate]);
        assert!(lint_segmentation(&through_window, None, None, Some(&label)).is_empty());

        let dissected = record(0, vec![duct, artery, square(SegClass::HepatocysticTriangleDissection, 30.0, 0.0, 5.0)]);
        assert!(lint_segmentation(&dissected, None, None, Some(&label)).is_empty());
    }
}
