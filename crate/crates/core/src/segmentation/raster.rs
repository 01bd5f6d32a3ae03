use serde::{Deserialize, Serialize};

use super::geometry::crossing;
use super::{validate_polygons, PolygonAnnotation, SegClass};
use crate::error::Result;

/// Single-channel class-index raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexMask {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
}

impl IndexMask {
    pub fn background(width: u32, height: u32) -> Self {
        IndexMask {
            width,
            height,
            pixels: vec![SegClass::Background.index(); width as usize * height as usize],
        }
    }

    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.pixels[y as usize * self.width as usize + x as usize]
    }

    /// Pixel count per class index. Values outside the class table are
    /// not counted, so a valid mask sums to `width * height`.
    pub fn histogram(&self) -> [u64; SegClass::COUNT] {
        let mut h = [0u64; SegClass::COUNT];
        for &p in &self.pixels {
            if let Some(slot) = h.get_mut(p as usize) {
                *slot += 1;
            }
        }
        h
    }

    pub fn classes_present(&self) -> Vec<SegClass> {
        self.histogram()
            .iter()
            .enumerate()
            .filter(|(_, &n)| n > 0)
            .filter_map(|(i, _)| SegClass::from_index(i as u8))
            .collect()
    }
}

/// Paints `polygons` onto a background mask.
///
/// Polygons are filled in ascending `draw_order` (list position breaks
/// ties), each one overwriting what is below it. Holes paint background.
/// A pixel belongs to a polygon when its centre is inside under the
/// even-odd rule.
pub fn rasterize(polygons: &[PolygonAnnotation], width: u32, height: u32) -> Result<IndexMask> {
    validate_polygons(polygons, width, height)?;
    let mut mask = IndexMask::background(width, height);
    let mut order: Vec<&PolygonAnnotation> = polygons.iter().collect();
    order.sort_by_key(|p| p.draw_order);
    let mut xs: Vec<f64> = Vec::new();
    for poly in order {
        let value = poly.painted_index();
        let ring = &poly.vertices;
        let n = ring.len();
        let (lo, hi) = ring.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            (lo.min(p[1]), hi.max(p[1]))
        });
        let first_row = (lo - 0.5).floor().max(0.0) as u32;
        let last_row = ((hi - 0.5).ceil().max(0.0) as u32).min(height.saturating_sub(1));
        for row in first_row..=last_row {
            if row >= height {
                break;
            }
            let py = row as f64 + 0.5;
            xs.clear();
            xs.extend((0..n).filter_map(|i| crossing(ring[i], ring[(i + 1) % n], py)));
            if xs.is_empty() {
                continue;
            }
            xs.sort_by(f64::total_cmp);
            let line = &mut mask.pixels[row as usize * width as usize..][..width as usize];
            // crossings at or left of the centre are passed; the rest lie to the right
            let mut passed = 0;
            for (col, px) in line.iter_mut().enumerate() {
                let cx = col as f64 + 0.5;
                while passed < xs.len() && xs[passed] <= cx {
                    passed += 1;
                }
                if passed == xs.len() {
                    break;
                }
                if (xs.len() - passed) % 2 == 1 {
                    *px = value;
                }
            }
        }
    }
    Ok(mask)
}
