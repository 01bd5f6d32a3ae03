//! Planar helpers shared by validation, rasterization and lints.
//!
//! Points are `[x, y]` in pixel coordinates with the origin at the top-left
//! image corner; pixel `(i, j)` is sampled at its centre `(i + 0.5, j + 0.5)`.

pub type Point = [f64; 2];

/// Twice the signed area (shoelace) of the closed ring.
pub fn doubled_area(ring: &[Point]) -> f64 {
    let n = ring.len();
    (0..n)
        .map(|i| {
            let [x1, y1] = ring[i];
            let [x2, y2] = ring[(i + 1) % n];
            x1 * y2 - x2 * y1
        })
        .sum()
}

/// Where edge `a -> b` crosses the horizontal line `y = py`, if it does.
///
/// Half-open in y so a vertex lying exactly on the line is counted once.
/// Both the scanline filler and [`contains`] go through this function,
/// which keeps them in exact agreement.
#[inline]
pub fn crossing(a: Point, b: Point, py: f64) -> Option<f64> {
    let ([x1, y1], [x2, y2]) = (a, b);
    if (y1 > py) != (y2 > py) {
        Some(x1 + (py - y1) * (x2 - x1) / (y2 - y1))
    } else {
        None
    }
}

/// Even-odd point-in-polygon test (ray cast towards +x).
pub fn contains(ring: &[Point], p: Point) -> bool {
    let n = ring.len();
    let mut inside = false;
    for i in 0..n {
        if let Some(x) = crossing(ring[i], ring[(i + 1) % n], p[1]) {
            if p[0] < x {
                inside = !inside;
            }
        }
    }
    inside
}

/// Convex hull (monotone chain), counter-clockwise, without collinear points.
pub fn convex_hull(points: &[Point]) -> Vec<Point> {
    let mut pts: Vec<Point> = points.iter().copied().filter(|p| p.iter().all(|c| c.is_finite())).collect();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    fn cross(o: Point, a: Point, b: Point) -> f64 {
        (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
    }
    let mut hull: Vec<Point> = Vec::with_capacity(pts.len() * 2);
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Point>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}
