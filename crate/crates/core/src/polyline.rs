//! Ramer–Douglas–Peucker simplification and smooth-curvature division.

use crate::error::{Error, Result};
use crate::geom::Point;

/// Vertices kept by simplification, with the index of each vertex in the
/// contour it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyline {
    pub vertices: Vec<Point>,
    pub source: Vec<usize>,
}

/// A run of polyline vertices without sharp turns or inflexions.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothCurve {
    pub vertices: Vec<Point>,
    pub source: Vec<usize>,
}

impl SmoothCurve {
    /// The dense contour points spanned by this curve.
    pub fn support<'a>(&self, contour: &'a [Point]) -> &'a [Point] {
        match (self.source.first(), self.source.last()) {
            (Some(&a), Some(&b)) if a <= b && b < contour.len() => &contour[a..=b],
            _ => &[],
        }
    }
}

/// Perpendicular distance from `pt` to the line through `a` and `b`: the
/// implicit line residual divided by the segment length.
pub fn point_line_deviation(pt: Point, a: Point, b: Point) -> Result<f64> {
    let len = a.dist(b);
    if len == 0.0 {
        return Err(Error::DegenerateSegment);
    }
    let num = pt.x * (a.y - b.y) + pt.y * (b.x - a.x) + b.y * a.x - a.y * b.x;
    Ok(num.abs() / len)
}

/// Deviation used inside the split loop: the distance to the chord as a
/// segment. It equals the perpendicular deviation wherever the foot of the
/// perpendicular falls on the chord, and the endpoint distance elsewhere, so
/// a point that doubles back past an endpoint still forces a split.
/// Coincident endpoints (a closed loop) give the distance from the shared
/// point.
fn deviation_or_radius(pt: Point, a: Point, b: Point) -> f64 {
    let d = b.sub(a);
    let len2 = d.dot(d);
    if len2 == 0.0 {
        return pt.dist(a);
    }
    let t = pt.sub(a).dot(d) / len2;
    if t <= 0.0 {
        pt.dist(a)
    } else if t >= 1.0 {
        pt.dist(b)
    } else {
        point_line_deviation(pt, a, b).unwrap_or_else(|_| pt.dist(a))
    }
}

/// Splits recursively at the point of maximum deviation until every point
/// lies within `tol` of its chord segment.
pub fn rdp_simplify(points: &[Point], tol: f64) -> Result<Polyline> {
    if points.len() < 2 {
        return Err(Error::TooFewPoints {
            needed: 2,
            got: points.len(),
        });
    }
    let n = points.len();
    let mut keep = vec![false; n];
    keep[0] = true;
    keep[n - 1] = true;
    let mut stack = vec![(0, n - 1)];
    while let Some((lo, hi)) = stack.pop() {
        if hi <= lo + 1 {
            continue;
        }
        let (a, b) = (points[lo], points[hi]);
        let (mut worst, mut worst_d) = (lo, -1.0);
        for (i, &p) in points.iter().enumerate().take(hi).skip(lo + 1) {
            let d = deviation_or_radius(p, a, b);
            if d > worst_d {
                worst = i;
                worst_d = d;
            }
        }
        if worst_d > tol {
            keep[worst] = true;
            stack.push((lo, worst));
            stack.push((worst, hi));
        }
    }
    let source: Vec<usize> = (0..n).filter(|&i| keep[i]).collect();
    Ok(Polyline {
        vertices: source.iter().map(|&i| points[i]).collect(),
        source,
    })
}

/// Signed exterior angle at vertex `i`, in radians. Positive turns are
/// clockwise on screen (y down).
pub fn turn_angle(prev: Point, at: Point, next: Point) -> f64 {
    let d1 = at.sub(prev);
    let d2 = next.sub(at);
    d1.cross(d2).atan2(d1.dot(d2))
}

/// Cuts the polyline at sharp turns (strictly above `sharp_turn_deg`) and at
/// inflexions, where a vertex turns the opposite way from the last non-zero
/// turn before it. Pieces share their cut vertex.
pub fn split_smooth(poly: &Polyline, sharp_turn_deg: f64) -> Vec<SmoothCurve> {
    let v = &poly.vertices;
    if v.len() < 3 {
        return vec![SmoothCurve {
            vertices: v.clone(),
            source: poly.source.clone(),
        }];
    }
    let limit = sharp_turn_deg.to_radians();
    let mut cuts = Vec::new();
    let mut last_sign = 0.0f64;
    for i in 1..v.len() - 1 {
        let turn = turn_angle(v[i - 1], v[i], v[i + 1]);
        let sign = if turn.abs() < 1e-12 { 0.0 } else { turn.signum() };
        let sharp = turn.abs() > limit;
        let inflexion = sign != 0.0 && last_sign != 0.0 && sign != last_sign;
        if sharp || inflexion {
            cuts.push(i);
        }
        if sign != 0.0 {
            last_sign = sign;
        }
    }
    let mut pieces = Vec::with_capacity(cuts.len() + 1);
    let mut start = 0;
    for end in cuts.into_iter().chain(std::iter::once(v.len() - 1)) {
        pieces.push(SmoothCurve {
            vertices: v[start..=end].to_vec(),
            source: poly.source[start..=end].to_vec(),
        });
        start = end;
    }
    pieces
}
