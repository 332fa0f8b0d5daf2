//! Planar polyline helpers shared by ingestion, scoring and metrics.

use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

/// Metric point `(x, y)` in meters (or normalized units, where noted).
pub type Point2 = [f64; 2];

#[inline]
pub fn sub(a: Point2, b: Point2) -> Point2 {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
pub fn dist(a: Point2, b: Point2) -> f64 {
    let d = sub(a, b);
    d[0].hypot(d[1])
}

#[inline]
pub fn dist_sq(a: Point2, b: Point2) -> f64 {
    let d = sub(a, b);
    d[0] * d[0] + d[1] * d[1]
}

#[inline]
pub fn cross(a: Point2, b: Point2) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

#[inline]
pub fn dot(a: Point2, b: Point2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

pub fn polyline_length(points: &[Point2]) -> f64 {
    points.windows(2).map(|w| dist(w[0], w[1])).sum()
}

/// Cumulative arc length, starting at 0.
pub fn cumulative_length(points: &[Point2]) -> Vec<f64> {
    let mut out = Vec::with_capacity(points.len());
    let mut acc = 0.0;
    out.push(0.0);
    for w in points.windows(2) {
        acc += dist(w[0], w[1]);
        out.push(acc);
    }
    out
}

/// Closest point on segment `ab` to `p`, returned with its parameter in [0, 1].
pub fn project_on_segment(p: Point2, a: Point2, b: Point2) -> (Point2, f64) {
    let ab = sub(b, a);
    let len2 = dot(ab, ab);
    if len2 == 0.0 {
        return (a, 0.0);
    }
    let t = (dot(sub(p, a), ab) / len2).clamp(0.0, 1.0);
    ([a[0] + t * ab[0], a[1] + t * ab[1]], t)
}

/// Distance from `p` to a polyline, plus the closest point and the index of
/// the segment carrying it.
pub fn distance_to_polyline(p: Point2, line: &[Point2]) -> (f64, Point2, usize) {
    if line.len() == 1 {
        return (dist(p, line[0]), line[0], 0);
    }
    let mut best = (f64::INFINITY, line[0], 0);
    for (i, w) in line.windows(2).enumerate() {
        let (q, _) = project_on_segment(p, w[0], w[1]);
        let d = dist(p, q);
        if d < best.0 {
            best = (d, q, i);
        }
    }
    best
}

/// Proper crossing of segments `ab` and `cd` (interiors intersect at a single
/// point). Collinear overlaps and touching endpoints are not crossings.
pub fn segment_crossing(a: Point2, b: Point2, c: Point2, d: Point2) -> Option<Point2> {
    let r = sub(b, a);
    let s = sub(d, c);
    let denom = cross(r, s);
    if denom == 0.0 {
        return None;
    }
    let qp = sub(c, a);
    let t = cross(qp, s) / denom;
    let u = cross(qp, r) / denom;
    if t > 0.0 && t < 1.0 && u > 0.0 && u < 1.0 {
        Some([a[0] + t * r[0], a[1] + t * r[1]])
    } else {
        None
    }
}

/// Unit direction of segment `ab`, or `None` when degenerate.
pub fn direction(a: Point2, b: Point2) -> Option<Point2> {
    let d = sub(b, a);
    let n = d[0].hypot(d[1]);
    if n == 0.0 {
        None
    } else {
        Some([d[0] / n, d[1] / n])
    }
}

/// Absolute sine of the angle between two undirected unit directions.
pub fn abs_sin_between(u: Point2, v: Point2) -> f64 {
    cross(u, v).abs()
}

/// Single-linkage clustering of points under `radius`; returns a cluster
/// label per point, labels dense from 0.
pub fn cluster_points(points: &[Point2], radius: f64) -> Vec<usize> {
    let n = points.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    let r2 = radius * radius;
    for i in 0..n {
        for j in (i + 1)..n {
            if dist_sq(points[i], points[j]) <= r2 {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut labels = Vec::with_capacity(n);
    let mut roots: Vec<usize> = Vec::new();
    for i in 0..n {
        let root = find(&mut parent, i);
        let label = match roots.iter().position(|&r| r == root) {
            Some(pos) => pos,
            None => {
                roots.push(root);
                roots.len() - 1
            }
        };
        labels.push(label);
    }
    labels
}

/// Rotate by `angle` radians about the origin, then translate.
pub fn rigid_transform(p: Point2, angle: f64, offset: Point2) -> Point2 {
    let (s, c) = angle.sin_cos();
    [c * p[0] - s * p[1] + offset[0], s * p[0] + c * p[1] + offset[1]]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perpendicular_segments_cross_at_center() {
        let p = segment_crossing([-1.0, 0.0], [1.0, 0.0], [0.0, -1.0], [0.0, 1.0]).unwrap();
        assert_eq!(p, [0.0, 0.0]);
    }

    #[test]
    fn collinear_overlap_is_not_a_crossing() {
        assert!(segment_crossing([0.0, 0.0], [2.0, 0.0], [1.0, 0.0], [3.0, 0.0]).is_none());
    }

    #[test]
    fn clusters_chain_by_single_linkage() {
        let pts = [[0.0, 0.0], [5.0, 0.0], [10.0, 0.0], [100.0, 0.0]];
        assert_eq!(cluster_points(&pts, 6.0), [0, 0, 0, 1]);
    }

    #[test]
    fn polyline_distance_picks_nearest_segment() {
        let line = [[0.0, 0.0], [10.0, 0.0], [10.0, 10.0]];
        let (d, q, seg) = distance_to_polyline([12.0, 5.0], &line);
        assert!((d - 2.0).abs() < 1e-12);
        assert_eq!(q, [10.0, 5.0]);
        assert_eq!(seg, 1);
    }
}
