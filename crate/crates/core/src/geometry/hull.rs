//! Planar convex hulls and minimum-area enclosing rectangles.

use nalgebra::Vector2;

fn cross(o: &Vector2<f64>, a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Andrew's monotone chain. Returns the hull counter-clockwise without
/// repeating the first vertex; collinear points are dropped.
pub fn convex_hull(points: &[Vector2<f64>]) -> Vec<Vector2<f64>> {
    let mut pts: Vec<Vector2<f64>> = points.iter().copied().filter(|p| p.x.is_finite() && p.y.is_finite()).collect();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<Vector2<f64>> = Vec::with_capacity(pts.len() * 2);
    for p in pts.iter() {
        while hull.len() >= 2 && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(*p);
    }
    let lower_len = hull.len() + 1;
    for p in pts.iter().rev().skip(1) {
        while hull.len() >= lower_len && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(*p);
    }
    hull.pop();
    hull
}

/// Shoelace area of a simple polygon (absolute value).
pub fn polygon_area(poly: &[Vector2<f64>]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..poly.len() {
        let a = &poly[i];
        let b = &poly[(i + 1) % poly.len()];
        acc += a.x * b.y - a.y * b.x;
    }
    0.5 * acc.abs()
}

/// Unit direction of the first side of the minimum-area rectangle enclosing
/// `points`, or `None` for fewer than two distinct points. Some side of the
/// optimum is collinear with a hull edge, so every edge direction is tried.
pub fn min_area_rect_direction(points: &[Vector2<f64>]) -> Option<Vector2<f64>> {
    let hull = convex_hull(points);
    if hull.len() < 2 {
        return None;
    }
    let mut best: Option<(f64, Vector2<f64>)> = None;
    for i in 0..hull.len() {
        let edge = hull[(i + 1) % hull.len()] - hull[i];
        let len = edge.norm();
        if len < 1e-15 {
            continue;
        }
        let d = edge / len;
        let n = Vector2::new(-d.y, d.x);
        let (mut lo_d, mut hi_d, mut lo_n, mut hi_n) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for p in &hull {
            let a = p.dot(&d);
            let b = p.dot(&n);
            lo_d = lo_d.min(a);
            hi_d = hi_d.max(a);
            lo_n = lo_n.min(b);
            hi_n = hi_n.max(b);
        }
        let area = (hi_d - lo_d) * (hi_n - lo_n);
        if best.is_none_or(|(a, _)| area < a - 1e-15) {
            best = Some((area, d));
        }
    }
    best.map(|(_, d)| d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_hull_and_area() {
        let pts = vec![
            Vector2::new(0.0, 0.0),
            Vector2::new(1.0, 0.0),
            Vector2::new(1.0, 1.0),
            Vector2::new(0.0, 1.0),
            Vector2::new(0.5, 0.5),
            Vector2::new(0.5, 0.0),
        ];
        let h = convex_hull(&pts);
        assert_eq!(h.len(), 4);
        assert!((polygon_area(&h) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_inputs() {
        assert_eq!(polygon_area(&convex_hull(&[])), 0.0);
        let line = [Vector2::new(0.0, 0.0), Vector2::new(1.0, 1.0), Vector2::new(2.0, 2.0)];
        assert_eq!(polygon_area(&convex_hull(&line)), 0.0);
    }

    #[test]
    fn min_rect_of_rotated_rectangle() {
        let (s, c) = 0.3f64.sin_cos();
        let pts: Vec<_> = [(0.0, 0.0), (2.0, 0.0), (2.0, 1.0), (0.0, 1.0)]
            .iter()
            .map(|&(x, y)| Vector2::new(c * x - s * y, s * x + c * y))
            .collect();
        let d = min_area_rect_direction(&pts).unwrap();
        let along = d.dot(&Vector2::new(c, s)).abs();
        let across = d.dot(&Vector2::new(-s, c)).abs();
        assert!((along - 1.0).abs() < 1e-12 || (across - 1.0).abs() < 1e-12);
    }
}
