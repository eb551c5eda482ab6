//! Planar geometry helpers for embedding vertical fracture planes.

/// Area and centroid of a simple polygon (shoelace formula).
pub fn polygon_area_centroid(poly: &[[f64; 2]]) -> (f64, [f64; 2]) {
    let n = poly.len();
    if n < 3 {
        return (0.0, [0.0, 0.0]);
    }
    let (mut a2, mut cx, mut cy) = (0.0, 0.0, 0.0);
    for k in 0..n {
        let p = poly[k];
        let q = poly[(k + 1) % n];
        let cross = p[0] * q[1] - q[0] * p[1];
        a2 += cross;
        cx += (p[0] + q[0]) * cross;
        cy += (p[1] + q[1]) * cross;
    }
    if a2 == 0.0 {
        return (0.0, [0.0, 0.0]);
    }
    let area = 0.5 * a2;
    (area.abs(), [cx / (3.0 * a2), cy / (3.0 * a2)])
}

/// Keep the part of `poly` where `f(p) = n·p - c` has the given sign
/// (Sutherland–Hodgman against one half-plane).
pub fn clip_half_plane(poly: &[[f64; 2]], normal: [f64; 2], offset: f64, keep_positive: bool) -> Vec<[f64; 2]> {
    let sign = if keep_positive { 1.0 } else { -1.0 };
    let f = |p: [f64; 2]| sign * (normal[0] * p[0] + normal[1] * p[1] - offset);
    let mut out = Vec::with_capacity(poly.len() + 2);
    let n = poly.len();
    for k in 0..n {
        let p = poly[k];
        let q = poly[(k + 1) % n];
        let (fp, fq) = (f(p), f(q));
        if fp >= 0.0 {
            out.push(p);
        }
        if (fp > 0.0 && fq < 0.0) || (fp < 0.0 && fq > 0.0) {
            let t = fp / (fp - fq);
            out.push([p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]);
        }
    }
    out
}

/// Mean unsigned distance from the axis-aligned rectangle `bounds` to the
/// infinite line through `point` with direction `dir`.
///
/// The signed distance is linear, so splitting the rectangle along the line
/// and integrating each part exactly (area times value at the centroid) gives
/// the closed-form average for any orientation.
pub fn mean_distance_to_line(bounds: [[f64; 2]; 2], point: [f64; 2], dir: [f64; 2]) -> f64 {
    let len = dir[0].hypot(dir[1]);
    let normal = [-dir[1] / len, dir[0] / len];
    let offset = normal[0] * point[0] + normal[1] * point[1];
    let [[x0, x1], [y0, y1]] = bounds;
    let rect = [[x0, y0], [x1, y0], [x1, y1], [x0, y1]];
    let total_area = (x1 - x0) * (y1 - y0);
    let signed = |c: [f64; 2]| normal[0] * c[0] + normal[1] * c[1] - offset;
    let mut integral = 0.0;
    for keep_positive in [true, false] {
        let part = clip_half_plane(&rect, normal, offset, keep_positive);
        let (area, centroid) = polygon_area_centroid(&part);
        if area > 0.0 {
            integral += area * signed(centroid).abs();
        }
    }
    integral / total_area
}

/// Intersection of segments `a0→a1` and `b0→b1`, as parameters `(s, t)` in
/// `[0, 1]²`. Parallel segments return `None`.
pub fn segment_intersection(a0: [f64; 2], a1: [f64; 2], b0: [f64; 2], b1: [f64; 2]) -> Option<(f64, f64)> {
    let r = [a1[0] - a0[0], a1[1] - a0[1]];
    let s = [b1[0] - b0[0], b1[1] - b0[1]];
    let denom = r[0] * s[1] - r[1] * s[0];
    let scale = r[0].hypot(r[1]) * s[0].hypot(s[1]);
    if denom.abs() <= 1e-12 * scale {
        return None;
    }
    let qp = [b0[0] - a0[0], b0[1] - a0[1]];
    let ta = (qp[0] * s[1] - qp[1] * s[0]) / denom;
    let tb = (qp[0] * r[1] - qp[1] * r[0]) / denom;
    ((0.0..=1.0).contains(&ta) && (0.0..=1.0).contains(&tb)).then_some((ta, tb))
}
