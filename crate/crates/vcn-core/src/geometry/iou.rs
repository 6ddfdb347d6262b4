//! Rotated-box overlap metrics.
//!
//! BEV IoU clips one footprint rectangle against the other with
//! Sutherland–Hodgman (both are convex, so the result is exact), then
//! measures areas with the shoelace formula. 3D IoU extends the BEV
//! intersection by the vertical overlap interval.

use super::Box3;

/// Intersection-over-union of the yaw-rotated footprint rectangles.
///
/// All three areas go through the same shoelace evaluation so that
/// identical boxes cancel to exactly 1.0.
pub fn iou_bev(a: &Box3, b: &Box3) -> f64 {
    let pa = a.corners_bev().to_vec();
    let pb = b.corners_bev().to_vec();
    let inter = polygon_area(&clip_convex(&pa, &pb));
    let union = polygon_area(&pa) + polygon_area(&pb) - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Volumetric IoU: BEV intersection area times vertical overlap, over the
/// union of the two volumes.
pub fn iou_3d(a: &Box3, b: &Box3) -> f64 {
    let pa = a.corners_bev().to_vec();
    let pb = b.corners_bev().to_vec();
    let inter_area = polygon_area(&clip_convex(&pa, &pb));
    let dz = (a.top().min(b.top()) - a.bottom().max(b.bottom())).max(0.0);
    let inter_vol = inter_area * dz;
    let vol_a = polygon_area(&pa) * a.dims.z;
    let vol_b = polygon_area(&pb) * b.dims.z;
    let union = vol_a + vol_b - inter_vol;
    if union <= 0.0 {
        return 0.0;
    }
    (inter_vol / union).clamp(0.0, 1.0)
}

/// Signed shoelace area; vertices in counter-clockwise order give a
/// positive result.
fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..poly.len() {
        let [x0, y0] = poly[i];
        let [x1, y1] = poly[(i + 1) % poly.len()];
        acc += x0 * y1 - x1 * y0;
    }
    (acc / 2.0).abs()
}

/// Sutherland–Hodgman: clips `subject` against the convex polygon `clip`
/// (both counter-clockwise). Exact for convex-convex intersection.
fn clip_convex(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut out = subject.to_vec();
    for i in 0..clip.len() {
        if out.is_empty() {
            return out;
        }
        let a = clip[i];
        let b = clip[(i + 1) % clip.len()];
        let input = std::mem::take(&mut out);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let cur_in = is_left_or_on(a, b, cur);
            let prev_in = is_left_or_on(a, b, prev);
            if cur_in {
                if !prev_in {
                    out.push(line_intersection(prev, cur, a, b));
                }
                out.push(cur);
            } else if prev_in {
                out.push(line_intersection(prev, cur, a, b));
            }
        }
    }
    out
}

/// True when `p` lies on or to the left of the directed edge a→b, i.e.
/// inside a counter-clockwise clip polygon. The tolerance keeps vertices
/// that are on the edge up to roundoff, so a polygon clipped against
/// itself survives unchanged.
fn is_left_or_on(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> bool {
    let cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
    let scale = 1.0
        + a[0].abs().max(a[1].abs()).max(b[0].abs()).max(b[1].abs()).max(p[0].abs()).max(p[1].abs());
    cross >= -1e-12 * scale * scale
}

/// Intersection of segment p→q with the infinite line through a→b. Only
/// called when p and q straddle the line, so the denominator is nonzero.
fn line_intersection(p: [f64; 2], q: [f64; 2], a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    let d1 = [q[0] - p[0], q[1] - p[1]];
    let d2 = [b[0] - a[0], b[1] - a[1]];
    let denom = d1[0] * d2[1] - d1[1] * d2[0];
    let t = ((a[0] - p[0]) * d2[1] - (a[1] - p[1]) * d2[0]) / denom;
    [p[0] + t * d1[0], p[1] + t * d1[1]]
}
