//! Ray–triangle casting: Möller–Trumbore with an AABB early reject.
//!
//! Per-ray work is a linear scan over triangles. That is the documented
//! hot spot; the AABB slab test in front of it is what makes multi-object
//! scenes affordable, since most rays miss most objects.

use super::TriangleMesh;
use crate::geometry::Vec3;

/// Hits closer than this are treated as self-intersections and ignored.
pub const RAY_T_MIN: f64 = 1e-9;

/// Möller–Trumbore ray/triangle distance. Edge and vertex hits count
/// (boundary inclusive); triangles are two-sided.
pub fn ray_triangle(origin: Vec3, dir: Vec3, a: Vec3, b: Vec3, c: Vec3) -> Option<f64> {
    let e1 = b - a;
    let e2 = c - a;
    let p = dir.cross(e2);
    let det = e1.dot(p);
    if det.abs() < 1e-12 {
        return None;
    }
    let inv = 1.0 / det;
    let s = origin - a;
    let u = s.dot(p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(e1);
    let v = dir.dot(q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(q) * inv;
    (t > RAY_T_MIN).then_some(t)
}

/// Ray/AABB slab test; true when the ray could hit something closer than
/// `t_best`.
fn aabb_may_hit(origin: Vec3, dir: Vec3, mn: Vec3, mx: Vec3, t_best: f64) -> bool {
    let mut t_near = RAY_T_MIN;
    let mut t_far = t_best;
    for axis in 0..3 {
        let (o, d, lo, hi) = match axis {
            0 => (origin.x, dir.x, mn.x, mx.x),
            1 => (origin.y, dir.y, mn.y, mx.y),
            _ => (origin.z, dir.z, mn.z, mx.z),
        };
        if d.abs() < 1e-15 {
            if o < lo || o > hi {
                return false;
            }
            continue;
        }
        let (mut t0, mut t1) = ((lo - o) / d, (hi - o) / d);
        if t0 > t1 {
            std::mem::swap(&mut t0, &mut t1);
        }
        t_near = t_near.max(t0);
        t_far = t_far.min(t1);
        if t_near > t_far {
            return false;
        }
    }
    true
}

/// Nearest intersection distance of one ray with one mesh.
pub fn cast_mesh(mesh: &TriangleMesh, origin: Vec3, dir: Vec3, t_best: f64) -> Option<f64> {
    let mut best: Option<f64> = None;
    let mut limit = t_best;
    for i in 0..mesh.triangles.len() {
        let (a, b, c) = mesh.tri(i);
        if let Some(t) = ray_triangle(origin, dir, a, b, c) {
            if t < limit {
                limit = t;
                best = Some(t);
            }
        }
    }
    best
}

/// Nearest hit point per ray against a single mesh.
pub fn raycast(mesh: &TriangleMesh, origin: Vec3, directions: &[Vec3]) -> Vec<Option<Vec3>> {
    let (mn, mx) = mesh.aabb();
    directions
        .iter()
        .map(|&dir| {
            debug_assert!((dir.norm() - 1.0).abs() < 1e-9, "directions must be unit");
            if !aabb_may_hit(origin, dir, mn, mx, f64::INFINITY) {
                return None;
            }
            cast_mesh(mesh, origin, dir, f64::INFINITY).map(|t| origin + dir * t)
        })
        .collect()
}

/// A mesh plus its cached bounds, ready for multi-object casting.
pub struct SceneObject {
    pub mesh: TriangleMesh,
    aabb: (Vec3, Vec3),
}

impl SceneObject {
    pub fn new(mesh: TriangleMesh) -> Self {
        let aabb = mesh.aabb();
        SceneObject { mesh, aabb }
    }
}

/// Nearest hit across all objects: (object index, hit point).
pub fn cast_nearest(objects: &[SceneObject], origin: Vec3, dir: Vec3) -> Option<(usize, Vec3)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, obj) in objects.iter().enumerate() {
        let limit = best.map_or(f64::INFINITY, |(_, t)| t);
        if !aabb_may_hit(origin, dir, obj.aabb.0, obj.aabb.1, limit) {
            continue;
        }
        if let Some(t) = cast_mesh(&obj.mesh, origin, dir, limit) {
            best = Some((i, t));
        }
    }
    best.map(|(i, t)| (i, origin + dir * t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::{box_mesh, procedural_car, CarParams};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    #[test]
    fn single_triangle_center_hit() {
        // Triangle in the x = 0 plane; the +x ray from (−1,0,0) lands on
        // its centroid edge midpoint (0,0,0).
        let a = Vec3::new(0.0, -1.0, -1.0);
        let b = Vec3::new(0.0, 1.0, -1.0);
        let c = Vec3::new(0.0, 0.0, 1.0);
        let t = ray_triangle(Vec3::new(-1.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0), a, b, c);
        assert_eq!(t, Some(1.0));
    }

    #[test]
    fn ray_pointing_away_misses() {
        let mesh = box_mesh(Vec3::new(1.0, -1.0, -1.0), Vec3::new(3.0, 1.0, 1.0));
        let hits = raycast(&mesh, Vec3::ZERO, &[Vec3::new(-1.0, 0.0, 0.0)]);
        assert_eq!(hits, vec![None]);
    }

    #[test]
    fn stacked_triangles_return_the_nearer() {
        let verts = vec![
            // x = 2 triangle
            Vec3::new(2.0, -1.0, -1.0),
            Vec3::new(2.0, 1.0, -1.0),
            Vec3::new(2.0, 0.0, 1.0),
            // x = 1 triangle, same silhouette
            Vec3::new(1.0, -1.0, -1.0),
            Vec3::new(1.0, 1.0, -1.0),
            Vec3::new(1.0, 0.0, 1.0),
        ];
        let mesh = TriangleMesh::new(verts, vec![[0, 1, 2], [3, 4, 5]]).unwrap();
        let hits = raycast(&mesh, Vec3::ZERO, &[Vec3::new(1.0, 0.0, 0.0)]);
        assert_eq!(hits, vec![Some(Vec3::new(1.0, 0.0, 0.0))]);
    }

    #[test]
    fn cube_face_hit_lands_on_the_face() {
        let mesh = box_mesh(Vec3::new(4.0, -1.0, -1.0), Vec3::new(6.0, 1.0, 1.0));
        let dir = Vec3::new(1.0, 0.02, 0.01).normalized(1e-12).unwrap();
        let hit = raycast(&mesh, Vec3::ZERO, &[dir])[0].unwrap();
        assert!((hit.x - 4.0).abs() < 1e-12);
        assert!(hit.y.abs() < 0.2 && hit.z.abs() < 0.2);
    }

    #[test]
    fn aabb_reject_agrees_with_exhaustive_scan() {
        // The early-out path must never change an answer.
        let car = procedural_car(&CarParams::default()).unwrap();
        let mut rng = StdRng::seed_from_u64(12);
        let origin = Vec3::new(-8.0, 0.0, 1.0);
        for _ in 0..500 {
            let dir = Vec3::new(
                rng.random_range(0.2..1.0),
                rng.random_range(-0.6..0.6),
                rng.random_range(-0.4..0.2),
            )
            .normalized(1e-12)
            .unwrap();
            let fast = raycast(&car, origin, &[dir])[0];
            // Oracle: plain scan, no AABB test, no running limit.
            let mut best: Option<f64> = None;
            for i in 0..car.triangles.len() {
                let (a, b, c) = car.tri(i);
                if let Some(t) = ray_triangle(origin, dir, a, b, c) {
                    if best.map_or(true, |bt| t < bt) {
                        best = Some(t);
                    }
                }
            }
            let slow = best.map(|t| origin + dir * t);
            match (fast, slow) {
                (None, None) => {}
                (Some(f), Some(s)) => assert!((f - s).norm() < 1e-12),
                other => panic!("paths disagree: {other:?}"),
            }
        }
    }

    #[test]
    fn nearest_object_wins() {
        let near = SceneObject::new(box_mesh(
            Vec3::new(2.0, -1.0, -1.0),
            Vec3::new(3.0, 1.0, 1.0),
        ));
        let far = SceneObject::new(box_mesh(
            Vec3::new(5.0, -1.0, -1.0),
            Vec3::new(6.0, 1.0, 1.0),
        ));
        let x = Vec3::new(1.0, 0.0, 0.0);
        let (idx, hit) = cast_nearest(&[far, near], Vec3::ZERO, x).unwrap();
        assert_eq!(idx, 1);
        assert!((hit.x - 2.0).abs() < 1e-12);
        let behind = cast_nearest(&[], Vec3::ZERO, x);
        assert!(behind.is_none());
    }
}
