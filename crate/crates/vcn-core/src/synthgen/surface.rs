//! Complete ground-truth surfaces: multi-view raycasting plus farthest
//! point sampling down to a fixed budget.

use super::raycast::{cast_nearest, SceneObject};
use super::{SynthError, TriangleMesh};
use crate::geometry::{Frame, PointCloud, Vec3};

/// The 26 cube-sphere directions in a fixed order: 6 face normals, 12
/// edge midpoints, 8 corners, each normalized.
pub fn cube_sphere_directions() -> Vec<Vec3> {
    let mut dirs = Vec::with_capacity(26);
    for x in [-1i32, 0, 1] {
        for y in [-1i32, 0, 1] {
            for z in [-1i32, 0, 1] {
                let order = x.abs() + y.abs() + z.abs();
                if order != 0 {
                    dirs.push((order, Vec3::new(x as f64, y as f64, z as f64)));
                }
            }
        }
    }
    // Faces first, then edges, then corners, stable within a class.
    dirs.sort_by_key(|&(order, _)| order);
    dirs.into_iter()
        .map(|(_, v)| v.normalized(1e-12).expect("nonzero lattice offset"))
        .collect()
}

/// Greedy max-min selection of `k` indices starting from `seed_index`.
/// Ties break to the lowest index.
pub fn farthest_point_sample_indices(
    points: &[Vec3],
    k: usize,
    seed_index: usize,
) -> Result<Vec<usize>, SynthError> {
    if k > points.len() {
        return Err(SynthError::KTooLarge { k, available: points.len() });
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    if seed_index >= points.len() {
        return Err(SynthError::BadConfig(format!(
            "seed index {seed_index} out of range for {} points",
            points.len()
        )));
    }
    let mut selected = Vec::with_capacity(k);
    selected.push(seed_index);
    let mut dist: Vec<f64> = points
        .iter()
        .map(|&p| (p - points[seed_index]).norm_sq())
        .collect();
    while selected.len() < k {
        let mut best = 0;
        for i in 1..dist.len() {
            // Strict > keeps the lowest index on ties.
            if dist[i] > dist[best] {
                best = i;
            }
        }
        selected.push(best);
        for (d, &p) in dist.iter_mut().zip(points) {
            *d = d.min((p - points[best]).norm_sq());
        }
    }
    Ok(selected)
}

pub fn farthest_point_sample(
    cloud: &PointCloud,
    k: usize,
    seed_index: usize,
) -> Result<PointCloud, SynthError> {
    let idx = farthest_point_sample_indices(&cloud.points, k, seed_index)?;
    Ok(PointCloud::new(idx.into_iter().map(|i| cloud.points[i]).collect(), cloud.frame))
}

/// Builds an orthonormal basis perpendicular to `d`.
fn view_basis(d: Vec3) -> (Vec3, Vec3) {
    let up = if d.z.abs() < 0.9 { Vec3::new(0.0, 0.0, 1.0) } else { Vec3::new(1.0, 0.0, 0.0) };
    let u = d.cross(up).normalized(1e-9).expect("up not parallel to view");
    let v = d.cross(u);
    (u, v)
}

/// Raycasts the mesh from `n_views` directions (first n of the
/// cube-sphere set) with orthographic grids, concatenates every hit, and
/// farthest-point-samples down to exactly `n_points`. The canonical
/// complete surface, in the mesh's own frame.
pub fn complete_surface(
    mesh: &TriangleMesh,
    n_views: usize,
    n_points: usize,
) -> Result<PointCloud, SynthError> {
    if !(6..=26).contains(&n_views) {
        return Err(SynthError::BadConfig(format!(
            "n_views must be within 6..=26, got {n_views}"
        )));
    }
    if n_points < 1 {
        return Err(SynthError::BadConfig("n_points must be at least 1".into()));
    }
    let views = &cube_sphere_directions()[..n_views];
    let (mn, mx) = mesh.aabb();
    let ctr = (mn + mx) * 0.5;
    let radius = (mx - mn).norm() / 2.0;
    if radius == 0.0 {
        return Err(SynthError::BadMesh("mesh has zero extent".into()));
    }

    // Grid resolution adapts upward until enough rays land.
    let object = [SceneObject::new(mesh.clone())];
    let mut res = (((4 * n_points) as f64 / n_views as f64).sqrt().ceil() as usize).clamp(32, 512);
    loop {
        let mut hits: Vec<Vec3> = Vec::new();
        for &d in views {
            let (u, v) = view_basis(d);
            let eye_dist = radius * 2.0;
            let span = 2.0 * radius;
            for i in 0..res {
                let su = -radius + (i as f64 + 0.5) * span / res as f64;
                for j in 0..res {
                    let sv = -radius + (j as f64 + 0.5) * span / res as f64;
                    let origin = ctr + d * eye_dist + u * su + v * sv;
                    if let Some((_, h)) = cast_nearest(&object, origin, -d) {
                        hits.push(h);
                    }
                }
            }
        }
        if hits.len() >= n_points {
            let idx = farthest_point_sample_indices(&hits, n_points, 0)?;
            let points = idx.into_iter().map(|i| hits[i]).collect();
            return Ok(PointCloud::new(points, Frame::Canonical));
        }
        if res >= 512 {
            return Err(SynthError::InsufficientHits { hits: hits.len(), needed: n_points });
        }
        res = (res * 2).min(512);
    }
}
