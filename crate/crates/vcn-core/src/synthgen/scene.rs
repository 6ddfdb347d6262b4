//! Scene manifests, sensor-grid rendering, and manifest generation.
//!
//! A manifest is world-frame: car boxes, poles, and the sensor origin.
//! Rendering casts the configured spherical grid from the sensor and
//! buckets hits per car; sample records come out viewer-centred (sensor
//! at the origin) with the ground-truth pose mapping viewer coordinates
//! into the car's canonical frame.

use super::mesh::{ground_quad, pole_mesh, TriangleMesh};
use super::raycast::{cast_nearest, SceneObject};
use super::surface::complete_surface;
use super::SynthError;
use crate::geometry::{Box3, Frame, Mat3, PointCloud, RigidPose, Rotation3, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CarPlacement {
    pub mesh_id: String,
    #[serde(rename = "box")]
    pub box3: Box3,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolePlacement {
    pub x: f64,
    pub y: f64,
    pub radius: f64,
    pub height: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneManifest {
    pub sensor: Vec3,
    pub cars: Vec<CarPlacement>,
    pub poles: Vec<PolePlacement>,
}

impl SceneManifest {
    pub fn validate(&self) -> Result<(), SynthError> {
        if !self.sensor.is_finite() {
            return Err(SynthError::BadConfig("non-finite sensor origin".into()));
        }
        for (i, car) in self.cars.iter().enumerate() {
            let b = &car.box3;
            if !(b.center.is_finite() && b.dims.is_finite() && b.yaw.is_finite()) {
                return Err(SynthError::BadConfig(format!("car {i}: non-finite box")));
            }
            Box3::new(b.center, b.dims, b.yaw)
                .map_err(|e| SynthError::BadConfig(format!("car {i}: {e}")))?;
        }
        for (i, p) in self.poles.iter().enumerate() {
            if !(p.radius > 0.0 && p.height > 0.0 && p.x.is_finite() && p.y.is_finite()) {
                return Err(SynthError::BadConfig(format!(
                    "pole {i}: needs positive radius/height, got {p:?}"
                )));
            }
        }
        Ok(())
    }

    /// Canonical text form; parsing it back is bit-exact.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, SynthError> {
        let m: SceneManifest = serde_json::from_str(text)
            .map_err(|e| SynthError::BadConfig(format!("manifest: {e}")))?;
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self, SynthError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), SynthError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }
}

/// Spherical ray grid around the sensor. Angles in degrees; rays sit at
/// cell centers, elevation-major order.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RayGridConfig {
    pub az_range: (f64, f64),
    pub el_range: (f64, f64),
    pub step: f64,
    #[serde(default)]
    pub include_ground: bool,
    #[serde(default = "default_ground_half_size")]
    pub ground_half_size: f64,
}

fn default_ground_half_size() -> f64 {
    200.0
}

impl Default for RayGridConfig {
    fn default() -> Self {
        RayGridConfig {
            az_range: (-75.0, 75.0),
            el_range: (-25.0, 5.0),
            step: 0.05,
            include_ground: false,
            ground_half_size: default_ground_half_size(),
        }
    }
}

impl RayGridConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        if !(self.step > 0.0)
            || !(self.az_range.0 < self.az_range.1)
            || !(self.el_range.0 < self.el_range.1)
        {
            return Err(SynthError::BadConfig(format!("bad ray grid {self:?}")));
        }
        Ok(())
    }

    pub fn directions(&self) -> Vec<Vec3> {
        let n_az = ((self.az_range.1 - self.az_range.0) / self.step).floor() as usize;
        let n_el = ((self.el_range.1 - self.el_range.0) / self.step).floor() as usize;
        let mut dirs = Vec::with_capacity(n_az * n_el);
        for ei in 0..n_el {
            let el = (self.el_range.0 + (ei as f64 + 0.5) * self.step).to_radians();
            for ai in 0..n_az {
                let az = (self.az_range.0 + (ai as f64 + 0.5) * self.step).to_radians();
                dirs.push(Vec3::new(
                    el.cos() * az.cos(),
                    el.cos() * az.sin(),
                    el.sin(),
                ));
            }
        }
        dirs
    }
}

/// A mesh ready for placement: AABB-centered, with its canonical
/// complete surface attached.
#[derive(Clone, Debug)]
pub struct MeshEntry {
    pub mesh: TriangleMesh,
    pub complete: PointCloud,
}

pub fn prepare_mesh(
    mesh: &TriangleMesh,
    n_views: usize,
    n_points: usize,
) -> Result<MeshEntry, SynthError> {
    let canonical = mesh.canonicalized();
    let complete = complete_surface(&canonical, n_views, n_points)?;
    Ok(MeshEntry { mesh: canonical, complete })
}

/// One training pair: what the sensor saw of a car, the full surface,
/// and the ground truth mapping between frames.
#[derive(Clone, Debug)]
pub struct SampleRecord {
    pub partial: PointCloud,
    pub complete: PointCloud,
    /// Viewer-centred → canonical.
    pub gt_pose: RigidPose,
    /// In the viewer-centred frame.
    pub gt_box: Box3,
}

pub fn render_scene(
    manifest: &SceneManifest,
    library: &BTreeMap<String, MeshEntry>,
    grid: &RayGridConfig,
) -> Result<Vec<SampleRecord>, SynthError> {
    manifest.validate()?;
    grid.validate()?;
    let mut objects = Vec::new();
    for car in &manifest.cars {
        let entry = library
            .get(&car.mesh_id)
            .ok_or_else(|| SynthError::MeshNotFound(car.mesh_id.clone()))?;
        objects.push(SceneObject::new(entry.mesh.placed(&car.box3)?));
    }
    for pole in &manifest.poles {
        let raw = pole_mesh(pole.radius, pole.height)?;
        let shifted = TriangleMesh {
            vertices: raw
                .vertices
                .iter()
                .map(|&v| v + Vec3::new(pole.x, pole.y, 0.0))
                .collect(),
            triangles: raw.triangles,
        };
        objects.push(SceneObject::new(shifted));
    }
    if grid.include_ground {
        objects.push(SceneObject::new(ground_quad(grid.ground_half_size)));
    }

    let sensor = manifest.sensor;
    let dirs = grid.directions();
    // Output order is fixed by the grid, not by worker scheduling.
    let hits: Vec<Option<(usize, Vec3)>> = dirs
        .par_iter()
        .map(|&d| cast_nearest(&objects, sensor, d))
        .collect();

    let n_cars = manifest.cars.len();
    let mut buckets: Vec<Vec<Vec3>> = vec![Vec::new(); n_cars];
    for (obj, hit) in hits.into_iter().flatten() {
        if obj < n_cars {
            buckets[obj].push(hit - sensor);
        }
    }

    let mut records = Vec::new();
    for (i, partial_points) in buckets.into_iter().enumerate() {
        if partial_points.is_empty() {
            continue;
        }
        let car = &manifest.cars[i];
        let entry = library.get(&car.mesh_id).expect("resolved above");
        let b = &car.box3;
        let (mn, mx) = entry.mesh.aabb();
        let ext = mx - mn;
        let scale = Vec3::new(b.dims.x / ext.x, b.dims.y / ext.y, b.dims.z / ext.z);
        let rot = Mat3::rotation_z(b.yaw);
        let vc_center = b.center - sensor;
        let complete_points: Vec<Vec3> = entry
            .complete
            .points
            .iter()
            .map(|&p| {
                let s = Vec3::new(p.x * scale.x, p.y * scale.y, p.z * scale.z);
                rot.apply_row(s) + vc_center
            })
            .collect();
        records.push(SampleRecord {
            partial: PointCloud::new(partial_points, Frame::ViewerCentred),
            complete: PointCloud::new(complete_points, Frame::ViewerCentred),
            gt_pose: RigidPose::new(Rotation3::about_up(-b.yaw), vc_center),
            gt_box: Box3::new(vc_center, b.dims, b.yaw)?,
        });
    }
    Ok(records)
}

/// Knobs for randomized manifests: placement counts, radial range,
/// azimuth span around +x, per-car uniform scale jitter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestGenConfig {
    pub n_cars: (usize, usize),
    pub n_poles: (usize, usize),
    pub range: (f64, f64),
    pub az_span_deg: f64,
    pub scale_jitter: (f64, f64),
    pub sensor_height: f64,
}

impl Default for ManifestGenConfig {
    fn default() -> Self {
        ManifestGenConfig {
            n_cars: (2, 6),
            n_poles: (0, 4),
            range: (5.0, 60.0),
            az_span_deg: 60.0,
            scale_jitter: (0.9, 1.1),
            sensor_height: 1.8,
        }
    }
}

impl ManifestGenConfig {
    fn validate(&self) -> Result<(), SynthError> {
        let ok = self.n_cars.0 <= self.n_cars.1
            && self.n_poles.0 <= self.n_poles.1
            && self.range.0 > 0.0
            && self.range.0 < self.range.1
            && self.az_span_deg > 0.0
            && self.scale_jitter.0 > 0.0
            && self.scale_jitter.0 <= self.scale_jitter.1
            && self.sensor_height >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(SynthError::BadConfig(format!("manifest generator: {self:?}")))
        }
    }
}

/// Randomized scene: cars at 5–60 m with uniform yaw and scale jitter,
/// poles of various heights, everything non-overlapping in plan view.
pub fn generate_manifest(
    cfg: &ManifestGenConfig,
    mesh_dims: &BTreeMap<String, Vec3>,
    seed: u64,
) -> Result<SceneManifest, SynthError> {
    cfg.validate()?;
    if mesh_dims.is_empty() {
        return Err(SynthError::BadConfig("no meshes to place".into()));
    }
    let ids: Vec<&String> = mesh_dims.keys().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let span = cfg.az_span_deg.to_radians();

    let mut cars: Vec<CarPlacement> = Vec::new();
    let n_cars = rng.random_range(cfg.n_cars.0..=cfg.n_cars.1);
    for _ in 0..n_cars {
        for _attempt in 0..40 {
            let id = ids[rng.random_range(0..ids.len())];
            let base = mesh_dims[id];
            let s = rng.random_range(cfg.scale_jitter.0..=cfg.scale_jitter.1);
            let dims = base * s;
            let r = rng.random_range(cfg.range.0..=cfg.range.1);
            let az = rng.random_range(-span..=span);
            let yaw = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            let center = Vec3::new(r * az.cos(), r * az.sin(), dims.z / 2.0);
            let footprint = dims.x.hypot(dims.y) / 2.0;
            let clear = cars.iter().all(|c| {
                let d = c.box3.center - center;
                let other = c.box3.dims.x.hypot(c.box3.dims.y) / 2.0;
                d.x.hypot(d.y) >= footprint + other + 0.3
            });
            if clear {
                cars.push(CarPlacement {
                    mesh_id: id.clone(),
                    box3: Box3::new(center, dims, yaw)?,
                });
                break;
            }
        }
    }

    let mut poles = Vec::new();
    let n_poles = rng.random_range(cfg.n_poles.0..=cfg.n_poles.1);
    for _ in 0..n_poles {
        for _attempt in 0..40 {
            let r = rng.random_range(cfg.range.0..=cfg.range.1);
            let az = rng.random_range(-span..=span);
            let radius = rng.random_range(0.06..0.25);
            let height = rng.random_range(2.0..8.0);
            let (x, y) = (r * az.cos(), r * az.sin());
            let clear = cars.iter().all(|c| {
                let dx = c.box3.center.x - x;
                let dy = c.box3.center.y - y;
                dx.hypot(dy) >= c.box3.dims.x.hypot(c.box3.dims.y) / 2.0 + radius + 0.3
            });
            if clear {
                poles.push(PolePlacement { x, y, radius, height });
                break;
            }
        }
    }

    Ok(SceneManifest {
        sensor: Vec3::new(0.0, 0.0, cfg.sensor_height),
        cars,
        poles,
    })
}
