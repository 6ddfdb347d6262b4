//! Synthetic training data by mesh raycasting.
//!
//! A scene manifest places car meshes (and occluding poles) around a
//! sensor origin. Rendering casts a dense spherical ray grid from the
//! sensor to produce single-viewpoint partials, while complete
//! ground-truth surfaces come from raycasting each mesh from a ring of
//! directions and farthest-point-sampling the union. No external model
//! zoo is required: meshes load from a plain text triangle format, and
//! procedural car/pole generators cover tests and self-contained runs.

mod mesh;
mod raycast;
mod scene;
mod surface;

pub use mesh::{
    box_mesh, ground_quad, pole_mesh, procedural_car, uv_sphere, CarParams, TriangleMesh,
};
pub use raycast::{cast_nearest, ray_triangle, raycast, SceneObject};
pub use scene::{
    generate_manifest, prepare_mesh, render_scene, CarPlacement, ManifestGenConfig, MeshEntry,
    PolePlacement, RayGridConfig, SampleRecord, SceneManifest,
};
pub use surface::{
    complete_surface, cube_sphere_directions, farthest_point_sample,
    farthest_point_sample_indices,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("mesh: {0}")]
    BadMesh(String),
    #[error("mesh text line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("manifest references unknown mesh {0:?}")]
    MeshNotFound(String),
    #[error("raycasting produced {hits} hits, need {needed}")]
    InsufficientHits { hits: usize, needed: usize },
    #[error("k = {k} exceeds the {available} available points")]
    KTooLarge { k: usize, available: usize },
    #[error("config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
