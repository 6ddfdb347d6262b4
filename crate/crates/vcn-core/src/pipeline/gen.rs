//! Dataset generation: build (or load) a car mesh library, raycast
//! randomized scenes, apply the simulated scan pattern, and write the
//! sample directories plus a train/test split keyed by mesh identity.
//! Byte-identical for a fixed config and seed.

use super::{derive_seed, io_err, PipelineError, RunConfig, STREAM_LIDAR, STREAM_MESH,
    STREAM_SCENE, STREAM_SPLIT};
use crate::dataset::{save_json, save_sample, DatasetError, SplitFile};
use crate::geometry::PointCloud;
use crate::lidarsim::{subsample, LidarError, ScanPattern};
use crate::synthgen::{
    generate_manifest, prepare_mesh, procedural_car, CarParams, MeshEntry, SampleRecord,
    SceneManifest, TriangleMesh,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GenSummary {
    pub n_meshes: usize,
    pub n_samples: usize,
    pub n_train_samples: usize,
    pub n_test_samples: usize,
    /// Renders dropped for losing too many points to the scan pattern.
    pub n_dropped: usize,
}

fn load_mesh_dir(dir: &Path) -> Result<Vec<(String, TriangleMesh)>, PipelineError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| io_err(dir, e))?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "mesh"))
        .collect();
    paths.sort();
    let mut out = Vec::new();
    for path in paths {
        // Parse failures already carry the line; add the file.
        let mesh = TriangleMesh::load(&path).map_err(|e| {
            PipelineError::Data(DatasetError::Format { path: path.clone(), msg: e.to_string() })
        })?;
        let id = path.file_stem().expect("filtered by extension").to_string_lossy().into_owned();
        out.push((id, mesh));
    }
    Ok(out)
}

fn procedural_library(n: usize, master_seed: u64) -> Vec<(String, TriangleMesh)> {
    (0..n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(master_seed, STREAM_MESH, i as u64));
            let p = CarParams {
                length: rng.random_range(3.8..5.2),
                width: rng.random_range(1.7..2.05),
                height: rng.random_range(1.35..1.75),
                belt: rng.random_range(0.45..0.62),
                cabin_rear: rng.random_range(0.08..0.18),
                cabin_front: rng.random_range(0.62..0.78),
                roof_inset: rng.random_range(0.05..0.10),
                wheel_radius: rng.random_range(0.28..0.36),
            };
            let mesh = procedural_car(&p).expect("sampling ranges satisfy the shape constraints");
            (format!("car_{i:03}"), mesh)
        })
        .collect()
}

fn mesh_id_for<'a>(rec: &SampleRecord, manifest: &'a SceneManifest) -> Result<&'a str, PipelineError> {
    manifest
        .cars
        .iter()
        // The render subtracts the sensor with this exact expression, so
        // the match is bitwise.
        .find(|c| (c.box3.center - manifest.sensor) == rec.gt_box.center)
        .map(|c| c.mesh_id.as_str())
        .ok_or_else(|| {
            PipelineError::BadConfig("internal: rendered record matches no placement".into())
        })
}

/// Applies a randomly drawn scan pattern; retries a few patterns before
/// giving up on a sample that keeps losing every point.
fn simulate_scan(
    partial: &PointCloud,
    cfg: &RunConfig,
    sample_key: u64,
    min_points: usize,
) -> Result<Option<PointCloud>, PipelineError> {
    let lidar = &cfg.gen.lidar;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_LIDAR, sample_key));
    for _attempt in 0..4 {
        let pick = |set: &[usize], rng: &mut ChaCha8Rng| set[rng.random_range(0..set.len())];
        let pattern = ScanPattern::new(
            pick(&lidar.n_bins_choices, &mut rng),
            pick(&lidar.ring_stride_choices, &mut rng),
            pick(&lidar.point_stride_choices, &mut rng),
            lidar.vfov_deg,
        )?;
        match subsample(partial, &pattern, rng.random()) {
            Ok(cloud) if cloud.len() >= min_points => return Ok(Some(cloud)),
            Ok(_) | Err(LidarError::EmptySelection) => continue,
            Err(e) => return Err(e.into()),
        }
    }
    Ok(None)
}

/// Generates the dataset under `cfg.data_dir`: `scenes/` manifests,
/// `samples/sample_NNNNN/` directories, and `split.json`.
pub fn cmd_gen(cfg: &RunConfig) -> Result<GenSummary, PipelineError> {
    cfg.validate()?;
    let g = &cfg.gen;

    let meshes = match &cfg.mesh_dir {
        Some(dir) => load_mesh_dir(dir)?,
        None => procedural_library(g.n_meshes, cfg.seed),
    };
    if meshes.is_empty() {
        return Err(PipelineError::BadConfig(format!(
            "no .mesh files under {:?}",
            cfg.mesh_dir
        )));
    }

    let mut library: BTreeMap<String, MeshEntry> = BTreeMap::new();
    let mut mesh_dims = BTreeMap::new();
    for (id, mesh) in &meshes {
        let entry = prepare_mesh(mesh, g.complete_views, g.complete_points)?;
        let (mn, mx) = entry.mesh.aabb();
        mesh_dims.insert(id.clone(), mx - mn);
        library.insert(id.clone(), entry);
    }

    // Mesh-level split: a mesh contributes to exactly one side.
    let mut ids: Vec<String> = meshes.iter().map(|(id, _)| id.clone()).collect();
    let mut split_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_SPLIT, 0));
    ids.shuffle(&mut split_rng);
    let mut n_test = (ids.len() as f64 * g.test_mesh_fraction).round() as usize;
    if g.test_mesh_fraction > 0.0 {
        n_test = n_test.clamp(1, ids.len().saturating_sub(1).max(1));
    }
    let test_meshes: Vec<String> = ids[..n_test].to_vec();
    let train_meshes: Vec<String> = ids[n_test..].to_vec();

    let scenes_dir = cfg.data_dir.join("scenes");
    let samples_dir = cfg.data_dir.join("samples");
    fs::create_dir_all(&scenes_dir).map_err(|e| io_err(&scenes_dir, e))?;
    fs::create_dir_all(&samples_dir).map_err(|e| io_err(&samples_dir, e))?;

    let mut split = SplitFile {
        train_meshes: {
            let mut m = train_meshes.clone();
            m.sort();
            m
        },
        test_meshes: {
            let mut m = test_meshes.clone();
            m.sort();
            m
        },
        ..SplitFile::default()
    };

    let mut counter: usize = 0;
    let mut dropped: usize = 0;
    for scene in 0..g.n_scenes {
        let manifest = generate_manifest(
            &g.manifest,
            &mesh_dims,
            derive_seed(cfg.seed, STREAM_SCENE, scene as u64),
        )?;
        manifest.save(&scenes_dir.join(format!("scene_{scene:04}.json")))?;
        let records = crate::synthgen::render_scene(&manifest, &library, &g.grid)?;
        for (idx, mut rec) in records.into_iter().enumerate() {
            let mesh_id = mesh_id_for(&rec, &manifest)?.to_string();
            if g.lidar.enabled {
                let key = ((scene as u64) << 20) | idx as u64;
                match simulate_scan(&rec.partial, cfg, key, g.min_partial_points)? {
                    Some(scan) => rec.partial = scan,
                    None => {
                        dropped += 1;
                        continue;
                    }
                }
            } else if rec.partial.len() < g.min_partial_points {
                dropped += 1;
                continue;
            }
            let name = format!("sample_{counter:05}");
            save_sample(&samples_dir.join(&name), &rec, &mesh_id)?;
            if split.test_meshes.binary_search(&mesh_id).is_ok() {
                split.test_samples.push(name);
            } else {
                split.train_samples.push(name);
            }
            counter += 1;
        }
    }

    split.validate()?;
    save_json(&cfg.data_dir.join("split.json"), &split)?;
    Ok(GenSummary {
        n_meshes: meshes.len(),
        n_samples: counter,
        n_train_samples: split.train_samples.len(),
        n_test_samples: split.test_samples.len(),
        n_dropped: dropped,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::dataset::{load_json, load_sample};
    use crate::synthgen::RayGridConfig;

    /// Small but real generation config used across the pipeline tests.
    pub(crate) fn tiny_run_config(root: &Path) -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.seed = 11;
        cfg.data_dir = root.join("data");
        cfg.out_dir = root.join("out");
        cfg.gen.n_meshes = 3;
        cfg.gen.n_scenes = 4;
        cfg.gen.complete_views = 6;
        cfg.gen.complete_points = 256;
        cfg.gen.test_mesh_fraction = 0.34;
        cfg.gen.min_partial_points = 20;
        cfg.gen.grid = RayGridConfig {
            az_range: (-40.0, 40.0),
            el_range: (-12.0, 4.0),
            step: 0.5,
            include_ground: false,
            ground_half_size: 200.0,
        };
        cfg.gen.manifest.n_cars = (1, 3);
        cfg.gen.manifest.n_poles = (0, 2);
        cfg.gen.manifest.range = (6.0, 25.0);
        cfg.gen.lidar.n_bins_choices = vec![64, 128];
        cfg.gen.lidar.ring_stride_choices = vec![1, 2];
        cfg.gen.lidar.point_stride_choices = vec![1, 2];
        // Tiny network so downstream train/eval tests stay fast.
        cfg.vcn = crate::vcn::VcnConfig::tiny();
        cfg.train.batch_size = 2;
        cfg.train.steps = 6;
        cfg.train.checkpoint_every = 3;
        cfg
    }

    /// Relative path → file bytes for a whole tree.
    pub(crate) fn tree_bytes(root: &Path) -> BTreeMap<String, Vec<u8>> {
        fn walk(dir: &Path, root: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
            for entry in fs::read_dir(dir).unwrap() {
                let path = entry.unwrap().path();
                if path.is_dir() {
                    walk(&path, root, out);
                } else {
                    let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                    out.insert(rel, fs::read(&path).unwrap());
                }
            }
        }
        let mut out = BTreeMap::new();
        walk(root, root, &mut out);
        out
    }

    #[test]
    fn gen_writes_a_loadable_split_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_run_config(dir.path());
        let summary = cmd_gen(&cfg).unwrap();
        assert!(summary.n_samples >= 4, "only {} samples", summary.n_samples);
        assert_eq!(summary.n_samples, summary.n_train_samples + summary.n_test_samples);
        assert!(summary.n_train_samples >= 1);
        assert!(summary.n_test_samples >= 1);

        let split: SplitFile = load_json(&cfg.data_dir.join("split.json")).unwrap();
        split.validate().unwrap();
        for (names, side_meshes) in [
            (&split.train_samples, &split.train_meshes),
            (&split.test_samples, &split.test_meshes),
        ] {
            for name in names {
                let (rec, mesh_id) = load_sample(&cfg.data_dir.join("samples").join(name)).unwrap();
                assert!(side_meshes.contains(&mesh_id), "{name} assigned to the wrong side");
                assert_eq!(rec.complete.len(), cfg.gen.complete_points);
                assert!(rec.partial.len() >= cfg.gen.min_partial_points);
            }
        }
    }

    #[test]
    fn gen_is_byte_identical_per_seed() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let cfg1 = tiny_run_config(d1.path());
        let cfg2 = tiny_run_config(d2.path());
        cmd_gen(&cfg1).unwrap();
        cmd_gen(&cfg2).unwrap();
        assert_eq!(tree_bytes(&cfg1.data_dir), tree_bytes(&cfg2.data_dir));

        let d3 = tempfile::tempdir().unwrap();
        let mut cfg3 = tiny_run_config(d3.path());
        cfg3.seed = 12;
        cmd_gen(&cfg3).unwrap();
        assert_ne!(tree_bytes(&cfg1.data_dir), tree_bytes(&cfg3.data_dir));
    }

    #[test]
    fn gen_reports_malformed_meshes_with_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let mesh_dir = dir.path().join("meshes");
        fs::create_dir_all(&mesh_dir).unwrap();
        fs::write(mesh_dir.join("bad.mesh"), "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2\n").unwrap();
        let mut cfg = tiny_run_config(dir.path());
        cfg.mesh_dir = Some(mesh_dir);
        let err = cmd_gen(&cfg).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bad.mesh") && msg.contains("line"), "{msg}");
        assert_eq!(err.exit_code(), 2);
    }
}
