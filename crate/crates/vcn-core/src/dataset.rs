//! On-disk formats: ascii PLY point clouds, JSON sample labels, the
//! per-sample directory layout, train/test split files, and point-index
//! masks. Writers are canonical (fixed field order, shortest float
//! representation that round-trips), so identical data means identical
//! bytes; readers are strict and report the offending file and line.

use crate::geometry::{Box3, Frame, GeometryError, Mat3, PointCloud, RigidPose, Rotation3, Vec3};
use crate::synthgen::SampleRecord;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

fn io_err(path: &Path, source: io::Error) -> DatasetError {
    DatasetError::Io { path: path.to_path_buf(), source }
}

// ---------------------------------------------------------------- PLY --

/// Serializes a cloud as ascii PLY with float properties x, y, z.
pub fn ply_string(cloud: &PointCloud) -> String {
    let mut out = String::new();
    out.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(out, "element vertex {}", cloud.points.len());
    out.push_str("property float x\nproperty float y\nproperty float z\nend_header\n");
    for p in &cloud.points {
        let _ = writeln!(out, "{} {} {}", p.x, p.y, p.z);
    }
    out
}

pub fn write_ply(path: &Path, cloud: &PointCloud) -> Result<(), DatasetError> {
    fs::write(path, ply_string(cloud)).map_err(|e| io_err(path, e))
}

/// Strict ascii PLY reader for x/y/z vertex clouds. Comment lines are
/// allowed in the header; trailing whitespace and trailing blank lines
/// are tolerated; everything else is an error naming the line.
pub fn parse_ply(text: &str, frame: Frame, origin: &Path) -> Result<PointCloud, DatasetError> {
    let fail = |line: usize, msg: String| DatasetError::Parse {
        path: origin.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end()));
    let mut next_content = |skip_comments: bool| loop {
        match lines.next() {
            None => return None,
            Some((_, l)) if skip_comments && l.starts_with("comment") => continue,
            Some(pair) => return Some(pair),
        }
    };

    let (n1, l1) = next_content(false).ok_or_else(|| fail(1, "empty file".into()))?;
    if l1 != "ply" {
        return Err(fail(n1, format!("expected 'ply' magic, got '{l1}'")));
    }
    let (n2, l2) = next_content(true).ok_or_else(|| fail(n1, "truncated header".into()))?;
    if l2 != "format ascii 1.0" {
        return Err(fail(n2, format!("expected 'format ascii 1.0', got '{l2}'")));
    }
    let (n3, l3) = next_content(true).ok_or_else(|| fail(n2, "truncated header".into()))?;
    let count: usize = l3
        .strip_prefix("element vertex ")
        .and_then(|c| c.trim().parse().ok())
        .ok_or_else(|| fail(n3, format!("expected 'element vertex N', got '{l3}'")))?;
    for want in ["x", "y", "z"] {
        let (n, l) = next_content(true).ok_or_else(|| fail(n3, "truncated header".into()))?;
        let ok = l == format!("property float {want}") || l == format!("property double {want}");
        if !ok {
            return Err(fail(n, format!("expected 'property float {want}', got '{l}'")));
        }
    }
    let (ne, le) = next_content(true).ok_or_else(|| fail(n3, "truncated header".into()))?;
    if le != "end_header" {
        return Err(fail(ne, format!("expected 'end_header', got '{le}'")));
    }

    let mut points = Vec::with_capacity(count);
    for _ in 0..count {
        let (n, l) = next_content(false)
            .ok_or_else(|| fail(ne, format!("expected {count} vertices, file ended early")))?;
        let mut it = l.split_ascii_whitespace();
        let mut coord = |axis: &str| -> Result<f64, DatasetError> {
            let tok = it
                .next()
                .ok_or_else(|| fail(n, format!("missing {axis} coordinate")))?;
            let v: f64 = tok
                .parse()
                .map_err(|_| fail(n, format!("bad {axis} coordinate '{tok}'")))?;
            if !v.is_finite() {
                return Err(fail(n, format!("non-finite {axis} coordinate '{tok}'")));
            }
            Ok(v)
        };
        let (x, y, z) = (coord("x")?, coord("y")?, coord("z")?);
        if let Some(extra) = it.next() {
            return Err(fail(n, format!("unexpected token '{extra}' after z")));
        }
        points.push(Vec3::new(x, y, z));
    }
    if let Some((n, l)) = lines.find(|(_, l)| !l.trim().is_empty()) {
        return Err(fail(n, format!("unexpected content after {count} vertices: '{l}'")));
    }
    Ok(PointCloud::new(points, frame))
}

pub fn read_ply(path: &Path, frame: Frame) -> Result<PointCloud, DatasetError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_ply(&text, frame, path)
}

// ------------------------------------------------------------- labels --

/// Viewer → canonical map as stored on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseLabel {
    /// Row-major rotation entries.
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxLabel {
    pub center: [f64; 3],
    pub dims: [f64; 3],
    pub yaw: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleLabel {
    pub pose: PoseLabel,
    pub bbox: BoxLabel,
    pub mesh_id: String,
}

impl SampleLabel {
    pub fn from_record(rec: &SampleRecord, mesh_id: &str) -> SampleLabel {
        SampleLabel {
            pose: PoseLabel {
                rotation: rec.gt_pose.rotation.matrix().m,
                translation: rec.gt_pose.translation.to_array(),
            },
            bbox: BoxLabel {
                center: rec.gt_box.center.to_array(),
                dims: rec.gt_box.dims.to_array(),
                yaw: rec.gt_box.yaw,
            },
            mesh_id: mesh_id.to_string(),
        }
    }

    /// Rebuilds the pose, re-validating the rotation entries.
    pub fn to_pose(&self) -> Result<RigidPose, DatasetError> {
        let rot = Rotation3::try_new(Mat3 { m: self.pose.rotation })?;
        Ok(RigidPose::new(rot, Vec3::from_array(self.pose.translation)))
    }

    pub fn to_box(&self) -> Result<Box3, DatasetError> {
        Ok(Box3::new(
            Vec3::from_array(self.bbox.center),
            Vec3::from_array(self.bbox.dims),
            self.bbox.yaw,
        )?)
    }
}

// --------------------------------------------------------- JSON files --

/// Canonical JSON writer: pretty-printed, trailing newline.
pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<(), DatasetError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| DatasetError::Format {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T, DatasetError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| DatasetError::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        msg: e.to_string(),
    })
}

// -------------------------------------------------------- sample dirs --

/// Writes `partial.ply`, `complete.ply`, and `label.json` into `dir`.
pub fn save_sample(dir: &Path, rec: &SampleRecord, mesh_id: &str) -> Result<(), DatasetError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    write_ply(&dir.join("partial.ply"), &rec.partial)?;
    write_ply(&dir.join("complete.ply"), &rec.complete)?;
    save_json(&dir.join("label.json"), &SampleLabel::from_record(rec, mesh_id))
}

/// Reads a sample directory back; returns the record and its mesh id.
pub fn load_sample(dir: &Path) -> Result<(SampleRecord, String), DatasetError> {
    let partial = read_ply(&dir.join("partial.ply"), Frame::ViewerCentred)?;
    if partial.is_empty() {
        return Err(DatasetError::Format {
            path: dir.join("partial.ply"),
            msg: "partial cloud must have at least one point".into(),
        });
    }
    let complete = read_ply(&dir.join("complete.ply"), Frame::ViewerCentred)?;
    let label: SampleLabel = load_json(&dir.join("label.json"))?;
    let rec = SampleRecord {
        partial,
        complete,
        gt_pose: label.to_pose()?,
        gt_box: label.to_box()?,
    };
    Ok((rec, label.mesh_id))
}

// -------------------------------------------------------------- split --

/// Train/test partition: meshes are assigned to exactly one side, and
/// every sample directory is listed under its mesh's side.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitFile {
    pub train_meshes: Vec<String>,
    pub test_meshes: Vec<String>,
    /// Sample directory names relative to the dataset root.
    pub train_samples: Vec<String>,
    pub test_samples: Vec<String>,
}

impl SplitFile {
    /// No mesh may appear on both sides.
    pub fn validate(&self) -> Result<(), DatasetError> {
        for m in &self.train_meshes {
            if self.test_meshes.contains(m) {
                return Err(DatasetError::Format {
                    path: PathBuf::from("split.json"),
                    msg: format!("mesh '{m}' appears in both train and test"),
                });
            }
        }
        Ok(())
    }
}

// -------------------------------------------------------------- masks --

/// Point-index list naming one object inside a larger scene cloud.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectMask {
    pub name: String,
    pub indices: Vec<usize>,
}

/// Stand-in for an instance segmentation result: per-object index lists
/// over one scene cloud.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MaskFile {
    pub objects: Vec<ObjectMask>,
}

impl MaskFile {
    /// Every index must address a point of the scene cloud.
    pub fn validate(&self, n_points: usize, origin: &Path) -> Result<(), DatasetError> {
        for obj in &self.objects {
            if let Some(&bad) = obj.indices.iter().find(|&&i| i >= n_points) {
                return Err(DatasetError::Format {
                    path: origin.to_path_buf(),
                    msg: format!(
                        "mask '{}' references point {bad}, but the cloud has {n_points} points",
                        obj.name
                    ),
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vcn::testutil::{random_cloud, toy_sample};

    #[test]
    fn ply_round_trips_byte_identically() {
        let cloud = random_cloud(37, Frame::ViewerCentred, 91, 25.0);
        let text = ply_string(&cloud);
        let back = parse_ply(&text, Frame::ViewerCentred, Path::new("mem")).unwrap();
        assert_eq!(back, cloud);
        assert_eq!(ply_string(&back), text);
    }

    #[test]
    fn ply_accepts_comments_and_trailing_whitespace() {
        let text = "ply\nformat ascii 1.0\ncomment made by hand\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 2 3   \n4 5 6\n\n  \n";
        let cloud = parse_ply(text, Frame::ViewerCentred, Path::new("mem")).unwrap();
        assert_eq!(cloud.points.len(), 2);
        assert_eq!(cloud.points[1], Vec3::new(4.0, 5.0, 6.0));
    }

    #[test]
    fn ply_reader_names_the_offending_line() {
        let head = "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n";
        let cases: Vec<(String, usize, &str)> = vec![
            ("nonsense\n".into(), 1, "magic"),
            ("ply\nformat binary 1.0\n".into(), 2, "ascii"),
            (format!("{head}1 2 3\n"), 7, "ended early"),
            (format!("{head}1 2 3\n4 five 6\n"), 9, "bad y"),
            (format!("{head}1 2 3\n4 5 6 7\n"), 9, "after z"),
            (format!("{head}1 2 3\n4 5 6\n7 8 9\n"), 10, "after 2 vertices"),
            (format!("{head}1 2 3\n4 5 inf\n"), 9, "non-finite z"),
        ];
        for (text, line, needle) in cases {
            let err = parse_ply(&text, Frame::ViewerCentred, Path::new("bad.ply")).unwrap_err();
            let msg = err.to_string();
            assert!(
                msg.contains(&format!("bad.ply:{line}:")) && msg.contains(needle),
                "wanted line {line} and '{needle}' in: {msg}"
            );
        }
    }

    #[test]
    fn empty_cloud_round_trips() {
        let cloud = PointCloud::new(Vec::new(), Frame::ViewerCentred);
        let text = ply_string(&cloud);
        let back = parse_ply(&text, Frame::ViewerCentred, Path::new("mem")).unwrap();
        assert!(back.is_empty());
    }

    #[test]
    fn label_rebuilds_pose_and_box_exactly() {
        let sample = toy_sample();
        let label = SampleLabel::from_record(&sample, "toy");
        assert_eq!(label.to_pose().unwrap(), sample.gt_pose);
        assert_eq!(label.to_box().unwrap(), sample.gt_box);
    }

    #[test]
    fn label_rejects_a_tampered_rotation() {
        let sample = toy_sample();
        let mut label = SampleLabel::from_record(&sample, "toy");
        label.pose.rotation[0][0] = 2.0;
        assert!(matches!(
            label.to_pose(),
            Err(DatasetError::Geometry(GeometryError::NotARotation { .. }))
        ));
    }

    #[test]
    fn sample_directory_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let sample = toy_sample();
        let path = dir.path().join("sample_000");
        save_sample(&path, &sample, "toy_mesh").unwrap();
        let (back, mesh_id) = load_sample(&path).unwrap();
        assert_eq!(mesh_id, "toy_mesh");
        assert_eq!(back.partial, sample.partial);
        assert_eq!(back.complete, sample.complete);
        assert_eq!(back.gt_pose, sample.gt_pose);
        assert_eq!(back.gt_box, sample.gt_box);
    }

    #[test]
    fn split_rejects_meshes_on_both_sides() {
        let split = SplitFile {
            train_meshes: vec!["a".into(), "b".into()],
            test_meshes: vec!["b".into()],
            train_samples: vec![],
            test_samples: vec![],
        };
        let err = split.validate().unwrap_err();
        assert!(err.to_string().contains("'b'"));
        let ok = SplitFile {
            train_meshes: vec!["a".into()],
            test_meshes: vec!["c".into()],
            ..SplitFile::default()
        };
        assert!(ok.validate().is_ok());
    }

    #[test]
    fn masks_validate_their_index_ranges() {
        let masks = MaskFile {
            objects: vec![ObjectMask { name: "car_1".into(), indices: vec![0, 9] }],
        };
        assert!(masks.validate(10, Path::new("m.json")).is_ok());
        let err = masks.validate(9, Path::new("m.json")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("car_1") && msg.contains('9'), "{msg}");
    }

    #[test]
    fn json_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("split.json");
        let split = SplitFile {
            train_meshes: vec!["m0".into()],
            test_meshes: vec!["m1".into()],
            train_samples: vec!["s0".into(), "s1".into()],
            test_samples: vec!["s2".into()],
        };
        save_json(&path, &split).unwrap();
        let back: SplitFile = load_json(&path).unwrap();
        assert_eq!(back, split);
        let missing: Result<SplitFile, _> = load_json(&dir.path().join("nope.json"));
        assert!(matches!(missing, Err(DatasetError::Io { .. })));
    }
}
