//! Triangle meshes: strict text IO, procedural shapes, placement.
//!
//! The text format is one `v x y z` line per vertex and one `f i j k`
//! line per triangle (1-based), a strict subset of the common wavefront
//! geometry format. Anything else (besides blanks and `#` comments) is a
//! parse error, and zero-area triangles are dropped at construction.

use super::SynthError;
use crate::geometry::{Box3, Mat3, Vec3};
use std::path::Path;

/// Triangles small enough to count as degenerate (squared doubled area).
const DEGENERATE_AREA2: f64 = 1e-24;

#[derive(Clone, Debug, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[usize; 3]>,
}

impl TriangleMesh {
    /// Validates indices, drops zero-area triangles, requires at least
    /// one triangle to survive.
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[usize; 3]>) -> Result<Self, SynthError> {
        for (ti, t) in triangles.iter().enumerate() {
            for &i in t {
                if i >= vertices.len() {
                    return Err(SynthError::BadMesh(format!(
                        "triangle {ti} references vertex {i}, only {} exist",
                        vertices.len()
                    )));
                }
            }
        }
        if vertices.iter().any(|v| !v.is_finite()) {
            return Err(SynthError::BadMesh("non-finite vertex coordinate".into()));
        }
        let triangles: Vec<[usize; 3]> = triangles
            .into_iter()
            .filter(|&[a, b, c]| {
                let (va, vb, vc) = (vertices[a], vertices[b], vertices[c]);
                (vb - va).cross(vc - va).norm_sq() > DEGENERATE_AREA2
            })
            .collect();
        if triangles.is_empty() {
            return Err(SynthError::BadMesh("no non-degenerate triangles".into()));
        }
        Ok(TriangleMesh { vertices, triangles })
    }

    pub fn tri(&self, i: usize) -> (Vec3, Vec3, Vec3) {
        let [a, b, c] = self.triangles[i];
        (self.vertices[a], self.vertices[b], self.vertices[c])
    }

    /// Axis-aligned bounds over all vertices.
    pub fn aabb(&self) -> (Vec3, Vec3) {
        let mut mn = self.vertices[0];
        let mut mx = self.vertices[0];
        for &v in &self.vertices[1..] {
            mn = mn.min(v);
            mx = mx.max(v);
        }
        (mn, mx)
    }

    pub fn parse(text: &str) -> Result<Self, SynthError> {
        let mut vertices = Vec::new();
        let mut triangles = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut toks = line.split_whitespace();
            let kind = toks.next().expect("non-empty line");
            let rest: Vec<&str> = toks.collect();
            let err = |msg: String| SynthError::Parse { line: i + 1, msg };
            match kind {
                "v" => {
                    if rest.len() != 3 {
                        return Err(err(format!("vertex needs 3 coordinates, got {}", rest.len())));
                    }
                    let mut c = [0.0; 3];
                    for (slot, tok) in c.iter_mut().zip(&rest) {
                        *slot = tok
                            .parse()
                            .map_err(|_| err(format!("bad coordinate {tok:?}")))?;
                    }
                    vertices.push(Vec3::new(c[0], c[1], c[2]));
                }
                "f" => {
                    if rest.len() != 3 {
                        return Err(err(format!("face needs 3 indices, got {}", rest.len())));
                    }
                    let mut t = [0usize; 3];
                    for (slot, tok) in t.iter_mut().zip(&rest) {
                        let one_based: usize = tok
                            .parse()
                            .map_err(|_| err(format!("bad index {tok:?}")))?;
                        if one_based == 0 {
                            return Err(err("face indices are 1-based".into()));
                        }
                        *slot = one_based - 1;
                    }
                    triangles.push(t);
                }
                other => return Err(err(format!("unrecognized record {other:?}"))),
            }
        }
        TriangleMesh::new(vertices, triangles)
    }

    /// Canonical text form: all vertices, then all faces.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for v in &self.vertices {
            out.push_str(&format!("v {} {} {}\n", v.x, v.y, v.z));
        }
        for t in &self.triangles {
            out.push_str(&format!("f {} {} {}\n", t[0] + 1, t[1] + 1, t[2] + 1));
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self, SynthError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), SynthError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    /// Same mesh translated so its AABB center sits at the origin.
    pub fn canonicalized(&self) -> TriangleMesh {
        let (mn, mx) = self.aabb();
        let ctr = (mn + mx) * 0.5;
        TriangleMesh {
            vertices: self.vertices.iter().map(|&v| v - ctr).collect(),
            triangles: self.triangles.clone(),
        }
    }

    /// Places a canonicalized mesh into a world-frame box: anisotropic
    /// scale so the AABB extents equal `b.dims`, yaw, then translate.
    pub fn placed(&self, b: &Box3) -> Result<TriangleMesh, SynthError> {
        let (mn, mx) = self.aabb();
        let ext = mx - mn;
        if !(ext.x > 0.0 && ext.y > 0.0 && ext.z > 0.0) {
            return Err(SynthError::BadMesh("cannot place a flat mesh".into()));
        }
        let scale = Vec3::new(b.dims.x / ext.x, b.dims.y / ext.y, b.dims.z / ext.z);
        let rot = Mat3::rotation_z(b.yaw);
        let vertices = self
            .vertices
            .iter()
            .map(|&v| {
                let s = Vec3::new(v.x * scale.x, v.y * scale.y, v.z * scale.z);
                rot.apply_row(s) + b.center
            })
            .collect();
        Ok(TriangleMesh { vertices, triangles: self.triangles.clone() })
    }
}

/// Axis-aligned box as 12 triangles.
pub fn box_mesh(mn: Vec3, mx: Vec3) -> TriangleMesh {
    let mut m = MeshBuilder::new();
    m.push_box(mn, mx);
    m.build()
}

struct MeshBuilder {
    vertices: Vec<Vec3>,
    triangles: Vec<[usize; 3]>,
}

impl MeshBuilder {
    fn new() -> Self {
        MeshBuilder { vertices: Vec::new(), triangles: Vec::new() }
    }

    fn vert(&mut self, v: Vec3) -> usize {
        self.vertices.push(v);
        self.vertices.len() - 1
    }

    fn quad(&mut self, a: usize, b: usize, c: usize, d: usize) {
        self.triangles.push([a, b, c]);
        self.triangles.push([a, c, d]);
    }

    fn push_box(&mut self, mn: Vec3, mx: Vec3) {
        let v = [
            self.vert(Vec3::new(mn.x, mn.y, mn.z)),
            self.vert(Vec3::new(mx.x, mn.y, mn.z)),
            self.vert(Vec3::new(mx.x, mx.y, mn.z)),
            self.vert(Vec3::new(mn.x, mx.y, mn.z)),
            self.vert(Vec3::new(mn.x, mn.y, mx.z)),
            self.vert(Vec3::new(mx.x, mn.y, mx.z)),
            self.vert(Vec3::new(mx.x, mx.y, mx.z)),
            self.vert(Vec3::new(mn.x, mx.y, mx.z)),
        ];
        self.quad(v[0], v[1], v[2], v[3]); // bottom
        self.quad(v[4], v[5], v[6], v[7]); // top
        self.quad(v[0], v[1], v[5], v[4]); // -y
        self.quad(v[3], v[2], v[6], v[7]); // +y
        self.quad(v[0], v[3], v[7], v[4]); // -x
        self.quad(v[1], v[2], v[6], v[5]); // +x
    }

    /// Prism between two z-parallel rectangles (for slanted cabins).
    #[allow(clippy::too_many_arguments)]
    fn push_frustum(
        &mut self,
        x0b: f64,
        x1b: f64,
        x0t: f64,
        x1t: f64,
        y_half_b: f64,
        y_half_t: f64,
        z0: f64,
        z1: f64,
    ) {
        let v = [
            self.vert(Vec3::new(x0b, -y_half_b, z0)),
            self.vert(Vec3::new(x1b, -y_half_b, z0)),
            self.vert(Vec3::new(x1b, y_half_b, z0)),
            self.vert(Vec3::new(x0b, y_half_b, z0)),
            self.vert(Vec3::new(x0t, -y_half_t, z1)),
            self.vert(Vec3::new(x1t, -y_half_t, z1)),
            self.vert(Vec3::new(x1t, y_half_t, z1)),
            self.vert(Vec3::new(x0t, y_half_t, z1)),
        ];
        self.quad(v[4], v[5], v[6], v[7]); // roof
        self.quad(v[0], v[1], v[5], v[4]); // -y side
        self.quad(v[3], v[2], v[6], v[7]); // +y side
        self.quad(v[1], v[2], v[6], v[5]); // front slant
        self.quad(v[0], v[3], v[7], v[4]); // rear slant
    }

    fn build(self) -> TriangleMesh {
        TriangleMesh::new(self.vertices, self.triangles).expect("builder produces valid meshes")
    }
}

/// Shape knobs for the procedural car. Lengths in meters, fractions of
/// overall height/length where named.
#[derive(Clone, Copy, Debug)]
pub struct CarParams {
    pub length: f64,
    pub width: f64,
    pub height: f64,
    /// Top of the lower body (belt line) as a height fraction.
    pub belt: f64,
    /// Cabin footprint as length fractions, measured from the rear.
    pub cabin_rear: f64,
    pub cabin_front: f64,
    /// Windshield/rear-window slant: roof inset as a length fraction.
    pub roof_inset: f64,
    pub wheel_radius: f64,
}

impl Default for CarParams {
    fn default() -> Self {
        CarParams {
            length: 4.5,
            width: 1.9,
            height: 1.5,
            belt: 0.55,
            cabin_rear: 0.12,
            cabin_front: 0.72,
            roof_inset: 0.08,
            wheel_radius: 0.33,
        }
    }
}

impl CarParams {
    pub fn validate(&self) -> Result<(), SynthError> {
        let ok = self.length > 0.0
            && self.width > 0.0
            && self.height > 0.0
            && (0.3..0.8).contains(&self.belt)
            && self.cabin_rear >= 0.0
            && self.cabin_front + self.roof_inset < 1.0
            && self.cabin_rear + 2.0 * self.roof_inset < self.cabin_front
            && self.wheel_radius > 0.0
            && self.wheel_radius < self.height * self.belt;
        if ok {
            Ok(())
        } else {
            Err(SynthError::BadConfig(format!("implausible car shape {self:?}")))
        }
    }
}

/// Blocky sedan: wheels, lower body, slanted-window cabin. Bottom at
/// z = 0, nose toward +x, AABB exactly length × width × height.
pub fn procedural_car(p: &CarParams) -> Result<TriangleMesh, SynthError> {
    p.validate()?;
    let (l, w, h) = (p.length, p.width, p.height);
    let half_l = l / 2.0;
    let belt_z = p.belt * h;
    let mut m = MeshBuilder::new();
    // Lower body, floating at half wheel radius like a real rocker panel.
    m.push_box(
        Vec3::new(-half_l, -w / 2.0, p.wheel_radius * 0.6),
        Vec3::new(half_l, w / 2.0, belt_z),
    );
    // Cabin with slanted front/rear glass, slightly inset in width.
    let cab_x0 = -half_l + p.cabin_rear * l;
    let cab_x1 = -half_l + p.cabin_front * l;
    let inset = p.roof_inset * l;
    m.push_frustum(
        cab_x0,
        cab_x1,
        cab_x0 + inset,
        cab_x1 - inset,
        w * 0.46,
        w * 0.42,
        belt_z,
        h,
    );
    // Wheels as boxes reaching the ground.
    let wr = p.wheel_radius;
    let axle = [half_l * 0.62, -half_l * 0.62];
    for ax in axle {
        for side in [-1.0, 1.0] {
            let yc = side * (w / 2.0 - 0.12 * w);
            m.push_box(
                Vec3::new(ax - wr, yc - 0.09 * w, 0.0),
                Vec3::new(ax + wr, yc + 0.09 * w, 2.0 * wr),
            );
        }
    }
    Ok(m.build())
}

/// Octagonal prism standing on z = 0 at the XY origin: a street pole.
pub fn pole_mesh(radius: f64, height: f64) -> Result<TriangleMesh, SynthError> {
    if !(radius > 0.0 && height > 0.0) {
        return Err(SynthError::BadConfig(format!(
            "pole needs positive radius and height, got {radius} x {height}"
        )));
    }
    const SIDES: usize = 8;
    let mut m = MeshBuilder::new();
    let ring = |m: &mut MeshBuilder, z: f64| -> Vec<usize> {
        (0..SIDES)
            .map(|i| {
                let a = i as f64 / SIDES as f64 * std::f64::consts::TAU;
                m.vert(Vec3::new(radius * a.cos(), radius * a.sin(), z))
            })
            .collect()
    };
    let bot = ring(&mut m, 0.0);
    let top = ring(&mut m, height);
    for i in 0..SIDES {
        let j = (i + 1) % SIDES;
        m.quad(bot[i], bot[j], top[j], top[i]);
    }
    let apex = m.vert(Vec3::new(0.0, 0.0, height));
    for i in 0..SIDES {
        let j = (i + 1) % SIDES;
        m.triangles.push([top[i], top[j], apex]);
    }
    Ok(m.build())
}

/// Square patch of ground at z = 0 spanning ±half_size.
pub fn ground_quad(half_size: f64) -> TriangleMesh {
    let mut m = MeshBuilder::new();
    let v = [
        m.vert(Vec3::new(-half_size, -half_size, 0.0)),
        m.vert(Vec3::new(half_size, -half_size, 0.0)),
        m.vert(Vec3::new(half_size, half_size, 0.0)),
        m.vert(Vec3::new(-half_size, half_size, 0.0)),
    ];
    m.quad(v[0], v[1], v[2], v[3]);
    m.build()
}

/// Latitude/longitude sphere centered at the origin (test geometry).
pub fn uv_sphere(radius: f64, stacks: usize, slices: usize) -> TriangleMesh {
    assert!(stacks >= 2 && slices >= 3);
    let mut m = MeshBuilder::new();
    let mut rows: Vec<Vec<usize>> = Vec::new();
    for i in 0..=stacks {
        let phi = std::f64::consts::PI * (i as f64 / stacks as f64 - 0.5);
        let mut row = Vec::new();
        for j in 0..slices {
            let theta = std::f64::consts::TAU * j as f64 / slices as f64;
            row.push(m.vert(Vec3::new(
                radius * phi.cos() * theta.cos(),
                radius * phi.cos() * theta.sin(),
                radius * phi.sin(),
            )));
        }
        rows.push(row);
    }
    for i in 0..stacks {
        for j in 0..slices {
            let jn = (j + 1) % slices;
            let (a, b, c, d) = (rows[i][j], rows[i][jn], rows[i + 1][jn], rows[i + 1][j]);
            m.triangles.push([a, b, c]);
            m.triangles.push([a, c, d]);
        }
    }
    // Pole rows collapse to points; degenerate triangles are filtered.
    m.build()
}
