//! Triangle meshes, procedural primitives and ASCII OBJ I/O.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageio;

/// Triangle mesh centred at the origin (bounding-box centre).
#[derive(Debug, Clone)]
pub struct TriangleMesh {
    vertices: Vec<Vector3<f64>>,
    faces: Vec<[usize; 3]>,
    radius: f64,
    edges: Vec<MeshEdge>,
}

/// An undirected edge and the vertex opposite to it in each incident face.
#[derive(Debug, Clone)]
pub struct MeshEdge {
    pub a: usize,
    pub b: usize,
    pub opposite: Vec<usize>,
}

impl TriangleMesh {
    /// Validates indices, drops faces with area below 1e-12 and recentres
    /// the mesh on its bounding-box centre.
    pub fn new(mut vertices: Vec<Vector3<f64>>, faces: Vec<[usize; 3]>) -> Result<Self> {
        if vertices.is_empty() {
            return Err(Error::InvalidMesh("no vertices".into()));
        }
        if vertices.iter().any(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidMesh("non-finite vertex".into()));
        }
        if let Some(f) = faces.iter().find(|f| f.iter().any(|&i| i >= vertices.len())) {
            return Err(Error::InvalidMesh(format!(
                "face {f:?} indexes past {} vertices",
                vertices.len()
            )));
        }
        let faces: Vec<[usize; 3]> = faces
            .into_iter()
            .filter(|f| {
                let n = (vertices[f[1]] - vertices[f[0]]).cross(&(vertices[f[2]] - vertices[f[0]]));
                0.5 * n.norm() >= 1e-12
            })
            .collect();
        if faces.is_empty() {
            return Err(Error::InvalidMesh("no non-degenerate faces".into()));
        }

        let mut lo = vertices[0];
        let mut hi = vertices[0];
        for v in &vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        let centre = (lo + hi) * 0.5;
        for v in vertices.iter_mut() {
            *v -= centre;
        }
        let radius = vertices.iter().map(|v| v.norm()).fold(0.0, f64::max);
        let edges = build_edges(&faces);
        Ok(Self {
            vertices,
            faces,
            radius,
            edges,
        })
    }

    pub fn vertices(&self) -> &[Vector3<f64>] {
        &self.vertices
    }
    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }
    pub fn edges(&self) -> &[MeshEdge] {
        &self.edges
    }

    /// Bounding-sphere radius about the origin.
    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn scaled(&self, k: f64) -> Result<Self> {
        Self::new(self.vertices.iter().map(|v| v * k).collect(), self.faces.clone())
    }

    /// Signed volume; positive for closed meshes with outward winding.
    pub fn signed_volume(&self) -> f64 {
        self.faces
            .iter()
            .map(|f| self.vertices[f[0]].dot(&self.vertices[f[1]].cross(&self.vertices[f[2]])) / 6.0)
            .sum()
    }

    pub fn to_obj(&self) -> String {
        let mut s = String::new();
        for v in &self.vertices {
            let _ = writeln!(s, "v {} {} {}", v.x, v.y, v.z);
        }
        for f in &self.faces {
            let _ = writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
        }
        s
    }

    pub fn save_obj(&self, path: &Path) -> Result<()> {
        imageio::write_text(path, &self.to_obj())
    }

    /// Parse `v` and `f` records; polygons are fan-triangulated and
    /// `v/vt/vn` index forms keep the vertex index only.
    pub fn parse_obj(text: &str, origin: &Path) -> Result<Self> {
        let mut vertices = Vec::new();
        let mut faces = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let mut it = line.split_whitespace();
            let bad = |m: &str| Error::format(origin, format!("line {}: {m}", lineno + 1));
            match it.next() {
                Some("v") => {
                    let c: Vec<f64> = it
                        .take(3)
                        .map(|t| t.parse::<f64>().map_err(|_| bad("bad vertex coordinate")))
                        .collect::<Result<_>>()?;
                    if c.len() != 3 {
                        return Err(bad("vertex needs three coordinates"));
                    }
                    vertices.push(Vector3::new(c[0], c[1], c[2]));
                }
                Some("f") => {
                    let idx: Vec<usize> = it
                        .map(|t| {
                            let raw: i64 = t
                                .split('/')
                                .next()
                                .and_then(|s| s.parse().ok())
                                .ok_or_else(|| bad("bad face index"))?;
                            let n = vertices.len() as i64;
                            let i = if raw < 0 { n + raw } else { raw - 1 };
                            if i < 0 {
                                return Err(bad("face index out of range"));
                            }
                            Ok(i as usize)
                        })
                        .collect::<Result<_>>()?;
                    if idx.len() < 3 {
                        return Err(bad("face needs at least three vertices"));
                    }
                    for k in 1..idx.len() - 1 {
                        faces.push([idx[0], idx[k], idx[k + 1]]);
                    }
                }
                _ => {}
            }
        }
        Self::new(vertices, faces)
    }

    pub fn load_obj(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_obj(&text, path)
    }
}

fn build_edges(faces: &[[usize; 3]]) -> Vec<MeshEdge> {
    let mut map: HashMap<(usize, usize), usize> = HashMap::new();
    let mut edges: Vec<MeshEdge> = Vec::new();
    for f in faces {
        for k in 0..3 {
            let (a, b, c) = (f[k], f[(k + 1) % 3], f[(k + 2) % 3]);
            let key = (a.min(b), a.max(b));
            let idx = *map.entry(key).or_insert_with(|| {
                edges.push(MeshEdge {
                    a: key.0,
                    b: key.1,
                    opposite: Vec::with_capacity(2),
                });
                edges.len() - 1
            });
            edges[idx].opposite.push(c);
        }
    }
    edges
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrimitiveKind {
    Box,
    Cylinder,
    Icosphere,
    Capsule,
}

/// Rotational symmetry of a primitive about the world Y axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum YawSymmetry {
    /// Invariant under yaw rotations by `2π / n`.
    Discrete(u32),
    /// Invariant under every yaw rotation.
    Continuous,
}

impl YawSymmetry {
    /// Smallest yaw difference between `a` and any symmetry-equivalent of `b`.
    pub fn yaw_error(&self, a: f64, b: f64) -> f64 {
        match *self {
            YawSymmetry::Continuous => 0.0,
            YawSymmetry::Discrete(n) => {
                let period = 2.0 * std::f64::consts::PI / n.max(1) as f64;
                let e = (a - b).rem_euclid(period);
                e.min(period - e)
            }
        }
    }

    /// Symmetry-equivalent of `pred` closest to `truth`.
    pub fn align_yaw(&self, pred: f64, truth: f64) -> f64 {
        match *self {
            YawSymmetry::Continuous => truth,
            YawSymmetry::Discrete(n) => {
                let period = 2.0 * std::f64::consts::PI / n.max(1) as f64;
                let e = (pred - truth).rem_euclid(period);
                let e = if e > period / 2.0 { e - period } else { e };
                crate::camera::wrap_angle(truth + e)
            }
        }
    }
}

/// Declarative description of a procedural primitive.
///
/// `dims`: box `[w, h, d]`, cylinder `[radius, height]`, icosphere
/// `[radius]`, capsule `[radius, straight_height]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrimitiveSpec {
    pub kind: PrimitiveKind,
    pub dims: Vec<f64>,
    #[serde(default)]
    pub subdivisions: u32,
    /// Rescale so the bounding-sphere radius is 1.
    #[serde(default = "default_true")]
    pub unit_radius: bool,
}

fn default_true() -> bool {
    true
}

impl PrimitiveSpec {
    pub fn new(kind: PrimitiveKind, dims: &[f64], subdivisions: u32) -> Self {
        Self {
            kind,
            dims: dims.to_vec(),
            subdivisions,
            unit_radius: true,
        }
    }

    pub fn build(&self) -> Result<TriangleMesh> {
        let mesh = make_primitive(self.kind, &self.dims, self.subdivisions)?;
        if self.unit_radius {
            let r = mesh.radius();
            mesh.scaled(1.0 / r)
        } else {
            Ok(mesh)
        }
    }

    pub fn yaw_symmetry(&self) -> YawSymmetry {
        match self.kind {
            PrimitiveKind::Box => {
                if (self.dims[0] - self.dims[2]).abs() < 1e-12 {
                    YawSymmetry::Discrete(4)
                } else {
                    YawSymmetry::Discrete(2)
                }
            }
            _ => YawSymmetry::Continuous,
        }
    }
}

/// Watertight primitive at its natural size (see [`PrimitiveSpec`] for the
/// meaning of `params`). Use [`PrimitiveSpec::build`] for unit-radius output.
pub fn make_primitive(kind: PrimitiveKind, params: &[f64], subdivisions: u32) -> Result<TriangleMesh> {
    let expected = match kind {
        PrimitiveKind::Box => 3,
        PrimitiveKind::Cylinder | PrimitiveKind::Capsule => 2,
        PrimitiveKind::Icosphere => 1,
    };
    if params.len() != expected {
        return Err(Error::BadParams(format!(
            "{kind:?} takes {expected} dimensions, got {}",
            params.len()
        )));
    }
    if params.iter().any(|&p| !(p > 0.0 && p.is_finite())) {
        return Err(Error::BadParams(format!("dimensions must be positive, got {params:?}")));
    }
    if subdivisions > 4 {
        return Err(Error::BadParams(format!("subdivisions must be <= 4, got {subdivisions}")));
    }
    let (v, f) = match kind {
        PrimitiveKind::Box => {
            let (v, f) = unit_box(params[0], params[1], params[2]);
            subdivide(v, f, subdivisions, None)
        }
        PrimitiveKind::Cylinder => cylinder(params[0], params[1], 8 << subdivisions),
        PrimitiveKind::Capsule => capsule(params[0], params[1], 8 << subdivisions, 2 << subdivisions),
        PrimitiveKind::Icosphere => {
            let (v, f) = icosahedron();
            let (v, f) = subdivide(v, f, subdivisions, Some(1.0));
            (v.into_iter().map(|p| p * params[0]).collect(), f)
        }
    };
    TriangleMesh::new(v, f)
}

type Geometry = (Vec<Vector3<f64>>, Vec<[usize; 3]>);

fn unit_box(w: f64, h: f64, d: f64) -> Geometry {
    let (x, y, z) = (w / 2.0, h / 2.0, d / 2.0);
    let v = vec![
        Vector3::new(-x, -y, -z),
        Vector3::new(x, -y, -z),
        Vector3::new(x, y, -z),
        Vector3::new(-x, y, -z),
        Vector3::new(-x, -y, z),
        Vector3::new(x, -y, z),
        Vector3::new(x, y, z),
        Vector3::new(-x, y, z),
    ];
    let f = vec![
        [0, 2, 1],
        [0, 3, 2],
        [4, 5, 6],
        [4, 6, 7],
        [0, 1, 5],
        [0, 5, 4],
        [3, 7, 6],
        [3, 6, 2],
        [0, 4, 7],
        [0, 7, 3],
        [1, 2, 6],
        [1, 6, 5],
    ];
    (v, f)
}

fn icosahedron() -> Geometry {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let v: Vec<Vector3<f64>> = [
        (-1.0, t, 0.0),
        (1.0, t, 0.0),
        (-1.0, -t, 0.0),
        (1.0, -t, 0.0),
        (0.0, -1.0, t),
        (0.0, 1.0, t),
        (0.0, -1.0, -t),
        (0.0, 1.0, -t),
        (t, 0.0, -1.0),
        (t, 0.0, 1.0),
        (-t, 0.0, -1.0),
        (-t, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vector3::new(x, y, z).normalize())
    .collect();
    let f = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    (v, f)
}

/// Midpoint subdivision (1 → 4 triangles) with shared edge midpoints;
/// optionally projects new vertices onto a sphere of the given radius.
fn subdivide(mut v: Vec<Vector3<f64>>, mut f: Vec<[usize; 3]>, levels: u32, sphere: Option<f64>) -> Geometry {
    for _ in 0..levels {
        let mut mid: HashMap<(usize, usize), usize> = HashMap::new();
        let mut next = Vec::with_capacity(f.len() * 4);
        let mut midpoint = |a: usize, b: usize, v: &mut Vec<Vector3<f64>>| -> usize {
            *mid.entry((a.min(b), a.max(b))).or_insert_with(|| {
                let mut p = (v[a] + v[b]) * 0.5;
                if let Some(r) = sphere {
                    p = p.normalize() * r;
                }
                v.push(p);
                v.len() - 1
            })
        };
        for [a, b, c] in f {
            let ab = midpoint(a, b, &mut v);
            let bc = midpoint(b, c, &mut v);
            let ca = midpoint(c, a, &mut v);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        f = next;
    }
    (v, f)
}

fn ring(v: &mut Vec<Vector3<f64>>, y: f64, r: f64, segs: usize) -> usize {
    let start = v.len();
    for k in 0..segs {
        let a = 2.0 * std::f64::consts::PI * k as f64 / segs as f64;
        v.push(Vector3::new(r * a.cos(), y, r * a.sin()));
    }
    start
}

/// Quads between two rings; `upper` sits above `lower`.
fn stitch(f: &mut Vec<[usize; 3]>, upper: usize, lower: usize, segs: usize) {
    for k in 0..segs {
        let k1 = (k + 1) % segs;
        f.push([upper + k, upper + k1, lower + k1]);
        f.push([upper + k, lower + k1, lower + k]);
    }
}

fn fan_top(f: &mut Vec<[usize; 3]>, apex: usize, ring: usize, segs: usize) {
    for k in 0..segs {
        f.push([apex, ring + (k + 1) % segs, ring + k]);
    }
}

fn fan_bottom(f: &mut Vec<[usize; 3]>, apex: usize, ring: usize, segs: usize) {
    for k in 0..segs {
        f.push([apex, ring + k, ring + (k + 1) % segs]);
    }
}

fn cylinder(r: f64, h: f64, segs: usize) -> Geometry {
    let mut v = Vec::new();
    let mut f = Vec::new();
    let top = ring(&mut v, h / 2.0, r, segs);
    let bot = ring(&mut v, -h / 2.0, r, segs);
    v.push(Vector3::new(0.0, h / 2.0, 0.0));
    v.push(Vector3::new(0.0, -h / 2.0, 0.0));
    let (tc, bc) = (v.len() - 2, v.len() - 1);
    stitch(&mut f, top, bot, segs);
    fan_top(&mut f, tc, top, segs);
    fan_bottom(&mut f, bc, bot, segs);
    (v, f)
}

fn capsule(r: f64, h: f64, segs: usize, rings: usize) -> Geometry {
    let mut v = Vec::new();
    let mut f = Vec::new();
    v.push(Vector3::new(0.0, h / 2.0 + r, 0.0));
    let top_pole = 0;
    let mut ring_starts = Vec::new();
    for i in 1..=rings {
        let th = std::f64::consts::FRAC_PI_2 * i as f64 / rings as f64;
        ring_starts.push(ring(&mut v, h / 2.0 + r * th.cos(), r * th.sin(), segs));
    }
    for i in 0..=rings - 1 {
        let th = std::f64::consts::FRAC_PI_2 * (1.0 + i as f64 / rings as f64);
        ring_starts.push(ring(&mut v, -h / 2.0 + r * th.cos(), r * th.sin(), segs));
    }
    v.push(Vector3::new(0.0, -h / 2.0 - r, 0.0));
    let bot_pole = v.len() - 1;
    fan_top(&mut f, top_pole, ring_starts[0], segs);
    for w in ring_starts.windows(2) {
        stitch(&mut f, w[0], w[1], segs);
    }
    fan_bottom(&mut f, bot_pole, *ring_starts.last().unwrap(), segs);
    (v, f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn euler_characteristic(m: &TriangleMesh) -> i64 {
        let mut edges = HashSet::new();
        for f in m.faces() {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                edges.insert((a.min(b), a.max(b)));
            }
        }
        m.vertices().len() as i64 - edges.len() as i64 + m.faces().len() as i64
    }

    fn all_specs() -> Vec<PrimitiveSpec> {
        let mut v = Vec::new();
        for s in 0..3 {
            v.push(PrimitiveSpec::new(PrimitiveKind::Box, &[1.0, 0.6, 1.4], s));
            v.push(PrimitiveSpec::new(PrimitiveKind::Cylinder, &[0.5, 1.2], s));
            v.push(PrimitiveSpec::new(PrimitiveKind::Icosphere, &[2.0], s));
            v.push(PrimitiveSpec::new(PrimitiveKind::Capsule, &[0.4, 0.8], s));
        }
        v
    }

    #[test]
    fn topology_counts() {
        let b = make_primitive(PrimitiveKind::Box, &[1.0, 1.0, 1.0], 0).unwrap();
        assert_eq!((b.vertices().len(), b.faces().len()), (8, 12));
        let s = make_primitive(PrimitiveKind::Icosphere, &[1.0], 0).unwrap();
        assert_eq!((s.vertices().len(), s.faces().len()), (12, 20));
    }

    #[test]
    fn primitives_are_closed_outward_and_unit_radius() {
        for spec in all_specs() {
            let m = spec.build().unwrap();
            assert_eq!(euler_characteristic(&m), 2, "{spec:?}");
            assert!(m.edges().iter().all(|e| e.opposite.len() == 2), "{spec:?} not watertight");
            assert!(m.signed_volume() > 0.0, "{spec:?} winding");
            assert!((m.radius() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn bad_params() {
        assert!(matches!(make_primitive(PrimitiveKind::Box, &[1.0, 0.0, 1.0], 0), Err(Error::BadParams(_))));
        assert!(matches!(make_primitive(PrimitiveKind::Cylinder, &[1.0], 0), Err(Error::BadParams(_))));
        assert!(matches!(make_primitive(PrimitiveKind::Icosphere, &[1.0], 5), Err(Error::BadParams(_))));
    }

    #[test]
    fn obj_round_trip_and_validation() {
        let m = PrimitiveSpec::new(PrimitiveKind::Capsule, &[0.4, 0.8], 0).build().unwrap();
        let back = TriangleMesh::parse_obj(&m.to_obj(), Path::new("mem")).unwrap();
        assert_eq!(back.faces(), m.faces());
        for (a, b) in back.vertices().iter().zip(m.vertices()) {
            assert!((a - b).norm() < 1e-12);
        }
        let quad = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1/1 2/2 3/3 4/4\n";
        assert_eq!(TriangleMesh::parse_obj(quad, Path::new("q")).unwrap().faces().len(), 2);
        assert!(TriangleMesh::parse_obj("v 0 0 0\nf 1 2 3\n", Path::new("x")).is_err());
    }

    #[test]
    fn degenerate_faces_are_dropped_and_mesh_recentred() {
        let v = vec![
            Vector3::new(1.0, 1.0, 1.0),
            Vector3::new(2.0, 1.0, 1.0),
            Vector3::new(1.0, 2.0, 1.0),
            Vector3::new(3.0, 1.0, 1.0),
        ];
        let m = TriangleMesh::new(v, vec![[0, 1, 2], [0, 1, 3]]).unwrap();
        assert_eq!(m.faces().len(), 1);
        let c: Vector3<f64> = m.vertices().iter().fold(Vector3::repeat(f64::MAX), |a, v| a.inf(v));
        assert!((c - Vector3::new(-1.0, -0.5, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn yaw_symmetry_error() {
        let sym = YawSymmetry::Discrete(2);
        assert!(sym.yaw_error(0.1, 0.1 + std::f64::consts::PI).abs() < 1e-12);
        assert!((sym.yaw_error(0.0, 0.2) - 0.2).abs() < 1e-12);
        assert_eq!(YawSymmetry::Continuous.yaw_error(0.0, 2.0), 0.0);
        let aligned = sym.align_yaw(0.1 + std::f64::consts::PI, 0.12);
        assert!((aligned - 0.1).abs() < 1e-12);
    }
}
