//! Software silhouette rasterizer: hard coverage and a logistic soft
//! silhouette driven by the signed distance to the projected contour.
//!
//! A pixel is covered when its centre lies inside the NDC projection of any
//! triangle (front or back facing, no depth test). The soft silhouette uses
//! the distance from the pixel centre to the nearest contour edge (edges
//! whose two incident faces project onto the same side of the edge), signed
//! positive inside the hard silhouette.

use nalgebra::{Vector2, Vector3};

use crate::camera::{look_at_extrinsics, EulerCamera};
use crate::error::{Error, Result};
use crate::imageio;
use crate::mask::BinaryMaskVolume;
use crate::mesh::TriangleMesh;

/// Soft values beyond this many `σ` from the contour are saturated to 0/1.
const SOFT_BAND: f64 = 8.0;

/// `H × W` coverage grid with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SilhouetteImage {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl SilhouetteImage {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "silhouette data has {} values, expected {height}x{width}",
                data.len()
            )));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidMask("coverage outside [0, 1]".into()));
        }
        Ok(Self { height, width, data })
    }

    pub fn from_mask(m: &BinaryMaskVolume, frame: usize) -> Self {
        Self {
            height: m.height(),
            width: m.width(),
            data: m.frame(frame).iter().map(|&v| v as f64).collect(),
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    /// Binary mask of pixels with coverage `>= level`.
    pub fn threshold(&self, level: f64) -> BinaryMaskVolume {
        let data = self.data.iter().map(|&v| (v >= level) as u8).collect();
        BinaryMaskVolume::from_vec(1, self.height, self.width, data).expect("shape is consistent")
    }

    pub fn area(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Save as a 16-bit PGM.
    pub fn save_pgm(&self, path: &std::path::Path) -> Result<()> {
        let px: Vec<u16> = self.data.iter().map(|&v| (v * 65535.0).round() as u16).collect();
        imageio::write_pgm16(path, self.width, self.height, &px)
    }
}

/// NDC coordinate of a pixel centre.
#[inline]
pub fn pixel_center_ndc(row: usize, col: usize, height: usize, width: usize) -> Vector2<f64> {
    Vector2::new(
        (2 * col + 1) as f64 / width as f64 - 1.0,
        1.0 - (2 * row + 1) as f64 / height as f64,
    )
}

/// Mesh vertices in camera coordinates and NDC.
pub(crate) struct Projection {
    pub cam_space: Vec<Vector3<f64>>,
    pub ndc: Vec<Vector2<f64>>,
}

pub(crate) fn project_mesh(mesh: &TriangleMesh, cam: &EulerCamera) -> Result<Projection> {
    if cam.d() <= mesh.radius() {
        return Err(Error::CameraInsideObject {
            d: cam.d(),
            radius: mesh.radius(),
        });
    }
    let ext = look_at_extrinsics(cam);
    let cam_space: Vec<Vector3<f64>> = mesh.vertices().iter().map(|v| ext.apply(v)).collect();
    let ndc = cam_space
        .iter()
        .map(|p| Vector2::new(p.x / p.z + cam.rx(), p.y / p.z + cam.ry()))
        .collect();
    Ok(Projection { cam_space, ndc })
}

#[inline]
fn cross2(a: Vector2<f64>, b: Vector2<f64>) -> f64 {
    a.x * b.y - a.y * b.x
}

/// Inclusive pixel ranges whose centres fall in the NDC box, or `None`.
fn pixel_window(
    lo: Vector2<f64>,
    hi: Vector2<f64>,
    height: usize,
    width: usize,
) -> Option<(usize, usize, usize, usize)> {
    let (h, w) = (height as f64, width as f64);
    let c0 = (((lo.x + 1.0) * w - 1.0) / 2.0).ceil().max(0.0);
    let c1 = (((hi.x + 1.0) * w - 1.0) / 2.0).floor().min(w - 1.0);
    let r0 = (((1.0 - hi.y) * h - 1.0) / 2.0).ceil().max(0.0);
    let r1 = (((1.0 - lo.y) * h - 1.0) / 2.0).floor().min(h - 1.0);
    if c1 < c0 || r1 < r0 {
        return None;
    }
    Some((r0 as usize, r1 as usize, c0 as usize, c1 as usize))
}

/// Call `visit(row, col)` for every pixel whose centre lies inside the
/// projected triangle (edges inclusive). Edge-on triangles are skipped.
pub(crate) fn for_each_covered_pixel(
    a: Vector2<f64>,
    b: Vector2<f64>,
    c: Vector2<f64>,
    height: usize,
    width: usize,
    mut visit: impl FnMut(usize, usize),
) {
    let area = cross2(b - a, c - a);
    if area.abs() < 1e-14 {
        return;
    }
    let sign = area.signum();
    let lo = a.inf(&b).inf(&c);
    let hi = a.sup(&b).sup(&c);
    let Some((r0, r1, c0, c1)) = pixel_window(lo, hi, height, width) else {
        return;
    };
    for row in r0..=r1 {
        for col in c0..=c1 {
            let p = pixel_center_ndc(row, col, height, width);
            let w0 = cross2(b - a, p - a) * sign;
            let w1 = cross2(c - b, p - b) * sign;
            let w2 = cross2(a - c, p - c) * sign;
            if w0 >= 0.0 && w1 >= 0.0 && w2 >= 0.0 {
                visit(row, col);
            }
        }
    }
}

fn hard_coverage(mesh: &TriangleMesh, proj: &Projection, height: usize, width: usize) -> Vec<bool> {
    let mut inside = vec![false; height * width];
    for f in mesh.faces() {
        for_each_covered_pixel(proj.ndc[f[0]], proj.ndc[f[1]], proj.ndc[f[2]], height, width, |r, c| {
            inside[r * width + c] = true
        });
    }
    inside
}

/// `R(M, s)`: binary silhouette.
pub fn render_hard(mesh: &TriangleMesh, cam: &EulerCamera, height: usize, width: usize) -> Result<SilhouetteImage> {
    let proj = project_mesh(mesh, cam)?;
    let inside = hard_coverage(mesh, &proj, height, width);
    Ok(SilhouetteImage {
        height,
        width,
        data: inside.iter().map(|&b| b as u8 as f64).collect(),
    })
}

/// Projected contour segments for the current view.
fn contour_segments(mesh: &TriangleMesh, proj: &Projection) -> Vec<(Vector2<f64>, Vector2<f64>)> {
    mesh.edges()
        .iter()
        .filter(|e| {
            if e.opposite.len() != 2 {
                return true;
            }
            let (a, b) = (proj.ndc[e.a], proj.ndc[e.b]);
            let s1 = cross2(b - a, proj.ndc[e.opposite[0]] - a);
            let s2 = cross2(b - a, proj.ndc[e.opposite[1]] - a);
            s1 * s2 >= 0.0
        })
        .map(|e| (proj.ndc[e.a], proj.ndc[e.b]))
        .collect()
}

#[inline]
fn segment_distance(p: Vector2<f64>, a: Vector2<f64>, b: Vector2<f64>) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let t = if len2 > 0.0 {
        ((p - a).dot(&ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p - (a + ab * t)).norm()
}

#[inline]
fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Soft silhouette: `logistic(signed_distance / sigma)` per pixel, with
/// distances in NDC units.
pub fn render_soft(
    mesh: &TriangleMesh,
    cam: &EulerCamera,
    height: usize,
    width: usize,
    sigma: f64,
) -> Result<SilhouetteImage> {
    if !(sigma > 0.0) {
        return Err(Error::BadParams(format!("sharpness must be > 0, got {sigma}")));
    }
    let proj = project_mesh(mesh, cam)?;
    let inside = hard_coverage(mesh, &proj, height, width);
    let band = SOFT_BAND * sigma;
    let mut dist = vec![f64::INFINITY; height * width];
    for (a, b) in contour_segments(mesh, &proj) {
        let lo = a.inf(&b).add_scalar(-band);
        let hi = a.sup(&b).add_scalar(band);
        let Some((r0, r1, c0, c1)) = pixel_window(lo, hi, height, width) else {
            continue;
        };
        for row in r0..=r1 {
            for col in c0..=c1 {
                let i = row * width + col;
                let d = segment_distance(pixel_center_ndc(row, col, height, width), a, b);
                if d < dist[i] {
                    dist[i] = d;
                }
            }
        }
    }
    let data = inside
        .iter()
        .zip(&dist)
        .map(|(&ins, &d)| {
            let sd = if ins { d } else { -d };
            if sd.is_infinite() {
                if ins {
                    1.0
                } else {
                    0.0
                }
            } else {
                logistic(sd / sigma)
            }
        })
        .collect();
    Ok(SilhouetteImage { height, width, data })
}

/// Nearest visible face and its camera depth for every covered pixel.
pub(crate) fn rasterize_nearest(
    mesh: &TriangleMesh,
    cam: &EulerCamera,
    height: usize,
    width: usize,
) -> Result<Vec<Option<(usize, f64)>>> {
    let proj = project_mesh(mesh, cam)?;
    let mut out: Vec<Option<(usize, f64)>> = vec![None; height * width];
    for (fi, f) in mesh.faces().iter().enumerate() {
        let (p0, p1, p2) = (proj.cam_space[f[0]], proj.cam_space[f[1]], proj.cam_space[f[2]]);
        let n = (p1 - p0).cross(&(p2 - p0));
        let mean_depth = (p0.z + p1.z + p2.z) / 3.0;
        for_each_covered_pixel(proj.ndc[f[0]], proj.ndc[f[1]], proj.ndc[f[2]], height, width, |r, c| {
            let q = pixel_center_ndc(r, c, height, width);
            let dir = Vector3::new(q.x - cam.rx(), q.y - cam.ry(), 1.0);
            let denom = n.dot(&dir);
            let depth = if denom.abs() > 1e-12 {
                n.dot(&p0) / denom
            } else {
                mean_depth
            };
            let slot = &mut out[r * width + c];
            if slot.is_none_or(|(_, z)| depth < z) {
                *slot = Some((fi, depth));
            }
        });
    }
    Ok(out)
}
