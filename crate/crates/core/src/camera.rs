//! Look-at camera model, rigid transforms, SO(3) log/exp and the 8-D relative
//! pose descriptor.
//!
//! Conventions used throughout the crate:
//!
//! * World up is `+Y`. The object sits at the world origin.
//! * Camera frame is right-handed with `+z` pointing from the camera towards
//!   the origin, `x = normalize(up × z)` and `y = z × x`.
//! * Projection uses unit focal length; NDC is `(x/z + r_x, y/z + r_y)` with
//!   `(0, 0)` at the image centre, `+x` towards increasing columns and `+y`
//!   towards decreasing rows.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Distance kept between `|pitch|` and the poles, where the look-at frame
/// is undefined.
pub const PITCH_GUARD: f64 = 1e-4;

/// Largest admissible `|pitch|`.
pub const MAX_PITCH: f64 = FRAC_PI_2 - PITCH_GUARD;

/// NDC shift placed in the aux-1 descriptor to push the object out of frame.
pub const OUT_OF_FRAME_SHIFT: (f64, f64) = (2.0, 0.0);

const WORLD_UP: Vector3<f64> = Vector3::new(0.0, 1.0, 0.0);

/// Wrap an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

/// A look-at view `s = (yaw, pitch, d, r_x, r_y)`.
///
/// `yaw` is the azimuth about `+Y` (zero along `+X`, increasing towards
/// `+Z`), `pitch` the elevation above the XZ plane, `d` the distance to the
/// origin and `(r_x, r_y)` a post-projection NDC shift.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CameraRecord", into = "CameraRecord")]
pub struct EulerCamera {
    yaw: f64,
    pitch: f64,
    d: f64,
    rx: f64,
    ry: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CameraRecord {
    yaw: f64,
    pitch: f64,
    d: f64,
    rx: f64,
    ry: f64,
}

impl TryFrom<CameraRecord> for EulerCamera {
    type Error = Error;

    fn try_from(r: CameraRecord) -> Result<Self> {
        EulerCamera::new(r.yaw, r.pitch, r.d, r.rx, r.ry)
    }
}

impl From<EulerCamera> for CameraRecord {
    fn from(c: EulerCamera) -> Self {
        CameraRecord {
            yaw: c.yaw,
            pitch: c.pitch,
            d: c.d,
            rx: c.rx,
            ry: c.ry,
        }
    }
}

impl EulerCamera {
    /// Validating constructor. Yaw is wrapped; everything else must already
    /// satisfy the invariants.
    pub fn new(yaw: f64, pitch: f64, d: f64, rx: f64, ry: f64) -> Result<Self> {
        if ![yaw, pitch, d, rx, ry].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidCamera("non-finite parameter".into()));
        }
        if pitch.abs() > MAX_PITCH {
            return Err(Error::DegeneratePitch {
                pitch,
                guard: PITCH_GUARD,
            });
        }
        if d <= 0.0 {
            return Err(Error::InvalidCamera(format!("distance must be > 0, got {d}")));
        }
        if rx.abs() > 1.0 || ry.abs() > 1.0 {
            return Err(Error::InvalidCamera(format!(
                "NDC shift ({rx}, {ry}) outside [-1, 1]"
            )));
        }
        Ok(Self {
            yaw: wrap_angle(yaw),
            pitch,
            d,
            rx,
            ry,
        })
    }

    /// Project arbitrary (finite) values onto the invariant set: wrap yaw,
    /// clamp pitch and shifts, and floor the distance at `min_d`.
    pub fn clamped(yaw: f64, pitch: f64, d: f64, rx: f64, ry: f64, min_d: f64) -> Self {
        Self {
            yaw: wrap_angle(yaw),
            pitch: pitch.clamp(-MAX_PITCH, MAX_PITCH),
            d: d.max(min_d).max(f64::MIN_POSITIVE),
            rx: rx.clamp(-1.0, 1.0),
            ry: ry.clamp(-1.0, 1.0),
        }
    }

    pub fn yaw(&self) -> f64 {
        self.yaw
    }
    pub fn pitch(&self) -> f64 {
        self.pitch
    }
    pub fn d(&self) -> f64 {
        self.d
    }
    pub fn rx(&self) -> f64 {
        self.rx
    }
    pub fn ry(&self) -> f64 {
        self.ry
    }

    /// Flat form in field order `(yaw, pitch, d, r_x, r_y)`.
    pub fn to_array(&self) -> [f64; 5] {
        [self.yaw, self.pitch, self.d, self.rx, self.ry]
    }

    pub fn from_array(a: [f64; 5]) -> Result<Self> {
        Self::new(a[0], a[1], a[2], a[3], a[4])
    }

    pub fn with_shift(&self, rx: f64, ry: f64) -> Result<Self> {
        Self::new(self.yaw, self.pitch, self.d, rx, ry)
    }
}

/// World position of the camera centre.
pub fn camera_position(cam: &EulerCamera) -> Vector3<f64> {
    let (sy, cy) = cam.yaw.sin_cos();
    let (sp, cp) = cam.pitch.sin_cos();
    Vector3::new(cam.d * cp * cy, cam.d * sp, cam.d * cp * sy)
}

/// World-to-camera rigid transform `x_c = R x_w + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        check_rotation(&rotation, 1e-9)?;
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn apply(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * x + self.translation
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }
}

fn check_rotation(r: &Matrix3<f64>, tol: f64) -> Result<()> {
    let err = (r.transpose() * r - Matrix3::identity()).amax();
    let det = r.determinant();
    if !(err < tol) || !(det > 0.0) {
        return Err(Error::NotARotation { error: err, det });
    }
    Ok(())
}

/// Look-at extrinsics for raw angles; rejects pitches at or beyond the guard.
pub fn look_at(yaw: f64, pitch: f64, d: f64) -> Result<RigidTransform> {
    if !(pitch.abs() <= MAX_PITCH) {
        return Err(Error::DegeneratePitch {
            pitch,
            guard: PITCH_GUARD,
        });
    }
    if !(d > 0.0) {
        return Err(Error::InvalidCamera(format!("distance must be > 0, got {d}")));
    }
    let (sy, cy) = yaw.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    let c = Vector3::new(d * cp * cy, d * sp, d * cp * sy);
    let z = (-c).normalize();
    let x = WORLD_UP.cross(&z).normalize();
    let y = z.cross(&x);
    let rotation = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
    Ok(RigidTransform {
        rotation,
        translation: -(rotation * c),
    })
}

/// Extrinsics of a validated camera. The NDC shift does not enter.
pub fn look_at_extrinsics(cam: &EulerCamera) -> RigidTransform {
    look_at(cam.yaw, cam.pitch, cam.d).expect("EulerCamera invariants guarantee a valid look-at frame")
}

/// Transform taking source-camera coordinates to target-camera coordinates:
/// `R_rel = R_tgt R_srcᵀ`, `t_rel = t_tgt − R_rel t_src`.
pub fn relative_transform(src: &RigidTransform, tgt: &RigidTransform) -> RigidTransform {
    if src == tgt {
        return RigidTransform::identity();
    }
    let rotation = tgt.rotation * src.rotation.transpose();
    RigidTransform {
        rotation,
        translation: tgt.translation - rotation * src.translation,
    }
}

/// Rotation vector: axis scaled by angle, angle in `[0, pi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisAngle(Vector3<f64>);

impl AxisAngle {
    pub fn new(v: Vector3<f64>) -> Result<Self> {
        if !(v.norm() <= PI + 1e-12) {
            return Err(Error::InvalidCamera(format!(
                "axis-angle magnitude {} exceeds pi",
                v.norm()
            )));
        }
        Ok(Self(v))
    }

    pub fn zero() -> Self {
        Self(Vector3::zeros())
    }

    pub fn vector(&self) -> &Vector3<f64> {
        &self.0
    }

    pub fn angle(&self) -> f64 {
        self.0.norm()
    }
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rodrigues' formula.
pub fn so3_exp(v: &AxisAngle) -> Matrix3<f64> {
    let w = v.0;
    let theta2 = w.norm_squared();
    let theta = theta2.sqrt();
    let k = skew(&w);
    let (a, b) = if theta < 1e-6 {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Matrix3::identity() + k * a + (k * k) * b
}

/// Matrix logarithm followed by `vee`.
pub fn so3_log(r: &Matrix3<f64>) -> Result<AxisAngle> {
    check_rotation(r, 1e-6)?;
    let w = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]) * 0.5;
    let s = w.norm();
    let c = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = s.atan2(c);

    if theta < 1e-6 {
        return Ok(AxisAngle(w * (1.0 + s * s / 6.0)));
    }
    if theta < PI - 1e-2 {
        return Ok(AxisAngle(w * (theta / s)));
    }

    // Near a half turn sin(theta) vanishes; read the axis off the symmetric
    // part, cI + (1 - c) n nᵀ, and take the sign from the skew part.
    let sym = (r + r.transpose()) * 0.5;
    let nn = (sym - Matrix3::identity() * c) / (1.0 - c);
    let k = (0..3)
        .max_by(|&a, &b| nn[(a, a)].total_cmp(&nn[(b, b)]))
        .unwrap_or(0);
    let mut n = nn.column(k).into_owned() / nn[(k, k)].max(0.0).sqrt();
    n.normalize_mut();
    if n.dot(&w) < 0.0 {
        n = -n;
    }
    Ok(AxisAngle(n * theta))
}

/// `f = (aa(R_rel); t_rel; Δr_x; Δr_y)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelPoseDescriptor {
    pub aa: AxisAngle,
    pub t_rel: Vector3<f64>,
    pub dr_x: f64,
    pub dr_y: f64,
}

impl RelPoseDescriptor {
    pub fn zero() -> Self {
        Self {
            aa: AxisAngle::zero(),
            t_rel: Vector3::zeros(),
            dr_x: 0.0,
            dr_y: 0.0,
        }
    }

    pub fn to_array(&self) -> [f64; 8] {
        let a = self.aa.vector();
        [a.x, a.y, a.z, self.t_rel.x, self.t_rel.y, self.t_rel.z, self.dr_x, self.dr_y]
    }

    pub fn from_array(f: [f64; 8]) -> Result<Self> {
        Ok(Self {
            aa: AxisAngle::new(Vector3::new(f[0], f[1], f[2]))?,
            t_rel: Vector3::new(f[3], f[4], f[5]),
            dr_x: f[6],
            dr_y: f[7],
        })
    }

    /// True when both NDC deltas stay within `[-1, 1]`.
    pub fn is_in_frame(&self) -> bool {
        self.dr_x.abs() <= 1.0 && self.dr_y.abs() <= 1.0
    }

    /// The relative rigid transform encoded by the first six components.
    pub fn transform(&self) -> RigidTransform {
        RigidTransform {
            rotation: so3_exp(&self.aa),
            translation: self.t_rel,
        }
    }
}

impl Serialize for RelPoseDescriptor {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_array().serialize(s)
    }
}

impl<'de> Deserialize<'de> for RelPoseDescriptor {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let a = <[f64; 8]>::deserialize(d)?;
        RelPoseDescriptor::from_array(a).map_err(serde::de::Error::custom)
    }
}

pub fn build_descriptor(src: &EulerCamera, tgt: &EulerCamera) -> Result<RelPoseDescriptor> {
    let rel = relative_transform(&look_at_extrinsics(src), &look_at_extrinsics(tgt));
    Ok(RelPoseDescriptor {
        aa: so3_log(&rel.rotation)?,
        t_rel: rel.translation,
        dr_x: tgt.rx - src.rx,
        dr_y: tgt.ry - src.ry,
    })
}

/// Descriptor used by the removal task: no motion, NDC shift past the frame.
pub fn build_outofframe_descriptor(_src: &EulerCamera) -> RelPoseDescriptor {
    RelPoseDescriptor {
        aa: AxisAngle::zero(),
        t_rel: Vector3::zeros(),
        dr_x: OUT_OF_FRAME_SHIFT.0,
        dr_y: OUT_OF_FRAME_SHIFT.1,
    }
}

pub fn project_point(x_world: &Vector3<f64>, cam: &EulerCamera) -> Result<Vector2<f64>> {
    let xc = look_at_extrinsics(cam).apply(x_world);
    if !(xc.z > 1e-9) {
        return Err(Error::BehindCamera { z: xc.z });
    }
    Ok(Vector2::new(xc.x / xc.z + cam.rx, xc.y / xc.z + cam.ry))
}
