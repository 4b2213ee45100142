//! Rigid-body transforms, quaternion helpers and the pinhole camera model.
//!
//! Frame conventions used throughout the crate:
//!
//! * the base frame is right-handed with +z pointing up from the table;
//! * a camera frame has +Z along the optical axis (out of the lens), +X to
//!   the right of the image and +Y down the image;
//! * a [`Pose`] of a camera is its camera-to-base transform.

use nalgebra::{Matrix3, Matrix4, Rotation3, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = nalgebra::Vector3<f64>;
pub type UnitQuaternion = nalgebra::UnitQuaternion<f64>;

/// Orthonormality and unit-norm tolerance.
pub const TOLERANCE: f64 = 1e-9;

/// Points closer than this to the image plane count as behind the camera.
pub const MIN_DEPTH: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("rotation matrix is not orthonormal with determinant +1")]
    NotARotation,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("quaternion norm {0} is not 1")]
    NotUnit(f64),
    #[error("invalid camera intrinsics: {0}")]
    Intrinsics(String),
}

/// Camera (or end-effector) pose `x = (p, θ)` in the base frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PoseRepr", into = "PoseRepr")]
pub struct Pose {
    pub position: Vec3,
    pub orientation: UnitQuaternion,
}

#[derive(Serialize, Deserialize)]
struct PoseRepr {
    position: [f64; 3],
    /// `[w, x, y, z]`
    orientation: [f64; 4],
}

impl From<Pose> for PoseRepr {
    fn from(p: Pose) -> Self {
        let q = p.orientation.quaternion();
        PoseRepr {
            position: [p.position.x, p.position.y, p.position.z],
            orientation: [q.w, q.i, q.j, q.k],
        }
    }
}

impl TryFrom<PoseRepr> for Pose {
    type Error = GeomError;

    fn try_from(r: PoseRepr) -> Result<Self, Self::Error> {
        let [w, x, y, z] = r.orientation;
        let q = nalgebra::Quaternion::new(w, x, y, z);
        let norm = q.norm();
        if !norm.is_finite() {
            return Err(GeomError::NonFinite("orientation"));
        }
        // Hand-written files carry rounded decimals; accept and renormalize.
        if (norm - 1.0).abs() > 1e-6 {
            return Err(GeomError::NotUnit(norm));
        }
        let q = if (norm - 1.0).abs() <= 1e-12 {
            UnitQuaternion::new_unchecked(q)
        } else {
            UnitQuaternion::from_quaternion(q)
        };
        Pose::new(Vec3::from(r.position), q)
    }
}

impl Pose {
    pub fn new(position: Vec3, orientation: UnitQuaternion) -> Result<Self, GeomError> {
        if !position.iter().all(|c| c.is_finite()) {
            return Err(GeomError::NonFinite("position"));
        }
        Ok(Pose {
            position,
            orientation,
        })
    }

    /// The camera-to-base transform of this pose.
    pub fn to_transform(&self) -> HomogeneousTransform {
        HomogeneousTransform {
            rotation: *self.orientation.to_rotation_matrix().matrix(),
            translation: self.position,
        }
    }

    pub fn from_transform(t: &HomogeneousTransform) -> Self {
        let rot = Rotation3::from_matrix_unchecked(t.rotation);
        Pose {
            position: t.translation,
            orientation: UnitQuaternion::from_rotation_matrix(&rot),
        }
    }

    /// Optical axis (+Z of the camera frame) expressed in the base frame.
    pub fn optical_axis(&self) -> Vec3 {
        self.orientation * Vec3::z()
    }
}

/// A rigid transform `[R | t]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HomogeneousTransform {
    rotation: Matrix3<f64>,
    translation: Vec3,
}

impl HomogeneousTransform {
    pub fn identity() -> Self {
        HomogeneousTransform {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Result<Self, GeomError> {
        if !rotation
            .iter()
            .chain(translation.iter())
            .all(|c| c.is_finite())
        {
            return Err(GeomError::NonFinite("transform"));
        }
        let gram = rotation.transpose() * rotation;
        if (gram - Matrix3::identity()).amax() > TOLERANCE
            || (rotation.determinant() - 1.0).abs() > TOLERANCE
        {
            return Err(GeomError::NotARotation);
        }
        Ok(HomogeneousTransform {
            rotation,
            translation,
        })
    }

    pub fn from_translation(translation: Vec3) -> Self {
        HomogeneousTransform {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    pub fn from_rotation(rotation: &UnitQuaternion) -> Self {
        HomogeneousTransform {
            rotation: *rotation.to_rotation_matrix().matrix(),
            translation: Vec3::zeros(),
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Largest absolute entry-wise difference between the two 4×4 matrices.
    pub fn max_abs_diff(&self, other: &HomogeneousTransform) -> f64 {
        (self.to_matrix() - other.to_matrix()).amax()
    }
}

/// `a ∘ b`: applies `b` first, then `a`.
pub fn compose(a: &HomogeneousTransform, b: &HomogeneousTransform) -> HomogeneousTransform {
    HomogeneousTransform {
        rotation: a.rotation * b.rotation,
        translation: a.rotation * b.translation + a.translation,
    }
}

pub fn invert(t: &HomogeneousTransform) -> HomogeneousTransform {
    let rt = t.rotation.transpose();
    HomogeneousTransform {
        rotation: rt,
        translation: -(rt * t.translation),
    }
}

pub fn transform_point(t: &HomogeneousTransform, p: &Vec3) -> Vec3 {
    t.rotation * p + t.translation
}

/// Maps a grid vertex expressed in a marker frame into the base frame by
/// chaining marker→camera and camera→base.
pub fn marker_vertex_to_base(
    t_cam_to_base: &HomogeneousTransform,
    t_marker_to_cam: &HomogeneousTransform,
    v_marker: &Vec3,
) -> Vec3 {
    transform_point(&compose(t_cam_to_base, t_marker_to_cam), v_marker)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
    ) -> Result<Self, GeomError> {
        let k = CameraIntrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), GeomError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(GeomError::Intrinsics(
                "focal lengths must be positive".into(),
            ));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64)
            || !(self.cy >= 0.0 && self.cy < self.height as f64)
        {
            return Err(GeomError::Intrinsics(
                "principal point outside the image".into(),
            ));
        }
        Ok(())
    }

    pub fn contains(&self, px: &PixelCoord) -> bool {
        px.u >= 0.0 && px.v >= 0.0 && px.u < self.width as f64 && px.v < self.height as f64
    }
}

impl Default for CameraIntrinsics {
    /// A wide-angle 640×480 camera. At the home pose it keeps the whole default
    /// grid and the nine default markers in frame.
    fn default() -> Self {
        CameraIntrinsics {
            fx: 290.0,
            fy: 290.0,
            cx: 320.0,
            cy: 240.0,
            width: 640,
            height: 480,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelCoord {
    pub u: f64,
    pub v: f64,
}

#[derive(Debug, Error, Clone, Copy, PartialEq)]
#[error("point lies behind the camera (depth {depth})")]
pub struct BehindCamera {
    pub depth: f64,
}

/// Expresses a base-frame point in the camera frame of `camera_pose`.
pub fn to_camera_frame(camera_pose: &Pose, world_point: &Vec3) -> Vec3 {
    camera_pose
        .orientation
        .inverse_transform_vector(&(world_point - camera_pose.position))
}

/// Pinhole projection. The returned pixel may lie outside the image.
pub fn project(
    k: &CameraIntrinsics,
    camera_pose: &Pose,
    world_point: &Vec3,
) -> Result<PixelCoord, BehindCamera> {
    project_camera_point(k, &to_camera_frame(camera_pose, world_point))
}

pub fn project_camera_point(k: &CameraIntrinsics, pc: &Vec3) -> Result<PixelCoord, BehindCamera> {
    if pc.z <= MIN_DEPTH {
        return Err(BehindCamera { depth: pc.z });
    }
    Ok(PixelCoord {
        u: k.fx * pc.x / pc.z + k.cx,
        v: k.fy * pc.y / pc.z + k.cy,
    })
}

/// Back-projects a pixel at camera-frame depth `depth` into the base frame.
pub fn unproject(k: &CameraIntrinsics, camera_pose: &Pose, px: &PixelCoord, depth: f64) -> Vec3 {
    let pc = Vec3::new(
        (px.u - k.cx) / k.fx * depth,
        (px.v - k.cy) / k.fy * depth,
        depth,
    );
    camera_pose.position + camera_pose.orientation * pc
}

/// Geodesic angle between two orientations in degrees, in `[0, 180]`.
pub fn quat_angle_deg(a: &UnitQuaternion, b: &UnitQuaternion) -> f64 {
    // atan2 keeps precision near zero, where acos of the dot product does not.
    let r = a.inverse() * b;
    (2.0 * r.imag().norm().atan2(r.scalar().abs())).to_degrees()
}

/// Camera looking straight down the base −z axis with image +x along base +x.
pub fn top_down() -> UnitQuaternion {
    UnitQuaternion::from_axis_angle(&Vec3::x_axis(), std::f64::consts::PI)
}

/// Orientation whose optical axis points from `eye` to `target`, with the
/// image's down direction as close to base −z as possible.
pub fn look_at(eye: &Vec3, target: &Vec3) -> UnitQuaternion {
    let z = (target - eye).normalize();
    let down = -Vec3::z();
    let x = down.cross(&z);
    let x = if x.norm() < 1e-9 {
        // Looking straight up or down: keep image +x on base +x.
        Vec3::x()
    } else {
        x.normalize()
    };
    let y = z.cross(&x);
    let m = Matrix3::from_columns(&[x, y, z]);
    UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(m))
}

/// Homogeneous 4-vector of a point.
pub fn homogeneous(p: &Vec3) -> Vector4<f64> {
    Vector4::new(p.x, p.y, p.z, 1.0)
}

pub fn distance(a: &Vec3, b: &Vec3) -> f64 {
    (a - b).norm()
}

/// Angle between two non-zero vectors in degrees.
pub fn angle_between_deg(a: &Vec3, b: &Vec3) -> f64 {
    let c = a.dot(b) / (a.norm() * b.norm());
    c.clamp(-1.0, 1.0).acos().to_degrees()
}
