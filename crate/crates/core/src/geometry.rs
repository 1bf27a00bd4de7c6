//! Pinhole camera model and pose algebra.
//!
//! Conventions used everywhere in the crate:
//!
//! - Poses are camera-to-world: `world = rotation * camera + translation`.
//! - The camera frame is +x right, +y down, +z forward. A point is visible
//!   only when its camera-frame z is positive.
//! - Pixel `(u, v)` (integer index) has its center at the continuous image
//!   coordinate `(u + 0.5, v + 0.5)`.
//! - "Depth" means distance along the (unit) ray direction. The camera-frame
//!   z coordinate is reported separately by [`project_point`].
//! - Euler angles are intrinsic Z-Y-X: `R = Rz(theta_z) * Ry(theta_y) * Rx(theta_x)`.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Tolerance for the orthonormality and determinant checks on [`Pose`].
pub const ROTATION_TOLERANCE: f64 = 1e-9;

/// Default far bound for rays built by [`pixel_to_ray`].
pub const DEFAULT_FAR: f64 = 1.0e3;

/// Points with camera-frame z at or below this are treated as behind the camera.
pub const MIN_CAMERA_Z: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("rotation is not orthonormal with det +1 (error {0:e})")]
    NotARotation(f64),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("point is at or behind the camera plane (z = {0})")]
    BehindCamera(f64),
    #[error("depth must be positive and finite, got {0}")]
    InvalidDepth(f64),
    #[error("invalid ray: {0}")]
    InvalidRay(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self, GeometryError> {
        let k = Self { fx, fy, cx, cy, width, height };
        k.validate()?;
        Ok(k)
    }

    /// Square-pixel intrinsics with the principal point at the image center.
    pub fn from_horizontal_fov(width: u32, height: u32, hfov_radians: f64) -> Result<Self, GeometryError> {
        let fx = 0.5 * width as f64 / (0.5 * hfov_radians).tan();
        Self::new(fx, fx, 0.5 * width as f64, 0.5 * height as f64, width, height)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let finite = [self.fx, self.fy, self.cx, self.cy].iter().all(|v| v.is_finite());
        if !finite {
            return Err(GeometryError::NonFinite("intrinsics"));
        }
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(GeometryError::InvalidIntrinsics("focal lengths must be positive".into()));
        }
        if !(self.cx > 0.0 && self.cx < self.width as f64) || !(self.cy > 0.0 && self.cy < self.height as f64) {
            return Err(GeometryError::InvalidIntrinsics("principal point outside the image".into()));
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// Intrinsics of the same camera at a resolution divided by `factor`.
    pub fn downscaled(&self, factor: u32) -> Result<Self, GeometryError> {
        let factor = factor.max(1);
        let width = (self.width / factor).max(1);
        let height = (self.height / factor).max(1);
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Self::new(self.fx * sx, self.fy * sy, self.cx * sx, self.cy * sy, width, height)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && y >= 0.0 && x < self.width as f64 && y < self.height as f64
    }
}

/// Camera-to-world rigid transform.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PoseRows", into = "PoseRows")]
pub struct Pose {
    rotation: Mat3,
    translation: Vec3,
}

/// Wire form of a pose: the 3x4 `[R | t]` matrix, row-major.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PoseRows(pub [f64; 12]);

impl TryFrom<PoseRows> for Pose {
    type Error = GeometryError;
    fn try_from(rows: PoseRows) -> Result<Self, Self::Error> {
        Pose::from_rows(&rows.0)
    }
}

impl From<Pose> for PoseRows {
    fn from(p: Pose) -> Self {
        PoseRows(p.to_rows())
    }
}

fn rotation_error(r: &Mat3) -> f64 {
    let ortho = (r.transpose() * r - Mat3::identity()).abs().max();
    ortho.max((r.determinant() - 1.0).abs())
}

impl Pose {
    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self, GeometryError> {
        if rotation.iter().chain(translation.iter()).any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite("pose"));
        }
        let err = rotation_error(&rotation);
        if err > ROTATION_TOLERANCE {
            return Err(GeometryError::NotARotation(err));
        }
        Ok(Self { rotation, translation })
    }

    pub fn identity() -> Self {
        Self { rotation: Mat3::identity(), translation: Vec3::zeros() }
    }

    /// Camera at `eye` looking at `target`, with `up` pointing to the top of the image.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3) -> Result<Self, GeometryError> {
        let forward = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| GeometryError::InvalidRay("eye and target coincide".into()))?;
        let right = forward
            .cross(&up)
            .try_normalize(1e-12)
            .ok_or_else(|| GeometryError::InvalidRay("up is parallel to the view direction".into()))?;
        let down = forward.cross(&right);
        Self::new(Mat3::from_columns(&[right, down, forward]), eye)
    }

    /// Parses a row-major 3x4 `[R | t]` matrix, rejecting anything that is not
    /// a rotation within [`ROTATION_TOLERANCE`].
    pub fn from_rows(rows: &[f64; 12]) -> Result<Self, GeometryError> {
        let (r, t) = split_rows(rows);
        Self::new(r, t)
    }

    /// Parses a row-major 3x4 matrix whose rotation part is only approximately
    /// orthonormal (max error `tolerance`), then projects it back onto SO(3).
    pub fn from_rows_orthonormalized(rows: &[f64; 12], tolerance: f64) -> Result<Self, GeometryError> {
        let (r, t) = split_rows(rows);
        if r.iter().chain(t.iter()).any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite("pose"));
        }
        let err = rotation_error(&r);
        if err > tolerance {
            return Err(GeometryError::NotARotation(err));
        }
        let svd = r.svd(true, true);
        let (u, v_t) = (svd.u.expect("svd u"), svd.v_t.expect("svd v_t"));
        let fixed = u * v_t;
        if fixed.determinant() < 0.0 {
            return Err(GeometryError::NotARotation(err));
        }
        Self::new(fixed, t)
    }

    pub fn to_rows(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x,
            r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y,
            r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z,
        ]
    }

    pub fn rotation(&self) -> &Mat3 {
        &self.rotation
    }

    /// Camera center in world coordinates.
    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    pub fn center(&self) -> Vec3 {
        self.translation
    }

    pub fn forward(&self) -> Vec3 {
        self.rotation.column(2).into_owned()
    }

    pub fn world_to_camera(&self, x: &Vec3) -> Vec3 {
        self.rotation.transpose() * (x - self.translation)
    }

    pub fn camera_to_world(&self, x: &Vec3) -> Vec3 {
        self.rotation * x + self.translation
    }
}

fn split_rows(rows: &[f64; 12]) -> (Mat3, Vec3) {
    let r = Mat3::new(rows[0], rows[1], rows[2], rows[4], rows[5], rows[6], rows[8], rows[9], rows[10]);
    (r, Vec3::new(rows[3], rows[7], rows[11]))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EulerAngles {
    pub theta_x: f64,
    pub theta_y: f64,
    pub theta_z: f64,
}

impl EulerAngles {
    pub fn new(theta_x: f64, theta_y: f64, theta_z: f64) -> Self {
        Self { theta_x, theta_y, theta_z }
    }
}

impl std::ops::Add for EulerAngles {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.theta_x + o.theta_x, self.theta_y + o.theta_y, self.theta_z + o.theta_z)
    }
}

/// Result of [`euler_from_rotation`]. At gimbal lock (`|sin theta_y| = 1`) only
/// the sum or difference of `theta_x` and `theta_z` is observable; the
/// extraction then pins `theta_z = 0` and sets `gimbal_lock`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EulerExtraction {
    pub angles: EulerAngles,
    pub gimbal_lock: bool,
}

pub fn rotation_from_euler(e: &EulerAngles) -> Mat3 {
    let (sx, cx) = e.theta_x.sin_cos();
    let (sy, cy) = e.theta_y.sin_cos();
    let (sz, cz) = e.theta_z.sin_cos();
    Mat3::new(
        cz * cy,
        cz * sy * sx - sz * cx,
        cz * sy * cx + sz * sx,
        sz * cy,
        sz * sy * sx + cz * cx,
        sz * sy * cx - cz * sx,
        -sy,
        cy * sx,
        cy * cx,
    )
}

pub fn euler_from_rotation(r: &Mat3) -> EulerExtraction {
    let r20 = r[(2, 0)];
    if r20.abs() >= 1.0 - 1e-12 {
        let (theta_x, theta_y) = if r20 < 0.0 {
            (r[(0, 1)].atan2(r[(1, 1)]), std::f64::consts::FRAC_PI_2)
        } else {
            ((-r[(0, 1)]).atan2(r[(1, 1)]), -std::f64::consts::FRAC_PI_2)
        };
        return EulerExtraction { angles: EulerAngles::new(theta_x, theta_y, 0.0), gimbal_lock: true };
    }
    EulerExtraction {
        angles: EulerAngles::new(
            r[(2, 1)].atan2(r[(2, 2)]),
            (-r20).asin(),
            r[(1, 0)].atan2(r[(0, 0)]),
        ),
        gimbal_lock: false,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
    pub t_near: f64,
    pub t_far: f64,
}

impl Ray {
    pub fn new(origin: Vec3, direction: Vec3, t_near: f64, t_far: f64) -> Result<Self, GeometryError> {
        if origin.iter().chain(direction.iter()).any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite("ray"));
        }
        if ((direction.norm() - 1.0).abs()) > 1e-9 {
            return Err(GeometryError::InvalidRay("direction is not unit length".into()));
        }
        if !(t_near >= 0.0 && t_near < t_far) {
            return Err(GeometryError::InvalidRay(format!("bad bounds [{t_near}, {t_far}]")));
        }
        Ok(Self { origin, direction, t_near, t_far })
    }

    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + t * self.direction
    }
}

/// Ray through the continuous image coordinate `(x, y)`.
pub fn ray_through(pose: &Pose, k: &Intrinsics, x: f64, y: f64) -> Ray {
    let dir_cam = Vec3::new((x - k.cx) / k.fx, (y - k.cy) / k.fy, 1.0);
    let direction = (pose.rotation * dir_cam).normalize();
    Ray { origin: pose.translation, direction, t_near: 0.0, t_far: DEFAULT_FAR }
}

/// Ray from the camera center through the center of pixel `(u, v)`.
pub fn pixel_to_ray(pose: &Pose, k: &Intrinsics, u: f64, v: f64) -> Ray {
    ray_through(pose, k, u + 0.5, v + 0.5)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    /// Continuous image coordinates; may fall outside the image.
    pub u: f64,
    pub v: f64,
    /// Camera-frame forward coordinate.
    pub z: f64,
}

pub fn project_point(pose: &Pose, k: &Intrinsics, x: &Vec3) -> Result<Projection, GeometryError> {
    let pc = pose.world_to_camera(x);
    if !(pc.z > MIN_CAMERA_Z) {
        return Err(GeometryError::BehindCamera(pc.z));
    }
    Ok(Projection { u: k.fx * pc.x / pc.z + k.cx, v: k.fy * pc.y / pc.z + k.cy, z: pc.z })
}

/// Lifts pixel `(u, v)` to the world point at ray distance `depth`.
pub fn point_from_depth(pose: &Pose, k: &Intrinsics, u: f64, v: f64, depth: f64) -> Result<Vec3, GeometryError> {
    if !(depth > 0.0 && depth.is_finite()) {
        return Err(GeometryError::InvalidDepth(depth));
    }
    let ray = pixel_to_ray(pose, k, u, v);
    Ok(ray.origin + depth * ray.direction)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn k() -> Intrinsics {
        Intrinsics::new(100.0, 110.0, 31.5, 27.5, 64, 64).unwrap()
    }

    #[test]
    fn euler_identity_and_half_turn() {
        assert_abs_diff_eq!(rotation_from_euler(&EulerAngles::default()), Mat3::identity(), epsilon = 1e-15);
        let r = rotation_from_euler(&EulerAngles::new(0.0, 0.0, PI));
        assert_abs_diff_eq!(r, Mat3::from_diagonal(&Vec3::new(-1.0, -1.0, 1.0)), epsilon = 1e-15);
    }

    /// Composition of elementary rotations written out independently of
    /// `rotation_from_euler`'s closed form.
    fn composed(e: &EulerAngles) -> Mat3 {
        let rx = nalgebra::Rotation3::from_axis_angle(&Vec3::x_axis(), e.theta_x);
        let ry = nalgebra::Rotation3::from_axis_angle(&Vec3::y_axis(), e.theta_y);
        let rz = nalgebra::Rotation3::from_axis_angle(&Vec3::z_axis(), e.theta_z);
        (rz * ry * rx).into_inner()
    }

    #[test]
    fn euler_matches_elementary_composition() {
        let e = EulerAngles::new(0.3, -0.2, 0.1);
        let m = rotation_from_euler(&e);
        assert_abs_diff_eq!(m, composed(&e), epsilon = 1e-15);
        let back = euler_from_rotation(&m);
        assert!(!back.gimbal_lock);
        assert_abs_diff_eq!(back.angles.theta_x, 0.3, epsilon = 1e-9);
        assert_abs_diff_eq!(back.angles.theta_y, -0.2, epsilon = 1e-9);
        assert_abs_diff_eq!(back.angles.theta_z, 0.1, epsilon = 1e-9);
    }

    #[test]
    fn gimbal_lock_is_flagged_and_reconstructs() {
        for (x, y) in [(0.7, PI / 2.0), (-1.1, -PI / 2.0)] {
            let m = rotation_from_euler(&EulerAngles::new(x, y, 0.4));
            let ex = euler_from_rotation(&m);
            assert!(ex.gimbal_lock);
            assert_eq!(ex.angles.theta_z, 0.0);
            assert_abs_diff_eq!(rotation_from_euler(&ex.angles), m, epsilon = 1e-9);
        }
    }

    #[test]
    fn principal_point_ray_is_optical_axis() {
        let k = k();
        let ray = pixel_to_ray(&Pose::identity(), &k, k.cx - 0.5, k.cy - 0.5);
        assert_abs_diff_eq!(ray.direction, Vec3::z(), epsilon = 1e-15);
        assert_eq!(ray.origin, Vec3::zeros());
    }

    #[test]
    fn unit_tangent_pixel() {
        let k = k();
        let ray = pixel_to_ray(&Pose::identity(), &k, k.cx + k.fx - 0.5, k.cy - 0.5);
        assert_abs_diff_eq!(ray.direction, Vec3::new(1.0, 0.0, 1.0).normalize(), epsilon = 1e-12);
    }

    #[test]
    fn on_axis_projection_and_behind_camera() {
        let k = k();
        let pose = Pose::look_at(Vec3::new(1.0, 2.0, 3.0), Vec3::zeros(), Vec3::y()).unwrap();
        let p = project_point(&pose, &k, &(pose.center() + pose.forward())).unwrap();
        assert_abs_diff_eq!(p.u, k.cx, epsilon = 1e-12);
        assert_abs_diff_eq!(p.v, k.cy, epsilon = 1e-12);
        assert_abs_diff_eq!(p.z, 1.0, epsilon = 1e-12);
        let behind = pose.center() - pose.forward();
        assert!(matches!(project_point(&pose, &k, &behind), Err(GeometryError::BehindCamera(_))));
        assert!(project_point(&pose, &k, &pose.center()).is_err());
    }

    #[test]
    fn projection_matches_explicit_matrix_product() {
        let k = k();
        let pose = Pose::new(rotation_from_euler(&EulerAngles::new(0.4, 0.9, -2.0)), Vec3::new(0.5, -1.0, 2.0)).unwrap();
        let kmat = Mat3::new(k.fx, 0.0, k.cx, 0.0, k.fy, k.cy, 0.0, 0.0, 1.0);
        let r_inv = pose.rotation().try_inverse().unwrap();
        let mut checked = 0;
        for i in 0..50 {
            let f = i as f64;
            let x = Vec3::new((f * 0.37).sin() * 4.0, (f * 0.91).cos() * 3.0, (f * 1.3).sin() * 5.0);
            let h = kmat * (r_inv * (x - pose.center()));
            if let Ok(p) = project_point(&pose, &k, &x) {
                assert_abs_diff_eq!(p.u, h.x / h.z, epsilon = 1e-9);
                assert_abs_diff_eq!(p.v, h.y / h.z, epsilon = 1e-9);
                assert_abs_diff_eq!(p.z, h.z, epsilon = 1e-9);
                checked += 1;
            } else {
                assert!(h.z <= MIN_CAMERA_Z);
            }
        }
        assert!(checked > 10);
    }

    #[test]
    fn depth_semantics() {
        let k = k();
        let pose = Pose::look_at(Vec3::new(0.0, 0.0, -3.0), Vec3::zeros(), Vec3::y()).unwrap();
        let x = point_from_depth(&pose, &k, k.cx - 0.5, k.cy - 0.5, 2.0).unwrap();
        assert_abs_diff_eq!(x, pose.center() + 2.0 * pose.forward(), epsilon = 1e-12);
        assert!(point_from_depth(&pose, &k, 0.0, 0.0, 0.0).is_err());
        assert!(point_from_depth(&pose, &k, 0.0, 0.0, f64::NAN).is_err());
    }

    #[test]
    fn full_grid_round_trip() {
        let k = k();
        let pose = Pose::new(rotation_from_euler(&EulerAngles::new(-0.3, 0.2, 1.2)), Vec3::new(2.0, 1.0, -4.0)).unwrap();
        for v in 0..k.height {
            for u in 0..k.width {
                let (u, v) = (u as f64, v as f64);
                let ray = pixel_to_ray(&pose, &k, u, v);
                let p = project_point(&pose, &k, &ray.at(5.0)).unwrap();
                assert!((p.u - (u + 0.5)).abs() < 1e-6 && (p.v - (v + 0.5)).abs() < 1e-6);
                let x = point_from_depth(&pose, &k, u, v, 2.5).unwrap();
                let q = project_point(&pose, &k, &x).unwrap();
                assert!((q.u - (u + 0.5)).abs() < 1e-6 && (q.v - (v + 0.5)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn pose_rejects_non_rotations() {
        let mut rows = Pose::identity().to_rows();
        rows[0] = 1.01;
        assert!(matches!(Pose::from_rows(&rows), Err(GeometryError::NotARotation(_))));
        let fixed = Pose::from_rows_orthonormalized(&{
            let mut r = Pose::identity().to_rows();
            r[1] = 2e-4;
            r
        }, 1e-3)
        .unwrap();
        assert!(rotation_error(fixed.rotation()) < 1e-12);
        assert!(Pose::from_rows_orthonormalized(&rows, 1e-3).is_err());
        let mirror = [-1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0];
        assert!(Pose::from_rows(&mirror).is_err());
    }

    #[test]
    fn pose_json_is_row_major_3x4() {
        let pose = Pose::look_at(Vec3::new(3.0, 1.0, 0.0), Vec3::zeros(), Vec3::y()).unwrap();
        let json = serde_json::to_string(&pose).unwrap();
        let rows: Vec<f64> = serde_json::from_str(&json).unwrap();
        assert_eq!(rows.len(), 12);
        assert_eq!(rows[3], 3.0);
        let back: Pose = serde_json::from_str(&json).unwrap();
        assert_eq!(back, pose);
    }

    #[test]
    fn intrinsics_invariants() {
        assert!(Intrinsics::new(0.0, 1.0, 1.0, 1.0, 4, 4).is_err());
        assert!(Intrinsics::new(1.0, 1.0, 4.0, 1.0, 4, 4).is_err());
        assert!(Intrinsics::new(1.0, 1.0, 0.0, 1.0, 4, 4).is_err());
        let k = Intrinsics::from_horizontal_fov(192, 108, 50f64.to_radians()).unwrap();
        let d = k.downscaled(4).unwrap();
        assert_eq!((d.width, d.height), (48, 27));
        assert_abs_diff_eq!(d.fx, k.fx / 4.0, epsilon = 1e-12);
    }
}
