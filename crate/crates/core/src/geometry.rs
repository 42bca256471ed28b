//! Pinhole cameras and rigid world-to-camera poses.
//!
//! Camera frame is right-handed with +z forward, +x right and +y down, so camera-frame
//! axes line up with pixel axes. Continuous pixel coordinates put integer `(u, v)` at
//! pixel centers; rasterization rounds half-up (`floor(u + 0.5)`).

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

/// Camera-frame depths at or below this are treated as behind the camera.
pub const MIN_DEPTH: f64 = 1e-12;

const ORTHO_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point is behind the camera (camera-frame z = {0})")]
    BehindCamera(f64),
    #[error("depth must be positive, got {0}")]
    NonPositiveDepth(f64),
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid rotation: {0}")]
    InvalidRotation(String),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
    ) -> Result<Self, GeometryError> {
        let k = Self {
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

    pub fn validate(&self) -> Result<(), GeometryError> {
        let bad = |m: String| Err(GeometryError::InvalidIntrinsics(m));
        if !(self.fx.is_finite() && self.fx > 0.0 && self.fy.is_finite() && self.fy > 0.0) {
            return bad(format!("focal lengths must be positive (fx={}, fy={})", self.fx, self.fy));
        }
        if self.width == 0 || self.height == 0 {
            return bad(format!("empty image size {}x{}", self.width, self.height));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64) {
            return bad(format!("cx={} outside [0, {})", self.cx, self.width));
        }
        if !(self.cy >= 0.0 && self.cy < self.height as f64) {
            return bad(format!("cy={} outside [0, {})", self.cy, self.height));
        }
        Ok(())
    }

    /// Intrinsics of the target grid downsampled by `scale` (ceil division of the size).
    ///
    /// Pixel centers stay consistent with nearest-neighbor upsampling: high-res pixel `x`
    /// falls in low-res pixel `x / scale`. The principal point may leave `[0, width)` for
    /// tiny `cx`, so the result is not re-validated.
    pub fn downsampled(&self, scale: usize) -> Self {
        assert!(scale >= 1, "scale must be positive");
        let s = scale as f64;
        Self {
            fx: self.fx / s,
            fy: self.fy / s,
            cx: (self.cx + 0.5) / s - 0.5,
            cy: (self.cy + 0.5) / s - 0.5,
            width: self.width.div_ceil(scale),
            height: self.height.div_ceil(scale),
        }
    }

    #[inline]
    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }
}

/// Rigid world-to-camera transform: `x_cam = R · x_world + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        if !rotation.iter().all(|v| v.is_finite()) || !translation.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::InvalidRotation("non-finite entries".into()));
        }
        let ortho_err = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        if ortho_err > ORTHO_TOL {
            return Err(GeometryError::InvalidRotation(format!(
                "R^T R deviates from identity by {ortho_err:e}"
            )));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > ORTHO_TOL {
            return Err(GeometryError::InvalidRotation(format!("det(R) = {det}")));
        }
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

    /// Pose of a camera with world-to-camera rotation `rotation` centered at `center`.
    pub fn from_center(rotation: Matrix3<f64>, center: Vector3<f64>) -> Result<Self, GeometryError> {
        let t = -(rotation * center);
        Self::new(rotation, t)
    }

    #[inline]
    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    #[inline]
    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// Camera center in world coordinates, `C = -Rᵀ t`.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    /// World-space direction of the camera's +z axis.
    pub fn optical_axis(&self) -> Vector3<f64> {
        self.rotation.row(2).transpose()
    }

    #[inline]
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Inverse transform (camera-to-world when `self` is world-to-camera).
    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Same orientation, camera center moved by `delta` (world units).
    pub fn translated_center(&self, delta: &Vector3<f64>) -> Self {
        Self {
            rotation: self.rotation,
            translation: self.translation - self.rotation * delta,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Camera {
    pub intrinsics: Intrinsics,
    pub pose: Pose,
}

/// Result of projecting a world point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
    /// `0 ≤ u < width` and `0 ≤ v < height`.
    pub in_bounds: bool,
}

impl Camera {
    pub fn new(intrinsics: Intrinsics, pose: Pose) -> Result<Self, GeometryError> {
        intrinsics.validate()?;
        Ok(Self { intrinsics, pose })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.intrinsics.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.intrinsics.height
    }

    #[inline]
    pub fn center(&self) -> Vector3<f64> {
        self.pose.center()
    }

    /// Same pose over a grid downsampled by `scale`.
    pub fn downsampled(&self, scale: usize) -> Self {
        Self {
            intrinsics: self.intrinsics.downsampled(scale),
            pose: self.pose,
        }
    }

    pub fn project(&self, point_world: &Vector3<f64>) -> Result<Projection, GeometryError> {
        let pc = self.pose.transform_point(point_world);
        self.project_camera_frame(&pc)
    }

    #[inline]
    pub fn project_camera_frame(&self, pc: &Vector3<f64>) -> Result<Projection, GeometryError> {
        let z = pc.z;
        if !(z > MIN_DEPTH) {
            return Err(GeometryError::BehindCamera(z));
        }
        let k = &self.intrinsics;
        let u = k.fx * pc.x / z + k.cx;
        let v = k.fy * pc.y / z + k.cy;
        let in_bounds = u >= 0.0 && u < k.width as f64 && v >= 0.0 && v < k.height as f64;
        Ok(Projection {
            u,
            v,
            depth: z,
            in_bounds,
        })
    }

    /// Nearest integer pixel of a projection, or `None` when it rounds outside the image.
    #[inline]
    pub fn nearest_pixel(&self, u: f64, v: f64) -> Option<(usize, usize)> {
        let x = (u + 0.5).floor();
        let y = (v + 0.5).floor();
        if x >= 0.0 && y >= 0.0 && x < self.intrinsics.width as f64 && y < self.intrinsics.height as f64
        {
            Some((x as usize, y as usize))
        } else {
            None
        }
    }

    /// Point in the camera frame at pixel `(u, v)` with camera-frame depth `depth`.
    #[inline]
    pub fn unproject_camera_frame(&self, u: f64, v: f64, depth: f64) -> Vector3<f64> {
        let k = &self.intrinsics;
        Vector3::new((u - k.cx) / k.fx * depth, (v - k.cy) / k.fy * depth, depth)
    }

    pub fn back_project(&self, u: f64, v: f64, depth: f64) -> Result<Vector3<f64>, GeometryError> {
        if !(depth.is_finite() && depth > 0.0) {
            return Err(GeometryError::NonPositiveDepth(depth));
        }
        let pc = self.unproject_camera_frame(u, v, depth);
        Ok(self.pose.rotation.transpose() * (pc - self.pose.translation))
    }

    /// World-space ray direction through `(u, v)`, scaled so its camera-frame z is 1.
    pub fn ray_direction(&self, u: f64, v: f64) -> Vector3<f64> {
        self.pose.rotation.transpose() * self.unproject_camera_frame(u, v, 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Rotation3, Unit};
    use proptest::prelude::*;

    fn cam100() -> Camera {
        Camera::new(
            Intrinsics::new(100.0, 100.0, 50.0, 50.0, 100, 100).unwrap(),
            Pose::identity(),
        )
        .unwrap()
    }

    fn rotation(axis: [f64; 3], angle: f64) -> Matrix3<f64> {
        let axis = Unit::new_normalize(Vector3::from(axis));
        *Rotation3::from_axis_angle(&axis, angle).matrix()
    }

    #[test]
    fn project_on_axis() {
        let p = cam100().project(&Vector3::new(0.0, 0.0, 2.0)).unwrap();
        assert_eq!((p.u, p.v, p.depth), (50.0, 50.0, 2.0));
        assert!(p.in_bounds);
    }

    #[test]
    fn project_off_axis() {
        let p = cam100().project(&Vector3::new(0.1, 0.2, 1.0)).unwrap();
        assert!((p.u - 60.0).abs() < 1e-12 && (p.v - 70.0).abs() < 1e-12);
        assert_eq!(p.depth, 1.0);
    }

    #[test]
    fn project_behind_camera() {
        assert!(matches!(
            cam100().project(&Vector3::new(0.0, 0.0, -1.0)),
            Err(GeometryError::BehindCamera(_))
        ));
        assert!(matches!(
            cam100().project(&Vector3::new(0.0, 0.0, 0.0)),
            Err(GeometryError::BehindCamera(_))
        ));
    }

    #[test]
    fn back_project_examples() {
        let c = cam100();
        let p = c.back_project(60.0, 70.0, 1.0).unwrap();
        assert!((p - Vector3::new(0.1, 0.2, 1.0)).norm() < 1e-12);
        assert!(matches!(
            c.back_project(1.0, 1.0, 0.0),
            Err(GeometryError::NonPositiveDepth(_))
        ));
        assert!(c.back_project(1.0, 1.0, -3.0).is_err());
    }

    #[test]
    fn principal_ray_follows_optical_axis() {
        let r = rotation([0.3, -1.0, 0.2], 0.7);
        let pose = Pose::from_center(r, Vector3::new(1.0, 2.0, -3.0)).unwrap();
        let c = Camera::new(cam100().intrinsics, pose).unwrap();
        let p = c.back_project(50.0, 50.0, 2.5).unwrap();
        let expected = c.center() + 2.5 * pose.optical_axis();
        assert!((p - expected).norm() < 1e-12);
    }

    #[test]
    fn rejects_bad_rotation() {
        let mut r = Matrix3::identity();
        r[(2, 2)] = -1.0;
        assert!(matches!(
            Pose::new(r, Vector3::zeros()),
            Err(GeometryError::InvalidRotation(_))
        ));
        let skewed = Matrix3::new(1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(Pose::new(skewed, Vector3::zeros()).is_err());
    }

    #[test]
    fn rejects_bad_intrinsics() {
        assert!(Intrinsics::new(0.0, 1.0, 0.0, 0.0, 1, 1).is_err());
        assert!(Intrinsics::new(1.0, 1.0, 5.0, 0.0, 5, 1).is_err());
        assert!(Intrinsics::new(1.0, 1.0, 0.0, 0.0, 0, 1).is_err());
        assert!(Intrinsics::new(1.0, 1.0, 4.9, 0.0, 5, 1).is_ok());
    }

    #[test]
    fn downsampled_grid_matches_nearest_upsample() {
        let k = Intrinsics::new(400.0, 400.0, 256.0, 144.0, 512, 288).unwrap();
        let low = k.downsampled(4);
        assert_eq!((low.width, low.height), (128, 72));
        let odd = Intrinsics::new(10.0, 10.0, 3.0, 3.0, 7, 5).unwrap().downsampled(2);
        assert_eq!((odd.width, odd.height), (4, 3));
        // a high-res pixel center maps inside its parent low-res pixel
        let cam = Camera::new(k, Pose::identity()).unwrap();
        let lowcam = cam.downsampled(4);
        for x in [0usize, 3, 4, 255, 511] {
            let p = cam.back_project(x as f64, 10.0, 2.0).unwrap();
            let q = lowcam.project(&p).unwrap();
            assert_eq!(lowcam.nearest_pixel(q.u, q.v).unwrap().0, x / 4);
        }
    }

    #[test]
    fn pose_inverse_compose_identity() {
        let pose = Pose::from_center(rotation([1.0, 2.0, 3.0], 1.1), Vector3::new(4.0, -1.0, 0.5))
            .unwrap();
        let id = pose.compose(&pose.inverse());
        assert!((id.rotation() - Matrix3::identity()).abs().max() < 1e-12);
        assert!(id.translation().norm() < 1e-12);
        let id2 = pose.inverse().compose(&pose);
        assert!((id2.rotation() - Matrix3::identity()).abs().max() < 1e-12);
        assert!(id2.translation().norm() < 1e-12);
    }

    #[test]
    fn round_trip_10k_random_pixels() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let pose =
            Pose::from_center(rotation([0.2, 1.0, -0.4], 0.9), Vector3::new(0.3, -2.0, 1.0)).unwrap();
        let cam = Camera::new(
            Intrinsics::new(512.0, 498.0, 320.0, 240.0, 640, 480).unwrap(),
            pose,
        )
        .unwrap();
        let mut max_err: f64 = 0.0;
        for _ in 0..10_000 {
            let u = rng.random_range(0.0..640.0);
            let v = rng.random_range(0.0..480.0);
            let d = rng.random_range(0.05..50.0);
            let p = cam.back_project(u, v, d).unwrap();
            let q = cam.project(&p).unwrap();
            max_err = max_err
                .max((q.u - u).abs() / u.abs().max(1.0))
                .max((q.v - v).abs() / v.abs().max(1.0))
                .max((q.depth - d).abs() / d);
        }
        assert!(max_err < 1e-9, "max relative error {max_err:e}");
    }

    prop_compose! {
        fn arb_pose()(ax in prop::array::uniform3(-1.0f64..1.0), angle in -3.0f64..3.0,
                      c in prop::array::uniform3(-5.0f64..5.0)) -> Pose {
            let axis = if Vector3::from(ax).norm() < 1e-3 { [0.0, 0.0, 1.0] } else { ax };
            Pose::from_center(rotation(axis, angle), Vector3::from(c)).unwrap()
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn projection_invariant_under_rigid_motion(pose in arb_pose(), motion in arb_pose(),
                                                   u in 0.0f64..640.0, v in 0.0f64..480.0,
                                                   d in 0.1f64..20.0) {
            let k = Intrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap();
            let cam = Camera::new(k, pose).unwrap();
            let x = cam.back_project(u, v, d).unwrap();
            // move the world by `motion`; the camera moves with it
            let moved = Camera::new(k, pose.compose(&motion.inverse())).unwrap();
            let p0 = cam.project(&x).unwrap();
            let p1 = moved.project(&motion.transform_point(&x)).unwrap();
            prop_assert!((p0.u - p1.u).abs() < 1e-7 && (p0.v - p1.v).abs() < 1e-7);
        }

        #[test]
        fn back_project_inverts_project(pose in arb_pose(), u in 0.0f64..640.0,
                                        v in 0.0f64..480.0, d in 0.01f64..100.0) {
            let k = Intrinsics::new(700.0, 650.0, 300.0, 250.0, 640, 480).unwrap();
            let cam = Camera::new(k, pose).unwrap();
            let q = cam.project(&cam.back_project(u, v, d).unwrap()).unwrap();
            prop_assert!((q.u - u).abs() <= 1e-9 * u.max(1.0));
            prop_assert!((q.v - v).abs() <= 1e-9 * v.max(1.0));
            prop_assert!((q.depth - d).abs() <= 1e-9 * d);
        }
    }
}
