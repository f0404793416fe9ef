//! Pinhole cameras, per-pixel rays, and near/far bounds on the scene sphere.
//!
//! Convention: the camera looks down +z in its own frame, x right, y down.
//! Pixel `(i, j)` covers the unit square with center `(i + 0.5, j + 0.5)`;
//! the principal point `(cx, cy)` maps exactly to the optical axis.

use nalgebra::{Matrix3, Matrix4, Point3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CameraError {
    #[error("non-finite or non-positive focal length: fx={fx} fy={fy}")]
    NonFiniteIntrinsics { fx: f64, fy: f64 },
}

/// Sphere that encloses the reconstructed object; rays are marched only
/// inside their intersection interval with it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneBounds {
    pub center: [f64; 3],
    pub radius: f64,
}

impl SceneBounds {
    pub fn unit() -> Self {
        Self { center: [0.0; 3], radius: 1.0 }
    }

    pub fn center_point(&self) -> Point3<f64> {
        Point3::new(self.center[0], self.center[1], self.center[2])
    }
}

impl Default for SceneBounds {
    fn default() -> Self {
        Self::unit()
    }
}

/// One calibrated view: intrinsics, camera-to-world pose, and the
/// ground-truth silhouette raster (row-major, values in [0, 1]).
#[derive(Debug, Clone)]
pub struct CameraView {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub cam_to_world: Matrix4<f64>,
    pub silhouette: Vec<f64>,
}

impl CameraView {
    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Camera center in world coordinates.
    pub fn position(&self) -> Point3<f64> {
        Point3::from(self.cam_to_world.fixed_view::<3, 1>(0, 3).into_owned())
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.cam_to_world.fixed_view::<3, 3>(0, 0).into_owned()
    }

    /// Silhouette value at a pixel index (`y * width + x`).
    pub fn target(&self, pixel: usize) -> f64 {
        self.silhouette[pixel]
    }

    /// Project a world point to continuous pixel coordinates.
    /// Returns `None` behind the camera.
    pub fn project(&self, p: &Point3<f64>) -> Option<(f64, f64)> {
        let r = self.rotation();
        let t = self.position();
        let cam = r.transpose() * (p - t);
        if cam.z <= 0.0 {
            return None;
        }
        Some((self.fx * cam.x / cam.z + self.cx, self.fy * cam.y / cam.z + self.cy))
    }
}

/// A camera ray with its march interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Point3<f64>,
    pub direction: Vector3<f64>,
    pub t_near: f64,
    pub t_far: f64,
}

impl Ray {
    pub fn is_empty(&self) -> bool {
        self.t_far <= self.t_near
    }
}

/// Point on the ray at parameter `t`.
pub fn ray_point(r: &Ray, t: f64) -> Point3<f64> {
    r.origin + t * r.direction
}

/// Ray through the continuous pixel position `px` with near/far bounds on
/// the padded scene sphere.
///
/// The intersection interval with the bounding sphere is padded by 5% at
/// each end (`t_near *= 0.95`, `t_far *= 1.05`). Rays that miss the sphere
/// get a zero-length interval at the closest-approach parameter and render
/// to zero.
pub fn pixel_ray(
    view: &CameraView,
    px: (f64, f64),
    scene: &SceneBounds,
) -> Result<Ray, CameraError> {
    if !(view.fx > 0.0) || !(view.fy > 0.0) || !view.fx.is_finite() || !view.fy.is_finite() {
        return Err(CameraError::NonFiniteIntrinsics { fx: view.fx, fy: view.fy });
    }
    let dir_cam = Vector3::new((px.0 - view.cx) / view.fx, (px.1 - view.cy) / view.fy, 1.0);
    let direction = (view.rotation() * dir_cam).normalize();
    let origin = view.position();

    // |o + t d - c|^2 = R^2 with |d| = 1
    let oc = origin - scene.center_point();
    let b = oc.dot(&direction);
    let c = oc.norm_squared() - scene.radius * scene.radius;
    let disc = b * b - c;
    let (t_near, t_far) = if disc > 0.0 {
        let s = disc.sqrt();
        let t0 = (-b - s).max(0.0);
        let t1 = -b + s;
        if t1 <= 0.0 {
            // sphere entirely behind the camera
            (0.0, 0.0)
        } else {
            (t0 * 0.95, t1 * 1.05)
        }
    } else {
        // miss: collapse to the closest-approach point
        let t = (-b).max(0.0);
        (t, t)
    };
    Ok(Ray { origin, direction, t_near, t_far })
}

/// Ray through the center of pixel `(x, y)`.
pub fn pixel_center_ray(
    view: &CameraView,
    x: usize,
    y: usize,
    scene: &SceneBounds,
) -> Result<Ray, CameraError> {
    pixel_ray(view, (x as f64 + 0.5, y as f64 + 0.5), scene)
}
