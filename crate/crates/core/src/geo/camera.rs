use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::pose::Pose;

/// Pinhole intrinsics of a pre-undistorted camera.
///
/// Pixel coordinates follow the centre convention: integer `(u, v)` is the
/// centre of pixel column `u`, row `v`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

/// Result of projecting a world point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    /// Distance along the optical axis, metres.
    pub depth: f64,
    pub in_view: bool,
}

/// Maps the body frame (x right, y towards the image top, z up) onto the optical
/// frame (x right, y down, z along the viewing direction). A nadir camera with
/// identity body rotation therefore looks straight down with north at the image
/// top.
pub(crate) fn body_to_optical() -> Matrix3<f64> {
    Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0))
}

impl CameraModel {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::domain("focal lengths must be finite and positive"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::domain("image dimensions must be non-zero"));
        }
        if !(0.0..f64::from(self.width)).contains(&self.cx)
            || !(0.0..f64::from(self.height)).contains(&self.cy)
        {
            return Err(Error::domain("principal point outside the image"));
        }
        Ok(())
    }

    pub fn k(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// True when the pixel lies within the hull of pixel centres.
    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && v >= 0.0 && u <= f64::from(self.width - 1) && v <= f64::from(self.height - 1)
    }

    /// World (UTM easting, northing, altitude) to pixel and depth.
    pub fn project(&self, pose: &Pose, world: &Vector3<f64>) -> Result<Projection> {
        let p = body_to_optical() * pose.rotation.transpose() * (world - pose.position);
        if !(p.z > 0.0) {
            return Err(Error::BehindCamera(p.z));
        }
        let u = self.fx * p.x / p.z + self.cx;
        let v = self.fy * p.y / p.z + self.cy;
        Ok(Projection {
            u,
            v,
            depth: p.z,
            in_view: self.contains(u, v),
        })
    }

    /// Pixel and depth back to a world point.
    pub fn backproject(&self, pose: &Pose, u: f64, v: f64, depth: f64) -> Result<Vector3<f64>> {
        if !(depth > 0.0) || !depth.is_finite() {
            return Err(Error::domain(format!("depth must be positive, got {depth}")));
        }
        let ray = self.ray_optical(u, v) * depth;
        Ok(pose.rotation * body_to_optical() * ray + pose.position)
    }

    /// Optical-frame ray through a pixel, scaled to unit depth.
    pub fn ray_optical(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    /// World-frame direction (unit depth along the optical axis) through a pixel.
    pub fn ray_world(&self, pose: &Pose, u: f64, v: f64) -> Vector3<f64> {
        pose.rotation * body_to_optical() * self.ray_optical(u, v)
    }

    /// Image corner pixel positions, clockwise from top-left.
    pub fn corners(&self) -> [(f64, f64); 4] {
        let w = f64::from(self.width - 1);
        let h = f64::from(self.height - 1);
        [(0.0, 0.0), (w, 0.0), (w, h), (0.0, h)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::pose::default_pose;
    use crate::geo::utm::{UtmCoord, UtmZone};

    fn cam() -> CameraModel {
        CameraModel::new(1000.0, 1000.0, 320.0, 240.0, 640, 480).unwrap()
    }

    fn nadir(e: f64, n: f64, alt: f64, heading: f64) -> Pose {
        let zone = UtmZone::new(32, true).unwrap();
        default_pose(
            &UtmCoord {
                easting: e,
                northing: n,
                zone,
                altitude: alt,
            },
            heading,
        )
    }

    #[test]
    fn principal_ray_hits_point_below() {
        let pose = nadir(500_000.0, 5_000_000.0, 100.0, 0.0);
        let p = cam()
            .project(&pose, &Vector3::new(500_000.0, 5_000_000.0, 0.0))
            .unwrap();
        assert_eq!((p.u, p.v), (320.0, 240.0));
        assert!((p.depth - 100.0).abs() < 1e-12);
        assert!(p.in_view);
    }

    #[test]
    fn east_offset_moves_right() {
        let pose = nadir(0.0, 0.0, 100.0, 0.0);
        let p = cam().project(&pose, &Vector3::new(10.0, 0.0, 0.0)).unwrap();
        // u = cx + fx * X / Z
        assert!((p.u - (320.0 + 1000.0 * 10.0 / 100.0)).abs() < 1e-12);
        assert!((p.v - 240.0).abs() < 1e-12);
        let north = cam().project(&pose, &Vector3::new(0.0, 10.0, 0.0)).unwrap();
        assert!(north.v < 240.0, "north is towards the image top");
    }

    #[test]
    fn behind_camera_is_an_error() {
        let pose = nadir(0.0, 0.0, 100.0, 0.0);
        assert!(matches!(
            cam().project(&pose, &Vector3::new(0.0, 0.0, 150.0)),
            Err(Error::BehindCamera(_))
        ));
    }

    #[test]
    fn out_of_view_is_flagged_not_an_error() {
        let pose = nadir(0.0, 0.0, 100.0, 0.0);
        let p = cam().project(&pose, &Vector3::new(500.0, 0.0, 0.0)).unwrap();
        assert!(!p.in_view);
    }

    #[test]
    fn non_positive_depth_rejected() {
        let pose = nadir(0.0, 0.0, 100.0, 0.0);
        assert!(cam().backproject(&pose, 1.0, 1.0, 0.0).is_err());
        assert!(cam().backproject(&pose, 1.0, 1.0, -3.0).is_err());
    }

    #[test]
    fn invalid_intrinsics() {
        assert!(CameraModel::new(0.0, 1.0, 1.0, 1.0, 4, 4).is_err());
        assert!(CameraModel::new(1.0, 1.0, 4.0, 1.0, 4, 4).is_err());
        assert!(CameraModel::new(1.0, 1.0, 1.0, 1.0, 0, 4).is_err());
    }

    #[test]
    fn round_trip_with_heading() {
        let pose = nadir(1000.0, 2000.0, 80.0, 37.0);
        let c = cam();
        for &(u, v, d) in &[(0.0, 0.0, 50.0), (639.0, 479.0, 95.5), (100.25, 300.75, 80.0)] {
            let w = c.backproject(&pose, u, v, d).unwrap();
            let p = c.project(&pose, &w).unwrap();
            assert!((p.u - u).abs() < 1e-9 && (p.v - v).abs() < 1e-9);
            assert!((p.depth - d).abs() < 1e-9);
        }
    }
}
