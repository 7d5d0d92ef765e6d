use std::sync::Arc;

use image::RgbImage;
use nalgebra::Vector3;

use crate::geo::camera::CameraModel;
use crate::geo::pose::Pose;
use crate::geo::utm::GeoPoint;
use crate::grid::{LayeredGrid, RegionOfInterest};

/// A world-frame point with the colour of the pixel it came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CloudPoint {
    pub position: Vector3<f64>,
    pub color: [u8; 3],
}

/// Unit of pipeline flow. Each stage fills in the fields it owns and passes the
/// frame on by value.
#[derive(Debug, Clone)]
pub struct Frame {
    pub id: u64,
    /// Seconds.
    pub timestamp: f64,
    pub image: Arc<RgbImage>,
    pub geotag: GeoPoint,
    /// Degrees clockwise from north.
    pub heading: f64,
    /// Camera is nadir-facing and stabilised about x and y.
    pub gimbal_stabilized: bool,
    pub camera: CameraModel,
    pub pose: Option<Pose>,
    pub sparse_cloud: Option<Vec<CloudPoint>>,
    pub dense_cloud: Option<Vec<CloudPoint>>,
    pub surface: Option<LayeredGrid>,
    pub footprint: Option<RegionOfInterest>,
    /// Rectified observation produced by the rectification stage.
    pub ortho: Option<LayeredGrid>,
}

impl Frame {
    pub fn new(
        id: u64,
        timestamp: f64,
        image: RgbImage,
        geotag: GeoPoint,
        heading: f64,
        camera: CameraModel,
    ) -> Self {
        Self {
            id,
            timestamp,
            image: Arc::new(image),
            geotag,
            heading,
            gimbal_stabilized: true,
            camera,
            pose: None,
            sparse_cloud: None,
            dense_cloud: None,
            surface: None,
            footprint: None,
            ortho: None,
        }
    }

    /// Image colour at a pixel centre, clamped to the image.
    pub fn pixel(&self, u: u32, v: u32) -> [u8; 3] {
        let u = u.min(self.image.width() - 1);
        let v = v.min(self.image.height() - 1);
        self.image.get_pixel(u, v).0
    }

    /// Bilinear colour at a sub-pixel position (pixel-centre convention).
    pub fn sample_bilinear(&self, u: f64, v: f64) -> [f64; 3] {
        sample_bilinear(&self.image, u, v)
    }
}

pub fn sample_bilinear(image: &RgbImage, u: f64, v: f64) -> [f64; 3] {
    let (w, h) = (image.width() as i64, image.height() as i64);
    let u = u.clamp(0.0, (w - 1) as f64);
    let v = v.clamp(0.0, (h - 1) as f64);
    let u0 = u.floor() as i64;
    let v0 = v.floor() as i64;
    let u1 = (u0 + 1).min(w - 1);
    let v1 = (v0 + 1).min(h - 1);
    let fu = u - u0 as f64;
    let fv = v - v0 as f64;
    let p = |x: i64, y: i64| image.get_pixel(x as u32, y as u32).0;
    let (a, b, c, d) = (p(u0, v0), p(u1, v0), p(u0, v1), p(u1, v1));
    let mut out = [0.0; 3];
    for k in 0..3 {
        let top = f64::from(a[k]) * (1.0 - fu) + f64::from(b[k]) * fu;
        let bottom = f64::from(c[k]) * (1.0 - fu) + f64::from(d[k]) * fu;
        out[k] = top * (1.0 - fv) + bottom * fv;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_midpoints() {
        let mut img = RgbImage::new(2, 2);
        img.put_pixel(0, 0, image::Rgb([0, 0, 0]));
        img.put_pixel(1, 0, image::Rgb([100, 0, 0]));
        img.put_pixel(0, 1, image::Rgb([0, 100, 0]));
        img.put_pixel(1, 1, image::Rgb([100, 100, 200]));
        assert_eq!(sample_bilinear(&img, 0.5, 0.0), [50.0, 0.0, 0.0]);
        assert_eq!(sample_bilinear(&img, 0.5, 0.5), [50.0, 50.0, 50.0]);
        assert_eq!(sample_bilinear(&img, 1.0, 1.0), [100.0, 100.0, 200.0]);
    }
}
