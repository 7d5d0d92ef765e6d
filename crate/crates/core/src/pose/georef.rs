//! Visual-to-UTM similarity with yaw-only rotation.
//!
//! GNSS gives no attitude and the camera is nadir-stabilised, so roll and
//! pitch of the visual frame are taken as already level. That leaves scale,
//! yaw about the vertical and a 3D translation, solved in closed form.

use nalgebra::{Matrix2, Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geo::{Pose, PoseSource, UtmZone};

/// Horizontal spread ratio (minor / major eigenvalue) below which a track
/// counts as collinear.
const COLLINEAR_RATIO: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoreferenceTransform {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl GeoreferenceTransform {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_yaw(scale: f64, yaw: f64, translation: Vector3<f64>) -> Self {
        Self {
            scale,
            rotation: yaw_matrix(yaw),
            translation,
        }
    }

    /// Yaw in radians, counter-clockwise about +z.
    pub fn yaw(&self) -> f64 {
        self.rotation[(1, 0)].atan2(self.rotation[(0, 0)])
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.scale * (self.rotation * p) + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            scale: 1.0 / self.scale,
            rotation: rt,
            translation: -(rt * self.translation) / self.scale,
        }
    }

    /// `self` after `other`.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            scale: self.scale * other.scale,
            rotation: self.rotation * other.rotation,
            translation: self.scale * (self.rotation * other.translation) + self.translation,
        }
    }
}

pub fn yaw_matrix(yaw: f64) -> Matrix3<f64> {
    let (s, c) = yaw.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Least-squares fit of `utm_i ~ s * R_yaw * visual_i + t`. Returns the
/// transform and the residual RMS in metres.
pub fn estimate_georeference(
    visual: &[Vector3<f64>],
    utm: &[Vector3<f64>],
) -> Result<(GeoreferenceTransform, f64)> {
    if visual.len() != utm.len() {
        return Err(Error::domain(format!(
            "{} visual positions vs {} GNSS positions",
            visual.len(),
            utm.len()
        )));
    }
    if visual.len() < 3 {
        return Err(Error::DegenerateGeometry(format!(
            "need at least 3 correspondences, got {}",
            visual.len()
        )));
    }
    let n = visual.len() as f64;
    let mv = visual.iter().sum::<Vector3<f64>>() / n;
    let mu = utm.iter().sum::<Vector3<f64>>() / n;

    let mut cov = Matrix2::zeros();
    let (mut c, mut s, mut zz, mut norm) = (0.0, 0.0, 0.0, 0.0);
    for (v, u) in visual.iter().zip(utm) {
        let a = v - mv;
        let b = u - mu;
        cov += Matrix2::new(a.x * a.x, a.x * a.y, a.y * a.x, a.y * a.y);
        c += b.x * a.x + b.y * a.y;
        s += b.y * a.x - b.x * a.y;
        zz += b.z * a.z;
        norm += a.norm_squared();
    }
    let eig = cov.symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    if !(hi > 0.0) || lo / hi < COLLINEAR_RATIO {
        return Err(Error::DegenerateGeometry(
            "visual track is collinear in the horizontal plane".into(),
        ));
    }
    let yaw = s.atan2(c);
    let scale = ((c * c + s * s).sqrt() + zz) / norm;
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::DegenerateGeometry(format!("non-positive scale {scale}")));
    }
    let rotation = yaw_matrix(yaw);
    let translation = mu - scale * (rotation * mv);
    let t = GeoreferenceTransform {
        scale,
        rotation,
        translation,
    };
    let sq: f64 = visual
        .iter()
        .zip(utm)
        .map(|(v, u)| (t.apply(v) - u).norm_squared())
        .sum();
    Ok((t, (sq / n).sqrt()))
}

/// A visual-frame camera pose: rotation and camera centre.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalPose {
    pub rotation: Matrix3<f64>,
    pub position: Vector3<f64>,
}

pub fn apply_georeference(t: &GeoreferenceTransform, local: &LocalPose, zone: UtmZone) -> Pose {
    Pose {
        rotation: t.rotation * local.rotation,
        position: t.apply(&local.position),
        zone,
        source: PoseSource::Visual,
    }
}
