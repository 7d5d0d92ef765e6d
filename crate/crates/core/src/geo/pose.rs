use nalgebra::{Matrix3, Matrix3x4, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::utm::{UtmCoord, UtmZone};

const ORTHONORMAL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PoseSource {
    /// Estimated by a visual pose provider and georeferenced.
    Visual,
    /// Built from GNSS position and heading for a nadir, gimbal-stabilised camera.
    GnssDefault,
}

/// Camera-to-world transform. `position` holds (easting, northing, altitude) of
/// the camera centre in `zone`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub position: Vector3<f64>,
    pub zone: UtmZone,
    pub source: PoseSource,
}

impl Pose {
    pub fn new(
        rotation: Matrix3<f64>,
        position: Vector3<f64>,
        zone: UtmZone,
        source: PoseSource,
    ) -> Result<Self> {
        if !is_rotation(&rotation, ORTHONORMAL_TOL) {
            return Err(Error::domain("pose rotation is not a proper orthonormal matrix"));
        }
        if !position.iter().all(|v| v.is_finite()) {
            return Err(Error::domain("pose translation is not finite"));
        }
        Ok(Self {
            rotation,
            position,
            zone,
            source,
        })
    }

    pub fn translation(&self) -> UtmCoord {
        UtmCoord {
            easting: self.position.x,
            northing: self.position.y,
            zone: self.zone,
            altitude: self.position.z,
        }
    }

    /// The 3x4 `[R | t]` matrix.
    pub fn matrix(&self) -> Matrix3x4<f64> {
        let mut m = Matrix3x4::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.set_column(3, &self.position);
        m
    }

    pub fn from_matrix(m: &Matrix3x4<f64>, zone: UtmZone, source: PoseSource) -> Result<Self> {
        let rotation: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into_owned();
        Self::new(rotation, m.column(3).into_owned(), zone, source)
    }
}

pub fn is_rotation(r: &Matrix3<f64>, tol: f64) -> bool {
    let ortho = (r.transpose() * r - Matrix3::identity()).amax() <= tol;
    ortho && (r.determinant() - 1.0).abs() <= tol
}

/// Rotation about the vertical axis by `-heading` (compass heading, degrees
/// clockwise from north).
pub fn heading_rotation(heading_deg: f64) -> Matrix3<f64> {
    let phi = heading_deg.rem_euclid(360.0).to_radians();
    let (s, c) = (-phi).sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Substitute pose from GNSS position and heading for a nadir camera that is
/// stabilised about its x and y axes.
pub fn default_pose(geotag: &UtmCoord, heading_deg: f64) -> Pose {
    Pose {
        rotation: heading_rotation(heading_deg),
        position: Vector3::new(geotag.easting, geotag.northing, geotag.altitude),
        zone: geotag.zone,
        source: PoseSource::GnssDefault,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn geotag() -> UtmCoord {
        UtmCoord {
            easting: 500_100.0,
            northing: 5_700_000.0,
            zone: UtmZone::new(32, true).unwrap(),
            altitude: 40.0,
        }
    }

    #[test]
    fn zero_heading_is_identity() {
        let p = default_pose(&geotag(), 0.0);
        assert_eq!(p.rotation, Matrix3::identity());
        assert_eq!(p.source, PoseSource::GnssDefault);
        assert_eq!(p.translation(), geotag());
    }

    #[test]
    fn quarter_turn() {
        let r = default_pose(&geotag(), 90.0).rotation;
        let expected = Matrix3::new(0.0, 1.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert!((r - expected).amax() < 1e-15);
    }

    #[test]
    fn full_turn_matches_zero() {
        let a = default_pose(&geotag(), 0.0).rotation;
        let b = default_pose(&geotag(), 360.0).rotation;
        assert!((a - b).amax() < 1e-15);
        let c = default_pose(&geotag(), -90.0).rotation;
        let d = default_pose(&geotag(), 270.0).rotation;
        assert!((c - d).amax() < 1e-15);
    }

    #[test]
    fn matrix_round_trip() {
        let p = default_pose(&geotag(), 33.0);
        let q = Pose::from_matrix(&p.matrix(), p.zone, p.source).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn rejects_non_rotation() {
        let m = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0);
        assert!(Pose::new(m, Vector3::zeros(), geotag().zone, PoseSource::Visual).is_err());
    }

    proptest! {
        #[test]
        fn default_pose_is_proper_rotation(h in -1000.0f64..1000.0) {
            let r = default_pose(&geotag(), h).rotation;
            prop_assert!(is_rotation(&r, 1e-12));
            prop_assert_eq!(r[(2, 0)], 0.0);
            prop_assert_eq!(r[(2, 1)], 0.0);
            prop_assert_eq!(r[(2, 2)], 1.0);
        }
    }
}
